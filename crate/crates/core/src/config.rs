//! TOML configuration files and run fingerprints.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg;
use crate::models::{BmapSpec, MmppSpec, PhSpec, SolverOptions, SystemConfig};

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BmapSection {
    /// Multiplies every matrix.
    #[serde(default = "one")]
    pub scale: f64,
    pub matrices: Vec<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmppSection {
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(rename = "T0")]
    pub t0: Rows,
    #[serde(rename = "T1")]
    pub t1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhSection {
    pub alpha: Vec<f64>,
    #[serde(rename = "S")]
    pub s: Rows,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServersSection {
    pub c: usize,
    pub g: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub epsilon: Option<f64>,
    pub epsilon0: Option<f64>,
    #[serde(rename = "N_max")]
    pub n_max: Option<usize>,
    pub max_g_iter: Option<usize>,
    pub k0_start: Option<usize>,
    pub k0: Option<usize>,
}

/// Parameters a sweep may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    G,
    C,
    /// `bmap1.scale`.
    LambdaO,
    /// `bmap2.scale`.
    LambdaH,
    /// `mmpp.scale`.
    LambdaR,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::G => "g",
            SweepParam::C => "c",
            SweepParam::LambdaO => "lambda_o",
            SweepParam::LambdaH => "lambda_h",
            SweepParam::LambdaR => "lambda_r",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub bmap1: BmapSection,
    pub bmap2: BmapSection,
    pub mmpp: MmppSection,
    pub ph: PhSection,
    pub servers: ServersSection,
    #[serde(default)]
    pub solver: SolverSection,
    pub sweep: Option<SweepSection>,
}

fn one() -> f64 {
    1.0
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Build the model without validating it.
    pub fn to_system_unchecked(&self) -> Result<SystemConfig> {
        let bmap = |b: &BmapSection| -> Result<BmapSpec> {
            for (k, m) in b.matrices.iter().enumerate() {
                check_rect(m, &format!("matrix {k}"))?;
            }
            Ok(BmapSpec::from_rows(&b.matrices).scaled(b.scale))
        };
        check_rect(&self.mmpp.t0, "mmpp.T0")?;
        check_rect(&self.ph.s, "ph.S")?;
        let mut solver = SolverOptions::default();
        let s = &self.solver;
        if let Some(v) = s.epsilon {
            solver.epsilon = v;
        }
        if let Some(v) = s.epsilon0 {
            solver.epsilon0 = v;
        }
        if let Some(v) = s.n_max {
            solver.n_max = v;
        }
        if let Some(v) = s.max_g_iter {
            solver.max_g_iter = v;
        }
        if let Some(v) = s.k0_start {
            solver.k0_start = v;
        }
        solver.k0 = s.k0;
        Ok(SystemConfig {
            bmap1: bmap(&self.bmap1)?,
            bmap2: bmap(&self.bmap2)?,
            mmpp: MmppSpec::new(linalg::from_rows(&self.mmpp.t0), self.mmpp.t1.clone())
                .scaled(self.mmpp.scale),
            service: PhSpec::new(self.ph.alpha.clone(), linalg::from_rows(&self.ph.s)),
            c: self.servers.c,
            g: self.servers.g,
            solver,
        })
    }

    pub fn to_system(&self) -> Result<SystemConfig> {
        self.to_system_unchecked()?.checked()
    }

    /// Copy with one sweep parameter set.
    pub fn with_param(&self, p: SweepParam, value: f64) -> Result<Self> {
        let mut out = self.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::InvalidConfig(format!("{} must be a nonnegative integer, got {v}", p.name())))
            }
        };
        match p {
            SweepParam::G => out.servers.g = as_count(value)?,
            SweepParam::C => out.servers.c = as_count(value)?,
            SweepParam::LambdaO => out.bmap1.scale = value,
            SweepParam::LambdaH => out.bmap2.scale = value,
            SweepParam::LambdaR => out.mmpp.scale = value,
        }
        Ok(out)
    }

    pub fn from_system(cfg: &SystemConfig) -> Self {
        let solver = &cfg.solver;
        ConfigFile {
            bmap1: BmapSection {
                scale: 1.0,
                matrices: cfg.bmap1.matrices.iter().map(|m| linalg::to_rows(m.as_ref())).collect(),
            },
            bmap2: BmapSection {
                scale: 1.0,
                matrices: cfg.bmap2.matrices.iter().map(|m| linalg::to_rows(m.as_ref())).collect(),
            },
            mmpp: MmppSection {
                scale: 1.0,
                t0: linalg::to_rows(cfg.mmpp.t0.as_ref()),
                t1: cfg.mmpp.t1.clone(),
            },
            ph: PhSection {
                alpha: cfg.service.alpha.clone(),
                s: linalg::to_rows(cfg.service.s.as_ref()),
            },
            servers: ServersSection { c: cfg.c, g: cfg.g },
            solver: SolverSection {
                epsilon: Some(solver.epsilon),
                epsilon0: Some(solver.epsilon0),
                n_max: Some(solver.n_max),
                max_g_iter: Some(solver.max_g_iter),
                k0_start: Some(solver.k0_start),
                k0: solver.k0,
            },
            sweep: None,
        }
    }
}

fn check_rect(rows: &Rows, what: &str) -> Result<()> {
    if let Some(first) = rows.first() {
        if rows.iter().any(|r| r.len() != first.len()) {
            return Err(Error::InvalidConfig(format!("{what}: rows have unequal length")));
        }
    }
    Ok(())
}

/// Hex SHA-256 of the model and tolerances, as used for caching and output headers.
pub fn fingerprint(cfg: &SystemConfig) -> String {
    let mut h = Sha256::new();
    let mut put = |x: f64| h.update(x.to_bits().to_le_bytes());
    for b in [&cfg.bmap1, &cfg.bmap2] {
        put(b.matrices.len() as f64);
        for m in &b.matrices {
            put(m.nrows() as f64);
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    put(m[(i, j)]);
                }
            }
        }
    }
    put(cfg.mmpp.order() as f64);
    for i in 0..cfg.mmpp.t0.nrows() {
        for j in 0..cfg.mmpp.t0.ncols() {
            put(cfg.mmpp.t0[(i, j)]);
        }
    }
    cfg.mmpp.t1.iter().for_each(|&v| put(v));
    put(cfg.service.order() as f64);
    cfg.service.alpha.iter().for_each(|&v| put(v));
    for i in 0..cfg.service.s.nrows() {
        for j in 0..cfg.service.s.ncols() {
            put(cfg.service.s[(i, j)]);
        }
    }
    put(cfg.c as f64);
    put(cfg.g as f64);
    let s = &cfg.solver;
    put(s.epsilon);
    put(s.epsilon0);
    put(s.n_max as f64);
    put(s.max_g_iter as f64);
    put(s.k0_start as f64);
    put(s.k0.map_or(-1.0, |v| v as f64));
    hex(&h.finalize())
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the raw config text plus the command line, written into every output header.
pub fn manifest_hash(config_text: &str, command: &str, overrides: &[String]) -> String {
    let mut h = Sha256::new();
    h.update(config_text.as_bytes());
    h.update([0u8]);
    h.update(command.as_bytes());
    for o in overrides {
        h.update([0u8]);
        h.update(o.as_bytes());
    }
    hex(&h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::cellular;

    const TABLE1: &str = r#"
[bmap1]
scale = 2.0
matrices = [[[-11.0, 2.0], [5.0, -20.0]], [[8.0, 1.0], [3.0, 12.0]]]

[bmap2]
scale = 2.0
matrices = [[[-3.0, 0.0], [1.0, -2.0]], [[1.0, 2.0], [0.0, 1.0]]]

[mmpp]
scale = 2.0
T0 = [[-15.0, 3.0], [4.0, -19.0]]
T1 = [12.0, 15.0]

[ph]
alpha = [0.4, 0.6]
S = [[-23.0, 9.0], [14.0, -17.0]]

[servers]
c = 8
g = 6
"#;

    #[test]
    fn parses_cellular_instance() {
        let f = ConfigFile::parse(TABLE1).unwrap();
        let cfg = f.to_system().unwrap();
        let reference = cellular::config(8, 6, 2.0, 2.0, 2.0).unwrap();
        assert_eq!(cfg, reference);
        assert_eq!(fingerprint(&cfg), fingerprint(&reference));
    }

    #[test]
    fn round_trip_through_toml() {
        let cfg = cellular::config(4, 2, 1.0, 0.5, 3.0).unwrap();
        let text = ConfigFile::from_system(&cfg).to_toml();
        let back = ConfigFile::parse(&text).unwrap().to_system().unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_unknown_fields_and_ragged_rows() {
        let bad = TABLE1.replace("[servers]", "[servers]\nextra = 1");
        assert!(ConfigFile::parse(&bad).is_err());
        let ragged = TABLE1.replace("T0 = [[-15.0, 3.0], [4.0, -19.0]]", "T0 = [[-15.0, 3.0], [4.0]]");
        assert!(ConfigFile::parse(&ragged).unwrap().to_system().is_err());
    }

    #[test]
    fn sweep_parameter_override() {
        let f = ConfigFile::parse(TABLE1).unwrap();
        let g = f.with_param(SweepParam::G, 3.0).unwrap();
        assert_eq!(g.servers.g, 3);
        assert!(f.with_param(SweepParam::G, 2.5).is_err());
        let fp1 = fingerprint(&f.to_system().unwrap());
        let fp2 = fingerprint(&f.with_param(SweepParam::LambdaR, 1.0).unwrap().to_system().unwrap());
        assert_ne!(fp1, fp2);
    }
}
