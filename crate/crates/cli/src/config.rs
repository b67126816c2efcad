use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chkp_core::branch::BranchConfig;
use chkp_core::grid::{NodeFamily, MIN_NODES};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable naming the output root; `--output-dir` wins over it.
pub const OUTPUT_ENV: &str = "CHKP_OUTPUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub c: f64,
    pub kappa: f64,
    /// Half-length of the computational domain.
    pub l_dom: f64,
    /// Nodes per half-line.
    pub n: usize,
    pub family: NodeFamily,
    /// Number of transverse Fourier modes kept on the branch.
    pub n_y: usize,
    pub ds: f64,
    pub s_max: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub n_range: Vec<i64>,
    pub output_dir: PathBuf,
    /// Also run the dense nonsymmetric eigensolve of the block operator.
    pub brute_force: bool,
    pub solvability_probes: usize,
    pub reversibility_states: usize,
    /// Write field tables for every `field_every`-th branch point (and the last).
    pub field_every: usize,
    pub y_samples: usize,
    pub x_stride: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let b = BranchConfig::default();
        RunConfig {
            c: 3.0,
            kappa: 1.0,
            l_dom: 40.0,
            n: 1024,
            family: NodeFamily::Spectral,
            n_y: b.n_modes,
            ds: b.ds,
            s_max: b.s_max,
            tol: b.tol,
            max_iter: b.max_iter,
            n_range: (4..=64).collect(),
            output_dir: PathBuf::from("out"),
            brute_force: true,
            solvability_probes: 5,
            reversibility_states: 10,
            field_every: 10,
            y_samples: 33,
            x_stride: 8,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn branch(&self) -> BranchConfig {
        BranchConfig {
            n_modes: self.n_y,
            ds: self.ds,
            s_max: self.s_max,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !self.c.is_finite() || !self.kappa.is_finite() || !(self.kappa > 0.0) {
            return bad(format!(
                "c must be finite and kappa positive (c = {}, kappa = {})",
                self.c, self.kappa
            ));
        }
        if !(self.c > 2.0 * self.kappa) {
            return bad(format!(
                "the wave speed must satisfy c > 2*kappa (got c = {}, 2*kappa = {})",
                self.c,
                2.0 * self.kappa
            ));
        }
        if !(self.l_dom > 0.0) || !self.l_dom.is_finite() {
            return bad(format!("l_dom must be positive, got {}", self.l_dom));
        }
        if self.n < MIN_NODES {
            return bad(format!("n must be at least {MIN_NODES}, got {}", self.n));
        }
        for (name, v) in [("ds", self.ds), ("s_max", self.s_max), ("tol", self.tol)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [
            ("n_y", self.n_y),
            ("max_iter", self.max_iter),
            ("solvability_probes", self.solvability_probes),
            ("reversibility_states", self.reversibility_states),
            ("field_every", self.field_every),
            ("x_stride", self.x_stride),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.y_samples < 2 {
            return bad("y_samples must be at least 2".into());
        }
        if self.n_range.len() < 2 {
            return bad("n_range needs at least two entries".into());
        }
        let mut seen = BTreeSet::new();
        for &k in &self.n_range {
            if k.abs() <= 1 {
                return bad(format!("n_range entries must satisfy |n| > 1, got {k}"));
            }
            if !seen.insert(k) {
                return bad(format!("n_range contains {k} twice"));
            }
        }
        Ok(())
    }
}

/// Parse `a:b` (inclusive) or a comma-separated list.
pub fn parse_n_range(s: &str) -> Result<Vec<i64>, String> {
    let parse = |t: &str| t.trim().parse::<i64>().map_err(|e| format!("'{t}': {e}"));
    if let Some((a, b)) = s.split_once(':') {
        let (a, b) = (parse(a)?, parse(b)?);
        if a > b {
            return Err(format!("empty range {a}:{b}"));
        }
        return Ok((a..=b).collect());
    }
    s.split(',').map(parse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_files_take_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"c": 4.0, "family": "uniform"}"#).unwrap();
        assert_eq!(cfg.c, 4.0);
        assert_eq!(cfg.family, NodeFamily::Uniform);
        assert_eq!(cfg.n, 1024);
        assert!(serde_json::from_str::<RunConfig>(r#"{"speed": 4.0}"#).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        let at_threshold = RunConfig {
            c: 2.0,
            ..Default::default()
        };
        let msg = at_threshold.validate().unwrap_err().to_string();
        assert!(msg.contains("c > 2*kappa"), "{msg}");
        let small_n = RunConfig {
            n_range: vec![1, 4],
            ..Default::default()
        };
        assert!(small_n.validate().is_err());
        let zero_tol = RunConfig {
            tol: 0.0,
            ..Default::default()
        };
        assert!(zero_tol.validate().is_err());
    }

    #[test]
    fn n_range_syntax() {
        assert_eq!(parse_n_range("4:7").unwrap(), vec![4, 5, 6, 7]);
        assert_eq!(parse_n_range("4, 8,-16").unwrap(), vec![4, 8, -16]);
        assert!(parse_n_range("7:4").is_err());
        assert!(parse_n_range("x").is_err());
    }
}
