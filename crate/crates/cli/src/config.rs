//! Run configuration: JSON file merged with command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use splitdae::Error;

/// Settings shared by every subcommand. Flags override file values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<String>,
    pub scheme: Option<String>,
    pub integrator: Option<String>,
    pub h: Option<f64>,
    pub h_ref: Option<f64>,
    #[serde(rename = "T")]
    pub t_end: Option<f64>,
    pub epsilon: Option<f64>,
    pub epsilons: Option<Vec<f64>>,
    pub hs: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| {
            Error::FileFormat(format!(
                "{}: line {}, column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })
    }

    /// Values set in `flags` win.
    pub fn merged(self, flags: RunConfig) -> Self {
        RunConfig {
            model: flags.model.or(self.model),
            scheme: flags.scheme.or(self.scheme),
            integrator: flags.integrator.or(self.integrator),
            h: flags.h.or(self.h),
            h_ref: flags.h_ref.or(self.h_ref),
            t_end: flags.t_end.or(self.t_end),
            epsilon: flags.epsilon.or(self.epsilon),
            epsilons: flags.epsilons.or(self.epsilons),
            hs: flags.hs.or(self.hs),
            out: flags.out.or(self.out),
            seed: flags.seed.or(self.seed),
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let positive = |name: &str, v: Option<f64>| match v {
            Some(x) if !(x > 0.0) || !x.is_finite() => {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {x}")))
            }
            _ => Ok(()),
        };
        positive("h", self.h)?;
        positive("h-ref", self.h_ref)?;
        positive("T", self.t_end)?;
        positive("epsilon", self.epsilon)?;
        for h in self.hs.iter().flatten() {
            positive("hs entry", Some(*h))?;
        }
        for e in self.epsilons.iter().flatten() {
            positive("epsilons entry", Some(*e))?;
        }
        Ok(())
    }
}

/// Parses `"0.01,0.005"`.
pub fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect()
}
