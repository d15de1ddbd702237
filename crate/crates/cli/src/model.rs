//! Resolves `--model` values to built-in or file-based models.

use std::path::Path;

use splitdae::dae::{consistent_init, lift_constraint_model, CoupledDae, State};
use splitdae::models::{
    decay, lc_consistent_state, lc_oscillator, load_coupled, model_file_kind, parse_phs_unchecked, phs_circuit_demo,
    synthetic_phs_dae, LcParams, LC_DEFAULT_Y0,
};
use splitdae::phs::PhsDae;
use splitdae::splitting::{doubled_split, SplitPair};
use splitdae::{Error, Result};

pub const DEFAULT_SEED: u64 = 42;

pub enum Model {
    Coupled {
        name: String,
        dae: CoupledDae<f64>,
        split: SplitPair<f64>,
        s0: State<f64>,
    },
    Phs {
        name: String,
        phs: PhsDae<f64>,
        x0: Vec<f64>,
    },
}

/// `lc`, `decay`, `synthetic:N:M`, `circuit2`, or a JSON model file.
pub fn resolve(model_arg: &str, seed: Option<u64>) -> Result<Model> {
    match model_arg {
        "lc" => {
            let dae = lift_constraint_model(&lc_oscillator(&LcParams::default())?);
            let s0 = lc_consistent_state(&dae, &LC_DEFAULT_Y0)?;
            Ok(coupled("lc", dae, s0))
        }
        "decay" => {
            let dae = decay(1.0)?;
            let s0 = State::from_stacked(&dae.partition(), 0.0, &[1.0], &[])?;
            Ok(coupled("decay", dae, s0))
        }
        "circuit2" => phs_model("circuit2", phs_circuit_demo()?),
        s if s.starts_with("synthetic") => {
            let (n_dyn, n_alg) = parse_synthetic(s)?;
            phs_model(s, synthetic_phs_dae(n_dyn, n_alg, seed.unwrap_or(DEFAULT_SEED))?)
        }
        path => from_file(Path::new(path)),
    }
}

fn parse_synthetic(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidArgument(format!("expected synthetic:N_DYN:N_ALG, got '{s}'"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["synthetic"] => Ok((3, 1)),
        ["synthetic", a, b] => Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

fn coupled(name: &str, dae: CoupledDae<f64>, s0: State<f64>) -> Model {
    Model::Coupled {
        name: name.into(),
        split: doubled_split(&dae),
        dae,
        s0,
    }
}

fn phs_model(name: &str, phs: PhsDae<f64>) -> Result<Model> {
    let x0 = phs.consistent_state(&vec![1.0; phs.n()], 0.0)?.into_vec();
    Ok(Model::Phs {
        name: name.into(),
        phs,
        x0,
    })
}

/// PHS files are parsed without the structural checks; callers decide.
pub fn read_phs_unchecked(path: &Path) -> Result<PhsDae<f64>> {
    parse_phs_unchecked(&std::fs::read_to_string(path)?)
}

fn from_file(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let name = path.display().to_string();
    match model_file_kind(&text)?.as_str() {
        "phs" => {
            let phs = parse_phs_unchecked(&text)?;
            phs.validate_structure().into_result()?;
            phs_model(&name, phs)
        }
        "coupled_linear" => {
            let m = load_coupled(path)?;
            let s0 = consistent_init(&m.dae, &m.initial, 1e-12)?;
            Ok(coupled(&name, m.dae, s0))
        }
        other => Err(Error::FileFormat(format!("unknown model kind '{other}'"))),
    }
}
