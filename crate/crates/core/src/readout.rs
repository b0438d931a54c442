//! Closed-form stability of readout-only training.
//!
//! With the input layer frozen the loss is quadratic in W1 with Hessian
//! `H = (2·α1²/|D|)·A·Aᵀ`, `A` the hidden features at initialisation. Steepest
//! descent on it is stable exactly when `eta1 < 2/λmax(H)`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{build_problem, ModelConfig, Problem};
use crate::trainer::{train_run, RunClass, TrainOptions};

/// Relative half-width of the band around the critical rate that is not scored.
pub const ORACLE_BAND: f64 = 0.01;

pub fn readout_hessian(problem: &Problem) -> DMatrix<f64> {
    let a = problem.hidden_features(&problem.init_params);
    let a = DMatrix::from_row_slice(a.rows, a.cols, &a.data);
    let alpha1 = problem.config.alpha1;
    let scale = 2.0 * alpha1 * alpha1 / problem.dataset_size() as f64;
    (&a * a.transpose()) * scale
}

pub fn readout_lambda_max(problem: &Problem) -> f64 {
    SymmetricEigen::new(readout_hessian(problem))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest stable readout learning rate, `2/λmax(H)`.
pub fn critical_readout_rate(problem: &Problem) -> f64 {
    2.0 / readout_lambda_max(problem)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSample {
    pub eta1: f64,
    pub predicted: RunClass,
    pub observed: RunClass,
    /// Inside the unscored band around the critical rate.
    pub in_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub seed: u64,
    pub critical_eta1: f64,
    pub samples: Vec<OracleSample>,
}

impl OracleReport {
    pub fn scored(&self) -> usize {
        self.samples.iter().filter(|s| !s.in_band).count()
    }

    pub fn agreeing(&self) -> usize {
        self.samples.iter().filter(|s| !s.in_band && s.predicted == s.observed).count()
    }

    /// Fraction of scored samples where training matches the closed form.
    pub fn agreement(&self) -> f64 {
        self.agreeing() as f64 / self.scored().max(1) as f64
    }
}

/// Sweep `samples` log-spaced readout rates over `critical · 10^[−decades, +decades]`
/// with `eta0 = 0` and compare each run's class against the closed-form prediction.
pub fn oracle_sweep(model: ModelConfig, steps: u32, seed: u64, samples: usize, decades: f64) -> Result<OracleReport> {
    let problem = build_problem(model, seed)?;
    let critical = critical_readout_rate(&problem);
    let centre = critical.log10();
    let samples = (0..samples)
        .map(|i| {
            let t = if samples > 1 { i as f64 / (samples - 1) as f64 } else { 0.5 };
            let eta1 = 10f64.powf(centre - decades + 2.0 * decades * t);
            let opts = TrainOptions { steps, eta0: 0.0, eta1, ..Default::default() };
            let observed = train_run(&problem, &opts)?.class;
            let predicted = if eta1 < critical { RunClass::Converged } else { RunClass::Diverged };
            Ok(OracleSample {
                eta1,
                predicted,
                observed,
                in_band: (eta1 / critical - 1.0).abs() <= ORACLE_BAND,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleReport { seed, critical_eta1: critical, samples })
}
