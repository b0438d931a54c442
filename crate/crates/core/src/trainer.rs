//! One complete gradient-descent run per pixel, classified as converged or diverged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Batch, Gradients, Matrix, Params, Problem, Workspace};
use crate::numerics::{rng_for_stream, stream};

pub const DEFAULT_STEPS: u32 = 500;
pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e12;
pub const DEFAULT_INVERSE_LOSS_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: u32,
    pub eta0: f64,
    pub eta1: f64,
    /// 0 selects full-batch descent.
    pub batch_size: usize,
    pub divergence_threshold: f64,
    pub inverse_loss_floor: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            eta0: 0.0,
            eta1: 0.0,
            batch_size: 0,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            inverse_loss_floor: DEFAULT_INVERSE_LOSS_FLOOR,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self, dataset_size: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be positive".into()));
        }
        if self.batch_size > dataset_size {
            return Err(Error::BatchSize { batch_size: self.batch_size, dataset_size });
        }
        if !(self.eta0 >= 0.0 && self.eta1 >= 0.0 && self.eta0.is_finite() && self.eta1.is_finite()) {
            return Err(Error::InvalidConfig("learning rates must be finite and non-negative".into()));
        }
        if self.divergence_threshold.is_nan() || self.divergence_threshold <= 0.0 {
            return Err(Error::InvalidConfig("divergence threshold must be positive".into()));
        }
        if self.inverse_loss_floor.is_nan() || self.inverse_loss_floor <= 0.0 {
            return Err(Error::InvalidConfig("inverse loss floor must be positive".into()));
        }
        Ok(())
    }

    /// Whether steps draw from a minibatch schedule rather than the full dataset.
    pub fn uses_minibatches(&self, dataset_size: usize) -> bool {
        self.batch_size != 0 && self.batch_size < dataset_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RunClass {
    Converged,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub class: RunClass,
    pub steps_run: u32,
    /// Σℓ for converged runs, Σ1/ℓ over completed steps for diverged runs.
    pub accumulator: f64,
    /// Full-dataset loss at the final weights when converged; the offending batch loss when diverged.
    pub final_loss: f64,
}

impl RunOutcome {
    /// Equality on the bit patterns of every member.
    pub fn bit_eq(&self, other: &RunOutcome) -> bool {
        self.class == other.class
            && self.steps_run == other.steps_run
            && self.accumulator.to_bits() == other.accumulator.to_bits()
            && self.final_loss.to_bits() == other.final_loss.to_bits()
    }
}

/// Minibatch index sets, one per step, shared by every pixel of an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSchedule {
    batches: Vec<Vec<usize>>,
}

impl BatchSchedule {
    pub fn batches(&self) -> &[Vec<usize>] {
        &self.batches
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// FNV-1a over the index sequence with step separators.
    pub fn digest(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01B3;
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        let mut feed = |v: u64| {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        for batch in &self.batches {
            feed(u64::MAX);
            for &i in batch {
                feed(i as u64);
            }
        }
        h
    }
}

/// Epoch-wise shuffled minibatches driven by the minibatch stream of `base_seed`.
///
/// Each epoch is a Fisher–Yates permutation of `0..dataset_size` cut into
/// consecutive slices of `batch_size`; a shorter final slice closes the epoch.
pub fn batch_schedule(
    base_seed: u64,
    dataset_size: usize,
    batch_size: usize,
    steps: usize,
) -> Result<BatchSchedule> {
    if batch_size == 0 || batch_size > dataset_size {
        return Err(Error::BatchSize { batch_size, dataset_size });
    }
    let mut rng = rng_for_stream(base_seed, stream::MINIBATCH);
    let mut batches = Vec::with_capacity(steps);
    let mut order: Vec<usize> = (0..dataset_size).collect();
    'epochs: while batches.len() < steps {
        for i in (1..dataset_size).rev() {
            let (next, j) = rng.next_below(i as u64 + 1);
            rng = next;
            order.swap(i, j as usize);
        }
        for slice in order.chunks(batch_size) {
            if batches.len() == steps {
                break 'epochs;
            }
            batches.push(slice.to_vec());
        }
    }
    Ok(BatchSchedule { batches })
}

/// Train from `problem.init_params` and classify the run.
pub fn train_run(problem: &Problem, opts: &TrainOptions) -> Result<RunOutcome> {
    opts.validate(problem.dataset_size())?;
    let schedule = if opts.uses_minibatches(problem.dataset_size()) {
        Some(batch_schedule(
            problem.base_seed,
            problem.dataset_size(),
            opts.batch_size,
            opts.steps as usize,
        )?)
    } else {
        None
    };
    let mut ws = Workspace::default();
    Ok(train_from(problem, &problem.init_params, opts, schedule.as_ref(), &mut ws))
}

/// The training loop proper. Options must already be validated and `schedule`
/// must be present exactly when the options call for minibatches.
///
/// ℓ_t is measured before step t's update on step t's batch. A learning rate of
/// exactly zero leaves its layer untouched, so that layer's gradient is skipped.
pub fn train_from(
    problem: &Problem,
    init: &Params,
    opts: &TrainOptions,
    schedule: Option<&BatchSchedule>,
    ws: &mut Workspace,
) -> RunOutcome {
    // Wider vector units only change speed: no kernel relies on fused
    // multiply-add, so every variant produces the same bits.
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the required CPU feature was detected at runtime.
            return unsafe { train_loop_avx512(problem, init, opts, schedule, ws) };
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: as above.
            return unsafe { train_loop_avx2(problem, init, opts, schedule, ws) };
        }
    }
    train_loop(problem, init, opts, schedule, ws)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
fn train_loop_avx512(
    problem: &Problem,
    init: &Params,
    opts: &TrainOptions,
    schedule: Option<&BatchSchedule>,
    ws: &mut Workspace,
) -> RunOutcome {
    train_loop(problem, init, opts, schedule, ws)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn train_loop_avx2(
    problem: &Problem,
    init: &Params,
    opts: &TrainOptions,
    schedule: Option<&BatchSchedule>,
    ws: &mut Workspace,
) -> RunOutcome {
    train_loop(problem, init, opts, schedule, ws)
}

#[inline(always)]
fn train_loop(
    problem: &Problem,
    init: &Params,
    opts: &TrainOptions,
    schedule: Option<&BatchSchedule>,
    ws: &mut Workspace,
) -> RunOutcome {
    let n = problem.width();
    let mut params = init.clone();
    let mut grads = Gradients::zeros(n);
    let frozen_hidden = opts.eta0 == 0.0;

    // With W0 frozen the hidden layer never changes; evaluate it once.
    let features: Option<Matrix> = if frozen_hidden {
        problem.load_batch(Batch::Full, ws);
        problem.hidden_into(&params, ws);
        schedule.map(|_| ws.act.clone())
    } else {
        if schedule.is_none() {
            problem.load_batch(Batch::Full, ws);
        }
        None
    };

    let mut sum_loss = 0.0;
    let mut sum_inverse = 0.0;
    for t in 0..opts.steps as usize {
        if let Some(schedule) = schedule {
            let cols = &schedule.batches[t];
            match &features {
                Some(feat) => ws.gather_columns(feat, cols, &problem.labels),
                None => problem.load_batch(Batch::Columns(cols), ws),
            }
        }
        if !frozen_hidden {
            problem.hidden_into(&params, ws);
        }
        problem.readout_into(&params, ws);
        let loss = Problem::residual_loss(ws);

        if !loss.is_finite() || loss > opts.divergence_threshold {
            return RunOutcome {
                class: RunClass::Diverged,
                steps_run: t as u32,
                accumulator: sum_inverse,
                final_loss: loss,
            };
        }
        sum_loss += loss;
        sum_inverse += 1.0 / loss.max(opts.inverse_loss_floor);

        let update_readout = opts.eta1 != 0.0;
        if update_readout {
            problem.readout_gradient(ws, &mut grads.readout);
        }
        if !frozen_hidden {
            problem.input_gradient(&params, ws, &mut grads.input);
            for (w, g) in params.input.data.iter_mut().zip(&grads.input.data) {
                *w -= opts.eta0 * g;
            }
        }
        if update_readout {
            for (w, g) in params.readout.iter_mut().zip(&grads.readout) {
                *w -= opts.eta1 * g;
            }
        }
    }

    RunOutcome {
        class: RunClass::Converged,
        steps_run: opts.steps,
        accumulator: sum_loss,
        final_loss: problem.full_loss(&params),
    }
}
