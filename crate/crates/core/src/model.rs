//! The one-hidden-layer network `ŷ(x) = α1 · W1 · σ(α0 · W0 · x)` trained on mse.
//!
//! Gradients are written out by hand. Loops are ordered so the inner loop runs
//! over contiguous memory; every accumulation has a fixed order, which keeps
//! results bit-identical regardless of which thread evaluates a pixel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{fill_normals, rng_for_stream, stream, tanh, Nonlinearity};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data does not match shape");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    fn resize(&mut self, rows: usize, cols: usize) {
        self.rows = rows;
        self.cols = cols;
        self.data.resize(rows * cols, 0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input dimension and number of hidden units.
    pub width: usize,
    pub nonlinearity: Nonlinearity,
    pub dataset_size: usize,
    pub alpha0: f64,
    pub alpha1: f64,
    /// Added to every initial weight of both layers.
    pub init_mean: f64,
}

impl ModelConfig {
    /// Mean-field scaling with as many datapoints as free parameters.
    pub fn mean_field(nonlinearity: Nonlinearity, width: usize) -> Self {
        let n = width as f64;
        let (alpha0, dataset_size) = match nonlinearity {
            Nonlinearity::Tanh | Nonlinearity::Relu => ((2.0 / n).sqrt(), width * width + width),
            Nonlinearity::Identity => ((1.0 / n).sqrt(), width),
        };
        Self {
            width,
            nonlinearity,
            dataset_size,
            alpha0,
            alpha1: 1.0 / n,
            init_mean: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::InvalidConfig("width must be positive".into()));
        }
        if self.dataset_size == 0 {
            return Err(Error::InvalidConfig("dataset_size must be positive".into()));
        }
        if !(self.alpha0.is_finite() && self.alpha1.is_finite() && self.init_mean.is_finite()) {
            return Err(Error::InvalidConfig("scalings and init_mean must be finite".into()));
        }
        Ok(())
    }
}

/// Trainable weights: `input` is W0 (n×n), `readout` is the single row of W1.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub input: Matrix,
    pub readout: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub input: Matrix,
    pub readout: Vec<f64>,
}

impl Gradients {
    pub fn zeros(width: usize) -> Self {
        Self { input: Matrix::zeros(width, width), readout: vec![0.0; width] }
    }
}

/// Which datapoints a forward or backward pass sees.
#[derive(Debug, Clone, Copy)]
pub enum Batch<'a> {
    Full,
    Columns(&'a [usize]),
}

impl Batch<'_> {
    pub fn len(&self, dataset_size: usize) -> usize {
        match self {
            Batch::Full => dataset_size,
            Batch::Columns(c) => c.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    /// n×B pre-activations.
    pub hidden_pre: Matrix,
    /// n×B activations.
    pub hidden_act: Matrix,
    pub predictions: Vec<f64>,
}

/// A fixed random instance: initial weights, inputs and labels.
///
/// Draw order: W0 row-major from stream 0, W1 from stream 1, X column by column
/// from stream 2, y from stream 3; each stream yields normals in Box–Muller pairs.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: ModelConfig,
    pub base_seed: u64,
    /// Standard normal draws behind W0 and W1, before the mean shift.
    standard_input: Vec<f64>,
    standard_readout: Vec<f64>,
    pub init_params: Params,
    /// n×|D|, one datapoint per column.
    pub inputs: Matrix,
    /// |D|×n, one datapoint per row.
    inputs_t: Matrix,
    pub labels: Vec<f64>,
}

pub fn build_problem(config: ModelConfig, base_seed: u64) -> Result<Problem> {
    config.validate()?;
    let n = config.width;
    let d = config.dataset_size;

    let mut standard_input = vec![0.0; n * n];
    fill_normals(rng_for_stream(base_seed, stream::INPUT_WEIGHTS), &mut standard_input);
    let mut standard_readout = vec![0.0; n];
    fill_normals(rng_for_stream(base_seed, stream::READOUT_WEIGHTS), &mut standard_readout);

    // Column-major draws are exactly the row-major layout of Xᵀ.
    let mut xt = vec![0.0; d * n];
    fill_normals(rng_for_stream(base_seed, stream::INPUTS), &mut xt);
    let inputs_t = Matrix::from_vec(d, n, xt);
    let inputs = inputs_t.transpose();

    let mut labels = vec![0.0; d];
    fill_normals(rng_for_stream(base_seed, stream::LABELS), &mut labels);

    let mut problem = Problem {
        config,
        base_seed,
        standard_input,
        standard_readout,
        init_params: Params { input: Matrix::zeros(n, n), readout: vec![0.0; n] },
        inputs,
        inputs_t,
        labels,
    };
    problem.init_params = problem.init_params_with_mean(config.init_mean);
    Ok(problem)
}

/// Scratch buffers for one batch evaluation; reused across steps.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    xb: Matrix,
    xbt: Matrix,
    yb: Vec<f64>,
    pre: Matrix,
    pub(crate) act: Matrix,
    pred: Vec<f64>,
    dres: Vec<f64>,
    delta: Vec<f64>,
}

impl Workspace {
    /// Load precomputed hidden activations for a set of columns, plus their labels.
    #[inline(always)]
    pub(crate) fn gather_columns(&mut self, features: &Matrix, cols: &[usize], labels: &[f64]) {
        let n = features.rows;
        let b = cols.len();
        self.act.resize(n, b);
        for i in 0..n {
            let src = features.row(i);
            let dst = &mut self.act.data[i * b..(i + 1) * b];
            for (out, &c) in dst.iter_mut().zip(cols) {
                *out = src[c];
            }
        }
        self.yb.clear();
        self.yb.extend(cols.iter().map(|&c| labels[c]));
    }
}

impl Default for Matrix {
    fn default() -> Self {
        Matrix::zeros(0, 0)
    }
}

impl Problem {
    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn dataset_size(&self) -> usize {
        self.config.dataset_size
    }

    /// Initial weights re-derived from the same normal draws with a different mean.
    pub fn init_params_with_mean(&self, mean: f64) -> Params {
        let n = self.config.width;
        Params {
            input: Matrix::from_vec(n, n, self.standard_input.iter().map(|z| mean + z).collect()),
            readout: self.standard_readout.iter().map(|z| mean + z).collect(),
        }
    }

    pub fn forward(&self, params: &Params, batch: Batch<'_>) -> ForwardPass {
        let mut ws = Workspace::default();
        self.load_batch(batch, &mut ws);
        self.forward_into(params, &mut ws);
        ForwardPass {
            hidden_pre: ws.pre,
            hidden_act: ws.act,
            predictions: ws.pred,
        }
    }

    /// Batch loss and gradients from one forward pass.
    pub fn gradients(&self, params: &Params, batch: Batch<'_>) -> (f64, Gradients) {
        let mut ws = Workspace::default();
        let mut grads = Gradients::zeros(self.config.width);
        self.load_batch(batch, &mut ws);
        let loss = self.loss_and_gradients(params, &mut ws, &mut grads);
        (loss, grads)
    }

    /// Hidden activations over the full dataset.
    pub fn hidden_features(&self, params: &Params) -> Matrix {
        self.forward(params, Batch::Full).hidden_act
    }

    /// Labels of the datapoints in `batch`.
    pub fn batch_labels(&self, batch: Batch<'_>) -> Vec<f64> {
        match batch {
            Batch::Full => self.labels.clone(),
            Batch::Columns(cols) => cols.iter().map(|&c| self.labels[c]).collect(),
        }
    }

    /// Copy the batch's inputs and labels into the workspace.
    #[inline(always)]
    pub(crate) fn load_batch(&self, batch: Batch<'_>, ws: &mut Workspace) {
        let n = self.config.width;
        match batch {
            Batch::Full => {
                ws.xb.clone_from(&self.inputs);
                ws.xbt.clone_from(&self.inputs_t);
                ws.yb.clone_from(&self.labels);
            }
            Batch::Columns(cols) => {
                let b = cols.len();
                ws.xb.resize(n, b);
                ws.xbt.resize(b, n);
                ws.yb.clear();
                for (jj, &c) in cols.iter().enumerate() {
                    ws.xbt.data[jj * n..(jj + 1) * n].copy_from_slice(self.inputs_t.row(c));
                    ws.yb.push(self.labels[c]);
                }
                for k in 0..n {
                    let src = self.inputs.row(k);
                    let dst = &mut ws.xb.data[k * b..(k + 1) * b];
                    for (out, &c) in dst.iter_mut().zip(cols) {
                        *out = src[c];
                    }
                }
            }
        }
    }

    /// Hidden layer for the loaded batch: `pre = α0·(W0·X)`, `act = σ(pre)`.
    #[inline(always)]
    pub(crate) fn hidden_into(&self, params: &Params, ws: &mut Workspace) {
        let n = self.config.width;
        let b = ws.xb.cols;
        let alpha0 = self.config.alpha0;
        ws.pre.resize(n, b);
        ws.act.resize(n, b);
        matmul(&params.input.data, n, &ws.xb.data, b, &mut ws.pre.data, b);
        for o in ws.pre.data.iter_mut() {
            *o *= alpha0;
        }
        let (pre, act) = (&ws.pre.data, &mut ws.act.data);
        match self.config.nonlinearity {
            Nonlinearity::Tanh => {
                for (a, &p) in act.iter_mut().zip(pre) {
                    *a = tanh(p);
                }
            }
            Nonlinearity::Relu => {
                for (a, &p) in act.iter_mut().zip(pre) {
                    *a = if p > 0.0 { p } else { 0.0 };
                }
            }
            Nonlinearity::Identity => act.copy_from_slice(pre),
        }
    }

    /// Readout on top of the workspace's hidden activations: `pred = α1·(W1·act)`.
    #[inline(always)]
    pub(crate) fn readout_into(&self, params: &Params, ws: &mut Workspace) {
        let n = self.config.width;
        let b = ws.act.cols;
        let alpha1 = self.config.alpha1;
        ws.pred.clear();
        ws.pred.resize(b, 0.0);
        for i in 0..n {
            let w = params.readout[i];
            let row = &ws.act.data[i * b..(i + 1) * b];
            for (p, &a) in ws.pred.iter_mut().zip(row) {
                *p += w * a;
            }
        }
        for p in ws.pred.iter_mut() {
            *p *= alpha1;
        }
    }

    pub(crate) fn forward_into(&self, params: &Params, ws: &mut Workspace) {
        self.hidden_into(params, ws);
        self.readout_into(params, ws);
    }

    /// Loss of the current predictions; also leaves `(2/B)·r` in the workspace.
    #[inline(always)]
    pub(crate) fn residual_loss(ws: &mut Workspace) -> f64 {
        let b = ws.pred.len();
        let scale = 2.0 / b as f64;
        ws.dres.clear();
        let mut sum = 0.0;
        for (&p, &y) in ws.pred.iter().zip(&ws.yb) {
            let r = p - y;
            sum += r * r;
            ws.dres.push(scale * r);
        }
        sum / b as f64
    }

    /// Readout gradient only: `G1 = α1·(d·actᵀ)`.
    #[inline(always)]
    pub(crate) fn readout_gradient(&self, ws: &Workspace, out: &mut [f64]) {
        let b = ws.act.cols;
        let alpha1 = self.config.alpha1;
        for (g, rows) in out.chunks_mut(ROW_BLOCK).zip(ws.act.data.chunks(ROW_BLOCK * b)) {
            if g.len() == ROW_BLOCK {
                let mut acc = [0.0; ROW_BLOCK];
                for (j, &dj) in ws.dres.iter().enumerate() {
                    for (r, a) in acc.iter_mut().enumerate() {
                        *a += dj * rows[r * b + j];
                    }
                }
                for (g, a) in g.iter_mut().zip(acc) {
                    *g = alpha1 * a;
                }
            } else {
                for (r, g) in g.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for (&dj, &a) in ws.dres.iter().zip(&rows[r * b..(r + 1) * b]) {
                        acc += dj * a;
                    }
                    *g = alpha1 * acc;
                }
            }
        }
    }

    /// Input-layer gradient: `G0 = α0·((α1·W1ᵀ·d ⊙ σ'(pre))·Xᵀ)`.
    #[inline(always)]
    pub(crate) fn input_gradient(&self, params: &Params, ws: &mut Workspace, out: &mut Matrix) {
        let n = self.config.width;
        let b = ws.act.cols;
        let alpha0 = self.config.alpha0;
        let alpha1 = self.config.alpha1;
        ws.delta.resize(n * b, 0.0);
        for i in 0..n {
            let coef = alpha1 * params.readout[i];
            let pre = &ws.pre.data[i * b..(i + 1) * b];
            let act = &ws.act.data[i * b..(i + 1) * b];
            let delta = &mut ws.delta[i * b..(i + 1) * b];
            match self.config.nonlinearity {
                Nonlinearity::Tanh => {
                    for ((d, &r), &a) in delta.iter_mut().zip(&ws.dres).zip(act) {
                        *d = coef * r * (1.0 - a * a);
                    }
                }
                Nonlinearity::Relu => {
                    for ((d, &r), &p) in delta.iter_mut().zip(&ws.dres).zip(pre) {
                        *d = coef * r * if p > 0.0 { 1.0 } else { 0.0 };
                    }
                }
                Nonlinearity::Identity => {
                    for (d, &r) in delta.iter_mut().zip(&ws.dres) {
                        *d = coef * r * 1.0;
                    }
                }
            }
        }
        matmul(&ws.delta, b, &ws.xbt.data, n, &mut out.data, n);
        for g in out.data.iter_mut() {
            *g *= alpha0;
        }
    }

    pub(crate) fn loss_and_gradients(
        &self,
        params: &Params,
        ws: &mut Workspace,
        grads: &mut Gradients,
    ) -> f64 {
        self.forward_into(params, ws);
        let loss = Self::residual_loss(ws);
        self.readout_gradient(ws, &mut grads.readout);
        self.input_gradient(params, ws, &mut grads.input);
        loss
    }

    /// Full-dataset loss at `params`.
    pub fn full_loss(&self, params: &Params) -> f64 {
        let pass = self.forward(params, Batch::Full);
        loss(&pass.predictions, &self.labels)
    }
}

/// Rows handled together by the readout gradient.
const ROW_BLOCK: usize = 8;
const TILE_ROWS: usize = 4;
const TILE_COLS: usize = 16;

/// `out = coefs · m` for a row-major `coefs` with `depth` columns and a row-major
/// `m` with `depth` rows of row stride `stride`; `out` has rows of length `width`.
/// Each output element is summed from zero in ascending depth order on every path.
#[inline(always)]
fn matmul(coefs: &[f64], depth: usize, m: &[f64], stride: usize, out: &mut [f64], width: usize) {
    let rows = out.len() / width;
    debug_assert!(coefs.len() >= rows * depth && m.len() >= depth.saturating_sub(1) * stride + width);
    let mut r0 = 0;
    while r0 < rows {
        let tile_rows = if rows - r0 >= TILE_ROWS { TILE_ROWS } else { 1 };
        let mut c0 = 0;
        while c0 + TILE_COLS <= width {
            if tile_rows == TILE_ROWS {
                matmul_tile::<TILE_ROWS, TILE_COLS>(coefs, depth, m, stride, out, width, r0, c0);
            } else {
                matmul_tile::<1, TILE_COLS>(coefs, depth, m, stride, out, width, r0, c0);
            }
            c0 += TILE_COLS;
        }
        for r in r0..r0 + tile_rows {
            for c in c0..width {
                let mut acc = 0.0;
                for k in 0..depth {
                    acc += coefs[r * depth + k] * m[k * stride + c];
                }
                out[r * width + c] = acc;
            }
        }
        r0 += tile_rows;
    }
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn matmul_tile<const R: usize, const C: usize>(
    coefs: &[f64],
    depth: usize,
    m: &[f64],
    stride: usize,
    out: &mut [f64],
    width: usize,
    r0: usize,
    c0: usize,
) {
    let mut acc = [[0.0; C]; R];
    for k in 0..depth {
        let row: &[f64; C] = m[k * stride + c0..k * stride + c0 + C].try_into().unwrap();
        for (r, acc) in acc.iter_mut().enumerate() {
            let a = coefs[(r0 + r) * depth + k];
            for (x, &v) in acc.iter_mut().zip(row) {
                *x += a * v;
            }
        }
    }
    for (r, acc) in acc.iter().enumerate() {
        out[(r0 + r) * width + c0..(r0 + r) * width + c0 + C].copy_from_slice(acc);
    }
}

/// Mean squared residual.
pub fn loss(predictions: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    assert!(!predictions.is_empty(), "loss of an empty batch");
    let sum: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| {
            let r = p - y;
            r * r
        })
        .sum();
    sum / predictions.len() as f64
}
