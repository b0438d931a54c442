//! Plain-Rust side of the browser demo, usable and testable off the web.

use trainfractal_core::fracdim::report_field;
use trainfractal_core::model::Workspace;
use trainfractal_core::readout;
use trainfractal_core::renderer::RenderPlan;
use trainfractal_core::{build_problem, colorize, preset, AxisScale, ConditionId, Field, Result, RunOutcome, Viewport};

/// A field rendered a few pixels at a time so the page stays responsive.
pub struct Session {
    plan: RenderPlan,
    outcomes: Vec<RunOutcome>,
    ws: Workspace,
}

impl Session {
    /// `window` is `[xlo, xhi, ylo, yhi]` in axis coordinates.
    pub fn new(condition: &str, window: [f64; 4], width: usize, height: usize, steps: u32, seed: u64) -> Result<Self> {
        let c = preset(condition.parse::<ConditionId>()?);
        let vp = Viewport::with_ranges(&c, (window[0], window[1]), (window[2], window[3]));
        let plan = RenderPlan::new(&c, &vp, width, height, seed, steps)?;
        Ok(Self { outcomes: Vec::with_capacity(width * height), plan, ws: Workspace::default() })
    }

    pub fn width(&self) -> usize {
        self.plan.width
    }

    pub fn height(&self) -> usize {
        self.plan.height
    }

    pub fn is_done(&self) -> bool {
        self.outcomes.len() == self.plan.width * self.plan.height
    }

    pub fn progress(&self) -> f64 {
        self.outcomes.len() as f64 / (self.plan.width * self.plan.height) as f64
    }

    /// Train up to `pixels` more pixels in row-major order. Returns whether the field is complete.
    pub fn step(&mut self, pixels: usize) -> Result<bool> {
        let total = self.plan.width * self.plan.height;
        let end = (self.outcomes.len() + pixels).min(total);
        for i in self.outcomes.len()..end {
            let outcome = self.plan.train_pixel(i % self.plan.width, i / self.plan.width, &mut self.ws)?;
            self.outcomes.push(outcome);
        }
        Ok(self.is_done())
    }

    /// The completed rows as a field, or `None` before the first row finishes.
    fn rendered(&self) -> Option<Field> {
        let rows = self.outcomes.len() / self.plan.width;
        (rows > 0).then(|| Field {
            width: self.plan.width,
            height: rows,
            outcomes: self.outcomes[..rows * self.plan.width].to_vec(),
            condition: self.plan.condition,
            viewport: self.plan.viewport,
            base_seed: self.plan.problem.base_seed,
            steps: self.plan.steps,
        })
    }

    /// RGBA bytes for the whole canvas. Rows not rendered yet are transparent;
    /// shading is scaled over the rows rendered so far.
    pub fn rgba(&self) -> Result<Vec<u8>> {
        let mut out = vec![0u8; 4 * self.plan.width * self.plan.height];
        if let Some(field) = self.rendered() {
            let image = colorize(&field)?;
            for (px, rgb) in out.chunks_exact_mut(4).zip(image.pixels.chunks_exact(3)) {
                px[..3].copy_from_slice(rgb);
                px[3] = 255;
            }
        }
        Ok(out)
    }

    /// Box-counting dimension of the finished field; NaN while rendering or when the fit fails.
    pub fn dimension(&self) -> f64 {
        match (self.is_done(), self.rendered()) {
            (true, Some(field)) => report_field(&field).dimension,
            _ => f64::NAN,
        }
    }

    /// Hyperparameter values `(x, y)` at a pixel centre.
    pub fn hypers_at(&self, col: usize, row: usize) -> Result<(f64, f64)> {
        self.plan.hypers_at(col, row)
    }

    /// Axis coordinates of a canvas position given as fractions of its width and height,
    /// with `fy = 0` at the top.
    pub fn axis_point(&self, fx: f64, fy: f64) -> (f64, f64) {
        let (x, y) = (self.plan.viewport.x_axis, self.plan.viewport.y_axis);
        (x.lo + fx * (x.hi - x.lo), y.hi - fy * (y.hi - y.lo))
    }
}

/// `[xlo, xhi, ylo, yhi]` of a preset's default window.
pub fn default_window(condition: &str) -> Result<[f64; 4]> {
    let c = preset(condition.parse::<ConditionId>()?);
    Ok([c.x_axis.lo, c.x_axis.hi, c.y_axis.lo, c.y_axis.hi])
}

/// Axis labels of a preset, x then y.
pub fn axis_labels(condition: &str) -> Result<[&'static str; 2]> {
    let c = preset(condition.parse::<ConditionId>()?);
    Ok([c.x_axis.label(), c.y_axis.label()])
}

/// Readout learning rate above which readout-only training diverges, expressed in
/// the preset's y-axis coordinate (log10 for log axes).
pub fn critical_readout_coordinate(condition: &str, seed: u64) -> Result<f64> {
    let c = preset(condition.parse::<ConditionId>()?);
    let rate = readout::critical_readout_rate(&build_problem(c.model, seed)?);
    Ok(match c.y_axis.scale {
        AxisScale::Log10 => rate.log10(),
        AxisScale::Linear => rate,
    })
}
