//! Field rendering: one full training run per pixel.
//!
//! Pixels are independent and results are written by position, so the output
//! does not depend on the number of workers or on scheduling order.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::conditions::{apply_hypers, pixel_to_hyper, AxisSpec, ConditionConfig};
use crate::error::{Error, Result};
use crate::model::{build_problem, Params, Problem, Workspace};
use crate::trainer::{batch_schedule, train_from, BatchSchedule, RunClass, RunOutcome, TrainOptions};

/// Hard cap on zoom depth regardless of the depth guard.
pub const MAX_ZOOM_FRAMES: usize = 60;
/// Pixel spacing below this many ulps of the axis magnitude stops a zoom.
pub const DEPTH_GUARD_ULPS: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub x_axis: AxisSpec,
    pub y_axis: AxisSpec,
}

impl Viewport {
    pub fn of(condition: &ConditionConfig) -> Self {
        Self { x_axis: condition.x_axis, y_axis: condition.y_axis }
    }

    /// The condition's axes restricted to new ranges.
    pub fn with_ranges(condition: &ConditionConfig, x: (f64, f64), y: (f64, f64)) -> Self {
        Self {
            x_axis: condition.x_axis.with_range(x.0, x.1),
            y_axis: condition.y_axis.with_range(y.0, y.1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.x_axis.validate()?;
        self.y_axis.validate()
    }

    /// Whether `self` lies strictly inside `outer` on both axes.
    pub fn strictly_inside(&self, outer: &Viewport) -> bool {
        self.x_axis.lo > outer.x_axis.lo
            && self.x_axis.hi < outer.x_axis.hi
            && self.y_axis.lo > outer.y_axis.lo
            && self.y_axis.hi < outer.y_axis.hi
    }
}

/// A rendered grid of outcomes, row-major with row 0 at the top (the `hi` end of the y axis).
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub width: usize,
    pub height: usize,
    pub outcomes: Vec<RunOutcome>,
    pub condition: ConditionConfig,
    pub viewport: Viewport,
    pub base_seed: u64,
    pub steps: u32,
}

impl Field {
    #[inline]
    pub fn get(&self, col: usize, row: usize) -> &RunOutcome {
        &self.outcomes[row * self.width + col]
    }

    pub fn class_at(&self, col: usize, row: usize) -> RunClass {
        self.get(col, row).class
    }

    pub fn count(&self, class: RunClass) -> usize {
        self.outcomes.iter().filter(|o| o.class == class).count()
    }

    /// Equality of every member, comparing floats by bit pattern.
    pub fn bit_eq(&self, other: &Field) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.condition == other.condition
            && self.viewport == other.viewport
            && self.base_seed == other.base_seed
            && self.steps == other.steps
            && self.outcomes.len() == other.outcomes.len()
            && self.outcomes.iter().zip(&other.outcomes).all(|(a, b)| a.bit_eq(b))
    }
}

/// Worker count, progress counter and cancellation flag for a render.
#[derive(Debug, Default)]
pub struct RenderControl {
    /// `None` uses the ambient thread pool.
    pub workers: Option<usize>,
    completed: AtomicUsize,
    cancelled: AtomicBool,
}

impl RenderControl {
    pub fn with_workers(workers: usize) -> Self {
        Self { workers: Some(workers), ..Default::default() }
    }

    /// Pixels finished so far.
    pub fn completed(&self) -> usize {
        self.completed.load(Ordering::Relaxed)
    }

    pub fn cancel(&self) {
        self.cancelled.store(true, Ordering::Relaxed);
    }

    pub fn is_cancelled(&self) -> bool {
        self.cancelled.load(Ordering::Relaxed)
    }

    pub fn reset_progress(&self) {
        self.completed.store(0, Ordering::Relaxed);
    }
}

/// Everything shared by the pixels of one image.
pub struct RenderPlan {
    pub condition: ConditionConfig,
    pub viewport: Viewport,
    pub width: usize,
    pub height: usize,
    pub steps: u32,
    pub problem: Problem,
    pub schedule: Option<BatchSchedule>,
}

/// Hyperparameters and starting weights for one pixel.
pub struct PixelSetup {
    pub opts: TrainOptions,
    pub init: Option<Params>,
}

impl RenderPlan {
    pub fn new(
        condition: &ConditionConfig,
        viewport: &Viewport,
        width: usize,
        height: usize,
        base_seed: u64,
        steps: u32,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig(format!("field size {width}x{height} is empty")));
        }
        viewport.validate()?;
        let mut condition = *condition;
        condition.train_defaults.steps = steps;
        condition.x_axis = viewport.x_axis;
        condition.y_axis = viewport.y_axis;
        let problem = build_problem(condition.model, base_seed)?;
        condition.train_defaults.validate(problem.dataset_size())?;
        let schedule = if condition.train_defaults.uses_minibatches(problem.dataset_size()) {
            Some(batch_schedule(
                base_seed,
                problem.dataset_size(),
                condition.train_defaults.batch_size,
                steps as usize,
            )?)
        } else {
            None
        };
        Ok(Self { condition, viewport: *viewport, width, height, steps, problem, schedule })
    }

    pub fn hypers_at(&self, col: usize, row: usize) -> Result<(f64, f64)> {
        if row >= self.height {
            return Err(Error::IndexOutOfRange { index: row, extent: self.height });
        }
        let x = pixel_to_hyper(&self.viewport.x_axis, col, self.width)?;
        let y = pixel_to_hyper(&self.viewport.y_axis, self.height - 1 - row, self.height)?;
        Ok((x, y))
    }

    pub fn pixel(&self, col: usize, row: usize) -> Result<PixelSetup> {
        let (x, y) = self.hypers_at(col, row)?;
        let (model, opts) = apply_hypers(&self.condition, x, y);
        let init = self
            .condition
            .has_init_mean_axis()
            .then(|| self.problem.init_params_with_mean(model.init_mean));
        Ok(PixelSetup { opts, init })
    }

    /// Train one pixel; the same outcome `render` stores at that position.
    pub fn train_pixel(&self, col: usize, row: usize, ws: &mut Workspace) -> Result<RunOutcome> {
        if col >= self.width {
            return Err(Error::IndexOutOfRange { index: col, extent: self.width });
        }
        let setup = self.pixel(col, row)?;
        let init = setup.init.as_ref().unwrap_or(&self.problem.init_params);
        Ok(train_from(&self.problem, init, &setup.opts, self.schedule.as_ref(), ws))
    }

    fn run_pixel(&self, col: usize, row: usize, ws: &mut Workspace) -> RunOutcome {
        // Coordinates are in range by construction.
        self.train_pixel(col, row, ws).expect("pixel inside plan")
    }

    fn render_row(&self, row: usize, out: &mut [RunOutcome], ws: &mut Workspace, control: &RenderControl) {
        if control.is_cancelled() {
            return;
        }
        for (col, slot) in out.iter_mut().enumerate() {
            *slot = self.run_pixel(col, row, ws);
        }
        control.completed.fetch_add(self.width, Ordering::Relaxed);
    }

    pub fn render(self, control: &RenderControl) -> Result<Field> {
        let placeholder = RunOutcome {
            class: RunClass::Converged,
            steps_run: 0,
            accumulator: 0.0,
            final_loss: 0.0,
        };
        let mut outcomes = vec![placeholder; self.width * self.height];
        self.fill(&mut outcomes, control)?;
        if control.is_cancelled() {
            return Err(Error::Cancelled);
        }
        Ok(Field {
            width: self.width,
            height: self.height,
            outcomes,
            condition: self.condition,
            viewport: self.viewport,
            base_seed: self.problem.base_seed,
            steps: self.steps,
        })
    }

    #[cfg(feature = "parallel")]
    fn fill(&self, outcomes: &mut [RunOutcome], control: &RenderControl) -> Result<()> {
        use rayon::prelude::*;
        let mut work = || {
            outcomes
                .par_chunks_mut(self.width)
                .enumerate()
                .for_each_init(Workspace::default, |ws, (row, out)| {
                    self.render_row(row, out, ws, control)
                });
        };
        match control.workers {
            Some(workers) => rayon::ThreadPoolBuilder::new()
                .num_threads(workers.max(1))
                .build()
                .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?
                .install(work),
            None => work(),
        }
        Ok(())
    }

    #[cfg(not(feature = "parallel"))]
    fn fill(&self, outcomes: &mut [RunOutcome], control: &RenderControl) -> Result<()> {
        let mut ws = Workspace::default();
        for (row, out) in outcomes.chunks_mut(self.width).enumerate() {
            self.render_row(row, out, &mut ws, control);
        }
        Ok(())
    }
}

/// Render a field on the ambient worker pool.
pub fn render_field(
    condition: &ConditionConfig,
    viewport: &Viewport,
    width: usize,
    height: usize,
    base_seed: u64,
    steps: u32,
) -> Result<Field> {
    render_field_with(condition, viewport, width, height, base_seed, steps, &RenderControl::default())
}

pub fn render_field_with(
    condition: &ConditionConfig,
    viewport: &Viewport,
    width: usize,
    height: usize,
    base_seed: u64,
    steps: u32,
    control: &RenderControl,
) -> Result<Field> {
    RenderPlan::new(condition, viewport, width, height, base_seed, steps)?.render(control)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoomSpec {
    pub center_x: f64,
    pub center_y: f64,
    pub initial_halfwidth_x: f64,
    pub initial_halfwidth_y: f64,
    pub max_frames: usize,
    pub frame_extent: usize,
}

impl ZoomSpec {
    pub const DEFAULT_FRAMES: usize = 50;
    pub const DEFAULT_EXTENT: usize = 1024;

    pub fn new(center: (f64, f64), halfwidth: (f64, f64)) -> Self {
        Self {
            center_x: center.0,
            center_y: center.1,
            initial_halfwidth_x: halfwidth.0,
            initial_halfwidth_y: halfwidth.1,
            max_frames: Self::DEFAULT_FRAMES,
            frame_extent: Self::DEFAULT_EXTENT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.center_x, self.center_y, self.initial_halfwidth_x, self.initial_halfwidth_y]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.initial_halfwidth_x > 0.0 && self.initial_halfwidth_y > 0.0) {
            return Err(Error::InvalidConfig("zoom needs a finite centre and positive halfwidths".into()));
        }
        if self.max_frames == 0 || self.frame_extent == 0 {
            return Err(Error::InvalidConfig("zoom needs at least one frame of nonzero extent".into()));
        }
        Ok(())
    }

    /// Window of frame `k`: centre ± halfwidth/2^k on each axis.
    pub fn viewport(&self, condition: &ConditionConfig, k: usize) -> Viewport {
        let shrink = libm::ldexp(1.0, -(k as i32));
        let hx = self.initial_halfwidth_x * shrink;
        let hy = self.initial_halfwidth_y * shrink;
        Viewport::with_ranges(
            condition,
            (self.center_x - hx, self.center_x + hx),
            (self.center_y - hy, self.center_y + hy),
        )
    }
}

fn ulp(x: f64) -> f64 {
    let x = x.abs();
    x.next_up() - x
}

/// True once pixel spacing on either axis falls below 64 ulps of that axis's magnitude.
pub fn depth_guard(viewport: &Viewport, width: usize, height: usize) -> bool {
    let axis_too_fine = |axis: &AxisSpec, extent: usize| {
        let step = (axis.hi - axis.lo) / extent as f64;
        let magnitude = axis.lo.abs().max(axis.hi.abs());
        !(step.is_finite() && magnitude.is_finite()) || step < DEPTH_GUARD_ULPS * ulp(magnitude)
    };
    axis_too_fine(&viewport.x_axis, width) || axis_too_fine(&viewport.y_axis, height)
}

/// Frame windows of a zoom, without rendering anything. Stops at `max_frames`,
/// the 60-frame cap, or the first window the depth guard rejects.
pub fn zoom_viewports(condition: &ConditionConfig, spec: &ZoomSpec) -> Result<Vec<Viewport>> {
    spec.validate()?;
    let mut frames = Vec::new();
    for k in 0..spec.max_frames.min(MAX_ZOOM_FRAMES) {
        let vp = spec.viewport(condition, k);
        if depth_guard(&vp, spec.frame_extent, spec.frame_extent) {
            break;
        }
        frames.push(vp);
    }
    Ok(frames)
}

/// Render a zoom sequence, handing each frame to `sink` as soon as it is done.
/// Returns the number of frames produced.
pub fn render_zoom_sequence<F>(
    condition: &ConditionConfig,
    spec: &ZoomSpec,
    base_seed: u64,
    steps: u32,
    control: &RenderControl,
    mut sink: F,
) -> Result<usize>
where
    F: FnMut(usize, Field) -> Result<()>,
{
    let frames = zoom_viewports(condition, spec)?;
    for (k, vp) in frames.iter().enumerate() {
        control.reset_progress();
        let field = render_field_with(
            condition,
            vp,
            spec.frame_extent,
            spec.frame_extent,
            base_seed,
            steps,
            control,
        )?;
        sink(k, field)?;
    }
    Ok(frames.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditions::{preset, ConditionId};
    use crate::trainer::train_run;

    #[test]
    fn single_frozen_pixel() {
        let c = preset(ConditionId::TanhFullBatch);
        // A linear axis pinned at zero learning rate.
        let mut c0 = c;
        c0.x_axis.scale = crate::conditions::AxisScale::Linear;
        c0.y_axis.scale = crate::conditions::AxisScale::Linear;
        let vp = Viewport::with_ranges(&c0, (-1e-300, 1e-300), (-1e-300, 1e-300));
        let plan = RenderPlan::new(&c0, &vp, 1, 1, 3, 20).unwrap();
        let (x, y) = plan.hypers_at(0, 0).unwrap();
        assert_eq!((x, y), (0.0, 0.0));
        let field = plan.render(&RenderControl::default()).unwrap();
        let p = build_problem(c.model, 3).unwrap();
        let l0 = p.full_loss(&p.init_params);
        let o = field.outcomes[0];
        assert_eq!(o.class, RunClass::Converged);
        let mut expected = 0.0;
        for _ in 0..20 {
            expected += l0;
        }
        assert_eq!(o.accumulator, expected);
    }

    #[test]
    fn pixels_match_direct_training() {
        let c = preset(ConditionId::InitMeanVsLr);
        let vp = Viewport::of(&c);
        let plan = RenderPlan::new(&c, &vp, 3, 2, 5, 30).unwrap();
        let field = RenderPlan::new(&c, &vp, 3, 2, 5, 30).unwrap().render(&RenderControl::default()).unwrap();
        for row in 0..2 {
            for col in 0..3 {
                let (x, y) = plan.hypers_at(col, row).unwrap();
                let (model, opts) = apply_hypers(&plan.condition, x, y);
                let p = build_problem(model, 5).unwrap();
                let direct = train_run(&p, &opts).unwrap();
                assert!(direct.bit_eq(field.get(col, row)), "pixel {col},{row}");
                let single = plan.train_pixel(col, row, &mut Workspace::default()).unwrap();
                assert!(single.bit_eq(field.get(col, row)));
            }
        }
        assert!(plan.train_pixel(3, 0, &mut Workspace::default()).is_err());
        assert!(plan.train_pixel(0, 2, &mut Workspace::default()).is_err());
    }

    #[test]
    fn top_row_is_high_end_of_y() {
        let c = preset(ConditionId::TanhFullBatch);
        let plan = RenderPlan::new(&c, &Viewport::of(&c), 4, 4, 0, 1).unwrap();
        let (_, top) = plan.hypers_at(0, 0).unwrap();
        let (_, bottom) = plan.hypers_at(0, 3).unwrap();
        assert!(top > bottom);
    }

    #[test]
    fn rejects_empty_and_inverted() {
        let c = preset(ConditionId::TanhFullBatch);
        assert!(render_field(&c, &Viewport::of(&c), 0, 4, 0, 10).is_err());
        let bad = Viewport::with_ranges(&c, (1.0, 1.0), (0.0, 1.0));
        assert!(render_field(&c, &bad, 4, 4, 0, 10).is_err());
    }

    #[test]
    fn cancellation() {
        let c = preset(ConditionId::DeepLinear);
        let control = RenderControl::default();
        control.cancel();
        let r = render_field_with(&c, &Viewport::of(&c), 8, 8, 0, 5, &control);
        assert!(matches!(r, Err(Error::Cancelled)));
    }

    #[test]
    fn progress_counts_pixels() {
        let c = preset(ConditionId::DeepLinear);
        let control = RenderControl::with_workers(2);
        render_field_with(&c, &Viewport::of(&c), 5, 7, 0, 5, &control).unwrap();
        assert_eq!(control.completed(), 35);
    }

    #[test]
    fn guard_examples() {
        let c = preset(ConditionId::TanhFullBatch);
        assert!(!depth_guard(&Viewport::with_ranges(&c, (0.0, 1.0), (0.0, 1.0)), 1024, 1024));
        let tiny = Viewport::with_ranges(&c, (1.0 - 5e-16, 1.0 + 5e-16), (0.0, 1.0));
        assert!(depth_guard(&tiny, 1024, 1024));
        let near_zero = Viewport::with_ranges(&c, (-5e-301, 5e-301), (-5e-301, 5e-301));
        assert!(!depth_guard(&near_zero, 1024, 1024));
    }

    #[test]
    fn zoom_geometry() {
        let c = preset(ConditionId::TanhFullBatch);
        let spec = ZoomSpec { max_frames: 8, ..ZoomSpec::new((0.3, -0.2), (1.0, 0.5)) };
        let frames = zoom_viewports(&c, &spec).unwrap();
        assert_eq!(frames.len(), 8);
        assert_eq!((frames[0].x_axis.lo, frames[0].x_axis.hi), (0.3 - 1.0, 0.3 + 1.0));
        let spacing = |v: &Viewport| (v.x_axis.hi - v.x_axis.lo) / 1024.0;
        for k in 1..frames.len() {
            assert!(frames[k].strictly_inside(&frames[k - 1]));
            let ratio = spacing(&frames[0]) / spacing(&frames[k]);
            assert!((ratio - (1u64 << k) as f64).abs() < 1e-9 * ratio);
        }
    }

    #[test]
    fn zoom_cap_without_guard() {
        let c = preset(ConditionId::TanhFullBatch);
        // Around zero the guard never fires; the hard cap does.
        let spec = ZoomSpec { max_frames: 500, ..ZoomSpec::new((0.0, 0.0), (1.0, 1.0)) };
        assert_eq!(zoom_viewports(&c, &spec).unwrap().len(), MAX_ZOOM_FRAMES);
    }

    #[test]
    fn zoom_streams_frames() {
        let c = preset(ConditionId::DeepLinear);
        let spec = ZoomSpec { max_frames: 3, frame_extent: 4, ..ZoomSpec::new((0.0, 0.0), (1.0, 1.0)) };
        let mut seen = Vec::new();
        let n = render_zoom_sequence(&c, &spec, 1, 5, &RenderControl::default(), |k, f| {
            seen.push((k, f.viewport));
            Ok(())
        })
        .unwrap();
        assert_eq!(n, 3);
        assert_eq!(seen.len(), 3);
        assert_eq!(seen[2].1, spec.viewport(&c, 2));
    }
}
