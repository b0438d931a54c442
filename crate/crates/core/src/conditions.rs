//! The six experiment presets and the map from image coordinates to hyperparameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numerics::Nonlinearity;
use crate::trainer::TrainOptions;

pub const DEFAULT_WIDTH: usize = 16;
pub const MINIBATCH_SIZE: usize = 16;
/// Default log10 range of every learning-rate axis. With mean-field scaling at
/// width 16 the readout-only edge sits near 10^2.3, so the window is centred on it.
pub const LR_WINDOW: (f64, f64) = (0.0, 4.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AxisTarget {
    LearningRate0,
    LearningRate1,
    SharedLearningRate,
    InitMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AxisScale {
    Log10,
    Linear,
}

/// One image axis: what it controls, how it is scaled and the window it covers.
/// For `Log10` axes `lo`/`hi` are exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub target: AxisTarget,
    pub scale: AxisScale,
    pub lo: f64,
    pub hi: f64,
}

impl AxisSpec {
    pub fn new(target: AxisTarget, scale: AxisScale, lo: f64, hi: f64) -> Self {
        Self { target, scale, lo, hi }
    }

    pub fn with_range(self, lo: f64, hi: f64) -> Self {
        Self { lo, hi, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) {
            return Err(Error::InvalidConfig(format!("axis range [{}, {}] is not finite", self.lo, self.hi)));
        }
        if self.lo >= self.hi {
            return Err(Error::InvalidConfig(format!("axis range needs lo < hi, got [{}, {}]", self.lo, self.hi)));
        }
        Ok(())
    }

    /// Axis coordinate (before any exponentiation) of a pixel centre.
    pub fn coordinate(&self, index: usize, extent: usize) -> Result<f64> {
        if index >= extent {
            return Err(Error::IndexOutOfRange { index, extent });
        }
        Ok(self.lo + (index as f64 + 0.5) / extent as f64 * (self.hi - self.lo))
    }

    pub fn label(&self) -> &'static str {
        match (self.target, self.scale) {
            (AxisTarget::LearningRate0, AxisScale::Log10) => "log10 eta0 (input layer learning rate)",
            (AxisTarget::LearningRate0, AxisScale::Linear) => "eta0 (input layer learning rate)",
            (AxisTarget::LearningRate1, AxisScale::Log10) => "log10 eta1 (readout learning rate)",
            (AxisTarget::LearningRate1, AxisScale::Linear) => "eta1 (readout learning rate)",
            (AxisTarget::SharedLearningRate, AxisScale::Log10) => "log10 eta (both layers)",
            (AxisTarget::SharedLearningRate, AxisScale::Linear) => "eta (both layers)",
            (AxisTarget::InitMean, AxisScale::Log10) => "log10 initialization mean",
            (AxisTarget::InitMean, AxisScale::Linear) => "initialization mean",
        }
    }
}

/// Hyperparameter value at the centre of pixel `index` out of `extent`.
pub fn pixel_to_hyper(axis: &AxisSpec, index: usize, extent: usize) -> Result<f64> {
    let a = axis.coordinate(index, extent)?;
    Ok(match axis.scale {
        AxisScale::Linear => a,
        AxisScale::Log10 => libm::pow(10.0, a),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConditionId {
    TanhFullBatch,
    ReluFullBatch,
    DeepLinear,
    TanhMinibatch,
    TanhSingleDatapoint,
    InitMeanVsLr,
}

impl ConditionId {
    pub const ALL: [ConditionId; 6] = [
        ConditionId::TanhFullBatch,
        ConditionId::ReluFullBatch,
        ConditionId::DeepLinear,
        ConditionId::TanhMinibatch,
        ConditionId::TanhSingleDatapoint,
        ConditionId::InitMeanVsLr,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            ConditionId::TanhFullBatch => "tanh-fullbatch",
            ConditionId::ReluFullBatch => "relu-fullbatch",
            ConditionId::DeepLinear => "deep-linear",
            ConditionId::TanhMinibatch => "tanh-minibatch",
            ConditionId::TanhSingleDatapoint => "tanh-single-datapoint",
            ConditionId::InitMeanVsLr => "initmean-vs-lr",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ConditionId::TanhFullBatch => "tanh, full batch (baseline)",
            ConditionId::ReluFullBatch => "ReLU, full batch",
            ConditionId::DeepLinear => "deep linear, full batch",
            ConditionId::TanhMinibatch => "tanh, minibatch of 16",
            ConditionId::TanhSingleDatapoint => "tanh, single training datapoint",
            ConditionId::InitMeanVsLr => "initialization mean vs shared learning rate",
        }
    }

    /// Stable one-byte code used in field files.
    pub fn code(self) -> u8 {
        match self {
            ConditionId::TanhFullBatch => 0,
            ConditionId::ReluFullBatch => 1,
            ConditionId::DeepLinear => 2,
            ConditionId::TanhMinibatch => 3,
            ConditionId::TanhSingleDatapoint => 4,
            ConditionId::InitMeanVsLr => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for ConditionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.slug() == s)
            .ok_or_else(|| Error::UnknownCondition(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionConfig {
    pub id: ConditionId,
    pub model: ModelConfig,
    pub train_defaults: TrainOptions,
    pub x_axis: AxisSpec,
    pub y_axis: AxisSpec,
}

impl ConditionConfig {
    pub fn has_init_mean_axis(&self) -> bool {
        self.x_axis.target == AxisTarget::InitMean || self.y_axis.target == AxisTarget::InitMean
    }
}

/// The frozen preset for a condition. Each variant changes only its own field(s)
/// relative to the tanh full-batch baseline.
pub fn preset(id: ConditionId) -> ConditionConfig {
    let lr = |target| AxisSpec::new(target, AxisScale::Log10, LR_WINDOW.0, LR_WINDOW.1);
    let mut c = ConditionConfig {
        id,
        model: ModelConfig::mean_field(Nonlinearity::Tanh, DEFAULT_WIDTH),
        train_defaults: TrainOptions::default(),
        x_axis: lr(AxisTarget::LearningRate0),
        y_axis: lr(AxisTarget::LearningRate1),
    };
    match id {
        ConditionId::TanhFullBatch => {}
        ConditionId::ReluFullBatch => {
            c.model = ModelConfig::mean_field(Nonlinearity::Relu, DEFAULT_WIDTH);
        }
        ConditionId::DeepLinear => {
            c.model = ModelConfig::mean_field(Nonlinearity::Identity, DEFAULT_WIDTH);
        }
        ConditionId::TanhMinibatch => c.train_defaults.batch_size = MINIBATCH_SIZE,
        ConditionId::TanhSingleDatapoint => c.model.dataset_size = 1,
        ConditionId::InitMeanVsLr => {
            c.x_axis = AxisSpec::new(AxisTarget::InitMean, AxisScale::Linear, -1.0, 1.0);
            c.y_axis = lr(AxisTarget::SharedLearningRate);
        }
    }
    c
}

/// Preset by its external slug.
pub fn preset_by_slug(slug: &str) -> Result<ConditionConfig> {
    Ok(preset(slug.parse()?))
}

/// Route the two axis values into a concrete model and training configuration.
pub fn apply_hypers(condition: &ConditionConfig, x_value: f64, y_value: f64) -> (ModelConfig, TrainOptions) {
    let mut model = condition.model;
    let mut opts = condition.train_defaults;
    for (axis, value) in [(condition.x_axis, x_value), (condition.y_axis, y_value)] {
        match axis.target {
            AxisTarget::LearningRate0 => opts.eta0 = value,
            AxisTarget::LearningRate1 => opts.eta1 = value,
            AxisTarget::SharedLearningRate => {
                opts.eta0 = value;
                opts.eta1 = value;
            }
            AxisTarget::InitMean => model.init_mean = value,
        }
    }
    (model, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs_round_trip() {
        for id in ConditionId::ALL {
            assert_eq!(id.slug().parse::<ConditionId>().unwrap(), id);
            assert_eq!(ConditionId::from_code(id.code()), Some(id));
        }
        assert!("mandelbrot".parse::<ConditionId>().is_err());
        assert_eq!(ConditionId::from_code(6), None);
    }

    #[test]
    fn preset_deltas() {
        let base = preset(ConditionId::TanhFullBatch);
        assert_eq!(base.model.nonlinearity, Nonlinearity::Tanh);
        assert_eq!(base.model.width, 16);
        assert_eq!(base.train_defaults.steps, 500);
        assert_eq!(base.train_defaults.batch_size, 0);

        let single = preset(ConditionId::TanhSingleDatapoint);
        assert_eq!(single.model.dataset_size, 1);
        assert_eq!(single.model.nonlinearity, Nonlinearity::Tanh);
        assert_eq!(ConditionConfig { id: base.id, model: base.model, ..single }, base);

        let mb = preset(ConditionId::TanhMinibatch);
        assert_eq!(mb.train_defaults.batch_size, 16);
        assert_eq!(ConditionConfig { id: base.id, train_defaults: base.train_defaults, ..mb }, base);

        let relu = preset(ConditionId::ReluFullBatch);
        assert_eq!(ConditionConfig { id: base.id, model: base.model, ..relu }, base);
        assert_eq!(relu.model.dataset_size, 272);

        let lin = preset(ConditionId::DeepLinear);
        assert_eq!(lin.model.nonlinearity, Nonlinearity::Identity);
        assert_eq!(lin.model.dataset_size, 16);
        assert_eq!(ConditionConfig { id: base.id, model: base.model, ..lin }, base);

        let im = preset(ConditionId::InitMeanVsLr);
        assert_eq!((im.x_axis.target, im.x_axis.scale), (AxisTarget::InitMean, AxisScale::Linear));
        assert_eq!((im.y_axis.target, im.y_axis.scale), (AxisTarget::SharedLearningRate, AxisScale::Log10));
        assert_eq!(ConditionConfig { id: base.id, x_axis: base.x_axis, y_axis: base.y_axis, ..im }, base);
    }

    #[test]
    fn pixel_centres() {
        let lin = AxisSpec::new(AxisTarget::InitMean, AxisScale::Linear, 0.0, 1.0);
        assert_eq!(pixel_to_hyper(&lin, 0, 2).unwrap(), 0.25);
        let log = AxisSpec::new(AxisTarget::LearningRate0, AxisScale::Log10, -2.0, 2.0);
        assert!((pixel_to_hyper(&log, 0, 4).unwrap() - 10f64.powf(-1.5)).abs() < 1e-15);
        let lin = AxisSpec::new(AxisTarget::InitMean, AxisScale::Linear, -3.0, 5.0);
        assert_eq!(pixel_to_hyper(&lin, 9, 10).unwrap(), 5.0 - 8.0 / 20.0);
        assert!(matches!(
            pixel_to_hyper(&lin, 10, 10),
            Err(Error::IndexOutOfRange { index: 10, extent: 10 })
        ));
    }

    #[test]
    fn routing() {
        let base = preset(ConditionId::TanhFullBatch);
        let (_, o) = apply_hypers(&base, 0.1, 0.5);
        assert_eq!((o.eta0, o.eta1), (0.1, 0.5));
        let im = preset(ConditionId::InitMeanVsLr);
        let (m, o) = apply_hypers(&im, 0.3, 0.01);
        assert_eq!(m.init_mean, 0.3);
        assert_eq!((o.eta0, o.eta1), (0.01, 0.01));
    }

    #[test]
    fn axis_validation() {
        let a = AxisSpec::new(AxisTarget::LearningRate0, AxisScale::Log10, 1.0, 1.0);
        assert!(a.validate().is_err());
        assert!(a.with_range(0.0, f64::INFINITY).validate().is_err());
        assert!(a.with_range(0.0, 1.0).validate().is_ok());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn strictly_monotone(lo in -5.0f64..5.0, span in 1e-6f64..10.0, extent in 2usize..2000, log in any::<bool>()) {
                let scale = if log { AxisScale::Log10 } else { AxisScale::Linear };
                let axis = AxisSpec::new(AxisTarget::LearningRate0, scale, lo, lo + span);
                let mut prev = f64::NEG_INFINITY;
                for i in 0..extent.min(300) {
                    let v = pixel_to_hyper(&axis, i, extent).unwrap();
                    prop_assert!(v > prev);
                    prev = v;
                }
            }

            #[test]
            fn shared_rate_is_shared(x in -1.0f64..1.0, y in 1e-3f64..1e3) {
                let im = preset(ConditionId::InitMeanVsLr);
                let (_, o) = apply_hypers(&im, x, y);
                prop_assert_eq!(o.eta0, o.eta1);
            }
        }
    }
}
