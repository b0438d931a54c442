//! Red/blue escape-intensity colouring with per-image adaptive scaling.
//!
//! Intensity transfer: `u = ln(1 + accumulator)`, then each class is stretched
//! between its own 2nd and 98th percentiles and clamped to `[0, 1]`. Zero maps
//! to white (the fastest runs), one to the class's deep colour.

use crate::error::{Error, Result};
use crate::renderer::Field;
use crate::trainer::RunClass;

pub const CONVERGED_RGB: [u8; 3] = [26, 51, 217];
pub const DIVERGED_RGB: [u8; 3] = [217, 38, 26];
pub const LOW_PERCENTILE: f64 = 0.02;
pub const HIGH_PERCENTILE: f64 = 0.98;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, col: usize, row: usize) -> [u8; 3] {
        let i = 3 * (row * self.width + col);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

/// Linearly interpolated order statistic at rank `q·(count−1)`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, q))
}

fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let rank = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

fn stretch(values: &[f64]) -> impl Fn(f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let distinct = sorted.windows(2).any(|w| w[0] != w[1]);
    let (q02, q98) = if sorted.is_empty() {
        (0.0, 0.0)
    } else {
        (percentile_sorted(&sorted, LOW_PERCENTILE), percentile_sorted(&sorted, HIGH_PERCENTILE))
    };
    move |u: f64| {
        if !distinct {
            1.0
        } else if q98 > q02 {
            ((u - q02) / (q98 - q02)).clamp(0.0, 1.0)
        } else if u >= q02 {
            // Percentile window collapsed onto a dominant value.
            1.0
        } else {
            0.0
        }
    }
}

/// Per-pixel intensity in `[0, 1]`, normalised separately within each class.
pub fn normalized_intensity(field: &Field) -> Result<Vec<f64>> {
    if field.outcomes.is_empty() {
        return Err(Error::EmptyInput);
    }
    let u: Vec<f64> = field.outcomes.iter().map(|o| o.accumulator.ln_1p()).collect();
    let of_class = |class: RunClass| -> Vec<f64> {
        field
            .outcomes
            .iter()
            .zip(&u)
            .filter(|(o, _)| o.class == class)
            .map(|(_, &v)| v)
            .collect()
    };
    let converged = stretch(&of_class(RunClass::Converged));
    let diverged = stretch(&of_class(RunClass::Diverged));
    Ok(field
        .outcomes
        .iter()
        .zip(&u)
        .map(|(o, &v)| match o.class {
            RunClass::Converged => converged(v),
            RunClass::Diverged => diverged(v),
        })
        .collect())
}

/// Blend from white towards the class colour by `v`.
pub fn shade(class: RunClass, v: f64) -> [u8; 3] {
    let target = match class {
        RunClass::Converged => CONVERGED_RGB,
        RunClass::Diverged => DIVERGED_RGB,
    };
    target.map(|c| (255.0 + (c as f64 - 255.0) * v).round() as u8)
}

pub fn colorize(field: &Field) -> Result<RgbImage> {
    let v = normalized_intensity(field)?;
    let mut pixels = Vec::with_capacity(3 * v.len());
    for (o, &v) in field.outcomes.iter().zip(&v) {
        pixels.extend_from_slice(&shade(o.class, v));
    }
    Ok(RgbImage { width: field.width, height: field.height, pixels })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::conditions::{preset, ConditionId};
    use crate::renderer::Viewport;
    use crate::trainer::RunOutcome;

    pub(crate) fn synthetic_field(width: usize, height: usize, f: impl Fn(usize, usize) -> (RunClass, f64)) -> Field {
        let c = preset(ConditionId::TanhFullBatch);
        let mut outcomes = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                let (class, accumulator) = f(col, row);
                outcomes.push(RunOutcome { class, steps_run: 1, accumulator, final_loss: 1.0 });
            }
        }
        Field { width, height, outcomes, condition: c, viewport: Viewport::of(&c), base_seed: 0, steps: 500 }
    }

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[3.0, 3.0, 3.0], 0.7).unwrap(), 3.0);
        assert_eq!(percentile(&[0.0, 10.0], 0.5).unwrap(), 5.0);
        assert_eq!(percentile(&[4.0, -1.0, 9.0], 0.0).unwrap(), -1.0);
        assert_eq!(percentile(&[4.0, -1.0, 9.0], 1.0).unwrap(), 9.0);
        assert!(percentile(&[], 0.5).is_err());
    }

    #[test]
    fn degenerate_class_is_saturated() {
        let f = synthetic_field(3, 1, |_, _| (RunClass::Converged, 7.0));
        assert_eq!(normalized_intensity(&f).unwrap(), vec![1.0; 3]);
    }

    #[test]
    fn two_point_class_spans_unit_interval() {
        let e = std::f64::consts::E;
        let f = synthetic_field(2, 1, |c, _| (RunClass::Diverged, if c == 0 { e - 1.0 } else { e.powi(3) - 1.0 }));
        let v = normalized_intensity(&f).unwrap();
        assert!(v[0].abs() < 1e-12, "{v:?}");
        assert!((v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn palette_endpoints() {
        assert_eq!(shade(RunClass::Converged, 0.0), [255, 255, 255]);
        assert_eq!(shade(RunClass::Diverged, 0.0), [255, 255, 255]);
        assert_eq!(shade(RunClass::Converged, 1.0), CONVERGED_RGB);
        assert_eq!(shade(RunClass::Diverged, 0.5), [236, 147, 141]);
    }

    #[test]
    fn classes_use_their_own_palette() {
        let f = synthetic_field(10, 10, |c, r| {
            let class = if (c + r) % 3 == 0 { RunClass::Diverged } else { RunClass::Converged };
            (class, (c * 10 + r) as f64)
        });
        let img = colorize(&f).unwrap();
        for row in 0..10 {
            for col in 0..10 {
                let [r, g, b] = img.pixel(col, row);
                match f.class_at(col, row) {
                    RunClass::Converged => assert!(b >= r && b >= g),
                    RunClass::Diverged => assert!(r >= g && r >= b),
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn monotone_within_class(accs in proptest::collection::vec(0.0f64..1e9, 2..60)) {
                let n = accs.len();
                let f = synthetic_field(n, 1, |c, _| (RunClass::Converged, accs[c]));
                let v = normalized_intensity(&f).unwrap();
                for i in 0..n {
                    for j in 0..n {
                        if accs[i] > accs[j] {
                            prop_assert!(v[i] >= v[j]);
                        }
                    }
                }
            }

            #[test]
            fn scale_invariant_for_large_accumulators(
                exps in proptest::collection::vec(12.5f64..40.0, 3..40),
                factor in 0.1f64..100.0,
            ) {
                let n = exps.len();
                let spread = exps.iter().cloned().fold(f64::MIN, f64::max) - exps.iter().cloned().fold(f64::MAX, f64::min);
                prop_assume!(spread > 1.0);
                let base = synthetic_field(n, 1, |c, _| (RunClass::Diverged, exps[c].exp()));
                let scaled = synthetic_field(n, 1, |c, _| (RunClass::Diverged, exps[c].exp() * factor));
                let a = normalized_intensity(&base).unwrap();
                let b = normalized_intensity(&scaled).unwrap();
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-2);
                }
            }
        }
    }
}
