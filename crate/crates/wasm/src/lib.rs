//! WebAssembly bindings for the single-page demo in `www/`.
//!
//! Three operations are exposed: incremental rendering of a field to RGBA with
//! its box-counting dimension, the hyperparameter readout under the pointer,
//! and the closed-form readout-only critical rate.

pub mod session;

use wasm_bindgen::prelude::*;

fn js(e: trainfractal_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Preset ids in display order.
#[wasm_bindgen(js_name = conditionIds)]
pub fn condition_ids() -> Vec<String> {
    trainfractal_core::ConditionId::ALL.iter().map(|c| c.slug().to_string()).collect()
}

/// Human-readable preset label.
#[wasm_bindgen(js_name = conditionLabel)]
pub fn condition_label(condition: &str) -> Result<String, JsError> {
    let id: trainfractal_core::ConditionId = condition.parse().map_err(js)?;
    Ok(id.label().to_string())
}

/// `[xlo, xhi, ylo, yhi]` of the preset's default window.
#[wasm_bindgen(js_name = defaultWindow)]
pub fn default_window(condition: &str) -> Result<Vec<f64>, JsError> {
    session::default_window(condition).map(Vec::from).map_err(js)
}

/// Axis labels, x then y.
#[wasm_bindgen(js_name = axisLabels)]
pub fn axis_labels(condition: &str) -> Result<Vec<String>, JsError> {
    session::axis_labels(condition).map(|l| l.iter().map(|s| s.to_string()).collect()).map_err(js)
}

/// Critical readout rate in the preset's y-axis coordinate.
#[wasm_bindgen(js_name = criticalReadoutCoordinate)]
pub fn critical_readout_coordinate(condition: &str, seed: u32) -> Result<f64, JsError> {
    session::critical_readout_coordinate(condition, seed as u64).map_err(js)
}

#[wasm_bindgen]
pub struct FieldSession(session::Session);

#[wasm_bindgen]
impl FieldSession {
    #[wasm_bindgen(constructor)]
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        condition: &str,
        xlo: f64,
        xhi: f64,
        ylo: f64,
        yhi: f64,
        width: u32,
        height: u32,
        steps: u32,
        seed: u32,
    ) -> Result<FieldSession, JsError> {
        session::Session::new(condition, [xlo, xhi, ylo, yhi], width as usize, height as usize, steps, seed as u64)
            .map(FieldSession)
            .map_err(js)
    }

    /// Train up to `pixels` more pixels; true once the field is complete.
    pub fn step(&mut self, pixels: u32) -> Result<bool, JsError> {
        self.0.step(pixels as usize).map_err(js)
    }

    pub fn progress(&self) -> f64 {
        self.0.progress()
    }

    /// RGBA bytes suitable for `ImageData`.
    pub fn rgba(&self) -> Result<Vec<u8>, JsError> {
        self.0.rgba().map_err(js)
    }

    /// NaN until the field is complete or when the fit fails.
    pub fn dimension(&self) -> f64 {
        self.0.dimension()
    }

    /// `[x, y]` hyperparameter values at a pixel.
    #[wasm_bindgen(js_name = hypersAt)]
    pub fn hypers_at(&self, col: u32, row: u32) -> Result<Vec<f64>, JsError> {
        self.0.hypers_at(col as usize, row as usize).map(|(x, y)| vec![x, y]).map_err(js)
    }

    /// `[x, y]` axis coordinates at a fractional canvas position, `fy = 0` at the top.
    #[wasm_bindgen(js_name = axisPoint)]
    pub fn axis_point(&self, fx: f64, fy: f64) -> Vec<f64> {
        let (x, y) = self.0.axis_point(fx, fy);
        vec![x, y]
    }
}
