//! On-disk formats: `.nnfr` field dumps, PNG images, box-count CSV and the
//! canonical JSON render configuration.
//!
//! `.nnfr` layout (all integers and floats little-endian):
//!
//! | bytes | field |
//! |-------|-------|
//! | 4     | magic `NNFR` |
//! | 4     | version (u32, = 1) |
//! | 4 + 4 | width, height (u32) |
//! | 1     | condition code |
//! | 4     | steps (u32) |
//! | 8     | base seed (u64) |
//! | 32    | x lo, x hi, y lo, y hi (f64) |
//! | 4     | x target, x scale, y target, y scale codes |
//!
//! followed by `width × height` row-major 21-byte records: class (u8,
//! 0 converged / 1 diverged), steps run (u32), final loss (f64), accumulator (f64).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::colorize::RgbImage;
use crate::conditions::{preset, AxisScale, AxisSpec, AxisTarget, ConditionConfig, ConditionId};
use crate::error::{Error, Result};
use crate::fracdim::{BoxCount, BoxCountResult};
use crate::renderer::{Field, Viewport};
use crate::trainer::{RunClass, RunOutcome};

pub const FIELD_MAGIC: [u8; 4] = *b"NNFR";
pub const FIELD_VERSION: u32 = 1;
pub const FIELD_HEADER_LEN: usize = 65;
pub const FIELD_RECORD_LEN: usize = 21;

fn target_code(t: AxisTarget) -> u8 {
    match t {
        AxisTarget::LearningRate0 => 0,
        AxisTarget::LearningRate1 => 1,
        AxisTarget::SharedLearningRate => 2,
        AxisTarget::InitMean => 3,
    }
}

fn target_from_code(c: u8) -> Result<AxisTarget> {
    Ok(match c {
        0 => AxisTarget::LearningRate0,
        1 => AxisTarget::LearningRate1,
        2 => AxisTarget::SharedLearningRate,
        3 => AxisTarget::InitMean,
        _ => return Err(Error::Format(format!("unknown axis target code {c}"))),
    })
}

fn scale_code(s: AxisScale) -> u8 {
    match s {
        AxisScale::Log10 => 0,
        AxisScale::Linear => 1,
    }
}

fn scale_from_code(c: u8) -> Result<AxisScale> {
    Ok(match c {
        0 => AxisScale::Log10,
        1 => AxisScale::Linear,
        _ => return Err(Error::Format(format!("unknown axis scale code {c}"))),
    })
}

pub fn field_file_len(width: usize, height: usize) -> usize {
    FIELD_HEADER_LEN + width * height * FIELD_RECORD_LEN
}

pub fn encode_field(field: &Field) -> Vec<u8> {
    let mut buf = Vec::with_capacity(field_file_len(field.width, field.height));
    buf.extend_from_slice(&FIELD_MAGIC);
    buf.extend_from_slice(&FIELD_VERSION.to_le_bytes());
    buf.extend_from_slice(&(field.width as u32).to_le_bytes());
    buf.extend_from_slice(&(field.height as u32).to_le_bytes());
    buf.push(field.condition.id.code());
    buf.extend_from_slice(&field.steps.to_le_bytes());
    buf.extend_from_slice(&field.base_seed.to_le_bytes());
    let vp = &field.viewport;
    for v in [vp.x_axis.lo, vp.x_axis.hi, vp.y_axis.lo, vp.y_axis.hi] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&[
        target_code(vp.x_axis.target),
        scale_code(vp.x_axis.scale),
        target_code(vp.y_axis.target),
        scale_code(vp.y_axis.scale),
    ]);
    for o in &field.outcomes {
        buf.push(match o.class {
            RunClass::Converged => 0,
            RunClass::Diverged => 1,
        });
        buf.extend_from_slice(&o.steps_run.to_le_bytes());
        buf.extend_from_slice(&o.final_loss.to_le_bytes());
        buf.extend_from_slice(&o.accumulator.to_le_bytes());
    }
    buf
}

pub fn write_field<W: Write>(field: &Field, mut sink: W) -> Result<()> {
    sink.write_all(&encode_field(field))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated field file: need {end} bytes, have {}",
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_field(bytes: &[u8]) -> Result<Field> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != FIELD_MAGIC {
        return Err(Error::Format("bad magic, not a field file".into()));
    }
    let version = cur.u32()?;
    if version != FIELD_VERSION {
        return Err(Error::Format(format!("unsupported field version {version}")));
    }
    let width = cur.u32()? as usize;
    let height = cur.u32()? as usize;
    let code = cur.u8()?;
    let id = ConditionId::from_code(code).ok_or_else(|| Error::Format(format!("unknown condition code {code}")))?;
    let steps = cur.u32()?;
    let base_seed = cur.u64()?;
    let (xlo, xhi, ylo, yhi) = (cur.f64()?, cur.f64()?, cur.f64()?, cur.f64()?);
    let codes = cur.take(4)?;
    let viewport = Viewport {
        x_axis: AxisSpec::new(target_from_code(codes[0])?, scale_from_code(codes[1])?, xlo, xhi),
        y_axis: AxisSpec::new(target_from_code(codes[2])?, scale_from_code(codes[3])?, ylo, yhi),
    };

    let expected = field_file_len(width, height);
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "pixel count mismatch: {width}x{height} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let mut outcomes = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        let class = match cur.u8()? {
            0 => RunClass::Converged,
            1 => RunClass::Diverged,
            c => return Err(Error::Format(format!("unknown class code {c}"))),
        };
        let steps_run = cur.u32()?;
        let final_loss = cur.f64()?;
        let accumulator = cur.f64()?;
        outcomes.push(RunOutcome { class, steps_run, accumulator, final_loss });
    }

    let mut condition = preset(id);
    condition.train_defaults.steps = steps;
    condition.x_axis = viewport.x_axis;
    condition.y_axis = viewport.y_axis;
    Ok(Field { width, height, outcomes, condition, viewport, base_seed, steps })
}

pub fn read_field<R: Read>(mut source: R) -> Result<Field> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_field(&bytes)
}

/// 8-bit RGB PNG with fixed encoder settings.
pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_compression(png::Compression::Balanced);
        encoder.set_filter(png::Filter::Adaptive);
        let mut writer = encoder.write_header().map_err(|e| Error::Format(e.to_string()))?;
        writer.write_image_data(&image.pixels).map_err(|e| Error::Format(e.to_string()))?;
        writer.finish().map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(out)
}

pub fn write_png<W: Write>(image: &RgbImage, mut sink: W) -> Result<()> {
    sink.write_all(&encode_png(image)?)?;
    Ok(())
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| Error::Format(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format("png too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format("expected 8-bit RGB png".into()));
    }
    buf.truncate(info.buffer_size());
    Ok(RgbImage { width: info.width as usize, height: info.height as usize, pixels: buf })
}

fn fmt_sig17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

pub fn boxcount_csv(result: &BoxCountResult) -> String {
    let mut s = String::from("box_size,occupied\n");
    for e in &result.entries {
        s.push_str(&format!("{},{}\n", e.box_size, e.occupied));
    }
    s.push_str(&format!("# dimension={}\n", fmt_sig17(result.dimension)));
    s.push_str(&format!("# r2={}\n", fmt_sig17(result.fit_r2)));
    s
}

pub fn write_boxcount_csv<W: Write>(result: &BoxCountResult, mut sink: W) -> Result<()> {
    sink.write_all(boxcount_csv(result).as_bytes())?;
    Ok(())
}

/// Parse a box-count CSV back into entries plus dimension and r².
pub fn parse_boxcount_csv(text: &str) -> Result<(Vec<BoxCount>, f64, f64)> {
    let mut lines = text.lines();
    if lines.next() != Some("box_size,occupied") {
        return Err(Error::Format("missing box-count csv header".into()));
    }
    let bad = |l: &str| Error::Format(format!("bad box-count row `{l}`"));
    let (mut entries, mut dimension, mut r2) = (Vec::new(), f64::NAN, f64::NAN);
    for line in lines {
        if let Some(v) = line.strip_prefix("# dimension=") {
            dimension = v.parse().map_err(|_| bad(line))?;
        } else if let Some(v) = line.strip_prefix("# r2=") {
            r2 = v.parse().map_err(|_| bad(line))?;
        } else {
            let (a, b) = line.split_once(',').ok_or_else(|| bad(line))?;
            entries.push(BoxCount {
                box_size: a.parse().map_err(|_| bad(line))?,
                occupied: b.parse().map_err(|_| bad(line))?,
            });
        }
    }
    Ok((entries, dimension, r2))
}

pub const DEFAULT_EXTENT: usize = 1024;

/// A fully expanded render request, the canonical form of the JSON config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderRequest {
    pub condition: ConditionId,
    pub seed: u64,
    pub steps: u32,
    pub width: usize,
    pub height: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub batch_size: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RangeWire {
    lo: f64,
    hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ViewportWire {
    x: RangeWire,
    y: RangeWire,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OverridesWire {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    steps: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RequestWire {
    condition: String,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    steps: Option<u32>,
    #[serde(default)]
    width: Option<usize>,
    #[serde(default)]
    height: Option<usize>,
    #[serde(default)]
    viewport: Option<ViewportWire>,
    #[serde(default)]
    overrides: Option<OverridesWire>,
}

impl RenderRequest {
    /// Preset defaults at the default extent.
    pub fn for_condition(id: ConditionId) -> Self {
        let c = preset(id);
        Self {
            condition: id,
            seed: 0,
            steps: c.train_defaults.steps,
            width: DEFAULT_EXTENT,
            height: DEFAULT_EXTENT,
            x_range: (c.x_axis.lo, c.x_axis.hi),
            y_range: (c.y_axis.lo, c.y_axis.hi),
            batch_size: c.train_defaults.batch_size,
            threshold: c.train_defaults.divergence_threshold,
        }
    }

    /// Parse a JSON config, filling unspecified fields from the condition preset.
    /// `overrides.steps`, when present, wins over the top-level `steps`.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let wire: RequestWire = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Schema { path, message: e.into_inner().to_string() }
        })?;
        let condition: ConditionId = wire.condition.parse().map_err(|_| Error::Schema {
            path: "condition".into(),
            message: format!("unknown condition `{}`", wire.condition),
        })?;
        let mut r = Self::for_condition(condition);
        if let Some(seed) = wire.seed {
            r.seed = seed;
        }
        if let Some(steps) = wire.steps {
            r.steps = steps;
        }
        if let Some(w) = wire.width {
            r.width = w;
        }
        if let Some(h) = wire.height {
            r.height = h;
        }
        if let Some(vp) = wire.viewport {
            r.x_range = (vp.x.lo, vp.x.hi);
            r.y_range = (vp.y.lo, vp.y.hi);
        }
        if let Some(o) = wire.overrides {
            if let Some(b) = o.batch_size {
                r.batch_size = b;
            }
            if let Some(s) = o.steps {
                r.steps = s;
            }
            if let Some(t) = o.threshold {
                r.threshold = t;
            }
        }
        Ok(r)
    }

    /// Canonical JSON: fully expanded, keys sorted, no insignificant whitespace.
    pub fn to_json(&self) -> String {
        let wire = RequestWire {
            condition: self.condition.slug().to_string(),
            seed: Some(self.seed),
            steps: Some(self.steps),
            width: Some(self.width),
            height: Some(self.height),
            viewport: Some(ViewportWire {
                x: RangeWire { lo: self.x_range.0, hi: self.x_range.1 },
                y: RangeWire { lo: self.y_range.0, hi: self.y_range.1 },
            }),
            overrides: Some(OverridesWire {
                batch_size: Some(self.batch_size),
                steps: None,
                threshold: Some(self.threshold),
            }),
        };
        // Value maps are ordered, which sorts keys at every level.
        let value = serde_json::to_value(&wire).expect("request serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn viewport(&self) -> Viewport {
        Viewport::with_ranges(&preset(self.condition), self.x_range, self.y_range)
    }

    pub fn condition_config(&self) -> ConditionConfig {
        let mut c = preset(self.condition);
        c.train_defaults.steps = self.steps;
        c.train_defaults.batch_size = self.batch_size;
        c.train_defaults.divergence_threshold = self.threshold;
        let vp = self.viewport();
        c.x_axis = vp.x_axis;
        c.y_axis = vp.y_axis;
        c
    }

    /// Semantic checks beyond the schema: ranges, sizes, batch size.
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("width and height must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be positive".into()));
        }
        self.viewport().validate()?;
        let c = self.condition_config();
        c.model.validate()?;
        c.train_defaults.validate(c.model.dataset_size)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}
