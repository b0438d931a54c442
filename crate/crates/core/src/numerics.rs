//! Portable random numbers and pointwise nonlinearities.
//!
//! Everything here is a pure function of its inputs so that every pixel,
//! worker and platform (including wasm) sees the same bits.

use serde::{Deserialize, Serialize};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_MUL_1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_MUL_2: u64 = 0x94D0_49BB_1331_11EB;

/// 2⁻⁵³, the spacing of the uniform grid produced by [`RngState::next_uniform`].
pub const UNIT_53: f64 = 1.0 / (1u64 << 53) as f64;

/// Fixed stream ids used when instantiating a problem.
pub mod stream {
    pub const INPUT_WEIGHTS: u64 = 0;
    pub const READOUT_WEIGHTS: u64 = 1;
    pub const INPUTS: u64 = 2;
    pub const LABELS: u64 = 3;
    pub const MINIBATCH: u64 = 4;
}

/// The splitmix64 output finalizer.
#[inline]
pub fn splitmix64_mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_MUL_1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_MUL_2);
    z ^ (z >> 31)
}

/// State word of a splitmix64 generator. A plain value: copying it forks the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngState {
    pub state: u64,
}

/// Derive the generator for one named stream of a seeded instance.
pub fn rng_for_stream(base_seed: u64, stream_id: u64) -> RngState {
    RngState {
        state: splitmix64_mix(base_seed ^ stream_id.wrapping_mul(GOLDEN_GAMMA)),
    }
}

impl RngState {
    pub fn new(state: u64) -> Self {
        Self { state }
    }

    /// Advance and return the raw 64-bit output.
    #[inline]
    pub fn next_u64(self) -> (Self, u64) {
        let state = self.state.wrapping_add(GOLDEN_GAMMA);
        (Self { state }, splitmix64_mix(state))
    }

    /// Uniform in `[0, 1)` on the 2⁻⁵³ grid.
    #[inline]
    pub fn next_uniform(self) -> (Self, f64) {
        let (next, bits) = self.next_u64();
        (next, (bits >> 11) as f64 * UNIT_53)
    }

    /// A pair of independent standard normals by Box–Muller.
    pub fn next_normal_pair(self) -> (Self, f64, f64) {
        let (rng, u1) = self.next_uniform();
        let (rng, u2) = rng.next_uniform();
        let (z0, z1) = box_muller(u1, u2);
        (rng, z0, z1)
    }

    /// Uniform integer in `[0, bound)` by rejection on the high bits; `bound` must be nonzero.
    pub fn next_below(self, bound: u64) -> (Self, u64) {
        debug_assert!(bound > 0);
        let zone = u64::MAX - u64::MAX % bound;
        let mut rng = self;
        loop {
            let (next, bits) = rng.next_u64();
            rng = next;
            if bits < zone {
                return (rng, bits % bound);
            }
        }
    }
}

/// Box–Muller transform of two uniforms. A zero `u1` is replaced by 2⁻⁵³.
pub fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    let u1 = if u1 == 0.0 { UNIT_53 } else { u1 };
    let radius = libm::sqrt(-2.0 * libm::log(u1));
    let theta = 2.0 * std::f64::consts::PI * u2;
    (radius * libm::cos(theta), radius * libm::sin(theta))
}

/// Fill `out` with standard normals, consuming draws pairwise in order.
/// For odd lengths the second member of the last pair is discarded.
pub fn fill_normals(mut rng: RngState, out: &mut [f64]) -> RngState {
    let mut chunks = out.chunks_mut(2);
    for chunk in &mut chunks {
        let (next, z0, z1) = rng.next_normal_pair();
        rng = next;
        chunk[0] = z0;
        if let Some(second) = chunk.get_mut(1) {
            *second = z1;
        }
    }
    rng
}

const LN2_HI: f64 = 0.693_147_180_369_123_8;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
const INV_LN2: f64 = std::f64::consts::LOG2_E;
/// Adding and subtracting 1.5·2⁵² rounds to the nearest integer.
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;
/// tanh(x) rounds to ±1 well before this.
const TANH_SATURATION: f64 = 22.0;

/// Hyperbolic tangent from additions, multiplications and one division only.
///
/// Branch-free so loops over it vectorise, and free of fused operations so every
/// target rounds identically. Agrees with a correctly rounded tanh to a few ulp.
#[inline(always)]
pub fn tanh(x: f64) -> f64 {
    let a = x.abs().min(TANH_SATURATION);
    // expm1(2a) = 2^k·(1 + p) − 1 with p = expm1(r), |r| ≤ ln2/2.
    let y = 2.0 * a;
    let shifted = y * INV_LN2 + ROUND_MAGIC;
    let k = shifted - ROUND_MAGIC;
    let r = (y - k * LN2_HI) - k * LN2_LO;
    let p = expm1_reduced(r);
    let ki = (shifted.to_bits() as i64).wrapping_sub(ROUND_MAGIC.to_bits() as i64);
    let scale = f64::from_bits(((ki + 1023) as u64) << 52);
    let em = if ki == 0 { p } else { scale * (1.0 + p) - 1.0 };
    let t = em / (em + 2.0);
    let t = if x.is_nan() { x } else { t };
    t.copysign(x)
}

/// Taylor series of expm1 to degree 13 on the reduced range, in Horner form.
/// The truncation error stays below 1e-17 relative.
#[inline(always)]
fn expm1_reduced(r: f64) -> f64 {
    const C: [f64; 12] = [
        1.0 / 2.0,
        1.0 / 6.0,
        1.0 / 24.0,
        1.0 / 120.0,
        1.0 / 720.0,
        1.0 / 5040.0,
        1.0 / 40320.0,
        1.0 / 362880.0,
        1.0 / 3628800.0,
        1.0 / 39916800.0,
        1.0 / 479001600.0,
        1.0 / 6227020800.0,
    ];
    let mut q = C[11];
    for &c in C[..11].iter().rev() {
        q = q * r + c;
    }
    r + r * r * q
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Tanh,
    Relu,
    Identity,
}

impl Nonlinearity {
    #[inline]
    pub fn activate(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => tanh(x),
            Nonlinearity::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Nonlinearity::Identity => x,
        }
    }

    /// Derivative of [`activate`](Self::activate). Relu uses 0 at the kink.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => {
                let t = tanh(x);
                1.0 - t * t
            }
            Nonlinearity::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Identity => 1.0,
        }
    }
}

pub fn activate(kind: Nonlinearity, x: f64) -> f64 {
    kind.activate(x)
}

pub fn activate_deriv(kind: Nonlinearity, x: f64) -> f64 {
    kind.derivative(x)
}
