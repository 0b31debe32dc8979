//! AWGN and Rayleigh block-fading channels with pilot-based LMMSE estimation.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor added to `|ĥ|²` before equalizing.
pub const EQUALIZER_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Rbf,
}

impl std::fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ChannelKind::Awgn => "awgn",
            ChannelKind::Rbf => "rbf",
        })
    }
}

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("realization is {actual}, expected {expected}")]
    Kind { expected: ChannelKind, actual: ChannelKind },
    #[error("{symbols} symbols but {draws} noise draws")]
    DrawCount { symbols: usize, draws: usize },
}

/// `N0 = 10^(−SNR/10)` for unit signal power.
pub fn snr_to_n0(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Deterministic RNG for stream `stream` of experiment seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One draw of `CN(0, variance)`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// All random channel state for one block of transmitted symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub kind: ChannelKind,
    pub n0: f64,
    /// One `CN(0, n0)` draw per transmitted symbol.
    pub noise: Vec<Complex64>,
    /// Fading coefficient shared by every symbol of the block (RBF only).
    pub fading: Option<Complex64>,
    /// Noise on the unit pilot (RBF only).
    pub pilot_noise: Option<Complex64>,
}

impl ChannelRealization {
    pub fn sample<R: Rng + ?Sized>(kind: ChannelKind, n0: f64, symbols: usize, rng: &mut R) -> Self {
        let (fading, pilot_noise) = match kind {
            ChannelKind::Awgn => (None, None),
            ChannelKind::Rbf => (Some(complex_gaussian(rng, 1.0)), Some(complex_gaussian(rng, n0))),
        };
        let noise = (0..symbols).map(|_| complex_gaussian(rng, n0)).collect();
        Self {
            kind,
            n0,
            noise,
            fading,
            pilot_noise,
        }
    }

    /// Receiver-side view: equalizer gain applied to the transmitted symbol,
    /// the channel estimate, and the equalized noise for symbol `i`.
    ///
    /// The equalized output is `ŷ_i = gain · x_i + noise_i`. For AWGN the
    /// estimate is exactly 1.
    pub fn receiver_view(&self) -> ReceiverView {
        match self.kind {
            ChannelKind::Awgn => ReceiverView {
                gain: Complex64::new(1.0, 0.0),
                estimate: Complex64::new(1.0, 0.0),
                inverse: Complex64::new(1.0, 0.0),
                regularized: false,
            },
            ChannelKind::Rbf => {
                let h = self.fading.expect("rbf realization has a fade");
                let y_pilot = h + self.pilot_noise.expect("rbf realization has pilot noise");
                let h_hat = lmmse_estimate(y_pilot, self.n0);
                let (inverse, regularized) = equalizer_inverse(h_hat);
                ReceiverView {
                    gain: h * inverse,
                    estimate: h_hat,
                    inverse,
                    regularized,
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverView {
    pub gain: Complex64,
    pub estimate: Complex64,
    /// `conj(ĥ)/|ĥ|²` (regularized when `|ĥ|²` is tiny).
    pub inverse: Complex64,
    pub regularized: bool,
}

impl ReceiverView {
    /// Equalized observation of `x` given raw noise draw `n`.
    pub fn observe(&self, x: Complex64, n: Complex64) -> Complex64 {
        self.gain * x + n * self.inverse
    }
}

pub fn awgn_apply(x: &[Complex64], r: &ChannelRealization) -> Result<Vec<Complex64>, ChannelError> {
    if r.kind != ChannelKind::Awgn {
        return Err(ChannelError::Kind {
            expected: ChannelKind::Awgn,
            actual: r.kind,
        });
    }
    if x.len() != r.noise.len() {
        return Err(ChannelError::DrawCount {
            symbols: x.len(),
            draws: r.noise.len(),
        });
    }
    Ok(x.iter().zip(&r.noise).map(|(x, n)| x + n).collect())
}

/// `y_i = h·x_i + n_i` and the pilot observation `h + n_pilot`.
pub fn rbf_apply(x: &[Complex64], r: &ChannelRealization) -> Result<(Vec<Complex64>, Complex64), ChannelError> {
    if r.kind != ChannelKind::Rbf {
        return Err(ChannelError::Kind {
            expected: ChannelKind::Rbf,
            actual: r.kind,
        });
    }
    if x.len() != r.noise.len() {
        return Err(ChannelError::DrawCount {
            symbols: x.len(),
            draws: r.noise.len(),
        });
    }
    let h = r.fading.expect("rbf realization has a fade");
    let y = x.iter().zip(&r.noise).map(|(x, n)| h * x + n).collect();
    Ok((y, h + r.pilot_noise.expect("rbf realization has pilot noise")))
}

/// Scalar LMMSE estimate of `h ~ CN(0, 1)` from a unit pilot.
pub fn lmmse_estimate(y_pilot: Complex64, n0: f64) -> Complex64 {
    y_pilot / (1.0 + n0)
}

fn equalizer_inverse(h_hat: Complex64) -> (Complex64, bool) {
    let e = h_hat.norm_sqr();
    if e < EQUALIZER_FLOOR {
        (h_hat.conj() / (e + EQUALIZER_FLOOR), true)
    } else {
        (h_hat.conj() / e, false)
    }
}

/// `ŷ = y·conj(ĥ)/|ĥ|²`; the flag reports whether the floor was applied.
pub fn equalize(y: Complex64, h_hat: Complex64) -> (Complex64, bool) {
    let (inv, reg) = equalizer_inverse(h_hat);
    (y * inv, reg)
}
