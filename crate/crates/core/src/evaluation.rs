//! Monte Carlo BMI, spectral efficiency and the capacity reference.

use std::f64::consts::LOG2_E;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::channels::{snr_to_n0, stream_rng, ChannelKind, ChannelRealization};
use crate::constellation::{label_bit, ShapedConstellation};
use crate::demappers::{
    demapper_features, log_logistic, DemapperError, ExactDemapper, NnDemapper, DEMAPPER_INPUTS, LOG_POSTERIOR_FLOOR,
};
use crate::grad::ParamVector;
use crate::models::{ModelError, TrainedModel};

const CHUNK: usize = 4096;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("the exact demapper needs an AWGN channel")]
    ExactOnFading,
    #[error("at least one sample is required")]
    NoSamples,
    #[error(transparent)]
    Demapper(#[from] DemapperError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy)]
pub enum SymbolDemapper<'a> {
    Exact,
    Neural { demapper: &'a NnDemapper, params: &'a ParamVector },
}

impl<'a> SymbolDemapper<'a> {
    /// The model's own neural demapper, or the exact one if it has none.
    pub fn for_model(model: &'a TrainedModel) -> Self {
        match &model.demapper {
            Some((d, p)) => SymbolDemapper::Neural { demapper: d, params: p },
            None => SymbolDemapper::Exact,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BmiPoint {
    pub snr_db: f64,
    /// `[H(X) − Σ_i CE_i]^+` in bits per symbol.
    pub bmi: f64,
    pub stderr: f64,
    pub entropy: f64,
    /// Sum of the per-bit cross-entropies.
    pub cross_entropy: f64,
    pub samples: usize,
}

/// Estimates the BMI of `c` at one SNR from `samples` transmitted symbols.
///
/// Information bits are drawn from the shaping distribution and the
/// remaining bits uniformly, so symbols follow the point distribution.
pub fn estimate_bmi(
    c: &ShapedConstellation,
    demapper: SymbolDemapper<'_>,
    channel: ChannelKind,
    snr_db: f64,
    samples: usize,
    seed: u64,
) -> Result<BmiPoint, EvalError> {
    if samples == 0 {
        return Err(EvalError::NoSamples);
    }
    if matches!(demapper, SymbolDemapper::Exact) && channel != ChannelKind::Awgn {
        return Err(EvalError::ExactOnFading);
    }
    let chunks = samples.div_ceil(CHUNK);
    let partial: Vec<Result<(f64, f64), EvalError>> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let len = CHUNK.min(samples - ci * CHUNK);
            chunk_cross_entropy(c, demapper, channel, snr_db, len, seed, ci as u64)
        })
        .collect();
    let (mut s, mut s2) = (0.0, 0.0);
    for p in partial {
        let (a, b) = p?;
        s += a;
        s2 += b;
    }
    let n = samples as f64;
    let mean = s / n;
    let var = if samples > 1 { ((s2 - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    let entropy = c.source_entropy();
    Ok(BmiPoint {
        snr_db,
        bmi: (entropy - mean).max(0.0),
        stderr: (var / n).sqrt(),
        entropy,
        cross_entropy: mean,
        samples,
    })
}

/// Sum and sum of squares of `−Σ_i log2 p(b_i|y)` over one chunk.
fn chunk_cross_entropy(
    c: &ShapedConstellation,
    demapper: SymbolDemapper<'_>,
    channel: ChannelKind,
    snr_db: f64,
    len: usize,
    seed: u64,
    stream: u64,
) -> Result<(f64, f64), EvalError> {
    let m = c.m();
    let parity_bits = m - c.k();
    let n0 = snr_to_n0(snr_db);
    let mut rng = stream_rng(seed, stream);
    let mut labels = Vec::with_capacity(len);
    let mut observed = Vec::with_capacity(len);
    let mut estimates = Vec::with_capacity(len);
    for _ in 0..len {
        let info = c.shaping().sample_index(rng.random::<f64>());
        let parity = rng.random_range(0..1usize << parity_bits);
        let t = (parity << c.k()) | info;
        let r = ChannelRealization::sample(channel, n0, 1, &mut rng);
        let view = r.receiver_view();
        labels.push(t);
        observed.push(view.observe(c.point(t), r.noise[0]));
        estimates.push(view.estimate);
    }

    let mut per_symbol = Vec::with_capacity(len);
    match demapper {
        SymbolDemapper::Exact => {
            let prior = c.point_distribution();
            let mut exact = ExactDemapper::new(c.points(), prior.probs(), n0);
            let mut lp = vec![(0.0, 0.0); m];
            for (&t, &y) in labels.iter().zip(&observed) {
                exact.log_posteriors(y, &mut lp);
                let nats: f64 = (0..m)
                    .map(|i| {
                        let (l0, l1) = lp[i];
                        let v = if label_bit(t, i, m) == 0 { l0 } else { l1 };
                        v.max(LOG_POSTERIOR_FLOOR)
                    })
                    .sum();
                per_symbol.push(-nats * LOG2_E);
            }
        }
        SymbolDemapper::Neural { demapper, params } => {
            let features = Array2::from_shape_fn((len, DEMAPPER_INPUTS), |(r, j)| {
                demapper_features(observed[r], estimates[r], snr_db)[j]
            });
            let llrs = demapper.llrs(params, &features)?;
            for (r, &t) in labels.iter().enumerate() {
                let nats: f64 = (0..m)
                    .map(|i| {
                        let l = llrs[[r, i]];
                        log_logistic(if label_bit(t, i, m) == 1 { l } else { -l })
                    })
                    .sum();
                per_symbol.push(-nats * LOG2_E);
            }
        }
    }
    let s: f64 = per_symbol.iter().sum();
    let s2: f64 = per_symbol.iter().map(|v| v * v).sum();
    Ok((s, s2))
}

/// BMI of a trained model over `snrs`, regenerating its constellation at
/// each SNR. Point `i` uses RNG stream family `seed + i`.
pub fn model_bmi_curve(
    model: &TrainedModel,
    channel: ChannelKind,
    snrs: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<BmiPoint>, EvalError> {
    let demapper = SymbolDemapper::for_model(model);
    snrs.iter()
        .enumerate()
        .map(|(i, &snr)| {
            let (_, c) = model.transmitter.forward(&model.params, snr)?;
            estimate_bmi(&c, demapper, channel, snr, samples, seed.wrapping_add(i as u64))
        })
        .collect()
}

/// `H(X) − m(1 − r)` for code rate `r`.
pub fn spectral_efficiency(entropy: f64, m: usize, rate: f64) -> f64 {
    entropy - m as f64 * (1.0 - rate)
}

/// `log2(1 + SNR)`.
pub fn capacity(snr_db: f64) -> f64 {
    (1.0 + 10f64.powf(snr_db / 10.0)).log2()
}

/// Equalized observation for a symbol, exposed for BER chains.
pub fn transmit(x: Complex64, r: &ChannelRealization, i: usize) -> (Complex64, Complex64) {
    let view = r.receiver_view();
    (view.observe(x, r.noise[i]), view.estimate)
}
