//! Trainable transmitters: joint probabilistic/geometric shaping (PS-GS),
//! SNR-controlled Maxwell–Boltzmann QAM (MB-QAM), geometric shaping only
//! (GS), and the fixed uniform QAM baseline.
//!
//! All networks take `snr_db / 20` as their single input and share a trunk of
//! two 64-unit tanh layers.

use std::io::{BufRead, Write};

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::{normalize, normalize_graph, qam_constellation, ConstellationError, ShapedConstellation, ShapingDistribution};
use crate::demappers::NnDemapper;
use crate::grad::{BoundParams, GradError, Graph, Matrix, NodeId, ParamFormatError, ParamVector};
use crate::nn::{dense, init_dense, Activation};

pub const TRUNK_UNITS: usize = 64;

/// Input feature scaling for the SNR.
pub fn snr_feature(snr_db: f64) -> f64 {
    snr_db / 20.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Psgs,
    Mbqam,
    Gs,
    UniformQam,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Psgs => "psgs",
            ModelKind::Mbqam => "mbqam",
            ModelKind::Gs => "gs",
            ModelKind::UniformQam => "uniform-qam",
        })
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{kind} does not support m = {m}, k = {k}")]
    Unsupported { kind: ModelKind, m: usize, k: usize },
    #[error("parameters do not match the {0} architecture")]
    ParamShape(ModelKind),
    #[error("μ must be non-negative, got {0}")]
    NegativeMu(f64),
    #[error(transparent)]
    Constellation(#[from] ConstellationError),
    #[error(transparent)]
    Graph(#[from] GradError),
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Params(#[from] ParamFormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Transmitter description; `k` is the code-rate numerator (`r = k/m`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransmitterModel {
    pub kind: ModelKind,
    pub m: usize,
    pub k: usize,
}

/// Graph outputs of a transmitter forward pass over a batch of SNRs.
#[derive(Debug, Clone, Copy)]
pub struct TxNodes {
    /// `B×2^m` normalized point coordinates.
    pub re: NodeId,
    pub im: NodeId,
    /// `B×2^ks` shaping distribution and its log.
    pub probs: NodeId,
    pub log_probs: NodeId,
    /// Shaped bits of the partition (`2^(m−ks)` sub-constellations).
    pub shaped_bits: usize,
}

impl TransmitterModel {
    pub fn new(kind: ModelKind, m: usize, k: usize) -> Result<Self, ModelError> {
        let ok = match kind {
            ModelKind::Psgs => m >= 2 && k >= 1 && k < m,
            ModelKind::Mbqam => m >= 4 && m % 2 == 0 && k == m - 2,
            ModelKind::Gs => m >= 1 && k >= 1 && k <= m,
            ModelKind::UniformQam => m >= 4 && m % 2 == 0 && k >= 1 && k < m,
        };
        if !ok || m > 16 {
            return Err(ModelError::Unsupported { kind, m, k });
        }
        Ok(Self { kind, m, k })
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.m as f64
    }

    /// Shaped bits per sub-constellation of the mapper partition.
    pub fn shaped_bits(&self) -> usize {
        match self.kind {
            ModelKind::Psgs => self.k,
            ModelKind::Mbqam | ModelKind::UniformQam => self.m - 2,
            ModelKind::Gs => self.m,
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.kind != ModelKind::UniformQam
    }

    fn qam_or_random<R: Rng>(&self, rng: &mut R) -> Vec<Complex64> {
        match qam_constellation(self.m) {
            Ok(q) => q,
            Err(_) => (0..1 << self.m)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        }
    }

    /// Random initialization. The constellation head starts at Gray QAM
    /// (random points for odd m) plus a small SNR-dependent perturbation.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> ParamVector {
        let mut p = ParamVector::new();
        if self.kind == ModelKind::UniformQam {
            return p;
        }
        init_dense(&mut p, "trunk.0", 1, TRUNK_UNITS, 1.0, rng);
        init_dense(&mut p, "trunk.1", TRUNK_UNITS, TRUNK_UNITS, 1.0, rng);
        match self.kind {
            ModelKind::Psgs => {
                init_dense(&mut p, "head.probs", TRUNK_UNITS, 1 << self.k, 1.0, rng);
                self.init_points_head(&mut p, rng);
            }
            ModelKind::Gs => self.init_points_head(&mut p, rng),
            ModelKind::Mbqam => init_dense(&mut p, "head.mu", TRUNK_UNITS, 1, 1.0, rng),
            ModelKind::UniformQam => unreachable!(),
        }
        p
    }

    fn init_points_head<R: Rng>(&self, p: &mut ParamVector, rng: &mut R) {
        let n = 1 << self.m;
        init_dense(p, "head.points", TRUNK_UNITS, 2 * n, 0.01, rng);
        let start = self.qam_or_random(rng);
        let mut bias = p.view_mut("head.points.b").expect("just pushed");
        for (t, x) in start.iter().enumerate() {
            bias[[0, t]] = x.re;
            bias[[0, n + t]] = x.im;
        }
    }

    /// Parameters of the right shape, all zero.
    pub fn zero_params(&self) -> ParamVector {
        let mut p = self.init_params(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0));
        p.values_mut().iter_mut().for_each(|v| *v = 0.0);
        p
    }

    pub fn check_params(&self, params: &ParamVector) -> Result<(), ModelError> {
        if !params.same_layout(&self.zero_params()) {
            return Err(ModelError::ParamShape(self.kind));
        }
        Ok(())
    }

    /// Batched forward pass; one row per entry of `snr_db`.
    pub fn forward_graph(&self, g: &mut Graph, bound: &BoundParams, snr_db: &[f64]) -> Result<TxNodes, ModelError> {
        let b = snr_db.len();
        let n = 1usize << self.m;
        let ks = self.shaped_bits();
        let uniform = |g: &mut Graph| {
            let size = 1usize << ks;
            let p = g.constant(Matrix::from_elem((b, size), 1.0 / size as f64));
            let lp = g.constant(Matrix::from_elem((b, size), -(size as f64).ln()));
            (p, lp)
        };
        if self.kind == ModelKind::UniformQam {
            let q = qam_constellation(self.m)?;
            let re = g.constant(Matrix::from_shape_fn((b, n), |(_, t)| q[t].re));
            let im = g.constant(Matrix::from_shape_fn((b, n), |(_, t)| q[t].im));
            let (probs, log_probs) = uniform(g);
            return Ok(TxNodes {
                re,
                im,
                probs,
                log_probs,
                shaped_bits: ks,
            });
        }

        let input = g.constant(Matrix::from_shape_fn((b, 1), |(i, _)| snr_feature(snr_db[i])));
        let h = dense(g, bound, "trunk.0", input, Activation::Tanh)?;
        let h = dense(g, bound, "trunk.1", h, Activation::Tanh)?;

        let (raw_re, raw_im, probs, log_probs) = match self.kind {
            ModelKind::Psgs | ModelKind::Gs => {
                let pts = dense(g, bound, "head.points", h, Activation::Linear)?;
                let re = g.slice_cols(pts, 0, n)?;
                let im = g.slice_cols(pts, n, 2 * n)?;
                let (p, lp) = if self.kind == ModelKind::Psgs {
                    let logits = dense(g, bound, "head.probs", h, Activation::Linear)?;
                    (g.softmax(logits), g.log_softmax(logits))
                } else {
                    uniform(g)
                };
                (re, im, p, lp)
            }
            ModelKind::Mbqam => {
                let pre = dense(g, bound, "head.mu", h, Activation::Linear)?;
                let mu = g.softplus(pre);
                let q = qam_constellation(self.m)?;
                let size = 1usize << ks;
                let neg_energy = g.constant(Array2::from_shape_fn((1, size), |(_, l)| -q[l].norm_sqr()));
                let logits = g.matmul(mu, neg_energy)?;
                let p = g.softmax(logits);
                let lp = g.log_softmax(logits);
                let re = g.constant(Matrix::from_shape_fn((b, n), |(_, t)| q[t].re));
                let im = g.constant(Matrix::from_shape_fn((b, n), |(_, t)| q[t].im));
                (re, im, p, lp)
            }
            ModelKind::UniformQam => unreachable!(),
        };
        let (re, im) = normalize_graph(g, raw_re, raw_im, probs, self.m, ks)?;
        Ok(TxNodes {
            re,
            im,
            probs,
            log_probs,
            shaped_bits: ks,
        })
    }

    /// Shaping distribution and normalized constellation at one SNR.
    pub fn forward(&self, params: &ParamVector, snr_db: f64) -> Result<(ShapingDistribution, ShapedConstellation), ModelError> {
        self.check_params(params)?;
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let nodes = self.forward_graph(&mut g, &bound, &[snr_db])?;
        let shaping = ShapingDistribution::from_weights(&g.value(nodes.probs).row(0).to_vec())?;
        let n = 1 << self.m;
        let raw: Vec<Complex64> = (0..n).map(|t| Complex64::new(g.value(nodes.re)[[0, t]], g.value(nodes.im)[[0, t]])).collect();
        let c = normalize(&raw, &shaping, self.m, nodes.shaped_bits)?;
        Ok((shaping, c))
    }

    /// μ of the MB-QAM network at one SNR.
    pub fn mb_mu(&self, params: &ParamVector, snr_db: f64) -> Result<f64, ModelError> {
        if self.kind != ModelKind::Mbqam {
            return Err(ModelError::Unsupported {
                kind: self.kind,
                m: self.m,
                k: self.k,
            });
        }
        self.check_params(params)?;
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let input = g.constant(Matrix::from_elem((1, 1), snr_feature(snr_db)));
        let h = dense(&mut g, &bound, "trunk.0", input, Activation::Tanh)?;
        let h = dense(&mut g, &bound, "trunk.1", h, Activation::Tanh)?;
        let pre = dense(&mut g, &bound, "head.mu", h, Activation::Linear)?;
        let mu = g.softplus(pre);
        Ok(g.scalar(mu))
    }
}

/// Maxwell–Boltzmann probabilities `p(x) ∝ exp(−μ|x|²)` over one quadrant.
pub fn mb_distribution(mu: f64, quadrant: &[Complex64]) -> Result<ShapingDistribution, ModelError> {
    if !(mu >= 0.0) {
        return Err(ModelError::NegativeMu(mu));
    }
    let e: Vec<f64> = quadrant.iter().map(|x| -mu * x.norm_sqr()).collect();
    let max = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = e.iter().map(|v| (v - max).exp()).collect();
    Ok(ShapingDistribution::from_weights(&w)?)
}

/// A transmitter with its parameters and, optionally, a trained neural
/// demapper.
///
/// File layout: a `shaping-model v1` line, a `meta <json>` line, then the
/// transmitter parameters and, when `meta.demapper` is set, the demapper
/// parameters, each in the [`ParamVector`] text format.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub transmitter: TransmitterModel,
    pub params: ParamVector,
    pub demapper: Option<(NnDemapper, ParamVector)>,
}

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    kind: ModelKind,
    m: usize,
    k: usize,
    trunk_units: usize,
    demapper: Option<NnDemapper>,
}

impl TrainedModel {
    pub fn write_to(&self, mut w: impl Write) -> Result<(), ModelError> {
        let meta = ModelMeta {
            kind: self.transmitter.kind,
            m: self.transmitter.m,
            k: self.transmitter.k,
            trunk_units: TRUNK_UNITS,
            demapper: self.demapper.as_ref().map(|(d, _)| d.clone()),
        };
        writeln!(w, "shaping-model v1")?;
        writeln!(w, "meta {}", serde_json::to_string(&meta).map_err(|e| ModelError::Format(e.to_string()))?)?;
        self.params.write_to(&mut w)?;
        if let Some((_, p)) = &self.demapper {
            p.write_to(&mut w)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl BufRead) -> Result<Self, ModelError> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != "shaping-model v1" {
            return Err(ModelError::Format(format!("bad header `{}`", line.trim_end())));
        }
        line.clear();
        r.read_line(&mut line)?;
        let json = line
            .trim_end()
            .strip_prefix("meta ")
            .ok_or_else(|| ModelError::Format("missing meta line".into()))?;
        let meta: ModelMeta = serde_json::from_str(json).map_err(|e| ModelError::Format(e.to_string()))?;
        if meta.trunk_units != TRUNK_UNITS {
            return Err(ModelError::Format(format!("unsupported trunk width {}", meta.trunk_units)));
        }
        let transmitter = TransmitterModel::new(meta.kind, meta.m, meta.k)?;
        let params = ParamVector::read_from(&mut r)?;
        transmitter.check_params(&params)?;
        let demapper = match meta.demapper {
            Some(d) => {
                let p = ParamVector::read_from(&mut r)?;
                if !d.matches(&p) {
                    return Err(ModelError::Format("demapper parameters do not match architecture".into()));
                }
                Some((d, p))
            }
            None => None,
        };
        Ok(Self {
            transmitter,
            params,
            demapper,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ModelError> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
