//! Bitwise soft demappers.
//!
//! LLR convention everywhere: `llr = ln p(b=1|y) − ln p(b=0|y)`.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constellation::{label_bit, PointDistribution, ShapedConstellation};
use crate::grad::{BoundParams, CustomOp, GradError, Graph, Matrix, NodeId, ParamVector};
use crate::nn::{dense, dense_plain, init_dense, Activation};

/// Floor on log-posteriors inside the training loss (`ln 1e-30`).
pub const LOG_POSTERIOR_FLOOR: f64 = -69.07755278982137;

#[derive(Debug, Error)]
pub enum DemapperError {
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
    #[error("demapper parameters do not match the architecture")]
    ParamShape,
    #[error(transparent)]
    Graph(#[from] GradError),
}

/// Per-bit posteriors of one received symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct BitPosteriors {
    /// `(p(b_i=0|y), p(b_i=1|y))` for each of the m label bits, MSB first.
    pub probs: Vec<(f64, f64)>,
    pub llrs: Vec<f64>,
}

impl BitPosteriors {
    pub fn from_llrs(llrs: Vec<f64>) -> Self {
        let probs = llrs.iter().map(|&l| (logistic(-l), logistic(l))).collect();
        Self { probs, llrs }
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without overflow.
pub fn log_logistic(x: f64) -> f64 {
    -(x.max(0.0) - x + (-x.abs()).exp().ln_1p())
}

/// Scratch state for the exact demapper over `2^m` points.
pub struct ExactDemapper<'a> {
    points: &'a [Complex64],
    log_prior: Vec<f64>,
    m: usize,
    n0: f64,
    scratch: Vec<f64>,
}

impl<'a> ExactDemapper<'a> {
    pub fn new(points: &'a [Complex64], prior: &[f64], n0: f64) -> Self {
        let m = points.len().trailing_zeros() as usize;
        assert_eq!(points.len(), 1 << m, "constellation size must be a power of two");
        assert_eq!(prior.len(), points.len());
        Self {
            points,
            log_prior: prior.iter().map(|p| p.ln()).collect(),
            m,
            n0,
            scratch: vec![0.0; points.len()],
        }
    }

    /// Unnormalized point log-posteriors shifted so the maximum is zero;
    /// returns their log-sum-exp.
    fn fill(&mut self, y: Complex64) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for (s, (x, lp)) in self.points.iter().zip(&self.log_prior).enumerate() {
            let a = lp - (y - x).norm_sqr() / self.n0;
            self.scratch[s] = a;
            if a > max {
                max = a;
            }
        }
        let mut z = 0.0;
        for a in &mut self.scratch {
            *a = (*a - max).exp();
            z += *a;
        }
        z.ln()
    }

    /// Point posteriors `p(t|y)`.
    pub fn point_posteriors(&mut self, y: Complex64) -> Vec<f64> {
        let lz = self.fill(y);
        let z = lz.exp();
        self.scratch.iter().map(|e| e / z).collect()
    }

    /// Per-bit `(ln p(b_i=0|y), ln p(b_i=1|y))` into `out` (length m).
    pub fn log_posteriors(&mut self, y: Complex64, out: &mut [(f64, f64)]) {
        debug_assert_eq!(out.len(), self.m);
        self.fill(y);
        // collapse index pairs level by level, LSB first
        let mut width = self.scratch.len();
        for i in (0..self.m).rev() {
            let (mut s0, mut s1) = (0.0, 0.0);
            for j in 0..width / 2 {
                let (a, b) = (self.scratch[2 * j], self.scratch[2 * j + 1]);
                s0 += a;
                s1 += b;
                self.scratch[j] = a + b;
            }
            let lz = (s0 + s1).ln();
            out[i] = (s0.ln() - lz, s1.ln() - lz);
            width /= 2;
        }
    }

    pub fn demap(&mut self, y: Complex64) -> BitPosteriors {
        let mut lp = vec![(0.0, 0.0); self.m];
        self.log_posteriors(y, &mut lp);
        BitPosteriors {
            probs: lp.iter().map(|(a, b)| (a.exp(), b.exp())).collect(),
            llrs: lp.iter().map(|(a, b)| b - a).collect(),
        }
    }
}

/// Exact prior-aware AWGN posteriors for one received symbol.
pub fn exact_awgn_demap(y: Complex64, c: &ShapedConstellation, pd: &PointDistribution, n0: f64) -> BitPosteriors {
    ExactDemapper::new(c.points(), pd.probs(), n0).demap(y)
}

/// Fused per-example bit log-likelihood for the exact AWGN demapper.
///
/// Inputs (all `B×2^m`): point real parts, imaginary parts, point weights
/// `w`, and log prior `ln w`. Output (`B×1`): for each batch row `l`,
/// `Σ_t w_t Σ_i log2 p(b_i = label_i(t) | x_t + n_{l,t})`, where the
/// posterior uses the same weights as prior and each log-posterior is
/// floored at [`LOG_POSTERIOR_FLOOR`].
pub struct ExactBitLikelihood {
    pub noise_re: Matrix,
    pub noise_im: Matrix,
    pub n0: Vec<f64>,
    pub m: usize,
}

struct RowCache {
    /// `e_s = exp(a_s − max)`
    e: Vec<f64>,
    tree: Vec<f64>,
    z: f64,
    sums: Vec<[f64; 2]>,
}

impl ExactBitLikelihood {
    fn row_terms(&self, l: usize, t: usize, re: &Matrix, im: &Matrix, logw: &Matrix, cache: &mut RowCache) -> f64 {
        let m = self.m;
        let re_row = re.row(l);
        let im_row = im.row(l);
        let lw_row = logw.row(l);
        let (re_row, im_row, lw_row) = (
            re_row.as_slice().expect("standard layout"),
            im_row.as_slice().expect("standard layout"),
            lw_row.as_slice().expect("standard layout"),
        );
        let y_re = re_row[t] + self.noise_re[[l, t]];
        let y_im = im_row[t] + self.noise_im[[l, t]];
        let inv_n0 = 1.0 / self.n0[l];
        let mut max = f64::NEG_INFINITY;
        for (((a, &xr), &xi), &lw) in cache.e.iter_mut().zip(re_row).zip(im_row).zip(lw_row) {
            let dr = y_re - xr;
            let di = y_im - xi;
            *a = lw - (dr * dr + di * di) * inv_n0;
            max = max.max(*a);
        }
        let mut z = 0.0;
        for v in cache.e.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        cache.z = z;
        let lz = z.ln();
        // per-bit marginals, LSB first, collapsing index pairs each level
        cache.tree.copy_from_slice(&cache.e);
        let mut width = cache.tree.len();
        for i in (0..m).rev() {
            let (mut s0, mut s1) = (0.0, 0.0);
            for j in 0..width / 2 {
                let (a, b) = (cache.tree[2 * j], cache.tree[2 * j + 1]);
                s0 += a;
                s1 += b;
                cache.tree[j] = a + b;
            }
            cache.sums[i] = [s0, s1];
            width /= 2;
        }
        let mut total = 0.0;
        for i in 0..m {
            let b = label_bit(t, i, m) as usize;
            total += (cache.sums[i][b].ln() - lz).max(LOG_POSTERIOR_FLOOR);
        }
        total
    }

    fn check(&self, inputs: &[&Matrix]) -> Result<(usize, usize), GradError> {
        if inputs.len() != 4 {
            return Err(GradError::Invalid {
                op: "exact bit likelihood",
                msg: format!("expected 4 inputs, got {}", inputs.len()),
            });
        }
        let shape = inputs[0].dim();
        for inp in &inputs[1..] {
            if inp.dim() != shape {
                return Err(GradError::ShapeMismatch {
                    op: "exact bit likelihood",
                    lhs: shape,
                    rhs: inp.dim(),
                });
            }
        }
        if self.noise_re.dim() != shape || self.noise_im.dim() != shape {
            return Err(GradError::ShapeMismatch {
                op: "exact bit likelihood",
                lhs: shape,
                rhs: self.noise_re.dim(),
            });
        }
        if shape.1 != 1 << self.m || self.n0.len() != shape.0 {
            return Err(GradError::Invalid {
                op: "exact bit likelihood",
                msg: format!("shape {shape:?} inconsistent with m={} and {} noise levels", self.m, self.n0.len()),
            });
        }
        Ok(shape)
    }

    fn cache(&self) -> RowCache {
        RowCache {
            e: vec![0.0; 1 << self.m],
            tree: vec![0.0; 1 << self.m],
            z: 0.0,
            sums: vec![[0.0; 2]; self.m],
        }
    }
}

impl CustomOp for ExactBitLikelihood {
    fn name(&self) -> &'static str {
        "exact bit likelihood"
    }

    fn forward(&self, inputs: &[&Matrix]) -> Result<Matrix, GradError> {
        let (rows, n) = self.check(inputs)?;
        let (re, im, w, logw) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        let mut out = Matrix::zeros((rows, 1));
        let mut cache = self.cache();
        for l in 0..rows {
            let mut acc = 0.0;
            for t in 0..n {
                acc += w[[l, t]] * self.row_terms(l, t, re, im, logw, &mut cache);
            }
            out[[l, 0]] = acc * std::f64::consts::LOG2_E;
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Matrix], _output: &Matrix, upstream: &Matrix) -> Vec<Matrix> {
        let (rows, n) = inputs[0].dim();
        let m = self.m;
        let (re, im, w, logw) = (inputs[0], inputs[1], inputs[2], inputs[3]);
        let mut d_re = Matrix::zeros((rows, n));
        let mut d_im = Matrix::zeros((rows, n));
        let mut d_w = Matrix::zeros((rows, n));
        let mut d_logw = Matrix::zeros((rows, n));
        let mut cache = self.cache();
        let mut coef = vec![0.0; n];
        let mut sel = vec![0.0; n];
        for l in 0..rows {
            let g = upstream[[l, 0]] * std::f64::consts::LOG2_E;
            if g == 0.0 {
                continue;
            }
            let inv_n0 = 1.0 / self.n0[l];
            for t in 0..n {
                let terms = self.row_terms(l, t, re, im, logw, &mut cache);
                d_w[[l, t]] += g * terms;
                let c = g * w[[l, t]];
                if c == 0.0 {
                    continue;
                }
                // d(Σ_i ℓ_i)/d a_s = Σ_i [bit_i(s)=bit_i(t)] e_s/S_i − (#active) e_s/Z
                let mut active = 0usize;
                let mut inv_sel = [0.0f64; 16];
                for i in 0..m {
                    let b = label_bit(t, i, m) as usize;
                    let s = cache.sums[i][b];
                    if s.ln() - cache.z.ln() >= LOG_POSTERIOR_FLOOR {
                        active += 1;
                        inv_sel[i] = 1.0 / s;
                    } else {
                        inv_sel[i] = 0.0;
                    }
                }
                let inv_z = active as f64 / cache.z;
                // sel[s] = Σ_i inv_sel[i]·[bit_i(s) = bit_i(t)], built MSB first
                sel[0] = 0.0;
                for i in 0..m {
                    let width = 1usize << i;
                    let tb = label_bit(t, i, m) as usize;
                    for p in (0..width).rev() {
                        let base = sel[p];
                        sel[2 * p] = base + if tb == 0 { inv_sel[i] } else { 0.0 };
                        sel[2 * p + 1] = base + if tb == 1 { inv_sel[i] } else { 0.0 };
                    }
                }
                for s in 0..n {
                    coef[s] = c * cache.e[s] * (sel[s] - inv_z);
                }
                let y_re = re[[l, t]] + self.noise_re[[l, t]];
                let y_im = im[[l, t]] + self.noise_im[[l, t]];
                let (mut ty_re, mut ty_im) = (0.0, 0.0);
                for s in 0..n {
                    let gs = coef[s];
                    d_logw[[l, s]] += gs;
                    // a_s = ln w_s − |y − x_s|²/N0, y = x_t + n
                    let fr = 2.0 * (y_re - re[[l, s]]) * inv_n0 * gs;
                    let fi = 2.0 * (y_im - im[[l, s]]) * inv_n0 * gs;
                    d_re[[l, s]] += fr;
                    d_im[[l, s]] += fi;
                    ty_re -= fr;
                    ty_im -= fi;
                }
                d_re[[l, t]] += ty_re;
                d_im[[l, t]] += ty_im;
            }
        }
        vec![d_re, d_im, d_w, d_logw]
    }
}

/// Architecture of the neural demapper: inputs `[Re ŷ, Im ŷ, Re ĥ, Im ĥ,
/// snr_db/20]`, hidden dense layers, linear output of `m` LLRs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnDemapper {
    pub m: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

pub const DEMAPPER_INPUTS: usize = 5;

impl NnDemapper {
    /// Three 128-unit tanh layers.
    pub fn standard(m: usize) -> Self {
        Self {
            m,
            hidden: vec![128, 128, 128],
            activation: Activation::Tanh,
        }
    }

    fn layer_name(i: usize) -> String {
        format!("demapper.{i}")
    }

    pub fn init_params<R: Rng>(&self, rng: &mut R) -> ParamVector {
        let mut p = ParamVector::new();
        let mut fan_in = DEMAPPER_INPUTS;
        for (i, &h) in self.hidden.iter().enumerate() {
            init_dense(&mut p, &Self::layer_name(i), fan_in, h, 1.0, rng);
            fan_in = h;
        }
        init_dense(&mut p, &Self::layer_name(self.hidden.len()), fan_in, self.m, 1.0, rng);
        p
    }

    /// All-zero parameters of the right shape.
    pub fn zero_params(&self) -> ParamVector {
        let mut p = ParamVector::new();
        let mut fan_in = DEMAPPER_INPUTS;
        for (i, &h) in self.hidden.iter().chain(std::iter::once(&self.m)).enumerate() {
            p.push(&format!("{}.w", Self::layer_name(i)), fan_in, h, vec![0.0; fan_in * h]);
            p.push(&format!("{}.b", Self::layer_name(i)), 1, h, vec![0.0; h]);
            fan_in = h;
        }
        p
    }

    pub fn matches(&self, params: &ParamVector) -> bool {
        params.same_layout(&self.zero_params())
    }

    /// `R×5` features → `R×m` LLRs on the graph.
    pub fn llrs_graph(&self, g: &mut Graph, bound: &BoundParams, features: NodeId) -> Result<NodeId, GradError> {
        let mut h = features;
        for i in 0..self.hidden.len() {
            h = dense(g, bound, &Self::layer_name(i), h, self.activation)?;
        }
        dense(g, bound, &Self::layer_name(self.hidden.len()), h, Activation::Linear)
    }

    /// `R×5` features → `R×m` LLRs.
    pub fn llrs(&self, params: &ParamVector, features: &Matrix) -> Result<Matrix, DemapperError> {
        if !self.matches(params) {
            return Err(DemapperError::ParamShape);
        }
        let mut h = features.clone();
        for i in 0..self.hidden.len() {
            h = dense_plain(params, &Self::layer_name(i), &h, self.activation)?;
        }
        Ok(dense_plain(params, &Self::layer_name(self.hidden.len()), &h, Activation::Linear)?)
    }
}

pub fn demapper_features(y_eq: Complex64, h_hat: Complex64, snr_db: f64) -> [f64; DEMAPPER_INPUTS] {
    [y_eq.re, y_eq.im, h_hat.re, h_hat.im, snr_db / 20.0]
}

/// Neural demapper posteriors for one equalized symbol.
pub fn nn_demap(y_eq: Complex64, h_hat: Complex64, snr_db: f64, demapper: &NnDemapper, params: &ParamVector) -> Result<BitPosteriors, DemapperError> {
    let f = demapper_features(y_eq, h_hat, snr_db);
    let x = Array2::from_shape_vec((1, DEMAPPER_INPUTS), f.to_vec()).expect("feature row");
    let llr = demapper.llrs(params, &x)?;
    Ok(BitPosteriors::from_llrs(llr.row(0).to_vec()))
}

/// Symbol-major LLRs (`q` symbols × `m` bits, label order `[b_P | b_I]`) to
/// codeword order `[c_I | c_P]`.
pub fn llr_reorder(symbol_major: &[f64], m: usize, k: usize, q: usize) -> Result<Vec<f64>, DemapperError> {
    if symbol_major.len() != m * q {
        return Err(DemapperError::Length {
            expected: m * q,
            got: symbol_major.len(),
        });
    }
    let p = m - k;
    let mut out = vec![0.0; m * q];
    for (i, sym) in symbol_major.chunks(m).enumerate() {
        out[i * k..(i + 1) * k].copy_from_slice(&sym[p..]);
        out[q * k + i * p..q * k + (i + 1) * p].copy_from_slice(&sym[..p]);
    }
    Ok(out)
}

/// Inverse of [`llr_reorder`].
pub fn llr_reorder_inverse(codeword_order: &[f64], m: usize, k: usize, q: usize) -> Result<Vec<f64>, DemapperError> {
    if codeword_order.len() != m * q {
        return Err(DemapperError::Length {
            expected: m * q,
            got: codeword_order.len(),
        });
    }
    let p = m - k;
    let mut out = vec![0.0; m * q];
    for (i, sym) in out.chunks_mut(m).enumerate() {
        sym[p..].copy_from_slice(&codeword_order[i * k..(i + 1) * k]);
        sym[..p].copy_from_slice(&codeword_order[q * k + i * p..q * k + (i + 1) * p]);
    }
    Ok(out)
}
