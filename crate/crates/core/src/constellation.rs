//! Constellation geometry, sub-constellation partition and shaping.
//!
//! Bit conventions used throughout the crate:
//!
//! * bit vectors map to integers MSB-first;
//! * point `t` carries the natural label `bits(t)`, read as `[b_P | b_I]`
//!   with the `m − k` parity bits in the high positions;
//! * sub-constellation `j = t >> k` holds points `j·2^k .. (j+1)·2^k`, and the
//!   within-sub-constellation index `t mod 2^k` selects the shaping
//!   probability.

use std::io::Write;

use num_complex::Complex64;
use thiserror::Error;

use crate::grad::{GradError, Graph, NodeId};

#[derive(Debug, Error)]
pub enum ConstellationError {
    #[error("k = {k} out of range for m = {m} (need 1 ≤ k ≤ m)")]
    BitSplit { m: usize, k: usize },
    #[error("expected {expected} entries, got {got}")]
    Length { expected: usize, got: usize },
    #[error("invalid shaping distribution: {0}")]
    Shaping(String),
    #[error("sub-constellation {0} has zero power under the shaping distribution")]
    Degenerate(usize),
    #[error("QAM needs an even number of bits per symbol, got {0}")]
    OddQam(usize),
    #[error(transparent)]
    Graph(#[from] GradError),
}

pub(crate) fn check_split(m: usize, k: usize) -> Result<(), ConstellationError> {
    if k == 0 || k > m || m > 16 {
        return Err(ConstellationError::BitSplit { m, k });
    }
    Ok(())
}

/// Integer value of an MSB-first bit vector.
pub fn bits_to_index(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | (b & 1) as usize)
}

/// MSB-first `width`-bit representation of `value`.
pub fn index_to_bits(value: usize, width: usize) -> Vec<u8> {
    (0..width).map(|i| ((value >> (width - 1 - i)) & 1) as u8).collect()
}

/// Bit `i` (0 = MSB) of the `m`-bit label of point `t`.
#[inline]
pub fn label_bit(t: usize, i: usize, m: usize) -> u8 {
    ((t >> (m - 1 - i)) & 1) as u8
}

/// Probabilities over the 2^k shaped bit vectors `b_I`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapingDistribution {
    probs: Vec<f64>,
}

impl ShapingDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, ConstellationError> {
        if probs.is_empty() || !probs.len().is_power_of_two() {
            return Err(ConstellationError::Shaping(format!("length {} is not a power of two", probs.len())));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(ConstellationError::Shaping("negative or non-finite entry".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(ConstellationError::Shaping(format!("sums to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Rescales non-negative weights to sum to one.
    pub fn from_weights(weights: &[f64]) -> Result<Self, ConstellationError> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            return Err(ConstellationError::Shaping("weights sum to zero".into()));
        }
        let mut probs: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        // absorb the rounding residue so the 1e-12 check holds for long vectors
        let residue = 1.0 - probs.iter().sum::<f64>();
        if let Some(max) = probs.iter_mut().max_by(|a, b| a.total_cmp(b)) {
            *max += residue;
        }
        Self::new(probs)
    }

    pub fn uniform(k: usize) -> Self {
        let n = 1usize << k;
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Number of shaped bits.
    pub fn bits(&self) -> usize {
        self.probs.len().trailing_zeros() as usize
    }

    /// Shannon entropy in bits; `0·log 0 = 0`.
    pub fn entropy_bits(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.log2()).sum::<f64>()
    }

    /// Inverse-CDF sample from a uniform draw `u ∈ [0, 1)`.
    pub fn sample_index(&self, u: f64) -> usize {
        let mut acc = 0.0;
        let mut last_nonzero = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                last_nonzero = i;
                acc += p;
                if u < acc {
                    return i;
                }
            }
        }
        last_nonzero
    }
}

/// Joint probability of each of the 2^m constellation points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointDistribution {
    probs: Vec<f64>,
}

impl PointDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn uniform(m: usize) -> Self {
        let n = 1usize << m;
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }
}

/// `p(t) = p_θ(t mod 2^k) · 2^−(m−k)`: shaped bits follow `p_θ`, parity bits
/// are uniform and independent.
pub fn point_probabilities(shaping: &ShapingDistribution, m: usize, k: usize) -> Result<PointDistribution, ConstellationError> {
    check_split(m, k)?;
    if shaping.len() != 1 << k {
        return Err(ConstellationError::Length {
            expected: 1 << k,
            got: shaping.len(),
        });
    }
    let parity = (-((m - k) as f64)).exp2();
    let mask = (1 << k) - 1;
    let probs = (0..1usize << m).map(|t| shaping.probs[t & mask] * parity).collect();
    Ok(PointDistribution { probs })
}

/// `H(X) = H(p_θ) + (m − k)` bits.
pub fn source_entropy(shaping: &ShapingDistribution, m: usize, k: usize) -> f64 {
    shaping.entropy_bits() + (m - k) as f64
}

/// Labeled, normalized constellation with its shaping distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapedConstellation {
    m: usize,
    k: usize,
    points: Vec<Complex64>,
    shaping: ShapingDistribution,
}

impl ShapedConstellation {
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn point(&self, t: usize) -> Complex64 {
        self.points[t]
    }

    pub fn shaping(&self) -> &ShapingDistribution {
        &self.shaping
    }

    pub fn point_distribution(&self) -> PointDistribution {
        point_probabilities(&self.shaping, self.m, self.k).expect("validated at construction")
    }

    pub fn source_entropy(&self) -> f64 {
        source_entropy(&self.shaping, self.m, self.k)
    }

    /// `p_θ`-weighted power of every sub-constellation.
    pub fn sub_constellation_powers(&self) -> Vec<f64> {
        let size = 1 << self.k;
        self.points
            .chunks(size)
            .map(|sub| sub.iter().zip(&self.shaping.probs).map(|(x, p)| p * x.norm_sqr()).sum())
            .collect()
    }

    /// Writes `index,label,re,im,probability`, one row per point.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "index,label,re,im,probability")?;
        let pd = self.point_distribution();
        for (t, x) in self.points.iter().enumerate() {
            let label: String = index_to_bits(t, self.m).iter().map(|b| char::from(b'0' + b)).collect();
            writeln!(w, "{t},{label},{:?},{:?},{:?}", x.re, x.im, pd.probs[t])?;
        }
        Ok(())
    }
}

/// Divides every sub-constellation by the square root of its
/// `p_θ`-weighted power.
///
/// `k = m` is accepted and means a single sub-constellation.
pub fn normalize(raw: &[Complex64], shaping: &ShapingDistribution, m: usize, k: usize) -> Result<ShapedConstellation, ConstellationError> {
    check_split(m, k)?;
    if raw.len() != 1 << m {
        return Err(ConstellationError::Length {
            expected: 1 << m,
            got: raw.len(),
        });
    }
    if shaping.len() != 1 << k {
        return Err(ConstellationError::Length {
            expected: 1 << k,
            got: shaping.len(),
        });
    }
    let size = 1 << k;
    let mut points = Vec::with_capacity(raw.len());
    for (j, sub) in raw.chunks(size).enumerate() {
        let power: f64 = sub.iter().zip(&shaping.probs).map(|(x, p)| p * x.norm_sqr()).sum();
        if !(power > 0.0) || !power.is_finite() {
            return Err(ConstellationError::Degenerate(j));
        }
        let scale = power.sqrt();
        points.extend(sub.iter().map(|x| x / scale));
    }
    Ok(ShapedConstellation {
        m,
        k,
        points,
        shaping: shaping.clone(),
    })
}

/// Graph form of [`normalize`] over a batch.
///
/// `re`, `im` are `B×2^m` point coordinates and `probs` is `B×2^k`; returns
/// the normalized `(re, im)`.
pub fn normalize_graph(g: &mut Graph, re: NodeId, im: NodeId, probs: NodeId, m: usize, k: usize) -> Result<(NodeId, NodeId), ConstellationError> {
    check_split(m, k)?;
    let (rows, cols) = g.shape(re);
    if cols != 1 << m {
        return Err(ConstellationError::Length { expected: 1 << m, got: cols });
    }
    if g.shape(probs) != (rows, 1 << k) {
        return Err(GradError::ShapeMismatch {
            op: "normalize",
            lhs: g.shape(re),
            rhs: g.shape(probs),
        }
        .into());
    }
    let re2 = g.square(re);
    let im2 = g.square(im);
    let mag = g.add(re2, im2)?;
    let weights = g.tile_cols(probs, 1 << (m - k));
    let weighted = g.mul(mag, weights)?;
    let power = g.segment_sum(weighted, 1 << k)?;
    if let Some((idx, _)) = g.value(power).iter().enumerate().find(|(_, p)| !(**p > 0.0) || !p.is_finite()) {
        return Err(ConstellationError::Degenerate(idx % (1 << (m - k))));
    }
    let scale = g.sqrt(power);
    let scale = g.repeat_cols(scale, 1 << k);
    let re_n = g.div(re, scale)?;
    let im_n = g.div(im, scale)?;
    Ok((re_n, im_n))
}

/// Graph form of [`source_entropy`]: `B×1` column of `H(p_θ) + (m − k)` bits
/// from rows of probabilities and their logs.
pub fn source_entropy_graph(g: &mut Graph, probs: NodeId, log_probs: NodeId, m: usize, k: usize) -> Result<NodeId, GradError> {
    let plogp = g.mul(probs, log_probs)?;
    let s = g.row_sum(plogp);
    let h = g.scale(s, -std::f64::consts::LOG2_E);
    Ok(g.offset(h, (m - k) as f64))
}

/// Symbol for shaped bits `b_I` and parity bits `b_P`:
/// `points[int(b_P)·2^k + int(b_I)]`.
pub fn map_bits(b_info: &[u8], b_parity: &[u8], c: &ShapedConstellation) -> Result<Complex64, ConstellationError> {
    if b_info.len() != c.k {
        return Err(ConstellationError::Length {
            expected: c.k,
            got: b_info.len(),
        });
    }
    if b_parity.len() != c.m - c.k {
        return Err(ConstellationError::Length {
            expected: c.m - c.k,
            got: b_parity.len(),
        });
    }
    let t = (bits_to_index(b_parity) << c.k) | bits_to_index(b_info);
    Ok(c.points[t])
}

fn gray_inverse(mut g: usize) -> usize {
    let mut b = 0;
    while g != 0 {
        b ^= g;
        g >>= 1;
    }
    b
}

/// Unit-power square 2^m-QAM indexed by label.
///
/// The label of point `t` is `[s_re, s_im, a_re, a_im]`: one sign bit per
/// axis followed by `m/2 − 1` amplitude bits per axis. Each axis is
/// binary-reflected Gray coded, so neighbours differ in one bit, and the
/// amplitude bits of a point do not depend on its quadrant. With `k = m − 2`
/// the sub-constellations are the four quadrants.
pub fn qam_constellation(m: usize) -> Result<Vec<Complex64>, ConstellationError> {
    if m == 0 || m % 2 != 0 || m > 16 {
        return Err(ConstellationError::OddQam(m));
    }
    let half = m / 2;
    let levels = 1usize << half;
    let amp_bits = half - 1;
    let scale = (2.0 * ((levels * levels) as f64 - 1.0) / 3.0).sqrt();
    let axis = |sign: usize, amp: usize| {
        let gray = (sign << amp_bits) | amp;
        let pos = gray_inverse(gray);
        (2.0 * pos as f64 - (levels as f64 - 1.0)) / scale
    };
    Ok((0..1usize << m)
        .map(|t| {
            let s_re = label_bit(t, 0, m) as usize;
            let s_im = label_bit(t, 1, m) as usize;
            let rest = t & ((1 << (m - 2)) - 1);
            let a_re = rest >> amp_bits;
            let a_im = rest & ((1 << amp_bits) - 1);
            Complex64::new(axis(s_re, a_re), axis(s_im, a_im))
        })
        .collect())
}
