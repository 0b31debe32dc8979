//! IEEE 802.11n quasi-cyclic LDPC codes (n = 1944): systematic encoding,
//! flooding sum-product decoding, and codeword-to-symbol bit placement.
//!
//! LLRs at the public interface are `ln p(1)/p(0)`.

use thiserror::Error;

const RATE_2_3: &str = include_str!("../data/ieee80211n_n1944_r23.txt");
const RATE_1_2: &str = include_str!("../data/ieee80211n_n1944_r12.txt");

/// Lifting size of the n = 1944 codes.
pub const LIFTING: usize = 81;
/// Magnitude limit applied to every LLR inside the decoder.
pub const LLR_CLAMP: f64 = 30.0;
pub const DEFAULT_MAX_ITERATIONS: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum FecError {
    #[error("base matrix line {line}: {msg}")]
    BaseMatrix { line: usize, msg: String },
    #[error("expected {expected} bits, got {actual}")]
    Length { expected: usize, actual: usize },
    #[error("{0}")]
    Divisibility(String),
    #[error("parity part of the base matrix is not dual-diagonal: {0}")]
    Structure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodeRate {
    OneHalf,
    TwoThirds,
}

impl CodeRate {
    pub fn value(self) -> f64 {
        match self {
            CodeRate::OneHalf => 0.5,
            CodeRate::TwoThirds => 2.0 / 3.0,
        }
    }
}

/// Parses the base-matrix text format: `#` comments, then one row per line
/// of whitespace-separated entries, `-1` or a shift in `0..z`.
pub fn parse_base_matrix(text: &str, z: usize) -> Result<Vec<Vec<i32>>, FecError> {
    let mut rows: Vec<Vec<i32>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| FecError::BaseMatrix { line: i + 1, msg };
        let row = line
            .split_whitespace()
            .map(|t| {
                let v: i32 = t.parse().map_err(|_| err(format!("bad entry `{t}`")))?;
                if v < -1 || v >= z as i32 {
                    return Err(err(format!("shift {v} outside -1..{z}")));
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(err(format!("{} columns, expected {}", row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(FecError::BaseMatrix { line: 0, msg: "no rows".into() });
    }
    Ok(rows)
}

/// A quasi-cyclic LDPC code with dual-diagonal parity structure.
#[derive(Debug, Clone)]
pub struct LdpcCode {
    base: Vec<Vec<i32>>,
    z: usize,
    /// Variable indices of each check.
    checks: Vec<Vec<usize>>,
    /// Edge indices (into the flattened check lists) of each variable.
    var_edges: Vec<Vec<usize>>,
    edge_var: Vec<usize>,
    check_start: Vec<usize>,
}

impl LdpcCode {
    pub fn ieee80211n(rate: CodeRate) -> Self {
        let text = match rate {
            CodeRate::OneHalf => RATE_1_2,
            CodeRate::TwoThirds => RATE_2_3,
        };
        let base = parse_base_matrix(text, LIFTING).expect("embedded base matrix parses");
        Self::from_base(base, LIFTING).expect("embedded base matrix is dual-diagonal")
    }

    pub fn from_base(base: Vec<Vec<i32>>, z: usize) -> Result<Self, FecError> {
        let mb = base.len();
        let nb = base[0].len();
        if mb >= nb {
            return Err(FecError::Structure("more block rows than columns".into()));
        }
        check_dual_diagonal(&base)?;
        let mut checks = vec![Vec::new(); mb * z];
        for (bi, row) in base.iter().enumerate() {
            for (bj, &s) in row.iter().enumerate() {
                if s < 0 {
                    continue;
                }
                for r in 0..z {
                    checks[bi * z + r].push(bj * z + (r + s as usize) % z);
                }
            }
        }
        let n = nb * z;
        let mut var_edges = vec![Vec::new(); n];
        let mut edge_var = Vec::new();
        let mut check_start = Vec::with_capacity(checks.len() + 1);
        for c in &checks {
            check_start.push(edge_var.len());
            for &v in c {
                var_edges[v].push(edge_var.len());
                edge_var.push(v);
            }
        }
        check_start.push(edge_var.len());
        Ok(Self {
            base,
            z,
            checks,
            var_edges,
            edge_var,
            check_start,
        })
    }

    pub fn n(&self) -> usize {
        self.base[0].len() * self.z
    }

    pub fn info_len(&self) -> usize {
        self.n() - self.parity_len()
    }

    pub fn parity_len(&self) -> usize {
        self.base.len() * self.z
    }

    pub fn rate(&self) -> f64 {
        self.info_len() as f64 / self.n() as f64
    }

    pub fn lifting(&self) -> usize {
        self.z
    }

    pub fn base_matrix(&self) -> &[Vec<i32>] {
        &self.base
    }

    /// Variable indices taking part in each parity check (rows of H).
    pub fn checks(&self) -> &[Vec<usize>] {
        &self.checks
    }

    /// `H·cᵀ` over GF(2).
    pub fn syndrome(&self, c: &[u8]) -> Vec<u8> {
        self.checks.iter().map(|vs| vs.iter().fold(0u8, |a, &v| a ^ (c[v] & 1))).collect()
    }

    pub fn is_codeword(&self, c: &[u8]) -> bool {
        c.len() == self.n() && self.checks.iter().all(|vs| vs.iter().fold(0u8, |a, &v| a ^ c[v]) == 0)
    }

    /// Systematic encoding `[info | parity]` by block back-substitution.
    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>, FecError> {
        if info.len() != self.info_len() {
            return Err(FecError::Length {
                expected: self.info_len(),
                actual: info.len(),
            });
        }
        let z = self.z;
        let mb = self.base.len();
        let kb = self.base[0].len() - mb;
        // add P_s·u (block of length z) into acc
        let shift_add = |acc: &mut [u8], s: i32, u: &[u8]| {
            if s >= 0 {
                for r in 0..z {
                    acc[r] ^= u[(r + s as usize) % z];
                }
            }
        };
        let lambda: Vec<Vec<u8>> = self
            .base
            .iter()
            .map(|row| {
                let mut acc = vec![0u8; z];
                for j in 0..kb {
                    shift_add(&mut acc, row[j], &info[j * z..(j + 1) * z]);
                }
                acc
            })
            .collect();
        let mut parity = vec![vec![0u8; z]; mb];
        // first parity column sums to the identity over all block rows
        for l in &lambda {
            for r in 0..z {
                parity[0][r] ^= l[r];
            }
        }
        for i in 0..mb - 1 {
            let mut acc = lambda[i].clone();
            for j in 0..=i {
                shift_add(&mut acc, self.base[i][kb + j], &parity[j]);
            }
            parity[i + 1] = acc;
        }
        let mut c = info.to_vec();
        for p in parity {
            c.extend(p);
        }
        Ok(c)
    }

    /// Flooding sum-product decoding of `ln p(1)/p(0)` LLRs.
    pub fn decode(&self, llrs: &[f64], max_iterations: usize) -> Result<DecodeResult, FecError> {
        let n = self.n();
        if llrs.len() != n {
            return Err(FecError::Length {
                expected: n,
                actual: llrs.len(),
            });
        }
        // internal convention: L = ln p(0)/p(1)
        let channel: Vec<f64> = llrs.iter().map(|l| (-l).clamp(-LLR_CLAMP, LLR_CLAMP)).collect();
        let mut bits: Vec<u8> = channel.iter().map(|&l| u8::from(l < 0.0)).collect();
        if self.is_codeword(&bits) {
            return Ok(DecodeResult {
                bits,
                converged: true,
                iterations: 0,
            });
        }
        let edges = self.edge_var.len();
        let mut c2v = vec![0.0f64; edges];
        let mut v2c = vec![0.0f64; edges];
        let mut tanhs = Vec::new();
        let mut total = channel.clone();
        for it in 1..=max_iterations {
            for v in 0..n {
                for &e in &self.var_edges[v] {
                    v2c[e] = (total[v] - c2v[e]).clamp(-LLR_CLAMP, LLR_CLAMP);
                }
            }
            for c in 0..self.checks.len() {
                let (s, e) = (self.check_start[c], self.check_start[c + 1]);
                tanhs.clear();
                tanhs.extend(v2c[s..e].iter().map(|l| (0.5 * l).tanh()));
                check_update(&tanhs, &mut c2v[s..e]);
            }
            for v in 0..n {
                total[v] = channel[v] + self.var_edges[v].iter().map(|&e| c2v[e]).sum::<f64>();
                bits[v] = u8::from(total[v] < 0.0);
            }
            if self.is_codeword(&bits) {
                return Ok(DecodeResult {
                    bits,
                    converged: true,
                    iterations: it,
                });
            }
        }
        Ok(DecodeResult {
            bits,
            converged: false,
            iterations: max_iterations,
        })
    }
}

/// Extrinsic `2·atanh(Π_{j≠i} t_j)` via prefix and suffix products.
fn check_update(tanhs: &[f64], out: &mut [f64]) {
    let d = tanhs.len();
    let limit = (0.5 * LLR_CLAMP).tanh();
    let mut prefix = 1.0;
    for i in 0..d {
        out[i] = prefix;
        prefix *= tanhs[i];
    }
    let mut suffix = 1.0;
    for i in (0..d).rev() {
        let p = (out[i] * suffix).clamp(-limit, limit);
        out[i] = 2.0 * p.atanh();
        suffix *= tanhs[i];
    }
}

fn check_dual_diagonal(base: &[Vec<i32>]) -> Result<(), FecError> {
    let mb = base.len();
    let kb = base[0].len() - mb;
    let first: Vec<i32> = base.iter().map(|r| r[kb]).filter(|&s| s >= 0).collect();
    if first.len() != 3 || first[0] != first[2] || base[0][kb] < 0 || base[mb - 1][kb] < 0 {
        return Err(FecError::Structure("first parity column must hold shifts (a, b, a)".into()));
    }
    if first[1] != 0 {
        return Err(FecError::Structure("middle shift of the first parity column must be 0".into()));
    }
    for (i, row) in base.iter().enumerate() {
        for j in 1..mb {
            let expect = j == i || j == i + 1;
            let s = row[kb + j];
            if expect != (s >= 0) || (expect && s != 0) {
                return Err(FecError::Structure(format!("row {i}, parity column {j}")));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub bits: Vec<u8>,
    pub converged: bool,
    pub iterations: usize,
}

/// Per-symbol `(b_I, b_P)` bit vectors.
pub type SymbolBits = (Vec<u8>, Vec<u8>);

/// Splits `c_I` into `k`-bit and `c_P` into `(m−k)`-bit chunks, one pair per
/// symbol.
pub fn bit_placement(c_info: &[u8], c_parity: &[u8], m: usize, k: usize) -> Result<Vec<SymbolBits>, FecError> {
    let n = c_info.len() + c_parity.len();
    let q = check_placement(n, c_info.len(), m, k)?;
    Ok((0..q)
        .map(|i| {
            (
                c_info[i * k..(i + 1) * k].to_vec(),
                c_parity[i * (m - k)..(i + 1) * (m - k)].to_vec(),
            )
        })
        .collect())
}

/// Inverse of [`bit_placement`]: reassembles `[c_I | c_P]`.
pub fn bit_placement_inverse(symbols: &[SymbolBits]) -> Vec<u8> {
    let mut info: Vec<u8> = symbols.iter().flat_map(|(i, _)| i.iter().copied()).collect();
    info.extend(symbols.iter().flat_map(|(_, p)| p.iter().copied()));
    info
}

/// Number of symbols per codeword, after checking divisibility.
pub fn check_placement(n: usize, info_len: usize, m: usize, k: usize) -> Result<usize, FecError> {
    if m == 0 || k > m || n % m != 0 {
        return Err(FecError::Divisibility(format!("n = {n} is not divisible by m = {m}")));
    }
    let q = n / m;
    if info_len != q * k {
        return Err(FecError::Divisibility(format!("{info_len} info bits do not fill {q} symbols of k = {k} bits")));
    }
    Ok(q)
}
