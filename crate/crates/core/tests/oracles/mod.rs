//! Independent numerical oracles used by the integration and acceptance
//! tests. Nothing here calls into the library's estimators.
#![allow(dead_code)]

use num_complex::Complex64;

/// `H(X) − Σ_i H(B_i | Y)` for a labeled constellation with point
/// probabilities `probs` on complex AWGN with spectral density `n0`, by a
/// Riemann sum over a uniform y-grid (spacing σ/8, ±8σ margin).
pub fn bmi_quadrature(points: &[Complex64], probs: &[f64], n0: f64, m: usize) -> f64 {
    let n = points.len();
    assert_eq!(n, 1 << m);
    let sigma = (n0 / 2.0).sqrt();
    let h = sigma / 8.0;
    let span = |f: fn(&Complex64) -> f64| {
        let lo = points.iter().map(f).fold(f64::INFINITY, f64::min) - 8.0 * sigma;
        let hi = points.iter().map(f).fold(f64::NEG_INFINITY, f64::max) + 8.0 * sigma;
        (lo, ((hi - lo) / h).ceil() as usize + 1)
    };
    let (re0, nre) = span(|z| z.re);
    let (im0, nim) = span(|z| z.im);
    let norm = 1.0 / (std::f64::consts::PI * n0);
    let entropy: f64 = probs.iter().filter(|&&p| p > 0.0).map(|p| -p * p.log2()).sum();
    let mut cond = 0.0;
    let mut joint = vec![0.0; n];
    for a in 0..nre {
        for b in 0..nim {
            let y = Complex64::new(re0 + a as f64 * h, im0 + b as f64 * h);
            let mut total = 0.0;
            for t in 0..n {
                joint[t] = probs[t] * norm * (-(y - points[t]).norm_sqr() / n0).exp();
                total += joint[t];
            }
            if total < 1e-300 {
                continue;
            }
            for i in 0..m {
                let mut s = [0.0; 2];
                for (t, j) in joint.iter().enumerate() {
                    s[(t >> (m - 1 - i)) & 1] += j;
                }
                for v in s {
                    if v > 0.0 {
                        cond -= v * (v / total).log2();
                    }
                }
            }
        }
    }
    entropy - cond * h * h
}

/// Mutual information (bits) of a binary input at real positions
/// `{0, d}` with prior `(p, 1−p)` in real Gaussian noise of std `sigma`.
pub fn binary_mi(d: f64, p: f64, sigma: f64) -> f64 {
    let h = sigma / 20.0;
    let lo = -10.0 * sigma;
    let steps = ((d + 20.0 * sigma) / h).ceil() as usize;
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let prior = [p, 1.0 - p];
    let entropy: f64 = prior.iter().filter(|&&q| q > 0.0).map(|q| -q * q.log2()).sum();
    let mut cond = 0.0;
    for s in 0..=steps {
        let y = lo + s as f64 * h;
        let l = [
            prior[0] * norm * (-(y * y) / (2.0 * sigma * sigma)).exp(),
            prior[1] * norm * (-((y - d) * (y - d)) / (2.0 * sigma * sigma)).exp(),
        ];
        let tot = l[0] + l[1];
        for v in l {
            if v > 0.0 {
                cond -= v * (v / tot).log2();
            }
        }
    }
    entropy - cond * h
}

/// Best BMI over 4-point schemes built from independent 2-point
/// per-axis geometries: the shaped bit on the real axis with prior
/// `(p, 1−p)`, the uniform bit on the imaginary axis, searched over the
/// power split, the shaped prior, and the real-axis mean offset.
pub fn best_two_point_scheme(snr_db: f64) -> f64 {
    let n0 = 10f64.powf(-snr_db / 10.0);
    let sigma = (n0 / 2.0).sqrt();
    let mut best = 0.0f64;
    for ai in 1..100 {
        let alpha = ai as f64 / 100.0;
        let imag = binary_mi(2.0 * alpha.sqrt(), 0.5, sigma);
        for pi in 1..20 {
            let p = pi as f64 / 20.0;
            for mi in 0..4 {
                let mu = mi as f64 * 0.1;
                let spread = 1.0 - alpha - mu * mu;
                if spread <= 0.0 {
                    continue;
                }
                let d = (spread / (p * (1.0 - p))).sqrt();
                best = best.max(binary_mi(d, p, sigma) + imag);
            }
        }
    }
    best
}
