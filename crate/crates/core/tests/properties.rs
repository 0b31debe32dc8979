use num_complex::Complex64;
use proptest::prelude::*;
use shaping_core::constellation::{
    label_bit, map_bits, normalize, point_probabilities, source_entropy, index_to_bits, ShapingDistribution,
};
use shaping_core::demappers::{llr_reorder, llr_reorder_inverse, ExactDemapper};
use shaping_core::grad::{check_gradients, Graph, Matrix, NodeId, ParamVector};

fn params_of(values: &[f64], rows: usize, cols: usize) -> ParamVector {
    let mut p = ParamVector::new();
    p.push("x", rows, cols, values.to_vec());
    p
}

fn weights(rows: usize, cols: usize) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |(i, j)| 0.3 + 0.7 * ((i * cols + j) as f64).sin())
}

/// Reduces an op output with fixed non-uniform weights so every output
/// entry contributes to the checked gradient.
fn reduce(g: &mut Graph, y: NodeId) -> NodeId {
    let (r, c) = g.shape(y);
    g.weighted_sum(y, weights(r, c)).unwrap()
}

fn unary_error(values: &[f64], op: fn(&mut Graph, NodeId) -> NodeId) -> f64 {
    let p = params_of(values, 2, 3);
    check_gradients(
        |g, b| {
            let x = b.get("x")?;
            let y = op(g, x);
            Ok(reduce(g, y))
        },
        &p,
        1e-6,
    )
    .unwrap()
}

fn entries(lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, 6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn elementwise_ops_match_finite_differences(v in entries(-2.0, 2.0), pos in entries(0.2, 3.0)) {
        let ops: [(&str, fn(&mut Graph, NodeId) -> NodeId, bool); 10] = [
            ("neg", |g, x| g.neg(x), false),
            ("exp", |g, x| g.exp(x), false),
            ("square", |g, x| g.square(x), false),
            ("tanh", |g, x| g.tanh(x), false),
            ("softplus", |g, x| g.softplus(x), false),
            ("scale", |g, x| g.scale(x, -1.7), false),
            ("softmax", |g, x| g.softmax(x), false),
            ("log_softmax", |g, x| g.log_softmax(x), false),
            ("ln", |g, x| g.ln(x), true),
            ("sqrt", |g, x| g.sqrt(x), true),
        ];
        for (name, op, positive) in ops {
            let input = if positive { &pos } else { &v };
            let err = unary_error(input, op);
            prop_assert!(err < 1e-5, "{} error {}", name, err);
        }
    }

    #[test]
    fn binary_ops_match_finite_differences(a in entries(-2.0, 2.0), b in entries(0.3, 2.0)) {
        let mut p = ParamVector::new();
        p.push("a", 2, 3, a.clone());
        p.push("b", 2, 3, b.clone());
        p.push("w", 3, 2, a.iter().rev().copied().collect());
        p.push("bias", 1, 2, vec![0.1, -0.4]);
        type Build = fn(&mut Graph, NodeId, NodeId, NodeId, NodeId) -> NodeId;
        let ops: [(&str, Build); 6] = [
            ("add", |g, a, b, _, _| g.add(a, b).unwrap()),
            ("sub", |g, a, b, _, _| g.sub(a, b).unwrap()),
            ("mul", |g, a, b, _, _| g.mul(a, b).unwrap()),
            ("div", |g, a, b, _, _| g.div(a, b).unwrap()),
            ("matmul", |g, a, _, w, _| g.matmul(a, w).unwrap()),
            ("bias_add", |g, a, _, w, bias| { let y = g.matmul(a, w).unwrap(); g.bias_add(y, bias).unwrap() }),
        ];
        for (name, op) in ops {
            let err = check_gradients(
                |g, bd| {
                    let y = op(g, bd.get("a")?, bd.get("b")?, bd.get("w")?, bd.get("bias")?);
                    Ok(reduce(g, y))
                },
                &p,
                1e-6,
            )
            .unwrap();
            prop_assert!(err < 1e-5, "{} error {}", name, err);
        }
    }

    #[test]
    fn structural_ops_match_finite_differences(v in entries(-2.0, 2.0)) {
        let p = params_of(&v, 2, 3);
        let ops: [(&str, fn(&mut Graph, NodeId) -> NodeId); 7] = [
            ("row_sum", |g, x| g.row_sum(x)),
            ("slice", |g, x| g.slice_cols(x, 1, 3).unwrap()),
            ("concat", |g, x| { let s = g.square(x); g.concat_cols(&[x, s]).unwrap() }),
            ("reshape", |g, x| g.reshape(x, (3, 2)).unwrap()),
            ("repeat", |g, x| g.repeat_cols(x, 2)),
            ("tile", |g, x| g.tile_cols(x, 3)),
            ("broadcast", |g, x| { let s = g.sum(x); g.broadcast(s, (2, 2)).unwrap() }),
        ];
        for (name, op) in ops {
            let err = check_gradients(|g, b| { let x = b.get("x")?; let y = op(g, x); Ok(reduce(g, y)) }, &p, 1e-6).unwrap();
            prop_assert!(err < 1e-5, "{} error {}", name, err);
        }
    }

    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-30.0f64..30.0, 8)) {
        let mut g = Graph::new();
        let x = g.constant(Matrix::from_shape_vec((1, 8), v).unwrap());
        let s = g.softmax(x);
        let vals = g.value(s);
        prop_assert!((vals.sum() - 1.0).abs() < 1e-12);
        prop_assert!(vals.iter().all(|&p| p > 0.0));
    }
}

fn random_geometry(seed: &[f64], m: usize) -> Vec<Complex64> {
    (0..1usize << m).map(|t| Complex64::new(seed[2 * t], seed[2 * t + 1])).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn normalization_gives_unit_power(
        coords in prop::collection::vec(-3.0f64..3.0, 128),
        weights in prop::collection::vec(0.01f64..1.0, 16),
    ) {
        let (m, k) = (6, 4);
        let shaping = ShapingDistribution::from_weights(&weights).unwrap();
        let c = normalize(&random_geometry(&coords, m), &shaping, m, k).unwrap();
        for p in c.sub_constellation_powers() {
            prop_assert!((p - 1.0).abs() < 1e-9);
        }
        let pd = point_probabilities(&shaping, m, k).unwrap();
        let total: f64 = c.points().iter().zip(pd.probs()).map(|(x, p)| p * x.norm_sqr()).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        // idempotent
        let again = normalize(c.points(), &shaping, m, k).unwrap();
        for (a, b) in again.points().iter().zip(c.points()) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn entropy_bounds(weights in prop::collection::vec(0.0f64..1.0, 16)) {
        prop_assume!(weights.iter().sum::<f64>() > 1e-6);
        let s = ShapingDistribution::from_weights(&weights).unwrap();
        let h = source_entropy(&s, 6, 4);
        prop_assert!(h >= 2.0 - 1e-12 && h <= 6.0 + 1e-12);
        let pd = point_probabilities(&s, 6, 4).unwrap();
        for i in 0..2 {
            let ones: f64 = pd.probs().iter().enumerate().filter(|(t, _)| label_bit(*t, i, 6) == 1).map(|(_, p)| p).sum();
            prop_assert!((ones - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn map_bits_reads_back_labels(
        coords in prop::collection::vec(-3.0f64..3.0, 32),
        t in 0usize..16,
    ) {
        let shaping = ShapingDistribution::uniform(2);
        let c = normalize(&random_geometry(&coords, 4), &shaping, 4, 2).unwrap();
        let bits = index_to_bits(t, 4);
        prop_assert_eq!(map_bits(&bits[2..], &bits[..2], &c).unwrap(), c.point(t));
    }

    #[test]
    fn reorder_roundtrip(v in prop::collection::vec(-10.0f64..10.0, 36)) {
        let r = llr_reorder(&v, 6, 4, 6).unwrap();
        prop_assert_eq!(llr_reorder_inverse(&r, 6, 4, 6).unwrap(), v);
    }
}

#[test]
fn exact_demapper_matches_brute_force_marginalization() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
    let m = 4;
    let n = 1 << m;
    let points: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5))).collect();
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let prior: Vec<f64> = raw.iter().map(|p| p / total).collect();
    let n0 = 0.3;
    let mut exact = ExactDemapper::new(&points, &prior, n0);
    for _ in 0..1000 {
        let y = Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let lik: Vec<f64> = (0..n).map(|t| prior[t] * (-(y - points[t]).norm_sqr() / n0).exp()).collect();
        let z: f64 = lik.iter().sum();
        let post = exact.point_posteriors(y);
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let bits = exact.demap(y);
        for i in 0..m {
            let p1: f64 = (0..n).filter(|&t| label_bit(t, i, m) == 1).map(|t| lik[t]).sum::<f64>() / z;
            let (q0, q1) = bits.probs[i];
            assert!((q1 - p1).abs() < 1e-12, "bit {i}: {q1} vs {p1}");
            assert!((q0 + q1 - 1.0).abs() < 1e-12);
            assert!((bits.llrs[i] - (q1 / q0).ln()).abs() < 1e-9);
        }
    }
}
