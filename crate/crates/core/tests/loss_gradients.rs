use shaping_core::channels::{stream_rng, ChannelKind};
use shaping_core::demappers::NnDemapper;
use shaping_core::grad::{check_gradients, ParamVector};
use shaping_core::models::{ModelKind, TransmitterModel};
use shaping_core::nn::Activation;
use shaping_core::training::{loss_estimate, sample_batch, BatchExample, Receiver};

const TOLERANCE: f64 = 1e-4;

fn fixed_batch(channel: ChannelKind, m: usize, seed: u64) -> Vec<BatchExample> {
    let mut rng = stream_rng(seed, 0);
    sample_batch(channel, m, (4.0, 9.0), 2, &mut rng)
}

/// Checks the transmitter and, if neural, the demapper gradients of the
/// full loss. Parameters are concatenated as one vector for the check.
fn loss_gradient_error(tx: TransmitterModel, receiver: Receiver, channel: ChannelKind, seed: u64) -> f64 {
    let batch = fixed_batch(channel, tx.m, seed);
    let mut rng = stream_rng(seed, 99);
    let tx_params = tx.init_params(&mut rng);
    let rx_params = match &receiver {
        Receiver::Neural(d) => Some(d.init_params(&mut rng)),
        Receiver::Exact => None,
    };
    let mut joint = ParamVector::new();
    for p in std::iter::once(&tx_params).chain(rx_params.as_ref()) {
        for s in p.segments() {
            joint.push(&s.name, s.rows, s.cols, p.view(&s.name).unwrap().iter().copied().collect());
        }
    }
    check_gradients(
        |g, bound| {
            // the joint vector binds both halves by name
            let nodes = loss_estimate(g, &tx, bound, &receiver, rx_params.as_ref().map(|_| bound), &batch)
                .map_err(|e| shaping_core::grad::GradError::Invalid { op: "loss", msg: e.to_string() })?;
            Ok(nodes.loss)
        },
        &joint,
        1e-5,
    )
    .unwrap()
}

#[test]
fn psgs_loss_matches_finite_differences() {
    let tx = TransmitterModel::new(ModelKind::Psgs, 2, 1).unwrap();
    for seed in 0..3 {
        let err = loss_gradient_error(tx, Receiver::Exact, ChannelKind::Awgn, seed);
        assert!(err < TOLERANCE, "seed {seed}: {err}");
    }
}

#[test]
fn gs_loss_matches_finite_differences() {
    let tx = TransmitterModel::new(ModelKind::Gs, 2, 1).unwrap();
    let err = loss_gradient_error(tx, Receiver::Exact, ChannelKind::Awgn, 5);
    assert!(err < TOLERANCE, "{err}");
}

#[test]
fn mbqam_loss_matches_finite_differences() {
    let tx = TransmitterModel::new(ModelKind::Mbqam, 4, 2).unwrap();
    let err = loss_gradient_error(tx, Receiver::Exact, ChannelKind::Awgn, 6);
    assert!(err < TOLERANCE, "{err}");
}

#[test]
fn neural_loss_matches_finite_differences() {
    let tx = TransmitterModel::new(ModelKind::Psgs, 2, 1).unwrap();
    let demapper = NnDemapper {
        m: 2,
        hidden: vec![8, 8],
        activation: Activation::Tanh,
    };
    for channel in [ChannelKind::Awgn, ChannelKind::Rbf] {
        let err = loss_gradient_error(tx, Receiver::Neural(demapper.clone()), channel, 7);
        assert!(err < TOLERANCE, "{channel}: {err}");
    }
}

#[test]
fn entropy_term_matches_finite_differences() {
    use shaping_core::constellation::source_entropy_graph;
    let mut p = ParamVector::new();
    p.push("logits", 2, 8, (0..16).map(|i| (i as f64 * 0.37).sin()).collect());
    let err = check_gradients(
        |g, b| {
            let l = b.get("logits")?;
            let probs = g.softmax(l);
            let log_probs = g.log_softmax(l);
            let h = source_entropy_graph(g, probs, log_probs, 5, 3)?;
            Ok(g.sum(h))
        },
        &p,
        1e-6,
    )
    .unwrap();
    assert!(err < TOLERANCE, "{err}");
}

#[test]
fn binary_gs_loss_matches_finite_differences() {
    let tx = TransmitterModel::new(ModelKind::Gs, 1, 1).unwrap();
    let err = loss_gradient_error(tx, Receiver::Exact, ChannelKind::Awgn, 8);
    assert!(err < TOLERANCE, "{err}");
}
