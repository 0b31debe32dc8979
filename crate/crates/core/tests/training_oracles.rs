mod oracles;

use shaping_core::channels::ChannelKind;
use shaping_core::demappers::NnDemapper;
use shaping_core::evaluation::{estimate_bmi, model_bmi_curve, SymbolDemapper};
use shaping_core::models::{ModelKind, TransmitterModel};
use shaping_core::nn::Activation;
use shaping_core::training::{evaluate_rates, mean_and_stderr, rate_from_loss, sample_batch_at, train, Receiver, TrainConfig};
use shaping_core::channels::stream_rng;

#[test]
fn two_point_oracle_is_gray_qpsk() {
    let best = oracles::best_two_point_scheme(0.0);
    // Gray QPSK at 0 dB: two real BPSK channels at SNR 1
    let qpsk = 2.0 * oracles::binary_mi(2.0 * 0.5f64.sqrt(), 0.5, 0.5f64.sqrt());
    assert!((best - qpsk).abs() < 1e-9, "{best} vs {qpsk}");
    assert!(best < 1.0);
}

#[test]
fn trained_psgs_reaches_two_point_optimum() {
    let cfg = TrainConfig {
        model: ModelKind::Psgs,
        m: 2,
        k: 1,
        snr_range: [-1.0, 1.0],
        iterations: 2000,
        seeds: vec![0],
        validation_realizations: 1000,
        ..TrainConfig::default()
    };
    let out = train(&cfg).unwrap();
    let model = &out.best_run().unwrap().model;
    let point = model_bmi_curve(model, ChannelKind::Awgn, &[0.0], 100_000, 3).unwrap()[0];
    let oracle = oracles::best_two_point_scheme(0.0);
    assert!((point.bmi - oracle).abs() < 0.02, "trained {} vs oracle {oracle}", point.bmi);
}

#[test]
fn training_is_deterministic() {
    let cfg = TrainConfig {
        model: ModelKind::Psgs,
        m: 4,
        k: 2,
        batch_size: 50,
        iterations: 60,
        seeds: vec![3, 4],
        validate_every: 20,
        validation_realizations: 20,
        ..TrainConfig::default()
    };
    let a = train(&cfg).unwrap();
    let b = train(&cfg).unwrap();
    for (x, y) in a.runs.iter().zip(&b.runs) {
        assert_eq!(x.history, y.history);
        assert_eq!(x.model, y.model);
    }
    assert_eq!(a.best, b.best);
    assert_ne!(a.runs[0].history.losses, a.runs[1].history.losses);
}

#[test]
fn loss_agrees_with_sampled_bmi() {
    let tx = TransmitterModel::new(ModelKind::Psgs, 6, 4).unwrap();
    let params = tx.init_params(&mut stream_rng(8, 0));
    for (i, snr) in [0.0, 5.0, 10.0, 15.0, 20.0].into_iter().enumerate() {
        let (rate, se_rate) = rate_from_loss(&tx, &params, &Receiver::Exact, None, ChannelKind::Awgn, snr, 2000, 40 + i as u64).unwrap();
        let (_, c) = tx.forward(&params, snr).unwrap();
        let bmi = estimate_bmi(&c, SymbolDemapper::Exact, ChannelKind::Awgn, snr, 100_000, 60 + i as u64).unwrap();
        let tol = 3.0 * (se_rate * se_rate + bmi.stderr * bmi.stderr).sqrt();
        assert!((rate - bmi.bmi).abs() < tol, "{snr} dB: loss {rate} vs bmi {} (tol {tol})", bmi.bmi);
    }
}

#[test]
fn noiseless_bmi_is_entropy() {
    let tx = TransmitterModel::new(ModelKind::UniformQam, 6, 4).unwrap();
    let (_, c) = tx.forward(&Default::default(), 60.0).unwrap();
    let p = estimate_bmi(&c, SymbolDemapper::Exact, ChannelKind::Awgn, 60.0, 10_000, 1).unwrap();
    assert!((p.bmi - 6.0).abs() < 1e-9, "{}", p.bmi);
}

#[test]
fn estimator_error_shrinks_with_batch_size() {
    let tx = TransmitterModel::new(ModelKind::UniformQam, 4, 2).unwrap();
    let params = Default::default();
    let batch_std = |b: usize| {
        let means: Vec<f64> = (0..40)
            .map(|r| {
                let batch = sample_batch_at(ChannelKind::Awgn, 4, 3.0, b, &mut stream_rng(100 + b as u64, r));
                let rates = evaluate_rates(&tx, &params, &Receiver::Exact, None, &batch).unwrap();
                rates.iter().sum::<f64>() / b as f64
            })
            .collect();
        let (_, se) = mean_and_stderr(&means);
        se * (means.len() as f64).sqrt()
    };
    let ratio = batch_std(25) / batch_std(400);
    assert!((ratio - 4.0).abs() < 1.5, "ratio {ratio}");
}

fn neural_16qam() -> (TransmitterModel, NnDemapper, shaping_core::grad::ParamVector) {
    let demapper = NnDemapper {
        m: 4,
        hidden: vec![32, 32],
        activation: Activation::Tanh,
    };
    let cfg = TrainConfig {
        model: ModelKind::UniformQam,
        m: 4,
        k: 2,
        batch_size: 100,
        learning_rate: 3e-3,
        snr_range: [5.0, 15.0],
        iterations: 1500,
        seeds: vec![1],
        demapper: Some(demapper.clone()),
        validation_realizations: 50,
        ..TrainConfig::default()
    };
    let out = train(&cfg).unwrap();
    let run = out.best_run().unwrap();
    let (d, p) = run.model.demapper.clone().unwrap();
    assert_eq!(d, demapper);
    (run.model.transmitter, d, p)
}

#[test]
fn neural_demapper_is_bounded_by_exact_and_close_to_it() {
    let (tx, demapper, params) = neural_16qam();
    let none = Default::default();
    let (exact, _) = rate_from_loss(&tx, &none, &Receiver::Exact, None, ChannelKind::Awgn, 10.0, 3000, 9).unwrap();
    let (neural, _) = rate_from_loss(&tx, &none, &Receiver::Neural(demapper.clone()), Some(&params), ChannelKind::Awgn, 10.0, 3000, 9).unwrap();
    // paired on identical realizations: the KL gap is non-negative per example
    let batch = sample_batch_at(ChannelKind::Awgn, 4, 10.0, 3000, &mut stream_rng(9, 0));
    let e = evaluate_rates(&tx, &none, &Receiver::Exact, None, &batch).unwrap();
    let n = evaluate_rates(&tx, &none, &Receiver::Neural(demapper.clone()), Some(&params), &batch).unwrap();
    let diffs: Vec<f64> = e.iter().zip(&n).map(|(a, b)| a - b).collect();
    let (gap, se) = mean_and_stderr(&diffs);
    assert!(gap > -3.0 * se, "neural exceeds exact: gap {gap} ± {se}");
    assert!(exact - neural < 0.05, "exact {exact} neural {neural}");
}

#[test]
fn trained_models_vary_with_snr() {
    for kind in [ModelKind::Psgs, ModelKind::Mbqam] {
        let cfg = TrainConfig {
            model: kind,
            m: 4,
            k: 2,
            batch_size: 100,
            iterations: 400,
            seeds: vec![2],
            validation_realizations: 50,
            ..TrainConfig::default()
        };
        let out = train(&cfg).unwrap();
        let model = &out.best_run().unwrap().model;
        let (p5, c5) = model.transmitter.forward(&model.params, 5.0).unwrap();
        let (p15, c15) = model.transmitter.forward(&model.params, 15.0).unwrap();
        assert_ne!(p5.probs(), p15.probs(), "{kind}");
        if kind == ModelKind::Psgs {
            assert_ne!(c5.points(), c15.points());
            // shaped part keeps entropy
            assert!(c5.source_entropy() > 2.5 && c15.source_entropy() > 2.5);
        } else {
            let mus: Vec<String> = (0..=4)
                .map(|i| format!("{:.3}", model.transmitter.mb_mu(&model.params, 5.0 * i as f64).unwrap()))
                .collect();
            println!("learned mu over 0..20 dB: {}", mus.join(" "));
        }
    }
}
