//! Experiment drivers behind the CLI verbs.

use std::path::PathBuf;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use shaping_core::channels::{snr_to_n0, stream_rng, ChannelKind, ChannelRealization};
use shaping_core::constellation::{index_to_bits, map_bits, ShapedConstellation};
use shaping_core::demappers::{demapper_features, llr_reorder, ExactDemapper, DEMAPPER_INPUTS};
use shaping_core::evaluation::{capacity, model_bmi_curve, spectral_efficiency, BmiPoint, SymbolDemapper};
use shaping_core::models::TrainedModel;
use shaping_core::training::{train_with_progress, TrainOutcome};
use shaping_fec::{bit_placement, check_placement, CodeRate, LdpcCode};

use crate::config::{BerSettings, ExperimentConfig};
use crate::output::{series_csv, RunWriter, SeriesPoint};
use crate::CliError;

/// The model named by the config: the checkpoint when given, otherwise
/// the fixed uniform QAM transmitter with the exact demapper.
pub fn load_model(config: &ExperimentConfig) -> Result<TrainedModel, CliError> {
    let tx = config.scheme.transmitter(config.m)?;
    let model = match &config.checkpoint {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Checkpoint(format!("{} does not exist", path.display())));
            }
            TrainedModel::load(path).map_err(|e| CliError::Checkpoint(format!("{}: {e}", path.display())))?
        }
        None if !tx.is_trainable() && config.channel == ChannelKind::Awgn => TrainedModel {
            transmitter: tx,
            params: tx.zero_params(),
            demapper: None,
        },
        None => return Err(CliError::Checkpoint(format!("{} on {} needs a trained checkpoint", config.scheme, config.channel))),
    };
    if model.transmitter != tx {
        return Err(CliError::Checkpoint(format!(
            "checkpoint holds {} (m = {}, k = {}), config asks for {}",
            model.transmitter.kind, model.transmitter.m, model.transmitter.k, config.scheme
        )));
    }
    if config.channel != ChannelKind::Awgn && model.demapper.is_none() {
        return Err(CliError::Checkpoint("fading channels need a checkpoint with a neural demapper".into()));
    }
    Ok(model)
}

/// BMI per grid point; point `i` uses RNG seed `seed + i`.
pub fn bmi_curve(config: &ExperimentConfig, model: &TrainedModel) -> Result<Vec<BmiPoint>, CliError> {
    config
        .snr_db
        .par_iter()
        .enumerate()
        .map(|(i, &snr)| {
            let p = model_bmi_curve(model, config.channel, &[snr], config.samples, config.seed.wrapping_add(i as u64))?;
            let p = p[0];
            if !p.bmi.is_finite() || !p.stderr.is_finite() {
                return Err(CliError::Numerical(format!("BMI at {snr} dB is not finite")));
            }
            Ok(p)
        })
        .collect()
}

pub fn capacity_curve(snrs: &[f64]) -> Vec<SeriesPoint> {
    snrs.iter()
        .map(|&s| SeriesPoint {
            es_n0_db: s,
            value: capacity(s),
            stderr: 0.0,
        })
        .collect()
}

/// `H(X) − m(1 − r)` at each grid point.
pub fn se_curve(config: &ExperimentConfig, model: &TrainedModel) -> Result<Vec<SeriesPoint>, CliError> {
    let (a, b) = config.scheme.code_rate();
    config
        .snr_db
        .iter()
        .map(|&s| {
            let (_, c) = model.transmitter.forward(&model.params, s)?;
            Ok(SeriesPoint {
                es_n0_db: s,
                value: spectral_efficiency(c.source_entropy(), config.m, a as f64 / b as f64),
                stderr: 0.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BerPoint {
    pub snr_db: f64,
    pub ber: f64,
    /// Binomial standard error of `ber`.
    pub stderr: f64,
    pub bit_errors: u64,
    pub bits: u64,
    pub codewords: usize,
    pub frame_errors: usize,
}

fn ldpc_for(config: &ExperimentConfig) -> Result<LdpcCode, CliError> {
    match config.scheme.code_rate() {
        (2, 3) => Ok(LdpcCode::ieee80211n(CodeRate::TwoThirds)),
        (1, 2) => Ok(LdpcCode::ieee80211n(CodeRate::OneHalf)),
        (a, b) => Err(CliError::Config(format!("no LDPC code of rate {a}/{b}"))),
    }
}

/// Coded BER per grid point with the 802.11n LDPC code of the scheme's
/// rate. Point `i` uses RNG seed `seed + i`, codeword `j` stream `j`.
pub fn run_ber(config: &ExperimentConfig, model: &TrainedModel) -> Result<Vec<BerPoint>, CliError> {
    let code = ldpc_for(config)?;
    let k = config.scheme.info_bits(config.m)?;
    check_placement(code.n(), code.info_len(), config.m, k)?;
    config
        .snr_db
        .par_iter()
        .enumerate()
        .map(|(i, &snr)| ber_point(&code, model, config.channel, snr, k, &config.ber, config.seed.wrapping_add(i as u64)))
        .collect()
}

fn ber_point(
    code: &LdpcCode,
    model: &TrainedModel,
    channel: ChannelKind,
    snr_db: f64,
    k: usize,
    settings: &BerSettings,
    seed: u64,
) -> Result<BerPoint, CliError> {
    let (_, c) = model.transmitter.forward(&model.params, snr_db)?;
    let n0 = snr_to_n0(snr_db);
    let demapper = SymbolDemapper::for_model(model);
    let prior = c.point_distribution();
    let mut exact = ExactDemapper::new(c.points(), prior.probs(), n0);
    let (mut errors, mut codewords, mut frame_errors) = (0u64, 0usize, 0usize);
    while codewords < settings.min_codewords || (errors < settings.min_errors && codewords < settings.max_codewords) {
        let mut rng = stream_rng(seed, codewords as u64);
        let e = codeword_errors(code, &c, demapper, &mut exact, channel, snr_db, n0, k, settings.max_iterations, &mut rng)?;
        errors += e;
        frame_errors += usize::from(e > 0);
        codewords += 1;
    }
    let bits = (codewords * code.info_len()) as u64;
    let ber = errors as f64 / bits as f64;
    Ok(BerPoint {
        snr_db,
        ber,
        stderr: (ber * (1.0 - ber) / bits as f64).sqrt(),
        bit_errors: errors,
        bits,
        codewords,
        frame_errors,
    })
}

/// Information-bit errors of one transmitted codeword.
#[allow(clippy::too_many_arguments)]
fn codeword_errors<R: Rng>(
    code: &LdpcCode,
    c: &ShapedConstellation,
    demapper: SymbolDemapper<'_>,
    exact: &mut ExactDemapper<'_>,
    channel: ChannelKind,
    snr_db: f64,
    n0: f64,
    k: usize,
    max_iterations: usize,
    rng: &mut R,
) -> Result<u64, CliError> {
    let m = c.m();
    let q = code.n() / m;
    // perfect DM: shaped info bits follow p_θ; a GS partition has a
    // single uniform sub-constellation, so its info bits are uniform
    let mut info = Vec::with_capacity(code.info_len());
    for _ in 0..q {
        if c.k() == k {
            info.extend(index_to_bits(c.shaping().sample_index(rng.random::<f64>()), k));
        } else {
            info.extend((0..k).map(|_| rng.random_range(0..2u8)));
        }
    }
    let codeword = code.encode(&info)?;
    let symbols = bit_placement(&codeword[..code.info_len()], &codeword[code.info_len()..], m, k)?;

    let mut observed = Vec::with_capacity(q);
    let mut estimates = Vec::with_capacity(q);
    let awgn = (channel == ChannelKind::Awgn).then(|| ChannelRealization::sample(channel, n0, q, rng));
    for (i, (b_info, b_parity)) in symbols.iter().enumerate() {
        let x = if c.k() == k {
            map_bits(b_info, b_parity, c)?
        } else {
            map_bits(&[b_parity.as_slice(), b_info.as_slice()].concat(), &[], c)?
        };
        let own;
        let (realization, idx) = match &awgn {
            Some(r) => (r, i),
            None => {
                own = ChannelRealization::sample(channel, n0, 1, rng);
                (&own, 0)
            }
        };
        let view = realization.receiver_view();
        observed.push(view.observe(x, realization.noise[idx]));
        estimates.push(view.estimate);
    }

    let mut llrs = Vec::with_capacity(q * m);
    match demapper {
        SymbolDemapper::Exact => {
            let mut lp = vec![(0.0, 0.0); m];
            for &y in &observed {
                exact.log_posteriors(y, &mut lp);
                llrs.extend(lp.iter().map(|(l0, l1)| l1 - l0));
            }
        }
        SymbolDemapper::Neural { demapper, params } => {
            let features = Array2::from_shape_fn((q, DEMAPPER_INPUTS), |(r, j)| demapper_features(observed[r], estimates[r], snr_db)[j]);
            let out = demapper.llrs(params, &features).map_err(|e| CliError::Numerical(e.to_string()))?;
            llrs.extend(out.iter().copied());
        }
    }
    if llrs.iter().any(|l| l.is_nan()) {
        return Err(CliError::Numerical(format!("NaN LLR at {snr_db} dB")));
    }
    let ordered = llr_reorder(&llrs, m, k, q).map_err(|e| CliError::Numerical(e.to_string()))?;
    let decoded = code.decode(&ordered, max_iterations)?;
    Ok(decoded.bits[..code.info_len()]
        .iter()
        .zip(&info)
        .filter(|(a, b)| a != b)
        .count() as u64)
}

/// `eval-bmi`: BMI series (and the capacity reference on AWGN).
pub fn eval_bmi(config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let model = load_model(config)?;
    let points = bmi_curve(config, &model)?;
    let slug = config.scheme.slug();
    let series: Vec<SeriesPoint> = points
        .iter()
        .map(|p| SeriesPoint {
            es_n0_db: p.snr_db,
            value: p.bmi,
            stderr: p.stderr,
        })
        .collect();
    let mut w = RunWriter::new(&config.output_dir)?;
    let path = w.write(&format!("{slug}-{}-bmi.csv", config.channel), series_csv(&series).as_bytes())?;
    if config.channel == ChannelKind::Awgn {
        w.write("awgn-capacity.csv", series_csv(&capacity_curve(&config.snr_db)).as_bytes())?;
    }
    w.finish(
        &format!("{slug}-{}-bmi", config.channel),
        "eval-bmi",
        config,
        json!({ "samples": config.samples, "points": points }),
    )?;
    Ok(path)
}

/// `eval-se`: spectral efficiency series.
pub fn eval_se(config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let model = load_model(config)?;
    let series = se_curve(config, &model)?;
    let slug = config.scheme.slug();
    let mut w = RunWriter::new(&config.output_dir)?;
    let path = w.write(&format!("{slug}-se.csv"), series_csv(&series).as_bytes())?;
    w.finish(&format!("{slug}-se"), "eval-se", config, json!({}))?;
    Ok(path)
}

/// `eval-ber`: coded BER series.
pub fn eval_ber(config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let model = load_model(config)?;
    let points = run_ber(config, &model)?;
    let slug = config.scheme.slug();
    let series: Vec<SeriesPoint> = points
        .iter()
        .map(|p| SeriesPoint {
            es_n0_db: p.snr_db,
            value: p.ber,
            stderr: p.stderr,
        })
        .collect();
    let mut w = RunWriter::new(&config.output_dir)?;
    let path = w.write(&format!("{slug}-{}-ber.csv", config.channel), series_csv(&series).as_bytes())?;
    w.finish(
        &format!("{slug}-{}-ber", config.channel),
        "eval-ber",
        config,
        json!({ "settings": config.ber, "points": points }),
    )?;
    Ok(path)
}

/// `export-constellation`: points, labels and probabilities per grid SNR.
pub fn export_constellation(config: &ExperimentConfig) -> Result<Vec<PathBuf>, CliError> {
    let model = load_model(config)?;
    let slug = config.scheme.slug();
    let mut w = RunWriter::new(&config.output_dir)?;
    let mut paths = Vec::new();
    for &snr in &config.snr_db {
        let (_, c) = model.transmitter.forward(&model.params, snr)?;
        let mut buf = Vec::new();
        c.write_csv(&mut buf)?;
        paths.push(w.write(&format!("{slug}-constellation-{snr:?}dB.csv"), &buf)?);
    }
    w.finish(&format!("{slug}-constellation"), "export-constellation", config, json!({}))?;
    Ok(paths)
}

/// `train`: trains every configured seed, keeps per-seed checkpoints and
/// histories under the output directory and writes the best model to the
/// config's checkpoint path.
pub fn train(config: &ExperimentConfig, progress: impl FnMut(u64, usize, f64)) -> Result<(TrainOutcome, PathBuf), CliError> {
    let checkpoint = config
        .checkpoint
        .clone()
        .ok_or_else(|| CliError::Config("train needs a checkpoint path".into()))?;
    let tc = config.train_config()?;
    let outcome = train_with_progress(&tc, progress)?;
    let best = outcome
        .best_run()
        .ok_or_else(|| CliError::Numerical("every seed diverged".into()))?;
    if let Some(parent) = checkpoint.parent() {
        std::fs::create_dir_all(parent)?;
    }
    best.model.save(&checkpoint)?;

    let slug = config.scheme.slug();
    let dir = config.output_dir.join(format!("{slug}-{}-train", config.channel));
    let mut w = RunWriter::new(&dir)?;
    let mut seeds = Vec::new();
    for run in &outcome.runs {
        let mut model = Vec::new();
        run.model.write_to(&mut model)?;
        w.write(&format!("seed-{}.model", run.seed), &model)?;
        let mut hist = Vec::new();
        run.history.write_csv(&mut hist)?;
        w.write(&format!("seed-{}-history.csv", run.seed), &hist)?;
        seeds.push(json!({
            "seed": run.seed,
            "iterations": run.history.losses.len(),
            "final_validation_loss": run.history.final_validation_loss,
            "failure": run.failure,
        }));
    }
    w.finish(
        "train",
        "train",
        config,
        json!({ "train": tc, "best_seed": best.seed, "seeds": seeds }),
    )?;
    Ok((outcome, checkpoint))
}
