//! Entropy-corrected BMI loss, Adam, and the multi-seed training loop.
//!
//! Each batch example draws one SNR and one channel realization and sends
//! every constellation point through it. With `w(t)` the joint point
//! probability, the per-example rate is
//!
//! ```text
//! r_l = H(X) + Σ_t w(t) Σ_i log2 p̃(b_i = label_i(t) | y(x_t, h_l))
//! ```
//!
//! and the loss is `−mean_l r_l`, in bits.

use std::f64::consts::{LN_2, LOG2_E};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{snr_to_n0, stream_rng, ChannelKind, ChannelRealization};
use crate::constellation::{label_bit, source_entropy_graph};
use crate::demappers::{ExactBitLikelihood, NnDemapper, DEMAPPER_INPUTS, LOG_POSTERIOR_FLOOR};
use crate::grad::{BoundParams, GradError, Graph, Matrix, NodeId, ParamVector};
use crate::models::{ModelError, ModelKind, TrainedModel, TransmitterModel};

/// Stream offset for the shared validation realizations.
const VALIDATION_SEED: u64 = 0x5EED_0BAD_CAFE;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GradError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at iteration {iteration} (snr {snr_db:.2} dB, {term})")]
    NonFinite { iteration: usize, snr_db: f64, term: String },
    #[error("the exact demapper needs an AWGN channel")]
    ExactOnFading,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
        }
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.first.len());
    state.step += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.first[i] = cfg.beta1 * state.first[i] + (1.0 - cfg.beta1) * g;
        state.second[i] = cfg.beta2 * state.second[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.first[i] / c1;
        let v_hat = state.second[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Which demapper the loss uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Receiver {
    /// True posterior (AWGN only).
    Exact,
    Neural(NnDemapper),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchExample {
    pub snr_db: f64,
    pub realization: ChannelRealization,
}

/// `size` examples with SNR uniform in `[lo, hi]` dB; each realization
/// carries one noise draw per constellation point.
pub fn sample_batch<R: rand::Rng>(channel: ChannelKind, m: usize, snr_range: (f64, f64), size: usize, rng: &mut R) -> Vec<BatchExample> {
    (0..size)
        .map(|_| {
            let snr_db = if snr_range.1 > snr_range.0 {
                rng.random_range(snr_range.0..snr_range.1)
            } else {
                snr_range.0
            };
            let realization = ChannelRealization::sample(channel, snr_to_n0(snr_db), 1 << m, rng);
            BatchExample { snr_db, realization }
        })
        .collect()
}

/// `size` examples at one fixed SNR.
pub fn sample_batch_at<R: rand::Rng>(channel: ChannelKind, m: usize, snr_db: f64, size: usize, rng: &mut R) -> Vec<BatchExample> {
    sample_batch(channel, m, (snr_db, snr_db), size, rng)
}

#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    /// `1×1` loss in bits.
    pub loss: NodeId,
    /// `B×1` per-example rates `r_l`.
    pub rates: NodeId,
}

/// Builds the enumeration loss for one batch.
pub fn loss_estimate(
    g: &mut Graph,
    tx: &TransmitterModel,
    tx_bound: &BoundParams,
    receiver: &Receiver,
    rx_bound: Option<&BoundParams>,
    batch: &[BatchExample],
) -> Result<LossNodes, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Config("empty batch".into()));
    }
    let m = tx.m;
    let n = 1usize << m;
    let b = batch.len();
    for ex in batch {
        if ex.realization.noise.len() != n {
            return Err(TrainError::Config(format!("realization has {} draws, need {n}", ex.realization.noise.len())));
        }
    }
    let snrs: Vec<f64> = batch.iter().map(|e| e.snr_db).collect();
    let nodes = tx.forward_graph(g, tx_bound, &snrs)?;
    let ks = nodes.shaped_bits;
    let parity_bits = (m - ks) as f64;
    let tiled = g.tile_cols(nodes.probs, 1 << (m - ks));
    let w = g.scale(tiled, (-parity_bits).exp2());
    let log_tiled = g.tile_cols(nodes.log_probs, 1 << (m - ks));
    let log_w = g.offset(log_tiled, -parity_bits * LN_2);

    let likelihood = match receiver {
        Receiver::Exact => {
            if batch.iter().any(|e| e.realization.kind != ChannelKind::Awgn) {
                return Err(TrainError::ExactOnFading);
            }
            let op = ExactBitLikelihood {
                noise_re: Matrix::from_shape_fn((b, n), |(l, t)| batch[l].realization.noise[t].re),
                noise_im: Matrix::from_shape_fn((b, n), |(l, t)| batch[l].realization.noise[t].im),
                n0: batch.iter().map(|e| e.realization.n0).collect(),
                m,
            };
            g.custom(Box::new(op), &[nodes.re, nodes.im, w, log_w])?
        }
        Receiver::Neural(demapper) => {
            let rx = rx_bound.ok_or_else(|| TrainError::Config("neural receiver without parameters".into()))?;
            neural_likelihood(g, demapper, rx, nodes.re, nodes.im, w, batch)?
        }
    };
    let entropy = source_entropy_graph(g, nodes.probs, nodes.log_probs, m, ks)?;
    let rates = g.add(entropy, likelihood)?;
    let total = g.sum(rates);
    let loss = g.scale(total, -1.0 / b as f64);
    Ok(LossNodes { loss, rates })
}

fn neural_likelihood(
    g: &mut Graph,
    demapper: &NnDemapper,
    rx: &BoundParams,
    re: NodeId,
    im: NodeId,
    w: NodeId,
    batch: &[BatchExample],
) -> Result<NodeId, TrainError> {
    let b = batch.len();
    let n = g.shape(re).1;
    let m = demapper.m;
    if n != 1 << m {
        return Err(TrainError::Config(format!("demapper outputs {m} bits for {n} points")));
    }
    let rows = b * n;
    let views: Vec<_> = batch.iter().map(|e| e.realization.receiver_view()).collect();
    let col = |f: &dyn Fn(usize, usize) -> f64| Matrix::from_shape_fn((rows, 1), |(r, _)| f(r / n, r % n));
    let gain_re = g.constant(col(&|l, _| views[l].gain.re));
    let gain_im = g.constant(col(&|l, _| views[l].gain.im));
    let noise_re = g.constant(col(&|l, t| (batch[l].realization.noise[t] * views[l].inverse).re));
    let noise_im = g.constant(col(&|l, t| (batch[l].realization.noise[t] * views[l].inverse).im));
    let est_re = g.constant(col(&|l, _| views[l].estimate.re));
    let est_im = g.constant(col(&|l, _| views[l].estimate.im));
    let snr = g.constant(col(&|l, _| batch[l].snr_db / 20.0));

    let x_re = g.reshape(re, (rows, 1))?;
    let x_im = g.reshape(im, (rows, 1))?;
    // ŷ = gain·x + equalized noise
    let a = g.mul(gain_re, x_re)?;
    let c = g.mul(gain_im, x_im)?;
    let y_re = g.sub(a, c)?;
    let y_re = g.add(y_re, noise_re)?;
    let a = g.mul(gain_re, x_im)?;
    let c = g.mul(gain_im, x_re)?;
    let y_im = g.add(a, c)?;
    let y_im = g.add(y_im, noise_im)?;
    let features = g.concat_cols(&[y_re, y_im, est_re, est_im, snr])?;
    debug_assert_eq!(g.shape(features).1, DEMAPPER_INPUTS);

    let llr = demapper.llrs_graph(g, rx, features)?;
    // log p̃(b = label) = log σ(s·llr) = −softplus(−s·llr), s = ±1
    let signs = g.constant(Matrix::from_shape_fn((rows, m), |(r, i)| if label_bit(r % n, i, m) == 1 { -1.0 } else { 1.0 }));
    let z = g.mul(llr, signs)?;
    let sp = g.softplus(z);
    let lp = g.neg(sp);
    let lp = g.clamp_min(lp, LOG_POSTERIOR_FLOOR);
    let per_point = g.row_sum(lp);
    let per_point = g.scale(per_point, LOG2_E);
    let per_point = g.reshape(per_point, (b, n))?;
    let weighted = g.mul(per_point, w)?;
    Ok(g.row_sum(weighted))
}

/// Per-example rates (bits) without building gradients.
pub fn evaluate_rates(
    tx: &TransmitterModel,
    tx_params: &ParamVector,
    receiver: &Receiver,
    rx_params: Option<&ParamVector>,
    batch: &[BatchExample],
) -> Result<Vec<f64>, TrainError> {
    const CHUNK: usize = 256;
    let mut out = Vec::with_capacity(batch.len());
    for chunk in batch.chunks(CHUNK) {
        let mut g = Graph::new();
        let tb = tx_params.bind(&mut g);
        let rb = rx_params.map(|p| p.bind(&mut g));
        let nodes = loss_estimate(&mut g, tx, &tb, receiver, rb.as_ref(), chunk)?;
        out.extend(g.value(nodes.rates).iter().copied());
    }
    Ok(out)
}

/// Mean rate and its standard error over `realizations` fresh examples at
/// one SNR: the Monte Carlo estimate of `−loss`.
pub fn rate_from_loss(
    tx: &TransmitterModel,
    tx_params: &ParamVector,
    receiver: &Receiver,
    rx_params: Option<&ParamVector>,
    channel: ChannelKind,
    snr_db: f64,
    realizations: usize,
    seed: u64,
) -> Result<(f64, f64), TrainError> {
    let mut rng = stream_rng(seed, 0);
    let batch = sample_batch_at(channel, tx.m, snr_db, realizations, &mut rng);
    let rates = evaluate_rates(tx, tx_params, receiver, rx_params, &batch)?;
    Ok(mean_and_stderr(&rates))
}

pub fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub channel: ChannelKind,
    pub m: usize,
    pub k: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub snr_range: [f64; 2],
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub adam: AdamConfig,
    /// `None` selects the exact demapper.
    pub demapper: Option<NnDemapper>,
    /// Iterations without monitor improvement before stopping.
    pub patience: usize,
    pub validate_every: usize,
    /// Monitor-set realizations per grid point.
    pub monitor_realizations: usize,
    pub validation_points: usize,
    /// Final selection realizations per grid point.
    pub validation_realizations: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Psgs,
            channel: ChannelKind::Awgn,
            m: 6,
            k: 4,
            batch_size: 1000,
            learning_rate: 1e-3,
            snr_range: [0.0, 20.0],
            iterations: 10_000,
            seeds: (0..5).collect(),
            adam: AdamConfig::default(),
            demapper: None,
            patience: 1000,
            validate_every: 100,
            monitor_realizations: 20,
            validation_points: 21,
            validation_realizations: 10_000,
        }
    }
}

impl TrainConfig {
    /// Defaults for a scheme: exact demapper with SNR in [0, 20] dB on AWGN,
    /// the standard neural demapper with [5, 25] dB on RBF.
    pub fn for_scheme(model: ModelKind, channel: ChannelKind, m: usize, k: usize) -> Self {
        let mut c = Self {
            model,
            channel,
            m,
            k,
            ..Self::default()
        };
        if channel == ChannelKind::Rbf {
            c.snr_range = [5.0, 25.0];
            c.demapper = Some(NnDemapper::standard(m));
        }
        c
    }

    pub fn validate(&self) -> Result<TransmitterModel, TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.snr_range[0] < self.snr_range[1]) {
            return bad("snr range must satisfy lo < hi");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed required");
        }
        if self.validation_points < 2 || self.validation_realizations == 0 || self.validate_every == 0 {
            return bad("validation grid needs ≥ 2 points, ≥ 1 realization and a positive interval");
        }
        if self.demapper.is_none() && self.channel != ChannelKind::Awgn {
            return Err(TrainError::ExactOnFading);
        }
        if let Some(d) = &self.demapper {
            if d.m != self.m {
                return bad("demapper bit count differs from m");
            }
        }
        Ok(TransmitterModel::new(self.model, self.m, self.k)?)
    }

    fn receiver(&self) -> Receiver {
        match &self.demapper {
            Some(d) => Receiver::Neural(d.clone()),
            None => Receiver::Exact,
        }
    }

    /// `validation_points` SNRs evenly spaced over the training range.
    pub fn validation_grid(&self) -> Vec<f64> {
        let [lo, hi] = self.snr_range;
        let n = self.validation_points;
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    fn validation_set(&self, per_point: usize, stream: u64) -> Vec<BatchExample> {
        let mut rng = stream_rng(VALIDATION_SEED, stream);
        self.validation_grid()
            .into_iter()
            .flat_map(|snr| sample_batch_at(self.channel, self.m, snr, per_point, &mut rng))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub losses: Vec<f64>,
    /// `(iteration, monitor loss)` pairs.
    pub validation: Vec<(usize, f64)>,
    /// Mean loss over the full validation grid, after training.
    pub final_validation_loss: Option<f64>,
}

impl TrainHistory {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "iteration,loss,monitor_loss")?;
        let mut mon = self.validation.iter().peekable();
        for (i, l) in self.losses.iter().enumerate() {
            let v = match mon.peek() {
                Some((it, v)) if *it == i => {
                    let v = *v;
                    mon.next();
                    format!("{v:?}")
                }
                _ => String::new(),
            };
            writeln!(w, "{i},{l:?},{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub history: TrainHistory,
    pub model: TrainedModel,
    pub failure: Option<String>,
}

impl SeedRun {
    /// Writes `seed-<s>.model` and `seed-<s>-history.csv` into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), TrainError> {
        std::fs::create_dir_all(dir)?;
        self.model.save(&dir.join(format!("seed-{}.model", self.seed)))?;
        let f = std::fs::File::create(dir.join(format!("seed-{}-history.csv", self.seed)))?;
        self.history.write_csv(std::io::BufWriter::new(f))?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub runs: Vec<SeedRun>,
    /// Index into `runs` of the lowest final validation loss.
    pub best: Option<usize>,
}

impl TrainOutcome {
    pub fn best_run(&self) -> Option<&SeedRun> {
        self.best.map(|i| &self.runs[i])
    }
}

/// Trains one model per seed and selects the best.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with_progress(config, |_, _, _| {})
}

/// As [`train`], calling `progress(seed, iteration, loss)` after every step.
pub fn train_with_progress(config: &TrainConfig, mut progress: impl FnMut(u64, usize, f64)) -> Result<TrainOutcome, TrainError> {
    let tx = config.validate()?;
    let receiver = config.receiver();
    let monitor = config.validation_set(config.monitor_realizations, 1);
    let validation = config.validation_set(config.validation_realizations, 2);
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let run = train_seed(config, &tx, &receiver, seed, &monitor, &validation, &mut progress)?;
        runs.push(run);
    }
    let best = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.failure.is_none())
        .filter_map(|(i, r)| r.history.final_validation_loss.map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    Ok(TrainOutcome { runs, best })
}

fn mean_loss(
    tx: &TransmitterModel,
    params: &ParamVector,
    receiver: &Receiver,
    rx_params: Option<&ParamVector>,
    set: &[BatchExample],
) -> Result<f64, TrainError> {
    let rates = evaluate_rates(tx, params, receiver, rx_params, set)?;
    Ok(-rates.iter().sum::<f64>() / rates.len() as f64)
}

fn train_seed(
    config: &TrainConfig,
    tx: &TransmitterModel,
    receiver: &Receiver,
    seed: u64,
    monitor: &[BatchExample],
    validation: &[BatchExample],
    progress: &mut impl FnMut(u64, usize, f64),
) -> Result<SeedRun, TrainError> {
    let mut init_rng = stream_rng(seed, 0);
    let mut params = tx.init_params(&mut init_rng);
    let mut rx_params = match receiver {
        Receiver::Neural(d) => Some(d.init_params(&mut init_rng)),
        Receiver::Exact => None,
    };
    let mut tx_state = AdamState::new(params.len());
    let mut rx_state = rx_params.as_ref().map(|p| AdamState::new(p.len()));
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ParamVector, Option<ParamVector>)> = None;
    let mut since_best = 0usize;
    let mut failure = None;
    let range = (config.snr_range[0], config.snr_range[1]);

    for it in 0..config.iterations {
        let mut rng = stream_rng(seed, 1 + it as u64);
        let batch = sample_batch(config.channel, config.m, range, config.batch_size, &mut rng);
        let mut g = Graph::new();
        let tb = params.bind(&mut g);
        let rb = rx_params.as_ref().map(|p| p.bind(&mut g));
        let nodes = loss_estimate(&mut g, tx, &tb, receiver, rb.as_ref(), &batch)?;
        let loss = g.scalar(nodes.loss);
        if !loss.is_finite() {
            let rates = g.value(nodes.rates);
            let (idx, _) = rates.iter().enumerate().find(|(_, r)| !r.is_finite()).unwrap_or((0, &f64::NAN));
            let err = TrainError::NonFinite {
                iteration: it,
                snr_db: batch[idx].snr_db,
                term: format!("batch example {idx}"),
            };
            failure = Some(err.to_string());
            break;
        }
        let grads = g.backward(nodes.loss)?;
        if tx.is_trainable() {
            let gt = tb.flat_gradient(&grads);
            adam_step(params.values_mut(), &gt, &mut tx_state, config.learning_rate, &config.adam);
        }
        if let (Some(rp), Some(rb), Some(st)) = (rx_params.as_mut(), rb.as_ref(), rx_state.as_mut()) {
            let gr = rb.flat_gradient(&grads);
            adam_step(rp.values_mut(), &gr, st, config.learning_rate, &config.adam);
        }
        history.losses.push(loss);
        progress(seed, it, loss);

        if (it + 1) % config.validate_every == 0 {
            let v = mean_loss(tx, &params, receiver, rx_params.as_ref(), monitor)?;
            history.validation.push((it, v));
            if best.as_ref().map_or(true, |(b, _, _)| v < *b) {
                best = Some((v, params.clone(), rx_params.clone()));
                since_best = 0;
            } else {
                since_best += config.validate_every;
                if since_best >= config.patience {
                    break;
                }
            }
        }
    }

    if failure.is_none() {
        if let Some((_, p, r)) = best {
            params = p;
            rx_params = r;
        }
    }
    let final_validation_loss = if failure.is_none() {
        let v = mean_loss(tx, &params, receiver, rx_params.as_ref(), validation)?;
        v.is_finite().then_some(v)
    } else {
        None
    };
    history.final_validation_loss = final_validation_loss;
    let demapper = match (receiver, rx_params) {
        (Receiver::Neural(d), Some(p)) => Some((d.clone(), p)),
        _ => None,
    };
    Ok(SeedRun {
        seed,
        history,
        model: TrainedModel {
            transmitter: *tx,
            params,
            demapper,
        },
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::ChannelRealization;
    use num_complex::Complex64;

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2);
        st.first = vec![0.5, 0.5];
        st.second = vec![0.25, 0.25];
        adam_step(&mut p, &[0.0, 0.0], &mut st, 0.1, &AdamConfig::default());
        // moments decay; update is driven only by the decayed first moment
        assert!((st.first[0] - 0.45).abs() < 1e-15);
        assert!((st.second[0] - 0.24975).abs() < 1e-15);
        let mut p2 = vec![1.0, -2.0];
        let mut fresh = AdamState::new(2);
        adam_step(&mut p2, &[0.0, 0.0], &mut fresh, 0.1, &AdamConfig::default());
        assert_eq!(p2, vec![1.0, -2.0]);
        let _ = p;
    }

    #[test]
    fn adam_constant_gradient_moves_by_lr() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        let cfg = AdamConfig::default();
        let mut last = 0.0;
        for _ in 0..500 {
            let before = p[0];
            adam_step(&mut p, &[3.7], &mut st, 1e-2, &cfg);
            last = before - p[0];
        }
        assert!((last - 1e-2).abs() < 1e-6, "{last}");
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![1.0];
        let mut st = AdamState::new(1);
        for _ in 0..200 {
            let g = 2.0 * x[0];
            adam_step(&mut x, &[g], &mut st, 1e-1, &AdamConfig::default());
        }
        assert!(x[0].abs() < 1e-2, "{}", x[0]);
    }

    #[test]
    fn noiseless_binary_loss_is_minus_one_bit() {
        let tx = TransmitterModel::new(ModelKind::Gs, 1, 1).unwrap();
        let mut p = tx.zero_params();
        // points at ±1 through the bias of the points head
        let mut b = p.view_mut("head.points.b").unwrap();
        b[[0, 0]] = -1.0;
        b[[0, 1]] = 1.0;
        let batch = vec![BatchExample {
            snr_db: 60.0,
            realization: ChannelRealization {
                kind: ChannelKind::Awgn,
                n0: 1e-6,
                noise: vec![Complex64::new(0.0, 0.0); 2],
                fading: None,
                pilot_noise: None,
            },
        }];
        let rates = evaluate_rates(&tx, &p, &Receiver::Exact, None, &batch).unwrap();
        assert!((rates[0] - 1.0).abs() < 1e-12, "{}", rates[0]);
    }

    #[test]
    fn exact_receiver_rejects_fading() {
        let tx = TransmitterModel::new(ModelKind::UniformQam, 4, 2).unwrap();
        let mut rng = stream_rng(1, 1);
        let batch = sample_batch_at(ChannelKind::Rbf, 4, 10.0, 2, &mut rng);
        let r = evaluate_rates(&tx, &ParamVector::new(), &Receiver::Exact, None, &batch);
        assert!(matches!(r, Err(TrainError::ExactOnFading)));
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let cfg = TrainConfig {
            model: ModelKind::Psgs,
            m: 2,
            k: 1,
            iterations: 0,
            seeds: vec![7],
            validation_realizations: 2,
            ..TrainConfig::default()
        };
        let out = train(&cfg).unwrap();
        let run = &out.runs[0];
        assert!(run.history.losses.is_empty());
        let tx = TransmitterModel::new(ModelKind::Psgs, 2, 1).unwrap();
        assert_eq!(run.model.params, tx.init_params(&mut stream_rng(7, 0)));
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.snr_range = [5.0, 5.0];
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.channel = ChannelKind::Rbf;
        assert!(matches!(c.validate(), Err(TrainError::ExactOnFading)));
        let c = TrainConfig::for_scheme(ModelKind::Mbqam, ChannelKind::Rbf, 6, 4);
        assert_eq!(c.snr_range, [5.0, 25.0]);
        assert!(c.validate().is_ok());
        assert_eq!(c.validation_grid().len(), 21);
    }

    #[test]
    fn history_csv_marks_monitor_points() {
        let h = TrainHistory {
            losses: vec![-1.0, -1.5, -2.0],
            validation: vec![(1, -1.25)],
            final_validation_loss: None,
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "iteration,loss,monitor_loss\n0,-1.0,\n1,-1.5,-1.25\n2,-2.0,\n");
    }
}
