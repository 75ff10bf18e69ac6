//! Training orchestration: classifier pretraining, the initial
//! confident/unconfident split, the alternating adversarial loop, and
//! periodic promotion of unconfident instances.
//!
//! The adversarial phase runs a 1:1 alternation per iteration: one sampler
//! SGD step on `L~_S` (hyperplane only, learning rate `alpha_s * lambda`),
//! then one discriminator SGD step on `L~_D` (everything except the
//! hyperplane, learning rate `alpha_d`) with the sampling distribution
//! recomputed under the post-step hyperplane and then frozen.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversarial::{
    confusing_probabilities, confusing_score, discriminator_loss, label_score, sampler_loss,
    score_batch, AdvConfig,
};
use crate::checkpoint;
use crate::corpus::{sample_ids, Corpus, CorpusSplit, Instance};
use crate::encoders::{
    encode_backward, encode_eval, encode_train, Encoded, EncoderConfig, EncoderParams,
};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::{dot, sgd_step, softmax, SgdConfig, Tensor};

/// Optimization and schedule settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Discriminator learning rate.
    pub alpha_d: f64,
    /// Sampler learning rate (multiplied by the harmonic factor lambda).
    pub alpha_s: f64,
    /// Adversarial epochs.
    pub epochs: usize,
    /// Epochs between promotion sweeps.
    pub promotion_period: usize,
    /// Discriminator threshold for promotion.
    pub tau_d: f64,
    /// Fraction q of non-NA instances placed in the confident set initially.
    pub confident_fraction: f64,
    /// Optional global gradient-norm clip for every SGD step.
    pub clip_norm: Option<f64>,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            alpha_d: 0.1,
            alpha_s: 0.01,
            epochs: 100,
            promotion_period: 10,
            tau_d: 0.5,
            confident_fraction: 0.3,
            clip_norm: Some(5.0),
            pretrain_epochs: 50,
            pretrain_lr: 0.02,
            pretrain_batch: 32,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("alpha_d", self.alpha_d),
            ("alpha_s", self.alpha_s),
            ("pretrain_lr", self.pretrain_lr),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{what} must be positive, got {v}")));
            }
        }
        if !(self.confident_fraction > 0.0 && self.confident_fraction < 1.0) {
            return Err(Error::Config(format!(
                "confident_fraction {} not in (0,1)",
                self.confident_fraction
            )));
        }
        if self.promotion_period == 0 {
            return Err(Error::Config("promotion_period must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau_d) {
            return Err(Error::Config(format!("tau_d {} not in [0,1]", self.tau_d)));
        }
        if self.pretrain_batch == 0 {
            return Err(Error::Config("pretrain_batch must be at least 1".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config(format!("clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// One row of the per-epoch metric log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_s: f64,
    pub confident_size: usize,
    pub promoted_count: usize,
}

/// Everything that evolves across adversarial epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub split: CorpusSplit,
    pub params: EncoderParams,
    pub metrics: Vec<EpochMetrics>,
    batch_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(split: CorpusSplit, params: EncoderParams, seed: u64) -> TrainState {
        TrainState {
            epoch: 0,
            split,
            params,
            metrics: Vec::new(),
            batch_rng: stream_rng(seed, Stream::BatchOrder),
            dropout_rng: stream_rng(seed, Stream::Dropout),
        }
    }
}

// ---- pretraining ----

/// Softmax logits of one embedding against every relation row (the
/// relation table doubles as the classifier's output weights).
fn class_logits(y: &Tensor, params: &EncoderParams) -> Vec<f64> {
    let rel = params.rel_emb();
    (0..rel.rows()).map(|r| dot(rel.row(r), y.data())).collect()
}

/// The pretrained classifier's probability of the instance's own label.
pub fn label_probability(inst: &Instance, params: &EncoderParams) -> Result<f64> {
    let enc = encode_eval(inst, params)?;
    let p = softmax(&class_logits(enc.y(), params));
    Ok(p[inst.label])
}

/// Fraction of instances whose argmax class equals their distant label.
pub fn classifier_accuracy(corpus: &Corpus, params: &EncoderParams) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Eval("cannot measure accuracy on an empty corpus".into()));
    }
    let mut hits = 0usize;
    for inst in corpus.instances() {
        let enc = encode_eval(inst, params)?;
        let logits = class_logits(enc.y(), params);
        let pred = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(r, _)| r)
            .unwrap();
        if pred == inst.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / corpus.len() as f64)
}

/// Train encoder + relation table as a plain softmax classifier over the
/// distant labels (cross-entropy, batched SGD). The sampler hyperplane is
/// left at its initialization. Returns freshly initialized parameters when
/// `pretrain_epochs` is zero.
pub fn pretrain_classifier(
    corpus: &Corpus,
    encoder_cfg: &EncoderConfig,
    cfg: &TrainConfig,
) -> Result<EncoderParams> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Train("cannot pretrain on an empty corpus".into()));
    }
    let mut init_rng = stream_rng(cfg.seed, Stream::Init);
    let mut params = EncoderParams::new(encoder_cfg, &mut init_rng)?;
    let mut order_rng = stream_rng(cfg.seed, Stream::BatchOrder);
    let mut dropout_rng = stream_rng(cfg.seed, Stream::Dropout);
    let ids: Vec<u64> = corpus.ids().collect();
    let sgd = SgdConfig {
        learning_rate: cfg.pretrain_lr,
        clip_norm: cfg.clip_norm,
    };
    for epoch in 0..cfg.pretrain_epochs {
        let order = sample_ids(&ids, ids.len(), &mut order_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.pretrain_batch) {
            let scale = 1.0 / batch.len() as f64;
            for &id in batch {
                let inst = corpus.get(id).expect("id from this corpus");
                let enc = encode_train(inst, &params, &mut dropout_rng)?;
                let logits = class_logits(enc.y(), &params);
                let p = softmax(&logits);
                epoch_loss -= scale * p[inst.label].max(1e-12).ln();
                // dL/dz = p - onehot(label), scaled to the batch mean
                let d_y = enc.y().len();
                let mut dy = vec![0.0; d_y];
                {
                    let y = enc.y().data().to_vec();
                    let rel = params.rel_emb_mut();
                    let cols = rel.cols();
                    for (r, &pr) in p.iter().enumerate() {
                        let dz = scale * (pr - if r == inst.label { 1.0 } else { 0.0 });
                        for j in 0..cols {
                            rel.grad_mut()[r * cols + j] += dz * y[j];
                            dy[j] += dz * rel.data()[r * cols + j];
                        }
                    }
                }
                encode_backward(enc, &dy, &mut params)?;
            }
            let mut tensors = params.tensors_mut();
            tensors.retain(|(name, _)| *name != "hyperplane");
            sgd_step(&mut tensors, &sgd)?;
        }
        if !epoch_loss.is_finite() {
            return Err(Error::Train(format!(
                "pretraining diverged at epoch {epoch}: loss {epoch_loss}"
            )));
        }
        log::info!(
            "pretrain epoch {epoch}: mean batch loss {:.4}",
            epoch_loss / (order.len() as f64 / cfg.pretrain_batch as f64).max(1.0)
        );
    }
    Ok(params)
}

// ---- split ----

/// Rank non-NA instances by the pretrained classifier's confidence in
/// their own label; the top `ceil(q*N)` become the confident set, the rest
/// and every NA instance the unconfident set. Ties break toward the lower
/// instance id.
pub fn initial_split(
    corpus: &Corpus,
    params: &EncoderParams,
    confident_fraction: f64,
) -> Result<CorpusSplit> {
    if !(confident_fraction > 0.0 && confident_fraction < 1.0) {
        return Err(Error::Config(format!(
            "confident_fraction {confident_fraction} not in (0,1)"
        )));
    }
    let mut ranked: Vec<(u64, f64)> = Vec::new();
    let mut unconfident = BTreeSet::new();
    for inst in corpus.instances() {
        if inst.label == 0 {
            unconfident.insert(inst.id);
        } else {
            ranked.push((inst.id, label_probability(inst, params)?));
        }
    }
    if ranked.is_empty() {
        return Err(Error::Config(
            "corpus has no non-NA instances; confident set would be empty".into(),
        ));
    }
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let take = (confident_fraction * ranked.len() as f64).ceil() as usize;
    let mut confident = BTreeSet::new();
    for (i, (id, _)) in ranked.into_iter().enumerate() {
        if i < take {
            confident.insert(id);
        } else {
            unconfident.insert(id);
        }
    }
    CorpusSplit::new(confident, unconfident)
}

// ---- adversarial loop ----

fn encode_batch(
    corpus: &Corpus,
    ids: &[u64],
    params: &EncoderParams,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Encoded>, Vec<usize>)> {
    let mut encs = Vec::with_capacity(ids.len());
    let mut labels = Vec::with_capacity(ids.len());
    for &id in ids {
        let inst = corpus
            .get(id)
            .ok_or_else(|| Error::Train(format!("split references unknown instance {id}")))?;
        encs.push(encode_train(inst, params, rng)?);
        labels.push(inst.label);
    }
    Ok((encs, labels))
}

const DIVERGENCE_LIMIT: f64 = 1e6;

/// Run `cfg.epochs` adversarial epochs. Each epoch covers the unconfident
/// pool once in expectation; every `promotion_period` epochs the promotion
/// sweep runs. With `checkpoint_dir` set, a checkpoint is written after
/// each promotion sweep and at termination.
pub fn train_adversarial(
    corpus: &Corpus,
    mut state: TrainState,
    cfg: &TrainConfig,
    adv: &AdvConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainState> {
    cfg.validate()?;
    adv.validate()?;
    if state.split.confident().is_empty() {
        return Err(Error::Config("confident set is empty; nothing to discriminate".into()));
    }
    let sampler_sgd = SgdConfig {
        learning_rate: cfg.alpha_s * adv.lambda,
        clip_norm: cfg.clip_norm,
    };
    let disc_sgd = SgdConfig {
        learning_rate: cfg.alpha_d,
        clip_norm: cfg.clip_norm,
    };
    for _ in 0..cfg.epochs {
        let conf_ids: Vec<u64> = state.split.confident().iter().copied().collect();
        let unconf_ids: Vec<u64> = state.split.unconfident().iter().copied().collect();
        if unconf_ids.is_empty() {
            log::warn!("unconfident set is empty at epoch {}; stopping early", state.epoch);
            break;
        }
        let iterations = unconf_ids.len().div_ceil(adv.unconf_batch);
        let (mut sum_d, mut sum_s) = (0.0, 0.0);
        for iter in 0..iterations {
            let batch_c = sample_ids(&conf_ids, adv.conf_batch, &mut state.batch_rng);
            let batch_u = sample_ids(&unconf_ids, adv.unconf_batch, &mut state.batch_rng);
            let (conf_encs, conf_labels) =
                encode_batch(corpus, &batch_c, &state.params, &mut state.dropout_rng)?;
            let (unconf_encs, unconf_labels) =
                encode_batch(corpus, &batch_u, &state.params, &mut state.dropout_rng)?;

            // sampler step: L~_S backward into W only
            let unconf_ys: Vec<&Tensor> = unconf_encs.iter().map(|e| e.y()).collect();
            let scores =
                score_batch(&unconf_ys, &batch_u, &unconf_labels, &state.params, adv.alpha)?;
            let loss_s = sampler_loss(&unconf_ys, &scores, &mut state.params)?;
            sgd_step(
                &mut [("hyperplane", state.params.hyperplane_mut())],
                &sampler_sgd,
            )?;

            // discriminator step: freeze Q under the updated hyperplane
            let c_new: Result<Vec<f64>> = unconf_ys
                .iter()
                .map(|y| confusing_score(y, &state.params))
                .collect();
            let q = confusing_probabilities(&c_new?, adv.alpha)?;
            let conf_ys: Vec<&Tensor> = conf_encs.iter().map(|e| e.y()).collect();
            let grads = discriminator_loss(
                &conf_ys,
                &conf_labels,
                &unconf_ys,
                &unconf_labels,
                &q,
                &mut state.params,
            )?;
            drop(conf_ys);
            drop(unconf_ys);
            for (enc, dy) in conf_encs.into_iter().zip(&grads.conf_dy) {
                encode_backward(enc, dy, &mut state.params)?;
            }
            for (enc, dy) in unconf_encs.into_iter().zip(&grads.unconf_dy) {
                encode_backward(enc, dy, &mut state.params)?;
            }
            let mut tensors = state.params.tensors_mut();
            tensors.retain(|(name, _)| *name != "hyperplane");
            sgd_step(&mut tensors, &disc_sgd)?;

            let loss_d = grads.loss;
            if !loss_d.is_finite() || !loss_s.is_finite() || loss_d > DIVERGENCE_LIMIT {
                return Err(Error::Train(format!(
                    "diverged at epoch {} iteration {iter}: L_D={loss_d:.3e} L_S={loss_s:.3e} \
                     |I_c|={} |I_u|={}",
                    state.epoch,
                    conf_ids.len(),
                    unconf_ids.len()
                )));
            }
            sum_d += loss_d;
            sum_s += loss_s;
        }
        state.epoch += 1;
        let promoted = if state.epoch % cfg.promotion_period == 0 {
            let moved = promote(corpus, &mut state.split, &state.params, cfg.tau_d)?;
            if let Some(dir) = checkpoint_dir {
                checkpoint::save(&state.params, &dir.join(format!("epoch-{:04}.ckpt", state.epoch)))?;
            }
            moved.len()
        } else {
            0
        };
        let m = EpochMetrics {
            epoch: state.epoch,
            loss_d: sum_d / iterations as f64,
            loss_s: sum_s / iterations as f64,
            confident_size: state.split.confident().len(),
            promoted_count: promoted,
        };
        log::info!(
            "epoch {}: L_D {:.4} L_S {:.4} |I_c| {} promoted {}",
            m.epoch,
            m.loss_d,
            m.loss_s,
            m.confident_size,
            m.promoted_count
        );
        state.metrics.push(m);
    }
    if let Some(dir) = checkpoint_dir {
        checkpoint::save(&state.params, &dir.join("final.ckpt"))?;
    }
    Ok(state)
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Promotion sweep: a non-NA unconfident instance moves to the confident
/// set iff the discriminator recognizes it (`D >= tau_d`) and the sampler
/// ranks it strictly above the median confusing score of the whole
/// unconfident pool. With a single unconfident instance the rank criterion
/// degenerates and only the discriminator decides. Returns the moved ids.
pub fn promote(
    corpus: &Corpus,
    split: &mut CorpusSplit,
    params: &EncoderParams,
    tau_d: f64,
) -> Result<Vec<u64>> {
    let unconf: Vec<u64> = split.unconfident().iter().copied().collect();
    if unconf.is_empty() {
        return Ok(Vec::new());
    }
    let mut confusing = Vec::with_capacity(unconf.len());
    let mut disc = Vec::with_capacity(unconf.len());
    let mut labels = Vec::with_capacity(unconf.len());
    for &id in &unconf {
        let inst = corpus
            .get(id)
            .ok_or_else(|| Error::Train(format!("split references unknown instance {id}")))?;
        let enc = encode_eval(inst, params)?;
        confusing.push(confusing_score(enc.y(), params)?);
        disc.push(label_score(enc.y(), inst.label, params)?);
        labels.push(inst.label);
    }
    let med = median(confusing.clone());
    let single = unconf.len() == 1;
    let mut moved = Vec::new();
    for (i, &id) in unconf.iter().enumerate() {
        if labels[i] == 0 {
            continue; // NA instances stay unconfident
        }
        if disc[i] >= tau_d && (single || confusing[i] > med) {
            split.promote(id)?;
            moved.push(id);
        }
    }
    Ok(moved)
}

/// Write the per-epoch metric log as CSV.
pub fn write_metrics_csv(metrics: &[EpochMetrics], path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "epoch,loss_d,loss_s,confident_size,promoted_count")?;
    for m in metrics {
        writeln!(
            f,
            "{},{},{},{},{}",
            m.epoch, m.loss_d, m.loss_s, m.confident_size, m.promoted_count
        )?;
    }
    f.flush()?;
    Ok(())
}
