//! Sampler and discriminator scores, probabilities and losses.
//!
//! The two players share one parameter struct but own disjoint pieces:
//! the sampler owns the hyperplane `W` behind the confusing score
//! `C(s) = W·y`, the discriminator owns the encoder weights and the
//! relation embeddings behind `D(s, r_s) = sigmoid(r_s · y)`.
//!
//! Both losses implement a stop-gradient boundary explicitly: the sampler
//! loss treats every `D` value as a constant and backpropagates only into
//! `W`; the discriminator loss treats the sampling weights `Q_u` as
//! constants and backpropagates only into the encoder and relation
//! embeddings. The finite-difference tests freeze the same quantities.

use crate::encoders::EncoderParams;
use crate::error::{Error, Result};
use crate::tensor::{dot, sigmoid, softmax, Tensor};

/// Scores are clamped this far away from {0, 1} so logs stay finite.
const SCORE_EPS: f64 = 1e-12;

/// Adversarial game settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdvConfig {
    /// Sharpness of the sampling distribution `Q_u`; 1 reduces it to the
    /// plain softmax of the confusing scores.
    pub alpha: f64,
    /// Harmonic factor between the two losses. Folded into the sampler's
    /// effective learning rate (`alpha_s * lambda`) by the trainer.
    pub lambda: f64,
    /// Confident sub-batch size.
    pub conf_batch: usize,
    /// Unconfident sub-batch size.
    pub unconf_batch: usize,
}

impl Default for AdvConfig {
    fn default() -> AdvConfig {
        AdvConfig {
            alpha: 1.0,
            lambda: 1.0,
            conf_batch: 64,
            unconf_batch: 128,
        }
    }
}

impl AdvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.conf_batch == 0 || self.unconf_batch == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        Ok(())
    }
}

// ---- scores ----

fn relation_row<'a>(params: &'a EncoderParams, r: usize, y: &Tensor) -> Result<&'a [f64]> {
    let rel = params.rel_emb();
    if r >= rel.rows() {
        return Err(Error::Validation(format!(
            "relation id {r} out of range ({} relations)",
            rel.rows()
        )));
    }
    if y.len() != rel.cols() {
        return Err(Error::Dim(format!(
            "embedding has {} dims, relation rows have {}",
            y.len(),
            rel.cols()
        )));
    }
    Ok(rel.row(r))
}

fn clamp_score(d: f64) -> f64 {
    d.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

/// `D(s, r) = sigmoid(r · y)` for a non-NA relation `r`.
pub fn discriminator_score(y: &Tensor, r: usize, params: &EncoderParams) -> Result<f64> {
    if r == 0 {
        return Err(Error::Validation(
            "relation 0 is NA; its score is the mean over real relations (na_score)".into(),
        ));
    }
    let row = relation_row(params, r, y)?;
    Ok(clamp_score(sigmoid(dot(row, y.data()))))
}

/// `D(s, NA)`: the mean discriminator score over every real relation.
pub fn na_score(y: &Tensor, params: &EncoderParams) -> Result<f64> {
    let n_rel = params.rel_emb().rows();
    let mut sum = 0.0;
    for r in 1..n_rel {
        let row = relation_row(params, r, y)?;
        sum += sigmoid(dot(row, y.data()));
    }
    Ok(clamp_score(sum / (n_rel - 1) as f64))
}

/// Discriminator score under an instance's own label, dispatching NA to
/// [`na_score`].
pub fn label_score(y: &Tensor, label: usize, params: &EncoderParams) -> Result<f64> {
    if label == 0 {
        na_score(y, params)
    } else {
        discriminator_score(y, label, params)
    }
}

/// `C(s) = W·y`: signed distance-like score of the sampler's hyperplane.
pub fn confusing_score(y: &Tensor, params: &EncoderParams) -> Result<f64> {
    let w = params.hyperplane();
    if w.len() != y.len() {
        return Err(Error::Dim(format!(
            "embedding has {} dims, hyperplane has {}",
            y.len(),
            w.len()
        )));
    }
    Ok(dot(w.data(), y.data()))
}

/// Sign-preserving power `g(c) = sign(c)·|c|^alpha`; the identity at
/// `alpha = 1`, where `Q_u` coincides with the plain softmax `P_u`.
fn sharpen(c: f64, alpha: f64) -> f64 {
    if alpha == 1.0 {
        c
    } else {
        c.signum() * c.abs().powf(alpha)
    }
}

/// `dg/dc = alpha·|c|^(alpha-1)` (1 at `alpha = 1`; 0 at the origin kink).
fn sharpen_grad(c: f64, alpha: f64) -> f64 {
    if alpha == 1.0 {
        1.0
    } else if c == 0.0 {
        0.0
    } else {
        alpha * c.abs().powf(alpha - 1.0)
    }
}

/// `Q_u(s) = exp(g(C(s))) / sum exp(g(C(s')))` over one unconfident batch.
pub fn confusing_probabilities(scores: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::Validation("cannot normalize an empty score list".into()));
    }
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    let g: Vec<f64> = scores.iter().map(|&c| sharpen(c, alpha)).collect();
    let mut q = softmax(&g);
    // extreme score gaps underflow exp() to 0; floor keeps Q_u positive
    for p in q.iter_mut() {
        if *p < f64::MIN_POSITIVE {
            *p = f64::MIN_POSITIVE;
        }
    }
    Ok(q)
}

/// Per-batch score bundle: confusing scores, label-conditioned
/// discriminator scores and the sampling distribution over the batch.
#[derive(Debug, Clone)]
pub struct BatchScores {
    pub ids: Vec<u64>,
    pub labels: Vec<usize>,
    /// `C(s)` per instance.
    pub confusing: Vec<f64>,
    /// `D(s, r_s)` per instance (NA dispatched to the mean score).
    pub disc: Vec<f64>,
    /// `Q_u` over this batch; positive, sums to 1.
    pub q: Vec<f64>,
    /// Sharpness the `q` values were computed with.
    pub alpha: f64,
}

impl BatchScores {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.ids.len();
        if [self.labels.len(), self.confusing.len(), self.disc.len(), self.q.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(Error::Validation("batch score vectors disagree in length".into()));
        }
        if self.q.iter().any(|&q| !(q > 0.0)) {
            return Err(Error::Validation("Q_u entries must be positive".into()));
        }
        let sum: f64 = self.q.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!("Q_u sums to {sum}, not 1")));
        }
        if self.disc.iter().any(|&d| !(d > 0.0 && d < 1.0)) {
            return Err(Error::Validation("discriminator scores must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// Score one batch of already-encoded instances under the current
/// parameters.
pub fn score_batch(
    ys: &[&Tensor],
    ids: &[u64],
    labels: &[usize],
    params: &EncoderParams,
    alpha: f64,
) -> Result<BatchScores> {
    if ys.len() != ids.len() || ys.len() != labels.len() {
        return Err(Error::Validation("batch inputs disagree in length".into()));
    }
    let mut confusing = Vec::with_capacity(ys.len());
    let mut disc = Vec::with_capacity(ys.len());
    for (y, &label) in ys.iter().zip(labels) {
        confusing.push(confusing_score(y, params)?);
        disc.push(label_score(y, label, params)?);
    }
    let q = confusing_probabilities(&confusing, alpha)?;
    let scores = BatchScores {
        ids: ids.to_vec(),
        labels: labels.to_vec(),
        confusing,
        disc,
        q,
        alpha,
    };
    scores.check()?;
    Ok(scores)
}

fn safe_ln(x: f64, what: &str) -> f64 {
    if x < SCORE_EPS {
        log::warn!("clamping log argument for {what}: {x:.3e}");
        SCORE_EPS.ln()
    } else {
        x.ln()
    }
}

// ---- sampler loss ----

/// `L~_S = -sum_j Q_u(s_j) · log D(s_j, r_j)` over one unconfident batch.
///
/// Backpropagates only into the hyperplane `W` (through `Q_u`); every `D`
/// value is a constant here. `scores` must have been computed under the
/// current parameters.
pub fn sampler_loss(
    ys: &[&Tensor],
    scores: &BatchScores,
    params: &mut EncoderParams,
) -> Result<f64> {
    scores.check()?;
    if ys.len() != scores.len() {
        return Err(Error::Validation("batch embeddings disagree with scores".into()));
    }
    let log_d: Vec<f64> = scores.disc.iter().map(|&d| safe_ln(d, "D(s,r)")).collect();
    let loss: f64 = -scores.q.iter().zip(&log_d).map(|(q, l)| q * l).sum::<f64>();
    let mean_log_d: f64 = scores.q.iter().zip(&log_d).map(|(q, l)| q * l).sum();
    let w_grad = params.hyperplane_mut().grad_mut();
    for j in 0..ys.len() {
        // softmax jacobian through g, then dC/dW = y
        let dg = -scores.q[j] * (log_d[j] - mean_log_d);
        let dc = dg * sharpen_grad(scores.confusing[j], scores.alpha);
        for (gw, yv) in w_grad.iter_mut().zip(ys[j].data()) {
            *gw += dc * yv;
        }
    }
    Ok(loss)
}

/// Value of the sampler loss recomputed from scratch (used by the
/// finite-difference tests; `D` does not depend on `W`, so perturbing `W`
/// through this function exercises exactly the `Q_u` path).
pub fn sampler_loss_value(
    ys: &[&Tensor],
    labels: &[usize],
    params: &EncoderParams,
    alpha: f64,
) -> Result<f64> {
    let confusing: Result<Vec<f64>> = ys.iter().map(|y| confusing_score(y, params)).collect();
    let q = confusing_probabilities(&confusing?, alpha)?;
    let mut loss = 0.0;
    for ((y, &label), q) in ys.iter().zip(labels).zip(&q) {
        loss -= q * safe_ln(label_score(y, label, params)?, "D(s,r)");
    }
    Ok(loss)
}

// ---- discriminator loss ----

/// Gradients the discriminator loss hands back to the caller: `dL/dy` per
/// instance, to be pushed through each encoder trace. Relation-embedding
/// gradients are already accumulated in the parameter struct.
#[derive(Debug)]
pub struct DiscGrads {
    pub loss: f64,
    pub conf_dy: Vec<Vec<f64>>,
    pub unconf_dy: Vec<Vec<f64>>,
}

/// Accumulate `coeff = dL/dD` through `D(s, label)` into `rel_emb.grad`
/// and `dy`.
fn label_score_backward(
    y: &Tensor,
    label: usize,
    coeff: f64,
    params: &mut EncoderParams,
    dy: &mut [f64],
) -> Result<()> {
    let n_rel = params.rel_emb().rows();
    let (relations, weight): (Vec<usize>, f64) = if label == 0 {
        ((1..n_rel).collect(), 1.0 / (n_rel - 1) as f64)
    } else {
        (vec![label], 1.0)
    };
    for r in relations {
        let row = relation_row(params, r, y)?;
        let s = sigmoid(dot(row, y.data()));
        let dz = coeff * weight * s * (1.0 - s);
        let rel = params.rel_emb_mut();
        let cols = rel.cols();
        for j in 0..cols {
            dy[j] += dz * rel.data()[r * cols + j];
            rel.grad_mut()[r * cols + j] += dz * y.data()[j];
        }
    }
    Ok(())
}

/// `L~_D = -(1/|I_c|)·sum_conf log D(s,r_s) - sum_unconf Q_u(s)·log(1-D(s,r_s))`.
///
/// The `Q_u` weights are constants here (the sampler's most recent
/// distribution); gradients flow into the relation embeddings directly and
/// into each `y` via the returned `dL/dy` vectors, never into `W`.
pub fn discriminator_loss(
    conf_ys: &[&Tensor],
    conf_labels: &[usize],
    unconf_ys: &[&Tensor],
    unconf_labels: &[usize],
    unconf_q: &[f64],
    params: &mut EncoderParams,
) -> Result<DiscGrads> {
    if conf_ys.is_empty() {
        return Err(Error::Train(
            "discriminator loss needs a non-empty confident batch".into(),
        ));
    }
    if conf_ys.len() != conf_labels.len()
        || unconf_ys.len() != unconf_labels.len()
        || unconf_ys.len() != unconf_q.len()
    {
        return Err(Error::Validation("batch inputs disagree in length".into()));
    }
    let d_y = params.rel_emb().cols();
    let inv_conf = 1.0 / conf_ys.len() as f64;
    let mut loss = 0.0;
    let mut conf_dy = Vec::with_capacity(conf_ys.len());
    for (y, &label) in conf_ys.iter().zip(conf_labels) {
        let d = label_score(y, label, params)?;
        loss -= inv_conf * safe_ln(d, "confident D(s,r)");
        // d(-log D)/dD = -1/D
        let coeff = -inv_conf / d;
        let mut dy = vec![0.0; d_y];
        label_score_backward(y, label, coeff, params, &mut dy)?;
        conf_dy.push(dy);
    }
    let mut unconf_dy = Vec::with_capacity(unconf_ys.len());
    for ((y, &label), &q) in unconf_ys.iter().zip(unconf_labels).zip(unconf_q) {
        let d = label_score(y, label, params)?;
        loss -= q * safe_ln(1.0 - d, "unconfident 1-D(s,r)");
        // d(-q·log(1-D))/dD = q/(1-D)
        let coeff = q / (1.0 - d);
        let mut dy = vec![0.0; d_y];
        label_score_backward(y, label, coeff, params, &mut dy)?;
        unconf_dy.push(dy);
    }
    Ok(DiscGrads {
        loss,
        conf_dy,
        unconf_dy,
    })
}

/// Value of the discriminator loss with the sampling weights frozen at
/// `unconf_q` (the finite-difference counterpart of [`discriminator_loss`]).
pub fn discriminator_loss_value(
    conf_ys: &[&Tensor],
    conf_labels: &[usize],
    unconf_ys: &[&Tensor],
    unconf_labels: &[usize],
    unconf_q: &[f64],
    params: &EncoderParams,
) -> Result<f64> {
    if conf_ys.is_empty() {
        return Err(Error::Train(
            "discriminator loss needs a non-empty confident batch".into(),
        ));
    }
    let inv_conf = 1.0 / conf_ys.len() as f64;
    let mut loss = 0.0;
    for (y, &label) in conf_ys.iter().zip(conf_labels) {
        loss -= inv_conf * safe_ln(label_score(y, label, params)?, "confident D(s,r)");
    }
    for ((y, &label), &q) in unconf_ys.iter().zip(unconf_labels).zip(unconf_q) {
        loss -= q * safe_ln(1.0 - label_score(y, label, params)?, "unconfident 1-D(s,r)");
    }
    Ok(loss)
}

/// Both loss values under the current parameters (the full objective is
/// `L~_D + lambda·L~_S`; the trainer realizes `lambda` as a learning-rate
/// factor instead of scaling the loss).
pub fn combined_objective(
    conf_ys: &[&Tensor],
    conf_labels: &[usize],
    unconf_ys: &[&Tensor],
    unconf_labels: &[usize],
    params: &EncoderParams,
    alpha: f64,
) -> Result<(f64, f64)> {
    let confusing: Result<Vec<f64>> = unconf_ys.iter().map(|y| confusing_score(y, params)).collect();
    let q = confusing_probabilities(&confusing?, alpha)?;
    let loss_d =
        discriminator_loss_value(conf_ys, conf_labels, unconf_ys, unconf_labels, &q, params)?;
    let loss_s = sampler_loss_value(unconf_ys, unconf_labels, params, alpha)?;
    Ok((loss_d, loss_s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{encode_eval, encode_train, Arch, EncoderConfig, EncoderParams};
    use crate::gradcheck::{check_params, max_rel_err, rel_err};
    use crate::tensor::{sgd_step, SgdConfig};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Model with d_y = 1 so scores can be set exactly through rel rows.
    fn scalar_model(n_relations: usize) -> EncoderParams {
        let cfg = EncoderConfig {
            arch: Arch::Cnn,
            vocab_size: 4,
            n_relations,
            max_len: 4,
            k_w: 1,
            k_p: 1,
            k_h: 1,
            window: 1,
            dropout_p: 0.0,
        };
        EncoderParams::zeros(&cfg).unwrap()
    }

    fn t1(v: &[f64]) -> Tensor {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn discriminator_score_oracles() {
        // zero relation row -> 0.5 for any y
        let params = scalar_model(3);
        let y = t1(&[2.5]);
        assert_eq!(discriminator_score(&y, 1, &params).unwrap(), 0.5);

        // unit·unit = 1 -> sigmoid(1)
        let mut params = scalar_model(3);
        params.rel_emb_mut().data_mut()[1] = 1.0;
        let y = t1(&[1.0]);
        let d = discriminator_score(&y, 1, &params).unwrap();
        assert!((d - 0.7310585786300049).abs() < 1e-15);

        // random 4-dim case against a direct dot-then-sigmoid recomputation
        let cfg = EncoderConfig {
            arch: Arch::Cnn,
            vocab_size: 4,
            n_relations: 3,
            max_len: 4,
            k_w: 2,
            k_p: 1,
            k_h: 4,
            window: 1,
            dropout_p: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = EncoderParams::new(&cfg, &mut rng).unwrap();
        let y = Tensor::uniform(&[4], 1.0, &mut rng);
        let row = params.rel_emb().row(2);
        let z: f64 = row.iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let expect = 1.0 / (1.0 + (-z).exp());
        assert!((discriminator_score(&y, 2, &params).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn discriminator_score_rejects_na_and_out_of_range() {
        let params = scalar_model(3);
        let y = t1(&[1.0]);
        assert!(matches!(
            discriminator_score(&y, 0, &params),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            discriminator_score(&y, 3, &params),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn na_score_is_exact_mean() {
        // scores {0.2, 0.6} -> 0.4
        let mut params = scalar_model(3);
        params.rel_emb_mut().data_mut()[1] = logit(0.2);
        params.rel_emb_mut().data_mut()[2] = logit(0.6);
        let y = t1(&[1.0]);
        assert!((na_score(&y, &params).unwrap() - 0.4).abs() < 1e-12);

        // zero embeddings -> 0.5
        let zeros = scalar_model(5);
        assert_eq!(na_score(&y, &zeros).unwrap(), 0.5);

        // |R| = 2 -> the single non-NA score
        let mut two = scalar_model(2);
        two.rel_emb_mut().data_mut()[1] = logit(0.85);
        let d = discriminator_score(&y, 1, &two).unwrap();
        assert_eq!(na_score(&y, &two).unwrap(), d);
    }

    #[test]
    fn confusing_score_oracles() {
        let params = scalar_model(3);
        let y = t1(&[3.0]);
        assert_eq!(confusing_score(&y, &params).unwrap(), 0.0);

        let mut params = scalar_model(3);
        params.hyperplane_mut().data_mut()[0] = 1.0;
        assert_eq!(confusing_score(&t1(&[1.0]), &params).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = EncoderConfig {
            arch: Arch::Cnn,
            vocab_size: 4,
            n_relations: 2,
            max_len: 4,
            k_w: 2,
            k_p: 1,
            k_h: 5,
            window: 1,
            dropout_p: 0.0,
        };
        let params = EncoderParams::new(&cfg, &mut rng).unwrap();
        let y = Tensor::uniform(&[5], 1.0, &mut rng);
        let expect: f64 = params
            .hyperplane()
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| a * b)
            .sum();
        assert!((confusing_score(&y, &params).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn confusing_probabilities_oracles() {
        // equal scores -> uniform
        let q = confusing_probabilities(&[0.7, 0.7, 0.7, 0.7], 1.0).unwrap();
        for p in &q {
            assert!((p - 0.25).abs() < 1e-15);
        }
        // alpha=1, scores (0, ln 2) -> (1/3, 2/3)
        let q = confusing_probabilities(&[0.0, 2.0f64.ln()], 1.0).unwrap();
        assert!((q[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((q[1] - 2.0 / 3.0).abs() < 1e-12);
        // alpha=3 against an independent g-then-softmax recomputation
        let c = [-0.5, 0.5, 1.0];
        let q = confusing_probabilities(&c, 3.0).unwrap();
        let g: Vec<f64> = c.iter().map(|&x| x.signum() * x.abs().powi(3)).collect();
        let z: f64 = g.iter().map(|&x| x.exp()).sum();
        for (qi, gi) in q.iter().zip(&g) {
            assert!((qi - gi.exp() / z).abs() < 1e-12);
        }
        assert!(confusing_probabilities(&[], 1.0).is_err());
        assert!(confusing_probabilities(&[1.0], 0.0).is_err());
    }

    fn manual_scores(disc: &[f64], confusing: &[f64], alpha: f64) -> BatchScores {
        let q = confusing_probabilities(confusing, alpha).unwrap();
        BatchScores {
            ids: (0..disc.len() as u64).collect(),
            labels: vec![1; disc.len()],
            confusing: confusing.to_vec(),
            disc: disc.to_vec(),
            q,
            alpha,
        }
    }

    #[test]
    fn sampler_loss_analytic_cases() {
        let mut params = scalar_model(3);
        let ys: Vec<Tensor> = vec![t1(&[0.0]), t1(&[0.0])];
        let refs: Vec<&Tensor> = ys.iter().collect();

        // every D at the top of its range -> loss vanishes
        let top = 1.0 - SCORE_EPS;
        let scores = manual_scores(&[top, top], &[0.3, -0.3], 1.0);
        let loss = sampler_loss(&refs, &scores, &mut params).unwrap();
        assert!(loss.abs() < 1e-9, "loss {loss}");

        // single instance: Q = 1, D = e^-1 -> loss 1
        let scores = manual_scores(&[(-1.0f64).exp()], &[0.2], 1.0);
        let loss = sampler_loss(&refs[..1], &scores, &mut params).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
    }

    /// Random toy model with every score in a sane range.
    fn toy_model_and_batch(
        seed: u64,
        n: usize,
    ) -> (EncoderParams, Vec<Tensor>, Vec<usize>) {
        let cfg = EncoderConfig {
            arch: Arch::Cnn,
            vocab_size: 6,
            n_relations: 4,
            max_len: 6,
            k_w: 2,
            k_p: 1,
            k_h: 3,
            window: 1,
            dropout_p: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = EncoderParams::new(&cfg, &mut rng).unwrap();
        let ys: Vec<Tensor> = (0..n).map(|_| Tensor::uniform(&[3], 1.0, &mut rng)).collect();
        // labels cycle through NA and real relations
        let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
        (params, ys, labels)
    }

    #[test]
    fn sampler_loss_matches_term_by_term_sum() {
        let (mut params, ys, labels) = toy_model_and_batch(3, 3);
        let refs: Vec<&Tensor> = ys.iter().collect();
        let ids = [0u64, 1, 2];
        let scores = score_batch(&refs, &ids, &labels, &params, 1.0).unwrap();
        let loss = sampler_loss(&refs, &scores, &mut params).unwrap();
        let manual: f64 = scores
            .q
            .iter()
            .zip(&scores.disc)
            .map(|(q, d)| -q * d.ln())
            .sum();
        assert!((loss - manual).abs() < 1e-12);
    }

    #[test]
    fn sampler_gradient_touches_only_the_hyperplane() {
        let (mut params, ys, labels) = toy_model_and_batch(4, 5);
        let refs: Vec<&Tensor> = ys.iter().collect();
        let ids: Vec<u64> = (0..5).collect();
        let scores = score_batch(&refs, &ids, &labels, &params, 1.0).unwrap();
        sampler_loss(&refs, &scores, &mut params).unwrap();
        for name in params.tensor_names() {
            let nonzero = params.tensor(name).grad().iter().any(|&g| g != 0.0);
            if name == "hyperplane" {
                assert!(nonzero, "W received no gradient");
            } else {
                assert!(!nonzero, "{name} received sampler gradient");
            }
        }
    }

    #[test]
    fn sampler_gradient_matches_finite_differences() {
        for alpha in [1.0, 3.0] {
            let (mut params, ys, labels) = toy_model_and_batch(5, 4);
            let refs: Vec<&Tensor> = ys.iter().collect();
            let ids: Vec<u64> = (0..4).collect();
            let scores = score_batch(&refs, &ids, &labels, &params, alpha).unwrap();
            sampler_loss(&refs, &scores, &mut params).unwrap();
            let analytic = params.hyperplane().grad().to_vec();
            let step = 1e-5;
            let mut numeric = vec![0.0; analytic.len()];
            for i in 0..numeric.len() {
                let orig = params.hyperplane().data()[i];
                params.hyperplane_mut().data_mut()[i] = orig + step;
                let up = sampler_loss_value(&refs, &labels, &params, alpha).unwrap();
                params.hyperplane_mut().data_mut()[i] = orig - step;
                let down = sampler_loss_value(&refs, &labels, &params, alpha).unwrap();
                params.hyperplane_mut().data_mut()[i] = orig;
                numeric[i] = (up - down) / (2.0 * step);
            }
            assert!(
                max_rel_err(&analytic, &numeric) < 1e-4,
                "alpha={alpha}: {:?} vs {:?}",
                analytic,
                numeric
            );
        }
    }

    #[test]
    fn equal_disc_scores_leave_w_untouched() {
        // identical D values make every softmax-jacobian term vanish
        let mut params = scalar_model(3);
        let ys: Vec<Tensor> = vec![t1(&[1.0]), t1(&[-2.0]), t1(&[0.5])];
        let refs: Vec<&Tensor> = ys.iter().collect();
        let scores = manual_scores(&[0.7, 0.7, 0.7], &[0.9, -0.4, 0.1], 1.0);
        sampler_loss(&refs, &scores, &mut params).unwrap();
        assert!(params.hyperplane().grad().iter().all(|&g| g.abs() < 1e-15));
    }

    #[test]
    fn discriminator_loss_analytic_cases() {
        // optimum: conf D ~ 1 and unconf D ~ 0 -> loss ~ 0
        let mut params = scalar_model(2);
        params.rel_emb_mut().data_mut()[1] = 40.0;
        let hi = t1(&[1.0]); // sigmoid(40) -> clamped just below 1
        let lo = t1(&[-1.0]); // sigmoid(-40) -> just above 0
        let grads = discriminator_loss(&[&hi], &[1], &[&lo], &[1], &[1.0], &mut params).unwrap();
        assert!(grads.loss.abs() < 1e-9, "loss {}", grads.loss);

        // all scores 0.5 -> ln 2 + ln 2
        let mut params = scalar_model(3);
        let y = t1(&[0.7]);
        let q = [0.25; 4];
        let grads = discriminator_loss(
            &[&y, &y],
            &[1, 2],
            &[&y, &y, &y, &y],
            &[1, 2, 1, 0],
            &q,
            &mut params,
        )
        .unwrap();
        assert!((grads.loss - 2.0 * 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn discriminator_loss_matches_term_by_term_oracle() {
        let (mut params, ys, labels) = toy_model_and_batch(6, 6);
        let refs: Vec<&Tensor> = ys.iter().collect();
        let (conf_ys, unconf_ys) = refs.split_at(2);
        let (_, unconf_labels) = labels.split_at(2);
        // confident labels are non-NA, as the trainer guarantees
        let conf_labels = [1usize, 2];
        let ids: Vec<u64> = (0..4).collect();
        let scores = score_batch(unconf_ys, &ids, unconf_labels, &params, 1.0).unwrap();
        let grads = discriminator_loss(
            conf_ys,
            &conf_labels,
            unconf_ys,
            unconf_labels,
            &scores.q,
            &mut params,
        )
        .unwrap();
        let mut manual = 0.0;
        for (y, &l) in conf_ys.iter().zip(conf_labels.iter()) {
            manual -= 0.5 * label_score(y, l, &params).unwrap().ln();
        }
        for ((y, &l), &q) in unconf_ys.iter().zip(unconf_labels).zip(&scores.q) {
            manual -= q * (1.0 - label_score(y, l, &params).unwrap()).ln();
        }
        assert!((grads.loss - manual).abs() < 1e-12);
    }

    #[test]
    fn discriminator_rejects_empty_confident_batch() {
        let (mut params, ys, labels) = toy_model_and_batch(7, 2);
        let refs: Vec<&Tensor> = ys.iter().collect();
        let err =
            discriminator_loss(&[], &[], &refs, &labels, &[0.5, 0.5], &mut params).unwrap_err();
        assert!(matches!(err, Error::Train(_)));
    }

    #[test]
    fn discriminator_gradients_match_finite_differences_end_to_end() {
        // full pipeline: encode real instances, freeze Q, perturb every
        // parameter tensor; W must stay at zero gradient on both sides
        use crate::corpus::Instance;
        let cfg = EncoderConfig {
            arch: Arch::Pcnn,
            vocab_size: 10,
            n_relations: 3,
            max_len: 8,
            k_w: 3,
            k_p: 2,
            k_h: 2,
            window: 3,
            dropout_p: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut params = EncoderParams::new(&cfg, &mut rng).unwrap();
        let insts: Vec<Instance> = (0..4)
            .map(|i| Instance {
                id: i,
                tokens: vec![2 + i as usize, 3, 4, 5 + i as usize],
                e1_pos: 0,
                e2_pos: 2,
                pair_id: i,
                label: [1, 2, 0, 1][i as usize],
                noise_flag: None,
            })
            .collect();
        let conf = &insts[..2];
        let unconf = &insts[2..];
        let conf_labels: Vec<usize> = conf.iter().map(|i| i.label).collect();
        let unconf_labels: Vec<usize> = unconf.iter().map(|i| i.label).collect();

        // freeze Q at the current parameters
        let unconf_enc: Vec<_> = unconf.iter().map(|i| encode_eval(i, &params).unwrap()).collect();
        let unconf_ys: Vec<&Tensor> = unconf_enc.iter().map(|e| e.y()).collect();
        let ids: Vec<u64> = unconf.iter().map(|i| i.id).collect();
        let q = score_batch(&unconf_ys, &ids, &unconf_labels, &params, 1.0)
            .unwrap()
            .q;

        // analytic: loss backward, then push dL/dy through the encoders
        let conf_enc: Vec<_> = conf.iter().map(|i| encode_eval(i, &params).unwrap()).collect();
        let conf_ys: Vec<&Tensor> = conf_enc.iter().map(|e| e.y()).collect();
        let grads = discriminator_loss(
            &conf_ys,
            &conf_labels,
            &unconf_ys,
            &unconf_labels,
            &q,
            &mut params,
        )
        .unwrap();
        for (enc, dy) in conf_enc.into_iter().zip(&grads.conf_dy) {
            crate::encoders::encode_backward(enc, dy, &mut params).unwrap();
        }
        for (enc, dy) in unconf_enc.into_iter().zip(&grads.unconf_dy) {
            crate::encoders::encode_backward(enc, dy, &mut params).unwrap();
        }
        assert!(
            params.hyperplane().grad().iter().all(|&g| g == 0.0),
            "W must not receive discriminator gradient"
        );

        let q_frozen = q.clone();
        let report = check_params(&mut params, 1e-5, |p| {
            let conf_enc: Result<Vec<_>> = conf.iter().map(|i| encode_eval(i, p)).collect();
            let unconf_enc: Result<Vec<_>> = unconf.iter().map(|i| encode_eval(i, p)).collect();
            let (conf_enc, unconf_enc) = (conf_enc?, unconf_enc?);
            let conf_ys: Vec<&Tensor> = conf_enc.iter().map(|e| e.y()).collect();
            let unconf_ys: Vec<&Tensor> = unconf_enc.iter().map(|e| e.y()).collect();
            discriminator_loss_value(
                &conf_ys,
                &conf_labels,
                &unconf_ys,
                &unconf_labels,
                &q_frozen,
                p,
            )
        })
        .unwrap();
        assert!(
            report.passes(1e-4),
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }

    #[test]
    fn lambda_folds_into_sampler_learning_rate() {
        // one sampler step at (alpha_s, lambda=2) equals one at (2*alpha_s, lambda=1)
        let run = |lr: f64, lambda: f64| -> Vec<f64> {
            let (mut params, ys, labels) = toy_model_and_batch(9, 4);
            let refs: Vec<&Tensor> = ys.iter().collect();
            let ids: Vec<u64> = (0..4).collect();
            let scores = score_batch(&refs, &ids, &labels, &params, 1.0).unwrap();
            sampler_loss(&refs, &scores, &mut params).unwrap();
            let cfg = SgdConfig::new(lr * lambda);
            sgd_step(&mut [("hyperplane", params.hyperplane_mut())], &cfg).unwrap();
            params.hyperplane().data().to_vec()
        };
        let a = run(0.02, 1.0);
        let b = run(0.01, 2.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn adversarial_steps_do_not_increase_their_losses() {
        // tiny-lr sampler step reduces (or keeps) sampler loss with D fixed;
        // discriminator step likewise with Q fixed
        let (mut params, ys, labels) = toy_model_and_batch(10, 5);
        let refs: Vec<&Tensor> = ys.iter().collect();
        let ids: Vec<u64> = (0..5).collect();
        let scores = score_batch(&refs, &ids, &labels, &params, 1.0).unwrap();
        let before = sampler_loss(&refs, &scores, &mut params).unwrap();
        sgd_step(
            &mut [("hyperplane", params.hyperplane_mut())],
            &SgdConfig::new(1e-4),
        )
        .unwrap();
        let after = sampler_loss_value(&refs, &labels, &params, 1.0).unwrap();
        assert!(after <= before + 1e-12, "{after} > {before}");

        let (conf_ys, unconf_ys) = refs.split_at(2);
        let conf_labels = [1usize, 2];
        let unconf_labels = &labels[2..];
        let scores = score_batch(unconf_ys, &ids[2..], unconf_labels, &params, 1.0).unwrap();
        let grads = discriminator_loss(
            conf_ys,
            &conf_labels,
            unconf_ys,
            unconf_labels,
            &scores.q,
            &mut params,
        )
        .unwrap();
        // ys here are fixed inputs (not re-encoded), so only rel_emb moves
        sgd_step(&mut [("rel_emb", params.rel_emb_mut())], &SgdConfig::new(1e-4)).unwrap();
        let after = discriminator_loss_value(
            conf_ys,
            &conf_labels,
            unconf_ys,
            unconf_labels,
            &scores.q,
            &params,
        )
        .unwrap();
        assert!(after <= grads.loss + 1e-12, "{after} > {}", grads.loss);
    }

    #[test]
    fn combined_objective_returns_both_losses() {
        let (params, ys, labels) = toy_model_and_batch(11, 6);
        let refs: Vec<&Tensor> = ys.iter().collect();
        let (conf_ys, unconf_ys) = refs.split_at(3);
        let conf_labels = [1usize, 2, 3];
        let unconf_labels = &labels[3..];
        let (ld, ls) =
            combined_objective(conf_ys, &conf_labels, unconf_ys, unconf_labels, &params, 1.0)
                .unwrap();
        assert!(ld.is_finite() && ls.is_finite());
        let ls_direct = sampler_loss_value(unconf_ys, unconf_labels, &params, 1.0).unwrap();
        assert!((ls - ls_direct).abs() < 1e-15);
    }

    #[test]
    fn dropout_trained_scores_still_validate() {
        // scoring a train-mode batch (with dropout) keeps the invariants
        use crate::corpus::Instance;
        use crate::rng::{stream_rng, Stream};
        let cfg = EncoderConfig {
            arch: Arch::Rnn,
            vocab_size: 10,
            n_relations: 3,
            max_len: 8,
            k_w: 3,
            k_p: 2,
            k_h: 4,
            window: 3,
            dropout_p: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = EncoderParams::new(&cfg, &mut rng).unwrap();
        let inst = Instance {
            id: 0,
            tokens: vec![2, 3, 4, 5],
            e1_pos: 0,
            e2_pos: 2,
            pair_id: 0,
            label: 1,
            noise_flag: None,
        };
        let mut drop_rng = stream_rng(1, Stream::Dropout);
        let encs: Vec<_> = (0..3)
            .map(|_| encode_train(&inst, &params, &mut drop_rng).unwrap())
            .collect();
        let ys: Vec<&Tensor> = encs.iter().map(|e| e.y()).collect();
        let scores = score_batch(&ys, &[0, 1, 2], &[1, 0, 2], &params, 1.0).unwrap();
        scores.check().unwrap();
    }

    proptest! {
        #[test]
        fn q_is_normalized_and_positive(
            scores in proptest::collection::vec(-5.0f64..5.0, 1..12),
            alpha in 0.25f64..4.0,
        ) {
            let q = confusing_probabilities(&scores, alpha).unwrap();
            prop_assert!(q.iter().all(|&p| p > 0.0));
            let sum: f64 = q.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }

        #[test]
        fn q_is_shift_invariant_at_alpha_one(
            scores in proptest::collection::vec(-3.0f64..3.0, 2..8),
            shift in -10.0f64..10.0,
        ) {
            let q1 = confusing_probabilities(&scores, 1.0).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|c| c + shift).collect();
            let q2 = confusing_probabilities(&shifted, 1.0).unwrap();
            for (a, b) in q1.iter().zip(&q2) {
                prop_assert!(rel_err(*a, *b) < 1e-9);
            }
        }

        #[test]
        fn raising_one_score_raises_only_its_probability(
            scores in proptest::collection::vec(-3.0f64..3.0, 2..8),
            idx in 0usize..8,
            bump in 0.01f64..2.0,
        ) {
            let idx = idx % scores.len();
            let q1 = confusing_probabilities(&scores, 1.0).unwrap();
            let mut bumped = scores.clone();
            bumped[idx] += bump;
            let q2 = confusing_probabilities(&bumped, 1.0).unwrap();
            prop_assert!(q2[idx] > q1[idx]);
            for j in 0..scores.len() {
                if j != idx {
                    prop_assert!(q2[j] < q1[j]);
                }
            }
        }
    }
}
