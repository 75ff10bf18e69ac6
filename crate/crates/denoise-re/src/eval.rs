//! Held-out evaluation: triple ranking with precision/recall metrics,
//! restricted-sentence regimes, noise-detection AUC against synthetic
//! ground truth, and per-relation inspection of sampler rankings.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adversarial::{confusing_score, discriminator_score, label_score};
use crate::corpus::{Corpus, Vocabulary};
use crate::encoders::{encode_eval, EncoderParams};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// How a pair's multiple sentences combine into one triple score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Max,
    Mean,
}

impl FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Aggregation> {
        match s {
            "max" => Ok(Aggregation::Max),
            "mean" => Ok(Aggregation::Mean),
            other => Err(Error::Config(format!(
                "unknown aggregation '{other}' (expected max or mean)"
            ))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Max => "max",
            Aggregation::Mean => "mean",
        })
    }
}

/// One candidate fact, scored.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedTriple {
    pub pair_id: u64,
    /// Non-NA relation id.
    pub relation: usize,
    pub score: f64,
    pub is_correct: bool,
}

/// Ordered (recall, precision) points, one per rank.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    points: Vec<(f64, f64)>,
}

impl PrCurve {
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }
}

/// Score every (test pair, non-NA relation) candidate triple and rank them.
///
/// Per-sentence evidence is the discriminator score sigma(r . y); a pair's
/// sentences combine by `agg`. Correctness is membership in `facts`.
/// Sorted by score descending, ties broken by (pair_id, relation).
pub fn score_triples(
    test: &Corpus,
    params: &EncoderParams,
    facts: &BTreeSet<(u64, usize)>,
    agg: Aggregation,
) -> Result<Vec<RankedTriple>> {
    let n_relations = params.config().n_relations;
    let mut out = Vec::new();
    for (pair_id, ids) in test.by_pair() {
        if ids.is_empty() {
            log::warn!("pair {pair_id} has no sentences; skipped");
            continue;
        }
        // one encoding per sentence, reused across relations
        let mut ys = Vec::with_capacity(ids.len());
        for id in &ids {
            let inst = test.get(*id).expect("id from this corpus");
            ys.push(encode_eval(inst, params)?);
        }
        for relation in 1..n_relations {
            let mut acc: f64 = 0.0;
            let mut best = f64::NEG_INFINITY;
            for enc in &ys {
                let s = discriminator_score(enc.y(), relation, params)?;
                acc += s;
                best = best.max(s);
            }
            let score = match agg {
                Aggregation::Max => best,
                Aggregation::Mean => acc / ys.len() as f64,
            };
            out.push(RankedTriple {
                pair_id,
                relation,
                score,
                is_correct: facts.contains(&(pair_id, relation)),
            });
        }
    }
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.pair_id.cmp(&b.pair_id))
            .then(a.relation.cmp(&b.relation))
    });
    Ok(out)
}

/// Precision/recall walked down the full ranking.
pub fn pr_curve(ranked: &[RankedTriple]) -> Result<PrCurve> {
    if ranked.is_empty() {
        return Err(Error::Eval("cannot build a PR curve from an empty ranking".into()));
    }
    let total_pos = ranked.iter().filter(|t| t.is_correct).count();
    if total_pos == 0 {
        return Err(Error::Eval("ranking contains no correct triples; recall undefined".into()));
    }
    let mut points = Vec::with_capacity(ranked.len());
    let mut correct = 0usize;
    for (i, t) in ranked.iter().enumerate() {
        if t.is_correct {
            correct += 1;
        }
        points.push((
            correct as f64 / total_pos as f64,
            correct as f64 / (i + 1) as f64,
        ));
    }
    Ok(PrCurve { points })
}

/// Fraction of correct triples among the top N.
pub fn p_at_n(ranked: &[RankedTriple], n: usize) -> Result<f64> {
    if n == 0 || n > ranked.len() {
        return Err(Error::Eval(format!(
            "P@{n} undefined for a ranking of {} triples",
            ranked.len()
        )));
    }
    let correct = ranked[..n].iter().filter(|t| t.is_correct).count();
    Ok(correct as f64 / n as f64)
}

/// Precision at the first curve point reaching recall `r`.
pub fn precision_at_recall(curve: &PrCurve, r: f64) -> Result<f64> {
    curve
        .points
        .iter()
        .find(|(recall, _)| *recall >= r)
        .map(|(_, precision)| *precision)
        .ok_or_else(|| Error::Eval(format!("recall {r} is never reached")))
}

/// How many of each test pair's sentences the evaluator may see.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentenceBudget {
    One,
    Two,
    All,
}

impl SentenceBudget {
    fn limit(self) -> Option<usize> {
        match self {
            SentenceBudget::One => Some(1),
            SentenceBudget::Two => Some(2),
            SentenceBudget::All => None,
        }
    }
}

impl FromStr for SentenceBudget {
    type Err = Error;
    fn from_str(s: &str) -> Result<SentenceBudget> {
        match s {
            "one" => Ok(SentenceBudget::One),
            "two" => Ok(SentenceBudget::Two),
            "all" => Ok(SentenceBudget::All),
            other => Err(Error::Config(format!(
                "unknown sentence budget '{other}' (expected one, two, or all)"
            ))),
        }
    }
}

/// P@N at several N plus their mean, under a sentence budget.
#[derive(Debug, Clone, PartialEq)]
pub struct FewSentenceReport {
    pub budget: SentenceBudget,
    pub n_values: Vec<usize>,
    pub precisions: Vec<f64>,
    pub mean: f64,
}

/// Evaluate with each pair restricted to a random subset of its sentences.
/// Uses P@{100,200,300} when the candidate list is large enough, else
/// P@{20,50,100}, dropping any N beyond the list.
pub fn few_sentence_eval(
    test: &Corpus,
    params: &EncoderParams,
    facts: &BTreeSet<(u64, usize)>,
    agg: Aggregation,
    budget: SentenceBudget,
    seed: u64,
) -> Result<FewSentenceReport> {
    let restricted = match budget.limit() {
        None => test.clone(),
        Some(limit) => {
            let mut rng = stream_rng(seed, Stream::EvalSelect);
            let mut kept = Vec::new();
            for (_, ids) in test.by_pair() {
                if ids.len() <= limit {
                    kept.extend(ids);
                } else {
                    let mut pool = ids;
                    let (chosen, _) = pool.partial_shuffle(&mut rng, limit);
                    let mut chosen = chosen.to_vec();
                    chosen.sort_unstable();
                    kept.extend(chosen);
                }
            }
            Corpus::new(
                kept.iter()
                    .map(|id| test.get(*id).expect("id from this corpus").clone())
                    .collect(),
            )?
        }
    };
    let ranked = score_triples(&restricted, params, facts, agg)?;
    let mut n_values: Vec<usize> = if ranked.len() >= 300 {
        vec![100, 200, 300]
    } else {
        vec![20, 50, 100]
    };
    n_values.retain(|n| *n <= ranked.len());
    if n_values.is_empty() {
        return Err(Error::Eval(format!(
            "only {} candidate triples; too few for P@N reporting",
            ranked.len()
        )));
    }
    let precisions: Vec<f64> = n_values
        .iter()
        .map(|n| p_at_n(&ranked, *n))
        .collect::<Result<_>>()?;
    let mean = precisions.iter().sum::<f64>() / precisions.len() as f64;
    Ok(FewSentenceReport {
        budget,
        n_values,
        precisions,
        mean,
    })
}

/// AUC for recovering the generator's noise flags from model scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseAuc {
    /// Ranking by -C(s): low confusing score predicts noisy.
    pub by_confusing: f64,
    /// Ranking by -D(s, r_s): low discriminator score predicts noisy.
    pub by_discriminator: f64,
}

/// Mann-Whitney AUC with tie-averaged ranks; positives are the noisy
/// instances, higher score = more noisy.
fn rank_sum_auc(scores: &[f64], noisy: &[bool]) -> Result<f64> {
    let n_pos = noisy.iter().filter(|f| **f).count();
    let n_neg = noisy.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Eval(
            "noise flags are all identical; AUC is undefined".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks, averaged across the tie block [i, j]
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(noisy)
        .filter(|(_, f)| **f)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Score every flagged instance with the trained sampler and discriminator
/// and measure how well each recovers the true noise flags.
pub fn noise_detection_auc(corpus: &Corpus, params: &EncoderParams) -> Result<NoiseAuc> {
    if corpus.is_empty() {
        return Err(Error::Eval("cannot evaluate noise detection on an empty corpus".into()));
    }
    let mut neg_c = Vec::with_capacity(corpus.len());
    let mut neg_d = Vec::with_capacity(corpus.len());
    let mut flags = Vec::with_capacity(corpus.len());
    for inst in corpus.instances() {
        let flag = inst.noise_flag.ok_or_else(|| {
            Error::Eval(format!("instance {} has no noise flag; need synthetic ground truth", inst.id))
        })?;
        let enc = encode_eval(inst, params)?;
        neg_c.push(-confusing_score(enc.y(), params)?);
        neg_d.push(-label_score(enc.y(), inst.label, params)?);
        flags.push(flag);
    }
    Ok(NoiseAuc {
        by_confusing: rank_sum_auc(&neg_c, &flags)?,
        by_discriminator: rank_sum_auc(&neg_d, &flags)?,
    })
}

/// One instance in an inspection listing.
#[derive(Debug, Clone, PartialEq)]
pub struct InspectEntry {
    pub id: u64,
    pub confusing: f64,
    pub discriminator: f64,
    pub noise_flag: Option<bool>,
    /// Sentence text with the entity tokens wrapped in [[...]].
    pub rendered: String,
}

/// Top-k and bottom-k instances of one relation by confusing score.
#[derive(Debug, Clone, PartialEq)]
pub struct InspectReport {
    pub relation: usize,
    pub top: Vec<InspectEntry>,
    pub bottom: Vec<InspectEntry>,
    /// Set when fewer than k instances carry the relation.
    pub note: Option<String>,
}

fn render_sentence(tokens: &[usize], e1: usize, e2: usize, vocab: &Vocabulary) -> String {
    tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let w = if t < vocab.size() { vocab.word(t) } else { "<oov>" };
            if i == e1 || i == e2 {
                format!("[[{w}]]")
            } else {
                w.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Rank a relation's instances by confusing score and return the k highest
/// and k lowest, rendered for reading.
pub fn inspect(
    corpus: &Corpus,
    params: &EncoderParams,
    vocab: &Vocabulary,
    relation: usize,
    k: usize,
) -> Result<InspectReport> {
    if relation >= params.config().n_relations {
        return Err(Error::Validation(format!(
            "relation {relation} out of range ({} relations)",
            params.config().n_relations
        )));
    }
    let mut entries = Vec::new();
    for inst in corpus.instances() {
        if inst.label != relation {
            continue;
        }
        let enc = encode_eval(inst, params)?;
        entries.push(InspectEntry {
            id: inst.id,
            confusing: confusing_score(enc.y(), params)?,
            discriminator: label_score(enc.y(), inst.label, params)?,
            noise_flag: inst.noise_flag,
            rendered: render_sentence(&inst.tokens, inst.e1_pos, inst.e2_pos, vocab),
        });
    }
    entries.sort_by(|a, b| b.confusing.total_cmp(&a.confusing).then(a.id.cmp(&b.id)));
    let note = (entries.len() < k).then(|| {
        format!(
            "only {} instances carry relation {relation}; returning all",
            entries.len()
        )
    });
    let take = k.min(entries.len());
    let top = entries[..take].to_vec();
    let mut rev = entries;
    rev.reverse();
    let bottom = rev[..take].to_vec();
    Ok(InspectReport {
        relation,
        top,
        bottom,
        note,
    })
}

// ---- persistence ----

/// Load a fact set from JSON lines of `{"pair_id": .., "relation": ..}`.
pub fn load_facts(path: &Path) -> Result<BTreeSet<(u64, usize)>> {
    #[derive(Deserialize)]
    struct Row {
        pair_id: u64,
        relation: usize,
    }
    let f = BufReader::new(File::open(path)?);
    let mut facts = BTreeSet::new();
    for (lineno, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        facts.insert((row.pair_id, row.relation));
    }
    Ok(facts)
}

/// Write the curve as `recall,precision` CSV.
pub fn write_pr_csv(curve: &PrCurve, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "recall,precision")?;
    for (r, p) in &curve.points {
        writeln!(f, "{r},{p}")?;
    }
    f.flush()?;
    Ok(())
}

/// Write P@N rows as `n,precision` CSV.
pub fn write_pn_csv(rows: &[(usize, f64)], path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "n,precision")?;
    for (n, p) in rows {
        writeln!(f, "{n},{p}")?;
    }
    f.flush()?;
    Ok(())
}
