//! Instance and corpus data model, on-disk formats, and a synthetic
//! distant-supervision generator with controllable label noise.
//!
//! The generator mirrors the failure mode of distant supervision: every
//! sentence of an entity pair gets the pair's relation as its label, but a
//! noisy sentence is drawn from some *other* relation's templates, so its
//! tokens do not express the label it carries. The true provenance is kept
//! in `noise_flag` so denoising can be measured quantitatively.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Reserved padding token id. Its word embedding stays zero.
pub const PAD: usize = 0;
/// Reserved unknown-word token id.
pub const UNK: usize = 1;

// ---- schema and vocabulary ----

/// Ordered relation names; index 0 is always the NA relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSchema {
    names: Vec<String>,
}

impl RelationSchema {
    pub fn new(names: Vec<String>) -> Result<RelationSchema> {
        if names.len() < 2 {
            return Err(Error::Validation(format!(
                "schema needs at least 2 relations, got {}",
                names.len()
            )));
        }
        if names[0] != "NA" {
            return Err(Error::Validation(format!(
                "relation 0 must be NA, got '{}'",
                names[0]
            )));
        }
        let unique: HashSet<&String> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::Validation("duplicate relation names".into()));
        }
        Ok(RelationSchema { names })
    }

    pub fn na_id(&self) -> usize {
        0
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(f, self)
            .map_err(|e| Error::Validation(format!("writing schema: {e}")))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<RelationSchema> {
        let f = BufReader::new(File::open(path)?);
        let raw: RelationSchema = serde_json::from_reader(f)
            .map_err(|e| Error::Parse { line: 0, msg: format!("schema: {e}") })?;
        RelationSchema::new(raw.names)
    }
}

/// Dense word-to-id mapping with reserved PAD and UNK entries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(words: Vec<String>) -> Result<Vocabulary> {
        if words.len() <= UNK {
            return Err(Error::Validation("vocabulary too small for reserved ids".into()));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate word '{w}'")));
            }
        }
        Ok(Vocabulary { words, index })
    }

    pub fn size(&self) -> usize {
        self.words.len()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(f, self)
            .map_err(|e| Error::Validation(format!("writing vocabulary: {e}")))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let f = BufReader::new(File::open(path)?);
        let raw: Vocabulary = serde_json::from_reader(f)
            .map_err(|e| Error::Parse { line: 0, msg: format!("vocabulary: {e}") })?;
        Vocabulary::new(raw.words)
    }
}

// ---- instances ----

/// One sentence with two marked entities and a distant relation label.
/// `noise_flag` is the generator's ground truth: true means the sentence
/// does not actually express its label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u64,
    pub tokens: Vec<usize>,
    pub e1_pos: usize,
    pub e2_pos: usize,
    pub pair_id: u64,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_flag: Option<bool>,
}

impl Instance {
    pub fn validate(&self, n_relations: usize, max_len: usize) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::Validation(format!("instance {}: no tokens", self.id)));
        }
        if self.tokens.len() > max_len {
            return Err(Error::Validation(format!(
                "instance {}: {} tokens exceeds max_len {}",
                self.id,
                self.tokens.len(),
                max_len
            )));
        }
        if !(self.e1_pos < self.e2_pos && self.e2_pos < self.tokens.len()) {
            return Err(Error::Validation(format!(
                "instance {}: entity positions ({}, {}) invalid for {} tokens",
                self.id,
                self.e1_pos,
                self.e2_pos,
                self.tokens.len()
            )));
        }
        if self.label >= n_relations {
            return Err(Error::Validation(format!(
                "instance {}: label {} out of range ({} relations)",
                self.id, self.label, n_relations
            )));
        }
        Ok(())
    }
}

/// Immutable instance collection with id lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    instances: Vec<Instance>,
    by_id: BTreeMap<u64, usize>,
}

impl Corpus {
    pub fn new(instances: Vec<Instance>) -> Result<Corpus> {
        let mut by_id = BTreeMap::new();
        for (i, inst) in instances.iter().enumerate() {
            if by_id.insert(inst.id, i).is_some() {
                return Err(Error::Validation(format!("duplicate instance id {}", inst.id)));
            }
        }
        Ok(Corpus { instances, by_id })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn get(&self, id: u64) -> Option<&Instance> {
        self.by_id.get(&id).map(|&i| &self.instances[i])
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.by_id.keys().copied()
    }

    /// Instance ids grouped by entity pair, in pair-id order.
    pub fn by_pair(&self) -> BTreeMap<u64, Vec<u64>> {
        let mut map: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        for inst in &self.instances {
            map.entry(inst.pair_id).or_default().push(inst.id);
        }
        map
    }

    /// Fraction of instances whose noise flag is true, if flags are present.
    pub fn noise_rate(&self) -> Option<f64> {
        if self.instances.is_empty() || self.instances.iter().any(|i| i.noise_flag.is_none()) {
            return None;
        }
        let noisy = self
            .instances
            .iter()
            .filter(|i| i.noise_flag == Some(true))
            .count();
        Some(noisy as f64 / self.instances.len() as f64)
    }
}

// ---- split ----

/// Disjoint partition of training instance ids into the confident set and
/// the unconfident set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    confident: BTreeSet<u64>,
    unconfident: BTreeSet<u64>,
}

impl CorpusSplit {
    pub fn new(confident: BTreeSet<u64>, unconfident: BTreeSet<u64>) -> Result<CorpusSplit> {
        if let Some(id) = confident.intersection(&unconfident).next() {
            return Err(Error::Validation(format!(
                "instance {id} in both confident and unconfident sets"
            )));
        }
        Ok(CorpusSplit {
            confident,
            unconfident,
        })
    }

    pub fn confident(&self) -> &BTreeSet<u64> {
        &self.confident
    }

    pub fn unconfident(&self) -> &BTreeSet<u64> {
        &self.unconfident
    }

    /// Move one instance from the unconfident to the confident set.
    pub fn promote(&mut self, id: u64) -> Result<()> {
        if !self.unconfident.remove(&id) {
            return Err(Error::Validation(format!(
                "cannot promote {id}: not in the unconfident set"
            )));
        }
        self.confident.insert(id);
        Ok(())
    }

    /// Check the partition invariant against the full id universe.
    pub fn check_partition(&self, all_ids: &BTreeSet<u64>) -> Result<()> {
        if self.confident.intersection(&self.unconfident).next().is_some() {
            return Err(Error::Validation("confident and unconfident sets overlap".into()));
        }
        let union: BTreeSet<u64> = self.confident.union(&self.unconfident).copied().collect();
        if &union != all_ids {
            return Err(Error::Validation(
                "split does not cover the training ids exactly".into(),
            ));
        }
        Ok(())
    }
}

// ---- position features ----

/// Relative distances of every token to the two entities, clipped to
/// `[-max_len, max_len]` and shifted to the non-negative id range
/// `[0, 2*max_len]`.
pub fn position_features(inst: &Instance, max_len: usize) -> (Vec<usize>, Vec<usize>) {
    let clip = |d: isize| -> usize {
        let m = max_len as isize;
        (d.clamp(-m, m) + m) as usize
    };
    let n = inst.tokens.len();
    let mut d1 = Vec::with_capacity(n);
    let mut d2 = Vec::with_capacity(n);
    for i in 0..n {
        d1.push(clip(i as isize - inst.e1_pos as isize));
        d2.push(clip(i as isize - inst.e2_pos as isize));
    }
    (d1, d2)
}

// ---- on-disk format ----

/// Write a corpus as JSON Lines, one instance per line.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    for inst in corpus.instances() {
        let line = serde_json::to_string(inst)
            .map_err(|e| Error::Validation(format!("serializing instance {}: {e}", inst.id)))?;
        writeln!(f, "{line}")?;
    }
    f.flush()?;
    Ok(())
}

/// Read a JSON Lines corpus, truncating over-long sentences to `max_len`
/// and validating every record. An empty file yields an empty corpus.
pub fn load_corpus(path: &Path, n_relations: usize, max_len: usize) -> Result<Corpus> {
    let f = BufReader::new(File::open(path)?);
    let mut instances = Vec::new();
    for (lineno, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut inst: Instance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        if inst.tokens.len() > max_len {
            inst.tokens.truncate(max_len);
        }
        inst.validate(n_relations, max_len).map_err(|e| Error::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        instances.push(inst);
    }
    Corpus::new(instances)
}

/// Ground-truth fact set of a noise-free corpus: every (pair, label) with a
/// non-NA label.
pub fn fact_set(corpus: &Corpus, na_id: usize) -> BTreeSet<(u64, usize)> {
    corpus
        .instances()
        .iter()
        .filter(|i| i.label != na_id)
        .map(|i| (i.pair_id, i.label))
        .collect()
}

// ---- synthetic generator ----

/// Knobs for the synthetic distant-supervision corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Number of real (non-NA) relations.
    pub n_relations: usize,
    /// Training entity pairs. The test set gets an extra disjoint fifth.
    pub n_entity_pairs: usize,
    pub min_sentences_per_pair: usize,
    pub max_sentences_per_pair: usize,
    pub templates_per_relation: usize,
    pub noise_rate: f64,
    pub vocab_size: usize,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_relations == 0
            || self.n_entity_pairs == 0
            || self.min_sentences_per_pair == 0
            || self.templates_per_relation == 0
            || self.vocab_size == 0
        {
            return Err(Error::Config("synthetic counts must be positive".into()));
        }
        if self.max_sentences_per_pair < self.min_sentences_per_pair {
            return Err(Error::Config(format!(
                "max_sentences_per_pair {} < min_sentences_per_pair {}",
                self.max_sentences_per_pair, self.min_sentences_per_pair
            )));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return Err(Error::Config(format!(
                "noise_rate {} not in [0,1)",
                self.noise_rate
            )));
        }
        Ok(())
    }
}

const KEYWORDS_PER_TEMPLATE: usize = 3;
const MIN_FILLER_WORDS: usize = 8;

/// Everything one synthetic generation run produces.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: Corpus,
    pub test: Corpus,
    pub schema: RelationSchema,
    pub vocab: Vocabulary,
}

struct TemplateBank {
    /// keyword token ids per (relation-1, template)
    keywords: Vec<Vec<Vec<usize>>>,
    fillers: Vec<usize>,
    entities: Vec<usize>,
}

impl TemplateBank {
    /// Sentence tokens for a pair expressed through `rel`'s templates
    /// (or a neutral no-relation pattern when `rel` is NA).
    fn sentence(
        &self,
        rel: usize,
        e1_tok: usize,
        e2_tok: usize,
        rng: &mut impl Rng,
    ) -> (Vec<usize>, usize, usize) {
        let lead = rng.gen_range(1..=3);
        let trail = rng.gen_range(1..=3);
        let mid: Vec<usize> = if rel == 0 {
            (0..KEYWORDS_PER_TEMPLATE)
                .map(|_| self.fillers[rng.gen_range(0..self.fillers.len())])
                .collect()
        } else {
            let t = rng.gen_range(0..self.keywords[rel - 1].len());
            self.keywords[rel - 1][t].clone()
        };
        let mut tokens = Vec::with_capacity(lead + trail + mid.len() + 2);
        for _ in 0..lead {
            tokens.push(self.fillers[rng.gen_range(0..self.fillers.len())]);
        }
        let e1_pos = tokens.len();
        tokens.push(e1_tok);
        tokens.extend_from_slice(&mid);
        let e2_pos = tokens.len();
        tokens.push(e2_tok);
        for _ in 0..trail {
            tokens.push(self.fillers[rng.gen_range(0..self.fillers.len())]);
        }
        (tokens, e1_pos, e2_pos)
    }
}

/// Fraction of entity pairs whose true relation is NA.
const NA_PAIR_SHARE: f64 = 0.3;

/// Pair-relation prior: NA takes [`NA_PAIR_SHARE`]; the real relations split
/// the remainder in proportion to 1/rank, echoing the skewed relation
/// frequencies of distant-supervision corpora. The skew matters: wrong
/// labels pile up on the frequent relations, which is exactly the
/// contamination denoising is supposed to undo.
fn relation_prior(n_relations: usize) -> Vec<f64> {
    let harmonic: f64 = (1..=n_relations).map(|r| 1.0 / r as f64).sum();
    let mut w = vec![NA_PAIR_SHARE];
    w.extend((1..=n_relations).map(|r| (1.0 - NA_PAIR_SHARE) / (r as f64 * harmonic)));
    w
}

/// Generate a train/test corpus pair with known noise.
///
/// Every entity pair carries one true relation (possibly NA). A training
/// sentence is drawn from the pair's true-relation templates with
/// probability `1 - noise_rate`, otherwise from a uniformly random other
/// relation — its label stays the pair's distant label and its noise flag
/// is set. The test corpus is noise-free and uses disjoint entity pairs.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, Stream::Data);

    let n_test_pairs = (cfg.n_entity_pairs / 5).max(1);
    let n_total_pairs = cfg.n_entity_pairs + n_test_pairs;

    // vocabulary layout: reserved, entities, per-template keywords, fillers
    let entity_pool = ((n_total_pairs as f64).sqrt().ceil() as usize * 2).max(8);
    let n_keywords = cfg.n_relations * cfg.templates_per_relation * KEYWORDS_PER_TEMPLATE;
    let reserved = 2 + entity_pool + n_keywords;
    if cfg.vocab_size < reserved + MIN_FILLER_WORDS {
        return Err(Error::Config(format!(
            "vocab_size {} too small for requested templates: need at least {}",
            cfg.vocab_size,
            reserved + MIN_FILLER_WORDS
        )));
    }

    let mut words = vec!["<pad>".to_string(), "<unk>".to_string()];
    let entities: Vec<usize> = (0..entity_pool)
        .map(|i| {
            words.push(format!("ent{i}"));
            words.len() - 1
        })
        .collect();
    let mut keywords = Vec::with_capacity(cfg.n_relations);
    for r in 1..=cfg.n_relations {
        let mut per_template = Vec::with_capacity(cfg.templates_per_relation);
        for t in 0..cfg.templates_per_relation {
            let ids: Vec<usize> = (0..KEYWORDS_PER_TEMPLATE)
                .map(|k| {
                    words.push(format!("r{r}t{t}w{k}"));
                    words.len() - 1
                })
                .collect();
            per_template.push(ids);
        }
        keywords.push(per_template);
    }
    let fillers: Vec<usize> = (0..cfg.vocab_size - words.len())
        .map(|i| {
            words.push(format!("f{i}"));
            words.len() - 1
        })
        .collect();
    let vocab = Vocabulary::new(words)?;

    let mut names = vec!["NA".to_string()];
    names.extend((1..=cfg.n_relations).map(|r| format!("rel_{r}")));
    let schema = RelationSchema::new(names)?;

    let bank = TemplateBank {
        keywords,
        fillers,
        entities,
    };

    // distinct ordered entity pairs, each with one true relation; the
    // prior mirrors distant-supervision corpora, where NA is common and
    // real relation frequencies fall off roughly like a Zipf law
    let prior = WeightedIndex::new(relation_prior(cfg.n_relations))
        .expect("relation prior weights are positive");
    let mut seen = HashSet::new();
    let mut pairs = Vec::with_capacity(n_total_pairs);
    while pairs.len() < n_total_pairs {
        let a = bank.entities[rng.gen_range(0..bank.entities.len())];
        let b = bank.entities[rng.gen_range(0..bank.entities.len())];
        if a == b || !seen.insert((a, b)) {
            continue;
        }
        let true_rel = prior.sample(&mut rng);
        pairs.push((a, b, true_rel));
    }

    let n_relations_total = cfg.n_relations + 1;
    let mut train = Vec::new();
    for (pair_idx, &(a, b, true_rel)) in pairs[..cfg.n_entity_pairs].iter().enumerate() {
        let count = rng.gen_range(cfg.min_sentences_per_pair..=cfg.max_sentences_per_pair);
        for _ in 0..count {
            let noisy = rng.gen::<f64>() < cfg.noise_rate;
            let source_rel = if noisy {
                // uniform over the other relations, NA included
                let mut r = rng.gen_range(0..n_relations_total - 1);
                if r >= true_rel {
                    r += 1;
                }
                r
            } else {
                true_rel
            };
            let (tokens, e1_pos, e2_pos) = bank.sentence(source_rel, a, b, &mut rng);
            train.push(Instance {
                id: train.len() as u64,
                tokens,
                e1_pos,
                e2_pos,
                pair_id: pair_idx as u64,
                label: true_rel,
                noise_flag: Some(noisy),
            });
        }
    }

    let mut test = Vec::new();
    for (offset, &(a, b, true_rel)) in pairs[cfg.n_entity_pairs..].iter().enumerate() {
        let pair_id = (cfg.n_entity_pairs + offset) as u64;
        let count = rng.gen_range(cfg.min_sentences_per_pair..=cfg.max_sentences_per_pair);
        for _ in 0..count {
            let (tokens, e1_pos, e2_pos) = bank.sentence(true_rel, a, b, &mut rng);
            test.push(Instance {
                id: test.len() as u64,
                tokens,
                e1_pos,
                e2_pos,
                pair_id,
                label: true_rel,
                noise_flag: Some(false),
            });
        }
    }

    Ok(SyntheticData {
        train: Corpus::new(train)?,
        test: Corpus::new(test)?,
        schema,
        vocab,
    })
}

/// Uniformly sample `k` ids without replacement (order preserved from the
/// shuffled draw). Used for batch and sentence selection.
pub fn sample_ids(ids: &[u64], k: usize, rng: &mut impl Rng) -> Vec<u64> {
    if k >= ids.len() {
        return ids.to_vec();
    }
    let mut pool: Vec<u64> = ids.to_vec();
    pool.partial_shuffle(rng, k);
    pool.truncate(k);
    pool
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_cfg() -> SyntheticConfig {
        SyntheticConfig {
            n_relations: 4,
            n_entity_pairs: 50,
            min_sentences_per_pair: 1,
            max_sentences_per_pair: 3,
            templates_per_relation: 2,
            noise_rate: 0.3,
            vocab_size: 120,
            seed: 11,
        }
    }

    #[test]
    fn zero_noise_rate_sets_no_flags() {
        let mut cfg = small_cfg();
        cfg.noise_rate = 0.0;
        let data = generate_synthetic(&cfg).unwrap();
        assert!(data
            .train
            .instances()
            .iter()
            .all(|i| i.noise_flag == Some(false)));
    }

    #[test]
    fn noise_fraction_concentrates() {
        let mut cfg = small_cfg();
        cfg.n_entity_pairs = 4000;
        cfg.min_sentences_per_pair = 2;
        cfg.max_sentences_per_pair = 3;
        cfg.vocab_size = 300;
        let data = generate_synthetic(&cfg).unwrap();
        assert!(data.train.len() >= 8000);
        let rate = data.train.noise_rate().unwrap();
        assert!((0.27..=0.33).contains(&rate), "noise rate {rate}");
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let a = generate_synthetic(&small_cfg()).unwrap();
        let b = generate_synthetic(&small_cfg()).unwrap();
        let dir = tempdir().unwrap();
        let pa = dir.path().join("a.jsonl");
        let pb = dir.path().join("b.jsonl");
        save_corpus(&a.train, &pa).unwrap();
        save_corpus(&b.train, &pb).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn noise_flag_matches_template_provenance() {
        // clean sentences carry their label's keywords; noisy ones don't
        let data = generate_synthetic(&small_cfg()).unwrap();
        let kw_rel = |inst: &Instance| -> Option<usize> {
            for &tok in &inst.tokens {
                let w = data.vocab.word(tok);
                if w.starts_with('r') && w.contains('t') && w.contains('w') {
                    let rel: usize = w[1..w.find('t').unwrap()].parse().unwrap();
                    return Some(rel);
                }
            }
            None // no keywords: an NA-pattern sentence
        };
        for inst in data.train.instances() {
            let expressed = kw_rel(inst).unwrap_or(0);
            match inst.noise_flag {
                Some(false) => assert_eq!(expressed, inst.label),
                Some(true) => assert_ne!(expressed, inst.label),
                None => panic!("generator must set noise flags"),
            }
        }
    }

    #[test]
    fn test_pairs_are_disjoint_and_clean() {
        let data = generate_synthetic(&small_cfg()).unwrap();
        let train_pairs: BTreeSet<u64> =
            data.train.instances().iter().map(|i| i.pair_id).collect();
        let test_pairs: BTreeSet<u64> = data.test.instances().iter().map(|i| i.pair_id).collect();
        assert!(train_pairs.is_disjoint(&test_pairs));
        assert_eq!(data.test.noise_rate(), Some(0.0));
    }

    #[test]
    fn vocab_too_small_is_config_error() {
        let mut cfg = small_cfg();
        cfg.vocab_size = 20;
        assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn corpus_roundtrip() {
        let data = generate_synthetic(&small_cfg()).unwrap();
        let dir = tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        save_corpus(&data.train, &path).unwrap();
        let loaded = load_corpus(&path, data.schema.len(), 120).unwrap();
        assert_eq!(&loaded, &data.train);
    }

    #[test]
    fn loader_rejects_bad_positions() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(
            &path,
            "{\"id\":0,\"tokens\":[2,3],\"e1_pos\":0,\"e2_pos\":2,\"pair_id\":0,\"label\":1}\n",
        )
        .unwrap();
        let err = load_corpus(&path, 3, 120).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn loader_accepts_empty_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let corpus = load_corpus(&path, 3, 120).unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn position_features_basics() {
        let inst = Instance {
            id: 0,
            tokens: vec![2, 3, 4],
            e1_pos: 0,
            e2_pos: 2,
            pair_id: 0,
            label: 1,
            noise_flag: None,
        };
        let (d1, d2) = position_features(&inst, 5);
        // raw distances d1=(0,1,2), d2=(-2,-1,0), shifted by +5
        assert_eq!(d1, vec![5, 6, 7]);
        assert_eq!(d2, vec![3, 4, 5]);
        assert_eq!(d1[inst.e1_pos], 5); // token at e1 encodes distance 0

        // clipping at the boundary id
        let long = Instance {
            id: 1,
            tokens: (0..12).map(|_| 2).collect(),
            e1_pos: 0,
            e2_pos: 11,
            pair_id: 0,
            label: 1,
            noise_flag: None,
        };
        let (d1, d2) = position_features(&long, 5);
        assert_eq!(*d1.last().unwrap(), 10); // 11 clipped to +5 -> id 10
        assert_eq!(d2[0], 0); // -11 clipped to -5 -> id 0
    }

    #[test]
    fn split_promote_preserves_partition() {
        let all: BTreeSet<u64> = (0..10).collect();
        let conf: BTreeSet<u64> = (0..3).collect();
        let unconf: BTreeSet<u64> = (3..10).collect();
        let mut split = CorpusSplit::new(conf, unconf).unwrap();
        split.promote(5).unwrap();
        split.check_partition(&all).unwrap();
        assert!(split.confident().contains(&5));
        assert!(split.promote(5).is_err());
    }
}
