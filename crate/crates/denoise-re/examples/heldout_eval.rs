//! Held-out evaluation: rank candidate (pair, relation) triples on a clean
//! test split and walk the precision-recall curve.

use denoise_re::corpus::{fact_set, generate_synthetic, SyntheticConfig};
use denoise_re::encoders::{Arch, EncoderConfig};
use denoise_re::eval::{p_at_n, pr_curve, precision_at_recall, score_triples, Aggregation};
use denoise_re::trainer::{pretrain_classifier, TrainConfig};

fn main() -> denoise_re::Result<()> {
    let data = generate_synthetic(&SyntheticConfig {
        n_relations: 5,
        n_entity_pairs: 300,
        min_sentences_per_pair: 1,
        max_sentences_per_pair: 3,
        templates_per_relation: 2,
        noise_rate: 0.2,
        vocab_size: 600,
        seed: 29,
    })?;
    let enc_cfg = EncoderConfig {
        arch: Arch::Pcnn,
        vocab_size: data.vocab.size(),
        n_relations: data.schema.len(),
        max_len: 20,
        k_w: 12,
        k_p: 3,
        k_h: 16,
        window: 3,
        dropout_p: 0.0,
    };
    let cfg = TrainConfig {
        pretrain_epochs: 30,
        seed: 29,
        ..TrainConfig::default()
    };
    let params = pretrain_classifier(&data.train, &enc_cfg, &cfg)?;

    let facts = fact_set(&data.test, data.schema.na_id());
    let ranked = score_triples(&data.test, &params, &facts, Aggregation::Max)?;
    println!(
        "{} candidate triples over {} test pairs, {} true facts",
        ranked.len(),
        data.test.by_pair().len(),
        facts.len()
    );

    println!("\ntop of the ranking:");
    for t in ranked.iter().take(8) {
        println!(
            "  pair {:>4}  {}  score {:.4}  {}",
            t.pair_id,
            data.schema.name(t.relation),
            t.score,
            if t.is_correct { "correct" } else { "wrong" }
        );
    }

    for n in [10, 20, 50] {
        println!("P@{n} = {:.3}", p_at_n(&ranked, n)?);
    }
    let curve = pr_curve(&ranked)?;
    for r in [0.1, 0.2, 0.3] {
        println!(
            "precision at recall {:.1} = {:.3}",
            r,
            precision_at_recall(&curve, r)?
        );
    }
    Ok(())
}
