//! Generate a small synthetic distantly-supervised corpus and look inside.

use denoise_re::corpus::{generate_synthetic, SyntheticConfig};

fn main() -> denoise_re::Result<()> {
    let cfg = SyntheticConfig {
        n_relations: 4,
        n_entity_pairs: 150,
        min_sentences_per_pair: 1,
        max_sentences_per_pair: 3,
        templates_per_relation: 2,
        noise_rate: 0.25,
        vocab_size: 400,
        seed: 11,
    };
    let data = generate_synthetic(&cfg)?;

    println!(
        "train: {} instances over {} pairs",
        data.train.len(),
        data.train.by_pair().len()
    );
    println!(
        "test:  {} instances over {} pairs (clean, disjoint)",
        data.test.len(),
        data.test.by_pair().len()
    );
    println!("relations: {:?}", data.schema.names());
    println!(
        "actual train noise rate: {:.3} (requested {})",
        data.train.noise_rate().unwrap(),
        cfg.noise_rate
    );

    println!("\nsample instances:");
    for inst in data.train.instances().iter().take(6) {
        let words: Vec<&str> = inst
            .tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                if i == inst.e1_pos || i == inst.e2_pos {
                    "<ENT>"
                } else {
                    data.vocab.word(t)
                }
            })
            .collect();
        println!(
            "  label={:<6} noisy={:<5} {}",
            data.schema.name(inst.label),
            inst.noise_flag.unwrap(),
            words.join(" ")
        );
    }
    Ok(())
}
