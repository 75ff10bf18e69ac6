//! The full adversarial loop on a small corpus: pretrain, split, alternate
//! sampler/discriminator steps, and promote instances the game trusts.

use denoise_re::adversarial::AdvConfig;
use denoise_re::corpus::{generate_synthetic, SyntheticConfig};
use denoise_re::encoders::{Arch, EncoderConfig};
use denoise_re::trainer::{initial_split, pretrain_classifier, train_adversarial, TrainConfig, TrainState};

fn main() -> denoise_re::Result<()> {
    let data = generate_synthetic(&SyntheticConfig {
        n_relations: 4,
        n_entity_pairs: 150,
        min_sentences_per_pair: 1,
        max_sentences_per_pair: 3,
        templates_per_relation: 2,
        noise_rate: 0.3,
        vocab_size: 400,
        seed: 17,
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
        dropout_p: 0.5,
    };
    let cfg = TrainConfig {
        epochs: 20,
        promotion_period: 5,
        pretrain_epochs: 25,
        seed: 17,
        ..TrainConfig::default()
    };
    let adv = AdvConfig {
        conf_batch: 32,
        unconf_batch: 32,
        ..AdvConfig::default()
    };

    let params = pretrain_classifier(&data.train, &enc_cfg, &cfg)?;
    let split = initial_split(&data.train, &params, cfg.confident_fraction)?;
    println!(
        "initial split: {} confident / {} unconfident",
        split.confident().len(),
        split.unconfident().len()
    );

    let state = TrainState::new(split, params, cfg.seed);
    let out = train_adversarial(&data.train, state, &cfg, &adv, None)?;

    println!("\nepoch  L_D     L_S     |I_c|  promoted");
    for m in &out.metrics {
        println!(
            "{:>5}  {:<6.4}  {:<6.4}  {:>5}  {:>8}",
            m.epoch, m.loss_d, m.loss_s, m.confident_size, m.promoted_count
        );
    }

    // how clean is the trusted set the game ends up with?
    let confident = out.split.confident();
    let noisy = confident
        .iter()
        .filter(|id| data.train.get(**id).unwrap().noise_flag == Some(true))
        .count();
    println!(
        "\nconfident set after training: {} instances, {:.1}% noisy (corpus: {:.1}%)",
        confident.len(),
        100.0 * noisy as f64 / confident.len() as f64,
        100.0 * data.train.noise_rate().unwrap()
    );
    Ok(())
}
