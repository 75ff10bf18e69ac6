//! End-to-end pipeline through the file-based stage interface: generate,
//! pretrain, adversarially train, evaluate, inspect — everything a CLI run
//! does, driven as a library.

use denoise_re::commands::{cmd_eval, cmd_gen_data, cmd_inspect, cmd_pretrain, cmd_train};
use denoise_re::config::{load_config, CliOverrides};

fn main() -> denoise_re::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut cfg = load_config(&CliOverrides::default(), std::iter::empty())?;
    cfg.out_dir = dir.path().to_path_buf();
    cfg.seed = 23;
    cfg.n_relations = 4;
    cfg.n_entity_pairs = 120;
    cfg.max_sentences_per_pair = 3;
    cfg.vocab_size = 500;
    cfg.max_len = 20;
    cfg.k_w = 10;
    cfg.k_p = Some(3);
    cfg.k_h = Some(12);
    cfg.pretrain_epochs = 20;
    cfg.epochs = 10;
    cfg.promotion_period = 5;
    cfg.conf_batch = 32;
    cfg.unconf_batch = 32;
    cfg.inspect_k = 3;

    println!("== gen-data ==");
    cmd_gen_data(&cfg, false)?;
    println!("\n== pretrain ==");
    cmd_pretrain(&cfg)?;
    println!("\n== train ==");
    cmd_train(&cfg)?;
    println!("\n== eval ==");
    cmd_eval(&cfg)?;
    println!("\n== inspect ==");
    cmd_inspect(&cfg)?;

    println!("\nartifacts written to the run directory:");
    let mut names: Vec<String> = std::fs::read_dir(dir.path())?
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for n in names {
        println!("  {n}");
    }
    Ok(())
}
