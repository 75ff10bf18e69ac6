//! Pipeline stages behind the CLI subcommands. Each stage is a pure
//! function of (config, seed, input files) onto files in the output
//! directory.

use std::path::PathBuf;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::corpus::{
    fact_set, generate_synthetic, load_corpus, save_corpus, Corpus, RelationSchema, Vocabulary,
};
use crate::encoders::EncoderParams;
use crate::error::{Error, Result};
use crate::eval::{
    few_sentence_eval, inspect, noise_detection_auc, p_at_n, pr_curve, score_triples,
    write_pn_csv, write_pr_csv, SentenceBudget,
};
use crate::trainer::{
    initial_split, pretrain_classifier, train_adversarial, write_metrics_csv, TrainState,
};

/// Print to stdout, tolerating a closed pipe (e.g. `... | head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const SCHEMA_FILE: &str = "schema.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const PRETRAIN_CKPT: &str = "pretrain.ckpt";
pub const FINAL_CKPT: &str = "final.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";

fn require(path: PathBuf, hint: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::Config(format!(
            "{} not found; run `denoise-re {hint}` first",
            path.display()
        )))
    }
}

struct Dataset {
    train: Corpus,
    test: Corpus,
    schema: RelationSchema,
    vocab: Vocabulary,
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = &cfg.out_dir;
    let schema = RelationSchema::load(&require(dir.join(SCHEMA_FILE), "gen-data")?)?;
    let vocab = Vocabulary::load(&require(dir.join(VOCAB_FILE), "gen-data")?)?;
    let train = load_corpus(
        &require(dir.join(TRAIN_FILE), "gen-data")?,
        schema.len(),
        cfg.max_len,
    )?;
    let test = load_corpus(
        &require(dir.join(TEST_FILE), "gen-data")?,
        schema.len(),
        cfg.max_len,
    )?;
    Ok(Dataset {
        train,
        test,
        schema,
        vocab,
    })
}

fn load_checkpoint(cfg: &RunConfig, file: &str, hint: &str) -> Result<EncoderParams> {
    checkpoint::load(&require(cfg.out_dir.join(file), hint)?)
}

/// Generate the synthetic corpus files into the output directory.
pub fn cmd_gen_data(cfg: &RunConfig, force: bool) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let files = [TRAIN_FILE, TEST_FILE, SCHEMA_FILE, VOCAB_FILE];
    if !force {
        for f in files {
            let path = cfg.out_dir.join(f);
            if path.exists() {
                return Err(Error::Config(format!(
                    "{} already exists; pass --force to overwrite",
                    path.display()
                )));
            }
        }
    }
    let data = generate_synthetic(&cfg.synthetic_config())?;
    save_corpus(&data.train, &cfg.out_dir.join(TRAIN_FILE))?;
    save_corpus(&data.test, &cfg.out_dir.join(TEST_FILE))?;
    data.schema.save(&cfg.out_dir.join(SCHEMA_FILE))?;
    data.vocab.save(&cfg.out_dir.join(VOCAB_FILE))?;
    cfg.echo(&cfg.out_dir)?;
    out!(
        "generated {} train / {} test instances, {} relations, noise rate {:.3}",
        data.train.len(),
        data.test.len(),
        data.schema.len(),
        data.train.noise_rate().unwrap_or(0.0)
    );
    Ok(())
}

/// Pretrain the relation classifier and checkpoint it.
pub fn cmd_pretrain(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let enc_cfg = cfg.encoder_config(ds.vocab.size(), ds.schema.len());
    enc_cfg.validate()?;
    let params = pretrain_classifier(&ds.train, &enc_cfg, &cfg.train_config())?;
    checkpoint::save(&params, &cfg.out_dir.join(PRETRAIN_CKPT))?;
    cfg.echo(&cfg.out_dir)?;
    out!(
        "pretrained {} for {} epochs -> {}",
        cfg.arch,
        cfg.pretrain_epochs,
        cfg.out_dir.join(PRETRAIN_CKPT).display()
    );
    Ok(())
}

/// Adversarial training from the pretrained checkpoint.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let params = load_checkpoint(cfg, PRETRAIN_CKPT, "pretrain")?;
    let split = initial_split(&ds.train, &params, cfg.confident_fraction)?;
    let state = TrainState::new(split, params, cfg.seed);
    let out = train_adversarial(
        &ds.train,
        state,
        &cfg.train_config(),
        &cfg.adv_config(),
        Some(&cfg.out_dir),
    )?;
    write_metrics_csv(&out.metrics, &cfg.out_dir.join(METRICS_FILE))?;
    cfg.echo(&cfg.out_dir)?;
    out!(
        "trained {} epochs; confident set {} of {} instances -> {}",
        out.epoch,
        out.split.confident().len(),
        ds.train.len(),
        cfg.out_dir.join(FINAL_CKPT).display()
    );
    Ok(())
}

/// Held-out ranking metrics, few-sentence regimes, and noise detection.
pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let params = load_checkpoint(cfg, &cfg.eval_checkpoint, "train")?;
    let facts = fact_set(&ds.test, ds.schema.na_id());

    let ranked = score_triples(&ds.test, &params, &facts, cfg.aggregation)?;
    let curve = pr_curve(&ranked)?;
    write_pr_csv(&curve, &cfg.out_dir.join("pr_curve.csv"))?;

    let mut ns: Vec<usize> = if ranked.len() >= 300 {
        vec![100, 200, 300]
    } else {
        vec![20, 50, 100]
    };
    ns.retain(|n| *n <= ranked.len());
    if ns.is_empty() {
        ns.push(ranked.len());
    }
    let mut pn_rows = Vec::new();
    for &n in &ns {
        let p = p_at_n(&ranked, n)?;
        out!("P@{n} {p:.4}");
        pn_rows.push((n, p));
    }
    write_pn_csv(&pn_rows, &cfg.out_dir.join("pn.csv"))?;

    let mut budget_rows = String::from("budget,n,precision\n");
    for budget in [SentenceBudget::One, SentenceBudget::Two, SentenceBudget::All] {
        let report = few_sentence_eval(
            &ds.test,
            &params,
            &facts,
            cfg.aggregation,
            budget,
            cfg.seed,
        )?;
        let tag = match budget {
            SentenceBudget::One => "one",
            SentenceBudget::Two => "two",
            SentenceBudget::All => "all",
        };
        for (n, p) in report.n_values.iter().zip(&report.precisions) {
            budget_rows.push_str(&format!("{tag},{n},{p}\n"));
        }
        budget_rows.push_str(&format!("{tag},mean,{}\n", report.mean));
    }
    std::fs::write(cfg.out_dir.join("few_sentence.csv"), budget_rows)?;

    if ds.train.noise_rate().is_some() {
        let auc = noise_detection_auc(&ds.train, &params)?;
        std::fs::write(
            cfg.out_dir.join("noise_auc.csv"),
            format!(
                "scorer,auc\nconfusing,{}\ndiscriminator,{}\n",
                auc.by_confusing, auc.by_discriminator
            ),
        )?;
        out!(
            "noise detection AUC: confusing {:.4}, discriminator {:.4}",
            auc.by_confusing, auc.by_discriminator
        );
    } else {
        log::warn!("corpus has no noise flags; skipping noise detection");
    }
    cfg.echo(&cfg.out_dir)?;
    Ok(())
}

/// Print the most and least confusing instances of one relation.
pub fn cmd_inspect(cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let params = load_checkpoint(cfg, &cfg.eval_checkpoint, "train")?;
    let report = inspect(
        &ds.train,
        &params,
        &ds.vocab,
        cfg.inspect_relation,
        cfg.inspect_k,
    )?;
    out!(
        "relation {} ({})",
        report.relation,
        ds.schema.name(report.relation)
    );
    if let Some(note) = &report.note {
        out!("note: {note}");
    }
    print_entries("most confusing (highest C)", &report.top);
    print_entries("least confusing (lowest C)", &report.bottom);
    Ok(())
}

fn print_entries(heading: &str, entries: &[crate::eval::InspectEntry]) {
    out!("{heading}:");
    for e in entries {
        let flag = match e.noise_flag {
            Some(true) => " [noisy]",
            Some(false) => " [clean]",
            None => "",
        };
        out!(
            "  #{} C={:+.4} D={:.4}{flag} {}",
            e.id, e.confusing, e.discriminator, e.rendered
        );
    }
}

/// Dispatch a parsed subcommand.
pub fn run(cmd: &Command, cfg: &RunConfig, force: bool) -> Result<()> {
    match cmd {
        Command::GenData => cmd_gen_data(cfg, force),
        Command::Pretrain => cmd_pretrain(cfg),
        Command::Train => cmd_train(cfg),
        Command::Eval => cmd_eval(cfg),
        Command::Inspect => cmd_inspect(cfg),
    }
}

/// The five pipeline stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    Pretrain,
    Train,
    Eval,
    Inspect,
}
