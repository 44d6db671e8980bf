use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;

use super::{require, CliError, CliResult, Context, EvalArgs, Hyper, SynthArgs, TrainAssessorArgs, TrainDialogueArgs};
use crate::assessor::train_assessor as fit_assessor;
use crate::dialogue::{dialogue_vocabulary, train_dialogue_model, DialogueModel};
use crate::error::Error;
use crate::synthesis::{corpus_stats, run_synthesis, split_train_dev, train_urg, Urg};
use crate::text::{load_jsonl, save_jsonl};
use crate::training::TrainConfig;

fn progress(stage: &'static str, epochs: usize) -> impl FnMut(usize, f64) {
    move |epoch, loss| eprintln!("{stage}: epoch {epoch}/{epochs} loss {loss:.6}")
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e).into())
}

/// `epoch,loss` with one row per epoch, epochs counted from 1.
pub(crate) fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(out, "{},{l}", i + 1);
    }
    out
}

fn apply_hyper(train: &mut TrainConfig, hyper: &Hyper) -> CliResult {
    if let Some(e) = hyper.epochs {
        train.epochs = e;
    }
    if let Some(lr) = hyper.lr {
        train.lr = lr;
    }
    if let Some(b) = hyper.batch_size {
        train.batch_size = b;
    }
    Ok(train.validate()?)
}

pub(crate) fn synth(mut ctx: Context, args: &SynthArgs) -> CliResult {
    let bank = ctx.bank(args.phq_bank.as_ref())?;
    let cfg = &mut ctx.config;
    if let Some(n) = args.n {
        cfg.synthesis.n_dialogues = n;
    }
    if let Some(f) = args.dev_fraction {
        cfg.dev_fraction = f;
    }
    if let Some(e) = args.urg_epochs {
        cfg.urg.train.epochs = e;
    }
    if args.no_gate {
        cfg.synthesis.gate_enabled = false;
    }
    cfg.validate()?;
    let out = args.out.clone().unwrap_or_else(|| ctx.data_dir.clone());

    let urg = match &args.urg {
        Some(path) => {
            require(path, "answer generator checkpoint")?;
            Urg::load(path)?
        }
        None => train_urg(&bank, &cfg.urg, progress("urg", cfg.urg.train.epochs))?.0,
    };
    let (corpus, stats) = run_synthesis(&bank, &urg, &cfg.synthesis)?;
    let (train, dev) = split_train_dev(&corpus, cfg.seed, cfg.dev_fraction);

    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    save_jsonl(&train, out.join("train.jsonl"))?;
    save_jsonl(&dev, out.join("dev.jsonl"))?;
    urg.save(out.join("urg.ckpt"))?;
    let summary = json!({
        "seed": cfg.seed,
        "gate_enabled": cfg.synthesis.gate_enabled,
        "corpus": stats,
        "train": corpus_stats(&train),
        "dev": corpus_stats(&dev),
    });
    write_text(&out.join("stats.json"), &(serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n"))?;
    println!(
        "wrote {} train and {} dev dialogues ({} injected questions) to {}",
        train.len(),
        dev.len(),
        stats.total_injections(),
        out.display()
    );
    Ok(())
}

pub(crate) fn train_dialogue(mut ctx: Context, args: &TrainDialogueArgs) -> CliResult {
    let bank = ctx.bank(args.phq_bank.as_ref())?;
    let train_path = ctx.data_path(args.hyper.train.as_ref(), "train.jsonl");
    let out = ctx.data_path(args.hyper.out.as_ref(), "dialogue.ckpt");
    let cfg = &mut ctx.config.dialogue;
    if let Some(e) = args.embed {
        cfg.embed = e;
    }
    if let Some(h) = args.hidden {
        cfg.hidden = h;
    }
    apply_hyper(&mut cfg.train, &args.hyper)?;
    ctx.config.validate()?;
    let cfg = &ctx.config.dialogue;

    require(&train_path, "training corpus")?;
    let corpus = load_jsonl(&train_path)?;
    let vocab = dialogue_vocabulary(&corpus, &bank)?;
    let (model, losses) = train_dialogue_model(&corpus, vocab, cfg, progress("dialogue", cfg.train.epochs))?;
    model.save(&out)?;
    write_text(&out.with_extension("loss.csv"), &loss_csv(&losses))?;
    println!("saved dialogue model to {}", out.display());
    Ok(())
}

pub(crate) fn train_assessor(mut ctx: Context, args: &TrainAssessorArgs) -> CliResult {
    let dialogue_path = ctx.data_path(args.dialogue.as_ref(), "dialogue.ckpt");
    if !dialogue_path.exists() {
        return Err(CliError::Input(format!(
            "frozen encoder required: no dialogue checkpoint at {}",
            dialogue_path.display()
        )));
    }
    let train_path = ctx.data_path(args.hyper.train.as_ref(), "train.jsonl");
    let out = ctx.data_path(args.hyper.out.as_ref(), "assessor.ckpt");
    let cfg = &mut ctx.config.assessor;
    if let Some(f) = args.filters {
        cfg.filters = f;
    }
    if let Some(u) = args.lstm_units {
        cfg.lstm_units = u;
    }
    apply_hyper(&mut cfg.train, &args.hyper)?;
    ctx.config.validate()?;
    let cfg = &ctx.config.assessor;

    require(&train_path, "training corpus")?;
    let corpus = load_jsonl(&train_path)?;
    let dialogue = DialogueModel::load(&dialogue_path, &ctx.config.dialogue)?;
    let (model, losses) = fit_assessor(&corpus, dialogue.embedder(), cfg, progress("assessor", cfg.train.epochs))?;
    model.save(&out)?;
    write_text(&out.with_extension("loss.csv"), &loss_csv(&losses))?;
    println!("saved assessor to {}", out.display());
    Ok(())
}

pub(crate) fn eval(ctx: Context, args: &EvalArgs) -> CliResult {
    let corpus_path = ctx.data_path(args.corpus.as_ref(), "dev.jsonl");
    require(&corpus_path, "evaluation corpus")?;
    let corpus = load_jsonl(&corpus_path)?;
    let system = ctx.system(&args.models)?;
    let report = system.evaluate(&corpus)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report.to_json()).map_err(Error::from)?);
    } else {
        println!("{report}");
    }
    Ok(())
}
