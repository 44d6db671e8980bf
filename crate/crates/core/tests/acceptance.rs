//! Acceptance run. Prints one `PASS`/`FAIL` line per criterion and exits
//! nonzero when any criterion fails.

mod common;

use std::collections::{HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use madsa_core::assessor::{AssessorConfig, AssessorModel};
use madsa_core::dialogue::{dialogue_vocabulary, train_dialogue_model, DialogueConfig, DialogueModel, GateOverrides};
use madsa_core::metrics::{evaluate_assessment, evaluate_generation, EvalTable};
use madsa_core::synthesis::{corpus_stats, run_synthesis, train_urg, PhqBank, SynthesisConfig, Urg, UrgConfig};
use madsa_core::system::{InductiveSystem, Session};
use madsa_core::text::{vocab_sidecar, write_jsonl, Aspect, AspectScores, Dialogue, Emotion, Speaker};
use madsa_core::training::TrainConfig;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;

struct Shared {
    bank: PhqBank,
    urg: Urg,
    urg_time: Duration,
}

/// Models from the memorization run, reused by later criteria.
struct Memorized {
    dialogue: DialogueModel,
    dialogue_config: DialogueConfig,
    assessor: AssessorModel,
    corpus: Vec<Dialogue>,
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let checks = common::gradients::suite().map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = checks.iter().max_by(|a, b| a.error.total_cmp(&b.error)).expect("suite is not empty");
    let failing: Vec<&str> = checks.iter().filter(|c| !(c.error < 1e-4)).map(|c| c.name).collect();
    let detail = format!(
        "{} checks, max rel err {:.2e} ({}), {}",
        checks.len(),
        worst.error,
        worst.name,
        secs(elapsed)
    );
    if failing.is_empty() {
        check(elapsed < Duration::from_secs(120), detail)
    } else {
        Err(format!("{detail}; failing: {}", failing.join(", ")))
    }
}

fn qwk_oracle() -> Verdict {
    let run = common::oracles::qwk_against_oracle();
    check(
        run.cases >= 1000 && run.worst < 1e-10,
        format!("{} random + {} hand cases, max |diff| {:.1e}", run.cases, run.hand_cases, run.worst),
    )
}

fn bleu_oracle() -> Verdict {
    let run = common::oracles::bleu_against_oracle();
    check(run.cases >= 500 && run.worst < 1e-10, format!("{} corpora, BLEU-1..4, max |diff| {:.1e}", run.cases, run.worst))
}

fn detection_rule() -> Verdict {
    let start = Instant::now();
    let sweep = common::oracles::detection_sweep();
    let elapsed = start.elapsed();
    check(
        sweep.vectors == 65_536 && sweep.disagreements == 0 && sweep.monotone_violations == 0 && elapsed.as_secs() < 10,
        format!(
            "{} vectors, {} disagreements, {} monotonicity violations, {}",
            sweep.vectors,
            sweep.disagreements,
            sweep.monotone_violations,
            secs(elapsed)
        ),
    )
}

fn jsonl_bytes(corpus: &[Dialogue]) -> Vec<u8> {
    let mut out = Vec::new();
    write_jsonl(corpus, &mut out).expect("in-memory write");
    out
}

fn synthesis_invariants(shared: &Shared) -> Verdict {
    let config = SynthesisConfig { seed: 2024, n_dialogues: 500, ..SynthesisConfig::default() };
    let (corpus, stats) = run_synthesis(&shared.bank, &shared.urg, &config).map_err(|e| e.to_string())?;
    let (again, _) = run_synthesis(&shared.bank, &shared.urg, &config).map_err(|e| e.to_string())?;
    let mut problems = Vec::new();
    if jsonl_bytes(&corpus) != jsonl_bytes(&again) {
        problems.push("re-run differs".to_string());
    }

    // the generator itself must also retrain to identical bytes
    let quick = UrgConfig { train: TrainConfig { epochs: 2, ..UrgConfig::default().train }, ..UrgConfig::default() };
    let a = train_urg(&shared.bank, &quick, |_, _| {}).map_err(|e| e.to_string())?.0;
    let b = train_urg(&shared.bank, &quick, |_, _| {}).map_err(|e| e.to_string())?.0;
    if a.checkpoint().to_bytes().map_err(|e| e.to_string())? != b.checkpoint().to_bytes().map_err(|e| e.to_string())? {
        problems.push("answer generator retrain differs".to_string());
    }

    let mut injected = 0;
    for d in &corpus {
        let mut seen = HashSet::new();
        for (k, t) in d.turns.iter().enumerate() {
            if let Some(aspect) = t.phq_item {
                if t.phq_score != Some(d.aspect_scores.get(aspect)) {
                    problems.push(format!("{} turn {k}: phq_score {:?} vs label", d.id, t.phq_score));
                }
            }
            if t.speaker != Speaker::System {
                continue;
            }
            let Some(aspect) = t.phq_item else { continue };
            injected += 1;
            let after_negative = k > 0 && d.turns[k - 1].is_user() && d.turns[k - 1].emotion == Some(Emotion::Negative);
            if !after_negative {
                problems.push(format!("{} turn {k}: question not after a negative user turn", d.id));
            }
            if !seen.insert(aspect) {
                problems.push(format!("{} turn {k}: {aspect} asked twice", d.id));
            }
        }
    }
    if injected == 0 {
        problems.push("no injections at all".to_string());
    }

    let recount = corpus_stats(&corpus);
    let histogram_ok = stats.dialogues == corpus.len()
        && stats.score_histogram.iter().all(|row| row.iter().sum::<usize>() == corpus.len())
        && stats == recount
        && stats.total_injections() == injected;
    if !histogram_ok {
        problems.push("stats do not match a recount".to_string());
    }

    let detail = format!("{} dialogues, {} injected questions", corpus.len(), injected);
    if problems.is_empty() {
        Ok(detail)
    } else {
        problems.truncate(5);
        Err(format!("{detail}; {}", problems.join("; ")))
    }
}

fn word_salad(rng: &mut ChaCha8Rng, words: &[&str]) -> String {
    let n = rng.gen_range(1..=8);
    let mut out: Vec<String> = (0..n).map(|_| words.choose(rng).expect("words").to_string()).collect();
    if rng.gen_bool(0.2) {
        out.push(format!("zq{}", rng.gen_range(0..1000)));
    }
    out.join(" ")
}

fn gate_soundness(system: &InductiveSystem, corpus: &[Dialogue]) -> Verdict {
    let user_texts: Vec<&str> =
        corpus.iter().flat_map(|d| d.turns.iter().filter(|t| t.is_user()).map(|t| t.text.as_str())).collect();
    let words: Vec<&str> = user_texts.iter().flat_map(|t| t.split_whitespace()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let (mut turns, mut positive, mut induced, mut violations) = (0usize, 0usize, 0usize, Vec::new());

    for session_no in 0..1000 {
        let overrides = GateOverrides {
            emotion: match session_no % 3 {
                0 => None,
                1 => Some(Emotion::Negative),
                _ => Some(Emotion::Positive),
            },
            ..GateOverrides::default()
        };
        let mut session = Session::new();
        let mut asked = HashSet::new();
        for _ in 0..rng.gen_range(1..=10) {
            let text = if rng.gen_bool(0.6) {
                user_texts.choose(&mut rng).expect("corpus has user turns").to_string()
            } else {
                word_salad(&mut rng, &words)
            };
            let mut history = session.turns().to_vec();
            history.push(madsa_core::text::Turn::user(text.trim(), Emotion::Positive));
            let pure = system.dialogue.respond(&history).map_err(|e| e.to_string())?;
            let outcome = system.message_with(&mut session, &text, &overrides).map_err(|e| e.to_string())?;
            turns += 1;
            let gate = &outcome.gate;
            if gate.predicted_emotion == Emotion::Positive {
                positive += 1;
                if gate.induced {
                    violations.push(format!("session {session_no}: induced with positive emotion"));
                }
                if outcome.response != pure.text {
                    violations.push(format!("session {session_no}: positive-path response differs from generation"));
                }
            }
            if let Some(aspect) = gate.induced_aspect() {
                induced += 1;
                if !asked.insert(aspect) {
                    violations.push(format!("session {session_no}: {aspect} induced twice"));
                }
            } else if outcome.response != pure.text {
                violations.push(format!("session {session_no}: non-induced response differs from generation"));
            }
        }
    }
    let detail = format!("1000 sessions, {turns} turns, {positive} positive, {induced} induced");
    if positive == 0 || induced == 0 {
        return Err(format!("{detail}; vacuous run"));
    }
    if violations.is_empty() {
        Ok(detail)
    } else {
        let count = violations.len();
        violations.truncate(3);
        Err(format!("{detail}; {count} violations, e.g. {}", violations.join("; ")))
    }
}

fn assess_corpus(dialogue: &DialogueModel, assessor: &AssessorModel, corpus: &[Dialogue]) -> madsa_core::Result<EvalTable> {
    let mut predictions = HashMap::new();
    for d in corpus {
        let report = assessor.assess_dialogue(dialogue.embedder(), &d.turns)?;
        predictions.insert(d.id.clone(), AspectScores(report.scores));
    }
    evaluate_assessment(&predictions, corpus)
}

fn memorize_config() -> (DialogueConfig, AssessorConfig) {
    let dialogue = DialogueConfig {
        train: TrainConfig {
            epochs: 60,
            batch_size: 1,
            lr: 1e-2,
            weight_decay: 0.0,
            seed: 1,
            target_loss: Some(0.005),
            ..TrainConfig::default()
        },
        ..DialogueConfig::default()
    };
    let assessor = AssessorConfig {
        dropout: 0.0,
        train: TrainConfig { epochs: 20, batch_size: 1, lr: 2e-3, weight_decay: 0.0, seed: 1, ..TrainConfig::default() },
        ..AssessorConfig::default()
    };
    (dialogue, assessor)
}

fn memorization(shared: &Shared, slot: &mut Option<Memorized>) -> Verdict {
    let start = Instant::now();
    let synth = SynthesisConfig { seed: 7, n_dialogues: 20, ..SynthesisConfig::default() };
    let (corpus, _) = run_synthesis(&shared.bank, &shared.urg, &synth).map_err(|e| e.to_string())?;
    let (dialogue_config, assessor_config) = memorize_config();
    let vocab = dialogue_vocabulary(&corpus, &shared.bank).map_err(|e| e.to_string())?;
    let (dialogue, losses) = train_dialogue_model(&corpus, vocab, &dialogue_config, |_, _| {}).map_err(|e| e.to_string())?;
    let nll = dialogue.nll(&corpus).map_err(|e| e.to_string())?;
    let bleu1 = evaluate_generation(&dialogue, &corpus).map_err(|e| e.to_string())?.bleu1;
    let (assessor, _) = madsa_core::assessor::train_assessor(&corpus, dialogue.embedder(), &assessor_config, |_, _| {})
        .map_err(|e| e.to_string())?;
    let table = assess_corpus(&dialogue, &assessor, &corpus).map_err(|e| e.to_string())?;
    let total = start.elapsed() + shared.urg_time;
    let min_qwk = table.aspects.iter().copied().fold(f64::INFINITY, f64::min);
    let detail = format!(
        "NLL {nll:.4} after {} epochs, BLEU-1 {bleu1:.4}, min aspect QWK {min_qwk:.4} (avg {:.4}) in {} epochs, {} incl. generator",
        losses.len(),
        table.average,
        assessor_config.train.epochs,
        secs(total)
    );
    *slot = Some(Memorized { dialogue, dialogue_config, assessor, corpus });
    check(nll < 0.05 && bleu1 >= 0.95 && min_qwk >= 0.9 && total < Duration::from_secs(600), detail)
}

fn ablation_arm(shared: &Shared, gate_enabled: bool, dev: &[Dialogue]) -> madsa_core::Result<f64> {
    let synth = SynthesisConfig { seed: 11, n_dialogues: 200, gate_enabled, ..SynthesisConfig::default() };
    let (corpus, _) = run_synthesis(&shared.bank, &shared.urg, &synth)?;
    let dialogue_config = DialogueConfig {
        train: TrainConfig { epochs: 5, batch_size: 4, lr: 1e-2, weight_decay: 0.0, seed: 5, ..TrainConfig::default() },
        ..DialogueConfig::default()
    };
    let vocab = dialogue_vocabulary(&corpus, &shared.bank)?;
    let (dialogue, _) = train_dialogue_model(&corpus, vocab, &dialogue_config, |_, _| {})?;
    let assessor_config = AssessorConfig {
        filters: 32,
        lstm_units: 32,
        train: TrainConfig { epochs: 20, batch_size: 1, lr: 2e-3, weight_decay: 0.0, seed: 5, ..TrainConfig::default() },
        ..AssessorConfig::default()
    };
    let (assessor, _) = madsa_core::assessor::train_assessor(&corpus, dialogue.embedder(), &assessor_config, |_, _| {})?;
    Ok(assess_corpus(&dialogue, &assessor, dev)?.average)
}

fn ablation(shared: &Shared) -> Verdict {
    let start = Instant::now();
    let dev_config = SynthesisConfig { seed: 99, n_dialogues: 500, ..SynthesisConfig::default() };
    let (dev, _) = run_synthesis(&shared.bank, &shared.urg, &dev_config).map_err(|e| e.to_string())?;
    let on = ablation_arm(shared, true, &dev).map_err(|e| e.to_string())?;
    let off = ablation_arm(shared, false, &dev).map_err(|e| e.to_string())?;
    let diff = on - off;
    check(
        diff >= -0.02,
        format!("dev avg QWK gate on {on:.4}, gate off {off:.4}, difference {diff:+.4}, {}", secs(start.elapsed())),
    )
}

fn same_files(a: &Path, b: &Path) -> bool {
    std::fs::read(a).ok().is_some_and(|x| std::fs::read(b).ok().is_some_and(|y| x == y))
}

fn checkpoint_round_trip(shared: &Shared, models: Option<&Memorized>) -> Verdict {
    let m = models.ok_or("memorization models unavailable")?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name);
    let err = |e: madsa_core::Error| e.to_string();
    let mut problems = Vec::new();

    m.dialogue.save(p("d1.ckpt")).map_err(err)?;
    let dialogue = DialogueModel::load(p("d1.ckpt"), &m.dialogue_config).map_err(err)?;
    dialogue.save(p("d2.ckpt")).map_err(err)?;
    if !same_files(&p("d1.ckpt"), &p("d2.ckpt")) || !same_files(&vocab_sidecar(p("d1.ckpt")), &vocab_sidecar(p("d2.ckpt"))) {
        problems.push("dialogue files differ");
    }

    m.assessor.save(p("a1.ckpt")).map_err(err)?;
    let assessor = AssessorModel::load(p("a1.ckpt"), m.assessor.dropout()).map_err(err)?;
    assessor.save(p("a2.ckpt")).map_err(err)?;
    if !same_files(&p("a1.ckpt"), &p("a2.ckpt")) {
        problems.push("assessor files differ");
    }

    shared.urg.save(p("u1.ckpt")).map_err(err)?;
    let urg = Urg::load(p("u1.ckpt")).map_err(err)?;
    urg.save(p("u2.ckpt")).map_err(err)?;
    if !same_files(&p("u1.ckpt"), &p("u2.ckpt")) || !same_files(&vocab_sidecar(p("u1.ckpt")), &vocab_sidecar(p("u2.ckpt"))) {
        problems.push("answer generator files differ");
    }

    let mut outputs = 0;
    for d in &m.corpus {
        for k in (1..=d.turns.len()).step_by(2) {
            let before = m.dialogue.respond(&d.turns[..k]).map_err(err)?;
            let after = dialogue.respond(&d.turns[..k]).map_err(err)?;
            if before.text != after.text || before.emotion.probability.to_bits() != after.emotion.probability.to_bits() {
                problems.push("dialogue output differs");
            }
            outputs += 1;
        }
        let before = m.assessor.assess_dialogue(m.dialogue.embedder(), &d.turns).map_err(err)?;
        let after = assessor.assess_dialogue(dialogue.embedder(), &d.turns).map_err(err)?;
        if before.raw.map(f64::to_bits) != after.raw.map(f64::to_bits) {
            problems.push("assessor output differs");
        }
        outputs += 1;
    }
    for aspect in Aspect::ALL {
        for score in 0..=3 {
            let before = shared.urg.generate_for(&shared.bank, aspect, score).map_err(err)?;
            let after = urg.generate_for(&shared.bank, aspect, score).map_err(err)?;
            if before != after {
                problems.push("answer generator output differs");
            }
            outputs += 1;
        }
    }
    problems.dedup();
    let detail = format!("3 checkpoints, {outputs} outputs compared");
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", problems.join("; ")))
    }
}

fn run(name: &str, results: &mut Vec<bool>, f: impl FnOnce() -> Verdict) {
    let start = Instant::now();
    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|panic| {
        let message = panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {message}"))
    });
    let elapsed = secs(start.elapsed());
    match &verdict {
        Ok(detail) => println!("PASS {name}: {detail} [{elapsed}]"),
        Err(detail) => println!("FAIL {name}: {detail} [{elapsed}]"),
    }
    results.push(verdict.is_ok());
}

fn main() {
    let mut results = Vec::new();
    run("gradient suite", &mut results, gradient_suite);
    run("QWK oracle equivalence", &mut results, qwk_oracle);
    run("BLEU oracle equivalence", &mut results, bleu_oracle);
    run("detection rule", &mut results, detection_rule);

    let bank = PhqBank::standard();
    let start = Instant::now();
    let urg = match train_urg(&bank, &UrgConfig::default(), |_, _| {}) {
        Ok((urg, _)) => urg,
        Err(e) => {
            println!("FAIL answer generator training: {e}");
            std::process::exit(1);
        }
    };
    let shared = Shared { bank, urg, urg_time: start.elapsed() };
    eprintln!("answer generator trained in {}", secs(shared.urg_time));

    run("synthesis invariants", &mut results, || synthesis_invariants(&shared));
    let mut memorized = None;
    run("memorization", &mut results, || memorization(&shared, &mut memorized));
    run("gate soundness", &mut results, || {
        let m = memorized.as_ref().ok_or("memorization models unavailable")?;
        let assessor = m.assessor.clone();
        let system = InductiveSystem::new(m.dialogue.clone(), assessor, shared.bank.clone()).map_err(|e| e.to_string())?;
        gate_soundness(&system, &m.corpus)
    });
    run("ablation direction", &mut results, || ablation(&shared));
    run("checkpoint round-trip", &mut results, || checkpoint_round_trip(&shared, memorized.as_ref()));

    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
