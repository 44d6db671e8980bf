use std::io::{BufRead, IsTerminal, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, PoisonError};

use super::{require, ChatArgs, CliError, CliResult, Context};
use crate::dialogue::GateOverrides;
use crate::error::Error;
use crate::system::{InductiveSystem, Session};

pub(crate) fn chat(ctx: Context, args: &ChatArgs) -> CliResult {
    let system = ctx.system(&args.models)?;
    let overrides = match &args.gate_hook {
        Some(path) => {
            require(path, "gate hook")?;
            let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&raw).map_err(|e| CliError::Input(format!("gate hook {}: {e}", path.display())))?
        }
        None => GateOverrides::default(),
    };
    let transcript = ctx.data_path(args.transcript.as_ref(), "transcript.jsonl");
    let session = Arc::new(Mutex::new(Session::new()));

    let on_interrupt = (Arc::clone(&session), transcript.clone());
    ctrlc::set_handler(move || {
        let (session, path) = &on_interrupt;
        let session = session.lock().unwrap_or_else(PoisonError::into_inner);
        match session.save_transcript(path) {
            Ok(()) => eprintln!("\ninterrupted, transcript saved to {}", path.display()),
            Err(e) => eprintln!("\ninterrupted, transcript not saved: {e}"),
        }
        std::process::exit(0);
    })
    .map_err(|e| CliError::Environment(format!("cannot install interrupt handler: {e}")))?;

    let stdin = std::io::stdin();
    let interactive = stdin.is_terminal();
    if interactive {
        println!("type a message, /assess for a severity report, /quit to leave");
    }
    let result = repl(&system, &session, &overrides, stdin.lock(), std::io::stdout().lock(), interactive);
    save(&session, &transcript)?;
    result
}

fn save(session: &Mutex<Session>, path: &Path) -> CliResult {
    let session = session.lock().unwrap_or_else(PoisonError::into_inner);
    session.save_transcript(path)?;
    eprintln!("transcript saved to {}", path.display());
    Ok(())
}

/// Reads lines until `/quit` or end of input.
pub(crate) fn repl<R: BufRead, W: Write>(
    system: &InductiveSystem,
    session: &Mutex<Session>,
    overrides: &GateOverrides,
    input: R,
    mut out: W,
    prompt: bool,
) -> CliResult {
    let io_err = |e| CliError::Environment(format!("terminal: {e}"));
    let mut lines = input.lines();
    loop {
        if prompt {
            write!(out, "you> ").and_then(|_| out.flush()).map_err(io_err)?;
        }
        let Some(line) = lines.next() else { break };
        let line = line.map_err(io_err)?;
        let line = line.trim();
        match line {
            "" => continue,
            "/quit" => break,
            "/assess" => {
                let session = session.lock().unwrap_or_else(PoisonError::into_inner);
                let report = system.assess(&session)?;
                let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
                writeln!(out, "{text}").map_err(io_err)?;
            }
            text => {
                let mut session = session.lock().unwrap_or_else(PoisonError::into_inner);
                let outcome = system.message_with(&mut session, text, overrides)?;
                let marker = if outcome.gate.induced { " [induced]" } else { "" };
                writeln!(out, "system> {}{marker}", outcome.response).map_err(io_err)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::test_support::tiny_system;
    use crate::text::Emotion;
    use std::collections::HashMap;

    fn run(system: &InductiveSystem, overrides: &GateOverrides, input: &str) -> (String, Session) {
        let session = Mutex::new(Session::new());
        let mut out = Vec::new();
        repl(system, &session, overrides, input.as_bytes(), &mut out, false).unwrap();
        (String::from_utf8(out).unwrap(), session.into_inner().unwrap())
    }

    #[test]
    fn assess_before_any_message_prints_a_report() {
        let (out, session) = run(&tiny_system(), &GateOverrides::default(), "/assess\n");
        let report: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(report["scores"].as_array().unwrap().len(), 8);
        assert!(report["depressed"].is_boolean());
        assert!(session.turns().is_empty());
    }

    #[test]
    fn quit_stops_reading() {
        let (out, session) = run(&tiny_system(), &GateOverrides::default(), "hello\n\n/quit\nnever read\n");
        assert_eq!(out.lines().filter(|l| l.starts_with("system> ")).count(), 1);
        assert_eq!(session.turns().len(), 2);
    }

    #[test]
    fn rigged_gate_marks_the_question() {
        let system = tiny_system();
        let question = system.bank.items()[0].question.clone();
        let rig = GateOverrides {
            emotion: Some(Emotion::Negative),
            context: Some(vec![1.0; 8]),
            vectors: HashMap::from([(question.clone(), vec![1.0; 8])]),
        };
        let (out, _) = run(&system, &rig, "i feel hopeless\n");
        assert_eq!(out.trim_end(), format!("system> {question} [induced]"));
    }
}
