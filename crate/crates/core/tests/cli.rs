use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;

use madsa_core::tensor::Checkpoint;

fn madsa() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_madsa"));
    cmd.env_remove("MADSA_DATA_DIR");
    cmd
}

fn run(args: &[&str]) -> Output {
    madsa().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = r#"
[dialogue]
embed = 8
hidden = 16
max_response = 12

[assessor]
filters = 8
lstm_units = 8
"#;

/// A small corpus with trained dialogue and assessor checkpoints, built once
/// through the binary.
fn fixture() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli_fixture");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let config = dir.join("tiny.toml");
        std::fs::write(&config, TINY).unwrap();
        let d = s(&dir);
        let c = s(&config);
        ok(&["synth", "--n", "20", "--seed", "3", "--urg-epochs", "2", "--data-dir", d]);
        ok(&["train", "dialogue", "--epochs", "2", "--lr", "0.01", "--config", c, "--data-dir", d]);
        ok(&["train", "assessor", "--epochs", "3", "--lr", "0.01", "--config", c, "--data-dir", d]);
        dir
    })
}

#[test]
fn synth_writes_split_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth", "--n", "200", "--seed", "7", "--urg-epochs", "2", "--out", s(&a)]);
    ok(&["synth", "--n", "200", "--seed", "7", "--urg-epochs", "2", "--out", s(&b)]);
    for name in ["train.jsonl", "dev.jsonl", "stats.json"] {
        let x = std::fs::read(a.join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.join(name)).unwrap(), "{name} differs between runs");
    }
    let train = std::fs::read_to_string(a.join("train.jsonl")).unwrap();
    let dev = std::fs::read_to_string(a.join("dev.jsonl")).unwrap();
    assert_eq!((train.lines().count(), dev.lines().count()), (180, 20));
    let stats: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["corpus"]["dialogues"], 200);
    assert_eq!(stats["train"]["dialogues"], 180);
    assert_eq!(stats["seed"], 7);

    ok(&["synth", "--n", "200", "--seed", "8", "--urg", s(&a.join("urg.ckpt")), "--out", s(&b)]);
    assert_ne!(std::fs::read(a.join("train.jsonl")).unwrap(), std::fs::read(b.join("train.jsonl")).unwrap());
}

#[test]
fn missing_phq_bank_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--n", "5", "--phq-bank", "/nonexistent/bank.json", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("phq bank not found"));
}

#[test]
fn assessor_needs_a_dialogue_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["train", "assessor", "--data-dir", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("frozen encoder required"));
}

#[test]
fn training_writes_checkpoints_and_loss_logs() {
    let dir = fixture();
    let dialogue = Checkpoint::load(dir.join("dialogue.ckpt")).unwrap();
    assert!(dialogue.tensors().iter().all(|(k, _)| k.starts_with("dialogue.")));
    assert!(dialogue.tensors().iter().any(|(k, _)| k.starts_with("dialogue.encoder.")));
    let assessor = Checkpoint::load(dir.join("assessor.ckpt")).unwrap();
    assert!(assessor.tensors().iter().all(|(k, _)| k.starts_with("assessor.")));

    for (name, epochs) in [("dialogue.loss.csv", 2), ("assessor.loss.csv", 3)] {
        let csv = std::fs::read_to_string(dir.join(name)).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("epoch,loss"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), epochs, "{name}");
        for (i, row) in rows.iter().enumerate() {
            let (epoch, loss) = row.split_once(',').unwrap();
            assert_eq!(epoch.parse::<usize>().unwrap(), i + 1);
            assert!(loss.parse::<f64>().unwrap().is_finite());
        }
    }
}

#[test]
fn data_dir_comes_from_the_environment() {
    let dir = fixture();
    let out = madsa()
        .env("MADSA_DATA_DIR", dir)
        .args(["eval", "--json", "--config", s(&dir.join("tiny.toml"))])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_prints_tables_and_json() {
    let dir = fixture();
    let c = dir.join("tiny.toml");
    let out = ok(&["eval", "--data-dir", s(dir), "--config", s(&c)]);
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in ["Interest", "Self-esteem", "Moving", "Average", "BLEU-1", "BLEU-2", "Detection"] {
        assert!(text.contains(needle), "missing {needle} in\n{text}");
    }

    let out = ok(&["eval", "--json", "--data-dir", s(dir), "--config", s(&c)]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let aspects = v["qwk"]["aspects"].as_object().unwrap();
    assert_eq!(aspects.len(), 8);
    for key in ["interest", "mood", "sleep", "appetite", "fatigue", "self_esteem", "concentration", "moving"] {
        assert!(aspects[key].as_f64().unwrap() <= 1.0, "{key}");
    }
    assert!(v["qwk"]["average"].is_f64());
    for key in ["bleu1", "bleu2"] {
        let b = v["bleu"][key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&b));
    }
    assert_eq!(v["detection"]["total"], 2);
    let acc = v["detection"]["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let out = run(&["eval", "--data-dir", s(dir), "--corpus", "/nonexistent/dev.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn chat_session_with_transcript_and_rigged_gate() {
    let dir = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let transcript = tmp.path().join("chat.jsonl");
    let question = madsa_core::synthesis::PhqBank::standard().items()[0].question.clone();
    let hook = tmp.path().join("hook.json");
    let rig = serde_json::json!({
        "emotion": "negative",
        "context": vec![1.0; 16],
        "vectors": { question.clone(): vec![1.0; 16] },
    });
    std::fs::write(&hook, rig.to_string()).unwrap();

    let mut child = madsa()
        .args(["chat", "--data-dir", s(dir), "--config", s(&dir.join("tiny.toml"))])
        .args(["--transcript", s(&transcript), "--gate-hook", s(&hook)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"/assess\ni feel hopeless\n/quit\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("\"depressed\""), "{stdout}");
    assert!(stdout.contains(&format!("system> {question} [induced]")), "{stdout}");

    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&transcript)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["speaker"], "user");
    assert_eq!(lines[0]["emotion"], "negative");
    assert_eq!(lines[1]["induced"], true);
    assert_eq!(lines[1]["aspect"], "interest");
}

#[test]
fn chat_saves_transcript_at_end_of_input() {
    let dir = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let transcript = tmp.path().join("t.jsonl");
    let mut child = madsa()
        .args(["chat", "--data-dir", s(dir), "--config", s(&dir.join("tiny.toml")), "--transcript", s(&transcript)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"hello\nhow are you\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(&transcript).unwrap().lines().count(), 4);
}

#[test]
fn nan_during_training_exits_with_code_3() {
    let dir = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "dialogue",
        "--epochs",
        "3",
        "--lr",
        "1e300",
        "--config",
        s(&dir.join("tiny.toml")),
        "--train",
        s(&dir.join("train.jsonl")),
        "--out",
        s(&tmp.path().join("nan.ckpt")),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn serve_port_in_use_exits_with_code_4() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = run(&["serve", "--port", &port, "--data-dir", "/nonexistent"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

fn http(addr: &str, request: &str) -> String {
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.write_all(request.as_bytes()).unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    response
}

#[test]
fn serve_answers_over_tcp() {
    let dir = fixture();
    let mut child = madsa()
        .args(["serve", "--port", "0", "--data-dir", s(dir), "--config", s(&dir.join("tiny.toml"))])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap().to_string();

    let created = http(&addr, "POST /api/session HTTP/1.1\r\nHost: x\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
    assert!(created.starts_with("HTTP/1.1 201"), "{created}");
    let body = created.split("\r\n\r\n").nth(1).unwrap();
    let id = serde_json::from_str::<serde_json::Value>(body).unwrap()["session_id"].as_str().unwrap().to_string();

    let msg = r#"{"text": "hello there"}"#;
    let reply = http(
        &addr,
        &format!(
            "POST /api/session/{id}/message HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{msg}",
            msg.len()
        ),
    );
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"turn_index\":1"));

    let report = http(&addr, &format!("GET /api/session/{id}/assessment HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n"));
    assert!(report.starts_with("HTTP/1.1 200") && report.contains("\"total\""), "{report}");
    child.kill().unwrap();
    child.wait().unwrap();
}
