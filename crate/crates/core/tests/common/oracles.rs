//! Metric checks against the frozen Python oracles in `fixtures/` and an
//! exhaustive sweep of the detection rule.

use madsa_core::metrics::{bleu_n, detect_depression, qwk};
use serde::Deserialize;

#[derive(Deserialize)]
struct QwkFixture {
    hand_cases: usize,
    cases: Vec<QwkCase>,
}

#[derive(Deserialize)]
struct QwkCase {
    r: usize,
    y: Vec<usize>,
    y_hat: Vec<usize>,
    kappa: f64,
}

#[derive(Deserialize)]
struct BleuFixture {
    max_order: usize,
    cases: Vec<BleuCase>,
}

#[derive(Deserialize)]
struct BleuCase {
    candidates: Vec<Vec<String>>,
    references: Vec<Vec<String>>,
    bleu: Vec<f64>,
}

pub struct OracleRun {
    pub cases: usize,
    pub hand_cases: usize,
    pub worst: f64,
}

fn fixture(name: &str) -> String {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn qwk_against_oracle() -> OracleRun {
    let f: QwkFixture = serde_json::from_str(&fixture("qwk_oracle.json")).unwrap();
    let mut worst: f64 = 0.0;
    for c in &f.cases {
        let k = qwk(&c.y, &c.y_hat, c.r).unwrap();
        worst = worst.max((k - c.kappa).abs());
    }
    OracleRun { cases: f.cases.len() - f.hand_cases, hand_cases: f.hand_cases, worst }
}

pub fn bleu_against_oracle() -> OracleRun {
    let f: BleuFixture = serde_json::from_str(&fixture("bleu_oracle.json")).unwrap();
    let mut worst: f64 = 0.0;
    for c in &f.cases {
        for n in 1..=f.max_order {
            let b = bleu_n(&c.candidates, &c.references, n).unwrap();
            worst = worst.max((b - c.bleu[n - 1]).abs());
        }
    }
    OracleRun { cases: f.cases.len(), hand_cases: 0, worst }
}

pub struct DetectionSweep {
    pub vectors: usize,
    pub disagreements: usize,
    pub monotone_violations: usize,
}

fn decode(mut code: usize) -> [u8; 8] {
    let mut v = [0u8; 8];
    for slot in &mut v {
        *slot = (code % 4) as u8;
        code /= 4;
    }
    v
}

/// Every vector in {0..3}^8: the flag must equal `sum >= 10`, and raising any
/// single item must never clear it.
pub fn detection_sweep() -> DetectionSweep {
    let mut flags = vec![false; 1 << 16];
    let mut disagreements = 0;
    for (code, flag) in flags.iter_mut().enumerate() {
        let v = decode(code);
        *flag = detect_depression(&v).unwrap();
        let total: u32 = v.iter().map(|&s| u32::from(s)).sum();
        if *flag != (total >= 10) {
            disagreements += 1;
        }
    }
    let mut monotone_violations = 0;
    for code in 0..flags.len() {
        let v = decode(code);
        for (i, &s) in v.iter().enumerate() {
            if s < 3 && flags[code] && !flags[code + 4usize.pow(i as u32)] {
                monotone_violations += 1;
            }
        }
    }
    DetectionSweep { vectors: flags.len(), disagreements, monotone_violations }
}
