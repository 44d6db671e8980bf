//! Finite-difference checks for every differentiable op and both full model
//! losses, at tiny dimensions in f64 with dropout off.

use madsa_core::assessor::{embed_dialogue, AssessorConfig, AssessorModel};
use madsa_core::dialogue::{dialogue_vocabulary, training_samples, DialogueConfig, DialogueModel, DIALOGUE_PREFIX};
use madsa_core::seq2seq::Seq2Seq;
use madsa_core::synthesis::PhqBank;
use madsa_core::tensor::nn::{scaled_dot_attention, weighted_rows, AttentionPool, Linear, Lstm};
use madsa_core::tensor::{gradient_check_params, Binding, ParamStore, Tape, Tensor, Var};
use madsa_core::text::{AspectScores, Dialogue, Emotion, Turn};
use madsa_core::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Check {
    pub name: &'static str,
    pub error: f64,
}

/// Loss reduction with fixed, position-dependent weights so that
/// misrouted gradients cannot cancel out.
fn probe(tape: &mut Tape, v: Var) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.7 * ((i * 7919 % 13) as f64 / 13.0) - 0.5 * (i % 2) as f64).collect();
    let w = tape.constant(Tensor::new(shape, w)?);
    let y = tape.mul(v, w)?;
    Ok(tape.sum(y))
}

fn store_with(tensors: &[(&str, &[usize])], seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in tensors {
        store.insert(*name, Tensor::uniform(shape, 1.0, &mut rng));
    }
    store
}

fn check(
    name: &'static str,
    store: &ParamStore,
    eps: f64,
    f: impl Fn(&mut Tape, &Binding, &ParamStore) -> Result<Var>,
) -> Result<Check> {
    let error = gradient_check_params(|tape, b| f(tape, b, store), store, eps)?;
    Ok(Check { name, error })
}

fn v(b: &Binding, store: &ParamStore, name: &str) -> Var {
    b.var(store.id(name).expect("tensor registered"))
}

const EPS: f64 = 1e-5;

pub fn suite() -> Result<Vec<Check>> {
    let mut out = Vec::new();

    let s = store_with(&[("a", &[2, 3]), ("b", &[3, 4])], 1);
    out.push(check("matmul", &s, EPS, |t, b, s| {
        let y = t.matmul(v(b, s, "a"), v(b, s, "b"))?;
        probe(t, y)
    })?);
    let s = store_with(&[("a", &[3]), ("b", &[3, 2])], 2);
    out.push(check("matmul vector-matrix", &s, EPS, |t, b, s| {
        let y = t.matmul(v(b, s, "a"), v(b, s, "b"))?;
        probe(t, y)
    })?);
    let s = store_with(&[("a", &[2, 3])], 3);
    out.push(check("transpose", &s, EPS, |t, b, s| {
        let y = t.transpose(v(b, s, "a"))?;
        probe(t, y)
    })?);
    out.push(check("reshape", &s, EPS, |t, b, s| {
        let y = t.reshape(v(b, s, "a"), &[3, 2])?;
        probe(t, y)
    })?);
    let ab = store_with(&[("a", &[2, 3]), ("b", &[2, 3])], 4);
    let a = store_with(&[("a", &[2, 3])], 5);
    let ar = store_with(&[("a", &[2, 3]), ("r", &[3])], 6);
    let r = store_with(&[("r", &[3])], 7);
    out.push(check("add", &ab, EPS, |t, b, s| {
        let y = t.add(v(b, s, "a"), v(b, s, "b"))?;
        probe(t, y)
    })?);
    out.push(check("sub", &ab, EPS, |t, b, s| {
        let y = t.sub(v(b, s, "a"), v(b, s, "b"))?;
        probe(t, y)
    })?);
    out.push(check("mul", &ab, EPS, |t, b, s| {
        let y = t.mul(v(b, s, "a"), v(b, s, "b"))?;
        probe(t, y)
    })?);
    out.push(check("add_row", &ar, EPS, |t, b, s| {
        let y = t.add_row(v(b, s, "a"), v(b, s, "r"))?;
        probe(t, y)
    })?);
    out.push(check("scale", &a, EPS, |t, b, s| {
        let y = t.scale(v(b, s, "a"), -1.7);
        probe(t, y)
    })?);
    out.push(check("sigmoid", &a, EPS, |t, b, s| {
        let y = t.sigmoid(v(b, s, "a"));
        probe(t, y)
    })?);
    out.push(check("tanh", &a, EPS, |t, b, s| {
        let y = t.tanh(v(b, s, "a"));
        probe(t, y)
    })?);
    out.push(check("relu", &a, EPS, |t, b, s| {
        let y = t.relu(v(b, s, "a"));
        probe(t, y)
    })?);
    out.push(check("softmax", &r, EPS, |t, b, s| {
        let y = t.softmax(v(b, s, "r"));
        probe(t, y)
    })?);
    out.push(check("sum", &a, EPS, |t, b, s| {
        let y = t.mul(v(b, s, "a"), v(b, s, "a"))?;
        Ok(t.sum(y))
    })?);
    out.push(check("mean", &ab, EPS, |t, b, s| {
        let y = t.mul(v(b, s, "a"), v(b, s, "b"))?;
        Ok(t.mean(y))
    })?);
    out.push(check("row", &a, EPS, |t, b, s| {
        let y = t.row(v(b, s, "a"), 1)?;
        let y = t.tanh(y);
        let z = t.row(v(b, s, "a"), 0)?;
        let y = t.mul(y, z)?;
        probe(t, y)
    })?);
    out.push(check("stack_rows", &ar, EPS, |t, b, s| {
        let y = t.stack_rows(&[v(b, s, "r"), v(b, s, "r")])?;
        let y = t.mul(y, v(b, s, "a"))?;
        probe(t, y)
    })?);
    out.push(check("concat", &ar, EPS, |t, b, s| {
        let r0 = t.row(v(b, s, "a"), 0)?;
        let r1 = t.row(v(b, s, "a"), 1)?;
        let y = t.concat(&[v(b, s, "r"), r0, r1])?;
        probe(t, y)
    })?);
    out.push(check("concat_cols", &ab, EPS, |t, b, s| {
        let y = t.concat_cols(&[v(b, s, "a"), v(b, s, "b")])?;
        probe(t, y)
    })?);
    out.push(check("slice", &r, EPS, |t, b, s| {
        let head = t.slice(v(b, s, "r"), 0, 2)?;
        let tail = t.slice(v(b, s, "r"), 1, 2)?;
        let y = t.mul(head, tail)?;
        probe(t, y)
    })?);
    out.push(check("pad_rows", &a, EPS, |t, b, s| {
        let y = t.pad_rows(v(b, s, "a"), 4)?;
        let y = t.tanh(y);
        probe(t, y)
    })?);

    let s = store_with(&[("table", &[5, 3])], 5);
    out.push(check("embedding", &s, EPS, |t, b, s| {
        let y = t.embedding(v(b, s, "table"), &[4, 0, 4, 2])?;
        probe(t, y)
    })?);

    let s = store_with(&[("x", &[6, 3]), ("kernel", &[2, 3, 4]), ("bias", &[4])], 6);
    out.push(check("conv1d", &s, EPS, |t, b, s| {
        let y = t.conv1d(v(b, s, "x"), v(b, s, "kernel"), v(b, s, "bias"))?;
        probe(t, y)
    })?);

    let s = store_with(&[("xw", &[12]), ("h", &[3]), ("c", &[3]), ("w_h", &[3, 12]), ("bias", &[12])], 7);
    out.push(check("lstm_cell", &s, EPS, |t, b, s| {
        let y = t.lstm_cell(v(b, s, "xw"), v(b, s, "h"), v(b, s, "c"), v(b, s, "w_h"), v(b, s, "bias"))?;
        probe(t, y)
    })?);

    let s = store_with(&[("a", &[3, 4])], 8);
    out.push(check("dropout (fixed mask)", &s, EPS, |t, b, s| {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let y = t.dropout(v(b, s, "a"), 0.3, true, &mut rng)?;
        probe(t, y)
    })?);

    let s = store_with(&[("logits", &[4, 5])], 9);
    out.push(check("nll_loss", &s, EPS, |t, b, s| {
        t.nll_loss(v(b, s, "logits"), &[Some(1), None, Some(4), Some(0)])
    })?);
    let s = store_with(&[("pred", &[8])], 10);
    out.push(check("mse_loss", &s, EPS, |t, b, s| {
        let p = t.sigmoid(v(b, s, "pred"));
        t.mse_loss(p, &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0, 0.0, 0.5, 0.25])
    })?);

    // layers
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut s = store_with(&[("x", &[3, 4])], 13);
    let linear = Linear::new(&mut s, "lin", 4, 2, true, &mut rng);
    randomize(&mut s, 14);
    out.push(check("linear", &s, EPS, |t, b, s| {
        let y = linear.forward(t, b, v(b, s, "x"))?;
        probe(t, y)
    })?);

    let mut s = store_with(&[("xs", &[3, 2])], 15);
    let lstm = Lstm::new(&mut s, "lstm", 2, 3, &mut rng);
    randomize(&mut s, 16);
    out.push(check("lstm_step chain", &s, EPS, |t, b, s| {
        let run = lstm.run(t, b, v(b, s, "xs"), None)?;
        let states = probe(t, run.states)?;
        let c = probe(t, run.c)?;
        t.add(states, c)
    })?);

    let mut s = store_with(&[("c", &[4, 3])], 17);
    let pool = AttentionPool::new(&mut s, "pool", 3, &mut rng);
    randomize(&mut s, 18);
    out.push(check("attention_pool", &s, EPS, |t, b, s| {
        let (pooled, alpha) = pool.forward(t, b, v(b, s, "c"))?;
        let p = probe(t, pooled)?;
        let a = probe(t, alpha)?;
        t.add(p, a)
    })?);

    let s = store_with(&[("c", &[3, 2]), ("alpha", &[3])], 19);
    out.push(check("weighted_rows", &s, EPS, |t, b, s| {
        let y = weighted_rows(t, v(b, s, "c"), v(b, s, "alpha"))?;
        probe(t, y)
    })?);

    let s = store_with(&[("q", &[3, 2]), ("k", &[3, 2]), ("v", &[3, 4])], 20);
    out.push(check("scaled_dot_attention", &s, EPS, |t, b, s| {
        let y = scaled_dot_attention(t, v(b, s, "q"), v(b, s, "k"), v(b, s, "v"))?;
        probe(t, y)
    })?);

    out.push(assessor_loss()?);
    out.push(dialogue_loss()?);
    Ok(out)
}

fn randomize(store: &mut ParamStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = store.iter().map(|(name, _)| name.to_string()).collect();
    for name in names {
        let id = store.id(&name).expect("listed name");
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = Tensor::uniform(&shape, 1.0, &mut rng);
    }
}

fn toy_corpus() -> Vec<Dialogue> {
    vec![Dialogue {
        id: "g".into(),
        turns: vec![
            Turn::user("i have been sleeping badly", Emotion::Negative),
            Turn::system("how long has that been going on ?"),
            Turn::user("a few weeks now", Emotion::Negative),
            Turn::system("that sounds hard ."),
        ],
        aspect_scores: AspectScores([0, 1, 2, 3, 3, 2, 1, 0]),
    }]
}

fn tiny_dialogue() -> DialogueModel {
    let corpus = toy_corpus();
    let vocab = dialogue_vocabulary(&corpus, &PhqBank::standard()).unwrap();
    DialogueModel::new(vocab, &DialogueConfig { embed: 3, hidden: 4, ..DialogueConfig::default() })
}

/// Full assessor objective over real per-turn encoder states.
fn assessor_loss() -> Result<Check> {
    let corpus = toy_corpus();
    let dialogue = tiny_dialogue();
    let turns = embed_dialogue(dialogue.embedder(), &corpus[0].turns)?;
    let config = AssessorConfig { filters: 4, kernel: 2, lstm_units: 3, heads: 2, dropout: 0.0, ..AssessorConfig::default() };
    let model = AssessorModel::new(dialogue.embedder().dim(), &config)?;
    let labels = corpus[0].aspect_scores;
    let error = gradient_check_params(
        |tape, b| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            model.loss(tape, b, &turns, &labels, false, &mut rng)
        },
        model.params(),
        1e-4,
    )?;
    Ok(Check { name: "assessor loss", error })
}

/// Teacher-forced NLL of the dialogue model on a real training sample,
/// emotion token included.
fn dialogue_loss() -> Result<Check> {
    let corpus = toy_corpus();
    let model = tiny_dialogue();
    let samples = training_samples(&corpus, model.vocab(), model.max_len());
    let sample = samples.last().expect("corpus has system turns");
    let net = Seq2Seq::load(model.params(), DIALOGUE_PREFIX)?;
    let error = gradient_check_params(|tape, b| net.loss(tape, b, &sample.src, &sample.target), model.params(), 1e-3)?;
    Ok(Check { name: "dialogue loss", error })
}
