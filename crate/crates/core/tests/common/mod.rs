//! Shared fixtures and one check per acceptance criterion. Each check
//! returns a one-line summary, `Err` when the criterion is not met.

#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::OnceLock;

use guti_core::corpus::{
    acrostic_heads, acrostic_transform, deserialize, ingest_str, serialize, FormCatalog, IngestOptions, Poem,
    SerializedSample,
};
use guti_core::model::{
    backward, forward, init_params, load_checkpoint, nll_loss, save_checkpoint, Logits, ModelConfig, ModelParams,
    SequenceBatch,
};
use guti_core::sampler::{build_prompt, generate, top_k_sample, SampleConfig};
use guti_core::tokenizer::{build_vocab, decode, encode, TokenId, Vocab, BOS};
use guti_core::trainer::{
    encode_corpus, evaluate_nll, fine_tune, novelty_score, AdamConfig, CorpusIndex, TrainConfig, TrainReport,
};
use guti_core::validator::{check_pairing, validate, PhonologyTable, ValidateOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub type Check = Result<String, String>;

pub const FIXTURES: &str = include_str!("../fixtures/reference_poems.jsonl");
pub const TOY: &str = include_str!("../../data/toy_corpus.jsonl");

pub fn catalog() -> FormCatalog {
    FormCatalog::builtin()
}

pub fn table() -> &'static PhonologyTable {
    static TABLE: OnceLock<PhonologyTable> = OnceLock::new();
    TABLE.get_or_init(PhonologyTable::builtin)
}

fn ingest(text: &str) -> Vec<Poem> {
    let out = ingest_str(text, &catalog(), &IngestOptions::default());
    assert!(out.diagnostics.is_empty(), "{:?}", out.diagnostics);
    out.poems
}

pub fn fixtures() -> Vec<Poem> {
    ingest(FIXTURES)
}

pub fn fixture(id: &str) -> Poem {
    fixtures()
        .into_iter()
        .find(|p| p.source_id.as_deref() == Some(id))
        .unwrap_or_else(|| panic!("no fixture {id}"))
}

pub fn toy_poems() -> Vec<Poem> {
    ingest(TOY)
}

pub fn well_formed(poem: &Poem) -> bool {
    validate(poem, &catalog(), table(), ValidateOptions::default())
        .map(|r| r.well_formed)
        .unwrap_or(false)
}

/// Inserts a character into, or deletes one from, a random line.
pub fn mutate(poem: &Poem, insert: bool, rng: &mut impl Rng) -> Poem {
    const POOL: &[char] = &['山', '水', '风', '月', '花', '人', '天', '云'];
    let mut p = poem.clone();
    let line = &mut p.body[rng.random_range(0..poem.body.len())].chars;
    if insert {
        let at = rng.random_range(0..=line.len());
        line.insert(at, POOL[rng.random_range(0..POOL.len())]);
    } else {
        let at = rng.random_range(0..line.len());
        line.remove(at);
    }
    p
}

pub fn tiny_config(variant: usize) -> ModelConfig {
    let (n_layers, n_heads, d_model, tie) = match variant % 3 {
        0 => (1, 2, 8, true),
        1 => (2, 2, 16, false),
        _ => (2, 4, 8, true),
    };
    ModelConfig {
        n_layers,
        n_heads,
        d_model,
        d_ff: 2 * d_model,
        context_len: 7,
        vocab_size: 12,
        dropout_rate: 0.1,
        tie_embeddings: tie,
    }
}

/// Initialized weights plus uniform noise, so layer-norm gains and biases
/// are not at their trivial starting values.
pub fn perturbed_params(cfg: &ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut p = init_params::<f64>(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for x in &mut p.data {
        *x += rng.random_range(-0.3..0.3);
    }
    p
}

pub fn random_sequences(cfg: &ModelConfig, rows: usize, rng: &mut impl Rng) -> Vec<Vec<TokenId>> {
    (0..rows)
        .map(|_| {
            let len = rng.random_range(2..=cfg.context_len);
            (0..len).map(|_| rng.random_range(1..cfg.vocab_size as TokenId)).collect()
        })
        .collect()
}

fn eval_loss(p: &ModelParams<f64>, batch: &SequenceBatch) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    nll_loss(&forward(p, batch, false, &mut rng).unwrap(), batch).unwrap()
}

/// Worst per-tensor relative error between analytic and central-difference
/// gradients.
pub fn gradient_error(cfg: &ModelConfig, seed: u64) -> (f64, String) {
    let mut p = perturbed_params(cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = SequenceBatch::from_sequences(&random_sequences(cfg, 3, &mut rng));
    let grads = backward(&p, &batch).unwrap();
    let h = 1e-5;
    let mut worst = (0.0, String::new());
    for info in p.layout.clone().tensors.iter() {
        let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
        for i in info.range() {
            let x = p.data[i];
            p.data[i] = x + h;
            let up = eval_loss(&p, &batch);
            p.data[i] = x - h;
            let down = eval_loss(&p, &batch);
            p.data[i] = x;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.data[i];
            diff += (analytic - numeric).powi(2);
            na += analytic * analytic;
            nn += numeric * numeric;
        }
        let rel = diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-8);
        if rel >= worst.0 {
            worst = (rel, info.name.clone());
        }
    }
    worst
}

pub fn criterion_gradients() -> Check {
    let mut worst = (0.0, String::new());
    let mut params = 0;
    for seed in 0..3u64 {
        let cfg = tiny_config(seed as usize);
        params += init_params::<f64>(&cfg, seed).unwrap().len();
        let (rel, name) = gradient_error(&cfg, seed + 100);
        if rel >= worst.0 {
            worst = (rel, format!("{name} (seed {seed})"));
        }
    }
    let msg = format!("worst tensor relative error {:.2e} at {} over {params} parameters", worst.0, worst.1);
    if worst.0 < 1e-3 { Ok(msg) } else { Err(msg) }
}

/// Per-token NLL by direct softmax, no shared code with the library.
pub fn brute_force_nll(logits: &Logits<f64>, batch: &SequenceBatch) -> f64 {
    let (mut total, mut weight) = (0.0, 0.0);
    for b in 0..batch.batch_size() {
        let row = batch.row(b);
        let mask = batch.row_mask(b);
        for i in 1..row.len() {
            if mask[i] == 0.0 {
                continue;
            }
            let l = logits.at(b, i - 1);
            let z: f64 = l.iter().map(|v| v.exp()).sum();
            total -= mask[i] * (l[row[i] as usize].exp() / z).ln();
            weight += mask[i];
        }
    }
    total / weight
}

pub fn random_logits(batch: &SequenceBatch, vocab: usize, scale: f64, rng: &mut impl Rng) -> Logits<f64> {
    Logits {
        data: (0..batch.batch_size() * batch.seq_len * vocab)
            .map(|_| rng.random_range(-scale..scale))
            .collect(),
        batch: batch.batch_size(),
        seq_len: batch.seq_len,
        vocab,
    }
}

pub fn criterion_loss_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let vocab = rng.random_range(2..40);
        let cfg = ModelConfig {
            vocab_size: vocab,
            context_len: 9,
            ..tiny_config(0)
        };
        let batch = SequenceBatch::from_sequences(&random_sequences(&cfg, 1 + trial % 4, &mut rng));
        let logits = random_logits(&batch, vocab, 6.0, &mut rng);
        let got = nll_loss(&logits, &batch).map_err(|e| e.to_string())?;
        worst = worst.max((got - brute_force_nll(&logits, &batch)).abs());
    }
    let mut uniform_err = 0.0f64;
    for vocab in [2usize, 7, 12, 5000] {
        let batch = SequenceBatch::from_sequences(&[vec![1, 1, 1, 0]]);
        let logits = Logits {
            data: vec![0.37; 4 * vocab],
            batch: 1,
            seq_len: 4,
            vocab,
        };
        let got = nll_loss(&logits, &batch).map_err(|e| e.to_string())?;
        uniform_err = uniform_err.max((got - (vocab as f64).ln()).abs());
    }
    let msg = format!("max deviation {worst:.1e} on 200 random cases; uniform logits off ln(V) by {uniform_err:.1e}");
    if worst < 1e-10 && uniform_err < 1e-9 { Ok(msg) } else { Err(msg) }
}

/// Logits at positions up to `i` of row 0, before and after rewriting the
/// tokens after `i`. Row 1 is an unrelated companion.
pub fn causality_trial(seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tiny_config(seed as usize);
    let p = perturbed_params(&cfg, seed);
    let rows = random_sequences(&cfg, 2, &mut rng);
    let len = rows[0].len();
    let i = rng.random_range(0..len - 1);
    let mut changed = rows.clone();
    for (j, tok) in changed[0].iter_mut().enumerate().skip(i + 1) {
        if j == i + 1 || rng.random_bool(0.5) {
            let old = *tok;
            while *tok == old {
                *tok = rng.random_range(1..cfg.vocab_size as TokenId);
            }
        }
    }
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let a = forward(&p, &SequenceBatch::from_sequences(&rows), false, &mut r).unwrap();
    let b = forward(&p, &SequenceBatch::from_sequences(&changed), false, &mut r).unwrap();
    for pos in 0..=i {
        if a.at(0, pos) != b.at(0, pos) {
            return Err(format!("seed {seed}: position {pos} moved after rewriting positions > {i}"));
        }
    }
    if a.at(0, i + 1) == b.at(0, i + 1) {
        return Err(format!("seed {seed}: rewrite at {} had no effect at all", i + 1));
    }
    Ok(())
}

pub fn criterion_causality() -> Check {
    let failures: Vec<String> = (0..100).filter_map(|s| causality_trial(s).err()).collect();
    match failures.first() {
        None => Ok("100 of 100 perturbation trials left earlier logits bitwise unchanged".into()),
        Some(f) => Err(format!("{} of 100 trials failed; first: {f}", failures.len())),
    }
}

pub fn bare_config(k: usize) -> SampleConfig {
    SampleConfig {
        k,
        temperature: 1.0,
        max_new_tokens: 1,
        seed: 0,
        forbid: Default::default(),
    }
}

/// Pearson statistic of `draws` samples against the renormalized top-2
/// softmax; also returns how many draws fell outside the top 2.
pub fn top2_chi_square(logits: &[f64], draws: usize, seed: u64) -> (f64, usize) {
    let cfg = bare_config(2);
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    let top = [order[0], order[1]];
    let z: f64 = top.iter().map(|&i| logits[i].exp()).sum();
    let mut counts = vec![0usize; logits.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..draws {
        counts[top_k_sample(logits, &cfg, &mut rng).unwrap() as usize] += 1;
    }
    let chi = top
        .iter()
        .map(|&i| {
            let expected = draws as f64 * logits[i].exp() / z;
            (counts[i] as f64 - expected).powi(2) / expected
        })
        .sum();
    let outside = draws - counts[top[0]] - counts[top[1]];
    (chi, outside)
}

pub fn criterion_sampler() -> Check {
    let logits = [0.3, 1.2, -0.5, 0.9];
    let (chi, outside) = top2_chi_square(&logits, 100_000, 5);
    let critical = ChiSquared::new(1.0).unwrap().inverse_cdf(0.99);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let greedy = bare_config(1);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let l: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let argmax = (0..4).fold(0, |best, i| if l[i] > l[best] { i } else { best });
        if top_k_sample(&l, &greedy, &mut rng).unwrap() as usize != argmax {
            mismatches += 1;
        }
    }
    let msg = format!(
        "chi2 {chi:.3} vs critical {critical:.3} (1 dof, alpha 0.01), {outside} draws outside top 2, \
         {mismatches} k=1 mismatches in 10000"
    );
    if chi < critical && outside == 0 && mismatches == 0 { Ok(msg) } else { Err(msg) }
}

pub fn criterion_fixtures() -> Check {
    let poems = fixtures();
    let bad: Vec<_> = poems
        .iter()
        .filter(|p| !well_formed(p))
        .map(|p| p.source_id.clone().unwrap_or_default())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut survivors = Vec::new();
    let mut trials = 0;
    for p in &poems {
        for t in 0..10 {
            trials += 1;
            let m = mutate(p, t % 2 == 0, &mut rng);
            if well_formed(&m) {
                survivors.push(format!("{} -> {}", p.source_id.as_deref().unwrap_or("?"), m.body_text()));
            }
        }
    }
    let msg = format!(
        "{}/{} fixtures well-formed; {}/{trials} single-character edits rejected",
        poems.len() - bad.len(),
        poems.len(),
        trials - survivors.len()
    );
    if bad.is_empty() && survivors.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}; ill-formed {bad:?}; accepted edits {survivors:?}"))
    }
}

pub fn pairing_passes(poem: &Poem) -> bool {
    let spec = catalog().resolve(&poem.form_id).unwrap().clone();
    let results = check_pairing(poem, &spec);
    !results.is_empty() && results.iter().all(|r| r.passed())
}

pub fn criterion_pairing() -> Check {
    let couplets: Vec<Poem> = fixtures()
        .into_iter()
        .filter(|p| p.source_id.as_deref().is_some_and(|id| id.starts_with("t3-")))
        .collect();
    let failing: Vec<_> = couplets.iter().filter(|p| !pairing_passes(p)).map(|p| p.source_id.clone()).collect();
    let qilu = fixture("t4-4");
    let spec = catalog().resolve("七律").unwrap().clone();
    let slots = spec.pairing_slots.clone();
    let qilu_ok = slots == vec![(2, 3), (4, 5)] && pairing_passes(&qilu);
    let msg = format!(
        "{}/{} couplets pass; seven-character regulated verse lines 3-4 and 5-6 {}",
        couplets.len() - failing.len(),
        couplets.len(),
        if qilu_ok { "pass" } else { "fail" }
    );
    if failing.is_empty() && qilu_ok && !couplets.is_empty() { Ok(msg) } else { Err(format!("{msg}; {failing:?}")) }
}

pub fn samples(poems: &[Poem]) -> Vec<SerializedSample> {
    poems.iter().map(|p| serialize(p, &catalog()).unwrap()).collect()
}

pub fn criterion_round_trips() -> Check {
    let cat = catalog();
    let mut poems = fixtures();
    poems.extend(toy_poems());
    poems.extend(poems.clone().iter().filter_map(|p| acrostic_transform(p, &cat).ok()));
    let samples = samples(&poems);
    let vocab = build_vocab(&samples, 1).map_err(|e| e.to_string())?;
    let mut failures = Vec::new();
    for (p, s) in poems.iter().zip(&samples) {
        let back = deserialize(&s.text, &cat).map_err(|e| e.to_string())?;
        if back != (Poem { source_id: None, ..p.clone() }) {
            failures.push(format!("deserialize {}", s.text));
        }
        if decode(&encode(&s.text, &vocab), &vocab).ok().as_deref() != Some(s.text.as_str()) {
            failures.push(format!("decode {}", s.text));
        }
    }
    let cfg = ModelConfig {
        context_len: 32,
        ..ModelConfig::desk(vocab.len())
    };
    let cfg = ModelConfig { d_model: 32, d_ff: 64, n_layers: 2, ..cfg };
    let params = init_params::<f32>(&cfg, 9).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&params, &path).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(&path).map_err(|e| e.to_string())?;
    let seqs: Vec<Vec<TokenId>> = samples
        .iter()
        .take(4)
        .map(|s| {
            let mut ids = vec![BOS];
            ids.extend(encode(&s.text, &vocab).into_iter().take(cfg.context_len - 1));
            ids
        })
        .collect();
    let batch = SequenceBatch::from_sequences(&seqs);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = forward(&params, &batch, false, &mut rng).map_err(|e| e.to_string())?;
    let b = forward(&loaded, &batch, false, &mut rng).map_err(|e| e.to_string())?;
    if !a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()) {
        failures.push("checkpoint forward outputs differ".into());
    }
    let msg = format!(
        "{} poems serialize/deserialize and encode/decode exactly; checkpoint forward of {} logits bitwise equal",
        poems.len(),
        a.data.len()
    );
    if failures.is_empty() { Ok(msg) } else { Err(format!("{msg}; {failures:?}")) }
}

/// The toy model: originals plus acrostic copies of the bundled corpus,
/// trained with no held-out split and no dropout.
pub struct Overfit {
    pub vocab: Vocab,
    pub params: ModelParams<f32>,
    pub poems: Vec<Poem>,
    pub acrostic: Vec<Poem>,
    pub report: TrainReport,
    pub nll: f64,
}

pub const OVERFIT_STEPS: usize = 1000;

pub fn overfit() -> &'static Overfit {
    static RUN: OnceLock<Overfit> = OnceLock::new();
    RUN.get_or_init(|| {
        let cat = catalog();
        let poems = toy_poems();
        let acrostic: Vec<Poem> = poems.iter().map(|p| acrostic_transform(p, &cat).unwrap()).collect();
        let all: Vec<Poem> = poems.iter().chain(&acrostic).cloned().collect();
        let samples = samples(&all);
        let vocab = build_vocab(&samples, 1).unwrap();
        let cfg = ModelConfig {
            d_model: 64,
            d_ff: 256,
            dropout_rate: 0.0,
            ..ModelConfig::desk(vocab.len())
        };
        let mut params = init_params(&cfg, 0).unwrap();
        let tc = TrainConfig {
            optimizer: AdamConfig {
                learning_rate: 3e-3,
                ..Default::default()
            },
            max_steps: OVERFIT_STEPS,
            heldout_fraction: 0.0,
            ..Default::default()
        };
        let report = fine_tune(&samples, &vocab, &cat, &mut params, &tc).unwrap();
        let refs: Vec<_> = samples.iter().collect();
        let seqs = encode_corpus(&refs, &vocab, cfg.context_len).unwrap();
        let nll = evaluate_nll(&params, &seqs, 16).unwrap();
        Overfit {
            vocab,
            params,
            poems,
            acrostic,
            report,
            nll,
        }
    })
}

impl Overfit {
    pub fn generate(&self, poem: &Poem, k: usize, seed: u64) -> (String, bool) {
        let prompt = build_prompt(&poem.form_id, &poem.theme, poem.acrostic, &catalog(), &self.vocab).unwrap();
        let cfg = SampleConfig {
            k,
            max_new_tokens: self.params.config.context_len,
            ..SampleConfig::new(&self.vocab, seed)
        };
        let g = generate(&self.params, &prompt, &cfg).unwrap();
        (decode(&g.tokens, &self.vocab).unwrap(), g.truncated)
    }
}

pub fn criterion_overfit() -> Check {
    let run = overfit();
    let cat = catalog();
    let index = CorpusIndex::build(run.poems.iter().chain(&run.acrostic));
    let mut mismatched = Vec::new();
    let mut novel = Vec::new();
    for p in run.poems.iter().chain(&run.acrostic) {
        let (body, truncated) = run.generate(p, 1, 0);
        if truncated || body != p.body_text() {
            mismatched.push(format!("{}{}", p.theme, if truncated { " (truncated)" } else { "" }));
            continue;
        }
        let text = format!(
            "{}{}",
            guti_core::sampler::prompt_text(&p.form_id, &p.theme, p.acrostic, &cat).unwrap(),
            body
        );
        let n = deserialize(&text, &cat).and_then(|g| novelty_score(&g, &index));
        if !matches!(n, Ok(ref n) if n.score == 0.0) {
            novel.push(p.theme.clone());
        }
    }
    let total = run.poems.len() + run.acrostic.len();
    let msg = format!(
        "per-token NLL {:.4} after {} steps ({:.0}s); {}/{total} greedy bodies verbatim, {} with nonzero novelty",
        run.nll,
        run.report.steps_run,
        run.report.wall_clock_secs,
        total - mismatched.len(),
        novel.len()
    );
    if run.nll < 0.1 && run.report.steps_run <= 2000 && mismatched.is_empty() && novel.is_empty() {
        Ok(msg)
    } else {
        Err(format!("{msg}; mismatched {mismatched:?}; novel {novel:?}"))
    }
}

pub fn criterion_acrostic() -> Check {
    let cat = catalog();
    let source = fixture("s2-1");
    let transformed = acrostic_transform(&source, &cat).map_err(|e| e.to_string())?;
    if transformed.theme != "床疑举低" {
        return Err(format!("transform produced theme {}", transformed.theme));
    }
    let run = overfit();
    let (body, _) = run.generate(&transformed, 1, 0);
    let prompt = guti_core::sampler::prompt_text(&transformed.form_id, "床疑举低", true, &cat).unwrap();
    let heads = guti_core::corpus::parse_body(&body)
        .and_then(|lines| acrostic_heads(&lines, 1))
        .unwrap_or_default();
    let msg = format!("theme 床疑举低; prompt {prompt} generated {body} with heads {heads}");
    if heads == "床疑举低" { Ok(msg) } else { Err(msg) }
}

/// Distinct bodies over seeds 0..10 at k = 20.
pub fn distinct_bodies(run: &Overfit, poem: &Poem) -> usize {
    (0..10).map(|seed| run.generate(poem, 20, seed).0).collect::<BTreeSet<_>>().len()
}

/// The prompt uses a theme absent from the toy corpus: on a training
/// prompt the overfit model reproduces its memorized body under almost
/// every seed, which is reported alongside.
pub fn criterion_diversity() -> Check {
    let run = overfit();
    let unseen = Poem {
        form_id: "七绝".into(),
        theme: "秋思".into(),
        body: vec![],
        source_id: None,
        acrostic: false,
    };
    let distinct = distinct_bodies(run, &unseen);
    let memorized = distinct_bodies(run, &run.poems[0]);
    let msg = format!(
        "{distinct} distinct bodies from 10 seeds at k=20 for prompt 七绝/秋思 \
         ({memorized} for training prompt {}/{})",
        run.poems[0].form_id, run.poems[0].theme
    );
    if distinct >= 2 { Ok(msg) } else { Err(msg) }
}
