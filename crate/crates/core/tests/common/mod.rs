#![allow(dead_code)]

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use simsel::corpus::{Corpus, RawUtterance, Split, UtteranceId, Vocabulary};
use simsel::harness::{parse_config_text, ExperimentConfig};
use simsel::neural::{Ensemble, Member, Model, ModelConfig, ModelParams, SuTap, SummarizationMode};
use simsel::selection::{
    embed_pool, select_similarity, CandidateSet, EmbeddingStore, Layer, Matrix, PredictionError, SelectionBudget,
};
use std::collections::{BTreeMap, BTreeSet, HashSet};

/// A complete but quick experiment: six domains, a few hundred utterances,
/// two small members.
pub const SMALL_EXPERIMENT: &str = "\
corpus.n_domains = 6
corpus.templates_per_domain = 4
corpus.slot_fillers_per_slot = 8
corpus.confusion_pairs = 0-1, 2-3
corpus.baseline_train = 300
corpus.dev = 80
corpus.pool = 400
corpus.blind_test = 100
ensemble.M = 2
ensemble.hidden_dims = 6, 8
ensemble.embedding_dim = 8
ensemble.ff_dims = 8
ensemble.epochs = 2
budget.k = 3
exp.n_runs = 2
exp.swap_count = 20
";

pub fn config(text: &str) -> ExperimentConfig {
    ExperimentConfig::from_pairs(&parse_config_text(text).unwrap()).unwrap()
}

pub fn raw(id: u64, tokens: &[&str], label: &str, split: Split) -> RawUtterance {
    RawUtterance {
        id,
        tokens: tokens.iter().map(|t| t.to_string()).collect(),
        context: vec![],
        label: label.into(),
        split,
    }
}

/// Vocabulary `<pad> <unk> w0 w1 ...`.
pub fn word_vocabulary(n: usize) -> Vocabulary {
    Vocabulary::from_tokens((0..n).map(|i| format!("w{i}")))
}

fn detector_config() -> ModelConfig {
    ModelConfig {
        embedding_dim: 1,
        hidden_dim: 1,
        ff_dims: vec![1],
        summarization: SummarizationMode::MeanPool,
        ..ModelConfig::default()
    }
}

/// Hand-wired model over two labels that predicts label 1 on the one-token
/// utterance `trigger` and label 0 (at about 0.73) on every other one-token
/// utterance. `gain` sets the confidence when firing: 10 gives about 0.9997,
/// 2.2 about 0.73.
pub fn detector(vocab_size: usize, trigger: Option<usize>, gain: f64) -> Model {
    let config = detector_config();
    let mut params = ModelParams::zeros(simsel::neural::Layout::new(&config, vocab_size, 2));
    let lay = params.layout.clone();
    let set = |params: &mut ModelParams, tensor: usize, index: usize, value: f64| {
        let offset = lay.tensors[tensor].offset;
        params.values[offset + index] = value;
    };
    if let Some(t) = trigger {
        set(&mut params, lay.embedding, t, 3.0);
    }
    for dir in 0..2 {
        // Gate rows are input, forget, candidate, output; columns are [x, h].
        set(&mut params, lay.lstm_b[dir], 0, 20.0);
        set(&mut params, lay.lstm_b[dir], 3, 20.0);
        set(&mut params, lay.lstm_w[dir], 2 * 2, 1.0);
    }
    let (fw, _) = lay.ff[0];
    set(&mut params, fw, 0, 1.0);
    set(&mut params, fw, 1, 1.0);
    set(&mut params, lay.out_w, 1, gain);
    set(&mut params, lay.out_b, 0, 1.0);
    Model::new(config, params)
}

/// Ensemble of detectors; member `i` fires on `triggers[i]`.
pub fn detector_ensemble(vocabulary: Vocabulary, triggers: &[Option<usize>]) -> Ensemble {
    let members =
        triggers.iter().enumerate().map(|(id, &t)| Member { id, model: detector(vocabulary.len(), t, 10.0) }).collect();
    Ensemble { vocabulary, labels: vec!["zero".into(), "one".into()], members }
}

/// Small randomly shaped and initialized model.
pub fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let ff_layers = rng.gen_range(1..=2);
    ModelConfig {
        embedding_dim: rng.gen_range(2..=6),
        hidden_dim: rng.gen_range(2..=5),
        ff_dims: (0..ff_layers).map(|_| rng.gen_range(2..=6)).collect(),
        summarization: if rng.gen_bool(0.5) { SummarizationMode::AttentionPool } else { SummarizationMode::MeanPool },
        su_tap: if rng.gen_bool(0.5) { SuTap::MeanStates } else { SuTap::FinalStates },
        seed: rng.gen(),
        ..ModelConfig::default()
    }
}

pub fn random_model(rng: &mut ChaCha8Rng, vocab_size: usize, n_labels: usize) -> Model {
    let config = random_config(rng);
    let mut params = ModelParams::init(&config, vocab_size, n_labels);
    // Biases start at zero; give them values so their gradients are exercised.
    for t in params.layout.tensors.clone() {
        if t.fan_in == 0 {
            for v in &mut params.values[t.range()] {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
    }
    Model::new(config, params)
}

pub fn random_ensemble(rng: &mut ChaCha8Rng, members: usize, vocabulary: Vocabulary, labels: Vec<String>) -> Ensemble {
    let members =
        (0..members).map(|id| Member { id, model: random_model(rng, vocabulary.len(), labels.len()) }).collect();
    Ensemble { vocabulary, labels, members }
}

/// Corpus over the `w{i}` words with random short utterances: a few of each
/// split, `pool` pool utterances of which roughly a fifth are out-of-domain.
pub fn random_corpus(rng: &mut ChaCha8Rng, words: usize, n_labels: usize, dev: usize, pool: usize) -> Corpus {
    let mut raw_utterances = Vec::new();
    let mut id = 0u64;
    let mut push = |rng: &mut ChaCha8Rng, split: Split, ood: bool| {
        let len = rng.gen_range(1..=5);
        let tokens: Vec<String> = (0..len).map(|_| format!("w{}", rng.gen_range(0..words))).collect();
        let label =
            if ood { simsel::corpus::OOD_LABEL.to_string() } else { format!("l{}", rng.gen_range(0..n_labels)) };
        raw_utterances.push(RawUtterance { id, tokens, context: vec![], label, split });
        id += rng.gen_range(1..4);
    };
    for _ in 0..n_labels.max(4) {
        push(rng, Split::BaselineTrain, false);
    }
    for _ in 0..dev {
        push(rng, Split::Dev, false);
    }
    for _ in 0..pool {
        let ood = rng.gen_bool(0.2);
        push(rng, Split::Pool, ood);
    }
    push(rng, Split::BlindTest, false);
    Corpus::from_raw(raw_utterances).unwrap()
}

pub fn random_setup(seed: u64, members: usize, pool: usize) -> (Corpus, Ensemble) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus = random_corpus(&mut rng, 12, 3, 6, pool);
    let ensemble = random_ensemble(&mut rng, members, word_vocabulary(12), corpus.labels.clone());
    (corpus, ensemble)
}

/// Store in which query (member, layer) finds exactly the `k` pool items of
/// its own group at distance zero-ish; `shared` makes all layers of a member
/// share one group. Everything else sits far away.
pub fn planted_store(
    corpus: &Corpus,
    ensemble: &Ensemble,
    error_id: UtteranceId,
    k: usize,
    shared: bool,
) -> EmbeddingStore {
    let u = corpus.utterances.iter().find(|u| u.id == error_id).unwrap();
    let tokens = ensemble.encode(corpus, u);
    let pool_ids: Vec<UtteranceId> = corpus.split(Split::Pool).map(|u| u.id).collect();
    let mut matrices = BTreeMap::new();
    for (m, member) in ensemble.members.iter().enumerate() {
        let (_, taps) = ensemble.member_forward(m, &tokens).unwrap();
        for (l, (layer, query)) in
            [(Layer::Su, &taps.su), (Layer::Ff, &taps.ff), (Layer::Sm, &taps.sm)].into_iter().enumerate()
        {
            let group = if shared { m } else { m * 3 + l };
            let dim = query.len();
            let mut data = Vec::with_capacity(dim * pool_ids.len());
            for row in 0..pool_ids.len() {
                let near = row / k == group;
                for &q in query.iter() {
                    data.push(if near { q + 1e-3 * (row % k) as f64 } else { q + 100.0 });
                }
            }
            matrices.insert((member.id, layer), Matrix { rows: pool_ids.len(), dim, data });
        }
    }
    EmbeddingStore { ids: pool_ids, matrices }
}

pub fn planted_corpus(pool: usize) -> Corpus {
    let mut rows = vec![raw(0, &["w0"], "l0", Split::BaselineTrain), raw(1, &["w1", "w2"], "l1", Split::Dev)];
    for i in 0..pool as u64 {
        rows.push(raw(
            1000 + i,
            &[format!("w{}", i % 12).as_str()],
            if i % 7 == 0 { "__OOD__" } else { "l0" },
            Split::Pool,
        ));
    }
    rows.push(raw(5000, &["w3"], "l0", Split::BlindTest));
    Corpus::from_raw(rows).unwrap()
}

pub fn planted_case(members: usize, erring: &[usize], k: usize, shared: bool) -> CandidateSet {
    let corpus = planted_corpus(members * 3 * k + 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ensemble = random_ensemble(&mut rng, members, word_vocabulary(12), corpus.labels.clone());
    let store = planted_store(&corpus, &ensemble, 1, k, shared);
    let error = PredictionError {
        utterance_id: 1,
        gold_label: 1,
        ensemble_predicted_label: 0,
        erring_member_ids: erring.iter().copied().collect(),
    };
    let budget = SelectionBudget::new(k, 10_000).unwrap();
    select_similarity(&[error], &ensemble, &corpus, &store, &budget, &HashSet::new()).unwrap()
}

/// Exhaustive reference: every distance, full sort by (distance, id).
pub fn knn_oracle(
    store: &EmbeddingStore,
    query: &[f64],
    member: usize,
    layer: Layer,
    k: usize,
) -> Vec<(UtteranceId, f64)> {
    let matrix = store.matrix(member, layer).unwrap();
    let mut all: Vec<(UtteranceId, f64)> = (0..matrix.rows)
        .map(|i| {
            let d2: f64 = matrix.row(i).iter().zip(query).map(|(a, b)| (a - b).powi(2)).sum();
            (store.ids[i], d2.sqrt())
        })
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Similarity selection on a random setup with random errors and exclusions,
/// checked against every budget it must respect.
pub fn check_similarity_budgets(seed: u64, k: usize, total: usize, members: usize) -> Result<(), String> {
    let (corpus, ensemble) = random_setup(seed, members, 60);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let store = embed_pool(&ensemble, &corpus, corpus.split(Split::Pool)).map_err(|e| e.to_string())?;
    let mut errors = Vec::new();
    for u in corpus.split(Split::Dev) {
        if !rng.gen_bool(0.7) {
            continue;
        }
        let mut erring: BTreeSet<usize> = (0..members).filter(|_| rng.gen_bool(0.6)).collect();
        if erring.is_empty() {
            erring.insert(rng.gen_range(0..members));
        }
        errors.push(PredictionError {
            utterance_id: u.id,
            gold_label: u.gold.domain().unwrap(),
            ensemble_predicted_label: 0,
            erring_member_ids: erring,
        });
    }
    let pool_ids: Vec<UtteranceId> = corpus.split(Split::Pool).map(|u| u.id).collect();
    let exclude: HashSet<UtteranceId> = pool_ids.iter().copied().filter(|_| rng.gen_bool(0.1)).collect();
    let pool: HashSet<UtteranceId> = pool_ids.into_iter().collect();
    let budget = SelectionBudget::new(k, total).map_err(|e| e.to_string())?;
    let set = select_similarity(&errors, &ensemble, &corpus, &store, &budget, &exclude).map_err(|e| e.to_string())?;

    let fail = |what: String| Err(format!("seed {seed} k {k} total {total} members {members}: {what}"));
    if set.len() > total {
        return fail(format!("{} candidates over total {total}", set.len()));
    }
    let ids: Vec<UtteranceId> = set.ids().collect();
    if ids.iter().collect::<HashSet<_>>().len() != ids.len() {
        return fail("duplicate candidate".into());
    }
    for c in &set.candidates {
        if !pool.contains(&c.utterance_id) || exclude.contains(&c.utterance_id) {
            return fail(format!("{} outside the pool or excluded", c.utterance_id));
        }
        if !c.assigned_error.is_some_and(|e| c.attributed_to(e)) {
            return fail(format!("{} not attributed to its assigned error", c.utterance_id));
        }
    }
    let mut per_query: BTreeMap<(UtteranceId, usize, Layer), usize> = BTreeMap::new();
    let mut per_error: BTreeMap<UtteranceId, BTreeSet<UtteranceId>> = BTreeMap::new();
    for c in &set.candidates {
        for p in &c.provenance {
            *per_query.entry((p.source_error_id, p.member_id, p.layer)).or_default() += 1;
            per_error.entry(p.source_error_id).or_default().insert(c.utterance_id);
            if p.rank < 1 || p.rank > k {
                return fail(format!("rank {} outside 1..={k}", p.rank));
            }
        }
    }
    if let Some((query, n)) = per_query.iter().find(|(_, &n)| n > k) {
        return fail(format!("query {query:?} returned {n} > k"));
    }
    for e in &errors {
        let attributed = per_error.get(&e.utterance_id).map_or(0, BTreeSet::len);
        if attributed > budget.per_error_cap(e) {
            return fail(format!("error {} has {attributed} > {}", e.utterance_id, budget.per_error_cap(e)));
        }
        let foreign = set
            .candidates
            .iter()
            .flat_map(|c| &c.provenance)
            .any(|p| p.source_error_id == e.utterance_id && !e.erring_member_ids.contains(&p.member_id));
        if foreign {
            return fail(format!("error {} expanded through a member that got it right", e.utterance_id));
        }
    }
    // Without a binding budget the result is the whole union.
    let loose = SelectionBudget::new(k, 100_000).map_err(|e| e.to_string())?;
    let loose = select_similarity(&errors, &ensemble, &corpus, &store, &loose, &exclude).map_err(|e| e.to_string())?;
    if loose.len() <= total {
        if loose.ids().collect::<Vec<_>>() != ids {
            return fail("unconstrained union differs".into());
        }
    } else if set.len() != total {
        return fail(format!("{} candidates although the union has {}", set.len(), loose.len()));
    }
    Ok(())
}
