//! Template/slot-filling generator for a synthetic domain-classification corpus.
//!
//! Every domain owns a small carrier lexicon, two slot types with their own
//! fillers, and a set of templates. Designated domain pairs additionally share
//! templates built from a pair lexicon: an utterance instantiated from a shared
//! template is distinguishable only through its slot fillers, which puts it in
//! the region where the two domains meet. `baseline_train` under-samples those
//! shared templates for the second domain of each pair, so a model trained on
//! it learns a displaced boundary: a confusion zone that data from the pool,
//! where both domains use the shared templates evenly, can repair.
//!
//! Out-of-domain utterances (pool only) splice halves of two instantiated
//! templates from different domains and substitute random junk tokens.

use super::{Corpus, CorpusError, RawUtterance, Split, OOD_LABEL};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

const FUNCTION_WORDS: &[&str] = &[
    "the", "a", "to", "for", "me", "my", "please", "what", "is", "can", "you", "on", "in", "at", "with", "about",
    "now", "today", "some", "this", "that", "i", "want", "how", "of",
];
const SLOT_TYPES: usize = 2;
const CARRIER_WORDS_PER_DOMAIN: usize = 12;
const PAIR_WORDS: usize = 8;
const JUNK_WORDS: usize = 300;
const OOD_SUBSTITUTION_RATE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub baseline_train: usize,
    pub dev: usize,
    pub pool: usize,
    pub blind_test: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes { baseline_train: 8_700, dev: 1_000, pool: 20_000, blind_test: 2_000 }
    }
}

impl SplitSizes {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::BaselineTrain => self.baseline_train,
            Split::Dev => self.dev,
            Split::Pool => self.pool,
            Split::BlindTest => self.blind_test,
        }
    }

    pub fn total(&self) -> usize {
        Split::ALL.iter().map(|&s| self.get(s)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n_domains: usize,
    pub templates_per_domain: usize,
    pub slot_fillers_per_slot: usize,
    pub confusion_pairs: Vec<(usize, usize)>,
    /// Fraction of each paired domain's templates that are shared with its partner.
    pub shared_template_fraction: f64,
    pub ood_fraction_of_pool: f64,
    pub split_sizes: SplitSizes,
    /// Sampling weight, in `baseline_train` only, of a shared template when it
    /// is instantiated by the second domain of its pair (1.0 everywhere else).
    /// Below 1 this skews the training data so the shared templates look like
    /// they belong to the first domain, displacing the learned boundary.
    pub baseline_shared_weight: f64,
    /// Exponent of the Zipf law over slot fillers.
    pub filler_zipf_exponent: f64,
    /// Number of distinct context features; 0 disables context.
    pub context_features: usize,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            n_domains: 20,
            templates_per_domain: 8,
            slot_fillers_per_slot: 40,
            confusion_pairs: (0..8).map(|i| (2 * i, 2 * i + 1)).collect(),
            shared_template_fraction: 0.3,
            ood_fraction_of_pool: 0.25,
            split_sizes: SplitSizes::default(),
            baseline_shared_weight: 0.03,
            filler_zipf_exponent: 1.0,
            context_features: 0,
            seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn shared_per_pair(&self) -> usize {
        (self.shared_template_fraction * self.templates_per_domain as f64).round() as usize
    }

    pub fn ood_count(&self) -> usize {
        (self.ood_fraction_of_pool * self.split_sizes.pool as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InfeasibleSpec(m));
        if self.n_domains == 0 || self.templates_per_domain == 0 || self.slot_fillers_per_slot == 0 {
            return bad("n_domains, templates_per_domain and slot_fillers_per_slot must be positive".into());
        }
        for split in Split::ALL {
            if self.split_sizes.get(split) == 0 {
                return bad(format!("split {split} has size 0"));
            }
        }
        if !(0.0..1.0).contains(&self.ood_fraction_of_pool) {
            return bad(format!("ood_fraction_of_pool {} not in [0, 1)", self.ood_fraction_of_pool));
        }
        if !(0.0..=1.0).contains(&self.shared_template_fraction) {
            return bad(format!("shared_template_fraction {} not in [0, 1]", self.shared_template_fraction));
        }
        if !(self.baseline_shared_weight >= 0.0 && self.baseline_shared_weight.is_finite()) {
            return bad("baseline_shared_weight must be finite and non-negative".into());
        }
        if !(self.filler_zipf_exponent >= 0.0 && self.filler_zipf_exponent.is_finite()) {
            return bad("filler_zipf_exponent must be finite and non-negative".into());
        }
        let domain_pairs = self.n_domains * (self.n_domains - 1) / 2;
        if self.confusion_pairs.len() > domain_pairs {
            return bad(format!(
                "{} confusion pairs requested but only {domain_pairs} domain pairs exist",
                self.confusion_pairs.len()
            ));
        }
        let mut seen = HashSet::new();
        let mut shared_per_domain = vec![0usize; self.n_domains];
        for &(a, b) in &self.confusion_pairs {
            if a >= self.n_domains || b >= self.n_domains {
                return bad(format!("confusion pair ({a}, {b}) references a domain >= {}", self.n_domains));
            }
            if a == b {
                return bad(format!("confusion pair ({a}, {b}) pairs a domain with itself"));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return bad(format!("confusion pair ({a}, {b}) listed twice"));
            }
            shared_per_domain[a] += self.shared_per_pair();
            shared_per_domain[b] += self.shared_per_pair();
        }
        if let Some(d) = shared_per_domain.iter().position(|&n| n > self.templates_per_domain) {
            return bad(format!(
                "domain {d} would share {} templates but has only {}",
                shared_per_domain[d], self.templates_per_domain
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Piece {
    Word(String),
    Slot(usize),
}

#[derive(Debug, Clone)]
struct Template {
    pieces: Vec<Piece>,
    /// Confusion pair this template is shared by.
    pair: Option<(usize, usize)>,
}

struct Domain {
    name: String,
    templates: Vec<Template>,
    fillers: Vec<Vec<String>>,
}

struct WordMint {
    used: HashSet<String>,
}

impl WordMint {
    const ONSETS: &'static [&'static str] =
        &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr", "pl"];
    const VOWELS: &'static [&'static str] = &["a", "e", "i", "o", "u", "ai", "ou"];

    fn new() -> Self {
        WordMint { used: FUNCTION_WORDS.iter().map(|w| w.to_string()).collect() }
    }

    /// A fresh pronounceable pseudo-word never returned before.
    fn mint(&mut self, rng: &mut ChaCha8Rng, syllables: usize) -> String {
        loop {
            let mut word = String::new();
            for _ in 0..syllables {
                word.push_str(Self::ONSETS[rng.gen_range(0..Self::ONSETS.len())]);
                word.push_str(Self::VOWELS[rng.gen_range(0..Self::VOWELS.len())]);
            }
            if rng.gen_bool(0.5) {
                word.push_str(Self::ONSETS[rng.gen_range(0..Self::ONSETS.len())]);
            }
            if self.used.insert(word.clone()) {
                return word;
            }
        }
    }

    fn mint_many(&mut self, rng: &mut ChaCha8Rng, n: usize, syllables: usize) -> Vec<String> {
        (0..n).map(|_| self.mint(rng, syllables)).collect()
    }
}

fn make_template(rng: &mut ChaCha8Rng, lexicon: &[String], pair: Option<(usize, usize)>) -> Template {
    let len = rng.gen_range(3..=6);
    let n_slots = rng.gen_range(1..=2usize);
    let mut slot_positions: Vec<usize> = rand::seq::index::sample(rng, len, n_slots).into_vec();
    slot_positions.sort_unstable();
    let pieces = (0..len)
        .map(|pos| match slot_positions.iter().position(|&p| p == pos) {
            Some(k) => Piece::Slot(k % SLOT_TYPES),
            None if rng.gen_bool(0.6) => Piece::Word(lexicon[rng.gen_range(0..lexicon.len())].clone()),
            None => Piece::Word(FUNCTION_WORDS[rng.gen_range(0..FUNCTION_WORDS.len())].to_string()),
        })
        .collect();
    Template { pieces, pair }
}

fn build_domains(spec: &GeneratorSpec, rng: &mut ChaCha8Rng, mint: &mut WordMint) -> Vec<Domain> {
    let shared_per_pair = spec.shared_per_pair();
    let mut shared_counts = vec![0usize; spec.n_domains];
    for &(a, b) in &spec.confusion_pairs {
        shared_counts[a] += shared_per_pair;
        shared_counts[b] += shared_per_pair;
    }
    let mut domains: Vec<Domain> = (0..spec.n_domains)
        .map(|d| {
            let lexicon = mint.mint_many(rng, CARRIER_WORDS_PER_DOMAIN, 2);
            let fillers = (0..SLOT_TYPES).map(|_| mint.mint_many(rng, spec.slot_fillers_per_slot, 3)).collect();
            let templates =
                (0..spec.templates_per_domain - shared_counts[d]).map(|_| make_template(rng, &lexicon, None)).collect();
            Domain { name: format!("domain_{d:02}"), templates, fillers }
        })
        .collect();
    for &(a, b) in &spec.confusion_pairs {
        let pair_lexicon = mint.mint_many(rng, PAIR_WORDS, 2);
        for _ in 0..shared_per_pair {
            let template = make_template(rng, &pair_lexicon, Some((a, b)));
            domains[a].templates.push(template.clone());
            domains[b].templates.push(template);
        }
    }
    domains
}

fn instantiate(
    rng: &mut ChaCha8Rng,
    template: &Template,
    domain: &Domain,
    filler_dist: &WeightedIndex<f64>,
) -> Vec<String> {
    template
        .pieces
        .iter()
        .map(|piece| match piece {
            Piece::Word(w) => w.clone(),
            Piece::Slot(s) => domain.fillers[*s][filler_dist.sample(rng)].clone(),
        })
        .collect()
}

/// Generates a corpus with ids `0..total` laid out split by split in the order
/// baseline_train, dev, pool, blind_test. Deterministic for a fixed spec.
pub fn generate_synthetic_corpus(spec: &GeneratorSpec) -> Result<Corpus, CorpusError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut mint = WordMint::new();
    let domains = build_domains(spec, &mut rng, &mut mint);
    let junk = mint.mint_many(&mut rng, JUNK_WORDS, 2);
    let filler_dist = WeightedIndex::new(
        (0..spec.slot_fillers_per_slot).map(|r| 1.0 / ((r + 1) as f64).powf(spec.filler_zipf_exponent)),
    )
    .expect("filler weights are positive");
    let template_dists = |shared_weight: f64| -> Vec<Option<WeightedIndex<f64>>> {
        domains
            .iter()
            .enumerate()
            .map(|(d, domain)| {
                WeightedIndex::new(domain.templates.iter().map(|t| match t.pair {
                    Some((_, second)) if second == d => shared_weight,
                    _ => 1.0,
                }))
                .ok()
            })
            .collect()
    };
    let baseline_templates = template_dists(spec.baseline_shared_weight);
    let natural_templates = template_dists(1.0);

    let mut raw = Vec::with_capacity(spec.split_sizes.total());
    let mut next_id = 0u64;
    for split in Split::ALL {
        let size = spec.split_sizes.get(split);
        let ood_positions: HashSet<usize> = if split == Split::Pool {
            rand::seq::index::sample(&mut rng, size, spec.ood_count()).into_iter().collect()
        } else {
            HashSet::new()
        };
        let dists = if split == Split::BaselineTrain { &baseline_templates } else { &natural_templates };
        for pos in 0..size {
            let (tokens, label) = if ood_positions.contains(&pos) {
                (ood_tokens(&mut rng, &domains, &natural_templates, &filler_dist, &junk), OOD_LABEL.to_string())
            } else {
                let d = rng.gen_range(0..domains.len());
                let t = match &dists[d] {
                    Some(dist) => dist.sample(&mut rng),
                    None => rng.gen_range(0..domains[d].templates.len()),
                };
                (instantiate(&mut rng, &domains[d].templates[t], &domains[d], &filler_dist), domains[d].name.clone())
            };
            let context = if spec.context_features > 0 {
                vec![format!("f{}", rng.gen_range(0..spec.context_features))]
            } else {
                vec![]
            };
            raw.push(RawUtterance { id: next_id, tokens, context, label, split });
            next_id += 1;
        }
    }
    Corpus::from_raw(raw)
}

fn ood_tokens(
    rng: &mut ChaCha8Rng,
    domains: &[Domain],
    template_dists: &[Option<WeightedIndex<f64>>],
    filler_dist: &WeightedIndex<f64>,
    junk: &[String],
) -> Vec<String> {
    let pick = |rng: &mut ChaCha8Rng, d: usize| {
        let t = template_dists[d].as_ref().map_or(0, |dist| dist.sample(rng));
        instantiate(rng, &domains[d].templates[t], &domains[d], filler_dist)
    };
    let mut tokens = if domains.len() >= 2 {
        let first = rng.gen_range(0..domains.len());
        let second = (first + rng.gen_range(1..domains.len())) % domains.len();
        let head = pick(rng, first);
        let tail = pick(rng, second);
        let mut spliced: Vec<String> = head[..head.len().div_ceil(2)].to_vec();
        spliced.extend_from_slice(&tail[tail.len() / 2..]);
        spliced
    } else {
        pick(rng, 0)
    };
    for token in tokens.iter_mut() {
        if rng.gen_bool(OOD_SUBSTITUTION_RATE) {
            *token = junk[rng.gen_range(0..junk.len())].clone();
        }
    }
    tokens
}
