//! The swap and add protocols.
//!
//! Selection happens once per strategy on the run-0 baseline ensemble. Every
//! run then retrains each condition from the same per-run seed, so conditions
//! within a run differ only in their training data.

use super::config::{CorpusSource, ExperimentConfig, Protocol};
use super::report::{AnnotationSummary, ComparisonReport, ComparisonRow, ConditionSummary, RunMetrics};
use super::stats::{compare_runs, mean, sample_std};
use super::HarnessError;
use crate::corpus::{generate_synthetic_corpus, load_corpus, vocabulary_from, Corpus, Split, Utterance, UtteranceId};
use crate::neural::{evaluate, Ensemble};
use crate::seeds::derive_seed;
use crate::selection::{
    annotate_with_oracle, discover_errors, embed_pool, select_entropy, select_random, select_similarity,
    AnnotationResult, CandidateSet, EmbeddingStore, PredictionError, SelectionBudget, Strategy,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::collections::{BTreeMap, HashSet};

const TRAIN_STREAM: u64 = 1;
const REMOVAL_STREAM: u64 = 2;
const RANDOM_STREAM: u64 = 3;
const PERMUTATION_STREAM: u64 = 4;

pub const BASELINE: &str = "baseline";

pub fn load_corpus_source(config: &ExperimentConfig) -> Result<Corpus, HarnessError> {
    Ok(match &config.corpus {
        CorpusSource::Generator(spec) => generate_synthetic_corpus(spec)?,
        CorpusSource::File(path) => load_corpus(path)?,
    })
}

/// Training seed shared by every condition of run `run`.
pub fn run_seed(config: &ExperimentConfig, run: usize) -> u64 {
    derive_seed(config.base_seed, &[TRAIN_STREAM, run as u64])
}

/// Seed of the random strategy's shuffle.
pub fn random_selection_seed(config: &ExperimentConfig) -> u64 {
    derive_seed(config.base_seed, &[RANDOM_STREAM])
}

/// Trains an ensemble on `training`, with a vocabulary built from that set.
pub fn train_on(
    config: &ExperimentConfig,
    corpus: &Corpus,
    training: &[&Utterance],
    seed: u64,
) -> Result<Ensemble, HarnessError> {
    let vocabulary = vocabulary_from(corpus, training.iter().copied(), config.min_count)?;
    let data = Ensemble::training_examples(&vocabulary, corpus, training.iter().copied());
    Ok(Ensemble::train(&config.ensemble, seed, vocabulary, corpus.labels.clone(), &data)?.0)
}

/// Candidates and their oracle annotation for one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub strategy: Strategy,
    /// In-domain labels wanted.
    pub requested: usize,
    pub candidates: CandidateSet,
    pub annotation: AnnotationResult,
    pub shortfall: bool,
}

impl Selection {
    pub fn added_ids(&self) -> impl Iterator<Item = UtteranceId> + '_ {
        self.annotation.labeled.iter().map(|l| l.0)
    }
}

/// Everything fixed before the repeated runs start.
pub struct Prepared {
    pub corpus: Corpus,
    pub baseline: Ensemble,
    pub errors: Vec<PredictionError>,
    pub selections: Vec<Selection>,
}

/// Proposes candidates in growing batches until `requested` of them are
/// in-domain, the strategy runs dry, the budget ceiling is reached or the
/// grading cap is spent. Each batch size extends the previous one by the
/// number of labels still missing, so no utterance is graded needlessly.
fn acquire(
    requested: usize,
    ceiling: usize,
    grading_cap: Option<usize>,
    corpus: &Corpus,
    mut select: impl FnMut(usize) -> Result<CandidateSet, HarnessError>,
) -> Result<(CandidateSet, AnnotationResult), HarnessError> {
    let mut batch = requested.min(ceiling);
    loop {
        let candidates = select(batch)?;
        let annotation = annotate_with_oracle(&candidates, corpus, grading_cap)?;
        let labeled = annotation.labeled.len();
        let capped = grading_cap.is_some_and(|cap| annotation.graded_count >= cap);
        if labeled >= requested || candidates.len() < batch || batch >= ceiling || capped {
            return Ok((candidates, annotation));
        }
        batch = (batch + requested - labeled).min(ceiling);
    }
}

fn select_strategy(
    strategy: Strategy,
    config: &ExperimentConfig,
    corpus: &Corpus,
    baseline: &Ensemble,
    errors: &[PredictionError],
    store: Option<&EmbeddingStore>,
) -> Result<Selection, HarnessError> {
    let requested = config.protocol.count();
    let pool: Vec<&Utterance> = corpus.split(Split::Pool).collect();
    let ceiling = config.total_budget.unwrap_or(pool.len()).min(pool.len());
    if requested == 0 || pool.is_empty() {
        return Ok(Selection {
            strategy,
            requested,
            candidates: CandidateSet { strategy, candidates: Vec::new() },
            annotation: AnnotationResult::default(),
            shortfall: requested > 0,
        });
    }
    let (candidates, annotation) = match strategy {
        Strategy::Similarity => {
            let store = store.expect("pool embeddings are computed when similarity is selected");
            let exclude = HashSet::new();
            acquire(requested, ceiling, config.grading_cap, corpus, |n| {
                let budget = SelectionBudget::new(config.k, n)?;
                Ok(select_similarity(errors, baseline, corpus, store, &budget, &exclude)?)
            })?
        }
        Strategy::Entropy => {
            // Scores do not depend on the batch size, so rank the pool once.
            let ranked = select_entropy(baseline, corpus, pool.iter().copied(), pool.len())?;
            acquire(requested, ceiling, config.grading_cap, corpus, |n| {
                Ok(CandidateSet { strategy, candidates: ranked.candidates[..n].to_vec() })
            })?
        }
        Strategy::Random => {
            let ids: Vec<UtteranceId> = pool.iter().map(|u| u.id).collect();
            let seed = random_selection_seed(config);
            acquire(requested, ceiling, config.grading_cap, corpus, |n| Ok(select_random(&ids, n, seed)?))?
        }
    };
    let shortfall = annotation.labeled.len() < requested;
    Ok(Selection { strategy, requested, candidates, annotation, shortfall })
}

/// Loads the corpus, trains the run-0 baseline, discovers dev errors and runs
/// every configured strategy's selection and annotation.
pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    config.validate()?;
    let corpus = load_corpus_source(config)?;
    let training: Vec<&Utterance> = corpus.split(Split::BaselineTrain).collect();
    if let Protocol::Swap(n) = config.protocol {
        if n >= training.len() {
            return Err(HarnessError::Config(format!(
                "exp.swap_count {n} must be below the baseline_train size {}",
                training.len()
            )));
        }
    }
    let baseline = train_on(config, &corpus, &training, run_seed(config, 0))?;
    let errors = discover_errors(&baseline, &corpus, corpus.split(Split::Dev))?;
    let store = if config.strategies.contains(&Strategy::Similarity) && config.protocol.count() > 0 {
        Some(embed_pool(&baseline, &corpus, corpus.split(Split::Pool))?)
    } else {
        None
    };
    let selections = config
        .strategies
        .iter()
        .map(|&s| select_strategy(s, config, &corpus, &baseline, &errors, store.as_ref()))
        .collect::<Result<_, _>>()?;
    Ok(Prepared { corpus, baseline, errors, selections })
}

impl Prepared {
    /// The baseline utterances a strategy condition keeps in `run`: all of
    /// them under the add protocol, all but a seeded uniform sample under swap.
    pub fn kept_baseline(&self, config: &ExperimentConfig, run: usize) -> Vec<&Utterance> {
        let training: Vec<&Utterance> = self.corpus.split(Split::BaselineTrain).collect();
        match config.protocol {
            Protocol::Add(_) => training,
            Protocol::Swap(n) => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.base_seed, &[REMOVAL_STREAM, run as u64]));
                let removed: HashSet<usize> =
                    rand::seq::index::sample(&mut rng, training.len(), n).into_iter().collect();
                training.into_iter().enumerate().filter(|(i, _)| !removed.contains(i)).map(|(_, u)| u).collect()
            }
        }
    }

    /// Training set of `selection`'s condition in `run`: kept baseline
    /// utterances in corpus order, then the added ones in annotation order.
    pub fn condition_training(&self, config: &ExperimentConfig, run: usize, selection: &Selection) -> Vec<&Utterance> {
        let index = self.corpus.index();
        let mut training = self.kept_baseline(config, run);
        training.extend(selection.added_ids().map(|id| &self.corpus.utterances[index[&id]]));
        training
    }
}

struct RunOutcome {
    metrics: Vec<RunMetrics>,
    training_sizes: Vec<usize>,
    /// Strategy ensembles, kept for run 0 only.
    ensembles: Vec<Ensemble>,
}

fn metrics(run: usize, condition: &str, ensemble: &Ensemble, corpus: &Corpus) -> Result<RunMetrics, HarnessError> {
    let evaluation = evaluate(ensemble, corpus, corpus.split(Split::BlindTest))?;
    Ok(RunMetrics {
        run_index: run,
        condition: condition.to_string(),
        error_rate: evaluation.error_rate,
        member_error_rates: evaluation.member_error_rates,
    })
}

fn execute_run(config: &ExperimentConfig, prepared: &Prepared, run: usize) -> Result<RunOutcome, HarnessError> {
    let corpus = &prepared.corpus;
    let seed = run_seed(config, run);
    let baseline_training: Vec<&Utterance> = corpus.split(Split::BaselineTrain).collect();
    let trained;
    let baseline = if run == 0 {
        &prepared.baseline
    } else {
        trained = train_on(config, corpus, &baseline_training, seed)?;
        &trained
    };
    let mut outcome = RunOutcome {
        metrics: vec![metrics(run, BASELINE, baseline, corpus)?],
        training_sizes: vec![baseline_training.len()],
        ensembles: Vec::new(),
    };
    for selection in &prepared.selections {
        let training = prepared.condition_training(config, run, selection);
        let ensemble = train_on(config, corpus, &training, seed)?;
        outcome.metrics.push(metrics(run, selection.strategy.as_str(), &ensemble, corpus)?);
        outcome.training_sizes.push(training.len());
        if run == 0 {
            outcome.ensembles.push(ensemble);
        }
    }
    Ok(outcome)
}

/// A finished experiment: the report plus the run-0 artifacts that the
/// correction analysis needs.
pub struct ExperimentOutcome {
    pub report: ComparisonReport,
    pub prepared: Prepared,
    /// Run-0 ensemble of each strategy condition, in `prepared.selections` order.
    pub run0_ensembles: Vec<Ensemble>,
}

/// The swap protocol; rejects a config set up for adding.
pub fn run_experiment_swap(config: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    match config.protocol {
        Protocol::Swap(_) => run_experiment(config),
        Protocol::Add(_) => Err(HarnessError::Config("swap experiment needs exp.swap_count".into())),
    }
}

/// The add protocol; rejects a config set up for swapping.
pub fn run_experiment_add(config: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    match config.protocol {
        Protocol::Add(_) => run_experiment(config),
        Protocol::Swap(_) => Err(HarnessError::Config("add experiment needs exp.add_count".into())),
    }
}

/// Runs the configured protocol end to end.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    let prepared = prepare(config)?;
    let outcomes: Vec<RunOutcome> =
        (0..config.n_runs).into_par_iter().map(|run| execute_run(config, &prepared, run)).collect::<Result<_, _>>()?;

    let mut conditions: Vec<String> = vec![BASELINE.to_string()];
    conditions.extend(prepared.selections.iter().map(|s| s.strategy.as_str().to_string()));
    let mut per_condition: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut runs = Vec::new();
    for outcome in &outcomes {
        for m in &outcome.metrics {
            per_condition.entry(m.condition.clone()).or_default().push(m.error_rate);
            runs.push(m.clone());
        }
    }
    let added = |c: usize| if c == 0 { 0 } else { prepared.selections[c - 1].annotation.labeled.len() };
    let condition_summaries = conditions
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let rates = &per_condition[name.as_str()];
            ConditionSummary {
                condition: name.clone(),
                mean_error_rate: mean(rates),
                std_error_rate: sample_std(rates),
                training_size: outcomes[0].training_sizes[c],
                added: added(c),
            }
        })
        .collect();

    let mut comparisons = Vec::new();
    if config.n_runs >= 2 {
        let mut pairs: Vec<(&str, &str)> =
            prepared.selections.iter().map(|s| (s.strategy.as_str(), BASELINE)).collect();
        if config.strategies.contains(&Strategy::Similarity) {
            for s in &config.strategies {
                if *s != Strategy::Similarity {
                    pairs.push((Strategy::Similarity.as_str(), s.as_str()));
                }
            }
        }
        for (i, (condition, reference)) in pairs.into_iter().enumerate() {
            let seed = derive_seed(config.base_seed, &[PERMUTATION_STREAM, i as u64]);
            let c = compare_runs(&per_condition[reference], &per_condition[condition], seed)?;
            comparisons.push(ComparisonRow {
                condition: condition.to_string(),
                reference: reference.to_string(),
                mean_reference: c.mean_a,
                mean_condition: c.mean_b,
                relative_error_reduction: c.relative_error_reduction,
                welch_p: c.welch_p,
                permutation_p: c.permutation_p,
                permutation_exact: c.permutation_exact,
                tests_agree: c.tests_agree(),
            });
        }
    }

    let annotation = prepared
        .selections
        .iter()
        .map(|s| AnnotationSummary {
            strategy: s.strategy.as_str().to_string(),
            requested: s.requested,
            proposed: s.candidates.len(),
            graded_count: s.annotation.graded_count,
            labeled_count: s.annotation.labeled.len(),
            ood_discarded_count: s.annotation.ood_discarded_count,
            ood_rate: s.annotation.ood_rate(),
            shortfall: s.shortfall,
        })
        .collect();

    let report = ComparisonReport {
        protocol: config.protocol.name().to_string(),
        count: config.protocol.count(),
        n_runs: config.n_runs,
        config: config.to_pairs(),
        dev_errors: prepared.errors.len(),
        dev_ensemble_errors: prepared.errors.iter().filter(|e| e.ensemble_predicted_label != e.gold_label).count(),
        conditions: condition_summaries,
        comparisons,
        annotation,
        runs,
    };
    let run0_ensembles = outcomes.into_iter().next().map(|o| o.ensembles).unwrap_or_default();
    Ok(ExperimentOutcome { report, prepared, run0_ensembles })
}
