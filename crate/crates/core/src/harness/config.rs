//! Experiment configuration and its flat `key = value` text form.
//!
//! Every setting has a dotted key. [`ExperimentConfig::to_pairs`] lists the
//! complete effective configuration, and parsing that listing back yields the
//! same configuration, so any run can be replayed from its printed config.

use super::HarnessError;
use crate::corpus::GeneratorSpec;
use crate::neural::{EnsembleSpec, ModelConfig, SuTap, SummarizationMode};
use crate::selection::Strategy;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub enum CorpusSource {
    Generator(GeneratorSpec),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Replace this many baseline utterances with selected ones.
    Swap(usize),
    /// Append this many selected utterances to the baseline.
    Add(usize),
}

impl Protocol {
    pub fn count(self) -> usize {
        match self {
            Protocol::Swap(n) | Protocol::Add(n) => n,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Swap(_) => "swap",
            Protocol::Add(_) => "add",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    /// Generator settings; also the source of the corpus seed.
    pub generator: GeneratorSpec,
    pub min_count: usize,
    pub ensemble: EnsembleSpec,
    /// Neighbors per (error, member, layer) query.
    pub k: usize,
    /// Ceiling on candidates proposed per strategy; `None` means the pool size.
    pub total_budget: Option<usize>,
    pub strategies: Vec<Strategy>,
    pub n_runs: usize,
    pub base_seed: u64,
    pub protocol: Protocol,
    pub grading_cap: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: CorpusSource::Generator(GeneratorSpec::default()),
            generator: GeneratorSpec::default(),
            min_count: 1,
            ensemble: EnsembleSpec::default(),
            k: 10,
            total_budget: None,
            strategies: Strategy::ALL.to_vec(),
            n_runs: 11,
            base_seed: 0,
            protocol: Protocol::Swap(200),
            grading_cap: None,
        }
    }
}

const MEMBER_FIELDS: &[&str] = &[
    "embedding_dim",
    "hidden_dim",
    "ff_dims",
    "dropout",
    "summarization",
    "su_tap",
    "learning_rate",
    "epochs",
    "batch_size",
    "clip_norm",
];

const TOP_LEVEL_KEYS: &[&str] = &[
    "corpus.path",
    "corpus.seed",
    "corpus.n_domains",
    "corpus.templates_per_domain",
    "corpus.slot_fillers_per_slot",
    "corpus.confusion_pairs",
    "corpus.shared_template_fraction",
    "corpus.ood_fraction_of_pool",
    "corpus.baseline_train",
    "corpus.dev",
    "corpus.pool",
    "corpus.blind_test",
    "corpus.baseline_shared_weight",
    "corpus.filler_zipf_exponent",
    "corpus.context_features",
    "corpus.min_count",
    "ensemble.M",
    "ensemble.hidden_dims",
    "ensemble.mean_pool_last",
    "ensemble.embedding_dim",
    "ensemble.hidden_dim",
    "ensemble.ff_dims",
    "ensemble.dropout",
    "ensemble.summarization",
    "ensemble.su_tap",
    "ensemble.learning_rate",
    "ensemble.epochs",
    "ensemble.batch_size",
    "ensemble.clip_norm",
    "budget.k",
    "budget.total",
    "exp.n_runs",
    "exp.swap_count",
    "exp.add_count",
    "exp.grading_cap",
    "exp.base_seed",
    "exp.strategies",
];

/// Splits `ensemble.member.<i>.<field>` into `(i, field)`.
fn member_key(key: &str) -> Option<(usize, &str)> {
    let rest = key.strip_prefix("ensemble.member.")?;
    let (index, field) = rest.split_once('.')?;
    let index = index.parse().ok()?;
    MEMBER_FIELDS.contains(&field).then_some((index, field))
}

/// Whether `key` names a configuration setting.
pub fn is_config_key(key: &str) -> bool {
    TOP_LEVEL_KEYS.contains(&key) || member_key(key).is_some()
}

fn bad(key: &str, value: &str, why: impl Display) -> HarnessError {
    HarnessError::Config(format!("{key} = {value}: {why}"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T, HarnessError>
where
    T::Err: Display,
{
    value.trim().parse().map_err(|e| bad(key, value, e))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, HarnessError>
where
    T::Err: Display,
{
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| num(key, s)).collect()
}

fn optional(key: &str, value: &str) -> Result<Option<usize>, HarnessError> {
    match value.trim() {
        "none" => Ok(None),
        v => num(key, v).map(Some),
    }
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

fn summarization_name(mode: SummarizationMode) -> &'static str {
    match mode {
        SummarizationMode::AttentionPool => "attention_pool",
        SummarizationMode::MeanPool => "mean_pool",
    }
}

fn su_tap_name(tap: SuTap) -> &'static str {
    match tap {
        SuTap::MeanStates => "mean_states",
        SuTap::FinalStates => "final_states",
    }
}

fn set_model_field(config: &mut ModelConfig, key: &str, field: &str, value: &str) -> Result<(), HarnessError> {
    match field {
        "embedding_dim" => config.embedding_dim = num(key, value)?,
        "hidden_dim" => config.hidden_dim = num(key, value)?,
        "ff_dims" => config.ff_dims = list(key, value)?,
        "dropout" => config.dropout = num(key, value)?,
        "summarization" => {
            config.summarization = match value.trim() {
                "attention_pool" => SummarizationMode::AttentionPool,
                "mean_pool" => SummarizationMode::MeanPool,
                _ => return Err(bad(key, value, "expected attention_pool or mean_pool")),
            }
        }
        "su_tap" => {
            config.su_tap = match value.trim() {
                "mean_states" => SuTap::MeanStates,
                "final_states" => SuTap::FinalStates,
                _ => return Err(bad(key, value, "expected mean_states or final_states")),
            }
        }
        "learning_rate" => config.learning_rate = num(key, value)?,
        "epochs" => config.epochs = num(key, value)?,
        "batch_size" => config.batch_size = num(key, value)?,
        "clip_norm" => config.clip_norm = num(key, value)?,
        _ => return Err(HarnessError::Config(format!("unknown key {key}"))),
    }
    Ok(())
}

fn model_fields(config: &ModelConfig) -> Vec<(&'static str, String)> {
    vec![
        ("embedding_dim", config.embedding_dim.to_string()),
        ("hidden_dim", config.hidden_dim.to_string()),
        ("ff_dims", join(&config.ff_dims)),
        ("dropout", config.dropout.to_string()),
        ("summarization", summarization_name(config.summarization).to_string()),
        ("su_tap", su_tap_name(config.su_tap).to_string()),
        ("learning_rate", config.learning_rate.to_string()),
        ("epochs", config.epochs.to_string()),
        ("batch_size", config.batch_size.to_string()),
        ("clip_norm", config.clip_norm.to_string()),
    ]
}

/// Reads `key = value` lines; `#` starts a comment line, blank lines are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, HarnessError> {
    let mut pairs = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", i + 1)))?;
        let key = key.trim().to_string();
        if pairs.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(HarnessError::Config(format!("line {}: duplicate key {key}", i + 1)));
        }
    }
    Ok(pairs)
}

pub fn load_config_file(path: impl AsRef<std::path::Path>) -> Result<BTreeMap<String, String>, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_text(&text)
}

impl ExperimentConfig {
    /// Applies `pairs` on top of the defaults. Unknown keys are rejected.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<ExperimentConfig, HarnessError> {
        let mut c = ExperimentConfig::default();
        let mut corpus_path = None;
        let mut corpus_seed = None;
        let mut swap = None;
        let mut add = None;
        let mut members: BTreeMap<usize, Vec<(&str, &str, &str)>> = BTreeMap::new();
        let g = &mut c.generator;
        let sizes = &mut g.split_sizes;
        let base = &mut c.ensemble.base;
        for (key, value) in pairs {
            let v = value.as_str();
            match key.as_str() {
                "corpus.path" => corpus_path = Some(PathBuf::from(v.trim())),
                "corpus.seed" => corpus_seed = Some(num(key, v)?),
                "corpus.n_domains" => g.n_domains = num(key, v)?,
                "corpus.templates_per_domain" => g.templates_per_domain = num(key, v)?,
                "corpus.slot_fillers_per_slot" => g.slot_fillers_per_slot = num(key, v)?,
                "corpus.confusion_pairs" => {
                    g.confusion_pairs = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|p| {
                            let (a, b) = p.split_once('-').ok_or_else(|| bad(key, v, "pairs are written a-b"))?;
                            Ok((num(key, a)?, num(key, b)?))
                        })
                        .collect::<Result<_, HarnessError>>()?
                }
                "corpus.shared_template_fraction" => g.shared_template_fraction = num(key, v)?,
                "corpus.ood_fraction_of_pool" => g.ood_fraction_of_pool = num(key, v)?,
                "corpus.baseline_train" => sizes.baseline_train = num(key, v)?,
                "corpus.dev" => sizes.dev = num(key, v)?,
                "corpus.pool" => sizes.pool = num(key, v)?,
                "corpus.blind_test" => sizes.blind_test = num(key, v)?,
                "corpus.baseline_shared_weight" => g.baseline_shared_weight = num(key, v)?,
                "corpus.filler_zipf_exponent" => g.filler_zipf_exponent = num(key, v)?,
                "corpus.context_features" => g.context_features = num(key, v)?,
                "corpus.min_count" => c.min_count = num(key, v)?,
                "ensemble.M" => c.ensemble.members = num(key, v)?,
                "ensemble.hidden_dims" => c.ensemble.hidden_dims = list(key, v)?,
                "ensemble.mean_pool_last" => c.ensemble.mean_pool_last = num(key, v)?,
                "budget.k" => c.k = num(key, v)?,
                "budget.total" => c.total_budget = optional(key, v)?,
                "exp.n_runs" => c.n_runs = num(key, v)?,
                "exp.swap_count" => swap = Some(num(key, v)?),
                "exp.add_count" => add = Some(num(key, v)?),
                "exp.grading_cap" => c.grading_cap = optional(key, v)?,
                "exp.base_seed" => c.base_seed = num(key, v)?,
                "exp.strategies" => {
                    let mut strategies = Vec::new();
                    for s in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        let st = Strategy::parse(s).ok_or_else(|| bad(key, v, format!("unknown strategy {s}")))?;
                        if !strategies.contains(&st) {
                            strategies.push(st);
                        }
                    }
                    strategies.sort();
                    c.strategies = strategies;
                }
                k => {
                    if let Some(field) = k.strip_prefix("ensemble.").filter(|f| MEMBER_FIELDS.contains(f)) {
                        set_model_field(base, key, field, v)?;
                    } else if let Some((i, field)) = member_key(k) {
                        members.entry(i).or_default().push((key, field, v));
                    } else {
                        return Err(HarnessError::Config(format!("unknown key {key}")));
                    }
                }
            }
        }
        c.protocol = match (swap, add) {
            (Some(_), Some(_)) => {
                return Err(HarnessError::Config("exp.swap_count and exp.add_count are mutually exclusive".into()))
            }
            (Some(n), None) => Protocol::Swap(n),
            (None, Some(n)) => Protocol::Add(n),
            (None, None) => Protocol::Swap(200),
        };
        c.generator.seed = corpus_seed.unwrap_or(c.base_seed);
        c.corpus = match corpus_path {
            Some(path) => CorpusSource::File(path),
            None => CorpusSource::Generator(c.generator.clone()),
        };
        // Member overrides start from that member's recipe config.
        let recipe = EnsembleSpec { overrides: Vec::new(), ..c.ensemble.clone() }.member_configs(0);
        for (i, fields) in members {
            let mut config = recipe.get(i).cloned().ok_or_else(|| {
                HarnessError::Config(format!("ensemble.member.{i}.*: ensemble has {} members", recipe.len()))
            })?;
            for (key, field, value) in fields {
                set_model_field(&mut config, key, field, value)?;
            }
            config.seed = 0;
            c.ensemble.overrides.push((i, config));
        }
        c.validate()?;
        Ok(c)
    }

    /// The complete effective configuration as `key → value`.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let mut p = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            p.insert(k.to_string(), v);
        };
        if let CorpusSource::File(path) = &self.corpus {
            put("corpus.path", path.display().to_string());
        }
        let g = &self.generator;
        put("corpus.seed", g.seed.to_string());
        put("corpus.n_domains", g.n_domains.to_string());
        put("corpus.templates_per_domain", g.templates_per_domain.to_string());
        put("corpus.slot_fillers_per_slot", g.slot_fillers_per_slot.to_string());
        put(
            "corpus.confusion_pairs",
            g.confusion_pairs.iter().map(|(a, b)| format!("{a}-{b}")).collect::<Vec<_>>().join(","),
        );
        put("corpus.shared_template_fraction", g.shared_template_fraction.to_string());
        put("corpus.ood_fraction_of_pool", g.ood_fraction_of_pool.to_string());
        put("corpus.baseline_train", g.split_sizes.baseline_train.to_string());
        put("corpus.dev", g.split_sizes.dev.to_string());
        put("corpus.pool", g.split_sizes.pool.to_string());
        put("corpus.blind_test", g.split_sizes.blind_test.to_string());
        put("corpus.baseline_shared_weight", g.baseline_shared_weight.to_string());
        put("corpus.filler_zipf_exponent", g.filler_zipf_exponent.to_string());
        put("corpus.context_features", g.context_features.to_string());
        put("corpus.min_count", self.min_count.to_string());
        put("ensemble.M", self.ensemble.members.to_string());
        put("ensemble.hidden_dims", join(&self.ensemble.hidden_dims));
        put("ensemble.mean_pool_last", self.ensemble.mean_pool_last.to_string());
        for (field, value) in model_fields(&self.ensemble.base) {
            put(&format!("ensemble.{field}"), value);
        }
        for (i, config) in &self.ensemble.overrides {
            for (field, value) in model_fields(config) {
                put(&format!("ensemble.member.{i}.{field}"), value);
            }
        }
        put("budget.k", self.k.to_string());
        put("budget.total", self.total_budget.map_or("none".into(), |n| n.to_string()));
        put("exp.n_runs", self.n_runs.to_string());
        match self.protocol {
            Protocol::Swap(n) => put("exp.swap_count", n.to_string()),
            Protocol::Add(n) => put("exp.add_count", n.to_string()),
        }
        put("exp.grading_cap", self.grading_cap.map_or("none".into(), |n| n.to_string()));
        put("exp.base_seed", self.base_seed.to_string());
        put("exp.strategies", join(&self.strategies));
        p
    }

    /// `key = value` lines in key order.
    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.n_runs == 0 {
            return fail("exp.n_runs must be positive".into());
        }
        if self.k == 0 {
            return fail("budget.k must be positive".into());
        }
        if self.total_budget == Some(0) {
            return fail("budget.total must be positive".into());
        }
        if self.min_count == 0 {
            return fail("corpus.min_count must be positive".into());
        }
        if let Protocol::Swap(n) = self.protocol {
            let train = match &self.corpus {
                CorpusSource::Generator(g) => g.split_sizes.baseline_train,
                CorpusSource::File(_) => usize::MAX,
            };
            if n >= train {
                return fail(format!("exp.swap_count {n} must be below the baseline_train size {train}"));
            }
        }
        if let CorpusSource::Generator(g) = &self.corpus {
            g.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        self.ensemble.validate().map_err(HarnessError::Config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(text: &str) -> BTreeMap<String, String> {
        parse_config_text(text).unwrap()
    }

    #[test]
    fn defaults() {
        let c = ExperimentConfig::from_pairs(&BTreeMap::new()).unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.n_runs, 11);
        assert_eq!(c.protocol, Protocol::Swap(200));
    }

    #[test]
    fn keys_apply() {
        let c = ExperimentConfig::from_pairs(&pairs(
            "# experiment\nexp.n_runs = 3\nexp.add_count = 100\nensemble.M = 3\nensemble.hidden_dims = 16,24\n\
             ensemble.member.1.dropout = 0.25\nexp.strategies = random, similarity\nexp.base_seed = 5\n\
             corpus.confusion_pairs = 0-1, 4-5\nexp.grading_cap = 50\nbudget.total = none\n",
        ))
        .unwrap();
        assert_eq!(c.n_runs, 3);
        assert_eq!(c.protocol, Protocol::Add(100));
        assert_eq!(c.ensemble.members, 3);
        assert_eq!(c.strategies, vec![Strategy::Similarity, Strategy::Random]);
        assert_eq!(c.generator.seed, 5);
        assert_eq!(c.generator.confusion_pairs, vec![(0, 1), (4, 5)]);
        assert_eq!(c.grading_cap, Some(50));
        let member = &c.ensemble.member_configs(1)[1];
        assert_eq!(member.dropout, 0.25);
        assert_eq!(member.hidden_dim, 24);
    }

    #[test]
    fn effective_config_replays() {
        let c = ExperimentConfig::from_pairs(&pairs(
            "exp.n_runs = 4\nensemble.M = 2\nensemble.member.0.summarization = mean_pool\ncorpus.seed = 9\n\
             ensemble.learning_rate = 0.0031\ncorpus.path = data/c.jsonl\n",
        ))
        .unwrap();
        let text = c.to_text();
        let again = ExperimentConfig::from_pairs(&parse_config_text(&text).unwrap()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_text(), text);
    }

    #[test]
    fn rejections() {
        for text in [
            "exp.nruns = 3",
            "exp.n_runs = three",
            "exp.swap_count = 5\nexp.add_count = 5",
            "exp.strategies = similarity,magic",
            "ensemble.member.9.dropout = 0.1",
            "ensemble.member.0.colour = red",
            "exp.swap_count = 8700",
            "exp.n_runs = 0",
            "corpus.confusion_pairs = 0-0",
        ] {
            assert!(ExperimentConfig::from_pairs(&pairs(text)).is_err(), "{text}");
        }
        assert!(parse_config_text("a = 1\na = 2").is_err());
        assert!(parse_config_text("no equals sign").is_err());
    }
}
