//! Command-line front end: `simsel <verb> [--option value]...`.
//!
//! Options are either verb flags (`--out`, `--corpus`, ...) or configuration
//! keys (`--exp.n_runs 3`). Configuration keys merge over `--config <file>`,
//! with the command line winning. `--seed` sets `exp.base_seed`, from which the
//! corpus seed is derived unless `corpus.seed` is given.

use crate::corpus::{generate_synthetic_corpus, load_corpus, save_corpus, Corpus, Split};
use crate::harness::{
    analyze_corrections, emit_report, is_config_key, load_config_file, prepare, random_selection_seed, read_report,
    run_experiment, run_seed, train_on, ExperimentConfig, ReportFormat,
};
use crate::neural::{evaluate, load_ensemble, save_ensemble};
use crate::selection::{
    annotate_with_oracle, discover_errors, embed_pool, neighbor_report, select_entropy, select_random,
    select_similarity, SelectionBudget, Strategy,
};
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const USAGE: &str = "\
usage: simsel <verb> [options]

verbs:
  gen-corpus --out <corpus.jsonl>
  train      --corpus <corpus.jsonl> --out <ensemble.json>
  select     --corpus <corpus.jsonl> --model <ensemble.json> --strategy <similarity|entropy|random>
             --out <candidates.jsonl> [--count <n>] [--annotations-out <file>] [--neighbor-report <file>]
  simulate   --out <report.json|report.csv> [--format json|csv]
  analyze    --out <analysis.json>
  report     --in <report.json> --out <file> [--format json|csv]

every verb accepts:
  --seed <n>                  base seed (exp.base_seed)
  --config <file>             key = value configuration file
  --<key> <value>             configuration override, e.g. --exp.n_runs 3
  --print-effective-config    print the resolved configuration to stdout
";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    GenCorpus,
    Train,
    Select,
    Simulate,
    Analyze,
    Report,
}

impl Verb {
    pub fn parse(s: &str) -> Option<Verb> {
        Some(match s {
            "gen-corpus" => Verb::GenCorpus,
            "train" => Verb::Train,
            "select" => Verb::Select,
            "simulate" => Verb::Simulate,
            "analyze" => Verb::Analyze,
            "report" => Verb::Report,
            _ => return None,
        })
    }

    /// Verb-specific flags, required ones first in the order they are checked.
    fn flags(self) -> (&'static [&'static str], &'static [&'static str]) {
        match self {
            Verb::GenCorpus => (&["out"], &[]),
            Verb::Train => (&["corpus", "out"], &[]),
            Verb::Select => (&["corpus", "model", "strategy", "out"], &["count", "annotations-out", "neighbor-report"]),
            Verb::Simulate => (&["out"], &["format"]),
            Verb::Analyze => (&["out"], &[]),
            Verb::Report => (&["in", "out"], &["format"]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Command {
    pub verb: Verb,
    /// Verb flags by name, without the leading dashes.
    pub options: BTreeMap<String, String>,
    /// Configuration keys given on the command line (`--seed` included as `exp.base_seed`).
    pub overrides: BTreeMap<String, String>,
    pub config_path: Option<PathBuf>,
    pub print_effective_config: bool,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation; exit status 2.
    Usage(String),
    /// The command ran and failed; exit status 1.
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Domain(m) => f.write_str(m),
        }
    }
}

fn domain(e: impl fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

pub fn parse_args<S: AsRef<str>>(argv: &[S]) -> Result<Command, CliError> {
    let mut args = argv.iter().map(AsRef::as_ref);
    let verb_name = args.next().ok_or_else(|| CliError::Usage("missing verb".into()))?;
    let verb = Verb::parse(verb_name).ok_or_else(|| CliError::Usage(format!("unknown verb {verb_name}")))?;
    let (required, optional) = verb.flags();
    let mut command = Command {
        verb,
        options: BTreeMap::new(),
        overrides: BTreeMap::new(),
        config_path: None,
        print_effective_config: false,
    };
    while let Some(arg) = args.next() {
        let name = arg.strip_prefix("--").ok_or_else(|| CliError::Usage(format!("unexpected argument {arg}")))?;
        let (name, inline) = match name.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (name, None),
        };
        if name == "print-effective-config" {
            if inline.is_some() {
                return Err(CliError::Usage("--print-effective-config takes no value".into()));
            }
            command.print_effective_config = true;
            continue;
        }
        let known = name == "seed" || name == "config" || required.contains(&name) || optional.contains(&name);
        if !known && !is_config_key(name) {
            return Err(CliError::Usage(format!("unknown option --{name}")));
        }
        let value = match inline {
            Some(v) => v,
            None => {
                args.next().map(str::to_string).ok_or_else(|| CliError::Usage(format!("--{name} needs a value")))?
            }
        };
        match name {
            "seed" => {
                command.overrides.insert("exp.base_seed".into(), value);
            }
            "config" => command.config_path = Some(PathBuf::from(value)),
            _ if known => {
                command.options.insert(name.to_string(), value);
            }
            _ => {
                command.overrides.insert(name.to_string(), value);
            }
        }
    }
    if let Some(missing) = required.iter().find(|r| !command.options.contains_key(**r)) {
        return Err(CliError::Usage(format!("{verb_name} requires --{missing}")));
    }
    Ok(command)
}

impl Command {
    /// File configuration overlaid with the command-line keys.
    pub fn effective_config(&self) -> Result<ExperimentConfig, CliError> {
        let mut pairs = match &self.config_path {
            Some(path) => load_config_file(path).map_err(domain)?,
            None => BTreeMap::new(),
        };
        pairs.extend(self.overrides.clone());
        ExperimentConfig::from_pairs(&pairs).map_err(|e| CliError::Usage(e.to_string()))
    }

    fn option(&self, name: &str) -> Option<&str> {
        self.options.get(name).map(String::as_str)
    }

    fn path(&self, name: &str) -> PathBuf {
        PathBuf::from(&self.options[name])
    }
}

fn format_option(command: &Command, out: &Path) -> Result<ReportFormat, CliError> {
    match command.option("format") {
        Some(f) => ReportFormat::parse(f).ok_or_else(|| CliError::Usage(format!("unknown format {f}"))),
        None => Ok(ReportFormat::from_path(out)),
    }
}

/// Refuses an output path that would overwrite one of the inputs.
fn check_outputs(command: &Command, inputs: &[&str], outputs: &[&str]) -> Result<(), CliError> {
    let same = |a: &Path, b: &Path| a == b || matches!((a.canonicalize(), b.canonicalize()), (Ok(x), Ok(y)) if x == y);
    let mut ins: Vec<PathBuf> = inputs.iter().filter_map(|i| command.option(i)).map(PathBuf::from).collect();
    ins.extend(command.config_path.clone());
    for o in outputs.iter().filter_map(|o| command.option(o)) {
        if ins.iter().any(|i| same(i, Path::new(o))) {
            return Err(CliError::Usage(format!("output {o} would overwrite an input file")));
        }
    }
    Ok(())
}

fn load_input_corpus(command: &Command) -> Result<Corpus, CliError> {
    load_corpus(command.path("corpus")).map_err(domain)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, CliError> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))
}

pub fn dispatch(command: &Command) -> Result<(), CliError> {
    let mut config = command.effective_config()?;
    if command.verb == Verb::Analyze {
        config.strategies = vec![Strategy::Similarity];
    }
    check_outputs(command, &["corpus", "model", "in"], &["out", "annotations-out", "neighbor-report"])?;
    if command.print_effective_config {
        let mut stdout = std::io::stdout().lock();
        stdout.write_all(config.to_text().as_bytes()).map_err(domain)?;
        stdout.flush().map_err(domain)?;
    }
    match command.verb {
        Verb::GenCorpus => {
            let corpus = generate_synthetic_corpus(&config.generator).map_err(domain)?;
            save_corpus(&corpus, command.path("out")).map_err(domain)?;
            eprintln!("wrote {} utterances", corpus.utterances.len());
        }
        Verb::Train => {
            let corpus = load_input_corpus(command)?;
            let training: Vec<_> = corpus.split(Split::BaselineTrain).collect();
            let ensemble = train_on(&config, &corpus, &training, run_seed(&config, 0)).map_err(domain)?;
            save_ensemble(&ensemble, config.min_count, command.path("out")).map_err(domain)?;
            if corpus.split_len(Split::Dev) > 0 {
                let dev = evaluate(&ensemble, &corpus, corpus.split(Split::Dev)).map_err(domain)?;
                eprintln!("dev error rate {:.4}", dev.error_rate);
            }
        }
        Verb::Select => select(command, &config)?,
        Verb::Simulate => {
            let out = command.path("out");
            let format = format_option(command, &out)?;
            let outcome = run_experiment(&config).map_err(domain)?;
            emit_report(&outcome.report, &out, format).map_err(domain)?;
            for c in &outcome.report.conditions {
                eprintln!("{:<10} mean error {:.4} (sd {:.4})", c.condition, c.mean_error_rate, c.std_error_rate);
            }
        }
        Verb::Analyze => {
            let prepared = prepare(&config).map_err(domain)?;
            let selection = &prepared.selections[0];
            let training = prepared.condition_training(&config, 0, selection);
            let after = train_on(&config, &prepared.corpus, &training, run_seed(&config, 0)).map_err(domain)?;
            let analysis = analyze_corrections(
                &prepared.baseline,
                &after,
                &prepared.corpus,
                &prepared.errors,
                &selection.candidates,
                &selection.annotation,
            )
            .map_err(domain)?;
            let mut out = create(&command.path("out"))?;
            serde_json::to_writer_pretty(&mut out, &analysis).map_err(domain)?;
            out.write_all(b"\n").and_then(|_| out.flush()).map_err(domain)?;
        }
        Verb::Report => {
            let out = command.path("out");
            let format = format_option(command, &out)?;
            let report = read_report(command.path("in")).map_err(domain)?;
            emit_report(&report, &out, format).map_err(domain)?;
        }
    }
    Ok(())
}

fn select(command: &Command, config: &ExperimentConfig) -> Result<(), CliError> {
    let strategy_name = command.option("strategy").unwrap_or_default();
    let strategy =
        Strategy::parse(strategy_name).ok_or_else(|| CliError::Usage(format!("unknown strategy {strategy_name}")))?;
    let count = match command.option("count") {
        Some(c) => c.parse().map_err(|_| CliError::Usage(format!("--count {c} is not a non-negative integer")))?,
        None => config.protocol.count(),
    };
    let corpus = load_input_corpus(command)?;
    let ensemble = load_ensemble(command.path("model"), &corpus).map_err(domain)?;
    let pool: Vec<_> = corpus.split(Split::Pool).collect();
    let mut errors = Vec::new();
    let candidates = match strategy {
        Strategy::Similarity => {
            errors = discover_errors(&ensemble, &corpus, corpus.split(Split::Dev)).map_err(domain)?;
            let store = embed_pool(&ensemble, &corpus, pool.iter().copied()).map_err(domain)?;
            let budget = SelectionBudget::new(config.k, count).map_err(|e| CliError::Usage(e.to_string()))?;
            select_similarity(&errors, &ensemble, &corpus, &store, &budget, &HashSet::new()).map_err(domain)?
        }
        Strategy::Entropy => select_entropy(&ensemble, &corpus, pool.iter().copied(), count).map_err(domain)?,
        Strategy::Random => {
            let ids: Vec<_> = pool.iter().map(|u| u.id).collect();
            select_random(&ids, count, random_selection_seed(config)).map_err(domain)?
        }
    };
    candidates.write_jsonl(create(&command.path("out"))?).map_err(domain)?;
    if let Some(path) = command.option("annotations-out") {
        let annotation = annotate_with_oracle(&candidates, &corpus, config.grading_cap).map_err(domain)?;
        annotation.write_jsonl(&corpus, create(Path::new(path))?).map_err(domain)?;
        eprintln!(
            "graded {} labeled {} out-of-domain {}",
            annotation.graded_count,
            annotation.labeled.len(),
            annotation.ood_discarded_count
        );
    }
    if let Some(path) = command.option("neighbor-report") {
        let report = neighbor_report(&errors, &candidates, &corpus).map_err(domain)?;
        write_text(Path::new(path), &report.to_string())?;
    }
    eprintln!("selected {} candidates", candidates.len());
    Ok(())
}

/// Parses, dispatches and maps the outcome to a process exit status,
/// reporting failures on stderr.
pub fn run<S: AsRef<str>>(argv: &[S]) -> i32 {
    let result = parse_args(argv).and_then(|command| dispatch(&command));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("simsel: {e}");
            if let CliError::Usage(_) = e {
                eprint!("{USAGE}");
            }
            e.exit_code()
        }
    }
}
