//! Acceptance suite. Runs as a plain binary so each criterion prints one
//! PASS/FAIL line. Pass criterion numbers as arguments to run a subset:
//! `cargo test --release --test acceptance -- 1 2 8`.

mod common;

use common::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simsel::corpus::{build_vocabulary, Split, UtteranceId};
use simsel::harness::{
    analyze_corrections, count_bucket, parse_config_text, run_experiment_add, run_experiment_swap, CorrectionAnalysis,
    CorrectionRow, ExperimentConfig, ExperimentOutcome, COUNT_BUCKET_EDGES,
};
use simsel::neural::{geometric_mean, gradient_check, gradient_check_with, Distribution, EnsembleSpec};
use simsel::selection::{knn_query, EmbeddingStore, Layer, Matrix, Strategy};
use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

/// Desk-scale ensemble used for the experiment criteria on a single core:
/// three members instead of seven, fewer epochs.
const ACCEPTANCE_ENSEMBLE: &str = "\
ensemble.M = 3
ensemble.hidden_dims = 24, 36, 48
ensemble.epochs = 3
";

type Outcome = Result<String, String>;

fn experiment_config(extra: &str) -> ExperimentConfig {
    let mut pairs = parse_config_text(ACCEPTANCE_ENSEMBLE).unwrap();
    pairs.extend(parse_config_text(extra).unwrap());
    ExperimentConfig::from_pairs(&pairs).unwrap()
}

fn ensure(condition: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if condition {
        Ok(())
    } else {
        Err(message())
    }
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let draws = 12;
    for draw in 0..draws {
        let vocab = rng.gen_range(5..20);
        let labels = rng.gen_range(2..6);
        let model = random_model(&mut rng, vocab, labels);
        let tokens: Vec<usize> = (0..rng.gen_range(1..8)).map(|_| rng.gen_range(0..vocab)).collect();
        let gold = rng.gen_range(0..labels);
        let report = gradient_check(&model, &tokens, gold, 1e-5, draw).map_err(|e| e.to_string())?;
        ensure(report.max_relative_deviation < 1e-4, || format!("draw {draw}: {report:?}"))?;
        worst = worst.max(report.max_relative_deviation);
    }
    let mut least_detected = f64::INFINITY;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let model = random_model(&mut rng, 10, 3);
        let tokens: Vec<usize> = (0..4).map(|_| rng.gen_range(0..10)).collect();
        let flipped = rng.gen_range(0..model.params.layout.tensors.len());
        let report = gradient_check_with(&model, &tokens, 1, 1e-5, seed, |m, t, g| {
            let trace = m.trace(t, None)?;
            let mut grad = vec![0.0; m.params.values.len()];
            m.backward(&trace, g, &mut grad);
            for v in &mut grad[m.params.layout.tensors[flipped].range()] {
                *v = -*v;
            }
            Ok(grad)
        })
        .map_err(|e| e.to_string())?;
        let name = &model.params.layout.tensors[flipped].name;
        ensure(report.max_relative_deviation > 0.1, || format!("sign flip in {name} missed: {report:?}"))?;
        least_detected = least_detected.min(report.max_relative_deviation);
    }
    Ok(format!("{draws} draws, worst deviation {worst:.2e}; 10 sign flips, smallest deviation {least_detected:.2}"))
}

fn ensemble_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let corpus = random_corpus(&mut rng, 12, 4, 5, 40);
    let vocabulary = build_vocabulary(&corpus, 1).unwrap();
    let ensemble = random_ensemble(&mut rng, 5, vocabulary, corpus.labels.clone());
    let mut shuffled = ensemble.clone();
    for trial in 0..20 {
        shuffled.members.shuffle(&mut rng);
        for u in corpus.split(Split::Pool) {
            let tokens = ensemble.encode(&corpus, u);
            let a = ensemble.predict(&tokens).unwrap();
            let b = shuffled.predict(&tokens).unwrap();
            ensure(a == b, || format!("trial {trial}, utterance {}: {a:?} vs {b:?}", u.id))?;
        }
    }
    for trial in 0..200 {
        let labels = rng.gen_range(2..8);
        let dists: Vec<Distribution> = (0..rng.gen_range(1..6))
            .map(|_| {
                let raw: Vec<f64> = (0..labels).map(|_| rng.gen_range(1e-6..1.0)).collect();
                let total: f64 = raw.iter().sum();
                Distribution { probs: raw.into_iter().map(|x| x / total).collect() }
            })
            .collect();
        let pairs: Vec<(usize, &Distribution)> = dists.iter().enumerate().collect();
        let mut reordered = pairs.clone();
        reordered.shuffle(&mut rng);
        let once = geometric_mean(&pairs);
        ensure(once == geometric_mean(&reordered), || format!("trial {trial}: order changed the result"))?;
        let copies = rng.gen_range(2..5);
        let n = dists.len();
        let replicated: Vec<(usize, &Distribution)> =
            (0..copies).flat_map(|c| dists.iter().enumerate().map(move |(i, d)| (c * n + i, d))).collect();
        let many = geometric_mean(&replicated);
        let gap = once.probs.iter().zip(&many.probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure(gap < 1e-12, || format!("trial {trial}: replication moved the result by {gap:e}"))?;
    }
    let a = Distribution { probs: vec![0.9, 0.1] };
    let b = Distribution { probs: vec![0.5, 0.5] };
    let combined = geometric_mean(&[(0, &a), (1, &b)]);
    // sqrt(0.45) : sqrt(0.05) = 3 : 1
    ensure((combined.probs[0] - 0.75).abs() < 1e-12 && (combined.probs[1] - 0.25).abs() < 1e-12, || {
        format!("two-member case gave {:?}", combined.probs)
    })?;
    Ok(format!("order, replication and two-member case hold; (0.9,0.1)+(0.5,0.5) -> {:?}", combined.probs))
}

/// Tap widths of every member of the default and the acceptance ensembles.
fn real_tap_widths() -> Vec<usize> {
    let specs = [EnsembleSpec::default(), experiment_config("").ensemble];
    let mut widths: Vec<usize> = specs
        .iter()
        .flat_map(|s| s.member_configs(0))
        .flat_map(|c| [2 * c.hidden_dim, *c.ff_dims.last().unwrap()])
        .collect();
    widths.sort_unstable();
    widths.dedup();
    widths
}

fn knn_exactness() -> Outcome {
    let widths = real_tap_widths();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut ties = 0;
    for instance in 0..100 {
        let rows = rng.gen_range(1..=500);
        let dim = widths[instance % widths.len()];
        let k = rng.gen_range(1..=30);
        let coarse = instance % 3 == 0;
        let value =
            |rng: &mut ChaCha8Rng| if coarse { rng.gen_range(-1i32..=1) as f64 } else { rng.gen_range(-2.0..2.0) };
        let mut data: Vec<f64> = (0..rows * dim).map(|_| value(&mut rng)).collect();
        if rows > 3 {
            let copy = data[..dim].to_vec();
            data[dim * (rows - 1)..].copy_from_slice(&copy);
        }
        let mut ids: Vec<UtteranceId> = (0..rows as u64).map(|i| 10 + 3 * i).collect();
        ids.shuffle(&mut rng);
        let matrices = [((1, Layer::Ff), Matrix { rows, dim, data })].into_iter().collect();
        let store = EmbeddingStore { ids, matrices };
        // Every third query sits on a stored row duplicated elsewhere.
        let query: Vec<f64> = if rows > 3 && instance % 3 == 1 {
            store.matrix(1, Layer::Ff).unwrap().row(0).to_vec()
        } else {
            (0..dim).map(|_| value(&mut rng)).collect()
        };
        let got = knn_query(&store, &query, 1, Layer::Ff, k).map_err(|e| e.to_string())?;
        let want = knn_oracle(&store, &query, 1, Layer::Ff, k);
        ensure(got.len() == want.len(), || format!("instance {instance}: {} vs {} neighbors", got.len(), want.len()))?;
        for (rank, (g, w)) in got.iter().zip(&want).enumerate() {
            ensure(g.utterance_id == w.0 && (g.distance - w.1).abs() <= 1e-12 * w.1.max(1.0), || {
                format!("instance {instance} rank {rank}: got ({}, {}) want {w:?}", g.utterance_id, g.distance)
            })?;
        }
        ties += want.windows(2).filter(|p| p[0].1 == p[1].1).count();
    }
    Ok(format!("100 instances, dims {widths:?}, {ties} tied neighbor pairs"))
}

fn budgets() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let seeds = 60;
    for _ in 0..seeds {
        let (seed, k, total, members) = (rng.gen(), rng.gen_range(1..6), rng.gen_range(1..80), rng.gen_range(1..5));
        check_similarity_budgets(seed, k, total, members)?;
    }
    let k = 4;
    let disjoint = planted_case(1, &[0], k, false);
    ensure(disjoint.len() == 3 * k, || format!("disjoint layers gave {} candidates, want {}", disjoint.len(), 3 * k))?;
    let five = planted_case(7, &[0, 1, 3, 4, 6], k, false);
    ensure(five.len() == 5 * 3 * k, || format!("five erring members gave {}, want {}", five.len(), 5 * 3 * k))?;
    let shared = planted_case(1, &[0], k, true);
    ensure(shared.len() == k, || format!("shared neighbors gave {}, want {k}", shared.len()))?;
    Ok(format!(
        "{seeds} fuzzed runs clean; planted fixtures give {}, {} and {}",
        disjoint.len(),
        five.len(),
        shared.len()
    ))
}

fn p_line(outcome: &ExperimentOutcome, condition: &str, reference: &str) -> Result<(String, bool), String> {
    let row = outcome
        .report
        .comparison(condition, reference)
        .ok_or_else(|| format!("no {condition} vs {reference} comparison"))?;
    let rer = row.relative_error_reduction.map_or("n/a".into(), |r| format!("{:.2}%", 100.0 * r));
    let line = format!(
        "{condition} {:.4} vs {reference} {:.4}: RER {rer}, Welch p = {:.3e}, permutation p = {:.3e}{}",
        row.mean_condition,
        row.mean_reference,
        row.welch_p,
        row.permutation_p,
        if row.tests_agree { "" } else { " (tests disagree)" }
    );
    Ok((line, row.mean_condition < row.mean_reference && row.welch_p < 0.05))
}

fn swap_replication(outcome: &Result<ExperimentOutcome, String>) -> Outcome {
    let outcome = outcome.as_ref().map_err(Clone::clone)?;
    let (vs_random, beats_random) = p_line(outcome, "similarity", "random")?;
    let (vs_baseline, beats_baseline) = p_line(outcome, "similarity", "baseline")?;
    let detail = format!("{vs_random}; {vs_baseline}");
    ensure(beats_random && beats_baseline, || detail.clone())?;
    Ok(detail)
}

fn annotation_cost() -> Outcome {
    let mut lines = Vec::new();
    let mut consistent = 0;
    for seed in 0..5 {
        let config = experiment_config(&format!(
            "exp.add_count = 100\nexp.n_runs = 1\nexp.strategies = entropy, similarity\nexp.base_seed = {seed}\n"
        ));
        let outcome = run_experiment_add(&config).map_err(|e| e.to_string())?;
        let mut rates = BTreeMap::new();
        for a in &outcome.report.annotation {
            ensure(a.labeled_count + a.ood_discarded_count == a.graded_count, || format!("seed {seed}: {a:?}"))?;
            let want = if a.graded_count == 0 { 0.0 } else { a.ood_discarded_count as f64 / a.graded_count as f64 };
            ensure(a.ood_rate == want, || format!("seed {seed}: rate {} is not {want}", a.ood_rate))?;
            let selection = outcome.prepared.selections.iter().find(|s| s.strategy.as_str() == a.strategy).unwrap();
            let ood = selection
                .candidates
                .ids()
                .take(a.graded_count)
                .filter(|id| outcome.prepared.corpus.utterances.iter().any(|u| u.id == *id && u.gold.is_ood()));
            ensure(ood.count() == a.ood_discarded_count, || {
                format!("seed {seed}: OOD recount differs for {}", a.strategy)
            })?;
            rates.insert(a.strategy.clone(), (a.ood_discarded_count, a.graded_count, a.ood_rate));
        }
        let (e, s) = (rates["entropy"], rates["similarity"]);
        consistent += (e.2 > s.2) as usize;
        lines.push(format!(
            "seed {seed}: entropy {}/{} = {:.3}, similarity {}/{} = {:.3}",
            e.0, e.1, e.2, s.0, s.1, s.2
        ));
    }
    let detail = lines.join("; ");
    ensure(consistent == 5, || format!("{consistent}/5 seeds consistent; {detail}"))?;
    Ok(detail)
}

fn correction_analysis(outcome: &Result<ExperimentOutcome, String>) -> Outcome {
    ensure(count_bucket(80) == Some(3) && count_bucket(81) == Some(4) && count_bucket(0).is_none(), || {
        "count bucket edges moved".into()
    })?;
    ensure(COUNT_BUCKET_EDGES[4] == 81, || "last bucket does not start at 81".into())?;
    let outcome = outcome.as_ref().map_err(Clone::clone)?;
    let prepared = &outcome.prepared;
    let (index, selection) = prepared
        .selections
        .iter()
        .enumerate()
        .find(|(_, s)| s.strategy == Strategy::Similarity)
        .ok_or("no similarity condition")?;
    let analysis = analyze_corrections(
        &prepared.baseline,
        &outcome.run0_ensembles[index],
        &prepared.corpus,
        &prepared.errors,
        &selection.candidates,
        &selection.annotation,
    )
    .map_err(|e| e.to_string())?;
    ensure(analysis.by_candidate_count.last().map(|b| b.label.as_str()) == Some("81+"), || {
        format!("last bucket label {:?}", analysis.by_candidate_count.last())
    })?;
    let with_candidates = analysis.rows.iter().filter(|r| r.candidate_count > 0).count();
    let in_count_buckets: usize = analysis.by_candidate_count.iter().map(|b| b.errors).sum();
    let in_agreement_buckets: usize = analysis.by_agreement.iter().map(|b| b.errors).sum();
    ensure(in_count_buckets == with_candidates && in_agreement_buckets == with_candidates, || {
        format!("{with_candidates} errors with candidates, buckets hold {in_count_buckets} and {in_agreement_buckets}")
    })?;
    for r in &analysis.rows {
        let want = (r.candidate_count > 0).then(|| r.agreeing_count as f64 / r.candidate_count as f64);
        ensure(r.agreement == want, || format!("error {}: agreement {:?} vs {want:?}", r.error_id, r.agreement))?;
    }
    let json = serde_json::to_string(&analysis.rows).map_err(|e| e.to_string())?;
    let rows: Vec<CorrectionRow> = serde_json::from_str(&json).map_err(|e| e.to_string())?;
    ensure(CorrectionAnalysis::from_rows(rows) == analysis, || "buckets do not recompute from emitted rows".into())?;

    let rate = |buckets: &[simsel::harness::CorrectionBucket]| {
        buckets
            .iter()
            .map(|b| format!("{} {}", b.label, b.correction_rate.map_or("-".into(), |r| format!("{r:.2}"))))
            .collect::<Vec<_>>()
            .join(", ")
    };
    Ok(format!(
        "{} errors, {with_candidates} with candidates; by count: {}; by agreement: {}",
        analysis.rows.len(),
        rate(&analysis.by_candidate_count),
        rate(&analysis.by_agreement)
    ))
}

fn reproducible_reports() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = dir.path().join("exp.cfg");
    std::fs::write(&cfg, SMALL_EXPERIMENT).map_err(|e| e.to_string())?;
    let mut sizes = Vec::new();
    for ext in ["json", "csv"] {
        let mut files = Vec::new();
        for attempt in 0..2 {
            let out = dir.path().join(format!("report{attempt}.{ext}"));
            let status = Command::new(env!("CARGO_BIN_EXE_simsel"))
                .args(["simulate", "--config", cfg.to_str().unwrap(), "--seed", "17", "--out", out.to_str().unwrap()])
                .output()
                .map_err(|e| e.to_string())?;
            ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
            files.push(std::fs::read(&out).map_err(|e| e.to_string())?);
        }
        ensure(files[0] == files[1], || format!("{ext} reports differ"))?;
        sizes.push(format!("{ext} {} bytes", files[0].len()));
    }
    Ok(format!("repeated simulate runs identical ({})", sizes.join(", ")))
}

fn report(number: usize, name: &str, start: Instant, outcome: Outcome) -> bool {
    let elapsed = start.elapsed();
    let (tag, detail, passed) = match outcome {
        Ok(detail) => ("PASS", detail, true),
        Err(detail) => ("FAIL", detail, false),
    };
    println!("criterion {number}: {tag} {name} [{}] {detail}", format_duration(elapsed));
    passed
}

fn format_duration(d: Duration) -> String {
    if d.as_secs() >= 60 {
        format!("{}m{:02}s", d.as_secs() / 60, d.as_secs() % 60)
    } else {
        format!("{:.2}s", d.as_secs_f64())
    }
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut failed = Vec::new();
    let mut check = |number: usize, name: &str, run: &dyn Fn() -> Outcome| {
        if wanted(number) {
            let start = Instant::now();
            if !report(number, name, start, run()) {
                failed.push(number);
            }
        }
    };
    check(1, "gradient correctness", &gradients);
    check(2, "ensemble algebra", &ensemble_algebra);
    check(3, "kNN exactness", &knn_exactness);
    check(4, "budget invariants", &budgets);
    // The swap experiment feeds both the replication and the correction analysis.
    let swap = (wanted(5) || wanted(7)).then(|| {
        let start = Instant::now();
        let config = experiment_config("exp.swap_count = 200\nexp.n_runs = 11\nexp.strategies = similarity, random\n");
        let outcome = run_experiment_swap(&config).map_err(|e| e.to_string());
        println!("swap experiment: {}", format_duration(start.elapsed()));
        outcome
    });
    let swap = swap.unwrap_or_else(|| Err("not run".into()));
    check(5, "swap replication", &|| swap_replication(&swap));
    check(6, "annotation cost", &annotation_cost);
    check(7, "correction analysis", &|| correction_analysis(&swap));
    check(8, "reproducible reports", &reproducible_reports);

    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
