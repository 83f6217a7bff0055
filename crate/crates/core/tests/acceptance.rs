//! End-to-end acceptance checks. Each test covers one release gate and
//! prints a PASS line when it holds; run with `--nocapture` to see them.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use refinelab_core::assignment::{
    self, AssignmentInstance, Choice, Op, SampleChoices, OPS,
};
use refinelab_core::data::{save_dataset, Axis, Band, Distribution};
use refinelab_core::difficulty::{elo_update, EloConfig, EloState};
use refinelab_core::metrics;
use refinelab_core::pipeline::{
    self, validate_dataset, BudgetConfig, ProviderConfig, RunConfig, Strategy,
    TargetsConfig, ValidationConfig, ValidationMode,
};
use refinelab_core::provider::http::network_requests;
use refinelab_core::provider::mock::MockProvider;
use refinelab_core::provider::Provider;
use refinelab_core::synth::{synth_dataset, synth_taxonomy, SynthSpec};
use refinelab_core::validator::{apply_corrections, FixtureRetriever, Sandbox};

fn random_instance(rng: &mut ChaCha8Rng) -> AssignmentInstance {
    let n_samples = rng.gen_range(2..=6);
    let mut samples = Vec::new();
    let mut total_cost = 0.0;
    for i in 0..n_samples {
        let n_choices = rng.gen_range(1..=4);
        let choices: Vec<Choice> = (0..n_choices)
            .map(|k| {
                let cost = rng.gen_range(1..=50) as f64;
                total_cost += cost;
                Choice {
                    op: OPS[k % OPS.len()],
                    target: format!("t{k}"),
                    delta: (rng.gen_range(-20..=100) as f64) / 100.0,
                    cost,
                }
            })
            .collect();
        samples.push(SampleChoices {
            sample_id: format!("s{i}"),
            choices,
        });
    }
    AssignmentInstance {
        samples,
        budget: (total_cost * rng.gen_range(0.0..=1.0)).floor(),
    }
}

/// Brute-force optimum: every sample independently picks one choice or
/// none, subject to the shared budget.
fn enumerate_optimum(instance: &AssignmentInstance) -> f64 {
    fn go(samples: &[SampleChoices], budget: f64, acc: f64, best: &mut f64) {
        let Some((first, rest)) = samples.split_first() else {
            *best = best.max(acc);
            return;
        };
        go(rest, budget, acc, best);
        for c in &first.choices {
            if c.cost <= budget + 1e-9 {
                go(rest, budget - c.cost, acc + c.delta, best);
            }
        }
    }
    let mut best = 0.0;
    go(&instance.samples, instance.budget, 0.0, &mut best);
    best
}

#[test]
fn exact_solver_matches_enumeration_and_rounding_stays_in_band() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    for trial in 0..1000 {
        let instance = random_instance(&mut rng);
        let var_count: usize = instance.samples.iter().map(|s| s.choices.len()).sum();
        assert!(var_count <= 24);
        let oracle = enumerate_optimum(&instance);
        let exact = assignment::solve_exact(&instance).unwrap();
        assert!(
            (exact.objective - oracle).abs() < 1e-9,
            "trial {trial}: exact {} vs enumeration {oracle}",
            exact.objective
        );
        assert!(exact.spent <= instance.budget + 1e-9);

        let frac = assignment::solve_lp_greedy(&instance);
        assert!(frac.bound >= oracle - 1e-9, "LP bound below optimum");
        let rounded = assignment::round(&instance, &frac).unwrap();
        let dmax = pipeline::delta_max(&instance);
        assert!(
            rounded.objective >= oracle - dmax - 1e-9
                && rounded.objective <= oracle + 1e-9,
            "trial {trial}: rounded {} outside [{} - {dmax}, {}]",
            rounded.objective,
            oracle,
            oracle
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 30, "took {elapsed:?}");
    println!("PASS exact solver matches enumeration on 1000 instances; rounding within one-delta band ({elapsed:?})");
}

fn reference_entropy(weights: &[f64]) -> f64 {
    weights
        .iter()
        .filter(|w| **w > 0.0)
        .map(|w| -w * w.log2())
        .sum()
}

fn reference_kl(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, mi)| pi * (pi / mi).log2())
        .sum()
}

fn reference_jsd(p: &[f64], t: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(t).map(|(a, b)| 0.5 * (a + b)).collect();
    reference_entropy(&m) - 0.5 * (reference_entropy(p) + reference_entropy(t))
}

fn named(weights: &[f64]) -> Distribution {
    let map: BTreeMap<String, f64> = weights
        .iter()
        .enumerate()
        .map(|(i, w)| (format!("c{i}"), *w))
        .collect();
    Distribution::new(Axis::Topic, map).unwrap()
}

fn random_weights(rng: &mut ChaCha8Rng, k: usize, allow_zero: bool) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k)
        .map(|_| {
            if allow_zero && rng.gen_bool(0.25) {
                0.0
            } else {
                rng.gen_range(0.01..1.0)
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        w[0] = 1.0;
        return w;
    }
    for x in &mut w {
        *x /= total;
    }
    w
}

#[test]
fn divergence_metrics_match_independent_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(402);
    for _ in 0..10_000 {
        let k = rng.gen_range(2..=6);
        let p = random_weights(&mut rng, k, true);
        let t = random_weights(&mut rng, k, true);
        let dp = named(&p);
        let dt = named(&t);
        let got = metrics::jsd(&dp, &dt).unwrap();
        let want = reference_jsd(&p, &t);
        assert!((got - want).abs() < 1e-12, "jsd {got} vs {want}");
        assert!((0.0..=1.0 + 1e-12).contains(&got));

        // KL needs an absolutely continuous reference
        let m = random_weights(&mut rng, k, false);
        let got_kl = metrics::kl(&dp, &named(&m)).unwrap();
        let want_kl = reference_kl(&p, &m);
        assert!((got_kl - want_kl).abs() < 1e-12, "kl {got_kl} vs {want_kl}");
    }
    // frozen hand-computed values
    let v = metrics::jsd(&named(&[1.0, 0.0]), &named(&[0.5, 0.5])).unwrap();
    assert!((v - 0.31128).abs() < 0.5e-5);
    println!("PASS divergences match the reference implementation on 10000 inputs (1e-12)");
}

#[test]
fn elo_recurrence_matches_reference_and_bands_step() {
    let config = EloConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(403);
    for _ in 0..1000 {
        let mut state = EloState::new(rng.gen_range(600.0..1400.0));
        let mut reference = state.rating;
        for _ in 0..12 {
            let e_ex = rng.gen_range(600.0..1400.0);
            let r: f64 = rng.gen_range(0.0..=1.0);
            let p = 1.0 / (1.0 + 10f64.powf((e_ex - reference) / config.eta));
            reference += config.k * (r - p);
            state = elo_update(&state, e_ex, r, &config).unwrap();
            assert!(
                (state.rating - reference).abs() < 1e-9,
                "rating {} vs reference {reference}",
                state.rating
            );
        }
    }
    // band thresholds are a step function of the rating
    assert_eq!(config.band_of(899.999), Band::Easy);
    assert_eq!(config.band_of(900.0), Band::Medium);
    assert_eq!(config.band_of(1100.0), Band::Medium);
    assert_eq!(config.band_of(1100.001), Band::Hard);
    println!("PASS Elo recurrence matches the reference to 1e-9; bands step at 900/1100");
}

fn skewed_run_config(dir: &Path, n: usize, seed: u64) -> RunConfig {
    let spec = SynthSpec {
        n,
        topics: vec![
            ("alg".into(), 0.8),
            ("geo".into(), 0.2),
            ("num".into(), 0.0),
        ],
        bands: vec![(Band::Easy, 0.4), (Band::Medium, 0.4), (Band::Hard, 0.2)],
        unlabeled: n / 10,
        planted_errors: 0,
        seed: 11,
    };
    let tax = synth_taxonomy(&["alg", "geo", "num"], Some("retrieval")).unwrap();
    let (ds, _) = synth_dataset(&spec, tax.clone()).unwrap();
    let data_path = dir.join("data.jsonl");
    save_dataset(&ds, &data_path).unwrap();
    RunConfig {
        dataset: data_path,
        domain: "math".into(),
        seed,
        strategy: Strategy::Refinelab,
        pilot_batch: 8,
        taxonomy: tax.topics.clone(),
        targets: TargetsConfig {
            topic: [
                ("alg".to_string(), 0.3),
                ("geo".to_string(), 0.3),
                ("num".to_string(), 0.4),
            ]
            .into_iter()
            .collect(),
            difficulty: None,
            min_dataset_size: None,
        },
        budget: BudgetConfig {
            tokens: None,
            fraction: Some(1.0),
        },
        provider: ProviderConfig::default(),
        elo: EloConfig::default(),
        validation: ValidationConfig {
            mode: ValidationMode::Off,
            passages: None,
        },
    }
}

#[test]
fn skewed_dataset_converges_to_targets_within_full_budget() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = skewed_run_config(dir.path(), 300, 7);
    let out = pipeline::run(&config, &dir.path().join("out")).unwrap();
    let r = &out.report;
    assert_eq!(r.failure, None);
    let before_cov = r.coverage_before.as_ref().unwrap().divergence;
    let before_diff = r.difficulty_before.as_ref().unwrap().divergence;
    let after_cov = r.coverage_after.as_ref().unwrap().divergence;
    let after_diff = r.difficulty_after.as_ref().unwrap().divergence;
    assert!(before_cov >= 0.25, "planted coverage skew only {before_cov}");
    assert!(before_diff >= 0.12, "planted difficulty skew only {before_diff}");
    assert!(after_cov <= 0.02, "coverage divergence {after_cov} > 0.02");
    assert!(after_diff <= 0.03, "difficulty divergence {after_diff} > 0.03");
    let exec = r.executed.as_ref().unwrap();
    assert!(exec.spent_tokens as f64 <= r.plan.as_ref().unwrap().budget + 1e-6);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!(
        "PASS 300-sample skew: coverage {before_cov:.4} -> {after_cov:.4}, \
         difficulty {before_diff:.4} -> {after_diff:.4} ({elapsed:?})"
    );
}

#[test]
fn default_solver_dominates_baselines_at_every_budget() {
    let dir = tempfile::tempdir().unwrap();
    let objective = |strategy: Strategy, fraction: f64, out: &str| -> f64 {
        let mut config = skewed_run_config(dir.path(), 300, 7);
        config.strategy = strategy;
        config.budget.fraction = Some(fraction);
        let run = pipeline::run(&config, &dir.path().join(out)).unwrap();
        assert_eq!(run.report.failure, None);
        run.report.plan.unwrap().objective
    };
    for fraction in [0.25, 0.5, 1.0] {
        let best = objective(Strategy::Refinelab, fraction, &format!("r{fraction}"));
        let greedy = objective(Strategy::Greedy, fraction, &format!("g{fraction}"));
        let uniform = objective(Strategy::Uniform, fraction, &format!("u{fraction}"));
        assert!(greedy >= 0.0);
        assert!(
            best >= greedy - 1e-9,
            "f={fraction}: refinelab {best} < greedy {greedy}"
        );
        assert!(
            best >= uniform - 1e-9,
            "f={fraction}: refinelab {best} < uniform {uniform}"
        );
        println!(
            "      f={fraction}: refinelab {best:.4}, greedy {greedy:.4}, uniform {uniform:.4}"
        );
    }
    println!("PASS default strategy dominates greedy and uniform at 0.25/0.5/1.0 of capacity");
}

#[test]
fn planted_errors_are_corrected_at_the_backend_reliability_rate() {
    let spec = SynthSpec {
        n: 20,
        topics: vec![("alg".into(), 1.0)],
        bands: vec![(Band::Easy, 0.5), (Band::Medium, 0.5)],
        unlabeled: 0,
        planted_errors: 20,
        seed: 11,
    };
    let tax = synth_taxonomy(&["alg"], Some("retrieval")).unwrap();
    let (dataset, fixtures) = synth_dataset(&spec, tax).unwrap();
    let retriever = FixtureRetriever::default();
    let sandbox = Sandbox::default();

    // a backend with a perfect answer key corrects every planted error
    let provider = Provider::new(Box::new(MockProvider::with_fixtures(0, fixtures.clone())));
    let (results, _) =
        validate_dataset(&dataset, &provider, &retriever, &sandbox, None).unwrap();
    let mut repaired = dataset.clone();
    let report = apply_corrections(&mut repaired, &results).unwrap();
    assert_eq!(report.corrected, 20);
    assert_eq!(report.correction_ratio, Some(1.0));

    // a backend that garbles 2 of the 20 corrections lands at exactly 0.90
    let mut degraded = fixtures;
    for q in degraded.answer_key.keys().take(2).cloned().collect::<Vec<_>>() {
        degraded.broken_answers.insert(q);
    }
    let provider = Provider::new(Box::new(MockProvider::with_fixtures(0, degraded)));
    let (results, _) =
        validate_dataset(&dataset, &provider, &retriever, &sandbox, None).unwrap();
    let mut repaired = dataset.clone();
    let report = apply_corrections(&mut repaired, &results).unwrap();
    assert_eq!(report.corrected, 18);
    assert_eq!(report.failed, 2);
    assert_eq!(report.correction_ratio, Some(0.90));
    println!("PASS planted errors: perfect backend ratio 1.00, degraded backend ratio 0.90");
}

#[test]
fn identical_seeds_reproduce_outputs_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let config = skewed_run_config(dir.path(), 120, 21);
    let a = pipeline::run(&config, &dir.path().join("a")).unwrap();
    let b = pipeline::run(&config, &dir.path().join("b")).unwrap();
    assert_eq!(a.report.failure, None);
    let bytes = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(
        bytes(a.dataset_path.as_ref().unwrap()),
        bytes(b.dataset_path.as_ref().unwrap()),
        "refined datasets differ"
    );
    assert_eq!(
        bytes(&a.report_path),
        bytes(&b.report_path),
        "reports differ"
    );
    println!("PASS identical seeds reproduce the dataset and the report byte for byte");
}

#[test]
fn offline_suite_makes_no_network_requests() {
    // every provider above is the offline mock; the real transport
    // increments this counter on each request
    assert_eq!(network_requests(), 0);
    println!("PASS offline suite issued 0 network requests");
}

#[test]
fn op_names_cover_the_five_refinement_moves() {
    let names: Vec<&str> = OPS.iter().map(|op| op.as_str()).collect();
    assert_eq!(names, ["r1", "r2", "r3", "r4", "r5"]);
    assert_eq!(Op::R1.as_str(), "r1");
}
