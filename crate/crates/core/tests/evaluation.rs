mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdtr::evaluation::{
    concordance_km, cross_validate_methods, run_benchmark, write_curve, BenchmarkOptions, Method,
    MethodSettings,
};
use sdtr::regime::{DecisionContext, FixedRegime, ObservedBehavior};
use sdtr::shared_o::{estimate_propensity, value_estimate_with_error, NuisanceSpec, PropensityVariant};
use sdtr::sim::{simulate_cohort, OptimalRegime, Scenario, SimConfig};
use sdtr::survival::{fit_kaplan_meier_censoring, CensoringModel};
use sdtr::trajectories::{Action, CohortDataset};

fn simulated(scenario: Scenario, horizon: usize, n: usize, seed: u64) -> CohortDataset {
    let config = SimConfig::new(scenario, horizon);
    simulate_cohort(&config, n, &mut ChaCha8Rng::seed_from_u64(seed))
        .unwrap()
        .dataset
}

#[test]
fn cross_validation_report_is_well_formed_and_reproducible() {
    let c = simulated(Scenario::One, 4, 600, 1);
    let run = |seed| {
        cross_validate_methods(
            &c,
            &Method::ALL,
            2,
            &NuisanceSpec::default(),
            &MethodSettings::default(),
            &mut ChaCha8Rng::seed_from_u64(seed),
        )
        .unwrap()
    };
    let report = run(5);
    assert_eq!(report, run(5));
    assert_eq!(report.repeats, 2);
    assert_eq!(report.methods.len(), 3);
    let best = report.methods.iter().map(|m| m.mean_value).fold(f64::NEG_INFINITY, f64::max);
    let chosen = report.methods.iter().find(|m| m.method == report.chosen).unwrap();
    assert_eq!(chosen.mean_value, best);
    for m in &report.methods {
        assert_eq!(m.values.len(), 2);
        assert!(m.mean_value.is_finite());
    }
    assert!(report.to_table().contains("CSQL"));
}

#[test]
fn identical_regimes_tie_in_declared_order() {
    // with one stage the shared and stagewise fits coincide
    let c = simulated(Scenario::One, 1, 400, 2);
    let names = ["a1c", "bp", "weight"];
    let spec = sdtr::trajectories::FeatureSpec::uniform(1, &names, &names, true).unwrap();
    let c = c.with_feature_spec(spec).unwrap();
    for order in [[Method::Csql, Method::Cq], [Method::Cq, Method::Csql]] {
        let r = cross_validate_methods(
            &c,
            &order,
            1,
            &NuisanceSpec::default(),
            &MethodSettings::default(),
            &mut ChaCha8Rng::seed_from_u64(3),
        )
        .unwrap();
        assert_eq!(r.methods[0].mean_value, r.methods[1].mean_value);
        assert_eq!(r.chosen, order[0]);
    }
}

#[test]
fn cross_validation_needs_two_methods() {
    let c = simulated(Scenario::One, 2, 100, 4);
    assert!(cross_validate_methods(
        &c,
        &[Method::Cq],
        1,
        &NuisanceSpec::default(),
        &MethodSettings::default(),
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .is_err());
}

#[test]
fn concordance_groups() {
    let c = simulated(Scenario::One, 10, 3000, 5);
    let all = concordance_km(&c, &ObservedBehavior).unwrap();
    assert_eq!(all.n_consistent, c.len());
    assert!(all.inconsistent.is_none());

    let flip = |ctx: &DecisionContext<'_>| {
        let a = ctx.observed.unwrap_or(Action::Plus);
        if ctx.stage == 1 {
            a.negate()
        } else {
            a
        }
    };
    let none = concordance_km(&c, &flip).unwrap();
    assert_eq!(none.n_inconsistent, c.len());
    assert!(none.consistent.is_none());

    let opt = concordance_km(&c, &OptimalRegime).unwrap();
    assert!(opt.n_consistent > 0 && opt.n_inconsistent > 0);
    let mut totals: Vec<f64> = c.trajectories.iter().map(|t| t.total_reward()).collect();
    totals.sort_by(f64::total_cmp);
    let median = totals[totals.len() / 2];
    let t = median.min(c.tau - 1e-9);
    let (a, b) = (opt.consistent.unwrap(), opt.inconsistent.unwrap());
    assert!(a.raw_at(t) >= b.raw_at(t), "{} < {}", a.raw_at(t), b.raw_at(t));

    let mut out = Vec::new();
    write_curve(&a, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("time,survival\n0,1\n"));
}

#[test]
fn value_estimates_on_disjoint_halves_agree() {
    let c = simulated(Scenario::Two, 10, 20_000, 6);
    let idx: Vec<usize> = (0..c.len()).collect();
    let (a, b) = idx.split_at(c.len() / 2);
    let est = |part: &[usize]| {
        let h = c.subset(part);
        let km = CensoringModel::KaplanMeier(fit_kaplan_meier_censoring(&h).unwrap());
        let prop = estimate_propensity(&h, PropensityVariant::StageProportion).unwrap();
        value_estimate_with_error(&h, &FixedRegime(Action::Minus), &prop, &km).unwrap()
    };
    let (va, vb) = (est(a), est(b));
    let se = (va.std_error.powi(2) + vb.std_error.powi(2)).sqrt();
    assert!((va.value - vb.value).abs() < 3.0 * se, "{va:?} {vb:?}");
}

fn small_benchmark(replicates: usize) -> BenchmarkOptions {
    BenchmarkOptions {
        n: 300,
        replicates,
        validation_m: 2000,
        methods: Method::ALL.to_vec(),
        nuisance: NuisanceSpec::default(),
        settings: MethodSettings::default(),
        seed: 9,
    }
}

#[test]
fn benchmark_with_one_replicate_has_no_sd() {
    let config = SimConfig::new(Scenario::One, 4);
    let report = run_benchmark(&config, &small_benchmark(1)).unwrap();
    assert_eq!(report.replicates, 1);
    assert_eq!(report.methods.len(), 3);
    for m in report.methods.iter().chain([&report.opt]) {
        assert!(m.sd.is_none());
        assert_eq!(m.effective_replicates, 1);
        assert!(m.mean.is_finite());
    }
    let table = report.to_table();
    for label in ["CQL", "CSQL", "CSOL", "Opt"] {
        assert!(table.contains(label));
    }
}

#[test]
fn benchmark_is_reproducible() {
    let config = SimConfig::new(Scenario::Two, 3);
    let a = run_benchmark(&config, &small_benchmark(2)).unwrap();
    let b = run_benchmark(&config, &small_benchmark(2)).unwrap();
    assert_eq!(a, b);
    assert!(a.method("CSOL").unwrap().sd.is_some());
    assert!(run_benchmark(&config, &small_benchmark(0)).is_err());
}
