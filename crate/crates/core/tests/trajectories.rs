mod common;

use common::{cohort, raw, stage};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sdtr::trajectories::{
    build_features, pad_and_truncate, read_cohort, Action, FeatureSpec, LoadOptions, RawStage,
    RawTrajectory,
};
use sdtr::Error;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(1)
}

fn plain(rewards: &[f64]) -> RawTrajectory {
    raw(
        "s",
        rewards.iter().map(|&y| stage(&[0.0], Action::Plus, y)).collect(),
        None,
    )
}

#[test]
fn failure_before_horizon_is_padded() {
    let t = pad_and_truncate(&plain(&[1.0, 1.0, 1.0]), 100.0, 5, &mut rng()).unwrap();
    let rewards: Vec<f64> = t.stages.iter().map(|s| s.reward).collect();
    let informative: Vec<bool> = t.stages.iter().map(|s| s.informative).collect();
    assert_eq!(rewards, [1.0, 1.0, 1.0, 0.0, 0.0]);
    assert_eq!(informative, [true, true, true, false, false]);
    assert_eq!(t.observed_length, 3);
}

#[test]
fn rewards_truncate_at_tau() {
    let t = pad_and_truncate(&plain(&[4.0, 4.0, 4.0]), 10.0, 3, &mut rng()).unwrap();
    let rewards: Vec<f64> = t.stages.iter().map(|s| s.reward).collect();
    assert_eq!(rewards, [4.0, 4.0, 2.0]);
    assert_eq!(t.total_reward(), 10.0);
}

#[test]
fn censoring_inside_a_stage_keeps_the_partial_reward() {
    let mut r = plain(&[1.0, 1.0]);
    r.stages.push(RawStage {
        covariates: vec![0.0],
        action: Action::Minus,
        reward: None,
    });
    r.censor_time = Some(2.5);
    let t = pad_and_truncate(&r, 10.0, 3, &mut rng()).unwrap();
    let delta: Vec<bool> = t.stages.iter().map(|s| s.at_risk).collect();
    assert_eq!(delta, [true, true, false]);
    assert_eq!(t.stages[2].reward, 0.5);
    assert!(t.censored);
}

#[test]
fn exact_tau_ends_informative_stages() {
    let t = pad_and_truncate(&plain(&[5.0, 5.0, 5.0]), 10.0, 3, &mut rng()).unwrap();
    assert_eq!(t.stages[1].reward, 5.0);
    assert!(!t.stages[2].informative);
    assert_eq!(t.stages[2].reward, 0.0);
}

#[test]
fn invalid_raw_input_is_rejected() {
    assert!(pad_and_truncate(&plain(&[1.0, -1.0]), 10.0, 3, &mut rng()).is_err());
    assert!(pad_and_truncate(&plain(&[1.0, 1.0, 1.0]), 10.0, 2, &mut rng()).is_err());
    assert!(pad_and_truncate(&plain(&[1.0]), 10.0, 0, &mut rng()).is_err());
}

#[test]
fn padding_actions_follow_the_seed() {
    let a = pad_and_truncate(&plain(&[1.0]), 10.0, 30, &mut rng()).unwrap();
    let b = pad_and_truncate(&plain(&[1.0]), 10.0, 30, &mut rng()).unwrap();
    assert_eq!(a, b);
    let plus = a.stages[1..].iter().filter(|s| s.action == Action::Plus).count();
    assert!(plus > 0 && plus < 29);
}

#[test]
fn feature_extraction() {
    let c = cohort(
        &[raw("a", vec![stage(&[8.0, 2.0], Action::Plus, 1.0)], None)],
        1,
        5.0,
        &["a1c", "n"],
    );
    let (h0, h1) = build_features(&c.trajectories[0], 1, &c.feature_spec, &c.covariate_names).unwrap();
    assert_eq!(h1, [1.0, 8.0, 2.0]);
    assert_eq!(h0, [1.0, 8.0, 2.0]);

    let empty: [&str; 0] = [];
    assert!(FeatureSpec::uniform(1, &["a1c"], &empty, true).is_err());

    let spec = FeatureSpec::uniform(1, &["a1c"], &["missing"], true).unwrap();
    assert!(matches!(spec.resolve(&common::names(&["a1c", "n"])), Err(Error::UnknownFeature(_))));
}

#[test]
fn features_of_a_padded_stage_are_an_error() {
    let c = cohort(
        &[raw("a", vec![stage(&[8.0], Action::Plus, 1.0)], None)],
        2,
        5.0,
        &["a1c"],
    );
    assert!(build_features(&c.trajectories[0], 2, &c.feature_spec, &c.covariate_names).is_err());
}

const GOOD: &str = "id,stage,action,reward,at_risk,x\n\
a,1,1,1.0,1,0.5\na,2,-1,1.0,1,0.7\na,3,1,0.5,1,0.9\n\
b,1,-1,1.0,1,0.1\nb,2,-1,1.0,1,0.2\nb,3,1,1.0,1,0.3\n";

#[test]
fn loader_reads_a_well_formed_file() {
    let c = read_cohort(GOOD.as_bytes(), &LoadOptions::default()).unwrap();
    assert_eq!(c.len(), 2);
    assert_eq!(c.horizon, 3);
    assert_eq!(c.trajectories[0].total_reward(), 2.5);
}

#[test]
fn loader_rejects_bad_actions_with_the_row() {
    let bad = GOOD.replace("a,2,-1", "a,2,0");
    let err = read_cohort(bad.as_bytes(), &LoadOptions::default()).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");
}

#[test]
fn loader_rejects_gaps_and_duplicates() {
    let gap = GOOD.replace("a,2,-1,1.0,1,0.7\n", "");
    assert!(read_cohort(gap.as_bytes(), &LoadOptions::default()).is_err());
    let dup = GOOD.replace("a,2,-1", "a,1,-1");
    assert!(read_cohort(dup.as_bytes(), &LoadOptions::default()).is_err());
}

fn raw_strategy() -> impl Strategy<Value = (Vec<f64>, Option<f64>, f64, usize)> {
    (1usize..6).prop_flat_map(|len| {
        (
            prop::collection::vec(0.0f64..5.0, len),
            prop::option::of(0.0f64..20.0),
            0.5f64..20.0,
            len..len + 3,
        )
    })
}

proptest! {
    #[test]
    fn padding_preserves_the_truncated_total((rewards, censor, tau, horizon) in raw_strategy()) {
        let mut r = plain(&rewards);
        r.censor_time = censor;
        let t = pad_and_truncate(&r, tau, horizon, &mut rng()).unwrap();
        let mut expected = rewards.iter().sum::<f64>().min(tau);
        if let Some(c) = censor {
            expected = expected.min(c);
        }
        prop_assert_eq!(t.horizon(), horizon);
        prop_assert!((t.total_reward() - expected).abs() < 1e-9);
        prop_assert!(t.total_reward() <= tau + 1e-12);
        let flags: Vec<bool> = t.stages.iter().map(|s| s.at_risk).collect();
        prop_assert!(flags.windows(2).all(|w| w[0] || !w[1]));
        for s in &t.stages {
            if !s.informative {
                prop_assert_eq!(s.reward, 0.0);
            }
        }
        let again = pad_and_truncate(
            &RawTrajectory {
                id: "s".into(),
                stages: t.stages[..t.observed_length]
                    .iter()
                    .map(|s| RawStage { covariates: s.covariates.clone(), action: s.action, reward: Some(s.reward) })
                    .collect(),
                censor_time: None,
            },
            tau,
            horizon,
            &mut rng(),
        )
        .unwrap();
        prop_assert!((again.total_reward() - t.total_reward()).abs() < 1e-12);
    }
}
