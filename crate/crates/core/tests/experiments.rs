use nsp_ope::estimators::EstimatorKind;
use nsp_ope::experiments::taxi::{SmallState, DROPOFF, PICKUP, SOUTH, WEST};
use nsp_ope::experiments::{
    build_taxi, q_learning, run_experiment, ExperimentConfig, NuisanceMode, QLearningConfig, TaxiVariant,
};
use nsp_ope::mdp::exact::exact_value_discounted;
use nsp_ope::policies::{PolicySpecConfig, TiltConfig};
use nsp_ope::StochasticPolicy;

fn step(mdp: &nsp_ope::TabularDecisionProcess, s: usize, a: usize) -> (f64, Vec<(usize, f64)>) {
    (mdp.mean_reward(0, s, a), mdp.next_dist(0, s, a).iter().collect())
}

#[test]
fn taxi_rows_are_distributions() {
    for variant in [TaxiVariant::Small, TaxiVariant::Liu] {
        let mdp = build_taxi(variant, 0.98).unwrap();
        assert_eq!(mdp.n_actions(), 6);
        assert_eq!(mdp.n_states(), variant.n_states());
        for s in 0..mdp.n_states() {
            for a in 0..6 {
                let total: f64 = mdp.next_dist(0, s, a).prob.iter().sum();
                assert!((total - 1.0).abs() < 1e-12, "{variant:?} s={s} a={a}");
                let r = mdp.mean_reward(0, s, a);
                assert!((0.0..=1.0).contains(&r));
            }
        }
    }
}

#[test]
fn hand_traced_pickup_and_dropoff() {
    let mdp = build_taxi(TaxiVariant::Small, 0.98).unwrap();
    // Taxi at (0,1), passenger waiting at R (0,0), destination Y.
    let s0 = SmallState { row: 0, col: 1, passenger: 0, destination: 2 }.encode();
    let (r0, next0) = step(&mdp, s0, WEST);
    let s1 = SmallState { row: 0, col: 0, passenger: 0, destination: 2 }.encode();
    assert_eq!(next0, vec![(s1, 1.0)]);
    let (r1, next1) = step(&mdp, s1, PICKUP);
    let s2 = SmallState { row: 0, col: 0, passenger: 4, destination: 2 }.encode();
    assert_eq!(next1, vec![(s2, 1.0)]);
    assert_eq!([r0, r1], [0.3, 0.3]);

    // Passenger on board one row above Y: south, then dropoff pays 1 and restarts.
    let s3 = SmallState { row: 3, col: 0, passenger: 4, destination: 2 }.encode();
    let (r3, next3) = step(&mdp, s3, SOUTH);
    let s4 = SmallState { row: 4, col: 0, passenger: 4, destination: 2 }.encode();
    assert_eq!(next3, vec![(s4, 1.0)]);
    let (r4, next4) = step(&mdp, s4, DROPOFF);
    assert_eq!([r3, r4], [0.3, 1.0]);
    assert_eq!(next4.len(), 300);

    // Dropoff at another landmark leaves the passenger there at the step cost.
    let at_r = SmallState { row: 0, col: 0, passenger: 4, destination: 2 }.encode();
    let (r, next) = step(&mdp, at_r, DROPOFF);
    assert_eq!(r, 0.3);
    assert_eq!(next, vec![(SmallState { row: 0, col: 0, passenger: 0, destination: 2 }.encode(), 1.0)]);
    // Pickup with nobody waiting is illegal.
    let empty = SmallState { row: 2, col: 2, passenger: 0, destination: 2 }.encode();
    assert_eq!(step(&mdp, empty, PICKUP), (0.0, vec![(empty, 1.0)]));
}

#[test]
fn learned_behavior_beats_uniform_on_taxi_small() {
    let mdp = build_taxi(TaxiVariant::Small, 0.98).unwrap();
    let (pi_b, _) = q_learning(&mdp, &QLearningConfig::default(), 11).unwrap();
    let learned = exact_value_discounted(&mdp, &pi_b).unwrap();
    let uniform = exact_value_discounted(&mdp, &StochasticPolicy::uniform(mdp.n_states(), 6)).unwrap();
    assert!(learned > uniform, "{learned} vs {uniform}");
}

fn small_config(nuisances: NuisanceMode) -> ExperimentConfig {
    ExperimentConfig {
        env: "taxi-small".into(),
        gamma: 0.98,
        policy_spec: PolicySpecConfig::Tilting { u: TiltConfig::Token("ceil_half".into()) },
        horizons: vec![2000],
        replications: 3,
        estimators: vec![EstimatorKind::Dm, EstimatorKind::Ti2, EstimatorKind::Mis],
        corruption: None,
        q_learning: QLearningConfig::default(),
        k: 2,
        master_seed: 5,
        nuisances,
    }
}

#[test]
fn oracle_direct_method_is_exact() {
    let result = run_experiment(&small_config(NuisanceMode::Oracle), None).unwrap();
    let dm = result.table.get("DM", 2000).unwrap();
    assert!(dm.mse <= 1e-16, "{dm:?}");
    assert_eq!(dm.replications, 3);
}

#[test]
fn experiments_are_deterministic() {
    let cfg = small_config(NuisanceMode::Estimated);
    let a = run_experiment(&cfg, None).unwrap();
    let b = run_experiment(&cfg, None).unwrap();
    assert_eq!(a, b);
    for row in &a.table.rows {
        assert!(row.ci_low <= row.mse && row.mse <= row.ci_high);
        assert_eq!(row.failures, 0, "{row:?}");
    }
    let mut csv = Vec::new();
    a.table.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("estimator,scenario,H,mse,ci_low,ci_high,replications,failures"));
}

#[test]
fn config_validation_names_the_field() {
    let mut cfg = small_config(NuisanceMode::Estimated);
    cfg.replications = 0;
    assert!(cfg.validate().unwrap_err().to_string().contains("replications"));
    let mut cfg = small_config(NuisanceMode::Estimated);
    cfg.estimators = vec![EstimatorKind::Mo2];
    assert!(cfg.validate().unwrap_err().to_string().contains("estimators"));
    let mut cfg = small_config(NuisanceMode::Estimated);
    cfg.q_learning.epsilon_soften = 1.0;
    assert!(cfg.validate().unwrap_err().to_string().contains("epsilon_soften"));
    let text = r#"{"env":"taxi-small","gamma":0.98,"policy_spec":{"kind":"tilting","u":"ceil_half"},
        "horizons":[],"replications":2,"estimators":["TI2"],"master_seed":1}"#;
    assert!(ExperimentConfig::from_json(text).unwrap_err().to_string().contains("horizons"));
}
