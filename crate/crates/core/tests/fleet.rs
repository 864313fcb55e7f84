use adr_maint::fleet::{
    run_policy, simulate, CostMode, FleetConfig, FleetScenario, PolicyId, SimOptions, TableBuilder, Valuation,
};
use adr_maint::{Error, ObsCase};

fn small(case: ObsCase, snr: f64) -> FleetConfig {
    FleetConfig { adrs: 20, crews: 2, runs: 20, grid: 50, samples: 1000, ..FleetConfig::reference(case, snr) }
}

fn build(config: FleetConfig) -> FleetScenario {
    FleetScenario::build(config, &mut TableBuilder::default()).unwrap()
}

#[test]
fn identical_seeds_give_identical_reports() {
    let fleet = build(small(ObsCase::B, 0.0));
    let again = build(small(ObsCase::B, 0.0));
    for policy in [PolicyId::PartialWhittle, PolicyId::FullWhittle, PolicyId::SlowWhittle] {
        let a = simulate(&fleet, policy, PolicyId::FullOptimal, &SimOptions::default()).unwrap();
        let b = simulate(&again, policy, PolicyId::FullOptimal, &SimOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.err_percent.to_bits(), b.err_percent.to_bits());
    }
}

#[test]
fn reward_accounting_matches_independent_tally() {
    let fleet = build(small(ObsCase::A, 0.0));
    for policy in [PolicyId::PartialWhittle, PolicyId::FullOptimal, PolicyId::SlowOptimal] {
        let trace = run_policy(&fleet, policy, 3).unwrap();
        let mut total = 0.0;
        for t in 0..trace.rewards.len() {
            let mut r = 0.0;
            for (i, adr) in fleet.adrs.iter().enumerate() {
                if trace.repairs[t].contains(&i) {
                    r += adr.model.lambda - adr.model.cost;
                } else if trace.working[t][i] {
                    r += adr.model.lambda;
                }
            }
            assert!((r - trace.rewards[t]).abs() < 1e-12, "event {t}");
            assert!(trace.repairs[t].len() <= fleet.config.crews);
            total += 0.9f64.powi(t as i32) * r;
        }
        assert!((total - trace.discounted).abs() < 1e-9);
    }
}

#[test]
fn repaired_devices_work_and_broken_devices_stay_broken() {
    let fleet = build(small(ObsCase::A, 0.0));
    let trace = run_policy(&fleet, PolicyId::PartialWhittle, 0).unwrap();
    assert!(trace.working[0].iter().all(|&w| w));
    for t in 1..trace.working.len() {
        for i in 0..fleet.adrs.len() {
            if !trace.working[t - 1][i] && !trace.repairs[t - 1].contains(&i) {
                assert!(!trace.working[t][i], "device {i} repaired itself at event {t}");
            }
        }
    }
}

#[test]
fn information_ordering() {
    let fleet = build(FleetConfig { runs: 40, ..small(ObsCase::A, 0.0) });
    let opts = SimOptions::default();
    let full = simulate(&fleet, PolicyId::FullWhittle, PolicyId::FullOptimal, &opts).unwrap();
    let partial = simulate(&fleet, PolicyId::PartialWhittle, PolicyId::FullWhittle, &opts).unwrap();
    assert!(full.err_percent >= -2.0 * full.err_stderr, "{full:?}");
    assert!(partial.err_percent >= -2.0 * partial.err_stderr, "{partial:?}");
    assert!(partial.err_percent > 0.0);
}

#[test]
fn free_repairs_with_enough_crews_match_the_optimum() {
    let mut config = small(ObsCase::A, 40.0);
    config.crews = config.adrs;
    config.model.cost = 0.0;
    let fleet = build(config);
    for policy in [PolicyId::PartialWhittle, PolicyId::FullWhittle] {
        let r = simulate(&fleet, policy, PolicyId::FullOptimal, &SimOptions::default()).unwrap();
        assert!(r.err_percent.abs() < 1e-12, "{policy}: {}", r.err_percent);
    }
}

#[test]
fn clear_readings_reproduce_slow_information_decisions() {
    let fleet = build(FleetConfig { runs: 10, ..small(ObsCase::A, 40.0) });
    let (mut differ, mut total) = (0usize, 0usize);
    for run in 0..fleet.config.runs {
        let a = run_policy(&fleet, PolicyId::PartialWhittle, run).unwrap();
        let b = run_policy(&fleet, PolicyId::SlowWhittle, run).unwrap();
        for (x, y) in a.repairs.iter().zip(&b.repairs) {
            for i in 0..fleet.adrs.len() {
                total += 1;
                differ += (x.contains(&i) != y.contains(&i)) as usize;
            }
        }
    }
    assert!((differ as f64) < 0.02 * total as f64, "{differ} of {total}");
}

#[test]
fn horizon_truncation_is_small() {
    let fleet = build(FleetConfig { runs: 2, ..small(ObsCase::A, 0.0) });
    let r = simulate(&fleet, PolicyId::FullWhittle, PolicyId::FullOptimal, &SimOptions::default()).unwrap();
    assert!(r.truncation_ratio < 0.01);
}

#[test]
fn exact_and_simulated_references() {
    let fleet = build(small(ObsCase::A, 0.0));
    let exact = SimOptions { valuation: Valuation::Exact, seed: None };
    let r = simulate(&fleet, PolicyId::FullOptimal, PolicyId::FullOptimal, &exact).unwrap();
    // Simulated finite-horizon value of the optimum against its exact value.
    assert!(r.err_percent > 0.0 && r.err_percent < 3.0, "{}", r.err_percent);
    let sim = simulate(&fleet, PolicyId::FullOptimal, PolicyId::FullOptimal, &SimOptions::default()).unwrap();
    assert_eq!(sim.err_percent, 0.0);
    let bad = simulate(&fleet, PolicyId::FullOptimal, PolicyId::FullWhittle, &exact);
    assert!(bad.is_err());
}

#[test]
fn scenario_errors() {
    let fleet = build(small(ObsCase::A, 0.0));
    let err = simulate(&fleet, PolicyId::FullWhittle, PolicyId::FullOptimal, &SimOptions { seed: Some(99), ..SimOptions::default() });
    assert!(matches!(err, Err(Error::SeedConflict { built: 1, requested: 99 })));

    let mixed = build(FleetConfig { cost_mode: CostMode::Uniform { max_multiple: 6.5 }, ..small(ObsCase::A, 0.0) });
    assert!(mixed.adrs.iter().all(|a| a.model.cost > 0.0 && a.model.cost <= 6.5));
    let err = simulate(&mixed, PolicyId::PartialWhittle, PolicyId::FullOptimal, &SimOptions::default());
    assert!(matches!(err, Err(Error::RequiresIdenticalCosts(_))));
    assert!(simulate(&mixed, PolicyId::PartialWhittle, PolicyId::FullWhittle, &SimOptions::default()).is_ok());

    let mut broken = fleet.clone();
    broken.adrs[4].table.index_values.truncate(3);
    let err = simulate(&broken, PolicyId::PartialWhittle, PolicyId::FullWhittle, &SimOptions::default());
    assert!(matches!(err, Err(Error::MissingIndexTable(4))));
}

#[test]
fn invalid_configurations_rejected() {
    let mut b = TableBuilder::default();
    for cfg in [
        FleetConfig { crews: 30, ..small(ObsCase::A, 0.0) },
        FleetConfig { horizon: 0, ..small(ObsCase::A, 0.0) },
        FleetConfig { runs: 0, ..small(ObsCase::A, 0.0) },
    ] {
        assert!(FleetScenario::build(cfg, &mut b).is_err());
    }
}
