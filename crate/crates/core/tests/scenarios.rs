use std::path::PathBuf;

use mobicloud::harness::{load_scenario, run_experiment, to_csv, AlgorithmName, Scenario, CSV_HEADER};
use mobicloud::Error;

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

#[test]
fn every_shipped_scenario_loads() {
    let mut n = 0;
    for entry in std::fs::read_dir(dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            load_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
}

#[test]
fn default_file_spells_out_the_defaults() {
    let file = load_scenario(dir().join("default.toml")).unwrap();
    assert_eq!(file, Scenario::with_users(100));
}

#[test]
fn effective_scenario_round_trips() {
    let s = load_scenario(dir().join("desk.toml")).unwrap();
    let again = Scenario::from_toml(&s.to_toml().unwrap()).unwrap();
    assert_eq!(s, again);
}

fn scenario_error(text: &str) -> String {
    match Scenario::from_toml(text) {
        Err(Error::Scenario { path, .. }) => path,
        other => panic!("expected a scenario error, got {other:?}"),
    }
}

#[test]
fn errors_name_the_field() {
    assert_eq!(scenario_error("[grid]\nwidth = 3"), "users.count");
    assert_eq!(scenario_error("[users]\ncount = 3\n[clouds]\nlocal = 2\nbogus = 1"), "line 5, column 1");
    assert_eq!(scenario_error("[users]\ncount = 3\n[algorithm]\nalpha = 1.5"), "algorithm.alpha");
    assert_eq!(scenario_error("[users]\ncount = 3\n[algorithm]\nopt_gap = -0.1"), "algorithm.opt_gap");
    assert_eq!(
        scenario_error("[users]\ncount = 3\n[workload]\ntemplates = [{ name = \"x\", expr = \"seq(a,\" }]"),
        "workload.templates[0].expr"
    );
}

#[test]
fn rows_cover_algorithms_reps_and_levels() {
    let mut s = load_scenario(dir().join("desk.toml")).unwrap();
    s.repetitions = 2;
    s.uncertainty.levels_pct = vec![0.0, 10.0];
    let rows = run_experiment(&s).unwrap();
    // music, rsa, greedy, bruteforce; gmusic is skipped without groups
    assert_eq!(rows.len(), 2 * 2 * 4);
    assert!(rows.iter().all(|r| r.algorithm != "gmusic"));
    // planned on the predicted workflows, so only exact without uncertainty
    let bf: Vec<_> = rows.iter().filter(|r| r.algorithm == "bruteforce" && r.uncertainty_pct == 0.0).collect();
    assert_eq!(bf.len(), 2);
    assert!(bf.iter().all(|r| (r.throughput_pct.unwrap() - 100.0).abs() < 1e-9));
    let csv = to_csv(&rows).unwrap();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(csv.lines().count(), rows.len() + 1);
}

#[test]
fn seeds_change_results_and_repeat_exactly() {
    let mut s = load_scenario(dir().join("desk.toml")).unwrap();
    s.repetitions = 3;
    s.algorithm.name = AlgorithmName::Music;
    let a = to_csv(&run_experiment(&s).unwrap()).unwrap();
    assert_eq!(a, to_csv(&run_experiment(&s).unwrap()).unwrap());
    s.seed += 1;
    assert_ne!(a, to_csv(&run_experiment(&s).unwrap()).unwrap());
}

#[test]
fn gain_rows_come_in_pairs() {
    let mut s = load_scenario(dir().join("gains.toml")).unwrap();
    s.repetitions = 2;
    let rows = run_experiment(&s).unwrap();
    let gains: Vec<_> = rows.iter().filter(|r| r.fixed_dimension.is_some()).collect();
    assert_eq!(gains.len(), 2 * 2);
    for r in gains {
        let fixed = r.fixed_dimension.unwrap();
        let blank = match fixed {
            mobicloud::workflow::Dimension::Price => r.gain_price_pct,
            mobicloud::workflow::Dimension::Power => r.gain_power_pct,
            mobicloud::workflow::Dimension::Delay => r.gain_delay_pct,
        };
        assert!(blank.is_none(), "the held dimension has no gain");
    }
}

#[test]
fn public_only_rows_never_touch_a_local_cloud() {
    let mut s = load_scenario(dir().join("desk.toml")).unwrap();
    s.repetitions = 2;
    s.public_only = true;
    s.algorithm.name = AlgorithmName::Music;
    let rows = run_experiment(&s).unwrap();
    assert!(!rows.is_empty());
    // every user pays something: nothing runs for free on a local cloud over WiFi
    assert!(rows.iter().all(|r| r.mean_price_usd > 0.0));
}
