//! Acceptance suite. Each criterion prints one PASS or FAIL line; the binary
//! exits non-zero if any criterion fails. Runs without the libtest harness so
//! the lines show up in plain `cargo test` output.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use mobicloud::allocation::roulette_pick;
use mobicloud::harness::{load_scenario, mean_sd, run_experiment, to_csv, AlgorithmName, MetricsRow, Scenario};
use mobicloud::model::{Point, ServiceId};
use mobicloud::profiles::{HostTier, InvocationContext, Link, ProfileTables};
use mobicloud::registry::ServiceRegistry;
use mobicloud::workflow::{
    aggregate_qos, normalize_qos, workflow_extrema, Dimension, Extrema, FunctionId, QoS, WorkflowNode,
};

const SQRT3: f64 = 1.732_050_807_568_877_2;

fn scenario(name: &str) -> Scenario {
    let path = format!("{}/../../scenarios/{name}", env!("CARGO_MANIFEST_DIR"));
    load_scenario(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

// ---------------------------------------------------------------- 1

fn leaf(f: u32) -> WorkflowNode {
    WorkflowNode::leaf(FunctionId(f), 100.0)
}

fn eval(node: &WorkflowNode, q: &[QoS]) -> QoS {
    let plan: Vec<ServiceId> = (0..node.leaf_count() as u32).map(ServiceId).collect();
    aggregate_qos(node, &plan, |i, _, _, _| Ok(q[i])).unwrap()
}

fn qos_algebra() -> Outcome {
    let two = [QoS::new(0.25, 3.0, 100.0), QoS::new(0.5, 5.0, 200.0)];
    let three = [QoS::new(0.25, 3.0, 100.0), QoS::new(0.5, 5.0, 200.0), QoS::new(0.125, 9.0, 50.0)];
    let kids = |n: u32| (0..n).map(leaf).collect::<Vec<_>>();

    // (label, node, leaf values, hand-computed price/power/delay)
    let cases: Vec<(&str, WorkflowNode, &[QoS], QoS)> = vec![
        ("seq/2", WorkflowNode::Seq(kids(2)), &two, QoS::new(0.75, 8.0, 300.0)),
        ("seq/3", WorkflowNode::Seq(kids(3)), &three, QoS::new(0.875, 17.0, 350.0)),
        ("and/2", WorkflowNode::And(kids(2)), &two, QoS::new(0.75, 8.0, 200.0)),
        ("and/3", WorkflowNode::And(kids(3)), &three, QoS::new(0.875, 17.0, 200.0)),
        ("xor/2", WorkflowNode::Xor(kids(2)), &two, QoS::new(0.5, 5.0, 200.0)),
        ("xor/3", WorkflowNode::Xor(kids(3)), &three, QoS::new(0.5, 9.0, 200.0)),
        (
            "loop3/seq2",
            WorkflowNode::Loop { body: Box::new(WorkflowNode::Seq(kids(2))), count: 3 },
            &two,
            QoS::new(2.25, 24.0, 900.0),
        ),
        (
            "loop2/and3",
            WorkflowNode::Loop { body: Box::new(WorkflowNode::And(kids(3))), count: 2 },
            &three,
            QoS::new(1.75, 34.0, 400.0),
        ),
    ];
    let mut cells = 0;
    let mut wrong = Vec::new();
    for (label, node, q, want) in &cases {
        let got = eval(node, q);
        for d in Dimension::ALL {
            cells += 1;
            if got.get(d) != want.get(d) {
                wrong.push(format!("{label}.{d}: {} != {}", got.get(d), want.get(d)));
            }
        }
    }
    Outcome::new(wrong.is_empty(), format!("{cells} cells exact over 4 patterns x 3 dimensions; mismatches: {wrong:?}"))
}

// ---------------------------------------------------------------- 2

fn arb_qos() -> impl Strategy<Value = QoS> {
    (0.0f64..1e4, 0.0f64..1e4, 0.0f64..1e4).prop_map(|(a, b, c)| QoS::new(a, b, c))
}

fn arb_node() -> impl Strategy<Value = WorkflowNode> {
    (0u32..4).prop_map(leaf).prop_recursive(3, 12, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 1..4).prop_map(WorkflowNode::Seq),
            prop::collection::vec(inner.clone(), 1..4).prop_map(WorkflowNode::And),
            prop::collection::vec(inner.clone(), 2..4).prop_map(WorkflowNode::Xor),
            (inner, 1u32..4).prop_map(|(b, count)| WorkflowNode::Loop { body: Box::new(b), count }),
        ]
    })
}

fn check_normalized(raw: &QoS, e: &Extrema) -> Result<(), TestCaseError> {
    let n = normalize_qos(raw, e).map_err(|err| TestCaseError::fail(err.to_string()))?;
    for v in [n.price, n.power, n.delay] {
        prop_assert!((0.0..=1.0).contains(&v), "component {v} outside [0, 1]");
    }
    prop_assert!((0.0..=SQRT3).contains(&n.total()), "total {} outside [0, sqrt 3]", n.total());
    for d in Dimension::ALL {
        if e.min.get(d) == e.max.get(d) {
            let v = match d {
                Dimension::Price => n.price,
                Dimension::Power => n.power,
                Dimension::Delay => n.delay,
            };
            prop_assert_eq!(v, 1.0);
        }
    }
    Ok(())
}

fn normalization_bounds() -> Outcome {
    let cases = 10_000;
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });

    // Services: a realizing set, some with a degenerate dimension.
    let services = (prop::collection::vec(arb_qos(), 1..8), any::<u8>()).prop_map(|(mut set, flat)| {
        for (d, bit) in Dimension::ALL.into_iter().zip([1u8, 2, 4]) {
            if flat & bit != 0 && flat & 0x80 != 0 {
                let v = set[0].get(d);
                set.iter_mut().for_each(|q| q.set(d, v));
            }
        }
        set
    });
    let r1 = runner.run(&services, |set| {
        let e = Extrema::of(set.iter().copied()).unwrap();
        set.iter().try_for_each(|q| check_normalized(q, &e))
    });

    // Workflows: any plan over per-leaf candidate sets, against the
    // tree-aggregated extrema.
    let workflows = (arb_node(), prop::collection::vec(prop::collection::vec(arb_qos(), 1..4), 40), any::<u64>());
    let r2 = runner.run(&workflows, |(node, table, pick)| {
        let n = node.leaf_count();
        let e = workflow_extrema(&node, |i, _| Ok(Extrema::of(table[i].iter().copied()).unwrap())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(pick);
        let chosen: Vec<QoS> = (0..n).map(|i| table[i][rng.gen_range(0..table[i].len())]).collect();
        check_normalized(&eval(&node, &chosen), &e)?;
        check_normalized(&e.min, &e)?;
        check_normalized(&e.max, &e)
    });

    let point = normalize_qos(&QoS::new(3.0, 4.0, 5.0), &Extrema::point(QoS::new(3.0, 4.0, 5.0))).unwrap();
    let flat_ok = point.price == 1.0 && point.power == 1.0 && point.delay == 1.0;
    let pass = r1.is_ok() && r2.is_ok() && flat_ok;
    Outcome::new(
        pass,
        format!(
            "{cases} service sets + {cases} workflows; services: {}, workflows: {}, max=min -> 1: {flat_ok}",
            r1.map_or_else(|e| e.to_string(), |_| "ok".into()),
            r2.map_or_else(|e| e.to_string(), |_| "ok".into()),
        ),
    )
}

// ---------------------------------------------------------------- 3

fn rtree_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let cases = 1_000;
    let mut failures = 0;
    let mut first = None;
    for case in 0..cases {
        let n = rng.gen_range(0..300u32);
        let extent = 1500.0;
        let mut reg = ServiceRegistry::new();
        let mut live: Vec<(ServiceId, FunctionId, Point)> = Vec::new();
        for i in 0..n {
            // Some duplicates to exercise equal rectangles.
            let p = if i > 0 && rng.gen_bool(0.05) {
                live[rng.gen_range(0..live.len())].2
            } else {
                Point::new(rng.gen_range(0.0..extent), rng.gen_range(0.0..extent))
            };
            let f = FunctionId(rng.gen_range(0..3));
            reg.insert(ServiceId(i), f, Some(p)).unwrap();
            live.push((ServiceId(i), f, p));
        }
        // Remove a few so condensing is covered too.
        for _ in 0..rng.gen_range(0..=n / 5) {
            let k = rng.gen_range(0..live.len());
            let (id, ..) = live.swap_remove(k);
            reg.remove(id).unwrap();
        }
        let q = Point::new(rng.gen_range(-100.0..extent + 100.0), rng.gen_range(-100.0..extent + 100.0));
        let d = rng.gen_range(0.0..600.0);
        let filter = rng.gen_bool(0.5).then(|| FunctionId(rng.gen_range(0..3)));
        let got = reg.range_query(q, d, filter, false);
        let mut want: Vec<ServiceId> = live
            .iter()
            .filter(|(_, f, p)| p.distance_sq(q) <= d * d && filter.is_none_or(|w| w == *f))
            .map(|(id, ..)| *id)
            .collect();
        want.sort_unstable();
        let invariants = reg.tree().check_invariants();
        if got != want || invariants.is_err() {
            failures += 1;
            first.get_or_insert(format!("case {case}: {} vs {} hits, invariants {invariants:?}", got.len(), want.len()));
        }
    }
    Outcome::new(failures == 0, format!("{cases} randomized cases, {failures} mismatches {}", first.unwrap_or_default()))
}

// ---------------------------------------------------------------- 4

fn roulette() -> Outcome {
    let weights = [0.2, 0.3, 0.5];
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut counts = [0usize; 3];
    for _ in 0..draws {
        counts[roulette_pick(&weights, rng.gen::<f64>())] += 1;
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / draws as f64).collect();
    let within = freq.iter().zip(&weights).all(|(f, w)| (f - w).abs() <= 0.01);
    let at = roulette_pick(&weights, 0.35);
    Outcome::new(
        within && at == 1,
        format!("frequencies {freq:.4?} (tolerance 0.01), draw 0.35 -> index {at}"),
    )
}

// ---------------------------------------------------------------- 5

fn throughput_by_rep(rows: &[MetricsRow], alg: &str, unc: f64) -> Vec<(u32, f64)> {
    let mut v: Vec<(u32, f64)> = rows
        .iter()
        .filter(|r| r.algorithm == alg && r.uncertainty_pct == unc && r.fixed_dimension.is_none())
        .filter_map(|r| r.throughput_pct.map(|t| (r.repetition, t)))
        .collect();
    v.sort_by_key(|(rep, _)| *rep);
    v
}

/// One-sided paired t-test of `a > b`; `None` when every difference is 0.
fn paired_p(a: &[(u32, f64)], b: &[(u32, f64)]) -> Option<f64> {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x.1 - y.1).collect();
    let (m, sd) = mean_sd(&diffs)?;
    if sd == 0.0 {
        return match m.partial_cmp(&0.0)? {
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(0.0),
            std::cmp::Ordering::Less => Some(1.0),
        };
    }
    let n = diffs.len() as f64;
    let t = m / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).ok()?;
    Some(1.0 - dist.cdf(t))
}

fn mean_of(v: &[(u32, f64)]) -> f64 {
    v.iter().map(|x| x.1).sum::<f64>() / v.len() as f64
}

fn optimality() -> Outcome {
    let mut s = scenario("desk.toml");
    s.algorithm.name = AlgorithmName::All;
    s.uncertainty.levels_pct = vec![0.0];
    let rows = run_experiment(&s).expect("desk run");
    let music = throughput_by_rep(&rows, "music", 0.0);
    let greedy = throughput_by_rep(&rows, "greedy", 0.0);
    let rsa = throughput_by_rep(&rows, "rsa", 0.0);
    let seeds = music.len();
    let (m, g, r) = (mean_of(&music), mean_of(&greedy), mean_of(&rsa));
    let verdict = |p: Option<f64>| match p {
        Some(p) if p < 1e-12 => "p<1e-12".into(),
        Some(p) if p < 0.05 => format!("p={p:.2e}"),
        Some(p) => format!("tie, p={p:.3}"),
        None => "tie, identical".into(),
    };
    let pass = seeds >= 30 && greedy.len() == seeds && rsa.len() == seeds && m >= 60.0 && m >= g && g >= r;
    Outcome::new(
        pass,
        format!(
            "{seeds} seeds: MuSIC {m:.2}% (>= 60), Greedy {g:.2}%, RSA {r:.2}%; MuSIC>Greedy {}, Greedy>RSA {}",
            verdict(paired_p(&music, &greedy)),
            verdict(paired_p(&greedy, &rsa)),
        ),
    )
}

// ---------------------------------------------------------------- 6

fn group_trend() -> Outcome {
    let base = scenario("groups.toml");
    let run = |groups: u32| {
        let mut s = base.clone();
        s.groups.count = groups;
        s.algorithm.name = AlgorithmName::Gmusic;
        let rows = run_experiment(&s).expect("group run");
        let t: Vec<f64> = rows.iter().filter(|r| r.algorithm == "gmusic").filter_map(|r| r.throughput_pct).collect();
        (t.len(), mean_sd(&t).map_or(f64::NAN, |x| x.0))
    };
    let (n4, g4) = run(4);
    let (n20, g20) = run(20);
    let reps = base.repetitions as usize;
    let gap = g20 - g4;
    Outcome::new(
        n4 >= 15 && n4 == reps && n20 == reps && gap >= 5.0,
        format!(
            "{} users, {reps} reps: 4 groups {g4:.2}%, 20 groups {g20:.2}%, gap {gap:.2} pp (need >= 5; {n4}/{n20} reps with an optimum)",
            base.users.count
        ),
    )
}

// ---------------------------------------------------------------- 7

fn gains() -> Outcome {
    let s = scenario("gains.toml");
    let rows = run_experiment(&s).expect("gain run");
    let pick = |fixed: Dimension, f: fn(&MetricsRow) -> Option<f64>| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.algorithm == "music" && r.fixed_dimension == Some(fixed))
            .filter_map(f)
            .collect();
        mean_sd(&v).map_or(f64::NAN, |x| x.0)
    };
    let price_at_delay = pick(Dimension::Delay, |r| r.gain_price_pct);
    let power_at_price = pick(Dimension::Price, |r| r.gain_power_pct);
    let delay_at_price = pick(Dimension::Price, |r| r.gain_delay_pct);
    let band = |v: f64, reference: f64| if (v - reference).abs() <= 15.0 { "within 15 pp" } else { "outside 15 pp" };
    let direction = price_at_delay > 0.0 && power_at_price > 0.0 && delay_at_price > 0.0;
    Outcome::new(
        direction,
        format!(
            "fixed delay: price {price_at_delay:.2}% (reference 27, {}); fixed price: power {power_at_price:.2}% (reference 17, {}), delay {delay_at_price:.2}% (reference 15, {})",
            band(price_at_delay, 27.0),
            band(power_at_price, 17.0),
            band(delay_at_price, 15.0),
        ),
    )
}

// ---------------------------------------------------------------- 8

fn uncertainty() -> Outcome {
    let mut s = scenario("desk.toml");
    s.algorithm.name = AlgorithmName::Music;
    s.uncertainty.levels_pct = vec![0.0, 30.0];
    let rows = run_experiment(&s).expect("uncertainty run");
    let clean = mean_of(&throughput_by_rep(&rows, "music", 0.0));
    let noisy = mean_of(&throughput_by_rep(&rows, "music", 30.0));
    let drop = clean - noisy;
    Outcome::new(
        drop <= 15.0,
        format!("MuSIC {clean:.2}% at 0%, {noisy:.2}% at 30% uncertainty; drop {drop:.2} pp (limit 15)"),
    )
}

// ---------------------------------------------------------------- 9

fn determinism() -> Outcome {
    let mut checked = Vec::new();
    let mut pass = true;
    for (name, reps) in [("desk.toml", 6), ("groups.toml", 2), ("gains.toml", 3)] {
        let mut s = scenario(name);
        s.repetitions = reps;
        s.uncertainty.levels_pct = vec![0.0, 20.0];
        let a = to_csv(&run_experiment(&s).unwrap()).unwrap();
        let b = to_csv(&run_experiment(&s).unwrap()).unwrap();
        pass &= a.as_bytes() == b.as_bytes();
        checked.push(format!("{name} {} bytes", a.len()));
    }
    Outcome::new(pass, format!("two runs byte-identical: {}", checked.join(", ")))
}

// ---------------------------------------------------------------- 10

fn cost_points() -> Outcome {
    let mut t = ProfileTables::default();
    let local = t.add_compute(HostTier::Local, 0.0, 0.0);
    let public = t.add_compute(HostTier::Public, 0.0, 0.0);
    let two_mb = 2048.0;
    let ctx = |host, link| InvocationContext::cloud(host, link, two_mb);
    let checks = [
        ("delay wifi-local", t.service_delay(&ctx(HostTier::Local, Link::WiFi), local).unwrap(), 220.0),
        ("delay 3g-public", t.service_delay(&ctx(HostTier::Public, Link::Cellular), public).unwrap(), 5128.0),
        ("power wifi-local", t.service_power(&ctx(HostTier::Local, Link::WiFi), local).unwrap(), 15435.0),
        ("power 3g-local", t.service_power(&ctx(HostTier::Local, Link::Cellular), local).unwrap(), 26156.0),
    ];
    let wrong: Vec<String> =
        checks.iter().filter(|c| c.1 != c.2).map(|c| format!("{} = {} (want {})", c.0, c.1, c.2)).collect();
    let detail = if wrong.is_empty() {
        checks.iter().map(|c| format!("{} {}", c.0, c.1)).collect::<Vec<_>>().join(", ")
    } else {
        wrong.join("; ")
    };
    Outcome::new(wrong.is_empty(), detail)
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    type Check = fn() -> Outcome;
    let criteria: [(u8, &str, Check, Duration); 10] = [
        (1, "QoS algebra", qos_algebra, Duration::from_secs(1)),
        (2, "normalization bounds", normalization_bounds, Duration::from_secs(10)),
        (3, "R-tree vs linear scan", rtree_oracle, Duration::from_secs(30)),
        (4, "roulette wheel", roulette, Duration::from_secs(60)),
        (5, "desk-scale optimality", optimality, Duration::from_secs(600)),
        (6, "group-size trend", group_trend, Duration::from_secs(900)),
        (7, "2-tier gain direction", gains, Duration::from_secs(600)),
        (8, "uncertainty robustness", uncertainty, Duration::from_secs(600)),
        (9, "determinism", determinism, Duration::from_secs(600)),
        (10, "cost-model points", cost_points, Duration::from_secs(1)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, name, check, limit) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || f == &n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let in_time = took <= limit;
        let pass = outcome.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "criterion {n:>2} {}: {name}: {} [{:.2}s, limit {}s{}]",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            took.as_secs_f64(),
            limit.as_secs(),
            if in_time { "" } else { ", over time" },
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
