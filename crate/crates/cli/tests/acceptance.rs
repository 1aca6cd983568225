//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines are always printed;
//! exits non-zero when any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use subelliptic::grid::GridSpec;
use subelliptic::operators::{Mutation, Subelliptic};
use subelliptic::oracle::{Suite, SuiteConfig};
use subelliptic::target::TargetGeometry;
use subelliptic_cli::{cmd_flow, RunConfig};

const ORDER_MIN: f64 = 3.5;
const FLOOR: f64 = 1e-10;
const MIN_LEVELS: usize = 3;
const ENERGY_RATIO_REL: f64 = 1e-6;
const NONPOSITIVE_MAX: f64 = 1e-6;
const VARIATION_REL: f64 = 1e-3;
const VARIATION_POINTS: usize = 33;
const VARIATION_PAIRS: usize = 20;
const VARIATION_MIN_ORDER: f64 = 2.0;
const VARIATION_SEEDS: [u64; 3] = [7, 11, 12];
const SYMBOL_DEGENERATE_MAX: f64 = 1e-10;
const ALGEBRAIC_MAX: f64 = 1e-10;
const FLOW_POINTS: usize = 11;
const FLOW_STEPS: usize = 2000;
const FLOW_REDUCTION: f64 = 0.01;

struct Line {
    criterion: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn check<'a>(report: &'a Value, name: &str) -> &'a Value {
    report["checks"].as_array().unwrap().iter().find(|c| c["name"] == name).unwrap_or_else(|| panic!("report lacks `{name}`"))
}

fn residuals(c: &Value) -> Vec<f64> {
    c["residuals"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap_or(f64::NAN)).collect()
}

/// Order at least `ORDER_MIN` over at least `MIN_LEVELS` levels, or a finest residual at the floor.
fn converges(c: &Value) -> (bool, String) {
    let r = residuals(c);
    let order = c["observed_order"].as_f64();
    let finest = r.last().copied().unwrap_or(f64::NAN);
    let ok = r.len() >= MIN_LEVELS && (order.is_some_and(|o| o >= ORDER_MIN) || finest <= FLOOR);
    let order = order.map(|o| format!("{o:.2}")).unwrap_or_else(|| "-".into());
    (ok, format!("{} order={order} finest={finest:.2e}", c["name"].as_str().unwrap()))
}

fn all_converge(report: &Value, names: &[&str]) -> (bool, String) {
    let parts: Vec<(bool, String)> = names.iter().map(|n| converges(check(report, n))).collect();
    (parts.iter().all(|p| p.0), parts.into_iter().map(|p| p.1).collect::<Vec<_>>().join("; "))
}

fn run_verify(out: &Path) -> (i32, Vec<u8>) {
    let status = Command::new(env!("CARGO_BIN_EXE_subelliptic"))
        .args(["verify", "--seed", "7", "--out"])
        .arg(out)
        .output()
        .expect("binary runs");
    (status.status.code().unwrap_or(-1), std::fs::read(out.join("report.json")).expect("report.json written"))
}

/// Largest relative gap at the tolerance grid and the refinement order, from a fresh suite run.
fn first_variation_on_seed(seed: u64) -> (f64, Option<f64>, bool) {
    let suite = Suite::new(SuiteConfig { seed, variation_points: VARIATION_POINTS, variation_pairs: VARIATION_PAIRS, ..SuiteConfig::default() }).unwrap();
    let c = suite.run_check("first_variation").unwrap();
    let worst = c
        .notes
        .iter()
        .find_map(|n| n.split(": ").nth(1).and_then(|v| v.split_whitespace().next()).and_then(|v| v.parse::<f64>().ok()))
        .unwrap_or(f64::NAN);
    (worst, c.observed_order, c.passed())
}

fn symbol_along_contact_form() -> f64 {
    let grid = GridSpec::uniform(1, 9, 1.0).unwrap();
    let engine = Subelliptic::new(grid, TargetGeometry::round_sphere(2).unwrap(), 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fibre: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let theta = engine.model().contact_form(&x);
        let s = engine.principal_symbol(&x, &theta, &fibre).unwrap();
        worst = s.iter().fold(worst, |a, b| a.max(b.abs()));
    }
    worst
}

fn mutation_catches(mutation: Mutation, names: &[&str]) -> (bool, String) {
    let suite = Suite::new(SuiteConfig { mutation: Some(mutation), ..SuiteConfig::default() }).unwrap();
    let report = suite.run_selected(names);
    let failing: Vec<&str> = report.checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    (!failing.is_empty(), format!("{} -> failing [{}]", mutation.as_str(), failing.join(", ")))
}

fn main() {
    let clock = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (first_dir, second_dir) = (dir.path().join("run1"), dir.path().join("run2"));
    let (code, bytes) = run_verify(&first_dir);
    let report: Value = serde_json::from_slice(&bytes).expect("report.json parses");
    let mut lines = Vec::new();

    let er = check(&report, "energy_ratio");
    let worst = residuals(er)[0];
    lines.push(Line {
        criterion: 1,
        title: "energy ratio equals 2*pi",
        pass: worst <= ENERGY_RATIO_REL,
        detail: format!("max relative deviation {worst:.2e} over 5 sphere + 5 flat maps (tol {ENERGY_RATIO_REL:e})"),
    });

    let (pass, detail) = all_converge(&report, &["lee_identity", "tension_lift", "rough_laplacian_lift", "curvature_trace_lift", "bh_lift"]);
    lines.push(Line { criterion: 2, title: "lift identities converge", pass, detail });

    let (pass, detail) = converges(check(&report, "dstar_d"));
    lines.push(Line { criterion: 3, title: "rough sublaplacian is -D*D", pass, detail });

    let (sa, sa_detail) = converges(check(&report, "self_adjoint"));
    let np = residuals(check(&report, "nonpositive"))[0];
    lines.push(Line {
        criterion: 4,
        title: "self-adjoint and nonpositive",
        pass: sa && np <= NONPOSITIVE_MAX,
        detail: format!("{sa_detail}; max (LV,V) = {np:.3e} (tol {NONPOSITIVE_MAX:e})"),
    });

    let runs: Vec<(u64, (f64, Option<f64>, bool))> = VARIATION_SEEDS.iter().map(|&seed| (seed, first_variation_on_seed(seed))).collect();
    let pass = runs.iter().all(|(_, (worst, order, verdict))| *worst < VARIATION_REL && order.is_some_and(|o| o >= VARIATION_MIN_ORDER) && *verdict);
    let detail = runs
        .iter()
        .map(|(seed, (worst, order, _))| format!("seed {seed}: max gap {worst:.2e}, refinement order {}", order.map(|o| format!("{o:.2}")).unwrap_or_else(|| "-".into())))
        .collect::<Vec<_>>()
        .join("; ");
    lines.push(Line {
        criterion: 5,
        title: "first variation matches difference quotient",
        pass: pass && check(&report, "first_variation")["verdict"] == "pass",
        detail: format!("{VARIATION_PAIRS} sphere pairs at {VARIATION_POINTS}^3, tol {VARIATION_REL:e}, min order {VARIATION_MIN_ORDER}; {detail}"),
    });

    let (sym, sym_detail) = converges(check(&report, "symbol"));
    let degenerate = symbol_along_contact_form();
    lines.push(Line {
        criterion: 6,
        title: "principal symbol",
        pass: sym && degenerate <= SYMBOL_DEGENERATE_MAX,
        detail: format!("{sym_detail}; symbol along theta {degenerate:.2e} (tol {SYMBOL_DEGENERATE_MAX:e})"),
    });

    let inv = residuals(check(&report, "inverse_identities"))[0];
    let levi = residuals(check(&report, "reciprocal_levi"))[0];
    lines.push(Line {
        criterion: 7,
        title: "algebraic Fefferman identities",
        pass: inv < ALGEBRAIC_MAX && levi < ALGEBRAIC_MAX,
        detail: format!("inverse identities {inv:.2e}, reciprocal Levi {levi:.2e} at 100 points (tol {ALGEBRAIC_MAX:e})"),
    });

    let (flat, flat_detail) = converges(check(&report, "flat_reduction"));
    let flow_cfg = RunConfig::parse(&format!("target = flat\nflow.initial = bump\ngrid.dims = {FLOW_POINTS}\nflow.max_steps = {FLOW_STEPS}\n")).unwrap();
    let flow = cmd_flow(&flow_cfg, &dir.path().join("flow")).unwrap();
    let recs = &flow.trace.records;
    let (initial, last) = (recs[0].bh_l2, recs.last().unwrap().bh_l2);
    let monotone = flow.trace.is_monotone();
    lines.push(Line {
        criterion: 8,
        title: "flat-target reduction and flow",
        pass: flat && monotone && last < FLOW_REDUCTION * initial && flow.steps <= FLOW_STEPS,
        detail: format!(
            "{flat_detail}; flow monotone={monotone}, |BH| {initial:.3e} -> {last:.3e} ({:.3}% of initial, tol {:.0}%) in {} steps",
            100.0 * last / initial,
            100.0 * FLOW_REDUCTION,
            flow.steps
        ),
    });

    let cases: [(Mutation, &[&str]); 5] = [
        (Mutation::CurvatureSign, &["first_variation", "bh_lift"]),
        (Mutation::DropLeibnizTerm, &["leibniz"]),
        (Mutation::FrameNormalization, &["symbol", "lee_identity"]),
        (Mutation::DropChristoffelProduct, &["route_equivalence_rough"]),
        (Mutation::FiberWeight, &["energy_ratio"]),
    ];
    let results: Vec<(bool, String)> = cases.iter().map(|(m, names)| mutation_catches(*m, names)).collect();
    lines.push(Line {
        criterion: 9,
        title: "mutation sensitivity",
        pass: results.iter().all(|r| r.0),
        detail: results.into_iter().map(|r| r.1).collect::<Vec<_>>().join("; "),
    });

    let (second_code, second) = run_verify(&second_dir);
    lines.push(Line {
        criterion: 10,
        title: "deterministic report",
        pass: bytes == second && code == 0 && second_code == 0,
        detail: format!("report.json {} bytes, identical={}, exit codes {code}/{second_code}", bytes.len(), bytes == second),
    });

    let mut failures = 0;
    for l in &lines {
        if !l.pass {
            failures += 1;
        }
        println!("criterion {:>2} {} {:<45} {}", l.criterion, if l.pass { "PASS" } else { "FAIL" }, l.title, l.detail);
    }
    println!("acceptance: {}/{} criteria passed in {:.1}s", lines.len() - failures, lines.len(), clock.elapsed().as_secs_f64());
    if failures > 0 {
        std::process::exit(1);
    }
}
