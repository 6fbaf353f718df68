//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion before asserting.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use dsgd_rer::estimator::{ols_pooled, run_dsgd_rer, run_sgd_rer, StepSizePolicy};
use dsgd_rer::harness::config::ExperimentConfig;
use dsgd_rer::harness::plot::curves;
use dsgd_rer::harness::summary::{summarize, Summary};
use dsgd_rer::harness::{run_experiment, verify, JobOutput};
use dsgd_rer::lti::Simulator;
use dsgd_rer::network::{make_topology, TopologyKind};
use dsgd_rer::{error_metric, ErrorTrace};

fn report(criterion: &str, passed: bool, detail: String) {
    println!("{} criterion {criterion}: {detail}", if passed { "PASS" } else { "FAIL" });
    assert!(passed, "criterion {criterion} failed: {detail}");
}

fn size_runs() -> &'static [JobOutput] {
    static RUNS: OnceLock<Vec<JobOutput>> = OnceLock::new();
    RUNS.get_or_init(|| run_experiment(&ExperimentConfig::load("size-desk").unwrap(), 0).unwrap())
}

fn topology_runs() -> &'static [JobOutput] {
    static RUNS: OnceLock<Vec<JobOutput>> = OnceLock::new();
    RUNS.get_or_init(|| run_experiment(&ExperimentConfig::load("topology-desk").unwrap(), 0).unwrap())
}

fn summary_of(runs: &[JobOutput]) -> Summary {
    let traces: Vec<ErrorTrace> = runs.iter().map(|r| r.trace.clone()).collect();
    summarize(&traces).unwrap()
}

fn final_mean(s: &Summary, group: &str) -> f64 {
    s.row(group).unwrap_or_else(|| panic!("missing group {group}")).final_mean
}

#[test]
fn criterion_1_size_scaling() {
    let s = summary_of(size_runs());
    let e1 = final_mean(&s, "sgd-rer@m1/identity");
    let e5 = final_mean(&s, "dsgd-rer@m5/cyclic");
    let e20 = final_mean(&s, "dsgd-rer@m20/cyclic");
    let ratio = e20 / e5;
    let passed = e1 > e5 && e5 > e20 && (0.3..=0.8).contains(&ratio);
    report(
        "1 (size scaling)",
        passed,
        format!("m=1 {e1:.5}, m=5 {e5:.5}, m=20 {e20:.5}; m20/m5 = {ratio:.3} (band [0.3, 0.8])"),
    );
}

#[test]
fn criterion_2_topology_ordering() {
    let s = summary_of(topology_runs());
    let a = final_mean(&s, "dsgd-rer@m5/identity");
    let b = final_mean(&s, "dsgd-rer@m5/cyclic");
    let c = final_mean(&s, "dsgd-rer@m5/complete");
    let beta = make_topology(
        TopologyKind::Cyclic {
            degree: 2,
            self_weight: 0.3,
        },
        5,
    )
    .unwrap()
    .beta();
    let passed = a >= b && b >= c && a / c > 1.2 && (beta - 0.5163).abs() < 1e-4;
    report(
        "2 (topology ordering)",
        passed,
        format!("Net A {a:.5} >= Net B {b:.5} >= Net C {c:.5}; A/C = {:.3} (> 1.2); beta(Net B) = {beta:.4}", a / c),
    );
}

#[test]
fn criterion_3_bias_separation() {
    let runs = topology_runs();
    let s = summary_of(runs);
    let rer = final_mean(&s, "dsgd-rer@m5/complete");
    let vanilla = final_mean(&s, "vanilla-dsgd@m5/complete");
    let traces: Vec<ErrorTrace> = runs
        .iter()
        .filter(|r| r.trace.algo == "vanilla-dsgd@m5/complete")
        .map(|r| r.trace.clone())
        .collect();
    // Relative change of the seed-averaged curve over the last quarter.
    let curve = &curves(&traces)[0].points;
    let start = curve[curve.len() * 3 / 4].1;
    let end = curve[curve.len() - 1].1;
    let slope = (end - start) / start;
    let passed = vanilla >= 2.0 * rer && slope >= -0.10;
    report(
        "3 (bias separation)",
        passed,
        format!(
            "vanilla {vanilla:.5} vs DSGD-RER {rer:.5} (x{:.2}, need >= 2); last-quartile change {:.2}% (need >= -10%)",
            vanilla / rer,
            100.0 * slope
        ),
    );
}

#[test]
fn criterion_4_reduction_oracle() {
    let cfg = ExperimentConfig::load("size-desk").unwrap();
    let system = cfg.system().unwrap();
    let layout = cfg.layout().unwrap();
    let opts = cfg.run_options();
    let identity = make_topology(TopologyKind::Identity, 1).unwrap();
    let mut identical = 0;
    for seed in [1, 2, 3] {
        let net = run_dsgd_rer(&system, &identity, &layout, StepSizePolicy::PerAgent, seed, &opts).unwrap();
        let mut source = Simulator::for_agent(&system, 0, seed, opts.init, opts.noise);
        let gamma = StepSizePolicy::PerAgent.resolve(std::slice::from_ref(&source), layout.horizon()).unwrap()[0];
        let solo = run_sgd_rer(&mut source, system.a(), &layout, gamma, &opts).unwrap();
        let bits = |ms: &[dsgd_rer::Matrix]| -> Vec<u64> { ms.iter().flat_map(|m| m.as_slice().iter().map(|v| v.to_bits())).collect() };
        let same = bits(&net.tail_averages) == bits(&solo.tail_averages)
            && bits(&net.last_iterates) == bits(&solo.last_iterates)
            && net.trace.rows.iter().zip(&solo.trace.rows).all(|(a, b)| a.error.to_bits() == b.error.to_bits())
            && net.trace.rows.len() == solo.trace.rows.len();
        identical += usize::from(same);
    }
    report(
        "4 (reduction oracle)",
        identical == 3,
        format!("{identical}/3 seeds bitwise identical between m=1 DSGD-RER and standalone SGD-RER"),
    );
}

#[test]
fn criterion_5_ols_proximity() {
    let cfg = ExperimentConfig::load("size-desk").unwrap();
    let system = cfg.system().unwrap();
    let opts = cfg.run_options();
    let runs = size_runs();
    let mut worst_ols: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for &seed in &cfg.run.seeds {
        let ols = ols_pooled(&system, 5, cfg.run.horizon, seed, &opts).unwrap();
        let ols_err = error_metric(&ols, system.a()).unwrap();
        let rer = runs
            .iter()
            .find(|r| r.trace.algo == "dsgd-rer@m5/cyclic" && r.trace.seed == seed)
            .unwrap()
            .trace
            .final_mean_error()
            .unwrap();
        worst_ols = worst_ols.max(ols_err);
        worst_ratio = worst_ratio.max(rer / ols_err);
    }
    report(
        "5 (OLS proximity)",
        worst_ols < 0.02 && worst_ratio <= 10.0,
        format!("worst pooled OLS error {worst_ols:.5} (< 0.02); worst DSGD-RER/OLS ratio {worst_ratio:.2} (<= 10)"),
    );
}

#[test]
fn criterion_6_property_suite() {
    let start = std::time::Instant::now();
    let checks = verify::run_verify(false).unwrap();
    let failed: Vec<&str> = checks.iter().filter(|c| c.hard && !c.passed).map(|c| c.name.as_str()).collect();
    for c in &checks {
        println!("    {} {}", if c.passed { "ok  " } else if c.hard { "FAIL" } else { "info" }, c.name);
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "6 (property suite)",
        failed.is_empty() && elapsed < 60.0,
        format!("{} checks, failed: {failed:?}, {elapsed:.1}s", checks.len()),
    );
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_7_determinism() {
    let root = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (run, jobs) in [(0, "1"), (1, "1"), (2, "3")] {
        let dir = root.path().join(format!("run{run}"));
        let status = Command::new(env!("CARGO_BIN_EXE_dsgd-rer"))
            .args(["sweep-size", "size-desk", "--jobs", jobs, "--out"])
            .arg(&dir)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        outputs.push(csv_files(&dir));
    }
    let count = outputs[0].len();
    let passed = count == 15 && outputs[1] == outputs[0] && outputs[2] == outputs[0];
    report(
        "7 (determinism)",
        passed,
        format!("{count} CSVs; repeat run identical: {}; --jobs 3 vs 1 identical: {}", outputs[1] == outputs[0], outputs[2] == outputs[0]),
    );
}
