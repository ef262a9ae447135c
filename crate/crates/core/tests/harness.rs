use std::collections::BTreeMap;
use std::process::Command;

use green_edge::controller::Algorithm;
use green_edge::harness::{
    compare, emit_report, read_decisions, render_text, run_on, run_scenario, sibling,
    sweep_bs_group, ForecastSource, Metric, ReportFormat, Scenario, ScenarioConfig, COST_HEADER,
};
use green_edge::Error;

fn perfect(n: usize, days: usize) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::reference(n, 0.005);
    cfg.forecaster = ForecastSource::Perfect;
    cfg.days = days;
    cfg.history_days = 2;
    cfg
}

#[test]
fn max_provision_holds_every_container() {
    let mut cfg = perfect(6, 1);
    cfg.algorithm = Algorithm::MaxProvision;
    let report = run_scenario(&cfg).unwrap();
    assert_eq!(report.rows.len(), 48);
    assert!(report.savings.is_none());
    let first = report.rows[0].cost.mec;
    for r in &report.rows {
        assert_eq!(r.containers, cfg.control.mec.c_max);
        assert_eq!(r.active_bs, 6);
        assert!(r.nic_active);
        // only the cache term follows the slot's traffic
        assert!((r.cost.mec - r.cost.cc - (first - report.rows[0].cost.cc)).abs() < 1e-6);
    }
}

#[test]
fn zero_traffic_keeps_the_server_minimal() {
    let mut cfg = perfect(4, 1);
    cfg.traces.traffic_peak = 0.0;
    let report = run_scenario(&cfg).unwrap();
    for r in &report.rows {
        assert_eq!(r.l_in, 0.0);
        assert_eq!(r.containers, cfg.control.mec.beta);
        assert_eq!(r.cost.dr, 0.0);
        assert!(!r.nic_active);
    }
    assert!(report.violations.is_empty());
}

#[test]
fn repeated_runs_are_identical() {
    let cfg = perfect(8, 1);
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(a, b);

    let mut irmc = cfg.clone();
    irmc.algorithm = Algorithm::Irmc;
    assert_eq!(run_scenario(&irmc).unwrap(), run_scenario(&irmc).unwrap());
}

#[test]
fn serial_and_parallel_search_agree() {
    let mut cfg = perfect(6, 1);
    let a = run_scenario(&cfg).unwrap();
    cfg.control.parallel = false;
    assert_eq!(a, run_scenario(&cfg).unwrap());
}

#[test]
fn comparing_a_run_with_itself_saves_nothing() {
    let cfg = perfect(6, 1);
    let sc = Scenario::build(&cfg).unwrap();
    let a = run_on(&sc, Algorithm::Genm).unwrap();
    for metric in [Metric::Mec, Metric::Comm, Metric::Edge] {
        let t = compare(&a, &a, metric).unwrap();
        assert_eq!(t.overall, 0.0);
        assert_eq!(t.hourly.len(), 24);
        assert!(t.hourly.iter().all(|(_, v)| *v == 0.0));
    }

    let mut short = a.clone();
    short.rows.pop();
    assert!(compare(&a, &short, Metric::Mec).is_err());
}

#[test]
fn controllers_never_cost_more_than_the_baseline() {
    for n in [3, 9] {
        let cfg = perfect(n, 1);
        let sc = Scenario::build(&cfg).unwrap();
        let base = run_on(&sc, Algorithm::MaxProvision).unwrap();
        for alg in [Algorithm::Genm, Algorithm::Irmc] {
            let run = run_on(&sc, alg).unwrap();
            assert!(
                run.total(Metric::Edge) <= base.total(Metric::Edge),
                "{alg} at n={n}"
            );
        }
    }
}

#[test]
fn sweep_of_one_size() {
    let cfg = perfect(5, 1);
    let points = sweep_bs_group(&cfg, &[7], Metric::Comm).unwrap();
    assert_eq!(points.len(), 1);
    assert_eq!(points[0].n_bs, 7);
    let expected = 100.0 * (1.0 - points[0].algorithm_total / points[0].baseline_total);
    assert!((points[0].savings - expected).abs() < 1e-9);
    assert!(matches!(
        sweep_bs_group(&cfg, &[], Metric::Comm),
        Err(Error::Config(_))
    ));
}

#[test]
fn csv_report_round_trips() {
    let cfg = perfect(5, 1);
    let report = run_scenario(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    emit_report(&report, &path, ReportFormat::Csv).unwrap();

    let decisions = read_decisions(&path).unwrap();
    assert_eq!(decisions.len(), 48);
    let expected = report.decisions();
    for (a, b) in decisions.iter().zip(&expected) {
        assert_eq!(a, b);
    }
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 49);
    assert_eq!(
        text.lines().next().unwrap(),
        "slot,algorithm,L_in,C,M,zeta,active_bs_count,J,theta_edge"
    );

    let costs = std::fs::read_to_string(sibling(&path, "costs")).unwrap();
    assert_eq!(costs.lines().count(), 49);
    assert_eq!(costs.lines().next().unwrap(), COST_HEADER.join(","));
    let ledger = std::fs::read_to_string(sibling(&path, "ledger")).unwrap();
    assert_eq!(ledger.lines().count(), 1 + 48 * 6);
    let summary = std::fs::read_to_string(sibling(&path, "summary")).unwrap();
    assert!(summary.contains("mean_savings_mec_pct,"));
}

#[test]
fn text_report_states_mean_savings() {
    let cfg = perfect(4, 1);
    let report = run_scenario(&cfg).unwrap();
    let text = render_text(&report);
    assert!(text.contains("mean savings vs max-provision: MEC "));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.txt");
    emit_report(&report, &path, ReportFormat::Text).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
}

#[test]
fn corrupt_decision_log_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(
        &path,
        "slot,algorithm,L_in,C,M,zeta,active_bs_count,J,theta_edge\n0,genm,1,1,1,1,2,3,4\n1,genm,x,1,1,1,2,3,4\n",
    )
    .unwrap();
    match read_decisions(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn energy_ledger_closes_per_site() {
    for alg in [Algorithm::Genm, Algorithm::Irmc, Algorithm::MaxProvision] {
        let mut cfg = perfect(6, 2);
        cfg.algorithm = alg;
        let report = run_scenario(&cfg).unwrap();
        let mut residual: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
        for e in &report.ledger {
            let r = residual.entry(e.site.as_str()).or_default();
            r.0 += e.residual();
            r.1 += e.harvested + e.purchased + e.consumed;
        }
        assert_eq!(residual.len(), 7);
        for (site, (res, scale)) in residual {
            assert!(res.abs() <= 1e-6 * scale.max(1.0), "{alg} {site}: {res}");
        }
        for e in &report.ledger {
            assert!(e.after >= 0.0);
        }
    }
}

#[test]
fn cli_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_green-edge");
    let status = |args: &[&str]| Command::new(bin).args(args).output().unwrap().status.code();
    assert_eq!(status(&["simulate", "--set", "n_bs=abc"]), Some(3));
    assert_eq!(status(&["simulate", "--set", "no_such_key=1"]), Some(3));
    assert_eq!(status(&["simulate", "--set", "gamma=1.5"]), Some(3));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "n_bs = 4\nthis line has no equals sign\n").unwrap();
    assert_eq!(
        status(&["simulate", "--config", cfg.to_str().unwrap()]),
        Some(3)
    );

    let out = Command::new(bin)
        .args([
            "simulate",
            "--set",
            "forecaster=perfect",
            "--set",
            "n_bs=3",
            "--set",
            "days=1",
            "--set",
            "history_days=2",
            "--format",
            "text",
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean savings vs max-provision"));
}
