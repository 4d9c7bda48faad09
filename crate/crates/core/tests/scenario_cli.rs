use std::fs;
use std::path::PathBuf;
use std::process::Command;

use freqctl::network::BusKind;
use freqctl::scenario::{compare_cases_in, execute, load_scenario, run, Scenario};

fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(format!(
        "{}/fixtures/{name}.json",
        env!("CARGO_MANIFEST_DIR")
    ))
}

fn fixture(name: &str) -> Scenario {
    load_scenario(fixture_path(name)).unwrap()
}

#[test]
fn three_bus_fixture_shape() {
    let s = fixture("three_bus");
    let kinds: Vec<BusKind> = s.buses.iter().map(|b| b.kind).collect();
    assert_eq!(kinds, [BusKind::Generator, BusKind::Load, BusKind::Load]);
    let system = s.closed_loop().unwrap();
    assert_eq!(system.model().n_generators(), 1);
}

#[test]
fn report_agrees_with_direct_solve() {
    let s = fixture("three_bus");
    let system = s.closed_loop().unwrap();
    let direct = system
        .ofc_problem(&s.final_constants())
        .unwrap()
        .solve()
        .unwrap();
    let report = execute(&s, None).unwrap().report;
    assert!((report.lambda_star - direct.lambda_star).abs() <= 1e-4);
    assert!((report.terminal_deviation - direct.lambda_star).abs() <= 1e-4);
    // Under-frequency event: nadir <= terminal deviation <= 0 on every bus.
    for (n, w) in report.nadir.iter().zip(&report.terminal_omega) {
        assert!(*n <= *w && *w <= 0.0, "{n} {w}");
    }
    assert!(report.settled);
}

fn parse_row(line: &str) -> Vec<Option<f64>> {
    line.split(',')
        .map(|f| {
            if f.is_empty() {
                None
            } else {
                Some(f.parse().unwrap())
            }
        })
        .collect()
}

#[test]
fn csv_is_reproducible_and_matches_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = fixture("three_bus_certified");
    s.output.dir = Some(dir.path().join("a"));
    let first = run(&s).unwrap();
    s.output.dir = Some(dir.path().join("b"));
    let second = run(&s).unwrap();
    let a = fs::read(first.csv_path.as_ref().unwrap()).unwrap();
    let b = fs::read(second.csv_path.as_ref().unwrap()).unwrap();
    assert_eq!(a, b);

    let text = String::from_utf8(a).unwrap();
    let last = parse_row(text.lines().last().unwrap());
    let n = first.terminal_omega.len();
    let g = first.terminal_power.len();
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-11 * x.abs().max(1e-3);
    assert!(close(last[0].unwrap(), first.terminal_time));
    for j in 0..n {
        assert!(close(last[1 + n + j].unwrap(), first.terminal_omega[j]));
    }
    for j in 0..g {
        assert!(close(last[1 + 2 * n + j].unwrap(), first.terminal_valve[j]));
        assert!(close(
            last[1 + 2 * n + g + j].unwrap(),
            first.terminal_power[j]
        ));
    }
    let v = last.last().unwrap().unwrap();
    assert!((v - first.terminal_v_total.unwrap()).abs() <= 1e-11 * v.abs().max(1e-20));

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.report_path.unwrap()).unwrap()).unwrap();
    assert_eq!(json["verdict"], "Certified");
}

#[test]
fn uncertified_run_leaves_energy_column_empty() {
    let s = fixture("three_bus");
    let out = execute(&s, None).unwrap();
    let csv = freqctl::scenario::trajectory_csv(&out.system, &out.trajectory);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(',')));
}

#[test]
fn zero_disturbance_comparison_is_flat() {
    let mut s = fixture("nine_bus");
    s.disturbances.clear();
    s.run.t_end = 2.0;
    let r = compare_cases_in(&s, None).unwrap();
    assert!((r.capacity_case1 - r.capacity_case2).abs() <= 1e-9);
    for case in [&r.case1, &r.case2] {
        assert!(case.worst_nadir.abs() <= 1e-12);
        assert!(case.terminal_deviation.abs() <= 1e-9);
        assert!((case.terminal_hz - 60.0).abs() <= 1e-9);
    }
}

#[test]
fn comparison_cases_split_capacity() {
    let s = fixture("nine_bus");
    let c1 = s.comparison_case(1).unwrap();
    let c2 = s.comparison_case(2).unwrap();
    let controlled = |s: &Scenario, kind: BusKind| {
        s.buses
            .iter()
            .filter(|b| b.kind == kind && b.control.controllable)
            .count()
    };
    assert_eq!(controlled(&c1, BusKind::Generator), 4);
    assert_eq!(controlled(&c1, BusKind::Load), 0);
    assert_eq!(controlled(&c2, BusKind::Generator), 2);
    assert_eq!(controlled(&c2, BusKind::Load), 5);
    let (a, b) = (
        c1.control_capacity().unwrap(),
        c2.control_capacity().unwrap(),
    );
    assert!((a - 1.2).abs() <= 1e-12 && (a - b).abs() <= 1e-9);
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_freqctl"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn cli_success_and_output_files() {
    let path = fixture_path("three_bus");
    let (code, stdout, _) = cli(&["ofc", path.to_str().unwrap()]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(v["lambda_star"].as_f64().unwrap() < 0.0);

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let (code, _, err) = cli(&[
        "simulate",
        path.to_str().unwrap(),
        "--t-end",
        "2",
        "--dt",
        "0.002",
        "--out-dir",
        out,
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(dir.path().join("three_bus.csv").exists());
    assert!(dir.path().join("three_bus.report.json").exists());

    let cert = fixture_path("three_bus_certified");
    let (code, stdout, _) = cli(&["certify", cert.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["certificate"]["verdict"], "Certified");
    assert!(v["audit"][0]["max_excess"].as_f64().unwrap() <= 0.0);
}

fn write_variant(
    dir: &std::path::Path,
    name: &str,
    edit: impl FnOnce(&mut serde_json::Value),
) -> PathBuf {
    let mut v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fixture_path("three_bus")).unwrap()).unwrap();
    edit(&mut v);
    let path = dir.join(name);
    fs::write(&path, v.to_string()).unwrap();
    path
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_variant(dir.path(), "bad.json", |v| {
        v["buses"][0]["control"]["capacity"] = (-0.1).into();
    });
    let (code, _, err) = cli(&["ofc", bad.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("capacity"), "{err}");

    let (code, _, _) = cli(&["ofc", "/definitely/not/here.json"]);
    assert_eq!(code, 2);

    let weak = write_variant(dir.path(), "weak.json", |v| {
        for line in v["lines"].as_array_mut().unwrap() {
            line["y"] = 0.2.into();
        }
    });
    let (code, _, err) = cli(&["equilibrium", weak.to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("power-flow"), "{err}");
}
