mod common;

use std::process::Command;

use common::*;
use metpeel::ensemble::{parse_ensemble, to_json};
use metpeel::harness::{
    analytic_csv, csv_body, run_campaign, success_rate, version_line, Campaign, MeanVar, Verdict,
};
use metpeel::pathsim::Schedule;
use proptest::prelude::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_metpeel"))
}

fn ra_file(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("ra.json");
    std::fs::write(&path, to_json(&ra().spec())).unwrap();
    path
}

#[test]
fn tiny_campaign_is_informational() {
    let c = Campaign::new(ra().spec(), vec![10], vec![0.5], 1);
    let r = run_campaign(&c).unwrap();
    let report = &r.points[0].report;
    assert_eq!(report.verdict, Verdict::Informational);
    assert_eq!(report.note.as_deref(), Some("low-N, informational"));
    assert!(r.passed());
}

#[test]
fn zero_erasure_always_succeeds() {
    let c = Campaign::new(regular36().spec(), vec![1000], vec![0.0], 20);
    let r = run_campaign(&c).unwrap();
    let p = &r.points[0];
    assert_eq!(p.rate.rate, 1.0);
    assert_eq!(p.empirical.t.len(), 1);
    assert!(p.empirical.means(0).iter().all(|&v| v == 0.0));
    assert!(p.analytic.completed());
}

#[test]
fn full_erasure_of_a_regular_code_never_succeeds() {
    let c = Campaign::new(regular36().spec(), vec![1000], vec![1.0], 10);
    let rates = success_rate(&c).unwrap();
    assert_eq!(rates[0].successes, 0);
}

#[test]
fn success_rate_agrees_with_campaign() {
    let mut c = Campaign::new(ra().spec(), vec![2000], vec![0.4, 0.7], 12);
    c.master_seed = 5;
    let rates = success_rate(&c).unwrap();
    let full = run_campaign(&c).unwrap();
    assert_eq!(rates, full.rates());
    assert!(rates[0].rate > rates[1].rate);
}

#[test]
fn invalid_campaigns_are_rejected() {
    let base = Campaign::new(ra().spec(), vec![100], vec![0.5], 2);
    let mut c = base.clone();
    c.trials = 0;
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.n_list = vec![9];
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.eps = vec![1.5];
    assert!(c.validate().is_err());
    let mut c = base.clone();
    c.direction = Some(vec![1.0, 1.0]);
    assert!(c.validate().is_err());
    let mut c = base;
    c.schedule = Schedule::priority(&[1, 3]);
    assert!(c.validate().is_err());
}

#[test]
fn exported_files_follow_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = Campaign::new(ra().spec(), vec![2000], vec![0.55], 8);
    c.out_dir = Some(dir.path().to_path_buf());
    c.resolution = 32;
    c.threshold_tol = Some(1e-3);
    let r = run_campaign(&c).unwrap();
    assert_eq!(r.files.len(), 3);

    let analytic = std::fs::read_to_string(dir.path().join("analytic_N2000_eps0.55.csv")).unwrap();
    assert!(!analytic.contains('\r'));
    let mut lines = analytic.lines();
    assert_eq!(lines.next().unwrap(), version_line());
    assert_eq!(
        lines.next().unwrap(),
        "t,xbar,x_1,x_2,e_1,e_2,mu1_1,mu1_2,nu_total"
    );
    let share = [2.0 / 3.0, 1.0 / 3.0];
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(v.len(), 9);
        assert!((v[1] - (share[0] * v[2] + share[1] * v[3])).abs() < 1e-12);
    }

    let empirical =
        std::fs::read_to_string(dir.path().join("empirical_N2000_eps0.55.csv")).unwrap();
    let header: Vec<&str> = empirical.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(header[0], "t");
    assert!(header.contains(&"count_nu_<0_1;2_0>"));
    assert!(header.contains(&"count_nu_<1_0;0_3>"));
    assert!(header.contains(&"count_mu_<2_1>"));
    assert!(header.contains(&"mu1_emp_1") && header.contains(&"mu1_emp_2"));
    for line in empirical.lines().skip(2) {
        assert_eq!(line.split(',').count(), header.len());
    }

    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("results.json")).unwrap())
            .unwrap();
    for key in ["ensemble", "eps", "threshold", "outcome", "seeds"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    let t = &json["threshold"];
    assert!((t["value"].as_f64().unwrap() - 0.6174).abs() < 2e-3);
    assert_eq!(t["bracket"].as_array().unwrap().len(), 2);
    let doc = serde_json::to_string(&json["ensemble"]).unwrap();
    assert_eq!(parse_ensemble(&doc).unwrap(), ra().spec());
}

#[test]
fn analytic_csv_body_skips_only_the_version_line() {
    let c = Campaign::new(ra().spec(), vec![500], vec![0.5], 1);
    let r = run_campaign(&c).unwrap();
    let text = analytic_csv(&r.points[0].analytic);
    let body = csv_body(&text);
    assert!(body.starts_with("t,xbar,"));
    assert_eq!(text.len(), body.len() + version_line().len() + 1);
}

#[test]
fn cli_analyze_prints_initial_degree_one_fractions() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["analyze", "--ensemble"])
        .arg(ra_file(dir.path()))
        .args(["--eps", "0.6175"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("mu_e(eps,1) = (0, 0.14630625)"), "{text}");
}

#[test]
fn cli_threshold_reports_ra_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["threshold", "--ensemble"])
        .arg(ra_file(dir.path()))
        .args(["--tol", "1e-4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let value: f64 = text.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!((value - 0.6175).abs() < 2e-3, "{text}");
}

#[test]
fn cli_exit_codes() {
    let out = bin()
        .args(["path", "--ensemble", "missing.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));

    let out = bin().args(["threshold", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "nu = r1*x1^3 ; mu = x1^6").unwrap();
    let out = bin()
        .args(["analyze", "--ensemble"])
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // fixed schedules need an explicit opt-in
    let ra = ra_file(dir.path());
    let out = bin()
        .args(["path", "--ensemble"])
        .arg(&ra)
        .args(["--eps", "0.3", "--schedule", "fixed:1,0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // an impossible tolerance fails the comparison
    let out = bin()
        .args(["compare", "--ensemble"])
        .arg(&ra)
        .args([
            "--eps",
            "0.5",
            "--N",
            "2000",
            "--trials",
            "4",
            "--resolution",
            "16",
            "--tolerance",
            "1e-9",
        ])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );

    let out = bin()
        .env("METPEEL_THREADS", "zero")
        .args(["simulate", "--ensemble"])
        .arg(&ra)
        .args(["--eps", "0.5", "--N", "100", "--trials", "2"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cli_path_and_schedules() {
    let dir = tempfile::tempdir().unwrap();
    let ra = ra_file(dir.path());
    let out = bin()
        .args(["path", "--ensemble"])
        .arg(&ra)
        .args(["--eps", "0.6175", "--resolution", "50", "--out"])
        .arg(dir.path().join("p"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("p/analytic_eps0.6175.csv")).unwrap();
    let first: Vec<&str> = csv.lines().nth(2).unwrap().split(',').collect();
    // type-1 degree-one fraction starts at zero
    assert_eq!(first[6].parse::<f64>().unwrap(), 0.0);

    let out = bin()
        .args(["schedules", "--ensemble"])
        .arg(&ra)
        .args(["--tol", "1e-3"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(
        text.contains("priority:2,1") && text.contains("(agree)"),
        "{text}"
    );

    let out = bin()
        .args(["simulate", "--ensemble"])
        .arg(&ra)
        .args(["--eps", "0.5", "--N", "10", "--trials", "1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("low-N, informational"));
}

/// Success-rate waterfall near the analytic threshold at N = 1e5: the rate
/// is above 1/2 at eps* - 0.01 and below it at eps* + 0.01. Below threshold
/// the rate sits near sqrt(1 - eps) because of accumulator cycles.
#[test]
fn success_rate_crosses_one_half_near_threshold() {
    let eps_star = 0.6174;
    let mut c = Campaign::new(ra().spec(), vec![100_000], vec![eps_star - 0.01], 150);
    c.master_seed = 17;
    let below = success_rate(&c).unwrap()[0].rate;
    c.eps = vec![eps_star + 0.01];
    c.trials = 40;
    let above = success_rate(&c).unwrap()[0].rate;
    assert!(below > 0.5 && above < 0.5, "{below} {above}");
}

proptest! {
    #[test]
    fn mean_var_merge_is_order_free(xs in prop::collection::vec(-1e3f64..1e3, 1..60), split in 0usize..60) {
        let split = split % xs.len();
        let mut whole = MeanVar::new();
        xs.iter().for_each(|&x| whole.push(x));
        let (mut a, mut b) = (MeanVar::new(), MeanVar::new());
        xs[..split].iter().for_each(|&x| a.push(x));
        xs[split..].iter().for_each(|&x| b.push(x));
        let mut ab = a;
        ab.merge(&b);
        let mut ba = b;
        ba.merge(&a);
        prop_assert_eq!(ab.count(), whole.count());
        prop_assert!((ab.mean() - whole.mean()).abs() < 1e-9);
        prop_assert!((ab.mean() - ba.mean()).abs() < 1e-9);
        prop_assert!((ab.variance() - whole.variance()).abs() < 1e-6 * whole.variance().max(1.0));
    }
}
