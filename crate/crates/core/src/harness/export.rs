use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use super::campaign::{Campaign, CampaignResult, EmpiricalTrajectory};
use super::HarnessError;
use crate::ensemble::to_json;
use crate::pathsim::PathResult;

/// First line of every exported CSV; excluded from the determinism contract.
pub fn version_line() -> String {
    format!("# metpeel {}", env!("CARGO_PKG_VERSION"))
}

fn csv_text(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:?}")))
            .expect("in-memory write");
    }
    let bytes = w.into_inner().expect("in-memory flush");
    let mut text = version_line();
    text.push('\n');
    text.push_str(&String::from_utf8(bytes).expect("ASCII output"));
    text
}

/// The CSV text without leading `#` comment lines.
pub fn csv_body(text: &str) -> String {
    text.split_inclusive('\n')
        .skip_while(|l| l.starts_with('#'))
        .collect()
}

/// Mean-path trajectory: `t, xbar, x_i, e_i, mu1_i, nu_total`.
pub fn analytic_csv(path: &PathResult) -> String {
    let ne = path.trajectory.first().map_or(0, |p| p.x.len());
    let mut header = vec!["t".to_string(), "xbar".to_string()];
    for prefix in ["x", "e", "mu1"] {
        header.extend((1..=ne).map(|i| format!("{prefix}_{i}")));
    }
    header.push("nu_total".into());
    let rows = path.trajectory.iter().map(|p| {
        let mut r = vec![p.t, p.xbar];
        r.extend(&p.x);
        r.extend(&p.e);
        r.extend(&p.mu1);
        r.push(p.nu_total);
        r
    });
    csv_text(&header, rows)
}

/// Mean empirical trajectory: `t` followed by the normalized count columns.
pub fn empirical_csv(emp: &EmpiricalTrajectory) -> String {
    let mut header = vec!["t".to_string()];
    header.extend(emp.columns.iter().cloned());
    let rows = emp.t.iter().enumerate().map(|(k, &t)| {
        let mut r = vec![t];
        r.extend(emp.means(k));
        r
    });
    csv_text(&header, rows)
}

pub fn results_json(campaign: &Campaign, result: &CampaignResult) -> Value {
    let ensemble: Value =
        serde_json::from_str(&to_json(&campaign.spec)).expect("ensemble document is JSON");
    let threshold = result.threshold.as_ref().map(|t| {
        json!({
            "value": t.eps_star,
            "bracket": [t.bracket.0, t.bracket.1],
            "schedule": t.schedule_used.to_string(),
        })
    });
    let points: Vec<Value> = result
        .points
        .iter()
        .map(|p| {
            json!({
                "n": p.rate.n,
                "eps": p.rate.eps,
                "trials": p.rate.trials,
                "successes": p.rate.successes,
                "success_rate": p.rate.rate,
                "path_completed": p.analytic.completed(),
                "path_t_end": p.analytic.t_end(),
                "comparison": p.report,
            })
        })
        .collect();
    json!({
        "ensemble": ensemble,
        "eps": campaign.eps,
        "threshold": threshold,
        "outcome": {
            "schedule": campaign.schedule.to_string(),
            "passed": result.passed(),
            "points": points,
        },
        "seeds": {
            "master": campaign.master_seed,
            "derivation": "splitmix64(master, point, trial)",
        },
    })
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf, HarnessError> {
    fs::write(&path, text).map_err(|source| HarnessError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Writes one analytic and one empirical CSV per point plus `results.json`.
pub fn write_campaign(
    dir: &Path,
    campaign: &Campaign,
    result: &CampaignResult,
) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for p in &result.points {
        let tag = format!("N{}_eps{}", p.rate.n, p.rate.eps);
        files.push(write(
            dir.join(format!("analytic_{tag}.csv")),
            &analytic_csv(&p.analytic),
        )?);
        files.push(write(
            dir.join(format!("empirical_{tag}.csv")),
            &empirical_csv(&p.empirical),
        )?);
    }
    let json =
        serde_json::to_string_pretty(&results_json(campaign, result)).expect("results serialize");
    files.push(write(dir.join("results.json"), &(json + "\n"))?);
    Ok(files)
}
