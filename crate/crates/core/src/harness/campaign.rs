use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::export;
use super::stats::{trial_seeds, MeanVar};
use super::{worker_pool, HarnessError};
use crate::decoder::{apply_channel, DecodeOutcome, GraphSampler, Snapshot, DEFAULT_RESOLUTION};
use crate::ensemble::EnsembleSpec;
use crate::evolution::{ErasureVector, Evolution};
use crate::pathsim::{
    find_threshold, integrate_path, OutputGrid, PathResult, Schedule, StepControl,
    ThresholdOptions, ThresholdResult,
};

/// Below this block length comparisons are reported but not judged.
pub const LOW_N: usize = 1000;
/// Default bound on the deviation of mean degree-one fractions.
pub const DEFAULT_TOLERANCE: f64 = 0.01;
/// Trials decoded concurrently before their results are folded in order.
const CHUNK: usize = 64;

#[derive(Debug, Clone)]
pub struct Campaign {
    pub spec: EnsembleSpec,
    pub n_list: Vec<usize>,
    /// Scalar erasure probabilities, scaled per channel by `direction`.
    pub eps: Vec<f64>,
    pub direction: Option<Vec<f64>>,
    pub trials: usize,
    pub schedule: Schedule,
    pub master_seed: u64,
    pub out_dir: Option<PathBuf>,
    pub resolution: usize,
    pub tolerance: f64,
    /// Also locate the analytic threshold, to this bracket width.
    pub threshold_tol: Option<f64>,
}

impl Campaign {
    pub fn new(spec: EnsembleSpec, n_list: Vec<usize>, eps: Vec<f64>, trials: usize) -> Self {
        Self {
            spec,
            n_list,
            eps,
            direction: None,
            trials,
            schedule: Schedule::natural(),
            master_seed: 0,
            out_dir: None,
            resolution: DEFAULT_RESOLUTION,
            tolerance: DEFAULT_TOLERANCE,
            threshold_tol: None,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::BadCampaign(m));
        if self.trials == 0 {
            return bad("at least one trial is required".into());
        }
        if self.n_list.is_empty() || self.eps.is_empty() {
            return bad("the block-length and erasure lists must be non-empty".into());
        }
        if let Some(n) = self.n_list.iter().find(|&&n| n < 10) {
            return bad(format!("block length {n} is below 10"));
        }
        if let Some(e) = self.eps.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return bad(format!("erasure probability {e} is not in [0, 1]"));
        }
        if self.resolution == 0 {
            return bad("resolution must be positive".into());
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive".into());
        }
        if let Some(d) = &self.direction {
            if d.len() != self.spec.nr() {
                return bad(format!(
                    "direction has {} entries, ensemble has {} channels",
                    d.len(),
                    self.spec.nr()
                ));
            }
        }
        self.schedule.validate(self.spec.ne())?;
        Ok(())
    }

    pub fn erasure(&self, eps: f64) -> Result<ErasureVector, HarnessError> {
        let ones = vec![1.0; self.spec.nr()];
        let dir = self.direction.as_deref().unwrap_or(&ones);
        Ok(ErasureVector::along(dir, eps)?)
    }

    fn path_control(&self, grid: OutputGrid) -> StepControl {
        StepControl {
            allow_unreasonable: !self.schedule.is_reasonable(),
            ..StepControl::default().with_grid(grid)
        }
    }
}

/// Column layout of empirical trajectories.
#[derive(Debug, Clone)]
struct Columns {
    nu_terms: usize,
    /// Check sub-types of degree one or more, in table order.
    mu_subtypes: Vec<usize>,
    units: Vec<Option<usize>>,
    names: Vec<String>,
}

fn angle_label(v: &[u32]) -> String {
    v.iter().map(u32::to_string).collect::<Vec<_>>().join("_")
}

impl Columns {
    fn new(spec: &EnsembleSpec, sampler: &GraphSampler) -> Self {
        let table = sampler.table();
        let mu_subtypes: Vec<usize> = (0..table.len()).filter(|&k| table.degree(k) > 0).collect();
        let units = (0..spec.ne()).map(|i| table.unit(i)).collect();
        let mut names: Vec<String> = spec
            .vnodes()
            .iter()
            .map(|t| format!("count_nu_<{};{}>", angle_label(&t.b), angle_label(&t.d)))
            .collect();
        names.extend(
            mu_subtypes
                .iter()
                .map(|&k| format!("count_mu_<{}>", angle_label(table.subtype(k)))),
        );
        names.extend((1..=spec.ne()).map(|i| format!("mu1_emp_{i}")));
        names.extend((1..=spec.ne()).map(|i| format!("e_emp_{i}")));
        Self {
            nu_terms: spec.vnodes().len(),
            mu_subtypes,
            units,
            names,
        }
    }

    fn row(&self, s: &Snapshot, n: usize, e: usize) -> Vec<f64> {
        let n = n as f64;
        let e = e as f64;
        let mut out = Vec::with_capacity(self.names.len());
        out.extend(s.nu.iter().take(self.nu_terms).map(|&c| c as f64 / n));
        out.extend(self.mu_subtypes.iter().map(|&k| s.mu[k] as f64 / n));
        out.extend(
            self.units
                .iter()
                .map(|u| u.map_or(0.0, |k| s.mu[k] as f64 / n)),
        );
        out.extend(s.edges.iter().map(|&c| c as f64 / e));
        out
    }
}

/// Per-snapshot means and variances of normalized decoder counts. Node
/// counts are relative to `N`, edge counts relative to `E`.
#[derive(Debug, Clone, Serialize)]
pub struct EmpiricalTrajectory {
    pub n: usize,
    pub eps: f64,
    pub num_edges: usize,
    pub snapshot_every: u64,
    pub columns: Vec<String>,
    pub t: Vec<f64>,
    pub stats: Vec<Vec<MeanVar>>,
}

impl EmpiricalTrajectory {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn means(&self, row: usize) -> Vec<f64> {
        self.stats[row].iter().map(MeanVar::mean).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePoint {
    pub n: usize,
    pub eps: f64,
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QuantityDeviation {
    pub name: String,
    pub max_dev: f64,
    pub rms_dev: f64,
    /// Standard error of the empirical mean at each compared point.
    pub std_errors: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Informational,
}

/// Empirical means against the closed forms along the mean path, matched
/// by `t`.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub n: usize,
    pub eps: f64,
    pub trials: usize,
    /// Times at which both trajectories are defined.
    pub t: Vec<f64>,
    pub quantities: Vec<QuantityDeviation>,
    /// Largest deviation over the degree-one fractions.
    pub max_mu1_dev: f64,
    pub tolerance: f64,
    pub verdict: Verdict,
    pub note: Option<String>,
}

impl ComparisonReport {
    pub fn quantity(&self, name: &str) -> Option<&QuantityDeviation> {
        self.quantities.iter().find(|q| q.name == name)
    }
}

/// One `(N, eps)` point of a campaign.
#[derive(Debug, Clone)]
pub struct PointOutput {
    pub rate: RatePoint,
    pub empirical: EmpiricalTrajectory,
    pub analytic: PathResult,
    pub report: ComparisonReport,
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub points: Vec<PointOutput>,
    pub threshold: Option<ThresholdResult>,
    pub files: Vec<PathBuf>,
}

impl CampaignResult {
    pub fn reports(&self) -> impl Iterator<Item = &ComparisonReport> {
        self.points.iter().map(|p| &p.report)
    }

    pub fn rates(&self) -> Vec<RatePoint> {
        self.points.iter().map(|p| p.rate).collect()
    }

    /// No comparison failed.
    pub fn passed(&self) -> bool {
        self.reports().all(|r| r.verdict != Verdict::Fail)
    }
}

fn run_trials(
    campaign: &Campaign,
    sampler: &GraphSampler,
    eps: &ErasureVector,
    point: u64,
    resolution: usize,
    pool: &rayon::ThreadPool,
    mut fold: impl FnMut(DecodeOutcome),
) -> Result<(), HarnessError> {
    for start in (0..campaign.trials).step_by(CHUNK) {
        let end = (start + CHUNK).min(campaign.trials);
        let outs = pool.install(|| {
            (start..end)
                .into_par_iter()
                .map(|trial| {
                    let seeds = trial_seeds(campaign.master_seed, point, trial as u64);
                    let graph = sampler.sample(seeds.graph);
                    let state = apply_channel(&graph, eps, seeds.channel)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(seeds.schedule);
                    let mut out = state.run(&campaign.schedule, &mut rng, resolution);
                    out.residual = Vec::new();
                    Ok(out)
                })
                .collect::<Result<Vec<_>, HarnessError>>()
        })?;
        outs.into_iter().for_each(&mut fold);
    }
    Ok(())
}

fn empirical(
    campaign: &Campaign,
    sampler: &GraphSampler,
    eps: f64,
    point: u64,
    pool: &rayon::ThreadPool,
) -> Result<(RatePoint, EmpiricalTrajectory), HarnessError> {
    let columns = Columns::new(&campaign.spec, sampler);
    let n = sampler.n();
    let e = sampler.num_edges();
    let rows = campaign.resolution + 1;
    let mut stats = vec![vec![MeanVar::new(); columns.names.len()]; rows];
    let mut successes = 0;
    let mut used = 1;
    let mut every = 1;
    run_trials(
        campaign,
        sampler,
        &campaign.erasure(eps)?,
        point,
        campaign.resolution,
        pool,
        |out| {
            successes += usize::from(out.success);
            every = out.snapshot_every;
            used = used.max(out.iterations.div_ceil(every) as usize + 1);
            for (k, row) in stats.iter_mut().enumerate() {
                let s = out.trajectory.get(k).unwrap_or(&out.terminal);
                for (acc, v) in row.iter_mut().zip(columns.row(s, n, e)) {
                    acc.push(v);
                }
            }
        },
    )?;
    stats.truncate(used.min(rows));
    let t = (0..stats.len())
        .map(|k| (k as u64 * every) as f64 / e.max(1) as f64)
        .collect();
    let rate = RatePoint {
        n,
        eps,
        trials: campaign.trials,
        successes,
        rate: successes as f64 / campaign.trials as f64,
    };
    Ok((
        rate,
        EmpiricalTrajectory {
            n,
            eps,
            num_edges: e,
            snapshot_every: every,
            columns: columns.names,
            t,
            stats,
        },
    ))
}

/// Compares an empirical trajectory against the mean path at every shared
/// time point.
pub fn compare(
    evo: &Evolution,
    path: &PathResult,
    emp: &EmpiricalTrajectory,
    trials: usize,
    tolerance: f64,
) -> ComparisonReport {
    let spec = evo.spec();
    let ne = spec.ne();
    let mut names: Vec<String> = (0..spec.vnodes().len())
        .map(|k| emp.columns[k].replacen("count_", "", 1))
        .collect();
    let mu_cols: Vec<(usize, Vec<u32>)> = emp
        .columns
        .iter()
        .enumerate()
        .filter_map(|(c, name)| {
            let inner = name.strip_prefix("count_mu_<")?.strip_suffix('>')?;
            let d: Vec<u32> = inner.split('_').map(|v| v.parse().unwrap()).collect();
            (d.iter().sum::<u32>() >= 2).then_some((c, d))
        })
        .collect();
    names.extend(
        mu_cols
            .iter()
            .map(|(c, _)| emp.columns[*c].replacen("count_", "", 1)),
    );
    names.extend((1..=ne).map(|i| format!("mu1_{i}")));
    names.extend((1..=ne).map(|i| format!("e_{i}")));
    let mu1_col = emp.column("mu1_emp_1").unwrap_or(0);
    let e_col = emp.column("e_emp_1").unwrap_or(0);

    let mut devs: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut ses: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut shared = Vec::new();
    let mut j = 0;
    for (k, &t) in emp.t.iter().enumerate() {
        while j < path.trajectory.len() && path.trajectory[j].t < t - 1e-12 * t.max(1.0) {
            j += 1;
        }
        let Some(p) = path.trajectory.get(j) else {
            break;
        };
        if (p.t - t).abs() > 1e-12 * t.max(1.0) {
            continue;
        }
        shared.push(t);
        let row = &emp.stats[k];
        let mut analytic: Vec<f64> = p.nu_fracs.clone();
        let mut observed: Vec<&MeanVar> = row[..spec.vnodes().len()].iter().collect();
        for (c, d) in &mu_cols {
            analytic.push(p.mu_fracs.get(d).copied().unwrap_or(0.0));
            observed.push(&row[*c]);
        }
        analytic.extend(&p.mu1);
        observed.extend(&row[mu1_col..mu1_col + ne]);
        analytic.extend(&p.e);
        observed.extend(&row[e_col..e_col + ne]);
        for (q, (a, o)) in analytic.iter().zip(observed).enumerate() {
            devs[q].push((o.mean() - a).abs());
            ses[q].push(o.std_error());
        }
    }
    let quantities: Vec<QuantityDeviation> = names
        .into_iter()
        .zip(devs)
        .zip(ses)
        .map(|((name, d), se)| QuantityDeviation {
            max_dev: d.iter().copied().fold(0.0, f64::max),
            rms_dev: if d.is_empty() {
                0.0
            } else {
                (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt()
            },
            name,
            std_errors: se,
        })
        .collect();
    let max_mu1_dev = quantities
        .iter()
        .filter(|q| q.name.starts_with("mu1_"))
        .map(|q| q.max_dev)
        .fold(0.0, f64::max);
    let (verdict, note) = if emp.n < LOW_N || trials < 2 {
        (
            Verdict::Informational,
            Some("low-N, informational".to_string()),
        )
    } else if max_mu1_dev <= tolerance {
        (Verdict::Pass, None)
    } else {
        (Verdict::Fail, None)
    };
    ComparisonReport {
        n: emp.n,
        eps: emp.eps,
        trials,
        t: shared,
        quantities,
        max_mu1_dev,
        tolerance,
        verdict,
        note,
    }
}

/// Runs every `(N, eps)` point, compares against the mean path, and writes
/// CSV and JSON output when an output directory is set.
pub fn run_campaign(campaign: &Campaign) -> Result<CampaignResult, HarnessError> {
    campaign.validate()?;
    let evo = Evolution::new(&campaign.spec)?;
    let pool = worker_pool()?;
    let mut points = Vec::new();
    for (ni, &n) in campaign.n_list.iter().enumerate() {
        let sampler = GraphSampler::new(&campaign.spec, n)?;
        for (ei, &eps) in campaign.eps.iter().enumerate() {
            let point = (ni * campaign.eps.len() + ei) as u64;
            let (rate, emp) = empirical(campaign, &sampler, eps, point, &pool)?;
            let grid = OutputGrid::Times(emp.t.clone());
            let analytic = integrate_path(
                &evo,
                &campaign.erasure(eps)?,
                &campaign.schedule,
                &campaign.path_control(grid),
            )?;
            let report = compare(&evo, &analytic, &emp, campaign.trials, campaign.tolerance);
            points.push(PointOutput {
                rate,
                empirical: emp,
                analytic,
                report,
            });
        }
    }
    let threshold = match campaign.threshold_tol {
        Some(tol) => {
            let mut opts = ThresholdOptions {
                tol,
                direction: campaign.direction.clone(),
                ..ThresholdOptions::default()
            };
            opts.control.allow_unreasonable = !campaign.schedule.is_reasonable();
            Some(pool.install(|| find_threshold(&evo, &campaign.schedule, &opts))?)
        }
        None => None,
    };
    let mut result = CampaignResult {
        points,
        threshold,
        files: Vec::new(),
    };
    if let Some(dir) = &campaign.out_dir {
        result.files = export::write_campaign(dir, campaign, &result)?;
    }
    Ok(result)
}

/// Fraction of successful decodes at every `(N, eps)` point.
pub fn success_rate(campaign: &Campaign) -> Result<Vec<RatePoint>, HarnessError> {
    campaign.validate()?;
    let pool = worker_pool()?;
    let mut table = Vec::new();
    for (ni, &n) in campaign.n_list.iter().enumerate() {
        let sampler = GraphSampler::new(&campaign.spec, n)?;
        for (ei, &eps) in campaign.eps.iter().enumerate() {
            let point = (ni * campaign.eps.len() + ei) as u64;
            let mut successes = 0;
            run_trials(
                campaign,
                &sampler,
                &campaign.erasure(eps)?,
                point,
                1,
                &pool,
                |out| successes += usize::from(out.success),
            )?;
            table.push(RatePoint {
                n,
                eps,
                trials: campaign.trials,
                successes,
                rate: successes as f64 / campaign.trials as f64,
            });
        }
    }
    Ok(table)
}
