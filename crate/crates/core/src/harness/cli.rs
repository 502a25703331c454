use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::campaign::{run_campaign, Campaign, CampaignResult, Verdict, DEFAULT_TOLERANCE};
use super::export::analytic_csv;
use super::{worker_pool, HarnessError};
use crate::decoder::DEFAULT_RESOLUTION;
use crate::ensemble::{derived, parse_ensemble, EnsembleSpec};
use crate::evolution::{ErasureVector, Evolution};
use crate::pathsim::{
    compare_schedules, find_threshold, integrate_path, OutputGrid, PathOutcome, Schedule,
    StepControl, ThresholdOptions,
};

const EXIT_OK: i32 = 0;
const EXIT_USAGE: i32 = 1;
const EXIT_COMPUTE: i32 = 2;
const EXIT_REJECTED: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "metpeel",
    version,
    about = "Peeling-decoder analysis and simulation for multi-edge-type LDPC ensembles on the BEC"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Ensemble file (JSON document or polynomial text).
    #[arg(long)]
    ensemble: PathBuf,
    /// Per-channel scaling of the scalar erasure probability.
    #[arg(long, value_delimiter = ',')]
    direction: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct ScheduleArgs {
    /// natural | uniform | proportional | priority:i,j,... | weights:w1,... | fixed:p1,...
    #[arg(long, default_value = "natural")]
    schedule: String,
    /// Permit schedules that may select exhausted edge types.
    #[arg(long)]
    allow_unreasonable: bool,
}

#[derive(Args, Debug)]
struct CampaignArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    sched: ScheduleArgs,
    /// Erasure probabilities to simulate.
    #[arg(long, value_delimiter = ',', required = true)]
    eps: Vec<f64>,
    /// Block lengths.
    #[arg(long = "N", value_delimiter = ',', default_value = "10000")]
    n: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Snapshots per trajectory.
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    /// Bisection tolerance of the analytic threshold in the results file.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Derived quantities and initial conditions.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Integrate the mean path and export its trajectory.
    Path {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sched: ScheduleArgs,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: usize,
        /// Output directory; the CSV goes to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop as soon as any edge type runs out of degree-one checks.
        #[arg(long)]
        strict: bool,
    },
    /// Locate the threshold of the mean path by bisection.
    Threshold {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sched: ScheduleArgs,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long)]
        strict: bool,
    },
    /// Run a Monte Carlo campaign and export trajectories.
    Simulate(CampaignArgs),
    /// Run a campaign and judge it against the mean path.
    Compare {
        #[command(flatten)]
        campaign: CampaignArgs,
        /// Largest accepted deviation of the mean degree-one fractions.
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
    /// Thresholds under several schedules.
    Schedules {
        #[command(flatten)]
        common: Common,
        /// Schedules to compare; defaults to natural, uniform, proportional
        /// and every priority order.
        #[arg(long = "schedule", value_delimiter = ';')]
        schedules: Vec<String>,
        #[arg(long)]
        allow_unreasonable: bool,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

enum Failure {
    Usage(String),
    Compute(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::BadCampaign(_) | HarnessError::BadThreads(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Compute(e.to_string()),
        }
    }
}

fn compute<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Compute(e.to_string())
}

fn usage<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Usage(e.to_string())
}

fn load(path: &Path) -> Result<EnsembleSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| {
        Failure::Usage(format!("cannot read ensemble file {}: {e}", path.display()))
    })?;
    parse_ensemble(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn schedule(args: &ScheduleArgs, spec: &EnsembleSpec) -> Result<Schedule, Failure> {
    Schedule::parse(&args.schedule, spec.ne(), args.allow_unreasonable).map_err(usage)
}

fn erasure(common: &Common, spec: &EnsembleSpec, eps: f64) -> Result<ErasureVector, Failure> {
    let ones = vec![1.0; spec.nr()];
    let dir = common.direction.as_deref().unwrap_or(&ones);
    if dir.len() != spec.nr() {
        return Err(Failure::Usage(format!(
            "--direction needs {} entries",
            spec.nr()
        )));
    }
    ErasureVector::along(dir, eps).map_err(usage)
}

/// Twelve significant decimals, trailing zeros removed.
fn num(v: f64) -> String {
    let s = format!("{:.12}", v + 0.0);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn tuple(v: &[f64]) -> String {
    format!(
        "({})",
        v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(", ")
    )
}

fn label(v: &[u32]) -> String {
    format!(
        "({})",
        v.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
    )
}

fn analyze(common: &Common, eps: Option<f64>) -> Result<String, Failure> {
    let spec = load(&common.ensemble)?;
    let evo = Evolution::new(&spec).map_err(compute)?;
    let d = derived(&spec);
    let mut out = String::new();
    let _ = writeln!(out, "edge types: {}, channels: {}", spec.ne(), spec.nr());
    let _ = writeln!(out, "E_i/N = {}", tuple(&d.edge_frac_per_type));
    let _ = writeln!(out, "E/N = {}", num(d.dv_avg));
    let _ = writeln!(out, "E_i/E = {}", tuple(evo.edge_share()));
    let _ = writeln!(out, "rate summary = {}", num(d.rate_summary));
    let Some(eps) = eps else {
        return Ok(out);
    };
    let e = erasure(common, &spec, eps)?;
    let ones = vec![1.0; spec.ne()];
    let nu = evo.nu_closed_form(&e, &ones).map_err(compute)?;
    let mu = evo.mu_closed_form(&e, &ones).map_err(compute)?;
    let mu1 = evo.mu1_closed_form(&e, &ones).map_err(compute)?;
    let edges = evo.edge_fractions(&e, &ones).map_err(compute)?;
    let nu_total = evo.nu_total(&e, &ones).map_err(compute)?;
    let _ = writeln!(out, "eps = {}", tuple(e.as_slice()));
    let _ = writeln!(out, "nu(eps,1) = {}", num(nu_total));
    for (term, v) in spec.vnodes().iter().zip(&nu) {
        let _ = writeln!(
            out,
            "nu_{{b={},d={}}}(eps,1) = {}",
            label(&term.b),
            label(&term.d),
            num(*v)
        );
    }
    for (d, v) in &mu {
        let _ = writeln!(out, "mu_{{d={}}}(eps,1) = {}", label(d), num(*v));
    }
    let _ = writeln!(out, "mu_e(eps,1) = {}", tuple(&mu1));
    let _ = writeln!(out, "e(eps,1) = {}", tuple(&edges));
    let _ = writeln!(out, "t_f = {}", num(nu_total / evo.dv_avg()));
    Ok(out)
}

fn path(
    common: &Common,
    sched: &ScheduleArgs,
    eps: Option<f64>,
    resolution: usize,
    out: Option<&Path>,
    strict: bool,
) -> Result<String, Failure> {
    let spec = load(&common.ensemble)?;
    let schedule = schedule(sched, &spec)?;
    let eps = eps.ok_or_else(|| Failure::Usage("--eps is required".into()))?;
    let e = erasure(common, &spec, eps)?;
    if resolution == 0 {
        return Err(Failure::Usage("--resolution must be positive".into()));
    }
    let evo = Evolution::new(&spec).map_err(compute)?;
    let control = StepControl {
        strict_per_type: strict,
        allow_unreasonable: sched.allow_unreasonable,
        ..StepControl::default().with_grid(OutputGrid::Resolution(resolution))
    };
    let result = integrate_path(&evo, &e, &schedule, &control).map_err(compute)?;
    let csv = analytic_csv(&result);
    let mut text = String::new();
    match &result.outcome {
        PathOutcome::Completed { t_end } => {
            let _ = writeln!(
                text,
                "completed at t = {} (t_f = {})",
                num(*t_end),
                num(result.t_f)
            );
        }
        PathOutcome::Stalled { t_stall, x_stall } => {
            let _ = writeln!(
                text,
                "stalled at t = {} (t_f = {}), x = {}",
                num(*t_stall),
                num(result.t_f),
                tuple(x_stall)
            );
        }
    }
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| compute(format!("{}: {e}", dir.display())))?;
            let file = dir.join(format!("analytic_eps{eps}.csv"));
            fs::write(&file, csv).map_err(|e| compute(format!("{}: {e}", file.display())))?;
            let _ = writeln!(text, "wrote {}", file.display());
        }
        None => text.push_str(&csv),
    }
    Ok(text)
}

fn threshold(
    common: &Common,
    sched: &ScheduleArgs,
    tol: f64,
    strict: bool,
) -> Result<String, Failure> {
    let spec = load(&common.ensemble)?;
    let schedule = schedule(sched, &spec)?;
    if !(tol > 0.0) {
        return Err(Failure::Usage("--tol must be positive".into()));
    }
    let evo = Evolution::new(&spec).map_err(compute)?;
    let mut opts = ThresholdOptions {
        tol,
        direction: common.direction.clone(),
        ..ThresholdOptions::default()
    };
    opts.control.strict_per_type = strict;
    opts.control.allow_unreasonable = sched.allow_unreasonable;
    let pool = worker_pool()?;
    let r = pool
        .install(|| find_threshold(&evo, &schedule, &opts))
        .map_err(compute)?;
    Ok(format!(
        "eps* = {:.7} (bracket [{:.7}, {:.7}], schedule {})\n",
        r.eps_star, r.bracket.0, r.bracket.1, r.schedule_used
    ))
}

fn campaign(args: &CampaignArgs) -> Result<Campaign, Failure> {
    let spec = load(&args.common.ensemble)?;
    let schedule = schedule(&args.sched, &spec)?;
    let mut c = Campaign::new(spec, args.n.clone(), args.eps.clone(), args.trials);
    c.direction = args.common.direction.clone();
    c.schedule = schedule;
    c.master_seed = args.seed;
    c.out_dir = args.out.clone();
    c.resolution = args.resolution;
    c.threshold_tol = args.out.as_ref().map(|_| args.tol);
    c.validate()?;
    Ok(c)
}

fn summary(result: &CampaignResult) -> String {
    let mut text = String::new();
    if let Some(t) = &result.threshold {
        let _ = writeln!(text, "analytic eps* = {:.7}", t.eps_star);
    }
    for p in &result.points {
        let r = &p.report;
        let verdict = match r.verdict {
            Verdict::Pass => "pass",
            Verdict::Fail => "FAIL",
            Verdict::Informational => "informational",
        };
        let _ = writeln!(
            text,
            "N = {} eps = {}: success {}/{} ({}), max |mu_e dev| = {:.3e} [{}{}]",
            p.rate.n,
            p.rate.eps,
            p.rate.successes,
            p.rate.trials,
            num(p.rate.rate),
            r.max_mu1_dev,
            verdict,
            r.note
                .as_deref()
                .map(|n| format!(": {n}"))
                .unwrap_or_default()
        );
    }
    for f in &result.files {
        let _ = writeln!(text, "wrote {}", f.display());
    }
    text
}

fn schedules(
    common: &Common,
    list: &[String],
    allow_unreasonable: bool,
    tol: f64,
) -> Result<String, Failure> {
    let spec = load(&common.ensemble)?;
    let ne = spec.ne();
    let parsed: Vec<Schedule> = if list.is_empty() {
        let mut v = vec![
            Schedule::natural(),
            Schedule::uniform(),
            Schedule::proportional(),
        ];
        if ne <= 4 {
            v.extend(permutations(ne).into_iter().map(|p| Schedule::priority(&p)));
        }
        v
    } else {
        list.iter()
            .map(|s| Schedule::parse(s, ne, allow_unreasonable).map_err(usage))
            .collect::<Result<_, _>>()?
    };
    let evo = Evolution::new(&spec).map_err(compute)?;
    let mut opts = ThresholdOptions {
        tol,
        direction: common.direction.clone(),
        ..ThresholdOptions::default()
    };
    opts.control.allow_unreasonable = allow_unreasonable;
    let pool = worker_pool()?;
    let cmp = pool
        .install(|| compare_schedules(&evo, &parsed, &opts))
        .map_err(compute)?;
    let mut text = String::new();
    for r in &cmp.results {
        let _ = writeln!(
            text,
            "{:<24} eps* = {:.7} (bracket [{:.7}, {:.7}])",
            r.schedule_used.to_string(),
            r.eps_star,
            r.bracket.0,
            r.bracket.1
        );
    }
    let _ = writeln!(
        text,
        "spread over reasonable schedules = {:.3e} ({})",
        cmp.spread,
        if cmp.agree { "agree" } else { "disagree" }
    );
    Ok(text)
}

/// All orderings of `1..=n`.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n);
            out.push(q);
        }
    }
    out.sort();
    out
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 on usage errors, 2 on computation errors, 3 when a comparison fails.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Analyze { common, eps } => analyze(common, *eps).map(|t| (t, EXIT_OK)),
        Command::Path {
            common,
            sched,
            eps,
            resolution,
            out,
            strict,
        } => path(common, sched, *eps, *resolution, out.as_deref(), *strict).map(|t| (t, EXIT_OK)),
        Command::Threshold {
            common,
            sched,
            tol,
            strict,
        } => threshold(common, sched, *tol, *strict).map(|t| (t, EXIT_OK)),
        Command::Simulate(args) => campaign(args)
            .and_then(|c| Ok(run_campaign(&c)?))
            .map(|r| (summary(&r), EXIT_OK)),
        Command::Compare {
            campaign: args,
            tolerance,
        } => campaign(args)
            .and_then(|mut c| {
                c.tolerance = *tolerance;
                c.validate()?;
                Ok(run_campaign(&c)?)
            })
            .map(|r| {
                let code = if r.passed() { EXIT_OK } else { EXIT_REJECTED };
                (summary(&r), code)
            }),
        Command::Schedules {
            common,
            schedules: list,
            allow_unreasonable,
            tol,
        } => schedules(common, list, *allow_unreasonable, *tol).map(|t| (t, EXIT_OK)),
    };
    match outcome {
        Ok((text, code)) => {
            print!("{text}");
            code
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(Failure::Compute(m)) => {
            eprintln!("error: {m}");
            EXIT_COMPUTE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_are_trimmed() {
        assert_eq!(num(0.14630625 + 4e-16), "0.14630625");
        assert_eq!(num(-1e-18), "0");
        assert_eq!(num(3.0), "3");
    }

    #[test]
    fn permutations_cover_all_orders() {
        assert_eq!(permutations(2), vec![vec![1, 2], vec![2, 1]]);
        assert_eq!(permutations(3).len(), 6);
    }

    #[test]
    fn parse_errors_are_usage_errors() {
        assert_eq!(cli_main(["metpeel", "bogus"]), EXIT_USAGE);
        assert_eq!(cli_main(["metpeel", "threshold"]), EXIT_USAGE);
        assert_eq!(
            cli_main([
                "metpeel",
                "path",
                "--ensemble",
                "/nonexistent.json",
                "--eps",
                "0.5"
            ]),
            EXIT_USAGE
        );
    }
}
