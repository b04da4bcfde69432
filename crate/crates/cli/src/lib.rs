//! The `mosafe` command line.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mosafe_core::dsm::{simulate_dsm, DsmConfig};
use mosafe_core::export::{fmt_sig, outcome_json, trajectory_csv, OutcomeRecord};
use mosafe_core::fault_tree::{build_hbb_tree, FaultTree};
use mosafe_core::risk::{hep_rate_bound, monte_carlo_with_progress, McEstimate, Proportion, RiskReport};
use mosafe_core::scenario::{derive_geometry, simulate, InjectionSpec};
use mosafe_core::severity::{severity_patterns, severity_tau_table, SeverityPatternTable, SeverityTauTable};
use mosafe_core::wpp::{build_hep_table_with, verify_wpp, HepTable, WppReport, WppVerifyOptions};
use mosafe_core::{ErrorSequence, SequenceSpec};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "mosafe", version, about = "Braking-scenario safety analysis")]
pub struct Cli {
    /// Output format.
    #[arg(long, value_enum, global = true, default_value_t = Format::Text)]
    pub format: Format,
    /// Write the main report here instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one run and report the crash outcome.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Trajectory CSV path (overrides `outputs.trajectory_csv`).
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Run the `dsm` block instead of the high-level model.
        #[arg(long)]
        dsm: bool,
    },
    /// Shortest UBI durations per severity class and the UBI patterns.
    SeverityTable {
        #[arg(long)]
        config: PathBuf,
    },
    /// Inspect a pattern or sequence literal.
    Patterns {
        /// `count(..)`, `consec(..)` or `{..}@n`.
        spec: String,
        /// Check membership of this sequence literal.
        #[arg(long)]
        contains: Option<String>,
        /// Draw this many samples.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// HEP table and simulation check of the pattern derivation.
    WppVerify {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a fault tree exactly and with the rare-event approximation.
    FtEval {
        #[arg(long)]
        config: PathBuf,
        /// DOT export path (overrides `outputs.dot`).
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Aggregate partition rates and check acceptance criteria.
    Risk {
        #[arg(long)]
        config: PathBuf,
    },
    /// Monte Carlo crash frequency of the detailed model.
    McValidate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `monte_carlo.trials`.
        #[arg(long)]
        trials: Option<u64>,
    },
}

/// Result of a successful command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// The analysis ran and found a violated criterion.
    Violation,
}

pub const EXIT_VIOLATION: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

pub fn run(cli: Cli) -> Result<Status> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            bail!("--jobs must be at least 1");
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build().context("cannot start worker pool")?;
    let (report, status) = pool.install(|| dispatch(&cli))?;
    emit(cli.out.as_deref(), &report)?;
    Ok(status)
}

fn emit(out: Option<&Path>, report: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, report).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(report.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn render<T: Serialize>(format: Format, value: &T, text: impl FnOnce() -> String) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(value).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Text => text(),
    }
}

fn dispatch(cli: &Cli) -> Result<(String, Status)> {
    let f = cli.format;
    match &cli.command {
        Command::Simulate { config, csv, dsm } => cmd_simulate(&RunConfig::load(config)?, csv.as_deref(), *dsm, f),
        Command::SeverityTable { config } => cmd_severity_table(&RunConfig::load(config)?, f),
        Command::Patterns {
            spec,
            contains,
            sample,
            seed,
        } => cmd_patterns(spec, contains.as_deref(), *sample, *seed, f),
        Command::WppVerify { config } => cmd_wpp(&RunConfig::load(config)?, f),
        Command::FtEval { config, dot } => cmd_ft(&RunConfig::load(config)?, dot.as_deref(), f),
        Command::Risk { config } => cmd_risk(&RunConfig::load(config)?, f),
        Command::McValidate { config, trials } => cmd_mc(&RunConfig::load(config)?, *trials, f),
    }
}

pub fn cmd_simulate(cfg: &RunConfig, csv: Option<&Path>, use_dsm: bool, f: Format) -> Result<(String, Status)> {
    let params = &cfg.scenario;
    let g = derive_geometry(params)?;
    let traj = if use_dsm {
        let mut dsm: DsmConfig = cfg.dsm.clone().context("field `dsm` is required with --dsm")?;
        if let Some(s) = cfg.seed {
            dsm.seed = s;
        }
        simulate_dsm(params, &g, &dsm)?
    } else {
        let block = cfg.injection.clone().unwrap_or_default();
        let ubi = match &block.ubi {
            None => ErrorSequence::empty(g.n_max),
            Some(SequenceSpec::Sequence(s)) => s.clone(),
            Some(spec) => spec.resolve(cfg.require_seed("sampling a UBI pattern")?),
        };
        simulate(
            params,
            &InjectionSpec {
                ubi_steps: ubi,
                eta_braking: block.eta_braking,
            },
        )?
    };
    let csv_path = csv
        .map(Path::to_path_buf)
        .or_else(|| cfg.outputs.trajectory_csv.as_ref().map(|p| cfg.resolve(p)));
    if let Some(p) = csv_path {
        fs::write(&p, trajectory_csv(&traj)).with_context(|| format!("cannot write {}", p.display()))?;
    }
    let report = match f {
        Format::Json => outcome_json(&traj) + "\n",
        Format::Text => {
            let o = OutcomeRecord::from(&traj);
            let opt = |x: Option<f64>| x.map_or("-".to_string(), |v| fmt_sig(v, 6));
            format!(
                "collided   {}\nv_impact   {}\nt_c        {}\novershoot  {}\n",
                o.collided,
                opt(o.v_impact),
                opt(o.t_c),
                fmt_sig(o.overshoot, 6)
            )
        }
    };
    Ok((report, Status::Ok))
}

#[derive(Debug, Serialize)]
struct SeverityReport {
    tau_table: SeverityTauTable,
    patterns: PatternRows,
}

#[derive(Debug, Serialize)]
struct PatternRows {
    no_crash: String,
    s0_3: String,
    s1_3: String,
    s2_3: String,
    s3: String,
}

impl From<&SeverityPatternTable> for PatternRows {
    fn from(t: &SeverityPatternTable) -> Self {
        Self {
            no_crash: t.p_nocrash.to_string(),
            s0_3: t.p_s0_3.to_string(),
            s1_3: t.p_s1_3.to_string(),
            s2_3: t.p_s2_3.to_string(),
            s3: t.p_s3.to_string(),
        }
    }
}

fn tables(cfg: &RunConfig) -> Result<(SeverityTauTable, SeverityPatternTable)> {
    let tt = severity_tau_table(&cfg.scenario, &cfg.severity_bounds, cfg.tau_tolerance)?;
    let n_max = derive_geometry(&cfg.scenario)?.n_max;
    Ok((tt, severity_patterns(&tt, n_max)?))
}

pub fn cmd_severity_table(cfg: &RunConfig, f: Format) -> Result<(String, Status)> {
    let (tt, spt) = tables(cfg)?;
    let b = &cfg.severity_bounds;
    let report = SeverityReport {
        tau_table: tt,
        patterns: PatternRows::from(&spt),
    };
    let text = || {
        let r3 = |x: f64| format!("{x:.3}");
        let mut s = String::new();
        let _ = writeln!(s, "{:<8}{:<18}{:<20}{}", "class", "v_impact (m/s)", "tau (s)", "k");
        let rows = [
            (
                "none",
                "0".to_string(),
                format!("[0, {})", r3(tt.tau_contact)),
                "-".to_string(),
            ),
            (
                "S0",
                format!("(0, {}]", b.v_s0),
                format!("[{}, {})", r3(tt.tau_contact), r3(tt.tau_s0)),
                tt.k_contact.to_string(),
            ),
            (
                "S1",
                format!("({}, {}]", b.v_s0, b.v_s1),
                format!("[{}, {})", r3(tt.tau_s0), r3(tt.tau_s1)),
                tt.k_s0.to_string(),
            ),
            (
                "S2",
                format!("({}, {}]", b.v_s1, b.v_s2),
                format!("[{}, {})", r3(tt.tau_s1), r3(tt.tau_s2)),
                tt.k_s1.to_string(),
            ),
            (
                "S3",
                format!("({}, {}]", b.v_s2, b.v_cap),
                format!("[{}, {}]", r3(tt.tau_s2), r3(tt.tau_max)),
                tt.k_s2.to_string(),
            ),
        ];
        for (c, v, t, k) in rows {
            let _ = writeln!(s, "{c:<8}{v:<18}{t:<20}{k}");
        }
        let _ = writeln!(s, "\n{:<10}{}", "crash", "UBI pattern");
        for (label, p) in [("none", spt.p_nocrash)].into_iter().chain(spt.crash_rows()) {
            let _ = writeln!(s, "{label:<10}{p}");
        }
        s
    };
    Ok((render(f, &report, text), Status::Ok))
}

#[derive(Debug, Serialize)]
struct PatternReport {
    spec: String,
    cardinality: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    contains: Option<bool>,
    samples: Vec<String>,
}

pub fn cmd_patterns(
    spec: &str,
    contains: Option<&str>,
    sample: usize,
    seed: u64,
    f: Format,
) -> Result<(String, Status)> {
    let parsed: SequenceSpec = spec.parse()?;
    let (cardinality, member, samples) = match &parsed {
        SequenceSpec::Sequence(s) => {
            let m = contains
                .map(|c| c.parse::<ErrorSequence>().map(|o| o == *s))
                .transpose()?;
            ("1".to_string(), m, vec![s.to_string(); sample])
        }
        SequenceSpec::Pattern(p) => {
            let m = contains
                .map(|c| -> Result<bool> { Ok(p.contains(&c.parse()?)?) })
                .transpose()?;
            let samples = p.sample(seed, sample).iter().map(ToString::to_string).collect();
            (p.cardinality().to_string(), m, samples)
        }
    };
    let report = PatternReport {
        spec: parsed.to_string(),
        cardinality,
        contains: member,
        samples,
    };
    let text = || {
        let mut s = format!("spec         {}\ncardinality  {}\n", report.spec, report.cardinality);
        if let Some(m) = report.contains {
            let _ = writeln!(s, "contains     {m}");
        }
        for x in &report.samples {
            let _ = writeln!(s, "sample       {x}");
        }
        s
    };
    Ok((render(f, &report, text), Status::Ok))
}

#[derive(Debug, Serialize)]
struct WppOutput {
    hep_table: HepTable,
    verification: Vec<WppReport>,
}

pub fn cmd_wpp(cfg: &RunConfig, f: Format) -> Result<(String, Status)> {
    let (tt, spt) = tables(cfg)?;
    let table = build_hep_table_with(&spt, &tt, cfg.wpp.detector_bound);
    let seed = if cfg.wpp.exhaustive {
        cfg.seed.unwrap_or(0)
    } else {
        cfg.require_seed("sampled verification")?
    };
    let mut verification = Vec::new();
    for row in &table.rows {
        let opts = WppVerifyOptions {
            trials: cfg.wpp.trials,
            seed,
            exhaustive: cfg.wpp.exhaustive,
            r_max: cfg.wpp.r_max,
            c: cfg.wpp.c,
            bounds: cfg.severity_bounds,
            min_class: row.min_class,
            detector_k_min: Some(row.detector_pattern.k_min()),
        };
        verification.push(verify_wpp(&cfg.scenario, &row.ubi_pattern, &opts)?);
    }
    let status = if verification.iter().all(WppReport::ok) {
        Status::Ok
    } else {
        Status::Violation
    };
    let out = WppOutput {
        hep_table: table,
        verification,
    };
    let text = || {
        let mut s = format!("{:<8}{:<20}{:<20}{}\n", "row", "UBI", "tracker FN", "detector FN");
        for r in &out.hep_table.rows {
            let _ = writeln!(
                s,
                "{:<8}{:<20}{:<20}{}",
                r.label,
                r.ubi_pattern.to_string(),
                r.tracker_pattern.to_string(),
                r.detector_pattern
            );
        }
        let _ = writeln!(
            s,
            "\n{:<8}{:<10}{:<12}{:<14}{:<10}{}",
            "row", "identity", "violations", "max |da|", "soundness", "violations"
        );
        for (r, v) in out.hep_table.rows.iter().zip(&out.verification) {
            let _ = writeln!(
                s,
                "{:<8}{:<10}{:<12}{:<14}{:<10}{}",
                r.label,
                v.identity_checked,
                v.identity_violations.len(),
                fmt_sig(v.max_accel_diff, 3),
                v.soundness_checked,
                v.soundness_violations.len()
            );
        }
        s
    };
    Ok((render(f, &out, text), status))
}

#[derive(Debug, Serialize)]
struct FtOutput {
    exact: f64,
    approx: f64,
    error_bound: f64,
    upper_bound: bool,
    unreliable: bool,
    coherent: Option<bool>,
}

fn load_tree(cfg: &RunConfig) -> Result<FaultTree> {
    let block = cfg.fault_tree.as_ref().context("field `fault_tree` is required")?;
    match (&block.tree, &block.tree_file, block.eta_a_max) {
        (Some(t), None, None) => Ok(t.clone()),
        (None, Some(p), None) => {
            let path = cfg.resolve(p);
            let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
            FaultTree::from_json(&text).with_context(|| format!("field `fault_tree.tree_file`: {}", path.display()))
        }
        (None, None, Some(eta)) => {
            let haz = match block.hazardous_fn {
                Some(p) => p,
                None => tables(cfg)?.1.p_s0_3,
            };
            Ok(build_hbb_tree(eta, &haz)?)
        }
        _ => bail!("field `fault_tree`: give exactly one of `tree`, `tree_file` or `eta_a_max`"),
    }
}

pub fn cmd_ft(cfg: &RunConfig, dot: Option<&Path>, f: Format) -> Result<(String, Status)> {
    let tree = load_tree(cfg)?;
    let probs = &cfg.fault_tree.as_ref().expect("checked by load_tree").leaf_probs;
    let exact = tree.eval_exact(probs)?;
    let approx = tree.eval_rare_approx(probs)?;
    let dot_path = dot
        .map(Path::to_path_buf)
        .or_else(|| cfg.outputs.dot.as_ref().map(|p| cfg.resolve(p)));
    if let Some(p) = dot_path {
        fs::write(&p, tree.to_dot()).with_context(|| format!("cannot write {}", p.display()))?;
    }
    let out = FtOutput {
        exact: exact.probability,
        approx: approx.probability,
        error_bound: approx.error_bound,
        upper_bound: exact.upper_bound,
        unreliable: approx.unreliable,
        coherent: approx.coherent,
    };
    let text = || {
        let rel = if out.upper_bound { "<=" } else { "=" };
        let mut s = format!(
            "P(top) exact  {rel} {:e}\nP(top) approx {rel} {:e}\nerror bound      {:e}\n",
            out.exact, out.approx, out.error_bound
        );
        if out.unreliable {
            s.push_str("warning: approximation unreliable (bound above 10% of value)\n");
        }
        if out.coherent == Some(false) {
            s.push_str("warning: tree is not coherent; the error bound may not hold\n");
        }
        s
    };
    Ok((render(f, &out, text), Status::Ok))
}

pub fn cmd_risk(cfg: &RunConfig, f: Format) -> Result<(String, Status)> {
    let spec = cfg.risk.as_ref().context("field `risk` is required")?;
    let report: RiskReport = spec.evaluate()?;
    let status = if report.all_pass() {
        Status::Ok
    } else {
        Status::Violation
    };
    let text = || {
        let mut s = format!("{:<16}{:<16}{}\n", "partition", "P(pattern)", "rate");
        for p in &report.partitions {
            let prob = p.p_pattern.map_or("-".into(), |x| fmt_sig(x, 6));
            let _ = writeln!(s, "{:<16}{:<16}{}", p.id, prob, fmt_rate(&p.rate));
        }
        let _ = writeln!(s, "{:<16}{:<16}{}", "residual", "", fmt_rate(&report.residual));
        let _ = writeln!(s, "{:<16}{:<16}{}\n", "aggregate", "", fmt_rate(&report.aggregate));
        for c in &report.criteria {
            let verdict = if c.pass { "pass" } else { "FAIL" };
            let _ = writeln!(s, "{:<16}<= {:<24}{verdict}", c.severity, fmt_rate(&c.max_rate));
        }
        s
    };
    Ok((render(f, &report, text), status))
}

fn fmt_rate(r: &mosafe_core::risk::Rate) -> String {
    format!("{} {}", fmt_sig(r.value, 6), r.unit)
}

#[derive(Debug, Serialize)]
struct McOutput {
    estimate: McEstimate,
    p_fn: f64,
    n_max: u32,
    k_min: u32,
    binomial_bound: f64,
    /// Crash estimate <= bound + 3 standard errors.
    within_bound: bool,
}

pub fn cmd_mc(cfg: &RunConfig, trials: Option<u64>, f: Format) -> Result<(String, Status)> {
    let dsm = cfg.dsm.as_ref().context("field `dsm` is required")?;
    let trials = trials
        .or(cfg.monte_carlo.as_ref().map(|m| m.trials))
        .context("field `monte_carlo.trials` is required")?;
    if trials == 0 {
        bail!("field `monte_carlo.trials` must be at least 1");
    }
    let seed = cfg.require_seed("Monte Carlo runs")?;
    let g = derive_geometry(&cfg.scenario)?;
    let k_min = match cfg.monte_carlo.as_ref().and_then(|m| m.k_min) {
        Some(k) => k,
        None => tables(cfg)?.0.k_contact,
    };
    let bound = hep_rate_bound(dsm.detector.p_fn, g.n_max, k_min.min(g.n_max))?;
    let estimate = monte_carlo_with_progress(&cfg.scenario, dsm, &cfg.severity_bounds, trials, seed, |done| {
        eprintln!("mc-validate: {done}/{trials} runs");
    })?;
    let sigma = estimate.crash.std_error(trials);
    let within_bound = estimate.crash.estimate <= bound + 3.0 * sigma;
    let out = McOutput {
        estimate,
        p_fn: dsm.detector.p_fn,
        n_max: g.n_max,
        k_min,
        binomial_bound: bound,
        within_bound,
    };
    let status = if within_bound { Status::Ok } else { Status::Violation };
    let text = || {
        let line = |label: &str, p: &Proportion| {
            format!(
                "{label:<8}{:<10}{:<14.6e}[{:.6e}, {:.6e}]\n",
                p.count, p.estimate, p.ci95.0, p.ci95.1
            )
        };
        let mut s = format!(
            "trials  {trials}\n{:<8}{:<10}{:<14}95% CI\n",
            "event", "count", "estimate"
        );
        s.push_str(&line("crash", &out.estimate.crash));
        for (i, label) in ["S0", "S1", "S2", "S3"].iter().enumerate() {
            s.push_str(&line(label, &out.estimate.per_class[i]));
        }
        let _ = writeln!(
            s,
            "\nP(>= {} misses in {} frames) = {}\nwithin bound + 3 sigma: {}",
            out.k_min,
            out.n_max,
            fmt_sig(out.binomial_bound, 6),
            out.within_bound
        );
        s
    };
    Ok((render(f, &out, text), status))
}
