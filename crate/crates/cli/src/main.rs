mod input;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use zinfer::bounds::{
    bound, falsify_with, grid_feasibility_oracle, BoundEntry, BoundInterval, BoundOptions, BoundReport,
    FalsificationReport, Model, Tolerance,
};
use zinfer::downstream::sensitivity_curve_from_report;
use zinfer::estimate::{em_fit, mle_counting, EmConfig};
use zinfer::simulate::{fixtures, nonid_pair, validate_bounds_harness, DgpModel};
use zinfer::{Error, ObservedLaw, INPUT_TOL};

use input::{Data, Loaded};
use output::{Format, Precision, Report, Sink};

/// Bounds, falsification and sensitivity analysis for zero-inflated
/// categorical data with a proxy of the inflation indicator.
///
/// Exit codes: 0 success, 1 input error, 2 model falsified or incompatible.
#[derive(Parser)]
#[command(name = "zinfer", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: Format,
    /// Significant digits for reals (1-17), or `full`.
    #[arg(long, global = true, default_value = "6")]
    precision: Precision,
    /// Write the result here instead of standard output.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Worker threads for parallel work.
    #[arg(long, global = true, env = "ZINFER_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct DataArgs {
    /// Record CSV or table JSON (`-` reads standard input).
    input: PathBuf,
    #[arg(long, value_parser = parse_model)]
    model: Model,
    /// Strata with fewer records are pooled into one (record input only).
    #[arg(long, default_value_t = 5)]
    min_cell_count: usize,
    /// Seed for EM restarts (record input only).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Absolute falsification tolerance (default 1e-9 for tables; record
    /// input defaults to a sampling tolerance).
    #[arg(long)]
    tol: Option<f64>,
    /// Continue past a failed falsification test.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Test the observed-law constraints of a model.
    Falsify {
        #[command(flatten)]
        data: DataArgs,
        /// Standard errors allowed per comparison for record input.
        #[arg(long, default_value_t = 3.0)]
        sigmas: f64,
    },
    /// Compatibility bounds for the proxy channel and the implied p(R=0).
    Bounds {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Target law along a grid over the bound.
    Sensitivity {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 200)]
        grid: usize,
    },
    /// Run the bound-validation harness on random DGPs.
    Simulate {
        #[arg(long, value_parser = parse_dgp_model)]
        model: DgpModel,
        #[arg(long, default_value_t = 10_000)]
        n_dgps: usize,
        /// Interior restoration points per interval.
        #[arg(long, default_value_t = 101)]
        grid: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compare analytic bounds with the grid feasibility oracle.
    Verify {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 100_000)]
        grid: usize,
    },
    /// Two DGPs with the same observed law and different target laws.
    NonidDemo {
        #[arg(long, default_value_t = 0.9)]
        m: f64,
    },
}

fn parse_model(s: &str) -> std::result::Result<Model, String> {
    s.parse()
}

fn parse_dgp_model(s: &str) -> std::result::Result<DgpModel, String> {
    s.parse()
}

/// The law a command works on, with where it came from.
struct Prepared {
    law: ObservedLaw,
    tol: Tolerance,
    meta: Value,
}

fn falsified(report: &FalsificationReport) -> Error {
    let worst = report.worst().expect("a failing report has residuals");
    Error::FalsifiedModel {
        model: report.model.name().into(),
        constraint: worst.constraint.clone(),
        deviation: worst.deviation,
    }
}

fn meta(loaded: &Loaded, source: &str, n_records: Option<usize>) -> Value {
    json!({
        "source": source,
        "n_records": n_records,
        "strata": loaded.strata,
        "warnings": loaded.warnings,
    })
}

/// Table input is used as is. Record input is first tested with a sampling
/// tolerance; the counted law is used when it satisfies the model exactly,
/// otherwise the EM fit (a law inside the model) replaces it.
fn prepare(loaded: &Loaded, args: &DataArgs) -> Result<Prepared> {
    match &loaded.data {
        Data::Table(law) => Ok(Prepared {
            law: law.clone(),
            tol: Tolerance::Absolute(args.tol.unwrap_or(INPUT_TOL)),
            meta: meta(loaded, "table", None),
        }),
        Data::Records(set) => {
            let counts = mle_counting(set)?;
            let n = set.len();
            let sampling = Tolerance::Sampling { n: n as f64, k: 3.0 };
            let check = falsify_with(&counts, args.model, args.tol.map_or(sampling, Tolerance::Absolute))?;
            if !check.pass {
                if !args.force {
                    return Err(falsified(&check).into());
                }
                eprintln!("warning: {} (continuing because of --force)", falsified(&check));
            }
            if falsify_with(&counts, args.model, Tolerance::Absolute(INPUT_TOL))?.pass || args.model == Model::Mnar {
                let tol = if args.model == Model::Mnar { sampling } else { Tolerance::Absolute(INPUT_TOL) };
                return Ok(Prepared { law: counts, tol, meta: meta(loaded, "counts", Some(n)) });
            }
            let fit = em_fit(set, args.model, &EmConfig { seed: args.seed, ..Default::default() })?;
            let mut m = meta(loaded, "em", Some(n));
            m["em"] = json!({
                "iterations": fit.iterations,
                "converged": fit.converged,
                "loglik_per_record": fit.final_loglik(),
                "restarts_used": fit.n_restarts_used,
            });
            Ok(Prepared { law: fit.observed, tol: Tolerance::Absolute(INPUT_TOL), meta: m })
        }
    }
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

fn load(args: &DataArgs) -> Result<Loaded> {
    let loaded = input::load(&args.input, args.min_cell_count)?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    Ok(loaded)
}

fn cmd_falsify(args: &DataArgs, sigmas: f64, p: Precision) -> Result<(Report, bool)> {
    if !(sigmas > 0.0) || args.tol.is_some_and(|t| !(t > 0.0)) {
        bail!("tolerances must be positive");
    }
    let loaded = load(args)?;
    let (law, tol, n) = match &loaded.data {
        Data::Table(law) => (law.clone(), Tolerance::Absolute(args.tol.unwrap_or(INPUT_TOL)), None),
        Data::Records(set) => {
            let n = set.len();
            let tol = args.tol.map_or(Tolerance::Sampling { n: n as f64, k: sigmas }, Tolerance::Absolute);
            (mle_counting(set)?, tol, Some(n))
        }
    };
    let report = falsify_with(&law, args.model, tol)?;
    let json = merge(serde_json::to_value(&report)?, meta(&loaded, if n.is_some() { "counts" } else { "table" }, n));
    let rows = report
        .residuals
        .iter()
        .map(|r| {
            vec![
                (r.indicator + 1).to_string(),
                r.constraint.clone(),
                r.stratum.map(|s| s.to_string()).unwrap_or_default(),
                p.cell(r.deviation),
                p.cell(r.tol),
                r.passes().to_string(),
            ]
        })
        .collect();
    let header = ["indicator", "constraint", "stratum", "deviation", "tol", "pass"].map(String::from).to_vec();
    Ok((Report { json, header, rows }, report.pass))
}

fn pair(iv: &BoundInterval) -> Value {
    json!([iv.lower, iv.upper])
}

fn entry_json(e: &BoundEntry, strata: &[String]) -> Value {
    let iv = &e.interval;
    json!({
        "indicator": e.indicator + 1,
        "stratum": e.stratum,
        "stratum_label": e.stratum.and_then(|z| strata.get(z)),
        "q_w0_r1": e.q_w0_given_r1,
        "interval": pair(iv),
        "lower_open": iv.lower_open,
        "upper_open": iv.upper_open,
        "excluded_point": iv.excluded_point,
        "no_inflation": iv.no_inflation,
        "r0_interval": e.r0_interval.as_ref().map(pair),
        "r0_open": e.r0_interval.as_ref().map(|r| [r.lower_open, r.upper_open]),
    })
}

fn bounds_for(args: &DataArgs) -> Result<(Prepared, BoundReport, Vec<String>)> {
    if args.tol.is_some_and(|t| !(t > 0.0)) {
        bail!("tolerances must be positive");
    }
    let loaded = load(args)?;
    let prep = prepare(&loaded, args)?;
    let report = bound(&prep.law, args.model, BoundOptions { tol: prep.tol, force: args.force })?;
    if !report.falsification.pass {
        eprintln!("warning: {} (continuing because of --force)", falsified(&report.falsification));
    }
    Ok((prep, report, loaded.strata))
}

fn cmd_bounds(args: &DataArgs, p: Precision) -> Result<Report> {
    let (prep, report, strata) = bounds_for(args)?;
    let entries: Vec<Value> = report.entries.iter().map(|e| entry_json(e, &strata)).collect();
    let mut json = json!({
        "model": report.model,
        "sharp": report.sharp,
    });
    if let [only] = entries.as_slice() {
        for key in ["q_w0_r1", "interval", "lower_open", "upper_open", "excluded_point", "no_inflation", "r0_interval"] {
            json[key] = only[key].clone();
        }
    }
    json["entries"] = Value::Array(entries);
    json["falsification"] = serde_json::to_value(&report.falsification)?;
    let json = merge(json, prep.meta);
    let opt = |v: Option<f64>| v.map(|x| p.cell(x)).unwrap_or_default();
    let rows = report
        .entries
        .iter()
        .map(|e| {
            let iv = &e.interval;
            vec![
                (e.indicator + 1).to_string(),
                e.stratum.map(|s| s.to_string()).unwrap_or_default(),
                p.cell(e.q_w0_given_r1),
                p.cell(iv.lower),
                p.cell(iv.upper),
                iv.lower_open.to_string(),
                iv.upper_open.to_string(),
                opt(iv.excluded_point),
                iv.no_inflation.to_string(),
                opt(e.r0_interval.as_ref().map(|r| r.lower)),
                opt(e.r0_interval.as_ref().map(|r| r.upper)),
            ]
        })
        .collect();
    let header = [
        "indicator",
        "stratum",
        "q_w0_r1",
        "lower",
        "upper",
        "lower_open",
        "upper_open",
        "excluded_point",
        "no_inflation",
        "r0_lower",
        "r0_upper",
    ]
    .map(String::from)
    .to_vec();
    Ok(Report { json, header, rows })
}

fn cmd_sensitivity(args: &DataArgs, grid: usize, p: Precision) -> Result<(Report, Value)> {
    if grid < 2 {
        bail!("--grid must be at least 2");
    }
    let (prep, report, _) = bounds_for(args)?;
    let curve = sensitivity_curve_from_report(&prep.law, &report, grid)?;
    let nx = prep.law.x_card(0);
    let stratified = report.model == Model::MarStratified;
    let ranges: Vec<Value> = (0..nx).map(|x| json!(curve.target_range(x).map(|(lo, hi)| [lo, hi]))).collect();
    let summary = merge(
        json!({
            "model": curve.model,
            "grid_n": curve.grid_n,
            "no_inflation": curve.no_inflation,
            "n_points": curve.points.len(),
            "n_feasible": curve.points.iter().filter(|pt| pt.feasible).count(),
            "target_range": ranges,
            "entries": report.entries.iter().map(|e| entry_json(e, &[])).collect::<Vec<_>>(),
        }),
        prep.meta,
    );
    let n_strata = curve.points.first().map_or(0, |pt| pt.q_by_stratum.len());
    let mut header = vec!["q_w0_r0".to_string()];
    if stratified {
        header.extend((0..n_strata).map(|c| format!("q_w0_r0_c{c}")));
    }
    header.push("p_r0".into());
    header.extend((0..nx).map(|x| format!("target_x{x}")));
    header.push("feasible".into());
    let rows = curve
        .points
        .iter()
        .map(|pt| {
            let mut row = vec![p.cell(pt.q_w0_r0)];
            if stratified {
                row.extend(pt.q_by_stratum.iter().map(|&q| p.cell(q)));
            }
            row.push(p.cell(pt.p_r0));
            row.extend((0..nx).map(|x| pt.target.get(x).map(|&v| p.cell(v)).unwrap_or_default()));
            row.push(pt.feasible.to_string());
            row
        })
        .collect();
    let json = merge(summary.clone(), json!({ "points": curve.points }));
    Ok((Report { json, header, rows }, summary))
}

fn cmd_verify(args: &DataArgs, grid: usize, p: Precision) -> Result<(Report, bool)> {
    let (prep, report, _) = bounds_for(args)?;
    let mut oracle = grid_feasibility_oracle(&prep.law, args.model, grid)?;
    oracle.sort_by_key(|e| (e.indicator, e.stratum));
    let limit = 2.0 / grid as f64;
    let mut worst: f64 = 0.0;
    let mut rows_json = vec![];
    let mut rows = vec![];
    for (a, o) in report.entries.iter().zip(&oracle) {
        let gap = (a.interval.lower - o.interval.lower).abs().max((a.interval.upper - o.interval.upper).abs());
        worst = worst.max(gap);
        rows_json.push(json!({
            "indicator": a.indicator + 1,
            "stratum": a.stratum,
            "lb": a.interval.lower,
            "ub": a.interval.upper,
            "num_lb": o.interval.lower,
            "num_ub": o.interval.upper,
            "max_gap": gap,
        }));
        rows.push(vec![
            (a.indicator + 1).to_string(),
            a.stratum.map(|s| s.to_string()).unwrap_or_default(),
            p.cell(a.interval.lower),
            p.cell(a.interval.upper),
            p.cell(o.interval.lower),
            p.cell(o.interval.upper),
            p.cell(gap),
        ]);
    }
    let pass = worst <= limit && report.entries.len() == oracle.len();
    let json = merge(
        json!({ "model": args.model, "grid_n": grid, "tolerance": limit, "max_gap": worst, "pass": pass, "rows": rows_json }),
        prep.meta,
    );
    let header = ["indicator", "stratum", "lb", "ub", "num_lb", "num_ub", "max_gap"].map(String::from).to_vec();
    Ok((Report { json, header, rows }, pass))
}

fn cmd_simulate(model: DgpModel, n_dgps: usize, grid: usize, seed: u64, p: Precision) -> Result<(Report, bool)> {
    if n_dgps == 0 || grid < 2 {
        bail!("--n-dgps must be positive and --grid at least 2");
    }
    let rep = validate_bounds_harness(model, n_dgps, grid, seed);
    let c = rep.check_passes;
    let w = rep.worst;
    let rows = [
        ("identification", c.identification, w.identification),
        ("containment", c.containment, w.containment),
        ("consistency", c.consistency, w.restoration),
        ("constraints", c.constraints, w.constraint),
        ("round_trip", c.round_trip, w.round_trip),
    ]
    .iter()
    .map(|(name, passes, worst)| vec![name.to_string(), passes.to_string(), n_dgps.to_string(), p.cell(*worst)])
    .collect();
    let header = ["check", "passed", "n_dgps", "worst_residual"].map(String::from).to_vec();
    let pass = rep.all_passed();
    Ok((Report { json: serde_json::to_value(&rep)?, header, rows }, pass))
}

fn cmd_nonid(m: f64, p: Precision) -> Result<Report> {
    let a = fixtures::mcar();
    let b = nonid_pair(&a, m)?;
    let (ta, tb) = (a.target_law(), b.target_law());
    let observed_gap = a.observed_law().table().max_abs_diff(b.observed_law().table());
    let target_gap = ta.max_abs_diff(&tb);
    let json = json!({
        "m": m,
        "original": a.params,
        "paired": b.params,
        "observed_gap": observed_gap,
        "target_original": ta.probs(),
        "target_paired": tb.probs(),
        "target_gap": target_gap,
    });
    let mut rows: Vec<Vec<String>> = ta
        .probs()
        .iter()
        .zip(tb.probs())
        .enumerate()
        .map(|(x, (u, v))| vec![format!("p(X(1)={x})"), p.cell(*u), p.cell(*v)])
        .collect();
    rows.push(vec!["p(R=0)".into(), p.cell(a.p_r0(0)), p.cell(b.p_r0(0))]);
    rows.push(vec!["q(w0|r0)".into(), p.cell(a.true_q0(0, 0)), p.cell(b.true_q0(0, 0))]);
    rows.push(vec!["q(w0|r1)".into(), p.cell(a.true_q1(0, 0)), p.cell(b.true_q1(0, 0))]);
    let header = ["quantity", "original", "paired"].map(String::from).to_vec();
    Ok(Report { json, header, rows })
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("thread count must be positive");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let sink = Sink { format: cli.format, precision: cli.precision, output: cli.output };
    let p = sink.precision;
    let verdict = |ok: bool| if ok { 0 } else { 2 };
    match &cli.cmd {
        Cmd::Falsify { data, sigmas } => {
            let (report, pass) = cmd_falsify(data, *sigmas, p)?;
            sink.emit(report)?;
            Ok(verdict(pass))
        }
        Cmd::Bounds { data } => {
            sink.emit(cmd_bounds(data, p)?)?;
            Ok(0)
        }
        Cmd::Sensitivity { data, grid } => {
            let (report, summary) = cmd_sensitivity(data, *grid, p)?;
            let csv_to_file = sink.format == Format::Csv && sink.output.is_some();
            let csv_to_stdout = sink.format == Format::Csv && sink.output.is_none();
            sink.emit(report)?;
            if csv_to_file {
                println!("{}", sink.json_string(summary));
            } else if csv_to_stdout {
                eprintln!("{}", sink.json_string(summary));
            }
            Ok(0)
        }
        Cmd::Simulate { model, n_dgps, grid, seed } => {
            let (report, pass) = cmd_simulate(*model, *n_dgps, *grid, *seed, p)?;
            sink.emit(report)?;
            Ok(verdict(pass))
        }
        Cmd::Verify { data, grid } => {
            let (report, pass) = cmd_verify(data, *grid, p)?;
            sink.emit(report)?;
            Ok(verdict(pass))
        }
        Cmd::NonidDemo { m } => {
            sink.emit(cmd_nonid(*m, p)?)?;
            Ok(0)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::FalsifiedModel { .. } | Error::IncompatibleChannel { .. } | Error::NoFeasiblePoint) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
