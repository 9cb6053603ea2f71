use clap::{Args, Parser, Subcommand};
use hemo1d::analysis::build_report;
use hemo1d::config::{
    execute_run, parse_config, read_outputs, scale_measured_flows, MeasuredFlowSet, RunConfig,
};
use hemo1d::network::Posture;
use hemo1d::solver::estimate_time_step;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

/// 1D pulse-wave hemodynamics with structured-tree outflow boundaries.
#[derive(Parser)]
#[command(name = "hemo1d", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation to periodic convergence and write its artifacts.
    Run(RunArgs),
    /// Validate inputs, estimate the time step, and dry-run flow scaling.
    Check(RunArgs),
    /// Recompute the analysis report from a previous run's saved series.
    Analyze(AnalyzeArgs),
    /// Rescale measured flow planes to enforce mass conservation.
    ScaleFlows(ScaleFlowsArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file; command-line flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    inflow: Option<PathBuf>,
    /// supine | upright
    #[arg(long)]
    posture: Option<String>,
    /// Apply the exercise transform to the inflow.
    #[arg(long)]
    exercise: bool,
    #[arg(long)]
    flow_factor: Option<f64>,
    #[arg(long)]
    period_factor: Option<f64>,
    /// Target spatial step in cm.
    #[arg(long)]
    grid_dx: Option<f64>,
    /// Maximum cycles to run.
    #[arg(long)]
    cycles: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Configuration file of the original run.
    #[arg(long)]
    config: PathBuf,
    /// Output directory holding the saved series (defaults to the config's).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScaleFlowsArgs {
    /// Measured-flow plane set (JSON). Falls back to the config's.
    #[arg(long)]
    flows: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Check(args) => cmd_check(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::ScaleFlows(args) => cmd_scale_flows(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn build_config(args: &RunArgs) -> hemo1d::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => parse_config(path)?,
        None => {
            let network = args.network.clone().ok_or_else(|| {
                hemo1d::Error::Config("--network is required without --config".into())
            })?;
            let inflow = args.inflow.clone().ok_or_else(|| {
                hemo1d::Error::Config("--inflow is required without --config".into())
            })?;
            RunConfig {
                network,
                inflow,
                posture: Posture::Supine,
                exercise: false,
                flow_factor: 2.0,
                period_factor: 0.6,
                grid: Default::default(),
                tree: Default::default(),
                p0: 0.0,
                vessel_overrides: BTreeMap::new(),
                regions: BTreeMap::new(),
                wia_vessels: Vec::new(),
                measured_flows: None,
                dump_impedance: false,
                out: PathBuf::from("out"),
                threads: None,
            }
        }
    };
    if let Some(n) = &args.network {
        cfg.network = n.clone();
    }
    if let Some(i) = &args.inflow {
        cfg.inflow = i.clone();
    }
    if let Some(p) = &args.posture {
        cfg.posture = match p.as_str() {
            "supine" => Posture::Supine,
            "upright" => Posture::Upright,
            other => {
                return Err(hemo1d::Error::Config(format!(
                    "posture must be supine or upright, got {other:?}"
                )))
            }
        };
    }
    if args.exercise {
        cfg.exercise = true;
    }
    if let Some(f) = args.flow_factor {
        cfg.flow_factor = f;
    }
    if let Some(f) = args.period_factor {
        cfg.period_factor = f;
    }
    if let Some(dx) = args.grid_dx {
        cfg.grid.dx_cm = dx;
    }
    if let Some(c) = args.cycles {
        cfg.grid.max_cycles = c;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    if let Some(t) = args.threads {
        cfg.threads = Some(t);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> hemo1d::Result<()> {
    let cfg = build_config(&args)?;
    let artifacts = execute_run(&cfg, true)?;
    let d = &artifacts.manifest.diagnostics;
    println!(
        "run finished: {} cycles ({}), cycle delta {:.3e}",
        d.cycles_run,
        if d.converged { "converged" } else { "not converged" },
        d.final_cycle_delta
    );
    println!(
        "  dt = {:.3e} s, {} steps/period, junction residuals: flow {:.3e}, pressure {:.3e}",
        d.dt_s, d.steps_per_period, d.max_junction_flow_residual, d.max_junction_pressure_residual
    );
    println!(
        "  volume audit: in {:.3} mL, out {:.3} mL, stored {:+.3} mL, residual {:.3e}",
        d.volume_in_ml, d.volume_out_ml, d.volume_stored_delta_ml, d.volume_audit_rel
    );
    println!("  artifacts in {}", cfg.out.display());
    if !d.converged {
        eprintln!("warning: run stopped at max_cycles before reaching periodicity");
    }
    Ok(())
}

fn cmd_check(args: RunArgs) -> hemo1d::Result<()> {
    let cfg = build_config(&args)?;
    let (network, inflow) = cfg.load_inputs()?;
    println!(
        "network: {} vessels, root id {}, {} terminals",
        network.vessels.len(),
        network.vessels[network.root].id,
        network.terminal_indices().len()
    );
    for w in &network.warnings {
        println!("warning: {w}");
    }
    println!(
        "inflow: period {:.4} s, mean {:.3} mL/s ({:.3} L/min), peak {:.1} mL/s",
        inflow.period,
        inflow.mean(),
        inflow.mean() * 60.0 / 1000.0,
        inflow.peak()
    );
    let (dt_bound, n) = estimate_time_step(&network, &cfg.grid, inflow.period)?;
    println!(
        "grid: dx target {} cm, CFL-bound dt {:.3e} s -> {} steps/period (dt {:.3e} s)",
        cfg.grid.dx_cm,
        dt_bound,
        n,
        inflow.period / n as f64
    );
    if let Some(flows) = &cfg.measured_flows {
        let set = MeasuredFlowSet::from_file(flows)?;
        let scaled = scale_measured_flows(&set)?;
        println!("measured-flow scaling factors:");
        for p in &scaled.planes {
            println!(
                "  {:<18} {:>7.3} -> {:>7.3} L/min (factor {:.3})",
                p.name, p.measured_lmin, p.scaled_lmin, p.factor
            );
        }
    }
    println!("OK");
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> hemo1d::Result<()> {
    let cfg = parse_config(&args.config)?;
    let out = args.out.unwrap_or_else(|| cfg.out.clone());
    let manifest_text = std::fs::read_to_string(out.join("manifest.json"))
        .map_err(|e| hemo1d::Error::Config(format!("cannot read manifest: {e}")))?;
    let manifest: serde_json::Value = serde_json::from_str(&manifest_text)
        .map_err(|e| hemo1d::Error::Parse(format!("manifest: {e}")))?;
    let period = manifest["period_s"]
        .as_f64()
        .ok_or_else(|| hemo1d::Error::Parse("manifest missing period_s".into()))?;

    let (network, _) = cfg.load_inputs()?;
    let result = read_outputs(&out, &network, period)?;
    let report = build_report(&result, &network, &cfg.regions, &cfg.wia_vessels)?;
    std::fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n",
    )?;
    println!("report rewritten to {}", out.join("report.json").display());
    Ok(())
}

fn cmd_scale_flows(args: ScaleFlowsArgs) -> hemo1d::Result<()> {
    let flows_path = match (&args.flows, &args.config) {
        (Some(f), _) => f.clone(),
        (None, Some(c)) => parse_config(c)?
            .measured_flows
            .ok_or_else(|| hemo1d::Error::Config("config has no measured_flows entry".into()))?,
        (None, None) => {
            return Err(hemo1d::Error::Config(
                "scale-flows needs --flows or --config".into(),
            ))
        }
    };
    let set = MeasuredFlowSet::from_file(&flows_path)?;
    let scaled = scale_measured_flows(&set)?;
    println!(
        "{:<18} {:>9} {:>9} {:>8}",
        "plane", "measured", "scaled", "factor"
    );
    for p in &scaled.planes {
        println!(
            "{:<18} {:>9.3} {:>9.3} {:>8.3}",
            p.name, p.measured_lmin, p.scaled_lmin, p.factor
        );
    }
    Ok(())
}
