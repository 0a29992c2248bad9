//! Batch front end: one-shot solves, rolling-horizon backtests, and model
//! comparison tables, all driven by a TOML run config.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 solver
//! failure. Diagnostics go to standard error, result tables to standard
//! output, files to the configured output directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{NaiveDate, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mrea::config::{LoadedRun, OutputFormat, RunConfig};
use mrea::metrics::{self, PerformanceIndices};
use mrea::multi_region::{self, MreaInstance};
use mrea::report::{self, Manifest, TableRow};
use mrea::sim::{self, BacktestSpec, HorizonPlan, ModelKind};
use mrea::single_region::{self, SingleModel, SingleRegionInstance};
use mrea::solver::export_lp_to_path;
use mrea::{MreaError, Result};

#[derive(Parser)]
#[command(name = "mrea", version, about = "Battery arbitrage across coupled day-ahead markets")]
struct Cli {
    /// Run config (TOML); defaults to $MREA_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one window and write dispatch plus an indices row.
    Solve(SolveArgs),
    /// Rolling-horizon backtest with yearly aggregation.
    Backtest(BacktestArgs),
    /// Run every model on one instance and emit a comparison table.
    Benchmark(BenchArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Override the configured model.
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Solve this UTC day only.
    #[arg(long, conflicts_with_all = ["from", "to"])]
    date: Option<NaiveDate>,
    /// First UTC day of the range (inclusive).
    #[arg(long)]
    from: Option<NaiveDate>,
    /// Last UTC day of the range (inclusive).
    #[arg(long)]
    to: Option<NaiveDate>,
    /// Flow scenario: none disables envelopes, file and reversed use the
    /// recorded flows (reversed flips their sign).
    #[arg(long, value_enum)]
    flow: Option<FlowArg>,
    /// Also write the model in LP text format.
    #[arg(long)]
    export_lp: bool,
}

#[derive(Args)]
struct BacktestArgs {
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    #[arg(long)]
    from: Option<NaiveDate>,
    #[arg(long)]
    to: Option<NaiveDate>,
    /// Comma-separated planning efficiencies; runs one backtest per value
    /// and writes a sweep table.
    #[arg(long)]
    sweep_eta_pseudo: Option<String>,
    #[arg(long, value_enum)]
    flow: Option<FlowArg>,
    /// Commit zero dispatch for failed windows instead of aborting.
    #[arg(long)]
    skip_failed: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Restrict the comparison to this UTC day.
    #[arg(long)]
    date: Option<NaiveDate>,
    /// Monte Carlo repetitions of the configured model (0 = off).
    #[arg(long, default_value_t = 0)]
    mc_runs: usize,
    /// Lognormal price noise level for Monte Carlo runs.
    #[arg(long, default_value_t = 0.1)]
    mc_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Lp,
    Milp,
    Nodis,
    Dp,
    Mrea,
}

impl ModelArg {
    fn kind(self) -> ModelKind {
        match self {
            ModelArg::Lp => ModelKind::Lp,
            ModelArg::Milp => ModelKind::Milp,
            ModelArg::Nodis => ModelKind::NoDis,
            ModelArg::Dp => ModelKind::Dp,
            ModelArg::Mrea => ModelKind::Mrea,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FlowArg {
    None,
    File,
    Reversed,
}

fn exit_code(e: &MreaError) -> u8 {
    match e {
        MreaError::Config(_) | MreaError::InvalidParams(_) | MreaError::Grid(_) => 2,
        MreaError::Parse { .. }
        | MreaError::Gap { .. }
        | MreaError::Data(_)
        | MreaError::LengthMismatch(_)
        | MreaError::Io(_) => 3,
        MreaError::SolverFailure { .. }
        | MreaError::InfeasibleSoc { .. }
        | MreaError::RampViolation { .. } => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Where results go and what gets stamped into the manifest.
struct Ctx {
    out_dir: PathBuf,
    formats: Vec<OutputFormat>,
    config_path: String,
    config_sha256: String,
    outputs: Vec<String>,
}

impl Ctx {
    fn write_csv(&mut self, name: &str, content: &str) -> Result<()> {
        if !self.formats.contains(&OutputFormat::Csv) {
            return Ok(());
        }
        let path = self.out_dir.join(name);
        report::write_text(&path, content)?;
        self.outputs.push(path.display().to_string());
        Ok(())
    }

    fn write_manifest(
        &mut self,
        command: &str,
        model: &str,
        seed: Option<u64>,
        wall_time_s: f64,
    ) -> Result<()> {
        if !self.formats.contains(&OutputFormat::Json) {
            return Ok(());
        }
        let manifest = Manifest {
            command: command.into(),
            model: model.into(),
            config_path: self.config_path.clone(),
            config_sha256: self.config_sha256.clone(),
            args: std::env::args().skip(1).collect(),
            seed,
            solver_status: "optimal".into(),
            wall_time_s,
            outputs: self.outputs.clone(),
            created_utc: Utc::now().to_rfc3339(),
        };
        report::write_text(&self.out_dir.join("manifest.json"), &manifest.to_json()?)
    }
}

fn run(cli: Cli) -> Result<()> {
    let config_path = cli
        .config
        .or_else(|| std::env::var_os("MREA_CONFIG").map(PathBuf::from))
        .ok_or_else(|| {
            MreaError::Config("no --config given and MREA_CONFIG is unset".into())
        })?;
    let cfg = RunConfig::from_path(&config_path)?;
    let bytes = std::fs::read(&config_path)
        .map_err(|e| MreaError::Config(format!("{}: {e}", config_path.display())))?;
    let base = config_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."))
        .to_path_buf();
    let loaded = cfg.load(&base)?;
    let mut ctx = Ctx {
        out_dir: cli.out.unwrap_or_else(|| base.join(&cfg.output.dir)),
        formats: cfg.output.formats.clone(),
        config_path: config_path.display().to_string(),
        config_sha256: report::sha256_hex(&bytes),
        outputs: Vec::new(),
    };

    match cli.command {
        Command::Solve(args) => cmd_solve(&cfg, loaded, &args, &mut ctx),
        Command::Backtest(args) => cmd_backtest(&cfg, loaded, &args, &mut ctx),
        Command::Benchmark(args) => cmd_benchmark(loaded, &args, &mut ctx),
    }
}

/// Restrict all series to one day or an inclusive day range.
fn apply_range(
    run: &mut LoadedRun,
    date: Option<NaiveDate>,
    from: Option<NaiveDate>,
    to: Option<NaiveDate>,
) -> Result<()> {
    let (start, len) = if let Some(d) = date {
        run.home
            .day_range(d)
            .ok_or_else(|| MreaError::Data(format!("no data for {d}")))?
    } else {
        let ts = &run.home.timestamps;
        let first = match from {
            Some(d) => ts
                .iter()
                .position(|x| x.date_naive() >= d)
                .ok_or_else(|| MreaError::Data(format!("no data on or after {d}")))?,
            None => 0,
        };
        let one_past = match to {
            Some(d) => ts
                .iter()
                .rposition(|x| x.date_naive() <= d)
                .map(|i| i + 1)
                .ok_or_else(|| MreaError::Data(format!("no data on or before {d}")))?,
            None => ts.len(),
        };
        if one_past <= first {
            return Err(MreaError::Data("empty date range".into()));
        }
        (first, one_past - first)
    };
    run.home = run.home.slice(start, len);
    for (p, ic) in run.remotes.iter_mut() {
        *p = p.slice(start, len);
        *ic = ic.slice(start, len);
    }
    Ok(())
}

/// Apply the `--flow` scenario. Forcing flows on requires configured flow
/// files; `none` just drops the envelopes.
fn apply_flow(cfg: &RunConfig, run: &mut LoadedRun, flow: Option<FlowArg>) -> Result<()> {
    let Some(flow) = flow else { return Ok(()) };
    match flow {
        FlowArg::None => run.use_flow_envelopes = false,
        FlowArg::File | FlowArg::Reversed => {
            for m in &cfg.markets {
                if let Some(ic) = &m.interconnector {
                    if ic.flow_file.is_none() {
                        return Err(MreaError::Config(format!(
                            "--flow {}: market '{}' has no flow_file configured",
                            if flow == FlowArg::File { "file" } else { "reversed" },
                            m.id
                        )));
                    }
                }
            }
            run.use_flow_envelopes = true;
            if flow == FlowArg::Reversed {
                for (_, ic) in run.remotes.iter_mut() {
                    *ic = ic.reversed();
                }
            }
        }
    }
    Ok(())
}

fn flow_label(flow: Option<FlowArg>, envelopes: bool) -> &'static str {
    match flow {
        Some(FlowArg::None) => "none",
        Some(FlowArg::File) => "file",
        Some(FlowArg::Reversed) => "reversed",
        None if envelopes => "file",
        None => "none",
    }
}

/// Names for the dispatch CSV columns, home market first.
fn market_names(run: &LoadedRun) -> Vec<String> {
    let mut names = vec![run.home.market_id.clone()];
    names.extend(run.remotes.iter().map(|(p, _)| p.market_id.clone()));
    names
}

struct Solved {
    x: Vec<Vec<f64>>,
    soc: Vec<f64>,
    z: Option<(Vec<f64>, Vec<f64>)>,
    indices: PerformanceIndices,
}

fn solve_once(run: &LoadedRun, model: ModelKind) -> Result<Solved> {
    match model {
        ModelKind::Mrea => {
            let inst = MreaInstance::new(
                run.params.clone(),
                run.home.clone(),
                run.remotes.clone(),
            )?;
            let sol = multi_region::solve_mrea(&inst, run.use_flow_envelopes, &run.options)?;
            let cycles = metrics::count_cycles(&sol.soc, &run.params, run.cycle_method);
            let mut x = vec![sol.x_home];
            x.extend(sol.x_remote);
            Ok(Solved {
                x,
                soc: sol.soc.b[1..].to_vec(),
                z: Some((sol.z_ch, sol.z_dis)),
                indices: metrics::indices(sol.revenue_true, cycles, sol.m_ind, sol.wall_time),
            })
        }
        single => {
            let inst = SingleRegionInstance::new(run.params.clone(), run.home.clone())?;
            let d = match single {
                ModelKind::Lp => single_region::solve_lp(&inst, &run.options)?,
                ModelKind::Milp => single_region::solve_milp(&inst, &run.options)?,
                ModelKind::NoDis => single_region::solve_nodis(&inst, &run.options)?,
                ModelKind::Dp => {
                    let cfg = run
                        .dp
                        .unwrap_or_else(|| single_region::DpConfig::for_params(&run.params));
                    single_region::solve_dp(&inst, &cfg)?
                }
                ModelKind::Mrea => unreachable!(),
            };
            let cycles = metrics::count_cycles(&d.soc, &run.params, run.cycle_method);
            Ok(Solved {
                soc: d.soc.b[1..].to_vec(),
                z: None,
                indices: metrics::indices(d.revenue_true, cycles, 0.0, d.wall_time),
                x: vec![d.x],
            })
        }
    }
}

fn cmd_solve(cfg: &RunConfig, mut run: LoadedRun, args: &SolveArgs, ctx: &mut Ctx) -> Result<()> {
    apply_range(&mut run, args.date, args.from, args.to)?;
    apply_flow(cfg, &mut run, args.flow)?;
    let model = args.model.map(ModelArg::kind).unwrap_or(run.model);

    let solved = solve_once(&run, model)?;
    let names = market_names(&run);
    let series: Vec<(String, Vec<f64>)> = names.into_iter().zip(solved.x.clone()).collect();
    let dispatch = report::dispatch_csv(
        &run.home.timestamps,
        &series[..solved.x.len()],
        &solved.soc,
        solved.z.as_ref().map(|(c, d)| (c.as_slice(), d.as_slice())),
    );
    let row = TableRow {
        model: model.as_str().into(),
        flow: flow_label(args.flow, run.use_flow_envelopes).into(),
        indices: solved.indices,
    };
    let table = report::indices_csv(std::slice::from_ref(&row));
    print!("{table}");
    ctx.write_csv("dispatch.csv", &dispatch)?;
    ctx.write_csv("indices.csv", &table)?;

    if args.export_lp {
        let lp = match model {
            ModelKind::Mrea => {
                let inst = MreaInstance::new(
                    run.params.clone(),
                    run.home.clone(),
                    run.remotes.clone(),
                )?;
                multi_region::build_mrea(&inst, run.use_flow_envelopes)?
            }
            ModelKind::Dp => {
                return Err(MreaError::Config(
                    "--export-lp is not available for the dp model".into(),
                ))
            }
            single => {
                let inst = SingleRegionInstance::new(run.params.clone(), run.home.clone())?;
                let kind = match single {
                    ModelKind::Lp => SingleModel::Lp,
                    ModelKind::Milp => SingleModel::Milp,
                    ModelKind::NoDis => SingleModel::NoDis,
                    _ => unreachable!(),
                };
                single_region::build_single(&inst, kind)
            }
        };
        let path = ctx.out_dir.join("model.lp");
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        export_lp_to_path(&lp, &path)?;
        ctx.outputs.push(path.display().to_string());
    }
    ctx.write_manifest("solve", model.as_str(), None, solved.indices.wall_time)
}

fn backtest_spec(run: &LoadedRun, model: ModelKind, skip_failed: bool) -> BacktestSpec {
    BacktestSpec {
        params: run.params.clone(),
        home_prices: run.home.clone(),
        remote_markets: if model == ModelKind::Mrea {
            run.remotes.clone()
        } else {
            Vec::new()
        },
        use_flow_envelopes: run.use_flow_envelopes,
        model,
        dp: run.dp,
        cycle_method: run.cycle_method,
        skip_failed_windows: skip_failed,
    }
}

fn cmd_backtest(
    cfg: &RunConfig,
    mut run: LoadedRun,
    args: &BacktestArgs,
    ctx: &mut Ctx,
) -> Result<()> {
    apply_range(&mut run, None, args.from, args.to)?;
    apply_flow(cfg, &mut run, args.flow)?;
    let model = args.model.map(ModelArg::kind).unwrap_or(run.model);
    let spec = backtest_spec(&run, model, args.skip_failed);

    if let Some(list) = &args.sweep_eta_pseudo {
        let mut rows = Vec::new();
        for item in list.split(',') {
            let ep: f64 = item.trim().parse().map_err(|_| {
                MreaError::Config(format!("bad eta_pseudo value '{item}' in sweep list"))
            })?;
            let mut s = spec.clone();
            s.params = s.params.with_eta_pseudo(ep);
            let rep = sim::run_backtest(&s, &run.plan, &run.options)?;
            rows.push((ep, rep.totals));
        }
        let table = report::sweep_csv(&rows);
        print!("{table}");
        ctx.write_csv("sweep.csv", &table)?;
        let wall = rows.iter().map(|(_, ix)| ix.wall_time).sum();
        return ctx.write_manifest("backtest", model.as_str(), None, wall);
    }

    let rep = sim::run_backtest(&spec, &run.plan, &run.options)?;
    if !rep.skipped_windows.is_empty() {
        eprintln!(
            "warning: {} window(s) failed and were committed as zero dispatch",
            rep.skipped_windows.len()
        );
    }
    let table = report::backtest_csv(&rep);
    print!("{table}");
    let names = market_names(&run);
    let series: Vec<(String, Vec<f64>)> = names
        .into_iter()
        .zip(rep.dispatch.iter().cloned())
        .collect();
    ctx.write_csv(
        "dispatch.csv",
        &report::dispatch_csv(&rep.timestamps, &series[..rep.dispatch.len()], &rep.soc, None),
    )?;
    ctx.write_csv("backtest.csv", &table)?;
    ctx.write_csv("canonical.csv", &rep.canonical_csv())?;
    ctx.write_manifest("backtest", model.as_str(), None, rep.totals.wall_time)
}

fn cmd_benchmark(mut run: LoadedRun, args: &BenchArgs, ctx: &mut Ctx) -> Result<()> {
    apply_range(&mut run, args.date, None, None)?;
    let mut rows = Vec::new();
    for model in [ModelKind::Lp, ModelKind::NoDis, ModelKind::Dp, ModelKind::Milp] {
        let solved = solve_once(&run, model)?;
        rows.push(TableRow {
            model: model.as_str().into(),
            flow: "-".into(),
            indices: solved.indices,
        });
    }
    if !run.remotes.is_empty() {
        let has_flows = run
            .remotes
            .iter()
            .any(|(_, ic)| ic.flow.iter().any(|f| *f != 0.0));
        let mut scenarios = vec![(FlowArg::None, false)];
        if has_flows {
            scenarios.push((FlowArg::File, true));
            scenarios.push((FlowArg::Reversed, true));
        }
        for (scenario, envelopes) in scenarios {
            let mut r = run.clone();
            r.use_flow_envelopes = envelopes;
            if scenario == FlowArg::Reversed {
                for (_, ic) in r.remotes.iter_mut() {
                    *ic = ic.reversed();
                }
            }
            let solved = solve_once(&r, ModelKind::Mrea)?;
            rows.push(TableRow {
                model: "mrea".into(),
                flow: flow_label(Some(scenario), envelopes).into(),
                indices: solved.indices,
            });
        }
    }
    let table = report::indices_csv(&rows);
    print!("{table}");
    ctx.write_csv("benchmark.csv", &table)?;

    let mut wall: f64 = rows.iter().map(|r| r.indices.wall_time).sum();
    if args.mc_runs > 0 {
        let spec = backtest_spec(&run, run.model, false);
        let mc = sim::run_monte_carlo(
            &spec,
            &HorizonPlan::default(),
            args.mc_runs,
            args.mc_sigma,
            args.seed,
            &run.options,
        )?;
        let mut text = String::from("run,revenue,cycles,wall_time_s\n");
        for r in &mc.runs {
            text.push_str(&format!(
                "{},{:.6},{:.6},{:.3}\n",
                r.run, r.revenue, r.cycles, r.wall_time
            ));
        }
        eprintln!(
            "monte carlo: mean wall {:.3}s, p50 {:.3}s, p95 {:.3}s over {} runs",
            mc.mean_wall_time,
            mc.p50_wall_time,
            mc.p95_wall_time,
            mc.runs.len()
        );
        wall += mc.runs.iter().map(|r| r.wall_time).sum::<f64>();
        ctx.write_csv("mc.csv", &text)?;
    }
    ctx.write_manifest(
        "benchmark",
        run.model.as_str(),
        (args.mc_runs > 0).then_some(args.seed),
        wall,
    )
}
