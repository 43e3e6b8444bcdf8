use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use formsim::engine::{RunSummary, Scheme};
use formsim::output::{self, ColumnLayout, Quantity, Table};
use formsim::scenario::{self, Overrides, Scenario, SignKind};
use formsim::Error;

#[derive(Parser)]
#[command(
    name = "formsim",
    version,
    about = "Binary-information formation control simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file (or preset) against every hypothesis of its controller.
    Validate { scenario: String },
    /// Integrate a scenario and write trajectory.csv, positions.csv and summary.json.
    Run(RunArgs),
    /// Render one quantity of a trajectory CSV as SVG.
    Plot {
        csv: PathBuf,
        #[arg(long, short)]
        quantity: String,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Bundled scenarios.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
    /// Print a preset's JSON.
    Show {
        name: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SignArg {
    Strict,
    Hysteresis,
    Smooth,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Euler,
    Rk4,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario file, or a preset as `presets/<name>` or `<name>`.
    scenario: String,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long, value_enum)]
    sign_mode: Option<SignArg>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    /// Keep every n-th step in the CSV files.
    #[arg(long)]
    output_stride: Option<usize>,
    /// Output directory (default: $FORMSIM_OUT, else ./formsim-out/<name>).
    #[arg(long, env = "FORMSIM_OUT")]
    out: Option<PathBuf>,
    /// Comma-separated step sizes; each runs in its own worker and writes to
    /// <out>/dt_<dt>/. Overrides --dt.
    #[arg(long, value_delimiter = ',')]
    dt_sweep: Vec<f64>,
    /// Also write every plot quantity the run supports.
    #[arg(long)]
    plots: bool,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    scenario: &'a str,
    #[serde(flatten)]
    summary: &'a RunSummary,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(h) = e.violated_hypothesis() {
                eprintln!("violated hypothesis: {h}");
            }
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> formsim::Result<ExitCode> {
    match cmd {
        Command::Validate { scenario } => {
            let sc = scenario::load(&scenario)?;
            println!(
                "ok: {} ({} agents, {} edges, {}, {} sign mode)",
                sc.name.as_deref().unwrap_or(&scenario),
                sc.n_agents(),
                sc.graph.edges.len(),
                sc.controller.mode,
                sc.controller.sign_mode().name()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => run(args),
        Command::Plot { csv, quantity, out } => {
            let q = Quantity::from_name(&quantity)?;
            let table = if q == Quantity::Trajectory2d {
                Table::read(positions_for(&csv))?
            } else {
                Table::read(&csv)?
            };
            output::emit_plot(&table, q, &out)?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Presets { action } => {
            match action {
                PresetAction::List => {
                    for name in scenario::preset_names() {
                        let desc = scenario::preset(name)?.description.unwrap_or_default();
                        println!("{name:<26} {desc}");
                    }
                }
                PresetAction::Show { name } => {
                    let text =
                        scenario::preset_text(&name).ok_or_else(|| scenario::preset(&name).unwrap_err())?;
                    print!("{text}");
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// `positions.csv` next to a trajectory file, unless the file itself holds
/// positions.
fn positions_for(csv: &Path) -> PathBuf {
    let has_x = Table::read(csv)
        .map(|t| !t.block("x").is_empty())
        .unwrap_or(false);
    if has_x {
        csv.to_path_buf()
    } else {
        csv.with_file_name("positions.csv")
    }
}

fn run(args: RunArgs) -> formsim::Result<ExitCode> {
    let mut sc = scenario::load(&args.scenario)?;
    sc.apply_overrides(&Overrides {
        dt: args.dt,
        t_final: args.t_final,
        sign_mode: args.sign_mode.map(|s| match s {
            SignArg::Strict => SignKind::Strict,
            SignArg::Hysteresis => SignKind::Hysteresis,
            SignArg::Smooth => SignKind::Smooth,
        }),
        eps: args.eps,
        scheme: args.scheme.map(|s| match s {
            SchemeArg::Euler => Scheme::Euler,
            SchemeArg::Rk4 => Scheme::Rk4,
        }),
    });
    if let Some(s) = args.output_stride {
        sc.integration.output_stride = s;
    }
    let name = sc.name.clone().unwrap_or_else(|| {
        Path::new(&args.scenario)
            .file_stem()
            .map_or("scenario".into(), |s| s.to_string_lossy().into_owned())
    });
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("formsim-out").join(&name));

    if args.dt_sweep.is_empty() {
        let summary = run_one(&sc, &name, &out, args.plots)?;
        report(&name, &out, &summary);
        return Ok(ExitCode::SUCCESS);
    }

    let jobs: Vec<(f64, Scenario, PathBuf)> = args
        .dt_sweep
        .iter()
        .map(|&dt| {
            let mut s = sc.clone();
            s.integration.dt = dt;
            (dt, s, out.join(format!("dt_{dt:e}")))
        })
        .collect();
    let results: Vec<(f64, PathBuf, formsim::Result<RunSummary>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(dt, s, dir)| {
                let name = &name;
                let plots = args.plots;
                scope.spawn(move || (*dt, dir.clone(), run_one(s, name, dir, plots)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join().unwrap_or_else(|_| {
                    (
                        f64::NAN,
                        PathBuf::new(),
                        Err(Error::Other("worker panicked".into())),
                    )
                })
            })
            .collect()
    });
    let mut failed = false;
    for (dt, dir, res) in results {
        match res {
            Ok(summary) => report(&format!("{name} dt={dt:e}"), &dir, &summary),
            Err(e) => {
                failed = true;
                eprintln!("error: {name} dt={dt:e}: {e}");
            }
        }
    }
    Ok(if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn run_one(sc: &Scenario, name: &str, dir: &Path, plots: bool) -> formsim::Result<RunSummary> {
    let prepared = sc.prepare()?;
    let run = prepared.run()?;
    let layout = ColumnLayout::from_closed_loop(&prepared.closed_loop);
    let csv = dir.join("trajectory.csv");
    output::write_csv(&run.records, &layout, &csv)?;
    let positions = dir.join("positions.csv");
    output::write_positions(&run.records, sc.p, &positions)?;
    let summary_path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&SummaryFile {
        scenario: name,
        summary: &run.summary,
    })
    .map_err(|e| Error::Other(e.to_string()))?;
    std::fs::write(&summary_path, text + "\n").map_err(|e| Error::io(&summary_path, e))?;
    if plots {
        let table = Table::read(&csv)?;
        let pos = Table::read(&positions)?;
        for q in Quantity::ALL {
            let src = if q == Quantity::Trajectory2d { &pos } else { &table };
            match output::plot_data(src, q) {
                Ok(data) => {
                    let path = dir.join(format!("{}.svg", q.name()));
                    std::fs::write(&path, output::render_svg(&data)).map_err(|e| Error::io(&path, e))?;
                }
                Err(Error::Missing(_) | Error::Unsupported(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(run.summary)
}

fn report(label: &str, dir: &Path, s: &RunSummary) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3e}"));
    println!("{label}: wrote {}", dir.display());
    println!(
        "  |z_tilde|_inf = {:.3e}  |xi|_inf = {:.3e}  |eta_tilde|_inf = {}  theta_tilde_final = {}  |xi_tilde|_inf = {}",
        s.z_tilde_inf,
        s.xi_inf,
        opt(s.eta_tilde_inf),
        opt(s.theta_tilde_final),
        opt(s.xi_tilde_inf)
    );
    println!(
        "  V: {:.4e} -> {:.4e}, max step increase {:.3e} ({})  flips {}  passivity audit {}",
        s.v_initial,
        s.v_final,
        s.lyapunov.max_increase,
        if s.lyapunov.passed { "ok" } else { "VIOLATED" },
        s.flips_total,
        if s.passivity_passed { "ok" } else { "FAILED" }
    );
}
