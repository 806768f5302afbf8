use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use epi::config::{load_config, RunConfig};
use epi::geometry::solve_geometry;
use epi::link::run_chain;
use epi::montecarlo::{build_default_graph, compare_with_analytic, simulate_windows};
use epi::phase::{
    number_diff_variance, optimal_shifter_angle, phase_rms_from_number_variance,
    quadratic_coefficient,
};
use epi::report::{format_value, Table};
use epi::sensitivity::{report_for_point, sensitivity_sweep, SensitivityReport};
use epi::verify::run_all;
use epi::Error;

#[derive(Parser)]
#[command(name = "epi", version, about = "Entangled-path interferometer toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ground-to-satellite power and photon-rate chain.
    LinkBudget(CommonArgs),
    /// Recover the constellation geometry from the null conditions.
    SolveGeometry(CommonArgs),
    /// Number-difference variance and shifter-angle statistics.
    PhaseStats(CommonArgs),
    /// Monte Carlo coincidence counting.
    Simulate(CommonArgs),
    /// Displacement and strain figures.
    Sensitivity(CommonArgs),
    /// Strain sensitivity over a parameter grid.
    Sweep(CommonArgs),
    /// Recompute the published figures and print the verification table.
    VerifyPaper(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration.
    config: PathBuf,
    /// Output directory for CSV artifacts (overrides EPI_OUT_DIR).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the simulated window count.
    #[arg(long)]
    windows: Option<u64>,
}

impl CommonArgs {
    fn out_dir(&self) -> PathBuf {
        if let Some(dir) = &self.out {
            return dir.clone();
        }
        if let Ok(dir) = std::env::var("EPI_OUT_DIR") {
            if !dir.is_empty() {
                return PathBuf::from(dir);
            }
        }
        PathBuf::from(".")
    }
}

enum AppError {
    /// Bad invocation: missing section or contract-violating override.
    Usage(Error),
    /// The requested computation itself failed.
    Run(Error),
}

type AppResult<T> = Result<T, AppError>;

fn usage(e: Error) -> AppError {
    AppError::Usage(e)
}

fn missing(section: &str) -> AppError {
    usage(Error::Config {
        path: section.into(),
        message: "required config section is missing".into(),
    })
}

fn require<'a, T>(opt: &'a Option<T>, name: &str) -> AppResult<&'a T> {
    opt.as_ref().ok_or_else(|| missing(name))
}

fn cmd_link_budget(cfg: &RunConfig, args: &CommonArgs) -> AppResult<()> {
    let lb = require(&cfg.link_budget, "link_budget")?;
    let r = run_chain(lb).map_err(AppError::Run)?;
    let mut t = Table::new([
        "diffraction_divergence_up",
        "capture_fraction_up",
        "received_power_sat",
        "circulating_power",
        "pair_power_emitted",
        "capture_fraction_down",
        "collected_pair_rate",
    ]);
    t.push_values([
        r.diffraction_divergence_up,
        r.capture_fraction_up,
        r.received_power_sat,
        r.circulating_power,
        r.pair_power_emitted,
        r.capture_fraction_down,
        r.collected_pair_rate,
    ]);
    t.write_to(&args.out_dir().join("link_budget.csv"))
        .map_err(AppError::Run)?;
    println!(
        "received {:.4e} W, circulating {:.4e} W, collected pair rate {:.4e}/s",
        r.received_power_sat, r.circulating_power, r.collected_pair_rate
    );
    Ok(())
}

fn cmd_solve_geometry(cfg: &RunConfig, args: &CommonArgs) -> AppResult<()> {
    let g = require(&cfg.geometry, "geometry")?;
    let (guess, ncs) = g.build().map_err(AppError::Run)?;
    let wv = g.wavevectors().map_err(AppError::Run)?;
    let sol =
        solve_geometry(&ncs, &guess, &wv, &g.solver_options()).map_err(AppError::Run)?;

    // arm lengths appear twice: the full values lose the trim scale at 12
    // significant digits, so the trims get their own columns
    let mut header: Vec<String> = [
        "k",
        "delta",
        "l1",
        "l2",
        "l3",
        "trim1",
        "trim2",
        "trim3",
        "residual_norm",
        "iterations",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for i in 0..5 {
        for j in 0..5 {
            header.push(format!("cov_{i}{j}"));
        }
    }
    let mut values = vec![
        sol.k,
        sol.delta,
        sol.arm_lengths[0],
        sol.arm_lengths[1],
        sol.arm_lengths[2],
        sol.arm_trim[0],
        sol.arm_trim[1],
        sol.arm_trim[2],
        sol.residual_norm,
        sol.iterations as f64,
    ];
    for row in sol.covariance {
        values.extend(row);
    }
    let mut t = Table::new(header);
    t.push_values(values);
    t.write_to(&args.out_dir().join("geometry_solution.csv"))
        .map_err(AppError::Run)?;
    println!(
        "arms {:.9} {:.9} {:.9} m, residual norm {:.3e}, {} iterations",
        sol.arm_lengths[0], sol.arm_lengths[1], sol.arm_lengths[2], sol.residual_norm,
        sol.iterations
    );
    Ok(())
}

fn cmd_phase_stats(cfg: &RunConfig, args: &CommonArgs) -> AppResult<()> {
    let m = require(&cfg.pair_model, "pair_model")?;
    let var = number_diff_variance(m);
    let rms = phase_rms_from_number_variance(var, m.mean_pairs);
    let opt = optimal_shifter_angle(m.eta1, m.eta2);
    let mut t = Table::new([
        "mean_pairs",
        "eta1",
        "eta2",
        "shifter_angle",
        "covariance",
        "number_diff_variance",
        "phase_rms",
        "optimal_shifter_angle",
        "quadratic_coefficient_at_angle",
    ]);
    t.push_values([
        m.mean_pairs,
        m.eta1,
        m.eta2,
        m.shifter_angle,
        m.covariance,
        var,
        rms,
        opt,
        quadratic_coefficient(m.eta1, m.eta2, m.shifter_angle),
    ]);
    t.write_to(&args.out_dir().join("phase_stats.csv"))
        .map_err(AppError::Run)?;
    println!("number-difference variance {var:.6e}, phase rms {rms:.6e} rad");
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, args: &CommonArgs) -> AppResult<()> {
    let m = require(&cfg.pair_model, "pair_model")?;
    let sim = require(&cfg.simulation, "simulation")?;
    let windows = args.windows.unwrap_or(sim.windows);
    if windows == 0 {
        return Err(usage(Error::Config {
            path: "simulation.windows".into(),
            message: "at least one accumulation window is required".into(),
        }));
    }
    let graph = match &cfg.detection_graph {
        Some(dg) => dg.resolve().map_err(AppError::Run)?,
        None => build_default_graph(),
    };
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let batch = simulate_windows(&graph, m, windows, seed).map_err(AppError::Run)?;
    let rep = compare_with_analytic(&batch, m).map_err(AppError::Run)?;

    let mut channels = Table::new(["channel", "label", "count"]);
    for (i, (ch, n)) in graph.channels.iter().zip(&batch.channel_counts).enumerate() {
        channels.push_row([i.to_string(), ch.label.clone(), n.to_string()]);
    }
    channels
        .write_to(&args.out_dir().join("simulate_channels.csv"))
        .map_err(AppError::Run)?;

    let mut summary = Table::new([
        "windows",
        "seed",
        "sample_mean",
        "sample_variance",
        "analytic_mean",
        "analytic_variance",
        "z_mean",
        "z_variance",
        "bound_variance",
    ]);
    summary.push_row([
        windows.to_string(),
        seed.to_string(),
        format_value(rep.sample_mean),
        format_value(rep.sample_variance),
        format_value(rep.analytic_mean),
        format_value(rep.analytic_variance),
        format_value(rep.z_mean),
        format_value(rep.z_variance),
        format_value(rep.bound_variance),
    ]);
    summary
        .write_to(&args.out_dir().join("simulate_summary.csv"))
        .map_err(AppError::Run)?;
    println!(
        "{windows} windows, seed {seed}: mean {:.4e} (analytic {:.4e}), \
         variance {:.4e} (analytic {:.4e})",
        rep.sample_mean, rep.analytic_mean, rep.sample_variance, rep.analytic_variance
    );
    Ok(())
}

fn sensitivity_table(rows: &[SensitivityReport]) -> Table {
    let mut t = Table::new([
        "phase_metric",
        "conversion_length",
        "displacement",
        "arm_length",
        "bandwidth",
        "accumulation_time",
        "strain",
    ]);
    for r in rows {
        t.push_values([
            r.phase_metric,
            r.conversion_length,
            r.displacement,
            r.arm_length,
            r.bandwidth,
            r.accumulation_time,
            r.strain,
        ]);
    }
    t
}

fn cmd_sensitivity(cfg: &RunConfig, args: &CommonArgs) -> AppResult<()> {
    let s = require(&cfg.sensitivity, "sensitivity")?;
    let r = report_for_point(
        s.n1,
        s.n2,
        s.conversion_length,
        s.arm_length,
        s.bandwidth,
        s.accumulation_time,
    )
    .map_err(AppError::Run)?;
    sensitivity_table(&[r])
        .write_to(&args.out_dir().join("sensitivity.csv"))
        .map_err(AppError::Run)?;
    println!(
        "phase metric {:.6e}, displacement {:.6e} m, strain {:.6e}",
        r.phase_metric, r.displacement, r.strain
    );
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig, args: &CommonArgs) -> AppResult<()> {
    let spec = require(&cfg.sweep, "sweep")?;
    let rows = sensitivity_sweep(spec).map_err(AppError::Run)?;
    sensitivity_table(&rows)
        .write_to(&args.out_dir().join("sweep.csv"))
        .map_err(AppError::Run)?;
    println!("{} sweep rows written", rows.len());
    Ok(())
}

fn cmd_verify(cfg: &RunConfig, _args: &CommonArgs) -> AppResult<()> {
    let results = run_all(cfg).map_err(|e| match e {
        Error::Config { .. } => usage(e),
        other => AppError::Run(other),
    })?;
    let mut all_pass = true;
    println!("criterion  status  name");
    for r in &results {
        all_pass &= r.passed;
        println!(
            "{:>9}  {}  {} ({})",
            r.index,
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    if all_pass {
        println!("all {} criteria passed", results.len());
        Ok(())
    } else {
        Err(AppError::Run(Error::ModelMismatch(
            "one or more verification criteria failed".into(),
        )))
    }
}

fn dispatch(cli: &Cli) -> AppResult<()> {
    let args = match &cli.command {
        Command::LinkBudget(a)
        | Command::SolveGeometry(a)
        | Command::PhaseStats(a)
        | Command::Simulate(a)
        | Command::Sensitivity(a)
        | Command::Sweep(a)
        | Command::VerifyPaper(a) => a,
    };
    let cfg = load_config(&args.config).map_err(usage)?;
    match &cli.command {
        Command::LinkBudget(a) => cmd_link_budget(&cfg, a),
        Command::SolveGeometry(a) => cmd_solve_geometry(&cfg, a),
        Command::PhaseStats(a) => cmd_phase_stats(&cfg, a),
        Command::Simulate(a) => cmd_simulate(&cfg, a),
        Command::Sensitivity(a) => cmd_sensitivity(&cfg, a),
        Command::Sweep(a) => cmd_sweep(&cfg, a),
        Command::VerifyPaper(a) => cmd_verify(&cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(AppError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
