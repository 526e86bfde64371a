use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use nvgyro::harness::export::{self, AllanRow, AsdRow, ComagRow, GyroRow};
use nvgyro::harness::{
    calibration_fit, reference_budgets, run_comag, run_polarize, run_ramsey, run_replicas, run_scenario,
    Reference, ScenarioOutput, SimConfig, REFERENCE_FIELD_FLOOR_T, REFERENCE_GYRO_FLOOR_DPS,
};
use nvgyro::noise::{allan_deviation, log_tau_grid, welch_asd_with, Window};
use nvgyro::spin::transition_frequencies_with;
use nvgyro::timeseries::TimeSeries;
use nvgyro::{Error, Result};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// NV-center nuclear-spin gyroscope simulator.
#[derive(Debug, Parser)]
#[command(name = "nvgyro", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the configured RNG seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory. Single-table commands print to stdout without it.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Disables photon shot noise and every other random source.
    #[arg(long, global = true)]
    no_shot_noise: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Transition table at the configured field (label, m_s_pair, m_i, freq_hz).
    Odmr,
    /// DQ Ramsey sweep (tau_s, signal).
    Ramsey {
        /// Longest free-precession time (s); defaults to protocol.calibration_tau_max.
        #[arg(long)]
        tau_max: Option<f64>,
        /// τ step (s); defaults to protocol.calibration_step.
        #[arg(long)]
        step: Option<f64>,
    },
    /// Nuclear polarization per round (iteration, p_mi0, p_mi0_recursion).
    Polarize {
        #[arg(long, default_value_t = 8)]
        iterations: usize,
    },
    /// Free-running comagnetometer (t_s, f_minus_hz, f_plus_hz, b_nt, dt_k).
    Comag,
    /// Gyro samples of the full scenario (t_s, s_n, s_p, delta_omega_rad_s).
    Gyro,
    /// Full scenario: records.csv, gyro.csv and comag.csv in the output directory.
    Run {
        /// Independent runs with seeds seed, seed+1, …; files get a `_seed<N>` suffix.
        #[arg(long, default_value_t = 1)]
        replicas: u64,
        /// Print the photon budgets for the reference floors and exit.
        #[arg(long)]
        reference_budgets: bool,
    },
    /// ASD and Allan deviation of one record column (asd.csv, allan.csv).
    Analyze {
        /// Record CSV; defaults to <out>/records.csv.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
        /// Column to analyse; defaults to analysis.column.
        #[arg(long)]
        column: Option<String>,
    },
}

fn load_config(cli: &Cli) -> Result<SimConfig> {
    let mut cfg = match &cli.config {
        Some(p) => SimConfig::load(p)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.no_shot_noise {
        cfg.shot_noise = false;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Writes to `<out>/<name>.csv`, or stdout when no directory was given.
fn emit<T: Serialize>(cli: &Cli, name: &str, rows: &[T]) -> Result<()> {
    match &cli.out {
        Some(_) => export::write_csv(out_dir(cli)?.join(format!("{name}.csv")), rows),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            export::write_rows(&mut lock, rows)?;
            lock.flush()?;
            Ok(())
        }
    }
}

fn write_scenario(dir: &Path, suffix: &str, out: &ScenarioOutput) -> Result<()> {
    export::write_csv(dir.join(format!("records{suffix}.csv")), &out.records)?;
    let gyro: Vec<GyroRow> = out.gyro.iter().map(GyroRow::from).collect();
    export::write_csv(dir.join(format!("gyro{suffix}.csv")), &gyro)?;
    let comag: Vec<ComagRow> = out.comag.iter().map(ComagRow::from).collect();
    export::write_csv(dir.join(format!("comag{suffix}.csv")), &comag)
}

fn summarize(seed: u64, out: &ScenarioOutput) {
    let wp = &out.calibration.working_point;
    eprintln!("seed {seed}: {} records, pair period {:.4} ms", out.records.len(), out.pair_period * 1e3);
    eprintln!(
        "  fringe {:.2} Hz, T2* {:.3} ms, working pair t_n {:.2} us / t_p {:.2} us, a {:.4}",
        out.calibration.fit.omega / std::f64::consts::TAU,
        out.calibration.fit.t2 * 1e3,
        wp.t_n * 1e6,
        wp.t_p * 1e6,
        wp.a
    );
    eprintln!(
        "  analytic floors: gyro {:.3} deg/s/rtHz (uncompensated), field {:.3} nT/rtHz",
        out.predicted_gyro_asd_dps,
        out.predicted_field_asd_t * 1e9
    );
    if out.stale_records > 0 {
        eprintln!("  {} records used a stale comag reading", out.stale_records);
    }
    let analysed = out.analysed();
    for (label, reference) in [("truth", Reference::Truth), ("MEMS", Reference::Mems)] {
        if let Ok(fit) = calibration_fit(&analysed, reference) {
            let (lo, hi) = fit.slope_ci(0.95);
            eprintln!(
                "  calibration vs {label}: slope {:.4} [95% CI {lo:.4}, {hi:.4}], intercept {:.3} deg/s, r2 {:.5}",
                fit.slope, fit.intercept, fit.r2
            );
        }
    }
}

fn analyze(cli: &Cli, cfg: &SimConfig, input: Option<&PathBuf>, column: Option<&String>) -> Result<()> {
    let dir = out_dir(cli)?;
    let input = input.cloned().unwrap_or_else(|| dir.join("records.csv"));
    let column = column.cloned().unwrap_or_else(|| cfg.analysis.column.clone());
    let (t, v) = export::read_column(&input, &column)?;
    let (t, v): (Vec<f64>, Vec<f64>) = t
        .into_iter()
        .zip(v)
        .filter(|(t, _)| *t >= cfg.thermal.discard)
        .unzip();
    let series = TimeSeries::new(column.clone(), t, v)?;
    let dt = series.sample_interval()?;
    let segment = cfg.analysis.segment.min(series.len() / 2).max(8);
    let asd = welch_asd_with(&series, segment, cfg.analysis.overlap, Window::Hann)?;
    let taus = log_tau_grid(dt, series.len(), cfg.analysis.allan_per_decade);
    let allan = allan_deviation(&series, &taus)?;
    let asd_rows: Vec<AsdRow> = export::asd_rows(&asd);
    let allan_rows: Vec<AllanRow> = export::allan_rows(&allan);
    export::write_csv(dir.join("asd.csv"), &asd_rows)?;
    export::write_csv(dir.join("allan.csv"), &allan_rows)?;
    let nyquist = 0.5 / dt;
    if let Ok(floor) = asd.band_average(0.1 * nyquist, 0.9 * nyquist) {
        eprintln!(
            "{column}: {} samples after t >= {} s, Welch {} ({} segments of {segment}, overlap {}), white floor {floor:.4} /rtHz",
            series.len(),
            cfg.thermal.discard,
            asd.window,
            asd.averages,
            asd.overlap
        );
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Odmr => {
            let table = transition_frequencies_with(&cfg.constants, &cfg.environment(0.0), cfg.protocol.pairing)?;
            emit(cli, "odmr", &export::odmr_rows(&table))
        }
        Command::Ramsey { tau_max, step } => {
            let rows = run_ramsey(
                &cfg,
                tau_max.unwrap_or(cfg.protocol.calibration_tau_max),
                step.unwrap_or(cfg.protocol.calibration_step),
            )?;
            emit(cli, "ramsey", &rows)
        }
        Command::Polarize { iterations } => emit(cli, "polarize", &run_polarize(&cfg, *iterations)?),
        Command::Comag => {
            let rows: Vec<ComagRow> = run_comag(&cfg)?.iter().map(ComagRow::from).collect();
            emit(cli, "comag", &rows)
        }
        Command::Gyro => {
            let out = run_scenario(&cfg)?;
            let rows: Vec<GyroRow> = out.gyro.iter().map(GyroRow::from).collect();
            emit(cli, "gyro", &rows)
        }
        Command::Run {
            replicas,
            reference_budgets: budgets,
        } => {
            if *budgets {
                let b = reference_budgets(&cfg, REFERENCE_GYRO_FLOOR_DPS, REFERENCE_FIELD_FLOOR_T)?;
                println!("# {} deg/s/rtHz gyro, {} nT/rtHz field", b.gyro_asd_dps, b.field_asd_t * 1e9);
                println!("[readout]\nphotons_per_readout = {:.4e}", b.photons_per_readout);
                println!("[comag]\nphotons_per_sample = {:.4e}", b.photons_per_sample);
                return Ok(());
            }
            let dir = out_dir(cli)?;
            if *replicas <= 1 {
                let out = run_scenario(&cfg)?;
                write_scenario(&dir, "", &out)?;
                summarize(cfg.seed, &out);
                return Ok(());
            }
            let seeds: Vec<u64> = (0..*replicas).map(|k| cfg.seed.wrapping_add(k)).collect();
            for (seed, out) in seeds.iter().zip(run_replicas(&cfg, &seeds)) {
                let out = out?;
                write_scenario(&dir, &format!("_seed{seed}"), &out)?;
                summarize(*seed, &out);
            }
            Ok(())
        }
        Command::Analyze { input, column } => analyze(cli, &cfg, input.as_ref(), column.as_ref()),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() || matches!(e, Error::Io(_) | Error::Csv(_)) {
        EXIT_CONFIG
    } else {
        EXIT_NUMERICAL
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
