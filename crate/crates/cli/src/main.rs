mod manifest;
mod svg;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anesthesia_mpc::config::{ControllerSettings, Patient};
use anesthesia_mpc::design::{load_terminal_set, Design};
use anesthesia_mpc::pkpd::{FastState, SlowState, FAST_LABELS};
use anesthesia_mpc::sim::{compute_metrics, simulate_closed_loop, SimLog, SimOptions};
use anesthesia_mpc::validate::{run_validation, ValidationOptions};
use anesthesia_mpc::{Error, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::{Matrix2x4, Matrix4};

use manifest::{Parameters, RunManifest};
use svg::{line_chart, Series};

const EXIT_VALIDATION: u8 = 1;
const EXIT_MODEL: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "anesthesia-mpc",
    version,
    about = "Tracking MPC for propofol/remifentanil hypnosis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Inputs {
    /// Patient PK/PD file (TOML)
    #[arg(long)]
    patient: PathBuf,
    /// Controller configuration file (TOML)
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Compute K, P, ψ, A_w, X_a, D, m̄, V and the steady segment
    Ingredients {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-loop run from an awake patient
    Simulate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: PathBuf,
        /// Simulated time in seconds (multiple of Ts)
        #[arg(long, default_value_t = 600.0)]
        duration: f64,
        /// Also write BIS, input and fast-state plots
        #[arg(long)]
        svg: bool,
        /// Record wall-clock solve times in the CSV (otherwise 0)
        #[arg(long)]
        timing: bool,
        /// Reuse X_a from an ingredient bundle
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Run every property check and print a pass/fail matrix
    Validate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = ValidationOptions::default().seed)]
        seed: u64,
    },
    /// Print the admissible steady-input segment
    SteadySet {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the command recorded in a manifest
    Replay {
        manifest: PathBuf,
        /// Write to this directory instead of the recorded one
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Outcome {
    Success,
    ValidationFailed,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::ValidationFailed) => ExitCode::from(EXIT_VALIDATION),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Infeasible { .. } | Error::SolverFailure { .. } => EXIT_INFEASIBLE,
                _ => EXIT_MODEL,
            })
        }
    }
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Ingredients { inputs, out } => ingredients(&inputs, &out),
        Command::Simulate {
            inputs,
            out,
            duration,
            svg,
            timing,
            bundle,
        } => simulate(&inputs, &out, duration, svg, timing, bundle.as_deref()),
        Command::Validate { inputs, out, seed } => validate(&inputs, out.as_deref(), seed),
        Command::SteadySet { inputs, out } => steady_set(&inputs, out.as_deref()),
        Command::Replay { manifest, out } => replay(&manifest, out),
    }
}

fn load(inputs: &Inputs, bundle: Option<&Path>) -> Result<Design> {
    let patient = Patient::load(&inputs.patient)?;
    let settings = ControllerSettings::load(&inputs.config)?;
    let x_a = bundle.map(load_terminal_set).transpose()?;
    Design::build_with_terminal_set(&patient, &settings, x_a)
}

fn parameters(design: &Design) -> Parameters {
    Parameters {
        lambda: design.cfg.lambda,
        epsilon: design.cfg.epsilon,
        m_bar: [design.m_bar[0], design.m_bar[1]],
        ..Parameters::default()
    }
}

fn fmt_row(values: impl IntoIterator<Item = f64>) -> String {
    values
        .into_iter()
        .map(|v| format!("{:>12.6}", v + 0.0))
        .collect::<Vec<_>>()
        .join(" ")
}

fn print_matrix2x4(name: &str, m: &Matrix2x4<f64>) {
    for i in 0..2 {
        let label = if i == 0 { name } else { "" };
        println!("  {label:<18}{}", fmt_row(m.row(i).iter().copied()));
    }
}

fn print_matrix4(name: &str, m: &Matrix4<f64>) {
    for i in 0..4 {
        let label = if i == 0 { name } else { "" };
        println!("  {label:<18}{}", fmt_row(m.row(i).iter().copied()));
    }
}

fn print_summary(d: &Design) -> Result<()> {
    let (a, b) = d.steady_segment()?;
    let t = &d.terminal;
    println!("model");
    println!("  {:<18}{} s", "Ts", d.model.ts);
    println!(
        "  {:<18}{} (controllability index {})",
        "horizon N", d.cfg.horizon, d.controllability_index
    );
    println!("  {:<18}{}", "fast states", FAST_LABELS.join(", "));
    println!("input sets");
    println!(
        "  {:<18}[{}, {}] x [{}, {}]",
        "U", d.u_box.lower[0], d.u_box.upper[0], d.u_box.lower[1], d.u_box.upper[1]
    );
    println!(
        "  {:<18}({:.6}, {:.6})  {:?}",
        "m_bar", d.m_bar[0], d.m_bar[1], d.settings.disturbance_bound_mode
    );
    println!(
        "  {:<18}[{:.6}, {}] x [{:.6}, {}]",
        "V", d.v_box.lower[0], d.v_box.upper[0], d.v_box.lower[1], d.v_box.upper[1]
    );
    print_matrix2x4("D", &d.gain.d);
    println!("steady set (y_ref = {})", d.cfg.y_ref);
    println!(
        "  {:<18}({:.6}, {:.6})  c = {:.6}",
        "g_eff", d.steady.g_eff[0], d.steady.g_eff[1], d.steady.c
    );
    println!(
        "  {:<18}({:.6}, {:.6}) - ({:.6}, {:.6})",
        "segment", a[0], a[1], b[0], b[1]
    );
    println!("terminal ingredients");
    print_matrix2x4("K", &t.k);
    print_matrix4("P", &t.p);
    for i in 0..2 {
        let label = if i == 0 { "psi" } else { "" };
        println!("  {label:<18}{}", fmt_row(t.psi.row(i).iter().copied()));
    }
    println!("  {:<18}{:.2e}", "DARE residual", t.dare_residual);
    println!(
        "  {:<18}{}  (lambda = {}, k* = {})",
        "X_a rows",
        t.x_a.n_rows(),
        t.lambda,
        t.k_star
    );
    Ok(())
}

fn ingredients(inputs: &Inputs, out: &Path) -> Result<Outcome> {
    let design = load(inputs, None)?;
    print_summary(&design)?;
    let files = design.write_bundle(out)?;
    RunManifest::new(
        "ingredients",
        &inputs.patient,
        &inputs.config,
        out,
        parameters(&design),
    )
    .write(out)?;
    println!("wrote {} files to {}", files.len() + 1, out.display());
    Ok(Outcome::Success)
}

fn write_plots(log: &SimLog, y_ref: f64, out: &Path) -> Result<()> {
    let series = |f: &dyn Fn(&anesthesia_mpc::sim::SimRecord) -> f64| -> Vec<(f64, f64)> {
        log.records.iter().map(|r| (r.t, f(r))).collect()
    };
    let bis = line_chart(
        "BIS",
        "t [s]",
        "BIS",
        &[Series::new("BIS", log.bis_series())],
        &[y_ref, 40.0, 60.0],
    );
    std::fs::write(out.join("bis.svg"), bis)?;
    let inputs = line_chart(
        "Inputs",
        "t [s]",
        "rate [mg/s, ug/s]",
        &[
            Series::new("u propofol", series(&|r| r.u[0])),
            Series::new("v propofol", series(&|r| r.v[0])),
            Series::new("v_a propofol", series(&|r| r.v_a[0])).dashed(),
            Series::new("u remifentanil", series(&|r| r.u[1])),
            Series::new("v remifentanil", series(&|r| r.v[1])),
            Series::new("v_a remifentanil", series(&|r| r.v_a[1])).dashed(),
        ],
        &[],
    );
    std::fs::write(out.join("inputs.svg"), inputs)?;
    let states: Vec<Series> = FAST_LABELS
        .iter()
        .enumerate()
        .map(|(i, name)| Series::new(name, series(&|r| r.xf[i])))
        .collect();
    let fast = line_chart("Fast states", "t [s]", "concentration", &states, &[]);
    std::fs::write(out.join("fast_states.svg"), fast)?;
    Ok(())
}

fn simulate(
    inputs: &Inputs,
    out: &Path,
    duration: f64,
    svg: bool,
    timing: bool,
    bundle: Option<&Path>,
) -> Result<Outcome> {
    let design = load(inputs, bundle)?;
    let mut ctrl = design.controller()?;
    let opts = SimOptions {
        duration,
        plant_substep: design.settings.plant_substep,
        timing,
    };
    let log = simulate_closed_loop(
        &design.model,
        &design.patient.pd,
        &mut ctrl,
        FastState::zeros(),
        SlowState::zeros(),
        &opts,
    )?;
    std::fs::create_dir_all(out)?;
    let mut w = BufWriter::new(File::create(out.join("sim.csv"))?);
    log.write_csv(&mut w)?;
    w.flush()?;
    if svg {
        write_plots(&log, design.cfg.y_ref, out)?;
    }
    let mut params = parameters(&design);
    params.duration = Some(duration);
    params.svg = svg;
    params.timing = timing;
    params.bundle = bundle.map(Path::to_path_buf);
    RunManifest::new("simulate", &inputs.patient, &inputs.config, out, params).write(out)?;

    let m = compute_metrics(&log, design.cfg.y_ref, design.settings.settling_band)?;
    let last = log.records.last().expect("nonempty log");
    println!("steps               {}", log.records.len());
    match m.settling_time {
        Some(t) => println!(
            "settling time       {t} s (band ±{})",
            design.settings.settling_band
        ),
        None => println!(
            "settling time       inf (band ±{})",
            design.settings.settling_band
        ),
    }
    println!("undershoot          {:.4}", m.undershoot);
    println!("final BIS           {:.4}", log.final_bis);
    println!("terminal error      {:.4}", m.terminal_error);
    println!(
        "final v_a           ({:.6}, {:.6})",
        last.v_a[0], last.v_a[1]
    );
    println!(
        "max |v - v_a| after settling  {:.6}",
        m.max_input_gap_after_settling
    );
    let clamped = log.records.iter().filter(|r| r.clamped).count();
    if clamped > 0 {
        println!("clamped steps       {clamped}");
    }
    println!("wrote {}", out.join("sim.csv").display());
    Ok(Outcome::Success)
}

fn validate(inputs: &Inputs, out: Option<&Path>, seed: u64) -> Result<Outcome> {
    let design = load(inputs, None)?;
    let opts = ValidationOptions {
        seed,
        ..ValidationOptions::default()
    };
    let report = run_validation(&design, &opts);
    let text = report.render();
    print!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("validation.txt"), &text)?;
        let mut params = parameters(&design);
        params.seed = Some(seed);
        RunManifest::new("validate", &inputs.patient, &inputs.config, dir, params).write(dir)?;
    }
    if report.all_passed() {
        println!("all {} checks passed", report.checks.len());
        Ok(Outcome::Success)
    } else {
        println!("failed: {}", report.failures().join(", "));
        Ok(Outcome::ValidationFailed)
    }
}

fn steady_set(inputs: &Inputs, out: Option<&Path>) -> Result<Outcome> {
    let patient = Patient::load(&inputs.patient)?;
    let settings = ControllerSettings::load(&inputs.config)?;
    let design = Design::build(&patient, &settings)?;
    let (a, b) = design.steady_segment()?;
    let best = design.z_s.offset_minimizer(&design.cfg.offset)?;
    println!(
        "g_eff       ({:.9}, {:.9})",
        design.steady.g_eff[0], design.steady.g_eff[1]
    );
    println!("c           {:.9}", design.steady.c);
    println!("endpoint a  ({:.9}, {:.9})", a[0], a[1]);
    println!("endpoint b  ({:.9}, {:.9})", b[0], b[1]);
    println!("V_d minimum ({:.9}, {:.9})", best[0], best[1]);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let seg =
            nalgebra::DMatrix::from_row_slice(3, 2, &[a[0], a[1], b[0], b[1], best[0], best[1]]);
        let mut w = BufWriter::new(File::create(dir.join("steady_set.txt"))?);
        anesthesia_mpc::geometry::write_matrix(&mut w, &seg)?;
        w.flush()?;
        RunManifest::new(
            "steady-set",
            &inputs.patient,
            &inputs.config,
            dir,
            parameters(&design),
        )
        .write(dir)?;
    }
    Ok(Outcome::Success)
}

fn replay(path: &Path, out: Option<PathBuf>) -> Result<Outcome> {
    let m = RunManifest::load(path)?;
    let inputs = Inputs {
        patient: m.patient.clone(),
        config: m.config.clone(),
    };
    let out = out.unwrap_or(m.out.clone());
    let p = &m.parameters;
    match m.subcommand.as_str() {
        "ingredients" => ingredients(&inputs, &out),
        "simulate" => simulate(
            &inputs,
            &out,
            p.duration.unwrap_or(600.0),
            p.svg,
            p.timing,
            p.bundle.as_deref(),
        ),
        "validate" => validate(
            &inputs,
            Some(&out),
            p.seed.unwrap_or(ValidationOptions::default().seed),
        ),
        "steady-set" => steady_set(&inputs, Some(&out)),
        other => Err(Error::Config(format!(
            "unknown subcommand `{other}` in manifest"
        ))),
    }
}
