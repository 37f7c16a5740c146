use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coherence::measures::{control_effort, spec_digest, stability_check, variance};
use coherence::oracle::{full_state_h2, per_wavenumber_total};
use coherence::sim::{accordion_experiment, analytic_targets, simulate, string_stability_experiment, SimConfig, Trajectory};
use coherence::spectral::least_damped_eigenvalue;
use coherence::sweep::{sweep, GrowthClass, verify_sum_asymptotics, SweepPlan, DEFAULT_SIZE_FLOOR};
use coherence::{symbol_of_stencil, FeedbackSpec, MeasureKind, TorusShape};
use rayon::prelude::*;
use serde_json::{json, Value};

mod config;
mod failure;

use config::{parse_measure, Experiment, RunConfig};
use failure::{ErrorCode, Failure};

const VALIDATION_TOL: f64 = 1e-8;

#[derive(Parser)]
#[command(name = "torus-coherence", version, about = "Coherence of consensus and vehicular formations on tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file, written atomically; stdout if absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Measure to evaluate (local, lrd, dav, effort); repeatable.
    #[arg(long, global = true, value_parser = parse_measure)]
    measure: Vec<MeasureKind>,
    /// Comma-separated side lengths.
    #[arg(long, global = true, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form measures, control effort and slowest mode for one spec.
    Analyze {
        /// Also write the Fourier symbols as CSV.
        #[arg(long)]
        symbols: Option<PathBuf>,
    },
    /// Per-site measures over a range of sizes with growth classification.
    Sweep,
    /// Monte Carlo simulation or one of the built-in experiments.
    Simulate {
        /// Also write the recorded trajectory (`.bin` for binary, CSV otherwise).
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Compare closed forms with per-wavenumber and full-state Lyapunov solves.
    Validate {
        #[arg(long, hide = true)]
        corrupt_formula: bool,
    },
    /// Folded lattice sums and their asymptotic class.
    Sums {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        power: u32,
    },
}

struct Emit {
    json: Value,
    csv: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{}", failure.to_json());
            ExitCode::from(failure.code.exit_code())
        }
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(workers) = cli.common.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build_global()
            .map_err(|e| Failure::config(format!("cannot start worker pool: {e}")))?;
    }
    let config = match &cli.common.config {
        Some(path) => Some(RunConfig::load(path)?),
        None => None,
    };
    let (emit, after) = match &cli.command {
        Command::Analyze { symbols } => (analyze(&cli.common, require(&config)?, symbols.as_deref())?, None),
        Command::Sweep => (sweep_cmd(&cli.common, require(&config)?)?, None),
        Command::Simulate { trajectory } => (simulate_cmd(&cli.common, require(&config)?, trajectory.as_deref())?, None),
        Command::Validate { corrupt_formula } => validate(&cli.common, config.as_ref(), *corrupt_formula)?,
        Command::Sums { dim, power } => (sums(&cli.common, *dim, *power)?, None),
    };
    let bytes = match cli.common.format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&emit.json).expect("json values serialize");
            s.push('\n');
            s.into_bytes()
        }
        Format::Csv => emit.csv.into_bytes(),
    };
    write_output(cli.common.out.as_deref(), &bytes)?;
    match after {
        Some(failure) => Err(failure),
        None => Ok(()),
    }
}

fn require(config: &Option<RunConfig>) -> Result<&RunConfig, Failure> {
    config.as_ref().ok_or_else(|| Failure::config("this command needs --config"))
}

/// Writes through a temporary file in the target directory, then renames.
fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match path {
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
        }
        Some(path) => {
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p,
                _ => Path::new("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            tmp.write_all(bytes)?;
            tmp.as_file().sync_all()?;
            tmp.persist(path).map_err(|e| Failure::from(e.error))?;
        }
    }
    Ok(())
}

fn default_measures(shape: TorusShape) -> Vec<MeasureKind> {
    let mut kinds = vec![MeasureKind::LocalError, MeasureKind::DeviationFromAverage];
    if shape.side() % 2 == 0 {
        kinds.push(MeasureKind::LongRangeDeviation);
    }
    kinds
}

fn chosen_measures(common: &Common, config: Option<&RunConfig>, fallback: Vec<MeasureKind>) -> Vec<MeasureKind> {
    if !common.measure.is_empty() {
        common.measure.clone()
    } else if let Some(c) = config.filter(|c| !c.measures.is_empty()) {
        c.measures.clone()
    } else {
        fallback
    }
}

fn require_stable(spec: &FeedbackSpec) -> Result<(), Failure> {
    let report = stability_check(spec)?;
    if report.stable {
        Ok(())
    } else {
        Err(coherence::CoherenceError::Unstable {
            offending: report.offending,
        }
        .into())
    }
}

fn analyze(common: &Common, config: &RunConfig, symbols: Option<&Path>) -> Result<Emit, Failure> {
    let spec = config.feedback()?;
    let shape = spec.shape();
    let measures = chosen_measures(common, Some(config), default_measures(shape));
    for kind in &measures {
        kind.check_shape(shape)?;
    }
    require_stable(&spec)?;
    let reports = measures
        .iter()
        .map(|&k| variance(&spec, k))
        .collect::<Result<Vec<_>, _>>()?;
    let effort = control_effort(&spec)?;
    let slowest = least_damped_eigenvalue(&spec)?;
    if let Some(path) = symbols {
        write_output(Some(path), symbol_csv(&spec)?.as_bytes())?;
    }

    let mut csv = String::from("kind,total,per_site,d,N,formula\n");
    for r in &reports {
        writeln!(
            csv,
            "{},{},{},{},{},\"{}\"",
            r.kind.label(),
            r.total,
            r.per_site,
            shape.dim(),
            shape.side(),
            r.formula
        )
        .unwrap();
    }
    Ok(Emit {
        json: json!({
            "shape": shape,
            "spec_digest": spec_digest(&spec),
            "reports": reports,
            "control_effort_per_site": effort,
            "least_damped_eigenvalue": slowest,
        }),
        csv,
    })
}

/// One row per (array, wavenumber): `array,n_0..n_{d-1},re,im`.
fn symbol_csv(spec: &FeedbackSpec) -> Result<String, Failure> {
    let arrays = match spec {
        FeedbackSpec::Consensus { a } => vec![("a", a.clone())],
        FeedbackSpec::Vehicular(v) => vec![("g", v.position_array()?), ("f", v.velocity_array()?)],
    };
    let shape = spec.shape();
    let mut csv = String::from("array");
    for r in 0..shape.dim() {
        write!(csv, ",n_{r}").unwrap();
    }
    csv.push_str(",re,im\n");
    for (name, stencil) in arrays {
        let symbol = symbol_of_stencil(&stencil);
        for (n, value) in shape.sites_iter().zip(&symbol.values) {
            csv.push_str(name);
            for c in n.coords() {
                write!(csv, ",{c}").unwrap();
            }
            writeln!(csv, ",{},{}", value.re, value.im).unwrap();
        }
    }
    Ok(csv)
}

fn sweep_cmd(common: &Common, config: &RunConfig) -> Result<Emit, Failure> {
    let template = config.feedback()?;
    let sizes = common.sizes.clone().unwrap_or_else(|| config.sizes.clone());
    if sizes.is_empty() {
        return Err(Failure::config("sweep needs --sizes or `sizes` in the config"));
    }
    let measures = chosen_measures(common, Some(config), vec![MeasureKind::DeviationFromAverage]);
    let mut reports = Vec::new();
    let mut table = Vec::new();
    let mut csv = String::from("measure,N,M,per_site,effort\n");
    for kind in measures {
        let plan = SweepPlan {
            effort_target: config.effort_target,
            floor: config.floor.unwrap_or(DEFAULT_SIZE_FLOOR),
            ..SweepPlan::new(template.clone(), sizes.clone(), kind)
        };
        let report = sweep(&plan)?;
        for p in &report.points {
            writeln!(csv, "{},{},{},{},{}", kind.label(), p.side, p.sites, p.per_site, p.effort).unwrap();
        }
        eprintln!(
            "{:<16} {:<7} d={} fitted={:<14} expected={:<14} {}",
            format!("{:?}", report.strategy),
            kind.label(),
            report.dim,
            describe(Some(&report.fit.class)),
            describe(report.expected.as_ref()),
            match report.verdict {
                Some(true) => "MATCH",
                Some(false) => "MISMATCH",
                None => "-",
            }
        );
        table.push(json!({
            "strategy": report.strategy,
            "measure": kind,
            "d": report.dim,
            "fitted": report.fit.class.label(),
            "expected": report.expected.map(|e| e.label()),
            "verdict": report.verdict,
        }));
        reports.push(report);
    }
    Ok(Emit {
        json: json!({ "table": table, "reports": reports }),
        csv,
    })
}

fn describe(class: Option<&GrowthClass>) -> String {
    match class {
        Some(GrowthClass::Power { exponent }) => format!("power {exponent:.3}"),
        Some(c) => c.label().to_string(),
        None => "-".to_string(),
    }
}

fn simulate_cmd(common: &Common, config: &RunConfig, trajectory_path: Option<&Path>) -> Result<Emit, Failure> {
    let spec = config.feedback()?;
    let seed = common.seed.or(config.seed).unwrap_or(0);
    match &config.experiment {
        Some(Experiment::Accordion { params }) => {
            let report = accordion_experiment(&spec, &params.resolve(seed))?;
            if let (Some(path), Some(traj)) = (trajectory_path, &report.trajectory) {
                write_trajectory(path, traj)?;
            }
            let mut csv = String::from("wavenumber,empirical,analytic\n");
            for (n, (e, a)) in report.energies.iter().zip(&report.analytic_energies).enumerate() {
                writeln!(csv, "{n},{e},{a}").unwrap();
            }
            Ok(Emit {
                json: serde_json::to_value(&report).expect("report serializes"),
                csv,
            })
        }
        Some(Experiment::StringStability { omegas, amplitude }) => {
            let probes = string_stability_experiment(&spec, omegas, *amplitude)?;
            let mut csv = String::from("omega,vehicle,amplitude\n");
            for p in &probes {
                for (k, a) in p.spacing_amplitudes.iter().enumerate() {
                    writeln!(csv, "{},{k},{a}", p.omega).unwrap();
                }
            }
            Ok(Emit {
                json: json!({ "probes": probes }),
                csv,
            })
        }
        None => {
            let s = config
                .simulation
                .as_ref()
                .ok_or_else(|| Failure::config("simulate needs a `simulation` or `experiment` entry"))?;
            let measures = chosen_measures(common, Some(config), vec![MeasureKind::DeviationFromAverage]);
            let cfg = SimConfig {
                burn_in: s.burn_in,
                seed,
                noise_mask: s.noise_mask.clone(),
                replicas: s.replicas,
                record_stride: s.record_stride.unwrap_or(s.steps),
                sample_stride: s.sample_stride,
                measures,
                initial_positions: s.initial_positions.clone(),
                track_spectrum: s.track_spectrum,
                ..SimConfig::new(spec, s.dt, s.steps)
            };
            cfg.validate()?;
            let targets = analytic_targets(&cfg)?;
            let result = simulate(&cfg)?;
            if let Some(path) = trajectory_path {
                write_trajectory(path, &result.trajectory)?;
            }
            let mut csv = String::from("kind,empirical,analytic,samples\n");
            let mut rows = Vec::new();
            for (est, (_, analytic)) in result.estimates.iter().zip(&targets) {
                writeln!(csv, "{},{},{},{}", est.kind.label(), est.per_site, analytic, est.samples).unwrap();
                rows.push(json!({
                    "kind": est.kind,
                    "empirical_per_site": est.per_site,
                    "analytic_per_site": analytic,
                    "replica_estimates": est.replica_estimates,
                    "samples": est.samples,
                }));
            }
            Ok(Emit {
                json: json!({
                    "seed": seed,
                    "estimates": rows,
                    "records": result.trajectory.len(),
                    "spectrum": result.spectrum,
                }),
                csv,
            })
        }
    }
}

fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<(), Failure> {
    let mut bytes = Vec::new();
    if path.extension().is_some_and(|e| e == "bin") {
        traj.write_binary(&mut bytes)?;
    } else {
        traj.write_csv(&mut bytes)?;
    }
    write_output(Some(path), &bytes)
}

fn default_validation_suite() -> Result<Vec<(String, FeedbackSpec)>, Failure> {
    let mut cases = Vec::new();
    for d in 1..=2 {
        for n in 3..=8 {
            let shape = TorusShape::new(d, n)?;
            let label = format!("d={d} N={n}");
            cases.push((format!("{label} consensus"), FeedbackSpec::standard_consensus(shape, 1.0)?));
            for (name, g_o, f_o) in [
                ("rel-rel", 0.0, 0.0),
                ("rel-pos/abs-vel", 0.0, -1.0),
                ("abs-pos/rel-vel", -1.0, 0.0),
                ("abs-abs", -1.0, -1.0),
            ] {
                cases.push((
                    format!("{label} {name}"),
                    FeedbackSpec::standard_vehicular(shape, 1.0, g_o, f_o, 0.0)?,
                ));
            }
        }
    }
    Ok(cases)
}

fn validate(common: &Common, config: Option<&RunConfig>, corrupt: bool) -> Result<(Emit, Option<Failure>), Failure> {
    let cases = match config {
        Some(c) => {
            let spec = c.feedback()?;
            let shape = spec.shape();
            vec![(format!("d={} N={} config", shape.dim(), shape.side()), spec)]
        }
        None => default_validation_suite()?,
    };
    let jobs: Vec<(String, FeedbackSpec, MeasureKind)> = cases
        .into_iter()
        .flat_map(|(label, spec)| {
            let kinds = chosen_measures(common, config, default_measures(spec.shape()));
            kinds.into_iter().map(move |k| (label.clone(), spec.clone(), k))
        })
        .collect();
    for (_, spec, kind) in &jobs {
        kind.check_shape(spec.shape())?;
        require_stable(spec)?;
    }
    let rows = jobs
        .par_iter()
        .map(|(label, spec, kind)| {
            let mut closed = variance(spec, *kind)?.total;
            if corrupt {
                closed *= 1.0 + 1e-6;
            }
            let per_mode = per_wavenumber_total(spec, *kind)?;
            let full = full_state_h2(spec, *kind)?;
            let dev = rel(per_mode, closed).max(rel(full, closed));
            Ok((label.clone(), *kind, closed, per_mode, full, dev))
        })
        .collect::<Result<Vec<_>, coherence::CoherenceError>>()?;
    let worst = rows.iter().map(|r| r.5).fold(0.0, f64::max);
    let mut csv = String::from("case,measure,closed_form,per_wavenumber,full_state,rel_dev\n");
    let mut table = Vec::new();
    for (label, kind, closed, per_mode, full, dev) in &rows {
        writeln!(csv, "{label},{},{closed},{per_mode},{full},{dev:e}", kind.label()).unwrap();
        table.push(json!({
            "case": label,
            "measure": kind,
            "closed_form": closed,
            "per_wavenumber": per_mode,
            "full_state": full,
            "rel_dev": dev,
        }));
    }
    let passed = worst <= VALIDATION_TOL;
    let emit = Emit {
        json: json!({
            "rows": table,
            "max_rel_dev": worst,
            "tolerance": VALIDATION_TOL,
            "passed": passed,
        }),
        csv,
    };
    let failure = (!passed).then(|| {
        Failure::new(
            ErrorCode::Validation,
            format!("max relative deviation {worst:.3e} exceeds {VALIDATION_TOL:e}"),
        )
    });
    Ok((emit, failure))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn sums(common: &Common, dim: usize, power: u32) -> Result<Emit, Failure> {
    if !(1..=2).contains(&power) {
        return Err(Failure::config(format!("--power must be 1 or 2, got {power}")));
    }
    let sizes = common.sizes.clone().unwrap_or_else(|| vec![33, 65, 129, 257, 513]);
    let report = verify_sum_asymptotics(dim, power, &sizes, DEFAULT_SIZE_FLOOR)?;
    let mut csv = String::from("N,sum,comparison\n");
    for (&n, s) in report.sizes.iter().zip(&report.sums) {
        let g = coherence::sweep::sum_comparison(dim, power, coherence::sweep::folded_extent(n) as f64);
        writeln!(csv, "{n},{s},{g}").unwrap();
    }
    Ok(Emit {
        json: json!({
            "class": report.fit.class.label(),
            "expected": report.expected.label(),
            "passed": report.passed(),
            "report": report,
        }),
        csv,
    })
}
