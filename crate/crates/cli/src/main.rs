//! `kantorovich`: ground metrics, Kantorovich distances and barycenters from
//! the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or validation error,
//! 3 solver did not converge (results are still written and flagged).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use kantorovich_core::baselines::{euclidean_mean, SmoothingKernel};
use kantorovich_core::domain::auto_lambda;
use kantorovich_core::io;
use kantorovich_core::metric_build::{grid_metric, mesh_geodesic_metric, validate_metric, DEFAULT_METRIC_CAP};
use kantorovich_core::simulate::{run_simulation, SimConfig};
use kantorovich_core::{
    build_augmented, kantorovich_distance, kantorovich_mean, rescale_collection, Auto, DeltaSpec, GroundMetric,
    Histogram, Regularization, SinkhornOptions, SolverConfig, TargetMass,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "kantorovich", version, about = "Kantorovich distances and barycenters of histograms")]
struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct Geometry {
    /// Triangulated surface in OFF format; distances are edge-path geodesics.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// JSON voxel grid description; distances are Euclidean between voxel centers.
    #[arg(long)]
    grid: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct SourcePaths {
    #[arg(long)]
    mesh: Option<PathBuf>,
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Precomputed metric written by `kantorovich metric`.
    #[arg(long = "metric-cache")]
    metric_cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MetricSource {
    #[command(flatten)]
    paths: SourcePaths,
    /// Largest number of locations for which a dense metric is built.
    #[arg(long, default_value_t = DEFAULT_METRIC_CAP)]
    metric_cap: usize,
}

#[derive(Args, Debug)]
struct Solver {
    /// Exponent applied to the ground metric.
    #[arg(long, default_value_t = 1.0)]
    p: f64,
    /// Entropic strength, or `auto` for 100 / median distance.
    #[arg(long, default_value = "auto")]
    lambda: Auto,
    /// Percentile of the pairwise distances used as the virtual cost.
    #[arg(long, default_value_t = 95.0)]
    q: f64,
    /// Inner marginal tolerance.
    #[arg(long, default_value_t = 1e-9)]
    tol_sinkhorn: f64,
    /// Inner iteration cap.
    #[arg(long, default_value_t = 10_000)]
    max_sinkhorn: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a dense ground metric and store it as a binary cache.
    Metric {
        #[command(flatten)]
        geometry: Geometry,
        #[arg(long)]
        out: PathBuf,
        /// Also check the metric axioms (triangle inequality on small inputs).
        #[arg(long)]
        validate: bool,
        #[arg(long, default_value_t = DEFAULT_METRIC_CAP)]
        metric_cap: usize,
    },
    /// Kantorovich distance between two histograms (single-row CSV files).
    Distance {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[command(flatten)]
        source: MetricSource,
        #[command(flatten)]
        solver: Solver,
        /// Solve the unregularized problem exactly (small inputs only).
        #[arg(long)]
        exact: bool,
    },
    /// Kantorovich barycenter of the rows of a CSV matrix.
    Barycenter {
        #[arg(long)]
        inputs: PathBuf,
        #[command(flatten)]
        source: MetricSource,
        #[command(flatten)]
        solver: Solver,
        /// Gradient step, or `auto` for 1 / (q-th percentile distance).
        #[arg(long, default_value = "auto")]
        step: Auto,
        /// Target mass after rescaling by the largest input mass, in (0, 1], or `mean`.
        #[arg(long, default_value = "mean")]
        rho: TargetMass,
        /// Stop when the l1 change of the iterate falls below this.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Elementwise mean of the rows of a CSV matrix.
    Mean {
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gaussian smoothing of every row over the ground metric.
    Smooth {
        #[arg(long)]
        inputs: PathBuf,
        /// Full width at half maximum, in the units of the metric.
        #[arg(long, default_value_t = 8.0)]
        fwhm: f64,
        #[command(flatten)]
        source: MetricSource,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic two-patch group study on an icosphere.
    Simulate {
        #[arg(long, default_value_t = 3)]
        subdivisions: u32,
        #[arg(long, default_value_t = 20)]
        subjects: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 8.0)]
        fwhm: f64,
        /// Vertices per patch.
        #[arg(long, default_value_t = 25)]
        cap_size: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Report how far a cached matrix is from being a metric.
    Validate {
        #[arg(long = "metric-cache")]
        metric_cache: PathBuf,
        /// Skip the cubic triangle-inequality scan.
        #[arg(long)]
        no_triangle: bool,
    },
}

#[derive(Debug)]
enum Failure {
    Data(String),
    NotConverged,
}

impl From<kantorovich_core::Error> for Failure {
    fn from(e: kantorovich_core::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Outcome {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>, Failure> {
    let rows = io::read_matrix_csv(&read_text(path)?).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    if rows.is_empty() {
        return Err(Failure::Data(format!("{}: no rows", path.display())));
    }
    Ok(rows)
}

fn read_single_row(path: &Path) -> Result<Vec<f64>, Failure> {
    let mut rows = read_matrix(path)?;
    if rows.len() != 1 {
        return Err(Failure::Data(format!("{}: expected one row, found {}", path.display(), rows.len())));
    }
    Ok(rows.remove(0))
}

fn build_from_geometry(mesh: Option<&Path>, grid: Option<&Path>, cap: usize) -> Result<GroundMetric, Failure> {
    let with_path = |p: &Path, e: kantorovich_core::Error| Failure::Data(format!("{}: {e}", p.display()));
    if let Some(p) = mesh {
        let mesh = io::parse_off(&read_text(p)?).map_err(|e| with_path(p, e))?;
        return Ok(mesh_geodesic_metric(&mesh, cap)?);
    }
    let p = grid.expect("clap enforces one geometry source");
    let spec = io::parse_gridspec(&read_text(p)?).map_err(|e| with_path(p, e))?;
    Ok(grid_metric(&spec, cap)?)
}

fn load_metric(src: &MetricSource) -> Result<GroundMetric, Failure> {
    let paths = &src.paths;
    match &paths.metric_cache {
        Some(p) => {
            let bytes = fs::read(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
            io::read_metric_cache(&bytes).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))
        }
        None => build_from_geometry(paths.mesh.as_deref(), paths.grid.as_deref(), src.metric_cap),
    }
}

fn source_json(src: &MetricSource) -> Value {
    json!({
        "mesh": src.paths.mesh,
        "grid": src.paths.grid,
        "metric_cache": src.paths.metric_cache,
        "metric_cap": src.metric_cap,
    })
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn emit(report: &Value) {
    println!("{}", serde_json::to_string_pretty(report).expect("report serializes"));
}

fn run(cli: Cli) -> Outcome {
    let start = Instant::now();
    match cli.command {
        Command::Metric { geometry, out, validate, metric_cap } => {
            let metric = build_from_geometry(geometry.mesh.as_deref(), geometry.grid.as_deref(), metric_cap)?;
            let built_ms = ms(start);
            write_file(&out, io::write_metric_cache(&metric))?;
            let validation = validate.then(|| validate_metric(metric.matrix(), true));
            emit(&json!({
                "command": "metric",
                "version": VERSION,
                "parameters": {"mesh": geometry.mesh, "grid": geometry.grid, "out": out, "metric_cap": metric_cap},
                "d": metric.d(),
                "validation": validation,
                "timings_ms": {"build": built_ms, "total": ms(start)},
            }));
            if validation.is_some_and(|v| !v.passes(1e-9)) {
                return Err(Failure::Data("metric failed validation".into()));
            }
        }
        Command::Distance { a, b, source, solver, exact } => {
            let metric = load_metric(&source)?;
            let ha = Histogram::new(read_single_row(&a)?)?;
            let hb = Histogram::new(read_single_row(&b)?)?;
            let aug = build_augmented(&metric, &DeltaSpec::Quantile(solver.q), solver.p)?;
            let lambda = match solver.lambda {
                Auto::Value(l) => l,
                Auto::Auto => auto_lambda(&metric)?,
            };
            let reg = if exact { Regularization::Exact } else { Regularization::Entropic(lambda) };
            let opts = SinkhornOptions { tol: solver.tol_sinkhorn, max_iter: solver.max_sinkhorn, ..Default::default() };
            let k = match kantorovich_distance(&ha, &hb, &aug, reg, &opts) {
                Err(kantorovich_core::Error::NotConverged { iterations, residual }) => {
                    eprintln!("inner solver stopped after {iterations} iterations, residual {residual:e}");
                    return Err(Failure::NotConverged);
                }
                r => r?,
            };
            emit(&json!({
                "command": "distance",
                "version": VERSION,
                "parameters": {
                    "a": a, "b": b, "source": source_json(&source),
                    "p": solver.p, "q": solver.q, "delta": aug.delta().first(),
                    "lambda": if exact { Value::Null } else { json!(lambda) },
                    "exact": exact, "tol_sinkhorn": solver.tol_sinkhorn, "max_sinkhorn": solver.max_sinkhorn,
                },
                "k": k.k,
                "k_p": k.kp,
                "warnings": aug.admissibility().warnings(),
                "timings_ms": {"total": ms(start)},
            }));
        }
        Command::Barycenter { inputs, source, solver, step, rho, tol, max_iter, out, report } => {
            let metric = load_metric(&source)?;
            let collection = rescale_collection(&read_matrix(&inputs)?)?;
            let cfg = SolverConfig {
                p: solver.p,
                lambda: solver.lambda,
                q: solver.q,
                step,
                tol_outer: tol,
                max_outer: max_iter,
                tol_sinkhorn: solver.tol_sinkhorn,
                max_sinkhorn: solver.max_sinkhorn,
                rho,
            };
            let loaded_ms = ms(start);
            let result = kantorovich_mean(&collection, &metric, &cfg)?;
            let solve_ms = ms(start) - loaded_ms;
            write_file(&out, io::write_vector_csv(&result.barycenter))?;
            let doc = json!({
                "command": "barycenter",
                "version": VERSION,
                "parameters": {
                    "inputs": inputs, "source": source_json(&source), "out": out,
                    "threads": rayon::current_num_threads(),
                },
                "result": result,
                "timings_ms": {"load": loaded_ms, "solve": solve_ms, "total": ms(start)},
            });
            write_file(&report, serde_json::to_string_pretty(&doc).expect("report serializes"))?;
            println!(
                "barycenter: {} iterations, converged {}, objective {:e} -> {:e}",
                result.iterations,
                result.converged,
                result.initial_objective(),
                result.final_objective()
            );
            if !result.converged {
                return Err(Failure::NotConverged);
            }
        }
        Command::Mean { inputs, out } => {
            let mean = euclidean_mean(&read_matrix(&inputs)?)?;
            write_file(&out, io::write_vector_csv(&mean))?;
            emit(&json!({
                "command": "mean",
                "version": VERSION,
                "parameters": {"inputs": inputs, "out": out},
                "timings_ms": {"total": ms(start)},
            }));
        }
        Command::Smooth { inputs, fwhm, source, out } => {
            let metric = load_metric(&source)?;
            let rows = read_matrix(&inputs)?;
            let kernel = SmoothingKernel::new(&metric, fwhm)?;
            let smoothed = rows.iter().map(|r| kernel.apply(r)).collect::<Result<Vec<_>, _>>()?;
            write_file(&out, io::write_matrix_csv(&smoothed))?;
            emit(&json!({
                "command": "smooth",
                "version": VERSION,
                "parameters": {"inputs": inputs, "source": source_json(&source), "out": out},
                "kernel": kernel,
                "timings_ms": {"total": ms(start)},
            }));
        }
        Command::Simulate { subdivisions, subjects, seed, fwhm, cap_size, out_dir } => {
            let cfg = SimConfig { subdivisions, n_subjects: subjects, seed, fwhm_mm: fwhm, cap_size, ..SimConfig::default() };
            let report = run_simulation(&cfg)?;
            let doc = json!({"command": "simulate", "version": VERSION, "report": report});
            write_file(&out_dir.join("report.json"), serde_json::to_string_pretty(&doc).expect("report serializes"))?;
            write_file(&out_dir.join("subjects.csv"), io::write_matrix_csv(&report.subjects))?;
            write_file(&out_dir.join("mean.csv"), io::write_vector_csv(&report.euclidean))?;
            write_file(&out_dir.join("smoothed_mean.csv"), io::write_vector_csv(&report.smoothed))?;
            write_file(&out_dir.join("kantorovich_mean.csv"), io::write_vector_csv(&report.kantorovich.barycenter))?;
            for m in &report.methods {
                println!(
                    "{:<18} peak {:>10.4}  mass {:>10.4}  in labels {:.4}  in dilated labels {:.4}",
                    m.name, m.peak, m.mass, m.label_fraction, m.dilated_label_fraction
                );
            }
            eprintln!("simulate: {:.0} ms", ms(start));
            if !report.kantorovich.converged {
                return Err(Failure::NotConverged);
            }
        }
        Command::Validate { metric_cache, no_triangle } => {
            let bytes = fs::read(&metric_cache).map_err(|e| Failure::Data(format!("{}: {e}", metric_cache.display())))?;
            let m = io::read_matrix_cache(&bytes).map_err(|e| Failure::Data(format!("{}: {e}", metric_cache.display())))?;
            let v = validate_metric(&m, !no_triangle);
            let passes = v.passes(1e-9);
            emit(&json!({
                "command": "validate",
                "version": VERSION,
                "parameters": {"metric_cache": metric_cache, "triangle": !no_triangle},
                "report": v,
                "passes": passes,
                "timings_ms": {"total": ms(start)},
            }));
            if !passes {
                return Err(Failure::Data("matrix is not a metric".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::NotConverged) => {
            eprintln!("error: solver did not converge; results were written and flagged");
            ExitCode::from(3)
        }
    }
}
