//! Experiment pipelines: phantom → data → MAP → (UQ), λ sweeps, diagonal
//! estimator benchmarks. Every run ends with a manifest, also on failure.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use lsinv::diagest::{bench_sweep, ic0_preconditioner, write_bench_csv, BenchCase};
use lsinv::forward::{
    add_noise, build_ray_transform, make_phantom, well_grid, DarcyForward, DarcyProblem, Phantom, RayGeometry,
};
use lsinv::levelset::{assemble_field, LevelSetConfig, LevelSetState};
use lsinv::mapsolve::{evaluate, radial_bump_init, solve_map, ForwardModel, GnTrace, InverseProblem, StopReason};
use lsinv::ops::{norm2, CsrMatrix, IdentityFactor, PrecisionFactor};
use lsinv::prior::{build_c_prior, build_gmrf_prior, GmrfSpec, JointPrior};
use lsinv::rng::split;
use lsinv::uq::{build_posterior, sample_m, variance_lanczos_mc, variance_sample_cov, VarianceMethod};

use crate::config::{BenchFixture, ExperimentKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{ensure_dir, write_grid, write_json, write_table, write_with};

pub const ANALOGUE_NOTE: &str =
    "desk-scale synthetic analogue; numbers are not reproductions of published full-scale results";

/// Noise floor for noiseless runs, as a fraction of the data RMS.
pub const NOISELESS_SIGMA_FRAC: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Reconstruct,
    Lcurve,
    Uq,
    DiagBench,
    Phantom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemStats {
    pub n: usize,
    pub n_obs: usize,
    pub nls: usize,
    pub state_len: usize,
    pub noise_sigma: f64,
    /// `σ` came from the noiseless floor rather than the noise level.
    pub sigma_floor: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub gn_iterations: usize,
    pub total_cg: usize,
    pub mean_cg_per_gn: f64,
    pub stop: StopReason,
    pub initial_objective: f64,
    pub final_objective: f64,
    /// `‖f(m) − d‖²_{Γ⁻¹}` at the MAP point.
    pub final_whitened_misfit: f64,
    pub discrepancy_threshold: f64,
    pub magnitudes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqStats {
    pub method: VarianceMethod,
    pub k: usize,
    pub n_samples: usize,
    pub clipped: usize,
    pub sampler_calls: usize,
    pub lanczos_steps: usize,
    /// Mean inner iterations per probe (hybrid) or Lanczos steps per sample.
    pub mean_inner_iterations: f64,
    pub mean_variance: f64,
    pub max_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcurveStats {
    pub points: usize,
    pub failed: usize,
    /// `n_obs`, the expected whitened misfit of the noise.
    pub noise_level_misfit: f64,
    /// First `λ_Φ²` (largest to smallest) whose misfit falls below the noise
    /// level; reported, not applied.
    pub suggested_lambda_phi_sq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub case: String,
    pub n: usize,
    pub condition_estimate: f64,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub ok: bool,
    pub failure: Option<String>,
    pub note: String,
    pub config: RunConfig,
    pub wall_time_s: BTreeMap<String, f64>,
    pub problem: Option<ProblemStats>,
    pub solver: Option<SolverStats>,
    pub relative_error: Option<f64>,
    /// Fraction of pixels whose nearest recovered magnitude has the true label.
    pub classification_agreement: Option<f64>,
    pub uq: Option<UqStats>,
    pub lcurve: Option<LcurveStats>,
    pub bench: Option<BenchStats>,
    pub files: Vec<String>,
}

impl RunManifest {
    fn new(command: Command, config: &RunConfig) -> Self {
        Self {
            tool: "lsinv".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            ok: false,
            failure: None,
            note: ANALOGUE_NOTE.into(),
            config: config.clone(),
            wall_time_s: BTreeMap::new(),
            problem: None,
            solver: None,
            relative_error: None,
            classification_agreement: None,
            uq: None,
            lcurve: None,
            bench: None,
            files: Vec::new(),
        }
    }
}

struct Run {
    manifest: RunManifest,
    dir: PathBuf,
    pgm: bool,
}

impl Run {
    fn timed<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> CliResult<T>) -> CliResult<T> {
        let t = Instant::now();
        let out = f(self);
        *self.manifest.wall_time_s.entry(stage.to_string()).or_default() += t.elapsed().as_secs_f64();
        out
    }

    fn grid(&mut self, name: &str, rows: usize, cols: usize, values: &[f64], units: &str, provenance: &str) -> CliResult<()> {
        write_grid(&self.dir, name, rows, cols, values, units, provenance, self.pgm)?;
        self.manifest.files.push(format!("{name}.csv"));
        Ok(())
    }

    fn file(&mut self, name: &str) -> PathBuf {
        self.manifest.files.push(name.to_string());
        self.dir.join(name)
    }
}

/// Synthetic data for one configuration.
pub struct Synthetic {
    pub phantom: Phantom,
    pub truth: Vec<f64>,
    pub forward: Arc<dyn ForwardModel>,
    pub clean: Vec<f64>,
    pub data: Vec<f64>,
    pub sigma: f64,
    pub sigma_floor: bool,
}

pub fn synthesize(cfg: &RunConfig) -> CliResult<Synthetic> {
    let e = &cfg.experiment;
    let phantom = make_phantom(e.phantom, e.rows, e.cols, e.seed)?;
    let truth = phantom.field();
    let forward: Arc<dyn ForwardModel> = match e.kind {
        ExperimentKind::Tomo | ExperimentKind::TomoLimited => {
            let geometry = RayGeometry {
                rows: e.rows,
                cols: e.cols,
                n_angles: e.tomo.n_angles,
                n_detectors: e.tomo.n_detectors,
                angular_range: e.tomo.angular_range_deg * PI / 180.0,
            };
            Arc::new(build_ray_transform(&geometry)?.forward_model())
        }
        ExperimentKind::Darcy => {
            let d = &e.darcy;
            let wells = well_grid(e.rows, e.cols, d.n_wells)?;
            let p = DarcyProblem::new(e.rows, e.cols, d.cell_size, wells, d.pump_rate)?;
            Arc::new(DarcyForward(Arc::new(p)))
        }
        ExperimentKind::DiagBench => {
            return Err(CliError::Config("diag_bench has no synthetic data".into()));
        }
    };
    let clean = forward.evaluate(&truth)?;
    let (data, mut sigma) = add_noise(&clean, e.noise_level, split(e.seed, 1))?;
    let sigma_floor = sigma == 0.0;
    if sigma_floor {
        sigma = NOISELESS_SIGMA_FRAC * norm2(&clean) / (clean.len() as f64).sqrt();
    }
    Ok(Synthetic {
        phantom,
        truth,
        forward,
        clean,
        data,
        sigma,
        sigma_floor,
    })
}

/// Prior mean of the magnitudes: configured, or the phantom values padded
/// with the last one up to `2^nls`.
pub fn c_mean(cfg: &RunConfig, phantom: &Phantom, nls: usize) -> Vec<f64> {
    if let Some(c) = &cfg.prior.c_mean {
        return c.clone();
    }
    let m = &phantom.magnitudes;
    (0..1usize << nls)
        .map(|j| m[j.min(m.len() - 1)])
        .collect()
}

pub fn inverse_problem(cfg: &RunConfig, syn: &Synthetic, lambda_phi_sq: f64) -> CliResult<InverseProblem> {
    let e = &cfg.experiment;
    let p = &cfg.prior;
    let nls = cfg.nls()?;
    let n = e.rows * e.cols;
    let levelset = LevelSetConfig::new(nls, n, p.epsilon)?;
    let spec = GmrfSpec {
        rows: e.rows,
        cols: e.cols,
        alpha: p.alpha,
        gamma: p.gamma,
        lambda_phi_sq,
    };
    let phi = build_gmrf_prior(&spec, nls)?;
    let c = build_c_prior(1 << nls, p.lambda_c_ratio * lambda_phi_sq, c_mean(cfg, &syn.phantom, nls))?;
    let prior = JointPrior::new(phi, c)?;
    let noise = InverseProblem::isotropic_noise(syn.data.len(), syn.sigma)?;
    Ok(InverseProblem::new(syn.forward.clone(), syn.data.clone(), noise, prior, levelset)?)
}

pub fn initial_state(cfg: &RunConfig, problem: &InverseProblem) -> CliResult<LevelSetState> {
    let e = &cfg.experiment;
    let c0 = match &cfg.solver.c0 {
        Some(c) => c.clone(),
        None => problem.prior.c_prior().mean().to_vec(),
    };
    Ok(radial_bump_init(
        &problem.levelset,
        e.rows,
        e.cols,
        &c0,
        &cfg.solver.init,
        split(e.seed, 2),
    )?)
}

pub fn relative_error(est: &[f64], truth: &[f64]) -> f64 {
    let diff: Vec<f64> = est.iter().zip(truth).map(|(a, b)| a - b).collect();
    norm2(&diff) / norm2(truth)
}

/// Fraction of pixels whose nearest magnitude index equals the true label.
pub fn classification_agreement(field: &[f64], magnitudes: &[f64], labels: &[usize]) -> f64 {
    let hits = field
        .iter()
        .zip(labels)
        .filter(|(&v, &l)| {
            let j = (0..magnitudes.len())
                .min_by(|&a, &b| (v - magnitudes[a]).abs().total_cmp(&(v - magnitudes[b]).abs()))
                .unwrap();
            j == l
        })
        .count();
    hits as f64 / field.len() as f64
}

/// Outcome of one MAP solve.
pub struct MapOutcome {
    pub problem: InverseProblem,
    pub state: LevelSetState,
    pub field: Vec<f64>,
    pub trace: GnTrace,
}

pub fn solve(cfg: &RunConfig, syn: &Synthetic, lambda_phi_sq: f64) -> CliResult<MapOutcome> {
    let problem = inverse_problem(cfg, syn, lambda_phi_sq)?;
    let x0 = initial_state(cfg, &problem)?;
    let (state, trace) = solve_map(&problem, &cfg.solver.gn, x0)?;
    let field = assemble_field(&state, &problem.levelset)?;
    Ok(MapOutcome {
        problem,
        state,
        field,
        trace,
    })
}

fn solver_stats(out: &MapOutcome) -> CliResult<SolverStats> {
    let t = &out.trace;
    let eval = evaluate(&out.problem, &out.state)?;
    let gn = t.records.len();
    Ok(SolverStats {
        gn_iterations: gn,
        total_cg: t.total_cg(),
        mean_cg_per_gn: if gn > 0 { t.total_cg() as f64 / gn as f64 } else { 0.0 },
        stop: t.stop,
        initial_objective: t.initial_objective,
        final_objective: eval.objective(),
        final_whitened_misfit: eval.whitened_misfit(),
        discrepancy_threshold: t.discrepancy_threshold,
        magnitudes: out.state.c().to_vec(),
    })
}

fn problem_stats(cfg: &RunConfig, syn: &Synthetic) -> CliResult<ProblemStats> {
    let nls = cfg.nls()?;
    let n = cfg.experiment.rows * cfg.experiment.cols;
    Ok(ProblemStats {
        n,
        n_obs: syn.data.len(),
        nls,
        state_len: n * nls + (1 << nls),
        noise_sigma: syn.sigma,
        sigma_floor: syn.sigma_floor,
    })
}

fn write_truth(run: &mut Run, cfg: &RunConfig, syn: &Synthetic) -> CliResult<()> {
    let (r, c) = (cfg.experiment.rows, cfg.experiment.cols);
    let units = field_units(cfg);
    run.grid("truth", r, c, &syn.truth, units, "synthetic phantom")?;
    let labels: Vec<f64> = syn.phantom.labels.iter().map(|&l| l as f64).collect();
    run.grid("truth_labels", r, c, &labels, "label", "synthetic phantom")
}

fn field_units(cfg: &RunConfig) -> &'static str {
    match cfg.experiment.kind {
        ExperimentKind::Darcy => "log10(K / (m/s))",
        _ => "attenuation per pixel length",
    }
}

fn map_stage(run: &mut Run, cfg: &RunConfig, syn: &Synthetic) -> CliResult<MapOutcome> {
    let out = run.timed("map", |_| solve(cfg, syn, cfg.prior.lambda_phi_sq))?;
    let (r, c) = (cfg.experiment.rows, cfg.experiment.cols);
    run.grid("map", r, c, &out.field, field_units(cfg), "MAP estimate")?;
    for i in 0..out.state.nls() {
        run.grid(&format!("levelset_{}", i + 1), r, c, out.state.phi(i), "1", "MAP level set")?;
    }
    let path = run.file("trace.jsonl");
    write_with(&path, |w| out.trace.write_jsonl(w))?;
    run.manifest.solver = Some(solver_stats(&out)?);
    run.manifest.relative_error = Some(relative_error(&out.field, &syn.truth));
    if syn.phantom.n_regions() <= out.state.c().len() {
        run.manifest.classification_agreement =
            Some(classification_agreement(&out.field, out.state.c(), &syn.phantom.labels));
    }
    Ok(out)
}

/// One row of the L-curve table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LcurveRow {
    pub lambda_phi_sq: f64,
    /// `‖f(m) − d‖²_{Γ⁻¹}`
    pub misfit: f64,
    /// `½‖Φ‖²` in the unscaled GMRF norm `(αL+γI)²`.
    pub regularization: f64,
    pub rel_error: f64,
    pub gn_iterations: usize,
    pub total_cg: usize,
    pub status: String,
}

fn lcurve_row(cfg: &RunConfig, syn: &Synthetic, lambda: f64) -> LcurveRow {
    let res = solve(cfg, syn, lambda).and_then(|out| {
        let eval = evaluate(&out.problem, &out.state)?;
        let reg = out.problem.prior.phi_prior().neg_log_density(out.state.phi_all())? / lambda;
        Ok(LcurveRow {
            lambda_phi_sq: lambda,
            misfit: eval.whitened_misfit(),
            regularization: reg,
            rel_error: relative_error(&out.field, &syn.truth),
            gn_iterations: out.trace.records.len(),
            total_cg: out.trace.total_cg(),
            status: "ok".into(),
        })
    });
    res.unwrap_or_else(|e| LcurveRow {
        lambda_phi_sq: lambda,
        misfit: f64::NAN,
        regularization: f64::NAN,
        rel_error: f64::NAN,
        gn_iterations: 0,
        total_cg: 0,
        status: format!("failed: {e}"),
    })
}

pub fn suggest_lambda(rows: &[LcurveRow], noise_level: f64) -> Option<f64> {
    let mut ok: Vec<&LcurveRow> = rows.iter().filter(|r| r.status == "ok").collect();
    ok.sort_by(|a, b| b.lambda_phi_sq.total_cmp(&a.lambda_phi_sq));
    ok.iter().find(|r| r.misfit <= noise_level).map(|r| r.lambda_phi_sq)
}

fn bench_case(cfg: &RunConfig) -> CliResult<BenchCase> {
    let seed = cfg.experiment.seed;
    Ok(match &cfg.experiment.bench.fixture {
        BenchFixture::Identity { n } => BenchCase::from_matrix("identity", CsrMatrix::identity(*n))?,
        BenchFixture::Givens { n, cond } => BenchCase::synthetic(&format!("givens_{n}_{cond:e}"), *n, *cond, seed)?,
        BenchFixture::Diffusion { rows, cols, cond, mode } => {
            let name = format!("diffusion_{}x{}_{cond:e}_{}", rows, cols, serde_json::to_value(mode).unwrap().as_str().unwrap());
            BenchCase::diffusion(&name, *rows, *cols, *cond, *mode, seed)?
        }
        BenchFixture::MatrixMarket { path } => {
            let f = File::open(path).map_err(|e| CliError::io(path, e))?;
            let name = path.file_stem().map_or("matrix".into(), |s| s.to_string_lossy().into_owned());
            BenchCase::from_matrix_market(&name, BufReader::new(f))?
        }
    })
}

fn pipeline(run: &mut Run, command: Command, cfg: &RunConfig) -> CliResult<()> {
    if command == Command::DiagBench {
        if cfg.is_inversion() {
            return Err(CliError::Config("diag-bench needs experiment.kind = diag_bench".into()));
        }
        let b = &cfg.experiment.bench;
        let case = run.timed("fixture", |_| bench_case(cfg))?;
        let precond: Box<dyn PrecisionFactor> = if b.precondition {
            Box::new(ic0_preconditioner(&case)?)
        } else {
            Box::new(IdentityFactor(case.n()))
        };
        let rows = run.timed("bench", |_| {
            Ok(bench_sweep(&case, precond.as_ref(), &b.k_values, &b.n_values, b.trials, cfg.experiment.seed)?)
        })?;
        let path = run.file("bench.csv");
        write_with(&path, |w| write_bench_csv(&rows, w))?;
        run.manifest.bench = Some(BenchStats {
            case: case.name.clone(),
            n: case.n(),
            condition_estimate: case.condition_estimate,
            rows: rows.len(),
        });
        return Ok(());
    }
    if !cfg.is_inversion() {
        return Err(CliError::Config(format!(
            "{} needs an inversion experiment, not diag_bench",
            serde_json::to_value(command).unwrap().as_str().unwrap()
        )));
    }
    let syn = run.timed("synthesize", |_| synthesize(cfg))?;
    run.manifest.problem = Some(problem_stats(cfg, &syn)?);
    write_truth(run, cfg, &syn)?;
    match command {
        Command::Phantom => Ok(()),
        Command::Reconstruct => map_stage(run, cfg, &syn).map(|_| ()),
        Command::Uq => {
            let out = map_stage(run, cfg, &syn)?;
            uq_stage(run, cfg, out)
        }
        Command::Lcurve => {
            let grid = &cfg.prior.lambda_grid;
            if grid.is_empty() {
                return Err(CliError::Config("lcurve needs a nonempty prior.lambda_grid".into()));
            }
            let rows: Vec<LcurveRow> = run.timed("lcurve", |_| Ok(grid.iter().map(|&l| lcurve_row(cfg, &syn, l)).collect()))?;
            let noise_level = syn.data.len() as f64;
            let path = run.file("lcurve.csv");
            write_table(&path, &rows)?;
            run.manifest.lcurve = Some(LcurveStats {
                points: rows.len(),
                failed: rows.iter().filter(|r| r.status != "ok").count(),
                noise_level_misfit: noise_level,
                suggested_lambda_phi_sq: suggest_lambda(&rows, noise_level),
            });
            Ok(())
        }
        Command::DiagBench => unreachable!(),
    }
}

fn uq_stage(run: &mut Run, cfg: &RunConfig, out: MapOutcome) -> CliResult<()> {
    let u = &cfg.uq;
    let seed = split(cfg.experiment.seed, 3);
    let (r, c) = (cfg.experiment.rows, cfg.experiment.cols);
    let post = run.timed("posterior", |_| Ok(build_posterior(&out.problem, out.state.clone())?))?;
    let k_sampler = if u.k > 0 { u.k } else { post.dim().min(50) };
    for j in 0..u.n_show {
        let m = run.timed("samples", |_| Ok(sample_m(&post, k_sampler, split(seed, 1000 + j as u64))?))?;
        run.grid(&format!("sample_{}", j + 1), r, c, &m, field_units(cfg), "Laplace posterior sample")?;
    }
    let est = run.timed("variance", |_| {
        Ok(match u.method {
            VarianceMethod::LanczosMc => variance_lanczos_mc(&post, u.k, u.n_samples, seed, u.inner)?,
            VarianceMethod::SampleCov => variance_sample_cov(&post, u.k, u.n_samples, seed)?,
        })
    })?;
    run.grid("variance", r, c, &est.values, "squared field units", "posterior pixel variance")?;
    let n = est.values.len() as f64;
    run.manifest.uq = Some(UqStats {
        method: est.method,
        k: est.k,
        n_samples: est.n_samples,
        clipped: est.clipped,
        sampler_calls: post.sampler_calls(),
        lanczos_steps: est.lanczos_steps,
        mean_inner_iterations: est.mean_inner_iterations(),
        mean_variance: est.values.iter().sum::<f64>() / n,
        max_variance: est.values.iter().cloned().fold(0.0, f64::max),
    });
    Ok(())
}

/// Run `command` with a validated config, writing artifacts and the manifest
/// into `cfg.output.dir`. On failure the manifest carries the failure record
/// and the error is returned.
pub fn execute(command: Command, cfg: &RunConfig) -> (RunManifest, Option<CliError>) {
    let mut run = Run {
        manifest: RunManifest::new(command, cfg),
        dir: cfg.output.dir.clone(),
        pgm: cfg.output.pgm,
    };
    let result = cfg
        .validate()
        .and_then(|_| ensure_dir(&run.dir))
        .and_then(|_| pipeline(&mut run, command, cfg));
    let err = result.err();
    run.manifest.ok = err.is_none();
    run.manifest.failure = err.as_ref().map(|e| e.to_string());
    let mut manifest = run.manifest;
    if run.dir.is_dir() {
        manifest.files.push("manifest.json".into());
        if let Err(e) = write_json(&run.dir.join("manifest.json"), &manifest) {
            return (manifest, err.or(Some(e)));
        }
    }
    (manifest, err)
}

pub fn run_reconstruct(cfg: &RunConfig) -> CliResult<RunManifest> {
    finish(execute(Command::Reconstruct, cfg))
}

pub fn run_lcurve(cfg: &RunConfig) -> CliResult<RunManifest> {
    finish(execute(Command::Lcurve, cfg))
}

pub fn run_uq(cfg: &RunConfig) -> CliResult<RunManifest> {
    finish(execute(Command::Uq, cfg))
}

pub fn run_diag_bench(cfg: &RunConfig) -> CliResult<RunManifest> {
    finish(execute(Command::DiagBench, cfg))
}

pub fn run_phantom(cfg: &RunConfig) -> CliResult<RunManifest> {
    finish(execute(Command::Phantom, cfg))
}

fn finish((m, e): (RunManifest, Option<CliError>)) -> CliResult<RunManifest> {
    match e {
        None => Ok(m),
        Some(e) => Err(e),
    }
}

pub fn read_manifest(path: &Path) -> CliResult<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}
