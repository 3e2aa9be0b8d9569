//! Run configuration: a JSON document with sections `experiment`, `prior`,
//! `solver`, `uq` and `output`. Unknown keys are rejected.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use lsinv::diagest::Conditioning;
use lsinv::forward::{make_phantom, PhantomKind};
use lsinv::levelset::levelsets_for_regions;
use lsinv::mapsolve::{GnSettings, InitSettings, InnerSolver};
use lsinv::uq::VarianceMethod;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Tomo,
    TomoLimited,
    Darcy,
    DiagBench,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub uq: UqConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_phantom")]
    pub phantom: PhantomKind,
    #[serde(default = "default_side")]
    pub rows: usize,
    #[serde(default = "default_side")]
    pub cols: usize,
    /// Relative noise level: `σ = level · ‖d‖ / √n_obs`.
    #[serde(default)]
    pub noise_level: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tomo: TomoConfig,
    #[serde(default)]
    pub darcy: DarcyConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

fn default_phantom() -> PhantomKind {
    PhantomKind::TwoCircle
}

fn default_side() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TomoConfig {
    pub n_angles: usize,
    pub n_detectors: usize,
    pub angular_range_deg: f64,
}

impl Default for TomoConfig {
    fn default() -> Self {
        Self {
            n_angles: 30,
            n_detectors: 48,
            angular_range_deg: 180.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DarcyConfig {
    pub n_wells: usize,
    pub pump_rate: f64,
    pub cell_size: f64,
}

impl Default for DarcyConfig {
    fn default() -> Self {
        Self {
            n_wells: 8,
            pump_rate: 1e-3,
            cell_size: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BenchFixture {
    Identity { n: usize },
    /// Log-spaced spectrum mixed by sparse Givens layers.
    Givens { n: usize, cond: f64 },
    /// Diffusion operator on a `rows × cols` grid.
    Diffusion {
        rows: usize,
        cols: usize,
        cond: f64,
        mode: Conditioning,
    },
    MatrixMarket { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub fixture: BenchFixture,
    /// IC(0) preconditioner for the inner solves and the Lanczos factor.
    pub precondition: bool,
    pub k_values: Vec<usize>,
    pub n_values: Vec<usize>,
    pub trials: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            fixture: BenchFixture::Identity { n: 50 },
            precondition: true,
            k_values: vec![10],
            n_values: vec![10, 100],
            trials: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    /// Number of level sets; derived from the phantom's region count if unset.
    pub nls: Option<usize>,
    pub epsilon: f64,
    pub lambda_phi_sq: f64,
    /// `λ_c² = lambda_c_ratio · λ_Φ²`.
    pub lambda_c_ratio: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Prior mean of the magnitudes; the phantom's nominal values if unset.
    pub c_mean: Option<Vec<f64>>,
    /// `λ_Φ²` values for the L-curve sweep.
    pub lambda_grid: Vec<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            nls: None,
            epsilon: 1.0,
            lambda_phi_sq: 1.0,
            lambda_c_ratio: 10.0,
            alpha: lsinv::prior::DEFAULT_ALPHA,
            gamma: lsinv::prior::DEFAULT_GAMMA,
            c_mean: None,
            lambda_grid: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub gn: GnSettings,
    pub init: InitSettings,
    /// Starting magnitudes; the prior mean if unset.
    pub c0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UqConfig {
    pub method: VarianceMethod,
    /// Lanczos steps (low-rank factor for `lanczos_mc`, sampler for `sample_cov`).
    pub k: usize,
    /// Monte Carlo probes or posterior samples.
    pub n_samples: usize,
    /// Posterior sample fields written to disk.
    pub n_show: usize,
    pub inner: InnerSolver,
}

impl Default for UqConfig {
    fn default() -> Self {
        Self {
            method: VarianceMethod::LanczosMc,
            k: 50,
            n_samples: 100,
            n_show: 3,
            inner: InnerSolver::Cg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Also write an 8-bit PGM render of every grid.
    pub pgm: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            pgm: true,
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| bad(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn is_inversion(&self) -> bool {
        self.experiment.kind != ExperimentKind::DiagBench
    }

    /// Region count of the configured phantom.
    pub fn n_regions(&self) -> CliResult<usize> {
        let e = &self.experiment;
        Ok(match e.phantom {
            PhantomKind::TwoCircle | PhantomKind::Facies => 2,
            PhantomKind::ThreePhase => 3,
            PhantomKind::Grains => make_phantom(e.phantom, e.rows, e.cols, e.seed)?.n_regions(),
        })
    }

    /// Level sets in use: the configured value or the smallest that fits.
    pub fn nls(&self) -> CliResult<usize> {
        match self.prior.nls {
            Some(n) => Ok(n),
            None => Ok(levelsets_for_regions(self.n_regions()?)?),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let e = &self.experiment;
        if !self.is_inversion() {
            return self.validate_bench();
        }
        if e.rows < 4 || e.cols < 4 {
            return Err(bad(format!("grid must be at least 4x4, got {}x{}", e.rows, e.cols)));
        }
        if !(e.noise_level >= 0.0) || !e.noise_level.is_finite() {
            return Err(bad(format!("noise_level must be nonnegative, got {}", e.noise_level)));
        }
        match e.kind {
            ExperimentKind::Tomo | ExperimentKind::TomoLimited => {
                let t = &e.tomo;
                if t.n_angles == 0 || t.n_detectors == 0 {
                    return Err(bad("tomo.n_angles and tomo.n_detectors must be positive"));
                }
                if !(t.angular_range_deg > 0.0 && t.angular_range_deg <= 360.0) {
                    return Err(bad("tomo.angular_range_deg must lie in (0, 360]"));
                }
                if e.kind == ExperimentKind::TomoLimited && t.angular_range_deg >= 180.0 {
                    return Err(bad("tomo_limited needs tomo.angular_range_deg below 180"));
                }
            }
            ExperimentKind::Darcy => {
                let d = &e.darcy;
                if d.n_wells < 2 {
                    return Err(bad("darcy.n_wells must be at least 2"));
                }
                if !(d.pump_rate > 0.0 && d.cell_size > 0.0) {
                    return Err(bad("darcy.pump_rate and darcy.cell_size must be positive"));
                }
            }
            ExperimentKind::DiagBench => unreachable!(),
        }
        let p = &self.prior;
        for (name, v) in [
            ("epsilon", p.epsilon),
            ("lambda_phi_sq", p.lambda_phi_sq),
            ("lambda_c_ratio", p.lambda_c_ratio),
            ("alpha", p.alpha),
            ("gamma", p.gamma),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(bad(format!("prior.{name} must be positive, got {v}")));
            }
        }
        if p.lambda_grid.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(bad("prior.lambda_grid entries must be positive"));
        }
        let regions = self.n_regions()?;
        let nls = self.nls()?;
        if nls == 0 || nls > 8 {
            return Err(bad(format!("prior.nls must be in 1..=8, got {nls}")));
        }
        if regions > 1 << nls {
            return Err(bad(format!(
                "phantom has {regions} regions but nls = {nls} level sets encode at most 2^nls = {} \
                 (need nls >= ceil(log2(regions)) = {})",
                1usize << nls,
                levelsets_for_regions(regions)?
            )));
        }
        for (name, v) in [("prior.c_mean", &p.c_mean), ("solver.c0", &self.solver.c0)] {
            if let Some(v) = v {
                if v.len() != 1 << nls {
                    return Err(bad(format!("{name} needs 2^nls = {} entries, got {}", 1usize << nls, v.len())));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(bad(format!("{name} has non-finite entries")));
                }
            }
        }
        self.solver.gn.validate().map_err(|e| bad(e.to_string()))?;
        let u = &self.uq;
        if u.k == 0 && u.method == VarianceMethod::SampleCov {
            return Err(bad("uq.k must be positive for sample_cov"));
        }
        if u.method == VarianceMethod::SampleCov && u.n_samples < 2 {
            return Err(bad("sample_cov needs uq.n_samples >= 2"));
        }
        if u.k == 0 && u.n_samples == 0 {
            return Err(bad("uq needs k > 0 or n_samples > 0"));
        }
        Ok(())
    }

    fn validate_bench(&self) -> CliResult<()> {
        let b = &self.experiment.bench;
        match &b.fixture {
            BenchFixture::Identity { n } if *n == 0 => return Err(bad("identity fixture needs n > 0")),
            BenchFixture::Givens { n, cond } | BenchFixture::Diffusion { rows: n, cond, .. }
                if *n < 2 || !(*cond > 1.0) =>
            {
                return Err(bad("bench fixture needs size >= 2 and cond > 1"))
            }
            _ => {}
        }
        if b.n_values.is_empty() || b.k_values.is_empty() {
            return Err(bad("bench.k_values and bench.n_values must be nonempty"));
        }
        if b.trials == 0 {
            return Err(bad("bench.trials must be positive"));
        }
        Ok(())
    }
}
