//! Named configurations for the standard experiments.

use lsinv::diagest::Conditioning;
use lsinv::forward::PhantomKind;
use lsinv::uq::VarianceMethod;

use crate::config::{
    BenchConfig, BenchFixture, DarcyConfig, ExperimentConfig, ExperimentKind, OutputConfig, PriorConfig, RunConfig,
    SolverConfig, TomoConfig, UqConfig,
};
use crate::error::{CliError, CliResult};

pub const PRESETS: &[&str] = &[
    "tomo-two-region",
    "tomo-noiseless",
    "tomo-limited",
    "tomo-three-phase",
    "tomo-uq",
    "darcy-facies",
    "diag-mhdb416",
    "diag-cond1e7",
    "diag-identity",
];

fn experiment(kind: ExperimentKind, phantom: PhantomKind, side: usize, noise_level: f64) -> ExperimentConfig {
    ExperimentConfig {
        kind,
        phantom,
        rows: side,
        cols: side,
        noise_level,
        seed: 1,
        tomo: TomoConfig::default(),
        darcy: DarcyConfig::default(),
        bench: BenchConfig::default(),
    }
}

fn tomo_prior(lambda_phi_sq: f64, lambda_c_ratio: f64) -> PriorConfig {
    PriorConfig {
        epsilon: 1.0,
        lambda_phi_sq,
        lambda_c_ratio,
        lambda_grid: vec![1e6, 1e5, 1e4, 1e3, 1e2, 1e1],
        ..Default::default()
    }
}

fn config(experiment: ExperimentConfig, prior: PriorConfig) -> RunConfig {
    RunConfig {
        experiment,
        prior,
        solver: SolverConfig::default(),
        uq: UqConfig::default(),
        output: OutputConfig::default(),
    }
}

fn bench(fixture: BenchFixture, k_values: Vec<usize>, n_values: Vec<usize>, trials: usize) -> RunConfig {
    let mut e = experiment(ExperimentKind::DiagBench, PhantomKind::TwoCircle, 4, 0.0);
    e.bench = BenchConfig {
        fixture,
        precondition: true,
        k_values,
        n_values,
        trials,
    };
    config(e, PriorConfig::default())
}

pub fn preset(name: &str) -> CliResult<RunConfig> {
    let cfg = match name {
        // 64x64 two-disk tomography at 2% noise, λ_c² = 10 λ_Φ²
        "tomo-two-region" => {
            let mut e = experiment(ExperimentKind::Tomo, PhantomKind::TwoCircle, 64, 0.02);
            e.tomo = TomoConfig {
                n_angles: 45,
                n_detectors: 91,
                angular_range_deg: 180.0,
            };
            config(e, tomo_prior(1e3, 10.0))
        }
        "tomo-noiseless" => {
            let mut e = experiment(ExperimentKind::Tomo, PhantomKind::TwoCircle, 24, 0.0);
            e.tomo = TomoConfig {
                n_angles: 24,
                n_detectors: 35,
                angular_range_deg: 180.0,
            };
            let mut c = config(e, tomo_prior(1e-2, 10.0));
            c.solver.gn.grad_reduction = 1e-6;
            c
        }
        "tomo-limited" => {
            let mut e = experiment(ExperimentKind::TomoLimited, PhantomKind::TwoCircle, 48, 0.02);
            e.tomo = TomoConfig {
                n_angles: 30,
                n_detectors: 69,
                angular_range_deg: 120.0,
            };
            config(e, tomo_prior(1e3, 10.0))
        }
        // three regions on two level sets, λ_c² = 50 λ_Φ², tighter gradient stop
        "tomo-three-phase" => {
            let mut e = experiment(ExperimentKind::Tomo, PhantomKind::ThreePhase, 48, 0.02);
            e.tomo = TomoConfig {
                n_angles: 40,
                n_detectors: 69,
                angular_range_deg: 180.0,
            };
            let mut c = config(e, tomo_prior(1e3, 50.0));
            c.solver.gn.grad_reduction = 1e-4;
            c
        }
        "tomo-uq" => {
            let mut e = experiment(ExperimentKind::Tomo, PhantomKind::TwoCircle, 16, 0.02);
            e.tomo = TomoConfig {
                n_angles: 20,
                n_detectors: 23,
                angular_range_deg: 180.0,
            };
            let mut c = config(e, tomo_prior(1.0, 10.0));
            c.uq = UqConfig {
                method: VarianceMethod::LanczosMc,
                k: 50,
                n_samples: 200,
                n_show: 3,
                ..Default::default()
            };
            c
        }
        // 50x50 facies field {-3, -5}, 8 wells, 1% noise, λ_c² = λ_Φ²
        "darcy-facies" => {
            // smoother prior than the unit-stencil default: α = 1
            let e = experiment(ExperimentKind::Darcy, PhantomKind::Facies, 50, 0.01);
            let prior = PriorConfig {
                epsilon: 1.0,
                lambda_phi_sq: 10.0,
                lambda_c_ratio: 1.0,
                alpha: 1.0,
                lambda_grid: vec![100.0, 10.0, 1.0, 0.1],
                ..Default::default()
            };
            let mut c = config(e, prior);
            c.solver.gn.grad_reduction = 1e-6;
            c
        }
        "diag-mhdb416" => bench(
            BenchFixture::Diffusion {
                rows: 16,
                cols: 26,
                cond: 5.052e9,
                mode: Conditioning::NearFloating,
            },
            vec![100],
            vec![10, 100, 1000],
            20,
        ),
        "diag-cond1e7" => bench(
            BenchFixture::Diffusion {
                rows: 16,
                cols: 20,
                cond: 1e7,
                mode: Conditioning::NearFloating,
            },
            vec![50],
            vec![10, 100],
            10,
        ),
        "diag-identity" => bench(BenchFixture::Identity { n: 50 }, vec![10, 50], vec![10, 100], 5),
        _ => {
            return Err(CliError::Config(format!(
                "unknown preset {name:?}; available: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_validate_and_roundtrip() {
        for name in PRESETS {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
            let back = RunConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn lambda_c_ratios() {
        assert_eq!(preset("tomo-two-region").unwrap().prior.lambda_c_ratio, 10.0);
        assert_eq!(preset("tomo-three-phase").unwrap().prior.lambda_c_ratio, 50.0);
        assert_eq!(preset("darcy-facies").unwrap().prior.lambda_c_ratio, 1.0);
    }
}
