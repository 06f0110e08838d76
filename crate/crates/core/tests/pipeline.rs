use std::path::Path;

use ambiprop::config::ExperimentConfig;
use ambiprop::validation::empirical_wasserstein;
use ambiprop::{build_grid, propagate, quantize, wasserstein_discrete, DiscreteDistribution, GaussianMixture, Sample};
use nalgebra::{DMatrix, DVector};

fn bundled(name: &str) -> (ExperimentConfig, std::path::PathBuf) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn bundled_configs_run() {
    for name in ["double_spiral", "piecewise_linear", "piecewise_linear_b", "nn_pendulum", "quadruple_tank"] {
        let (cfg, dir) = bundled(&format!("{name}.json"));
        let model = cfg.build_model(&dir).unwrap();
        let trace =
            propagate(&cfg.initial_ball().unwrap(), &cfg.noise_ball().unwrap(), &model, 3, &cfg.propagation_config())
                .unwrap();
        let radii = trace.radii();
        assert_eq!(radii.len(), 4, "{name}");
        assert!(radii.windows(2).all(|w| w[1].is_finite() && w[1] >= cfg.noise.radius), "{name}: {radii:?}");
        for r in &trace.reports {
            assert!(r.support_size <= cfg.compression * cfg.noise_ball().unwrap().center.len());
        }
    }
}

#[test]
fn bundled_values_match_table() {
    let (cfg, _) = bundled("quadruple_tank.json");
    let noise = cfg.noise_ball().unwrap().center;
    assert_eq!(noise.len(), 2);
    assert!(noise.mean().norm() < 1e-15);
    let (cfg, _) = bundled("double_spiral.json");
    let init = cfg.initial_ball().unwrap().center;
    assert_eq!(init.mean().as_slice(), &[0.1, -0.5]);
    assert_eq!(init.covariance()[(0, 0)], 1e-3);
}

#[test]
fn quantization_converges_weakly() {
    let gmm = GaussianMixture::new(
        vec![0.3, 0.7],
        vec![DVector::from_vec(vec![-1.0, 0.5]), DVector::from_vec(vec![1.0, 0.0])],
        DMatrix::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]),
    )
    .unwrap();
    let samples = gmm.sample(1500, 4);
    let empirical = DiscreteDistribution::uniform(samples.clone()).unwrap();
    let mut previous = f64::INFINITY;
    let mut deltas = Vec::new();
    for budget in [1, 10, 100, 10_000] {
        let q = quantize(&gmm, &build_grid(&gmm, budget, 4.0).unwrap()).unwrap();
        let w = wasserstein_discrete(&empirical, &q.discrete, 2).unwrap().0;
        assert!(w < previous, "budget {budget}: {w} >= {previous}");
        previous = w;
        deltas.push(q.theta_delta);
    }
    assert!(deltas.windows(2).all(|d| d[1] < d[0]), "{deltas:?}");
    // the remaining gap is sampling noise, on the scale of two independent samples
    let other = gmm.sample(1500, 5);
    let floor = empirical_wasserstein(&samples, &other, 2).unwrap();
    assert!(previous < floor, "{previous} vs {floor}");
}
