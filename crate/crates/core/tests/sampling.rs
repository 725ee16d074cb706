use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use lanechange::scenario::{
    fit_behavior_model, sample_scenarios, spearman, BehaviorSample, GapModel, GapModelKind, SamplerOptions,
};
use lanechange::{Classification, Execution, GevParams};

fn samples(n: usize, seed: u64, range: GevParams, rho: f64) -> Vec<BehaviorSample> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let durations = [
        GevParams { shape: 0.1, loc: 3.0, scale: 0.8 },
        GevParams { shape: 0.0, loc: 2.8, scale: 0.7 },
        GevParams { shape: -0.1, loc: 3.5, scale: 0.9 },
    ];
    let unit = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| {
            let z1: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let z2 = rho * z1 + (1.0 - rho * rho).sqrt() * e;
            let r = range.quantile(unit.cdf(z1)).unwrap();
            BehaviorSample {
                durations: durations.map(|g| loop {
                    let x = g.sample(&mut rng);
                    if x > 0.0 {
                        break x;
                    }
                }),
                gap: Some((r, -1.0 + 2.0 * z2)),
            }
        })
        .collect()
}

#[test]
fn empirical_gap_draws_are_uniform_over_pairs() {
    let pairs: Vec<[f64; 2]> = (0..25).map(|i| [5.0 + i as f64, -(i as f64) / 5.0]).collect();
    let model = GapModel::Empirical { pairs: pairs.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000;
    let mut counts = vec![0usize; pairs.len()];
    for _ in 0..n {
        let (r, _) = model.sample(&mut rng).unwrap();
        counts[(r - 5.0).round() as usize] += 1;
    }
    let expected = n as f64 / pairs.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let crit = ChiSquared::new((pairs.len() - 1) as f64).unwrap().inverse_cdf(0.999);
    assert!(chi2 < crit, "chi2 {chi2} vs {crit}");
}

#[test]
fn fitted_model_recovers_generating_parameters() {
    let range = GevParams { shape: 0.05, loc: 25.0, scale: 10.0 };
    let s = samples(20_000, 4, range, 0.5);
    let m = fit_behavior_model(&s, Classification::Dlc, GapModelKind::Fitted).unwrap();
    let GapModel::Fitted { range: r, range_rate_mean, range_rate_sd, spearman: rho_s, latent_correlation } = m.gap_model
    else {
        panic!("expected fitted gap model");
    };
    assert!((r.shape - 0.05).abs() < 0.03, "{r:?}");
    assert!((r.loc - 25.0).abs() < 0.4, "{r:?}");
    assert!((r.scale - 10.0).abs() < 0.3, "{r:?}");
    assert!((range_rate_mean + 1.0).abs() < 0.05);
    assert!((range_rate_sd - 2.0).abs() < 0.05);
    // Spearman of a Gaussian copula with ρ = 0.5 is (6/π) asin(0.25).
    let rho_s_true = 6.0 / std::f64::consts::PI * (0.25f64).asin();
    assert!((rho_s - rho_s_true).abs() < 0.02, "{rho_s}");
    assert!((latent_correlation - 0.5).abs() < 0.02, "{latent_correlation}");
    assert!((m.duration_model[0].loc - 3.0).abs() < 0.05);
    assert!((m.duration_model[2].shape + 0.1).abs() < 0.03);

    let specs = sample_scenarios(&m, 20_000, 5, &SamplerOptions::default()).unwrap();
    let gaps: Vec<f64> = specs.iter().map(|s| s.initial_gap).collect();
    let rates: Vec<f64> = specs.iter().map(|s| -s.closing_rate).collect();
    assert!((spearman(&gaps, &rates) - rho_s_true).abs() < 0.03);
}

#[test]
fn risk_bias_shifts_ttc_downward() {
    let range = GevParams { shape: 0.0, loc: 25.0, scale: 10.0 };
    let m = fit_behavior_model(&samples(500, 6, range, 0.3), Classification::Mlc, GapModelKind::Empirical).unwrap();
    let n = 5_000;
    let plain = sample_scenarios(&m, n, 7, &SamplerOptions::default()).unwrap();
    let tau = 3.0;
    let biased = sample_scenarios(&m, n, 7, &SamplerOptions { risk_bias: Some(tau), ..SamplerOptions::default() })
        .unwrap();
    assert!(biased.iter().all(|s| s.ttc() < tau));
    let cdf = |specs: &[lanechange::ScenarioSpec], t: f64| {
        specs.iter().filter(|s| s.ttc() <= t).count() as f64 / specs.len() as f64
    };
    for t in [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 5.0, 10.0] {
        assert!(cdf(&biased, t) >= cdf(&plain, t), "t = {t}");
    }
}

#[test]
fn sampler_output_does_not_depend_on_execution_mode() {
    let range = GevParams { shape: 0.0, loc: 25.0, scale: 10.0 };
    let m = fit_behavior_model(&samples(200, 8, range, 0.0), Classification::Mlc, GapModelKind::Fitted).unwrap();
    let run = |exec| sample_scenarios(&m, 3000, 9, &SamplerOptions { exec, ..SamplerOptions::default() }).unwrap();
    assert_eq!(run(Execution::Parallel), run(Execution::Sequential));
    assert_ne!(
        run(Execution::Parallel),
        sample_scenarios(&m, 3000, 10, &SamplerOptions::default()).unwrap()
    );
}
