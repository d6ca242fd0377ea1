use poisson_denoise::channel::{poisson_sample, splitmix64};
use poisson_denoise::fieldio::encode_real;
use poisson_denoise::grid::GridTopology;
use poisson_denoise::image::{gaussian_blur, scale_to_source, CountImage, Grid};
use poisson_denoise::latent::pseudo_obs;
use poisson_denoise::lbp::{init_messages, marginal_stats, run_to_convergence, Correlations, LbpOptions};
use poisson_denoise::restore::{restore, RestoreConfig};

fn uniform(seed: u64) -> impl FnMut() -> f64 {
    let mut s = seed;
    move || {
        s = splitmix64(s);
        (s >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn smooth_counts(w: usize, h: usize, seed: u64) -> CountImage {
    let mut u = uniform(seed);
    let noise = Grid::from_fn(w, h, |_, _| u());
    let src = scale_to_source(&gaussian_blur(&noise, 1.5).unwrap(), 2.0, 40.0).unwrap();
    poisson_sample(&src, seed)
}

#[test]
fn restore_is_bit_reproducible() {
    let z = smooth_counts(16, 12, 3);
    let a = restore(&z, &RestoreConfig::default()).unwrap();
    let b = restore(&z, &RestoreConfig::default()).unwrap();
    assert_eq!(encode_real(&a.lambda).unwrap(), encode_real(&b.lambda).unwrap());
    assert_eq!(a.diagnostics.to_csv(), b.diagnostics.to_csv());
}

#[test]
fn single_pixel_bump_does_not_lower_estimate() {
    // Fixed iteration budget so both runs take the same number of EM steps.
    let cfg = RestoreConfig { em_tol: 1e-300, em_max_iter: 25, k: Some(256), ..Default::default() };
    let mut u = uniform(17);
    let mut violations = 0;
    for trial in 0..100 {
        let z = smooth_counts(8, 8, 1000 + trial / 10);
        let i = (u() * 64.0) as usize;
        let mut bumped = z.clone();
        bumped.as_mut_slice()[i] += 1 + (u() * 10.0) as u32;
        let base = restore(&z, &cfg).unwrap();
        let up = restore(&bumped, &cfg).unwrap();
        assert_eq!(base.diagnostics.iterations.len(), up.diagnostics.iterations.len());
        if up.lambda.as_slice()[i] < base.lambda.as_slice()[i] {
            violations += 1;
        }
    }
    assert_eq!(violations, 0);
}

#[test]
fn loopy_variances_bounded_by_local_precision() {
    let mut u = uniform(8);
    for _ in 0..5 {
        let z = Grid::from_fn(8, 8, |_, _| (u() * 256.0) as u32);
        let xi: Vec<f64> = (0..64).map(|_| 0.1 + 2.9 * u()).collect();
        let latent = pseudo_obs(&z, &xi, 256).unwrap();
        let topo = GridTopology::new(8, 8).unwrap();
        let alpha = 0.1 + 9.9 * u();
        let (msgs, rep) = run_to_convergence(
            &topo,
            init_messages(&topo, alpha),
            latent.evidence(),
            alpha,
            1e-4,
            &LbpOptions::default(),
            None,
        )
        .unwrap();
        assert!(rep.converged);
        assert!(msgs.gamma.iter().all(|&g| g > 0.0 && g < alpha));
        let stats = marginal_stats(&topo, &msgs, latent.evidence(), alpha, 1e-4, Correlations::Pairwise).unwrap();
        for (v, b) in stats.var.iter().zip(&latent.beta) {
            assert!(*v > 0.0 && *v <= 1.0 / (b + 1e-4));
        }
    }
}

#[test]
fn iterates_stay_in_range() {
    for seed in 0..4 {
        let z = smooth_counts(12, 12, seed);
        for corr in [Correlations::Pairwise, Correlations::MeanField] {
            let out = restore(&z, &RestoreConfig { correlations: corr, ..Default::default() }).unwrap();
            assert!(out.diagnostics.iterations.iter().all(|it| it.alpha >= 1e-6 && it.alpha <= 1e6));
            assert!(out.diagnostics.iterations.iter().all(|it| it.xi_mean.unwrap() >= 1e-8));
            assert!(out.xi.iter().all(|&x| x >= 1e-8));
        }
    }
}
