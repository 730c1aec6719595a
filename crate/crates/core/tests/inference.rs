mod common;

use lgmjoint::inference::gaussian_approx;

use common::{exact_posterior, lmm_fit, lmm_table};

#[test]
fn gaussian_model_matches_closed_form() {
    let long = lmm_table(12);
    let (model, f) = lmm_fit(&long);
    let ex = exact_posterior(&model, &f);
    for i in 0..model.n_latent() {
        let m = &f.marginals[i];
        assert!((m.mean() - ex.mean[i]).abs() < 1e-8, "{i}: {} vs {}", m.mean(), ex.mean[i]);
        assert!((m.sd() - ex.cov[(i, i)].sqrt()).abs() < 1e-6);
    }
    let once = gaussian_approx(&model, &f.points[0].approx.omega, None, 0.005).unwrap();
    assert_eq!(once.iterations, 1);
}

#[test]
fn eb_uses_a_single_point() {
    let (_, f) = lmm_fit(&lmm_table(6));
    assert_eq!(f.points.len(), 1);
    assert_eq!(f.points[0].weight, 1.0);
}

#[test]
fn posterior_draws_have_the_exact_moments() {
    let long = lmm_table(6);
    let (model, f) = lmm_fit(&long);
    let ex = exact_posterior(&model, &f);
    let n = 100_000;
    let draws = f.sample_posterior(&model, n, 17);
    assert_eq!(draws.len(), n);
    assert!(f.sample_posterior(&model, 0, 17).is_empty());
    for i in [0usize, 1, 2, 3] {
        let m = draws.iter().map(|(_, u)| u[i]).sum::<f64>() / n as f64;
        let se = ex.cov[(i, i)].sqrt() / (n as f64).sqrt();
        assert!((m - ex.mean[i]).abs() < 3.0 * se, "{i}: {m} vs {} (se {se})", ex.mean[i]);
    }
    let (i, j) = (0usize, 2usize);
    let c = draws.iter().map(|(_, u)| (u[i] - ex.mean[i]) * (u[j] - ex.mean[j])).sum::<f64>() / n as f64;
    let se = ((ex.cov[(i, i)] * ex.cov[(j, j)] + ex.cov[(i, j)].powi(2)) / n as f64).sqrt();
    assert!((c - ex.cov[(i, j)]).abs() < 4.0 * se, "cov {c} vs {}", ex.cov[(i, j)]);
}

#[test]
fn laplace_marginal_likelihood_is_exact_for_gaussians() {
    use common::{TAU_B, TAU_E};
    use nalgebra::DMatrix;
    let (model, f) = lmm_fit(&lmm_table(6));
    let ex = exact_posterior(&model, &f);
    let n = model.n_latent();
    let prior_cov = DMatrix::from_fn(n, n, |i, j| if i != j { 0.0 } else if i < 3 { 100.0 } else { 1.0 / TAU_B });
    let m = ex.y.len();
    let s = &ex.a * prior_cov * ex.a.transpose() + DMatrix::identity(m, m) / TAU_E;
    let chol = s.cholesky().unwrap();
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = ex.y.dot(&chol.solve(&ex.y));
    let exact = -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + quad);
    assert!((f.mlik_gaussian - exact).abs() < 1e-8, "{} vs {exact}", f.mlik_gaussian);
}

fn scalar_poisson() -> lgmjoint::assembly::Model {
    let long = lgmjoint::data::Table::from_csv_str("id,y\n1,1\n").unwrap();
    let cfg = r#"{"id":"id","longitudinal":[{"response":"y","family":"poisson","fixed":["1"]}]}"#;
    let spec = lgmjoint::spec::parse_config(cfg, Some(&long), None).unwrap();
    lgmjoint::assembly::Model::build(&spec, Some(&long), None).unwrap()
}

#[test]
fn scalar_poisson_mode_matches_newton_oracle() {
    let model = scalar_poisson();
    // Mode of y*u - exp(u) - 0.005 u^2 with y = 1.
    let mut u = 0.0f64;
    for _ in 0..50 {
        u -= (1.0 - u.exp() - 0.01 * u) / (-u.exp() - 0.01);
    }
    let a = gaussian_approx(&model, &[], None, 1e-12).unwrap();
    assert!((a.mode[0] - u).abs() < 1e-8, "{} vs {u}", a.mode[0]);
    let loose = gaussian_approx(&model, &[], Some(&[3.0]), 1.0).unwrap();
    assert!(loose.iterations <= 1);
    assert!(loose.last_step < 1.0);
}

#[test]
fn outer_mode_matches_golden_section() {
    use lgmjoint::inference::{log_post_omega, optimize_omega};
    let long = lgmjoint::data::Table::from_csv_str("id,y\n1,0.3\n2,1.1\n3,-0.4\n4,0.9\n5,0.2\n6,1.6\n7,0.5\n").unwrap();
    let cfg = r#"{"id":"id","longitudinal":[{"response":"y","family":"gaussian","fixed":["1"]}]}"#;
    let spec = lgmjoint::spec::parse_config(cfg, Some(&long), None).unwrap();
    let model = lgmjoint::assembly::Model::build(&spec, Some(&long), None).unwrap();
    let f = |x: f64| log_post_omega(&model, &[x], None).unwrap();
    let (mut a, mut b) = (-5.0f64, 8.0f64);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    while b - a > 1e-9 {
        let (c, d) = (b - g * (b - a), a + g * (b - a));
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let golden = 0.5 * (a + b);
    let mode = optimize_omega(&model, &model.hyper.initial_free()).unwrap();
    assert!((mode.theta[0] - golden).abs() < 1e-4, "{} vs {golden}", mode.theta[0]);
    let again = optimize_omega(&model, &mode.theta).unwrap();
    assert!(again.iterations <= 1, "{} iterations", again.iterations);
}

#[test]
fn metropolis_oracle_on_the_conjugate_model() {
    use lgmjoint::oracle::{metropolis, MetropolisOptions};
    let (model, f) = lmm_fit(&lmm_table(4));
    let ex = exact_posterior(&model, &f);
    let mut opts = MetropolisOptions::new(200_000, 8);
    opts.burn_in = 20_000;
    let chain = metropolis(&model, &opts).unwrap();
    for i in 0..model.n_latent() {
        assert!((chain.mean[i] - ex.mean[i]).abs() < 3.0 * chain.mcse[i] + 1e-3, "{i}: {} vs {}", chain.mean[i], ex.mean[i]);
    }
    let mut frozen = MetropolisOptions::new(500, 8);
    frozen.adapt = false;
    frozen.thin = 1;
    frozen.scales = Some(vec![0.0; model.n_latent()]);
    frozen.init = Some((vec![], ex.mean.iter().copied().collect()));
    let chain = metropolis(&model, &frozen).unwrap();
    assert!(chain.samples.iter().all(|s| s[..model.n_latent()] == chain.samples[0][..model.n_latent()]));
    assert!(chain.sd.iter().all(|&s| s == 0.0));
}
