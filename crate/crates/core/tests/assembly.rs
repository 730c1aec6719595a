use lgmjoint::assembly::{Model, Outcome};
use lgmjoint::data::Table;
use lgmjoint::spec::parse_config;
use lgmjoint::verify::{pbc2_tables, PBC2_CONFIG};

fn pbc2_model(config: &str) -> Model {
    let (long, surv) = pbc2_tables().unwrap();
    let spec = parse_config(config, Some(&long), Some(&surv)).unwrap();
    Model::build(&spec, Some(&long), Some(&surv)).unwrap()
}

#[test]
fn example_one_layout() {
    let m = pbc2_model(PBC2_CONFIG);
    let l = &m.layout;
    assert_eq!(l.long_fixed.iter().map(|r| r.len()).collect::<Vec<_>>(), vec![4, 4]);
    // Survival fixed block: intercept, then drug.
    assert_eq!(l.surv_fixed[0].len(), 2);
    assert_eq!(l.names[l.surv_fixed[0].start + 1], "drug_S1");
    assert_eq!(l.groups.len(), 1);
    assert_eq!(l.groups[0].dim, 2);
    assert!(l.groups[0].full);
    assert_eq!(l.n_subjects, 312);
    assert!(l.baseline.iter().all(|b| b.is_none()));
    assert_eq!(l.n, 8 + 2 + 2 * 312);
}

#[test]
fn independent_markers_get_separate_groups() {
    let m = pbc2_model(&PBC2_CONFIG.replace(r#""cor_long":true"#, r#""cor_long":false"#));
    let dims: Vec<usize> = m.layout.groups.iter().map(|g| g.dim).collect();
    assert_eq!(dims, vec![1, 1]);
}

#[test]
fn no_random_effects_means_no_groups() {
    let long = Table::from_csv_str("id,y\n1,0.5\n1,0.7\n2,1.5\n").unwrap();
    let cfg = r#"{"id":"id","longitudinal":[{"response":"y","family":"gaussian","fixed":["1"]}]}"#;
    let spec = parse_config(cfg, Some(&long), None).unwrap();
    let m = Model::build(&spec, Some(&long), None).unwrap();
    assert!(m.layout.groups.is_empty());
    assert_eq!(m.n_latent(), 1);
}

#[test]
fn interaction_column_is_the_product() {
    let m = pbc2_model(PBC2_CONFIG);
    let cov = |name: &str| if name == "drug" { 1.0 } else { f64::NAN };
    assert_eq!(m.ctx.long_fixed_values(0, &cov, 2.0), vec![1.0, 2.0, 1.0, 2.0]);
}

#[test]
fn default_fixed_effect_prior_precision() {
    let m = pbc2_model(PBC2_CONFIG);
    let omega = m.hyper.expand(&m.hyper.initial_free());
    let st = m.prior_state(&omega).unwrap();
    let mut e = vec![0.0; m.n_latent()];
    for i in 0..8 {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[i] = 1.0;
        assert_eq!(m.prior_mul(&st, &e)[i], 0.01);
    }
}

#[test]
fn zero_association_decouples_survival_rows() {
    let m = pbc2_model(PBC2_CONFIG);
    let mut omega = m.hyper.expand(&m.hyper.initial_free());
    for (i, p) in m.hyper.params.iter().enumerate() {
        if p.name.starts_with("CV_") {
            omega[i] = 0.0;
        }
    }
    let vals = m.amap.values(&omega);
    let u0 = vec![0.1; m.n_latent()];
    let mut u1 = u0.clone();
    let surv_block = m.layout.surv_fixed[0].clone();
    for (j, v) in u1.iter_mut().enumerate() {
        if !surv_block.contains(&j) {
            *v += 1.0 + j as f64 * 1e-3;
        }
    }
    let (e0, e1) = (m.amap.eta(&vals, &u0), m.amap.eta(&vals, &u1));
    let mut n_surv = 0;
    for (r, row) in m.rows.iter().enumerate() {
        if let Outcome::Surv(_) = row.outcome {
            assert_eq!(e0[r], e1[r], "survival row {r} depends on longitudinal latents");
            n_surv += 1;
        }
    }
    assert!(n_surv >= 312, "{n_surv} survival rows");
}
