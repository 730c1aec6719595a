use lgmjoint::assembly::cholesky_precision;
use lgmjoint::data::Table;
use lgmjoint::design::NsBasis;
use lgmjoint::likelihoods::{eval, total_loglik, Extras, Family, ObsView};
use lgmjoint::spec::parse_config;
use lgmjoint::summaries::sorted_quantile;
use lgmjoint::surv_augment::{decompose, make_cutpoints, rw_dense, Cutpoints};
use proptest::prelude::*;

#[derive(Debug, Clone, Copy)]
struct Case {
    family: Family,
    y: f64,
    eta: f64,
    hyper: f64,
    ex: Extras,
}

fn response() -> impl Strategy<Value = (Family, f64, f64)> {
    prop_oneof![
        (-5.0..5.0f64, 0.1..20.0f64).prop_map(|(y, tau)| (Family::Gaussian, y, tau)),
        (-3.0..3.0f64, 0.1..20.0f64).prop_map(|(ly, tau)| (Family::Lognormal, ly.exp(), tau)),
        (0u32..15).prop_map(|y| (Family::Poisson, y as f64, 0.0)),
        (0u32..2).prop_map(|y| (Family::Binomial, y as f64, 0.0)),
        (0u32..2).prop_map(|y| (Family::PoissonSurv, y as f64, 0.0)),
        (0u32..2).prop_map(|y| (Family::ExponentialSurv, y as f64, 0.0)),
        (0u32..2, 0.3..3.0f64).prop_map(|(y, a)| (Family::WeibullSurv, y as f64, a)),
    ]
}

fn case() -> impl Strategy<Value = Case> {
    (response(), -3.0..3.0f64, 0.0..1.0f64, 0.05..2.0f64, -1.0..1.0f64).prop_map(
        |((family, y, hyper), eta, t0, len, offset)| Case {
            family,
            y,
            eta,
            hyper,
            ex: Extras {
                offset,
                ntrials: 1.0,
                t0,
                t1: t0 + len,
            },
        },
    )
}

fn value(c: &Case, eta: f64) -> f64 {
    eval(c.family, c.y, eta, c.hyper, &c.ex).value
}

proptest! {
    #[test]
    fn likelihood_derivatives_match_differences(c in case()) {
        let h = 1e-4;
        let d = eval(c.family, c.y, c.eta, c.hyper, &c.ex);
        let (lo, hi) = (value(&c, c.eta - h), value(&c, c.eta + h));
        let g = (hi - lo) / (2.0 * h);
        let g2 = (hi - 2.0 * d.value + lo) / (h * h);
        let scale = 1.0 + d.d1.abs() + d.d2.abs();
        prop_assert!(d.value.is_finite());
        prop_assert!((g - d.d1).abs() < 1e-5 * scale, "{:?}: d1 {} vs {}", c.family, d.d1, g);
        prop_assert!((g2 - d.d2).abs() < 1e-3 * scale, "{:?}: d2 {} vs {}", c.family, d.d2, g2);
    }

    #[test]
    fn total_loglik_is_the_row_sum(cases in prop::collection::vec(case(), 0..12), drop in prop::collection::vec(any::<bool>(), 12)) {
        let views: Vec<ObsView> = cases.iter().zip(&drop).map(|(c, &d)| ObsView {
            family: c.family,
            y: (!d).then_some(c.y),
            hyper: c.hyper,
            extras: &c.ex,
        }).collect();
        let eta: Vec<f64> = cases.iter().map(|c| c.eta).collect();
        let (total, d1, _) = total_loglik(views, &eta).unwrap();
        let naive: f64 = cases.iter().zip(&drop).filter(|(_, &d)| !d).map(|(c, _)| value(c, c.eta)).sum();
        prop_assert!((total - naive).abs() <= 1e-12 * (1.0 + naive.abs()));
        for (i, &d) in drop.iter().take(cases.len()).enumerate() {
            if d {
                prop_assert_eq!(d1[i], 0.0);
            }
        }
    }

    #[test]
    fn decomposition_conserves_exposure(
        steps in prop::collection::vec(0.05..2.0f64, 1..10),
        a in 0.0..1.0f64,
        b in 0.0..1.3f64,
        event in any::<bool>(),
    ) {
        let mut cuts = vec![0.0];
        for s in &steps {
            cuts.push(cuts.last().unwrap() + s);
        }
        let last = *cuts.last().unwrap();
        let entry = a * last;
        let exit = entry + 1e-3 + b * last;
        let cp = Cutpoints::new(cuts).unwrap();
        let rows = decompose(entry, exit, event, &cp, 0, 0).unwrap();
        let total: f64 = rows.iter().map(|r| r.exposure()).sum();
        prop_assert!((total - (exit - entry)).abs() < 1e-12);
        prop_assert_eq!(rows.first().unwrap().start, entry);
        prop_assert_eq!(rows.last().unwrap().end, exit);
        for w in rows.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
            prop_assert_eq!(w[0].y, 0.0);
            prop_assert!(w[0].interval < w[1].interval);
        }
        for r in &rows {
            prop_assert!(r.exposure() > 0.0);
            prop_assert!((r.offset - r.exposure().ln()).abs() < 1e-12);
        }
        let events: f64 = rows.iter().map(|r| r.y).sum();
        prop_assert_eq!(events, if event { 1.0 } else { 0.0 });
    }

    #[test]
    fn equidistant_cutpoints(n in 1usize..60, t in 0.01..100.0f64) {
        let c = make_cutpoints(n, t).unwrap();
        prop_assert_eq!(c.0.len(), n + 1);
        prop_assert_eq!(c.0[0], 0.0);
        prop_assert_eq!(c.last(), t);
        for w in c.0.windows(2) {
            prop_assert!((w[1] - w[0] - t / n as f64).abs() < 1e-9 * t);
        }
    }

    #[test]
    fn random_walk_null_space(m in 3usize..30) {
        for order in [1usize, 2] {
            let q = rw_dense(order, m).unwrap();
            let mut basis: Vec<Vec<f64>> = vec![vec![1.0; m]];
            if order == 2 {
                basis.push((0..m).map(|i| i as f64).collect());
            }
            for v in &basis {
                for row in &q {
                    let s: f64 = row.iter().zip(v).map(|(a, b)| a * b).sum();
                    prop_assert!(s.abs() < 1e-9);
                }
            }
            for (i, row) in q.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    prop_assert_eq!(v, q[j][i]);
                }
            }
        }
    }

    #[test]
    fn re_precision_is_spd(theta in prop::collection::vec(-2.0..2.0f64, 6)) {
        let p = cholesky_precision(3, &theta, true);
        prop_assert!(p.iter().all(|v| v.is_finite()));
        prop_assert!((&p - p.transpose()).abs().max() < 1e-12);
        prop_assert!(p.clone().cholesky().is_some());
        let h = 1e-6;
        for k in 0..theta.len() {
            let mut t = theta.clone();
            t[k] += h;
            let jac = (cholesky_precision(3, &t, true) - &p) / h;
            prop_assert!(jac.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn natural_spline_is_anchored_and_linear_outside(k1 in 0.2..0.45f64, k2 in 0.55..0.8f64, x in 1.0..3.0f64) {
        let b = NsBasis::new(&[k1, k2], (0.0, 1.0)).unwrap();
        prop_assert!(b.eval(0.0).iter().all(|v| v.abs() < 1e-12));
        let (f1, f2, fx) = (b.eval(1.0), b.eval(1.5), b.eval(x));
        for j in 0..b.ncols() {
            let slope = (f2[j] - f1[j]) / 0.5;
            prop_assert!((fx[j] - (f1[j] + slope * (x - 1.0))).abs() < 1e-8 * (1.0 + fx[j].abs()));
        }
    }

    #[test]
    fn quantiles_are_monotone(mut xs in prop::collection::vec(-100.0..100.0f64, 1..50), p in 0.0..1.0f64, q in 0.0..1.0f64) {
        xs.sort_by(f64::total_cmp);
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(sorted_quantile(&xs, lo) <= sorted_quantile(&xs, hi));
        prop_assert_eq!(sorted_quantile(&xs, 0.0), xs[0]);
        prop_assert_eq!(sorted_quantile(&xs, 1.0), *xs.last().unwrap());
    }

    #[test]
    fn parsing_is_deterministic(ys in prop::collection::vec(prop::option::of(-10.0..10.0f64), 2..20)) {
        let n = ys.len();
        let long = Table::from_numeric(vec![
            ("id".into(), (0..n).map(|i| Some((i % 3) as f64)).collect()),
            ("t".into(), (0..n).map(|i| Some(i as f64 * 0.1)).collect()),
            ("y".into(), ys),
        ]).unwrap();
        let cfg = r#"{"id":"id","time":"t","longitudinal":[{"response":"y","family":"gaussian","fixed":["1","t"],"random":["1"]}]}"#;
        let a = parse_config(cfg, Some(&long), None);
        let b = parse_config(cfg, Some(&long), None);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.to_json(), b.to_json()),
            (Err(a), Err(b)) => prop_assert_eq!(a.to_string(), b.to_string()),
            _ => prop_assert!(false, "parsing disagreed with itself"),
        }
    }

    #[test]
    fn csv_round_trip(cols in prop::collection::vec(prop::option::of(-1e6..1e6f64), 1..30)) {
        let t = Table::from_numeric(vec![("v".into(), cols.clone())]).unwrap();
        let back = Table::from_csv_str(&t.to_csv_string().unwrap()).unwrap();
        prop_assert_eq!(back.values("v").unwrap(), &cols[..]);
    }
}
