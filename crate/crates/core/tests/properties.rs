use proptest::prelude::*;
use serde_json::json;
use ssfinsler::catalog::{catalog_branch, catalog_get, CatalogEntry};
use ssfinsler::construct::q_from_c1;
use ssfinsler::curvature::{berwald_tensor, cfc_equations, flag_curvature, landsberg_tensor, residuals, riemann_tensor};
use ssfinsler::frame::{dot, norm};
use ssfinsler::metric::{finsler_norm, metric_tensor, spray_pq};
use ssfinsler::quad::integrate;
use ssfinsler::report::{classify, Tolerances};
use ssfinsler::sample::{sample_frames, Region};
use ssfinsler::spec::Params;
use ssfinsler::{Expr, Jet, RadialFrame};

const ENTRIES: [(&str, f64); 13] = [
    ("euclidean", 1.0),
    ("riemannian_quadratic", 1.0),
    ("berwald_family", 1.0),
    ("unicorn_candidate", 1.0),
    ("unicorn_candidate", -1.0),
    ("example_6_1", 1.0),
    ("example_6_1", -1.0),
    ("example_6_2", 1.0),
    ("example_6_2", -1.0),
    ("example_6_4", 1.0),
    ("example_6_4", -1.0),
    ("example_6_5", 1.0),
    ("example_6_5", -1.0),
];

fn entry(k: usize) -> CatalogEntry {
    let (id, sigma) = ENTRIES[k];
    match id {
        "euclidean" | "riemannian_quadratic" | "berwald_family" => catalog_get(id, &Params::new()).unwrap(),
        _ => catalog_branch(id, sigma).unwrap(),
    }
}

fn frame_of(e: &CatalogEntry, n: usize, seed: u64) -> RadialFrame {
    sample_frames(&e.spec, n, 1, seed, &Region::for_spec(&e.spec)).unwrap().remove(0)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Expressions in `r`, `s` whose values stay finite and whose `sqrt`/`ln`
/// arguments stay positive everywhere.
fn expr_source() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        Just("r".to_string()),
        Just("s".to_string()),
        (-3.0f64..3.0).prop_map(|c| format!("{c:.3}")),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})*({b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})/(1 + ({b})^2)")),
            inner.clone().prop_map(|a| format!("sqrt(1 + ({a})^2)")),
            inner.clone().prop_map(|a| format!("ln(2 + ({a})^2)")),
            inner.clone().prop_map(|a| format!("exp(({a})/(1 + ({a})^2))")),
            inner.prop_map(|a| format!("({a})^3")),
        ]
    })
}

/// A product of two Householder reflections.
fn orthogonal(v1: &[f64], v2: &[f64], p: &[f64]) -> Vec<f64> {
    let reflect = |v: &[f64], p: &[f64]| -> Vec<f64> {
        let c = 2.0 * dot(v, p) / dot(v, v);
        p.iter().zip(v).map(|(a, b)| a - c * b).collect()
    };
    reflect(v2, &reflect(v1, p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn jet_derivatives_match_central_differences(src in expr_source(), r in 0.5f64..2.0, s in -1.0f64..1.0) {
        let e = Expr::parse(&src, &["r", "s"]).unwrap();
        let j = e.jet_rs(r, s, 2).unwrap();
        let h = 1e-5;
        let f = |r: f64, s: f64| e.eval(&[r, s]).unwrap();
        let fr = (f(r + h, s) - f(r - h, s)) / (2.0 * h);
        let fs = (f(r, s + h) - f(r, s - h)) / (2.0 * h);
        prop_assert!(rel(j.d(1, 0), fr) <= 1e-6, "{src}: f_r {} vs {fr}", j.d(1, 0));
        prop_assert!(rel(j.d(0, 1), fs) <= 1e-6, "{src}: f_s {} vs {fs}", j.d(0, 1));
        // second derivatives from differences of the jet's own first derivatives
        let d1 = |r: f64, s: f64| {
            let j = e.jet_rs(r, s, 1).unwrap();
            (j.d(1, 0), j.d(0, 1))
        };
        let (rp, rm) = (d1(r + h, s), d1(r - h, s));
        let (sp, sm) = (d1(r, s + h), d1(r, s - h));
        let frr = (rp.0 - rm.0) / (2.0 * h);
        let frs = (sp.0 - sm.0) / (2.0 * h);
        let fss = (sp.1 - sm.1) / (2.0 * h);
        prop_assert!(rel(j.d(2, 0), frr) <= 1e-6, "{src}: f_rr {} vs {frr}", j.d(2, 0));
        prop_assert!(rel(j.d(1, 1), frs) <= 1e-6, "{src}: f_rs {} vs {frs}", j.d(1, 1));
        prop_assert!(rel(j.d(0, 2), fss) <= 1e-6, "{src}: f_ss {} vs {fss}", j.d(0, 2));
    }

    #[test]
    fn truncation_commutes_with_evaluation(src in expr_source(), r in 0.5f64..2.0, s in -1.0f64..1.0, d in 1usize..8) {
        let e = Expr::parse(&src, &["r", "s"]).unwrap();
        let hi = e.jet_rs(r, s, d).unwrap().truncate(d - 1);
        let lo = e.jet_rs(r, s, d - 1).unwrap();
        let scale = max_abs(lo.coeffs()).max(1.0);
        for (a, b) in hi.coeffs().iter().zip(lo.coeffs()) {
            prop_assert!((a - b).abs() <= 1e-12 * scale, "{src}: {a} vs {b}");
        }
    }

    #[test]
    fn simpson_is_exact_on_cubics(c in proptest::array::uniform4(-5.0f64..5.0), a in -3.0f64..3.0, w in 0.01f64..4.0) {
        let b = a + w;
        let f = |x: f64| c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x;
        let prim = |x: f64| c[0] * x + c[1] * x * x / 2.0 + c[2] * x.powi(3) / 3.0 + c[3] * x.powi(4) / 4.0;
        let got = integrate(f, a, b, 1e-10).unwrap();
        let want = prim(b) - prim(a);
        prop_assert!((got.value - want).abs() <= 1e-12 * want.abs().max(1.0), "{} vs {want}", got.value);
        prop_assert_eq!(got.subdivisions, 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotations_leave_f_p_q_unchanged(
        k in 0..ENTRIES.len(),
        n in 2usize..6,
        seed in any::<u64>(),
        v1 in proptest::collection::vec(-1.0f64..1.0, 5),
        v2 in proptest::collection::vec(-1.0f64..1.0, 5),
    ) {
        let (v1, v2) = (&v1[..n], &v2[..n]);
        prop_assume!(norm(v1) > 0.1 && norm(v2) > 0.1);
        let e = entry(k);
        let f = frame_of(&e, n, seed);
        let g = RadialFrame::new(&orthogonal(v1, v2, &f.x), &orthogonal(v1, v2, &f.y)).unwrap();
        prop_assert!(rel(f.r, g.r) <= 1e-14 && rel(f.u, g.u) <= 1e-14 && (f.s - g.s).abs() <= 1e-13);
        let a = spray_pq(&e.spec, &f).unwrap();
        let b = spray_pq(&e.spec, &g).unwrap();
        prop_assert!(rel(finsler_norm(&e.spec, &f).unwrap(), finsler_norm(&e.spec, &g).unwrap()) <= 1e-12);
        prop_assert!(rel(a.p, b.p) <= 1e-10 && rel(a.q, b.q) <= 1e-10, "P {} {}, Q {} {}", a.p, b.p, a.q, b.q);
    }

    #[test]
    fn homogeneity_in_y(k in 0..ENTRIES.len(), n in 2usize..6, seed in any::<u64>(), li in 0usize..3) {
        let lambda = [0.5, 2.0, 7.0][li];
        let e = entry(k);
        let f = frame_of(&e, n, seed);
        let y2: Vec<f64> = f.y.iter().map(|c| lambda * c).collect();
        let g = RadialFrame::new(&f.x, &y2).unwrap();
        let (fa, fb) = (finsler_norm(&e.spec, &f).unwrap(), finsler_norm(&e.spec, &g).unwrap());
        prop_assert!((fb - lambda * fa).abs() <= 1e-12 * fb.abs());
        let (ma, mb) = (metric_tensor(&e.spec, &f).unwrap(), metric_tensor(&e.spec, &g).unwrap());
        let scale = max_abs(&ma.g);
        for (a, b) in ma.g.iter().zip(&mb.g) {
            prop_assert!((a - b).abs() <= 1e-10 * scale);
        }
        let (sa, sb) = (spray_pq(&e.spec, &f).unwrap(), spray_pq(&e.spec, &g).unwrap());
        let scale = max_abs(&sb.g).max(f64::MIN_POSITIVE);
        for (a, b) in sa.g.iter().zip(&sb.g) {
            prop_assert!((lambda * lambda * a - b).abs() <= 1e-10 * scale.max(lambda * lambda));
        }
    }

    #[test]
    fn metric_tensor_identities(k in 0..ENTRIES.len(), n in 2usize..6, seed in any::<u64>()) {
        let e = entry(k);
        let f = frame_of(&e, n, seed);
        let m = metric_tensor(&e.spec, &f).unwrap();
        let f2 = finsler_norm(&e.spec, &f).unwrap().powi(2);
        prop_assert!((m.inner(&f.y, &f.y) - f2).abs() <= 1e-10 * f2);
        let gn = max_abs(&m.g);
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(m.g[i * n + j], m.g[j * n + i]);
                let p: f64 = (0..n).map(|l| m.g[i * n + l] * m.g_inv[l * n + j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((p - want).abs() <= 1e-10 * gn.max(1.0), "g g^-1 [{i}{j}] = {p}");
            }
        }
        if let Some(a) = &m.analytic {
            prop_assert!(a.gap_to_direct <= 1e-9, "{}", a.gap_to_direct);
        }
        prop_assert!(m.positive_definite);
    }

    #[test]
    fn curvature_tensor_structure(k in 0..ENTRIES.len(), n in 2usize..5, seed in any::<u64>()) {
        let e = entry(k);
        let f = frame_of(&e, n, seed);
        let sp = spray_pq(&e.spec, &f).unwrap();
        let b = berwald_tensor(&sp, &f).unwrap();
        let l = landsberg_tensor(&sp, &f).unwrap();
        let rt = riemann_tensor(&sp, &f).unwrap();
        let (bs, ls) = (b.max_abs().max(1.0), max_abs(&l.tensor).max(1.0));
        for i in 0..n {
            for j in 0..n {
                for kk in 0..n {
                    for m in 0..n {
                        for (p, q, r) in [(kk, j, m), (j, m, kk), (m, kk, j)] {
                            prop_assert!((b.at(i, j, kk, m) - b.at(i, p, q, r)).abs() <= 1e-12 * bs);
                        }
                    }
                    prop_assert!((l.at(i, j, kk) - l.at(j, i, kk)).abs() <= 1e-12 * ls);
                    prop_assert!((l.at(i, j, kk) - l.at(kk, j, i)).abs() <= 1e-12 * ls);
                }
            }
        }
        // contraction with y: L_jkl y^j = 0, R^i_j y^j = 0, B^i_jkl y^l = 0
        let rs = max_abs(&rt.tensor).max(f.u * f.u);
        for j in 0..n {
            let ry: f64 = (0..n).map(|m| rt.at(j, m) * f.y[m]).sum();
            prop_assert!(ry.abs() <= 1e-9 * rs * f.u, "R y = {ry}");
            for kk in 0..n {
                let ly: f64 = (0..n).map(|m| l.at(m, j, kk) * f.y[m]).sum();
                prop_assert!(ly.abs() <= 1e-9 * ls * f.u, "L y = {ly}");
                for i in 0..n {
                    let by: f64 = (0..n).map(|m| b.at(i, j, kk, m) * f.y[m]).sum();
                    prop_assert!(by.abs() <= 1e-9 * bs * f.u.max(1.0), "B y = {by}");
                }
            }
        }
        let [d1, d2] = rt.identity_defects(f.s);
        let cs = max_abs(&rt.coeffs).max(1.0);
        prop_assert!(d1.abs() <= 1e-9 * cs && d2.abs() <= 1e-9 * cs);
        prop_assert!((rt.ric - rt.ric_formula).abs() <= 1e-10 * rt.ric.abs().max(f.u * f.u));
        let ld = l.identity_defects(f.s);
        prop_assert!(max_abs(&ld) <= 1e-12 * max_abs(&l.l).max(1.0), "{ld:?}");
    }

    #[test]
    fn berwald_implies_landsberg(k in 0..ENTRIES.len(), seed in any::<u64>()) {
        let e = entry(k);
        let f = frame_of(&e, 3, seed);
        let sp = spray_pq(&e.spec, &f).unwrap();
        let rr = residuals(&sp, &f, None).unwrap();
        if max_abs(&rr.berwald) <= 1e-9 {
            prop_assert!(max_abs(&rr.landsberg) <= 1e-9, "{:?}", rr);
        }
    }

    #[test]
    fn examples_are_flag_independent(k in 5usize..13, n in 2usize..6, seed in any::<u64>()) {
        let e = entry(k);
        let f = frame_of(&e, n, seed);
        let sp = spray_pq(&e.spec, &f).unwrap();
        let m = metric_tensor(&e.spec, &f).unwrap();
        let fc = flag_curvature(&m, &riemann_tensor(&sp, &f).unwrap(), &f, 6, seed).unwrap();
        prop_assert!(fc.spread <= 1e-7, "{}", fc.spread);
    }

    #[test]
    fn q_solves_third_equation(a in -3.0f64..3.0, b in -2.0f64..2.0, c in -1.0f64..1.0, r in 0.5f64..2.0, t in -0.95f64..0.95) {
        let c1 = Expr::parse(&format!("{a:?} + {b:?}*r + {c:?}*r^2"), &["r"]).unwrap();
        let c1r = a + b * r + c * r * r;
        prop_assume!((r - 2.0 * r.powi(3) * c1r).abs() > 0.1);
        let q = q_from_c1(&c1).unwrap().jet_rs(r, t * r, 2).unwrap();
        let [.., e3] = cfc_equations(&Jet::zero(r, t * r, 2), &q, r, t * r).unwrap();
        prop_assert!(e3.abs() <= 1e-9 * max_abs(q.coeffs()).max(1.0).powi(2), "{e3}");
    }

    #[test]
    fn examples_6_2_and_6_5_are_not_projective(k in prop::sample::select(vec![7usize, 8, 11, 12]), seed in any::<u64>()) {
        let e = entry(k);
        let f = frame_of(&e, 3, seed);
        let q = spray_pq(&e.spec, &f).unwrap().q;
        let (r, s) = (f.r, f.s);
        let want = if ENTRIES[k].0 == "example_6_2" {
            -(r * r - s * s) / r.powi(3)
        } else {
            -2.0 + 8.0 * s * s / (1.0 + 4.0 * r * r)
        };
        prop_assert!(want.abs() > 1e-6);
        prop_assert!(rel(q, want) <= 1e-10, "{q} vs {want}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sampled_frames_are_admissible(k in 0..ENTRIES.len(), n in 2usize..6, seed in any::<u64>()) {
        let e = entry(k);
        let region = Region::for_spec(&e.spec);
        for f in sample_frames(&e.spec, n, 5, seed, &region).unwrap() {
            prop_assert!(e.contains(&f));
            prop_assert!(f.s.abs() < f.r);
        }
    }

    #[test]
    fn reports_are_reproducible(seed in any::<u64>(), count in 1usize..4) {
        let p: Params = serde_json::from_value(json!({"branch": "-"})).unwrap();
        let spec = catalog_get("example_6_5", &p).unwrap().spec;
        let a = classify(&spec, 3, count, seed, Tolerances::default()).unwrap();
        let b = classify(&spec, 3, count, seed, Tolerances::default()).unwrap();
        prop_assert_eq!(a.to_json_untimed(), b.to_json_untimed());
    }
}
