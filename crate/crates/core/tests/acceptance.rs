//! End-to-end acceptance run. Prints one line per criterion and exits
//! nonzero if any criterion fails that is not listed in `KNOWN_FAILURES`.

use std::process::ExitCode;
use std::time::Instant;

use serde_json::json;
use ssfinsler::catalog::{catalog_branch, catalog_get, CatalogEntry};
use ssfinsler::construct::{run_pipeline, ConstructConfig, GFree};
use ssfinsler::curvature::{berwald_tensor, flag_curvature, landsberg_tensor, residuals, riemann_tensor};
use ssfinsler::metric::{finsler_norm, metric_tensor, spray_pq};
use ssfinsler::oracle::{compare_frame, FdConfig};
use ssfinsler::sample::{sample_frames, Region};
use ssfinsler::spec::Params;
use ssfinsler::{Error, MetricSpec, RadialFrame, Result};

const FLAGS: usize = 8;

/// Criteria whose stated target does not hold for the stated formula.
/// They are still run and printed as FAIL; the reason is printed with them.
const KNOWN_FAILURES: [(&str, &str); 1] = [(
    "9b",
    "c0 = exp(4r^2) is inconsistent with the example's P, Q; the consistent c0 is 1 + 4r^2, so (ln c0)' = 8r/(1+4r^2)",
)];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn entry(id: &str, params: serde_json::Value) -> Result<CatalogEntry> {
    let p: Params = serde_json::from_value(params)?;
    catalog_get(id, &p)
}

fn frames(spec: &MetricSpec, n: usize, count: usize, seed: u64) -> Result<Vec<RadialFrame>> {
    sample_frames(spec, n, count, seed, &Region::for_spec(spec))
}

/// Every catalog metric, each branch separately.
fn all_entries() -> Result<Vec<CatalogEntry>> {
    let mut out = vec![
        entry("euclidean", json!({}))?,
        entry("riemannian_quadratic", json!({}))?,
        entry("berwald_family", json!({}))?,
    ];
    for id in ["unicorn_candidate", "example_6_1", "example_6_2", "example_6_4", "example_6_5"] {
        for sigma in [1.0, -1.0] {
            out.push(catalog_branch(id, sigma)?);
        }
    }
    Ok(out)
}

fn label(e: &CatalogEntry) -> String {
    match e.spec.to_json()["params"].get("branch").and_then(|b| b.as_str()) {
        Some(b) => format!("{}:{b}", e.id),
        None => e.id.clone(),
    }
}

/// Worst `|K − k|` over all flags and the worst per-frame spread.
fn constant_k(id: &str, k: f64) -> Result<(f64, f64, usize)> {
    let (mut dev, mut spread, mut count) = (0.0f64, 0.0f64, 0);
    for sigma in [1.0, -1.0] {
        let e = catalog_branch(id, sigma)?;
        for n in [3, 4] {
            for (i, f) in frames(&e.spec, n, 50, 11 + n as u64)?.iter().enumerate() {
                let sp = spray_pq(&e.spec, f)?;
                let m = metric_tensor(&e.spec, f)?;
                let fc = flag_curvature(&m, &riemann_tensor(&sp, f)?, f, FLAGS, i as u64)?;
                for kv in &fc.per_flag {
                    dev = dev.max((kv - k).abs());
                }
                spread = spread.max(fc.spread);
                count += 1;
            }
        }
    }
    Ok((dev, spread, count))
}

fn c1() -> Result<Outcome> {
    let (dev, spread, count) = constant_k("example_6_2", -1.0)?;
    outcome(dev <= 1e-7 && spread <= 1e-7, format!("{count} frames, max |K+1| = {dev:.2e}, max spread = {spread:.2e}"))
}

fn c2() -> Result<Outcome> {
    let (dev, spread, count) = constant_k("example_6_5", -1.0)?;
    outcome(dev <= 1e-7 && spread <= 1e-7, format!("{count} frames, max |K+1| = {dev:.2e}, max spread = {spread:.2e}"))
}

fn c3() -> Result<Outcome> {
    let (mut k_max, mut r_max, mut count) = (0.0f64, 0.0f64, 0);
    for id in ["example_6_1", "example_6_4"] {
        for sigma in [1.0, -1.0] {
            let e = catalog_branch(id, sigma)?;
            for (i, f) in frames(&e.spec, 3, 50, 5)?.iter().enumerate() {
                let sp = spray_pq(&e.spec, f)?;
                let m = metric_tensor(&e.spec, f)?;
                let rt = riemann_tensor(&sp, f)?;
                let fc = flag_curvature(&m, &rt, f, FLAGS, i as u64)?;
                k_max = fc.per_flag.iter().fold(k_max, |a, k| a.max(k.abs()));
                let phi = sp.phi_jet.value();
                let scale = f.u * f.u * 1f64.max(phi * phi);
                r_max = r_max.max(rt.tensor.iter().fold(0.0f64, |a, v| a.max(v.abs())) / scale);
                count += 1;
            }
        }
    }
    outcome(
        k_max <= 1e-7 && r_max <= 1e-7,
        format!("{count} frames, max |K| = {k_max:.2e}, max |R|/(u² max(1,φ²)) = {r_max:.2e}"),
    )
}

fn c4() -> Result<Outcome> {
    let choices = [
        ("(1 + t^2)^(1/4)/sqrt(t)", 0.0),
        ("(1 + t^2)^(1/4)/sqrt(t)", 0.5),
        ("(1 + 2*t^2)^(1/4)/sqrt(t)", 1.0),
    ];
    let (mut res, mut gap, mut count) = (0.0f64, 0.0f64, 0);
    for (psi, c2) in choices {
        let e = entry("berwald_family", json!({"psi": psi, "c2": c2}))?;
        for f in frames(&e.spec, 3, 20, 2)? {
            let sp = spray_pq(&e.spec, &f)?;
            res = res.max(berwald_tensor(&sp, &f)?.max_residual());
            let (r, s) = (f.r, f.s);
            let p = -s / (r * r);
            let q = 0.5 * c2 * s * s + 1.0 / (2.0 * r * r);
            gap = gap.max(((sp.p - p) / p).abs()).max(((sp.q - q) / q).abs());
            count += 1;
        }
    }
    outcome(
        res <= 1e-9 && gap <= 1e-9,
        format!("3 choices, {count} frames, max Berwald residual = {res:.2e}, spray relative gap = {gap:.2e}"),
    )
}

fn c5() -> Result<Outcome> {
    let mut worst_l = 0.0f64;
    let mut least_b = f64::INFINITY;
    for c2 in [1.0, 0.5, 2.0] {
        for branch in ["+", "-"] {
            let e = entry("unicorn_candidate", json!({"c1": 0, "c2": c2, "c3": 0, "branch": branch}))?;
            let mut b = 0.0f64;
            for f in frames(&e.spec, 3, 20, 4)? {
                let sp = spray_pq(&e.spec, &f)?;
                let rr = residuals(&sp, &f, None)?;
                worst_l = rr.landsberg.iter().fold(worst_l, |a, v| a.max(v.abs()));
                b = rr.berwald.iter().fold(b, |a, v| a.max(v.abs()));
            }
            least_b = least_b.min(b);
        }
    }
    outcome(
        worst_l <= 1e-7 && least_b >= 1e-2,
        format!("3 triples x 2 branches, max Landsberg residual = {worst_l:.2e}, smallest max Berwald residual = {least_b:.2e}"),
    )
}

fn c6() -> Result<Outcome> {
    let mut worst = [0.0f64; 4];
    let mut count = 0;
    for e in all_entries()? {
        for (n, k) in [(3, 20), (4, 10)] {
            for f in frames(&e.spec, n, k, 6)? {
                let sp = spray_pq(&e.spec, &f)?;
                let rt = riemann_tensor(&sp, &f)?;
                let rs = rt.coeffs.iter().fold(1f64, |a, v| a.max(v.abs()));
                let d = rt.identity_defects(f.s).iter().fold(0.0f64, |a, v| a.max(v.abs()));
                worst[0] = worst[0].max(d / rs);
                let lt = landsberg_tensor(&sp, &f)?;
                let ls = lt.l.iter().fold(1f64, |a, v| a.max(v.abs()));
                let d = lt.identity_defects(f.s).iter().fold(0.0f64, |a, v| a.max(v.abs()));
                worst[1] = worst[1].max(d / ls);
                worst[2] = worst[2].max((rt.ric - rt.ric_formula).abs() / 1f64.max(rt.ric.abs()));
                let m = metric_tensor(&e.spec, &f)?;
                let f2 = finsler_norm(&e.spec, &f)?.powi(2);
                worst[3] = worst[3].max((m.inner(&f.y, &f.y) - f2).abs() / f2);
                count += 1;
            }
        }
    }
    let m = worst.iter().fold(0.0f64, |a, v| a.max(*v));
    outcome(
        m <= 1e-9,
        format!(
            "{count} frames, Riemann {:.2e}, Landsberg {:.2e}, Ricci {:.2e}, g(y,y) = F² {:.2e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn c7() -> Result<Outcome> {
    let cfg = FdConfig::default();
    let mut lines = Vec::new();
    let mut pass = true;
    for e in all_entries()? {
        let mut worst = [0.0f64; 3];
        let mut done = 0;
        for f in frames(&e.spec, 3, 20, 0)? {
            match compare_frame(&e.spec, &f, &cfg) {
                Ok(c) => {
                    worst[0] = worst[0].max(c.spray);
                    worst[1] = worst[1].max(c.riemann);
                    worst[2] = worst[2].max(c.berwald);
                    done += 1;
                }
                Err(Error::Boundary { .. }) => continue,
                Err(err) => return Err(err),
            }
            if done == 10 {
                break;
            }
        }
        let ok = done == 10 && worst[0] <= 1e-5 && worst[1] <= 1e-4 && worst[2] <= 1e-3;
        pass &= ok;
        lines.push(format!(
            "{}: {done} frames, spray {:.1e}, riemann {:.1e}, berwald {:.1e}{}",
            label(&e),
            worst[0],
            worst[1],
            worst[2],
            if ok { "" } else { " FAIL" }
        ));
    }
    outcome(pass, lines.join("; "))
}

fn construct_configs() -> [(&'static str, &'static str, &'static str, f64); 4] {
    [
        ("example_6_1", "-1/r", "-2/(r+4*r^2)", 2.0),
        ("example_6_2", "-1/r", "-2*(3*r+1)/(r*(2*r+1)*(4*r+1))", 1.0),
        ("example_6_4", "-2", "0", 2.0),
        ("example_6_5", "-2", "-2/(1+4*r^2)", 1.0),
    ]
}

fn c8() -> Result<Outcome> {
    let (mut phi_gap, mut spray_gap) = (0.0f64, 0.0f64);
    let mut pass = true;
    for (id, c1, g, c) in construct_configs() {
        for sigma in [1.0, -1.0] {
            let cfg = ConstructConfig::new(c1, GFree::Expr(g.into()), c, sigma);
            let (st, rep) = run_pipeline(&cfg)?;
            let cat = catalog_branch(id, sigma)?;
            let Some(rec) = st.recovered.as_ref() else {
                pass = false;
                continue;
            };
            let ratios = cfg
                .grid
                .points()
                .iter()
                .map(|&(r, s)| Ok(rec.phi_value(r, s)? / cat.spec.phi_value(r, s)?))
                .collect::<Result<Vec<f64>>>()?;
            let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            phi_gap = phi_gap.max((hi - lo) / hi.abs());
            match &rep.classification {
                Some(cl) => spray_gap = spray_gap.max(cl.spray_gap),
                None => pass = false,
            }
            pass &= rep.passed() && ratios.len() == 100;
        }
    }
    outcome(
        pass && phi_gap <= 1e-7 && spray_gap <= 1e-7,
        format!("8 runs on a 10x10 grid, φ ratio spread = {phi_gap:.2e}, spray consistency gap = {spray_gap:.2e}"),
    )
}

fn dln_c0_gap(id: &str, want: impl Fn(f64) -> f64) -> Result<f64> {
    let (_, c1, g, c) = construct_configs().into_iter().find(|t| t.0 == id).unwrap();
    let mut worst = 0.0f64;
    for sigma in [1.0, -1.0] {
        let (st, _) = run_pipeline(&ConstructConfig::new(c1, GFree::Expr(g.into()), c, sigma))?;
        for k in 0..20 {
            let r = 0.5 + 1.5 * k as f64 / 19.0;
            worst = worst.max((st.dln_c0(r)? - want(r)).abs());
        }
    }
    Ok(worst)
}

fn c9a() -> Result<Outcome> {
    let a = dln_c0_gap("example_6_1", |r| 2.0 * (2.0 * r - 1.0) / ((2.0 * r + 1.0) * (4.0 * r + 1.0)))?;
    let b = dln_c0_gap("example_6_4", |r| 8.0 * r / (1.0 + 4.0 * r * r))?;
    outcome(
        a <= 1e-9 && b <= 1e-9,
        format!("20 radii, both branches: 6.1 gap = {a:.2e}; 6.4 against 8r/(1+4r²) gap = {b:.2e}"),
    )
}

fn c9b() -> Result<Outcome> {
    let gap = dln_c0_gap("example_6_4", |r| 8.0 * r)?;
    outcome(gap <= 1e-9, format!("6.4 against 8r: gap = {gap:.2e}"))
}

fn phi2_6_2(sigma: f64, first: f64) -> Result<MetricSpec> {
    let a = "sqrt(r*(r + 4*r^2 - 4*s^2))";
    let phi2 = format!(
        "{first:?}/(4*r + 1) + sigma*4*{a}*s/(r*(2*r + 1)*(4*r + 1)^2) - 4*(4*r^2 + 3*r + 1)*s^2/(r*(2*r + 1)^2*(4*r + 1)^2)"
    );
    MetricSpec::closed_form(&format!("sqrt({phi2})"), sigma)
}

fn c10() -> Result<Outcome> {
    let (_, rep) = run_pipeline(&ConstructConfig::new("-1/r", GFree::Auto, 1.3, 1.0))?;
    let defect = rep
        .checks
        .iter()
        .find(|c| c.stage == "integrability")
        .map_or(0.0, |c| c.max_residual);

    let mut min_dev = f64::INFINITY;
    let mut base_dev = 0.0f64;
    for sigma in [1.0, -1.0] {
        for (coef, dev) in [(1.0, &mut base_dev), (1.01, &mut min_dev)] {
            let spec = phi2_6_2(sigma, coef)?;
            let mut worst = 0.0f64;
            for (i, f) in frames(&spec, 3, 20, 9)?.iter().enumerate() {
                let sp = spray_pq(&spec, f)?;
                let m = metric_tensor(&spec, f)?;
                let fc = flag_curvature(&m, &riemann_tensor(&sp, f)?, f, FLAGS, i as u64)?;
                worst = fc.per_flag.iter().fold(worst, |a, k| a.max((k + 1.0).abs()));
            }
            *dev = if coef == 1.0 { dev.max(worst) } else { dev.min(worst) };
        }
    }
    outcome(
        defect > 1e-3 && min_dev > 1e-3 && base_dev <= 1e-7,
        format!(
            "c = 1.3 integrability defect = {defect:.2e}; 6.2 with 1.01× first φ² term: max |K+1| = {min_dev:.2e} (unperturbed {base_dev:.2e})"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, fn() -> Result<Outcome>); 11] = [
        ("1", "example 6.2 has K = -1", c1),
        ("2", "example 6.5 has K = -1", c2),
        ("3", "examples 6.1 and 6.4 are flat", c3),
        ("4", "Berwald family spray and residuals", c4),
        ("5", "unicorn candidate is Landsberg, not Berwald", c5),
        ("6", "structural identities", c6),
        ("7", "finite-difference oracle agreement", c7),
        ("8", "construction reproduces the examples", c8),
        ("9a", "(ln c0)' for 6.1 and 6.4", c9a),
        ("9b", "(ln c0)' for 6.4 equals 8r", c9b),
        ("10", "negative controls are detected", c10),
    ];
    let mut unexpected = 0;
    for (id, name, run) in criteria {
        let t = Instant::now();
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let known = KNOWN_FAILURES.iter().find(|(k, _)| *k == id);
        let mut line = format!(
            "criterion {id} {}: {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        match (pass, known) {
            (false, Some((_, why))) => line.push_str(&format!(" (known: {why})")),
            (false, None) => unexpected += 1,
            (true, Some(_)) => {
                line.push_str(" (listed as a known failure but passed)");
                unexpected += 1;
            }
            (true, None) => {}
        }
        println!("{line}");
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{unexpected} unexpected acceptance result(s)");
        ExitCode::FAILURE
    }
}
