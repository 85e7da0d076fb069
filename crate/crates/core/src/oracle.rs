//! Finite-difference ground truth.
//!
//! Everything here works from `F(x, y)` in ambient coordinates and the
//! coordinate definitions of `G^i`, `B^i_jkl` and `R^i_j`. Nothing from the
//! reduced `(r, s)` formulas is used except `φ` itself.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::curvature::{berwald_tensor, riemann_tensor};
use crate::error::{Error, Result};
use crate::frame::{dot, norm, RadialFrame};
use crate::metric::spray_pq;
use crate::spec::MetricSpec;
use crate::tol::{max_abs, rel_max_diff};

/// Step control for the nested central differences.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FdConfig {
    /// Step for derivatives of `F²`, scaled by `max(1, |x|)` or `max(1, |y|)`.
    pub h: f64,
    /// Richardson levels for the derivatives of `F²`.
    pub levels: usize,
    /// Richardson levels for the outer derivatives of `G`.
    pub outer_levels: usize,
    /// Outer step multipliers: `[riemann, berwald]`.
    pub order_scale: [f64; 2],
    /// Below this the frame is reported as boundary-skipped.
    pub h_min: f64,
    /// Largest allowed condition number of the `y`-Hessian.
    pub max_condition: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            h: 1e-2,
            levels: 2,
            outer_levels: 1,
            order_scale: [3.0, 5.0],
            h_min: 1e-7,
            max_condition: 1e10,
        }
    }
}

impl FdConfig {
    fn validate(&self) -> Result<()> {
        if !(self.h > 0.0 && self.h_min > 0.0) || self.order_scale.iter().any(|c| !(*c > 0.0)) {
            return Err(Error::InvalidParams("finite-difference steps must be positive".into()));
        }
        Ok(())
    }
}

/// `F = |y| φ(|x|, <x,y>/|y|)`, evaluated without clamping.
pub fn ambient_f(spec: &MetricSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!("x has {} entries, y has {}", x.len(), y.len())));
    }
    let (r, u) = (norm(x), norm(y));
    if r == 0.0 || u == 0.0 {
        return Err(Error::ZeroVector);
    }
    let s = dot(x, y) / u;
    if !(s.abs() < r) {
        return Err(Error::domain("F", format!("|s| = {:e} is not below r = {r:e}", s.abs())));
    }
    let phi = spec.phi_value(r, s)?;
    if !(phi > 0.0) {
        return Err(Error::domain("F", format!("φ = {phi:e} is not positive")));
    }
    Ok(u * phi)
}

/// A direction in `z = (x, y)` space with its own step.
#[derive(Clone)]
struct Dir {
    v: Vec<f64>,
    h: f64,
}

fn axis(dim: usize, k: usize, h: f64) -> Dir {
    let mut v = vec![0.0; dim];
    v[k] = 1.0;
    Dir { v, h }
}

/// Tensor-product central difference: the mixed directional derivative
/// `D_{d1} ... D_{dm} f` with error `O(h²)`.
fn central<F>(f: &F, z: &[f64], dirs: &[Dir], scale: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let m = dirs.len();
    let mut acc: Option<Vec<f64>> = None;
    let mut zp = z.to_vec();
    for mask in 0..(1u32 << m) {
        zp.copy_from_slice(z);
        let mut sign = 1.0;
        for (i, d) in dirs.iter().enumerate() {
            let t = if mask >> i & 1 == 1 {
                sign = -sign;
                -d.h * scale
            } else {
                d.h * scale
            };
            for (a, b) in zp.iter_mut().zip(&d.v) {
                *a += t * b;
            }
        }
        let val = f(&zp)?;
        match acc.as_mut() {
            None => acc = Some(val.iter().map(|v| sign * v).collect()),
            Some(a) => a.iter_mut().zip(&val).for_each(|(a, v)| *a += sign * v),
        }
    }
    let denom: f64 = dirs.iter().map(|d| 2.0 * d.h * scale).product();
    Ok(acc.unwrap_or_default().into_iter().map(|v| v / denom).collect())
}

/// [`central`] with `levels` rounds of Richardson extrapolation in `h²`.
fn derivative<F>(f: &F, z: &[f64], dirs: &[Dir], levels: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut row = vec![central(f, z, dirs, 1.0)?];
    for k in 1..=levels {
        let mut next = vec![central(f, z, dirs, 0.5f64.powi(k as i32))?];
        let mut factor = 1.0;
        for j in 1..=k {
            factor *= 4.0;
            let (fine, coarse) = (&next[j - 1], &row[j - 1]);
            let v = fine.iter().zip(coarse).map(|(a, b)| a + (a - b) / (factor - 1.0)).collect();
            next.push(v);
        }
        row = next;
    }
    Ok(row.pop().unwrap_or_default())
}

/// Steps for the derivatives of `F²`, frozen at the base point so that
/// nested differences see a smooth function.
#[derive(Clone, Copy, Debug)]
struct InnerSteps {
    hx: f64,
    hy: f64,
}

fn split(z: &[f64]) -> (&[f64], &[f64]) {
    z.split_at(z.len() / 2)
}

/// `G^i` at `z = (x, y)` from `F²` alone.
fn spray_at(spec: &MetricSpec, z: &[f64], st: InnerSteps, cfg: &FdConfig) -> Result<Vec<f64>> {
    let dim = z.len();
    let n = dim / 2;
    let f2 = |w: &[f64]| -> Result<Vec<f64>> {
        let (x, y) = split(w);
        let f = ambient_f(spec, x, y)?;
        Ok(vec![f * f])
    };
    let (_, y) = split(z);
    let u = norm(y);

    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let d = derivative(&f2, z, &[axis(dim, n + i, st.hy), axis(dim, n + j, st.hy)], cfg.levels)?[0];
            g[(i, j)] = 0.5 * d;
            g[(j, i)] = 0.5 * d;
        }
    }
    // y^k ∂_{x^k}: a derivative along (y, 0) with an x-step of size hx
    let mut along_y = vec![0.0; dim];
    along_y[..n].copy_from_slice(y);
    let along_y = Dir { v: along_y, h: st.hx / u };
    let mut rhs = nalgebra::DVector::zeros(n);
    for l in 0..n {
        let mixed = derivative(&f2, z, &[along_y.clone(), axis(dim, n + l, st.hy)], cfg.levels)?[0];
        let gx = derivative(&f2, z, &[axis(dim, l, st.hx)], cfg.levels)?[0];
        rhs[l] = 0.25 * (mixed - gx);
    }

    let eig = SymmetricEigen::new(g.clone());
    let lo = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let hi = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(lo > 0.0 && hi / lo <= cfg.max_condition) {
        return Err(Error::Degenerate(format!(
            "finite-difference y-Hessian has condition number {:e}",
            hi / lo
        )));
    }
    let sol = g
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Degenerate("singular finite-difference y-Hessian".into()))?;
    Ok(sol.iter().copied().collect())
}

fn inner_steps(cfg: &FdConfig, x: &[f64], y: &[f64], scale: f64) -> InnerSteps {
    InnerSteps {
        hx: cfg.h * scale * norm(x).max(1.0),
        hy: cfg.h * scale * norm(y).max(1.0),
    }
}

/// Angular extent of the `G` stencil plus `outer` further `y`-steps of
/// relative size `mult · h` and one `x`-step of the same size.
fn reach(cfg: &FdConfig, x: &[f64], y: &[f64], outer: f64, mult: f64) -> f64 {
    let (r, u) = (norm(x), norm(y));
    let st = inner_steps(cfg, x, y, 1.0);
    let outer_y = outer * mult * cfg.h * u.max(1.0) / u;
    let outer_x = if outer > 0.0 { mult * cfg.h * r.max(1.0) / r } else { 0.0 };
    st.hx / r + 2.0 * st.hy / u + outer_y + outer_x
}

/// Angle between the lines through `x` and `y`: the distance to the
/// singular set `y ∥ x` that stencils must respect.
fn cone_angle(x: &[f64], y: &[f64]) -> f64 {
    let mut wedge = 0.0;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            wedge += (x[i] * y[j] - x[j] * y[i]).powi(2);
        }
    }
    wedge.sqrt().atan2(dot(x, y).abs())
}

/// Outer step factor for an `m`-th derivative of `G`. Truncation grows like
/// `(h / θ)^4` near the cone and round-off like `h^-m`; balancing the two
/// gives `h ∝ θ^(4 / (4 + m))`.
fn balance(x: &[f64], y: &[f64], m: f64) -> f64 {
    const THETA_REF: f64 = 1.2;
    (cone_angle(x, y) / THETA_REF).powf(4.0 / (4.0 + m)).min(1.0)
}

/// Run `body` with a step scale small enough that the stencil stays well
/// inside the cone, halving further while stencil points are inadmissible.
///
/// `reach` is the stencil's angular extent at scale 1.
fn shrink<T>(cfg: &FdConfig, x: &[f64], y: &[f64], reach: f64, mut body: impl FnMut(f64) -> Result<T>) -> Result<T> {
    cfg.validate()?;
    RadialFrame::new(x, y)?;
    let mut scale = (0.25 * cone_angle(x, y) / reach).min(1.0);
    if cfg.h * scale < cfg.h_min {
        return Err(Error::Boundary { h_min: cfg.h_min });
    }
    loop {
        match body(scale) {
            Err(e) if e.is_domain() => {
                scale *= 0.5;
                if cfg.h * scale < cfg.h_min {
                    return Err(Error::Boundary { h_min: cfg.h_min });
                }
            }
            other => return other,
        }
    }
}

fn join(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().chain(y).copied().collect()
}

/// `G^i = ¼ g^{il} ((F²)_{x^k y^l} y^k − (F²)_{x^l})` by central differences.
pub fn fd_spray(spec: &MetricSpec, x: &[f64], y: &[f64], cfg: &FdConfig) -> Result<Vec<f64>> {
    ambient_f(spec, x, y)?;
    let reach = reach(cfg, x, y, 0.0, 0.0);
    shrink(cfg, x, y, reach, |scale| spray_at(spec, &join(x, y), inner_steps(cfg, x, y, scale), cfg))
}

/// `B^i_jkl`, flattened as `((i n + j) n + k) n + l`.
pub fn fd_berwald(spec: &MetricSpec, x: &[f64], y: &[f64], cfg: &FdConfig) -> Result<Vec<f64>> {
    ambient_f(spec, x, y)?;
    let n = x.len();
    let z = join(x, y);
    let mult = cfg.order_scale[1] * balance(x, y, 3.0);
    let reach = reach(cfg, x, y, 3.0, mult);
    shrink(cfg, x, y, reach, |scale| {
        let st = inner_steps(cfg, x, y, scale);
        let g = |w: &[f64]| spray_at(spec, w, st, cfg);
        let hb = mult * cfg.h * scale * norm(y).max(1.0);
        let mut out = vec![0.0; n * n * n * n];
        for j in 0..n {
            for k in j..n {
                for l in k..n {
                    let dirs = [axis(2 * n, n + j, hb), axis(2 * n, n + k, hb), axis(2 * n, n + l, hb)];
                    let d = derivative(&g, &z, &dirs, cfg.outer_levels)?;
                    for (i, v) in d.iter().enumerate() {
                        for (a, b, c) in [(j, k, l), (j, l, k), (k, j, l), (k, l, j), (l, j, k), (l, k, j)] {
                            out[((i * n + a) * n + b) * n + c] = *v;
                        }
                    }
                }
            }
        }
        Ok(out)
    })
}

/// `R^i_j = 2 G^i_{x^j} − y^k G^i_{x^k y^j} + 2 G^k G^i_{y^k y^j} − G^i_{y^k} G^k_{y^j}`,
/// flattened as `i n + j`.
pub fn fd_riemann(spec: &MetricSpec, x: &[f64], y: &[f64], cfg: &FdConfig) -> Result<Vec<f64>> {
    ambient_f(spec, x, y)?;
    let n = x.len();
    let dim = 2 * n;
    let z = join(x, y);
    let u = norm(y);
    let mult = cfg.order_scale[0] * balance(x, y, 2.0);
    let reach = reach(cfg, x, y, 2.0, mult);
    shrink(cfg, x, y, reach, |scale| {
        let st = inner_steps(cfg, x, y, scale);
        let g = |w: &[f64]| spray_at(spec, w, st, cfg);
        let hrx = mult * cfg.h * scale * norm(x).max(1.0);
        let hry = mult * cfg.h * scale * u.max(1.0);
        let lv = cfg.outer_levels;

        let g0 = g(&z)?;
        let mut along_y = vec![0.0; dim];
        along_y[..n].copy_from_slice(y);
        let along_y = Dir { v: along_y, h: hrx / u };
        let mut gx = Vec::with_capacity(n);
        let mut gy = Vec::with_capacity(n);
        let mut gxy = Vec::with_capacity(n);
        for j in 0..n {
            gx.push(derivative(&g, &z, &[axis(dim, j, hrx)], lv)?);
            gy.push(derivative(&g, &z, &[axis(dim, n + j, hry)], lv)?);
            gxy.push(derivative(&g, &z, &[along_y.clone(), axis(dim, n + j, hry)], lv)?);
        }
        let mut gyy = vec![Vec::new(); n * n];
        for j in 0..n {
            for k in j..n {
                let d = derivative(&g, &z, &[axis(dim, n + j, hry), axis(dim, n + k, hry)], lv)?;
                gyy[k * n + j] = d.clone();
                gyy[j * n + k] = d;
            }
        }
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut v = 2.0 * gx[j][i] - gxy[j][i];
                for k in 0..n {
                    v += 2.0 * g0[k] * gyy[k * n + j][i] - gy[k][i] * gy[j][k];
                }
                out[i * n + j] = v;
            }
        }
        Ok(out)
    })
}

/// Closed-form versus finite-difference gaps at one frame.
#[derive(Clone, Debug, Serialize)]
pub struct OracleComparison {
    pub spray: f64,
    pub riemann: f64,
    pub berwald: f64,
}

/// Worst-entry gap relative to the dominant entry, with a floor for tensors
/// that vanish.
pub fn scaled_gap(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let top = max_abs(a).max(max_abs(b));
    if top >= floor {
        rel_max_diff(a, b)
    } else {
        rel_max_diff(a, b) * top / floor
    }
}

/// Compare the jet pipeline with the oracle at `frame`.
///
/// Floors: `u²` for the spray and for `R^i_j`, `1/u` for `B^i_jkl`.
pub fn compare_frame(spec: &MetricSpec, frame: &RadialFrame, cfg: &FdConfig) -> Result<OracleComparison> {
    let (x, y, u) = (&frame.x, &frame.y, frame.u);
    let spray = spray_pq(spec, frame)?;
    let riemann = riemann_tensor(&spray, frame)?;
    let berwald = berwald_tensor(&spray, frame)?;
    let (fs, (fr, fb)) = rayon::join(
        || fd_spray(spec, x, y, cfg),
        || rayon::join(|| fd_riemann(spec, x, y, cfg), || fd_berwald(spec, x, y, cfg)),
    );
    let (fr, fb) = (fr?, fb?);
    Ok(OracleComparison {
        spray: scaled_gap(&spray.g, &fs?, u * u),
        riemann: scaled_gap(&riemann.tensor, &fr, u * u),
        berwald: scaled_gap(&berwald.b, &fb, 1.0 / u),
    })
}

/// [`compare_frame`] over many frames in parallel, results in input order.
pub fn compare_frames(spec: &MetricSpec, frames: &[RadialFrame], cfg: &FdConfig) -> Vec<Result<OracleComparison>> {
    frames.par_iter().map(|f| compare_frame(spec, f, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::catalog_get;
    use crate::spec::Params;
    use serde_json::json;

    fn cat(id: &str, params: serde_json::Value) -> MetricSpec {
        let p: Params = serde_json::from_value(params).unwrap();
        catalog_get(id, &p).unwrap().spec
    }

    #[test]
    fn ambient_values() {
        let e = cat("euclidean", json!({}));
        assert_eq!(ambient_f(&e, &[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0]).unwrap(), 2.0);
        let m = cat("example_6_2", json!({"branch": "+"}));
        let f = ambient_f(&m, &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert!((f - 1.0 / 5f64.sqrt()).abs() < 1e-14);
        assert!(ambient_f(&m, &[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn rotation_invariance() {
        let m = cat("example_6_5", json!({"branch": "-"}));
        let (x, y) = ([0.3, -0.8, 0.4], [0.5, 0.2, 0.9]);
        let (c, s) = (0.6f64, 0.8f64);
        let rot = |v: &[f64; 3]| [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]];
        let a = ambient_f(&m, &x, &y).unwrap();
        let b = ambient_f(&m, &rot(&x), &rot(&y)).unwrap();
        assert!((a - b).abs() <= 1e-15 * a.abs());
    }

    #[test]
    fn euclidean_is_flat() {
        let e = cat("euclidean", json!({}));
        let cfg = FdConfig::default();
        let (x, y) = ([0.7, 0.2, -0.1], [0.1, 1.3, 0.4]);
        assert!(max_abs(&fd_spray(&e, &x, &y, &cfg).unwrap()) < 1e-9);
        assert!(max_abs(&fd_riemann(&e, &x, &y, &cfg).unwrap()) < 1e-6);
        assert!(max_abs(&fd_berwald(&e, &x, &y, &cfg).unwrap()) < 1e-4);
    }

    #[test]
    fn berwald_family_spray() {
        let m = cat("berwald_family", json!({"psi": "sqrt(1+t)", "c2": "0.5"}));
        let cfg = FdConfig::default();
        let (x, y) = ([1.1, 0.3, 0.0], [0.4, 0.9, 0.5]);
        let fr = RadialFrame::new(&x, &y).unwrap();
        let (r, u, s) = (fr.r, fr.u, fr.s);
        let p = -s / (r * r);
        let q = 0.5 * 0.5 * s * s + 1.0 / (2.0 * r * r);
        let want: Vec<f64> = (0..3).map(|i| u * p * y[i] + u * u * q * x[i]).collect();
        let got = fd_spray(&m, &x, &y, &cfg).unwrap();
        assert!(rel_max_diff(&want, &got) < 1e-5, "{want:?} vs {got:?}");
        let b = fd_berwald(&m, &x, &y, &cfg).unwrap();
        assert!(max_abs(&b) <= 1e-4 / u, "{}", max_abs(&b));
    }

    #[test]
    fn example_6_2_riemann_matches_constant_curvature() {
        let m = cat("example_6_2", json!({"branch": "+"}));
        let cfg = FdConfig::default();
        let (x, y) = ([0.9, 0.1, 0.2], [0.2, 0.8, -0.3]);
        let fr = RadialFrame::new(&x, &y).unwrap();
        let f = ambient_f(&m, &x, &y).unwrap();
        let n = 3;
        let h = 1e-5;
        let fy: Vec<f64> = (0..n)
            .map(|j| {
                let mut yp = y;
                let mut ym = y;
                yp[j] += h;
                ym[j] -= h;
                (ambient_f(&m, &x, &yp).unwrap() - ambient_f(&m, &x, &ym).unwrap()) / (2.0 * h)
            })
            .collect();
        let mut want = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                want[i * n + j] = -f * f * (delta - y[i] * fy[j] / f);
            }
        }
        let got = fd_riemann(&m, &x, &y, &cfg).unwrap();
        assert!(rel_max_diff(&want, &got) < 1e-4, "{}", rel_max_diff(&want, &got));
        let cmp = compare_frame(&m, &fr, &cfg).unwrap();
        assert!(cmp.spray < 1e-5 && cmp.riemann < 1e-4 && cmp.berwald < 1e-3, "{cmp:?}");
    }

    #[test]
    fn example_6_1_matches_jets() {
        let m = cat("example_6_1", json!({"branch": "-"}));
        let fr = RadialFrame::new(&[1.2, 0.0, 0.3], &[-0.2, 0.7, 0.4]).unwrap();
        let cmp = compare_frame(&m, &fr, &FdConfig::default()).unwrap();
        assert!(cmp.spray < 1e-5 && cmp.riemann < 1e-4 && cmp.berwald < 1e-3, "{cmp:?}");
    }

    #[test]
    fn boundary_is_skipped() {
        let m = cat("example_6_2", json!({"branch": "+"}));
        let x = [1.0, 0.0, 0.0];
        let y = [1.0, 1e-6, 0.0];
        match fd_spray(&m, &x, &y, &FdConfig::default()) {
            Err(Error::Boundary { .. }) => {}
            other => panic!("{other:?}"),
        }
        // close to the cone but far enough for shrunken steps
        let y = [1.0, 1e-3, 0.0];
        let fr = RadialFrame::new(&x, &y).unwrap();
        let got = fd_spray(&m, &x, &y, &FdConfig::default()).unwrap();
        let want = spray_pq(&m, &fr).unwrap().g;
        assert!(rel_max_diff(&want, &got) < 1e-5, "{want:?} vs {got:?}");
    }

    #[test]
    fn richardson_is_fourth_order() {
        let f = |z: &[f64]| -> Result<Vec<f64>> { Ok(vec![z[0].sin() * z[1].exp()]) };
        let z = [0.4, 0.2];
        let d = derivative(&f, &z, &[axis(2, 0, 0.05), axis(2, 1, 0.05)], 1).unwrap()[0];
        assert!((d - 0.4f64.cos() * 0.2f64.exp()).abs() < 1e-7);
        let d = derivative(&f, &z, &[axis(2, 0, 0.05), axis(2, 0, 0.05), axis(2, 0, 0.05)], 2).unwrap()[0];
        assert!((d + 0.4f64.cos() * 0.2f64.exp()).abs() < 1e-8);
    }
}
