//! Berwald, Landsberg and Riemann curvature from the `P`/`Q` jets.
//!
//! Everything is assembled in the basis `{δ, x, ŷ = y/u}`. Writing
//! `G^i = a y^i + b x^i` with `a = uP` and `b = u²Q`,
//!
//! ```text
//! B^i_jkl = δ^i_j a_kl + δ^i_k a_jl + δ^i_l a_jk + y^i a_jkl + x^i b_jkl
//! ```
//!
//! where subscripts on `a`, `b` are `y`-derivatives.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::frame::RadialFrame;
use crate::metric::{MetricTensorData, SprayData};

/// Coefficients of a symmetric 2-tensor `c_δ δ + c_yy ŷŷ + c_xy (xŷ + ŷx) + c_xx xx`.
#[derive(Clone, Copy, Debug, Default)]
struct Sym2 {
    dd: f64,
    yy: f64,
    xy: f64,
    xx: f64,
}

/// Coefficients of a totally symmetric 3-tensor in the same basis; `Σ` terms
/// are summed over the three distinct placements.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct Sym3 {
    pub yyy: f64,
    pub xyy: f64,
    pub xxy: f64,
    pub xxx: f64,
    pub dy: f64,
    pub dx: f64,
}

impl Sym3 {
    fn entry(&self, x: &[f64], yh: &[f64], j: usize, k: usize, l: usize) -> f64 {
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        self.yyy * yh[j] * yh[k] * yh[l]
            + self.xyy * (x[j] * yh[k] * yh[l] + yh[j] * x[k] * yh[l] + yh[j] * yh[k] * x[l])
            + self.xxy * (x[j] * x[k] * yh[l] + x[j] * yh[k] * x[l] + yh[j] * x[k] * x[l])
            + self.xxx * x[j] * x[k] * x[l]
            + self.dy * (d(j, k) * yh[l] + d(j, l) * yh[k] + d(k, l) * yh[j])
            + self.dx * (d(j, k) * x[l] + d(j, l) * x[k] + d(k, l) * x[j])
    }
}

/// `s`-derivatives `f, f_s, f_ss, f_sss` of a spray coefficient.
fn s_derivs(spray_jet: &crate::jet::Jet) -> [f64; 4] {
    [
        spray_jet.d(0, 0),
        spray_jet.d(0, 1),
        spray_jet.d(0, 2),
        spray_jet.d(0, 3),
    ]
}

/// `u · ∂²(uP)/∂y∂y`
fn second_of_up(p: [f64; 4], s: f64) -> Sym2 {
    let [p0, p1, p2, _] = p;
    Sym2 {
        dd: p0 - s * p1,
        yy: -p0 + s * p1 + s * s * p2,
        xy: -s * p2,
        xx: p2,
    }
}

/// `u² · ∂³(uP)/∂y³`
fn third_of_up(p: [f64; 4], s: f64) -> Sym3 {
    let [p0, p1, p2, p3] = p;
    let s2 = s * s;
    Sym3 {
        yyy: 3.0 * p0 - 3.0 * s * p1 - 6.0 * s2 * p2 - s2 * s * p3,
        xyy: 3.0 * s * p2 + s2 * p3,
        xxy: -p2 - s * p3,
        xxx: p3,
        dy: -p0 + s * p1 + s2 * p2,
        dx: -s * p2,
    }
}

/// `u · ∂³(u²Q)/∂y³`
fn third_of_uuq(q: [f64; 4], s: f64) -> Sym3 {
    let [_, q1, q2, q3] = q;
    let s2 = s * s;
    Sym3 {
        yyy: 3.0 * s * q1 - 3.0 * s2 * q2 - s2 * s * q3,
        xyy: -q1 + s * q2 + s2 * q3,
        xxy: -s * q3,
        xxx: q3,
        dy: -s * q1 + s2 * q2,
        dx: q1 - s * q2,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BerwaldTensor {
    pub n: usize,
    /// `B^i_jkl` at flat index `((i n + j) n + k) n + l`.
    pub b: Vec<f64>,
    /// `(sP_s − P, P_ss, sQ_ss − Q_s, Q_sss)`
    pub raw: [f64; 4],
    /// `raw / max(1, |P|, |Q|)`
    pub residuals: [f64; 4],
}

impl BerwaldTensor {
    pub fn at(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let n = self.n;
        self.b[((i * n + j) * n + k) * n + l]
    }

    pub fn max_abs(&self) -> f64 {
        crate::tol::max_abs(&self.b)
    }

    pub fn max_residual(&self) -> f64 {
        crate::tol::max_abs(&self.residuals)
    }
}

pub fn berwald_tensor(spray: &SprayData, frame: &RadialFrame) -> Result<BerwaldTensor> {
    spray.require(3)?;
    let (n, s, u) = (frame.n, frame.s, frame.u);
    let p = s_derivs(&spray.p_jet);
    let q = s_derivs(&spray.q_jet);
    let a2 = second_of_up(p, s);
    let a3 = third_of_up(p, s);
    let b3 = third_of_uuq(q, s);
    let x = &frame.x;
    let yh = frame.y_hat();
    let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
    let a_kl = |k: usize, l: usize| {
        (a2.dd * d(k, l) + a2.yy * yh[k] * yh[l] + a2.xy * (x[k] * yh[l] + yh[k] * x[l]) + a2.xx * x[k] * x[l]) / u
    };
    let mut b = vec![0.0; n * n * n * n];
    for j in 0..n {
        for k in j..n {
            for l in k..n {
                let a_jkl = a3.entry(x, &yh, j, k, l) / (u * u);
                let b_jkl = b3.entry(x, &yh, j, k, l) / u;
                let (akl, ajl, ajk) = (a_kl(k, l), a_kl(j, l), a_kl(j, k));
                for i in 0..n {
                    let v = d(i, j) * akl + d(i, k) * ajl + d(i, l) * ajk + frame.y[i] * a_jkl + x[i] * b_jkl;
                    for (jj, kk, ll) in permutations(j, k, l) {
                        b[((i * n + jj) * n + kk) * n + ll] = v;
                    }
                }
            }
        }
    }
    let raw = [s * p[1] - p[0], p[2], s * q[2] - q[1], q[3]];
    let scale = 1f64.max(spray.p.abs()).max(spray.q.abs());
    Ok(BerwaldTensor {
        n,
        b,
        raw,
        residuals: raw.map(|v| v / scale),
    })
}

fn permutations(j: usize, k: usize, l: usize) -> [(usize, usize, usize); 6] {
    [(j, k, l), (j, l, k), (k, j, l), (k, l, j), (l, j, k), (l, k, j)]
}

#[derive(Clone, Debug, Serialize)]
pub struct LandsbergData {
    pub n: usize,
    /// `L₁..L₆`, each computed from its own closed form.
    pub l: [f64; 6],
    /// `L_jkl` at flat index `(j n + k) n + l`.
    pub tensor: Vec<f64>,
    /// `(L₁, L₂) / max(1, |φ| |P_ss|)`
    pub residuals: [f64; 2],
}

impl LandsbergData {
    pub fn at(&self, j: usize, k: usize, l: usize) -> f64 {
        self.tensor[(j * self.n + k) * self.n + l]
    }

    /// The four relations `L₃ = −s³L₁ + 3sL₂`, `L₄ = −sL₂`, `L₅ = −sL₁`,
    /// `L₆ = s²L₁ − L₂`, as differences.
    pub fn identity_defects(&self, s: f64) -> [f64; 4] {
        let [l1, l2, l3, l4, l5, l6] = self.l;
        [
            l3 + s * s * s * l1 - 3.0 * s * l2,
            l4 + s * l2,
            l5 + s * l1,
            l6 - s * s * l1 + l2,
        ]
    }

    pub fn max_residual(&self) -> f64 {
        crate::tol::max_abs(&self.residuals)
    }
}

pub fn landsberg_tensor(spray: &SprayData, frame: &RadialFrame) -> Result<LandsbergData> {
    spray.require(3)?;
    let (n, r, s) = (frame.n, frame.r, frame.s);
    let phi = spray.phi_jet.value();
    let phi_s = spray.phi_jet.d(0, 1);
    let p = s_derivs(&spray.p_jet);
    let q = s_derivs(&spray.q_jet);
    let a2 = second_of_up(p, s);
    let c = third_of_up(p, s);
    let dq = third_of_uuq(q, s);
    // F_y = a0 ŷ + b0 x and <F_y, x> = eta
    let a0 = phi - s * phi_s;
    let b0 = phi_s;
    let eta = s * phi + (r * r - s * s) * phi_s;
    let l1 = 3.0 * b0 * a2.xx + phi * c.xxx + eta * dq.xxx;
    let l2 = b0 * a2.dd + phi * c.dx + eta * dq.dx;
    let l3 = 3.0 * a0 * a2.yy + phi * c.yyy + eta * dq.yyy;
    let l4 = a0 * a2.dd + phi * c.dy + eta * dq.dy;
    let l5 = a0 * a2.xx + 2.0 * b0 * a2.xy + phi * c.xxy + eta * dq.xxy;
    let l6 = b0 * a2.yy + 2.0 * a0 * a2.xy + phi * c.xyy + eta * dq.xyy;
    let shape = Sym3 {
        yyy: l3,
        xyy: l6,
        xxy: l5,
        xxx: l1,
        dy: l4,
        dx: l2,
    };
    let yh = frame.y_hat();
    let mut tensor = vec![0.0; n * n * n];
    for j in 0..n {
        for k in 0..n {
            for l in 0..n {
                tensor[(j * n + k) * n + l] = -0.5 * phi * shape.entry(&frame.x, &yh, j, k, l);
            }
        }
    }
    let scale = 1f64.max(phi.abs() * p[2].abs());
    Ok(LandsbergData {
        n,
        l: [l1, l2, l3, l4, l5, l6],
        tensor,
        residuals: [l1 / scale, l2 / scale],
    })
}

/// `(L₁, L₂)` exactly as the characterizing system writes them.
pub fn landsberg_system(spray: &SprayData, frame: &RadialFrame) -> Result<[f64; 2]> {
    spray.require(3)?;
    let (r, s) = (frame.r, frame.s);
    let phi = spray.phi_jet.value();
    let phi_s = spray.phi_jet.d(0, 1);
    let p = s_derivs(&spray.p_jet);
    let q = s_derivs(&spray.q_jet);
    let eta = s * phi + (r * r - s * s) * phi_s;
    Ok([
        3.0 * phi_s * p[2] + phi * p[3] + eta * q[3],
        -s * phi * p[2] + phi_s * (p[0] - s * p[1]) + eta * (q[1] - s * q[2]),
    ])
}

/// Partials of a spray coefficient used by the Riemann formulas.
#[derive(Clone, Copy, Debug)]
struct Partials {
    f: f64,
    r: f64,
    s: f64,
    rs: f64,
    ss: f64,
}

impl Partials {
    fn of(j: &crate::jet::Jet) -> Self {
        Partials {
            f: j.d(0, 0),
            r: j.d(1, 0),
            s: j.d(0, 1),
            rs: j.d(1, 1),
            ss: j.d(0, 2),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RiemannData {
    pub n: usize,
    /// `R₁..R₅`
    pub coeffs: [f64; 5],
    /// `R^i_j` at flat index `i n + j`.
    pub tensor: Vec<f64>,
    /// Trace of `R^i_j`.
    pub ric: f64,
    /// `u²((n−1)R₁ + (r²−s²)R₃)`
    pub ric_formula: f64,
}

impl RiemannData {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.tensor[i * self.n + j]
    }

    /// `R₄ + sR₃` and `R₁ + R₂ + sR₅`.
    pub fn identity_defects(&self, s: f64) -> [f64; 2] {
        let [r1, r2, r3, r4, r5] = self.coeffs;
        [r4 + s * r3, r1 + r2 + s * r5]
    }
}

fn riemann_coeffs(p: Partials, q: Partials, r: f64, s: f64) -> [f64; 5] {
    let w = r * r - s * s;
    let (pp, q0) = (p.f, q.f);
    let r1 = 2.0 * q0 - s / r * p.r - p.s + 2.0 * w * p.s * q0 + pp * pp + 2.0 * s * pp * q0;
    let r2 = p.s - s / r * p.r + s * s / r * p.rs + s * p.ss - 2.0 * q0 + s * q.s
        - 2.0 * s * pp * p.s
        - 4.0 * s * pp * q0
        + 4.0 * s * s * p.s * q0
        - pp * pp
        - 2.0 * s * w * p.ss * q0
        + 3.0 * s * pp * p.s
        + s * s * pp * q.s
        + w * s * p.s * q.s
        - 2.0 * r * r * p.s * q0;
    let r3 = 2.0 / r * q.r - q.ss - s / r * q.rs + 2.0 * w * q0 * q.ss + 4.0 * q0 * q0 - w * q.s * q.s
        - 2.0 * s * q0 * q.s;
    let r4 = -2.0 * s / r * q.r + s * s / r * q.rs + s * q.ss - 2.0 * w * s * q0 * q.ss + w * s * q.s * q.s
        - 4.0 * s * q0 * q0
        + 2.0 * s * s * q0 * q.s;
    let r5 = 2.0 / r * p.r - s / r * p.rs - p.ss - q.s + 2.0 * pp * q0 - 2.0 * s * p.s * q0
        + 2.0 * w * p.ss * q0
        - pp * p.s
        - s * pp * q.s
        - w * p.s * q.s;
    [r1, r2, r3, r4, r5]
}

pub fn riemann_tensor(spray: &SprayData, frame: &RadialFrame) -> Result<RiemannData> {
    spray.require(2)?;
    let (n, r, s, u) = (frame.n, frame.r, frame.s, frame.u);
    let coeffs = riemann_coeffs(Partials::of(&spray.p_jet), Partials::of(&spray.q_jet), r, s);
    let [r1, r2, r3, r4, r5] = coeffs;
    let x = &frame.x;
    let yh = frame.y_hat();
    let mut tensor = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = if i == j { 1.0 } else { 0.0 };
            tensor[i * n + j] = u
                * u
                * (r1 * d + r2 * yh[i] * yh[j] + r3 * x[i] * x[j] + r4 * x[i] * yh[j] + r5 * x[j] * yh[i]);
        }
    }
    let ric = (0..n).map(|i| tensor[i * n + i]).sum();
    let ric_formula = u * u * ((n as f64 - 1.0) * r1 + (r * r - s * s) * r3);
    Ok(RiemannData {
        n,
        coeffs,
        tensor,
        ric,
        ric_formula,
    })
}

/// The three equations of the constant-flag-curvature system; the first
/// without the `Kφ²` term.
pub fn cfc_system(spray: &SprayData, frame: &RadialFrame) -> Result<[f64; 3]> {
    spray.require(2)?;
    cfc_equations(&spray.p_jet, &spray.q_jet, frame.r, frame.s)
}

/// [`cfc_system`] from bare `P`, `Q` jets of degree at least 2 based at `(r, s)`.
pub fn cfc_equations(p_jet: &crate::jet::Jet, q_jet: &crate::jet::Jet, r: f64, s: f64) -> Result<[f64; 3]> {
    for j in [p_jet, q_jet] {
        if j.degree() < 2 {
            return Err(Error::JetDegree { need: 2, have: j.degree() });
        }
    }
    let p = Partials::of(p_jet);
    let q = Partials::of(q_jet);
    let [r1, _, r3, _, _] = riemann_coeffs(p, q, r, s);
    let w = r * r - s * s;
    let e2 = p.r / (2.0 * r) - s / (2.0 * r) * p.rs - 0.5 * p.ss + p.f * q.f - s * p.s * q.f + w * p.ss * q.f;
    Ok([r1, e2, r3])
}

#[derive(Clone, Debug, Serialize)]
pub struct FlagCurvature {
    pub per_flag: Vec<f64>,
    pub mean: f64,
    /// `max − min` over the sampled flags.
    pub spread: f64,
}

/// Flag curvature for `m` random transverse directions, g-orthogonalized against `y`.
pub fn flag_curvature(
    metric: &MetricTensorData,
    riemann: &RiemannData,
    frame: &RadialFrame,
    m: usize,
    seed: u64,
) -> Result<FlagCurvature> {
    if !metric.positive_definite {
        return Err(Error::Degenerate("metric tensor is not positive definite".into()));
    }
    if m < 2 {
        return Err(Error::InvalidParams("need at least two flags".into()));
    }
    let n = frame.n;
    let y = &frame.y;
    let f2 = metric.inner(y, y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_flag = Vec::with_capacity(m);
    let mut attempts = 0;
    while per_flag.len() < m {
        attempts += 1;
        if attempts > 100 * m {
            return Err(Error::Degenerate("could not draw transverse flags".into()));
        }
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = metric.inner(&raw, y) / f2;
        let w: Vec<f64> = raw.iter().zip(y).map(|(a, b)| a - c * b).collect();
        let ww = metric.inner(&w, &w);
        if !(ww > 1e-6 * metric.inner(&raw, &raw)) {
            continue;
        }
        per_flag.push(sectional(metric, riemann, y, &w, f2)?);
    }
    let mean = per_flag.iter().sum::<f64>() / m as f64;
    let (lo, hi) = per_flag
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), k| (a.min(*k), b.max(*k)));
    Ok(FlagCurvature {
        per_flag,
        mean,
        spread: hi - lo,
    })
}

/// `K(P, y) = g(R w, w) / (F² g(w, w) − g(y, w)²)`
pub fn sectional(metric: &MetricTensorData, riemann: &RiemannData, y: &[f64], w: &[f64], f2: f64) -> Result<f64> {
    let n = riemann.n;
    let rw: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|k| riemann.at(i, k) * w[k]).sum())
        .collect();
    let gyw = metric.inner(y, w);
    let den = f2 * metric.inner(w, w) - gyw * gyw;
    if !(den > 1e-14 * f2 * metric.inner(w, w)) {
        return Err(Error::Degenerate("flag direction parallel to y".into()));
    }
    Ok(metric.inner(&rw, w) / den)
}

/// A curvature value as a constant or a function of `r`.
#[derive(Clone, Debug)]
pub enum KFunction {
    Const(f64),
    Radial(Expr),
}

impl KFunction {
    pub fn at(&self, r: f64) -> Result<f64> {
        match self {
            KFunction::Const(k) => Ok(*k),
            KFunction::Radial(e) => e.eval(&[r]),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub berwald: [f64; 4],
    pub landsberg: [f64; 2],
    /// Present when a constant `K` was supplied.
    pub cfc: Option<[f64; 3]>,
    /// Present when `K(r)` was supplied.
    pub einstein: Option<f64>,
}

/// Normalized residuals of the four characterizing systems.
///
/// `cfc` uses `k` when it is constant; `einstein` uses `k(r)`.
pub fn residuals(spray: &SprayData, frame: &RadialFrame, k: Option<&KFunction>) -> Result<ResidualReport> {
    spray.require(3)?;
    let berwald = berwald_residuals(spray, frame.s);
    let [l1, l2] = landsberg_system(spray, frame)?;
    let phi = spray.phi_jet.value();
    let lscale = 1f64.max(phi.abs() * spray.p_jet.d(0, 2).abs());
    let phi2 = phi * phi;
    let n1 = frame.n as f64 - 1.0;
    let (cfc, einstein) = match k {
        None => (None, None),
        Some(kf) => {
            let kr = kf.at(frame.r)?;
            let [e1, e2, e3] = cfc_system(spray, frame)?;
            let cfc = match kf {
                KFunction::Const(kc) => Some([(e1 - kc * phi2) / phi2, e2 / phi2, e3 / phi2]),
                KFunction::Radial(_) => None,
            };
            let w = frame.r * frame.r - frame.s * frame.s;
            let ein = (n1 * e1 + w * e3 - n1 * kr * phi2) / phi2;
            (cfc, Some(ein))
        }
    };
    Ok(ResidualReport {
        berwald,
        landsberg: [l1 / lscale, l2 / lscale],
        cfc,
        einstein,
    })
}

fn berwald_residuals(spray: &SprayData, s: f64) -> [f64; 4] {
    let p = s_derivs(&spray.p_jet);
    let q = s_derivs(&spray.q_jet);
    let scale = 1f64.max(spray.p.abs()).max(spray.q.abs());
    [s * p[1] - p[0], p[2], s * q[2] - q[1], q[3]].map(|v| v / scale)
}

/// `Ric / ((n−1) F²)` from the reduced formula; constant in `s` for Einstein metrics.
pub fn ricci_ratio(spray: &SprayData, frame: &RadialFrame) -> Result<f64> {
    let [e1, _, e3] = cfc_system(spray, frame)?;
    let phi = spray.phi_jet.value();
    let n1 = frame.n as f64 - 1.0;
    Ok((n1 * e1 + (frame.r * frame.r - frame.s * frame.s) * e3) / (n1 * phi * phi))
}
