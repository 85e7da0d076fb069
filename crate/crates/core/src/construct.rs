//! Constant flag curvature metrics from a choice of `c₁(r)`.
//!
//! The pipeline: `Q` from `c₁`, `Θ = P − sP_s` from the linear first-order
//! equation, `P = g(r) s + Π` with `Π − sΠ_s = Θ`, then `(ln φ)_s`, `(ln φ)_r`
//! by eliminating `W` from the `U`/`W` form of `P` and `Q`, and finally `φ`
//! by quadrature with `c₀` fixed on the line `s = 0`.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use serde_json::Value;

use crate::curvature::cfc_equations;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::frame::RadialFrame;
use crate::jet::Jet;
use crate::metric::spray_pq;
use crate::quad::gauss_legendre;
use crate::spec::{parse_branch, ExprField, MetricSpec, Normalization, ScalarField, FIELD_SYMBOLS};
use crate::tol::rel_gap;

/// Pass threshold for the `Q`, `Θ` and integrability residuals.
pub const STAGE_TOL: f64 = 1e-7;
/// Integrability tolerance when `Θ` is only known numerically.
pub const NUMERIC_STAGE_TOL: f64 = 1e-5;
/// Below `|s| < SERIES_BAND · r` the `1/s` in `(ln φ)_r` is taken from a series at `s = 0`.
const SERIES_BAND: f64 = 1e-4;
const SERIES_EXTRA: usize = 4;

/// A real as grammar text; negatives parenthesized.
fn num(x: f64) -> String {
    if x < 0.0 {
        format!("({x})")
    } else {
        format!("{x}")
    }
}

fn field(src: &str, sigma: f64) -> Result<ExprField> {
    ExprField::parse(src, sigma)
}

/// `Q = c₁ + (c₁′ + 2rc₁²)/(r − 2r³c₁) s²` as an expression in `(r, s, sigma)`.
pub fn q_from_c1(c1: &Expr) -> Result<Expr> {
    let c1 = c1.rebind(&["r"])?;
    let dc1 = c1.derivative("r");
    let src = format!("({c1}) + (({dc1}) + 2*r*({c1})^2)/(r - 2*r^3*({c1}))*s^2");
    Expr::parse(&src, &FIELD_SYMBOLS)
}

/// `r − 2r³c₁(r)` must stay away from zero on `[lo, hi]`.
fn check_q_denominator(c1: &Expr, lo: f64, hi: f64) -> Result<()> {
    let n = 200;
    for k in 0..=n {
        let r = lo + (hi - lo) * k as f64 / n as f64;
        let d = r - 2.0 * r.powi(3) * c1.eval(&[r])?;
        if !(d.abs() > 1e-9 * r.max(1.0)) {
            return Err(Error::Construct {
                stage: "q",
                message: format!("r - 2r^3 c1 vanishes near r = {r}"),
            });
        }
    }
    Ok(())
}

/// Which closed-form `Θ` family, if any, a `c₁` belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `c₁ = −1/r`
    InverseR,
    /// `c₁ = −2`
    MinusTwo,
}

impl Family {
    pub fn detect(c1: &Expr) -> Option<Family> {
        let probe = [0.45, 0.8, 1.1, 1.7, 2.3];
        let is = |f: &dyn Fn(f64) -> f64| {
            probe
                .iter()
                .all(|&r| c1.eval(&[r]).is_ok_and(|v| (v - f(r)).abs() <= 1e-12 * f(r).abs().max(1.0)))
        };
        if is(&|r| -1.0 / r) {
            Some(Family::InverseR)
        } else if is(&|_| -2.0) {
            Some(Family::MinusTwo)
        } else {
            None
        }
    }

    /// `(Θ, Π)` with the constant `c` substituted.
    fn theta_pi(self, c: f64) -> (String, String) {
        let c = num(c);
        match self {
            Family::InverseR => (
                format!("{c}*sqrt(r/(r + 4*r^2 - 4*s^2))"),
                format!("{c}*sqrt(r*(r + 4*r^2 - 4*s^2))/(r*(1 + 4*r))"),
            ),
            Family::MinusTwo => (
                format!("{c}*sqrt((1 + 4*r^2)/(1 + 4*r^2 - 4*s^2))"),
                format!("{c}*sqrt((1 + 4*r^2 - 4*s^2)/(1 + 4*r^2))"),
            ),
        }
    }

    /// The `g(r)` making the log-derivative pair integrable for `c ≠ ±2`.
    fn auto_g(self, c: f64) -> String {
        let c2 = num(c * c);
        match self {
            Family::InverseR => format!("2*({c2}*r - 10*r - 3)/(3*r*(2*r + 1)*(4*r + 1))"),
            Family::MinusTwo => format!("2*({c2} - 4)/(3*(1 + 4*r^2))"),
        }
    }
}

/// Initial data for `Θ` on the line `r = r0`.
#[derive(Clone, Debug)]
pub enum InitialData {
    Const(f64),
    /// An expression in `s2 = s²`; `Θ` is even in `s`.
    Expr(Expr),
}

impl InitialData {
    fn at(&self, s2: f64) -> Result<f64> {
        match self {
            InitialData::Const(c) => Ok(*c),
            InitialData::Expr(e) => e.eval(&[s2]),
        }
    }
}

/// `Θ` along characteristics of `Θ_r + (r/s)(1 − 2(r²−s²)Q) Θ_s = −2rQΘ`,
/// written in `σ = s²`.
///
/// `Q = c₁ + kσ` is polynomial in `σ`, so characteristics may pass through
/// `σ < 0`, the analytic continuation across `s = 0`.
#[derive(Clone, Debug)]
pub struct NumericTheta {
    pub c1: Expr,
    /// `(c₁′ + 2rc₁²)/(r − 2r³c₁)`
    pub k: Expr,
    pub r0: f64,
    pub init: InitialData,
}

impl NumericTheta {
    pub fn new(c1: &Expr, r0: f64, init: InitialData) -> Result<Self> {
        let c1 = c1.rebind(&["r"])?;
        let k = Expr::parse(
            &format!("(({}) + 2*r*({c1})^2)/(r - 2*r^3*({c1}))", c1.derivative("r")),
            &["r"],
        )?;
        Ok(NumericTheta { c1, k, r0, init })
    }

    fn rhs(&self, r: f64, sigma: f64) -> Result<(f64, f64)> {
        if !(sigma < r * r && sigma.is_finite()) {
            return Err(Error::Construct {
                stage: "theta",
                message: format!("characteristic leaves the cone at r = {r}, s^2 = {sigma}"),
            });
        }
        let q = self.c1.eval(&[r])? + self.k.eval(&[r])? * sigma;
        Ok((2.0 * r - 4.0 * r * (r * r - sigma) * q, -2.0 * r * q))
    }

    /// Integrate from `(r, s²)` to `r0`; returns `(σ(r0), ∫ d lnΘ)`.
    fn trace(&self, r: f64, sigma: f64, steps: usize) -> Result<(f64, f64)> {
        let h = (self.r0 - r) / steps as f64;
        let (mut x, mut y, mut l) = (r, sigma, 0.0);
        for _ in 0..steps {
            let (a1, b1) = self.rhs(x, y)?;
            let (a2, b2) = self.rhs(x + h / 2.0, y + h / 2.0 * a1)?;
            let (a3, b3) = self.rhs(x + h / 2.0, y + h / 2.0 * a2)?;
            let (a4, b4) = self.rhs(x + h, y + h * a3)?;
            y += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            l += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
            x += h;
        }
        Ok((y, l))
    }

    pub fn value(&self, r: f64, s: f64) -> Result<f64> {
        if r == self.r0 {
            return self.init.at(s * s);
        }
        let mut steps = ((r - self.r0).abs() / 0.01).ceil().max(16.0) as usize;
        let mut prev = self.trace(r, s * s, steps)?;
        let (sigma0, dlog) = loop {
            steps *= 2;
            let next = self.trace(r, s * s, steps)?;
            let (ds, dl) = (next.0 - prev.0, next.1 - prev.1);
            if !(next.0.is_finite() && next.1.is_finite()) || steps > 1 << 12 {
                return Err(Error::Construct {
                    stage: "theta",
                    message: format!("characteristic through r = {r}, s = {s} did not converge"),
                });
            }
            prev = next;
            if ds.abs() <= 1e-12 * r * r && dl.abs() <= 1e-12 {
                // one Richardson step on the fourth-order error
                break (prev.0 + ds / 15.0, prev.1 + dl / 15.0);
            }
        };
        // lnΘ(r0) − lnΘ(r) = dlog
        Ok(self.init.at(sigma0)? * (-dlog).exp())
    }

    /// `Π = Θ(r,0) + s ∫₀^s (Θ(r,0) − Θ(r,σ))/σ² dσ`, the even solution of `Π − sΠ_s = Θ`.
    pub fn particular(&self, r: f64, s: f64) -> Result<f64> {
        let t0 = self.value(r, 0.0)?;
        if s == 0.0 {
            return Ok(t0);
        }
        let tail = gauss_legendre(|sg| Ok((t0 - self.value(r, sg)?) / (sg * sg)), 0.0, s, 4)?;
        Ok(t0 + s * tail)
    }
}

#[derive(Clone, Debug)]
pub enum Theta {
    Closed { family: Family, theta: ExprField, pi: ExprField },
    Numeric(NumericTheta),
}

impl Theta {
    pub fn value(&self, r: f64, s: f64) -> Result<f64> {
        match self {
            Theta::Closed { theta, .. } => theta.value(r, s),
            Theta::Numeric(n) => n.value(r, s),
        }
    }

    pub fn is_closed(&self) -> bool {
        matches!(self, Theta::Closed { .. })
    }
}

/// Closed form for the two known families, characteristics otherwise.
pub fn theta_solve(c1: &Expr, sigma: f64, c: f64, r0: f64) -> Result<Theta> {
    match Family::detect(c1) {
        Some(family) => {
            let (t, p) = family.theta_pi(c);
            Ok(Theta::Closed {
                family,
                theta: field(&t, sigma)?,
                pi: field(&p, sigma)?,
            })
        }
        None => Ok(Theta::Numeric(NumericTheta::new(c1, r0, InitialData::Const(c))?)),
    }
}

/// Residual of `(1/2r)Θ_r + ΘQ − ((r²−s²)/s)Θ_sQ + (1/2s)Θ_s`, scaled by `max(1, |Θ|)`.
pub fn theta_residual(theta: &Theta, q: &ExprField, r: f64, s: f64) -> Result<f64> {
    let qv = q.value(r, s)?;
    let w = r * r - s * s;
    let (t, tr, ts) = match theta {
        Theta::Closed { theta, .. } => {
            let j = theta.jet(r, s, 1)?;
            (j.value(), j.d(1, 0), j.d(0, 1))
        }
        Theta::Numeric(n) => {
            let h = 1e-4 * r;
            let t = n.value(r, s)?;
            let tr = (n.value(r + h, s)? - n.value(r - h, s)?) / (2.0 * h);
            let ts = (n.value(r, s + h)? - n.value(r, s - h)?) / (2.0 * h);
            (t, tr, ts)
        }
    };
    let res = tr / (2.0 * r) + t * qv - w / s * ts * qv + ts / (2.0 * s);
    Ok(res / 1f64.max(t.abs()))
}

/// `P = g(r) s + Π`.
#[derive(Clone, Debug)]
pub enum PField {
    Closed(ExprField),
    Numeric { g: Expr, theta: NumericTheta },
}

impl PField {
    pub fn value(&self, r: f64, s: f64) -> Result<f64> {
        match self {
            PField::Closed(e) => e.value(r, s),
            PField::Numeric { g, theta } => Ok(g.eval(&[r])? * s + theta.particular(r, s)?),
        }
    }
}

pub fn p_from_theta(theta: &Theta, g_free: &Expr, sigma: f64) -> Result<PField> {
    let g = g_free.rebind(&["r"])?;
    match theta {
        Theta::Closed { pi, .. } => Ok(PField::Closed(field(&format!("({g})*s + {}", pi.expr), sigma)?)),
        Theta::Numeric(n) => Ok(PField::Numeric {
            g,
            theta: n.clone(),
        }),
    }
}

/// Jets of `U`, `W` and the two log-derivatives at one base point.
#[derive(Clone, Debug)]
pub struct UwJets {
    pub u: Jet,
    pub w: Jet,
    pub ls: Jet,
    /// Taken from a series at `s = 0` when `|s|` is tiny.
    pub lr: Jet,
}

/// `U`, `W`, `(ln φ)_s`, `(ln φ)_r` from `P` and `Q` given as expressions.
#[derive(Clone, Debug)]
pub struct UwInversion {
    pub p: ExprField,
    pub q: ExprField,
}

impl UwInversion {
    fn raw(&self, r: f64, s: f64, degree: usize) -> Result<(Jet, Jet, Jet, Jet)> {
        let d = degree;
        let p = self.p.jet(r, s, d + 1)?;
        let q = self.q.jet(r, s, d + 1)?;
        let (ps, qs) = (p.diff_s(), q.diff_s());
        let (p, q) = (p.truncate(d), q.truncate(d));
        let rj = Jet::var_r(r, s, d);
        let sj = Jet::var_s(r, s, d);
        let w = &(&rj * &rj) - &(&sj * &sj);
        let num = &(&sj + &(&(&(&rj * &rj).scale(2.0) - &(&sj * &sj)) * &p)) - &(&(&sj * &w) * &ps);
        let den = &(&(&sj * &p).add_const(1.0) - &(&w * &q).scale(2.0)) + &(&(&sj * &w) * &qs);
        let u = num.div(&den).map_err(|_| Error::Construct {
            stage: "uw",
            message: format!("U denominator vanishes at r = {r}, s = {s}"),
        })?;
        let wj = &(&p + &(&u * &q)) * &rj.scale(2.0);
        let ls = (&u - &sj)
            .div(&w)
            .map_err(|e| Error::domain("r^2 - s^2", e.to_string()))?;
        let n = &wj - &(&rj * &ls);
        Ok((u, wj, ls, n))
    }

    pub fn jets(&self, r: f64, s: f64, degree: usize) -> Result<UwJets> {
        let (u, w, ls, n) = self.raw(r, s, degree)?;
        let lr = if s.abs() < SERIES_BAND * r {
            let (.., n0) = self.raw(r, 0.0, degree + 1 + SERIES_EXTRA)?;
            n0.div_s_at_zero().shift_s(s).truncate(degree)
        } else {
            n.div(&Jet::var_s(r, s, degree))
                .map_err(|e| Error::domain("s", e.to_string()))?
        };
        Ok(UwJets { u, w, ls, lr })
    }

    pub fn fields(self: &Arc<Self>) -> (Arc<dyn ScalarField>, Arc<dyn ScalarField>) {
        (
            Arc::new(LogDerivative { inv: self.clone(), along_r: false }),
            Arc::new(LogDerivative { inv: self.clone(), along_r: true }),
        )
    }
}

/// One of the two log-derivatives produced by a [`UwInversion`].
#[derive(Clone)]
pub struct LogDerivative {
    inv: Arc<UwInversion>,
    along_r: bool,
}

impl fmt::Debug for LogDerivative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.describe())
    }
}

impl ScalarField for LogDerivative {
    fn jet(&self, r: f64, s: f64, degree: usize) -> Result<Jet> {
        let j = self.inv.jets(r, s, degree)?;
        Ok(if self.along_r { j.lr } else { j.ls })
    }

    fn describe(&self) -> String {
        let (p, q) = (&self.inv.p.expr, &self.inv.q.expr);
        if self.along_r {
            format!("(W - r*(ln phi)_s)/s where P = {p}, Q = {q}")
        } else {
            format!("(U - s)/(r^2 - s^2) where P = {p}, Q = {q}")
        }
    }
}

/// Evenly spaced sample points.
#[derive(Clone, Debug, Serialize)]
pub struct Grid {
    pub r: (f64, f64, usize),
    pub s_frac: (f64, f64, usize),
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            r: (0.5, 2.0, 10),
            s_frac: (-0.8, 0.8, 10),
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

impl Grid {
    pub fn points(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for r in linspace(self.r.0, self.r.1, self.r.2) {
            for t in linspace(self.s_frac.0, self.s_frac.1, self.s_frac.2) {
                out.push((r, t * r));
            }
        }
        out
    }

    fn from_json(v: &Value) -> Result<Grid> {
        let triple = |key: &str, default: (f64, f64, usize)| -> Result<(f64, f64, usize)> {
            match v.get(key) {
                None | Some(Value::Null) => Ok(default),
                Some(Value::Array(a)) if a.len() == 3 => {
                    let lo = a[0].as_f64();
                    let hi = a[1].as_f64();
                    let n = a[2].as_u64();
                    match (lo, hi, n) {
                        (Some(lo), Some(hi), Some(n)) if n >= 1 && lo <= hi => Ok((lo, hi, n as usize)),
                        _ => Err(Error::InvalidParams(format!("grid.{key} must be [lo, hi, n] with lo <= hi, n >= 1"))),
                    }
                }
                Some(_) => Err(Error::InvalidParams(format!("grid.{key} must be [lo, hi, n]"))),
            }
        };
        let d = Grid::default();
        let g = Grid {
            r: triple("r", d.r)?,
            s_frac: triple("s_frac", d.s_frac)?,
        };
        if !(g.r.0 > 0.0) || g.s_frac.0 <= -1.0 || g.s_frac.1 >= 1.0 {
            return Err(Error::InvalidParams("grid must have r > 0 and |s_frac| < 1".into()));
        }
        Ok(g)
    }
}

#[derive(Clone, Debug)]
pub enum GFree {
    Auto,
    Expr(String),
}

/// Pipeline parameters.
#[derive(Clone, Debug)]
pub struct ConstructConfig {
    pub c1: String,
    pub g_free: GFree,
    pub c: f64,
    pub branch: f64,
    pub k_hypothesis: Option<f64>,
    pub grid: Grid,
    /// Where `c₀` is anchored.
    pub r_ref: f64,
    pub phi_ref: f64,
    /// Line carrying the initial data of the numeric `Θ`.
    pub r0: f64,
}

impl ConstructConfig {
    pub fn new(c1: &str, g_free: GFree, c: f64, branch: f64) -> Self {
        ConstructConfig {
            c1: c1.to_string(),
            g_free,
            c,
            branch,
            k_hypothesis: None,
            grid: Grid::default(),
            r_ref: 1.0,
            phi_ref: 1.0,
            r0: 1.0,
        }
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::InvalidParams("pipeline config must be a JSON object".into()))?;
        let c1 = obj
            .get("c1")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::InvalidParams("missing string field `c1`".into()))?;
        let g_free = match obj.get("g_free") {
            None | Some(Value::Null) => GFree::Auto,
            Some(Value::String(s)) if s == "auto" => GFree::Auto,
            Some(Value::String(s)) => GFree::Expr(s.clone()),
            Some(Value::Number(n)) => GFree::Expr(n.to_string()),
            Some(other) => return Err(Error::InvalidParams(format!("`g_free` must be an expression or \"auto\", got {other}"))),
        };
        let real = |key: &str, default: f64| -> Result<f64> {
            match obj.get(key) {
                None | Some(Value::Null) => Ok(default),
                Some(v) => v
                    .as_f64()
                    .ok_or_else(|| Error::InvalidParams(format!("`{key}` must be a number"))),
            }
        };
        let mut cfg = ConstructConfig::new(c1, g_free, real("c", 1.0)?, 1.0);
        if let Some(b) = obj.get("branch") {
            cfg.branch = parse_branch(b)?;
        }
        cfg.k_hypothesis = match obj.get("K_hypothesis") {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_f64().ok_or_else(|| Error::InvalidParams("`K_hypothesis` must be a number or null".into()))?),
        };
        if let Some(g) = obj.get("grid") {
            cfg.grid = Grid::from_json(g)?;
        }
        cfg.r_ref = real("r_ref", 1.0)?;
        cfg.phi_ref = real("phi_ref", 1.0)?;
        cfg.r0 = real("r0", 1.0)?;
        if !(cfg.r_ref > 0.0 && cfg.phi_ref > 0.0 && cfg.r0 > 0.0) {
            return Err(Error::InvalidParams("r_ref, phi_ref and r0 must be positive".into()));
        }
        let known = ["c1", "g_free", "c", "branch", "K_hypothesis", "grid", "r_ref", "phi_ref", "r0"];
        if let Some(k) = obj.keys().find(|k| !known.contains(&k.as_str())) {
            return Err(Error::InvalidParams(format!("unknown pipeline field `{k}`")));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "c1": self.c1,
            "g_free": match &self.g_free { GFree::Auto => "auto".to_string(), GFree::Expr(e) => e.clone() },
            "c": self.c,
            "branch": if self.branch < 0.0 { "-" } else { "+" },
            "K_hypothesis": self.k_hypothesis,
            "grid": {"r": [self.grid.r.0, self.grid.r.1, self.grid.r.2],
                     "s_frac": [self.grid.s_frac.0, self.grid.s_frac.1, self.grid.s_frac.2]},
            "r_ref": self.r_ref,
            "phi_ref": self.phi_ref,
            "r0": self.r0,
        })
    }
}

/// Outcome of one stage.
#[derive(Clone, Debug, Serialize)]
pub struct StageCheck {
    pub stage: &'static str,
    pub max_residual: f64,
    pub tol: f64,
    pub pass: bool,
    pub points: usize,
    /// Points where the check could not be evaluated.
    pub skipped: usize,
}

impl StageCheck {
    fn new(stage: &'static str, tol: f64, residuals: &[Result<f64>]) -> Self {
        let ok: Vec<f64> = residuals.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        let max = ok.iter().fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) });
        StageCheck {
            stage,
            max_residual: max,
            tol,
            pass: !ok.is_empty() && max <= tol,
            points: ok.len(),
            skipped: residuals.len() - ok.len(),
        }
    }
}

/// The integrability defect `|∂r(ln φ)_s − ∂s(ln φ)_r|` over a grid.
pub fn integrability_check(
    ls: &dyn ScalarField,
    lr: &dyn ScalarField,
    grid: &[(f64, f64)],
    tol: f64,
) -> StageCheck {
    let res: Vec<Result<f64>> = grid
        .iter()
        .map(|&(r, s)| {
            let a = ls.jet(r, s, 1)?.d(1, 0);
            let b = lr.jet(r, s, 1)?.d(0, 1);
            Ok((a - b).abs() / 1f64.max(a.abs()).max(b.abs()))
        })
        .collect();
    StageCheck::new("integrability", tol, &res)
}

/// [`integrability_check`] with central differences on values only.
pub fn integrability_check_fd(
    ls: &dyn Fn(f64, f64) -> Result<f64>,
    lr: &dyn Fn(f64, f64) -> Result<f64>,
    grid: &[(f64, f64)],
    tol: f64,
) -> StageCheck {
    let res: Vec<Result<f64>> = grid
        .iter()
        .map(|&(r, s)| {
            let h = 1e-3 * r;
            let a = (ls(r + h, s)? - ls(r - h, s)?) / (2.0 * h);
            let b = (lr(r, s + h)? - lr(r, s - h)?) / (2.0 * h);
            Ok((a - b).abs() / 1f64.max(a.abs()).max(b.abs()))
        })
        .collect();
    StageCheck::new("integrability", tol, &res)
}

/// A log-derivative spec anchored at `φ(r_ref, 0) = phi_ref`.
pub fn phi_recover(
    ls: Arc<dyn ScalarField>,
    lr: Arc<dyn ScalarField>,
    r_ref: f64,
    phi_ref: f64,
    branch: f64,
) -> MetricSpec {
    MetricSpec::log_derivative(ls, lr, Normalization::Anchor { r_ref, phi_ref }, branch)
}

#[derive(Clone, Debug, Serialize)]
pub struct Classification {
    /// Max relative gap between the recovered metric's spray and the pipeline's `P`, `Q`.
    pub spray_gap: f64,
    pub spray_pass: bool,
    /// `K̂ = E₁/φ²` over the grid, with `E₁` the left side of the first equation.
    pub k_mean: f64,
    pub k_spread: f64,
    /// `K` the residuals were measured against.
    pub k_used: f64,
    /// Max normalized `(E₁ − Kφ², E₂, E₃)/φ²`.
    pub cfc_residual: f64,
    pub cfc_holds: bool,
    /// When `K ≠ 0`: `φ² = E₁/K` at the grid points for `K = ±1`.
    pub phi_squared_solved: Option<Vec<f64>>,
    pub verdict: String,
}

/// Spray consistency and the flag curvature of the recovered metric.
pub fn classify_constructed(
    spec: &MetricSpec,
    p: &ExprField,
    q: &ExprField,
    grid: &[(f64, f64)],
    k_hypothesis: Option<f64>,
) -> Result<Classification> {
    let mut spray_gap = 0.0f64;
    let mut ks = Vec::with_capacity(grid.len());
    let mut eqs = Vec::with_capacity(grid.len());
    for &(r, s) in grid {
        let t = s / r;
        let frame = RadialFrame::new(&[r, 0.0, 0.0], &[t, (1.0 - t * t).sqrt(), 0.0])?;
        let sp = spray_pq(spec, &frame)?;
        let (pv, qv) = (p.value(r, s)?, q.value(r, s)?);
        spray_gap = spray_gap.max(rel_gap(sp.p, pv)).max(rel_gap(sp.q, qv));
        let e = cfc_equations(&p.jet(r, s, 2)?, &q.jet(r, s, 2)?, r, s)?;
        let phi2 = sp.phi_jet.value().powi(2);
        ks.push(e[0] / phi2);
        eqs.push((e, phi2));
    }
    if ks.is_empty() {
        return Err(Error::Construct {
            stage: "classify",
            message: "empty grid".into(),
        });
    }
    let k_mean = ks.iter().sum::<f64>() / ks.len() as f64;
    let (lo, hi) = ks.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), k| (a.min(*k), b.max(*k)));
    let k_used = k_hypothesis.unwrap_or(k_mean);
    let cfc_residual = eqs.iter().fold(0.0f64, |m, ([e1, e2, e3], phi2)| {
        m.max(((e1 - k_used * phi2) / phi2).abs())
            .max((e2 / phi2).abs())
            .max((e3 / phi2).abs())
    });
    let spray_pass = spray_gap <= STAGE_TOL;
    let cfc_holds = cfc_residual <= STAGE_TOL;
    // sign of E₁ picks K = ±1 after rescaling F
    let phi_squared_solved = if k_mean.abs() > STAGE_TOL && cfc_holds {
        let k = k_mean.signum();
        Some(eqs.iter().map(|([e1, ..], _)| e1 / k).collect())
    } else {
        None
    };
    let verdict = if !spray_pass {
        "spray mismatch: recovered metric does not reproduce P, Q".to_string()
    } else if cfc_holds {
        if k_mean.abs() <= STAGE_TOL {
            "constant flag curvature K = 0".to_string()
        } else {
            format!("constant flag curvature K = {k_used:.10} (K = {} after rescaling F)", k_mean.signum())
        }
    } else {
        format!("not constant flag curvature against K = {k_used:.10}")
    };
    Ok(Classification {
        spray_gap,
        spray_pass,
        k_mean,
        k_spread: hi - lo,
        k_used,
        cfc_residual,
        cfc_holds,
        phi_squared_solved,
        verdict,
    })
}

/// The live objects of a pipeline run.
#[derive(Clone, Debug)]
pub struct ConstructState {
    pub config: ConstructConfig,
    pub c1: Expr,
    pub q: ExprField,
    pub theta: Theta,
    pub g_free: Expr,
    pub p: PField,
    pub inversion: Option<Arc<UwInversion>>,
    pub dlnphi_ds: Option<Arc<dyn ScalarField>>,
    pub dlnphi_dr: Option<Arc<dyn ScalarField>>,
    pub recovered: Option<MetricSpec>,
}

impl ConstructState {
    /// `(ln c₀)′(r) = (ln φ)_r(r, 0)`.
    pub fn dln_c0(&self, r: f64) -> Result<f64> {
        match &self.dlnphi_dr {
            Some(lr) => lr.value(r, 0.0),
            None => Err(Error::Construct {
                stage: "recover",
                message: "log-derivatives are only available for a closed-form theta".into(),
            }),
        }
    }

    /// Log-derivative values from finite differences of `P`; works for either `Θ`.
    pub fn log_derivatives_fd(&self, r: f64, s: f64) -> Result<(f64, f64)> {
        let h = 1e-4 * r;
        let p = |s: f64| self.p.value(r, s);
        let q = |s: f64| self.q.value(r, s);
        let (pv, qv) = (p(s)?, q(s)?);
        let ps = (p(s + h)? - p(s - h)?) / (2.0 * h);
        let qs = (q(s + h)? - q(s - h)?) / (2.0 * h);
        let w = r * r - s * s;
        let u = (s + (2.0 * r * r - s * s) * pv - s * w * ps) / (1.0 + s * pv - 2.0 * w * qv + s * w * qs);
        let wv = 2.0 * r * (pv + u * qv);
        let ls = (u - s) / w;
        Ok((ls, (wv - r * ls) / s))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstructReport {
    pub config: Value,
    pub family: Option<Family>,
    pub q: String,
    pub theta: Option<String>,
    pub g_free: String,
    pub p: Option<String>,
    pub checks: Vec<StageCheck>,
    /// `(r, c₀(r))` on the grid radii.
    pub c0: Vec<(f64, f64)>,
    pub classification: Option<Classification>,
    pub failed_stage: Option<&'static str>,
    pub notes: Vec<String>,
}

impl ConstructReport {
    pub fn passed(&self) -> bool {
        self.failed_stage.is_none()
    }
}

/// Run the pipeline; verification failures end it early and are recorded in the report.
pub fn run_pipeline(config: &ConstructConfig) -> Result<(ConstructState, ConstructReport)> {
    let sigma = config.branch;
    let c1 = Expr::parse(&config.c1, &["r"]).map_err(|e| Error::Construct {
        stage: "q",
        message: format!("c1: {e}"),
    })?;
    let grid = config.grid.points();
    check_q_denominator(&c1, config.grid.r.0.min(config.r0).min(config.r_ref), config.grid.r.1.max(config.r0).max(config.r_ref))?;
    let q = ExprField {
        expr: q_from_c1(&c1)?,
        sigma,
    };
    let mut notes = Vec::new();
    let mut checks = Vec::new();
    let family = Family::detect(&c1);
    let mut report = ConstructReport {
        config: config.to_json(),
        family,
        q: q.expr.to_string(),
        theta: None,
        g_free: String::new(),
        p: None,
        checks: Vec::new(),
        c0: Vec::new(),
        classification: None,
        failed_stage: None,
        notes: Vec::new(),
    };

    // Q from c1
    let projective = grid.iter().all(|&(r, s)| q.value(r, s).is_ok_and(|v| v == 0.0));
    if projective {
        return Err(Error::Construct {
            stage: "q",
            message: "Q vanishes identically (projective case); nothing to construct".into(),
        });
    }
    let q_res: Vec<Result<f64>> = grid
        .iter()
        .map(|&(r, s)| {
            let j = q.jet(r, s, 2)?;
            let [_, _, e3] = cfc_equations(&Jet::zero(r, s, 2), &j, r, s)?;
            Ok(e3 / 1f64.max(j.value().powi(2)))
        })
        .collect();
    let q_check = StageCheck::new("q_residual", 1e-9, &q_res);
    let state_fail = |report: &mut ConstructReport, checks: Vec<StageCheck>, notes: Vec<String>, stage| {
        report.checks = checks;
        report.notes = notes;
        report.failed_stage = Some(stage);
    };
    let q_ok = q_check.pass;
    checks.push(q_check);

    // Θ, then P
    let c_eff = sigma * config.c;
    let theta = theta_solve(&c1, sigma, c_eff, config.r0)?;
    report.theta = match &theta {
        Theta::Closed { theta, .. } => Some(theta.expr.to_string()),
        Theta::Numeric(_) => {
            notes.push(format!(
                "theta: no closed form for this c1; characteristics from theta(r0 = {}, s) = {}",
                config.r0, c_eff
            ));
            None
        }
    };
    let t_res: Vec<Result<f64>> = grid
        .iter()
        .filter(|(_, s)| *s != 0.0)
        .map(|&(r, s)| theta_residual(&theta, &q, r, s))
        .collect();
    let t_tol = if theta.is_closed() { STAGE_TOL } else { NUMERIC_STAGE_TOL };
    let t_check = StageCheck::new("theta_residual", t_tol, &t_res);
    let t_ok = t_check.pass;
    checks.push(t_check);

    let g_src = match (&config.g_free, family) {
        (GFree::Expr(e), _) => e.clone(),
        (GFree::Auto, Some(f)) => f.auto_g(config.c),
        (GFree::Auto, None) => {
            return Err(Error::Construct {
                stage: "p",
                message: "g_free = \"auto\" needs c1 = -1/r or c1 = -2".into(),
            })
        }
    };
    let g_free = Expr::parse(&g_src, &["r"]).map_err(|e| Error::Construct {
        stage: "p",
        message: format!("g_free: {e}"),
    })?;
    report.g_free = g_free.to_string();
    let p = p_from_theta(&theta, &g_free, sigma)?;
    if let PField::Closed(e) = &p {
        report.p = Some(e.expr.to_string());
    }
    let mut state = ConstructState {
        config: config.clone(),
        c1,
        q: q.clone(),
        theta,
        g_free,
        p,
        inversion: None,
        dlnphi_ds: None,
        dlnphi_dr: None,
        recovered: None,
    };
    if !q_ok {
        state_fail(&mut report, checks, notes, "q_residual");
        return Ok((state, report));
    }
    if !t_ok {
        state_fail(&mut report, checks, notes, "theta_residual");
        return Ok((state, report));
    }

    // log-derivatives and integrability
    let p_closed = match &state.p {
        PField::Closed(e) => e.clone(),
        PField::Numeric { .. } => {
            let st = &state;
            let ls = |r: f64, s: f64| st.log_derivatives_fd(r, s).map(|v| v.0);
            let lr = |r: f64, s: f64| st.log_derivatives_fd(r, s).map(|v| v.1);
            let pts: Vec<(f64, f64)> = grid.iter().copied().filter(|(r, s)| s.abs() > 1e-2 * r).collect();
            let check = integrability_check_fd(&ls, &lr, &pts, NUMERIC_STAGE_TOL);
            let pass = check.pass;
            checks.push(check);
            notes.push("classification needs a closed-form theta; stopping after the integrability check".into());
            if pass {
                report.checks = checks;
                report.notes = notes;
            } else {
                state_fail(&mut report, checks, notes, "integrability");
            }
            return Ok((state, report));
        }
    };
    let inv = Arc::new(UwInversion {
        p: p_closed.clone(),
        q: q.clone(),
    });
    let (ls, lr) = inv.fields();
    let i_check = integrability_check(ls.as_ref(), lr.as_ref(), &grid, STAGE_TOL);
    let i_ok = i_check.pass;
    checks.push(i_check);
    state.inversion = Some(inv);
    state.dlnphi_ds = Some(ls.clone());
    state.dlnphi_dr = Some(lr.clone());
    if !i_ok {
        state_fail(&mut report, checks, notes, "integrability");
        return Ok((state, report));
    }

    // recover φ and classify
    let spec = phi_recover(ls, lr, config.r_ref, config.phi_ref, sigma);
    let mut radii: Vec<f64> = grid.iter().map(|p| p.0).collect();
    radii.dedup();
    for r in radii {
        report.c0.push((r, spec.phi_value(r, 0.0)?));
    }
    let cls = classify_constructed(&spec, &p_closed, &q, &grid, config.k_hypothesis)?;
    let spray_ok = cls.spray_pass;
    let cfc_ok = cls.cfc_holds;
    checks.push(StageCheck {
        stage: "spray_consistency",
        max_residual: cls.spray_gap,
        tol: STAGE_TOL,
        pass: spray_ok,
        points: grid.len(),
        skipped: 0,
    });
    checks.push(StageCheck {
        stage: "cfc",
        max_residual: cls.cfc_residual,
        tol: STAGE_TOL,
        pass: cfc_ok,
        points: grid.len(),
        skipped: 0,
    });
    notes.push(format!(
        "F is normalized by phi({}, 0) = {}; rescaling F by a constant rescales K by its inverse square",
        config.r_ref, config.phi_ref
    ));
    state.recovered = Some(spec);
    report.classification = Some(cls);
    report.checks = checks;
    report.notes = notes;
    if !spray_ok {
        report.failed_stage = Some("spray_consistency");
    } else if !cfc_ok {
        report.failed_stage = Some("cfc");
    }
    Ok((state, report))
}
