//! Descriptions of `φ(r, s)` and their evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::frame::RadialFrame;
use crate::jet::Jet;
use crate::quad::gauss_legendre;

pub const DEFAULT_DEGREE: usize = 7;
/// Relative cone margin and radicand/divisor margin used by [`domain_check`].
pub const DOMAIN_EPS: f64 = 1e-6;
/// Default relative tolerance of the cross-derivative check on log-derivative specs.
pub const CONSISTENCY_TOL: f64 = 1e-7;

/// Gauss–Legendre panels for the `s`-integral of `(ln φ)_s`.
const S_PANELS: usize = 8;
/// Gauss–Legendre panels for `r`-integrals.
const R_PANELS: usize = 4;

/// A scalar function of `(r, s)` that can be expanded as a jet.
pub trait ScalarField: fmt::Debug + Send + Sync {
    fn jet(&self, r: f64, s: f64, degree: usize) -> Result<Jet>;

    fn value(&self, r: f64, s: f64) -> Result<f64> {
        Ok(self.jet(r, s, 0)?.value())
    }

    /// Value with every radicand and divisor required to exceed `guard`.
    fn value_guarded(&self, r: f64, s: f64, guard: f64) -> Result<f64> {
        let _ = guard;
        let v = self.value(r, s)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::domain(self.describe(), "non-finite value"))
        }
    }

    fn describe(&self) -> String;
}

/// An expression in `r`, `s` and the branch sign `sigma`.
#[derive(Clone, Debug)]
pub struct ExprField {
    pub expr: Expr,
    pub sigma: f64,
}

pub const FIELD_SYMBOLS: [&str; 3] = ["r", "s", "sigma"];

impl ExprField {
    pub fn parse(src: &str, sigma: f64) -> Result<Self> {
        Ok(ExprField {
            expr: Expr::parse(src, &FIELD_SYMBOLS)?,
            sigma,
        })
    }
}

impl ScalarField for ExprField {
    fn jet(&self, r: f64, s: f64, degree: usize) -> Result<Jet> {
        let vars = [
            Jet::var_r(r, s, degree),
            Jet::var_s(r, s, degree),
            Jet::constant(r, s, degree, self.sigma),
        ];
        self.expr.eval_jet(&vars)
    }

    fn value(&self, r: f64, s: f64) -> Result<f64> {
        self.expr.eval(&[r, s, self.sigma])
    }

    fn value_guarded(&self, r: f64, s: f64, guard: f64) -> Result<f64> {
        self.expr.eval_guarded(&[r, s, self.sigma], guard)
    }

    fn describe(&self) -> String {
        self.expr.to_string()
    }
}

/// How `c0(r) = φ(r, 0)` is fixed for a log-derivative spec.
#[derive(Clone, Debug)]
pub enum Normalization {
    /// `c0` given explicitly as an expression in `r`.
    Expr(Expr),
    /// `c0(r) = phi_ref · exp(∫_{r_ref}^r (ln φ)_r(ρ, 0) dρ)`.
    Anchor { r_ref: f64, phi_ref: f64 },
}

pub type Params = BTreeMap<String, Value>;

#[derive(Clone, Debug)]
pub enum MetricSpec {
    ClosedForm {
        phi: ExprField,
    },
    /// `φ = ψ(s²/(g + s² H)) e^{-I₂} s` with `g = e^{I₁}`, where
    /// `I₁ = ∫(2/r − 2r³c₂)`, `I₂ = ∫(2/r − r³c₂)`, `H = ∫ 2r c₂ g`,
    /// all integrals taken from `r_base`.
    BerwaldFamily {
        psi: Expr,
        c2: Expr,
        r_base: f64,
    },
    /// `φ = c0(r) exp(∫_0^s (ln φ)_s dσ)` with both log-derivatives supplied.
    LogDerivative {
        dlnphi_ds: Arc<dyn ScalarField>,
        dlnphi_dr: Arc<dyn ScalarField>,
        c0: Normalization,
        branch: f64,
        consistency_tol: f64,
    },
    /// A catalog entry; `resolved` is the concrete spec it stands for.
    Catalog {
        id: String,
        params: Params,
        resolved: Box<MetricSpec>,
    },
}

impl MetricSpec {
    pub fn closed_form(phi: &str, branch: f64) -> Result<Self> {
        Ok(MetricSpec::ClosedForm {
            phi: ExprField::parse(phi, branch)?,
        })
    }

    pub fn berwald_family(psi: &str, c2: &str) -> Result<Self> {
        Ok(MetricSpec::BerwaldFamily {
            psi: Expr::parse(psi, &["t"])?,
            c2: Expr::parse(c2, &["r"])?,
            r_base: 1.0,
        })
    }

    pub fn log_derivative(
        dlnphi_ds: Arc<dyn ScalarField>,
        dlnphi_dr: Arc<dyn ScalarField>,
        c0: Normalization,
        branch: f64,
    ) -> Self {
        MetricSpec::LogDerivative {
            dlnphi_ds,
            dlnphi_dr,
            c0,
            branch,
            consistency_tol: CONSISTENCY_TOL,
        }
    }

    /// The concrete spec behind catalog references.
    pub fn concrete(&self) -> &MetricSpec {
        match self {
            MetricSpec::Catalog { resolved, .. } => resolved.concrete(),
            other => other,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            MetricSpec::ClosedForm { .. } => "expr",
            MetricSpec::BerwaldFamily { .. } => "berwald_family",
            MetricSpec::LogDerivative { .. } => "log_derivative",
            MetricSpec::Catalog { .. } => "catalog",
        }
    }

    /// `φ(r, s)` without derivatives.
    pub fn phi_value(&self, r: f64, s: f64) -> Result<f64> {
        self.phi_value_guarded(r, s, 0.0)
    }

    fn phi_value_guarded(&self, r: f64, s: f64, guard: f64) -> Result<f64> {
        match self {
            MetricSpec::ClosedForm { phi } => phi.value_guarded(r, s, guard),
            MetricSpec::BerwaldFamily { psi, c2, r_base } => {
                let b = BerwaldIntegrals::at(c2, *r_base, r, guard)?;
                let t = s * s / (b.g + s * s * b.h);
                let p = psi.eval_guarded(&[t], guard)?;
                Ok(p * (-b.i2).exp() * s)
            }
            MetricSpec::LogDerivative {
                dlnphi_ds,
                dlnphi_dr,
                c0,
                ..
            } => Ok(log_phi_value(dlnphi_ds.as_ref(), dlnphi_dr.as_ref(), c0, r, s, guard)?.exp()),
            MetricSpec::Catalog { resolved, .. } => resolved.phi_value_guarded(r, s, guard),
        }
    }

    /// Jet of `φ` at `(r, s)`.
    pub fn phi_jet_rs(&self, r: f64, s: f64, degree: usize) -> Result<Jet> {
        match self {
            MetricSpec::ClosedForm { phi } => phi.jet(r, s, degree),
            MetricSpec::BerwaldFamily { psi, c2, r_base } => {
                berwald_phi_jet(psi, c2, *r_base, r, s, degree)
            }
            MetricSpec::LogDerivative {
                dlnphi_ds,
                dlnphi_dr,
                c0,
                consistency_tol,
                ..
            } => {
                let value = log_phi_value(dlnphi_ds.as_ref(), dlnphi_dr.as_ref(), c0, r, s, 0.0)?;
                if degree == 0 {
                    return Ok(Jet::constant(r, s, 0, value.exp()));
                }
                let ls = dlnphi_ds.jet(r, s, degree - 1)?;
                let lr = dlnphi_dr.jet(r, s, degree - 1)?;
                if degree >= 2 {
                    let (a, b) = (ls.d(1, 0), lr.d(0, 1));
                    let defect = (a - b).abs();
                    if !(defect <= consistency_tol * 1f64.max(a.abs()).max(b.abs())) {
                        return Err(Error::Inconsistent { r, s, defect });
                    }
                }
                Ok(Jet::from_gradient(value, &lr, &ls).exp())
            }
            MetricSpec::Catalog { resolved, .. } => resolved.phi_jet_rs(r, s, degree),
        }
    }

    /// Jets of the log-derivative pair, when the spec is of that kind.
    pub fn log_derivative_fields(&self) -> Option<(&Arc<dyn ScalarField>, &Arc<dyn ScalarField>)> {
        match self.concrete() {
            MetricSpec::LogDerivative {
                dlnphi_ds,
                dlnphi_dr,
                ..
            } => Some((dlnphi_ds, dlnphi_dr)),
            _ => None,
        }
    }

    /// Evaluate all fallible pieces at `(r, s)` with margin `eps`.
    fn check_point(&self, r: f64, s: f64, eps: f64) -> Result<f64> {
        if let MetricSpec::LogDerivative {
            dlnphi_ds,
            dlnphi_dr,
            ..
        } = self
        {
            dlnphi_ds.value_guarded(r, s, eps)?;
            dlnphi_dr.value_guarded(r, s, eps)?;
        }
        if let MetricSpec::Catalog { resolved, .. } = self {
            return resolved.check_point(r, s, eps);
        }
        self.phi_value_guarded(r, s, eps)
    }

    pub fn to_json(&self) -> Value {
        let branch = |b: f64| if b < 0.0 { "-" } else { "+" };
        match self {
            MetricSpec::ClosedForm { phi } => json!({
                "kind": "expr",
                "phi": phi.expr.to_string(),
                "branch": branch(phi.sigma),
            }),
            MetricSpec::BerwaldFamily { psi, c2, r_base } => json!({
                "kind": "berwald_family",
                "psi": psi.to_string(),
                "c2": c2.to_string(),
                "r_base": r_base,
            }),
            MetricSpec::LogDerivative {
                dlnphi_ds,
                dlnphi_dr,
                c0,
                branch: b,
                ..
            } => {
                let mut v = json!({
                    "kind": "log_derivative",
                    "dlnphi_ds": dlnphi_ds.describe(),
                    "dlnphi_dr": dlnphi_dr.describe(),
                    "branch": branch(*b),
                });
                match c0 {
                    Normalization::Expr(e) => v["c0"] = json!(e.to_string()),
                    Normalization::Anchor { r_ref, phi_ref } => {
                        v["r_ref"] = json!(r_ref);
                        v["phi_ref"] = json!(phi_ref);
                    }
                }
                v
            }
            MetricSpec::Catalog { id, params, .. } => json!({
                "kind": "catalog",
                "id": id,
                "params": params,
            }),
        }
    }

    /// Parse the JSON spec format.
    pub fn from_json(v: &Value) -> Result<MetricSpec> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Spec("metric spec must be a JSON object".into()))?;
        let text = |key: &str| -> Result<&str> {
            obj.get(key)
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Spec(format!("missing string field `{key}`")))
        };
        let branch = match obj.get("branch") {
            None => 1.0,
            Some(b) => parse_branch(b)?,
        };
        match text("kind")? {
            "expr" => MetricSpec::closed_form(text("phi")?, branch),
            "berwald_family" => {
                let mut spec = MetricSpec::berwald_family(text("psi")?, text("c2")?)?;
                if let (Some(rb), MetricSpec::BerwaldFamily { r_base, .. }) =
                    (obj.get("r_base").and_then(Value::as_f64), &mut spec)
                {
                    *r_base = rb;
                }
                Ok(spec)
            }
            "log_derivative" => {
                let ds = ExprField::parse(text("dlnphi_ds")?, branch)?;
                let dr = ExprField::parse(text("dlnphi_dr")?, branch)?;
                let c0 = match obj.get("c0").and_then(Value::as_str) {
                    Some(src) => Normalization::Expr(Expr::parse(src, &["r"])?),
                    None => Normalization::Anchor {
                        r_ref: obj.get("r_ref").and_then(Value::as_f64).unwrap_or(1.0),
                        phi_ref: obj.get("phi_ref").and_then(Value::as_f64).unwrap_or(1.0),
                    },
                };
                let mut spec = MetricSpec::log_derivative(Arc::new(ds), Arc::new(dr), c0, branch);
                if let (Some(t), MetricSpec::LogDerivative { consistency_tol, .. }) =
                    (obj.get("consistency_tol").and_then(Value::as_f64), &mut spec)
                {
                    *consistency_tol = t;
                }
                Ok(spec)
            }
            "catalog" => {
                let mut params: Params = match obj.get("params") {
                    None | Some(Value::Null) => Params::new(),
                    Some(Value::Object(m)) => m.clone().into_iter().collect(),
                    Some(_) => return Err(Error::Spec("`params` must be an object".into())),
                };
                if let Some(b) = obj.get("branch") {
                    params.insert("branch".into(), b.clone());
                }
                Ok(crate::catalog::catalog_get(text("id")?, &params)?.spec)
            }
            other => Err(Error::Spec(format!("unknown kind `{other}`"))),
        }
    }
}

pub(crate) fn parse_branch(v: &Value) -> Result<f64> {
    match v {
        Value::String(s) if s == "+" || s == "+1" => Ok(1.0),
        Value::String(s) if s == "-" || s == "-1" => Ok(-1.0),
        Value::Number(n) if n.as_f64() == Some(1.0) => Ok(1.0),
        Value::Number(n) if n.as_f64() == Some(-1.0) => Ok(-1.0),
        other => Err(Error::InvalidParams(format!("branch must be \"+\" or \"-\", got {other}"))),
    }
}

/// `ln φ(r, s)` for a log-derivative spec.
fn log_phi_value(
    ls: &dyn ScalarField,
    lr: &dyn ScalarField,
    c0: &Normalization,
    r: f64,
    s: f64,
    guard: f64,
) -> Result<f64> {
    let ln_c0 = match c0 {
        Normalization::Expr(e) => {
            let v = e.eval_guarded(&[r], guard)?;
            if !(v > 0.0) {
                return Err(Error::domain(e.to_string(), format!("c0 = {v:e} is not positive")));
            }
            v.ln()
        }
        Normalization::Anchor { r_ref, phi_ref } => {
            if !(*phi_ref > 0.0) {
                return Err(Error::Spec("phi_ref must be positive".into()));
            }
            let tail = if r == *r_ref {
                0.0
            } else {
                gauss_legendre(|rho| lr.value_guarded(rho, 0.0, guard), *r_ref, r, R_PANELS)?
            };
            phi_ref.ln() + tail
        }
    };
    let body = if s == 0.0 {
        0.0
    } else {
        gauss_legendre(|sig| ls.value_guarded(r, sig, guard), 0.0, s, S_PANELS)?
    };
    let v = ln_c0 + body;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::domain(ls.describe(), "ln φ is not finite"))
    }
}

struct BerwaldIntegrals {
    i2: f64,
    g: f64,
    h: f64,
}

impl BerwaldIntegrals {
    fn at(c2: &Expr, rb: f64, r: f64, guard: f64) -> Result<Self> {
        if !(r > 0.0 && rb > 0.0) {
            return Err(Error::domain("r", "radius must be positive"));
        }
        let log_ratio = (r / rb).ln();
        if c2.is_constant() && c2.eval(&[0.0])? == 0.0 {
            return Ok(BerwaldIntegrals {
                i2: 2.0 * log_ratio,
                g: (r / rb).powi(2),
                h: 0.0,
            });
        }
        let c = |rho: f64| c2.eval_guarded(&[rho], guard);
        // ∫ r³ c2, shared by I1 and I2
        let m = |a: f64, b: f64| gauss_legendre(|rho| Ok(rho.powi(3) * c(rho)?), a, b, R_PANELS);
        let g_at = |rho: f64| -> Result<f64> { Ok((rho / rb).powi(2) * (-2.0 * m(rb, rho)?).exp()) };
        let h = gauss_legendre(|rho| Ok(2.0 * rho * c(rho)? * g_at(rho)?), rb, r, R_PANELS)?;
        let m_r = m(rb, r)?;
        Ok(BerwaldIntegrals {
            i2: 2.0 * log_ratio - m_r,
            g: (r / rb).powi(2) * (-2.0 * m_r).exp(),
            h,
        })
    }
}

fn berwald_phi_jet(psi: &Expr, c2: &Expr, rb: f64, r: f64, s: f64, degree: usize) -> Result<Jet> {
    let b = BerwaldIntegrals::at(c2, rb, r, 0.0)?;
    let rj = Jet::var_r(r, s, degree);
    let sj = Jet::var_s(r, s, degree);
    let (g, h, i2) = if degree == 0 {
        (
            Jet::constant(r, s, 0, b.g),
            Jet::constant(r, s, 0, b.h),
            Jet::constant(r, s, 0, b.i2),
        )
    } else {
        let lower = degree - 1;
        let rl = rj.truncate(lower);
        let zero = Jet::zero(r, s, lower);
        let c2j = c2.eval_jet(std::slice::from_ref(&rl))?;
        let r3c2 = &(&(&rl * &rl) * &rl) * &c2j;
        let two_over_r = rl.recip().map_err(|e| Error::domain("r", e.to_string()))?.scale(2.0);
        // g = exp(I1), I1' = 2/r - 2 r^3 c2
        let i1 = Jet::from_gradient(b.g.ln(), &(&two_over_r - &r3c2.scale(2.0)), &zero);
        let g = i1.exp();
        let h = Jet::from_gradient(b.h, &(&(&rl * &c2j) * &g.truncate(lower)).scale(2.0), &zero);
        let i2 = Jet::from_gradient(b.i2, &(&two_over_r - &r3c2), &zero);
        (g, h, i2)
    };
    let s2 = &sj * &sj;
    let t = (&s2).div(&(&g + &(&s2 * &h))).map_err(|e| Error::domain("g + s^2 H", e.to_string()))?;
    let p = psi.eval_jet(std::slice::from_ref(&t))?;
    Ok(&(&p * &(-&i2).exp()) * &sj)
}

/// Outcome of [`domain_check`].
#[derive(Clone, Debug, PartialEq)]
pub enum DomainStatus {
    /// Inside; `margin = (r - |s|) / r`.
    Valid { margin: f64 },
    Invalid(String),
}

impl DomainStatus {
    pub fn is_valid(&self) -> bool {
        matches!(self, DomainStatus::Valid { .. })
    }
}

/// Check that `frame` lies inside `spec`'s admissible domain with margin `eps`.
pub fn domain_check_with(spec: &MetricSpec, frame: &RadialFrame, eps: f64) -> DomainStatus {
    let (r, s) = (frame.r, frame.s);
    if !(frame.u > 0.0) || !(r > 0.0) {
        return DomainStatus::Invalid("zero vector".into());
    }
    if s.abs() >= r * (1.0 - eps) {
        return DomainStatus::Invalid(format!(
            "almost-regular boundary: |s| = {:e} within {eps:e}·r of r = {r:e}",
            s.abs()
        ));
    }
    match spec.check_point(r, s, eps) {
        Ok(phi) if phi > eps => DomainStatus::Valid {
            margin: (r - s.abs()) / r,
        },
        Ok(phi) => DomainStatus::Invalid(format!("φ = {phi:e} is not positive")),
        Err(e) => DomainStatus::Invalid(e.to_string()),
    }
}

pub fn domain_check(spec: &MetricSpec, frame: &RadialFrame) -> DomainStatus {
    domain_check_with(spec, frame, DOMAIN_EPS)
}

/// Jet of `φ` at the frame's `(r, s)`.
pub fn phi_jet(spec: &MetricSpec, frame: &RadialFrame, degree: usize) -> Result<Jet> {
    spec.phi_jet_rs(frame.r, frame.s, degree)
}
