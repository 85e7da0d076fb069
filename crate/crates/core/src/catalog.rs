//! Named metrics with their sampling domains and expected classifications.

use std::sync::Arc;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::spec::{domain_check, parse_branch, ExprField, MetricSpec, Normalization, Params};
use crate::frame::RadialFrame;

pub const CATALOG_IDS: [&str; 8] = [
    "euclidean",
    "riemannian_quadratic",
    "berwald_family",
    "unicorn_candidate",
    "example_6_1",
    "example_6_2",
    "example_6_4",
    "example_6_5",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Expected {
    pub berwald: Option<bool>,
    pub landsberg: Option<bool>,
    /// Constant flag curvature, when the metric has one.
    pub k: Option<f64>,
    pub einstein: Option<bool>,
}

#[derive(Clone, Debug)]
pub struct CatalogEntry {
    pub id: String,
    /// A [`MetricSpec::Catalog`] wrapping the concrete spec.
    pub spec: MetricSpec,
    pub r_range: (f64, f64),
    /// Range of `s / r` used for sampling.
    pub s_frac: (f64, f64),
    pub expected: Expected,
    pub note: &'static str,
}

impl CatalogEntry {
    /// Whether `(r, s)` is in the sampling box and the spec's domain.
    pub fn contains(&self, frame: &RadialFrame) -> bool {
        let t = frame.s / frame.r;
        frame.r >= self.r_range.0
            && frame.r <= self.r_range.1
            && t >= self.s_frac.0
            && t <= self.s_frac.1
            && domain_check(&self.spec, frame).is_valid()
    }
}

pub fn catalog_ids() -> &'static [&'static str] {
    &CATALOG_IDS
}

fn param_f64(params: &Params, key: &str, default: f64) -> Result<f64> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(Value::Number(n)) => n
            .as_f64()
            .ok_or_else(|| Error::InvalidParams(format!("`{key}` is not a finite number"))),
        Some(Value::String(s)) => s
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParams(format!("`{key}` must be a number, got {s:?}"))),
        Some(other) => Err(Error::InvalidParams(format!("`{key}` must be a number, got {other}"))),
    }
}

/// A coefficient given as a number or an expression in `r`, as source text.
fn param_expr(params: &Params, key: &str, default: &str) -> Result<String> {
    let src = match params.get(key) {
        None | Some(Value::Null) => default.to_string(),
        Some(Value::Number(n)) => n.to_string(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => {
            return Err(Error::InvalidParams(format!(
                "`{key}` must be a number or an expression in r, got {other}"
            )))
        }
    };
    Expr::parse(&src, &["r"]).map_err(|e| Error::InvalidParams(format!("`{key}`: {e}")))?;
    Ok(src)
}

fn param_branch(params: &Params) -> Result<f64> {
    params.get("branch").map_or(Ok(1.0), parse_branch)
}

fn check_keys(id: &str, params: &Params, allowed: &[&str]) -> Result<()> {
    match params.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(Error::InvalidParams(format!("`{id}` does not take parameter `{k}`"))),
        None => Ok(()),
    }
}

fn log_derivative(ds: &str, dr: &str, c0: Normalization, sigma: f64) -> Result<MetricSpec> {
    Ok(MetricSpec::log_derivative(
        Arc::new(ExprField::parse(ds, sigma)?),
        Arc::new(ExprField::parse(dr, sigma)?),
        c0,
        sigma,
    ))
}

const A61: &str = "sqrt(r*(r + 4*r^2 - 4*s^2))";
const R64: &str = "sqrt((1 + 4*r^2)/(1 + 4*r^2 - 4*s^2))";

fn example_6_1(sigma: f64) -> Result<MetricSpec> {
    let den = format!("(r + 4*r^2 - 4*s^2)*(sigma*2*r*s + (1 + 2*r)*{A61})");
    let ds = format!("(sigma*4*r*(r + 4*r^2 - 2*s^2) - 4*s*(1 + 2*r)*{A61})/({den})");
    let dr = format!(
        "(2*{A61}*(s^2 + 8*r^2*s^2 + 14*r*s^2 + 8*r^4 - 2*r^3 - r^2) \
         - sigma*4*(5*r^3*s + 20*r^4*s - 12*r^2*s^3 + r*s^3))/(r*(1 + 4*r)*{den})"
    );
    let c0 = Expr::parse("(2*r + 1)^2/(4*r + 1)^(3/2)", &["r"])?;
    log_derivative(&ds, &dr, Normalization::Expr(c0), sigma)
}

fn example_6_2(sigma: f64) -> Result<MetricSpec> {
    let phi2 = format!(
        "1/(4*r + 1) + sigma*4*{A61}*s/(r*(2*r + 1)*(4*r + 1)^2) \
         - 4*(4*r^2 + 3*r + 1)*s^2/(r*(2*r + 1)^2*(4*r + 1)^2)"
    );
    MetricSpec::closed_form(&format!("sqrt({phi2})"), sigma)
}

fn example_6_4(sigma: f64) -> Result<MetricSpec> {
    let den = format!(
        "((16*r^4 + 8*r^2 - 32*r^2*s^2 + 16*s^4 - 8*s^2 + 1)*{R64} + sigma*(8*r^2*s - 8*s^3 + 2*s))"
    );
    let ds = format!("4*(sigma*(4*r^2 - 2*s^2 + 1) - (4*r^2*s - 4*s^3 + s)*{R64})/{den}");
    let dr = format!(
        "8*r*((16*r^4 + 8*r^2 - 24*r^2*s^2 + 8*s^4 - 6*s^2 + 1)*{R64} \
         + sigma*(4*s^3 - 8*r^2*s - 2*s))/((1 + 4*r^2)*{den})"
    );
    let c0 = Expr::parse("1 + 4*r^2", &["r"])?;
    log_derivative(&ds, &dr, Normalization::Expr(c0), sigma)
}

fn example_6_5(sigma: f64) -> Result<MetricSpec> {
    let phi2 = "(16*r^4 + 8*r^2 - 16*r^2*s^2 + 1 + sigma*4*s*sqrt((1 + 4*r^2)*(1 + 4*r^2 - 4*s^2)))/(1 + 4*r^2)^2";
    MetricSpec::closed_form(&format!("sqrt({phi2})"), sigma)
}

/// Landsberg candidate with the pair of log-derivatives; `q0` is the
/// coefficient of `Q`.
fn unicorn(q0: &str, c1: &str, c2: &str, c3: &str, sigma: f64) -> Result<MetricSpec> {
    let (c0, c1, c2, c3) = (format!("({q0})"), format!("({c1})"), format!("({c2})"), format!("({c3})"));
    let root = "sigma*sqrt(r^2 - s^2)";
    let den = format!("(r^2 + ({c1} + 2*{c3})*r^2*s^2 - 2*{c3}*r^4 + 2*{c2}*s*{root})");
    let ds = format!("(({c1} + 2*{c3})*r^2*s + 2*{c2}*{root})/{den}");
    let dr = format!(
        "(s*{root}*(2*{c0}*{c2}*r^4 + 4*({c1} + {c3})*{c2}*r^2 - 2*{c2}) \
         + {c0}*{c1}*r^6*s^2 + ({c0} + 4*{c1}*{c3} + 2*{c1}^2)*r^4*s^2 - 2*{c1}*{c3}*r^6 + {c1}*r^4)/(r*{den})"
    );
    log_derivative(&ds, &dr, Normalization::Anchor { r_ref: 1.0, phi_ref: 1.0 }, sigma)
}

pub fn catalog_get(id: &str, params: &Params) -> Result<CatalogEntry> {
    let default_r = (0.5, 2.0);
    let (spec, r_range, s_frac, expected, note) = match id {
        "euclidean" => {
            check_keys(id, params, &["branch"])?;
            (
                MetricSpec::closed_form("1", 1.0)?,
                default_r,
                (-0.9, 0.9),
                Expected {
                    berwald: Some(true),
                    landsberg: Some(true),
                    k: Some(0.0),
                    einstein: Some(true),
                },
                "flat metric, F = |y|",
            )
        }
        "riemannian_quadratic" => {
            check_keys(id, params, &["c1", "c2", "branch"])?;
            let c1 = param_f64(params, "c1", 1.0)?;
            let c2 = param_f64(params, "c2", 0.5)?;
            if !(c2 > 0.0 && c1 + 2.0 * c2 > 0.0) {
                return Err(Error::InvalidParams(
                    "riemannian_quadratic needs c2 > 0 and c1 + 2 c2 > 0".into(),
                ));
            }
            (
                MetricSpec::closed_form(&format!("sqrt({c1:?}*s^2 + 2*{c2:?})"), 1.0)?,
                default_r,
                (-0.9, 0.9),
                Expected {
                    berwald: Some(true),
                    landsberg: Some(true),
                    k: None,
                    einstein: None,
                },
                "Riemannian metric sqrt(c1 s^2 + 2 c2) with constant coefficients",
            )
        }
        "berwald_family" => {
            check_keys(id, params, &["psi", "c2", "r_base", "branch"])?;
            let psi = match params.get("psi") {
                None => "(1 + t^2)^(1/4)/sqrt(t)".to_string(),
                Some(Value::String(s)) => s.clone(),
                Some(Value::Number(n)) => n.to_string(),
                Some(other) => return Err(Error::InvalidParams(format!("`psi` must be an expression in t, got {other}"))),
            };
            let c2 = param_expr(params, "c2", "0")?;
            let mut spec = MetricSpec::berwald_family(&psi, &c2)
                .map_err(|e| Error::InvalidParams(format!("berwald_family: {e}")))?;
            if let MetricSpec::BerwaldFamily { r_base, .. } = &mut spec {
                *r_base = param_f64(params, "r_base", 1.0)?;
                if !(*r_base > 0.0) {
                    return Err(Error::InvalidParams("`r_base` must be positive".into()));
                }
            }
            (
                spec,
                default_r,
                (0.2, 0.9),
                Expected {
                    berwald: Some(true),
                    landsberg: Some(true),
                    k: None,
                    einstein: None,
                },
                "non-Riemannian Berwald metrics psi(s^2/(g + s^2 H)) exp(-I2) s",
            )
        }
        "unicorn_candidate" => {
            check_keys(id, params, &["c0", "c1", "c2", "c3", "branch"])?;
            let sigma = param_branch(params)?;
            let q0 = param_expr(params, "c0", "0")?;
            let c1 = param_expr(params, "c1", "0")?;
            let c2 = param_expr(params, "c2", "1")?;
            let c3 = param_expr(params, "c3", "0")?;
            // the denominator r^2 + 2 c2 s sigma sqrt(r^2 - s^2) vanishes at s/r = -sign(c2 sigma)/sqrt(2)
            let c2_at_1 = Expr::parse(&c2, &["r"])?.eval(&[1.0])?;
            let s_frac = if c2_at_1 * sigma >= 0.0 { (-0.6, 0.9) } else { (-0.9, 0.6) };
            (
                unicorn(&q0, &c1, &c2, &c3, sigma)?,
                default_r,
                s_frac,
                Expected {
                    berwald: Some(false),
                    landsberg: Some(true),
                    k: None,
                    einstein: None,
                },
                "almost regular Landsberg metric that is not Berwald, from the log-derivative pair",
            )
        }
        "example_6_1" | "example_6_2" | "example_6_4" | "example_6_5" => {
            check_keys(id, params, &["branch"])?;
            let sigma = param_branch(params)?;
            let (spec, k, note) = match id {
                "example_6_1" => (example_6_1(sigma)?, 0.0, "vanishing flag curvature, c1 = -1/r"),
                "example_6_2" => (example_6_2(sigma)?, -1.0, "flag curvature -1, c1 = -1/r"),
                "example_6_4" => (example_6_4(sigma)?, 0.0, "vanishing flag curvature, c1 = -2"),
                _ => (example_6_5(sigma)?, -1.0, "flag curvature -1, c1 = -2"),
            };
            (
                spec,
                default_r,
                (-0.9, 0.9),
                Expected {
                    berwald: Some(false),
                    landsberg: None,
                    k: Some(k),
                    einstein: Some(true),
                },
                note,
            )
        }
        other => return Err(Error::UnknownCatalog(other.to_string())),
    };
    Ok(CatalogEntry {
        id: id.to_string(),
        spec: MetricSpec::Catalog {
            id: id.to_string(),
            params: params.clone(),
            resolved: Box::new(spec),
        },
        r_range,
        s_frac,
        expected,
        note,
    })
}

/// Shorthand for an entry with only a branch parameter.
pub fn catalog_branch(id: &str, sigma: f64) -> Result<CatalogEntry> {
    let mut p = Params::new();
    p.insert("branch".into(), Value::String(if sigma < 0.0 { "-" } else { "+" }.into()));
    catalog_get(id, &p)
}
