//! One-dimensional quadrature.
//!
//! [`integrate`] is adaptive Simpson with local Richardson correction.
//! [`gauss_legendre`] is a fixed composite rule: its result is a smooth
//! function of the endpoints and of any parameters inside the integrand,
//! which matters when the integral is itself differentiated numerically.

use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_PANELS: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuadratureResult {
    pub value: f64,
    pub error: f64,
    pub subdivisions: usize,
}

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn integrate(f: impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<QuadratureResult> {
    let mut f = f;
    try_integrate(|x| Ok(f(x)), a, b, tol)
}

/// [`integrate`] for integrands that can fail; the first error aborts.
pub fn try_integrate(
    mut f: impl FnMut(f64) -> Result<f64>,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<QuadratureResult> {
    assert!(tol > 0.0, "tolerance must be positive");
    if a == b {
        return Ok(QuadratureResult {
            value: 0.0,
            error: 0.0,
            subdivisions: 0,
        });
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);

    struct Panel {
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    }

    let mut stack = vec![Panel {
        a,
        b,
        fa,
        fm,
        fb,
        whole,
        tol,
        depth: 0,
    }];
    let (mut value, mut error, mut panels) = (0.0, 0.0, 1usize);
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let lm = 0.5 * (p.a + m);
        let rm = 0.5 * (m + p.b);
        let flm = f(lm)?;
        let frm = f(rm)?;
        let left = (m - p.a) / 6.0 * (p.fa + 4.0 * flm + p.fm);
        let right = (p.b - m) / 6.0 * (p.fm + 4.0 * frm + p.fb);
        let delta = left + right - p.whole;
        let est = delta.abs() / 15.0;
        if est <= p.tol || p.depth >= 60 || m == p.a || m == p.b {
            value += left + right + delta / 15.0;
            error += est;
            continue;
        }
        panels += 1;
        if panels > MAX_PANELS {
            return Err(Error::Quadrature {
                a,
                b,
                panels,
                estimate: est,
            });
        }
        let depth = p.depth + 1;
        stack.push(Panel {
            a: m,
            b: p.b,
            fa: p.fm,
            fm: frm,
            fb: p.fb,
            whole: right,
            tol: 0.5 * p.tol,
            depth,
        });
        stack.push(Panel {
            a: p.a,
            b: m,
            fa: p.fa,
            fm: flm,
            fb: p.fm,
            whole: left,
            tol: 0.5 * p.tol,
            depth,
        });
    }
    // Panels accepted at the depth limit may carry estimates above their share.
    if !(error <= tol) || !value.is_finite() {
        return Err(Error::Quadrature {
            a,
            b,
            panels,
            estimate: error,
        });
    }
    Ok(QuadratureResult {
        value,
        error,
        subdivisions: panels,
    })
}

/// Nodes and weights of the `GL_ORDER`-point Gauss–Legendre rule on `[-1, 1]`.
pub const GL_ORDER: usize = 20;

fn gl_rule() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| legendre_rule(GL_ORDER))
}

fn legendre_rule(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Newton on P_n from the Chebyshev-like initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Composite Gauss–Legendre over `panels` equal sub-intervals of `[a, b]`.
pub fn gauss_legendre(
    mut f: impl FnMut(f64) -> Result<f64>,
    a: f64,
    b: f64,
    panels: usize,
) -> Result<f64> {
    let rule = gl_rule();
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let c = a + (p as f64 + 0.5) * h;
        let mut acc = 0.0;
        for &(x, w) in rule {
            acc += w * f(c + 0.5 * h * x)?;
        }
        total += 0.5 * h * acc;
    }
    Ok(total)
}
