//! Truncated bivariate Taylor jets in (r, s).
//!
//! A [`Jet`] of total degree `D` at base point `(r0, s0)` stores the Taylor
//! coefficients `∂^{i+j} f / ∂r^i ∂s^j / (i! j!)` for all `i + j <= D`, in a
//! dense triangular layout ordered by total degree. Arithmetic truncates at
//! `D`, so composite expressions carry exact derivatives up to that order.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// Failure of a jet operation whose constant term is outside the operation's domain.
#[derive(Clone, Debug, PartialEq)]
pub struct JetDomainError {
    pub op: &'static str,
    pub value: f64,
}

impl fmt::Display for JetDomainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} undefined at constant term {:e}", self.op, self.value)
    }
}

impl std::error::Error for JetDomainError {}

/// Number of coefficients of a bivariate jet of total degree `degree`.
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

#[inline]
fn idx(i: usize, j: usize) -> usize {
    let k = i + j;
    k * (k + 1) / 2 + j
}

fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, x| acc * x as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    let mut b = 1.0;
    for t in 0..k {
        b = b * (n - t) as f64 / (t + 1) as f64;
    }
    b
}

#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    r0: f64,
    s0: f64,
    degree: usize,
    coeffs: Vec<f64>,
}

impl Jet {
    pub fn zero(r0: f64, s0: f64, degree: usize) -> Self {
        Jet {
            r0,
            s0,
            degree,
            coeffs: vec![0.0; coeff_count(degree)],
        }
    }

    pub fn constant(r0: f64, s0: f64, degree: usize, value: f64) -> Self {
        let mut j = Self::zero(r0, s0, degree);
        j.coeffs[0] = value;
        j
    }

    /// The coordinate function `r` expanded at `(r0, s0)`.
    pub fn var_r(r0: f64, s0: f64, degree: usize) -> Self {
        let mut j = Self::constant(r0, s0, degree, r0);
        if degree >= 1 {
            j.coeffs[idx(1, 0)] = 1.0;
        }
        j
    }

    /// The coordinate function `s` expanded at `(r0, s0)`.
    pub fn var_s(r0: f64, s0: f64, degree: usize) -> Self {
        let mut j = Self::constant(r0, s0, degree, s0);
        if degree >= 1 {
            j.coeffs[idx(0, 1)] = 1.0;
        }
        j
    }

    /// Build a jet from raw Taylor coefficients in the triangular layout.
    pub fn from_coeffs(r0: f64, s0: f64, degree: usize, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), coeff_count(degree), "coefficient count mismatch");
        Jet {
            r0,
            s0,
            degree,
            coeffs,
        }
    }

    /// A jet that agrees with `self` in value and whose first partials are `d_r`, `d_s`.
    ///
    /// The result has degree `min(d_r.degree, d_s.degree) + 1`. Only
    /// `d_r(i, 0)` and `d_s(i, j)` are read, so consistency of the mixed
    /// partials is the caller's responsibility.
    pub fn from_gradient(value: f64, d_r: &Jet, d_s: &Jet) -> Self {
        let degree = d_r.degree.min(d_s.degree) + 1;
        let mut out = Self::constant(d_s.r0, d_s.s0, degree, value);
        for i in 0..=degree {
            for j in 0..=degree - i {
                if i + j == 0 {
                    continue;
                }
                out.coeffs[idx(i, j)] = if j >= 1 {
                    d_s.coeff(i, j - 1) / j as f64
                } else {
                    d_r.coeff(i - 1, 0) / i as f64
                };
            }
        }
        out
    }

    pub fn base(&self) -> (f64, f64) {
        (self.r0, self.s0)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    /// Taylor coefficient of `dr^i ds^j`; zero beyond the stored degree.
    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        if i + j > self.degree {
            0.0
        } else {
            self.coeffs[idx(i, j)]
        }
    }

    /// The partial derivative `∂^{i+j} / ∂r^i ∂s^j` at the base point.
    ///
    /// Returns `None` when `i + j` exceeds the stored degree.
    pub fn partial(&self, i: usize, j: usize) -> Option<f64> {
        (i + j <= self.degree).then(|| self.coeffs[idx(i, j)] * factorial(i) * factorial(j))
    }

    /// Partial derivative, panicking when the jet is too shallow.
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.partial(i, j)
            .unwrap_or_else(|| panic!("jet of degree {} has no ({i},{j}) partial", self.degree))
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    /// Evaluate the truncated polynomial at offset `(dr, ds)` from the base point.
    pub fn eval_offset(&self, dr: f64, ds: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..=self.degree {
            for j in 0..=self.degree - i {
                total += self.coeffs[idx(i, j)] * dr.powi(i as i32) * ds.powi(j as i32);
            }
        }
        total
    }

    pub fn truncate(&self, degree: usize) -> Jet {
        assert!(degree <= self.degree, "cannot raise degree by truncation");
        Jet {
            r0: self.r0,
            s0: self.s0,
            degree,
            coeffs: self.coeffs[..coeff_count(degree)].to_vec(),
        }
    }

    /// `∂/∂r`, one degree lower.
    ///
    /// # Panics
    /// If the jet has degree 0.
    pub fn diff_r(&self) -> Jet {
        assert!(self.degree >= 1, "diff_r of a degree-0 jet");
        let d = self.degree - 1;
        let mut out = Jet::zero(self.r0, self.s0, d);
        for i in 0..=d {
            for j in 0..=d - i {
                out.coeffs[idx(i, j)] = (i + 1) as f64 * self.coeffs[idx(i + 1, j)];
            }
        }
        out
    }

    /// `∂/∂s`, one degree lower.
    ///
    /// # Panics
    /// If the jet has degree 0.
    pub fn diff_s(&self) -> Jet {
        assert!(self.degree >= 1, "diff_s of a degree-0 jet");
        let d = self.degree - 1;
        let mut out = Jet::zero(self.r0, self.s0, d);
        for i in 0..=d {
            for j in 0..=d - i {
                out.coeffs[idx(i, j)] = (j + 1) as f64 * self.coeffs[idx(i, j + 1)];
            }
        }
        out
    }

    /// Re-expand about `s0 + ds`, keeping the degree.
    ///
    /// Exact for polynomials; for a truncated series the error in the
    /// `(i, j)` coefficient is of order `ds^(D - i - j + 1)`.
    pub fn shift_s(&self, ds: f64) -> Jet {
        let d = self.degree;
        let mut out = Jet::zero(self.r0, self.s0 + ds, d);
        for i in 0..=d {
            for j in 0..=d - i {
                let mut acc = 0.0;
                for k in j..=d - i {
                    acc += self.coeffs[idx(i, k)] * binomial(k, j) * ds.powi((k - j) as i32);
                }
                out.coeffs[idx(i, j)] = acc;
            }
        }
        out
    }

    /// Divide by `s` a jet based at `s0 = 0` whose `s`-free part vanishes.
    ///
    /// The `s^0` column is discarded, so the result has degree `D - 1`.
    pub fn div_s_at_zero(&self) -> Jet {
        assert!(self.s0 == 0.0, "div_s_at_zero needs a jet based on s = 0");
        assert!(self.degree >= 1, "div_s_at_zero of a degree-0 jet");
        let d = self.degree - 1;
        let mut out = Jet::zero(self.r0, 0.0, d);
        for i in 0..=d {
            for j in 0..=d - i {
                out.coeffs[idx(i, j)] = self.coeffs[idx(i, j + 1)];
            }
        }
        out
    }

    pub fn scale(&self, k: f64) -> Jet {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= k);
        out
    }

    pub fn add_const(&self, k: f64) -> Jet {
        let mut out = self.clone();
        out.coeffs[0] += k;
        out
    }

    /// `f(self)` given the derivatives `f^(k)(a0)` for `k = 0..=D` at the constant term `a0`.
    pub fn compose(&self, derivs: &[f64]) -> Jet {
        let d = self.degree;
        assert!(derivs.len() > d, "compose needs {} derivatives", d + 1);
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        // Horner in h = self - a0; h^k vanishes past degree D.
        let mut out = Jet::constant(self.r0, self.s0, d, derivs[d] / factorial(d));
        for k in (0..d).rev() {
            out = &out * &h;
            out.coeffs[0] += derivs[k] / factorial(k);
        }
        out
    }

    pub fn recip(&self) -> Result<Jet, JetDomainError> {
        let a = self.value();
        if a == 0.0 || !a.is_finite() {
            return Err(JetDomainError { op: "division", value: a });
        }
        let mut derivs = Vec::with_capacity(self.degree + 1);
        let mut f = 1.0 / a;
        for k in 0..=self.degree {
            derivs.push(f);
            f *= -((k + 1) as f64) / a;
        }
        Ok(self.compose(&derivs))
    }

    pub fn div(&self, other: &Jet) -> Result<Jet, JetDomainError> {
        Ok(self * &other.recip()?)
    }

    pub fn sqrt(&self) -> Result<Jet, JetDomainError> {
        let a = self.value();
        if !(a > 0.0) || !a.is_finite() {
            return Err(JetDomainError { op: "sqrt", value: a });
        }
        Ok(self.compose(&power_derivs(a, 0.5, self.degree)))
    }

    pub fn exp(&self) -> Jet {
        let e = self.value().exp();
        self.compose(&vec![e; self.degree + 1])
    }

    pub fn ln(&self) -> Result<Jet, JetDomainError> {
        let a = self.value();
        if !(a > 0.0) || !a.is_finite() {
            return Err(JetDomainError { op: "ln", value: a });
        }
        let mut derivs = vec![a.ln()];
        let mut f = 1.0 / a;
        for k in 1..=self.degree {
            derivs.push(f);
            f *= -(k as f64) / a;
        }
        Ok(self.compose(&derivs))
    }

    pub fn powi(&self, n: i32) -> Result<Jet, JetDomainError> {
        if n < 0 {
            return self.recip()?.powi(-n);
        }
        let mut out = Jet::constant(self.r0, self.s0, self.degree, 1.0);
        let mut base = self.clone();
        let mut e = n as u32;
        while e > 0 {
            if e & 1 == 1 {
                out = &out * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        Ok(out)
    }

    /// `self^p`. Integer exponents allow any nonzero (or, for `p >= 0`, any) base;
    /// other exponents need a positive constant term.
    pub fn powf(&self, p: f64) -> Result<Jet, JetDomainError> {
        if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
            return self.powi(p as i32);
        }
        let a = self.value();
        if !(a > 0.0) || !a.is_finite() {
            return Err(JetDomainError { op: "pow", value: a });
        }
        Ok(self.compose(&power_derivs(a, p, self.degree)))
    }

    fn zip_with(&self, other: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        debug_assert!(
            self.r0 == other.r0 && self.s0 == other.s0,
            "jets at different base points"
        );
        let degree = self.degree.min(other.degree);
        let n = coeff_count(degree);
        let coeffs = self.coeffs[..n]
            .iter()
            .zip(&other.coeffs[..n])
            .map(|(a, b)| f(*a, *b))
            .collect();
        Jet {
            r0: self.r0,
            s0: self.s0,
            degree,
            coeffs,
        }
    }
}

fn power_derivs(a: f64, p: f64, degree: usize) -> Vec<f64> {
    let mut derivs = Vec::with_capacity(degree + 1);
    let mut falling = 1.0;
    for k in 0..=degree {
        derivs.push(falling * a.powf(p - k as f64));
        falling *= p - k as f64;
    }
    derivs
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, rhs: &Jet) -> Jet {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, rhs: &Jet) -> Jet {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, rhs: &Jet) -> Jet {
        debug_assert!(
            self.r0 == rhs.r0 && self.s0 == rhs.s0,
            "jets at different base points"
        );
        let d = self.degree.min(rhs.degree);
        let mut out = Jet::zero(self.r0, self.s0, d);
        for p in 0..=d {
            for q in 0..=d - p {
                let a = self.coeffs[idx(p, q)];
                if a == 0.0 {
                    continue;
                }
                for i in 0..=d - p - q {
                    for j in 0..=d - p - q - i {
                        out.coeffs[idx(p + i, q + j)] += a * rhs.coeffs[idx(i, j)];
                    }
                }
            }
        }
        out
    }
}

macro_rules! forward_owned {
    ($tr:ident, $m:ident) => {
        impl $tr for Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                (&self).$m(&rhs)
            }
        }
        impl $tr<&Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet {
                (&self).$m(rhs)
            }
        }
        impl $tr<Jet> for &Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                self.$m(&rhs)
            }
        }
    };
}

forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}
