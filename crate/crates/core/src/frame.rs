use serde::Serialize;

use crate::error::{Error, Result};

/// Reduced coordinates of an ambient pair `(x, y)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadialFrame {
    pub n: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `|x|`
    pub r: f64,
    /// `|y|`
    pub u: f64,
    /// `<x, y>`
    pub v: f64,
    /// `v / u`
    pub s: f64,
}

impl RadialFrame {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Dimension(format!("x has {} entries, y has {}", x.len(), y.len())));
        }
        if x.len() < 2 {
            return Err(Error::Dimension(format!("dimension {} < 2", x.len())));
        }
        let r = norm(x);
        let u = norm(y);
        if r == 0.0 || u == 0.0 {
            return Err(Error::ZeroVector);
        }
        let v = dot(x, y);
        // Cauchy–Schwarz can fail by an ulp.
        let s = (v / u).clamp(-r, r);
        Ok(RadialFrame {
            n: x.len(),
            x: x.to_vec(),
            y: y.to_vec(),
            r,
            u,
            v,
            s,
        })
    }

    /// `y / |y|`
    pub fn y_hat(&self) -> Vec<f64> {
        self.y.iter().map(|c| c / self.u).collect()
    }
}

/// Same as [`RadialFrame::new`].
pub fn frame_from_ambient(x: &[f64], y: &[f64]) -> Result<RadialFrame> {
    RadialFrame::new(x, y)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduced_coordinates() {
        let f = RadialFrame::new(&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0]).unwrap();
        assert_eq!((f.r, f.u, f.v, f.s), (1.0, 2.0, 0.0, 0.0));
        let f = RadialFrame::new(&[1.0, 0.0, 0.0], &[3.0, 4.0, 0.0]).unwrap();
        assert_eq!((f.r, f.u, f.v), (1.0, 5.0, 3.0));
        assert!((f.s - 0.6).abs() < 1e-16);
    }

    #[test]
    fn rejects_zero_and_mismatch() {
        assert!(matches!(
            RadialFrame::new(&[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0]),
            Err(Error::ZeroVector)
        ));
        assert!(RadialFrame::new(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(RadialFrame::new(&[1.0, 0.0], &[1.0, 0.0, 0.0]).is_err());
    }
}
