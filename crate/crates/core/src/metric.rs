//! Metric tensor and spray coefficients from the jet of `φ`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::frame::RadialFrame;
use crate::jet::Jet;
use crate::spec::{phi_jet, MetricSpec, DEFAULT_DEGREE};

/// Threshold on `|ρ₂| / ρ` below which the analytic inverse is not used.
pub const RHO2_DEGENERATE: f64 = 1e-12;

/// Scalars of the closed-form inverse `g^{ij} = ρ⁻¹(δ − τxx − ηYY)`, `Y = ŷ + λx`.
#[derive(Clone, Debug, Serialize)]
pub struct AnalyticInverse {
    pub epsilon: f64,
    pub delta: f64,
    pub mu: f64,
    pub tau: f64,
    pub lambda: f64,
    /// `Y² = 1 + (λ+ε)s + λεr²`, which is `⟨ŷ + εx, Y⟩`, not `|Y|²`.
    pub y2: f64,
    pub eta: f64,
    /// `Y^i`
    pub y_vec: Vec<f64>,
    /// Max entrywise gap to the direct inverse, relative to its largest entry.
    pub gap_to_direct: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricTensorData {
    pub n: usize,
    pub phi: f64,
    pub phi_s: f64,
    pub phi_ss: f64,
    pub rho: f64,
    pub rho0: f64,
    pub rho1: f64,
    pub rho2: f64,
    /// `None` when `ρ₂` is degenerate (e.g. Riemannian metrics).
    pub analytic: Option<AnalyticInverse>,
    /// Row-major `g_ij`.
    pub g: Vec<f64>,
    /// Row-major `g^{ij}`: analytic when available, direct otherwise.
    pub g_inv: Vec<f64>,
    pub positive_definite: bool,
}

impl MetricTensorData {
    pub fn from_phi(phi: &Jet, frame: &RadialFrame) -> Result<Self> {
        if phi.degree() < 2 {
            return Err(Error::JetDegree {
                need: 2,
                have: phi.degree(),
            });
        }
        let (r, s, n) = (frame.r, frame.s, frame.n);
        let (f, fs, fss) = (phi.value(), phi.d(0, 1), phi.d(0, 2));
        let a = f - s * fs;
        let rho = f * a;
        let rho0 = fs * fs + f * fss;
        let rho1 = a * fs - s * f * fss;
        let rho2 = s * s * f * fss - s * a * fs;
        let x = &frame.x;
        let yh = frame.y_hat();
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let mut v = rho0 * x[i] * x[j] + rho1 * (x[i] * yh[j] + yh[i] * x[j]) + rho2 * yh[i] * yh[j];
                if i == j {
                    v += rho;
                }
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
        }
        let gm = DMatrix::from_row_slice(n, n, &g);
        let positive_definite = gm.clone().cholesky().is_some();
        let direct: Vec<f64> = gm
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("metric tensor is singular".into()))?
            .transpose()
            .as_slice()
            .to_vec();

        let analytic = if rho2.abs() > RHO2_DEGENERATE * rho.abs() && rho != 0.0 {
            let epsilon = rho1 / rho2;
            let delta = (rho0 - epsilon * epsilon * rho2) / rho;
            let mu = rho2 / rho;
            let tau = delta / (1.0 + delta * r * r);
            let lambda = (epsilon - delta * s) / (1.0 + delta * r * r);
            let y2 = 1.0 + (lambda + epsilon) * s + lambda * epsilon * r * r;
            let eta = mu / (1.0 + y2 * mu);
            let y_vec: Vec<f64> = (0..n).map(|i| yh[i] + lambda * x[i]).collect();
            let mut inv = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let d = if i == j { 1.0 } else { 0.0 };
                    inv[i * n + j] = (d - tau * x[i] * x[j] - eta * y_vec[i] * y_vec[j]) / rho;
                    inv[j * n + i] = inv[i * n + j];
                }
            }
            let gap_to_direct = crate::tol::rel_max_diff(&inv, &direct);
            Some((
                AnalyticInverse {
                    epsilon,
                    delta,
                    mu,
                    tau,
                    lambda,
                    y2,
                    eta,
                    y_vec,
                    gap_to_direct,
                },
                inv,
            ))
        } else {
            None
        };
        let (analytic, g_inv) = match analytic {
            Some((a, inv)) => (Some(a), inv),
            None => (None, direct),
        };
        Ok(MetricTensorData {
            n,
            phi: f,
            phi_s: fs,
            phi_ss: fss,
            rho,
            rho0,
            rho1,
            rho2,
            analytic,
            g,
            g_inv,
            positive_definite,
        })
    }

    pub fn g_at(&self, i: usize, j: usize) -> f64 {
        self.g[i * self.n + j]
    }

    /// `g(a, b) = g_ij a^i b^j`
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let n = self.n;
        let mut t = 0.0;
        for i in 0..n {
            for j in 0..n {
                t += self.g[i * n + j] * a[i] * b[j];
            }
        }
        t
    }
}

pub fn metric_tensor(spec: &MetricSpec, frame: &RadialFrame) -> Result<MetricTensorData> {
    MetricTensorData::from_phi(&phi_jet(spec, frame, 2)?, frame)
}

/// `P`, `Q` and the spray `G^i = uP y^i + u²Q x^i`.
#[derive(Clone, Debug)]
pub struct SprayData {
    pub p: f64,
    pub q: f64,
    /// Jets of degree `D - 2`.
    pub p_jet: Jet,
    pub q_jet: Jet,
    /// The jet of `φ` the spray was computed from.
    pub phi_jet: Jet,
    /// `G^i`
    pub g: Vec<f64>,
}

impl SprayData {
    pub fn from_phi(phi: Jet, frame: &RadialFrame) -> Result<Self> {
        let (p_jet, q_jet) = pq_jets(&phi)?;
        let (p, q) = (p_jet.value(), q_jet.value());
        let g = (0..frame.n)
            .map(|i| frame.u * p * frame.y[i] + frame.u * frame.u * q * frame.x[i])
            .collect();
        Ok(SprayData {
            p,
            q,
            p_jet,
            q_jet,
            phi_jet: phi,
            g,
        })
    }

    /// Usable derivative order of the `P`/`Q` jets.
    pub fn degree(&self) -> usize {
        self.p_jet.degree()
    }

    pub(crate) fn require(&self, need: usize) -> Result<()> {
        if self.degree() < need {
            Err(Error::JetDegree {
                need,
                have: self.degree(),
            })
        } else {
            Ok(())
        }
    }
}

/// `P` and `Q` as jets of degree `D - 2` from a `φ` jet of degree `D`.
pub fn pq_jets(phi: &Jet) -> Result<(Jet, Jet)> {
    let d = phi.degree();
    if d < 2 {
        return Err(Error::JetDegree { need: 2, have: d });
    }
    let (r0, s0) = phi.base();
    let k = d - 2;
    let f = phi.truncate(k);
    let fr = phi.diff_r();
    let fs = phi.diff_s();
    let frs = fr.diff_s();
    let fss = fs.diff_s();
    let (fr, fs) = (fr.truncate(k), fs.truncate(k));
    let r = Jet::var_r(r0, s0, k);
    let s = Jet::var_s(r0, s0, k);
    let w = &(&r * &r) - &(&s * &s);
    let den = &(&f - &(&s * &fs)) + &(&w * &fss);
    let scale = f.value().abs().max(fs.value().abs() * r0).max(fss.value().abs() * r0 * r0);
    if !(den.value().abs() > 1e-13 * scale) {
        return Err(Error::Degenerate(format!(
            "strong convexity fails: φ − sφ_s + (r²−s²)φ_ss = {:e}",
            den.value()
        )));
    }
    let num_q = &(&(&s * &frs) + &(&r * &fss)) - &fr;
    let q = num_q
        .div(&(&(&r * &den)).scale(2.0))
        .map_err(|e| Error::domain("Q denominator", e.to_string()))?;
    let inv_f = f.recip().map_err(|e| Error::domain("φ", e.to_string()))?;
    let a = &(&s * &f) + &(&w * &fs);
    let b = &(&s * &fr) + &(&r * &fs);
    let inv_2r = r.recip().map_err(|e| Error::domain("r", e.to_string()))?.scale(0.5);
    let p = &(-&(&(&a * &q) * &inv_f)) + &(&(&b * &inv_2r) * &inv_f);
    Ok((p, q))
}

/// Spray from a spec at the default jet degree.
pub fn spray_pq(spec: &MetricSpec, frame: &RadialFrame) -> Result<SprayData> {
    spray_pq_with_degree(spec, frame, DEFAULT_DEGREE)
}

pub fn spray_pq_with_degree(spec: &MetricSpec, frame: &RadialFrame, degree: usize) -> Result<SprayData> {
    SprayData::from_phi(phi_jet(spec, frame, degree)?, frame)
}

/// `F(x, y) = u φ(r, s)`
pub fn finsler_norm(spec: &MetricSpec, frame: &RadialFrame) -> Result<f64> {
    Ok(frame.u * spec.phi_value(frame.r, frame.s)?)
}

/// `F_{y^j} = (φ − sφ_s) ŷ_j + φ_s x_j`
pub fn f_y(phi: &Jet, frame: &RadialFrame) -> Vec<f64> {
    let (f, fs) = (phi.value(), phi.d(0, 1));
    let a = f - frame.s * fs;
    (0..frame.n)
        .map(|j| a * frame.y[j] / frame.u + fs * frame.x[j])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame3(x: [f64; 3], y: [f64; 3]) -> RadialFrame {
        RadialFrame::new(&x, &y).unwrap()
    }

    #[test]
    fn euclidean_metric() {
        let spec = MetricSpec::closed_form("1", 1.0).unwrap();
        let m = metric_tensor(&spec, &frame3([1.0, 0.2, 0.0], [0.3, 1.0, -0.5])).unwrap();
        assert_eq!((m.rho, m.rho0, m.rho1, m.rho2), (1.0, 0.0, 0.0, 0.0));
        assert!(m.analytic.is_none());
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.g_at(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn riemannian_sqrt_metric() {
        let spec = MetricSpec::closed_form("sqrt(s^2+1)", 1.0).unwrap();
        let fr = frame3([0.7, -0.4, 0.9], [0.3, 1.0, -0.5]);
        let m = metric_tensor(&spec, &fr).unwrap();
        assert!((m.rho - 1.0).abs() < 1e-15);
        assert!((m.rho0 - 1.0).abs() < 1e-15);
        assert!(m.rho1.abs() < 1e-15 && m.rho2.abs() < 1e-15);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 } + fr.x[i] * fr.x[j];
                assert!((m.g_at(i, j) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn flat_spray() {
        let spec = MetricSpec::closed_form("1", 1.0).unwrap();
        let sp = spray_pq(&spec, &frame3([1.0, 0.0, 0.0], [0.2, 1.0, 0.0])).unwrap();
        assert_eq!((sp.p, sp.q), (0.0, 0.0));
        assert!(sp.g.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn randers_like_metric_inverse() {
        // φ = sqrt(1 + s^2) + 0.3 s has ρ₂ ≠ 0
        let spec = MetricSpec::closed_form("sqrt(1 + s^2) + 0.3*s", 1.0).unwrap();
        let fr = frame3([0.6, 0.5, -0.2], [0.1, 1.0, 0.4]);
        let m = metric_tensor(&spec, &fr).unwrap();
        let a = m.analytic.as_ref().expect("ρ₂ should be nonzero");
        assert!(a.gap_to_direct < 1e-12, "gap {}", a.gap_to_direct);
        assert!(m.positive_definite);
        assert!((a.epsilon + 1.0 / fr.s).abs() < 1e-10 * a.epsilon.abs());
    }
}
