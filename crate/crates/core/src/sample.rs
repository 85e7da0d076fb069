//! Seeded sampling of admissible frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::catalog::catalog_get;
use crate::error::{Error, Result};
use crate::frame::{dot, norm, RadialFrame};
use crate::metric::metric_tensor;
use crate::spec::{domain_check, MetricSpec};

const MAX_TRIES: usize = 20_000;

/// Where frames are drawn from: `r = |x|`, `s / r`, and `u = |y|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Region {
    pub r_range: (f64, f64),
    pub s_frac: (f64, f64),
    pub u_range: (f64, f64),
    /// Redraw frames where `g_ij` is not positive definite.
    pub require_pd: bool,
}

impl Default for Region {
    fn default() -> Self {
        Region {
            r_range: (0.5, 2.0),
            s_frac: (-0.9, 0.9),
            u_range: (0.5, 2.0),
            require_pd: true,
        }
    }
}

impl Region {
    /// The catalog's box for catalog specs, the default box otherwise.
    pub fn for_spec(spec: &MetricSpec) -> Region {
        match spec {
            MetricSpec::Catalog { id, params, .. } => match catalog_get(id, params) {
                Ok(e) => Region {
                    r_range: e.r_range,
                    s_frac: e.s_frac,
                    ..Region::default()
                },
                Err(_) => Region::default(),
            },
            _ => Region::default(),
        }
    }
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let l = norm(&v);
        if l > 1e-3 && l <= 1.0 {
            return v.into_iter().map(|c| c / l).collect();
        }
    }
}

/// Draw `count` frames in dimension `n`: `x` has a uniform direction and
/// uniform `r`; `y` has a uniform direction, redrawn until `s / r` is in the
/// region, the frame is admissible, and `g_ij` is positive definite when the
/// region asks for it.
pub fn sample_frames(spec: &MetricSpec, n: usize, count: usize, seed: u64, region: &Region) -> Result<Vec<RadialFrame>> {
    if n < 2 {
        return Err(Error::Dimension(format!("dimension {n} < 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut tries = 0;
        let frame = loop {
            tries += 1;
            if tries > MAX_TRIES {
                return Err(Error::Degenerate(format!(
                    "no admissible frame after {MAX_TRIES} draws (r in {:?}, s/r in {:?})",
                    region.r_range, region.s_frac
                )));
            }
            let r = rng.random_range(region.r_range.0..=region.r_range.1);
            let u = rng.random_range(region.u_range.0..=region.u_range.1);
            let xh = unit(&mut rng, n);
            let yh = unit(&mut rng, n);
            let t = dot(&xh, &yh);
            if t < region.s_frac.0 || t > region.s_frac.1 {
                continue;
            }
            let x: Vec<f64> = xh.iter().map(|c| c * r).collect();
            let y: Vec<f64> = yh.iter().map(|c| c * u).collect();
            let frame = RadialFrame::new(&x, &y)?;
            if !domain_check(spec, &frame).is_valid() {
                continue;
            }
            match metric_tensor(spec, &frame) {
                Ok(m) if m.positive_definite || !region.require_pd => break frame,
                _ => continue,
            }
        };
        out.push(frame);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::catalog_branch;

    #[test]
    fn deterministic_and_inside() {
        let e = catalog_branch("example_6_2", -1.0).unwrap();
        let region = Region::for_spec(&e.spec);
        assert_eq!(region.r_range, e.r_range);
        let a = sample_frames(&e.spec, 4, 20, 7, &region).unwrap();
        let b = sample_frames(&e.spec, 4, 20, 7, &region).unwrap();
        assert_eq!(a, b);
        for f in &a {
            assert!(e.contains(f));
            assert_eq!(f.n, 4);
        }
        let c = sample_frames(&e.spec, 4, 20, 8, &region).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn impossible_region() {
        let e = catalog_branch("euclidean", 1.0).unwrap();
        let region = Region {
            s_frac: (0.99999, 0.999999),
            ..Region::default()
        };
        assert!(sample_frames(&e.spec, 6, 1, 1, &region).is_err());
    }
}
