//! Probability distribution map: an averaged mixture of bivariate Gaussians.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erf;

use crate::geom::{Point, Rect};
use crate::integrate::{integrate_polygon, DEFAULT_MAX_DEPTH, DEFAULT_REL_TOL};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PdmError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed PDM record at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Symmetric 2x2 covariance in m².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance {
    pub xx: f64,
    pub yy: f64,
    pub xy: f64,
}

impl Covariance {
    pub const fn diag(xx: f64, yy: f64) -> Self {
        Self { xx, yy, xy: 0.0 }
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn is_spd(&self) -> bool {
        self.xx.is_finite() && self.yy.is_finite() && self.xy.is_finite() && self.det() > 0.0 && self.trace() > 0.0
    }

    pub fn is_diagonal(&self) -> bool {
        self.xy == 0.0
    }

    /// Squared Mahalanobis length of `d`.
    pub fn mahalanobis2(&self, d: &Point) -> f64 {
        let det = self.det();
        (self.yy * d.x * d.x - 2.0 * self.xy * d.x * d.y + self.xx * d.y * d.y) / det
    }
}

/// One bivariate normal component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianComponent {
    pub mu: Point,
    pub sigma: Covariance,
}

impl GaussianComponent {
    pub fn new(mu: Point, sigma: Covariance) -> Result<Self, PdmError> {
        if !sigma.is_spd() {
            return Err(PdmError::InvalidParameter(format!("covariance {sigma:?} is not SPD")));
        }
        if !mu.is_finite() {
            return Err(PdmError::InvalidParameter(format!("non-finite mean {mu:?}")));
        }
        Ok(Self { mu, sigma })
    }

    pub fn density(&self, q: &Point) -> f64 {
        let m2 = self.sigma.mahalanobis2(&q.sub(&self.mu));
        (-0.5 * m2).exp() / (4.0 * PI * PI * self.sigma.det()).sqrt()
    }

    /// Mass inside `rect`; only exact for diagonal covariance.
    fn diag_rect_mass(&self, rect: &Rect) -> f64 {
        let axis = |lo: f64, hi: f64, mu: f64, var: f64| {
            let s = (2.0 * var).sqrt();
            0.5 * (erf((hi - mu) / s) - erf((lo - mu) / s))
        };
        axis(rect.x_min, rect.x_max, self.mu.x, self.sigma.xx)
            * axis(rect.y_min, rect.y_max, self.mu.y, self.sigma.yy)
    }
}

/// Averaged Gaussian mixture over a rectangular search domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Pdm {
    components: Vec<GaussianComponent>,
    domain: Rect,
}

impl Pdm {
    pub fn new(components: Vec<GaussianComponent>, domain: Rect) -> Result<Self, PdmError> {
        if components.is_empty() {
            return Err(PdmError::InvalidParameter("PDM needs at least one component".into()));
        }
        Ok(Self { components, domain })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn domain(&self) -> &Rect {
        &self.domain
    }

    /// Pointwise density in m⁻²; averages the components.
    pub fn density(&self, q: &Point) -> f64 {
        let s: f64 = self.components.iter().map(|c| c.density(q)).sum();
        s / self.components.len() as f64
    }

    /// Probability mass inside `rect`.
    ///
    /// Closed form through `erf` when every covariance is diagonal, adaptive
    /// cubature otherwise.
    pub fn rectangle_mass(&self, rect: &Rect) -> f64 {
        if self.components.iter().all(|c| c.sigma.is_diagonal()) {
            let s: f64 = self.components.iter().map(|c| c.diag_rect_mass(rect)).sum();
            s / self.components.len() as f64
        } else {
            integrate_polygon(&|q: &Point| self.density(q), &rect.to_polygon(), DEFAULT_REL_TOL, DEFAULT_MAX_DEPTH)
                .map(|r| r.value)
                .unwrap_or(f64::NAN)
        }
    }

    /// Mass over the search domain (p_A).
    pub fn domain_mass(&self) -> f64 {
        self.rectangle_mass(&self.domain)
    }

    /// Line-delimited text record: one `mu_x mu_y s_xx s_yy s_xy` line per
    /// component followed by `domain x_min y_min x_max y_max`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.components {
            let _ = writeln!(s, "{} {} {} {} {}", c.mu.x, c.mu.y, c.sigma.xx, c.sigma.yy, c.sigma.xy);
        }
        let d = &self.domain;
        let _ = writeln!(s, "domain {} {} {} {}", d.x_min, d.y_min, d.x_max, d.y_max);
        s
    }

    pub fn from_text(text: &str) -> Result<Self, PdmError> {
        let mut components = Vec::new();
        let mut domain = None;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| PdmError::Parse { line: i + 1, msg };
            if domain.is_some() {
                return Err(parse_err("content after domain line".into()));
            }
            let (is_domain, rest) = match line.strip_prefix("domain") {
                Some(rest) => (true, rest),
                None => (false, line),
            };
            let nums: Vec<f64> = rest
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("{t:?}: {e}"))))
                .collect::<Result<_, _>>()?;
            if is_domain {
                let [a, b, c, d] = nums[..] else {
                    return Err(parse_err(format!("domain needs 4 numbers, got {}", nums.len())));
                };
                domain = Some(Rect::new(a, b, c, d).map_err(|e| parse_err(e.to_string()))?);
            } else {
                let [mx, my, sxx, syy, sxy] = nums[..] else {
                    return Err(parse_err(format!("component needs 5 numbers, got {}", nums.len())));
                };
                let c = GaussianComponent::new(Point::new(mx, my), Covariance { xx: sxx, yy: syy, xy: sxy })
                    .map_err(|e| parse_err(e.to_string()))?;
                components.push(c);
            }
        }
        let domain = domain.ok_or(PdmError::Parse { line: 0, msg: "missing domain line".into() })?;
        Pdm::new(components, domain)
    }
}

/// Draws `n` means uniformly over `domain`, all sharing `sigma`.
pub fn sample_pdm(rng_seed: u64, n: usize, sigma: Covariance, domain: Rect) -> Result<Pdm, PdmError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_pdm_with(&mut rng, n, sigma, domain)
}

pub fn sample_pdm_with<R: Rng + ?Sized>(rng: &mut R, n: usize, sigma: Covariance, domain: Rect) -> Result<Pdm, PdmError> {
    if n == 0 {
        return Err(PdmError::InvalidParameter("n must be at least 1".into()));
    }
    if !sigma.is_spd() {
        return Err(PdmError::InvalidParameter(format!("covariance {sigma:?} is not SPD")));
    }
    let components = (0..n)
        .map(|_| GaussianComponent {
            mu: Point::new(
                rng.gen_range(domain.x_min..=domain.x_max),
                rng.gen_range(domain.y_min..=domain.y_max),
            ),
            sigma,
        })
        .collect();
    Pdm::new(components, domain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn default_domain() -> Rect {
        Rect::new(0.0, 0.0, 150.0, 150.0).unwrap()
    }

    const SIGMA: Covariance = Covariance::diag(500.0, 500.0);

    #[test]
    fn sampling_is_deterministic_and_contained() {
        let a = sample_pdm(7, 4, SIGMA, default_domain()).unwrap();
        let b = sample_pdm(7, 4, SIGMA, default_domain()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.components().len(), 4);
        let one = sample_pdm(99, 1, SIGMA, default_domain()).unwrap();
        assert!(default_domain().contains(&one.components()[0].mu));
        assert_ne!(a, sample_pdm(8, 4, SIGMA, default_domain()).unwrap());
    }

    #[test]
    fn sampling_rejects_bad_sigma() {
        let bad = Covariance { xx: 1.0, yy: 1.0, xy: 2.0 };
        assert!(sample_pdm(1, 2, bad, default_domain()).is_err());
        assert!(sample_pdm(1, 0, SIGMA, default_domain()).is_err());
    }

    #[test]
    fn density_peak() {
        let mu = Point::new(10.0, 20.0);
        let pdm = Pdm::new(vec![GaussianComponent::new(mu, SIGMA).unwrap()], default_domain()).unwrap();
        assert_relative_eq!(pdm.density(&mu), 1.0 / (2.0 * PI * 500.0), max_relative = 1e-14);
        assert_relative_eq!(pdm.density(&mu), 3.18310e-4, max_relative = 1e-5);
    }

    #[test]
    fn density_tail_and_averaging() {
        let c = GaussianComponent::new(Point::new(0.0, 0.0), Covariance::diag(1.0, 1.0)).unwrap();
        let pdm = Pdm::new(vec![c], default_domain()).unwrap();
        assert!(pdm.density(&Point::new(60.0, 0.0)) < 1e-300);
        let dup = Pdm::new(vec![c, c], default_domain()).unwrap();
        let q = Point::new(0.3, -1.1);
        assert_eq!(pdm.density(&q), dup.density(&q));
    }

    #[test]
    fn rectangle_mass_limits() {
        let c = GaussianComponent::new(Point::new(0.0, 0.0), SIGMA).unwrap();
        let pdm = Pdm::new(vec![c], default_domain()).unwrap();
        let s = 500f64.sqrt();
        let huge = Rect::new(-100.0 * s, -100.0 * s, 100.0 * s, 100.0 * s).unwrap();
        assert!((pdm.rectangle_mass(&huge) - 1.0).abs() < 1e-12);
        let half = Rect::new(0.0, -100.0 * s, 100.0 * s, 100.0 * s).unwrap();
        assert!((pdm.rectangle_mass(&half) - 0.5).abs() < 1e-9);
    }

    #[test]
    fn non_diagonal_mass_uses_cubature() {
        let tilted = Covariance { xx: 500.0, yy: 300.0, xy: 120.0 };
        let mu = Point::new(75.0, 75.0);
        let pdm = Pdm::new(vec![GaussianComponent::new(mu, tilted).unwrap()], default_domain()).unwrap();
        let big = Rect::new(-300.0, -300.0, 450.0, 450.0).unwrap();
        assert!((pdm.rectangle_mass(&big) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn text_round_trip() {
        let pdm = sample_pdm(3, 4, Covariance { xx: 500.0, yy: 400.0, xy: 0.1 }, default_domain()).unwrap();
        let back = Pdm::from_text(&pdm.to_text()).unwrap();
        assert_eq!(pdm, back);
        assert!(Pdm::from_text("1 2 3\ndomain 0 0 1 1\n").is_err());
        assert!(Pdm::from_text("1 2 3 4 0\n").is_err());
    }
}
