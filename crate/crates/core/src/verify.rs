//! Oracle suites shared by the command-line `verify` command and the
//! acceptance run.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{check_every_op, load_checkpoint, ParamStore, Tensor};
use crate::geom::{analytic_two_step_area, buffer_polyline, MultiPolygon, Point, Polyline, Rect};
use crate::integrate::{grid_oracle, grid_oracle_region, integrate_region};
use crate::pdm::{sample_pdm_with, Covariance};
use crate::rae::{lstm_cell, tiny_gradient_check, LstmLayer};

/// One named pass/fail line.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }

    fn failed(name: impl Into<String>, err: impl fmt::Display) -> Self {
        Self::new(name, false, format!("error: {err}"))
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Geometry,
    Cubature,
    Gradients,
    All,
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "geometry" => Ok(Suite::Geometry),
            "cubature" => Ok(Suite::Cubature),
            "gradients" => Ok(Suite::Gradients),
            "all" => Ok(Suite::All),
            _ => Err(format!("unknown suite '{s}' (expected geometry, cubature, gradients or all)")),
        }
    }
}

pub fn run_suite(suite: Suite) -> Vec<Check> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Geometry | Suite::All) {
        out.push(two_step_area_check(8.0, 2.5, 50));
    }
    if matches!(suite, Suite::Cubature | Suite::All) {
        out.extend(cubature_checks(20, 2024));
        out.push(domain_mass_check(7));
    }
    if matches!(suite, Suite::Gradients | Suite::All) {
        out.extend(gradient_checks());
        out.push(lstm_zero_cell_check());
    }
    out
}

/// Two steps of length `s` joined at turn angle `theta`.
fn two_step(theta: f64, s: f64) -> Polyline {
    Polyline::new(vec![Point::new(-s, 0.0), Point::new(0.0, 0.0), Point::new(s * theta.cos(), s * theta.sin())])
        .expect("three vertices")
}

/// Buffered two-step area against the closed form at `n` turn angles
/// spanning the valid range, plus monotonicity and the maximum at zero.
pub fn two_step_area_check(s: f64, r: f64, n: usize) -> Check {
    let name = "two-step swath area";
    let max = 2.0 * (s / r).atan();
    let mut worst: f64 = 0.0;
    let mut areas = Vec::with_capacity(n);
    for i in 0..n {
        let theta = max * i as f64 / (n - 1) as f64;
        let exact = match analytic_two_step_area(theta, s, r) {
            Ok(a) => a,
            Err(e) => return Check::failed(name, e),
        };
        let poly = match buffer_polyline(&two_step(theta, s), r, 1024) {
            Ok(p) => p,
            Err(e) => return Check::failed(name, e),
        };
        worst = worst.max((poly.area() - exact).abs() / exact);
        areas.push((exact, poly.area()));
    }
    let analytic_monotone = areas.windows(2).all(|w| w[1].0 <= w[0].0);
    // polygon areas are monotone up to the arc discretization error
    let slack = 2e-4 * areas[0].1;
    let polygon_monotone = areas.windows(2).all(|w| w[1].1 <= w[0].1 + slack);
    let max_at_zero = areas.iter().all(|a| a.0 <= areas[0].0);
    Check::new(
        name,
        worst < 5e-3 && analytic_monotone && polygon_monotone && max_at_zero,
        format!(
            "{n} angles, max rel err {worst:.2e} (< 5e-3), monotone analytic {analytic_monotone} polygon {polygon_monotone}, max at 0 {max_at_zero}"
        ),
    )
}

fn random_path<R: Rng>(rng: &mut R, domain: &Rect, steps: usize, s: f64) -> Polyline {
    let mut pts = vec![Point::new(rng.gen_range(30.0..120.0), rng.gen_range(30.0..120.0))];
    while pts.len() <= steps {
        let h = rng.gen_range(0.0..2.0 * PI);
        let c = *pts.last().unwrap();
        let q = Point::new(c.x + s * h.cos(), c.y + s * h.sin());
        if domain.contains(&q) {
            pts.push(q);
        }
    }
    Polyline::new(pts).expect("non-empty")
}

/// Adaptive cubature of a PDM over random 10-step swaths against the 0.1 m
/// grid oracle, and of the unit integrand against the region area.
pub fn cubature_checks(n_pairs: usize, seed: u64) -> Vec<Check> {
    let domain = Rect { x_min: 0.0, y_min: 0.0, x_max: 150.0, y_max: 150.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_abs, mut worst_rel) = (0.0f64, 0.0f64);
    for _ in 0..n_pairs {
        let pdm = match sample_pdm_with(&mut rng, 4, Covariance::diag(500.0, 500.0), domain) {
            Ok(p) => p,
            Err(e) => return vec![Check::failed("cubature vs grid oracle", e)],
        };
        let region: MultiPolygon = match buffer_polyline(&random_path(&mut rng, &domain, 10, 8.0), 2.5, 64) {
            Ok(p) => p.into(),
            Err(e) => return vec![Check::failed("cubature vs grid oracle", e)],
        };
        let (lo, hi) = region.polygons[0].bbox();
        let bbox = Rect { x_min: lo.x - 0.5, y_min: lo.y - 0.5, x_max: hi.x + 0.5, y_max: hi.y + 0.5 };
        let f = |q: &Point| pdm.density(q);
        let cub = integrate_region(&f, &region, 1e-10, 12);
        let one = integrate_region(&|_: &Point| 1.0, &region, 1e-12, 4);
        match (cub, one) {
            (Ok(c), Ok(u)) => {
                worst_abs = worst_abs.max((c.value - grid_oracle_region(&f, &region, &bbox, 0.1)).abs());
                let area = region.area();
                worst_rel = worst_rel.max((u.value - area).abs() / area);
            }
            (Err(e), _) | (_, Err(e)) => return vec![Check::failed("cubature vs grid oracle", e)],
        }
    }
    vec![
        Check::new(
            "cubature vs grid oracle",
            worst_abs < 1e-4,
            format!("{n_pairs} pairs, max abs diff {worst_abs:.2e} (< 1e-4)"),
        ),
        Check::new(
            "uniform integrand equals area",
            worst_rel < 1e-9,
            format!("{n_pairs} regions, max rel diff {worst_rel:.2e} (< 1e-9)"),
        ),
    ]
}

/// Closed-form domain mass against the 0.25 m grid oracle.
pub fn domain_mass_check(seed: u64) -> Check {
    let domain = Rect { x_min: 0.0, y_min: 0.0, x_max: 150.0, y_max: 150.0 };
    let pdm = match sample_pdm_with(&mut ChaCha8Rng::seed_from_u64(seed), 4, Covariance::diag(500.0, 500.0), domain) {
        Ok(p) => p,
        Err(e) => return Check::failed("domain mass vs grid oracle", e),
    };
    let grid = grid_oracle(&|q: &Point| pdm.density(q), &|_: &Point| true, &domain, 0.25);
    let diff = (grid - pdm.domain_mass()).abs();
    Check::new(
        "domain mass vs grid oracle",
        diff < 1e-6,
        format!("closed form {:.9}, grid {grid:.9}, diff {diff:.2e} (< 1e-6)", pdm.domain_mass()),
    )
}

/// Every graph op and a small end-to-end autoencoder pass in f64.
pub fn gradient_checks() -> Vec<Check> {
    let ops = match check_every_op(42, 20) {
        Ok(r) => r,
        Err(e) => return vec![Check::failed("op gradients", e)],
    };
    let (worst_name, worst) = ops
        .iter()
        .max_by(|a, b| a.1.max_rel_error.total_cmp(&b.1.max_rel_error))
        .map(|(n, r)| (*n, r.max_rel_error))
        .unwrap_or(("none", 0.0));
    let mut out = vec![Check::new(
        "op gradients",
        ops.iter().all(|(_, r)| r.passes(1e-4)),
        format!("{} ops, worst {worst_name} rel err {worst:.2e} (< 1e-4)", ops.len()),
    )];
    out.push(match tiny_gradient_check(2) {
        Ok(r) => Check::new(
            "autoencoder gradients",
            r.passes(1e-4),
            format!("{} entries, max rel err {:.2e} (< 1e-4)", r.checked, r.max_rel_error),
        ),
        Err(e) => Check::failed("autoencoder gradients", e),
    });
    out
}

/// All-zero LSTM parameters: `c' = c/2` and `h' = tanh(c/2)/2`, bit for bit.
pub fn lstm_zero_cell_check() -> Check {
    let mut s = ParamStore::<f64>::new();
    let layer = LstmLayer::new(&mut s, "l", 3, 4, &mut ChaCha8Rng::seed_from_u64(0));
    for id in layer.ids() {
        s.value_mut(id).fill(0.0);
    }
    let x = Tensor::row(vec![0.7, -2.0, 5.0]);
    let c0 = Tensor::row(vec![1.0, -3.0, 0.25, 10.0]);
    let (h, c) = lstm_cell(&s, &layer, &x, &Tensor::row(vec![0.3; 4]), &c0);
    let exact = (0..4).all(|k| c.data()[k] == 0.5 * c0.data()[k] && h.data()[k] == 0.5 * (0.5 * c0.data()[k]).tanh());
    Check::new("zero-parameter LSTM cell", exact, format!("c' = {:?}, h' = {:?}", c.data(), h.data()))
}

/// Reads a checkpoint, which verifies its embedded checksum.
pub fn checkpoint_check(path: &Path) -> Check {
    let name = format!("checkpoint {}", path.display());
    match load_checkpoint::<f32>(path) {
        Ok(store) => Check::new(name, true, format!("{} tensors, checksum ok", store.len())),
        Err(e) => Check::failed(name, e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names() {
        assert_eq!("all".parse::<Suite>(), Ok(Suite::All));
        assert!("Geometry".parse::<Suite>().is_err());
    }

    #[test]
    fn quick_checks_pass() {
        assert!(two_step_area_check(8.0, 2.5, 12).passed);
        assert!(lstm_zero_cell_check().passed);
        let c = cubature_checks(2, 5);
        assert!(c.iter().all(|c| c.passed), "{c:?}");
    }

    #[test]
    fn corrupted_checkpoint_fails() {
        let dir = std::env::temp_dir().join(format!("verify-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("a.ckpt");
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::row(vec![1.0, 2.0, 3.0]));
        crate::autodiff::save_checkpoint(&s, &p).unwrap();
        assert!(checkpoint_check(&p).passed);
        let mut bytes = std::fs::read(&p).unwrap();
        let k = bytes.len() / 2;
        bytes[k] ^= 0x40;
        std::fs::write(&p, bytes).unwrap();
        let c = checkpoint_check(&p);
        assert!(!c.passed && c.detail.contains("error"), "{c}");
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
