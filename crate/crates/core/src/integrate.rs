//! Adaptive cubature over triangles and polygons, plus a brute-force grid
//! oracle used to validate it.

use crate::geom::{triangulate, GeomError, MultiPolygon, Point, Polygon, Rect, Triangle};

pub const DEFAULT_REL_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_DEPTH: usize = 12;
/// Per-triangle absolute floor on the refinement delta.
pub const ABS_FLOOR: f64 = 1e-12;

/// Symmetric triangle rule in barycentric coordinates; weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct CubatureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl CubatureRule {
    /// Dunavant's 13-point rule, exact for polynomials of degree 7.
    pub fn degree7() -> Self {
        let mut points = Vec::with_capacity(13);
        let mut weights = Vec::with_capacity(13);
        points.push([1.0 / 3.0; 3]);
        weights.push(-0.149_570_044_467_682);
        let orbit3 = [
            (0.479_308_067_841_920, 0.260_345_966_079_040, 0.175_615_257_433_208),
            (0.869_739_794_195_568, 0.065_130_102_902_216, 0.053_347_235_608_838),
        ];
        for (a, b, w) in orbit3 {
            for p in [[a, b, b], [b, a, b], [b, b, a]] {
                points.push(p);
                weights.push(w);
            }
        }
        let (a, b, c, w) = (
            0.048_690_315_425_316,
            0.312_865_496_004_874,
            0.638_444_188_569_810,
            0.077_113_760_890_257,
        );
        for p in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            points.push(p);
            weights.push(w);
        }
        Self { points, weights, degree: 7 }
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

impl Default for CubatureRule {
    fn default() -> Self {
        Self::degree7()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntegrationResult {
    pub value: f64,
    pub error_estimate: f64,
    pub triangles_evaluated: usize,
    /// False when some triangle hit `max_depth` before meeting the tolerance.
    pub converged: bool,
}

impl IntegrationResult {
    fn merge(&mut self, other: &IntegrationResult) {
        self.value += other.value;
        self.error_estimate += other.error_estimate;
        self.triangles_evaluated += other.triangles_evaluated;
        self.converged &= other.converged;
    }
}

/// `area(t) * sum_k w_k f(p_k)`.
pub fn integrate_triangle<F>(f: &F, t: &Triangle, rule: &CubatureRule) -> f64
where
    F: Fn(&Point) -> f64 + ?Sized,
{
    let s: f64 = rule
        .points
        .iter()
        .zip(&rule.weights)
        .map(|(l, w)| w * f(&t.at(*l)))
        .sum();
    t.area() * s
}

/// Adaptive integral over one triangle by 4-way midpoint subdivision.
pub fn integrate_triangle_adaptive<F>(
    f: &F,
    t: &Triangle,
    rule: &CubatureRule,
    rel_tol: f64,
    max_depth: usize,
) -> IntegrationResult
where
    F: Fn(&Point) -> f64 + ?Sized,
{
    let mut acc = IntegrationResult { converged: true, ..Default::default() };
    let coarse = integrate_triangle(f, t, rule);
    refine(f, t, rule, coarse, rel_tol, 0, max_depth, &mut acc);
    acc
}

#[allow(clippy::too_many_arguments)]
fn refine<F>(
    f: &F,
    t: &Triangle,
    rule: &CubatureRule,
    coarse: f64,
    rel_tol: f64,
    depth: usize,
    max_depth: usize,
    acc: &mut IntegrationResult,
) where
    F: Fn(&Point) -> f64 + ?Sized,
{
    let children = t.subdivide();
    let parts = children.map(|c| integrate_triangle(f, &c, rule));
    acc.triangles_evaluated += 5;
    let fine: f64 = parts.iter().sum();
    let delta = (fine - coarse).abs();
    if delta <= (rel_tol * fine.abs()).max(ABS_FLOOR) {
        acc.value += fine;
        acc.error_estimate += delta;
    } else if depth >= max_depth {
        acc.value += fine;
        acc.error_estimate += delta;
        acc.converged = false;
    } else {
        for (c, v) in children.iter().zip(parts) {
            refine(f, c, rule, v, rel_tol, depth + 1, max_depth, acc);
        }
    }
}

/// Triangulates `p` and integrates `f` adaptively over each triangle.
pub fn integrate_polygon<F>(f: &F, p: &Polygon, rel_tol: f64, max_depth: usize) -> Result<IntegrationResult, GeomError>
where
    F: Fn(&Point) -> f64 + ?Sized,
{
    if !(rel_tol > 0.0) {
        return Err(GeomError::InvalidParameter(format!("rel_tol {rel_tol} must be positive")));
    }
    let rule = CubatureRule::degree7();
    let mut total = IntegrationResult { converged: true, ..Default::default() };
    for t in triangulate(p)? {
        total.merge(&integrate_triangle_adaptive(f, &t, &rule, rel_tol, max_depth));
    }
    Ok(total)
}

/// Sum of [`integrate_polygon`] over the components; empty regions integrate to 0.
pub fn integrate_region<F>(f: &F, region: &MultiPolygon, rel_tol: f64, max_depth: usize) -> Result<IntegrationResult, GeomError>
where
    F: Fn(&Point) -> f64 + ?Sized,
{
    let mut total = IntegrationResult { converged: true, ..Default::default() };
    for p in &region.polygons {
        total.merge(&integrate_polygon(f, p, rel_tol, max_depth)?);
    }
    Ok(total)
}

fn grid_dims(bbox: &Rect, cell: f64) -> (usize, usize) {
    (
        (bbox.width() / cell).ceil().max(1.0) as usize,
        (bbox.height() / cell).ceil().max(1.0) as usize,
    )
}

/// Two-point Gauss-Legendre offsets inside a unit cell.
const CELL_OFFSETS: [f64; 2] = [0.5 - 0.288_675_134_594_812_9, 0.5 + 0.288_675_134_594_812_9];

/// Brute-force cell sum of `f` over the cells of `bbox`.
///
/// Each cell is sampled at the 2x2 Gauss-Legendre points and each sample
/// counts only if it satisfies `member`, so the sum is O(cell⁴) for smooth
/// integrands and O(cell) at region edges.
pub fn grid_oracle<F, M>(f: &F, member: &M, bbox: &Rect, cell: f64) -> f64
where
    F: Fn(&Point) -> f64 + ?Sized,
    M: Fn(&Point) -> bool + ?Sized,
{
    assert!(cell > 0.0, "cell must be positive");
    let (nx, ny) = grid_dims(bbox, cell);
    let mut total = 0.0;
    for j in 0..ny {
        for oy in CELL_OFFSETS {
            let y = bbox.y_min + (j as f64 + oy) * cell;
            let mut row = 0.0;
            for i in 0..nx {
                for ox in CELL_OFFSETS {
                    let q = Point::new(bbox.x_min + (i as f64 + ox) * cell, y);
                    if member(&q) {
                        row += f(&q);
                    }
                }
            }
            total += row;
        }
    }
    0.25 * total * cell * cell
}

/// [`grid_oracle`] with even-odd membership in `region`, evaluated by
/// scanline crossings instead of per-sample point-in-polygon tests.
pub fn grid_oracle_region<F>(f: &F, region: &MultiPolygon, bbox: &Rect, cell: f64) -> f64
where
    F: Fn(&Point) -> f64 + ?Sized,
{
    assert!(cell > 0.0, "cell must be positive");
    let (nx, ny) = grid_dims(bbox, cell);
    let edges: Vec<(Point, Point)> = region
        .polygons
        .iter()
        .flat_map(|p| p.rings())
        .flat_map(|r| (0..r.len()).map(move |i| (r[i], r[(i + 1) % r.len()])))
        .collect();
    let mut xs = Vec::new();
    let mut total = 0.0;
    for j in 0..ny {
        for oy in CELL_OFFSETS {
            let y = bbox.y_min + (j as f64 + oy) * cell;
            xs.clear();
            for (a, b) in &edges {
                if (a.y > y) != (b.y > y) {
                    xs.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
                }
            }
            xs.sort_by(f64::total_cmp);
            let mut row = 0.0;
            for ox in CELL_OFFSETS {
                for pair in xs.chunks_exact(2) {
                    // samples x with pair[0] <= x < pair[1]
                    let i0 = ((pair[0] - bbox.x_min) / cell - ox).ceil().max(0.0) as usize;
                    let i1 = ((pair[1] - bbox.x_min) / cell - ox).ceil().max(0.0) as usize;
                    for i in i0..i1.min(nx) {
                        row += f(&Point::new(bbox.x_min + (i as f64 + ox) * cell, y));
                    }
                }
            }
            total += row;
        }
    }
    0.25 * total * cell * cell
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{buffer_polyline, disk, Polyline};
    use crate::pdm::{Covariance, GaussianComponent, Pdm};
    use approx::assert_relative_eq;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    #[test]
    fn rule_is_normalized_and_in_simplex() {
        let r = CubatureRule::degree7();
        assert_eq!(r.points.len(), 13);
        assert!((r.weight_sum() - 1.0).abs() < 1e-14);
        for p in &r.points {
            assert!(p.iter().all(|&l| (0.0..=1.0).contains(&l)));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn rule_exact_through_degree_7() {
        // int over the unit right triangle of x^a y^b = a! b! / (a + b + 2)!
        let t = Triangle::new(Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0));
        let rule = CubatureRule::degree7();
        for a in 0..=7u32 {
            for b in 0..=(7 - a) {
                let got = integrate_triangle(&|q: &Point| q.x.powi(a as i32) * q.y.powi(b as i32), &t, &rule);
                let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
                assert!((got - exact).abs() < 1e-13, "x^{a} y^{b}: {got} vs {exact}");
            }
        }
        let got = integrate_triangle(&|q: &Point| q.x.powi(8), &t, &rule);
        assert!((got - factorial(8) / factorial(10)).abs() > 1e-9);
    }

    #[test]
    fn triangle_examples() {
        let rule = CubatureRule::degree7();
        let t = Triangle::new(Point::new(0.0, 0.0), Point::new(8.0, 0.0), Point::new(0.0, 6.0));
        assert_relative_eq!(integrate_triangle(&|_: &Point| 1.0, &t, &rule), 24.0, max_relative = 1e-14);
        let u = Triangle::new(Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0));
        assert_relative_eq!(integrate_triangle(&|q: &Point| q.x, &u, &rule), 1.0 / 6.0, max_relative = 1e-13);

        let mu = Point::new(40.0, 60.0);
        let c = GaussianComponent::new(mu, Covariance::diag(500.0, 500.0)).unwrap();
        let h = 0.05;
        let tiny = Triangle::new(mu, Point::new(mu.x + h, mu.y), Point::new(mu.x, mu.y + h));
        let got = integrate_triangle(&|q: &Point| c.density(q), &tiny, &rule);
        let approx = tiny.area() * c.density(&mu);
        assert!((got - approx).abs() / approx < 1e-3);
    }

    #[test]
    fn uniform_integrand_gives_area() {
        let path = Polyline::new(vec![
            Point::new(0.0, 0.0),
            Point::new(8.0, 0.0),
            Point::new(8.0, 8.0),
            Point::new(2.0, 2.0),
        ])
        .unwrap();
        let p = buffer_polyline(&path, 2.5, 64).unwrap();
        let r = integrate_polygon(&|_: &Point| 1.0, &p, DEFAULT_REL_TOL, DEFAULT_MAX_DEPTH).unwrap();
        assert!(r.converged);
        assert_relative_eq!(r.value, p.area(), max_relative = 1e-9);
    }

    #[test]
    fn far_polygon_is_negligible() {
        let c = GaussianComponent::new(Point::new(0.0, 0.0), Covariance::diag(500.0, 500.0)).unwrap();
        let far = disk(Point::new(600.0, 0.0), 2.5, 32);
        let r = integrate_polygon(&|q: &Point| c.density(q), &far, DEFAULT_REL_TOL, DEFAULT_MAX_DEPTH).unwrap();
        assert!(r.value < 1e-12);
    }

    #[test]
    fn depth_limit_sets_flag() {
        let spike = |q: &Point| (-(q.x * q.x + q.y * q.y) * 1e2).exp();
        let p = Rect::new(-1.0, -1.0, 1.0, 1.0).unwrap().to_polygon();
        let r = integrate_polygon(&spike, &p, 1e-12, 1).unwrap();
        assert!(!r.converged);
        let r = integrate_polygon(&spike, &p, 1e-8, 14).unwrap();
        assert!(r.converged);
        assert_relative_eq!(r.value, std::f64::consts::PI * 1e-2, max_relative = 1e-6);
    }

    #[test]
    fn rejects_non_positive_tolerance() {
        let p = Rect::new(0.0, 0.0, 1.0, 1.0).unwrap().to_polygon();
        assert!(integrate_polygon(&|_: &Point| 1.0, &p, 0.0, 4).is_err());
    }

    #[test]
    fn grid_oracle_examples() {
        let unit = Rect::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let v = grid_oracle(&|_: &Point| 1.0, &|q: &Point| unit.contains(q), &unit, 0.001);
        assert!((v - 1.0).abs() < 0.01);
        let bbox = Rect::new(-3.0, -3.0, 3.0, 3.0).unwrap();
        let v = grid_oracle(&|_: &Point| 1.0, &|q: &Point| q.norm() <= 2.5, &bbox, 0.005);
        assert!((v - 19.635).abs() < 0.05, "{v}");
    }

    #[test]
    fn scanline_oracle_matches_predicate_oracle() {
        let path = Polyline::new(vec![
            Point::new(10.0, 10.0),
            Point::new(18.0, 10.0),
            Point::new(18.0, 18.0),
            Point::new(10.0, 18.0),
            Point::new(10.0, 11.0),
        ])
        .unwrap();
        let p = buffer_polyline(&path, 2.5, 16).unwrap();
        let region: MultiPolygon = p.clone().into();
        let bbox = Rect::new(5.0, 5.0, 25.0, 25.0).unwrap();
        let f = |q: &Point| 1.0 + 0.01 * q.x;
        let a = grid_oracle(&f, &|q: &Point| p.contains(q), &bbox, 0.05);
        let b = grid_oracle_region(&f, &region, &bbox, 0.05);
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }

    #[test]
    fn grid_agrees_with_closed_form_mass() {
        let domain = Rect::new(0.0, 0.0, 150.0, 150.0).unwrap();
        let pdm = crate::pdm::sample_pdm(11, 4, Covariance::diag(500.0, 500.0), domain).unwrap();
        let region: MultiPolygon = domain.to_polygon().into();
        let grid = grid_oracle_region(&|q: &Point| pdm.density(q), &region, &domain, 0.25);
        assert!((grid - pdm.domain_mass()).abs() < 1e-6, "{grid} vs {}", pdm.domain_mass());
        let _ = Pdm::new(pdm.components().to_vec(), domain).unwrap();
    }
}
