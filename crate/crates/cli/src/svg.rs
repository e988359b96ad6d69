use std::fmt::Write as _;

use searchplan::geom::{Point, Rect};
use searchplan::pdm::Pdm;

const PX_PER_M: f64 = 4.0;

/// Domain outline, 1/2/3-sigma rings of every component and the flown path.
pub fn episode_svg(pdm: &Pdm, path: &[Point], domain: &Rect, title: &str) -> String {
    let (w, h) = (domain.width() * PX_PER_M, domain.height() * PX_PER_M);
    let px = |p: &Point| ((p.x - domain.x_min) * PX_PER_M, (domain.y_max - p.y) * PX_PER_M);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<title>{title}</title>\n"
    );
    let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\" stroke=\"black\"/>");
    for c in pdm.components() {
        let (xx, yy, xy) = (c.sigma.xx, c.sigma.yy, c.sigma.xy);
        let mid = 0.5 * (xx + yy);
        let rad = (0.25 * (xx - yy).powi(2) + xy * xy).sqrt();
        let (l1, l2) = (mid + rad, (mid - rad).max(0.0));
        // screen y points down, so the angle flips sign
        let angle = -0.5 * (2.0 * xy).atan2(xx - yy).to_degrees();
        let (cx, cy) = px(&c.mu);
        for k in 1..=3 {
            let k = k as f64;
            let _ = writeln!(
                s,
                "<ellipse class=\"pdm-contour\" cx=\"{cx:.2}\" cy=\"{cy:.2}\" rx=\"{:.2}\" ry=\"{:.2}\" transform=\"rotate({angle:.3} {cx:.2} {cy:.2})\" fill=\"none\" stroke=\"steelblue\" stroke-opacity=\"{:.2}\"/>",
                k * l1.sqrt() * PX_PER_M,
                k * l2.sqrt() * PX_PER_M,
                1.0 - 0.25 * k
            );
        }
    }
    let pts: Vec<String> = path
        .iter()
        .map(|p| {
            let (x, y) = px(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(s, "<polyline class=\"path\" points=\"{}\" fill=\"none\" stroke=\"crimson\" stroke-width=\"2\"/>", pts.join(" "));
    if let Some(p0) = path.first() {
        let (x, y) = px(p0);
        let _ = writeln!(s, "<circle class=\"start\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"4\" fill=\"crimson\"/>");
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use searchplan::pdm::{Covariance, GaussianComponent};

    #[test]
    fn contains_rings_and_path() {
        let d = Rect::new(0.0, 0.0, 150.0, 150.0).unwrap();
        let c = GaussianComponent::new(Point::new(50.0, 100.0), Covariance::diag(400.0, 100.0)).unwrap();
        let pdm = Pdm::new(vec![c, c], d).unwrap();
        let svg = episode_svg(&pdm, &[Point::new(0.0, 0.0), Point::new(8.0, 0.0)], &d, "t");
        assert_eq!(svg.matches("class=\"pdm-contour\"").count(), 6);
        assert!(svg.contains("points=\"0.00,600.00 32.00,600.00\""));
        // 1-sigma ring of the wide axis: 20 m
        assert!(svg.contains("cx=\"200.00\" cy=\"200.00\" rx=\"80.00\" ry=\"40.00\""));
    }
}
