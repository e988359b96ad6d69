//! Ear-clipping triangulation with hole bridging.

use super::{orient2d, polygon_area, ring_signed_area, GeomError, Point, Polygon, Triangle, SLIVER_AREA};

/// Partition `p` into triangles whose areas sum to `polygon_area(p)`.
///
/// Holes are spliced into the outer ring through bridge edges (rightmost hole
/// vertex first), then ears are clipped from the resulting weakly simple ring.
pub fn triangulate(p: &Polygon) -> Result<Vec<Triangle>, GeomError> {
    if p.outer.len() < 3 || polygon_area(p) < SLIVER_AREA {
        return Err(GeomError::Degenerate(format!(
            "polygon with {} outer vertices and area {}",
            p.outer.len(),
            polygon_area(p)
        )));
    }
    let (lo, hi) = p.bbox();
    let scale = (hi.x - lo.x).max(hi.y - lo.y).max(1e-300);
    let eps = 1e-14 * scale * scale;

    let mut ring = clean_ring(&p.outer, eps);
    if ring_signed_area(&ring) < 0.0 {
        ring.reverse();
    }
    let mut holes: Vec<Vec<Point>> = p
        .holes
        .iter()
        .map(|h| {
            let mut h = clean_ring(h, eps);
            if ring_signed_area(&h) > 0.0 {
                h.reverse();
            }
            h
        })
        .filter(|h| h.len() >= 3 && ring_signed_area(h).abs() >= SLIVER_AREA)
        .collect();
    holes.sort_by(|a, b| max_x(b).total_cmp(&max_x(a)));
    for h in &holes {
        ring = bridge_hole(ring, h)?;
    }
    ear_clip(&ring, eps)
}

fn max_x(ring: &[Point]) -> f64 {
    ring.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max)
}

fn clean_ring(ring: &[Point], eps: f64) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(ring.len());
    for &p in ring {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    while out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    // drop exactly collinear interior vertices
    let mut changed = true;
    while changed && out.len() > 3 {
        changed = false;
        let n = out.len();
        let mut keep = Vec::with_capacity(n);
        for i in 0..n {
            let a = out[(i + n - 1) % n];
            let b = out[i];
            let c = out[(i + 1) % n];
            let o = orient2d(&a, &b, &c);
            let forward = (b.x - a.x) * (c.x - b.x) + (b.y - a.y) * (c.y - b.y) > 0.0;
            if o.abs() <= eps && forward {
                changed = true;
                continue;
            }
            keep.push(b);
        }
        if keep.len() < 3 {
            break;
        }
        out = keep;
    }
    out
}

/// True when `q` lies strictly inside the interior angle at `v` (ring is CCW).
fn in_cone(prev: &Point, v: &Point, next: &Point, q: &Point) -> bool {
    if orient2d(prev, v, next) >= 0.0 {
        orient2d(v, next, q) > 0.0 && orient2d(prev, v, q) > 0.0
    } else {
        !(orient2d(v, next, q) <= 0.0 && orient2d(prev, v, q) <= 0.0)
    }
}

fn bridge_hole(ring: Vec<Point>, hole: &[Point]) -> Result<Vec<Point>, GeomError> {
    let n = ring.len();
    let (mi, m) = hole
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.x.total_cmp(&b.1.x).then(b.1.y.total_cmp(&a.1.y)))
        .map(|(i, p)| (i, *p))
        .ok_or_else(|| GeomError::Degenerate("empty hole".into()))?;

    // nearest upward edge hit by the ray from m towards +x; upward edges are
    // the ones facing the ray from the interior
    let mut best_x = f64::INFINITY;
    let mut cand: Option<usize> = None;
    for i in 0..n {
        let j = (i + 1) % n;
        let (a, b) = (ring[i], ring[j]);
        if !(a.y <= m.y && m.y <= b.y && a.y < b.y) {
            continue;
        }
        let x = a.x + (m.y - a.y) * (b.x - a.x) / (b.y - a.y);
        if x >= m.x && x < best_x {
            best_x = x;
            cand = Some(if a.y == m.y {
                i
            } else if b.y == m.y {
                j
            } else if a.x > b.x {
                i
            } else {
                j
            });
        }
    }
    let mut pi = cand.ok_or_else(|| GeomError::Degenerate("hole outside outer ring".into()))?;
    let hit = Point::new(best_x, m.y);

    // a reflex vertex inside (m, hit, p) blocks visibility; take the one with
    // the smallest angle to the ray
    let p = ring[pi];
    if p != hit {
        let (t0, t1, t2) = if m.y < p.y { (m, hit, p) } else { (m, p, hit) };
        let mut best_tan = f64::INFINITY;
        let mut best_d = f64::INFINITY;
        for i in 0..n {
            let v = ring[i];
            if i == pi || v == p {
                continue;
            }
            if v.x < m.x {
                continue;
            }
            let inside = orient2d(&t0, &t1, &v) >= 0.0
                && orient2d(&t1, &t2, &v) >= 0.0
                && orient2d(&t2, &t0, &v) >= 0.0;
            if !inside {
                continue;
            }
            let prev = ring[(i + n - 1) % n];
            let next = ring[(i + 1) % n];
            if orient2d(&prev, &v, &next) > 0.0 {
                continue;
            }
            let tan = (v.y - m.y).abs() / (v.x - m.x).max(1e-300);
            let d = v.dist(&m);
            if tan < best_tan || (tan == best_tan && d < best_d) {
                best_tan = tan;
                best_d = d;
                pi = i;
            }
        }
    }

    // prefer the copy of a duplicated vertex whose interior angle sees m
    let target = ring[pi];
    for i in 0..n {
        if ring[i] == target {
            let prev = ring[(i + n - 1) % n];
            let next = ring[(i + 1) % n];
            if in_cone(&prev, &target, &next, &m) {
                pi = i;
                break;
            }
        }
    }

    let mut out = Vec::with_capacity(n + hole.len() + 2);
    out.extend_from_slice(&ring[..=pi]);
    out.extend_from_slice(&hole[mi..]);
    out.extend_from_slice(&hole[..=mi]);
    out.push(ring[pi]);
    out.extend_from_slice(&ring[pi + 1..]);
    Ok(out)
}

fn ear_clip(ring: &[Point], eps: f64) -> Result<Vec<Triangle>, GeomError> {
    let n = ring.len();
    if n < 3 {
        return Err(GeomError::Degenerate("ring with fewer than 3 vertices".into()));
    }
    let mut prev: Vec<usize> = (0..n).map(|i| (i + n - 1) % n).collect();
    let mut next: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
    let mut alive = vec![true; n];
    let orient_at = |prev: &[usize], next: &[usize], i: usize| orient2d(&ring[prev[i]], &ring[i], &ring[next[i]]);

    // vertices can only turn from reflex to convex as ears are removed
    let mut reflex: Vec<usize> = (0..n).filter(|&i| orient_at(&prev, &next, i) <= 0.0).collect();

    let mut tris = Vec::with_capacity(n.saturating_sub(2));
    let mut remaining = n;
    let mut cur = 0;
    let mut misses = 0;

    while remaining > 3 {
        let (a, c) = (prev[cur], next[cur]);
        let o = orient2d(&ring[a], &ring[cur], &ring[c]);
        let coincident = ring[cur] == ring[c] || ring[cur] == ring[a];
        let mut clip = false;
        let mut emit = false;
        if coincident || (o.abs() <= eps && !is_spike_between(&ring[a], &ring[cur], &ring[c])) {
            clip = true;
        } else if o > 0.0 {
            let (pa, pb, pc) = (ring[a], ring[cur], ring[c]);
            let blocked = reflex.iter().any(|&j| {
                alive[j]
                    && j != a
                    && j != cur
                    && j != c
                    && ring[j] != pa
                    && ring[j] != pb
                    && ring[j] != pc
                    && orient2d(&pa, &pb, &ring[j]) >= 0.0
                    && orient2d(&pb, &pc, &ring[j]) >= 0.0
                    && orient2d(&pc, &pa, &ring[j]) >= 0.0
            });
            if !blocked {
                clip = true;
                emit = true;
            }
        } else if o.abs() <= eps && misses > remaining {
            // spike left after every ear is gone: zero area, safe to drop
            clip = true;
        }

        if clip {
            if emit && o.abs() > eps {
                tris.push(Triangle::new(ring[a], ring[cur], ring[c]));
            }
            alive[cur] = false;
            next[a] = c;
            prev[c] = a;
            remaining -= 1;
            misses = 0;
            if reflex.len() > 64 && reflex.len() > 4 * remaining {
                reflex.retain(|&j| alive[j] && orient_at(&prev, &next, j) <= 0.0);
            }
            cur = a;
        } else {
            cur = next[cur];
            misses += 1;
            if misses > 2 * remaining + 2 {
                return Err(GeomError::Degenerate(format!(
                    "ear clipping stalled with {remaining} vertices left"
                )));
            }
        }
    }
    let a = prev[cur];
    let c = next[cur];
    if orient2d(&ring[a], &ring[cur], &ring[c]).abs() > eps {
        tris.push(Triangle::new(ring[a], ring[cur], ring[c]));
    }
    Ok(tris)
}

/// A collinear triple that doubles back on itself (a -> b -> c reverses).
fn is_spike_between(a: &Point, b: &Point, c: &Point) -> bool {
    (b.x - a.x) * (c.x - b.x) + (b.y - a.y) * (c.y - b.y) < 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{buffer_polyline, Polyline, Rect};
    use approx::assert_relative_eq;

    fn tri_sum(t: &[Triangle]) -> f64 {
        t.iter().map(Triangle::area).sum()
    }

    #[test]
    fn unit_square() {
        let t = triangulate(&Rect::new(0.0, 0.0, 1.0, 1.0).unwrap().to_polygon()).unwrap();
        assert_eq!(t.len(), 2);
        assert_relative_eq!(tri_sum(&t), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn convex_hexagon_matches_fan() {
        let outer: Vec<Point> = (0..6)
            .map(|k| {
                let a = std::f64::consts::PI / 3.0 * k as f64;
                Point::new(2.0 + 1.5 * a.cos(), -1.0 + 1.5 * a.sin())
            })
            .collect();
        let fan: f64 = (1..5)
            .map(|k| Triangle::new(outer[0], outer[k], outer[k + 1]).area())
            .sum();
        let t = triangulate(&Polygon::from_rings(outer, vec![])).unwrap();
        assert_eq!(t.len(), 4);
        assert_relative_eq!(tri_sum(&t), fan, max_relative = 1e-12);
    }

    #[test]
    fn square_with_hole() {
        let p = Polygon::from_rings(
            Rect::new(0.0, 0.0, 4.0, 4.0).unwrap().to_polygon().outer,
            vec![Rect::new(1.0, 1.5, 2.0, 2.5).unwrap().to_polygon().outer],
        );
        let t = triangulate(&p).unwrap();
        assert_relative_eq!(tri_sum(&t), 15.0, max_relative = 1e-12);
        for tri in &t {
            let c = tri.at([1.0 / 3.0; 3]);
            assert!(p.contains(&c), "centroid {c:?} outside");
        }
    }

    #[test]
    fn two_holes_sharing_bridge_x() {
        let p = Polygon::from_rings(
            Rect::new(0.0, 0.0, 10.0, 10.0).unwrap().to_polygon().outer,
            vec![
                Rect::new(2.0, 2.0, 4.0, 4.0).unwrap().to_polygon().outer,
                Rect::new(2.0, 6.0, 4.0, 8.0).unwrap().to_polygon().outer,
                Rect::new(6.0, 3.0, 8.0, 7.0).unwrap().to_polygon().outer,
            ],
        );
        let t = triangulate(&p).unwrap();
        assert_relative_eq!(tri_sum(&t), 100.0 - 4.0 - 4.0 - 8.0, max_relative = 1e-12);
    }

    #[test]
    fn concave_l_shape() {
        let p = Polygon::from_rings(
            vec![
                Point::new(0.0, 0.0),
                Point::new(3.0, 0.0),
                Point::new(3.0, 1.0),
                Point::new(1.0, 1.0),
                Point::new(1.0, 3.0),
                Point::new(0.0, 3.0),
            ],
            vec![],
        );
        let t = triangulate(&p).unwrap();
        assert_relative_eq!(tri_sum(&t), 5.0, max_relative = 1e-12);
    }

    #[test]
    fn looping_buffered_path() {
        let path = Polyline::new(vec![
            Point::new(0.0, 0.0),
            Point::new(20.0, 0.0),
            Point::new(20.0, 20.0),
            Point::new(0.0, 20.0),
            Point::new(0.0, 1.0),
        ])
        .unwrap();
        let p = buffer_polyline(&path, 2.5, 64).unwrap();
        assert_eq!(p.holes.len(), 1);
        let t = triangulate(&p).unwrap();
        assert_relative_eq!(tri_sum(&t), p.area(), max_relative = 1e-9);
    }

    #[test]
    fn degenerate_rejected() {
        let p = Polygon::from_rings(
            vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.0, 0.0)],
            vec![],
        );
        assert!(matches!(triangulate(&p), Err(GeomError::Degenerate(_))));
    }
}
