//! Boolean union and difference backed by `i_overlay`.
//!
//! Inputs go through i_overlay's integer snapping (about 1e-7 m resolution
//! on a 150 m domain) and come back as normalized [`Polygon`]s: outer rings
//! counterclockwise, holes clockwise, slivers dropped.

use i_overlay::core::fill_rule::FillRule;
use i_overlay::core::overlay_rule::OverlayRule;
use i_overlay::float::overlay::FloatOverlay;

use super::{ring_signed_area, MultiPolygon, Point, Polygon, SLIVER_AREA};

type Contour = Vec<[f64; 2]>;
type Shape = Vec<Contour>;

fn to_shapes<'a>(polys: impl Iterator<Item = &'a Polygon>) -> Vec<Shape> {
    polys
        .filter(|p| p.outer.len() >= 3)
        .map(|p| {
            let mut outer = p.outer.clone();
            if ring_signed_area(&outer) < 0.0 {
                outer.reverse();
            }
            let mut shape = vec![outer.iter().map(|q| [q.x, q.y]).collect::<Contour>()];
            for h in &p.holes {
                let mut h = h.clone();
                if ring_signed_area(&h) > 0.0 {
                    h.reverse();
                }
                shape.push(h.iter().map(|q| [q.x, q.y]).collect());
            }
            shape
        })
        .collect()
}

fn from_shapes(shapes: Vec<Shape>) -> MultiPolygon {
    let mut polygons = Vec::with_capacity(shapes.len());
    for shape in shapes {
        let mut rings = shape
            .into_iter()
            .map(|c| c.into_iter().map(|[x, y]| Point::new(x, y)).collect::<Vec<_>>());
        let Some(outer) = rings.next() else { continue };
        if ring_signed_area(&outer).abs() < SLIVER_AREA {
            continue;
        }
        let holes = rings.filter(|h| ring_signed_area(h).abs() >= SLIVER_AREA).collect();
        polygons.push(Polygon::from_rings(outer, holes));
    }
    MultiPolygon { polygons }
}

/// Set union of `parts`, possibly with holes and several components.
pub fn polygon_union(parts: &[Polygon]) -> MultiPolygon {
    let subj = to_shapes(parts.iter());
    if subj.is_empty() {
        return MultiPolygon::default();
    }
    let out = FloatOverlay::with_subj(&subj).overlay(OverlayRule::Subject, FillRule::NonZero);
    from_shapes(out)
}

/// Points of `a` not in `b`. Overlapping pieces on either side are fine.
pub fn polygon_difference(a: &MultiPolygon, b: &MultiPolygon) -> MultiPolygon {
    let subj = to_shapes(a.polygons.iter());
    if subj.is_empty() {
        return MultiPolygon::default();
    }
    let clip = to_shapes(b.polygons.iter());
    if clip.is_empty() {
        return polygon_union(&a.polygons);
    }
    let out = FloatOverlay::with_subj_and_clip(&subj, &clip)
        .overlay(OverlayRule::Difference, FillRule::NonZero);
    from_shapes(out)
}
