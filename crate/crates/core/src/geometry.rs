//! Points, axis-aligned boxes, hit tests and the collinearity predicate.
//!
//! All coordinates are screen pixels. Boxes are closed: a point lying exactly on
//! an edge counts as inside.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Default threshold on `triangle_area / d²` below which a triple is degenerate.
pub const DEFAULT_EPS_REL: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite coordinate in {0}")]
    NonFinite(&'static str),
    #[error("inverted box: [{0}, {1}, {2}, {3}]")]
    Inverted(f64, f64, f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance_sq(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Closed axis-aligned box `[x_min, y_min, x_max, y_max]`.
///
/// Serializes as a four-element array, which is the layout used by the task
/// JSONL files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("bbox"));
        }
        if x_min > x_max || y_min > y_max {
            return Err(GeometryError::Inverted(x_min, y_min, x_max, y_max));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn contains(&self, p: Point) -> bool {
        point_in_bbox(p, self)
    }

    pub fn center(&self) -> Point {
        bbox_center(self)
    }

    /// True when the interiors of the two boxes intersect. Shared edges are
    /// not counted as overlap.
    pub fn overlaps(&self, other: &BBox) -> bool {
        self.x_min < other.x_max
            && other.x_min < self.x_max
            && self.y_min < other.y_max
            && other.y_min < self.y_max
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.as_array().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x0, y0, x1, y1] = <[f64; 4]>::deserialize(deserializer)?;
        BBox::new(x0, y0, x1, y1).map_err(serde::de::Error::custom)
    }
}

pub fn point_in_bbox(p: Point, b: &BBox) -> bool {
    b.x_min <= p.x && p.x <= b.x_max && b.y_min <= p.y && p.y <= b.y_max
}

pub fn bbox_center(b: &BBox) -> Point {
    Point::new((b.x_min + b.x_max) / 2.0, (b.y_min + b.y_max) / 2.0)
}

pub fn triangle_area(p1: Point, p2: Point, p3: Point) -> f64 {
    let ax = p2.x - p1.x;
    let ay = p2.y - p1.y;
    let bx = p3.x - p1.x;
    let by = p3.y - p1.y;
    (ax * by - ay * bx).abs() / 2.0
}

/// Whether a candidate set lies (approximately) on a single line.
///
/// Every triple's area is normalized by the squared diameter `d²` of the set,
/// so the test does not depend on screen resolution. Sets with fewer than three
/// points are never collinear; a set whose points all coincide is.
pub fn is_collinear_set(points: &[Point], eps_rel: f64) -> bool {
    if points.len() < 3 {
        return false;
    }
    let mut diameter_sq = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            diameter_sq = diameter_sq.max(a.distance_sq(b));
        }
    }
    if diameter_sq == 0.0 {
        return true;
    }
    let limit = eps_rel * diameter_sq;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            for k in j + 1..points.len() {
                // a NaN area counts as non-degenerate
                let area = triangle_area(points[i], points[j], points[k]);
                if area >= limit || area.is_nan() {
                    return false;
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    #[test]
    fn hit_test_edges_inclusive() {
        let b = bb(0.0, 0.0, 10.0, 10.0);
        assert!(point_in_bbox(p(5.0, 5.0), &b));
        assert!(point_in_bbox(p(10.0, 10.0), &b));
        assert!(point_in_bbox(p(0.0, 10.0), &b));
        assert!(!point_in_bbox(p(10.001, 5.0), &b));
        assert!(!point_in_bbox(p(5.0, -0.001), &b));
    }

    #[test]
    fn centers() {
        assert_eq!(bbox_center(&bb(0.0, 0.0, 10.0, 20.0)), p(5.0, 10.0));
        assert_eq!(bbox_center(&bb(3.0, 3.0, 3.0, 3.0)), p(3.0, 3.0));
        assert_eq!(bbox_center(&bb(-0.0, 0.0, 4.0, 2.0)), p(2.0, 1.0));
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(matches!(
            BBox::new(1.0, 0.0, 0.0, 1.0),
            Err(GeometryError::Inverted(..))
        ));
        assert!(matches!(
            BBox::new(0.0, 0.0, f64::NAN, 1.0),
            Err(GeometryError::NonFinite(_))
        ));
        assert!(serde_json::from_str::<BBox>("[0,0,-1,1]").is_err());
    }

    #[test]
    fn bbox_json_is_array() {
        let b = bb(1.0, 2.5, 3.0, 4.0);
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, "[1.0,2.5,3.0,4.0]");
        assert_eq!(serde_json::from_str::<BBox>(&s).unwrap(), b);
    }

    #[test]
    fn triangle_areas() {
        assert_eq!(triangle_area(p(0.0, 0.0), p(1.0, 0.0), p(0.0, 1.0)), 0.5);
        assert_eq!(triangle_area(p(0.0, 0.0), p(1.0, 1.0), p(2.0, 2.0)), 0.0);
        assert_eq!(triangle_area(p(0.0, 0.0), p(0.0, 0.0), p(5.0, 7.0)), 0.0);
    }

    #[test]
    fn collinear_examples() {
        let eps = 1e-3;
        assert!(is_collinear_set(
            &[p(0.0, 0.0), p(1.0, 1.0), p(2.0, 2.0)],
            eps
        ));
        assert!(!is_collinear_set(
            &[p(0.0, 0.0), p(10.0, 0.0), p(5.0, 8.0)],
            eps
        ));
        assert!(!is_collinear_set(&[p(0.0, 0.0), p(9.0, 9.0)], eps));
        assert!(!is_collinear_set(&[p(3.0, 3.0)], eps));
        assert!(is_collinear_set(&[p(4.0, 4.0); 3], eps));
    }

    #[test]
    fn nearly_collinear_by_enumeration() {
        let pts = [p(0.0, 0.0), p(100.0, 100.0), p(200.0, 200.01)];
        // Oracle: the single triple's normalized area, computed by hand.
        // cross = 100*200.01 - 100*200 = 1.0 => area 0.5; d² = 200² + 200.01² ≈ 80004.
        let d2 = 200.0f64.powi(2) + 200.01f64.powi(2);
        let ratio = 0.5 / d2;
        assert!(ratio < 1e-3, "oracle ratio {ratio}");
        assert!((triangle_area(pts[0], pts[1], pts[2]) - 0.5).abs() < 1e-9);
        assert!(is_collinear_set(&pts, 1e-3));
    }

    #[test]
    fn any_triple_reading_differs_on_duplicates() {
        // A duplicated pair makes some triple degenerate without the set being a line.
        let pts = [p(0.0, 0.0), p(0.0, 0.0), p(10.0, 0.0), p(5.0, 8.0)];
        assert!(!is_collinear_set(&pts, 1e-3));
        let some_triple_degenerate = (0..4).any(|i| {
            (i + 1..4).any(|j| (j + 1..4).any(|k| triangle_area(pts[i], pts[j], pts[k]) == 0.0))
        });
        assert!(some_triple_degenerate);
    }

    /// Exhaustive definition, written independently of the implementation.
    fn collinear_oracle(points: &[Point], eps_rel: f64) -> bool {
        let n = points.len();
        if n < 3 {
            return false;
        }
        let mut d2 = 0.0f64;
        let mut ratios = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let dx = points[i].x - points[j].x;
                let dy = points[i].y - points[j].y;
                d2 = d2.max(dx * dx + dy * dy);
            }
        }
        if d2 == 0.0 {
            return true;
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if i < j && j < k {
                        let a = points[i];
                        let b = points[j];
                        let c = points[k];
                        let cross = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
                        ratios.push(0.5 * cross.abs() / d2);
                    }
                }
            }
        }
        ratios.iter().cloned().fold(0.0, f64::max) < eps_rel
    }

    fn arb_point() -> impl Strategy<Value = Point> {
        (0.0..1000.0f64, 0.0..1000.0f64).prop_map(|(x, y)| Point::new(x, y))
    }

    /// Points near a random line, so both outcomes of the predicate occur.
    fn arb_linear_set() -> impl Strategy<Value = Vec<Point>> {
        (
            3usize..=6,
            0.0..500.0f64,
            0.0..500.0f64,
            -3.0..3.0f64,
            0.0..3.0f64,
            prop::collection::vec((0.0..400.0f64, -1.0..1.0f64), 6),
        )
            .prop_map(|(n, x0, y0, angle, spread, offs)| {
                let (s, c) = angle.sin_cos();
                offs.iter()
                    .take(n)
                    .map(|&(t, o)| {
                        Point::new(x0 + c * t - s * o * spread, y0 + s * t + c * o * spread)
                    })
                    .collect()
            })
    }

    fn max_ratio(points: &[Point]) -> f64 {
        let n = points.len();
        let mut d2 = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                d2 = d2.max(points[i].distance_sq(&points[j]));
            }
        }
        let mut m = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    m = m.max(triangle_area(points[i], points[j], points[k]) / d2);
                }
            }
        }
        m
    }

    proptest! {
        #[test]
        fn area_permutation_translation_scaling(a in arb_point(), b in arb_point(), c in arb_point(),
                                                tx in -100.0..100.0f64, ty in -100.0..100.0f64,
                                                s in 0.1..10.0f64) {
            let base = triangle_area(a, b, c);
            let tol = 1e-9 * (1.0 + base);
            prop_assert!((triangle_area(b, c, a) - base).abs() < tol);
            prop_assert!((triangle_area(c, b, a) - base).abs() < tol);
            let t = |q: Point| Point::new(q.x + tx, q.y + ty);
            prop_assert!((triangle_area(t(a), t(b), t(c)) - base).abs() < 1e-6 * (1.0 + base));
            let sc = |q: Point| Point::new(q.x * s, q.y * s);
            let scaled = triangle_area(sc(a), sc(b), sc(c));
            prop_assert!((scaled - s * s * base).abs() < 1e-6 * (1.0 + s * s * base));
        }

        #[test]
        fn center_is_inside(x0 in -1e4..1e4f64, y0 in -1e4..1e4f64, w in 0.0..1e4f64, h in 0.0..1e4f64) {
            let b = BBox::new(x0, y0, x0 + w, y0 + h).unwrap();
            prop_assert!(point_in_bbox(bbox_center(&b), &b));
        }

        #[test]
        fn collinear_matches_oracle(pts in prop::collection::vec(arb_point(), 1..=6),
                                    line in arb_linear_set()) {
            for set in [&pts, &line] {
                prop_assert_eq!(is_collinear_set(set, 1e-3), collinear_oracle(set, 1e-3));
            }
        }

        #[test]
        fn collinear_similarity_invariant(pts in arb_linear_set(), angle in -3.2..3.2f64,
                                          s in 0.05..20.0f64, tx in -1e3..1e3f64, ty in -1e3..1e3f64) {
            let eps = 1e-3;
            let r = max_ratio(&pts);
            // Skip sets sitting on the decision boundary where rounding may flip the answer.
            prop_assume!((r - eps).abs() > 1e-3 * eps);
            let (sn, cs) = angle.sin_cos();
            let moved: Vec<Point> = pts
                .iter()
                .map(|q| Point::new(s * (cs * q.x - sn * q.y) + tx, s * (sn * q.x + cs * q.y) + ty))
                .collect();
            prop_assert_eq!(is_collinear_set(&pts, eps), is_collinear_set(&moved, eps));
        }
    }
}
