use spade::{DelaunayTriangulation, Point2, Triangulation};

use crate::error::{Error, Result};
use crate::imaging::Point;

/// Delaunay triangles as index triples into `points`, each sorted ascending
/// and the list sorted lexicographically. Exact duplicates are collapsed onto
/// their first occurrence.
pub fn triangulate(points: &[Point]) -> Result<Vec<[usize; 3]>> {
    let mut tri: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    let mut owner: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite point {i}")));
        }
        let h = tri
            .insert(Point2::new(p.x, p.y))
            .map_err(|e| Error::InvalidInput(format!("point {i}: {e:?}")))?;
        if h.index() == owner.len() {
            owner.push(i);
        }
    }
    if owner.len() < 3 {
        return Err(Error::InvalidInput(format!("{} unique points, need 3", owner.len())));
    }
    let mut out: Vec<[usize; 3]> = tri
        .inner_faces()
        .map(|f| {
            let mut t = f.vertices().map(|v| owner[v.fix().index()]);
            t.sort_unstable();
            t
        })
        .collect();
    if out.is_empty() {
        return Err(Error::InvalidInput("all points are collinear".into()));
    }
    out.sort_unstable();
    Ok(out)
}

/// Corners and edge midpoints at pixel-center coordinates.
pub fn border_points(w: u32, h: u32) -> [Point; 8] {
    let (x1, y1) = (w as f64 - 1.0, h as f64 - 1.0);
    let (xm, ym) = (x1 / 2.0, y1 / 2.0);
    [
        Point::new(0.0, 0.0),
        Point::new(xm, 0.0),
        Point::new(x1, 0.0),
        Point::new(x1, ym),
        Point::new(x1, y1),
        Point::new(xm, y1),
        Point::new(0.0, y1),
        Point::new(0.0, ym),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gives_two_triangles() {
        let pts = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ];
        let t = triangulate(&pts).unwrap();
        assert_eq!(t.len(), 2);
        let area: f64 = t
            .iter()
            .map(|&[a, b, c]| {
                let (p, q, r) = (pts[a], pts[b], pts[c]);
                ((q.x - p.x) * (r.y - p.y) - (r.x - p.x) * (q.y - p.y)).abs() / 2.0
            })
            .sum();
        assert!((area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicates_collapse_and_too_few_points_fail() {
        let pts = [Point::new(0.0, 0.0), Point::new(0.0, 0.0), Point::new(1.0, 0.0)];
        assert!(triangulate(&pts).is_err());
        let pts = [
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(0.0, 2.0),
        ];
        assert_eq!(triangulate(&pts).unwrap(), vec![[0, 1, 3]]);
    }

    #[test]
    fn collinear_points_fail() {
        let pts: Vec<Point> = (0..5).map(|i| Point::new(i as f64, 2.0 * i as f64)).collect();
        assert!(triangulate(&pts).is_err());
    }
}
