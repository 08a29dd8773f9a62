use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::canny::EdgeMap;
use crate::error::{Error, Result};
use crate::registration::{cross, Point2};

/// Photo outline with corners ordered top-left, top-right, bottom-right,
/// bottom-left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    corners: [Point2; 4],
}

impl Quad {
    /// Orders `points` canonically and checks the outline is strictly convex.
    pub fn new(points: [Point2; 4]) -> Result<Quad> {
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::DegenerateInput("quad corner is not finite".into()));
        }
        let corners = canonical_order(points);
        let q = Quad { corners };
        if !q.is_convex() {
            return Err(Error::DegenerateInput("quad is not convex".into()));
        }
        Ok(q)
    }

    /// Outline of a `width`x`height` image along its outer pixel edges.
    pub fn full_frame(width: usize, height: usize) -> Quad {
        let (w, h) = (width as f64 - 0.5, height as f64 - 0.5);
        Quad {
            corners: [Point2::new(-0.5, -0.5), Point2::new(w, -0.5), Point2::new(w, h), Point2::new(-0.5, h)],
        }
    }

    pub fn corners(&self) -> [Point2; 4] {
        self.corners
    }

    pub fn area(&self) -> f64 {
        polygon_area(&self.corners).abs()
    }

    pub fn perimeter(&self) -> f64 {
        (0..4).map(|i| self.corners[i].distance(&self.corners[(i + 1) % 4])).sum()
    }

    fn is_convex(&self) -> bool {
        let c = &self.corners;
        let turns: Vec<f64> = (0..4).map(|i| cross(&c[i], &c[(i + 1) % 4], &c[(i + 2) % 4])).collect();
        let scale = self.perimeter().powi(2).max(f64::MIN_POSITIVE);
        turns.iter().all(|t| t / scale > 1e-9) || turns.iter().all(|t| t / scale < -1e-9)
    }

    /// Largest distance between corresponding corners.
    pub fn max_corner_error(&self, other: &[Point2; 4]) -> f64 {
        self.corners.iter().zip(other).map(|(a, b)| a.distance(b)).fold(0.0, f64::max)
    }
}

impl Serialize for Quad {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.corners.map(|p| [p.x, p.y]).serialize(s)
    }
}

fn polygon_area(p: &[Point2]) -> f64 {
    let n = p.len();
    (0..n).map(|i| p[i].x * p[(i + 1) % n].y - p[(i + 1) % n].x * p[i].y).sum::<f64>() / 2.0
}

/// Angular sort around the centroid (clockwise on screen, y pointing down),
/// rotated to start at the corner with the smallest `x + y`.
fn canonical_order(points: [Point2; 4]) -> [Point2; 4] {
    let cx = points.iter().map(|p| p.x).sum::<f64>() / 4.0;
    let cy = points.iter().map(|p| p.y).sum::<f64>() / 4.0;
    let mut v = points.to_vec();
    v.sort_by(|a, b| (a.y - cy).atan2(a.x - cx).total_cmp(&(b.y - cy).atan2(b.x - cx)));
    let start = (0..4)
        .min_by(|&i, &j| (v[i].x + v[i].y).total_cmp(&(v[j].x + v[j].y)).then(v[i].y.total_cmp(&v[j].y)))
        .unwrap_or(0);
    std::array::from_fn(|k| v[(start + k) % 4])
}

fn components(edges: &EdgeMap) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (edges.width, edges.height);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if !edges.edges[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            comp.push((x, y));
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if edges.edges[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        out.push(comp);
    }
    out.sort_by_key(|c| std::cmp::Reverse(c.len()));
    out
}

/// Andrew's monotone chain; counter-clockwise in y-up terms, no repeats.
fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut hull: Vec<Point2> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point2>> = if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for q in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(*q);
        }
        hull.pop();
    }
    hull
}

fn segment_distance(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let len = a.distance(b);
    if len == 0.0 {
        return p.distance(a);
    }
    cross(a, b, p).abs() / len
}

fn douglas_peucker(chain: &[Point2], eps: f64, out: &mut Vec<Point2>) {
    let (a, b) = (chain[0], chain[chain.len() - 1]);
    let far = (1..chain.len() - 1)
        .map(|i| (i, segment_distance(&chain[i], &a, &b)))
        .max_by(|x, y| x.1.total_cmp(&y.1));
    match far {
        Some((i, d)) if d > eps => {
            douglas_peucker(&chain[..=i], eps, out);
            douglas_peucker(&chain[i..], eps, out);
        }
        _ => out.push(a),
    }
}

/// Douglas-Peucker on a closed polygon, anchored at two mutually distant
/// vertices.
fn simplify_closed(poly: &[Point2], eps: f64) -> Vec<Point2> {
    let n = poly.len();
    if n < 4 {
        return poly.to_vec();
    }
    let cx = poly.iter().map(|p| p.x).sum::<f64>() / n as f64;
    let cy = poly.iter().map(|p| p.y).sum::<f64>() / n as f64;
    let c = Point2::new(cx, cy);
    let a = (0..n).max_by(|&i, &j| poly[i].distance(&c).total_cmp(&poly[j].distance(&c))).unwrap_or(0);
    let b = (0..n).max_by(|&i, &j| poly[i].distance(&poly[a]).total_cmp(&poly[j].distance(&poly[a]))).unwrap_or(0);
    let rotated: Vec<Point2> = (0..=n).map(|k| poly[(a + k) % n]).collect();
    let split = (b + n - a) % n;
    let mut out = Vec::new();
    douglas_peucker(&rotated[..=split], eps, &mut out);
    douglas_peucker(&rotated[split..], eps, &mut out);
    out
}

/// Total-least-squares line through `pts`: (point on line, unit direction).
fn fit_line(pts: &[Point2]) -> Option<(Point2, (f64, f64))> {
    if pts.len() < 5 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.x).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.y).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    Some((Point2::new(mx, my), (theta.cos(), theta.sin())))
}

fn intersect(l1: (Point2, (f64, f64)), l2: (Point2, (f64, f64))) -> Option<Point2> {
    let ((p, d), (q, e)) = (l1, l2);
    let den = d.0 * e.1 - d.1 * e.0;
    if den.abs() < 1e-9 {
        return None;
    }
    let t = ((q.x - p.x) * e.1 - (q.y - p.y) * e.0) / den;
    Some(Point2::new(p.x + t * d.0, p.y + t * d.1))
}

/// Replaces each polygon corner by the intersection of lines fitted to the
/// edge pixels along its two adjacent sides.
fn refine_corners(corners: &[Point2; 4], pixels: &[Point2], band: f64) -> [Point2; 4] {
    let mut lines = Vec::with_capacity(4);
    for i in 0..4 {
        let (a, b) = (corners[i], corners[(i + 1) % 4]);
        let len = a.distance(&b);
        let (ux, uy) = ((b.x - a.x) / len, (b.y - a.y) / len);
        let mut line = None;
        let mut width = band;
        for _ in 0..3 {
            let (o, (dx, dy)) = line.unwrap_or((a, (ux, uy)));
            let near: Vec<Point2> = pixels
                .iter()
                .filter(|p| {
                    let t = ((p.x - a.x) * ux + (p.y - a.y) * uy) / len;
                    let dist = ((p.x - o.x) * dy - (p.y - o.y) * dx).abs();
                    (0.1..=0.9).contains(&t) && dist <= width
                })
                .copied()
                .collect();
            match fit_line(&near) {
                Some(l) => line = Some(l),
                None => break,
            }
            width = (width * 0.5).max(1.5);
        }
        lines.push(line);
    }
    std::array::from_fn(|i| {
        let prev = lines[(i + 3) % 4];
        let next = lines[i];
        match prev.zip(next).and_then(|(l1, l2)| intersect(l1, l2)) {
            Some(p) if p.distance(&corners[i]) <= band * 2.0 => p,
            _ => corners[i],
        }
    })
}

/// Accepts `pixels` as a photo outline when their hull simplifies to a
/// convex quadrilateral covering at least `min_area`.
fn quad_from_pixels(pixels: &[Point2], min_area: f64) -> Option<Quad> {
    let hull = convex_hull(pixels);
    if hull.len() < 4 {
        return None;
    }
    let perimeter: f64 = (0..hull.len()).map(|i| hull[i].distance(&hull[(i + 1) % hull.len()])).sum();
    let simplified = simplify_closed(&hull, 0.02 * perimeter);
    let corners: [Point2; 4] = simplified.try_into().ok()?;
    let rough = Quad::new(corners).ok()?;
    if rough.area() < min_area {
        return None;
    }
    let band = (0.01 * perimeter).max(3.0);
    let refined = refine_corners(&rough.corners(), pixels, band);
    Quad::new(refined).ok().filter(|q| q.area() >= min_area).or(Some(rough))
}

/// Locates the photo outline in an edge map.
///
/// Edge pixels are grouped into 8-connected components. The largest
/// components are tried in turn, then the union of all sizeable ones; a
/// candidate passes when its convex hull simplifies (tolerance 2% of the
/// hull perimeter) to exactly four vertices forming a convex quad of at
/// least 20% of the image area. Corners are then refined by intersecting
/// lines fitted to the edge pixels of each side.
pub fn find_photo_quad(edges: &EdgeMap) -> Result<Quad> {
    let min_area = 0.2 * (edges.width * edges.height) as f64;
    let comps = components(edges);
    let Some(largest) = comps.first() else {
        return Err(Error::NoQuadFound);
    };
    let to_points = |c: &[(usize, usize)]| c.iter().map(|&(x, y)| Point2::new(x as f64, y as f64)).collect::<Vec<_>>();
    for comp in comps.iter().take(5) {
        if let Some(q) = quad_from_pixels(&to_points(comp), min_area) {
            return Ok(q);
        }
    }
    let floor = (largest.len() / 100).max(10);
    let union: Vec<Point2> = comps.iter().filter(|c| c.len() >= floor).flat_map(|c| to_points(c)).collect();
    quad_from_pixels(&union, min_area).ok_or(Error::NoQuadFound)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OverrideRecord {
    id: String,
    corners: [[f64; 2]; 4],
}

/// Reads every annotation in an override file: a JSON array of
/// `{"id": ..., "corners": [[x, y], [x, y], [x, y], [x, y]]}` in capture
/// pixel coordinates, any corner order.
pub fn load_quad_overrides(path: &Path) -> Result<BTreeMap<String, Quad>> {
    let text = fs::read_to_string(path)?;
    let records: Vec<OverrideRecord> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut out = BTreeMap::new();
    for r in records {
        let pts = r.corners.map(|[x, y]| Point2::new(x, y));
        let q = Quad::new(pts).map_err(|e| Error::InvalidAnnotation { id: r.id.clone(), message: e.to_string() })?;
        if out.insert(r.id.clone(), q).is_some() {
            return Err(Error::InvalidAnnotation { id: r.id, message: "duplicate annotation".into() });
        }
    }
    Ok(out)
}

/// The annotated quad for `image_id`, if the override file has one.
pub fn load_quad_override(path: &Path, image_id: &str) -> Result<Option<Quad>> {
    Ok(load_quad_overrides(path)?.remove(image_id))
}
