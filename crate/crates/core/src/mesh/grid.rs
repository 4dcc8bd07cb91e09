use serde::{Deserialize, Serialize};

use super::TriMesh;
use crate::error::{Error, Result};

/// One ring of boundary extension: `loops` concentric rectangles spaced
/// `spacing` apart, each sampled with vertex spacing `spacing`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRing {
    pub spacing: f64,
    pub loops: usize,
}

/// Boundary extension around a pixel grid, innermost ring first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub rings: Vec<BoundaryRing>,
}

impl BoundarySpec {
    pub fn none() -> Self {
        BoundarySpec { rings: Vec::new() }
    }

    /// `rings` rings whose edge length doubles outward, starting at 2 pixels,
    /// with two loops per ring.
    pub fn doubling(rings: usize) -> Self {
        BoundarySpec {
            rings: (0..rings)
                .map(|r| BoundaryRing {
                    spacing: 2f64.powi(r as i32 + 1),
                    loops: 2,
                })
                .collect(),
        }
    }

    /// Total distance from the data boundary to the outer mesh boundary.
    pub fn extent(&self) -> f64 {
        self.rings.iter().map(|r| r.spacing * r.loops as f64).sum()
    }
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self::doubling(2)
    }
}

/// A closed loop of vertices (counter-clockwise from the lower-left corner)
/// with each vertex's position along the four sides: `side + t`, `t in [0,1)`.
struct Loop {
    ids: Vec<usize>,
    side_pos: Vec<f64>,
}

fn rect_loop(
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    spacing: f64,
    points: &mut Vec<[f64; 2]>,
) -> Loop {
    let w = x1 - x0;
    let h = y1 - y0;
    let nw = ((w / spacing).round() as usize).max(1);
    let nh = ((h / spacing).round() as usize).max(1);
    let mut ids = Vec::new();
    let mut side_pos = Vec::new();
    let mut push = |p: [f64; 2], s: f64| {
        ids.push(points.len());
        points.push(p);
        side_pos.push(s);
    };
    for k in 0..nw {
        let t = k as f64 / nw as f64;
        push([x0 + t * w, y0], t);
    }
    for k in 0..nh {
        let t = k as f64 / nh as f64;
        push([x1, y0 + t * h], 1.0 + t);
    }
    for k in 0..nw {
        let t = k as f64 / nw as f64;
        push([x1 - t * w, y1], 2.0 + t);
    }
    for k in 0..nh {
        let t = k as f64 / nh as f64;
        push([x0, y1 - t * h], 3.0 + t);
    }
    Loop { ids, side_pos }
}

/// Triangulates the annulus between an inner and an outer loop, advancing
/// along whichever loop is behind in side position.
fn stitch(inner: &Loop, outer: &Loop, faces: &mut Vec<[usize; 3]>) {
    let (na, nb) = (inner.ids.len(), outer.ids.len());
    let pos = |l: &Loop, k: usize| {
        if k >= l.ids.len() {
            4.0
        } else {
            l.side_pos[k]
        }
    };
    let (mut i, mut j) = (0, 0);
    while i < na || j < nb {
        let a = inner.ids[i % na];
        let b = outer.ids[j % nb];
        let advance_inner = if i == na {
            false
        } else if j == nb {
            true
        } else {
            pos(inner, i + 1) <= pos(outer, j + 1)
        };
        if advance_inner {
            faces.push([a, inner.ids[(i + 1) % na], b]);
            i += 1;
        } else {
            faces.push([a, outer.ids[(j + 1) % nb], b]);
            j += 1;
        }
    }
}

/// Pixel-grid mesh: `rows x cols` unit-spaced data vertices (row-major, at
/// `x = col`, `y = row`), each cell split along its diagonal, surrounded by
/// the requested boundary rings.
///
/// Data vertices come first, so `data_indices == 0..rows*cols`.
pub fn grid_mesh(rows: usize, cols: usize, boundary: &BoundarySpec) -> Result<TriMesh> {
    if rows < 2 || cols < 2 {
        return Err(Error::InvalidDims { rows, cols });
    }
    if boundary
        .rings
        .iter()
        .any(|r| !(r.spacing > 0.0) || r.loops == 0)
    {
        return Err(Error::InvalidArgument(
            "boundary rings need positive spacing and at least one loop".into(),
        ));
    }
    let id = |r: usize, c: usize| r * cols + c;
    let mut points: Vec<[f64; 2]> = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            points.push([c as f64, r as f64]);
        }
    }
    let mut faces = Vec::new();
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let (v00, v01, v10, v11) = (id(r, c), id(r, c + 1), id(r + 1, c), id(r + 1, c + 1));
            faces.push([v00, v01, v11]);
            faces.push([v00, v11, v10]);
        }
    }

    // Data perimeter as the innermost loop.
    let (w, h) = ((cols - 1) as f64, (rows - 1) as f64);
    let mut inner = Loop {
        ids: Vec::new(),
        side_pos: Vec::new(),
    };
    for c in 0..cols - 1 {
        inner.ids.push(id(0, c));
        inner.side_pos.push(c as f64 / w);
    }
    for r in 0..rows - 1 {
        inner.ids.push(id(r, cols - 1));
        inner.side_pos.push(1.0 + r as f64 / h);
    }
    for k in 0..cols - 1 {
        inner.ids.push(id(rows - 1, cols - 1 - k));
        inner.side_pos.push(2.0 + k as f64 / w);
    }
    for k in 0..rows - 1 {
        inner.ids.push(id(rows - 1 - k, 0));
        inner.side_pos.push(3.0 + k as f64 / h);
    }

    let mut offset = 0.0;
    for ring in &boundary.rings {
        for _ in 0..ring.loops {
            offset += ring.spacing;
            let outer = rect_loop(-offset, -offset, w + offset, h + offset, ring.spacing, &mut points);
            stitch(&inner, &outer, &mut faces);
            inner = outer;
        }
    }

    // Orient every face counter-clockwise.
    for f in &mut faces {
        let [a, b, c] = f.map(|i| points[i]);
        let area2 = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if area2 < 0.0 {
            f.swap(1, 2);
        }
    }
    TriMesh::planar(points, faces, (0..rows * cols).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_without_boundary() {
        let m = grid_mesh(2, 2, &BoundarySpec::none()).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.faces().len(), 2);
        assert_eq!(m.data_indices(), &[0, 1, 2, 3]);
    }

    #[test]
    fn rejects_degenerate_dims() {
        assert!(matches!(
            grid_mesh(1, 5, &BoundarySpec::none()),
            Err(Error::InvalidDims { .. })
        ));
    }

    #[test]
    fn paper_scale_grid_has_expected_data_count() {
        let m = grid_mesh(46, 55, &BoundarySpec::default()).unwrap();
        assert_eq!(m.n_data(), 2530);
        assert!(m.n_vertices() > m.n_data());
        assert!(m.n_vertices() < 10_000);
        // every face positively oriented
        assert!(m.faces().iter().all(|f| m.signed_area_2d(f) > 0.0));
    }

    #[test]
    fn data_vertices_strictly_inside_hull_with_one_layer() {
        let spec = BoundarySpec::doubling(1);
        let m = grid_mesh(3, 3, &spec).unwrap();
        let ext = spec.extent();
        let (lo_x, hi_x, lo_y, hi_y) = m.vertices().iter().fold(
            (f64::MAX, f64::MIN, f64::MAX, f64::MIN),
            |(a, b, c, d), v| (a.min(v[0]), b.max(v[0]), c.min(v[1]), d.max(v[1])),
        );
        assert_eq!((lo_x, hi_x, lo_y, hi_y), (-ext, 2.0 + ext, -ext, 2.0 + ext));
        for &d in m.data_indices() {
            let v = m.vertices()[d];
            assert!(v[0] > lo_x && v[0] < hi_x && v[1] > lo_y && v[1] < hi_y);
        }
    }

    #[test]
    fn total_area_matches_outer_rectangle() {
        let spec = BoundarySpec::default();
        let m = grid_mesh(7, 9, &spec).unwrap();
        let e = spec.extent();
        let area: f64 = m.faces().iter().map(|f| m.signed_area_2d(f)).sum();
        assert!((area - (8.0 + 2.0 * e) * (6.0 + 2.0 * e)).abs() < 1e-9);
    }
}
