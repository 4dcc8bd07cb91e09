use std::collections::{HashMap, HashSet, VecDeque};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Triangular mesh with a marked, ordered subset of data vertices.
///
/// Coordinates are stored as 3-vectors; planar meshes carry `z = 0` and
/// `dim == 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    vertices: Vec<[f64; 3]>,
    dim: usize,
    faces: Vec<[usize; 3]>,
    data_indices: Vec<usize>,
}

impl TriMesh {
    /// Validates and builds a mesh.
    ///
    /// Checks that faces reference valid distinct vertices, that data indices
    /// are distinct and in range, that faces are consistently oriented, and
    /// that the mesh is connected.
    pub fn new(
        vertices: Vec<[f64; 3]>,
        dim: usize,
        faces: Vec<[usize; 3]>,
        data_indices: Vec<usize>,
    ) -> Result<Self> {
        let mesh = TriMesh {
            vertices,
            dim,
            faces,
            data_indices,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn planar(points: Vec<[f64; 2]>, faces: Vec<[usize; 3]>, data_indices: Vec<usize>) -> Result<Self> {
        let vertices = points.into_iter().map(|[x, y]| [x, y, 0.0]).collect();
        Self::new(vertices, 2, faces, data_indices)
    }

    fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if self.dim != 2 && self.dim != 3 {
            return Err(Error::InvalidMesh(format!("dimension {} not in {{2, 3}}", self.dim)));
        }
        if n == 0 {
            return Err(Error::InvalidMesh("no vertices".into()));
        }
        for (f, tri) in self.faces.iter().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return Err(Error::InvalidMesh(format!("face {f} references a missing vertex")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidMesh(format!("face {f} repeats a vertex")));
            }
        }
        let mut seen = HashSet::new();
        for &d in &self.data_indices {
            if d >= n {
                return Err(Error::InvalidMesh(format!("data index {d} out of range")));
            }
            if !seen.insert(d) {
                return Err(Error::InvalidMesh(format!("data index {d} repeated")));
            }
        }
        // Consistent orientation: each directed edge appears at most once.
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (f, tri) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let e = (tri[k], tri[(k + 1) % 3]);
                if let Some(other) = directed.insert(e, f) {
                    return Err(Error::InvalidMesh(format!(
                        "faces {other} and {f} are inconsistently oriented (edge {}-{})",
                        e.0, e.1
                    )));
                }
            }
        }
        if self.dim == 2 {
            let signs: HashSet<bool> = self
                .faces
                .iter()
                .map(|t| self.signed_area_2d(t) > 0.0)
                .collect();
            if signs.len() > 1 {
                return Err(Error::InvalidMesh("planar faces have mixed orientation".into()));
            }
        }
        if !self.is_connected() {
            return Err(Error::InvalidMesh("mesh is not connected".into()));
        }
        Ok(())
    }

    fn is_connected(&self) -> bool {
        let n = self.vertices.len();
        let adj = self.vertex_adjacency();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    queue.push_back(u);
                }
            }
        }
        count == n
    }

    pub(crate) fn signed_area_2d(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Neighbour lists from the face edges.
    pub fn vertex_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); self.vertices.len()];
        for t in &self.faces {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }

    #[inline]
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    #[inline]
    pub fn n_data(&self) -> usize {
        self.data_indices.len()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    #[inline]
    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    #[inline]
    pub fn data_indices(&self) -> &[usize] {
        &self.data_indices
    }

    /// Text format: `N V` header, `N` coordinate lines (2 or 3 values), the
    /// face count, face lines, then `V` data-index lines. Indices are 0-based.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.n_vertices(), self.n_data())?;
        for v in &self.vertices {
            if self.dim == 2 {
                writeln!(w, "{} {}", v[0], v[1])?;
            } else {
                writeln!(w, "{} {} {}", v[0], v[1], v[2])?;
            }
        }
        writeln!(w, "{}", self.faces.len())?;
        for f in &self.faces {
            writeln!(w, "{} {} {}", f[0], f[1], f[2])?;
        }
        for d in &self.data_indices {
            writeln!(w, "{d}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R, origin: &Path) -> Result<Self> {
        let mut lines = r
            .lines()
            .map(|l| l.map_err(Error::from))
            .filter(|l| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
        let mut next_fields = |what: &str| -> Result<Vec<String>> {
            let line = lines
                .next()
                .ok_or_else(|| Error::parse(origin, format!("unexpected end of file reading {what}")))??;
            Ok(line.split_whitespace().map(str::to_owned).collect())
        };
        let bad = |what: &str| Error::parse(origin, format!("malformed {what}"));
        let header = next_fields("header")?;
        if header.len() != 2 {
            return Err(bad("header"));
        }
        let n: usize = header[0].parse().map_err(|_| bad("header"))?;
        let v: usize = header[1].parse().map_err(|_| bad("header"))?;
        let mut vertices = Vec::with_capacity(n);
        let mut dim = 0;
        for _ in 0..n {
            let f = next_fields("vertex")?;
            if dim == 0 {
                dim = f.len();
            }
            if f.len() != dim || !(dim == 2 || dim == 3) {
                return Err(bad("vertex line"));
            }
            let mut p = [0.0; 3];
            for (k, s) in f.iter().enumerate() {
                p[k] = s.parse().map_err(|_| bad("vertex coordinate"))?;
            }
            vertices.push(p);
        }
        let fc = next_fields("face count")?;
        let n_faces: usize = fc
            .first()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("face count"))?;
        let mut faces = Vec::with_capacity(n_faces);
        for _ in 0..n_faces {
            let f = next_fields("face")?;
            if f.len() != 3 {
                return Err(bad("face line"));
            }
            let mut t = [0usize; 3];
            for k in 0..3 {
                t[k] = f[k].parse().map_err(|_| bad("face index"))?;
            }
            faces.push(t);
        }
        let mut data = Vec::with_capacity(v);
        for _ in 0..v {
            let f = next_fields("data index")?;
            data.push(
                f.first()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("data index"))?,
            );
        }
        TriMesh::new(vertices, dim.max(2), faces, data)
    }

    pub fn read_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f), path)
    }
}
