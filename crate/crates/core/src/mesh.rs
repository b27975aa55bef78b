//! Triangulated surfaces with chain-grid structure and Wavefront OBJ IO.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("grid mesh needs at least 2x2 vertices, got {rows}x{cols}")]
    TooSmall { rows: usize, cols: usize },
    #[error("vertex count {got} != rows*cols = {expected}")]
    VertexCount { expected: usize, got: usize },
    #[error("triangle {0} is degenerate (zero area)")]
    Degenerate(usize),
    #[error("obj parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Vec3 = [f64; 3];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// A triangle-strip grid surface: `rows` chains of `cols` vertices each.
///
/// Vertex `(r, c)` lives at index `r * cols + c`. Each grid quad is split
/// into two triangles, giving `2 (rows-1)(cols-1)` faces.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub uv: Option<Vec<[f64; 2]>>,
    pub rows: usize,
    pub cols: usize,
}

impl SurfaceMesh {
    /// Builds the strip triangulation over a row-major vertex grid.
    pub fn from_grid(vertices: Vec<Vec3>, rows: usize, cols: usize) -> Result<Self, MeshError> {
        if rows < 2 || cols < 2 {
            return Err(MeshError::TooSmall { rows, cols });
        }
        if vertices.len() != rows * cols {
            return Err(MeshError::VertexCount {
                expected: rows * cols,
                got: vertices.len(),
            });
        }
        let mut faces = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
        for r in 0..rows - 1 {
            for c in 0..cols - 1 {
                let a = r * cols + c;
                let b = a + 1;
                let d = a + cols;
                let e = d + 1;
                faces.push([a, b, d]);
                faces.push([b, e, d]);
            }
        }
        let mesh = Self {
            vertices,
            faces,
            uv: None,
            rows,
            cols,
        };
        if let Some(i) = mesh.faces.iter().position(|f| mesh.face_area_of(f) <= 1e-12) {
            return Err(MeshError::Degenerate(i));
        }
        Ok(mesh)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    fn face_area_of(&self, f: &[usize; 3]) -> f64 {
        let [a, b, c] = f.map(|i| self.vertices[i]);
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn face_area(&self, face: usize) -> f64 {
        self.face_area_of(&self.faces[face])
    }

    /// Unnormalized face normal (length = twice the area).
    pub fn face_normal(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.faces[face].map(|i| self.vertices[i]);
        cross(sub(b, a), sub(c, a))
    }

    /// Area-weighted vertex normals, normalized to unit length.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![[0.0; 3]; self.vertices.len()];
        for (fi, f) in self.faces.iter().enumerate() {
            let n = self.face_normal(fi);
            for &v in f {
                acc[v] = add(acc[v], n);
            }
        }
        acc.into_iter()
            .map(|n| {
                let l = norm(n);
                if l > 0.0 {
                    scale(n, 1.0 / l)
                } else {
                    n
                }
            })
            .collect()
    }

    /// Unique undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| {
                (0..3).map(move |k| {
                    let (a, b) = (f[k], f[(k + 1) % 3]);
                    (a.min(b), a.max(b))
                })
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }

    /// Serializes as OBJ: `v` records, `vt` records when UVs are present, and
    /// 1-based `f` records. The grid shape is kept in a leading comment.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# grid {} {}", self.rows, self.cols);
        for v in &self.vertices {
            let _ = writeln!(s, "v {:.9} {:.9} {:.9}", v[0], v[1], v[2]);
        }
        if let Some(uv) = &self.uv {
            for t in uv {
                let _ = writeln!(s, "vt {:.9} {:.9}", t[0], t[1]);
            }
            for f in &self.faces {
                let _ = writeln!(
                    s,
                    "f {0}/{0} {1}/{1} {2}/{2}",
                    f[0] + 1,
                    f[1] + 1,
                    f[2] + 1
                );
            }
        } else {
            for f in &self.faces {
                let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
            }
        }
        s
    }

    pub fn save_obj(&self, path: &Path) -> Result<(), MeshError> {
        fs::write(path, self.to_obj())?;
        Ok(())
    }

    /// Parses OBJ text produced by [`to_obj`](Self::to_obj).
    pub fn from_obj(text: &str) -> Result<Self, MeshError> {
        let mut grid = None;
        let mut vertices = Vec::new();
        let mut uvs = Vec::new();
        let mut faces = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line_no = ln + 1;
            let err = |msg: &str| MeshError::Parse {
                line: line_no,
                msg: msg.to_string(),
            };
            let mut it = line.split_whitespace();
            match it.next() {
                Some("#") => {
                    if it.next() == Some("grid") {
                        let r = it.next().and_then(|t| t.parse().ok());
                        let c = it.next().and_then(|t| t.parse().ok());
                        match (r, c) {
                            (Some(r), Some(c)) => grid = Some((r, c)),
                            _ => return Err(err("bad grid comment")),
                        }
                    }
                }
                Some("v") => {
                    let xs: Vec<f64> = it.map(|t| t.parse()).collect::<Result<_, _>>().map_err(|_| err("bad vertex"))?;
                    if xs.len() < 3 {
                        return Err(err("vertex needs 3 coordinates"));
                    }
                    vertices.push([xs[0], xs[1], xs[2]]);
                }
                Some("vt") => {
                    let xs: Vec<f64> = it.map(|t| t.parse()).collect::<Result<_, _>>().map_err(|_| err("bad uv"))?;
                    if xs.len() < 2 {
                        return Err(err("uv needs 2 coordinates"));
                    }
                    uvs.push([xs[0], xs[1]]);
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|t| t.split('/').next().unwrap_or("").parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| err("bad face"))?;
                    if idx.len() != 3 || idx.iter().any(|&i| i == 0 || i > vertices.len()) {
                        return Err(err("face must reference 3 existing vertices"));
                    }
                    faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
                }
                _ => {}
            }
        }
        let (rows, cols) = grid.ok_or(MeshError::Parse {
            line: 0,
            msg: "missing `# grid rows cols` header".into(),
        })?;
        if vertices.len() != rows * cols {
            return Err(MeshError::VertexCount {
                expected: rows * cols,
                got: vertices.len(),
            });
        }
        let uv = if uvs.is_empty() {
            None
        } else if uvs.len() == vertices.len() {
            Some(uvs)
        } else {
            return Err(MeshError::Parse {
                line: 0,
                msg: format!("{} uvs for {} vertices", uvs.len(), vertices.len()),
            });
        };
        Ok(Self {
            vertices,
            faces,
            uv,
            rows,
            cols,
        })
    }

    pub fn load_obj(path: &Path) -> Result<Self, MeshError> {
        Self::from_obj(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane(rows: usize, cols: usize) -> SurfaceMesh {
        let v = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| [c as f64, r as f64, 3.0]))
            .collect();
        SurfaceMesh::from_grid(v, rows, cols).unwrap()
    }

    #[test]
    fn strip_counts_and_euler() {
        let m = plane(4, 6);
        assert_eq!(m.vertex_count(), 24);
        assert_eq!(m.faces.len(), 2 * 3 * 5);
        assert_eq!(m.euler_characteristic(), 1);
    }

    #[test]
    fn degenerate_grid_rejected() {
        let v = vec![[0.0; 3]; 4];
        assert!(matches!(
            SurfaceMesh::from_grid(v, 2, 2),
            Err(MeshError::Degenerate(0))
        ));
        assert!(SurfaceMesh::from_grid(vec![[0.0; 3]; 3], 1, 3).is_err());
    }

    #[test]
    fn obj_round_trip() {
        let mut m = plane(3, 3);
        let back = SurfaceMesh::from_obj(&m.to_obj()).unwrap();
        assert_eq!(back, m);
        m.uv = Some(m.vertices.iter().map(|v| [v[0] * 0.5, v[1]]).collect());
        let back = SurfaceMesh::from_obj(&m.to_obj()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn vertex_normals_of_plane() {
        let m = plane(3, 4);
        for n in m.vertex_normals() {
            assert!((n[2].abs() - 1.0).abs() < 1e-12);
        }
    }
}
