//! Least-squares conformal flattening with two pinned vertices.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::mesh::{cross, dot, norm, sub, SurfaceMesh};

use super::{FlattenedMesh, UnwrapError};

/// Conjugate-gradient stopping rule on the normal equations.
const CG_REL_TOL: f64 = 1e-13;

struct Frame {
    /// Complex weights `W_j`, already scaled by `1 / sqrt(2 A)`.
    w: [(f64, f64); 3],
}

fn triangle_frame(p: [[f64; 3]; 3]) -> Result<Frame, UnwrapError> {
    let e1 = sub(p[1], p[0]);
    let e2 = sub(p[2], p[0]);
    let l1 = norm(e1);
    let c = norm(cross(e1, e2));
    if !(l1 > 0.0 && c > 1e-12) {
        return Err(UnwrapError::Singular);
    }
    // Local 2D coordinates, counter-clockwise.
    let q = [(0.0, 0.0), (l1, 0.0), (dot(e1, e2) / l1, c / l1)];
    let s = 1.0 / c.sqrt();
    let mut w = [(0.0, 0.0); 3];
    for (j, wj) in w.iter_mut().enumerate() {
        let a = q[(j + 2) % 3];
        let b = q[(j + 1) % 3];
        *wj = ((a.0 - b.0) * s, (a.1 - b.1) * s);
    }
    Ok(Frame { w })
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Shortest edge-path distance between two vertices.
pub fn edge_geodesic(mesh: &SurfaceMesh, from: usize, to: usize) -> f64 {
    let n = mesh.vertices.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for f in &mesh.faces {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut best = vec![f64::INFINITY; n];
    let mut heap = BinaryHeap::new();
    best[from] = 0.0;
    heap.push(HeapItem(0.0, from));
    while let Some(HeapItem(d, v)) = heap.pop() {
        if v == to {
            return d;
        }
        if d > best[v] {
            continue;
        }
        for &u in &adj[v] {
            let nd = d + norm(sub(mesh.vertices[u], mesh.vertices[v]));
            if nd < best[u] {
                best[u] = nd;
                heap.push(HeapItem(nd, u));
            }
        }
    }
    best[to]
}

/// Vertices on edges used by exactly one face, ascending.
pub fn boundary_vertices(mesh: &SurfaceMesh) -> Vec<usize> {
    let mut edges: Vec<(usize, usize)> = mesh
        .faces
        .iter()
        .flat_map(|f| (0..3).map(move |k| (f[k].min(f[(k + 1) % 3]), f[k].max(f[(k + 1) % 3]))))
        .collect();
    edges.sort_unstable();
    let mut out = Vec::new();
    let mut i = 0;
    while i < edges.len() {
        let mut j = i;
        while j < edges.len() && edges[j] == edges[i] {
            j += 1;
        }
        if j - i == 1 {
            out.push(edges[i].0);
            out.push(edges[i].1);
        }
        i = j;
    }
    out.sort_unstable();
    out.dedup();
    out
}

fn farthest_pair(mesh: &SurfaceMesh, candidates: &[usize]) -> (usize, usize) {
    let mut best = (candidates[0], candidates[candidates.len() - 1], -1.0);
    for (i, &a) in candidates.iter().enumerate() {
        for &b in &candidates[i + 1..] {
            let d = norm(sub(mesh.vertices[a], mesh.vertices[b]));
            if d > best.2 {
                best = (a, b, d);
            }
        }
    }
    (best.0, best.1)
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

fn corner_angles2(p: [[f64; 2]; 3]) -> [f64; 3] {
    let lift = |q: [f64; 2]| [q[0], q[1], 0.0];
    corner_angles3([lift(p[0]), lift(p[1]), lift(p[2])])
}

fn corner_angles3(p: [[f64; 3]; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (j, o) in out.iter_mut().enumerate() {
        let a = sub(p[(j + 1) % 3], p[j]);
        let b = sub(p[(j + 2) % 3], p[j]);
        *o = norm(cross(a, b)).atan2(dot(a, b));
    }
    out
}

/// Flattens a disk-like mesh by least-squares conformal mapping.
///
/// The two boundary vertices farthest apart are pinned to `(0, 0)` and
/// `(L, 0)`, with `L` their shortest edge-path distance. The sparse normal
/// equations are solved with Jacobi-preconditioned conjugate gradients. The
/// result is rescaled so mean UV triangle area equals mean 3D triangle area,
/// rotated so the first grid row runs along `+u`, and translated so the
/// minimum UV is the origin.
pub fn flatten_mesh(mesh: &SurfaceMesh) -> Result<FlattenedMesh, UnwrapError> {
    let n = mesh.vertices.len();
    if mesh.faces.is_empty() || n < 3 {
        return Err(UnwrapError::Singular);
    }
    let frames: Vec<Frame> = mesh
        .faces
        .iter()
        .map(|f| triangle_frame(f.map(|i| mesh.vertices[i])))
        .collect::<Result<_, _>>()?;

    let boundary = boundary_vertices(mesh);
    if boundary.len() < 2 {
        return Err(UnwrapError::NotDisk);
    }
    let (pa, pb) = farthest_pair(mesh, &boundary);
    let length = edge_geodesic(mesh, pa, pb);
    if !length.is_finite() || length <= 0.0 {
        return Err(UnwrapError::NotDisk);
    }

    // Unknown layout: free vertex k owns entries 2k (u) and 2k + 1 (v).
    let mut slot = vec![usize::MAX; n];
    let mut free = 0;
    for (v, s) in slot.iter_mut().enumerate() {
        if v != pa && v != pb {
            *s = free;
            free += 1;
        }
    }
    let mut pinned = vec![None; n];
    pinned[pa] = Some([0.0, 0.0]);
    pinned[pb] = Some([length, 0.0]);

    let mut diag = vec![0.0; 2 * free];
    for (f, fr) in mesh.faces.iter().zip(&frames) {
        for j in 0..3 {
            let s = slot[f[j]];
            if s != usize::MAX {
                let m = fr.w[j].0 * fr.w[j].0 + fr.w[j].1 * fr.w[j].1;
                diag[2 * s] += m;
                diag[2 * s + 1] += m;
            }
        }
    }
    if diag.iter().any(|&d| d <= 0.0) {
        return Err(UnwrapError::Singular);
    }

    // y = M_free^T (M_free x + offset), where offset holds the pinned terms.
    let apply = |x: &[f64], with_pins: bool, y: &mut [f64]| {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (f, fr) in mesh.faces.iter().zip(&frames) {
            let (mut re, mut im) = (0.0, 0.0);
            for j in 0..3 {
                let (a, b) = fr.w[j];
                let (u, v) = match pinned[f[j]] {
                    Some(p) if with_pins => (p[0], p[1]),
                    Some(_) => continue,
                    None if with_pins => continue,
                    None => (x[2 * slot[f[j]]], x[2 * slot[f[j]] + 1]),
                };
                re += a * u - b * v;
                im += b * u + a * v;
            }
            for j in 0..3 {
                let s = slot[f[j]];
                if s == usize::MAX {
                    continue;
                }
                let (a, b) = fr.w[j];
                y[2 * s] += a * re + b * im;
                y[2 * s + 1] += -b * re + a * im;
            }
        }
    };

    let mut rhs = vec![0.0; 2 * free];
    apply(&[], true, &mut rhs);
    rhs.iter_mut().for_each(|v| *v = -*v);
    let x0 = projected_guess(mesh, pa, pb, length, &slot, free, |x, y| apply(x, false, y), &rhs);
    let x = conjugate_gradient(|x, y| apply(x, false, y), &rhs, &diag, x0)?;

    let mut uv: Vec<[f64; 2]> = (0..n)
        .map(|v| match pinned[v] {
            Some(p) => p,
            None => [x[2 * slot[v]], x[2 * slot[v] + 1]],
        })
        .collect();
    if uv.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(UnwrapError::Singular);
    }

    // Orientation: reflect if most triangles came out clockwise.
    let negative = mesh
        .faces
        .iter()
        .filter(|f| signed_area(uv[f[0]], uv[f[1]], uv[f[2]]) < 0.0)
        .count();
    if 2 * negative > mesh.faces.len() {
        uv.iter_mut().for_each(|p| p[1] = -p[1]);
    }

    // Uniform scale to match mean areas.
    let area3: f64 = (0..mesh.faces.len()).map(|i| mesh.face_area(i)).sum();
    let area2: f64 = mesh
        .faces
        .iter()
        .map(|f| signed_area(uv[f[0]], uv[f[1]], uv[f[2]]).abs())
        .sum();
    if !(area2 > 0.0) {
        return Err(UnwrapError::Singular);
    }
    let scale = (area3 / area2).sqrt();

    // Rotate the first row onto +u.
    let (a, b) = if mesh.cols >= 2 && mesh.rows * mesh.cols == n {
        (0, mesh.cols - 1)
    } else {
        (pa, pb)
    };
    let angle = (uv[b][1] - uv[a][1]).atan2(uv[b][0] - uv[a][0]);
    let (s, c) = (-angle).sin_cos();
    for p in uv.iter_mut() {
        let (u, v) = (p[0] * scale, p[1] * scale);
        *p = [c * u - s * v, s * u + c * v];
    }
    let min_u = uv.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let min_v = uv.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    uv.iter_mut().for_each(|p| {
        p[0] -= min_u;
        p[1] -= min_v;
    });

    let flipped = mesh
        .faces
        .iter()
        .filter(|f| signed_area(uv[f[0]], uv[f[1]], uv[f[2]]) <= 0.0)
        .count();
    if flipped > 0 {
        return Err(UnwrapError::Flipped(flipped));
    }

    let mut area_ratio = Vec::with_capacity(mesh.faces.len());
    let mut angle_deviation = Vec::with_capacity(mesh.faces.len());
    for (i, f) in mesh.faces.iter().enumerate() {
        let t2 = f.map(|k| uv[k]);
        area_ratio.push(signed_area(t2[0], t2[1], t2[2]) / mesh.face_area(i));
        let a2 = corner_angles2(t2);
        let a3 = corner_angles3(f.map(|k| mesh.vertices[k]));
        angle_deviation.push((0..3).map(|j| (a2[j] - a3[j]).abs()).fold(0.0, f64::max));
    }

    let mut base = mesh.clone();
    base.uv = Some(uv);
    Ok(FlattenedMesh {
        base,
        uv_scale: 1.0,
        area_ratio,
        angle_deviation,
    })
}

/// Starting point for the solve: the vertices projected onto their
/// best-fit plane, mapped by the similarity that sends the pins to their
/// targets. Both plane orientations are tried and the one with the smaller
/// residual is kept.
#[allow(clippy::too_many_arguments)]
fn projected_guess(
    mesh: &SurfaceMesh,
    pa: usize,
    pb: usize,
    length: f64,
    slot: &[usize],
    free: usize,
    op: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
) -> Vec<f64> {
    let n = mesh.vertices.len() as f64;
    let mut c = [0.0; 3];
    for v in &mesh.vertices {
        for k in 0..3 {
            c[k] += v[k] / n;
        }
    }
    let mut cov = Matrix3::zeros();
    for v in &mesh.vertices {
        let d = Vector3::new(v[0] - c[0], v[1] - c[1], v[2] - c[2]);
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let e1 = eig.eigenvectors.column(order[0]).into_owned();
    let e2 = eig.eigenvectors.column(order[1]).into_owned();
    let plane: Vec<(f64, f64)> = mesh
        .vertices
        .iter()
        .map(|v| {
            let d = Vector3::new(v[0] - c[0], v[1] - c[1], v[2] - c[2]);
            (d.dot(&e1), d.dot(&e2))
        })
        .collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mirror in [1.0, -1.0] {
        let q = |i: usize| (plane[i].0, mirror * plane[i].1);
        let (za, zb) = (q(pa), q(pb));
        let (dr, di) = (zb.0 - za.0, zb.1 - za.1);
        let dd = dr * dr + di * di;
        if dd == 0.0 {
            continue;
        }
        // Multiply by length / (zb - za).
        let (mr, mi) = (length * dr / dd, -length * di / dd);
        let mut x = vec![0.0; 2 * free];
        for (v, &s) in slot.iter().enumerate() {
            if s != usize::MAX {
                let (pr, pi) = (q(v).0 - za.0, q(v).1 - za.1);
                x[2 * s] = pr * mr - pi * mi;
                x[2 * s + 1] = pr * mi + pi * mr;
            }
        }
        let mut ax = vec![0.0; 2 * free];
        op(&x, &mut ax);
        let res: f64 = ax.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(r, _)| res < *r) {
            best = Some((res, x));
        }
    }
    best.map(|(_, x)| x).unwrap_or_else(|| vec![0.0; 2 * free])
}

/// Jacobi-preconditioned conjugate gradients for an SPD operator.
fn conjugate_gradient(
    op: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    diag: &[f64],
    x0: Vec<f64>,
) -> Result<Vec<f64>, UnwrapError> {
    let n = b.len();
    let mut x = x0;
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut r = vec![0.0; n];
    op(&x, &mut r);
    r.iter_mut().zip(b).for_each(|(r, b)| *r = b - *r);
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let max_iter = 20 * n + 1000;
    let mut rnorm = bnorm;
    for it in 0..max_iter {
        op(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            if rnorm <= 1e-9 * bnorm {
                break;
            }
            return Err(UnwrapError::Singular);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= CG_REL_TOL * bnorm {
            log::debug!("cg converged in {} iterations", it + 1);
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if rnorm <= 1e-9 * bnorm {
        log::warn!("cg stopped at relative residual {:.2e}", rnorm / bnorm);
        Ok(x)
    } else {
        Err(UnwrapError::NoConvergence(rnorm / bnorm))
    }
}
