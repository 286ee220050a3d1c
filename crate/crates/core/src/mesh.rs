//! Structured polar triangulations of the closed unit disc and the P1 operators
//! used on them: element gradients, weak divergence tests against hat
//! functions, the collar pairing that defines a boundary Neumann trace, and
//! trapezoidal loop integrals.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use serde::{Deserialize, Serialize};

use crate::cplx2::{AmbientVector, TangentFrame};
use crate::error::{Error, Result};

pub type Point2 = [f64; 2];

/// Per-triangle constant planar vector field with complex components.
pub type ComplexVectorField = Vec<[Complex64; 2]>;

/// Denominator guard for normalized residuals.
pub const RESIDUAL_EPS: f64 = f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    Boundary,
}

/// Precomputed P1 data of one triangle.
#[derive(Debug, Clone, Copy)]
pub struct Element {
    pub area: f64,
    pub centroid: Point2,
    /// Gradients of the three barycentric (hat) functions.
    pub grad_hat: [Point2; 3],
}

/// A disc removed from residual tests, typically around a singular point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exclusion {
    pub center: Point2,
    pub radius: f64,
}

impl Exclusion {
    pub fn new(center: Point2, radius: f64) -> Self {
        Self { center, radius }
    }
}

/// Result of a weak divergence test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeakResidual {
    pub value: f64,
    pub n_tests: usize,
}

impl WeakResidual {
    /// True when no hat function survived the exclusions.
    pub fn is_empty(&self) -> bool {
        self.n_tests == 0
    }
}

/// A counterclockwise triangulation of the unit disc built from concentric rings.
#[derive(Debug, Clone)]
pub struct DiscMesh {
    pub nodes: Vec<Point2>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<[usize; 2]>,
    pub node_kinds: Vec<NodeKind>,
    pub elements: Vec<Element>,
    pub ring_radii: Vec<f64>,
    pub n_rings: usize,
    pub n_sectors: usize,
    pub grading: f64,
    node_triangles: Vec<Vec<usize>>,
}

/// Ring radius `(k/n)^{1/grading}`.
pub fn ring_radius(k: usize, n_rings: usize, grading: f64) -> f64 {
    (k as f64 / n_rings as f64).powf(1.0 / grading)
}

/// Builds the polar mesh: one centre node plus `n_sectors` nodes on each of
/// `n_rings` rings, the outermost on r = 1.
pub fn build_polar_mesh(n_rings: usize, n_sectors: usize, grading: f64) -> Result<DiscMesh> {
    if n_rings < 2 {
        return Err(Error::InvalidParameter(format!("n_rings = {n_rings} < 2")));
    }
    if n_sectors < 8 {
        return Err(Error::InvalidParameter(format!("n_sectors = {n_sectors} < 8")));
    }
    if !(0.2..=1.0).contains(&grading) {
        return Err(Error::InvalidParameter(format!("grading = {grading} outside [0.2, 1]")));
    }
    let s = n_sectors;
    let idx = |k: usize, j: usize| 1 + (k - 1) * s + (j % s);

    let ring_radii: Vec<f64> = (1..=n_rings).map(|k| if k == n_rings { 1.0 } else { ring_radius(k, n_rings, grading) }).collect();
    let mut nodes = Vec::with_capacity(1 + n_rings * s);
    let mut node_kinds = Vec::with_capacity(1 + n_rings * s);
    nodes.push([0.0, 0.0]);
    node_kinds.push(NodeKind::Interior);
    for (k0, &r) in ring_radii.iter().enumerate() {
        for j in 0..s {
            let theta = 2.0 * PI * j as f64 / s as f64;
            nodes.push([r * theta.cos(), r * theta.sin()]);
            node_kinds.push(if k0 + 1 == n_rings { NodeKind::Boundary } else { NodeKind::Interior });
        }
    }

    let mut triangles = Vec::with_capacity(s * (2 * n_rings - 1));
    for j in 0..s {
        triangles.push([0, idx(1, j), idx(1, j + 1)]);
    }
    for k in 1..n_rings {
        for j in 0..s {
            let a = idx(k, j);
            let b = idx(k + 1, j);
            let c = idx(k + 1, j + 1);
            let d = idx(k, j + 1);
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    let boundary_edges = (0..s).map(|j| [idx(n_rings, j), idx(n_rings, j + 1)]).collect();
    Ok(DiscMesh::from_parts(nodes, triangles, boundary_edges, node_kinds, ring_radii, n_rings, n_sectors, grading))
}

fn triangle_element(p: [Point2; 3]) -> Element {
    let [a, b, c] = p;
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    let area = 0.5 * det;
    // ∇λ_i = rot(opposite edge) / (2·area)
    let g = |p: Point2, q: Point2| [(p[1] - q[1]) / det, (q[0] - p[0]) / det];
    Element { area, centroid: [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0], grad_hat: [g(b, c), g(c, a), g(a, b)] }
}

fn dist_point_segment(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let l2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if l2 > 0.0 { ((ap[0] * ab[0] + ap[1] * ab[1]) / l2).clamp(0.0, 1.0) } else { 0.0 };
    let d = [ap[0] - t * ab[0], ap[1] - t * ab[1]];
    (d[0] * d[0] + d[1] * d[1]).sqrt()
}

/// Euclidean distance from `p` to a closed counterclockwise triangle.
pub fn dist_point_triangle(p: Point2, t: [Point2; 3]) -> f64 {
    let side = |a: Point2, b: Point2| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    if side(t[0], t[1]) >= 0.0 && side(t[1], t[2]) >= 0.0 && side(t[2], t[0]) >= 0.0 {
        return 0.0;
    }
    dist_point_segment(p, t[0], t[1]).min(dist_point_segment(p, t[1], t[2])).min(dist_point_segment(p, t[2], t[0]))
}

/// C¹ cubic smoothstep on [0, 1].
pub fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Radial collar cutoff: 0 for r ≤ r0, 1 at r = 1.
pub fn collar_cutoff(r: f64, r0: f64) -> f64 {
    smoothstep((r - r0) / (1.0 - r0))
}

// Degree-5 seven-point rule on the reference triangle (barycentric weights).
const DUNAVANT5: [(f64, [f64; 3]); 7] = {
    const A1: f64 = 0.059_715_871_789_770;
    const B1: f64 = 0.470_142_064_105_115;
    const A2: f64 = 0.797_426_985_353_087;
    const B2: f64 = 0.101_286_507_323_456;
    const W1: f64 = 0.132_394_152_788_506;
    const W2: f64 = 0.125_939_180_544_827;
    [(0.225, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]), (W1, [A1, B1, B1]), (W1, [B1, A1, B1]), (W1, [B1, B1, A1]), (W2, [A2, B2, B2]), (W2, [B2, A2, B2]), (W2, [B2, B2, A2])]
};

impl DiscMesh {
    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        nodes: Vec<Point2>,
        triangles: Vec<[usize; 3]>,
        boundary_edges: Vec<[usize; 2]>,
        node_kinds: Vec<NodeKind>,
        ring_radii: Vec<f64>,
        n_rings: usize,
        n_sectors: usize,
        grading: f64,
    ) -> Self {
        let elements = triangles.iter().map(|t| triangle_element([nodes[t[0]], nodes[t[1]], nodes[t[2]]])).collect();
        let mut node_triangles = vec![Vec::new(); nodes.len()];
        for (ti, t) in triangles.iter().enumerate() {
            for &v in t {
                node_triangles[v].push(ti);
            }
        }
        Self { nodes, triangles, boundary_edges, node_kinds, elements, ring_radii, n_rings, n_sectors, grading, node_triangles }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.node_kinds[i] == NodeKind::Boundary
    }

    /// Boundary nodes in counterclockwise order.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        self.boundary_edges.iter().map(|e| e[0]).collect()
    }

    pub fn triangles_of(&self, node: usize) -> &[usize] {
        &self.node_triangles[node]
    }

    /// Index of the node at `−p` for every node `p`; `None` for an odd sector count.
    pub fn antipodal_map(&self) -> Option<Vec<usize>> {
        let s = self.n_sectors;
        if !s.is_multiple_of(2) {
            return None;
        }
        let mut out = vec![0; self.n_nodes()];
        for k in 1..=self.n_rings {
            for j in 0..s {
                out[1 + (k - 1) * s + j] = 1 + (k - 1) * s + (j + s / 2) % s;
            }
        }
        Some(out)
    }

    pub fn polar(&self, i: usize) -> (f64, f64) {
        let [x, y] = self.nodes[i];
        ((x * x + y * y).sqrt(), y.atan2(x))
    }

    /// Mesh size: the longest triangle edge.
    pub fn h(&self) -> f64 {
        let mut h = 0.0_f64;
        for t in &self.triangles {
            for e in 0..3 {
                let a = self.nodes[t[e]];
                let b = self.nodes[t[(e + 1) % 3]];
                h = h.max(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt());
            }
        }
        h
    }

    pub fn corners(&self, t: usize) -> [Point2; 3] {
        let tri = self.triangles[t];
        [self.nodes[tri[0]], self.nodes[tri[1]], self.nodes[tri[2]]]
    }

    /// Total area of the triangulated polygon.
    pub fn area(&self) -> f64 {
        self.elements.iter().map(|e| e.area).sum()
    }

    /// Boundary quadrature weight per node: half the adjacent boundary edge lengths.
    pub fn boundary_weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.n_nodes()];
        for e in &self.boundary_edges {
            let a = self.nodes[e[0]];
            let b = self.nodes[e[1]];
            let l = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            w[e[0]] += 0.5 * l;
            w[e[1]] += 0.5 * l;
        }
        w
    }

    /// Checks every structural invariant of the mesh.
    pub fn validate(&self) -> Result<()> {
        for (t, e) in self.elements.iter().enumerate() {
            if !(e.area >= 1e-14) {
                return Err(Error::InvalidParameter(format!("triangle {t} has area {}", e.area)));
            }
        }
        for (i, k) in self.node_kinds.iter().enumerate() {
            if *k == NodeKind::Boundary && (self.polar(i).0 - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter(format!("boundary node {i} off the unit circle")));
            }
        }
        // single closed cycle
        let n = self.boundary_edges.len();
        for k in 0..n {
            if self.boundary_edges[k][1] != self.boundary_edges[(k + 1) % n][0] {
                return Err(Error::InvalidParameter("boundary edges do not chain".into()));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.boundary_edges {
            if !seen.insert(e[0]) {
                return Err(Error::InvalidParameter("boundary cycle revisits a node".into()));
            }
        }
        // conformity: interior edges shared by exactly two triangles, boundary edges by one
        let mut count = std::collections::HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_insert(0usize) += 1;
            }
        }
        let boundary: std::collections::HashSet<_> = self.boundary_edges.iter().map(|e| (e[0].min(e[1]), e[0].max(e[1]))).collect();
        for (edge, c) in count {
            let want = if boundary.contains(&edge) { 1 } else { 2 };
            if c != want {
                return Err(Error::InvalidParameter(format!("edge {edge:?} shared by {c} triangles")));
            }
        }
        Ok(())
    }

    /// Barycentric coordinates of `p` in triangle `t`.
    pub fn barycentric(&self, t: usize, p: Point2) -> [f64; 3] {
        let [a, b, c] = self.corners(t);
        let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
        let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
        [1.0 - l1 - l2, l1, l2]
    }

    /// Triangle containing `p` with its barycentric coordinates, if `p` lies in the polygon.
    pub fn locate(&self, p: Point2) -> Option<(usize, [f64; 3])> {
        const TOL: f64 = -1e-12;
        let inside = |l: &[f64; 3]| l.iter().all(|&v| v >= TOL);
        let r = p[0].hypot(p[1]);
        let s = self.n_sectors;
        let j = ((p[1].atan2(p[0]).rem_euclid(2.0 * PI)) / (2.0 * PI / s as f64)).floor() as usize % s;
        let k = self.ring_radii.partition_point(|&rk| rk < r);
        let mut candidates = Vec::with_capacity(6);
        for kk in k.saturating_sub(1)..=(k + 1).min(self.n_rings) {
            for jj in [j + s - 1, j, j + 1] {
                let jj = jj % s;
                if kk == 0 {
                    candidates.push(jj);
                } else if kk < self.n_rings {
                    let base = s + 2 * ((kk - 1) * s + jj);
                    candidates.push(base);
                    candidates.push(base + 1);
                }
            }
        }
        for t in candidates {
            let l = self.barycentric(t, p);
            if inside(&l) {
                return Some((t, l));
            }
        }
        (0..self.n_triangles()).map(|t| (t, self.barycentric(t, p))).find(|(_, l)| inside(l))
    }

    /// Piecewise-constant gradient `[∂_x, ∂_y]` of the P1 interpolant of `values`.
    pub fn element_gradient<T>(&self, values: &[T]) -> Vec<[T; 2]>
    where
        T: Copy + Sub<Output = T> + Add<Output = T> + Mul<f64, Output = T>,
    {
        assert_eq!(values.len(), self.n_nodes(), "field must carry one value per node");
        self.triangles
            .iter()
            .zip(&self.elements)
            .map(|(t, e)| {
                // differences make constants exact
                let (d1, d2) = (values[t[1]] - values[t[0]], values[t[2]] - values[t[0]]);
                let comp = |d: usize| d1 * e.grad_hat[1][d] + d2 * e.grad_hat[2][d];
                [comp(0), comp(1)]
            })
            .collect()
    }

    /// Nodal average over each triangle.
    pub fn element_mean<T>(&self, values: &[T]) -> Vec<T>
    where
        T: Copy + Add<Output = T> + Mul<f64, Output = T>,
    {
        self.triangles.iter().map(|t| (values[t[0]] + values[t[1]] + values[t[2]]) * (1.0 / 3.0)).collect()
    }

    /// Samples `f` at triangle centroids.
    pub fn sample_centroids<T>(&self, f: impl Fn(Point2) -> T) -> Vec<T> {
        self.elements.iter().map(|e| f(e.centroid)).collect()
    }

    /// Mean value of `f` over each triangle by a degree-5 rule.
    pub fn average_triangles<T>(&self, f: impl Fn(Point2) -> T) -> Vec<T>
    where
        T: Copy + Add<Output = T> + Mul<f64, Output = T>,
    {
        (0..self.n_triangles())
            .map(|t| {
                let c = self.corners(t);
                let mut acc: Option<T> = None;
                for (w, l) in DUNAVANT5 {
                    let p = [l[0] * c[0][0] + l[1] * c[1][0] + l[2] * c[2][0], l[0] * c[0][1] + l[1] * c[1][1] + l[2] * c[2][1]];
                    let v = f(p) * w;
                    acc = Some(match acc {
                        Some(a) => a + v,
                        None => v,
                    });
                }
                acc.expect("rule is non-empty")
            })
            .collect()
    }

    fn hat_is_testable(&self, node: usize, exclude: &[Exclusion]) -> bool {
        if self.is_boundary(node) {
            return false;
        }
        exclude.iter().all(|ex| {
            let p = self.nodes[node];
            let d = ((p[0] - ex.center[0]).powi(2) + (p[1] - ex.center[1]).powi(2)).sqrt();
            d > ex.radius && self.node_triangles[node].iter().all(|&t| dist_point_triangle(ex.center, self.corners(t)) > ex.radius)
        })
    }

    /// Largest normalized weak divergence `|∫ w·∇φ| / (‖w‖ ‖∇φ‖)` over interior
    /// hat functions `φ` whose support avoids all exclusions. Norms are L² over
    /// the support of `φ`; complex fields use the Hermitian modulus.
    pub fn weak_divergence_residual_complex(&self, w: &[[Complex64; 2]], exclude: &[Exclusion]) -> WeakResidual {
        self.weak_divergence_residual_floored(w, exclude, 0.0)
    }

    /// As [`Self::weak_divergence_residual_complex`], with `|w|` bounded below by
    /// `w_floor` in the normalization. Fields smaller than the floor count as zero.
    pub fn weak_divergence_residual_floored(&self, w: &[[Complex64; 2]], exclude: &[Exclusion], w_floor: f64) -> WeakResidual {
        assert_eq!(w.len(), self.n_triangles(), "field must carry one value per triangle");
        let mut worst = 0.0_f64;
        let mut n_tests = 0;
        for node in 0..self.n_nodes() {
            if !self.hat_is_testable(node, exclude) {
                continue;
            }
            n_tests += 1;
            let mut pairing = Complex64::new(0.0, 0.0);
            let mut w_sq = 0.0;
            let mut g_sq = 0.0;
            let mut supp = 0.0;
            for &t in &self.node_triangles[node] {
                let e = &self.elements[t];
                let local = self.triangles[t].iter().position(|&v| v == node).expect("node belongs to its triangles");
                let g = e.grad_hat[local];
                let wt = w[t];
                pairing += (wt[0] * g[0] + wt[1] * g[1]) * e.area;
                w_sq += (wt[0].norm_sqr() + wt[1].norm_sqr()) * e.area;
                g_sq += (g[0] * g[0] + g[1] * g[1]) * e.area;
                supp += e.area;
            }
            let w_norm = w_sq.sqrt().max(w_floor * supp.sqrt());
            let r = pairing.norm() / (w_norm * g_sq.sqrt() + RESIDUAL_EPS);
            worst = worst.max(r);
        }
        WeakResidual { value: worst, n_tests }
    }

    /// Real-field variant of [`Self::weak_divergence_residual_complex`].
    pub fn weak_divergence_residual(&self, w: &[Point2], exclude: &[Exclusion]) -> WeakResidual {
        let wc: ComplexVectorField = w.iter().map(|v| [Complex64::new(v[0], 0.0), Complex64::new(v[1], 0.0)]).collect();
        self.weak_divergence_residual_complex(&wc, exclude)
    }

    /// Collar pairing `∫ w·∇(φ̃χ)` realizing `⟨w·ν, φ⟩` on the unit circle.
    /// `φ̃(r, θ) = φ(θ)` and `χ` is the cubic collar cutoff vanishing for r ≤ r0.
    pub fn boundary_trace_pairing_complex(&self, w: &[[Complex64; 2]], phi: impl Fn(f64) -> f64, collar_r0: f64) -> Result<Complex64> {
        if !(collar_r0 > 0.0 && collar_r0 < 1.0) {
            return Err(Error::InvalidCollar(collar_r0));
        }
        assert_eq!(w.len(), self.n_triangles(), "field must carry one value per triangle");
        let psi: Vec<f64> = (0..self.n_nodes())
            .map(|i| {
                let (r, th) = self.polar(i);
                if r <= collar_r0 {
                    0.0
                } else {
                    phi(th) * collar_cutoff(r, collar_r0)
                }
            })
            .collect();
        let mut acc = Complex64::new(0.0, 0.0);
        for (t, (tri, e)) in self.triangles.iter().zip(&self.elements).enumerate() {
            if tri.iter().all(|&v| psi[v] == 0.0) {
                continue;
            }
            let gx = psi[tri[0]] * e.grad_hat[0][0] + psi[tri[1]] * e.grad_hat[1][0] + psi[tri[2]] * e.grad_hat[2][0];
            let gy = psi[tri[0]] * e.grad_hat[0][1] + psi[tri[1]] * e.grad_hat[1][1] + psi[tri[2]] * e.grad_hat[2][1];
            acc += (w[t][0] * gx + w[t][1] * gy) * e.area;
        }
        Ok(acc)
    }

    pub fn boundary_trace_pairing(&self, w: &[Point2], phi: impl Fn(f64) -> f64, collar_r0: f64) -> Result<f64> {
        let wc: ComplexVectorField = w.iter().map(|v| [Complex64::new(v[0], 0.0), Complex64::new(v[1], 0.0)]).collect();
        Ok(self.boundary_trace_pairing_complex(&wc, phi, collar_r0)?.re)
    }
}

/// A piecewise-linear map from the disc into C².
#[derive(Debug, Clone)]
pub struct DiscreteMap {
    pub mesh: DiscMesh,
    pub values: Vec<AmbientVector>,
    pub exact_frames: Option<Vec<TangentFrame>>,
}

impl DiscreteMap {
    pub fn new(mesh: DiscMesh, values: Vec<AmbientVector>) -> Result<Self> {
        Self::with_frames(mesh, values, None)
    }

    pub fn with_frames(mesh: DiscMesh, values: Vec<AmbientVector>, exact_frames: Option<Vec<TangentFrame>>) -> Result<Self> {
        if values.len() != mesh.n_nodes() {
            return Err(Error::InvalidParameter(format!("{} values for {} nodes", values.len(), mesh.n_nodes())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite value at node {i}")));
        }
        if let Some(f) = &exact_frames {
            if f.len() != mesh.n_nodes() {
                return Err(Error::InvalidParameter(format!("{} frames for {} nodes", f.len(), mesh.n_nodes())));
            }
        }
        Ok(Self { mesh, values, exact_frames })
    }

    /// P1 interpolant at a point of the polygon.
    pub fn eval(&self, p: Point2) -> Option<AmbientVector> {
        let (t, l) = self.mesh.locate(p)?;
        let tri = self.mesh.triangles[t];
        Some(l[0] * self.values[tri[0]] + l[1] * self.values[tri[1]] + l[2] * self.values[tri[2]])
    }

    /// Per-triangle tangent frames `(∂_x u, ∂_y u)` of the P1 interpolant.
    pub fn element_frames(&self) -> Vec<TangentFrame> {
        self.mesh.element_gradient(&self.values).into_iter().map(|[ex, ey]| TangentFrame::new(ex, ey)).collect()
    }

    pub fn dump(&self) -> MeshDump {
        let mut d = MeshDump::from_mesh(&self.mesh);
        d.values = Some(self.values.iter().map(|v| v.to_array()).collect());
        d
    }
}

/// A complex scalar per node.
#[derive(Debug, Clone)]
pub struct NodalComplexField {
    pub mesh: DiscMesh,
    pub values: Vec<Complex64>,
}

impl NodalComplexField {
    pub fn new(mesh: DiscMesh, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != mesh.n_nodes() {
            return Err(Error::InvalidParameter(format!("{} values for {} nodes", values.len(), mesh.n_nodes())));
        }
        if let Some(i) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::InvalidParameter(format!("non-finite value at node {i}")));
        }
        Ok(Self { mesh, values })
    }

    pub fn gradient(&self) -> ComplexVectorField {
        self.mesh.element_gradient(&self.values)
    }
}

/// JSON document describing a mesh, optionally with nodal values and a boundary curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshDump {
    pub nodes: Vec<Point2>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<[f64; 4]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve_points: Option<Vec<[f64; 4]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve_normals: Option<Vec<[f64; 4]>>,
}

impl MeshDump {
    pub fn from_mesh(m: &DiscMesh) -> Self {
        Self { nodes: m.nodes.clone(), triangles: m.triangles.clone(), boundary_edges: m.boundary_edges.clone(), values: None, curve_points: None, curve_normals: None }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Flux `∮ w·ν dσ` and circulation `∮ w·τ dσ` over a circle by the trapezoid rule.
pub fn loop_integrals(w: impl Fn(Point2) -> [Complex64; 2], center: Point2, radius: f64, n_quad: usize) -> Result<(Complex64, Complex64)> {
    let c_norm = (center[0] * center[0] + center[1] * center[1]).sqrt();
    if !(radius > 0.0) || c_norm + radius >= 1.0 || n_quad == 0 {
        return Err(Error::InvalidLoop { cx: center[0], cy: center[1], radius });
    }
    let ds = 2.0 * PI * radius / n_quad as f64;
    let mut flux = Complex64::new(0.0, 0.0);
    let mut circ = Complex64::new(0.0, 0.0);
    for k in 0..n_quad {
        let t = 2.0 * PI * k as f64 / n_quad as f64;
        let (s, c) = t.sin_cos();
        let v = w([center[0] + radius * c, center[1] + radius * s]);
        flux += (v[0] * c + v[1] * s) * ds;
        circ += (-v[0] * s + v[1] * c) * ds;
    }
    Ok((flux, circ))
}

/// Least-squares slope of `log err` against `log h`.
pub fn convergence_order(h: &[f64], err: &[f64]) -> f64 {
    assert_eq!(h.len(), err.len());
    let n = h.len() as f64;
    let xs: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

/// Roundoff level below which a residual sequence counts as converged.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

/// True when `err` decreases with order at least `min_order`, or already sits
/// at roundoff on every mesh.
pub fn converges_with_order(h: &[f64], err: &[f64], min_order: f64) -> bool {
    if err.iter().all(|&e| e <= ROUNDOFF_FLOOR) {
        return true;
    }
    convergence_order(h, err) >= min_order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn real(w: [f64; 2]) -> [Complex64; 2] {
        [Complex64::new(w[0], 0.0), Complex64::new(w[1], 0.0)]
    }

    #[test]
    fn antipodal_nodes() {
        let m = build_polar_mesh(3, 8, 0.7).unwrap();
        let a = m.antipodal_map().unwrap();
        for (i, &j) in a.iter().enumerate() {
            assert!((m.nodes[i][0] + m.nodes[j][0]).abs() < 1e-14 && (m.nodes[i][1] + m.nodes[j][1]).abs() < 1e-14);
        }
        assert!(build_polar_mesh(2, 9, 1.0).unwrap().antipodal_map().is_none());
    }

    #[test]
    fn counts_by_construction() {
        let m = build_polar_mesh(2, 8, 1.0).unwrap();
        assert_eq!(m.n_nodes(), 17);
        assert_eq!(m.n_triangles(), 24);
        assert_eq!(m.boundary_edges.len(), 8);
        m.validate().unwrap();
        let m = build_polar_mesh(7, 20, 0.4).unwrap();
        assert_eq!(m.n_nodes(), 1 + 7 * 20);
        assert_eq!(m.n_triangles(), 20 * (2 * 7 - 1));
        m.validate().unwrap();
    }

    #[test]
    fn grading_sets_ring_radii() {
        let m = build_polar_mesh(3, 12, 0.5).unwrap();
        for k in 1..=3 {
            assert!((m.ring_radii[k - 1] - (k as f64 / 3.0).powi(2)).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_parameters() {
        assert!(matches!(build_polar_mesh(1, 8, 1.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(build_polar_mesh(4, 7, 1.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(build_polar_mesh(4, 8, 0.1), Err(Error::InvalidParameter(_))));
        assert!(matches!(build_polar_mesh(4, 8, 1.5), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn gradient_exact_on_affine_fields() {
        let m = build_polar_mesh(5, 16, 0.7).unwrap();
        let x: Vec<f64> = m.nodes.iter().map(|p| p[0]).collect();
        for g in m.element_gradient(&x) {
            assert!((g[0] - 1.0).abs() < 1e-12 && g[1].abs() < 1e-12);
        }
        let c = vec![3.0; m.n_nodes()];
        for g in m.element_gradient(&c) {
            assert!(g[0].abs() < 1e-12 && g[1].abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_of_x_squared_converges_linearly() {
        let mut hs = Vec::new();
        let mut errs = Vec::new();
        for &(r, s) in &[(8, 32), (16, 64), (32, 128)] {
            let m = build_polar_mesh(r, s, 1.0).unwrap();
            let f: Vec<f64> = m.nodes.iter().map(|p| p[0] * p[0]).collect();
            let g = m.element_gradient(&f);
            // the P1 gradient is exact at edge midpoints, not centroids: O(h) in sup norm
            let err = g.iter().zip(&m.elements).map(|(g, e)| (g[0] - 2.0 * e.centroid[0]).abs().max(g[1].abs())).fold(0.0, f64::max);
            hs.push(m.h());
            errs.push(err);
        }
        let order = convergence_order(&hs, &errs);
        assert!(order > 0.9, "order {order}, errors {errs:?}");
    }

    #[test]
    fn constant_field_is_weakly_divergence_free() {
        let m = build_polar_mesh(6, 24, 1.0).unwrap();
        let w = vec![[0.3, -1.2]; m.n_triangles()];
        let r = m.weak_divergence_residual(&w, &[]);
        assert!(r.value < 1e-14, "{}", r.value);
        assert!(r.n_tests > 0);
    }

    #[test]
    fn radial_field_has_nonzero_divergence() {
        for &(r, s) in &[(8, 48), (12, 64)] {
            let m = build_polar_mesh(r, s, 1.0).unwrap();
            assert!(m.h() <= 0.2);
            let w = m.sample_centroids(|p| p);
            assert!(m.weak_divergence_residual(&w, &[]).value >= 0.1);
        }
    }

    #[test]
    fn exclusions_remove_tests() {
        let m = build_polar_mesh(4, 8, 1.0).unwrap();
        let all = m.weak_divergence_residual(&vec![[1.0, 0.0]; m.n_triangles()], &[]);
        let none = m.weak_divergence_residual(&vec![[1.0, 0.0]; m.n_triangles()], &[Exclusion::new([0.0, 0.0], 2.0)]);
        assert!(!all.is_empty());
        assert!(none.is_empty());
        assert_eq!(none.value, 0.0);
    }

    #[test]
    fn pairing_of_constant_field_vanishes() {
        let m = build_polar_mesh(8, 32, 1.0).unwrap();
        let w = vec![[1.0, 0.0]; m.n_triangles()];
        let v = m.boundary_trace_pairing(&w, |_| 1.0, 0.5).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn pairing_of_constant_field_against_cosine() {
        // ∮ (−1, 0)·ν cos θ = −π, polygonal error O(h²)
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for &(r, s) in &[(8, 32), (16, 64), (32, 128)] {
            let m = build_polar_mesh(r, s, 1.0).unwrap();
            let w = vec![[-1.0, 0.0]; m.n_triangles()];
            let v = m.boundary_trace_pairing(&w, f64::cos, 0.5).unwrap();
            errs.push((v + PI).abs());
            hs.push(m.h());
        }
        assert!(errs[2] < 2e-3, "{errs:?}");
        assert!(convergence_order(&hs, &errs) > 1.8, "{errs:?}");
    }

    #[test]
    fn invalid_collar() {
        let m = build_polar_mesh(4, 8, 1.0).unwrap();
        let w = vec![[1.0, 0.0]; m.n_triangles()];
        assert!(matches!(m.boundary_trace_pairing(&w, |_| 1.0, 0.0), Err(Error::InvalidCollar(_))));
        assert!(matches!(m.boundary_trace_pairing(&w, |_| 1.0, 1.0), Err(Error::InvalidCollar(_))));
    }

    #[test]
    fn loop_integrals_of_fundamental_solution() {
        let grad_log = |p: Point2| {
            let r2 = p[0] * p[0] + p[1] * p[1];
            real([p[0] / r2, p[1] / r2])
        };
        let (flux, circ) = loop_integrals(grad_log, [0.0, 0.0], 0.5, 64).unwrap();
        assert!((flux.re - 2.0 * PI).abs() < 1e-10 && circ.norm() < 1e-10);
        let perp = |p: Point2| {
            let r2 = p[0] * p[0] + p[1] * p[1];
            real([-p[1] / r2, p[0] / r2])
        };
        for &rad in &[0.2, 0.4, 0.8] {
            let (f, c) = loop_integrals(perp, [0.0, 0.0], rad, 64).unwrap();
            assert!(f.norm() < 1e-10 && (c.re - 2.0 * PI).abs() < 1e-10);
        }
        let (f, c) = loop_integrals(|_| real([1.0, 0.0]), [0.1, 0.2], 0.3, 64).unwrap();
        assert!(f.norm() < 1e-12 && c.norm() < 1e-12);
    }

    #[test]
    fn loop_outside_disc_rejected() {
        assert!(matches!(loop_integrals(|_| real([1.0, 0.0]), [0.5, 0.0], 0.6, 16), Err(Error::InvalidLoop { .. })));
    }

    #[test]
    fn point_triangle_distance() {
        let t = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert_eq!(dist_point_triangle([0.2, 0.2], t), 0.0);
        assert!((dist_point_triangle([-1.0, 0.0], t) - 1.0).abs() < 1e-15);
        assert!((dist_point_triangle([1.0, 1.0], t) - 0.5_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn degree_five_rule_integrates_quadratics() {
        let m = build_polar_mesh(3, 8, 1.0).unwrap();
        let avg = m.average_triangles(|p| p[0] * p[0] + p[0] * p[1]);
        for (t, a) in avg.iter().enumerate() {
            let c = m.corners(t);
            // edge-midpoint rule is exact for quadratics
            let mid = |a: Point2, b: Point2| [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let f = |p: Point2| p[0] * p[0] + p[0] * p[1];
            let exact = (f(mid(c[0], c[1])) + f(mid(c[1], c[2])) + f(mid(c[2], c[0]))) / 3.0;
            assert!((a - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn dump_has_expected_keys() {
        let m = build_polar_mesh(2, 8, 1.0).unwrap();
        let vals = m.nodes.iter().map(|p| AmbientVector::new(p[0], 0.0, p[1], 0.0)).collect();
        let u = DiscreteMap::new(m, vals).unwrap();
        let v: serde_json::Value = serde_json::from_str(&u.dump().to_json().unwrap()).unwrap();
        for key in ["nodes", "triangles", "boundary_edges", "values"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v.get("curve_points").is_none());
        assert_eq!(v["values"].as_array().unwrap().len(), 17);
        let back: MeshDump = serde_json::from_value(v).unwrap();
        assert_eq!(back, u.dump());
    }

    #[test]
    fn discrete_map_rejects_bad_input() {
        let m = build_polar_mesh(2, 8, 1.0).unwrap();
        assert!(DiscreteMap::new(m.clone(), vec![AmbientVector::ZERO; 3]).is_err());
        let mut v = vec![AmbientVector::ZERO; 17];
        v[4].x1 = f64::NAN;
        assert!(DiscreteMap::new(m, v).is_err());
    }

    #[test]
    fn locate_and_evaluate() {
        let m = build_polar_mesh(6, 24, 0.7).unwrap();
        let vals = m.nodes.iter().map(|p| AmbientVector::new(p[0], 2.0 * p[1], p[0] - p[1], 1.0)).collect();
        let u = DiscreteMap::new(m.clone(), vals).unwrap();
        for k in 0..200 {
            let r = 0.95 * (k as f64 / 200.0).sqrt();
            let t = 0.37 * k as f64;
            let p = [r * t.cos(), r * t.sin()];
            let (tri, l) = m.locate(p).unwrap();
            assert!(l.iter().all(|&v| v >= -1e-12));
            assert!(dist_point_triangle(p, m.corners(tri)) < 1e-12);
            let v = u.eval(p).unwrap();
            assert!((v - AmbientVector::new(p[0], 2.0 * p[1], p[0] - p[1], 1.0)).norm() < 1e-13);
        }
        assert!(m.locate([0.0, 1.01]).is_none());
    }
}
