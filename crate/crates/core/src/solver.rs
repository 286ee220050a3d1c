//! Penalized Dirichlet-energy descent over discrete maps, Hamiltonian flows of
//! nodal maps, flat-disc diagnostics and the rigidity experiment.

use std::io::Write;

use nalgebra::{DMatrix, Matrix4, SymmetricEigen, Vector4};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::{flat_disc, IDENTITY};
use crate::cplx2::{apply_i, lagrangian_angle, symplectic, AmbientVector, TangentFrame, DEGENERATE_FRAME_TOL};
use crate::domain::{Domain, LevelSet};
use crate::error::{Error, Result};
use crate::hamiltonian::{ambient, hopf_invariant_quadratic, i_matrix, radial_invariant, vec4, Hamiltonian, Profile};
use crate::mesh::{DiscMesh, DiscreteMap};
use crate::residual::pointwise_geometry_report;

/// Backtracking parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LineSearch {
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
    pub initial_step: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self { armijo: 1e-4, shrink: 0.5, max_backtracks: 50, initial_step: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// λ₁, weight of `∫|u*ω|²`.
    pub penalty_lagrangian: f64,
    /// λ₂, weight of `Σ F(u)²` over boundary nodes.
    pub penalty_boundary: f64,
    /// Iteration cap per continuation stage.
    pub max_iters: usize,
    pub grad_tol: f64,
    pub line_search: LineSearch,
    /// `(λ₁, λ₂)` stages run before the final `(penalty_lagrangian, penalty_boundary)` one.
    pub continuation: Vec<(f64, f64)>,
    /// Mass shift μ of the preconditioner `K + μM`.
    pub preconditioner_shift: f64,
    /// Restrict iterates to odd maps, `u(−p) = −u(p)`.
    pub odd_symmetry: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            penalty_lagrangian: 1e3,
            penalty_boundary: 1e4,
            max_iters: 3000,
            grad_tol: 1e-9,
            line_search: LineSearch::default(),
            continuation: vec![(10.0, 1e2), (1e2, 1e3), (1e3, 1e4)],
            preconditioner_shift: 1.0,
            odd_symmetry: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        for &(l1, l2) in self.stages().iter() {
            if !(l1 >= 0.0 && l1.is_finite()) {
                return bad(format!("lagrangian penalty {l1}"));
            }
            if !(l2 > 0.0 && l2.is_finite()) {
                return bad(format!("boundary penalty {l2}"));
            }
        }
        if !(self.grad_tol > 0.0) {
            return bad(format!("grad_tol {}", self.grad_tol));
        }
        let ls = &self.line_search;
        if !(ls.armijo > 0.0 && ls.armijo < 1.0 && ls.shrink > 0.0 && ls.shrink < 1.0 && ls.initial_step > 0.0) {
            return bad(format!("line search {ls:?}"));
        }
        if !(self.preconditioner_shift > 0.0) {
            return bad(format!("preconditioner shift {}", self.preconditioner_shift));
        }
        Ok(())
    }

    /// Continuation stages, always ending at `(penalty_lagrangian, penalty_boundary)`.
    pub fn stages(&self) -> Vec<(f64, f64)> {
        let last = (self.penalty_lagrangian, self.penalty_boundary);
        let mut s = self.continuation.clone();
        if s.last() != Some(&last) {
            s.push(last);
        }
        s
    }
}

/// Energy split into its three terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyParts {
    pub dirichlet: f64,
    pub lagrangian: f64,
    pub boundary: f64,
}

impl EnergyParts {
    pub fn total(&self) -> f64 {
        self.dirichlet + self.lagrangian + self.boundary
    }
}

struct EnergyModel<'a> {
    mesh: &'a DiscMesh,
    level: &'a LevelSet,
    boundary: Vec<usize>,
    weights: Vec<f64>,
    l1: f64,
    l2: f64,
}

impl<'a> EnergyModel<'a> {
    fn new(mesh: &'a DiscMesh, d: &'a Domain, l1: f64, l2: f64) -> Result<Self> {
        let level = d.level_set().ok_or(Error::Unsupported("energy penalty on a curve-only domain"))?;
        let w = mesh.boundary_weights();
        let boundary = mesh.boundary_nodes();
        let weights = boundary.iter().map(|&i| w[i]).collect();
        Ok(Self { mesh, level, boundary, weights, l1, l2 })
    }

    fn eval(&self, values: &[AmbientVector], grad: Option<&mut Vec<AmbientVector>>) -> EnergyParts {
        let mut parts = EnergyParts::default();
        let mut g = grad;
        if let Some(g) = g.as_deref_mut() {
            g.clear();
            g.resize(values.len(), AmbientVector::ZERO);
        }
        for (tri, e) in self.mesh.triangles.iter().zip(&self.mesh.elements) {
            let d1 = values[tri[1]] - values[tri[0]];
            let d2 = values[tri[2]] - values[tri[0]];
            let ex = e.grad_hat[1][0] * d1 + e.grad_hat[2][0] * d2;
            let ey = e.grad_hat[1][1] * d1 + e.grad_hat[2][1] * d2;
            let w = symplectic(ex, ey);
            parts.dirichlet += 0.5 * e.area * (ex.norm_sq() + ey.norm_sq());
            parts.lagrangian += self.l1 * e.area * w * w;
            if let Some(g) = g.as_deref_mut() {
                // dE/d(ex), dE/d(ey)
                let c = 2.0 * self.l1 * e.area * w;
                let gx = e.area * ex + c * -apply_i(ey);
                let gy = e.area * ey + c * apply_i(ex);
                for a in 0..3 {
                    g[tri[a]] += e.grad_hat[a][0] * gx + e.grad_hat[a][1] * gy;
                }
            }
        }
        for (&i, &w) in self.boundary.iter().zip(&self.weights) {
            let f = (self.level.f)(values[i]);
            parts.boundary += self.l2 * w * f * f;
            if let Some(g) = g.as_deref_mut() {
                g[i] += (2.0 * self.l2 * w * f) * (self.level.grad_f)(values[i]);
            }
        }
        parts
    }

    fn unit_normal(&self, z: AmbientVector) -> AmbientVector {
        let n = (self.level.grad_f)(z);
        let l = n.norm();
        if l > 0.0 {
            (1.0 / l) * n
        } else {
            AmbientVector::ZERO
        }
    }

    /// Removes normal components at boundary nodes.
    fn project_tangent(&self, values: &[AmbientVector], v: &mut [AmbientVector]) {
        for &i in &self.boundary {
            let n = self.unit_normal(values[i]);
            v[i] -= v[i].dot(n) * n;
        }
    }

    fn project_boundary(&self, d: &Domain, values: &mut [AmbientVector]) -> Result<()> {
        for &i in &self.boundary {
            values[i] = d.project_to_boundary(values[i])?;
        }
        Ok(())
    }

    fn boundary_violation(&self, values: &[AmbientVector]) -> f64 {
        self.boundary.iter().map(|&i| (self.level.f)(values[i]).abs()).fold(0.0, f64::max)
    }
}

/// `E = ½∫|∇u|² + λ₁∫|u*ω|² + λ₂Σ F(u)²·w` and its exact nodal gradient.
pub fn energy_and_gradient(u: &DiscreteMap, d: &Domain, cfg: &SolverConfig) -> Result<(f64, Vec<AmbientVector>)> {
    let m = EnergyModel::new(&u.mesh, d, cfg.penalty_lagrangian, cfg.penalty_boundary)?;
    let mut g = Vec::new();
    let e = m.eval(&u.values, Some(&mut g));
    Ok((e.total(), g))
}

pub fn energy_parts(u: &DiscreteMap, d: &Domain, cfg: &SolverConfig) -> Result<EnergyParts> {
    Ok(EnergyModel::new(&u.mesh, d, cfg.penalty_lagrangian, cfg.penalty_boundary)?.eval(&u.values, None))
}

/// Largest `|central FD − ⟨G, v⟩| / (1 + |E|)` over `n_dirs` random unit directions.
pub fn gradient_check(u: &DiscreteMap, d: &Domain, cfg: &SolverConfig, n_dirs: usize, step: f64, seed: u64) -> Result<f64> {
    let m = EnergyModel::new(&u.mesh, d, cfg.penalty_lagrangian, cfg.penalty_boundary)?;
    let mut g = Vec::new();
    let e = m.eval(&u.values, Some(&mut g)).total();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..n_dirs {
        let mut dir: Vec<AmbientVector> =
            (0..u.values.len()).map(|_| AmbientVector::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let n = dir.iter().map(|v| v.norm_sq()).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v = (1.0 / n) * *v);
        let shift = |s: f64| -> Vec<AmbientVector> { u.values.iter().zip(&dir).map(|(a, b)| *a + s * *b).collect() };
        let fd = (m.eval(&shift(step), None).total() - m.eval(&shift(-step), None).total()) / (2.0 * step);
        let an: f64 = g.iter().zip(&dir).map(|(a, b)| a.dot(*b)).sum();
        worst = worst.max((fd - an).abs() / (1.0 + e.abs()));
    }
    Ok(worst)
}

/// Scalar `K + μM` (lumped mass), factored once and applied per real component.
struct Preconditioner {
    chol: CscCholesky<f64>,
}

impl Preconditioner {
    fn new(mesh: &DiscMesh, mu: f64) -> Result<Self> {
        let n = mesh.n_nodes();
        let mut coo = CooMatrix::new(n, n);
        for (tri, e) in mesh.triangles.iter().zip(&mesh.elements) {
            for a in 0..3 {
                coo.push(tri[a], tri[a], mu * e.area / 3.0);
                for b in 0..3 {
                    let k = e.area * (e.grad_hat[a][0] * e.grad_hat[b][0] + e.grad_hat[a][1] * e.grad_hat[b][1]);
                    coo.push(tri[a], tri[b], k);
                }
            }
        }
        let csc = CscMatrix::from(&coo);
        let chol = CscCholesky::factor(&csc).map_err(|e| Error::InvalidParameter(format!("preconditioner: {e}")))?;
        Ok(Self { chol })
    }

    fn apply(&self, g: &[AmbientVector]) -> Vec<AmbientVector> {
        let b = DMatrix::from_fn(g.len(), 4, |i, j| g[i].to_array()[j]);
        let x = self.chol.solve(&b);
        (0..g.len()).map(|i| AmbientVector::new(x[(i, 0)], x[(i, 1)], x[(i, 2)], x[(i, 3)])).collect()
    }
}

/// One accepted descent step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iter: usize,
    #[serde(skip)]
    pub stage: usize,
    #[serde(rename = "E")]
    pub energy: f64,
    pub grad_norm: f64,
    pub lagrangian: f64,
    pub boundary_violation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Converged,
    MaxIters,
    LineSearchStalled,
}

#[derive(Debug, Clone)]
pub struct MinimizeOutcome {
    pub u: DiscreteMap,
    pub history: Vec<HistoryRecord>,
    pub status: SolverStatus,
    pub iterations: usize,
}

pub fn write_history_csv<W: Write>(history: &[HistoryRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in history {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

fn make_odd(anti: &Option<Vec<usize>>, v: &mut [AmbientVector]) {
    if let Some(a) = anti {
        let src = v.to_vec();
        for (i, &j) in a.iter().enumerate() {
            v[i] = 0.5 * (src[i] - src[j]);
        }
    }
}

fn norm(v: &[AmbientVector]) -> f64 {
    v.iter().map(|x| x.norm_sq()).sum::<f64>().sqrt()
}

/// Preconditioned projected gradient descent with Armijo backtracking under the
/// continuation schedule. Boundary nodes are projected onto ∂Ω after every trial step.
pub fn minimize(u0: &DiscreteMap, d: &Domain, cfg: &SolverConfig) -> Result<MinimizeOutcome> {
    cfg.validate()?;
    let mesh = &u0.mesh;
    if cfg.max_iters == 0 {
        return Ok(MinimizeOutcome { u: u0.clone(), history: Vec::new(), status: SolverStatus::MaxIters, iterations: 0 });
    }
    let anti = if cfg.odd_symmetry { Some(mesh.antipodal_map().ok_or(Error::Unsupported("odd symmetry needs an even sector count"))?) } else { None };
    let pre = Preconditioner::new(mesh, cfg.preconditioner_shift)?;
    let mut values = u0.values.clone();
    make_odd(&anti, &mut values);
    EnergyModel::new(mesh, d, 0.0, 1.0)?.project_boundary(d, &mut values)?;
    let mut history = Vec::new();
    let mut status = SolverStatus::Converged;
    let mut iter = 0;
    let stages = cfg.stages();
    for (stage, &(l1, l2)) in stages.iter().enumerate() {
        let model = EnergyModel::new(mesh, d, l1, l2)?;
        let mut g = Vec::new();
        let mut e = model.eval(&values, Some(&mut g)).total();
        let mut alpha = cfg.line_search.initial_step;
        let mut record = |iter: usize, e: f64, gn: f64, values: &[AmbientVector]| {
            let u = DiscreteMap::new(mesh.clone(), values.to_vec()).expect("finite iterate");
            history.push(HistoryRecord {
                iter,
                stage,
                energy: e,
                grad_norm: gn,
                lagrangian: pointwise_geometry_report(&u, &[]).0,
                boundary_violation: model.boundary_violation(values),
            });
        };
        status = SolverStatus::MaxIters;
        for k in 0..=cfg.max_iters {
            make_odd(&anti, &mut g);
            model.project_tangent(&values, &mut g);
            let gn = norm(&g);
            if k == 0 {
                record(iter, e, gn, &values);
            }
            if gn <= cfg.grad_tol {
                status = SolverStatus::Converged;
                break;
            }
            if k == cfg.max_iters {
                break;
            }
            let mut dir = pre.apply(&g);
            make_odd(&anti, &mut dir);
            model.project_tangent(&values, &mut dir);
            let slope: f64 = -g.iter().zip(&dir).map(|(a, b)| a.dot(*b)).sum::<f64>();
            let mut accepted = None;
            for _ in 0..cfg.line_search.max_backtracks {
                let mut trial: Vec<AmbientVector> = values.iter().zip(&dir).map(|(v, p)| *v - alpha * *p).collect();
                model.project_boundary(d, &mut trial)?;
                make_odd(&anti, &mut trial);
                let et = model.eval(&trial, None).total();
                if et <= e + cfg.line_search.armijo * alpha * slope && et < e {
                    accepted = Some((trial, et));
                    break;
                }
                alpha *= cfg.line_search.shrink;
            }
            match accepted {
                Some((trial, _)) => {
                    values = trial;
                    e = model.eval(&values, Some(&mut g)).total();
                    iter += 1;
                    let mut gp = g.clone();
                    make_odd(&anti, &mut gp);
                    model.project_tangent(&values, &mut gp);
                    record(iter, e, norm(&gp), &values);
                    alpha = (alpha * 2.0).min(cfg.line_search.initial_step);
                }
                None => {
                    status = SolverStatus::LineSearchStalled;
                    break;
                }
            }
        }
    }
    Ok(MinimizeOutcome { u: DiscreteMap::new(mesh.clone(), values)?, history, status, iterations: iter })
}

/// Per-step diagnostics of a flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowDiagnostics {
    pub t: f64,
    pub energy: f64,
    pub lagrangian: f64,
    pub boundary_violation: f64,
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub u: DiscreteMap,
    pub t: f64,
    pub diagnostics: Vec<FlowDiagnostics>,
}

fn dirichlet(u: &DiscreteMap) -> f64 {
    u.mesh.element_gradient(&u.values).iter().zip(&u.mesh.elements).map(|([ex, ey], e)| 0.5 * e.area * (ex.norm_sq() + ey.norm_sq())).sum()
}

fn flow_diagnostics(u: &DiscreteMap, t: f64, d: &Domain) -> FlowDiagnostics {
    let boundary_violation = match d.level_set() {
        Some(l) => u.mesh.boundary_nodes().iter().map(|&i| (l.f)(u.values[i]).abs()).fold(0.0, f64::max),
        None => 0.0,
    };
    FlowDiagnostics { t, energy: dirichlet(u), lagrangian: pointwise_geometry_report(u, &[]).0, boundary_violation }
}

impl FlowState {
    pub fn new(u: DiscreteMap, d: &Domain) -> Self {
        let diag = flow_diagnostics(&u, 0.0, d);
        Self { u, t: 0.0, diagnostics: vec![diag] }
    }

    pub fn last(&self) -> &FlowDiagnostics {
        self.diagnostics.last().expect("diagnostics start with the initial state")
    }
}

/// One midpoint step of `u̇ = I∇f(u)` at every node, with exact frames (if any)
/// transported by `ė = I·Hess f(u)·e`; boundary nodes are then projected onto ∂Ω.
pub fn hamiltonian_flow_step(s: &FlowState, f: &Hamiltonian, dt: f64, d: &Domain) -> Result<FlowState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("time step {dt}")));
    }
    let im = i_matrix();
    let field = |z: AmbientVector| f.vector_field(z);
    let tangent = |z: AmbientVector, e: AmbientVector| ambient(&(im * f.hessian(z) * vec4(e)));
    let u = &s.u;
    let mid: Vec<AmbientVector> = u.values.iter().map(|&z| z + (0.5 * dt) * field(z)).collect();
    let mut values: Vec<AmbientVector> = u.values.iter().zip(&mid).map(|(&z, &m)| z + dt * field(m)).collect();
    let frames = u.exact_frames.as_ref().map(|fr| {
        fr.iter()
            .zip(u.values.iter().zip(&mid))
            .map(|(e, (&z, &m))| {
                let half = |v: AmbientVector| v + (0.5 * dt) * tangent(z, v);
                let (mx, my) = (half(e.e_x), half(e.e_y));
                TangentFrame::new(e.e_x + dt * tangent(m, mx), e.e_y + dt * tangent(m, my))
            })
            .collect()
    });
    if d.level_set().is_some() {
        for i in u.mesh.boundary_nodes() {
            values[i] = d.project_to_boundary(values[i])?;
        }
    }
    let u = DiscreteMap::with_frames(u.mesh.clone(), values, frames)?;
    let t = s.t + dt;
    let mut diagnostics = s.diagnostics.clone();
    diagnostics.push(flow_diagnostics(&u, t, d));
    Ok(FlowState { u, t, diagnostics })
}

fn symplectic_densities(u: &DiscreteMap) -> Vec<(f64, f64)> {
    let dens = |f: &TangentFrame| (symplectic(f.e_x, f.e_y), 0.5 * (f.e_x.norm_sq() + f.e_y.norm_sq()));
    match &u.exact_frames {
        Some(fr) => fr.iter().map(dens).collect(),
        None => u.element_frames().iter().map(dens).collect(),
    }
}

/// Largest change of `u*ω` over one step from `s`, relative to the initial conformal
/// factor, for each time step. The exact flow preserves `ω(∂_x u, ∂_y u)` along
/// trajectories, so values are compared node by node (element by element without exact frames).
pub fn lagrangian_drift_per_step(s: &FlowState, f: &Hamiltonian, dts: &[f64], d: &Domain) -> Result<Vec<f64>> {
    let before = symplectic_densities(&s.u);
    dts.iter()
        .map(|&dt| {
            let after = symplectic_densities(&hamiltonian_flow_step(s, f, dt, d)?.u);
            Ok(before.iter().zip(&after).map(|((w0, c0), (w1, _))| (w1 - w0).abs() / (c0 + f64::EPSILON)).fold(0.0, f64::max))
        })
        .collect()
}

/// Best-fit plane through the origin and distance of a map from a flat disc.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatDiscDistance {
    /// `max(plane_distance, area_defect)`.
    pub dist: f64,
    pub plane: [AmbientVector; 2],
    /// `|ω(b₁, b₂)|` for the orthonormal plane basis.
    pub plane_is_lagrangian: f64,
    /// Largest node distance to the plane.
    pub plane_distance: f64,
    /// `|A(u) − A(Pu)| / A(Pu)` for the image area `A` and the orthogonal projection `P`.
    pub area_defect: f64,
}

fn image_area(mesh: &DiscMesh, values: &[AmbientVector]) -> f64 {
    mesh.element_gradient(values)
        .iter()
        .zip(&mesh.elements)
        .map(|([ex, ey], e)| {
            let g = ex.norm_sq() * ey.norm_sq() - ex.dot(*ey).powi(2);
            e.area * g.max(0.0).sqrt()
        })
        .sum()
}

pub fn flat_disc_distance(u: &DiscreteMap) -> Result<FlatDiscDistance> {
    let n = u.values.len();
    if n < 10 {
        return Err(Error::DegeneratePointCloud(format!("{n} nodes")));
    }
    let mut c = Matrix4::zeros();
    for v in &u.values {
        let x = vec4(*v);
        c += x * x.transpose();
    }
    c /= n as f64;
    let eig = SymmetricEigen::new(c);
    let mut idx = [0, 1, 2, 3];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[idx[0]], eig.eigenvalues[idx[1]]);
    if !(l2 > 1e-12 * l1.max(f64::MIN_POSITIVE)) {
        return Err(Error::DegeneratePointCloud(format!("second principal value {l2:e}")));
    }
    let b1: Vector4<f64> = eig.eigenvectors.column(idx[0]).into();
    let b2: Vector4<f64> = eig.eigenvectors.column(idx[1]).into();
    let plane = [ambient(&b1), ambient(&b2)];
    let project = |v: AmbientVector| v.dot(plane[0]) * plane[0] + v.dot(plane[1]) * plane[1];
    let plane_distance = u.values.iter().map(|&v| (v - project(v)).norm()).fold(0.0, f64::max);
    let projected: Vec<AmbientVector> = u.values.iter().map(|&v| project(v)).collect();
    let a = image_area(&u.mesh, &u.values);
    let ap = image_area(&u.mesh, &projected);
    let area_defect = if ap > 0.0 { (a - ap).abs() / ap } else { f64::INFINITY };
    Ok(FlatDiscDistance { dist: plane_distance.max(area_defect), plane, plane_is_lagrangian: symplectic(plane[0], plane[1]).abs(), plane_distance, area_defect })
}

/// Area-weighted variance `Σ a_T |ḡ_T − mean|² / Σ a_T` of the element angles.
pub fn angle_variance(u: &DiscreteMap) -> Result<f64> {
    let mut samples = Vec::new();
    for (f, e) in u.element_frames().iter().zip(&u.mesh.elements) {
        if let Ok((_, a)) = lagrangian_angle(f, DEGENERATE_FRAME_TOL) {
            samples.push((a.to_complex(), e.area));
        }
    }
    if samples.is_empty() {
        return Err(Error::DegenerateFrame(0.0));
    }
    let w: f64 = samples.iter().map(|s| s.1).sum();
    let mean = samples.iter().map(|(g, a)| g * a).sum::<num_complex::Complex64>() / w;
    Ok(samples.iter().map(|(g, a)| a * (g - mean).norm_sqr()).sum::<f64>() / w)
}

/// Largest distance of a boundary node from the unit circle of `plane`.
pub fn circle_defect(u: &DiscreteMap, plane: &[AmbientVector; 2]) -> f64 {
    u.mesh
        .boundary_nodes()
        .iter()
        .map(|&i| {
            let v = u.values[i];
            let p = v.dot(plane[0]) * plane[0] + v.dot(plane[1]) * plane[1];
            ((v - p).norm_sq() + (p.norm() - 1.0).powi(2)).sqrt()
        })
        .fold(0.0, f64::max)
}

pub const RIGIDITY_DIST_TOL: f64 = 1e-3;
pub const RIGIDITY_VARIANCE_TOL: f64 = 1e-6;
pub const RIGIDITY_CIRCLE_TOL: f64 = 1e-3;
/// Final Lagrangian residual above which a run is flagged as drifting.
pub const LAGRANGIAN_DRIFT_TOL: f64 = 1e-6;
const PERTURBATION_FLOWS: usize = 3;
const PERTURBATION_STEPS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidityReport {
    pub seed: u64,
    pub eps: f64,
    pub n_rings: usize,
    pub n_sectors: usize,
    pub generators: Vec<String>,
    pub perturbation_size: f64,
    pub initial_distance: f64,
    pub final_distance: f64,
    pub final_energy: f64,
    pub angle_variance: f64,
    pub circle_defect: f64,
    pub plane_is_lagrangian: f64,
    pub lagrangian_residual: f64,
    pub iterations: usize,
    pub status: SolverStatus,
    pub non_lagrangian_drift: bool,
    pub pass: bool,
    pub config: SolverConfig,
}

/// Three seeded admissible generators for the ball: a radial invariant and two profiled Hopf functions.
pub fn random_admissible_generators(seed: u64) -> Vec<Hamiltonian> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![radial_invariant(Profile::exp_decay(rng.gen_range(0.5..1.5)))];
    while out.len() < PERTURBATION_FLOWS {
        let mut c = [0.0; 4];
        c.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        c.iter_mut().for_each(|x| *x /= n);
        out.push(hopf_invariant_quadratic(c, Profile::exp_decay(rng.gen_range(0.5..1.5))));
    }
    out
}

/// Flows `u` along each generator for the time that moves the fastest node by `amplitude`.
pub fn perturb_by_flows(u: &DiscreteMap, d: &Domain, generators: &[Hamiltonian], amplitude: f64) -> Result<DiscreteMap> {
    let mut state = FlowState::new(u.clone(), d);
    for f in generators {
        let speed = state.u.values.iter().map(|&z| f.vector_field(z).norm()).fold(0.0, f64::max);
        if amplitude == 0.0 || speed == 0.0 {
            continue;
        }
        let dt = amplitude / speed / PERTURBATION_STEPS as f64;
        for _ in 0..PERTURBATION_STEPS {
            state = hamiltonian_flow_step(&state, f, dt, d)?;
        }
    }
    Ok(state.u)
}

/// Perturbs the flat disc by seeded admissible flows of total amplitude `eps`,
/// minimizes and checks the result is again a flat Lagrangian disc.
pub fn rigidity_experiment(seed: u64, eps: f64, mesh: &DiscMesh, cfg: &SolverConfig) -> Result<RigidityReport> {
    rigidity_experiment_with_history(seed, eps, mesh, cfg).map(|(r, _)| r)
}

/// As [`rigidity_experiment`], also returning the descent history.
pub fn rigidity_experiment_with_history(seed: u64, eps: f64, mesh: &DiscMesh, cfg: &SolverConfig) -> Result<(RigidityReport, Vec<HistoryRecord>)> {
    if !(0.0..=0.1).contains(&eps) {
        return Err(Error::InvalidParameter(format!("perturbation size {eps} outside [0, 0.1]")));
    }
    let d = crate::domain::unit_ball();
    let flat = flat_disc(IDENTITY)?.sample(mesh);
    let generators = random_admissible_generators(seed);
    let perturbed = perturb_by_flows(&flat, &d, &generators, eps / PERTURBATION_FLOWS as f64)?;
    let perturbation_size = perturbed.values.iter().zip(&flat.values).map(|(a, b)| (*a - *b).norm()).fold(0.0, f64::max);
    let start = DiscreteMap::new(mesh.clone(), perturbed.values)?;
    let initial_distance = flat_disc_distance(&start)?.dist;
    let out = minimize(&start, &d, cfg)?;
    let fd = flat_disc_distance(&out.u)?;
    let angle_variance = angle_variance(&out.u)?;
    let circle_defect = circle_defect(&out.u, &fd.plane);
    let lagrangian_residual = pointwise_geometry_report(&out.u, &[]).0;
    let final_energy = dirichlet(&out.u);
    let pass = fd.dist <= RIGIDITY_DIST_TOL && angle_variance <= RIGIDITY_VARIANCE_TOL && circle_defect <= RIGIDITY_CIRCLE_TOL;
    let report = RigidityReport {
        seed,
        eps,
        n_rings: mesh.n_rings,
        n_sectors: mesh.n_sectors,
        generators: generators.iter().map(|g| g.name.clone()).collect(),
        perturbation_size,
        initial_distance,
        final_distance: fd.dist,
        final_energy,
        angle_variance,
        circle_defect,
        plane_is_lagrangian: fd.plane_is_lagrangian,
        lagrangian_residual,
        iterations: out.iterations,
        status: out.status,
        non_lagrangian_drift: lagrangian_residual > LAGRANGIAN_DRIFT_TOL || fd.plane_is_lagrangian > LAGRANGIAN_DRIFT_TOL,
        pass,
        config: cfg.clone(),
    };
    Ok((report, out.history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{nonminimal_map, random_unitary, sw_cone};
    use crate::domain::{curve_domain_from_map, unit_ball};
    use crate::hamiltonian::ball_boundary_family;
    use crate::mesh::{build_polar_mesh, convergence_order, converges_with_order};
    use std::f64::consts::PI;

    fn quick() -> SolverConfig {
        SolverConfig { max_iters: 400, ..SolverConfig::default() }
    }

    #[test]
    fn stages_end_at_penalties() {
        let d = SolverConfig::default();
        assert_eq!(d.stages(), vec![(10.0, 1e2), (1e2, 1e3), (1e3, 1e4)]);
        let c = SolverConfig { penalty_lagrangian: 0.0, ..SolverConfig::default() };
        assert_eq!(c.stages().last(), Some(&(0.0, 1e4)));
        assert_eq!(c.stages().len(), 4);
        let single = SolverConfig { continuation: Vec::new(), ..SolverConfig::default() };
        assert_eq!(single.stages(), vec![(1e3, 1e4)]);
    }

    #[test]
    fn flat_disc_energy_is_polygon_area() {
        let m = build_polar_mesh(12, 48, 1.0).unwrap();
        let u = flat_disc(IDENTITY).unwrap().sample(&m);
        let p = energy_parts(&u, &unit_ball(), &SolverConfig::default()).unwrap();
        let polygon = 0.5 * 48.0 * (2.0 * PI / 48.0).sin();
        assert!((p.dirichlet - polygon).abs() <= 1e-12);
        assert!((p.dirichlet - PI).abs() <= 2.0 * m.h().powi(2));
        assert!(p.lagrangian <= 1e-24 && p.boundary <= 1e-24, "{p:?}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = build_polar_mesh(6, 24, 0.8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals = sw_cone(1, 2)
            .unwrap()
            .sample(&m)
            .values
            .into_iter()
            .map(|v| v + AmbientVector::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)))
            .collect();
        let u = DiscreteMap::new(m, vals).unwrap();
        let cfg = SolverConfig { penalty_lagrangian: 10.0, penalty_boundary: 100.0, ..SolverConfig::default() };
        assert!(gradient_check(&u, &unit_ball(), &cfg, 20, 1e-6, 9).unwrap() <= 1e-6);
    }

    #[test]
    fn zero_map_energy() {
        let m = build_polar_mesh(4, 16, 1.0).unwrap();
        let u = DiscreteMap::new(m.clone(), vec![AmbientVector::ZERO; m.n_nodes()]).unwrap();
        let cfg = SolverConfig { penalty_boundary: 7.0, ..SolverConfig::default() };
        let (e, g) = energy_and_gradient(&u, &unit_ball(), &cfg).unwrap();
        let total: f64 = m.boundary_weights().iter().sum();
        assert!((e - 7.0 * total).abs() <= 1e-12);
        assert!(g.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn curve_domain_unsupported() {
        let m = build_polar_mesh(4, 16, 1.0).unwrap();
        let e = nonminimal_map();
        let d = curve_domain_from_map(&e).unwrap();
        assert!(matches!(energy_and_gradient(&e.sample(&m), &d, &SolverConfig::default()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            SolverConfig { grad_tol: 0.0, ..SolverConfig::default() },
            SolverConfig { continuation: vec![(1.0, 0.0)], ..SolverConfig::default() },
            SolverConfig { continuation: vec![(-1.0, 1.0)], ..SolverConfig::default() },
            SolverConfig { line_search: LineSearch { shrink: 1.0, ..LineSearch::default() }, ..SolverConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
        assert!(SolverConfig::default().validate().is_ok());
    }

    #[test]
    fn flat_disc_is_already_converged() {
        let m = build_polar_mesh(8, 32, 1.0).unwrap();
        let u = flat_disc(IDENTITY).unwrap().sample(&m);
        let out = minimize(&u, &unit_ball(), &SolverConfig::default()).unwrap();
        assert!(out.iterations <= 5);
        assert_eq!(out.status, SolverStatus::Converged);
        assert!(out.history.iter().all(|h| h.grad_norm <= 1e-9));
    }

    #[test]
    fn zero_iterations_is_identity() {
        let m = build_polar_mesh(4, 16, 1.0).unwrap();
        let u = sw_cone(1, 2).unwrap().sample(&m);
        let out = minimize(&u, &unit_ball(), &SolverConfig { max_iters: 0, ..SolverConfig::default() }).unwrap();
        assert_eq!(out.u.values, u.values);
        assert!(out.history.is_empty());
    }

    #[test]
    fn perturbed_disc_relaxes() {
        let m = build_polar_mesh(12, 48, 1.0).unwrap();
        let d = unit_ball();
        let flat = flat_disc(IDENTITY).unwrap().sample(&m);
        let p = perturb_by_flows(&flat, &d, &random_admissible_generators(4), 0.05 / 3.0).unwrap();
        let out = minimize(&DiscreteMap::new(m, p.values).unwrap(), &d, &quick()).unwrap();
        for w in out.history.windows(2) {
            if w[0].stage == w[1].stage {
                assert!(w[1].energy < w[0].energy);
            }
        }
        let last = out.history.last().unwrap();
        assert!(dirichlet(&out.u) <= PI + 1e-3);
        assert!(last.lagrangian <= 1e-6, "{last:?}");
        assert!(flat_disc_distance(&out.u).unwrap().dist <= 1e-3);
    }

    #[test]
    fn minimize_is_unitary_equivariant() {
        let m = build_polar_mesh(8, 32, 1.0).unwrap();
        let d = unit_ball();
        let flat = flat_disc(IDENTITY).unwrap().sample(&m);
        let p = perturb_by_flows(&flat, &d, &random_admissible_generators(2), 0.05 / 3.0).unwrap();
        let u0 = DiscreteMap::new(m.clone(), p.values).unwrap();
        let u = random_unitary(&mut ChaCha8Rng::seed_from_u64(5));
        let rotate = |v: AmbientVector| AmbientVector::from_complex(u[0][0] * v.z1() + u[0][1] * v.z2(), u[1][0] * v.z1() + u[1][1] * v.z2());
        let u1 = DiscreteMap::new(m, u0.values.iter().map(|&v| rotate(v)).collect()).unwrap();
        let a = minimize(&u0, &d, &quick()).unwrap();
        let b = minimize(&u1, &d, &quick()).unwrap();
        assert!((dirichlet(&a.u) - dirichlet(&b.u)).abs() <= 1e-8);
        assert!((flat_disc_distance(&a.u).unwrap().dist - flat_disc_distance(&b.u).unwrap().dist).abs() <= 1e-8);
    }

    #[test]
    fn zero_hamiltonian_leaves_state() {
        let m = build_polar_mesh(4, 16, 1.0).unwrap();
        let d = unit_ball();
        let s = FlowState::new(flat_disc(IDENTITY).unwrap().sample(&m), &d);
        let z = crate::hamiltonian::constant(0.0);
        let t = hamiltonian_flow_step(&s, &z, 0.1, &d).unwrap();
        assert_eq!(t.u.values, s.u.values);
        assert!((t.t - 0.1).abs() < 1e-15);
        assert!(hamiltonian_flow_step(&s, &z, 0.0, &d).is_err());
    }

    #[test]
    fn hopf_flows_preserve_lagrangian() {
        let m = build_polar_mesh(8, 32, 1.0).unwrap();
        let d = unit_ball();
        for k in 0..4 {
            let mut c = [0.0; 4];
            c[k] = 1.0;
            let f = hopf_invariant_quadratic(c, Profile::constant(1.0));
            let mut s = FlowState::new(flat_disc(IDENTITY).unwrap().sample(&m), &d);
            for _ in 0..100 {
                s = hamiltonian_flow_step(&s, &f, 1e-2, &d).unwrap();
                assert!(s.last().boundary_violation <= 1e-12);
            }
            assert!(s.last().lagrangian <= 1e-6, "{k}: {:?}", s.last());
        }
    }

    #[test]
    fn flow_drift_is_third_order() {
        let m = build_polar_mesh(8, 32, 1.0).unwrap();
        let d = unit_ball();
        let f = hopf_invariant_quadratic([0.3, -0.5, 0.6, 0.2], Profile::exp_decay(1.0));
        let mut s = FlowState::new(flat_disc(IDENTITY).unwrap().sample(&m), &d);
        for _ in 0..10 {
            s = hamiltonian_flow_step(&s, &f, 2e-2, &d).unwrap();
        }
        let dts = [1e-2, 5e-3, 2.5e-3];
        let drift = lagrangian_drift_per_step(&s, &f, &dts, &d).unwrap();
        assert!(convergence_order(&dts, &drift) >= 2.5, "{drift:?}");
        for g in ball_boundary_family() {
            let drift = lagrangian_drift_per_step(&s, &g, &dts, &d).unwrap();
            assert!(converges_with_order(&dts, &drift, 2.5), "{}: {drift:?}", g.name);
        }
    }

    #[test]
    fn distance_of_examples() {
        let m = build_polar_mesh(8, 32, 0.8).unwrap();
        let r = flat_disc_distance(&flat_disc(IDENTITY).unwrap().sample(&m)).unwrap();
        assert!(r.dist <= 1e-12 && r.plane_is_lagrangian <= 1e-15, "{r:?}");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let e = flat_disc(random_unitary(&mut rng)).unwrap();
            let r = flat_disc_distance(&e.sample(&m)).unwrap();
            assert!(r.dist <= 1e-12 && r.plane_is_lagrangian <= 1e-12, "{r:?}");
            assert!(circle_defect(&e.sample(&m), &r.plane) <= 1e-12);
        }
        assert!(flat_disc_distance(&sw_cone(1, 2).unwrap().sample(&m)).unwrap().dist >= 0.1);
        let tiny = DiscreteMap::new(m.clone(), m.nodes.iter().map(|p| AmbientVector::new(p[0], 0.0, p[1], 0.0)).collect()).unwrap();
        let few = DiscreteMap { values: tiny.values[..9].to_vec(), ..tiny.clone() };
        assert!(matches!(flat_disc_distance(&few), Err(Error::DegeneratePointCloud(_))));
        let line = DiscreteMap::new(m.clone(), m.nodes.iter().map(|p| AmbientVector::new(p[0], 0.0, 0.0, 0.0)).collect()).unwrap();
        assert!(matches!(flat_disc_distance(&line), Err(Error::DegeneratePointCloud(_))));
    }

    #[test]
    fn angle_variance_separates_examples() {
        let m = build_polar_mesh(12, 48, 1.0).unwrap();
        assert!(angle_variance(&flat_disc(IDENTITY).unwrap().sample(&m)).unwrap() <= 1e-28);
        assert!(angle_variance(&nonminimal_map().sample(&m)).unwrap() >= 0.1);
    }

    #[test]
    fn rigidity_without_perturbation() {
        let m = build_polar_mesh(8, 32, 1.0).unwrap();
        let r = rigidity_experiment(1, 0.0, &m, &SolverConfig::default()).unwrap();
        assert!(r.pass);
        assert!(r.final_distance <= 1e-10 && r.angle_variance <= 1e-10 && r.circle_defect <= 1e-10, "{r:?}");
        assert!(rigidity_experiment(1, 0.2, &m, &SolverConfig::default()).is_err());
    }

    #[test]
    fn control_run_drifts_off_lagrangian() {
        let m = build_polar_mesh(12, 48, 1.0).unwrap();
        let cfg = SolverConfig { continuation: vec![(0.0, 1e2), (0.0, 1e3)], penalty_lagrangian: 0.0, max_iters: 400, ..SolverConfig::default() };
        let r = rigidity_experiment(2, 0.05, &m, &cfg).unwrap();
        assert!(r.non_lagrangian_drift, "{r:?}");
        let r = rigidity_experiment(2, 0.05, &m, &quick()).unwrap();
        assert!(!r.non_lagrangian_drift && r.pass, "{r:?}");
    }

    #[test]
    fn history_csv_columns() {
        let h = vec![HistoryRecord { iter: 0, stage: 0, energy: 1.0, grad_norm: 0.5, lagrangian: 0.0, boundary_violation: 0.0 }];
        let mut buf = Vec::new();
        write_history_csv(&h, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("iter,E,grad_norm,lagrangian,boundary_violation\n"));
    }
}
