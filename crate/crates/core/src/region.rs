//! Polytope machinery and the cutting-plane outer approximation.
//!
//! The outer loop starts from a bounding box in renewable space, enumerates
//! polytope vertices, solves the dual SDP at each vertex that is not yet
//! known safe, and truncates the polytope with the certificate's half-space
//! whenever the dual value is positive. Every iterate contains the relaxed
//! region restricted to the initial box. A separate ray-tracing routine
//! bisects along directions from a certified inner point to sketch the
//! boundary of the certified inner region.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::formulations::{
    cutting_plane_from_dual, dp_value_and_certificate, penalty_membership, CutPlane,
    FormulationError, RenewableVector, Verdict,
};
use crate::netmodel::ThreePhaseNetwork;
use crate::sdpcore::SolveSettings;

const FEAS_TOL: f64 = 1e-8;
const DEDUP_TOL: f64 = 1e-7;
const SAFE_MATCH_TOL: f64 = 1e-9;
pub const MAX_DIMENSION: usize = 6;
/// Cap on the number of d-subsets a single enumeration may visit.
const SUBSET_GUARD: usize = 20_000_000;

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("vertex enumeration supports dimension 1..={MAX_DIMENSION}, got {0}")]
    DimensionTooLarge(usize),
    #[error("polytope is unbounded along axis {0} (missing box constraint?)")]
    Unbounded(usize),
    #[error("polytope has no vertices (empty or degenerate)")]
    Empty,
    #[error("vertex enumeration over {0} half-spaces exceeds the subset guard")]
    TooManySubsets(usize),
    #[error("box bounds must satisfy lo < hi componentwise")]
    BadBox,
    #[error("base point is not an inner member (verdict {0:?})")]
    NotInnerMember(Verdict),
    #[error("direction {0} is zero")]
    ZeroDirection(usize),
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error("solver failed at vertex {vertex:?}")]
    VertexSolve { vertex: Vec<f64> },
}

/// Half-space `a . u + b <= 0` with `|a|_2 = 1`.
#[derive(Debug, Clone, Serialize)]
pub struct HalfSpace {
    pub a: Vec<f64>,
    pub b: f64,
}

impl HalfSpace {
    /// Normalize raw coefficients; `None` when the normal vanishes.
    pub fn from_raw(a: &[f64], b: f64) -> Option<Self> {
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return None;
        }
        Some(Self {
            a: a.iter().map(|x| x / norm).collect(),
            b: b / norm,
        })
    }

    pub fn evaluate(&self, u: &[f64]) -> f64 {
        self.b + self.a.iter().zip(u).map(|(a, u)| a * u).sum::<f64>()
    }

    fn nearly_equal(&self, other: &HalfSpace) -> bool {
        let dot: f64 = self.a.iter().zip(other.a.iter()).map(|(x, y)| x * y).sum();
        (dot - 1.0).abs() <= DEDUP_TOL && (self.b - other.b).abs() <= DEDUP_TOL
    }
}

/// Convex polytope in H-representation with cached vertices.
#[derive(Debug, Clone, Serialize)]
pub struct Polytope {
    pub dimension: usize,
    pub hrep: Vec<HalfSpace>,
    pub vrep: Vec<Vec<f64>>,
}

impl Polytope {
    /// Axis-aligned box `lo <= u <= hi`.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self, RegionError> {
        let d = lo.len();
        if d == 0 || d != hi.len() {
            return Err(RegionError::BadBox);
        }
        if d > MAX_DIMENSION {
            return Err(RegionError::DimensionTooLarge(d));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| l >= h) {
            return Err(RegionError::BadBox);
        }
        let mut hrep = Vec::with_capacity(2 * d);
        for k in 0..d {
            let mut up = vec![0.0; d];
            up[k] = 1.0;
            hrep.push(HalfSpace { a: up, b: -hi[k] });
            let mut dn = vec![0.0; d];
            dn[k] = -1.0;
            hrep.push(HalfSpace { a: dn, b: lo[k] });
        }
        let mut poly = Polytope {
            dimension: d,
            hrep,
            vrep: Vec::new(),
        };
        poly.refresh_vertices()?;
        Ok(poly)
    }

    /// Append a cut unless a nearly identical plane is already present.
    /// Returns whether the plane was added. Vertices become stale.
    pub fn add_halfspace(&mut self, h: HalfSpace) -> bool {
        if self.hrep.iter().any(|e| e.nearly_equal(&h)) {
            return false;
        }
        self.hrep.push(h);
        true
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        assert_eq!(u.len(), self.dimension);
        self.hrep.iter().all(|h| h.evaluate(u) <= FEAS_TOL)
    }

    pub fn refresh_vertices(&mut self) -> Result<(), RegionError> {
        self.vrep = vertex_enumeration(&self.hrep, self.dimension)?;
        if self.vrep.is_empty() {
            return Err(RegionError::Empty);
        }
        Ok(())
    }

    /// Exact volume by recursive facet decomposition; zero for degenerate
    /// (lower-dimensional) polytopes.
    pub fn volume(&self) -> f64 {
        let hrep: Vec<(Vec<f64>, f64)> =
            self.hrep.iter().map(|h| (h.a.clone(), h.b)).collect();
        volume_recursive(&hrep, &self.vrep, self.dimension)
    }
}

/// Enumerate vertices of a bounded H-polytope: every nonsingular d-subset
/// intersection that satisfies all constraints, deduplicated.
pub fn vertex_enumeration(hrep: &[HalfSpace], d: usize) -> Result<Vec<Vec<f64>>, RegionError> {
    if d == 0 || d > MAX_DIMENSION {
        return Err(RegionError::DimensionTooLarge(d));
    }
    // Boundedness sanity: every axis needs normals pointing both ways.
    for axis in 0..d {
        let has_up = hrep.iter().any(|h| h.a[axis] > 1e-9);
        let has_dn = hrep.iter().any(|h| h.a[axis] < -1e-9);
        if !has_up || !has_dn {
            return Err(RegionError::Unbounded(axis));
        }
    }
    let n = hrep.len();
    let mut subsets: usize = 1;
    for k in 0..d {
        subsets = subsets.saturating_mul(n - k) / (k + 1);
    }
    if subsets > SUBSET_GUARD {
        return Err(RegionError::TooManySubsets(n));
    }

    let mut vertices: Vec<Vec<f64>> = Vec::new();
    let mut index = vec![0usize; d];
    for (k, idx) in index.iter_mut().enumerate() {
        *idx = k;
    }
    if n < d {
        return Ok(vertices);
    }
    loop {
        if let Some(x) = solve_subset(hrep, &index, d) {
            if hrep.iter().all(|h| h.evaluate(&x) <= FEAS_TOL)
                && !vertices
                    .iter()
                    .any(|v| linf_distance(v, &x) <= DEDUP_TOL)
            {
                vertices.push(x);
            }
        }
        // Next combination.
        let mut k = d;
        loop {
            if k == 0 {
                return Ok(vertices);
            }
            k -= 1;
            if index[k] < n - d + k {
                index[k] += 1;
                for j in (k + 1)..d {
                    index[j] = index[j - 1] + 1;
                }
                break;
            }
        }
    }
}

fn linf_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn solve_subset(hrep: &[HalfSpace], index: &[usize], d: usize) -> Option<Vec<f64>> {
    let mut m = nalgebra::DMatrix::<f64>::zeros(d, d);
    let mut rhs = nalgebra::DVector::<f64>::zeros(d);
    for (row, &i) in index.iter().enumerate() {
        for c in 0..d {
            m[(row, c)] = hrep[i].a[c];
        }
        rhs[row] = -hrep[i].b;
    }
    let lu = nalgebra::LU::new(m);
    // Reject near-singular systems: they produce wild pseudo-vertices.
    let det = lu.determinant().abs();
    if det < 1e-10 {
        return None;
    }
    lu.solve(&rhs).map(|x| x.iter().copied().collect())
}

fn volume_recursive(hrep: &[(Vec<f64>, f64)], verts: &[Vec<f64>], d: usize) -> f64 {
    if verts.len() < d + 1 {
        return 0.0;
    }
    if d == 1 {
        let lo = verts.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
        let hi = verts.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
        return (hi - lo).max(0.0);
    }
    let centroid: Vec<f64> = (0..d)
        .map(|k| verts.iter().map(|v| v[k]).sum::<f64>() / verts.len() as f64)
        .collect();
    let mut total = 0.0;
    for (fi, (a_raw, b_raw)) in hrep.iter().enumerate() {
        // Normalize so evaluations are geometric distances; projected
        // half-spaces from outer recursion levels arrive unnormalized.
        let norm = a_raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        let a: Vec<f64> = a_raw.iter().map(|x| x / norm).collect();
        let b = b_raw / norm;
        let eval = |x: &[f64]| b + a.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
        let on_face: Vec<&Vec<f64>> = verts
            .iter()
            .filter(|v| eval(v).abs() <= 1e-7 * (1.0 + b.abs()))
            .collect();
        if on_face.len() < d {
            continue;
        }
        let dist = -eval(&centroid);
        if dist <= 1e-12 {
            continue;
        }
        // Orthonormal basis of the face hyperplane.
        let basis = hyperplane_basis(&a, d);
        let origin = on_face[0].clone();
        let project = |v: &[f64]| -> Vec<f64> {
            basis
                .iter()
                .map(|e| {
                    e.iter()
                        .zip(v.iter().zip(origin.iter()))
                        .map(|(ek, (vk, ok))| ek * (vk - ok))
                        .sum()
                })
                .collect()
        };
        let sub_verts: Vec<Vec<f64>> = on_face.iter().map(|v| project(v)).collect();
        // Other half-spaces projected into the face coordinates.
        let mut sub_hrep = Vec::new();
        for (fj, (aj, bj)) in hrep.iter().enumerate() {
            if fj == fi {
                continue;
            }
            let a_proj: Vec<f64> = basis
                .iter()
                .map(|e| e.iter().zip(aj.iter()).map(|(ek, ak)| ek * ak).sum())
                .collect();
            let b_proj = bj + aj.iter().zip(origin.iter()).map(|(ak, ok)| ak * ok).sum::<f64>();
            sub_hrep.push((a_proj, b_proj));
        }
        let face_vol = volume_recursive(&sub_hrep, &sub_verts, d - 1);
        total += face_vol * dist / d as f64;
    }
    total
}

/// Orthonormal basis of the hyperplane with normal `a` (d-1 vectors).
fn hyperplane_basis(a: &[f64], d: usize) -> Vec<Vec<f64>> {
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let normal: Vec<f64> = a.iter().map(|x| x / norm).collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d - 1);
    for k in 0..d {
        if basis.len() == d - 1 {
            break;
        }
        let mut cand = vec![0.0; d];
        cand[k] = 1.0;
        let dot_n: f64 = cand.iter().zip(normal.iter()).map(|(x, y)| x * y).sum();
        for (ck, nk) in cand.iter_mut().zip(normal.iter()) {
            *ck -= dot_n * nk;
        }
        for e in &basis {
            let dot: f64 = cand.iter().zip(e.iter()).map(|(x, y)| x * y).sum();
            for (ck, ek) in cand.iter_mut().zip(e.iter()) {
                *ck -= dot * ek;
            }
        }
        let n = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            basis.push(cand.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

// ---------------------------------------------------------------------------
// Algorithm: polytopic outer approximation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub c: usize,
    pub vertex_count: usize,
    /// Max dual value over the vertices evaluated this round (-1 when every
    /// vertex was already safe).
    pub dp_max: f64,
    pub volume: f64,
    pub face_count: usize,
    pub cuts_added: usize,
    pub solves: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegionReport {
    pub dimension: usize,
    pub renewable_node_labels: Vec<String>,
    pub iterations: Vec<IterationRecord>,
    pub hrep: Vec<HalfSpace>,
    pub vrep: Vec<Vec<f64>>,
    pub safe_vertices: Vec<Vec<f64>>,
    pub termination: Termination,
    /// dp'_max trace in algorithm indexing; entry 0 is the 99 sentinel.
    pub dp_max_trace: Vec<f64>,
    /// Raw (unnormalized) cutting planes in the order they were added.
    #[serde(skip)]
    pub raw_cuts: Vec<CutPlane>,
}

#[derive(Debug, Clone)]
pub struct OuterConfig {
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub settings: SolveSettings,
}

impl OuterConfig {
    pub fn new(u_lo: Vec<f64>, u_hi: Vec<f64>) -> Self {
        Self {
            u_lo,
            u_hi,
            epsilon: 0.02,
            max_iterations: 6,
            settings: SolveSettings::default(),
        }
    }
}

fn renewable_labels(net: &ThreePhaseNetwork) -> Vec<String> {
    net.renewables()
        .iter()
        .map(|r| format!("bus{}.{}", r.bus, r.phase_letter()))
        .collect()
}

/// Cutting-plane outer approximation of the relaxed dispatchable region
/// intersected with the initial box.
pub fn outer_approximate(
    net: &ThreePhaseNetwork,
    config: &OuterConfig,
) -> Result<RegionReport, RegionError> {
    let d = net.renewables().len();
    if d == 0 || d != config.u_lo.len() || d != config.u_hi.len() {
        return Err(RegionError::BadBox);
    }
    if config.epsilon <= 0.0 || config.max_iterations == 0 {
        return Err(RegionError::BadBox);
    }
    let mut poly = Polytope::from_box(&config.u_lo, &config.u_hi)?;
    let mut safe: Vec<Vec<f64>> = Vec::new();
    let mut dp_trace = vec![99.0];
    let mut iterations: Vec<IterationRecord> = Vec::new();
    let mut raw_cuts: Vec<CutPlane> = Vec::new();
    let mut c = 0usize;

    while dp_trace[c] > config.epsilon && c < config.max_iterations {
        poly.refresh_vertices()?;
        let vertex_count = poly.vrep.len();
        let volume = poly.volume();
        let face_count = poly.hrep.len();
        let pending: Vec<Vec<f64>> = poly
            .vrep
            .iter()
            .filter(|v| !safe.iter().any(|s| linf_distance(s, v) <= SAFE_MATCH_TOL))
            .cloned()
            .collect();

        let results: Vec<_> = pending
            .par_iter()
            .map(|vertex| {
                // Box vertices can sit a rounding error below zero.
                let u = RenewableVector::new(vertex.iter().map(|x| x.max(0.0)).collect())
                    .expect("clamped vertex is nonnegative");
                dp_value_and_certificate(net, &u, &config.settings)
            })
            .collect();

        let mut dp_next = -1.0_f64;
        let mut cuts_added = 0usize;
        for (vertex, result) in pending.iter().zip(results.into_iter()) {
            let (dp, cert) = result.map_err(|_| RegionError::VertexSolve {
                vertex: vertex.clone(),
            })?;
            if dp <= config.epsilon {
                safe.push(vertex.clone());
            } else {
                if dp > dp_next {
                    dp_next = dp;
                }
                let cut = cutting_plane_from_dual(&cert, net, config.epsilon)?;
                if let Some(h) = HalfSpace::from_raw(&cut.a, cut.b) {
                    if poly.add_halfspace(h) {
                        cuts_added += 1;
                        raw_cuts.push(cut);
                    }
                }
            }
        }

        iterations.push(IterationRecord {
            c,
            vertex_count,
            dp_max: dp_next,
            volume,
            face_count,
            cuts_added,
            solves: pending.len(),
        });
        dp_trace.push(dp_next);
        c += 1;
    }

    poly.refresh_vertices()?;
    let termination = if dp_trace[c] <= config.epsilon {
        Termination::Converged
    } else {
        Termination::MaxIterations
    };
    Ok(RegionReport {
        dimension: d,
        renewable_node_labels: renewable_labels(net),
        iterations,
        hrep: poly.hrep,
        vrep: poly.vrep,
        safe_vertices: safe,
        termination,
        dp_max_trace: dp_trace,
        raw_cuts,
    })
}

// ---------------------------------------------------------------------------
// Inner boundary tracing

#[derive(Debug, Clone)]
pub struct InnerTraceConfig {
    pub beta: f64,
    pub step_tol: f64,
    pub slack_tol: f64,
    pub rank_tol: f64,
    /// Bracket growth cap on the ray parameter.
    pub t_max: f64,
    pub settings: SolveSettings,
}

impl Default for InnerTraceConfig {
    fn default() -> Self {
        Self {
            beta: crate::formulations::DEFAULT_BETA,
            step_tol: 1e-2,
            slack_tol: crate::formulations::DEFAULT_SLACK_TOL,
            rank_tol: crate::formulations::DEFAULT_RANK_TOL,
            t_max: 1e3,
            settings: SolveSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TracePoint {
    pub direction: Vec<f64>,
    pub t: f64,
    pub point: Vec<f64>,
}

/// Bisect along rays from a certified inner point; every returned point is
/// itself a certified inner member (soundness only).
pub fn inner_trace(
    net: &ThreePhaseNetwork,
    base: &RenewableVector,
    directions: &[Vec<f64>],
    config: &InnerTraceConfig,
) -> Result<Vec<TracePoint>, RegionError> {
    let member = |u: &[f64]| -> Result<bool, RegionError> {
        if u.iter().any(|&x| x < 0.0) {
            return Ok(false);
        }
        let u = RenewableVector::new(u.to_vec()).expect("nonnegative");
        let v = penalty_membership(
            net,
            &u,
            config.beta,
            config.slack_tol,
            config.rank_tol,
            &config.settings,
        )?;
        Ok(v.verdict == Verdict::InnerMember)
    };

    let base_verdict = penalty_membership(
        net,
        base,
        config.beta,
        config.slack_tol,
        config.rank_tol,
        &config.settings,
    )?;
    if base_verdict.verdict != Verdict::InnerMember {
        return Err(RegionError::NotInnerMember(base_verdict.verdict));
    }

    let d = base.len();
    let mut out = Vec::with_capacity(directions.len());
    for (di, dir) in directions.iter().enumerate() {
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(RegionError::ZeroDirection(di));
        }
        let dir: Vec<f64> = dir.iter().map(|x| x / norm).collect();
        let at = |t: f64| -> Vec<f64> {
            (0..d).map(|k| base.values()[k] + t * dir[k]).collect()
        };

        let mut t_lo = 0.0_f64;
        let mut t_hi = 1.0_f64;
        while t_hi < config.t_max && member(&at(t_hi))? {
            t_lo = t_hi;
            t_hi *= 2.0;
        }
        if t_hi >= config.t_max {
            // Capped bracket: return the last certified point.
            let point = at(t_lo);
            out.push(TracePoint {
                direction: dir,
                t: t_lo,
                point,
            });
            continue;
        }
        while t_hi - t_lo > config.step_tol {
            let mid = 0.5 * (t_lo + t_hi);
            if member(&at(mid))? {
                t_lo = mid;
            } else {
                t_hi = mid;
            }
        }
        let point = at(t_lo);
        out.push(TracePoint {
            direction: dir,
            t: t_lo,
            point,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box2() -> Polytope {
        Polytope::from_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap()
    }

    #[test]
    fn unit_box_vertices() {
        let p = box2();
        assert_eq!(p.vrep.len(), 4);
        for v in &p.vrep {
            assert!(p.contains(v));
        }
    }

    #[test]
    fn cut_box_vertices() {
        let mut p = box2();
        let h = HalfSpace::from_raw(&[1.0, 1.0], -1.5).unwrap();
        assert!(p.add_halfspace(h));
        p.refresh_vertices().unwrap();
        assert_eq!(p.vrep.len(), 5);
        let expect = [
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.5],
            vec![0.5, 1.0],
        ];
        for e in &expect {
            assert!(
                p.vrep.iter().any(|v| linf_distance(v, e) < 1e-9),
                "missing vertex {e:?}"
            );
        }
    }

    #[test]
    fn duplicate_cut_suppressed() {
        let mut p = box2();
        let h = HalfSpace::from_raw(&[2.0, 2.0], -3.0).unwrap();
        assert!(p.add_halfspace(h.clone()));
        assert!(!p.add_halfspace(h));
        // Same plane scaled differently is also suppressed by normalization.
        let h2 = HalfSpace::from_raw(&[4.0, 4.0], -6.0).unwrap();
        assert!(!p.add_halfspace(h2));
    }

    #[test]
    fn contains_examples() {
        let p = box2();
        assert!(p.contains(&[0.5, 0.5]));
        assert!(!p.contains(&[1.1, 0.0]));
    }

    #[test]
    fn box_volume_exact() {
        let p = Polytope::from_box(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!((p.volume() - 1.0).abs() < 1e-12);
        let p2 = Polytope::from_box(&[-1.0, 2.0], &[3.0, 5.0]).unwrap();
        assert!((p2.volume() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn cut_box_area() {
        let mut p = box2();
        p.add_halfspace(HalfSpace::from_raw(&[1.0, 1.0], -1.5).unwrap());
        p.refresh_vertices().unwrap();
        assert!((p.volume() - 0.875).abs() < 1e-12);
    }

    #[test]
    fn interval_volume() {
        let p = Polytope::from_box(&[0.25], &[1.75]).unwrap();
        assert_eq!(p.vrep.len(), 2);
        assert!((p.volume() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_slice_has_zero_volume() {
        let mut p = box2();
        // Opposite half-spaces meeting on the diagonal line.
        p.add_halfspace(HalfSpace::from_raw(&[1.0, 1.0], -1.0).unwrap());
        p.add_halfspace(HalfSpace::from_raw(&[-1.0, -1.0], 1.0).unwrap());
        p.refresh_vertices().unwrap();
        assert!(p.volume() < 1e-10);
    }

    #[test]
    fn unbounded_detected() {
        let hrep = vec![
            HalfSpace::from_raw(&[1.0, 0.0], -1.0).unwrap(),
            HalfSpace::from_raw(&[-1.0, 0.0], 0.0).unwrap(),
            HalfSpace::from_raw(&[0.0, 1.0], -1.0).unwrap(),
            // No lower bound on axis 1.
        ];
        assert!(matches!(
            vertex_enumeration(&hrep, 2),
            Err(RegionError::Unbounded(1))
        ));
    }

    #[test]
    fn dimension_guard() {
        assert!(matches!(
            vertex_enumeration(&[], 7),
            Err(RegionError::DimensionTooLarge(7))
        ));
    }

    #[test]
    fn random_3d_matches_bruteforce_oracle() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(1234);
        for _case in 0..5 {
            let mut p = Polytope::from_box(&[-1.0; 3], &[1.0; 3]).unwrap();
            for _ in 0..6 {
                let a: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let b = rng.gen_range(-1.2..-0.2);
                if let Some(h) = HalfSpace::from_raw(&a, b) {
                    p.add_halfspace(h);
                }
            }
            p.refresh_vertices().unwrap();

            // Independent oracle: plain triple loop over all 3-subsets with
            // Cramer solves, then feasibility filter and dedup.
            let hs = &p.hrep;
            let mut oracle: Vec<Vec<f64>> = Vec::new();
            for i in 0..hs.len() {
                for j in (i + 1)..hs.len() {
                    for k in (j + 1)..hs.len() {
                        let rows = [&hs[i], &hs[j], &hs[k]];
                        let m = nalgebra::Matrix3::from_fn(|r, c| rows[r].a[c]);
                        let det = m.determinant();
                        if det.abs() < 1e-10 {
                            continue;
                        }
                        let rhs = nalgebra::Vector3::new(-rows[0].b, -rows[1].b, -rows[2].b);
                        let x = m.try_inverse().unwrap() * rhs;
                        let xv = vec![x[0], x[1], x[2]];
                        if hs.iter().all(|h| h.evaluate(&xv) <= FEAS_TOL)
                            && !oracle.iter().any(|v| linf_distance(v, &xv) <= DEDUP_TOL)
                        {
                            oracle.push(xv);
                        }
                    }
                }
            }
            assert_eq!(p.vrep.len(), oracle.len());
            for v in &oracle {
                assert!(p.vrep.iter().any(|w| linf_distance(v, w) < 1e-6));
            }
        }
    }

    #[test]
    fn volume_matches_monte_carlo() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(99);
        let mut p = Polytope::from_box(&[0.0; 3], &[1.0; 3]).unwrap();
        p.add_halfspace(HalfSpace::from_raw(&[1.0, 1.0, 0.3], -1.4).unwrap());
        p.add_halfspace(HalfSpace::from_raw(&[-0.2, 0.8, 1.0], -1.1).unwrap());
        p.refresh_vertices().unwrap();
        let exact = p.volume();
        let n = 200_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let x = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            if p.contains(&x) {
                hits += 1;
            }
        }
        let mc = hits as f64 / n as f64;
        assert!(
            (exact - mc).abs() <= 0.02 * exact.max(0.05),
            "exact {exact} vs MC {mc}"
        );
    }

    #[test]
    fn vertices_satisfy_all_constraints() {
        let mut p = Polytope::from_box(&[0.0, 0.0], &[2.0, 3.0]).unwrap();
        p.add_halfspace(HalfSpace::from_raw(&[0.6, 1.0], -2.5).unwrap());
        p.refresh_vertices().unwrap();
        for v in &p.vrep {
            for h in &p.hrep {
                assert!(h.evaluate(v) <= 1e-8);
            }
        }
    }

    #[test]
    fn huge_epsilon_returns_box_unchanged() {
        let net = crate::fixtures::net2();
        let mut config = OuterConfig::new(vec![0.0], vec![2.0]);
        config.epsilon = 1e3;
        let report = outer_approximate(&net, &config).unwrap();
        assert_eq!(report.iterations.len(), 0);
        assert_eq!(report.hrep.len(), 2);
        assert_eq!(report.termination, Termination::Converged);
        assert_eq!(report.vrep.len(), 2);
    }
}
