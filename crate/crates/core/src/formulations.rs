//! The four optimization problems of the toolkit.
//!
//! `FP'(u)` minimizes the total constraint slack of a dispatch for renewable
//! vector `u` over the lifted variable `W >= 0`; its value is zero exactly on
//! the relaxed dispatchable region. `DP'(u)` is its dual, solved directly to
//! obtain separating certificates. `PE(u)` adds the network loss `tr(C W)`
//! weighted against the slack sum by `beta`; a zero-slack, rank-1 solution of
//! `PE(u)` certifies genuine dispatchability. `DE(u)` is the dual of `PE(u)`.
//!
//! Constraint families are ordered per node as p-upper, p-lower, q-upper,
//! q-lower, v-upper, v-lower; multiplier indices follow the same layout.

use nalgebra::{DMatrix, DVector, Matrix3};
use num_complex::Complex64;
use thiserror::Error;

use crate::hermitian::{rank_certificate, HermitianMatrix};
use crate::netmodel::{CoefficientBundle, ThreePhaseNetwork};
use crate::sdpcore::{
    solve, AffineConstraint, ConicProgram, PrimalDualSolution, SolveSettings, SolveStatus,
    SparseHermitian,
};

pub const DEFAULT_BETA: f64 = 0.2;
pub const DEFAULT_SLACK_TOL: f64 = 1e-6;
pub const DEFAULT_RANK_TOL: f64 = 1e-6;
/// Tolerance for the direct substitution check of a recovered voltage.
const SUBSTITUTION_TOL: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum FormulationError {
    #[error("renewable vector has {got} entries, network has {want} renewable nodes")]
    LengthMismatch { got: usize, want: usize },
    #[error("renewable injection {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },
    #[error("penalty weight beta must be positive, got {0}")]
    BadBeta(f64),
    #[error("solver ended with status {0:?}")]
    Solver(SolveStatus),
    #[error("dual value {0:.3e} is not above the cut threshold {1:.3e}: nothing to cut")]
    NothingToCut(f64, f64),
}

/// Nonnegative renewable active-power injections, ordered like the network's
/// renewable node list.
#[derive(Debug, Clone, PartialEq)]
pub struct RenewableVector(Vec<f64>);

impl RenewableVector {
    pub fn new(values: Vec<f64>) -> Result<Self, FormulationError> {
        for (index, &value) in values.iter().enumerate() {
            if value < 0.0 {
                return Err(FormulationError::NegativeEntry { index, value });
            }
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_for(&self, net: &ThreePhaseNetwork) -> Result<(), FormulationError> {
        if self.0.len() != net.renewables().len() {
            return Err(FormulationError::LengthMismatch {
                got: self.0.len(),
                want: net.renewables().len(),
            });
        }
        Ok(())
    }
}

/// Constraint family order within one node.
const FAMILIES: usize = 6;

/// Signed coefficient matrix of multiplier `k` (0-based) at a node:
/// `+P, -P, +Q, -Q, +E, -E`.
fn family_sign(k: usize) -> f64 {
    if k % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn u_at(bundle: &CoefficientBundle, u: &RenewableVector, node: usize) -> f64 {
    bundle
        .renewable_nodes
        .iter()
        .position(|&n| n == node)
        .map_or(0.0, |k| u.values()[k])
}

fn sparse_from_mats(
    bundle: &CoefficientBundle,
    node: usize,
    k: usize,
) -> SparseHermitian {
    let sign = family_sign(k);
    match k {
        0 | 1 => scaled_sparse(bundle.p_mats[node].matrix(), sign),
        2 | 3 => scaled_sparse(bundle.q_mats[node].matrix(), sign),
        4 | 5 => {
            let mut f = SparseHermitian::empty();
            let flat = bundle.e_flat[node];
            f.push(flat, flat, Complex64::new(sign, 0.0));
            f
        }
        _ => unreachable!(),
    }
}

fn scaled_sparse(m: &DMatrix<Complex64>, sign: f64) -> SparseHermitian {
    let mut f = SparseHermitian::empty();
    for r in 0..m.nrows() {
        for c in r..m.ncols() {
            let v = m[(r, c)] * sign;
            if v.norm() > 1e-14 {
                f.push(r, c, v);
            }
        }
    }
    f
}

fn family_rhs(bundle: &CoefficientBundle, u: &RenewableVector, node: usize, k: usize) -> f64 {
    let uv = u_at(bundle, u, node);
    match k {
        0 => bundle.p_hi[node] + uv,
        1 => -(bundle.p_lo[node] + uv),
        2 => bundle.q_hi[node],
        3 => -bundle.q_lo[node],
        4 => bundle.v_hi_sq[node],
        5 => -bundle.v_lo_sq[node],
        _ => unreachable!(),
    }
}

/// Canonical basis of the pinned 3x3 slack block, in row-major upper order.
#[derive(Debug, Clone, Copy)]
enum SlackBasis {
    Diag(usize),
    Re(usize, usize),
    Im(usize, usize),
}

fn slack_basis() -> Vec<SlackBasis> {
    let mut out = Vec::with_capacity(9);
    for r in 0..3 {
        out.push(SlackBasis::Diag(r));
        for c in (r + 1)..3 {
            out.push(SlackBasis::Re(r, c));
            out.push(SlackBasis::Im(r, c));
        }
    }
    out
}

fn slack_basis_matrix(b: SlackBasis) -> SparseHermitian {
    let mut f = SparseHermitian::empty();
    match b {
        SlackBasis::Diag(r) => f.push(r, r, Complex64::new(1.0, 0.0)),
        SlackBasis::Re(r, c) => f.push(r, c, Complex64::new(0.5, 0.0)),
        SlackBasis::Im(r, c) => f.push(r, c, Complex64::new(0.0, 0.5)),
    }
    f
}

fn slack_basis_rhs(b: SlackBasis, v_ref_outer: &Matrix3<Complex64>) -> f64 {
    match b {
        SlackBasis::Diag(r) => v_ref_outer[(r, r)].re,
        SlackBasis::Re(r, c) => v_ref_outer[(r, c)].re,
        SlackBasis::Im(r, c) => v_ref_outer[(r, c)].im,
    }
}

/// Fold the slack-block equality multipliers of a solved `FP'`/`PE` program
/// back into the Hermitian 3x3 block `alpha = -sum_e y_e G_e`.
pub fn alpha_from_eq_multipliers(y: &[f64]) -> Matrix3<Complex64> {
    let mut alpha = Matrix3::<Complex64>::zeros();
    for (b, &ye) in slack_basis().into_iter().zip(y.iter()) {
        match b {
            SlackBasis::Diag(r) => alpha[(r, r)] -= Complex64::new(ye, 0.0),
            SlackBasis::Re(r, c) => {
                alpha[(r, c)] -= Complex64::new(0.5 * ye, 0.0);
                alpha[(c, r)] -= Complex64::new(0.5 * ye, 0.0);
            }
            SlackBasis::Im(r, c) => {
                alpha[(r, c)] -= Complex64::new(0.0, 0.5 * ye);
                alpha[(c, r)] -= Complex64::new(0.0, -0.5 * ye);
            }
        }
    }
    alpha
}

// ---------------------------------------------------------------------------
// Primal problems

/// Slack-feasibility SDP: minimize the slack sum subject to the six
/// inequality families per node, `[W]_00 = v_ref v_ref^H`, `W >= 0`.
pub fn build_fp_relaxed(
    net: &ThreePhaseNetwork,
    u: &RenewableVector,
) -> Result<ConicProgram, FormulationError> {
    u.check_for(net)?;
    let bundle = CoefficientBundle::new(net);
    Ok(build_primal(&bundle, u, None))
}

/// Loss-penalized SDP: `min beta * sum z + tr(C W)` with the same
/// constraints as `FP'(u)`.
pub fn build_penalty(
    net: &ThreePhaseNetwork,
    u: &RenewableVector,
    beta: f64,
) -> Result<ConicProgram, FormulationError> {
    u.check_for(net)?;
    if beta <= 0.0 {
        return Err(FormulationError::BadBeta(beta));
    }
    let bundle = CoefficientBundle::new(net);
    Ok(build_primal(&bundle, u, Some(beta)))
}

fn build_primal(
    bundle: &CoefficientBundle,
    u: &RenewableVector,
    penalty: Option<f64>,
) -> ConicProgram {
    let nodes = bundle.p_mats.len();
    let num_z = FAMILIES * nodes;
    let mut prog = ConicProgram::new(bundle.dim, num_z);
    for node in 0..nodes {
        for k in 0..FAMILIES {
            let z_idx = FAMILIES * node + k;
            prog.inequalities.push(AffineConstraint {
                f: sparse_from_mats(bundle, node, k),
                z: vec![(z_idx, -1.0)],
                rhs: family_rhs(bundle, u, node, k),
            });
        }
    }
    for b in slack_basis() {
        prog.equalities.push(AffineConstraint {
            f: slack_basis_matrix(b),
            z: vec![],
            rhs: slack_basis_rhs(b, &bundle.v_ref_outer),
        });
    }
    match penalty {
        Some(beta) => {
            prog.obj_z = vec![beta; num_z];
            prog.obj_w = SparseHermitian::from_dense(&bundle.c, 1e-14);
        }
        None => {
            prog.obj_z = vec![1.0; num_z];
        }
    }
    prog
}

// ---------------------------------------------------------------------------
// Dual problems

/// Dual of `FP'(u)`: maximize `D_u(lambda, alpha)` over `0 <= lambda <= 1`
/// with `A(lambda, alpha) >= 0`. Returned as an equivalent minimization with
/// the PSD matrix `A` as the conic variable.
pub fn build_dual(
    net: &ThreePhaseNetwork,
    u: &RenewableVector,
) -> Result<ConicProgram, FormulationError> {
    u.check_for(net)?;
    let bundle = CoefficientBundle::new(net);
    Ok(build_dual_general(&bundle, u, 1.0, false))
}

/// Dual of `PE(u)`: multipliers bounded by `beta` and
/// `B(lambda, alpha) = A-construction + C >= 0`.
pub fn build_dual_penalty(
    net: &ThreePhaseNetwork,
    u: &RenewableVector,
    beta: f64,
) -> Result<ConicProgram, FormulationError> {
    u.check_for(net)?;
    if beta <= 0.0 {
        return Err(FormulationError::BadBeta(beta));
    }
    let bundle = CoefficientBundle::new(net);
    Ok(build_dual_general(&bundle, u, beta, true))
}

/// Objective coefficient of multiplier `(node, k)` in `D_u`.
fn dual_objective_coefficient(
    bundle: &CoefficientBundle,
    u: &RenewableVector,
    node: usize,
    k: usize,
) -> f64 {
    let uv = u_at(bundle, u, node);
    match k {
        0 => -(uv + bundle.p_hi[node]),
        1 => uv + bundle.p_lo[node],
        2 => -bundle.q_hi[node],
        3 => bundle.q_lo[node],
        4 => -bundle.v_hi_sq[node],
        5 => bundle.v_lo_sq[node],
        _ => unreachable!(),
    }
}

fn signed_entry(bundle: &CoefficientBundle, node: usize, k: usize, r: usize, c: usize) -> Complex64 {
    let sign = family_sign(k);
    let v = match k {
        0 | 1 => bundle.p_mats[node].matrix()[(r, c)],
        2 | 3 => bundle.q_mats[node].matrix()[(r, c)],
        4 | 5 => {
            if r == c && r == bundle.e_flat[node] {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        }
        _ => unreachable!(),
    };
    v * sign
}

/// Scale of the PSD variable in the penalized dual: the loss matrix pins
/// entries of `B` at its own magnitude, which is typically much larger than
/// the interesting objective differences. Building the program in `B / eta`
/// keeps the conic block well-conditioned.
fn dual_psd_scale(bundle: &CoefficientBundle, include_loss: bool) -> f64 {
    if !include_loss {
        return 1.0;
    }
    bundle
        .c
        .matrix()
        .iter()
        .map(|z| z.norm())
        .fold(1.0_f64, f64::max)
}

fn build_dual_general(
    bundle: &CoefficientBundle,
    u: &RenewableVector,
    bound: f64,
    include_loss: bool,
) -> ConicProgram {
    let nodes = bundle.p_mats.len();
    let num_lambda = FAMILIES * nodes;
    let dim = bundle.dim;
    let eta = dual_psd_scale(bundle, include_loss);
    let mut prog = ConicProgram::new(dim, num_lambda);

    // tr over the slack block of each signed coefficient matrix against
    // v_ref v_ref^H, entering the objective through the alpha substitution.
    let mut slack_trace = vec![0.0; num_lambda];
    for node in 0..nodes {
        for k in 0..FAMILIES {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..3 {
                for c in 0..3 {
                    acc += signed_entry(bundle, node, k, r, c) * bundle.v_ref_outer[(c, r)];
                }
            }
            slack_trace[FAMILIES * node + k] = acc.re;
        }
    }

    // min  -L(lambda; u) - sum_t lambda_t slack_trace_t + tr(Pi(v_ref) M)
    // where M is the PSD variable (A or B).
    for node in 0..nodes {
        for k in 0..FAMILIES {
            let t = FAMILIES * node + k;
            prog.obj_z[t] = -dual_objective_coefficient(bundle, u, node, k) - slack_trace[t];
        }
    }
    for r in 0..3 {
        for c in r..3 {
            let v = bundle.v_ref_outer[(r, c)] * eta;
            if v.norm() > 1e-14 {
                prog.obj_w.push(r, c, v);
            }
        }
    }
    if include_loss {
        let mut acc = Complex64::new(0.0, 0.0);
        for r in 0..3 {
            for c in 0..3 {
                acc += bundle.c.matrix()[(r, c)] * bundle.v_ref_outer[(c, r)];
            }
        }
        prog.obj_offset = -acc.re;
    }

    // lambda_t <= bound.
    for t in 0..num_lambda {
        prog.inequalities.push(AffineConstraint {
            f: SparseHermitian::empty(),
            z: vec![(t, 1.0)],
            rhs: bound,
        });
    }

    // Tie every matrix entry outside the slack block to the multiplier
    // combination (plus the loss matrix for the penalized dual).
    for r in 0..dim {
        for c in r..dim {
            if r < 3 && c < 3 {
                continue;
            }
            if r == c {
                let mut z = Vec::new();
                for node in 0..nodes {
                    for k in 0..FAMILIES {
                        let coef = signed_entry(bundle, node, k, r, r).re / eta;
                        if coef.abs() > 1e-18 {
                            z.push((FAMILIES * node + k, -coef));
                        }
                    }
                }
                let mut f = SparseHermitian::empty();
                f.push(r, r, Complex64::new(1.0, 0.0));
                let rhs = if include_loss {
                    bundle.c.matrix()[(r, r)].re / eta
                } else {
                    0.0
                };
                prog.equalities.push(AffineConstraint { f, z, rhs });
            } else {
                for im_part in [false, true] {
                    let mut z = Vec::new();
                    for node in 0..nodes {
                        for k in 0..FAMILIES {
                            let entry = signed_entry(bundle, node, k, r, c);
                            let coef = (if im_part { entry.im } else { entry.re }) / eta;
                            if coef.abs() > 1e-18 {
                                z.push((FAMILIES * node + k, -coef));
                            }
                        }
                    }
                    let mut f = SparseHermitian::empty();
                    let h = if im_part {
                        Complex64::new(0.0, 0.5)
                    } else {
                        Complex64::new(0.5, 0.0)
                    };
                    f.push(r, c, h);
                    let centry = bundle.c.matrix()[(r, c)] / eta;
                    let rhs = if include_loss {
                        if im_part {
                            centry.im
                        } else {
                            centry.re
                        }
                    } else {
                        0.0
                    };
                    prog.equalities.push(AffineConstraint { f, z, rhs });
                }
            }
        }
    }
    prog
}

// ---------------------------------------------------------------------------
// Values and certificates

/// Dual feasible point with its objective value; defines a half-space in
/// `u`-space through the affine structure of `D_u`.
#[derive(Debug, Clone)]
pub struct DualCertificate {
    /// Multipliers per node, family-ordered.
    pub lambda: Vec<[f64; 6]>,
    pub alpha: Matrix3<Complex64>,
    /// `D_u` at the certificate (equals dp' for an optimal certificate).
    pub value: f64,
}

impl DualCertificate {
    pub fn zero(nodes: usize) -> Self {
        Self {
            lambda: vec![[0.0; 6]; nodes],
            alpha: Matrix3::zeros(),
            value: 0.0,
        }
    }
}

/// `fp'(u)`: minimum slack sum of the relaxed feasibility SDP.
pub fn fp_value(
    net: &ThreePhaseNetwork,
    u: &RenewableVector,
    settings: &SolveSettings,
) -> Result<f64, FormulationError> {
    let prog = build_fp_relaxed(net, u)?;
    let sol = solve(&prog, settings);
    if !sol.is_optimal() {
        return Err(FormulationError::Solver(sol.status));
    }
    Ok(sol.primal_objective.max(0.0))
}

pub fn solve_fp(
    net: &ThreePhaseNetwork,
    u: &RenewableVector,
    settings: &SolveSettings,
) -> Result<(ConicProgram, PrimalDualSolution), FormulationError> {
    let prog = build_fp_relaxed(net, u)?;
    let sol = solve(&prog, settings);
    if !sol.is_optimal() {
        return Err(FormulationError::Solver(sol.status));
    }
    Ok((prog, sol))
}

/// `dp'(u)` with the maximizing `(lambda, alpha)`.
pub fn dp_value_and_certificate(
    net: &ThreePhaseNetwork,
    u: &RenewableVector,
    settings: &SolveSettings,
) -> Result<(f64, DualCertificate), FormulationError> {
    let prog = build_dual(net, u)?;
    let sol = solve(&prog, settings);
    if !sol.is_optimal() {
        return Err(FormulationError::Solver(sol.status));
    }
    let bundle = CoefficientBundle::new(net);
    let cert = extract_certificate(&bundle, &sol, false);
    Ok((-sol.primal_objective, cert))
}

/// `DE(u)` value and certificate (multipliers bounded by `beta`).
pub fn de_value_and_certificate(
    net: &ThreePhaseNetwork,
    u: &RenewableVector,
    beta: f64,
    settings: &SolveSettings,
) -> Result<(f64, DualCertificate), FormulationError> {
    let prog = build_dual_penalty(net, u, beta)?;
    let sol = solve(&prog, settings);
    if !sol.is_optimal() {
        return Err(FormulationError::Solver(sol.status));
    }
    let bundle = CoefficientBundle::new(net);
    let cert = extract_certificate(&bundle, &sol, true);
    Ok((-sol.primal_objective, cert))
}

fn extract_certificate(
    bundle: &CoefficientBundle,
    sol: &PrimalDualSolution,
    include_loss: bool,
) -> DualCertificate {
    let nodes = bundle.p_mats.len();
    let mut lambda = vec![[0.0_f64; 6]; nodes];
    for node in 0..nodes {
        for k in 0..FAMILIES {
            lambda[node][k] = sol.z[FAMILIES * node + k].max(0.0);
        }
    }
    // alpha = M_00 - [sum signed lambda matrices]_00 (- C_00 for DE); the
    // solver variable carries B / eta.
    let eta = dual_psd_scale(bundle, include_loss);
    let mut alpha = Matrix3::<Complex64>::zeros();
    for r in 0..3 {
        for c in 0..3 {
            let mut v = sol.w.matrix()[(r, c)] * eta;
            for node in 0..nodes {
                for k in 0..FAMILIES {
                    v -= signed_entry(bundle, node, k, r, c) * lambda[node][k];
                }
            }
            if include_loss {
                v -= bundle.c.matrix()[(r, c)];
            }
            alpha[(r, c)] = v;
        }
    }
    let value = -sol.primal_objective;
    DualCertificate { lambda, alpha, value }
}

/// Rebuild `A(lambda, alpha)` (or `B` when `include_loss`) from a
/// certificate.
pub fn dual_matrix_from_certificate(
    bundle: &CoefficientBundle,
    cert: &DualCertificate,
    include_loss: bool,
) -> HermitianMatrix {
    let dim = bundle.dim;
    let mut m = bundle.place_slack_block(&cert.alpha);
    for (node, lams) in cert.lambda.iter().enumerate() {
        let p = bundle.p_mats[node].matrix();
        let q = bundle.q_mats[node].matrix();
        let lp = lams[0] - lams[1];
        let lq = lams[2] - lams[3];
        if lp != 0.0 {
            m += p * Complex64::new(lp, 0.0);
        }
        if lq != 0.0 {
            m += q * Complex64::new(lq, 0.0);
        }
        let le = lams[4] - lams[5];
        if le != 0.0 {
            let flat = bundle.e_flat[node];
            m[(flat, flat)] += Complex64::new(le, 0.0);
        }
    }
    if include_loss {
        m += bundle.c.matrix();
    }
    let _ = dim;
    HermitianMatrix::symmetrized(m)
}

/// Evaluate `D_u` at a certificate for an arbitrary `u`; affine in `u`.
pub fn dual_value_at(
    bundle: &CoefficientBundle,
    cert: &DualCertificate,
    u: &RenewableVector,
) -> f64 {
    let (a, b) = cut_coefficients(bundle, cert);
    let mut v = b;
    for (k, &uk) in u.values().iter().enumerate() {
        v += a[k] * uk;
    }
    v
}

fn cut_coefficients(bundle: &CoefficientBundle, cert: &DualCertificate) -> (Vec<f64>, f64) {
    let a: Vec<f64> = bundle
        .renewable_nodes
        .iter()
        .map(|&node| cert.lambda[node][1] - cert.lambda[node][0])
        .collect();
    let mut b = 0.0;
    for (node, lams) in cert.lambda.iter().enumerate() {
        b += -lams[0] * bundle.p_hi[node] + lams[1] * bundle.p_lo[node]
            - lams[2] * bundle.q_hi[node]
            + lams[3] * bundle.q_lo[node]
            - lams[4] * bundle.v_hi_sq[node]
            + lams[5] * bundle.v_lo_sq[node];
    }
    let mut tr = Complex64::new(0.0, 0.0);
    for r in 0..3 {
        for c in 0..3 {
            tr += cert.alpha[(r, c)] * bundle.v_ref_outer[(c, r)];
        }
    }
    b -= tr.re;
    (a, b)
}

/// Half-space `a . u + b <= 0` separating the certificate's vertex from the
/// relaxed region. Coefficients are the raw certificate values.
#[derive(Debug, Clone, PartialEq)]
pub struct CutPlane {
    pub a: Vec<f64>,
    pub b: f64,
}

impl CutPlane {
    pub fn evaluate(&self, u: &[f64]) -> f64 {
        self.b + self.a.iter().zip(u.iter()).map(|(a, u)| a * u).sum::<f64>()
    }
}

/// Extract the cutting plane of a certificate with `D_u > epsilon`.
pub fn cutting_plane_from_dual(
    cert: &DualCertificate,
    net: &ThreePhaseNetwork,
    epsilon: f64,
) -> Result<CutPlane, FormulationError> {
    if cert.value <= epsilon {
        return Err(FormulationError::NothingToCut(cert.value, epsilon));
    }
    let bundle = CoefficientBundle::new(net);
    let (a, b) = cut_coefficients(&bundle, cert);
    Ok(CutPlane { a, b })
}

// ---------------------------------------------------------------------------
// Membership

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Zero slack and a rank-1 solution that substitutes back into the power
    /// flow equations: certified dispatchable.
    InnerMember,
    /// Zero slack but no rank-1 certificate: in the relaxed region only.
    RelaxedOnly,
    /// Positive slack: outside the inner region.
    NonMember,
    /// Solver failure.
    Inconclusive,
}

#[derive(Debug, Clone)]
pub struct MembershipVerdict {
    pub verdict: Verdict,
    pub slack_sum: f64,
    /// Leading eigenvalue ratio of the rank certificate (0 when rank-1).
    pub exactness: f64,
    pub recovered_voltage: Option<DVector<Complex64>>,
    /// Controllable injections implied by the recovered voltage (u overlay
    /// removed at renewable nodes).
    pub recovered_injections: Option<Vec<Complex64>>,
}

/// Solve `PE(u)` and classify `u` against the certified inner region.
pub fn penalty_membership(
    net: &ThreePhaseNetwork,
    u: &RenewableVector,
    beta: f64,
    slack_tol: f64,
    rank_tol: f64,
    settings: &SolveSettings,
) -> Result<MembershipVerdict, FormulationError> {
    u.check_for(net)?;
    if beta <= 0.0 {
        return Err(FormulationError::BadBeta(beta));
    }
    let bundle = CoefficientBundle::new(net);
    let prog = build_primal(&bundle, u, Some(beta));
    let sol = solve(&prog, settings);
    if !sol.is_optimal() {
        return Ok(MembershipVerdict {
            verdict: Verdict::Inconclusive,
            slack_sum: f64::NAN,
            exactness: f64::NAN,
            recovered_voltage: None,
            recovered_injections: None,
        });
    }
    let slack_sum: f64 = sol.z.iter().sum();
    if slack_sum > slack_tol {
        return Ok(MembershipVerdict {
            verdict: Verdict::NonMember,
            slack_sum,
            exactness: f64::NAN,
            recovered_voltage: None,
            recovered_injections: None,
        });
    }
    let cert = match rank_certificate(&sol.w, &bundle.v_ref, rank_tol) {
        Ok(c) => c,
        Err(_) => {
            return Ok(MembershipVerdict {
                verdict: Verdict::Inconclusive,
                slack_sum,
                exactness: f64::NAN,
                recovered_voltage: None,
                recovered_injections: None,
            })
        }
    };
    if cert.leading_ratio > rank_tol {
        return Ok(MembershipVerdict {
            verdict: Verdict::RelaxedOnly,
            slack_sum,
            exactness: cert.leading_ratio,
            recovered_voltage: None,
            recovered_injections: None,
        });
    }
    let voltage = cert.recovered_voltage.expect("rank-1 certificate recovers");
    let (ok, injections) = substitution_check(&bundle, net, u, &voltage);
    if !ok {
        return Ok(MembershipVerdict {
            verdict: Verdict::RelaxedOnly,
            slack_sum,
            exactness: cert.leading_ratio,
            recovered_voltage: Some(voltage),
            recovered_injections: None,
        });
    }
    Ok(MembershipVerdict {
        verdict: Verdict::InnerMember,
        slack_sum,
        exactness: cert.leading_ratio,
        recovered_voltage: Some(voltage),
        recovered_injections: Some(injections),
    })
}

/// Substitute a recovered voltage into the power flow equations and limits.
fn substitution_check(
    bundle: &CoefficientBundle,
    net: &ThreePhaseNetwork,
    u: &RenewableVector,
    voltage: &DVector<Complex64>,
) -> (bool, Vec<Complex64>) {
    let current = &bundle.y * voltage;
    let nodes = net.node_count();
    let mut injections = Vec::with_capacity(nodes);
    let mut ok = true;
    for idx in 0..nodes {
        let s_total = voltage[3 + idx] * current[3 + idx].conj();
        let uv = u_at(bundle, u, idx);
        let s_ctrl = Complex64::new(s_total.re - uv, s_total.im);
        let lim = net.limits_by_index(idx);
        if s_ctrl.re < lim.p_lo - SUBSTITUTION_TOL
            || s_ctrl.re > lim.p_hi + SUBSTITUTION_TOL
            || s_ctrl.im < lim.q_lo - SUBSTITUTION_TOL
            || s_ctrl.im > lim.q_hi + SUBSTITUTION_TOL
        {
            ok = false;
        }
        let mag = voltage[3 + idx].norm();
        if mag < lim.v_lo - SUBSTITUTION_TOL || mag > lim.v_hi + SUBSTITUTION_TOL {
            ok = false;
        }
        injections.push(s_ctrl);
    }
    (ok, injections)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::oracle;

    fn settings() -> SolveSettings {
        SolveSettings::default()
    }

    fn u1(v: f64) -> RenewableVector {
        RenewableVector::new(vec![v]).unwrap()
    }

    #[test]
    fn fp_program_shape_on_net2() {
        let net = fixtures::net2();
        let prog = build_fp_relaxed(&net, &u1(0.0)).unwrap();
        assert_eq!(prog.num_z, 18);
        assert_eq!(prog.inequalities.len(), 18);
        assert_eq!(prog.equalities.len(), 9);
        assert_eq!(prog.psd_dim, 6);
    }

    #[test]
    fn zero_u_reduces_rhs_to_bounds() {
        let net = fixtures::net2();
        let prog = build_fp_relaxed(&net, &u1(0.0)).unwrap();
        // Node (1, a) p-upper and p-lower rows carry the plain bounds.
        assert_eq!(prog.inequalities[0].rhs, 0.5);
        assert_eq!(prog.inequalities[1].rhs, 0.0);
        // And with u = 2 they shift by u.
        let prog_u = build_fp_relaxed(&net, &u1(2.0)).unwrap();
        assert_eq!(prog_u.inequalities[0].rhs, 2.5);
        assert_eq!(prog_u.inequalities[1].rhs, -2.0);
        assert_eq!(prog_u.inequalities[2].rhs, 0.3);
    }

    #[test]
    fn oracle_dispatch_satisfies_constraints_without_slack() {
        // W from a converged power flow leaves every inequality slack-free.
        let net = fixtures::net2();
        let s = vec![Complex64::new(0.1, 0.05); 3];
        let pf = oracle::power_flow_fixed_point(&net, &s).unwrap();
        let w = HermitianMatrix::outer(&pf.voltages);
        let prog = build_fp_relaxed(&net, &u1(0.0)).unwrap();
        for (i, cons) in prog.inequalities.iter().enumerate() {
            let lhs = cons.f.trace_with(&w);
            assert!(lhs <= cons.rhs + 1e-8, "row {i}: {lhs} vs {}", cons.rhs);
        }
        for cons in &prog.equalities {
            let lhs = cons.f.trace_with(&w);
            assert!((lhs - cons.rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn fp_zero_at_base_point() {
        let net = fixtures::net2();
        let v = fp_value(&net, &u1(0.0), &settings()).unwrap();
        assert!(v <= 1e-6, "fp'(0) = {v}");
    }

    #[test]
    fn fp_positive_far_outside() {
        let net = fixtures::net2();
        let v = fp_value(&net, &u1(50.0), &settings()).unwrap();
        assert!(v > 1e-3, "fp'(50) = {v}");
    }

    #[test]
    fn fp_convex_on_segments() {
        let net = fixtures::net2();
        let pairs = [(0.0, 8.0), (1.0, 5.0), (30.0, 50.0)];
        for (a, b) in pairs {
            let fa = fp_value(&net, &u1(a), &settings()).unwrap();
            let fb = fp_value(&net, &u1(b), &settings()).unwrap();
            let fm = fp_value(&net, &u1(0.5 * (a + b)), &settings()).unwrap();
            assert!(
                fm <= 0.5 * (fa + fb) + 1e-6,
                "midpoint of ({a}, {b}): {fm} vs {}",
                0.5 * (fa + fb)
            );
        }
    }

    #[test]
    fn dual_zero_point_has_zero_value() {
        let net = fixtures::net2();
        let bundle = CoefficientBundle::new(&net);
        let cert = DualCertificate::zero(net.node_count());
        assert_eq!(dual_value_at(&bundle, &cert, &u1(0.0)), 0.0);
        assert_eq!(dual_value_at(&bundle, &cert, &u1(7.0)), 0.0);
    }

    #[test]
    fn strong_duality_at_base_and_outside() {
        let net = fixtures::net2();
        for uv in [0.0, 50.0] {
            let fp = fp_value(&net, &u1(uv), &settings()).unwrap();
            let (dp, cert) = dp_value_and_certificate(&net, &u1(uv), &settings()).unwrap();
            assert!(
                (fp - dp).abs() <= 1e-5 * (1.0 + fp.abs()),
                "u = {uv}: fp {fp} dp {dp}"
            );
            // Multipliers respect their bound and the rebuilt A is PSD.
            for lams in &cert.lambda {
                for &l in lams {
                    assert!((-1e-7..=1.0 + 1e-6).contains(&l), "lambda {l}");
                }
            }
            let bundle = CoefficientBundle::new(&net);
            let a = dual_matrix_from_certificate(&bundle, &cert, false);
            let min_eig = crate::hermitian::eig_hermitian(&a)
                .eigenvalues
                .last()
                .copied()
                .unwrap();
            assert!(min_eig >= -1e-6, "A(lambda, alpha) min eig {min_eig}");
        }
    }

    #[test]
    fn certificate_value_is_affine_in_u() {
        let net = fixtures::net2();
        let (dp, cert) = dp_value_and_certificate(&net, &u1(50.0), &settings()).unwrap();
        assert!(dp > 1e-3);
        let bundle = CoefficientBundle::new(&net);
        let base = dual_value_at(&bundle, &cert, &u1(50.0));
        assert!((base - cert.value).abs() <= 1e-5 * (1.0 + cert.value.abs()));
        // Finite differences reproduce the lambda2 - lambda1 coefficient.
        let d = 0.5;
        let up = dual_value_at(&bundle, &cert, &u1(50.0 + d));
        let dn = dual_value_at(&bundle, &cert, &u1(50.0 - d));
        let slope = (up - dn) / (2.0 * d);
        let node = bundle.renewable_nodes[0];
        let expect = cert.lambda[node][1] - cert.lambda[node][0];
        assert!((slope - expect).abs() < 1e-10);
    }

    #[test]
    fn cutting_plane_by_construction() {
        let net = fixtures::net2();
        let (dp, cert) = dp_value_and_certificate(&net, &u1(50.0), &settings()).unwrap();
        let plane = cutting_plane_from_dual(&cert, &net, 0.02).unwrap();
        let at_cut = plane.evaluate(&[50.0]);
        assert!((at_cut - dp).abs() <= 1e-5 * (1.0 + dp.abs()));
        assert!(at_cut > 0.02);
    }

    #[test]
    fn zero_certificate_gives_nothing_to_cut() {
        let net = fixtures::net2();
        let cert = DualCertificate::zero(net.node_count());
        assert!(matches!(
            cutting_plane_from_dual(&cert, &net, 0.02),
            Err(FormulationError::NothingToCut(..))
        ));
    }

    #[test]
    fn penalty_program_and_big_beta_limit() {
        let net = fixtures::net2();
        let prog = build_penalty(&net, &u1(0.0), 1000.0).unwrap();
        let sol = solve(&prog, &settings());
        assert!(sol.is_optimal());
        let slack: f64 = sol.z.iter().sum();
        assert!(slack < 1e-8, "slack {slack}");
        // Minimum-loss dispatch at u = 0 is the zero dispatch: no loss.
        let bundle = CoefficientBundle::new(&net);
        let loss = bundle.c.trace_product(&sol.w);
        assert!(loss.abs() < 1e-5, "loss {loss}");
    }

    #[test]
    fn penalty_rejects_bad_beta() {
        let net = fixtures::net2();
        assert!(matches!(
            build_penalty(&net, &u1(0.0), 0.0),
            Err(FormulationError::BadBeta(_))
        ));
        assert!(matches!(
            build_dual_penalty(&net, &u1(0.0), -0.1),
            Err(FormulationError::BadBeta(_))
        ));
    }

    #[test]
    fn dual_penalty_bound_is_beta() {
        let net = fixtures::net2();
        let prog = build_dual_penalty(&net, &u1(0.0), DEFAULT_BETA).unwrap();
        for cons in prog.inequalities.iter() {
            assert_eq!(cons.rhs, DEFAULT_BETA);
        }
    }

    #[test]
    fn penalty_objective_arithmetic() {
        let net = fixtures::net2();
        let beta = 0.7;
        let prog = build_penalty(&net, &u1(0.0), beta).unwrap();
        // Evaluate the objective at an arbitrary feasible-shaped point.
        let v = nalgebra::DVector::from_fn(6, |i, _| match i % 3 {
            0 => Complex64::new(1.0, 0.1),
            1 => Complex64::new(-0.4, -0.8),
            _ => Complex64::new(-0.5, 0.9),
        });
        let w = HermitianMatrix::outer(&v);
        let z = vec![0.25; prog.num_z];
        let direct = beta * z.iter().sum::<f64>()
            + CoefficientBundle::new(&net).c.trace_product(&w);
        let via_program = prog.obj_w.trace_with(&w)
            + prog.obj_z.iter().zip(z.iter()).map(|(c, z)| c * z).sum::<f64>();
        assert!((direct - via_program).abs() < 1e-9);
    }

    #[test]
    fn loss_matrix_is_psd_on_fixtures() {
        for net in [fixtures::net2(), fixtures::net4()] {
            let bundle = CoefficientBundle::new(&net);
            let min_eig = crate::hermitian::eig_hermitian(&bundle.c)
                .eigenvalues
                .last()
                .copied()
                .unwrap();
            assert!(min_eig >= -1e-9, "C min eig {min_eig}");
        }
    }

    #[test]
    fn membership_inner_at_base_point() {
        let net = fixtures::net2();
        let verdict = penalty_membership(
            &net,
            &u1(0.0),
            DEFAULT_BETA,
            DEFAULT_SLACK_TOL,
            DEFAULT_RANK_TOL,
            &settings(),
        )
        .unwrap();
        assert_eq!(verdict.verdict, Verdict::InnerMember);
        // Recovered voltage matches the oracle power flow.
        let injections = verdict.recovered_injections.as_ref().unwrap();
        let mut total = injections.clone();
        total[0] += Complex64::new(0.0, 0.0);
        let pf = oracle::power_flow_fixed_point(&net, &total).unwrap();
        let rec = verdict.recovered_voltage.as_ref().unwrap();
        for k in 0..6 {
            assert!(
                (pf.voltages[k] - rec[k]).norm() < 1e-4,
                "voltage {k} differs: {} vs {}",
                pf.voltages[k],
                rec[k]
            );
        }
    }

    #[test]
    fn membership_non_member_in_gap() {
        // u = 25 is infeasible for the true region; the penalized problem
        // prefers slack to the lossy relaxed dispatch.
        let net = fixtures::net2();
        let verdict = penalty_membership(
            &net,
            &u1(25.0),
            DEFAULT_BETA,
            DEFAULT_SLACK_TOL,
            DEFAULT_RANK_TOL,
            &settings(),
        )
        .unwrap();
        assert_eq!(verdict.verdict, Verdict::NonMember);
        assert!(verdict.slack_sum > 1e-3);
    }

    #[test]
    fn negative_u_is_rejected() {
        assert!(matches!(
            RenewableVector::new(vec![-0.1]),
            Err(FormulationError::NegativeEntry { .. })
        ));
    }

    #[test]
    fn fp_multipliers_rebuild_solver_dual_matrix() {
        // A(lambda, alpha) assembled from the primal solve's multipliers
        // matches the dual matrix the solver reports.
        let net = fixtures::net2();
        let (_prog, sol) = solve_fp(&net, &u1(3.0), &settings()).unwrap();
        let bundle = CoefficientBundle::new(&net);
        let nodes = net.node_count();
        let mut lambda = vec![[0.0_f64; 6]; nodes];
        for node in 0..nodes {
            for k in 0..FAMILIES {
                lambda[node][k] = sol.ineq_multipliers[FAMILIES * node + k];
            }
        }
        let cert = DualCertificate {
            lambda,
            alpha: alpha_from_eq_multipliers(&sol.eq_multipliers),
            value: sol.dual_objective,
        };
        let rebuilt = dual_matrix_from_certificate(&bundle, &cert, false);
        let diff = rebuilt.matrix() - sol.dual_matrix.matrix();
        let err = diff.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err <= 1e-6, "rebuild defect {err}");
    }

    #[test]
    fn de_matches_pe_value() {
        let net = fixtures::net2();
        for uv in [0.0, 3.0] {
            let prog = build_penalty(&net, &u1(uv), DEFAULT_BETA).unwrap();
            let pe = solve(&prog, &settings());
            assert!(pe.is_optimal());
            let (de, _cert) =
                de_value_and_certificate(&net, &u1(uv), DEFAULT_BETA, &settings()).unwrap();
            assert!(
                (pe.primal_objective - de).abs() <= 1e-5 * (1.0 + pe.primal_objective.abs()),
                "u = {uv}: PE {} DE {de}",
                pe.primal_objective
            );
        }
    }
}
