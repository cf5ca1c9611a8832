//! Ground-truth feasibility at desk scale.
//!
//! A fixed-point power flow (Z-bus iteration) combined with an exhaustive
//! grid search over the controllable injections decides whether a renewable
//! vector has a feasible dispatch. The search under-approximates the true
//! region: a "none" answer is qualified by the grid resolution.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::formulations::RenewableVector;
use crate::netmodel::{assemble_admittance, ThreePhaseNetwork};

/// Hard cap on the number of grid candidates per feasibility search.
pub const GRID_GUARD: usize = 10_000_000;

const PF_TOL: f64 = 1e-10;
const PF_MAX_ITER: usize = 500;
const BALANCE_TOL: f64 = 1e-8;
/// Limit slack when checking a candidate against bounds and voltage limits.
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("dispatch grid has {0} candidates, guard is {GRID_GUARD}")]
    GridTooLarge(usize),
    #[error("network has no renewable axes")]
    NoRenewableAxes,
    #[error("u-grid dimension {0} not supported (max 2)")]
    GridDimension(usize),
    #[error("reduced admittance matrix is singular")]
    SingularAdmittance,
}

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("fixed-point iteration did not converge after {iterations} iterations")]
    Diverged { iterations: usize },
    #[error("reduced admittance matrix is singular")]
    SingularAdmittance,
}

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    /// Full voltage vector, slack bus first, length `3(N+1)`.
    pub voltages: DVector<Complex64>,
    pub iterations: usize,
    /// Max nodal power balance residual.
    pub residual: f64,
}

/// A dispatch that realizes a renewable vector: controllable setpoints plus
/// the converged voltages.
#[derive(Debug, Clone)]
pub struct DispatchCandidate {
    /// Controllable complex injection per non-slack node (u overlay excluded).
    pub injections: Vec<Complex64>,
    pub voltages: DVector<Complex64>,
}

/// Factored network data reused across many power-flow solves.
pub struct PowerFlowEngine {
    dim: usize,
    n_tail: usize,
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    v_flat: DVector<Complex64>,
    y: DMatrix<Complex64>,
    v_ref: DVector<Complex64>,
}

impl PowerFlowEngine {
    pub fn new(net: &ThreePhaseNetwork) -> Result<Self, OracleError> {
        let dim = net.dim();
        let n_tail = dim - 3;
        let y = assemble_admittance(net);
        let y11 = y.view((3, 3), (n_tail, n_tail)).into_owned();
        let y10 = y.view((3, 0), (n_tail, 3)).into_owned();
        let v_ref = DVector::from_fn(3, |i, _| net.slack_voltage()[i]);
        let lu = nalgebra::LU::new(y11);
        let rhs = -(&y10 * &v_ref);
        let v_flat = lu.solve(&rhs).ok_or(OracleError::SingularAdmittance)?;
        Ok(Self {
            dim,
            n_tail,
            lu,
            v_flat,
            y,
            v_ref,
        })
    }

    /// Z-bus fixed point: `V <- V_flat + Y11^{-1} conj(s ./ V)` on the
    /// non-slack nodes, slack voltage held at `V_ref`.
    pub fn solve(&self, injections: &[Complex64]) -> Result<PowerFlowSolution, PowerFlowError> {
        assert_eq!(injections.len(), self.n_tail);
        let s = DVector::from_column_slice(injections);
        let mut v = self.v_flat.clone();
        let mut iterations = 0;
        loop {
            iterations += 1;
            let mut rhs = DVector::<Complex64>::zeros(self.n_tail);
            for k in 0..self.n_tail {
                let vk = v[k];
                if !vk.is_finite() || vk.norm() < 0.05 {
                    return Err(PowerFlowError::Diverged { iterations });
                }
                rhs[k] = (s[k] / vk).conj();
            }
            let delta = self
                .lu
                .solve(&rhs)
                .ok_or(PowerFlowError::SingularAdmittance)?;
            let v_new = &self.v_flat + delta;
            let step = (0..self.n_tail)
                .map(|k| (v_new[k] - v[k]).norm())
                .fold(0.0_f64, f64::max);
            v = v_new;
            if v.iter().any(|z| !z.is_finite() || z.norm() > 1e3) {
                return Err(PowerFlowError::Diverged { iterations });
            }
            if step <= PF_TOL {
                break;
            }
            if iterations >= PF_MAX_ITER {
                return Err(PowerFlowError::Diverged { iterations });
            }
        }

        let mut full = DVector::<Complex64>::zeros(self.dim);
        for r in 0..3 {
            full[r] = self.v_ref[r];
        }
        for k in 0..self.n_tail {
            full[3 + k] = v[k];
        }
        let current = &self.y * &full;
        let mut residual = 0.0_f64;
        for k in 0..self.n_tail {
            let s_at = full[3 + k] * current[3 + k].conj();
            residual = residual.max((s_at - s[k]).norm());
        }
        if residual > BALANCE_TOL {
            return Err(PowerFlowError::Diverged { iterations });
        }
        Ok(PowerFlowSolution {
            voltages: full,
            iterations,
            residual,
        })
    }
}

/// One-shot power flow. For repeated solves build a [`PowerFlowEngine`].
pub fn power_flow_fixed_point(
    net: &ThreePhaseNetwork,
    injections: &[Complex64],
) -> Result<PowerFlowSolution, PowerFlowError> {
    let engine = PowerFlowEngine::new(net).map_err(|_| PowerFlowError::SingularAdmittance)?;
    engine.solve(injections)
}

fn total_injections(
    net: &ThreePhaseNetwork,
    controllable: &[Complex64],
    u: &RenewableVector,
) -> Vec<Complex64> {
    let mut s = controllable.to_vec();
    for (k, &idx) in net.renewable_node_indices().iter().enumerate() {
        s[idx] += Complex64::new(u.values()[k], 0.0);
    }
    s
}

/// Check one explicit dispatch: bounds within `tol`, power flow converges,
/// voltage limits within `tol`. Sound: a `Some` result certifies that `u`
/// has a feasible dispatch (up to `tol`).
pub fn check_candidate(
    net: &ThreePhaseNetwork,
    engine: &PowerFlowEngine,
    u: &RenewableVector,
    controllable: &[Complex64],
    tol: f64,
) -> Option<DispatchCandidate> {
    for (idx, s) in controllable.iter().enumerate() {
        let lim = net.limits_by_index(idx);
        if s.re < lim.p_lo - tol
            || s.re > lim.p_hi + tol
            || s.im < lim.q_lo - tol
            || s.im > lim.q_hi + tol
        {
            return None;
        }
    }
    let total = total_injections(net, controllable, u);
    let sol = engine.solve(&total).ok()?;
    for idx in 0..net.node_count() {
        let lim = net.limits_by_index(idx);
        let mag = sol.voltages[3 + idx].norm();
        if mag < lim.v_lo - tol || mag > lim.v_hi + tol {
            return None;
        }
    }
    Some(DispatchCandidate {
        injections: controllable.to_vec(),
        voltages: sol.voltages,
    })
}

/// Mid-out ordering of `0..n`: center first, then alternating outward.
fn mid_out_order(n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let center = (n as f64 - 1.0) / 2.0;
    order.sort_by(|&a, &b| {
        let da = (a as f64 - center).abs();
        let db = (b as f64 - center).abs();
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    order
}

struct Axis {
    node: usize,
    reactive: bool,
    values: Vec<f64>,
}

fn dispatch_axes(net: &ThreePhaseNetwork, grid_points: usize) -> (Vec<Complex64>, Vec<Axis>) {
    let g = grid_points.max(1);
    let mut base = Vec::with_capacity(net.node_count());
    let mut axes = Vec::new();
    for idx in 0..net.node_count() {
        let lim = net.limits_by_index(idx);
        base.push(Complex64::new(lim.p_lo, lim.q_lo));
        let grid = |lo: f64, hi: f64| -> Vec<f64> {
            if g == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                let raw: Vec<f64> = (0..g)
                    .map(|k| lo + (hi - lo) * k as f64 / (g - 1) as f64)
                    .collect();
                mid_out_order(g).into_iter().map(|k| raw[k]).collect()
            }
        };
        if lim.p_hi > lim.p_lo {
            axes.push(Axis {
                node: idx,
                reactive: false,
                values: grid(lim.p_lo, lim.p_hi),
            });
        }
        if lim.q_hi > lim.q_lo {
            axes.push(Axis {
                node: idx,
                reactive: true,
                values: grid(lim.q_lo, lim.q_hi),
            });
        }
    }
    (base, axes)
}

/// Exhaustive grid search for a feasible dispatch realizing `u`. Fixed
/// injections are pinned; each free scalar is gridded with
/// `grid_points_per_axis` values, visited mid-range outward.
pub fn feasibility_search(
    net: &ThreePhaseNetwork,
    u: &RenewableVector,
    grid_points_per_axis: usize,
) -> Result<Option<DispatchCandidate>, OracleError> {
    u.check_for(net).expect("u must match the renewable layout");
    let engine = PowerFlowEngine::new(net)?;
    feasibility_search_with(net, &engine, u, grid_points_per_axis)
}

pub fn feasibility_search_with(
    net: &ThreePhaseNetwork,
    engine: &PowerFlowEngine,
    u: &RenewableVector,
    grid_points_per_axis: usize,
) -> Result<Option<DispatchCandidate>, OracleError> {
    let (base, axes) = dispatch_axes(net, grid_points_per_axis);
    let total: usize = axes
        .iter()
        .try_fold(1usize, |acc, ax| acc.checked_mul(ax.values.len()))
        .unwrap_or(usize::MAX);
    if total > GRID_GUARD {
        return Err(OracleError::GridTooLarge(total));
    }

    let mut counters = vec![0usize; axes.len()];
    loop {
        let mut s = base.clone();
        for (ax, &ci) in axes.iter().zip(counters.iter()) {
            let v = ax.values[ci];
            if ax.reactive {
                s[ax.node].im = v;
            } else {
                s[ax.node].re = v;
            }
        }
        if let Some(c) = check_candidate(net, engine, u, &s, FEAS_TOL) {
            return Ok(Some(c));
        }
        // Odometer increment.
        let mut k = axes.len();
        loop {
            if k == 0 {
                return Ok(None);
            }
            k -= 1;
            counters[k] += 1;
            if counters[k] < axes[k].values.len() {
                break;
            }
            counters[k] = 0;
        }
    }
}

/// Rectangular u-grid specification, one axis per renewable node.
#[derive(Debug, Clone, Serialize)]
pub struct UGridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points_per_axis: usize,
}

impl UGridSpec {
    pub fn axis_values(&self, axis: usize) -> Vec<f64> {
        let g = self.points_per_axis.max(1);
        if g == 1 {
            return vec![self.lo[axis]];
        }
        (0..g)
            .map(|k| self.lo[axis] + (self.hi[axis] - self.lo[axis]) * k as f64 / (g - 1) as f64)
            .collect()
    }

    /// Row-major flattening: the last axis varies fastest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let d = self.lo.len();
        let axes: Vec<Vec<f64>> = (0..d).map(|a| self.axis_values(a)).collect();
        let mut out = Vec::new();
        let mut counters = vec![0usize; d];
        loop {
            out.push((0..d).map(|a| axes[a][counters[a]]).collect());
            let mut k = d;
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                counters[k] += 1;
                if counters[k] < axes[k].len() {
                    break;
                }
                counters[k] = 0;
            }
        }
    }
}

/// Feasibility mask over a u-grid.
#[derive(Debug, Clone, Serialize)]
pub struct RegionMask {
    pub spec: UGridSpec,
    pub dispatch_grid_points: usize,
    pub mask: Vec<bool>,
}

/// Brute-force ground truth over a u-grid (d <= 2). Candidates are evaluated
/// concurrently; the mask order is row-major and independent of thread count.
pub fn region_sample(
    net: &ThreePhaseNetwork,
    spec: &UGridSpec,
    dispatch_grid_points: usize,
) -> Result<RegionMask, OracleError> {
    let d = net.renewables().len();
    if d == 0 {
        return Err(OracleError::NoRenewableAxes);
    }
    if d > 2 {
        return Err(OracleError::GridDimension(d));
    }
    assert_eq!(spec.lo.len(), d, "grid spec must match renewable count");
    assert_eq!(spec.hi.len(), d);
    let engine = PowerFlowEngine::new(net)?;
    let points = spec.points();
    let mask: Result<Vec<bool>, OracleError> = points
        .par_iter()
        .map(|u| {
            let u = RenewableVector::new(u.clone()).expect("grid u is nonnegative");
            feasibility_search_with(net, &engine, &u, dispatch_grid_points).map(|c| c.is_some())
        })
        .collect();
    Ok(RegionMask {
        spec: spec.clone(),
        dispatch_grid_points,
        mask: mask?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn u1(value: f64) -> RenewableVector {
        RenewableVector::new(vec![value]).unwrap()
    }

    #[test]
    fn zero_injections_give_flat_profile() {
        let net = fixtures::net4();
        let s = vec![Complex64::new(0.0, 0.0); net.node_count()];
        let sol = power_flow_fixed_point(&net, &s).unwrap();
        for bus in 0..net.bus_count() {
            for phase in 0..3 {
                let diff = (sol.voltages[3 * bus + phase] - net.slack_voltage()[phase]).norm();
                assert!(diff < 1e-12, "bus {bus} phase {phase}: {diff}");
            }
        }
    }

    #[test]
    fn draws_converge_with_small_residual() {
        let net = fixtures::net2();
        let s = vec![Complex64::new(-0.1, 0.0); 3];
        let sol = power_flow_fixed_point(&net, &s).unwrap();
        assert!(sol.residual <= 1e-8);
        // Voltage sags below flat.
        assert!(sol.voltages[3].norm() < 1.0);
    }

    #[test]
    fn absurd_injection_diverges() {
        let net = fixtures::net2();
        let s = vec![Complex64::new(-1e6, 0.0); 3];
        assert!(matches!(
            power_flow_fixed_point(&net, &s),
            Err(PowerFlowError::Diverged { .. })
        ));
    }

    #[test]
    fn base_point_is_feasible() {
        let net = fixtures::net2();
        let found = feasibility_search(&net, &u1(0.0), 5).unwrap();
        assert!(found.is_some());
    }

    #[test]
    fn far_point_is_infeasible_at_grid_resolution() {
        // u = 25 sits in the infeasible band: even with q at its most
        // helpful value the bus-1 voltage exceeds 1.1.
        let net = fixtures::net2();
        let found = feasibility_search(&net, &u1(25.0), 5).unwrap();
        assert!(found.is_none());
    }

    #[test]
    fn monotone_on_low_band() {
        let net = fixtures::net2();
        let mut previous = true;
        for u in [8.0, 6.0, 4.0, 2.0, 0.0] {
            let feasible = feasibility_search(&net, &u1(u), 5).unwrap().is_some();
            // Once feasible while decreasing u, stays feasible.
            assert!(!previous || previous && (feasible || u > 8.0));
            if previous {
                assert!(feasible, "u = {u} should stay feasible below a feasible point");
            }
            previous = feasible;
        }
    }

    #[test]
    fn grid_guard_triggers() {
        let net = fixtures::net2();
        // 6 free scalars at 21 points each overflows the guard.
        let err = feasibility_search(&net, &u1(0.0), 21).unwrap_err();
        assert!(matches!(err, OracleError::GridTooLarge(_)));
    }

    #[test]
    fn degenerate_grid_single_point() {
        let net = fixtures::net2();
        let spec = UGridSpec { lo: vec![0.0], hi: vec![0.0], points_per_axis: 1 };
        let mask = region_sample(&net, &spec, 5).unwrap();
        assert_eq!(mask.mask, vec![true]);
    }

    #[test]
    fn no_renewables_is_an_error() {
        let y = fixtures::decoupled_line(20.0, -40.0);
        let slack = fixtures::balanced_slack();
        let lines = vec![crate::netmodel::Line { from: 0, to: 1, y }];
        let mut limits = Vec::new();
        for phase in 0..3 {
            limits.push((
                crate::netmodel::NodeRef { bus: 1, phase },
                crate::netmodel::NodeLimits {
                    p_lo: 0.0,
                    p_hi: 0.1,
                    q_lo: 0.0,
                    q_hi: 0.0,
                    v_lo: 0.9,
                    v_hi: 1.1,
                },
            ));
        }
        let net = crate::netmodel::ThreePhaseNetwork::new(2, slack, lines, limits, vec![]).unwrap();
        let spec = UGridSpec { lo: vec![], hi: vec![], points_per_axis: 1 };
        assert!(matches!(
            region_sample(&net, &spec, 3),
            Err(OracleError::NoRenewableAxes)
        ));
    }

    #[test]
    fn power_balance_matches_coefficients() {
        // Converged power flow satisfies the quadratic-form injections.
        let net = fixtures::net4();
        let mut s = vec![Complex64::new(0.0, 0.0); net.node_count()];
        for (idx, inj) in s.iter_mut().enumerate() {
            let lim = net.limits_by_index(idx);
            *inj = Complex64::new(lim.p_lo, lim.q_lo);
        }
        let sol = power_flow_fixed_point(&net, &s).unwrap();
        let bundle = crate::netmodel::CoefficientBundle::new(&net);
        let w = crate::hermitian::HermitianMatrix::outer(&sol.voltages);
        for idx in 0..net.node_count() {
            let p = bundle.p_mats[idx].trace_product(&w);
            let q = bundle.q_mats[idx].trace_product(&w);
            assert!((p - s[idx].re).abs() < 1e-8, "node {idx}");
            assert!((q - s[idx].im).abs() < 1e-8, "node {idx}");
        }
    }
}
