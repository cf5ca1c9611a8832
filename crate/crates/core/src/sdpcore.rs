//! Canonical SDP representation and the bundled dense solver.
//!
//! A [`ConicProgram`] is a minimization over one complex Hermitian PSD block
//! `W` and a vector of nonnegative scalars `z`, with affine inequality and
//! equality constraints on `tr(F W)` and `z`. Programs are solved through the
//! real symmetric embedding of the Hermitian block by a primal-dual
//! interior-point method (infeasible start, Nesterov-Todd scaling, Mehrotra
//! predictor-corrector); multipliers of the doubled system are folded back by
//! averaging the duplicated blocks.

use nalgebra::DMatrix;
use num_complex::Complex64;
use thiserror::Error;

use crate::hermitian::{fold_embedded, HermitianMatrix};

mod ipm;

pub use ipm::SolveStats;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("solver reached the iteration cap ({0} iterations) without converging")]
    NumericalFailure(usize),
    #[error("operation requires an optimal solution, status is {0:?}")]
    NotOptimal(SolveStatus),
    #[error("program is malformed: {0}")]
    Malformed(String),
}

/// Sparse complex Hermitian matrix: upper-triangle entries `(r, c, v)` with
/// `r <= c`; the `(c, r)` entry is implicitly `conj(v)`. Diagonal entries
/// must be real.
#[derive(Debug, Clone, Default)]
pub struct SparseHermitian {
    pub entries: Vec<(usize, usize, Complex64)>,
}

impl SparseHermitian {
    pub fn empty() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn push(&mut self, r: usize, c: usize, v: Complex64) {
        assert!(r <= c, "store upper-triangle entries only");
        if r == c {
            debug_assert!(v.im.abs() < 1e-12, "diagonal entries must be real");
        }
        self.entries.push((r, c, v));
    }

    /// Dense Hermitian realization with the given dimension.
    pub fn to_dense(&self, dim: usize) -> HermitianMatrix {
        let mut m = DMatrix::<Complex64>::zeros(dim, dim);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
            if r != c {
                m[(c, r)] += v.conj();
            }
        }
        HermitianMatrix::symmetrized(m)
    }

    /// From a dense Hermitian matrix, dropping entries below `drop_tol`.
    pub fn from_dense(m: &HermitianMatrix, drop_tol: f64) -> Self {
        let mut out = Self::empty();
        for r in 0..m.dim() {
            for c in r..m.dim() {
                let v = m.matrix()[(r, c)];
                if v.norm() > drop_tol {
                    out.push(r, c, v);
                }
            }
        }
        out
    }

    /// `tr(F W)` against a dense Hermitian `W` (real by Hermiticity).
    pub fn trace_with(&self, w: &HermitianMatrix) -> f64 {
        let mut acc = 0.0;
        for &(r, c, v) in &self.entries {
            let wrc = w.matrix()[(r, c)];
            if r == c {
                acc += v.re * wrc.re;
            } else {
                acc += 2.0 * (v * wrc.conj()).re;
            }
        }
        acc
    }

    /// Upper-triangle entries of the real embedding divided by two, so that
    /// the real inner product against `embed(W)` equals `tr(F W)`.
    fn embedded_half(&self, n: usize) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.entries.len() * 4);
        for &(r, c, v) in &self.entries {
            let re = 0.5 * v.re;
            let im = 0.5 * v.im;
            if re != 0.0 {
                out.push((r, c, re));
                out.push((n + r, n + c, re));
            }
            if r != c && im != 0.0 {
                out.push((r, n + c, -im));
                out.push((c, n + r, im));
            }
        }
        out
    }
}

/// `tr(F W) + g . z (<=|=) rhs`.
#[derive(Debug, Clone)]
pub struct AffineConstraint {
    pub f: SparseHermitian,
    /// Sparse coefficients on the nonnegative scalars.
    pub z: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Standard-form conic program: minimize
/// `tr(C0 W) + c . z + offset` over `W >= 0` (complex Hermitian of dimension
/// `psd_dim`) and `z >= 0`.
#[derive(Debug, Clone)]
pub struct ConicProgram {
    pub psd_dim: usize,
    pub num_z: usize,
    pub inequalities: Vec<AffineConstraint>,
    pub equalities: Vec<AffineConstraint>,
    pub obj_w: SparseHermitian,
    pub obj_z: Vec<f64>,
    pub obj_offset: f64,
}

impl ConicProgram {
    pub fn new(psd_dim: usize, num_z: usize) -> Self {
        Self {
            psd_dim,
            num_z,
            inequalities: Vec::new(),
            equalities: Vec::new(),
            obj_w: SparseHermitian::empty(),
            obj_z: vec![0.0; num_z],
            obj_offset: 0.0,
        }
    }

    fn validate(&self) -> Result<(), SolveError> {
        if self.obj_z.len() != self.num_z {
            return Err(SolveError::Malformed(format!(
                "objective has {} z coefficients for {} z variables",
                self.obj_z.len(),
                self.num_z
            )));
        }
        let check = |cons: &AffineConstraint, what: &str| -> Result<(), SolveError> {
            for &(r, c, _) in &cons.f.entries {
                if c >= self.psd_dim || r > c {
                    return Err(SolveError::Malformed(format!(
                        "{what}: matrix entry ({r}, {c}) outside dimension {}",
                        self.psd_dim
                    )));
                }
            }
            for &(k, _) in &cons.z {
                if k >= self.num_z {
                    return Err(SolveError::Malformed(format!(
                        "{what}: z index {k} out of range {}",
                        self.num_z
                    )));
                }
            }
            Ok(())
        };
        for (i, c) in self.inequalities.iter().enumerate() {
            check(c, &format!("inequality {i}"))?;
        }
        for (e, c) in self.equalities.iter().enumerate() {
            check(c, &format!("equality {e}"))?;
        }
        Ok(())
    }

    /// Textual dump: a dimension header followed by sparse triplets, one
    /// matrix entry or scalar coefficient per line. Lines are
    /// `obj_w r c re im`, `obj_z k coeff`, `ineq i rhs <val>`,
    /// `ineq i w r c re im`, `ineq i z k coeff`, and the `eq` analogues.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        writeln!(
            out,
            "conic-program psd_dim {} num_z {} ineq {} eq {} offset {:.17e}",
            self.psd_dim,
            self.num_z,
            self.inequalities.len(),
            self.equalities.len(),
            self.obj_offset
        )
        .unwrap();
        for &(r, c, v) in &self.obj_w.entries {
            writeln!(out, "obj_w {r} {c} {:.17e} {:.17e}", v.re, v.im).unwrap();
        }
        for (k, &v) in self.obj_z.iter().enumerate() {
            if v != 0.0 {
                writeln!(out, "obj_z {k} {v:.17e}").unwrap();
            }
        }
        let mut write_cons = |kind: &str, list: &[AffineConstraint]| {
            for (i, cons) in list.iter().enumerate() {
                writeln!(out, "{kind} {i} rhs {:.17e}", cons.rhs).unwrap();
                for &(r, c, v) in &cons.f.entries {
                    writeln!(out, "{kind} {i} w {r} {c} {:.17e} {:.17e}", v.re, v.im).unwrap();
                }
                for &(k, v) in &cons.z {
                    writeln!(out, "{kind} {i} z {k} {v:.17e}").unwrap();
                }
            }
        };
        write_cons("ineq", &self.inequalities);
        write_cons("eq", &self.equalities);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveSettings {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iterations: usize,
}

impl Default for SolveSettings {
    fn default() -> Self {
        Self {
            gap_tol: 1e-7,
            feas_tol: 1e-7,
            max_iterations: 200,
        }
    }
}

/// Solved state of a [`ConicProgram`].
#[derive(Debug, Clone)]
pub struct PrimalDualSolution {
    pub status: SolveStatus,
    /// Folded complex PSD variable.
    pub w: HermitianMatrix,
    pub z: Vec<f64>,
    /// Multipliers of the inequality constraints, nonnegative at optimality.
    pub ineq_multipliers: Vec<f64>,
    /// Multipliers of the equality constraints (free sign).
    pub eq_multipliers: Vec<f64>,
    /// Folded dual PSD matrix `C0 + sum lambda_i F_i - sum y_e G_e`.
    pub dual_matrix: HermitianMatrix,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub stats: SolveStats,
}

impl PrimalDualSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Solve a conic program with the bundled interior-point backend.
pub fn solve(program: &ConicProgram, settings: &SolveSettings) -> PrimalDualSolution {
    program.validate().expect("malformed program");
    let m_i = program.inequalities.len();
    let m_e = program.equalities.len();
    let m = m_i + m_e;
    assert!(m > 0, "program needs at least one constraint");
    let n = program.psd_dim;
    let s_dim = 2 * n;
    let d_dim = program.num_z + m_i;

    let mut a_psd: Vec<Vec<(usize, usize, f64)>> = Vec::with_capacity(m);
    let mut a_lin: Vec<Vec<(usize, f64)>> = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    for (i, cons) in program.inequalities.iter().enumerate() {
        a_psd.push(cons.f.embedded_half(n));
        let mut lin: Vec<(usize, f64)> = cons.z.clone();
        lin.push((program.num_z + i, 1.0)); // slack turns <= into =
        a_lin.push(lin);
        b.push(cons.rhs);
    }
    for cons in &program.equalities {
        a_psd.push(cons.f.embedded_half(n));
        a_lin.push(cons.z.clone());
        b.push(cons.rhs);
    }

    let c_psd = program.obj_w.embedded_half(n);
    let mut c_lin = vec![0.0; d_dim];
    c_lin[..program.num_z].copy_from_slice(&program.obj_z);

    let problem = ipm::RealConeProblem {
        s_dim,
        d_dim,
        a_psd,
        a_lin,
        b,
        c_psd,
        c_lin,
    };
    let raw = ipm::solve(&problem, settings);

    let w = if n > 0 {
        fold_embedded(&raw.x_psd)
    } else {
        HermitianMatrix::zeros(0)
    };
    let dual_matrix = if n > 0 {
        let folded = fold_embedded(&raw.s_psd);
        HermitianMatrix::symmetrized(folded.matrix() * Complex64::new(2.0, 0.0))
    } else {
        HermitianMatrix::zeros(0)
    };
    let z = raw.x_lin[..program.num_z].to_vec();
    let ineq_multipliers: Vec<f64> = raw.y[..m_i].iter().map(|&y| -y).collect();
    let eq_multipliers: Vec<f64> = raw.y[m_i..].to_vec();

    PrimalDualSolution {
        status: raw.status,
        w,
        z,
        ineq_multipliers,
        eq_multipliers,
        dual_matrix,
        primal_objective: raw.primal_objective + program.obj_offset,
        dual_objective: raw.dual_objective + program.obj_offset,
        stats: raw.stats,
    }
}

/// Relative duality gap `|primal - dual| / (1 + |primal|)`.
pub fn duality_gap(solution: &PrimalDualSolution) -> Result<f64, SolveError> {
    if !solution.is_optimal() {
        return Err(SolveError::NotOptimal(solution.status));
    }
    Ok((solution.primal_objective - solution.dual_objective).abs()
        / (1.0 + solution.primal_objective.abs()))
}

/// Complementary slackness and stationarity residuals, normalized by
/// `1 + |primal| + |dual|`.
#[derive(Debug, Clone, Copy)]
pub struct KktReport {
    /// `|tr(S W)|`, the PSD pair.
    pub psd_complementarity: f64,
    /// `|sum_k z_k (c_k - lambda_k)|`, the slack/multiplier pairs.
    pub slack_complementarity: f64,
    /// Defect of `S` against the dual construction from the multipliers.
    pub stationarity: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.psd_complementarity
            .max(self.slack_complementarity)
            .max(self.stationarity)
    }
}

pub fn kkt_residuals(
    program: &ConicProgram,
    solution: &PrimalDualSolution,
) -> Result<KktReport, SolveError> {
    if !solution.is_optimal() {
        return Err(SolveError::NotOptimal(solution.status));
    }
    let scale = 1.0 + solution.primal_objective.abs() + solution.dual_objective.abs();

    let psd_complementarity = if program.psd_dim > 0 {
        solution.dual_matrix.trace_product(&solution.w).abs() / scale
    } else {
        0.0
    };

    // Dual slack on each z variable: c_k - (A_lin^T y)_k; for the standard
    // formulations this is c_k - lambda of the constraint the z appears in.
    let mut at_y = vec![0.0; program.num_z];
    for (i, cons) in program.inequalities.iter().enumerate() {
        let y = -solution.ineq_multipliers[i];
        for &(k, g) in &cons.z {
            at_y[k] += y * g;
        }
    }
    for (e, cons) in program.equalities.iter().enumerate() {
        let y = solution.eq_multipliers[e];
        for &(k, g) in &cons.z {
            at_y[k] += y * g;
        }
    }
    let slack_complementarity = solution
        .z
        .iter()
        .enumerate()
        .map(|(k, &z)| z * (program.obj_z[k] - at_y[k]))
        .sum::<f64>()
        .abs()
        / scale;

    let stationarity = if program.psd_dim > 0 {
        let rebuilt = rebuild_dual_matrix(program, solution);
        let diff = rebuilt.matrix() - solution.dual_matrix.matrix();
        diff.iter().map(|zv| zv.norm_sqr()).sum::<f64>().sqrt() / scale
    } else {
        0.0
    };

    Ok(KktReport {
        psd_complementarity,
        slack_complementarity,
        stationarity,
    })
}

/// `C0 + sum lambda_i F_i - sum y_e G_e`, the dual PSD matrix implied by the
/// multipliers.
pub fn rebuild_dual_matrix(
    program: &ConicProgram,
    solution: &PrimalDualSolution,
) -> HermitianMatrix {
    let n = program.psd_dim;
    let mut m = program.obj_w.to_dense(n).into_matrix();
    for (i, cons) in program.inequalities.iter().enumerate() {
        let lambda = solution.ineq_multipliers[i];
        if lambda == 0.0 {
            continue;
        }
        for &(r, c, v) in &cons.f.entries {
            m[(r, c)] += v * lambda;
            if r != c {
                m[(c, r)] += v.conj() * lambda;
            }
        }
    }
    for (e, cons) in program.equalities.iter().enumerate() {
        let y = solution.eq_multipliers[e];
        if y == 0.0 {
            continue;
        }
        for &(r, c, v) in &cons.f.entries {
            m[(r, c)] -= v * y;
            if r != c {
                m[(c, r)] -= v.conj() * y;
            }
        }
    }
    HermitianMatrix::symmetrized(m)
}
