//! Dense primal-dual interior-point method over the cone
//! `S_+^{s} x R_+^{d}`: infeasible start, Nesterov-Todd scaling, Mehrotra
//! predictor-corrector. Problems arrive in SDPA-like equality form
//! `min <C, X> s.t. <A_i, X> = b_i, X in K`; inequality slacks are part of
//! the orthant block.
//!
//! Sized for the desk-scale programs this crate builds (PSD blocks up to a
//! few dozen, a few hundred rows); everything is dense and deterministic.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::sync::OnceLock;

use super::{SolveSettings, SolveStatus};

fn trace_enabled() -> bool {
    static ENABLED: OnceLock<bool> = OnceLock::new();
    *ENABLED.get_or_init(|| std::env::var("DREGION_IPM_TRACE").ok().as_deref() == Some("1"))
}

/// Upper-triangle sparse triplets of a symmetric matrix.
type SparseSym = Vec<(usize, usize, f64)>;

pub struct RealConeProblem {
    pub s_dim: usize,
    pub d_dim: usize,
    pub a_psd: Vec<SparseSym>,
    pub a_lin: Vec<Vec<(usize, f64)>>,
    pub b: Vec<f64>,
    pub c_psd: SparseSym,
    pub c_lin: Vec<f64>,
}

pub struct RawSolution {
    pub status: SolveStatus,
    pub x_psd: DMatrix<f64>,
    pub x_lin: Vec<f64>,
    pub y: Vec<f64>,
    pub s_psd: DMatrix<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub relative_gap: f64,
}

fn sparse_to_dense(tri: &SparseSym, n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for &(r, c, v) in tri {
        m[(r, c)] += v;
        if r != c {
            m[(c, r)] += v;
        }
    }
    m
}

fn sparse_inner(tri: &SparseSym, x: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for &(r, c, v) in tri {
        if r == c {
            acc += v * x[(r, c)];
        } else {
            acc += 2.0 * v * x[(r, c)];
        }
    }
    acc
}

fn sparse_norm(tri: &SparseSym) -> f64 {
    tri.iter()
        .map(|&(r, c, v)| if r == c { v * v } else { 2.0 * v * v })
        .sum::<f64>()
        .sqrt()
}

/// `A_j W` for sparse symmetric `A_j` and dense `W`.
fn sparse_times_dense(tri: &SparseSym, w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let mut p = DMatrix::zeros(n, n);
    for &(r, c, v) in tri {
        for k in 0..n {
            p[(r, k)] += v * w[(c, k)];
        }
        if r != c {
            for k in 0..n {
                p[(c, k)] += v * w[(r, k)];
            }
        }
    }
    p
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}

fn chol_with_jitter(m: &DMatrix<f64>) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let n = m.nrows();
    let scale = m.diagonal().amax().max(1e-300);
    let mut jitter = 0.0;
    loop {
        let mut trial = m.clone();
        if jitter > 0.0 {
            for k in 0..n {
                trial[(k, k)] += jitter;
            }
        }
        if let Some(ch) = Cholesky::new(trial) {
            return Some((ch, jitter));
        }
        jitter = if jitter == 0.0 { 1e-14 * scale } else { jitter * 100.0 };
        if jitter > 1e-6 * scale {
            return None;
        }
    }
}

struct State {
    x: DMatrix<f64>,
    xl: DVector<f64>,
    y: DVector<f64>,
    s: DMatrix<f64>,
    sl: DVector<f64>,
}

struct Scaling {
    /// NT factor with `W_nt = R R^T`.
    r: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    lam: DVector<f64>,
    lx: DMatrix<f64>,
    ls: DMatrix<f64>,
    w_lin: DVector<f64>,
    lam_lin: DVector<f64>,
}

struct Direction {
    dx: DMatrix<f64>,
    dxl: DVector<f64>,
    dy: DVector<f64>,
    ds: DMatrix<f64>,
    dsl: DVector<f64>,
}

/// Scale each constraint row to unit Frobenius norm; the Schur complement
/// conditioning depends directly on the row scales.
fn equilibrate(p: &RealConeProblem) -> (RealConeProblem, Vec<f64>) {
    let m = p.b.len();
    let mut scales = Vec::with_capacity(m);
    let mut a_psd = Vec::with_capacity(m);
    let mut a_lin = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    for i in 0..m {
        let lin_sq: f64 = p.a_lin[i].iter().map(|&(_, v)| v * v).sum();
        let norm = (sparse_norm(&p.a_psd[i]).powi(2) + lin_sq).sqrt();
        let s = if norm > 1e-12 { 1.0 / norm } else { 1.0 };
        scales.push(s);
        a_psd.push(
            p.a_psd[i]
                .iter()
                .map(|&(r, c, v)| (r, c, v * s))
                .collect(),
        );
        a_lin.push(p.a_lin[i].iter().map(|&(k, v)| (k, v * s)).collect());
        b.push(p.b[i] * s);
    }
    (
        RealConeProblem {
            s_dim: p.s_dim,
            d_dim: p.d_dim,
            a_psd,
            a_lin,
            b,
            c_psd: p.c_psd.clone(),
            c_lin: p.c_lin.clone(),
        },
        scales,
    )
}

pub fn solve(p: &RealConeProblem, settings: &SolveSettings) -> RawSolution {
    let (scaled, row_scales) = equilibrate(p);
    let mut raw = solve_inner(&scaled, settings);
    // Multipliers of scaled rows fold back as y_i = y'_i * scale_i.
    for (yi, sc) in raw.y.iter_mut().zip(row_scales.iter()) {
        *yi *= sc;
    }
    // Recompute the dual objective against the original data.
    raw.dual_objective = p
        .b
        .iter()
        .zip(raw.y.iter())
        .map(|(&bi, &yi)| bi * yi)
        .sum();
    raw
}

fn solve_inner(p: &RealConeProblem, settings: &SolveSettings) -> RawSolution {
    let s_dim = p.s_dim;
    let d_dim = p.d_dim;
    let m = p.b.len();
    let nu = (s_dim + d_dim) as f64;
    assert!(m > 0 && nu > 0.0);

    let b = DVector::from_column_slice(&p.b);
    let c_lin = DVector::from_column_slice(&p.c_lin);
    let c_dense = sparse_to_dense(&p.c_psd, s_dim);

    let a_norm_max = p
        .a_psd
        .iter()
        .zip(p.a_lin.iter())
        .map(|(psd, lin)| {
            let lin_sq: f64 = lin.iter().map(|&(_, v)| v * v).sum();
            (sparse_norm(psd).powi(2) + lin_sq).sqrt()
        })
        .fold(0.0_f64, f64::max);
    let b_max = b.amax();
    let c_norm = (sparse_norm(&p.c_psd).powi(2) + c_lin.norm_squared()).sqrt();

    let xi_p = 10.0_f64.max(2.0 * (1.0 + b_max));
    let xi_d = 10.0_f64.max(2.0 * (1.0 + c_norm + a_norm_max));

    let mut st = State {
        x: DMatrix::identity(s_dim, s_dim) * xi_p,
        xl: DVector::from_element(d_dim, xi_p),
        y: DVector::zeros(m),
        s: DMatrix::identity(s_dim, s_dim) * xi_d,
        sl: DVector::from_element(d_dim, xi_d),
    };

    let apply_a = |x: &DMatrix<f64>, xl: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(m, |i, _| {
            let mut v = sparse_inner(&p.a_psd[i], x);
            for &(k, g) in &p.a_lin[i] {
                v += g * xl[k];
            }
            v
        })
    };
    let apply_at = |y: &DVector<f64>| -> (DMatrix<f64>, DVector<f64>) {
        let mut mat = DMatrix::zeros(s_dim, s_dim);
        let mut lin = DVector::zeros(d_dim);
        for i in 0..m {
            let yi = y[i];
            if yi == 0.0 {
                continue;
            }
            for &(r, c, v) in &p.a_psd[i] {
                mat[(r, c)] += yi * v;
                if r != c {
                    mat[(c, r)] += yi * v;
                }
            }
            for &(k, g) in &p.a_lin[i] {
                lin[k] += yi * g;
            }
        }
        (mat, lin)
    };

    let mut stats = SolveStats::default();
    let mut stalls = 0usize;
    let mut best_score = f64::INFINITY;
    let mut since_best = 0usize;

    for iter in 0..settings.max_iterations {
        stats.iterations = iter;

        // Residuals and convergence test.
        let r_p = &b - apply_a(&st.x, &st.xl);
        let (at_mat, at_lin) = apply_at(&st.y);
        let r_d = &c_dense - &at_mat - &st.s;
        let r_d_lin = &c_lin - &at_lin - &st.sl;

        let pobj = sparse_inner(&p.c_psd, &st.x) + c_lin.dot(&st.xl);
        let dobj = b.dot(&st.y);
        let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        let pinf = r_p.norm() / (1.0 + b.norm());
        let dinf = (r_d.norm_squared() + r_d_lin.norm_squared()).sqrt() / (1.0 + c_norm);

        stats.primal_residual = pinf;
        stats.dual_residual = dinf;
        stats.relative_gap = rel_gap;

        if trace_enabled() {
            let mu_now = (frob_inner(&st.x, &st.s) + st.xl.dot(&st.sl)) / nu;
            eprintln!(
                "ipm iter {iter:3}: pobj {pobj:+.6e} dobj {dobj:+.6e} gap {rel_gap:.3e} pinf {pinf:.3e} dinf {dinf:.3e} mu {mu_now:.3e}"
            );
        }

        if rel_gap <= settings.gap_tol && pinf <= settings.feas_tol && dinf <= settings.feas_tol {
            return finish(SolveStatus::Optimal, st, pobj, dobj, stats);
        }
        if !pobj.is_finite() || !dobj.is_finite() {
            return classify_failure(p, st, pobj, dobj, stats, &apply_a, &apply_at);
        }
        // Abort once the iterates stop making progress; the directions have
        // hit the accuracy floor of the Schur solve.
        let score = rel_gap.max(pinf).max(dinf);
        if score < 0.95 * best_score {
            best_score = score;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= 12 {
                return classify_failure(p, st, pobj, dobj, stats, &apply_a, &apply_at);
            }
        }

        // Nesterov-Todd scaling point.
        let scaling = match build_scaling(&st, s_dim, d_dim) {
            Some(sc) => sc,
            None => return classify_failure(p, st, pobj, dobj, stats, &apply_a, &apply_at),
        };

        let mu = (frob_inner(&st.x, &st.s) + st.xl.dot(&st.sl)) / nu;

        // Constraint rows in the scaled geometry; the Schur complement is
        // their Gram matrix, PSD by construction, and reusing the same
        // scaled rows in the right-hand side keeps the primal direction
        // consistent with it to solve accuracy.
        let rows = build_scaled_rows(p, &scaling, m, s_dim);
        let schur = build_schur(&rows, m);
        let chol_m = match chol_with_jitter(&schur) {
            Some((ch, _)) => ch,
            None => return classify_failure(p, st, pobj, dobj, stats, &apply_a, &apply_at),
        };
        let solver = SchurSolver {
            matrix: &schur,
            chol: &chol_m,
        };

        // Predictor: drive X S toward 0.
        let e_aff = DMatrix::from_diagonal(&(-scaling.lam.clone()));
        let e_aff_lin = -scaling.lam_lin.clone();
        let aff = compute_direction_refined(
            p, &scaling, &rows, &solver, &e_aff, &e_aff_lin, &r_p, &r_d, &r_d_lin, m, s_dim,
            d_dim,
        );

        let (ap_aff, ad_aff) = step_lengths(&st, &aff, &scaling, 1.0);
        let mu_aff = affine_mu(&st, &aff, ap_aff.min(1.0), ad_aff.min(1.0), nu);
        let mut sigma = ((mu_aff / mu).powi(3)).clamp(1e-10, 1.0);

        // Keep complementarity from outrunning feasibility: once mu drops
        // below the residual level the iterate is pinned to the boundary
        // with no room to restore feasibility. Recentre harder and move
        // both blocks with the same step while residuals lag.
        let comp_rel = (mu * nu) / (1.0 + pobj.abs() + dobj.abs());
        let feas = pinf.max(dinf);
        let feas_lags = feas > comp_rel;
        if feas_lags {
            let lag = feas / comp_rel.max(1e-300);
            sigma = sigma.max((0.5 * lag.sqrt()).min(0.9));
        }
        // Endgame: direction accuracy decays with mu, so limit how fast mu
        // may fall once the gap is nearly closed.
        if rel_gap < 1e-4 {
            sigma = sigma.max(0.05);
        }

        // Corrector with second-order term.
        let dxh = &scaling.r_inv * &aff.dx * scaling.r_inv.transpose();
        let dsh = scaling.r.transpose() * &aff.ds * &scaling.r;
        let cross = &dxh * &dsh;
        let mut e_corr = DMatrix::zeros(s_dim, s_dim);
        for r in 0..s_dim {
            for c in 0..s_dim {
                let g = -0.5 * (cross[(r, c)] + cross[(c, r)])
                    + if r == c {
                        sigma * mu - scaling.lam[r] * scaling.lam[r]
                    } else {
                        0.0
                    };
                e_corr[(r, c)] = 2.0 * g / (scaling.lam[r] + scaling.lam[c]);
            }
        }
        let mut e_corr_lin = DVector::zeros(d_dim);
        for k in 0..d_dim {
            let dxh_k = aff.dxl[k] / scaling.w_lin[k];
            let dsh_k = scaling.w_lin[k] * aff.dsl[k];
            e_corr_lin[k] =
                (sigma * mu - scaling.lam_lin[k] * scaling.lam_lin[k] - dxh_k * dsh_k)
                    / scaling.lam_lin[k];
        }
        let dir = compute_direction_refined(
            p, &scaling, &rows, &solver, &e_corr, &e_corr_lin, &r_p, &r_d, &r_d_lin, m, s_dim,
            d_dim,
        );

        let tau = if rel_gap < 1e-3 { 0.99 } else { 0.98 };
        let (ap_max, ad_max) = step_lengths(&st, &dir, &scaling, tau);
        let mut ap = (tau * ap_max).min(1.0);
        let mut ad = (tau * ad_max).min(1.0);
        if feas_lags {
            let a = ap.min(ad);
            ap = a;
            ad = a;
        }

        if trace_enabled() {
            let lam_max = if s_dim > 0 { scaling.lam.max() } else { 0.0 };
            let lam_min = if s_dim > 0 { scaling.lam.min() } else { 0.0 };
            eprintln!(
                "          sigma {sigma:.2e} ap {ap:.3e} ad {ad:.3e} lam [{lam_min:.2e}, {lam_max:.2e}]"
            );
        }

        if ap < 1e-8 && ad < 1e-8 {
            stalls += 1;
            if stalls >= 5 {
                return classify_failure(p, st, pobj, dobj, stats, &apply_a, &apply_at);
            }
        } else {
            stalls = 0;
        }

        st.x += &dir.dx * ap;
        st.xl += &dir.dxl * ap;
        st.y += &dir.dy * ad;
        st.s += &dir.ds * ad;
        st.sl += &dir.dsl * ad;
        symmetrize(&mut st.x);
        symmetrize(&mut st.s);
    }

    stats.iterations = settings.max_iterations;
    let pobj = sparse_inner(&p.c_psd, &st.x) + c_lin.dot(&st.xl);
    let dobj = b.dot(&st.y);
    classify_failure(p, st, pobj, dobj, stats, &apply_a, &apply_at)
}

fn finish(
    status: SolveStatus,
    st: State,
    pobj: f64,
    dobj: f64,
    stats: SolveStats,
) -> RawSolution {
    RawSolution {
        status,
        x_psd: st.x,
        x_lin: st.xl.iter().copied().collect(),
        y: st.y.iter().copied().collect(),
        s_psd: st.s,
        primal_objective: pobj,
        dual_objective: dobj,
        stats,
    }
}

/// On failure, look for approximate Farkas certificates before reporting a
/// plain numerical failure.
fn classify_failure(
    p: &RealConeProblem,
    st: State,
    pobj: f64,
    dobj: f64,
    stats: SolveStats,
    apply_a: &dyn Fn(&DMatrix<f64>, &DVector<f64>) -> DVector<f64>,
    apply_at: &dyn Fn(&DVector<f64>) -> (DMatrix<f64>, DVector<f64>),
) -> RawSolution {
    let mut status = SolveStatus::NumericalFailure;
    let cert_tol = 1e-7;

    // Primal infeasibility: y with -A^T y in the dual cone and b . y > 0.
    let y_norm = st.y.norm();
    if y_norm > 1.0 {
        let y_hat = &st.y / y_norm;
        let b_dot = DVector::from_column_slice(&p.b).dot(&y_hat);
        if b_dot > cert_tol {
            let (at_mat, at_lin) = apply_at(&y_hat);
            let z = -at_mat;
            let min_eig = if p.s_dim > 0 {
                z.symmetric_eigenvalues().min()
            } else {
                0.0
            };
            let min_lin = (-at_lin).min();
            if min_eig >= -cert_tol && min_lin >= -cert_tol {
                status = SolveStatus::Infeasible;
            }
        }
    }

    // Dual infeasibility / primal unboundedness: X in the cone with
    // A(X) ~ 0 and <C, X> < 0.
    if status == SolveStatus::NumericalFailure {
        let x_scale = st.x.norm() + st.xl.norm();
        if x_scale > 1.0 {
            let ax = apply_a(&st.x, &st.xl).norm() / x_scale;
            let cx = (sparse_inner(&p.c_psd, &st.x)
                + DVector::from_column_slice(&p.c_lin).dot(&st.xl))
                / x_scale;
            if ax <= cert_tol && cx < -cert_tol {
                status = SolveStatus::Unbounded;
            }
        }
    }

    finish(status, st, pobj, dobj, stats)
}

fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn build_scaling(st: &State, s_dim: usize, d_dim: usize) -> Option<Scaling> {
    let (r, r_inv, lam, lx, ls) = if s_dim > 0 {
        let (chx, _) = chol_with_jitter(&st.x)?;
        let (chs, _) = chol_with_jitter(&st.s)?;
        let lx = chx.l();
        let ls = chs.l();
        let k = ls.transpose() * &lx;
        let svd = nalgebra::SVD::new(k, true, true);
        let u = svd.u?;
        let vt = svd.v_t?;
        let lam = svd.singular_values;
        if lam.min() <= 0.0 {
            return None;
        }
        let inv_sqrt = DMatrix::from_diagonal(&lam.map(|v| 1.0 / v.sqrt()));
        let r = &lx * vt.transpose() * &inv_sqrt;
        let r_inv = &inv_sqrt * u.transpose() * ls.transpose();
        (r, r_inv, lam, lx, ls)
    } else {
        (
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, 0),
            DVector::zeros(0),
            DMatrix::zeros(0, 0),
            DMatrix::zeros(0, 0),
        )
    };

    let mut w_lin = DVector::zeros(d_dim);
    let mut lam_lin = DVector::zeros(d_dim);
    for k in 0..d_dim {
        if st.xl[k] <= 0.0 || st.sl[k] <= 0.0 {
            return None;
        }
        w_lin[k] = (st.xl[k] / st.sl[k]).sqrt();
        lam_lin[k] = (st.xl[k] * st.sl[k]).sqrt();
    }
    Some(Scaling {
        r,
        r_inv,
        lam,
        lx,
        ls,
        w_lin,
        lam_lin,
    })
}

/// Constraint rows mapped to the scaled geometry: `A~_i = R^T A_i R` for the
/// PSD block, `g~_ik = w_k g_ik` for the orthant.
struct ScaledRows {
    a_tilde: Vec<DMatrix<f64>>,
    g_tilde: Vec<Vec<(usize, f64)>>,
}

fn build_scaled_rows(p: &RealConeProblem, sc: &Scaling, m: usize, s_dim: usize) -> ScaledRows {
    let mut a_tilde = Vec::with_capacity(m);
    let mut g_tilde = Vec::with_capacity(m);
    for i in 0..m {
        if s_dim > 0 {
            let ar = sparse_times_dense(&p.a_psd[i], &sc.r);
            let mut t = sc.r.transpose() * ar;
            symmetrize(&mut t);
            a_tilde.push(t);
        } else {
            a_tilde.push(DMatrix::zeros(0, 0));
        }
        g_tilde.push(
            p.a_lin[i]
                .iter()
                .map(|&(k, g)| (k, g * sc.w_lin[k]))
                .collect(),
        );
    }
    ScaledRows { a_tilde, g_tilde }
}

/// Gram matrix of the scaled rows.
fn build_schur(rows: &ScaledRows, m: usize) -> DMatrix<f64> {
    let mut schur = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let mut acc = frob_inner(&rows.a_tilde[i], &rows.a_tilde[j]);
            // Sparse dot of the two scaled linear rows.
            for &(k, gi) in &rows.g_tilde[i] {
                for &(k2, gj) in &rows.g_tilde[j] {
                    if k == k2 {
                        acc += gi * gj;
                    }
                }
            }
            schur[(i, j)] = acc;
            schur[(j, i)] = acc;
        }
    }
    let reg = 1e-13 * (1.0 + schur.diagonal().amax());
    for k in 0..m {
        schur[(k, k)] += reg;
    }
    schur
}

struct SchurSolver<'a> {
    matrix: &'a DMatrix<f64>,
    chol: &'a Cholesky<f64, Dyn>,
}

impl SchurSolver<'_> {
    /// Solve with iterative refinement; the Schur system gets severely
    /// ill-conditioned near convergence.
    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut x = self.chol.solve(rhs);
        for _ in 0..2 {
            let residual = rhs - self.matrix * &x;
            x += self.chol.solve(&residual);
        }
        x
    }
}

/// Newton direction with one pass of direction-level refinement: the raw
/// direction's residual in the full KKT system is measured exactly and a
/// correction is solved for. This buys back the accuracy the ill-conditioned
/// Schur complement loses near the optimum.
#[allow(clippy::too_many_arguments)]
fn compute_direction_refined(
    p: &RealConeProblem,
    sc: &Scaling,
    rows: &ScaledRows,
    solver: &SchurSolver<'_>,
    e_psd: &DMatrix<f64>,
    e_lin: &DVector<f64>,
    r_p: &DVector<f64>,
    r_d: &DMatrix<f64>,
    r_d_lin: &DVector<f64>,
    m: usize,
    s_dim: usize,
    d_dim: usize,
) -> Direction {
    let mut dir = compute_direction(
        p, sc, rows, solver, e_psd, e_lin, r_p, r_d, r_d_lin, m, s_dim, d_dim,
    );
    let mut last_err = f64::INFINITY;
    for _ in 0..6 {
        // Residuals of the three Newton equations at the computed direction.
        let mut drp = r_p.clone();
        for i in 0..m {
            let mut v = 0.0;
            if s_dim > 0 {
                v += sparse_inner(&p.a_psd[i], &dir.dx);
            }
            for &(k, g) in &p.a_lin[i] {
                v += g * dir.dxl[k];
            }
            drp[i] -= v;
        }
        let (mut drd, mut drd_lin) = (r_d.clone(), r_d_lin.clone());
        for i in 0..m {
            let yi = dir.dy[i];
            for &(r, c, v) in &p.a_psd[i] {
                drd[(r, c)] -= yi * v;
                if r != c {
                    drd[(c, r)] -= yi * v;
                }
            }
            for &(k, g) in &p.a_lin[i] {
                drd_lin[k] -= yi * g;
            }
        }
        drd -= &dir.ds;
        drd_lin -= &dir.dsl;
        let de = if s_dim > 0 {
            let dxh = &sc.r_inv * &dir.dx * sc.r_inv.transpose();
            let dsh = sc.r.transpose() * &dir.ds * &sc.r;
            e_psd - dxh - dsh
        } else {
            DMatrix::zeros(0, 0)
        };
        let mut de_lin = DVector::zeros(d_dim);
        for k in 0..d_dim {
            de_lin[k] =
                e_lin[k] - dir.dxl[k] / sc.w_lin[k] - sc.w_lin[k] * dir.dsl[k];
        }

        let err = drp.norm() + drd.norm() + drd_lin.norm() + de.norm() + de_lin.norm();
        let scale = 1.0 + r_p.norm() + r_d.norm() + e_psd.norm();
        if err <= 1e-13 * scale || err >= 0.8 * last_err {
            break;
        }
        last_err = err;
        let fix = compute_direction(
            p, sc, rows, solver, &de, &de_lin, &drp, &drd, &drd_lin, m, s_dim, d_dim,
        );
        dir.dx += fix.dx;
        dir.dxl += fix.dxl;
        dir.dy += fix.dy;
        dir.ds += fix.ds;
        dir.dsl += fix.dsl;
    }
    dir
}

#[allow(clippy::too_many_arguments)]
fn compute_direction(
    p: &RealConeProblem,
    sc: &Scaling,
    rows: &ScaledRows,
    solver: &SchurSolver<'_>,
    e_psd: &DMatrix<f64>,
    e_lin: &DVector<f64>,
    r_p: &DVector<f64>,
    r_d: &DMatrix<f64>,
    r_d_lin: &DVector<f64>,
    m: usize,
    s_dim: usize,
    d_dim: usize,
) -> Direction {
    // Dual residual in the scaled geometry.
    let rd_tilde = if s_dim > 0 {
        let mut t = sc.r.transpose() * r_d * &sc.r;
        symmetrize(&mut t);
        t
    } else {
        DMatrix::zeros(0, 0)
    };
    let mut rd_lin_tilde = DVector::zeros(d_dim);
    for k in 0..d_dim {
        rd_lin_tilde[k] = sc.w_lin[k] * r_d_lin[k];
    }

    // rhs_i = r_p_i - <A~_i, E - Rd~> - g~_i . (e - rd~); the same scaled
    // rows define the Schur Gram matrix, so A(dX) = r_p holds to the
    // accuracy of the Schur solve alone.
    let work = e_psd - &rd_tilde;
    let mut rhs = DVector::zeros(m);
    for i in 0..m {
        let mut v = r_p[i];
        if s_dim > 0 {
            v -= frob_inner(&rows.a_tilde[i], &work);
        }
        for &(k, g) in &rows.g_tilde[i] {
            v -= g * (e_lin[k] - rd_lin_tilde[k]);
        }
        rhs[i] = v;
    }
    let dy = solver.solve(&rhs);

    // dS from exact dual feasibility; dS~ from the scaled rows for the
    // primal reconstruction.
    let mut ds = r_d.clone();
    let mut dsl = r_d_lin.clone();
    let mut ds_tilde = rd_tilde;
    let mut dsl_tilde = rd_lin_tilde;
    for i in 0..m {
        let yi = dy[i];
        if yi == 0.0 {
            continue;
        }
        for &(r, c, v) in &p.a_psd[i] {
            ds[(r, c)] -= yi * v;
            if r != c {
                ds[(c, r)] -= yi * v;
            }
        }
        for &(k, g) in &p.a_lin[i] {
            dsl[k] -= yi * g;
        }
        if s_dim > 0 {
            ds_tilde -= &rows.a_tilde[i] * yi;
        }
        for &(k, g) in &rows.g_tilde[i] {
            dsl_tilde[k] -= yi * g;
        }
    }

    // dX = R (E - dS~) R^T, dx_k = w_k (e_k - ds~_k).
    let mut dx = if s_dim > 0 {
        let inner = e_psd - &ds_tilde;
        &sc.r * inner * sc.r.transpose()
    } else {
        DMatrix::zeros(0, 0)
    };
    symmetrize(&mut dx);
    let mut dxl = DVector::zeros(d_dim);
    for k in 0..d_dim {
        dxl[k] = sc.w_lin[k] * (e_lin[k] - dsl_tilde[k]);
    }

    Direction { dx, dxl, dy, ds, dsl }
}

/// Max steps to the cone boundary for primal and dual blocks.
fn step_lengths(st: &State, dir: &Direction, sc: &Scaling, _tau: f64) -> (f64, f64) {
    let ap_psd = psd_step(&sc.lx, &dir.dx);
    let ad_psd = psd_step(&sc.ls, &dir.ds);
    let mut ap = ap_psd;
    let mut ad = ad_psd;
    for k in 0..st.xl.len() {
        if dir.dxl[k] < 0.0 {
            ap = ap.min(-st.xl[k] / dir.dxl[k]);
        }
        if dir.dsl[k] < 0.0 {
            ad = ad.min(-st.sl[k] / dir.dsl[k]);
        }
    }
    (ap, ad)
}

fn psd_step(l: &DMatrix<f64>, delta: &DMatrix<f64>) -> f64 {
    let n = l.nrows();
    if n == 0 {
        return f64::INFINITY;
    }
    // alpha_max = 1 / max(0, -lambda_min(L^{-1} D L^{-T})).
    let y = l
        .solve_lower_triangular(delta)
        .expect("Cholesky factor is nonsingular");
    let z = l
        .solve_lower_triangular(&y.transpose())
        .expect("Cholesky factor is nonsingular");
    let mut zs = z;
    symmetrize(&mut zs);
    let min_eig = zs.symmetric_eigenvalues().min();
    if min_eig >= -1e-300 {
        f64::INFINITY
    } else {
        1.0 / (-min_eig)
    }
}

fn affine_mu(st: &State, dir: &Direction, ap: f64, ad: f64, nu: f64) -> f64 {
    let x_new = &st.x + &dir.dx * ap;
    let s_new = &st.s + &dir.ds * ad;
    let mut acc = frob_inner(&x_new, &s_new);
    for k in 0..st.xl.len() {
        acc += (st.xl[k] + ap * dir.dxl[k]) * (st.sl[k] + ad * dir.dsl[k]);
    }
    (acc / nu).max(0.0)
}
