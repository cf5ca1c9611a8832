//! Complex Hermitian matrix utilities.
//!
//! Everything the rest of the crate needs from dense Hermitian linear algebra
//! lives here: the real symmetric embedding used by the SDP backend, a Jacobi
//! eigensolver, rank-1 certificates extracted from solver output, and the
//! block-structure diagnostic for dual matrices of the penalized problem.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use thiserror::Error;

/// Tolerance scale for the Hermiticity check at construction.
const HERMITICITY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum HermitianError {
    #[error("matrix is not Hermitian: max |M - M^H| entry = {defect:.3e}")]
    NotHermitian { defect: f64 },
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

#[derive(Debug, Error)]
pub enum CertificateError {
    #[error("top-left block of W differs from v_ref by {defect:.3e} (tolerance {tol:.3e})")]
    SlackBlockMismatch { defect: f64, tol: f64 },
    #[error("W is indefinite beyond tolerance: min eigenvalue {min_eig:.3e}")]
    Indefinite { min_eig: f64 },
    #[error("W dimension {dim} is not a positive multiple of 3")]
    BadDimension { dim: usize },
}

/// Dense complex Hermitian matrix. Construction symmetrizes the input and
/// rejects matrices whose Hermiticity defect exceeds `1e-12 * max(1, |M|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    data: DMatrix<Complex64>,
}

impl HermitianMatrix {
    pub fn new(m: DMatrix<Complex64>) -> Result<Self, HermitianError> {
        if m.nrows() != m.ncols() {
            return Err(HermitianError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let scale = m.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
        let mut defect = 0.0_f64;
        for r in 0..m.nrows() {
            for c in r..m.ncols() {
                defect = defect.max((m[(r, c)] - m[(c, r)].conj()).norm());
            }
        }
        if defect > HERMITICITY_TOL * scale {
            return Err(HermitianError::NotHermitian { defect });
        }
        Ok(Self::symmetrized(m))
    }

    /// Symmetrize without the defect check. For matrices that are Hermitian by
    /// construction up to rounding (sums of Hermitian terms, folded solver
    /// output).
    pub fn symmetrized(m: DMatrix<Complex64>) -> Self {
        let h = m.adjoint();
        let mut data = (m + h) * Complex64::new(0.5, 0.0);
        for r in 0..data.nrows() {
            let d = data[(r, r)];
            data[(r, r)] = Complex64::new(d.re, 0.0);
        }
        Self { data }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            data: DMatrix::zeros(n, n),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            data: DMatrix::identity(n, n),
        }
    }

    /// Rank-1 matrix `v v^H`.
    pub fn outer(v: &DVector<Complex64>) -> Self {
        let m = v * v.adjoint();
        Self::symmetrized(m)
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// `tr(A B)`, real for Hermitian `A`, `B`.
    pub fn trace_product(&self, other: &HermitianMatrix) -> f64 {
        assert_eq!(self.dim(), other.dim());
        let mut acc = Complex64::new(0.0, 0.0);
        for r in 0..self.dim() {
            for c in 0..self.dim() {
                acc += self.data[(r, c)] * other.data[(c, r)];
            }
        }
        acc.re
    }
}

/// Real symmetric embedding `[[Re M, -Im M], [Im M, Re M]]` of a Hermitian
/// matrix. The embedding is PSD iff the input is, doubles the trace, and
/// duplicates every eigenvalue.
pub fn real_embed(m: &HermitianMatrix) -> DMatrix<f64> {
    let n = m.dim();
    let mut s = DMatrix::zeros(2 * n, 2 * n);
    for r in 0..n {
        for c in 0..n {
            let z = m.data[(r, c)];
            s[(r, c)] = z.re;
            s[(n + r, n + c)] = z.re;
            s[(r, n + c)] = -z.im;
            s[(n + r, c)] = z.im;
        }
    }
    s
}

/// Inverse of [`real_embed`] for matrices that are only approximately
/// structured: averages the duplicated blocks.
pub fn fold_embedded(s: &DMatrix<f64>) -> HermitianMatrix {
    assert_eq!(s.nrows(), s.ncols());
    assert_eq!(s.nrows() % 2, 0);
    let n = s.nrows() / 2;
    let mut m = DMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let re = 0.5 * (s[(r, c)] + s[(n + r, n + c)]);
            let im = 0.5 * (s[(n + r, c)] - s[(r, n + c)]);
            m[(r, c)] = Complex64::new(re, im);
        }
    }
    HermitianMatrix::symmetrized(m)
}

/// Eigen-decomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors, column `r` pairs with `eigenvalues[r]`.
    pub eigenvectors: DMatrix<Complex64>,
}

impl EigenDecomposition {
    /// `sum_r rho_r V_r V_r^H`.
    pub fn reconstruct(&self) -> HermitianMatrix {
        let n = self.eigenvectors.nrows();
        let mut m = DMatrix::<Complex64>::zeros(n, n);
        for (r, &rho) in self.eigenvalues.iter().enumerate() {
            let v = self.eigenvectors.column(r);
            m += (v * v.adjoint()) * Complex64::new(rho, 0.0);
        }
        HermitianMatrix::symmetrized(m)
    }
}

/// Cyclic Jacobi eigensolver for Hermitian matrices. Eigenvalues are returned
/// in descending order with orthonormal eigenvectors.
pub fn eig_hermitian(m: &HermitianMatrix) -> EigenDecomposition {
    let n = m.dim();
    let mut a = m.data.clone();
    let mut v = DMatrix::<Complex64>::identity(n, n);
    let scale = a.iter().map(|z| z.norm()).fold(1.0_f64, f64::max);
    let stop = 1e-14 * scale;

    for _sweep in 0..60 {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[(p, q)].norm());
            }
        }
        if off <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let b = a[(p, q)];
                let beta = b.norm();
                if beta <= stop * 1e-2 {
                    continue;
                }
                let phase = b / Complex64::new(beta, 0.0);
                let zeta = (a[(q, q)].re - a[(p, p)].re) / (2.0 * beta);
                // Stable root of t^2 - 2 zeta t - 1 = 0 (smaller magnitude).
                let sgn = if zeta >= 0.0 { 1.0 } else { -1.0 };
                let t = -sgn / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // A <- U^H A U with U = [[c, -s e^{i phi}], [s e^{-i phi}, c]]
                // acting on the (p, q) plane.
                let se_m = Complex64::new(s, 0.0) * phase.conj();
                let se_p = Complex64::new(s, 0.0) * phase;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    let new_kp = akp * c + akq * se_m;
                    let new_kq = -akp * se_p + akq * c;
                    a[(k, p)] = new_kp;
                    a[(p, k)] = new_kp.conj();
                    a[(k, q)] = new_kq;
                    a[(q, k)] = new_kq.conj();
                }
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let new_pp = c * c * app + 2.0 * c * s * beta + s * s * aqq;
                let new_qq = s * s * app - 2.0 * c * s * beta + c * c * aqq;
                a[(p, p)] = Complex64::new(new_pp, 0.0);
                a[(q, q)] = Complex64::new(new_qq, 0.0);
                a[(p, q)] = Complex64::new(0.0, 0.0);
                a[(q, p)] = Complex64::new(0.0, 0.0);

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * c + vkq * se_m;
                    v[(k, q)] = -vkp * se_p + vkq * c;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].re.partial_cmp(&a[(i, i)].re).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)].re).collect();
    let mut eigenvectors = DMatrix::<Complex64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &v.column(src));
    }
    EigenDecomposition {
        eigenvalues,
        eigenvectors,
    }
}

/// Structure certificate of a solver matrix `W` with slack block pinned to
/// `v_ref v_ref^H`: the unique decomposition `W_01 = V_ref Vhat^H`,
/// `W_11 = Vhat Vhat^H + Q_W`, and the rank-1 test on the eigenvalues of `W`.
#[derive(Debug, Clone)]
pub struct RankCertificate {
    /// Voltage-like vector extracted from the cross block, length `3N`.
    pub v_hat: DVector<Complex64>,
    /// PSD residual `W_11 - Vhat Vhat^H`; zero exactly when `W` is rank-1.
    pub q_w: HermitianMatrix,
    /// Eigenvalues of the full `W`, descending.
    pub eigenvalues: Vec<f64>,
    /// `rho_2 / rho_1`, clamped to 0 when `Q_W` vanishes within tolerance.
    pub leading_ratio: f64,
    /// `[V_ref; Vhat]` when the rank-1 test passes.
    pub recovered_voltage: Option<DVector<Complex64>>,
}

pub fn rank_certificate(
    w: &HermitianMatrix,
    v_ref: &Vector3<Complex64>,
    rank_tol: f64,
) -> Result<RankCertificate, CertificateError> {
    let dim = w.dim();
    if dim < 6 || dim % 3 != 0 {
        return Err(CertificateError::BadDimension { dim });
    }
    let eig = eig_hermitian(w);
    let rho1 = eig.eigenvalues[0];
    let min_eig = *eig.eigenvalues.last().unwrap();
    let psd_tol = 1e-7 * rho1.abs().max(1.0);
    if min_eig < -psd_tol {
        return Err(CertificateError::Indefinite { min_eig });
    }

    // Slack block must match v_ref v_ref^H.
    let v_ref_norm_sq: f64 = v_ref.iter().map(|z| z.norm_sqr()).sum();
    let mut block_defect = 0.0_f64;
    for r in 0..3 {
        for c in 0..3 {
            let expect = v_ref[r] * v_ref[c].conj();
            block_defect = block_defect.max((w.matrix()[(r, c)] - expect).norm());
        }
    }
    let block_tol = 1e-6 * v_ref_norm_sq.max(1.0);
    if block_defect > block_tol {
        return Err(CertificateError::SlackBlockMismatch {
            defect: block_defect,
            tol: block_tol,
        });
    }

    // Least-squares extraction of Vhat from W_01 = V_ref Vhat^H:
    // Vhat = W_01^H V_ref / |V_ref|^2, which also pins the global phase.
    let n_tail = dim - 3;
    let mut v_hat = DVector::<Complex64>::zeros(n_tail);
    for k in 0..n_tail {
        let mut acc = Complex64::new(0.0, 0.0);
        for r in 0..3 {
            // (W_01^H)_{k,r} = conj(W[(r, 3+k)])
            acc += w.matrix()[(r, 3 + k)].conj() * v_ref[r];
        }
        v_hat[k] = acc / Complex64::new(v_ref_norm_sq, 0.0);
    }

    let mut q = DMatrix::<Complex64>::zeros(n_tail, n_tail);
    for r in 0..n_tail {
        for c in 0..n_tail {
            q[(r, c)] = w.matrix()[(3 + r, 3 + c)] - v_hat[r] * v_hat[c].conj();
        }
    }
    let q_w = HermitianMatrix::symmetrized(q);

    let rho2 = if eig.eigenvalues.len() > 1 {
        eig.eigenvalues[1].max(0.0)
    } else {
        0.0
    };
    let raw_ratio = if rho1 > 0.0 { rho2 / rho1 } else { 0.0 };
    let q_w_scale = q_w
        .matrix()
        .iter()
        .map(|z| z.norm())
        .fold(0.0_f64, f64::max);
    let leading_ratio = if q_w_scale <= rank_tol * rho1.abs().max(1.0) {
        0.0
    } else {
        raw_ratio
    };

    let recovered_voltage = if leading_ratio <= rank_tol {
        let mut full = DVector::<Complex64>::zeros(dim);
        for r in 0..3 {
            full[r] = v_ref[r];
        }
        for k in 0..n_tail {
            full[3 + k] = v_hat[k];
        }
        Some(full)
    } else {
        None
    };

    Ok(RankCertificate {
        v_hat,
        q_w,
        eigenvalues: eig.eigenvalues,
        leading_ratio,
        recovered_voltage,
    })
}

/// Per-block diagnostic of the graph-invertibility structure: off-diagonal
/// bus blocks must vanish off the line set and be invertible on it.
#[derive(Debug, Clone)]
pub struct GInvertibilityReport {
    pub pairs: Vec<BlockDiagnostic>,
    pub passes: bool,
}

#[derive(Debug, Clone)]
pub struct BlockDiagnostic {
    pub bus_i: usize,
    pub bus_j: usize,
    pub adjacent: bool,
    /// Frobenius norm for non-adjacent pairs, smallest singular value for
    /// adjacent pairs.
    pub value: f64,
    pub ok: bool,
}

pub fn g_invertibility_check(
    b: &HermitianMatrix,
    net: &crate::netmodel::ThreePhaseNetwork,
    tol: f64,
) -> GInvertibilityReport {
    let buses = net.bus_count();
    assert_eq!(b.dim(), 3 * buses, "matrix dimension must be 3(N+1)");
    let mut pairs = Vec::new();
    let mut passes = true;
    for i in 0..buses {
        for j in (i + 1)..buses {
            let mut blk = DMatrix::<Complex64>::zeros(3, 3);
            for r in 0..3 {
                for c in 0..3 {
                    blk[(r, c)] = b.matrix()[(3 * i + r, 3 * j + c)];
                }
            }
            let adjacent = net.adjacent(i, j);
            let (value, ok) = if adjacent {
                let sv = smallest_singular_value(&blk);
                (sv, sv > tol)
            } else {
                let norm = blk.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                (norm, norm <= tol)
            };
            passes &= ok;
            pairs.push(BlockDiagnostic {
                bus_i: i,
                bus_j: j,
                adjacent,
                value,
                ok,
            });
        }
    }
    GInvertibilityReport { pairs, passes }
}

fn smallest_singular_value(m: &DMatrix<Complex64>) -> f64 {
    let mtm = HermitianMatrix::symmetrized(m.adjoint() * m);
    let eig = eig_hermitian(&mtm);
    eig.eigenvalues.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_hermitian(n: usize, rng: &mut StdRng) -> HermitianMatrix {
        let m = DMatrix::from_fn(n, n, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        HermitianMatrix::symmetrized(m)
    }

    #[test]
    fn construction_rejects_non_hermitian() {
        let m = DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(1.0, 0.0),
                Complex64::new(2.0, 0.0),
                Complex64::new(0.5, 0.0),
                Complex64::new(1.0, 0.0),
            ],
        );
        assert!(matches!(
            HermitianMatrix::new(m),
            Err(HermitianError::NotHermitian { .. })
        ));
    }

    #[test]
    fn embed_identity() {
        let m = HermitianMatrix::identity(2);
        let s = real_embed(&m);
        assert_eq!(s, DMatrix::<f64>::identity(4, 4));
    }

    #[test]
    fn embed_two_by_two_eigenvalues() {
        // M = [[2, i], [-i, 2]] has characteristic polynomial
        // (2 - l)^2 - 1 = 0, so l = 1, 3; the embedding doubles each.
        let m = HermitianMatrix::new(DMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(2.0, 0.0),
                Complex64::new(0.0, 1.0),
                Complex64::new(0.0, -1.0),
                Complex64::new(2.0, 0.0),
            ],
        ))
        .unwrap();
        let s = real_embed(&m);
        let mut eigs: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
        eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = [1.0, 1.0, 3.0, 3.0];
        for (got, want) in eigs.iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn embed_matches_independent_eigensolver() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..10 {
            let m = random_hermitian(6, &mut rng);
            let s = real_embed(&m);
            let mut embedded: Vec<f64> =
                SymmetricEigen::new(s).eigenvalues.iter().copied().collect();
            embedded.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let own = eig_hermitian(&m);
            for (k, &rho) in own.eigenvalues.iter().enumerate() {
                assert!((embedded[2 * k] - rho).abs() < 1e-10);
                assert!((embedded[2 * k + 1] - rho).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn embed_trace_and_linearity() {
        let mut rng = StdRng::seed_from_u64(11);
        let a = random_hermitian(5, &mut rng);
        let b = random_hermitian(5, &mut rng);
        let sa = real_embed(&a);
        let sb = real_embed(&b);
        let tr_a: Complex64 = a.matrix().diagonal().iter().sum();
        assert!((sa.trace() - 2.0 * tr_a.re).abs() < 1e-12);

        let combo = HermitianMatrix::symmetrized(
            a.matrix() * Complex64::new(2.5, 0.0) + b.matrix() * Complex64::new(-1.25, 0.0),
        );
        let lhs = real_embed(&combo);
        let rhs = sa * 2.5 + sb * (-1.25);
        assert!((lhs - rhs).abs().max() < 1e-12);
    }

    #[test]
    fn eig_diagonal() {
        let m = HermitianMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![
            Complex64::new(3.0, 0.0),
            Complex64::new(1.0, 0.0),
        ])))
        .unwrap();
        let e = eig_hermitian(&m);
        assert_eq!(e.eigenvalues, vec![3.0, 1.0]);
        assert!((e.eigenvectors[(0, 0)].norm() - 1.0).abs() < 1e-14);
        assert!((e.eigenvectors[(1, 1)].norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eig_outer_product() {
        let v = DVector::from_vec(vec![
            Complex64::new(1.0 / 2.0_f64.sqrt(), 0.0),
            Complex64::new(0.0, 1.0 / 2.0_f64.sqrt()),
        ]);
        let m = HermitianMatrix::outer(&v);
        let e = eig_hermitian(&m);
        assert!((e.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!(e.eigenvalues[1].abs() < 1e-12);
        // Leading eigenvector equals v up to a global phase.
        let v1 = e.eigenvectors.column(0);
        let overlap: Complex64 = v.iter().zip(v1.iter()).map(|(a, b)| a.conj() * b).sum();
        assert!((overlap.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn eig_reconstruction_residual() {
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..5 {
            let m = random_hermitian(8, &mut rng);
            let e = eig_hermitian(&m);
            let rec = e.reconstruct();
            let diff = rec.matrix() - m.matrix();
            let err = diff.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!(err <= 1e-9 * m.frobenius_norm().max(1.0), "residual {err}");
            // Orthonormality.
            let gram = e.eigenvectors.adjoint() * &e.eigenvectors;
            for r in 0..8 {
                for c in 0..8 {
                    let want = if r == c { 1.0 } else { 0.0 };
                    assert!((gram[(r, c)] - Complex64::new(want, 0.0)).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn fold_embedded_roundtrip() {
        let mut rng = StdRng::seed_from_u64(31);
        let m = random_hermitian(4, &mut rng);
        let back = fold_embedded(&real_embed(&m));
        let diff = back.matrix() - m.matrix();
        assert!(diff.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-14);
    }

    fn slack_vref() -> Vector3<Complex64> {
        let ang = 2.0 * std::f64::consts::PI / 3.0;
        Vector3::new(
            Complex64::new(1.0, 0.0),
            Complex64::from_polar(1.0, -ang),
            Complex64::from_polar(1.0, ang),
        )
    }

    #[test]
    fn certificate_exact_rank_one() {
        let v_ref = slack_vref();
        let mut u = DVector::<Complex64>::zeros(6);
        for r in 0..3 {
            u[r] = v_ref[r];
        }
        u[3] = Complex64::new(0.97, 0.01);
        u[4] = Complex64::from_polar(1.02, -2.1);
        u[5] = Complex64::from_polar(0.99, 2.05);
        let w = HermitianMatrix::outer(&u);
        let cert = rank_certificate(&w, &v_ref, 1e-6).unwrap();
        assert_eq!(cert.leading_ratio, 0.0);
        let rec = cert.recovered_voltage.expect("rank-1 input must recover");
        for k in 0..6 {
            assert!((rec[k] - u[k]).norm() < 1e-10);
        }
        assert!(cert.q_w.frobenius_norm() < 1e-10);
    }

    #[test]
    fn certificate_constructed_rank_two() {
        let v_ref = slack_vref();
        let mut u = DVector::<Complex64>::zeros(6);
        for r in 0..3 {
            u[r] = v_ref[r];
        }
        u[3] = Complex64::new(1.0, 0.0);
        u[4] = Complex64::new(-0.5, -0.8);
        u[5] = Complex64::new(-0.5, 0.8);
        let mut w = u.clone() * u.adjoint();
        // Perturbation supported off the slack block.
        let z = DVector::from_vec(vec![
            Complex64::new(0.6, 0.2),
            Complex64::new(-0.3, 0.4),
            Complex64::new(0.1, -0.5),
        ]);
        for r in 0..3 {
            for c in 0..3 {
                w[(3 + r, 3 + c)] += Complex64::new(0.5, 0.0) * z[r] * z[c].conj();
            }
        }
        let w = HermitianMatrix::symmetrized(w);
        let cert = rank_certificate(&w, &v_ref, 1e-6).unwrap();
        assert!(cert.leading_ratio > 1e-6);
        assert!(cert.recovered_voltage.is_none());
        // Q_W recovers exactly the planted perturbation.
        let mut planted = DMatrix::<Complex64>::zeros(3, 3);
        for r in 0..3 {
            for c in 0..3 {
                planted[(r, c)] = Complex64::new(0.5, 0.0) * z[r] * z[c].conj();
            }
        }
        let diff = cert.q_w.matrix() - planted;
        assert!(diff.iter().map(|x| x.norm()).fold(0.0, f64::max) < 1e-10);
    }

    #[test]
    fn certificate_rejects_bad_slack_block() {
        let v_ref = slack_vref();
        let w = HermitianMatrix::identity(6);
        assert!(matches!(
            rank_certificate(&w, &v_ref, 1e-6),
            Err(CertificateError::SlackBlockMismatch { .. })
        ));
    }

    #[test]
    fn certificate_reconstruction_invariant() {
        // W rebuilt from [V_ref; Vhat][..]^H + embedded Q_W matches the input.
        let v_ref = slack_vref();
        let mut rng = StdRng::seed_from_u64(5);
        let mut u = DVector::<Complex64>::zeros(9);
        for r in 0..3 {
            u[r] = v_ref[r];
        }
        for k in 3..9 {
            u[k] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let q_seed = random_hermitian(6, &mut rng);
        let q_psd = {
            let e = eig_hermitian(&q_seed);
            let mut m = DMatrix::<Complex64>::zeros(6, 6);
            for (r, &rho) in e.eigenvalues.iter().enumerate() {
                let v = e.eigenvectors.column(r);
                m += (v * v.adjoint()) * Complex64::new(rho.abs(), 0.0);
            }
            m
        };
        let mut w = u.clone() * u.adjoint();
        for r in 0..6 {
            for c in 0..6 {
                w[(3 + r, 3 + c)] += q_psd[(r, c)];
            }
        }
        let w = HermitianMatrix::symmetrized(w);
        let cert = rank_certificate(&w, &v_ref, 1e-6).unwrap();

        let mut rebuilt = DMatrix::<Complex64>::zeros(9, 9);
        let mut tall = DVector::<Complex64>::zeros(9);
        for r in 0..3 {
            tall[r] = v_ref[r];
        }
        for k in 0..6 {
            tall[3 + k] = cert.v_hat[k];
        }
        rebuilt += &tall * tall.adjoint();
        for r in 0..6 {
            for c in 0..6 {
                rebuilt[(3 + r, 3 + c)] += cert.q_w.matrix()[(r, c)];
            }
        }
        let diff = &rebuilt - w.matrix();
        let err = diff.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(err <= 1e-8 * w.frobenius_norm());
    }
}
