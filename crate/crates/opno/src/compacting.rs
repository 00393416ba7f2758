//! Compact combinations of Chebyshev polynomials and the compacting
//! transforms.
//!
//! A compact basis member is `phi_k = T_k + a_k T_{k+1} + b_k T_{k+2}` with
//! `(a_k, b_k)` chosen so that every `phi_k` satisfies a homogeneous Robin
//! boundary condition `a u(+-1) + b u'(+-1) = 0`. Expansions in `phi_k`
//! therefore satisfy the boundary condition identically, up to roundoff.
//!
//! The forward compacting transform maps Chebyshev coefficients `alpha` to
//! compact coefficients `beta`; the backward transform is the banded map
//! `alpha_n = beta_n + a_{n-1} beta_{n-1} + b_{n-2} beta_{n-2}`. On grids of
//! degree N there are N-1 compact modes.

pub use crate::fft::linear_convolution_fft;

use crate::chebyshev::{
    self, ChebCoeffs, EvalOrder, GridSpec, PhysicalField, Side,
};
use crate::error::{Error, Result};

/// Kind tag derived from the Robin coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BcKind {
    Dirichlet,
    Neumann,
    Robin,
}

/// Homogeneous Robin boundary condition
/// `a_- u(-1) + b_- u'(-1) = 0`, `a_+ u(1) + b_+ u'(1) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryCondition {
    pub a_minus: f64,
    pub b_minus: f64,
    pub a_plus: f64,
    pub b_plus: f64,
    kind: BcKind,
}

impl BoundaryCondition {
    /// General constructor; rejects `(a, b) = (0, 0)` on either side and
    /// derives the kind tag.
    pub fn new(a_minus: f64, b_minus: f64, a_plus: f64, b_plus: f64) -> Result<Self> {
        if a_minus == 0.0 && b_minus == 0.0 {
            return Err(Error::DegenerateBc { side: "minus" });
        }
        if a_plus == 0.0 && b_plus == 0.0 {
            return Err(Error::DegenerateBc { side: "plus" });
        }
        let kind = if b_minus == 0.0 && b_plus == 0.0 {
            BcKind::Dirichlet
        } else if a_minus == 0.0 && a_plus == 0.0 {
            BcKind::Neumann
        } else {
            BcKind::Robin
        };
        Ok(BoundaryCondition {
            a_minus,
            b_minus,
            a_plus,
            b_plus,
            kind,
        })
    }

    /// Homogeneous Dirichlet: `u(+-1) = 0`.
    pub fn dirichlet() -> Self {
        Self::new(1.0, 0.0, 1.0, 0.0).unwrap()
    }

    /// Homogeneous Neumann: `u'(+-1) = 0`.
    pub fn neumann() -> Self {
        Self::new(0.0, 1.0, 0.0, 1.0).unwrap()
    }

    pub fn kind(&self) -> BcKind {
        self.kind
    }

    /// Residual `|a u + b u'|` of an expansion at one endpoint.
    pub fn residual(&self, coeffs: &ChebCoeffs, side: Side) -> f64 {
        let (a, b) = match side {
            Side::Minus => (self.a_minus, self.b_minus),
            Side::Plus => (self.a_plus, self.b_plus),
        };
        let v = chebyshev::eval_boundary(coeffs, side, EvalOrder::Value);
        let d = chebyshev::eval_boundary(coeffs, side, EvalOrder::Derivative);
        (a * v + b * d).abs()
    }

    /// Max of the two endpoint residuals.
    pub fn max_residual(&self, coeffs: &ChebCoeffs) -> f64 {
        self.residual(coeffs, Side::Minus)
            .max(self.residual(coeffs, Side::Plus))
    }
}

/// The pair `(a_k, b_k)` of one compact basis member.
#[derive(Debug, Clone, Copy)]
pub struct CompactBasisCoeffs {
    pub k: usize,
    pub a: f64,
    pub b: f64,
}

/// Expansion coefficients on the compact basis, indices 0..=N-2 relative to
/// grid degree N.
#[derive(Debug, Clone)]
pub struct CompactCoeffs {
    pub coeffs: Vec<f64>,
}

impl CompactCoeffs {
    pub fn new(coeffs: Vec<f64>) -> Self {
        CompactCoeffs { coeffs }
    }

    /// Grid degree N implied by the coefficient count (len + 1).
    pub fn degree(&self) -> usize {
        self.coeffs.len() + 1
    }
}

/// Solve the 2x2 endpoint system for `(a_k, b_k)` in closed form.
///
/// Errors when the determinant (numerically) vanishes for the given boundary
/// condition, reporting the offending mode.
pub fn compact_basis(k: usize, bc: &BoundaryCondition) -> Result<CompactBasisCoeffs> {
    let (am, bm, ap, bp) = (bc.a_minus, bc.b_minus, bc.a_plus, bc.b_plus);
    let kf = k as f64;
    let k1 = kf + 1.0;
    let k2 = kf + 2.0;
    let t1 = 2.0 * ap * am;
    let t2 = (k1 * k1 + k2 * k2) * (am * bp - ap * bm);
    let t3 = -2.0 * bm * bp * k1 * k1 * k2 * k2;
    let det = t1 + t2 + t3;
    let scale = t1.abs() + t2.abs() + t3.abs();
    if det.abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::DegenerateBasis { k, det });
    }
    let a = 4.0 * k1 * (ap * bm + am * bp) / det;
    let b = (-2.0 * am * ap + (kf * kf + k1 * k1) * (ap * bm - am * bp)
        + 2.0 * bm * bp * kf * kf * k1 * k1)
        / det;
    Ok(CompactBasisCoeffs { k, a, b })
}

/// Precomputed `(a_k, b_k)` table for one boundary condition. Immutable after
/// construction; safe to share across threads.
#[derive(Debug, Clone)]
pub struct CompactBasis {
    bc: BoundaryCondition,
    ab: Vec<(f64, f64)>,
}

impl CompactBasis {
    /// Table covering modes `0..count`.
    pub fn new(bc: BoundaryCondition, count: usize) -> Result<Self> {
        let mut ab = Vec::with_capacity(count);
        for k in 0..count {
            let c = compact_basis(k, &bc)?;
            ab.push((c.a, c.b));
        }
        Ok(CompactBasis { bc, ab })
    }

    pub fn bc(&self) -> &BoundaryCondition {
        &self.bc
    }

    pub fn modes(&self) -> usize {
        self.ab.len()
    }

    #[inline]
    fn a(&self, k: usize) -> f64 {
        self.ab[k].0
    }

    #[inline]
    fn b(&self, k: usize) -> f64 {
        self.ab[k].1
    }

    /// First row index handled by the endpoint branch of the diagonal-kind
    /// forward recursion (rows at and above it read `alpha` above the beta
    /// range; rows below it run the carry recursion).
    fn endpoint_lo(beta_len: usize) -> usize {
        // beta_len = N - 1; endpoint rows are {N-3, N-2} clamped to >= 2.
        beta_len.saturating_sub(2).max(2)
    }

    /// Backward compacting map on slices:
    /// `alpha_n = beta_n + a_{n-1} beta_{n-1} + b_{n-2} beta_{n-2}`.
    pub(crate) fn backward_slice(&self, beta: &[f64], alpha: &mut [f64]) {
        let m = beta.len();
        debug_assert_eq!(alpha.len(), m + 2);
        for (n, out) in alpha.iter_mut().enumerate() {
            let mut v = 0.0;
            if n < m {
                v += beta[n];
            }
            if n >= 1 && n - 1 < m {
                v += self.a(n - 1) * beta[n - 1];
            }
            if n >= 2 && n - 2 < m {
                v += self.b(n - 2) * beta[n - 2];
            }
            *out = v;
        }
    }

    /// Transpose of [`Self::backward_slice`]:
    /// `out_j = g_j + a_j g_{j+1} + b_j g_{j+2}`.
    pub(crate) fn backward_transpose_slice(&self, g_alpha: &[f64], out_beta: &mut [f64]) {
        let m = out_beta.len();
        debug_assert_eq!(g_alpha.len(), m + 2);
        for (j, out) in out_beta.iter_mut().enumerate() {
            *out = g_alpha[j] + self.a(j) * g_alpha[j + 1] + self.b(j) * g_alpha[j + 2];
        }
    }

    /// Forward compacting map (left inverse of the backward map) on slices.
    ///
    /// Dirichlet/Neumann use the parity carry recursion with the endpoint
    /// rows read from the top of `alpha`; general Robin solves the banded
    /// unit-lower-triangular system formed by the first N-1 rows of the
    /// backward map (stable: its recursion roots stay inside the unit disk).
    pub(crate) fn forward_slice(&self, alpha: &[f64], beta: &mut [f64]) {
        let m = beta.len();
        debug_assert_eq!(alpha.len(), m + 2);
        match self.bc.kind {
            BcKind::Dirichlet | BcKind::Neumann => {
                let ep = Self::endpoint_lo(m).min(m);
                for j in 0..ep {
                    let mut v = alpha[j];
                    if j >= 2 {
                        v -= self.b(j - 2) * beta[j - 2];
                    }
                    beta[j] = v;
                }
                for j in ep..m {
                    beta[j] = alpha[j + 2] / self.b(j);
                }
            }
            BcKind::Robin => {
                for n in 0..m {
                    let mut v = alpha[n];
                    if n >= 1 {
                        v -= self.a(n - 1) * beta[n - 1];
                    }
                    if n >= 2 {
                        v -= self.b(n - 2) * beta[n - 2];
                    }
                    beta[n] = v;
                }
            }
        }
    }

    /// Transpose of [`Self::forward_slice`].
    pub(crate) fn forward_transpose_slice(&self, g_beta: &[f64], out_alpha: &mut [f64]) {
        let m = g_beta.len();
        debug_assert_eq!(out_alpha.len(), m + 2);
        out_alpha.fill(0.0);
        match self.bc.kind {
            BcKind::Dirichlet | BcKind::Neumann => {
                let ep = Self::endpoint_lo(m).min(m);
                // suffix recursion down the two parity chains of the carry rows
                for i in (0..ep).rev() {
                    let mut v = g_beta[i];
                    if i + 2 < ep {
                        v -= self.b(i) * out_alpha[i + 2];
                    }
                    out_alpha[i] = v;
                }
                for j in ep..m {
                    out_alpha[j + 2] += g_beta[j] / self.b(j);
                }
            }
            BcKind::Robin => {
                for n in (0..m).rev() {
                    let mut v = g_beta[n];
                    if n + 1 < m {
                        v -= self.a(n) * out_alpha[n + 1];
                    }
                    if n + 2 < m {
                        v -= self.b(n) * out_alpha[n + 2];
                    }
                    out_alpha[n] = v;
                }
            }
        }
    }

    /// Convolution-based forward compacting transform for the diagonal kinds
    /// (Dirichlet/Neumann); Robin falls back to the recursive solve.
    pub(crate) fn forward_fast_slice(&self, alpha: &[f64], beta: &mut [f64]) {
        let m = beta.len();
        debug_assert_eq!(alpha.len(), m + 2);
        match self.bc.kind {
            BcKind::Dirichlet => {
                let kernel: Vec<f64> =
                    (0..m).map(|l| if l % 2 == 0 { 1.0 } else { 0.0 }).collect();
                let conv = linear_convolution_fft(&alpha[..m], &kernel);
                let ep = Self::endpoint_lo(m).min(m);
                beta[..ep].copy_from_slice(&conv[..ep]);
                for j in ep..m {
                    beta[j] = alpha[j + 2] / self.b(j);
                }
            }
            BcKind::Neumann => {
                // scale by j^2, parity prefix sum, divide by j^2
                let scaled: Vec<f64> = alpha[..m]
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| (j * j) as f64 * v)
                    .collect();
                let kernel: Vec<f64> =
                    (0..m).map(|l| if l % 2 == 0 { 1.0 } else { 0.0 }).collect();
                let conv = linear_convolution_fft(&scaled, &kernel);
                let ep = Self::endpoint_lo(m).min(m);
                for j in 0..ep.min(2) {
                    beta[j] = alpha[j];
                }
                for j in 2..ep {
                    beta[j] = conv[j] / (j * j) as f64;
                }
                for j in ep..m {
                    beta[j] = alpha[j + 2] / self.b(j);
                }
            }
            BcKind::Robin => self.forward_slice(alpha, beta),
        }
    }
}

fn basis_for_degree(bc: &BoundaryCondition, alpha_len: usize) -> Result<CompactBasis> {
    if alpha_len < 3 {
        return Err(Error::ShapeMismatch {
            context: "compacting transform",
            expected: 3,
            got: alpha_len,
        });
    }
    CompactBasis::new(*bc, alpha_len - 2)
}

/// Backward compacting transform: compact coefficients to Chebyshev
/// coefficients, `sum beta_j phi_j = sum alpha_n T_n` exactly.
pub fn compact_backward(beta: &CompactCoeffs, bc: &BoundaryCondition) -> Result<ChebCoeffs> {
    let basis = basis_for_degree(bc, beta.coeffs.len() + 2)?;
    let mut alpha = vec![0.0; beta.coeffs.len() + 2];
    basis.backward_slice(&beta.coeffs, &mut alpha);
    Ok(ChebCoeffs::new(alpha))
}

/// Forward compacting transform by recursion/banded solve; exact left inverse
/// of [`compact_backward`].
pub fn compact_forward_recursive(
    alpha: &ChebCoeffs,
    bc: &BoundaryCondition,
) -> Result<CompactCoeffs> {
    let basis = basis_for_degree(bc, alpha.coeffs.len())?;
    let mut beta = vec![0.0; alpha.coeffs.len() - 2];
    basis.forward_slice(&alpha.coeffs, &mut beta);
    Ok(CompactCoeffs::new(beta))
}

/// Forward compacting transform via FFT linear convolution (parallelizable
/// path). Identical contract to [`compact_forward_recursive`]; Robin kinds
/// fall back to the recursive solve.
pub fn compact_forward_fast(alpha: &ChebCoeffs, bc: &BoundaryCondition) -> Result<CompactCoeffs> {
    let basis = basis_for_degree(bc, alpha.coeffs.len())?;
    let mut beta = vec![0.0; alpha.coeffs.len() - 2];
    basis.forward_fast_slice(&alpha.coeffs, &mut beta);
    Ok(CompactCoeffs::new(beta))
}

/// Full Shen transform: grid values to compact coefficients.
pub fn shen_forward(field: &PhysicalField, bc: &BoundaryCondition) -> Result<CompactCoeffs> {
    let alpha = chebyshev::cheb_forward_fast(field);
    compact_forward_recursive(&alpha, bc)
}

/// Inverse Shen transform: compact coefficients to grid values. The output
/// satisfies the boundary condition for any `beta`, up to roundoff.
pub fn shen_backward(
    beta: &CompactCoeffs,
    bc: &BoundaryCondition,
    grid: &GridSpec,
) -> Result<PhysicalField> {
    if beta.coeffs.len() + 2 != grid.len() {
        return Err(Error::ShapeMismatch {
            context: "shen_backward",
            expected: grid.len() - 2,
            got: beta.coeffs.len(),
        });
    }
    let alpha = compact_backward(beta, bc)?;
    chebyshev::cheb_backward(&alpha, grid)
}
