//! Chebyshev–Gauss–Lobatto grids and discrete Chebyshev transforms.
//!
//! Conventions used throughout the crate:
//! - nodes ascend: `x_j = -cos(pi j / N)`, so `x_0 = -1` and `x_N = 1`;
//! - coefficients expand on `T_n(x) = cos(n arccos x)`, `n = 0..=N`;
//! - all floating point is f64.
//!
//! The fast transform is an even-extension real FFT of length 2N (a DCT-I in
//! disguise); the O(N^2) naive transform serves as its oracle in tests and in
//! the self-test command.

use crate::error::{Error, Result};
use crate::fft;
use std::f64::consts::PI;
use std::sync::Arc;

/// Chebyshev–Gauss–Lobatto grid of polynomial degree `N` (N+1 points).
///
/// Node and weight tables are shared behind `Arc`, so cloning a grid is cheap
/// and fields can carry their grid by value.
#[derive(Debug, Clone)]
pub struct GridSpec {
    degree: usize,
    nodes: Arc<[f64]>,
    weights: Arc<[f64]>,
}

impl GridSpec {
    /// Build the CGL grid of degree `n`: nodes `x_j = -cos(pi j / n)` and
    /// quadrature weights `w_j = pi / (c_j n)` with `c_0 = c_N = 2`, else 1.
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGrid { degree: n });
        }
        let mut nodes = Vec::with_capacity(n + 1);
        let mut weights = Vec::with_capacity(n + 1);
        for j in 0..=n {
            nodes.push(-((PI * j as f64) / n as f64).cos());
            let c = if j == 0 || j == n { 2.0 } else { 1.0 };
            weights.push(PI / (c * n as f64));
        }
        // Pin the endpoints exactly.
        nodes[0] = -1.0;
        nodes[n] = 1.0;
        if n % 2 == 0 {
            nodes[n / 2] = 0.0;
        }
        Ok(GridSpec {
            degree: n,
            nodes: nodes.into(),
            weights: weights.into(),
        })
    }

    /// Polynomial degree N; the grid has N+1 points.
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of grid points (N+1).
    pub fn len(&self) -> usize {
        self.degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Ascending nodes in [-1, 1].
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Chebyshev–Gauss–Lobatto quadrature weights (for the weight function
    /// `(1 - x^2)^{-1/2}`).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Function values sampled on a CGL grid (one channel).
#[derive(Debug, Clone)]
pub struct PhysicalField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl PhysicalField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch {
                context: "PhysicalField::new",
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(PhysicalField { grid, values })
    }

    /// Sample a function on the grid.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&x| f(x)).collect();
        PhysicalField { grid, values }
    }
}

/// Expansion coefficients on the `T_n` basis, indices 0..=N.
#[derive(Debug, Clone)]
pub struct ChebCoeffs {
    pub coeffs: Vec<f64>,
}

impl ChebCoeffs {
    pub fn new(coeffs: Vec<f64>) -> Self {
        ChebCoeffs { coeffs }
    }

    /// Degree N of the expansion (len - 1).
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }
}

/// Map a point of [-1, 1] onto [a, b] linearly: `t = x (b-a)/2 + (a+b)/2`.
pub fn map_interval(x: f64, a: f64, b: f64) -> Result<f64> {
    if a >= b {
        return Err(Error::InvalidInterval { a, b });
    }
    Ok(x * (b - a) / 2.0 + (a + b) / 2.0)
}

#[inline]
fn ctilde(j: usize, n: usize) -> f64 {
    if j == 0 || j == n {
        2.0
    } else {
        1.0
    }
}

/// Forward transform, O(N^2) reference path:
///
///   u_hat_n = 2 / (c_n N) * sum_j  u(x_j) T_n(x_j) / c_j
///
/// with `T_n(x_j) = cos(pi n (N-j) / N)` evaluated through an exact integer
/// phase table. Kept as the oracle for [`cheb_forward_fast`].
pub fn cheb_forward_naive(field: &PhysicalField) -> ChebCoeffs {
    let n = field.grid.degree();
    let u = &field.values;
    // cos(pi t / N) for t = 0..2N; n*(N-j) mod 2N stays exact in f64-free
    // integer arithmetic.
    let table: Vec<f64> = (0..2 * n).map(|t| (PI * t as f64 / n as f64).cos()).collect();
    let mut coeffs = vec![0.0; n + 1];
    for (k, c) in coeffs.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &v) in u.iter().enumerate() {
            let phase = (k * (n - j)) % (2 * n);
            acc += v * table[phase] / ctilde(j, n);
        }
        *c = 2.0 * acc / (ctilde(k, n) * n as f64);
    }
    ChebCoeffs::new(coeffs)
}

/// Forward transform on raw values, fast path (even extension + real FFT of
/// length 2N). Identical contract to [`cheb_forward_naive`].
pub(crate) fn forward_slice(values: &[f64], out: &mut [f64]) {
    let n = values.len() - 1;
    let reversed: Vec<f64> = values.iter().rev().copied().collect();
    fft::cosine_raw_into(&reversed, out);
    let scale = 1.0 / n as f64;
    for (k, o) in out.iter_mut().enumerate() {
        *o *= scale / ctilde(k, n);
    }
}

/// Backward transform on raw coefficients: `u(x_j) = sum_n u_hat_n T_n(x_j)`.
pub(crate) fn backward_slice(coeffs: &[f64], out: &mut [f64]) {
    let n = coeffs.len() - 1;
    let mut scaled = coeffs.to_vec();
    scaled[0] *= 2.0;
    scaled[n] *= 2.0;
    let mut raw = vec![0.0; n + 1];
    fft::cosine_raw_into(&scaled, &mut raw);
    for (j, o) in out.iter_mut().enumerate() {
        *o = 0.5 * raw[n - j];
    }
}

/// Transpose of the forward transform as a map of coefficient vectors:
/// `F^T = D_x C D_m` with `D_m = diag(2 / (c_n N))`, `D_x = diag(1 / c_j)`.
/// Used by reverse-mode gradients; same O(N log N) cost as the transform.
pub(crate) fn forward_transpose_slice(g_modes: &[f64], out_values: &mut [f64]) {
    let n = g_modes.len() - 1;
    let scaled: Vec<f64> = g_modes
        .iter()
        .enumerate()
        .map(|(k, &g)| g * 2.0 / (ctilde(k, n) * n as f64))
        .collect();
    backward_slice(&scaled, out_values);
    out_values[0] /= 2.0;
    out_values[n] /= 2.0;
}

/// Transpose of the backward transform: `C^T = D_m^{-1} F D_x^{-1}`.
pub(crate) fn backward_transpose_slice(g_values: &[f64], out_modes: &mut [f64]) {
    let n = g_values.len() - 1;
    let mut scaled = g_values.to_vec();
    scaled[0] *= 2.0;
    scaled[n] *= 2.0;
    forward_slice(&scaled, out_modes);
    for (k, o) in out_modes.iter_mut().enumerate() {
        *o *= ctilde(k, n) * n as f64 / 2.0;
    }
}

/// Fast forward discrete Chebyshev transform, O(N log N).
pub fn cheb_forward_fast(field: &PhysicalField) -> ChebCoeffs {
    let mut coeffs = vec![0.0; field.grid.len()];
    forward_slice(&field.values, &mut coeffs);
    ChebCoeffs::new(coeffs)
}

/// Backward discrete Chebyshev transform; exact inverse of the forward
/// transform on the same grid.
pub fn cheb_backward(coeffs: &ChebCoeffs, grid: &GridSpec) -> Result<PhysicalField> {
    if coeffs.coeffs.len() != grid.len() {
        return Err(Error::ShapeMismatch {
            context: "cheb_backward",
            expected: grid.len(),
            got: coeffs.coeffs.len(),
        });
    }
    let mut values = vec![0.0; grid.len()];
    backward_slice(&coeffs.coeffs, &mut values);
    PhysicalField::new(grid.clone(), values)
}

/// Differentiation in coefficient space via the backward recursion
///
///   d_{N} = 0,  d_{N-1} = 2 N u_N,  d_{k-1} = (2 k u_k + d_{k+1}) / c_{k-1}
///
/// with `c_0 = 2`, `c_k = 1` otherwise. Output length matches the input; the
/// top coefficient is zero.
pub fn cheb_diff(coeffs: &ChebCoeffs) -> ChebCoeffs {
    let mut d = vec![0.0; coeffs.coeffs.len()];
    diff_slice(&coeffs.coeffs, &mut d);
    ChebCoeffs::new(d)
}

pub(crate) fn diff_slice(a: &[f64], d: &mut [f64]) {
    let n = a.len() - 1;
    d[n] = 0.0;
    if n == 0 {
        return;
    }
    let c_top = if n == 1 { 2.0 } else { 1.0 };
    d[n - 1] = 2.0 * n as f64 * a[n] / c_top;
    for k in (1..n).rev() {
        let c = if k == 1 { 2.0 } else { 1.0 };
        d[k - 1] = (2.0 * k as f64 * a[k] + d[k + 1]) / c;
    }
}

/// Convolution-backed differentiation with the same contract as
/// [`cheb_diff`], using the closed form
///
///   d_k = (2 / c_k) * sum_{p > k, p+k odd} p u_p
///
/// realized as one FFT linear convolution with an odd-lag step kernel.
pub fn cheb_diff_conv(coeffs: &ChebCoeffs) -> ChebCoeffs {
    let a = &coeffs.coeffs;
    let n = a.len() - 1;
    if n == 0 {
        return ChebCoeffs::new(vec![0.0]);
    }
    let weighted_rev: Vec<f64> = (0..=n).map(|i| (n - i) as f64 * a[n - i]).collect();
    let kernel: Vec<f64> = (0..=n).map(|m| if m % 2 == 1 { 1.0 } else { 0.0 }).collect();
    let conv = fft::linear_convolution_fft(&weighted_rev, &kernel);
    let mut d = vec![0.0; n + 1];
    for (k, dk) in d.iter_mut().enumerate().take(n) {
        let c = if k == 0 { 2.0 } else { 1.0 };
        *dk = 2.0 / c * conv[n - k];
    }
    ChebCoeffs::new(d)
}

/// Boundary side of the interval [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Minus,
    Plus,
}

impl Side {
    #[inline]
    fn sign(self) -> f64 {
        match self {
            Side::Minus => -1.0,
            Side::Plus => 1.0,
        }
    }
}

/// What to evaluate at the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalOrder {
    /// The function value: `sum_n u_n (+-1)^n`.
    Value,
    /// The first derivative: `sum_n u_n (+-1)^{n-1} n^2`.
    Derivative,
}

/// Evaluate the expansion (or its derivative) at an endpoint from the
/// coefficients, using `T_n(+-1) = (+-1)^n` and `T_n'(+-1) = (+-1)^{n-1} n^2`.
pub fn eval_boundary(coeffs: &ChebCoeffs, side: Side, order: EvalOrder) -> f64 {
    eval_boundary_slice(&coeffs.coeffs, side, order)
}

pub(crate) fn eval_boundary_slice(a: &[f64], side: Side, order: EvalOrder) -> f64 {
    let s = side.sign();
    let mut acc = 0.0;
    match order {
        EvalOrder::Value => {
            let mut sign = 1.0;
            for &c in a {
                acc += c * sign;
                sign *= s;
            }
        }
        EvalOrder::Derivative => {
            // (+-1)^{n-1}: starts at s^{-1} = s for n = 0 (n^2 = 0 kills it).
            let mut sign = s;
            for (n, &c) in a.iter().enumerate() {
                acc += c * sign * (n * n) as f64;
                sign *= s;
            }
        }
    }
    acc
}

/// CGL quadrature `sum_j u(x_j) w_j`; exact for the weighted integral
/// `int u (1-x^2)^{-1/2} dx` when u is a polynomial of degree <= 2N-1.
pub fn cgl_quadrature(field: &PhysicalField) -> f64 {
    field
        .values
        .iter()
        .zip(field.grid.weights())
        .map(|(u, w)| u * w)
        .sum()
}

/// Clenshaw–Curtis weights on the CGL nodes: quadrature for the unit weight
/// function, `int_{-1}^{1} u dx ~= sum_j u(x_j) cc_j`, exact for u in P_N.
///
/// Derived by pairing the forward transform with the Chebyshev moments
/// `int T_k dx = 2 / (1 - k^2)` (even k), 0 (odd k).
pub fn clenshaw_curtis_weights(grid: &GridSpec) -> Vec<f64> {
    let n = grid.degree();
    let moments: Vec<f64> = (0..=n)
        .map(|k| {
            if k % 2 == 0 {
                2.0 / (1.0 - (k * k) as f64)
            } else {
                0.0
            }
        })
        .collect();
    // w_j = sum_k F[k][j] m_k with F the forward-transform matrix.
    let mut w = vec![0.0; n + 1];
    let table: Vec<f64> = (0..2 * n).map(|t| (PI * t as f64 / n as f64).cos()).collect();
    for (j, wj) in w.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &m) in moments.iter().enumerate() {
            let phase = (k * (n - j)) % (2 * n);
            acc += m * table[phase] * 2.0 / (ctilde(k, n) * n as f64);
        }
        *wj = acc / ctilde(j, n);
    }
    w
}
