//! The OPNO network: lift, banded spectral kernel layers with pointwise
//! bypass and residual connections, GeLU activations, and a projection head
//! whose output satisfies the boundary condition for any parameter values.
//!
//! Kernel layers transform to Chebyshev coefficients, apply a learned banded
//! channel-mixing map on the lowest `modes` coefficients, and come back
//! through the full inverse Shen transform (compact basis, then inverse
//! Chebyshev). The forward compacting step is skipped inside kernel layers
//! and applied only in the final projection, which therefore lands the
//! output exactly in the span of the boundary-condition-satisfying basis.
//!
//! Gradients are handwritten reverse-mode: pointwise maps transpose, the
//! transforms are linear so their adjoints are the transposed coefficient
//! maps, and GeLU uses its analytic derivative (exact erf form).

use crate::chebyshev::{self, GridSpec, PhysicalField};
use crate::compacting::{BoundaryCondition, CompactBasis};
use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::FRAC_1_SQRT_2;

/// Hidden width of the two-stage pointwise projection network.
pub const PROJECTION_HIDDEN_WIDTH: usize = 128;

const INV_SQRT_2PI: f64 = 0.3989422804014327;

#[inline]
pub(crate) fn gelu_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    x * gelu_cdf(x)
}

/// d/dx gelu(x) = Phi(x) + x phi(x), with `cdf` the precomputed Phi(x).
#[inline]
fn gelu_derivative(x: f64, cdf: f64) -> f64 {
    cdf + x * (-0.5 * x * x).exp() * INV_SQRT_2PI
}

/// Model hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct ModelConfig {
    /// Number of spectral kernel layers L.
    pub layers: usize,
    /// Channel width d_v of the hidden representation.
    pub width: usize,
    /// Frequency truncation M of the banded spectral weights.
    pub modes: usize,
    /// Odd band size w of the spectral weights.
    pub bandwidth: usize,
    /// Boundary condition enforced by the projection layer.
    pub bc: BoundaryCondition,
    /// Input channels d_a, including the appended coordinate channel.
    pub input_channels: usize,
    /// Output channels d_u.
    pub output_channels: usize,
}

impl ModelConfig {
    /// Default architecture: 4 layers, width 50, 40 modes, bandwidth 3,
    /// (u0, x) input, scalar output.
    pub fn with_bc(bc: BoundaryCondition) -> Self {
        ModelConfig {
            layers: 4,
            width: 50,
            modes: 40,
            bandwidth: 3,
            bc,
            input_channels: 2,
            output_channels: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.width == 0 || self.modes == 0 {
            return Err(Error::Config(
                "layers, width and modes must be positive".into(),
            ));
        }
        if self.bandwidth % 2 == 0 {
            return Err(Error::Config(format!(
                "bandwidth must be odd, got {}",
                self.bandwidth
            )));
        }
        if self.input_channels < 2 {
            return Err(Error::Config(
                "input_channels counts the coordinate channel and must be >= 2".into(),
            ));
        }
        if self.output_channels == 0 {
            return Err(Error::Config("output_channels must be >= 1".into()));
        }
        Ok(())
    }

    /// A grid of degree `n` must leave room for the truncation: M <= N - 1.
    fn check_grid(&self, n: usize) -> Result<()> {
        if self.modes > n.saturating_sub(1) {
            return Err(Error::Config(format!(
                "modes = {} requires grid degree >= {}, got {}",
                self.modes,
                self.modes + 1,
                n
            )));
        }
        Ok(())
    }
}

/// Parameters of one kernel layer.
#[derive(Debug, Clone)]
pub struct LayerParams {
    /// Banded spectral weights, layout `[mode][band][out_channel][in_channel]`
    /// with `mode < modes` and band offsets centered at zero.
    pub spectral: Vec<f64>,
    /// Pointwise (1x1) channel-mixing matrix, `width x width` row-major.
    pub point: Vec<f64>,
    /// Pointwise bias, length `width`.
    pub bias: Vec<f64>,
}

/// All learnable parameters.
#[derive(Debug, Clone)]
pub struct ModelParams {
    /// Lift matrix, `width x input_channels` row-major.
    pub lift: Vec<f64>,
    pub layers: Vec<LayerParams>,
    /// Projection hidden stage, `PROJECTION_HIDDEN_WIDTH x width`, plus bias.
    pub proj_hidden_w: Vec<f64>,
    pub proj_hidden_b: Vec<f64>,
    /// Projection output stage, `output_channels x PROJECTION_HIDDEN_WIDTH`,
    /// plus bias.
    pub proj_out_w: Vec<f64>,
    pub proj_out_b: Vec<f64>,
}

impl ModelParams {
    /// Parameter set of the right shapes, all zeros.
    pub fn zeros(config: &ModelConfig) -> Self {
        let dv = config.width;
        let h = PROJECTION_HIDDEN_WIDTH;
        ModelParams {
            lift: vec![0.0; dv * config.input_channels],
            layers: (0..config.layers)
                .map(|_| LayerParams {
                    spectral: vec![0.0; config.modes * config.bandwidth * dv * dv],
                    point: vec![0.0; dv * dv],
                    bias: vec![0.0; dv],
                })
                .collect(),
            proj_hidden_w: vec![0.0; h * dv],
            proj_hidden_b: vec![0.0; h],
            proj_out_w: vec![0.0; config.output_channels * h],
            proj_out_b: vec![0.0; config.output_channels],
        }
    }

    /// Flat views over every parameter array, in a fixed order shared with
    /// [`Self::arrays_mut`], [`Self::array_names`] and the optimizer state.
    pub fn arrays(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.lift];
        for l in &self.layers {
            v.push(&l.spectral);
            v.push(&l.point);
            v.push(&l.bias);
        }
        v.push(&self.proj_hidden_w);
        v.push(&self.proj_hidden_b);
        v.push(&self.proj_out_w);
        v.push(&self.proj_out_b);
        v
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v: Vec<&mut Vec<f64>> = vec![&mut self.lift];
        for l in &mut self.layers {
            v.push(&mut l.spectral);
            v.push(&mut l.point);
            v.push(&mut l.bias);
        }
        v.push(&mut self.proj_hidden_w);
        v.push(&mut self.proj_hidden_b);
        v.push(&mut self.proj_out_w);
        v.push(&mut self.proj_out_b);
        v
    }

    /// Stable names for checkpoint arrays, matching the [`Self::arrays`] order.
    pub fn array_names(&self) -> Vec<String> {
        let mut v = vec!["lift".to_string()];
        for i in 0..self.layers.len() {
            v.push(format!("layer{i}.spectral"));
            v.push(format!("layer{i}.point"));
            v.push(format!("layer{i}.bias"));
        }
        v.push("proj.hidden_w".to_string());
        v.push("proj.hidden_b".to_string());
        v.push("proj.out_w".to_string());
        v.push("proj.out_b".to_string());
        v
    }

    pub fn param_count(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    /// `self += scale * other`; shapes must match.
    pub fn axpy(&mut self, scale: f64, other: &ModelParams) {
        for (dst, src) in self.arrays_mut().into_iter().zip(other.arrays()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }
}

/// Deterministic scaled-uniform initialization: spectral weights on
/// `(-1, 1) / (width * bandwidth)`, pointwise stages on `(-1, 1) / fan_in`,
/// biases zero.
pub fn init_params(config: &ModelConfig, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(config);
    let dv = config.width as f64;
    fill_uniform(&mut rng, &mut params.lift, 1.0 / config.input_channels as f64);
    let spectral_scale = 1.0 / (dv * config.bandwidth as f64);
    for layer in &mut params.layers {
        fill_uniform(&mut rng, &mut layer.spectral, spectral_scale);
        fill_uniform(&mut rng, &mut layer.point, 1.0 / dv);
    }
    fill_uniform(&mut rng, &mut params.proj_hidden_w, 1.0 / dv);
    fill_uniform(
        &mut rng,
        &mut params.proj_out_w,
        1.0 / PROJECTION_HIDDEN_WIDTH as f64,
    );
    params
}

fn fill_uniform(rng: &mut ChaCha8Rng, dst: &mut [f64], scale: f64) {
    for v in dst {
        *v = rng.random_range(-scale..scale);
    }
}

/// Channel-major sample buffer: `ch` rows of `pts` values.
#[derive(Debug, Clone)]
pub(crate) struct Channels {
    pub ch: usize,
    pub pts: usize,
    pub data: Vec<f64>,
}

impl Channels {
    pub fn zeros(ch: usize, pts: usize) -> Self {
        Channels {
            ch,
            pts,
            data: vec![0.0; ch * pts],
        }
    }

    #[inline]
    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.pts..(c + 1) * self.pts]
    }

    #[inline]
    pub fn row_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.pts..(c + 1) * self.pts]
    }
}

/// `out[co] += W[co][ci] * input[ci]` over all points; `W` is row-major.
fn matmul_acc(out: &mut Channels, w: &[f64], input: &Channels) {
    let (co_n, ci_n, pts) = (out.ch, input.ch, out.pts);
    debug_assert_eq!(w.len(), co_n * ci_n);
    for co in 0..co_n {
        let out_row = &mut out.data[co * pts..(co + 1) * pts];
        for ci in 0..ci_n {
            let coeff = w[co * ci_n + ci];
            let in_row = &input.data[ci * pts..(ci + 1) * pts];
            for (o, v) in out_row.iter_mut().zip(in_row) {
                *o += coeff * v;
            }
        }
    }
}

/// `dw[co][ci] += sum_j a[co][j] b[ci][j]` (outer-product accumulation).
fn matmul_grad_acc(dw: &mut [f64], a: &Channels, b: &Channels) {
    let (co_n, ci_n, pts) = (a.ch, b.ch, a.pts);
    debug_assert_eq!(dw.len(), co_n * ci_n);
    for co in 0..co_n {
        let a_row = a.row(co);
        for ci in 0..ci_n {
            let b_row = &b.data[ci * pts..(ci + 1) * pts];
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            dw[co * ci_n + ci] += acc;
        }
    }
}

/// `out[ci] += W[co][ci] * g[co]` (transposed pointwise map).
fn matmul_transpose_acc(out: &mut Channels, w: &[f64], g: &Channels) {
    let (co_n, ci_n, pts) = (g.ch, out.ch, out.pts);
    debug_assert_eq!(w.len(), co_n * ci_n);
    for co in 0..co_n {
        let g_row = &g.data[co * pts..(co + 1) * pts];
        for ci in 0..ci_n {
            let coeff = w[co * ci_n + ci];
            let out_row = &mut out.data[ci * pts..(ci + 1) * pts];
            for (o, v) in out_row.iter_mut().zip(g_row) {
                *o += coeff * v;
            }
        }
    }
}

/// Whether the forward pass records the activations needed for gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    Inference,
    Training,
}

struct LayerTape {
    v_in: Channels,
    /// Chebyshev coefficients of `v_in` on the mixed modes, `modes x width`
    /// row-major `[mode][channel]`.
    alpha_modes: Vec<f64>,
    z: Channels,
    /// GeLU CDF factors Phi(z), kept so the backward pass skips the erf.
    cdf: Channels,
}

/// Intermediate activations recorded by a training-mode forward pass.
pub struct ActivationTape {
    grid: GridSpec,
    input: Channels,
    layers: Vec<LayerTape>,
    v_last: Channels,
    h_pre: Channels,
    h_cdf: Channels,
}

/// Banded channel-mixing in coefficient space. `alpha_modes`/`beta_modes`
/// are `modes x width` blocks; band offsets leaving `[0, modes)` contribute
/// nothing, so coefficients at or above the truncation never enter.
fn band_mix(
    spectral: &[f64],
    alpha_modes: &[f64],
    beta_modes: &mut [f64],
    modes: usize,
    bandwidth: usize,
    dv: usize,
) {
    beta_modes.fill(0.0);
    let half = (bandwidth - 1) / 2;
    for m in 0..modes {
        let out_row = &mut beta_modes[m * dv..(m + 1) * dv];
        for b in 0..bandwidth {
            let mm = m as isize + b as isize - half as isize;
            if mm < 0 || mm >= modes as isize {
                continue;
            }
            let in_row = &alpha_modes[mm as usize * dv..(mm as usize + 1) * dv];
            let w_base = (m * bandwidth + b) * dv * dv;
            for (co, out) in out_row.iter_mut().enumerate() {
                let w_row = &spectral[w_base + co * dv..w_base + (co + 1) * dv];
                let mut acc = 0.0;
                for (wv, av) in w_row.iter().zip(in_row) {
                    acc += wv * av;
                }
                *out += acc;
            }
        }
    }
}

/// Adjoint of [`band_mix`]: accumulates the spectral-weight gradient and the
/// gradient with respect to the input modes.
#[allow(clippy::too_many_arguments)]
fn band_mix_backward(
    spectral: &[f64],
    d_spectral: &mut [f64],
    alpha_modes: &[f64],
    g_beta_modes: &[f64],
    g_alpha_modes: &mut [f64],
    modes: usize,
    bandwidth: usize,
    dv: usize,
) {
    g_alpha_modes.fill(0.0);
    let half = (bandwidth - 1) / 2;
    for m in 0..modes {
        let g_out = &g_beta_modes[m * dv..(m + 1) * dv];
        for b in 0..bandwidth {
            let mm = m as isize + b as isize - half as isize;
            if mm < 0 || mm >= modes as isize {
                continue;
            }
            let mm = mm as usize;
            let w_base = (m * bandwidth + b) * dv * dv;
            for (co, &g) in g_out.iter().enumerate() {
                let w_row = &spectral[w_base + co * dv..w_base + (co + 1) * dv];
                let dw_row = &mut d_spectral[w_base + co * dv..w_base + (co + 1) * dv];
                let in_row = &alpha_modes[mm * dv..(mm + 1) * dv];
                let g_in = &mut g_alpha_modes[mm * dv..(mm + 1) * dv];
                for ci in 0..dv {
                    dw_row[ci] += g * in_row[ci];
                    g_in[ci] += g * w_row[ci];
                }
            }
        }
    }
}

/// One spectral kernel application for all channels: Chebyshev forward,
/// banded mix on the low modes, inverse Shen transform. Returns the kernel
/// output field and the `modes x width` coefficient block of the input.
fn spectral_kernel(
    v: &Channels,
    spectral: &[f64],
    config: &ModelConfig,
    basis: &CompactBasis,
) -> (Channels, Vec<f64>) {
    let pts = v.pts;
    let n = pts - 1;
    let dv = v.ch;
    let modes = config.modes;

    let mut alpha_modes = vec![0.0; modes * dv];
    let mut alpha = vec![0.0; pts];
    for c in 0..dv {
        chebyshev::forward_slice(v.row(c), &mut alpha);
        for (m, row) in alpha_modes.chunks_exact_mut(dv).enumerate() {
            row[c] = alpha[m];
        }
    }

    let mut beta_modes = vec![0.0; modes * dv];
    band_mix(
        spectral,
        &alpha_modes,
        &mut beta_modes,
        modes,
        config.bandwidth,
        dv,
    );

    let mut out = Channels::zeros(dv, pts);
    let mut beta = vec![0.0; n - 1];
    let mut alpha_out = vec![0.0; pts];
    for c in 0..dv {
        beta.fill(0.0);
        for (m, row) in beta_modes.chunks_exact(dv).enumerate() {
            beta[m] = row[c];
        }
        basis.backward_slice(&beta, &mut alpha_out);
        chebyshev::backward_slice(&alpha_out, out.row_mut(c));
    }
    (out, alpha_modes)
}

/// Adjoint of [`spectral_kernel`] with respect to its input field, plus the
/// spectral-weight gradient.
fn spectral_kernel_backward(
    g_out: &Channels,
    spectral: &[f64],
    d_spectral: &mut [f64],
    alpha_modes: &[f64],
    config: &ModelConfig,
    basis: &CompactBasis,
) -> Channels {
    let pts = g_out.pts;
    let n = pts - 1;
    let dv = g_out.ch;
    let modes = config.modes;

    // adjoint of (inverse Chebyshev . compact backward), per channel
    let mut g_beta_modes = vec![0.0; modes * dv];
    let mut g_alpha_out = vec![0.0; pts];
    let mut g_beta = vec![0.0; n - 1];
    for c in 0..dv {
        chebyshev::backward_transpose_slice(g_out.row(c), &mut g_alpha_out);
        basis.backward_transpose_slice(&g_alpha_out, &mut g_beta);
        for (m, row) in g_beta_modes.chunks_exact_mut(dv).enumerate() {
            row[c] = g_beta[m];
        }
    }

    let mut g_alpha_modes = vec![0.0; modes * dv];
    band_mix_backward(
        spectral,
        d_spectral,
        alpha_modes,
        &g_beta_modes,
        &mut g_alpha_modes,
        modes,
        config.bandwidth,
        dv,
    );

    // adjoint of the Chebyshev forward, channel by channel
    let mut g_v = Channels::zeros(dv, pts);
    let mut g_alpha = vec![0.0; pts];
    for c in 0..dv {
        g_alpha.fill(0.0);
        for (m, row) in g_alpha_modes.chunks_exact(dv).enumerate() {
            g_alpha[m] = row[c];
        }
        chebyshev::forward_transpose_slice(&g_alpha, g_v.row_mut(c));
    }
    g_v
}

/// Project one channel onto the compact-basis span: the full Shen roundtrip
/// with modes above N-2 truncated.
pub(crate) fn span_project_slice(values: &[f64], basis: &CompactBasis, out: &mut [f64]) {
    let pts = values.len();
    let n = pts - 1;
    let mut alpha = vec![0.0; pts];
    chebyshev::forward_slice(values, &mut alpha);
    let mut beta = vec![0.0; n - 1];
    basis.forward_slice(&alpha, &mut beta);
    basis.backward_slice(&beta, &mut alpha);
    chebyshev::backward_slice(&alpha, out);
}

/// Adjoint of [`span_project_slice`].
fn span_project_transpose_slice(g: &[f64], basis: &CompactBasis, out: &mut [f64]) {
    let pts = g.len();
    let n = pts - 1;
    let mut g_alpha = vec![0.0; pts];
    chebyshev::backward_transpose_slice(g, &mut g_alpha);
    let mut g_beta = vec![0.0; n - 1];
    basis.backward_transpose_slice(&g_alpha, &mut g_beta);
    basis.forward_transpose_slice(&g_beta, &mut g_alpha);
    chebyshev::forward_transpose_slice(&g_alpha, out);
}

/// Stack the sample with the grid coordinate as the model input channels.
fn featurize(input: &PhysicalField, config: &ModelConfig) -> Result<Channels> {
    if config.input_channels != 2 {
        return Err(Error::Config(format!(
            "model_forward expects input_channels = 2 (sample + coordinate), got {}",
            config.input_channels
        )));
    }
    let pts = input.grid.len();
    let mut ch = Channels::zeros(2, pts);
    ch.row_mut(0).copy_from_slice(&input.values);
    ch.row_mut(1).copy_from_slice(input.grid.nodes());
    Ok(ch)
}

/// Forward evaluation. In training mode the returned tape records the
/// activations needed by [`model_backward`].
pub fn model_forward(
    input: &PhysicalField,
    params: &ModelParams,
    config: &ModelConfig,
    mode: ForwardMode,
) -> Result<(PhysicalField, Option<ActivationTape>)> {
    config.validate()?;
    let n = input.grid.degree();
    config.check_grid(n)?;
    let pts = n + 1;
    let dv = config.width;
    let basis = CompactBasis::new(config.bc, n - 1)?;
    let input_ch = featurize(input, config)?;

    // lift
    let mut v = Channels::zeros(dv, pts);
    matmul_acc(&mut v, &params.lift, &input_ch);

    let record = mode == ForwardMode::Training;
    let mut layer_tapes = Vec::with_capacity(if record { config.layers } else { 0 });

    for layer in &params.layers {
        let (kernel, alpha_modes) = spectral_kernel(&v, &layer.spectral, config, &basis);
        // z = W v + bias + kernel
        let mut z = kernel;
        for c in 0..dv {
            let b = layer.bias[c];
            for zv in z.row_mut(c) {
                *zv += b;
            }
        }
        matmul_acc(&mut z, &layer.point, &v);
        // v' = v + gelu(z)
        let mut cdf = Channels::zeros(dv, pts);
        let mut v_next = v.clone();
        for (i, (zv, cv)) in z.data.iter().zip(cdf.data.iter_mut()).enumerate() {
            *cv = gelu_cdf(*zv);
            v_next.data[i] += zv * *cv;
        }
        if record {
            layer_tapes.push(LayerTape {
                v_in: v,
                alpha_modes,
                z,
                cdf,
            });
        }
        v = v_next;
    }

    // projection head: two pointwise stages, then the span projection
    let h = PROJECTION_HIDDEN_WIDTH;
    let mut h_pre = Channels::zeros(h, pts);
    for c in 0..h {
        h_pre.row_mut(c).fill(params.proj_hidden_b[c]);
    }
    matmul_acc(&mut h_pre, &params.proj_hidden_w, &v);
    let mut h_cdf = Channels::zeros(h, pts);
    let mut h_act = Channels::zeros(h, pts);
    for ((hp, hc), ha) in h_pre
        .data
        .iter()
        .zip(h_cdf.data.iter_mut())
        .zip(h_act.data.iter_mut())
    {
        *hc = gelu_cdf(*hp);
        *ha = hp * *hc;
    }
    let du = config.output_channels;
    let mut y = Channels::zeros(du, pts);
    for c in 0..du {
        y.row_mut(c).fill(params.proj_out_b[c]);
    }
    matmul_acc(&mut y, &params.proj_out_w, &h_act);

    let mut out = Channels::zeros(du, pts);
    for c in 0..du {
        span_project_slice(y.row(c), &basis, out.row_mut(c));
    }

    let out_field = PhysicalField::new(input.grid.clone(), out.row(0).to_vec())?;
    let tape = if record {
        Some(ActivationTape {
            grid: input.grid.clone(),
            input: input_ch,
            layers: layer_tapes,
            v_last: v,
            h_pre,
            h_cdf,
        })
    } else {
        None
    };
    Ok((out_field, tape))
}

/// Reverse-mode gradients. `output_gradient` is the loss gradient with
/// respect to the model output, `output_channels x points` row-major.
/// Returns the parameter gradients (same shapes as the parameters) and the
/// gradient with respect to the featurized input channels.
pub fn model_backward(
    tape: &ActivationTape,
    params: &ModelParams,
    config: &ModelConfig,
    output_gradient: &[f64],
) -> Result<(ModelParams, Vec<f64>)> {
    let pts = tape.grid.len();
    let n = tape.grid.degree();
    let du = config.output_channels;
    let dv = config.width;
    let h = PROJECTION_HIDDEN_WIDTH;
    if output_gradient.len() != du * pts {
        return Err(Error::ShapeMismatch {
            context: "model_backward output gradient",
            expected: du * pts,
            got: output_gradient.len(),
        });
    }
    if tape.layers.len() != params.layers.len() {
        return Err(Error::ShapeMismatch {
            context: "model_backward tape layers",
            expected: params.layers.len(),
            got: tape.layers.len(),
        });
    }
    let basis = CompactBasis::new(config.bc, n - 1)?;
    let mut grads = ModelParams::zeros(config);

    // back through the span projection
    let mut g_y = Channels::zeros(du, pts);
    for c in 0..du {
        span_project_transpose_slice(
            &output_gradient[c * pts..(c + 1) * pts],
            &basis,
            g_y.row_mut(c),
        );
    }

    // back through the projection head
    let mut h_act = Channels::zeros(h, pts);
    for ((hp, hc), ha) in tape
        .h_pre
        .data
        .iter()
        .zip(tape.h_cdf.data.iter())
        .zip(h_act.data.iter_mut())
    {
        *ha = hp * hc;
    }
    matmul_grad_acc(&mut grads.proj_out_w, &g_y, &h_act);
    for c in 0..du {
        grads.proj_out_b[c] += g_y.row(c).iter().sum::<f64>();
    }
    let mut g_h_pre = Channels::zeros(h, pts);
    matmul_transpose_acc(&mut g_h_pre, &params.proj_out_w, &g_y);
    for ((g, &hp), &hc) in g_h_pre
        .data
        .iter_mut()
        .zip(tape.h_pre.data.iter())
        .zip(tape.h_cdf.data.iter())
    {
        *g *= gelu_derivative(hp, hc);
    }
    matmul_grad_acc(&mut grads.proj_hidden_w, &g_h_pre, &tape.v_last);
    for c in 0..h {
        grads.proj_hidden_b[c] += g_h_pre.row(c).iter().sum::<f64>();
    }
    let mut g_v = Channels::zeros(dv, pts);
    matmul_transpose_acc(&mut g_v, &params.proj_hidden_w, &g_h_pre);

    // back through the kernel layers
    for idx in (0..params.layers.len()).rev() {
        let layer = &params.layers[idx];
        let lt = &tape.layers[idx];
        let gl = &mut grads.layers[idx];
        // dz = gelu'(z) .* g_v
        let mut dz = Channels::zeros(dv, pts);
        for ((d, (&zv, &cv)), &g) in dz
            .data
            .iter_mut()
            .zip(lt.z.data.iter().zip(lt.cdf.data.iter()))
            .zip(g_v.data.iter())
        {
            *d = g * gelu_derivative(zv, cv);
        }
        matmul_grad_acc(&mut gl.point, &dz, &lt.v_in);
        for c in 0..dv {
            gl.bias[c] += dz.row(c).iter().sum::<f64>();
        }
        // g_v <- g_v (skip) + W^T dz + K^T dz
        matmul_transpose_acc(&mut g_v, &layer.point, &dz);
        let g_kernel = spectral_kernel_backward(
            &dz,
            &layer.spectral,
            &mut gl.spectral,
            &lt.alpha_modes,
            config,
            &basis,
        );
        for (g, k) in g_v.data.iter_mut().zip(g_kernel.data.iter()) {
            *g += k;
        }
    }

    // back through the lift
    matmul_grad_acc(&mut grads.lift, &g_v, &tape.input);
    let mut g_input = Channels::zeros(config.input_channels, pts);
    matmul_transpose_acc(&mut g_input, &params.lift, &g_v);

    Ok((grads, g_input.data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chebyshev::{cheb_forward_fast, ChebCoeffs};
    use crate::compacting::CompactCoeffs;

    fn small_config(bc: BoundaryCondition) -> ModelConfig {
        ModelConfig {
            layers: 2,
            width: 4,
            modes: 8,
            bandwidth: 3,
            bc,
            input_channels: 2,
            output_channels: 1,
        }
    }

    fn random_field(n: usize, seed: u64) -> PhysicalField {
        let grid = GridSpec::new(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..=n).map(|_| rng.random_range(-1.0..1.0)).collect();
        PhysicalField::new(grid, values).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seeded() {
        let config = small_config(BoundaryCondition::neumann());
        let a = init_params(&config, 42);
        let b = init_params(&config, 42);
        for (x, y) in a.arrays().iter().zip(b.arrays().iter()) {
            assert_eq!(x, y);
        }
        let c = init_params(&config, 43);
        assert!(a.arrays().iter().zip(c.arrays().iter()).any(|(x, y)| x != y));
    }

    #[test]
    fn zero_params_give_zero_output() {
        let config = small_config(BoundaryCondition::neumann());
        let params = ModelParams::zeros(&config);
        let input = random_field(16, 1);
        let (out, tape) = model_forward(&input, &params, &config, ForwardMode::Inference).unwrap();
        assert!(tape.is_none());
        assert!(out.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_finite_and_bounded_at_default_config() {
        let config = ModelConfig::with_bc(BoundaryCondition::neumann());
        let params = init_params(&config, 7);
        let n = 64;
        let grid = GridSpec::new(n).unwrap();
        let mut values: Vec<f64> = grid.nodes().iter().map(|&x| (2.0 * x).cos()).collect();
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut values {
            *v /= norm;
        }
        let input = PhysicalField::new(grid, values).unwrap();
        let (out, _) = model_forward(&input, &params, &config, ForwardMode::Inference).unwrap();
        let out_norm = out.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(out_norm.is_finite());
        assert!(out_norm < 1e3, "out norm {out_norm}");
    }

    #[test]
    fn structural_boundary_guarantee_random_params() {
        for bc in [
            BoundaryCondition::dirichlet(),
            BoundaryCondition::neumann(),
            BoundaryCondition::new(2.0, 1.0, 3.0, -1.0).unwrap(),
        ] {
            let config = small_config(bc);
            for draw in 0..5u64 {
                let params = init_params(&config, 100 + draw);
                let input = random_field(64, draw);
                let (out, _) =
                    model_forward(&input, &params, &config, ForwardMode::Inference).unwrap();
                let alpha = cheb_forward_fast(&out);
                let scale = out.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                let r = bc.max_residual(&alpha);
                assert!(r <= 1e-9 * scale, "{bc:?} draw {draw}: residual {r}");
            }
        }
    }

    /// Kernel identity example: width 1, bandwidth 1, A = 1 on every mode.
    /// The kernel then equals the inverse Shen transform of the first N-2
    /// Chebyshev coefficients read as compact coefficients; checked against
    /// that explicit composition at N = 8.
    #[test]
    fn kernel_identity_matches_dense_composition() {
        let n = 8;
        let bc = BoundaryCondition::neumann();
        let config = ModelConfig {
            layers: 1,
            width: 1,
            modes: n - 1,
            bandwidth: 1,
            bc,
            input_channels: 2,
            output_channels: 1,
        };
        let basis = CompactBasis::new(bc, n - 1).unwrap();
        let spectral = vec![1.0; config.modes];

        let field = random_field(n, 3);
        let mut v = Channels::zeros(1, n + 1);
        v.row_mut(0).copy_from_slice(&field.values);
        let (kernel_out, _) = spectral_kernel(&v, &spectral, &config, &basis);

        let alpha = cheb_forward_fast(&field);
        let beta = CompactCoeffs::new(alpha.coeffs[..n - 1].to_vec());
        let oracle = crate::compacting::shen_backward(&beta, &bc, &field.grid).unwrap();
        for (a, b) in kernel_out.row(0).iter().zip(&oracle.values) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn kernel_ignores_modes_at_and_above_truncation() {
        let n = 32;
        let bc = BoundaryCondition::neumann();
        let config = small_config(bc);
        let basis = CompactBasis::new(bc, n - 1).unwrap();
        let params = init_params(&config, 5);
        let grid = GridSpec::new(n).unwrap();

        let mut coeffs = vec![0.0; n + 1];
        for (i, c) in coeffs.iter_mut().enumerate().take(config.modes) {
            *c = 1.0 / (1 + i) as f64;
        }
        let base = chebyshev::cheb_backward(&ChebCoeffs::new(coeffs.clone()), &grid).unwrap();
        for (i, c) in coeffs.iter_mut().enumerate().skip(config.modes) {
            *c = 0.3 * ((i * 7 + 1) as f64).sin();
        }
        let perturbed = chebyshev::cheb_backward(&ChebCoeffs::new(coeffs), &grid).unwrap();

        let run = |f: &PhysicalField| {
            let mut v = Channels::zeros(config.width, n + 1);
            for c in 0..config.width {
                v.row_mut(c).copy_from_slice(&f.values);
            }
            let (out, _) = spectral_kernel(&v, &params.layers[0].spectral, &config, &basis);
            out
        };
        let a = run(&base);
        let b = run(&perturbed);
        let scale = a.data.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() <= 1e-11 * scale);
        }
    }

    #[test]
    fn kernel_zero_weights_give_zero_field() {
        let n = 16;
        let bc = BoundaryCondition::dirichlet();
        let config = small_config(bc);
        let basis = CompactBasis::new(bc, n - 1).unwrap();
        let mut v = Channels::zeros(config.width, n + 1);
        let f = random_field(n, 11);
        for c in 0..config.width {
            v.row_mut(c).copy_from_slice(&f.values);
        }
        let spectral = vec![0.0; config.modes * config.bandwidth * config.width * config.width];
        let (out, _) = spectral_kernel(&v, &spectral, &config, &basis);
        assert!(out.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn kernel_output_is_boundary_exact_for_any_weights() {
        let n = 48;
        let bc = BoundaryCondition::neumann();
        let config = small_config(bc);
        let basis = CompactBasis::new(bc, n - 1).unwrap();
        let params = init_params(&config, 23);
        let mut v = Channels::zeros(config.width, n + 1);
        for c in 0..config.width {
            v.row_mut(c)
                .copy_from_slice(&random_field(n, 40 + c as u64).values);
        }
        let (out, _) = spectral_kernel(&v, &params.layers[1].spectral, &config, &basis);
        for c in 0..config.width {
            let alpha = ChebCoeffs::new({
                let mut a = vec![0.0; n + 1];
                chebyshev::forward_slice(out.row(c), &mut a);
                a
            });
            let scale = out.row(c).iter().fold(1.0f64, |m, x| m.max(x.abs()));
            assert!(bc.max_residual(&alpha) <= 1e-9 * scale.max(1e-3));
        }
    }

    #[test]
    fn projection_is_idempotent_on_span() {
        let n = 24;
        let bc = BoundaryCondition::neumann();
        let basis = CompactBasis::new(bc, n - 1).unwrap();
        let grid = GridSpec::new(n).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let beta = CompactCoeffs::new((0..n - 1).map(|_| rng.random_range(-1.0..1.0)).collect());
        let u = crate::compacting::shen_backward(&beta, &bc, &grid).unwrap();
        let mut once = vec![0.0; n + 1];
        span_project_slice(&u.values, &basis, &mut once);
        let scale = u.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in once.iter().zip(&u.values) {
            assert!((a - b).abs() <= 1e-11 * scale);
        }
    }

    #[test]
    fn residual_layer_with_zero_params_preserves_hidden_state() {
        let config = small_config(BoundaryCondition::neumann());
        let params = ModelParams::zeros(&config);
        let n = 16;
        let basis = CompactBasis::new(config.bc, n - 1).unwrap();
        let mut v = Channels::zeros(config.width, n + 1);
        let f = random_field(n, 11);
        for c in 0..config.width {
            v.row_mut(c).copy_from_slice(&f.values);
        }
        let (kernel, _) = spectral_kernel(&v, &params.layers[0].spectral, &config, &basis);
        assert!(kernel.data.iter().all(|&k| k == 0.0));
        // z = 0 -> gelu(z) = 0 -> v' = v
        let mut v_next = v.clone();
        for (vn, zv) in v_next.data.iter_mut().zip(kernel.data.iter()) {
            *vn += gelu(*zv);
        }
        assert_eq!(v_next.data, v.data);
    }

    #[test]
    fn lift_examples() {
        let config = small_config(BoundaryCondition::neumann());
        let n = 8;
        let input = random_field(n, 4);
        let input_ch = featurize(&input, &config).unwrap();
        // identity block: first channel copies the sample
        let mut lift = vec![0.0; config.width * 2];
        lift[0] = 1.0;
        let mut v = Channels::zeros(config.width, n + 1);
        matmul_acc(&mut v, &lift, &input_ch);
        assert_eq!(v.row(0), &input.values[..]);
        assert!(v.row(1).iter().all(|&x| x == 0.0));
        // zero lift -> zero hidden field
        let mut v0 = Channels::zeros(config.width, n + 1);
        matmul_acc(&mut v0, &vec![0.0; config.width * 2], &input_ch);
        assert!(v0.data.iter().all(|&x| x == 0.0));
        // linearity in the input
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for x in lift.iter_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
        let mut v1 = Channels::zeros(config.width, n + 1);
        matmul_acc(&mut v1, &lift, &input_ch);
        let mut doubled = input_ch.clone();
        for d in doubled.data.iter_mut() {
            *d *= 2.0;
        }
        let mut v2 = Channels::zeros(config.width, n + 1);
        matmul_acc(&mut v2, &lift, &doubled);
        for (a, b) in v1.data.iter().zip(&v2.data) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_zero_gradient_gives_zero_grads() {
        let config = small_config(BoundaryCondition::neumann());
        let params = init_params(&config, 1);
        let input = random_field(16, 1);
        let (_, tape) = model_forward(&input, &params, &config, ForwardMode::Training).unwrap();
        let tape = tape.unwrap();
        let (grads, g_in) = model_backward(&tape, &params, &config, &vec![0.0; 17]).unwrap();
        for arr in grads.arrays() {
            assert!(arr.iter().all(|&g| g == 0.0));
        }
        assert!(g_in.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_is_linear_in_output_gradient() {
        let config = small_config(BoundaryCondition::neumann());
        let params = init_params(&config, 2);
        let input = random_field(16, 8);
        let (_, tape) = model_forward(&input, &params, &config, ForwardMode::Training).unwrap();
        let tape = tape.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g1: Vec<f64> = (0..17).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g2: Vec<f64> = (0..17).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mix: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| 0.5 * a - 2.0 * b).collect();
        let (ga, _) = model_backward(&tape, &params, &config, &g1).unwrap();
        let (gb, _) = model_backward(&tape, &params, &config, &g2).unwrap();
        let (gm, _) = model_backward(&tape, &params, &config, &mix).unwrap();
        for ((a, b), m) in ga.arrays().iter().zip(gb.arrays()).zip(gm.arrays()) {
            for ((x, y), z) in a.iter().zip(b.iter()).zip(m.iter()) {
                let want = 0.5 * x - 2.0 * y;
                assert!((want - z).abs() <= 1e-11 * want.abs().max(1e-3));
            }
        }
    }

    /// Central-difference oracle over the parameters, loss = 0.5 ||out||^2,
    /// at the small gradient-check configuration.
    #[test]
    fn gradients_match_finite_differences() {
        let config = small_config(BoundaryCondition::neumann());
        let mut params = init_params(&config, 12);
        let input = random_field(16, 6);

        let loss = |p: &ModelParams| -> f64 {
            let (out, _) = model_forward(&input, p, &config, ForwardMode::Inference).unwrap();
            0.5 * out.values.iter().map(|v| v * v).sum::<f64>()
        };
        let (out, tape) = model_forward(&input, &params, &config, ForwardMode::Training).unwrap();
        let tape = tape.unwrap();
        let (grads, _) = model_backward(&tape, &params, &config, &out.values).unwrap();

        let h = 1e-5;
        let g_arrays: Vec<Vec<f64>> = grads.arrays().iter().map(|a| a.to_vec()).collect();
        let mut worst: f64 = 0.0;
        let mut checked = 0usize;
        for (ai, ga) in g_arrays.iter().enumerate() {
            // stride keeps the unit test quick; train::gradcheck sweeps all
            let stride = (ga.len() / 40).max(1);
            for i in (0..ga.len()).step_by(stride) {
                let orig = params.arrays()[ai][i];
                params.arrays_mut()[ai][i] = orig + h;
                let lp = loss(&params);
                params.arrays_mut()[ai][i] = orig - h;
                let lm = loss(&params);
                params.arrays_mut()[ai][i] = orig;
                let fd = (lp - lm) / (2.0 * h);
                if fd.abs() > 1e-7 {
                    worst = worst.max((ga[i] - fd).abs() / fd.abs());
                    checked += 1;
                }
            }
        }
        assert!(checked > 50, "only {checked} gradients were sizable");
        assert!(worst <= 1e-5, "worst relative gradient error {worst}");
    }

    #[test]
    fn gradcheck_covers_input_gradient() {
        let config = small_config(BoundaryCondition::neumann());
        let params = init_params(&config, 3);
        let mut input = random_field(16, 9);
        let loss = |f: &PhysicalField| -> f64 {
            let (out, _) = model_forward(f, &params, &config, ForwardMode::Inference).unwrap();
            0.5 * out.values.iter().map(|v| v * v).sum::<f64>()
        };
        let (out, tape) = model_forward(&input, &params, &config, ForwardMode::Training).unwrap();
        let (_, g_in) = model_backward(&tape.unwrap(), &params, &config, &out.values).unwrap();
        let h = 1e-5;
        for i in (0..17).step_by(3) {
            let orig = input.values[i];
            input.values[i] = orig + h;
            let lp = loss(&input);
            input.values[i] = orig - h;
            let lm = loss(&input);
            input.values[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            if fd.abs() > 1e-7 {
                assert!((g_in[i] - fd).abs() / fd.abs() <= 1e-5, "i={i}");
            }
        }
    }

    /// Band-limited input evaluated at N and 2N agrees after spectral
    /// resampling.
    #[test]
    fn resolution_consistency_on_band_limited_input() {
        let bc = BoundaryCondition::neumann();
        let config = small_config(bc);
        let params = init_params(&config, 21);
        let n = 256;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut coeffs = vec![0.0; n + 1];
        for c in coeffs.iter_mut().take(config.modes) {
            *c = rng.random_range(-1.0..1.0);
        }
        let grid_n = GridSpec::new(n).unwrap();
        let grid_2n = GridSpec::new(2 * n).unwrap();
        let f_n = chebyshev::cheb_backward(&ChebCoeffs::new(coeffs.clone()), &grid_n).unwrap();
        let mut coeffs_2n = coeffs;
        coeffs_2n.resize(2 * n + 1, 0.0);
        let f_2n = chebyshev::cheb_backward(&ChebCoeffs::new(coeffs_2n), &grid_2n).unwrap();

        let (out_n, _) = model_forward(&f_n, &params, &config, ForwardMode::Inference).unwrap();
        let (out_2n, _) = model_forward(&f_2n, &params, &config, ForwardMode::Inference).unwrap();
        let a2 = cheb_forward_fast(&out_2n);
        let down = chebyshev::cheb_backward(&ChebCoeffs::new(a2.coeffs[..n + 1].to_vec()), &grid_n)
            .unwrap();
        let scale = out_n.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in out_n.values.iter().zip(&down.values) {
            assert!((a - b).abs() <= 1e-8 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn adjoint_consistency_of_span_projection() {
        let n = 64;
        let bc = BoundaryCondition::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let basis = CompactBasis::new(bc, n - 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x: Vec<f64> = (0..=n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..=n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tx = vec![0.0; n + 1];
        span_project_slice(&x, &basis, &mut tx);
        let mut tty = vec![0.0; n + 1];
        span_project_transpose_slice(&y, &basis, &mut tty);
        let lhs: f64 = tx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&tty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-11 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn rejects_too_small_grid_for_modes() {
        let mut config = small_config(BoundaryCondition::neumann());
        config.modes = 40;
        let params = ModelParams::zeros(&config);
        let input = random_field(16, 0);
        assert!(model_forward(&input, &params, &config, ForwardMode::Inference).is_err());
    }
}
