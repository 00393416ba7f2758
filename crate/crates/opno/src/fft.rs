//! FFT plumbing: cached plans, the even-extension cosine kernel behind the
//! fast Chebyshev transform, and FFT-based linear convolution.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

type Plan = Arc<dyn Fft<f64>>;

fn plan_cache() -> &'static Mutex<HashMap<(usize, bool), Plan>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, bool), Plan>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Fetch (or create) a shared FFT plan. Plans are immutable and thread-safe;
/// the lock guards only the lookup.
fn plan(len: usize, inverse: bool) -> Plan {
    let mut cache = plan_cache().lock().unwrap();
    cache
        .entry((len, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        })
        .clone()
}

fn run_forward(buf: &mut [Complex<f64>]) {
    let fft = plan(buf.len(), false);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(buf, &mut scratch);
}

fn run_inverse(buf: &mut [Complex<f64>]) {
    let fft = plan(buf.len(), true);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    fft.process_with_scratch(buf, &mut scratch);
}

/// Raw cosine sums via an even extension of length 2N:
///
///   out[n] = x[0] + (-1)^n x[N] + 2 * sum_{j=1}^{N-1} x[j] cos(pi n j / N)
///
/// for n = 0..=N, where N = x.len() - 1. Both the forward and the backward
/// Chebyshev transform reduce to this kernel with diagonal scalings.
pub(crate) fn cosine_raw_into(x: &[f64], out: &mut [f64]) {
    let n = x.len() - 1;
    debug_assert!(n >= 1);
    debug_assert_eq!(out.len(), n + 1);
    let len = 2 * n;
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    for (j, &v) in x.iter().enumerate() {
        buf[j].re = v;
    }
    for j in 1..n {
        buf[len - j].re = x[j];
    }
    run_forward(&mut buf);
    for (k, o) in out.iter_mut().enumerate() {
        *o = buf[k].re;
    }
}

/// Full linear convolution of two real vectors, computed by zero-padding both
/// inputs to their combined length, multiplying forward FFTs and inverting.
/// The result has length `x.len() + s.len() - 1`.
pub fn linear_convolution_fft(x: &[f64], s: &[f64]) -> Vec<f64> {
    if x.is_empty() || s.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + s.len() - 1;
    let len = x.len() + s.len();
    let mut fx = vec![Complex::new(0.0, 0.0); len];
    let mut fs = vec![Complex::new(0.0, 0.0); len];
    for (b, &v) in fx.iter_mut().zip(x) {
        b.re = v;
    }
    for (b, &v) in fs.iter_mut().zip(s) {
        b.re = v;
    }
    run_forward(&mut fx);
    run_forward(&mut fs);
    for (a, b) in fx.iter_mut().zip(&fs) {
        *a *= b;
    }
    run_inverse(&mut fx);
    let scale = 1.0 / len as f64;
    fx.iter().take(out_len).map(|c| c.re * scale).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convolution_hand_example() {
        // [1,2] * [1,1] = [1,3,2]
        let y = linear_convolution_fft(&[1.0, 2.0], &[1.0, 1.0]);
        assert_eq!(y.len(), 3);
        for (a, b) in y.iter().zip([1.0, 3.0, 2.0]) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn convolution_identity_kernel() {
        let s = [3.0, -1.0, 2.5, 0.25];
        let y = linear_convolution_fft(&[1.0, 0.0, 0.0, 0.0], &s);
        assert_eq!(y.len(), 7);
        for (i, v) in y.iter().enumerate() {
            let want = if i < s.len() { s[i] } else { 0.0 };
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn convolution_matches_direct_sum() {
        // Independent O(N^2) oracle.
        fn direct(x: &[f64], s: &[f64]) -> Vec<f64> {
            let mut out = vec![0.0; x.len() + s.len() - 1];
            for (i, &a) in x.iter().enumerate() {
                for (j, &b) in s.iter().enumerate() {
                    out[i + j] += a * b;
                }
            }
            out
        }
        let mut state = 0x2545F4914F6CDD1Du64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let x: Vec<f64> = (0..512).map(|_| next()).collect();
        let s: Vec<f64> = (0..512).map(|_| next()).collect();
        let fast = linear_convolution_fft(&x, &s);
        let slow = direct(&x, &s);
        let scale = slow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-11 * scale.max(1.0));
        }
    }
}
