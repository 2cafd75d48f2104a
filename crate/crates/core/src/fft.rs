//! Radix-2 FFT and circular convolution / correlation of real sequences.
//!
//! Every fast routine has a direct `O(d^2)` counterpart; the fast path is used
//! only for power-of-two lengths.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{dim_err, Result};
use crate::tensor::Scalar;

static FALLBACK_NOTICED: AtomicBool = AtomicBool::new(false);

fn notice_fallback(d: usize) {
    if !FALLBACK_NOTICED.swap(true, Ordering::Relaxed) {
        log::info!("circular convolution length {d} is not a power of two; using the direct O(d^2) path");
    }
}

/// In-place iterative radix-2 FFT over split real/imaginary buffers.
/// `inverse` applies the conjugate transform including the `1/n` scale.
pub fn fft_in_place<T: Scalar>(re: &mut [T], im: &mut [T], inverse: bool) {
    let n = re.len();
    assert_eq!(n, im.len());
    assert!(n.is_power_of_two(), "fft length {n} is not a power of two");
    if n <= 1 {
        return;
    }

    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }

    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // Twiddles in f64 so f32 runs do not accumulate angle error.
        let step = sign * 2.0 * std::f64::consts::PI / len as f64;
        let twiddles: Vec<(T, T)> = (0..half)
            .map(|k| {
                let a = step * k as f64;
                (T::lit(a.cos()), T::lit(a.sin()))
            })
            .collect();
        for start in (0..n).step_by(len) {
            for (k, &(wr, wi)) in twiddles.iter().enumerate() {
                let i = start + k;
                let j = i + half;
                let tr = re[j] * wr - im[j] * wi;
                let ti = re[j] * wi + im[j] * wr;
                re[j] = re[i] - tr;
                im[j] = im[i] - ti;
                re[i] = re[i] + tr;
                im[i] = im[i] + ti;
            }
        }
        len <<= 1;
    }

    if inverse {
        let scale = T::one() / T::lit(n as f64);
        re.iter_mut().for_each(|v| *v = *v * scale);
        im.iter_mut().for_each(|v| *v = *v * scale);
    }
}

fn check_lengths<T>(a: &[T], b: &[T]) -> Result<()> {
    if a.len() != b.len() {
        return Err(dim_err!(
            "circular convolution operands differ in length: {} vs {}",
            a.len(),
            b.len()
        ));
    }
    if a.is_empty() {
        return Err(dim_err!("circular convolution of empty sequences"));
    }
    Ok(())
}

/// `out[k] = sum_j a[j] * b[(k - j) mod d]`, computed directly.
pub fn circular_convolve_direct<T: Scalar>(a: &[T], b: &[T]) -> Result<Vec<T>> {
    check_lengths(a, b)?;
    let d = a.len();
    let mut out = vec![T::zero(); d];
    for (j, &aj) in a.iter().enumerate() {
        if aj == T::zero() {
            continue;
        }
        for (m, &bm) in b.iter().enumerate() {
            let k = (j + m) % d;
            out[k] = out[k] + aj * bm;
        }
    }
    Ok(out)
}

/// `out[j] = sum_k a[k] * b[(k - j) mod d]`, computed directly.
pub fn circular_correlate_direct<T: Scalar>(a: &[T], b: &[T]) -> Result<Vec<T>> {
    check_lengths(a, b)?;
    let d = a.len();
    Ok((0..d)
        .map(|j| {
            a.iter()
                .enumerate()
                .fold(T::zero(), |acc, (k, &ak)| acc + ak * b[(k + d - j) % d])
        })
        .collect())
}

fn spectral_product<T: Scalar>(a: &[T], b: &[T], conjugate_b: bool) -> Vec<T> {
    let d = a.len();
    let (mut ar, mut ai) = (a.to_vec(), vec![T::zero(); d]);
    let (mut br, mut bi) = (b.to_vec(), vec![T::zero(); d]);
    fft_in_place(&mut ar, &mut ai, false);
    fft_in_place(&mut br, &mut bi, false);
    let mut pr = Vec::with_capacity(d);
    let mut pi = Vec::with_capacity(d);
    for k in 0..d {
        let bik = if conjugate_b { -bi[k] } else { bi[k] };
        pr.push(ar[k] * br[k] - ai[k] * bik);
        pi.push(ar[k] * bik + ai[k] * br[k]);
    }
    fft_in_place(&mut pr, &mut pi, true);
    pr
}

/// FFT circular convolution; requires a power-of-two length.
pub fn circular_convolve_fft<T: Scalar>(a: &[T], b: &[T]) -> Result<Vec<T>> {
    check_lengths(a, b)?;
    if !a.len().is_power_of_two() {
        return Err(dim_err!("FFT path needs a power-of-two length, got {}", a.len()));
    }
    Ok(spectral_product(a, b, false))
}

/// Circular convolution, via FFT when the length is a power of two.
pub fn circular_convolve<T: Scalar>(a: &[T], b: &[T]) -> Result<Vec<T>> {
    check_lengths(a, b)?;
    if a.len().is_power_of_two() {
        Ok(spectral_product(a, b, false))
    } else {
        notice_fallback(a.len());
        circular_convolve_direct(a, b)
    }
}

/// Circular cross-correlation (adjoint of convolution in its first argument).
pub fn circular_correlate<T: Scalar>(a: &[T], b: &[T]) -> Result<Vec<T>> {
    check_lengths(a, b)?;
    if a.len().is_power_of_two() {
        Ok(spectral_product(a, b, true))
    } else {
        notice_fallback(a.len());
        circular_correlate_direct(a, b)
    }
}
