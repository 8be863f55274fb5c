//! Image-to-spectrum construction.
//!
//! The frequency-domain sample paired with an image patch is its normalized,
//! DC-centered log-magnitude spectrum. Phase is discarded.

use num_complex::Complex64;

use crate::data::ImagePatch;
use crate::error::{AiftError, Result};

/// A row-major grid of complex DFT coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub height: usize,
    pub width: usize,
    pub bins: Vec<Complex64>,
}

/// Normalized log-magnitude spectrum with the DC bin moved to `(h/2, w/2)`.
/// Values lie in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyPatch {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

fn check_dims(op: &'static str, h: usize, w: usize, len: usize) -> Result<()> {
    if h == 0 || w == 0 || h * w != len {
        return Err(AiftError::dim(op, format!("{h}x{w} grid with {len} values")));
    }
    Ok(())
}

/// Unnormalized forward 2-D DFT of a real `h x w` image.
///
/// Uses the radix-2 FFT when both extents are powers of two and the direct
/// transform otherwise.
pub fn dft2(image: &[f64], height: usize, width: usize) -> Result<Spectrum> {
    check_dims("dft2", height, width, image.len())?;
    let mut bins: Vec<Complex64> = image.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    transform_2d(&mut bins, height, width, false);
    Ok(Spectrum { height, width, bins })
}

/// Forward 2-D DFT computed with direct `O(n^2)` 1-D transforms along each axis.
pub fn dft2_direct(image: &[f64], height: usize, width: usize) -> Result<Spectrum> {
    check_dims("dft2", height, width, image.len())?;
    let mut bins: Vec<Complex64> = image.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    apply_rows(&mut bins, height, width, |row| dft_direct(row, false));
    apply_cols(&mut bins, height, width, |col| dft_direct(col, false));
    Ok(Spectrum { height, width, bins })
}

/// Inverse 2-D DFT with the `1/(h w)` factor; returns the real part.
pub fn idft2(spectrum: &Spectrum) -> Result<Vec<f64>> {
    check_dims("idft2", spectrum.height, spectrum.width, spectrum.bins.len())?;
    let mut bins = spectrum.bins.clone();
    transform_2d(&mut bins, spectrum.height, spectrum.width, true);
    let scale = 1.0 / (spectrum.height * spectrum.width) as f64;
    Ok(bins.iter().map(|c| c.re * scale).collect())
}

fn transform_2d(bins: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    let one_d = |buf: &mut [Complex64]| {
        if buf.len().is_power_of_two() {
            fft_radix2(buf, inverse);
        } else {
            dft_direct(buf, inverse);
        }
    };
    apply_rows(bins, h, w, one_d);
    apply_cols(bins, h, w, one_d);
}

fn apply_rows(bins: &mut [Complex64], _h: usize, w: usize, f: impl Fn(&mut [Complex64])) {
    bins.chunks_mut(w).for_each(f);
}

fn apply_cols(bins: &mut [Complex64], h: usize, w: usize, f: impl Fn(&mut [Complex64])) {
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = bins[i * w + j];
        }
        f(&mut col);
        for i in 0..h {
            bins[i * w + j] = col[i];
        }
    }
}

fn twiddle(k: usize, n: usize, inverse: bool) -> Complex64 {
    let sign = if inverse { 1.0 } else { -1.0 };
    Complex64::from_polar(1.0, sign * 2.0 * std::f64::consts::PI * k as f64 / n as f64)
}

fn dft_direct(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    let input = buf.to_vec();
    for (k, out) in buf.iter_mut().enumerate() {
        *out = input.iter().enumerate().map(|(t, x)| x * twiddle((k * t) % n, n, inverse)).sum();
    }
}

/// In-place iterative Cooley-Tukey FFT. `buf.len()` must be a power of two.
fn fft_radix2(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    // Twiddles for the largest stage; smaller stages stride through the table.
    let table: Vec<Complex64> = (0..n / 2).map(|k| twiddle(k, n, inverse)).collect();
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let t = table[k * step] * buf[start + k + half];
                let u = buf[start + k];
                buf[start + k] = u + t;
                buf[start + k + half] = u - t;
            }
        }
        len <<= 1;
    }
}

/// Moves bin `(0, 0)` to `(h/2, w/2)`.
pub fn center_dc<T: Copy>(values: &[T], height: usize, width: usize) -> Vec<T> {
    let mut out = values.to_vec();
    for i in 0..height {
        for j in 0..width {
            out[((i + height / 2) % height) * width + (j + width / 2) % width] = values[i * width + j];
        }
    }
    out
}

/// Builds the frequency-domain sample of an image patch:
/// DFT, magnitude, `ln(1 + m)`, DC-centering, min-max to `[0, 1]`.
///
/// When every bin has the same value (an all-zero image) the result is all
/// zeros except the centered DC bin, which is set to 1.
pub fn spectrum_image(image: &ImagePatch) -> FrequencyPatch {
    let (h, w) = (image.height(), image.width());
    let spectrum = dft2(image.values(), h, w).expect("ImagePatch dimensions are validated on construction");
    let log_mag: Vec<f64> = spectrum.bins.iter().map(|c| c.norm().ln_1p()).collect();
    let centered = center_dc(&log_mag, h, w);
    let (lo, hi) = centered.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let values = if hi > lo {
        let range = hi - lo;
        centered.iter().map(|v| (v - lo) / range).collect()
    } else {
        let mut v = vec![0.0; h * w];
        v[(h / 2) * w + w / 2] = 1.0;
        v
    };
    FrequencyPatch { height: h, width: w, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Quadruple-loop DFT straight from the definition.
    fn brute_dft2(x: &[f64], h: usize, w: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for i in 0..h {
                    for j in 0..w {
                        let phase =
                            -2.0 * std::f64::consts::PI * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                        acc += Complex64::from_polar(x[i * w + j], phase);
                    }
                }
                out[u * w + v] = acc;
            }
        }
        out
    }

    fn random_image(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen::<f64>()).collect()
    }

    fn max_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn constant_image_is_dc_only() {
        let c = 0.37;
        let s = dft2(&[c; 12], 3, 4).unwrap();
        assert!((s.bins[0].re - c * 12.0).abs() < 1e-12);
        assert!(s.bins[1..].iter().all(|b| b.norm() < 1e-12));
    }

    #[test]
    fn matches_brute_force_on_4x4_and_non_power_of_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (h, w) in [(4, 4), (3, 5), (6, 4)] {
            let x = random_image(&mut rng, h * w);
            let oracle = brute_dft2(&x, h, w);
            assert!(max_err(&dft2(&x, h, w).unwrap().bins, &oracle) < 1e-9);
            assert!(max_err(&dft2_direct(&x, h, w).unwrap().bins, &oracle) < 1e-9);
        }
    }

    #[test]
    fn parseval_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_image(&mut rng, 64);
        let s = dft2(&x, 8, 8).unwrap();
        let e_space: f64 = x.iter().map(|v| v * v).sum();
        let e_freq: f64 = s.bins.iter().map(|b| b.norm_sqr()).sum::<f64>() / 64.0;
        assert!((e_space - e_freq).abs() < 1e-9);
    }

    #[test]
    fn inverse_round_trips_and_handles_trivial_spectra() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_image(&mut rng, 64);
        let back = idft2(&dft2(&x, 8, 8).unwrap()).unwrap();
        assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-9));

        let zero = Spectrum { height: 4, width: 4, bins: vec![Complex64::new(0.0, 0.0); 16] };
        assert!(idft2(&zero).unwrap().iter().all(|&v| v == 0.0));

        let mut dc = zero.clone();
        dc.bins[0] = Complex64::new(32.0, 0.0);
        assert!(idft2(&dc).unwrap().iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(dft2(&[1.0; 5], 2, 3).is_err());
        assert!(dft2(&[], 0, 0).is_err());
    }

    #[test]
    fn constant_patch_gives_single_centered_peak() {
        for c in [0.0, 0.6] {
            let patch = ImagePatch::new(8, 8, vec![c; 64]).unwrap();
            let f = spectrum_image(&patch);
            for (i, &v) in f.values.iter().enumerate() {
                let expected = if i == 4 * 8 + 4 { 1.0 } else { 0.0 };
                assert_eq!(v, expected, "bin {i} for c={c}");
            }
        }
    }

    #[test]
    fn horizontal_stripes_put_energy_on_vertical_axis() {
        // Rows alternate 0/1: cos(pi * row), energy at (u = h/2, v = 0).
        let (h, w) = (8, 8);
        let vals: Vec<f64> = (0..h * w).map(|i| ((i / w) % 2) as f64).collect();
        let f = spectrum_image(&ImagePatch::new(h, w, vals).unwrap());
        // After centering, DC sits at (4,4); u = 4 maps to row 0, column 4.
        let peak_nondc = f
            .values
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != 4 * w + 4)
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        assert_eq!(peak_nondc.0, 4);
        assert!(f.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn magnitude_is_point_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (h, w) = (16, 16);
        let patch = ImagePatch::new(h, w, random_image(&mut rng, h * w)).unwrap();
        let f = spectrum_image(&patch);
        let a = spectrum_image(&patch);
        assert_eq!(f, a);
        // Centered index (i, j) mirrors to (h - i, w - j) for i, j >= 1.
        for i in 1..h {
            for j in 1..w {
                let d = (f.values[i * w + j] - f.values[(h - i) * w + (w - j)]).abs();
                assert!(d < 1e-9);
            }
        }
    }
}
