//! Frequency-decomposition primitives: average-pool low-pass, bilinear
//! upsampling, the high/low split built from them, and a single-level
//! orthonormal 2-D Haar transform.
//!
//! All routines operate on `(batch, channel, height, width)` maps and are
//! generic over the float type so reconstruction can be checked in both
//! single and double precision.

use ndarray::{concatenate, s, Array1, Array2, Array4, Axis, Zip};
use num_traits::Float;

use crate::error::{invalid, Result};
use crate::FeatureMap;

/// The four sub-bands of one Haar analysis step.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletBands<T = f32> {
    pub ll: FeatureMap<T>,
    pub lh: FeatureMap<T>,
    pub hl: FeatureMap<T>,
    pub hh: FeatureMap<T>,
}

impl<T: Float> WaveletBands<T> {
    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v.to_f64().unwrap().powi(2))
            .sum()
    }
}

/// Result of [`split_high_low`].
#[derive(Debug, Clone, PartialEq)]
pub struct FreqSplit<T = f32> {
    pub high: FeatureMap<T>,
    pub low: FeatureMap<T>,
    pub low_up: FeatureMap<T>,
}

/// Non-overlapping `pool_k x pool_k` mean pooling.
pub fn lowpass_avg<T: Float>(f: &FeatureMap<T>, pool_k: usize) -> Result<FeatureMap<T>> {
    let (b, c, h, w) = f.dim();
    if pool_k == 0 {
        return Err(invalid("pool_k must be positive"));
    }
    if h % pool_k != 0 || w % pool_k != 0 {
        return Err(invalid(format!(
            "spatial dims {h}x{w} not divisible by pool_k={pool_k}"
        )));
    }
    if pool_k == 1 {
        return Ok(f.clone());
    }
    let (ho, wo) = (h / pool_k, w / pool_k);
    let norm = T::from(pool_k * pool_k).unwrap();
    let mut out = Array4::zeros((b, c, ho, wo));
    for ((n, ch, y, x), o) in out.indexed_iter_mut() {
        let win = f.slice(s![n, ch, y * pool_k..(y + 1) * pool_k, x * pool_k..(x + 1) * pool_k]);
        let sum = win.iter().fold(T::zero(), |acc, v| acc + *v);
        *o = sum / norm;
    }
    Ok(out)
}

/// Interpolation taps for one output coordinate: `(i0, i1, w0, w1)`.
pub(crate) type Tap = (usize, usize, f64, f64);

/// Half-pixel-centre (align-corners = false) taps for integer upscaling.
pub(crate) fn bilinear_taps(n_in: usize, scale: usize) -> Vec<Tap> {
    (0..n_in * scale)
        .map(|o| {
            let src = ((o as f64 + 0.5) / scale as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let frac = src - i0 as f64;
            (i0, i1, 1.0 - frac, frac)
        })
        .collect()
}

/// Bilinear upsampling by an integer factor with half-pixel centres,
/// edge samples clamped.
pub fn upsample_bilinear<T: Float>(f: &FeatureMap<T>, scale: usize) -> Result<FeatureMap<T>> {
    if scale < 1 {
        return Err(invalid("upsample scale must be >= 1"));
    }
    if scale == 1 {
        return Ok(f.clone());
    }
    let (b, c, h, w) = f.dim();
    let ty = bilinear_taps(h, scale);
    let tx = bilinear_taps(w, scale);
    let mut out = Array4::zeros((b, c, h * scale, w * scale));
    for ((n, ch, y, x), o) in out.indexed_iter_mut() {
        let (y0, y1, wy0, wy1) = ty[y];
        let (x0, x1, wx0, wx1) = tx[x];
        let v = |yy: usize, xx: usize| f[[n, ch, yy, xx]].to_f64().unwrap();
        let top = wx0 * v(y0, x0) + wx1 * v(y0, x1);
        let bot = wx0 * v(y1, x0) + wx1 * v(y1, x1);
        *o = T::from(wy0 * top + wy1 * bot).unwrap();
    }
    Ok(out)
}

/// Splits `f` into a pooled low-frequency map, its bilinear upsampling,
/// and the residual high-frequency detail `f - low_up`.
pub fn split_high_low<T: Float>(f: &FeatureMap<T>, pool_k: usize) -> Result<FreqSplit<T>> {
    let low = lowpass_avg(f, pool_k)?;
    let low_up = upsample_bilinear(&low, pool_k)?;
    let high = f - &low_up;
    Ok(FreqSplit { high, low, low_up })
}

/// Orthonormal single-level 2-D Haar analysis over 2x2 blocks.
pub fn dwt_haar<T: Float>(f: &FeatureMap<T>) -> Result<WaveletBands<T>> {
    let (b, c, h, w) = f.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(invalid(format!("dwt_haar needs even dims, got {h}x{w}")));
    }
    let half = T::from(0.5).unwrap();
    let shape = (b, c, h / 2, w / 2);
    let mut bands = WaveletBands {
        ll: Array4::zeros(shape),
        lh: Array4::zeros(shape),
        hl: Array4::zeros(shape),
        hh: Array4::zeros(shape),
    };
    for n in 0..b {
        for ch in 0..c {
            for y in 0..h / 2 {
                for x in 0..w / 2 {
                    let a = f[[n, ch, 2 * y, 2 * x]];
                    let bb = f[[n, ch, 2 * y, 2 * x + 1]];
                    let cc = f[[n, ch, 2 * y + 1, 2 * x]];
                    let d = f[[n, ch, 2 * y + 1, 2 * x + 1]];
                    let i = [n, ch, y, x];
                    bands.ll[i] = (a + bb + cc + d) * half;
                    bands.hl[i] = (a - bb + cc - d) * half;
                    bands.lh[i] = (a + bb - cc - d) * half;
                    bands.hh[i] = (a - bb - cc + d) * half;
                }
            }
        }
    }
    Ok(bands)
}

/// Inverse of [`dwt_haar`].
pub fn idwt_haar<T: Float>(bands: &WaveletBands<T>) -> Result<FeatureMap<T>> {
    let shape = bands.ll.dim();
    if bands.lh.dim() != shape || bands.hl.dim() != shape || bands.hh.dim() != shape {
        return Err(invalid(format!(
            "wavelet band shapes differ: ll {:?}, lh {:?}, hl {:?}, hh {:?}",
            shape,
            bands.lh.dim(),
            bands.hl.dim(),
            bands.hh.dim()
        )));
    }
    let (b, c, h, w) = shape;
    let half = T::from(0.5).unwrap();
    let mut out = Array4::zeros((b, c, 2 * h, 2 * w));
    for n in 0..b {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let i = [n, ch, y, x];
                    let (ll, lh, hl, hh) = (bands.ll[i], bands.lh[i], bands.hl[i], bands.hh[i]);
                    out[[n, ch, 2 * y, 2 * x]] = (ll + hl + lh + hh) * half;
                    out[[n, ch, 2 * y, 2 * x + 1]] = (ll - hl + lh - hh) * half;
                    out[[n, ch, 2 * y + 1, 2 * x]] = (ll + hl - lh - hh) * half;
                    out[[n, ch, 2 * y + 1, 2 * x + 1]] = (ll - hl - lh + hh) * half;
                }
            }
        }
    }
    Ok(out)
}

/// Learnable 1x1 mix used by the wavelet fusion: maps the channel
/// concatenation `[small, ll]` (2C channels) back to C channels.
#[derive(Debug, Clone, PartialEq)]
pub struct MixParams<T = f32> {
    /// `(C, 2C)`; column block `0..C` weights `small`, `C..2C` weights `ll`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Float> MixParams<T> {
    /// Pass-through of the LL band, ignoring the coarse input.
    pub fn identity(channels: usize) -> Self {
        let mut weight = Array2::zeros((channels, 2 * channels));
        for i in 0..channels {
            weight[[i, channels + i]] = T::one();
        }
        MixParams {
            weight,
            bias: Array1::zeros(channels),
        }
    }
}

/// Applies a 1x1 channel mix `out[o] = bias[o] + sum_i weight[o, i] * x[i]`.
pub(crate) fn pointwise_mix<T: Float>(x: &FeatureMap<T>, weight: &Array2<T>, bias: &Array1<T>) -> FeatureMap<T> {
    let (b, c_in, h, w) = x.dim();
    let c_out = weight.nrows();
    let mut out = Array4::zeros((b, c_out, h, w));
    for n in 0..b {
        for o in 0..c_out {
            let mut plane = out.slice_mut(s![n, o, .., ..]);
            plane.fill(bias[o]);
            for i in 0..c_in {
                let wt = weight[[o, i]];
                if wt != T::zero() {
                    Zip::from(&mut plane)
                        .and(x.slice(s![n, i, .., ..]))
                        .for_each(|p, v| *p = *p + wt * *v);
                }
            }
        }
    }
    out
}

/// Fuses a coarse map into the LL band of a finer map and inverts the
/// transform, so detail bands of the fine map pass through untouched.
pub fn mswf_fuse<T: Float>(
    small: &FeatureMap<T>,
    large: &FeatureMap<T>,
    mix: &MixParams<T>,
) -> Result<FeatureMap<T>> {
    let (bs, cs, hs, ws) = small.dim();
    let (bl, cl, hl, wl) = large.dim();
    if bs != bl || cs != cl || hl != 2 * hs || wl != 2 * ws {
        return Err(invalid(format!(
            "mswf_fuse expects large = 2x small with equal channels, got {:?} and {:?}",
            small.dim(),
            large.dim()
        )));
    }
    if mix.weight.dim() != (cs, 2 * cs) || mix.bias.len() != cs {
        return Err(invalid(format!(
            "mix weights {:?} do not match {cs} channels",
            mix.weight.dim()
        )));
    }
    let bands = dwt_haar(large)?;
    let stacked = concatenate(Axis(1), &[small.view(), bands.ll.view()]).expect("shapes checked");
    let fused_ll = pointwise_mix(&stacked, &mix.weight, &mix.bias);
    idwt_haar(&WaveletBands {
        ll: fused_ll,
        ..bands
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quad() -> Array4<f64> {
        array![[1.0, 3.0], [5.0, 7.0]].into_shape_with_order((1, 1, 2, 2)).unwrap()
    }

    fn random_map(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> Array4<f64> {
        Array4::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn lowpass_cases() {
        let c = Array4::from_elem((1, 2, 4, 6), 5.0f64);
        let low = lowpass_avg(&c, 2).unwrap();
        assert_eq!(low.dim(), (1, 2, 2, 3));
        assert!(low.iter().all(|v| *v == 5.0));
        assert_eq!(lowpass_avg(&quad(), 2).unwrap()[[0, 0, 0, 0]], 4.0);
        assert_eq!(lowpass_avg(&quad(), 1).unwrap(), quad());
        assert!(lowpass_avg(&Array4::<f64>::zeros((1, 1, 3, 4)), 2).is_err());
        assert!(lowpass_avg(&quad(), 0).is_err());
    }

    #[test]
    fn upsample_cases() {
        let c = Array4::from_elem((1, 3, 3, 5), -2.5f64);
        let up = upsample_bilinear(&c, 4).unwrap();
        assert_eq!(up.dim(), (1, 3, 12, 20));
        assert!(up.iter().all(|v| (*v + 2.5).abs() < 1e-15));
        assert_eq!(upsample_bilinear(&quad(), 1).unwrap(), quad());
        let one = Array4::from_elem((1, 1, 1, 1), 4.0f64);
        let up = upsample_bilinear(&one, 2).unwrap();
        assert_eq!(up.dim(), (1, 1, 2, 2));
        assert!(up.iter().all(|v| *v == 4.0));
        assert!(upsample_bilinear(&one, 0).is_err());
    }

    #[test]
    fn upsample_half_pixel_convention() {
        // [0, 4] upsampled by 2: centres at -0.25 (clamped), 0.25, 0.75, 1.25 (clamped)
        let row = array![[0.0f64, 4.0]].into_shape_with_order((1, 1, 1, 2)).unwrap();
        let up = upsample_bilinear(&row, 2).unwrap();
        let got: Vec<f64> = up.slice(s![0, 0, 0, ..]).to_vec();
        assert_eq!(got, vec![0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn split_cases() {
        let s = split_high_low(&quad(), 2).unwrap();
        assert!(s.low_up.iter().all(|v| *v == 4.0));
        assert_eq!(s.high, array![[-3.0, -1.0], [1.0, 3.0]].into_shape_with_order((1, 1, 2, 2)).unwrap());
        let c = Array4::from_elem((2, 3, 8, 8), 0.7f32);
        let s = split_high_low(&c, 2).unwrap();
        assert!(s.high.iter().all(|v| v.abs() <= 1e-6));
    }

    #[test]
    fn split_pool_one_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_map(&mut rng, (1, 2, 6, 6));
        let s = split_high_low(&f, 1).unwrap();
        assert_eq!(s.low, f);
        assert!(s.high.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dwt_hand_case() {
        let b = dwt_haar(&quad()).unwrap();
        assert_eq!(b.ll[[0, 0, 0, 0]], 8.0);
        assert_eq!(b.hl[[0, 0, 0, 0]], -2.0);
        assert_eq!(b.lh[[0, 0, 0, 0]], -4.0);
        assert_eq!(b.hh[[0, 0, 0, 0]], 0.0);
        assert_eq!(idwt_haar(&b).unwrap(), quad());
    }

    #[test]
    fn dwt_constant_and_errors() {
        let c = Array4::from_elem((1, 2, 4, 4), 1.5f64);
        let b = dwt_haar(&c).unwrap();
        assert!(b.ll.iter().all(|v| *v == 3.0));
        for band in [&b.lh, &b.hl, &b.hh] {
            assert!(band.iter().all(|v| *v == 0.0));
        }
        assert_eq!(idwt_haar(&b).unwrap(), c);
        assert!(dwt_haar(&Array4::<f64>::zeros((1, 1, 3, 4))).is_err());
        let mut bad = b.clone();
        bad.hh = Array4::zeros((1, 2, 2, 1));
        assert!(idwt_haar(&bad).is_err());
    }

    #[test]
    fn dwt_energy_and_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_map(&mut rng, (2, 3, 10, 6));
        let b = dwt_haar(&f).unwrap();
        let e: f64 = f.iter().map(|v| v * v).sum();
        assert!((b.energy() - e).abs() <= 1e-12 * e);
        let r = idwt_haar(&b).unwrap();
        assert!(f.iter().zip(r.iter()).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn shift_equivariance_with_wrap() {
        // periodic signal, shift by pool_k pixels with wrap-around
        let k = 2usize;
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let f = random_map(&mut rng, (1, 2, 12, 12));
        let mut shifted = f.clone();
        for ((n, c, y, x), v) in shifted.indexed_iter_mut() {
            *v = f[[n, c, (y + 12 - k) % 12, x]];
        }
        let a = split_high_low(&f, k).unwrap();
        let b = split_high_low(&shifted, k).unwrap();
        for ((n, c, y, x), v) in b.low.indexed_iter() {
            assert_eq!(*v, a.low[[n, c, (y + 6 - 1) % 6, x]]);
        }
        // bilinear clamps at the border, so compare rows away from both edges
        for ((n, c, y, x), v) in b.high.indexed_iter() {
            if y >= 2 * k && y < 12 - k {
                assert!((*v - a.high[[n, c, y - k, x]]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn mswf_identity_and_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let small = random_map(&mut rng, (1, 8, 8, 8));
        let large = random_map(&mut rng, (1, 8, 16, 16));
        let out = mswf_fuse(&small, &large, &MixParams::identity(8)).unwrap();
        assert_eq!(out.dim(), (1, 8, 16, 16));
        assert!(out.iter().zip(large.iter()).all(|(a, b)| (a - b).abs() <= 1e-12));
        assert!(mswf_fuse(&large, &small, &MixParams::identity(8)).is_err());
        let other = random_map(&mut rng, (1, 4, 16, 16));
        assert!(mswf_fuse(&small, &other, &MixParams::identity(8)).is_err());
    }
}
