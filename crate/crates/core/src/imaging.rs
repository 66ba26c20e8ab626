//! Raw-domain preprocessing and μ-law tonemapping.
//!
//! A bracket is a burst of raw frames captured at increasing exposure
//! times. Each frame is brought to the exposure of the first frame, clamped
//! to the unit range, and paired with its gamma view along the channel axis
//! before entering the network.

use ndarray::{concatenate, Axis};
use num_traits::Float;

use crate::error::{invalid, Result};
use crate::FeatureMap;

/// Default gamma applied to the normalized linear frames.
pub const DEFAULT_GAMMA: f64 = 1.0 / 2.2;

/// Compression strength of the μ-law tonemap used by the loss and metrics.
pub const DEFAULT_MU: f64 = 5000.0;

/// Slack allowed on the unit interval before tonemapping rejects a value.
pub const RANGE_TOLERANCE: f64 = 1e-6;

/// One packed raw capture together with its exposure time.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFrame {
    pub data: FeatureMap<f32>,
    pub exposure_time: f64,
}

impl RawFrame {
    pub fn new(data: FeatureMap<f32>, exposure_time: f64) -> Result<Self> {
        let frame = RawFrame {
            data,
            exposure_time,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exposure_time.is_finite() && self.exposure_time > 0.0) {
            return Err(invalid(format!(
                "exposure time must be positive, got {}",
                self.exposure_time
            )));
        }
        if self.data.dim().0 != 1 {
            return Err(invalid("raw frame must have batch size 1"));
        }
        if let Some(v) = self.data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(invalid(format!("raw values must be finite and >= 0, found {v}")));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.data.dim().1
    }

    pub fn spatial(&self) -> (usize, usize) {
        let (_, _, h, w) = self.data.dim();
        (h, w)
    }
}

/// An ordered exposure bracket; frame 0 is the reference (shortest) exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct BracketSequence {
    pub frames: Vec<RawFrame>,
    pub scene_id: String,
    pub saturation_level: f64,
}

impl BracketSequence {
    pub fn new(frames: Vec<RawFrame>, scene_id: impl Into<String>, saturation_level: f64) -> Result<Self> {
        let seq = BracketSequence {
            frames,
            scene_id: scene_id.into(),
            saturation_level,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| invalid("bracket must contain at least one frame"))?;
        if !(self.saturation_level.is_finite() && self.saturation_level > 0.0) {
            return Err(invalid("saturation level must be positive"));
        }
        for (i, frame) in self.frames.iter().enumerate() {
            frame.validate()?;
            if frame.data.dim() != first.data.dim() {
                return Err(invalid(format!(
                    "frame {i} has shape {:?}, expected {:?}",
                    frame.data.dim(),
                    first.data.dim()
                )));
            }
        }
        for (i, pair) in self.frames.windows(2).enumerate() {
            if pair[1].exposure_time <= pair[0].exposure_time {
                return Err(invalid(format!(
                    "exposure times must be strictly increasing (frame {} <= frame {})",
                    i + 1,
                    i
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn base_exposure(&self) -> f64 {
        self.frames[0].exposure_time
    }
}

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("scalar representable in target float type")
}

/// Brings a frame to the exposure of `base_exposure` by dividing by the
/// exposure ratio.
pub fn normalize_exposure(frame: &RawFrame, base_exposure: f64) -> Result<FeatureMap<f32>> {
    if !(base_exposure.is_finite() && base_exposure > 0.0) {
        return Err(invalid(format!("base exposure must be positive, got {base_exposure}")));
    }
    if !(frame.exposure_time.is_finite() && frame.exposure_time > 0.0) {
        return Err(invalid(format!(
            "exposure time must be positive, got {}",
            frame.exposure_time
        )));
    }
    let ratio = frame.exposure_time / base_exposure;
    // Divide in f64 so the result is the correctly rounded quotient.
    Ok(frame.data.mapv(|v| (v as f64 / ratio) as f32))
}

/// Element-wise `y^gamma` on values clamped to `[0, 1]`.
pub fn gamma_map<T: Float>(y: &FeatureMap<T>, gamma: f64) -> Result<FeatureMap<T>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(invalid(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    if let Some(v) = y.iter().find(|v| !(**v >= T::zero())) {
        return Err(invalid(format!(
            "gamma_map expects non-negative values, found {}",
            v.to_f64().unwrap_or(f64::NAN)
        )));
    }
    let g: T = cast(gamma);
    Ok(y.mapv(|v| v.min(T::one()).powf(g)))
}

/// Concatenates the linear and gamma views along the channel axis.
pub fn build_input<T: Float>(y: &FeatureMap<T>, y_gamma: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    if y.dim() != y_gamma.dim() {
        return Err(invalid(format!(
            "build_input shape mismatch: {:?} vs {:?}",
            y.dim(),
            y_gamma.dim()
        )));
    }
    Ok(concatenate(Axis(1), &[y.view(), y_gamma.view()]).expect("shapes checked"))
}

fn check_unit_range<T: Float>(x: &FeatureMap<T>, what: &str) -> Result<()> {
    let tol: T = cast(RANGE_TOLERANCE);
    if let Some(v) = x
        .iter()
        .find(|v| !(**v >= -tol && **v <= T::one() + tol))
    {
        return Err(invalid(format!(
            "{what} expects values in [0, 1], found {}",
            v.to_f64().unwrap_or(f64::NAN)
        )));
    }
    Ok(())
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(invalid(format!("mu must be positive, got {mu}")));
    }
    Ok(())
}

/// Scalar μ-law compression `ln(1 + μh) / ln(1 + μ)`.
#[inline]
pub fn mu_law(h: f64, mu: f64) -> f64 {
    (mu * h).ln_1p() / mu.ln_1p()
}

/// Scalar inverse of [`mu_law`].
#[inline]
pub fn mu_law_inv(t: f64, mu: f64) -> f64 {
    (t * mu.ln_1p()).exp_m1() / mu
}

/// Element-wise μ-law tonemap. Values within [`RANGE_TOLERANCE`] of the
/// unit interval are clamped; anything further out is rejected.
pub fn tonemap_mu<T: Float>(h: &FeatureMap<T>, mu: f64) -> Result<FeatureMap<T>> {
    check_mu(mu)?;
    check_unit_range(h, "tonemap_mu")?;
    Ok(h.mapv(|v| {
        let v = v.to_f64().unwrap().clamp(0.0, 1.0);
        cast(mu_law(v, mu))
    }))
}

/// Element-wise inverse μ-law tonemap.
pub fn tonemap_mu_inv<T: Float>(t: &FeatureMap<T>, mu: f64) -> Result<FeatureMap<T>> {
    check_mu(mu)?;
    check_unit_range(t, "tonemap_mu_inv")?;
    Ok(t.mapv(|v| {
        let v = v.to_f64().unwrap().clamp(0.0, 1.0);
        cast(mu_law_inv(v, mu))
    }))
}

/// Builds the network input `[y, y^gamma]` for every frame of the bracket,
/// with `y` the exposure-normalized frame clamped to `[0, 1]`.
pub fn preprocess_bracket(seq: &BracketSequence, gamma: f64) -> Result<Vec<FeatureMap<f32>>> {
    seq.validate()?;
    let base = seq.base_exposure();
    seq.frames
        .iter()
        .map(|frame| {
            let y = normalize_exposure(frame, base)?.mapv(|v| v.clamp(0.0, 1.0));
            let y_gamma = gamma_map(&y, gamma)?;
            build_input(&y, &y_gamma)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame(value: f32, exposure: f64) -> RawFrame {
        RawFrame::new(Array4::from_elem((1, 4, 8, 8), value), exposure).unwrap()
    }

    #[test]
    fn normalize_identity_and_zero() {
        let f = frame(0.3, 2.0);
        assert_eq!(normalize_exposure(&f, 2.0).unwrap(), f.data);
        let z = frame(0.0, 64.0);
        assert!(normalize_exposure(&z, 1.0).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn normalize_ratio_sixteen() {
        // 0.8 / 16 evaluated independently in f64
        let expected = (0.8f32 as f64 / 16.0) as f32;
        assert!((expected - 0.05).abs() < 1e-7);
        let y = normalize_exposure(&frame(0.8, 16.0), 1.0).unwrap();
        assert!(y.iter().all(|v| *v == expected));
    }

    #[test]
    fn normalize_rejects_bad_exposure() {
        let f = frame(0.3, 1.0);
        assert!(normalize_exposure(&f, 0.0).is_err());
        assert!(normalize_exposure(&f, -1.0).is_err());
        let bad = RawFrame {
            data: f.data.clone(),
            exposure_time: 0.0,
        };
        assert!(normalize_exposure(&bad, 1.0).is_err());
        assert!(RawFrame::new(f.data, -2.0).is_err());
    }

    #[test]
    fn normalize_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = Array4::from_shape_fn((1, 2, 4, 4), |_| rng.random::<f32>());
        let a = 3.0f32;
        let f1 = RawFrame::new(data.mapv(|v| v * a), 8.0).unwrap();
        let f2 = RawFrame::new(data, 8.0).unwrap();
        let lhs = normalize_exposure(&f1, 1.0).unwrap();
        let rhs = normalize_exposure(&f2, 1.0).unwrap().mapv(|v| v * a);
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            assert!((l - r).abs() <= 1e-6 * r.abs().max(1.0));
        }
    }

    #[test]
    fn gamma_fixed_points_and_value() {
        let y = Array4::from_shape_vec((1, 1, 1, 3), vec![0.0f64, 1.0, 0.25]).unwrap();
        let g = gamma_map(&y, DEFAULT_GAMMA).unwrap();
        assert_eq!(g[[0, 0, 0, 0]], 0.0);
        assert_eq!(g[[0, 0, 0, 1]], 1.0);
        // exp(ln(0.25) / 2.2)
        let oracle = (0.25f64.ln() / 2.2).exp();
        // 30-digit reference: 0.532520544719981366...
        assert!((oracle - 0.532_520_544_719_981_4).abs() < 1e-15);
        assert!((g[[0, 0, 0, 2]] - oracle).abs() < 1e-12);
    }

    #[test]
    fn gamma_clamps_and_rejects() {
        let y = Array4::from_elem((1, 1, 2, 2), 4.0f32);
        assert!(gamma_map(&y, DEFAULT_GAMMA).unwrap().iter().all(|v| *v == 1.0));
        let neg = Array4::from_elem((1, 1, 2, 2), -0.1f32);
        assert!(gamma_map(&neg, DEFAULT_GAMMA).is_err());
        assert!(gamma_map(&y, 0.0).is_err());
        assert!(gamma_map(&y, 1.5).is_err());
    }

    #[test]
    fn build_input_concatenates() {
        let y = Array4::from_elem((1, 4, 8, 8), 0.25f32);
        let g = Array4::from_elem((1, 4, 8, 8), 0.5f32);
        let f = build_input(&y, &g).unwrap();
        assert_eq!(f.dim(), (1, 8, 8, 8));
        assert!(f.slice(ndarray::s![.., 0..4, .., ..]).iter().all(|v| *v == 0.25));
        assert!(f.slice(ndarray::s![.., 4..8, .., ..]).iter().all(|v| *v == 0.5));
        let wrong = Array4::from_elem((1, 4, 8, 4), 0.5f32);
        assert!(build_input(&y, &wrong).is_err());
    }

    #[test]
    fn tonemap_endpoints_and_half() {
        let h = Array4::from_shape_vec((1, 1, 1, 3), vec![0.0f64, 1.0, 0.5]).unwrap();
        let t = tonemap_mu(&h, DEFAULT_MU).unwrap();
        assert_eq!(t[[0, 0, 0, 0]], 0.0);
        assert_eq!(t[[0, 0, 0, 1]], 1.0);
        let oracle = 2501f64.ln() / 5001f64.ln();
        // 30-digit reference: 0.918643271879646330...
        assert!((oracle - 0.918_643_271_879_646_3).abs() < 1e-15);
        assert!((t[[0, 0, 0, 2]] - oracle).abs() < 1e-12);
    }

    #[test]
    fn tonemap_range_checks() {
        let slightly = Array4::from_elem((1, 1, 1, 1), 1.0f64 + 5e-7);
        assert_eq!(tonemap_mu(&slightly, DEFAULT_MU).unwrap()[[0, 0, 0, 0]], 1.0);
        let out = Array4::from_elem((1, 1, 1, 1), 1.01f64);
        assert!(tonemap_mu(&out, DEFAULT_MU).is_err());
        assert!(tonemap_mu_inv(&out, DEFAULT_MU).is_err());
        assert!(tonemap_mu(&Array4::from_elem((1, 1, 1, 1), -0.1f64), DEFAULT_MU).is_err());
        assert!(tonemap_mu(&slightly, 0.0).is_err());
    }

    #[test]
    fn tonemap_inverse_roundtrip_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = Array4::from_shape_fn((1, 1, 10, 100), |_| rng.random::<f32>());
        let back = tonemap_mu_inv(&tonemap_mu(&h, DEFAULT_MU).unwrap(), DEFAULT_MU).unwrap();
        let err = h.iter().zip(back.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err <= 1e-6, "max err {err}");
        let t = Array4::from_shape_fn((1, 1, 10, 100), |_| rng.random::<f32>());
        let fwd = tonemap_mu(&tonemap_mu_inv(&t, DEFAULT_MU).unwrap(), DEFAULT_MU).unwrap();
        let err = t.iter().zip(fwd.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err <= 1e-6, "max err {err}");
    }

    #[test]
    fn tonemap_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut xs: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let ts: Vec<f64> = xs.iter().map(|x| mu_law(*x, DEFAULT_MU)).collect();
        for (i, w) in ts.windows(2).enumerate() {
            if xs[i] < xs[i + 1] {
                assert!(w[0] < w[1]);
            }
        }
    }

    fn bracket(values: [f32; 5]) -> BracketSequence {
        let frames = values
            .iter()
            .enumerate()
            .map(|(i, v)| frame(*v, 4f64.powi(i as i32)))
            .collect();
        BracketSequence::new(frames, "t", 1.0).unwrap()
    }

    #[test]
    fn preprocess_shapes_and_reference_identity() {
        let seq = bracket([0.2, 0.5, 0.9, 1.0, 1.0]);
        let inputs = preprocess_bracket(&seq, DEFAULT_GAMMA).unwrap();
        assert_eq!(inputs.len(), 5);
        for f in &inputs {
            assert_eq!(f.dim(), (1, 8, 8, 8));
        }
        let g1 = gamma_map(&seq.frames[0].data, DEFAULT_GAMMA).unwrap();
        assert_eq!(inputs[0].slice(ndarray::s![.., 4..8, .., ..]), g1);
        assert_eq!(inputs[0].slice(ndarray::s![.., 0..4, .., ..]), seq.frames[0].data);
    }

    #[test]
    fn preprocess_zero_frames() {
        let seq = bracket([0.0; 5]);
        for f in preprocess_bracket(&seq, DEFAULT_GAMMA).unwrap() {
            assert!(f.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn bracket_validation() {
        let frames = vec![frame(0.1, 4.0), frame(0.1, 1.0)];
        assert!(BracketSequence::new(frames, "x", 1.0).is_err());
        let frames = vec![
            frame(0.1, 1.0),
            RawFrame::new(Array4::zeros((1, 4, 8, 4)), 2.0).unwrap(),
        ];
        assert!(BracketSequence::new(frames, "x", 1.0).is_err());
    }
}
