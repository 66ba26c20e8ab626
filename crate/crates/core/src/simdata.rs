//! Synthetic scenes and bracketed degradations.
//!
//! A ground-truth scene is scaled by each exposure ratio, clipped at the
//! saturation level, box-downsampled, optionally blurred, and corrupted by
//! signal-dependent shot noise plus Gaussian read noise. Everything is
//! keyed by explicit seeds so datasets are reproducible bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array4, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::config::{join_list, parse_kv, parse_list, parse_value};
use crate::container::{self, TensorRecord};
use crate::error::{invalid, ContainerError, Error, Result};
use crate::freqops::lowpass_avg;
use crate::imaging::{BracketSequence, RawFrame};
use crate::rng::{derive, fnv1a, seeded};
use crate::FeatureMap;

/// Multiplier of the per-scene seed splitting rule.
pub const SCENE_SEED_STRIDE: u64 = 1_000_003;

#[derive(Debug, Clone, PartialEq)]
pub struct DegradeConfig {
    pub exposure_ratios: Vec<f64>,
    pub read_noise_sigma: f64,
    pub shot_noise_gain: f64,
    pub blur_sigma: f64,
    /// 0-based indices of the frames that receive blur.
    pub blur_frames: Vec<usize>,
    pub downscale: usize,
    pub saturation_level: f64,
    pub seed: u64,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        DegradeConfig {
            exposure_ratios: vec![1.0, 4.0, 16.0, 64.0, 256.0],
            read_noise_sigma: 2e-3,
            shot_noise_gain: 2e-3,
            blur_sigma: 1.0,
            blur_frames: vec![3, 4],
            downscale: 4,
            saturation_level: 1.0,
            seed: 0,
        }
    }
}

impl DegradeConfig {
    /// Noise and blur disabled.
    pub fn clean(mut self) -> Self {
        self.read_noise_sigma = 0.0;
        self.shot_noise_gain = 0.0;
        self.blur_sigma = 0.0;
        self
    }

    pub fn n_frames(&self) -> usize {
        self.exposure_ratios.len()
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.exposure_ratios;
        if r.is_empty() {
            return Err(invalid("exposure_ratios must not be empty"));
        }
        if r[0] != 1.0 {
            return Err(invalid(format!("first exposure ratio must be 1, got {}", r[0])));
        }
        if r.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(invalid("exposure ratios must be positive"));
        }
        if r.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("exposure ratios must be strictly increasing"));
        }
        if self.read_noise_sigma < 0.0 || self.shot_noise_gain < 0.0 || self.blur_sigma < 0.0 {
            return Err(invalid("noise and blur parameters must be non-negative"));
        }
        if self.downscale == 0 {
            return Err(invalid("downscale must be >= 1"));
        }
        if !(self.saturation_level > 0.0) {
            return Err(invalid("saturation level must be positive"));
        }
        if let Some(f) = self.blur_frames.iter().find(|f| **f >= r.len()) {
            return Err(invalid(format!("blur frame {f} out of range for {} frames", r.len())));
        }
        Ok(())
    }

    /// `key=value` lines, one field per line.
    pub fn to_kv(&self) -> String {
        format!(
            "exposure_ratios={}\nread_noise_sigma={}\nshot_noise_gain={}\nblur_sigma={}\nblur_frames={}\ndownscale={}\nsaturation_level={}\nseed={}\n",
            join_list(&self.exposure_ratios),
            self.read_noise_sigma,
            self.shot_noise_gain,
            self.blur_sigma,
            join_list(&self.blur_frames),
            self.downscale,
            self.saturation_level,
            self.seed
        )
    }

    /// Overrides fields from `key=value` pairs; unknown keys are ignored.
    pub fn apply_kv<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (k, v) in pairs {
            match k {
                "exposure_ratios" => self.exposure_ratios = parse_list(k, v)?,
                "read_noise_sigma" => self.read_noise_sigma = parse_value(k, v)?,
                "shot_noise_gain" => self.shot_noise_gain = parse_value(k, v)?,
                "blur_sigma" => self.blur_sigma = parse_value(k, v)?,
                "blur_frames" => self.blur_frames = parse_list(k, v)?,
                "downscale" => self.downscale = parse_value(k, v)?,
                "saturation_level" => self.saturation_level = parse_value(k, v)?,
                "seed" => self.seed = parse_value(k, v)?,
                _ => {}
            }
        }
        Ok(())
    }
}

/// Bracket resolution and channel count of generated samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub gt: FeatureMap<f32>,
    pub bracket: BracketSequence,
}

impl SamplePair {
    pub fn id(&self) -> &str {
        &self.bracket.scene_id
    }

    pub fn to_records(&self) -> Vec<TensorRecord> {
        let mut recs = vec![TensorRecord::f32("gt", self.gt.clone().into_dyn())];
        for (i, f) in self.bracket.frames.iter().enumerate() {
            recs.push(TensorRecord::f32(format!("frame{i}"), f.data.clone().into_dyn()));
        }
        let exposures: Vec<f64> = self.bracket.frames.iter().map(|f| f.exposure_time).collect();
        recs.push(TensorRecord::f64(
            "exposure",
            ndarray::ArrayD::from_shape_vec(IxDyn(&[exposures.len()]), exposures).unwrap(),
        ));
        recs.push(TensorRecord::f64(
            "saturation",
            ndarray::ArrayD::from_elem(IxDyn(&[1]), self.bracket.saturation_level),
        ));
        recs
    }

    pub fn from_records(id: &str, records: &[TensorRecord]) -> Result<Self> {
        let as4 = |name: &str| -> Result<FeatureMap<f32>> {
            container::find(records, name)?
                .data
                .to_f32()
                .into_dimensionality()
                .map_err(|_| invalid(format!("record `{name}` is not 4-D")))
        };
        let gt = as4("gt")?;
        let exposure = container::find(records, "exposure")?.data.to_f64();
        let saturation = container::find(records, "saturation")?.data.to_f64();
        let frames = exposure
            .iter()
            .enumerate()
            .map(|(i, t)| RawFrame::new(as4(&format!("frame{i}"))?, *t))
            .collect::<Result<Vec<_>>>()?;
        let sat = *saturation
            .iter()
            .next()
            .ok_or_else(|| Error::Container(ContainerError::MissingRecord("saturation".into())))?;
        Ok(SamplePair {
            gt,
            bracket: BracketSequence::new(frames, id, sat)?,
        })
    }
}

/// Deterministic HDR-like test scene in `[0, 1]`: smooth gradients and
/// low-frequency undulation, band-limited texture, a gamma expansion that
/// pushes most mass into the shadows, and a few bright highlights.
pub fn gen_scene(seed: u64, c: usize, h: usize, w: usize) -> Result<FeatureMap<f32>> {
    if h < 8 || w < 8 || c == 0 {
        return Err(invalid(format!("scene must be at least 8x8 with >= 1 channel, got {c}x{h}x{w}")));
    }
    let mut rng = seeded(derive(&[seed, 0x5ce7e]));
    let tau = std::f64::consts::TAU;

    let grad = (rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
    let offset = rng.random_range(0.3..0.6);
    let waves: Vec<(f64, f64, f64, f64)> = (0..9)
        .map(|k| {
            let low = k < 3;
            let freq = if low { rng.random_range(0.5..2.0) } else { rng.random_range(3.0..12.0) };
            let theta = rng.random_range(0.0..tau);
            let amp = if low { rng.random_range(0.08..0.2) } else { rng.random_range(0.02..0.07) };
            (freq, theta, rng.random_range(0.0..tau), amp)
        })
        .collect();
    let n_lights = rng.random_range(1..=4);
    let lights: Vec<(f64, f64, f64, f64)> = (0..n_lights)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.01..0.05),
                rng.random_range(2.0..6.0),
            )
        })
        .collect();
    let gains: Vec<f64> = (0..c).map(|_| rng.random_range(0.75..1.25)).collect();
    let tints: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..tau)).collect();

    let mut radiance = Array4::<f64>::zeros((1, c, h, w));
    for ((_, ch, y, x), v) in radiance.indexed_iter_mut() {
        let (u, t) = (x as f64 / w as f64, y as f64 / h as f64);
        let mut base = offset + grad.0 * u + grad.1 * t;
        for (k, (freq, theta, phase, amp)) in waves.iter().enumerate() {
            let proj = u * theta.cos() + t * theta.sin();
            let tint = if k % 2 == 0 { 0.0 } else { tints[ch] };
            base += amp * (tau * freq * proj + phase + tint).sin();
        }
        let mut r = base.max(0.0).powf(2.2) * gains[ch];
        for (cx, cy, rad, amp) in &lights {
            let d2 = (u - cx).powi(2) + (t - cy).powi(2);
            r += amp * (-d2 / (2.0 * rad * rad)).exp();
        }
        *v = r;
    }
    let max = radiance.fold(0.0f64, |m, v| m.max(*v));
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    Ok(radiance.mapv(|v| ((v * scale) as f32).clamp(0.0, 1.0)))
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

fn mirror(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Separable Gaussian blur with mirrored borders.
pub fn gaussian_blur(f: &FeatureMap<f64>, sigma: f64) -> FeatureMap<f64> {
    if sigma <= 0.0 {
        return f.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (b, c, h, w) = f.dim();
    let horiz: FeatureMap<f64> = Array4::from_shape_fn((b, c, h, w), |(n, ch, y, x)| {
        k.iter()
            .enumerate()
            .map(|(j, kv)| kv * f[[n, ch, y, mirror(x as isize + j as isize - r, w)]])
            .sum::<f64>()
    });
    Array4::from_shape_fn((b, c, h, w), |(n, ch, y, x)| {
        k.iter()
            .enumerate()
            .map(|(j, kv)| kv * horiz[[n, ch, mirror(y as isize + j as isize - r, h), x]])
            .sum::<f64>()
    })
}

/// Simulates a raw bracket from a ground-truth scene.
pub fn degrade(gt: &FeatureMap<f32>, cfg: &DegradeConfig, scene_id: &str) -> Result<BracketSequence> {
    cfg.validate()?;
    if let Some(v) = gt.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
        return Err(invalid(format!("ground truth must lie in [0, 1], found {v}")));
    }
    let sat = cfg.saturation_level;
    let scene_key = fnv1a(scene_id.as_bytes());
    let gt64 = gt.mapv(f64::from);
    let frames = cfg
        .exposure_ratios
        .iter()
        .enumerate()
        .map(|(i, &ratio)| {
            let exposed = gt64.mapv(|v| (v * ratio).min(sat));
            let mut low = lowpass_avg(&exposed, cfg.downscale)?;
            if cfg.blur_frames.contains(&i) {
                low = gaussian_blur(&low, cfg.blur_sigma);
            }
            if cfg.read_noise_sigma > 0.0 || cfg.shot_noise_gain > 0.0 {
                let mut rng = seeded(derive(&[cfg.seed, i as u64, scene_key]));
                let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
                low.mapv_inplace(|v| {
                    let var = cfg.shot_noise_gain * v.max(0.0) + cfg.read_noise_sigma.powi(2);
                    (v + var.sqrt() * std_normal.sample(&mut rng)).clamp(0.0, sat)
                });
            }
            RawFrame::new(low.mapv(|v| v as f32), ratio)
        })
        .collect::<Result<Vec<_>>>()?;
    BracketSequence::new(frames, scene_id, sat)
}

pub fn scene_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(SCENE_SEED_STRIDE).wrapping_add(index as u64)
}

pub fn scene_id(index: usize) -> String {
    format!("{index:04}")
}

/// `n_scenes` pairs; scene `i` uses seed `seed * 1_000_003 + i`.
pub fn make_dataset(n_scenes: usize, cfg: &DegradeConfig, geometry: Geometry) -> Result<Vec<SamplePair>> {
    if n_scenes == 0 {
        return Err(invalid("n_scenes must be >= 1"));
    }
    cfg.validate()?;
    let (gh, gw) = (geometry.height * cfg.downscale, geometry.width * cfg.downscale);
    (0..n_scenes)
        .into_par_iter()
        .map(|i| {
            let gt = gen_scene(scene_seed(cfg.seed, i), geometry.channels, gh, gw)?;
            let bracket = degrade(&gt, cfg, &scene_id(i))?;
            Ok(SamplePair { gt, bracket })
        })
        .collect()
}

pub const MANIFEST_NAME: &str = "manifest.txt";

pub fn sample_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("scene_{id}.hlt"))
}

/// Writes `scene_<id>.hlt` per pair and a `manifest.txt` with the ids and
/// the degradation config.
pub fn write_dataset(dir: &Path, pairs: &[SamplePair], cfg: &DegradeConfig, geometry: Geometry) -> Result<()> {
    fs::create_dir_all(dir)?;
    for p in pairs {
        container::write_container(sample_path(dir, p.id()), &p.to_records())?;
    }
    let mut m = String::from("# hlnet dataset manifest\n");
    writeln!(m, "scenes={}", pairs.len()).unwrap();
    writeln!(m, "ids={}", pairs.iter().map(|p| p.id()).collect::<Vec<_>>().join(",")).unwrap();
    writeln!(m, "channels={}", geometry.channels).unwrap();
    writeln!(m, "height={}", geometry.height).unwrap();
    writeln!(m, "width={}", geometry.width).unwrap();
    m.push_str(&cfg.to_kv());
    fs::write(dir.join(MANIFEST_NAME), m)?;
    Ok(())
}

/// Dataset loaded from a directory written by [`write_dataset`].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub pairs: Vec<SamplePair>,
    pub config: DegradeConfig,
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let kv = parse_kv(&text);
    let mut config = DegradeConfig::default();
    config.apply_kv(kv.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    let ids = kv
        .iter()
        .find(|(k, _)| k == "ids")
        .map(|(_, v)| v.clone())
        .ok_or_else(|| invalid("manifest has no ids line"))?;
    let pairs = ids
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|id| SamplePair::from_records(id, &container::read_container(sample_path(dir, id))?))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { pairs, config })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::normalize_exposure;

    #[test]
    fn scene_is_deterministic_and_in_range() {
        let a = gen_scene(3, 4, 32, 32).unwrap();
        let b = gen_scene(3, 4, 32, 32).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(gen_scene(3, 4, 4, 32).is_err());
    }

    #[test]
    fn different_seeds_differ() {
        // calibrated over seeds 0..50: the smallest pairwise mean abs
        // difference between consecutive seeds stays well above 0.01
        let mut min_diff = f64::INFINITY;
        for s in 0..50u64 {
            let a = gen_scene(s, 1, 32, 32).unwrap();
            let b = gen_scene(s + 1, 1, 32, 32).unwrap();
            let d = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64;
            min_diff = min_diff.min(d);
        }
        assert!(min_diff > 0.01, "min diff {min_diff}");
    }

    #[test]
    fn identity_pipeline() {
        let gt = gen_scene(1, 2, 16, 16).unwrap();
        let cfg = DegradeConfig {
            exposure_ratios: vec![1.0],
            downscale: 1,
            blur_frames: vec![],
            ..DegradeConfig::default().clean()
        };
        let seq = degrade(&gt, &cfg, "x").unwrap();
        assert_eq!(seq.frames[0].data, gt);
    }

    #[test]
    fn long_exposure_saturates() {
        let gt = Array4::from_elem((1, 1, 8, 8), 0.5f32);
        let seq = degrade(&gt, &DegradeConfig { downscale: 1, ..DegradeConfig::default().clean() }, "x").unwrap();
        assert!(seq.frames[4].data.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn normalized_frames_match_box_downsample() {
        let gt = gen_scene(4, 2, 32, 32).unwrap();
        let cfg = DegradeConfig {
            saturation_level: 1e6,
            ..DegradeConfig::default().clean()
        };
        let seq = degrade(&gt, &cfg, "x").unwrap();
        // independent box filter
        let mut oracle = Array4::<f64>::zeros((1, 2, 8, 8));
        for ((_, c, y, x), v) in oracle.indexed_iter_mut() {
            let mut acc = 0.0;
            for dy in 0..4 {
                for dx in 0..4 {
                    acc += gt[[0, c, 4 * y + dy, 4 * x + dx]] as f64;
                }
            }
            *v = acc / 16.0;
        }
        for frame in &seq.frames {
            let y = normalize_exposure(frame, 1.0).unwrap();
            for (a, b) in y.iter().zip(oracle.iter()) {
                assert!((*a as f64 - b).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn saturation_fraction_non_decreasing() {
        let gt = gen_scene(5, 1, 32, 32).unwrap();
        let seq = degrade(&gt, &DegradeConfig::default().clean(), "x").unwrap();
        let fracs: Vec<f64> = seq
            .frames
            .iter()
            .map(|f| f.data.iter().filter(|v| **v >= 1.0).count() as f64 / f.data.len() as f64)
            .collect();
        assert!(fracs.windows(2).all(|w| w[0] <= w[1]), "{fracs:?}");
    }

    #[test]
    fn config_validation_and_kv() {
        let mut cfg = DegradeConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.exposure_ratios = vec![2.0, 4.0];
        assert!(cfg.validate().is_err());
        cfg.exposure_ratios = vec![1.0, 1.0];
        assert!(cfg.validate().is_err());
        let original = DegradeConfig { seed: 17, ..DegradeConfig::default() };
        let kv = parse_kv(&original.to_kv());
        let mut back = DegradeConfig::default();
        back.apply_kv(kv.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(back, original);
    }

    #[test]
    fn dataset_determinism() {
        let g = Geometry { channels: 1, height: 8, width: 8 };
        let cfg = DegradeConfig { seed: 7, ..DegradeConfig::default() };
        let a = make_dataset(3, &cfg, g).unwrap();
        let b = make_dataset(3, &cfg, g).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].gt.dim(), (1, 1, 32, 32));
        assert_eq!(a[0].bracket.frames[0].data.dim(), (1, 1, 8, 8));
        assert_eq!(a[2].id(), "0002");
    }
}
