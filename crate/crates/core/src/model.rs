//! The end-to-end network: preprocessing, alignment, a per-frame encoder,
//! the recurrent shared/non-shared fusion loop and the sub-pixel
//! upsampling head.
//!
//! Parameter names:
//!
//! * `encoder` - 3x3 input projection applied to every frame
//! * `shared.fuse`, `shared.sceb{j}` - one set reused at every step
//! * `frame{i}.hlfdb{j}` - one set per frame index
//! * `head.up{s}.conv`, `head.up{s}.skip`, `head.out` - upsampling head

use ndarray::{s, Array4, IxDyn};

use crate::autograd::{Graph, Tensor, Var};
use crate::blocks::{self, HlfdbConfig, HlfdbVariant};
use crate::config::parse_value;
use crate::error::{invalid, Error, Result};
use crate::freqops;
use crate::imaging::{self, BracketSequence, DEFAULT_GAMMA};
use crate::params::{Init, ParamStore, Scope};
use crate::rng::seeded;
use crate::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignmentMode {
    /// Frames are already registered.
    Identity,
    /// Integer translation against the reference frame.
    Translation,
}

/// Ablation variants of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    Full,
    NoSceb,
    NoHlfdb,
    Ll,
    Gg,
    Wavelet,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Full,
        Ablation::NoSceb,
        Ablation::NoHlfdb,
        Ablation::Ll,
        Ablation::Gg,
        Ablation::Wavelet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoSceb => "no_sceb",
            Ablation::NoHlfdb => "no_hlfdb",
            Ablation::Ll => "ll",
            Ablation::Gg => "gg",
            Ablation::Wavelet => "wavelet",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn names() -> Vec<&'static str> {
        Self::ALL.iter().map(|a| a.name()).collect()
    }

    pub fn code(self) -> u8 {
        Self::ALL.iter().position(|a| *a == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// HLFDB wiring implied by the variant.
    pub fn hlfdb_variant(self) -> HlfdbVariant {
        match self {
            Ablation::Ll => HlfdbVariant::LocalOnly,
            Ablation::Gg => HlfdbVariant::GlobalOnly,
            Ablation::Wavelet => HlfdbVariant::WaveletSplit,
            _ => HlfdbVariant::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HlnetConfig {
    pub n_frames: usize,
    pub c_raw: usize,
    pub width: usize,
    pub n_sceb: usize,
    pub n_hlfdb: usize,
    pub hlfdb: HlfdbConfig,
    pub upscale: usize,
    pub alignment: AlignmentMode,
    pub ablation: Ablation,
    pub gamma: f64,
}

impl Default for HlnetConfig {
    fn default() -> Self {
        HlnetConfig {
            n_frames: 5,
            c_raw: 4,
            width: 16,
            n_sceb: 1,
            n_hlfdb: 1,
            hlfdb: HlfdbConfig::default(),
            upscale: 4,
            alignment: AlignmentMode::Identity,
            ablation: Ablation::Full,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl HlnetConfig {
    /// Returns a copy rewired for `ablation`.
    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self.hlfdb.variant = ablation.hlfdb_variant();
        self
    }

    /// Returns a copy with the block width set consistently.
    pub fn with_width(mut self, width: usize) -> Self {
        self.width = width;
        self.hlfdb.width = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(invalid("n_frames must be >= 1"));
        }
        if self.c_raw == 0 {
            return Err(invalid("c_raw must be >= 1"));
        }
        if self.width == 0 || self.width % 4 != 0 {
            return Err(invalid(format!("width must be a positive multiple of 4, got {}", self.width)));
        }
        if self.hlfdb.width != self.width {
            return Err(invalid("hlfdb width must equal model width"));
        }
        if self.n_sceb == 0 || self.n_hlfdb == 0 {
            return Err(invalid("n_sceb and n_hlfdb must be >= 1"));
        }
        if !self.upscale.is_power_of_two() {
            return Err(invalid(format!("upscale must be a power of 2, got {}", self.upscale)));
        }
        if self.hlfdb.variant != self.ablation.hlfdb_variant() {
            return Err(invalid(format!(
                "ablation {} requires hlfdb variant {:?}, found {:?}",
                self.ablation.name(),
                self.ablation.hlfdb_variant(),
                self.hlfdb.variant
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid("gamma must lie in (0, 1]"));
        }
        self.hlfdb.validate()
    }

    /// Body feature maps must have height and width divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        match self.ablation {
            Ablation::NoHlfdb => 1,
            _ => self.hlfdb.spatial_multiple(),
        }
    }

    pub fn input_channels(&self) -> usize {
        2 * self.c_raw
    }

    /// Flat numeric encoding used as a checkpoint header.
    pub fn to_header(&self) -> Vec<f64> {
        vec![
            self.n_frames as f64,
            self.c_raw as f64,
            self.width as f64,
            self.n_sceb as f64,
            self.n_hlfdb as f64,
            self.hlfdb.pool_k as f64,
            self.hlfdb.n_dense_layers as f64,
            self.hlfdb.n_scales as f64,
            self.hlfdb.n_heads as f64,
            self.upscale as f64,
            match self.alignment {
                AlignmentMode::Identity => 0.0,
                AlignmentMode::Translation => 1.0,
            },
            self.ablation.code() as f64,
            self.gamma,
        ]
    }

    pub fn from_header(h: &[f64]) -> Result<Self> {
        if h.len() != 13 || h[..12].iter().any(|v| !(v.fract() == 0.0 && *v >= 0.0)) {
            return Err(invalid("malformed model config header"));
        }
        let u = |i: usize| h[i] as usize;
        let ablation = Ablation::from_code(h[11] as u8).ok_or_else(|| invalid("unknown ablation code"))?;
        let alignment = match u(10) {
            0 => AlignmentMode::Identity,
            1 => AlignmentMode::Translation,
            _ => return Err(invalid("unknown alignment code")),
        };
        let cfg = HlnetConfig {
            n_frames: u(0),
            c_raw: u(1),
            width: u(2),
            n_sceb: u(3),
            n_hlfdb: u(4),
            hlfdb: HlfdbConfig {
                width: u(2),
                pool_k: u(5),
                n_dense_layers: u(6),
                n_scales: u(7),
                n_heads: u(8),
                variant: ablation.hlfdb_variant(),
            },
            upscale: u(9),
            alignment,
            ablation,
            gamma: h[12],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `key=value` lines for every field.
    pub fn to_kv(&self) -> String {
        format!(
            "n_frames={}\nc_raw={}\nwidth={}\nn_sceb={}\nn_hlfdb={}\npool_k={}\nn_dense_layers={}\nn_scales={}\nn_heads={}\nupscale={}\nalignment={}\nvariant={}\ngamma={}\n",
            self.n_frames,
            self.c_raw,
            self.width,
            self.n_sceb,
            self.n_hlfdb,
            self.hlfdb.pool_k,
            self.hlfdb.n_dense_layers,
            self.hlfdb.n_scales,
            self.hlfdb.n_heads,
            self.upscale,
            match self.alignment {
                AlignmentMode::Identity => "identity",
                AlignmentMode::Translation => "translation",
            },
            self.ablation.name(),
            self.gamma
        )
    }

    /// Overrides fields from `key=value` pairs; unknown keys are ignored.
    pub fn apply_kv<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (k, v) in pairs {
            match k {
                "n_frames" => self.n_frames = parse_value(k, v)?,
                "c_raw" => self.c_raw = parse_value(k, v)?,
                "width" => {
                    let w = parse_value(k, v)?;
                    self.width = w;
                    self.hlfdb.width = w;
                }
                "n_sceb" => self.n_sceb = parse_value(k, v)?,
                "n_hlfdb" => self.n_hlfdb = parse_value(k, v)?,
                "pool_k" => self.hlfdb.pool_k = parse_value(k, v)?,
                "n_dense_layers" => self.hlfdb.n_dense_layers = parse_value(k, v)?,
                "n_scales" => self.hlfdb.n_scales = parse_value(k, v)?,
                "n_heads" => self.hlfdb.n_heads = parse_value(k, v)?,
                "upscale" => self.upscale = parse_value(k, v)?,
                "alignment" => {
                    self.alignment = match v {
                        "identity" => AlignmentMode::Identity,
                        "translation" => AlignmentMode::Translation,
                        _ => return Err(invalid(format!("alignment must be identity or translation, got `{v}`"))),
                    }
                }
                "variant" => {
                    let a = Ablation::parse(v).ok_or_else(|| {
                        Error::UnsupportedVariant {
                            name: v.to_string(),
                            reason: format!("valid variants: {}", Ablation::names().join(", ")),
                        }
                    })?;
                    *self = self.clone().with_ablation(a);
                }
                "gamma" => self.gamma = parse_value(k, v)?,
                _ => {}
            }
        }
        Ok(())
    }
}

/// Learnable weights of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct HlnetParams {
    pub store: ParamStore,
}

impl HlnetParams {
    pub fn count(&self) -> usize {
        self.store.count()
    }

    /// Names of the weight set reused at every recurrent step.
    pub fn shared_names(&self) -> Vec<String> {
        self.store.names().filter(|n| n.starts_with("shared.")).cloned().collect()
    }

    /// Names of the weight set owned by frame `i`.
    pub fn frame_names(&self, i: usize) -> Vec<String> {
        let prefix = format!("frame{i}.");
        self.store.names().filter(|n| n.starts_with(&prefix)).cloned().collect()
    }
}

/// Deterministic fan-in scaled initialization. Final projections of all
/// residual blocks are zero and the step fusion passes the recurrent state
/// through, so the untrained network is the head applied to the encoded
/// reference frame.
pub fn init_params(cfg: &HlnetConfig, seed: u64) -> Result<HlnetParams> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let mut rng = seeded(seed);
    let mut init = Init::new(&mut store, &mut rng);
    let w = cfg.width;
    init.conv("encoder", w, cfg.input_channels(), 3, false);
    init.scoped("shared", |i| {
        i.conv("fuse", w, 3 * w, 1, true);
        let mut fuse = Tensor::zeros(IxDyn(&[w, 3 * w, 1, 1]));
        for c in 0..w {
            fuse[[c, 2 * w + c, 0, 0]] = 1.0;
        }
        i.tensor("fuse.w", fuse);
        for j in 0..cfg.n_sceb {
            i.scoped(&format!("sceb{j}"), |i| match cfg.ablation {
                Ablation::NoSceb => blocks::init_residual_block(i, w),
                _ => blocks::init_sceb(i, w),
            });
        }
    });
    for f in 0..cfg.n_frames {
        init.scoped(&format!("frame{f}"), |i| {
            for j in 0..cfg.n_hlfdb {
                i.scoped(&format!("hlfdb{j}"), |i| match cfg.ablation {
                    Ablation::NoHlfdb => blocks::init_residual_block(i, w),
                    _ => blocks::init_hlfdb(i, &cfg.hlfdb),
                });
            }
        });
    }
    init.scoped("head", |i| init_head(i, w, cfg.input_channels(), cfg.c_raw, cfg.upscale));
    Ok(HlnetParams { store })
}

/// Weights of [`upsample_head`]: per x2 stage a 3x3 conv after the pixel
/// shuffle and a 1x1 skip projection, then a 3x3 output conv.
pub fn init_head(init: &mut Init, width: usize, skip_channels: usize, c_out: usize, upscale: usize) {
    for s in 0..upscale.trailing_zeros() {
        init.scoped(&format!("up{s}"), |i| {
            i.conv("conv", width, width / 4, 3, false);
            i.conv("skip", width, skip_channels, 1, false);
        });
    }
    init.conv("out", c_out, width, 3, false);
}

// ---- alignment ----------------------------------------------------------------

const SEARCH_RADIUS: isize = 4;

fn reflect_index(i: isize, n: usize) -> usize {
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

/// `out[y][x] = f[y - dy][x - dx]`, sampling outside the map by reflection.
pub fn shift_reflect<T: Copy + num_traits::Zero>(f: &FeatureMap<T>, dy: isize, dx: isize) -> FeatureMap<T> {
    let (b, c, h, w) = f.dim();
    Array4::from_shape_fn((b, c, h, w), |(n, ch, y, x)| {
        f[[n, ch, reflect_index(y as isize - dy, h), reflect_index(x as isize - dx, w)]]
    })
}

/// Reflect-pads bottom and right edges up to `(h, w)`.
pub fn pad_reflect<T: Copy + num_traits::Zero>(f: &FeatureMap<T>, h: usize, w: usize) -> FeatureMap<T> {
    let (b, c, fh, fw) = f.dim();
    Array4::from_shape_fn((b, c, h, w), |(n, ch, y, x)| {
        f[[n, ch, reflect_index(y as isize, fh), reflect_index(x as isize, fw)]]
    })
}

fn gamma_view<T: Copy>(f: &FeatureMap<T>) -> ndarray::ArrayView4<'_, T> {
    let c = f.dim().1;
    if c >= 2 && c % 2 == 0 {
        f.slice(s![.., c / 2.., .., ..])
    } else {
        f.view()
    }
}

/// Integer displacement `(dy, dx)` of `frame` relative to `reference`,
/// found by exhaustive search over a +/-4 pixel window minimizing the mean
/// absolute difference of the gamma channels (second half of the channel
/// axis). Ties prefer the smaller displacement.
pub fn estimate_shift<T>(reference: &FeatureMap<T>, frame: &FeatureMap<T>) -> Result<(isize, isize)>
where
    T: Copy + Into<f64>,
{
    if reference.dim() != frame.dim() {
        return Err(invalid("estimate_shift: shape mismatch"));
    }
    let (_, _, h, w) = reference.dim();
    let radius = SEARCH_RADIUS.min((h.min(w) as isize - 1) / 4).max(0);
    let (r, f) = (gamma_view(reference), gamma_view(frame));
    let (b, c, _, _) = r.dim();
    let mut candidates: Vec<(isize, isize)> = (-radius..=radius)
        .flat_map(|dy| (-radius..=radius).map(move |dx| (dy, dx)))
        .collect();
    candidates.sort_by_key(|(dy, dx)| (dy.abs() + dx.abs(), *dy, *dx));
    let mut best = ((0, 0), f64::INFINITY);
    for (dy, dx) in candidates {
        let mut acc = 0.0;
        let mut count = 0usize;
        for n in 0..b {
            for ch in 0..c {
                for y in radius..h as isize - radius {
                    for x in radius..w as isize - radius {
                        let a: f64 = r[[n, ch, y as usize, x as usize]].into();
                        let v: f64 = f[[n, ch, (y + dy) as usize, (x + dx) as usize]].into();
                        acc += (a - v).abs();
                        count += 1;
                    }
                }
            }
        }
        let mad = acc / count.max(1) as f64;
        if mad < best.1 {
            best = ((dy, dx), mad);
        }
    }
    Ok(best.0)
}

/// Registers every frame to frame 0.
pub fn align_frames<T>(frames: &[FeatureMap<T>], mode: AlignmentMode) -> Result<Vec<FeatureMap<T>>>
where
    T: Copy + Into<f64> + num_traits::Zero,
{
    let first = frames.first().ok_or_else(|| invalid("align_frames needs at least one frame"))?;
    if let Some(bad) = frames.iter().position(|f| f.dim() != first.dim()) {
        return Err(invalid(format!(
            "align_frames: frame {bad} has shape {:?}, expected {:?}",
            frames[bad].dim(),
            first.dim()
        )));
    }
    match mode {
        AlignmentMode::Identity => Ok(frames.to_vec()),
        AlignmentMode::Translation => {
            let mut out = vec![first.clone()];
            for f in &frames[1..] {
                let (dy, dx) = estimate_shift(first, f)?;
                out.push(shift_reflect(f, -dy, -dx));
            }
            Ok(out)
        }
    }
}

// ---- network ------------------------------------------------------------------

pub fn encode(s: &Scope, x: Var) -> Result<Var> {
    blocks::conv(s, "encoder", x, 1)
}

/// Runs the recurrence and returns the output of every step.
///
/// Step `i` (0-based) fuses frame `i`, the reference features and the
/// previous state through the shared 1x1 projection and shared blocks, then
/// applies frame `i`'s own blocks. The state starts as the reference
/// features, so step 0 refines the reference frame itself.
pub fn recurrent_fuse_steps(s: &Scope, frames: &[Var], cfg: &HlnetConfig) -> Result<Vec<Var>> {
    if frames.len() != cfg.n_frames {
        return Err(invalid(format!(
            "recurrent_fuse: got {} frames, config expects {}",
            frames.len(),
            cfg.n_frames
        )));
    }
    let g = s.graph;
    let reference = frames[0];
    let shared = s.child("shared");
    let mut state = reference;
    let mut outputs = Vec::with_capacity(frames.len());
    for (i, &frame) in frames.iter().enumerate() {
        let mut h = blocks::conv(&shared, "fuse", g.concat(1, &[frame, reference, state]), 1)?;
        for j in 0..cfg.n_sceb {
            let bs = shared.child(&format!("sceb{j}"));
            h = match cfg.ablation {
                Ablation::NoSceb => blocks::residual_block(&bs, h)?,
                _ => blocks::sceb(&bs, h)?,
            };
        }
        let own = s.child(&format!("frame{i}"));
        for j in 0..cfg.n_hlfdb {
            let bs = own.child(&format!("hlfdb{j}"));
            h = match cfg.ablation {
                Ablation::NoHlfdb => blocks::residual_block(&bs, h)?,
                _ => blocks::hlfdb(&bs, h, &cfg.hlfdb)?,
            };
        }
        state = h;
        outputs.push(h);
    }
    Ok(outputs)
}

pub fn recurrent_fuse(s: &Scope, frames: &[Var], cfg: &HlnetConfig) -> Result<Var> {
    recurrent_fuse_steps(s, frames, cfg).map(|mut v| v.pop().expect("n_frames >= 1"))
}

/// `log2(upscale)` stages of pixel shuffle, 3x3 kernel and GELU, each adding
/// a 1x1 mix of its skip; a final 3x3 kernel projects to raw channels.
pub fn upsample_head(s: &Scope, feat: Var, skips: &[Var], upscale: usize) -> Result<Var> {
    if !upscale.is_power_of_two() {
        return Err(invalid(format!("upscale must be a power of 2, got {upscale}")));
    }
    let g = s.graph;
    let stages = upscale.trailing_zeros() as usize;
    if skips.len() != stages {
        return Err(invalid(format!("upsample_head: {} skips for {stages} stages", skips.len())));
    }
    let mut x = feat;
    for (st, &skip) in skips.iter().enumerate() {
        let sc = s.child(&format!("up{st}"));
        x = g.pixel_shuffle(x, 2);
        x = g.gelu(blocks::conv(&sc, "conv", x, 1)?);
        if g.shape(skip)[2..] != g.shape(x)[2..] {
            return Err(invalid(format!(
                "skip {st} has spatial dims {:?}, stage output {:?}",
                &g.shape(skip)[2..],
                &g.shape(x)[2..]
            )));
        }
        x = g.add(x, blocks::conv(&sc, "skip", skip, 1)?);
    }
    blocks::conv(s, "out", x, 1)
}

/// Skip inputs for the head: the reference frame's network input resized
/// to each stage's resolution.
pub fn head_skips(reference: &FeatureMap<f64>, upscale: usize) -> Vec<FeatureMap<f64>> {
    (1..=upscale.trailing_zeros())
        .map(|st| freqops::upsample_bilinear(reference, 1 << st).expect("scale >= 1"))
        .collect()
}

fn to_tensor(a: &FeatureMap<f64>) -> Tensor {
    a.clone().into_dyn()
}

/// Graph-level forward on preprocessed, aligned frame inputs of shape
/// `(batch, 2*c_raw, H, W)`. Odd or indivisible dims are reflect-padded on
/// entry and the output is cropped back to `(upscale*H, upscale*W)`.
pub fn forward_graph(g: &Graph, store: &ParamStore, inputs: &[FeatureMap<f64>], cfg: &HlnetConfig) -> Result<Var> {
    cfg.validate()?;
    if inputs.len() != cfg.n_frames {
        return Err(invalid(format!(
            "forward: got {} frames, config expects {}",
            inputs.len(),
            cfg.n_frames
        )));
    }
    let (b, c, h, w) = inputs[0].dim();
    if c != cfg.input_channels() {
        return Err(invalid(format!(
            "forward: inputs have {c} channels, expected {}",
            cfg.input_channels()
        )));
    }
    if inputs.iter().any(|x| x.dim() != (b, c, h, w)) {
        return Err(invalid("forward: frame inputs differ in shape"));
    }
    let m = cfg.spatial_multiple();
    let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let padded: Vec<FeatureMap<f64>> = if (hp, wp) != (h, w) {
        inputs.iter().map(|x| pad_reflect(x, hp, wp)).collect()
    } else {
        inputs.to_vec()
    };
    let s = Scope::root(g, store);
    let encoded: Vec<Var> = padded
        .iter()
        .map(|x| encode(&s, g.constant(to_tensor(x))))
        .collect::<Result<_>>()?;
    let fused = recurrent_fuse(&s, &encoded, cfg)?;
    let skips: Vec<Var> = head_skips(&padded[0], cfg.upscale)
        .iter()
        .map(|k| g.constant(to_tensor(k)))
        .collect();
    let out = upsample_head(&s.child("head"), fused, &skips, cfg.upscale)?;
    if (hp, wp) != (h, w) {
        Ok(g.crop(out, 0, 0, h * cfg.upscale, w * cfg.upscale))
    } else {
        Ok(out)
    }
}

/// Preprocesses and aligns a bracket into per-frame network inputs.
pub fn prepare_inputs(seq: &BracketSequence, cfg: &HlnetConfig) -> Result<Vec<FeatureMap<f64>>> {
    if seq.len() != cfg.n_frames {
        return Err(invalid(format!(
            "bracket has {} frames, config expects {}",
            seq.len(),
            cfg.n_frames
        )));
    }
    if seq.frames[0].channels() != cfg.c_raw {
        return Err(invalid(format!(
            "bracket has {} raw channels, config expects {}",
            seq.frames[0].channels(),
            cfg.c_raw
        )));
    }
    let pre = imaging::preprocess_bracket(seq, cfg.gamma)?;
    let aligned = align_frames(&pre, cfg.alignment)?;
    Ok(aligned.into_iter().map(|f| f.mapv(f64::from)).collect())
}

/// Restored image `(1, c_raw, upscale*H, upscale*W)`, unclamped.
pub fn forward(seq: &BracketSequence, params: &HlnetParams, cfg: &HlnetConfig) -> Result<FeatureMap<f64>> {
    let inputs = prepare_inputs(seq, cfg)?;
    let g = Graph::new();
    let out = forward_graph(&g, &params.store, &inputs, cfg)?;
    Ok(into4(&g.value(out)))
}

/// [`forward`] clamped to `[0, 1]` for evaluation.
pub fn forward_eval(seq: &BracketSequence, params: &HlnetParams, cfg: &HlnetConfig) -> Result<FeatureMap<f64>> {
    Ok(forward(seq, params, cfg)?.mapv(|v| v.clamp(0.0, 1.0)))
}

pub(crate) fn into4(t: &Tensor) -> FeatureMap<f64> {
    t.clone()
        .into_dimensionality::<ndarray::Ix4>()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
        .expect("network output is 4-D")
}
