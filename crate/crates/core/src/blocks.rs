//! Learnable building blocks evaluated on an autodiff [`Graph`].
//!
//! Every block reads its weights through a [`Scope`] and is paired with an
//! `init_*` function that creates those weights in a [`ParamStore`]. The
//! last projection of each residual block is zero-initialized, so a freshly
//! initialized block is the identity map.

use crate::autograd::{Graph, Var};
use crate::error::{invalid, Result};
use crate::params::{Init, Scope};

const NORM_EPS: f64 = 1e-5;
const QK_EPS: f64 = 1e-6;

/// Ablation wiring inside the high/low frequency block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HlfdbVariant {
    /// Average-pool split; dense local branch on the high band, attention
    /// ladder on the low band.
    Standard,
    /// Dense local branch on both bands.
    LocalOnly,
    /// Attention ladder on both bands.
    GlobalOnly,
    /// Haar split; LL feeds the attention ladder, the detail bands are
    /// squeezed to `width` channels for the dense branch and expanded back.
    WaveletSplit,
}

impl HlfdbVariant {
    pub fn code(self) -> u8 {
        match self {
            HlfdbVariant::Standard => 0,
            HlfdbVariant::LocalOnly => 1,
            HlfdbVariant::GlobalOnly => 2,
            HlfdbVariant::WaveletSplit => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => HlfdbVariant::Standard,
            1 => HlfdbVariant::LocalOnly,
            2 => HlfdbVariant::GlobalOnly,
            3 => HlfdbVariant::WaveletSplit,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HlfdbConfig {
    pub width: usize,
    pub pool_k: usize,
    pub n_dense_layers: usize,
    pub n_scales: usize,
    pub n_heads: usize,
    pub variant: HlfdbVariant,
}

impl Default for HlfdbConfig {
    fn default() -> Self {
        HlfdbConfig {
            width: 16,
            pool_k: 2,
            n_dense_layers: 4,
            n_scales: 3,
            n_heads: 2,
            variant: HlfdbVariant::Standard,
        }
    }
}

impl HlfdbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.width % 2 != 0 {
            return Err(invalid(format!("block width must be positive and even, got {}", self.width)));
        }
        if self.n_heads == 0 || self.width % self.n_heads != 0 {
            return Err(invalid(format!(
                "width {} not divisible by n_heads {}",
                self.width, self.n_heads
            )));
        }
        if self.n_scales == 0 {
            return Err(invalid("n_scales must be >= 1"));
        }
        if self.pool_k == 0 {
            return Err(invalid("pool_k must be >= 1"));
        }
        if self.n_dense_layers == 0 {
            return Err(invalid("n_dense_layers must be >= 1"));
        }
        Ok(())
    }

    /// Height and width of the block input must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        let ladder = 1 << (self.n_scales - 1);
        match self.variant {
            HlfdbVariant::WaveletSplit => 2 * ladder,
            _ => self.pool_k * ladder,
        }
    }
}

fn dims(g: &Graph, x: Var) -> (usize, usize, usize, usize) {
    let s = g.shape(x);
    assert_eq!(s.len(), 4, "feature maps are 4-D");
    (s[0], s[1], s[2], s[3])
}

fn expect_channels(g: &Graph, x: Var, c: usize, what: &str) -> Result<()> {
    let got = dims(g, x).1;
    if got != c {
        return Err(invalid(format!("{what}: expected {c} channels, got {got}")));
    }
    Ok(())
}

/// Width of a block's parameters, read from one of its kernels.
fn kernel_dim(s: &Scope, name: &str, axis: usize) -> Result<usize> {
    Ok(s.store.require(&s.full_name(name))?.shape()[axis])
}

/// Same-padded convolution using `name.w` / `name.b`.
pub fn conv(s: &Scope, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = s.param(&format!("{name}.w"))?;
    let b = s.param(&format!("{name}.b"))?;
    let shape = s.graph.shape(w);
    expect_channels(s.graph, x, shape[1], &s.full_name(name))?;
    Ok(s.graph.conv2d(x, w, Some(b), stride, shape[2] / 2))
}

/// Per-channel standardization followed by a learned affine.
fn affine_norm(s: &Scope, x: Var) -> Result<Var> {
    let g = s.graph;
    let n = g.channel_norm(x, NORM_EPS);
    let scaled = g.mul_bcast(n, s.param("scale")?);
    Ok(g.add_bcast(scaled, s.param("shift")?))
}

fn init_affine_norm(init: &mut Init, width: usize) {
    init.constant("scale", &[1, width, 1, 1], 1.0);
    init.constant("shift", &[1, width, 1, 1], 0.0);
}

// ---- SCConv -----------------------------------------------------------------

pub fn init_scconv(init: &mut Init, width: usize, zero_final: bool) {
    let half = width / 2;
    init.scoped("gn", |i| init_affine_norm(i, width));
    init.conv("up", half, half, 3, false);
    init.conv("low", half, half, 1, false);
    init.conv("mix", width, width, 1, zero_final);
}

/// Spatial/channel reconstruction convolution.
///
/// Spatial unit: channels are standardized, the learned norm scales are
/// turned into channel weights (softmax times width, so equal scales weigh
/// 1), and `sigmoid(weight * normalized)` gates each position into an
/// informative part `gate * x` and a remainder `(1 - gate) * x`. The two
/// parts are cross-added half against half.
///
/// Channel unit: the first half goes through a 3x3 kernel, the second half
/// through a 1x1 kernel; the results are concatenated and mixed by a 1x1
/// kernel.
pub fn scconv(s: &Scope, x: Var) -> Result<Var> {
    let g = s.graph;
    let width = kernel_dim(s, "mix.w", 0)?;
    expect_channels(g, x, width, &s.full_name("scconv"))?;
    let half = width / 2;

    let gn_scope = s.child("gn");
    let normed = affine_norm(&gn_scope, x)?;
    let scale = gn_scope.param("scale")?;
    let flat = g.reshape(scale, &[1, 1, 1, width]);
    let soft = g.softmax_last(flat);
    let soft = g.reshape(soft, &[1, width, 1, 1]);
    let weights = g.scale(soft, width as f64);
    let gate = g.sigmoid(g.mul_bcast(normed, weights));

    let informative = g.mul(gate, x);
    let rest = g.sub(x, informative);
    let i_a = g.slice_axis(informative, 1, 0, half);
    let i_b = g.slice_axis(informative, 1, half, half);
    let r_a = g.slice_axis(rest, 1, 0, half);
    let r_b = g.slice_axis(rest, 1, half, half);
    let up_in = g.add(i_a, r_b);
    let low_in = g.add(i_b, r_a);

    let up = conv(s, "up", up_in, 1)?;
    let low = conv(s, "low", low_in, 1)?;
    let joined = g.concat(1, &[up, low]);
    conv(s, "mix", joined, 1)
}

// ---- SCEB -------------------------------------------------------------------

pub fn init_sceb(init: &mut Init, width: usize) {
    init.conv("conv_a", width, width, 3, false);
    init.scoped("sc_a", |i| init_scconv(i, width, false));
    init.conv("conv_b", width, width, 3, false);
    init.scoped("sc_b", |i| init_scconv(i, width, true));
}

/// `x + SCConv(Conv3x3(SCConv(Conv3x3(x))))`.
pub fn sceb(s: &Scope, x: Var) -> Result<Var> {
    let width = kernel_dim(s, "conv_a.w", 0)?;
    expect_channels(s.graph, x, width, &s.full_name("sceb"))?;
    let h = conv(s, "conv_a", x, 1)?;
    let h = scconv(&s.child("sc_a"), h)?;
    let h = conv(s, "conv_b", h, 1)?;
    let h = scconv(&s.child("sc_b"), h)?;
    Ok(s.graph.add(x, h))
}

// ---- plain residual block ----------------------------------------------------

pub fn init_residual_block(init: &mut Init, width: usize) {
    init.conv("conv_a", width, width, 3, false);
    init.conv("conv_b", width, width, 3, true);
}

/// `x + Conv3x3(GELU(Conv3x3(x)))`; stands in for removed blocks in the
/// ablation variants.
pub fn residual_block(s: &Scope, x: Var) -> Result<Var> {
    let h = conv(s, "conv_a", x, 1)?;
    let h = s.graph.gelu(h);
    let h = conv(s, "conv_b", h, 1)?;
    Ok(s.graph.add(x, h))
}

// ---- local branch -------------------------------------------------------------

pub fn dense_growth(width: usize) -> usize {
    (width / 2).max(1)
}

pub fn init_lfeb(init: &mut Init, width: usize, n_layers: usize) {
    let growth = dense_growth(width);
    for j in 0..n_layers {
        init.conv(&format!("layer{j}"), growth, width + j * growth, 3, false);
    }
    init.conv("proj", width, width + n_layers * growth, 1, true);
}

/// Densely connected stack of 3x3 kernels: layer `j` sees the input and
/// the outputs of all earlier layers; a 1x1 projection of everything is
/// added back to the input.
pub fn lfeb(s: &Scope, x: Var, n_layers: usize) -> Result<Var> {
    let g = s.graph;
    let width = kernel_dim(s, "proj.w", 0)?;
    expect_channels(g, x, width, &s.full_name("lfeb"))?;
    let mut features = vec![x];
    for j in 0..n_layers {
        let input = if features.len() == 1 { x } else { g.concat(1, &features) };
        let h = conv(s, &format!("layer{j}"), input, 1)?;
        features.push(g.gelu(h));
    }
    let all = g.concat(1, &features);
    let proj = conv(s, "proj", all, 1)?;
    Ok(g.add(x, proj))
}

// ---- channel self-attention --------------------------------------------------

pub fn init_attention(init: &mut Init, width: usize, n_heads: usize) {
    init.scoped("norm", |i| init_affine_norm(i, width));
    init.conv("q", width, width, 1, false);
    init.conv("k", width, width, 1, false);
    init.conv("v", width, width, 1, false);
    init.conv("proj", width, width, 1, true);
    init.constant("temperature", &[1, n_heads, 1, 1], 1.0);
}

/// Channel-wise (transposed) self-attention. Returns the block output and
/// the `(batch, heads, C/heads, C/heads)` attention map.
pub fn channel_self_attention_with_map(s: &Scope, x: Var, n_heads: usize) -> Result<(Var, Var)> {
    let g = s.graph;
    let (b, c, h, w) = dims(g, x);
    if n_heads == 0 || c % n_heads != 0 {
        return Err(invalid(format!("{c} channels not divisible by {n_heads} heads")));
    }
    let width = kernel_dim(s, "q.w", 0)?;
    expect_channels(g, x, width, &s.full_name("attention"))?;
    let temp_shape = s.store.require(&s.full_name("temperature"))?.shape().to_vec();
    if temp_shape[1] != n_heads {
        return Err(invalid(format!(
            "attention parameters have {} heads, asked for {n_heads}",
            temp_shape[1]
        )));
    }
    let ch = c / n_heads;
    let n = affine_norm(&s.child("norm"), x)?;
    let heads = |v: Var| g.reshape(v, &[b, n_heads, ch, h * w]);
    let q = g.l2_normalize_last(heads(conv(s, "q", n, 1)?), QK_EPS);
    let k = g.l2_normalize_last(heads(conv(s, "k", n, 1)?), QK_EPS);
    let v = heads(conv(s, "v", n, 1)?);
    let logits = g.matmul(q, g.transpose_last2(k));
    let logits = g.mul_bcast(logits, s.param("temperature")?);
    let attn = g.softmax_last(logits);
    let mixed = g.matmul(attn, v);
    let mixed = g.reshape(mixed, &[b, c, h, w]);
    let out = conv(s, "proj", mixed, 1)?;
    Ok((g.add(x, out), attn))
}

pub fn channel_self_attention(s: &Scope, x: Var, n_heads: usize) -> Result<Var> {
    channel_self_attention_with_map(s, x, n_heads).map(|(out, _)| out)
}

// ---- wavelet fusion -----------------------------------------------------------

/// Mix initialized to pass the LL band through and ignore the coarse map.
pub fn init_mswf(init: &mut Init, width: usize) {
    let mut w = crate::autograd::Tensor::zeros(ndarray::IxDyn(&[width, 2 * width, 1, 1]));
    for i in 0..width {
        w[[i, width + i, 0, 0]] = 1.0;
    }
    init.tensor("mix.w", w);
    init.constant("mix.b", &[1, width, 1, 1], 0.0);
}

/// Graph form of [`crate::freqops::mswf_fuse`]: `small` is merged into the
/// LL band of `large` by a 1x1 mix over `[small, ll]`, then inverted.
pub fn mswf_fuse(s: &Scope, small: Var, large: Var) -> Result<Var> {
    let g = s.graph;
    let (bs, cs, hs, ws) = dims(g, small);
    let (bl, cl, hl, wl) = dims(g, large);
    if bs != bl || cs != cl || hl != 2 * hs || wl != 2 * ws {
        return Err(invalid(format!(
            "mswf_fuse expects large = 2x small with equal channels, got {:?} and {:?}",
            (bs, cs, hs, ws),
            (bl, cl, hl, wl)
        )));
    }
    let bands = g.dwt(large);
    let ll = g.slice_axis(bands, 1, 0, cl);
    let details = g.slice_axis(bands, 1, cl, 3 * cl);
    let fused = conv(s, "mix", g.concat(1, &[small, ll]), 1)?;
    Ok(g.idwt(g.concat(1, &[fused, details])))
}

// ---- global branch ---------------------------------------------------------------

pub fn init_gfeb(init: &mut Init, width: usize, n_scales: usize, n_heads: usize) {
    for l in 0..n_scales {
        init.scoped(&format!("attn{l}"), |i| init_attention(i, width, n_heads));
        if l + 1 < n_scales {
            init.conv(&format!("down{l}"), width, width, 3, false);
            init.scoped(&format!("fuse{l}"), |i| init_mswf(i, width));
        }
    }
}

/// Multi-scale attention ladder: attention then a strided 3x3 downsample at
/// each level on the way down, wavelet fusion of each coarser result into
/// the next finer level on the way up.
pub fn gfeb(s: &Scope, x: Var, cfg: &HlfdbConfig) -> Result<Var> {
    let g = s.graph;
    let (_, _, h, w) = dims(g, x);
    let m = 1usize << (cfg.n_scales - 1);
    if h % m != 0 || w % m != 0 {
        return Err(invalid(format!(
            "gfeb with {} scales needs dims divisible by {m}, got {h}x{w}",
            cfg.n_scales
        )));
    }
    let mut levels = Vec::with_capacity(cfg.n_scales);
    let mut cur = x;
    for l in 0..cfg.n_scales {
        let a = channel_self_attention(&s.child(&format!("attn{l}")), cur, cfg.n_heads)?;
        levels.push(a);
        if l + 1 < cfg.n_scales {
            cur = conv(s, &format!("down{l}"), a, 2)?;
        }
    }
    let mut up = levels.pop().expect("at least one level");
    for (l, large) in levels.into_iter().enumerate().rev() {
        up = mswf_fuse(&s.child(&format!("fuse{l}")), up, large)?;
    }
    Ok(up)
}

// ---- HLFDB ------------------------------------------------------------------------

pub fn init_hlfdb(init: &mut Init, cfg: &HlfdbConfig) {
    let (w, n) = (cfg.width, cfg.n_dense_layers);
    let gfeb_init = |i: &mut Init| init_gfeb(i, w, cfg.n_scales, cfg.n_heads);
    match cfg.variant {
        HlfdbVariant::Standard => {
            init.scoped("local", |i| init_lfeb(i, w, n));
            init.scoped("global", gfeb_init);
            init.conv("merge", w, 2 * w, 1, true);
        }
        HlfdbVariant::LocalOnly => {
            init.scoped("local_high", |i| init_lfeb(i, w, n));
            init.scoped("local_low", |i| init_lfeb(i, w, n));
            init.conv("merge", w, 2 * w, 1, true);
        }
        HlfdbVariant::GlobalOnly => {
            init.scoped("global_high", gfeb_init);
            init.scoped("global_low", gfeb_init);
            init.conv("merge", w, 2 * w, 1, true);
        }
        HlfdbVariant::WaveletSplit => {
            init.conv("detail_in", w, 3 * w, 1, false);
            init.scoped("local_detail", |i| init_lfeb(i, w, n));
            init.conv("detail_out", 3 * w, w, 1, false);
            init.scoped("global", gfeb_init);
            init.conv("merge", w, w, 1, true);
        }
    }
}

/// High/low frequency decomposition block with an outer residual.
pub fn hlfdb(s: &Scope, x: Var, cfg: &HlfdbConfig) -> Result<Var> {
    cfg.validate()?;
    let g = s.graph;
    let (_, c, h, w) = dims(g, x);
    expect_channels(g, x, cfg.width, &s.full_name("hlfdb"))?;
    let m = cfg.spatial_multiple();
    if h % m != 0 || w % m != 0 {
        return Err(invalid(format!(
            "hlfdb ({:?}) needs dims divisible by {m}, got {h}x{w}",
            cfg.variant
        )));
    }
    let n = cfg.n_dense_layers;
    let merged = match cfg.variant {
        HlfdbVariant::WaveletSplit => {
            let bands = g.dwt(x);
            let ll = g.slice_axis(bands, 1, 0, c);
            let details = g.slice_axis(bands, 1, c, 3 * c);
            let low = gfeb(&s.child("global"), ll, cfg)?;
            let squeezed = conv(s, "detail_in", details, 1)?;
            let dense = lfeb(&s.child("local_detail"), squeezed, n)?;
            let high = conv(s, "detail_out", dense, 1)?;
            let rec = g.idwt(g.concat(1, &[low, high]));
            conv(s, "merge", rec, 1)?
        }
        variant => {
            let low = g.avg_pool(x, cfg.pool_k);
            let low_up = g.upsample_bilinear(low, cfg.pool_k);
            let high = g.sub(x, low_up);
            let (hi_out, lo_out) = match variant {
                HlfdbVariant::Standard => (
                    lfeb(&s.child("local"), high, n)?,
                    gfeb(&s.child("global"), low, cfg)?,
                ),
                HlfdbVariant::LocalOnly => (
                    lfeb(&s.child("local_high"), high, n)?,
                    lfeb(&s.child("local_low"), low, n)?,
                ),
                HlfdbVariant::GlobalOnly => (
                    gfeb(&s.child("global_high"), high, cfg)?,
                    gfeb(&s.child("global_low"), low, cfg)?,
                ),
                HlfdbVariant::WaveletSplit => unreachable!(),
            };
            let lo_up = g.upsample_bilinear(lo_out, cfg.pool_k);
            conv(s, "merge", g.concat(1, &[hi_out, lo_up]), 1)?
        }
    };
    Ok(g.add(x, merged))
}
