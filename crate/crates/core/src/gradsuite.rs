//! Finite-difference checks of every network block at small fixed shapes,
//! plus a sampled check of a whole toy network.

use ndarray::IxDyn;
use rand::Rng;

use crate::autograd::{Graph, Tensor, Var};
use crate::blocks::{self, HlfdbConfig, HlfdbVariant};
use crate::error::Result;
use crate::gradcheck::{check_block, check_param_gradients, GradCheck, GradReport, Sampling};
use crate::imaging::DEFAULT_MU;
use crate::model::{self, HlnetConfig};
use crate::params::{Init, ParamStore};
use crate::rng::seeded;
use crate::training::mu_l1_loss_graph;

/// Channels of the block-level fixtures.
pub const WIDTH: usize = 4;
/// Spatial size of the block-level fixtures.
pub const SIZE: usize = 8;
const JITTER: f64 = 0.1;
/// Absolute floor for per-tensor groups whose true gradient is near zero
/// and whose finite differences are dominated by round-off.
pub const GROUP_ATOL: f64 = 1e-8;

fn uniform(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = seeded(seed);
    Tensor::from_shape_fn(IxDyn(shape), |_| rng.random_range(lo..hi))
}

fn params(seed: u64, f: impl FnOnce(&mut Init)) -> ParamStore {
    let mut store = ParamStore::new();
    let mut rng = seeded(seed);
    f(&mut Init::new(&mut store, &mut rng));
    store.jitter_zeros(seed ^ 0x71, JITTER);
    store
}

fn block_cfg(variant: HlfdbVariant) -> HlfdbConfig {
    HlfdbConfig {
        width: WIDTH,
        pool_k: 2,
        n_dense_layers: 2,
        n_scales: 3,
        n_heads: 2,
        variant,
    }
}

fn feature(seed: u64) -> Tensor {
    uniform(&[1, WIDTH, SIZE, SIZE], seed, -1.0, 1.0)
}

/// Names of the checks run by [`block_suite`], in order.
pub const BLOCK_CHECKS: &[&str] = &[
    "scconv",
    "sceb",
    "residual_block",
    "lfeb",
    "channel_self_attention",
    "gfeb",
    "hlfdb_standard",
    "hlfdb_local_only",
    "hlfdb_global_only",
    "hlfdb_wavelet_split",
    "mswf_fuse",
    "upsample_head",
    "mu_l1_loss",
];

/// Runs one named block check.
pub fn block_check(name: &str, cfg: &GradCheck) -> Option<GradReport> {
    let x = feature(1);
    let report = match name {
        "scconv" => {
            let st = params(2, |i| blocks::init_scconv(i, WIDTH, true));
            check_block(&st, &[x], &|s, v| blocks::scconv(s, v[0]).expect("scconv"), cfg)
        }
        "sceb" => {
            let st = params(3, |i| blocks::init_sceb(i, WIDTH));
            check_block(&st, &[x], &|s, v| blocks::sceb(s, v[0]).expect("sceb"), cfg)
        }
        "residual_block" => {
            let st = params(4, |i| blocks::init_residual_block(i, WIDTH));
            check_block(&st, &[x], &|s, v| blocks::residual_block(s, v[0]).expect("residual"), cfg)
        }
        "lfeb" => {
            let st = params(5, |i| blocks::init_lfeb(i, WIDTH, 2));
            check_block(&st, &[x], &|s, v| blocks::lfeb(s, v[0], 2).expect("lfeb"), cfg)
        }
        "channel_self_attention" => {
            let st = params(6, |i| blocks::init_attention(i, WIDTH, 2));
            check_block(
                &st,
                &[x],
                &|s, v| blocks::channel_self_attention(s, v[0], 2).expect("attention"),
                cfg,
            )
        }
        "gfeb" => {
            let bc = block_cfg(HlfdbVariant::Standard);
            let st = params(7, |i| blocks::init_gfeb(i, WIDTH, bc.n_scales, bc.n_heads));
            check_block(&st, &[x], &|s, v| blocks::gfeb(s, v[0], &bc).expect("gfeb"), cfg)
        }
        "hlfdb_standard" | "hlfdb_local_only" | "hlfdb_global_only" | "hlfdb_wavelet_split" => {
            let variant = match name {
                "hlfdb_standard" => HlfdbVariant::Standard,
                "hlfdb_local_only" => HlfdbVariant::LocalOnly,
                "hlfdb_global_only" => HlfdbVariant::GlobalOnly,
                _ => HlfdbVariant::WaveletSplit,
            };
            // the low path pools by 2 before its 3-scale ladder, so 16x16
            // keeps the coarsest attention above a single pixel
            let bc = block_cfg(variant);
            let st = params(8, |i| blocks::init_hlfdb(i, &bc));
            let x = uniform(&[1, WIDTH, 2 * SIZE, 2 * SIZE], 16, -1.0, 1.0);
            check_block(&st, &[x], &|s, v| blocks::hlfdb(s, v[0], &bc).expect("hlfdb"), cfg)
        }
        "mswf_fuse" => {
            let small = uniform(&[1, WIDTH, SIZE / 2, SIZE / 2], 9, -1.0, 1.0);
            let st = params(10, |i| blocks::init_mswf(i, WIDTH));
            check_block(&st, &[small, x], &|s, v| blocks::mswf_fuse(s, v[0], v[1]).expect("mswf"), cfg)
        }
        "upsample_head" => {
            let width = 2 * WIDTH;
            let feat = uniform(&[1, width, SIZE / 2, SIZE / 2], 11, -1.0, 1.0);
            let skips = [uniform(&[1, 2, SIZE, SIZE], 12, 0.0, 1.0), uniform(&[1, 2, 2 * SIZE, 2 * SIZE], 13, 0.0, 1.0)];
            let st = params(14, |i| model::init_head(i, width, 2, 1, 4));
            check_block(
                &st,
                &[feat, skips[0].clone(), skips[1].clone()],
                &|s, v| model::upsample_head(s, v[0], &v[1..], 4).expect("head"),
                cfg,
            )
        }
        "mu_l1_loss" => {
            // interior points keep away from the clamp and |.| kinks
            let gt = uniform(&[1, WIDTH, SIZE, SIZE], 15, 0.05, 0.95);
            let pred = gt.mapv(|v| (v + 0.5) % 0.9 + 0.05);
            let st = ParamStore::new();
            check_block(
                &st,
                &[pred],
                &|s, v| {
                    let g = s.graph;
                    mu_l1_loss_graph(g, v[0], g.constant(gt.clone()), DEFAULT_MU).expect("loss")
                },
                cfg,
            )
        }
        _ => return None,
    };
    Some(report)
}

/// Every entry of [`BLOCK_CHECKS`].
pub fn block_suite(cfg: &GradCheck) -> Vec<(&'static str, GradReport)> {
    BLOCK_CHECKS
        .iter()
        .map(|n| (*n, block_check(n, cfg).expect("listed check")))
        .collect()
}

/// Toy network for the whole-model check: one raw channel, width 8, two
/// attention scales, x4 output.
pub fn toy_model_config() -> HlnetConfig {
    let mut cfg = HlnetConfig {
        c_raw: 1,
        ..HlnetConfig::default()
    }
    .with_width(8);
    cfg.hlfdb.n_scales = 2;
    cfg
}

/// Relative error over `n_weights` weights drawn uniformly from the whole
/// toy network on an 8x8 bracket.
pub fn toy_model_check(n_weights: usize, cfg: &GradCheck) -> Result<GradReport> {
    let mcfg = toy_model_config();
    let mut p = model::init_params(&mcfg, 21)?;
    p.store.jitter_zeros(22, JITTER);
    let inputs: Vec<_> = (0..mcfg.n_frames)
        .map(|i| {
            uniform(&[1, mcfg.input_channels(), SIZE, SIZE], 30 + i as u64, 0.0, 1.0)
                .into_dimensionality()
                .expect("4-D")
        })
        .collect();
    let f = |g: &Graph, st: &ParamStore| -> Var { model::forward_graph(g, st, &inputs, &mcfg).expect("forward") };
    Ok(check_param_gradients(&p.store, &f, &|_| true, Sampling::Total(n_weights), cfg))
}
