//! μ-law L1 training: crop sampling, batching, the AdamW loop with
//! checkpoints, evaluation metrics and the ablation registry.
//!
//! Each optimizer step emits one log line of the form
//!
//! ```text
//! step=12 epoch=3 loss=0.0412873 lr=0.0002 wall=1.532
//! ```
//!
//! where `step` is 0-based, `loss` is the pre-update batch loss and `wall`
//! is seconds since the run (or resume) started.

mod checkpoint;
mod metrics;
mod optim;

pub use checkpoint::Checkpoint;
pub use metrics::{
    mu_l1_loss, mu_l1_loss_graph, psnr_from_mse, psnr_mu, ssim, ssim_mu, PSNR_CAP_DB, SSIM_SIGMA, SSIM_WINDOW,
};
pub use optim::{optimizer_step, AdamState, AdamW};

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::{s, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::autograd::{Graph, Tensor};
use crate::config::{parse_value, join_list};
use crate::error::{invalid, Error, Result};
use crate::imaging::{BracketSequence, RawFrame, DEFAULT_MU};
use crate::model::{self, into4, Ablation, HlnetConfig, HlnetParams};
use crate::rng::{derive, seeded};
use crate::simdata::SamplePair;
use crate::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    /// Half-cosine decay from `lr` to zero over the planned steps.
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub max_steps: Option<usize>,
    pub crop: usize,
    pub stride: usize,
    pub batch: usize,
    pub mu: f64,
    pub seed: u64,
    pub schedule: Schedule,
    pub checkpoint_dir: Option<PathBuf>,
    /// Save a checkpoint every this many epochs (and after the last one).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            epochs: 1,
            max_steps: None,
            crop: 64,
            stride: 32,
            batch: 4,
            mu: DEFAULT_MU,
            seed: 0,
            schedule: Schedule::Cosine,
            checkpoint_dir: None,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &HlnetConfig) -> Result<()> {
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(invalid("beta1 and beta2 must lie in (0, 1)"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 || !(self.eps > 0.0) {
            return Err(invalid("lr and eps must be positive, weight_decay non-negative"));
        }
        if self.batch == 0 || self.stride == 0 || self.crop == 0 || self.checkpoint_every == 0 {
            return Err(invalid("batch, crop, stride and checkpoint_every must be >= 1"));
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return Err(invalid("epochs must be >= 1"));
        }
        let m = model.spatial_multiple();
        if self.crop % m != 0 {
            return Err(invalid(format!("crop {} is not divisible by the model's spatial multiple {m}", self.crop)));
        }
        if !(self.mu > 0.0) {
            return Err(invalid("mu must be positive"));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    /// `(epochs, total_steps)` for a dataset of `n` samples.
    pub fn plan(&self, n: usize) -> (usize, usize) {
        let per_epoch = n.div_ceil(self.batch).max(1);
        match self.max_steps {
            Some(s) => (s.div_ceil(per_epoch), s),
            None => (self.epochs, self.epochs * per_epoch),
        }
    }

    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::Cosine => {
                let t = step as f64 / total.max(1) as f64;
                0.5 * self.lr * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    pub fn to_kv(&self) -> String {
        format!(
            "lr={}\nbeta1={}\nbeta2={}\neps={}\nweight_decay={}\nepochs={}\nmax_steps={}\ncrop={}\nstride={}\nbatch={}\nmu={}\nseed={}\nschedule={}\ncheckpoint_every={}\n",
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
            self.weight_decay,
            self.epochs,
            self.max_steps.map(|s| s.to_string()).unwrap_or_default(),
            self.crop,
            self.stride,
            self.batch,
            self.mu,
            self.seed,
            match self.schedule {
                Schedule::Constant => "constant",
                Schedule::Cosine => "cosine",
            },
            self.checkpoint_every
        )
    }

    /// Overrides fields from `key=value` pairs; unknown keys are ignored.
    pub fn apply_kv<'a>(&mut self, pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<()> {
        for (k, v) in pairs {
            match k {
                "lr" => self.lr = parse_value(k, v)?,
                "beta1" => self.beta1 = parse_value(k, v)?,
                "beta2" => self.beta2 = parse_value(k, v)?,
                "eps" => self.eps = parse_value(k, v)?,
                "weight_decay" => self.weight_decay = parse_value(k, v)?,
                "epochs" => self.epochs = parse_value(k, v)?,
                "max_steps" => {
                    self.max_steps = if v.trim().is_empty() { None } else { Some(parse_value(k, v)?) }
                }
                "crop" => self.crop = parse_value(k, v)?,
                "stride" => self.stride = parse_value(k, v)?,
                "batch" => self.batch = parse_value(k, v)?,
                "mu" => self.mu = parse_value(k, v)?,
                "seed" => self.seed = parse_value(k, v)?,
                "schedule" => {
                    self.schedule = match v {
                        "constant" => Schedule::Constant,
                        "cosine" => Schedule::Cosine,
                        _ => return Err(invalid(format!("schedule must be constant or cosine, got `{v}`"))),
                    }
                }
                "checkpoint_every" => self.checkpoint_every = parse_value(k, v)?,
                _ => {}
            }
        }
        Ok(())
    }
}

/// All `crop`x`crop` bracket windows at multiples of `stride`, row-major,
/// with the matching `upscale`-scaled ground-truth windows. Crop ids are
/// `<scene>@<y>,<x>`.
pub fn crop_sampler(pair: &SamplePair, crop: usize, stride: usize) -> Result<Vec<SamplePair>> {
    if crop == 0 || stride == 0 {
        return Err(invalid("crop and stride must be >= 1"));
    }
    let (h, w) = pair.bracket.frames[0].spatial();
    let (gh, gw) = (pair.gt.dim().2, pair.gt.dim().3);
    if crop > h || crop > w {
        return Err(invalid(format!("crop {crop} exceeds frame size {h}x{w}")));
    }
    if gh % h != 0 || gw % w != 0 || gh / h != gw / w {
        return Err(invalid(format!("ground truth {gh}x{gw} is not an integer multiple of {h}x{w}")));
    }
    let up = gh / h;
    let mut out = Vec::new();
    for y in (0..=h - crop).step_by(stride) {
        for x in (0..=w - crop).step_by(stride) {
            let frames = pair
                .bracket
                .frames
                .iter()
                .map(|f| RawFrame::new(f.data.slice(s![.., .., y..y + crop, x..x + crop]).to_owned(), f.exposure_time))
                .collect::<Result<Vec<_>>>()?;
            let gt = pair
                .gt
                .slice(s![.., .., up * y..up * (y + crop), up * x..up * (x + crop)])
                .to_owned();
            out.push(SamplePair {
                gt,
                bracket: BracketSequence::new(frames, format!("{}@{y},{x}", pair.id()), pair.bracket.saturation_level)?,
            });
        }
    }
    Ok(out)
}

/// A crop ready for the network: preprocessed per-frame inputs and the
/// ground truth, both in double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub id: String,
    pub inputs: Vec<FeatureMap<f64>>,
    pub gt: FeatureMap<f64>,
}

impl TrainSample {
    pub fn from_pair(pair: &SamplePair, cfg: &HlnetConfig) -> Result<Self> {
        let (gh, gw) = (pair.gt.dim().2, pair.gt.dim().3);
        let (h, w) = pair.bracket.frames[0].spatial();
        if (gh, gw) != (h * cfg.upscale, w * cfg.upscale) {
            return Err(invalid(format!(
                "ground truth {gh}x{gw} does not match {h}x{w} at upscale {}",
                cfg.upscale
            )));
        }
        Ok(TrainSample {
            id: pair.id().to_string(),
            inputs: model::prepare_inputs(&pair.bracket, cfg)?,
            gt: pair.gt.mapv(f64::from),
        })
    }
}

/// Crops every pair and prepares the resulting windows.
pub fn training_samples(pairs: &[SamplePair], model_cfg: &HlnetConfig, cfg: &TrainConfig) -> Result<Vec<TrainSample>> {
    let crops: Vec<SamplePair> = pairs
        .iter()
        .map(|p| crop_sampler(p, cfg.crop, cfg.stride))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    crops.par_iter().map(|c| TrainSample::from_pair(c, model_cfg)).collect()
}

fn stack(parts: Vec<ndarray::ArrayView4<f64>>) -> Result<FeatureMap<f64>> {
    ndarray::concatenate(Axis(0), &parts).map_err(|e| invalid(format!("cannot batch samples: {e}")))
}

/// Batch loss and parameter gradients.
pub fn loss_and_grads(
    params: &HlnetParams,
    model_cfg: &HlnetConfig,
    batch: &[&TrainSample],
    mu: f64,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let inputs = (0..model_cfg.n_frames)
        .map(|i| stack(batch.iter().map(|s| s.inputs[i].view()).collect()))
        .collect::<Result<Vec<_>>>()?;
    let gt = stack(batch.iter().map(|s| s.gt.view()).collect())?;
    let g = Graph::new();
    let pred = model::forward_graph(&g, &params.store, &inputs, model_cfg)?;
    let gt = g.constant(gt.into_dyn());
    let loss = mu_l1_loss_graph(&g, pred, gt, mu)?;
    let value = g.scalar(loss);
    let grads = g.backward(loss);
    Ok((value, g.param_grads(&grads)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall: f64,
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} epoch={} loss={} lr={} wall={:.3}",
            self.step, self.epoch, self.loss, self.lr, self.wall
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub params: HlnetParams,
    pub adam: AdamState,
    /// Loss of every step since step 0, including steps restored from a
    /// checkpoint.
    pub losses: Vec<f64>,
    pub log: Vec<LogRecord>,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_path(dir: &std::path::Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.hlt"))
}

/// Trains from `params` for the planned number of steps.
pub fn train(
    model_cfg: &HlnetConfig,
    params: HlnetParams,
    data: &[TrainSample],
    cfg: &TrainConfig,
    observer: Option<&mut dyn FnMut(&LogRecord)>,
) -> Result<TrainRun> {
    let adam = AdamState::new(&params.store);
    let start = Checkpoint {
        model: model_cfg.clone(),
        params,
        adam,
        epoch: 0,
        step: 0,
        losses: Vec::new(),
    };
    run(start, None, data, cfg, observer)
}

/// Continues a run from a saved checkpoint.
pub fn resume(
    checkpoint: Checkpoint,
    data: &[TrainSample],
    cfg: &TrainConfig,
    observer: Option<&mut dyn FnMut(&LogRecord)>,
) -> Result<TrainRun> {
    run(checkpoint, None, data, cfg, observer)
}

/// Loads a checkpoint file and continues from it; a divergence before the
/// next save reports this file as the last good checkpoint.
pub fn resume_from(
    path: &std::path::Path,
    data: &[TrainSample],
    cfg: &TrainConfig,
    observer: Option<&mut dyn FnMut(&LogRecord)>,
) -> Result<TrainRun> {
    run(Checkpoint::load(path)?, Some(path.to_path_buf()), data, cfg, observer)
}

fn run(
    mut state: Checkpoint,
    mut last_checkpoint: Option<PathBuf>,
    data: &[TrainSample],
    cfg: &TrainConfig,
    mut observer: Option<&mut dyn FnMut(&LogRecord)>,
) -> Result<TrainRun> {
    let model_cfg = state.model.clone();
    model_cfg.validate()?;
    cfg.validate(&model_cfg)?;
    if data.is_empty() {
        return Err(invalid("training set is empty"));
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let opt = cfg.adamw();
    let (epochs, total) = cfg.plan(data.len());
    let clock = Instant::now();
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();

    for epoch in state.epoch..epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut seeded(derive(&[cfg.seed, epoch as u64])));
        for chunk in order.chunks(cfg.batch) {
            if state.step >= total {
                break;
            }
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, grads) = loss_and_grads(&state.params, &model_cfg, &batch, cfg.mu)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    step: state.step,
                    loss,
                    last_checkpoint,
                });
            }
            let lr = cfg.lr_at(state.step, total);
            optimizer_step(&mut state.params.store, &grads, &mut state.adam, &opt, lr)?;
            let rec = LogRecord {
                step: state.step,
                epoch,
                loss,
                lr,
                wall: clock.elapsed().as_secs_f64(),
            };
            if let Some(obs) = observer.as_mut() {
                obs(&rec);
            }
            log.push(rec);
            state.losses.push(loss);
            state.step += 1;
        }
        state.epoch = epoch + 1;
        if let Some(dir) = &cfg.checkpoint_dir {
            if (epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == epochs {
                let path = checkpoint_path(dir, epoch + 1);
                state.save(&path)?;
                checkpoints.push(path.clone());
                last_checkpoint = Some(path);
            }
        }
    }
    Ok(TrainRun {
        params: state.params,
        adam: state.adam,
        losses: state.losses,
        log,
        checkpoints,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleMetrics {
    pub id: String,
    pub psnr_mu: f64,
    pub ssim_mu: f64,
}

/// Per-sample metrics sorted by id, with their means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub samples: Vec<SampleMetrics>,
    pub mean_psnr_mu: f64,
    pub mean_ssim_mu: f64,
}

impl MetricsRecord {
    pub fn from_samples(mut samples: Vec<SampleMetrics>) -> Self {
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        let n = samples.len().max(1) as f64;
        let mean_psnr_mu = samples.iter().map(|s| s.psnr_mu).sum::<f64>() / n;
        let mean_ssim_mu = samples.iter().map(|s| s.ssim_mu).sum::<f64>() / n;
        MetricsRecord {
            samples,
            mean_psnr_mu,
            mean_ssim_mu,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mean_psnr_mu.is_finite() && self.mean_ssim_mu.is_finite()
    }

    /// Tab-separated table with a header row and a trailing `mean` row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tpsnr_mu\tssim_mu\n");
        for s in &self.samples {
            out.push_str(&format!("{}\t{:.4}\t{:.6}\n", s.id, s.psnr_mu, s.ssim_mu));
        }
        out.push_str(&format!("mean\t{:.4}\t{:.6}\n", self.mean_psnr_mu, self.mean_ssim_mu));
        out
    }
}

pub fn sample_metrics(id: &str, pred: &FeatureMap<f64>, gt: &FeatureMap<f64>, mu: f64) -> Result<SampleMetrics> {
    Ok(SampleMetrics {
        id: id.to_string(),
        psnr_mu: psnr_mu(pred, gt, mu)?,
        ssim_mu: ssim_mu(pred, gt, mu)?,
    })
}

/// Restores every pair and scores it against its ground truth.
pub fn evaluate(params: &HlnetParams, model_cfg: &HlnetConfig, pairs: &[SamplePair], mu: f64) -> Result<MetricsRecord> {
    let samples = pairs
        .par_iter()
        .map(|p| {
            let pred = model::forward_eval(&p.bracket, params, model_cfg)?;
            sample_metrics(p.id(), &pred, &p.gt.mapv(f64::from), mu)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsRecord::from_samples(samples))
}

/// Scores prepared samples; used for train-set evaluation.
pub fn evaluate_samples(params: &HlnetParams, model_cfg: &HlnetConfig, data: &[TrainSample], mu: f64) -> Result<MetricsRecord> {
    let samples = data
        .par_iter()
        .map(|s| {
            let g = Graph::new();
            let out = model::forward_graph(&g, &params.store, &s.inputs, model_cfg)?;
            let pred = into4(&g.value(out)).mapv(|v| v.clamp(0.0, 1.0));
            sample_metrics(&s.id, &pred, &s.gt, mu)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsRecord::from_samples(samples))
}

/// Ablation rows that depend on architectures outside this crate.
pub const OUT_OF_SCOPE_VARIANTS: &[&str] = &["esrt"];

/// Model config for a named ablation row, built on `base`.
pub fn ablation_registry_with(base: &HlnetConfig, name: &str) -> Result<HlnetConfig> {
    let valid = join_list(&Ablation::names());
    if OUT_OF_SCOPE_VARIANTS.contains(&name) {
        return Err(Error::UnsupportedVariant {
            name: name.to_string(),
            reason: format!("the ESRT row needs an external transformer backbone and is out of scope; valid variants: {valid}"),
        });
    }
    let ablation = Ablation::parse(name).ok_or_else(|| Error::UnsupportedVariant {
        name: name.to_string(),
        reason: format!("valid variants: {valid}"),
    })?;
    let cfg = base.clone().with_ablation(ablation);
    cfg.validate()?;
    Ok(cfg)
}

/// [`ablation_registry_with`] on the default config.
pub fn ablation_registry(name: &str) -> Result<HlnetConfig> {
    ablation_registry_with(&HlnetConfig::default(), name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::HlfdbVariant;
    use crate::simdata::{make_dataset, DegradeConfig, Geometry};

    fn pair(h: usize) -> SamplePair {
        let cfg = DegradeConfig { seed: 1, ..DegradeConfig::default() };
        make_dataset(1, &cfg, Geometry { channels: 1, height: h, width: h }).unwrap().remove(0)
    }

    #[test]
    fn crop_counts_and_geometry() {
        let p = pair(96);
        assert_eq!(crop_sampler(&p, 64, 32).unwrap().len(), 4);
        let single = crop_sampler(&pair(64), 64, 32).unwrap();
        assert_eq!(single.len(), 1);
        let crops = crop_sampler(&pair(16), 8, 4).unwrap();
        assert_eq!(crops.len(), 9);
        let c = &crops[4];
        assert_eq!(c.id(), "0000@4,4");
        let p = pair(16);
        assert_eq!(c.gt, p.gt.slice(s![.., .., 16..48, 16..48]).to_owned());
        assert_eq!(c.bracket.frames[2].data, p.bracket.frames[2].data.slice(s![.., .., 4..12, 4..12]).to_owned());
        assert!(crop_sampler(&p, 17, 4).is_err());
    }

    #[test]
    fn registry() {
        assert_eq!(ablation_registry("wavelet").unwrap().hlfdb.variant, HlfdbVariant::WaveletSplit);
        assert_eq!(ablation_registry("no_hlfdb").unwrap().ablation, Ablation::NoHlfdb);
        assert_eq!(ablation_registry("full").unwrap(), HlnetConfig::default());
        match ablation_registry("esrt") {
            Err(Error::UnsupportedVariant { name, reason }) => {
                assert_eq!(name, "esrt");
                assert!(reason.contains("out of scope") && reason.contains("no_hlfdb"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(ablation_registry("bogus"), Err(Error::UnsupportedVariant { .. })));
    }

    #[test]
    fn cosine_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0, 10), cfg.lr);
        assert!((cfg.lr_at(5, 10) - cfg.lr / 2.0).abs() < 1e-15);
        assert_eq!(cfg.plan(9), (1, 3));
        let capped = TrainConfig { max_steps: Some(7), ..cfg };
        assert_eq!(capped.plan(9), (3, 7));
    }

    #[test]
    fn config_kv_round_trip() {
        let cfg = TrainConfig { lr: 1e-3, max_steps: Some(5), schedule: Schedule::Constant, ..TrainConfig::default() };
        let kv = crate::config::parse_kv(&cfg.to_kv());
        let mut back = TrainConfig::default();
        back.apply_kv(kv.iter().map(|(k, v)| (k.as_str(), v.as_str()))).unwrap();
        assert_eq!(back, cfg);
    }
}
