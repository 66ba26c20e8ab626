pub mod ablate;
pub mod decompose;
pub mod eval;
pub mod gen_data;
pub mod infer;
pub mod selftest;
pub mod train;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use hlnet::model::{HlnetConfig, HlnetParams};
use hlnet::simdata::{read_dataset, Dataset};
use hlnet::training::{self, resume_from, Checkpoint, LogRecord, TrainConfig, TrainRun, TrainSample};

use crate::error::{usage, CliError, CliResult, IoContext};
use crate::settings::Overrides;
use crate::{ModelFlags, TrainFlags};

pub fn model_overrides(f: &ModelFlags) -> Overrides {
    let mut o = Overrides::default();
    o.set("width", f.width);
    o.set("variant", f.variant.as_ref());
    o.set("pool_k", f.pool_k);
    o.set("n_scales", f.n_scales);
    o.set("n_heads", f.n_heads);
    o.set("n_dense_layers", f.n_dense_layers);
    o.set("alignment", f.alignment.as_ref());
    o
}

pub fn train_overrides(f: &TrainFlags) -> Overrides {
    let mut o = Overrides::default();
    o.set("lr", f.lr);
    o.set("weight_decay", f.weight_decay);
    o.set("epochs", f.epochs);
    o.set("max_steps", f.steps);
    o.set("batch", f.batch);
    o.set("crop", f.crop);
    o.set("stride", f.stride);
    o.set("seed", f.seed);
    o.set("schedule", f.schedule.as_ref());
    o.set("mu", f.mu);
    o.set("checkpoint_every", f.checkpoint_every);
    o
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).ctx(|| format!("creating {}", dir.display()))
}

pub fn load_dataset(dir: &Path) -> CliResult<Dataset> {
    let ds = read_dataset(dir).map_err(|e| CliError::Failed(format!("loading dataset {}: {e}", dir.display())))?;
    if ds.pairs.is_empty() {
        return Err(CliError::Failed(format!("dataset {} has no scenes", dir.display())));
    }
    Ok(ds)
}

/// Model geometry implied by a dataset: raw channels, frame count and
/// upscale factor.
pub fn base_model_for(ds: &Dataset) -> HlnetConfig {
    HlnetConfig {
        c_raw: ds.pairs[0].bracket.frames[0].channels(),
        n_frames: ds.pairs[0].bracket.len(),
        upscale: ds.config.downscale,
        ..HlnetConfig::default()
    }
}

pub fn check_compatible(model: &HlnetConfig, ds: &Dataset) -> CliResult<()> {
    let base = base_model_for(ds);
    if (model.c_raw, model.n_frames, model.upscale) != (base.c_raw, base.n_frames, base.upscale) {
        return Err(usage(format!(
            "model expects {} channels, {} frames, x{} upscale; dataset has {}, {}, x{}",
            model.c_raw, model.n_frames, model.upscale, base.c_raw, base.n_frames, base.upscale
        )));
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    Checkpoint::load(path).map_err(|e| CliError::Failed(format!("loading checkpoint {}: {e}", path.display())))
}

/// Trains into `dir`: `checkpoints/epoch_NNNN.hlt`, `train_log.txt`,
/// `loss.tsv` and `final.hlt`. Returns the run and the written artifacts.
pub fn train_into(
    dir: &Path,
    model: &HlnetConfig,
    start: Start,
    data: &[TrainSample],
    cfg: &TrainConfig,
) -> CliResult<(TrainRun, Vec<PathBuf>)> {
    create_dir(dir)?;
    let cfg = TrainConfig {
        checkpoint_dir: Some(dir.join("checkpoints")),
        ..cfg.clone()
    };
    cfg.validate(model).map_err(|e| usage(e.to_string()))?;
    let log_path = dir.join("train_log.txt");
    let mut log = BufWriter::new(File::create(&log_path).ctx(|| format!("creating {}", log_path.display()))?);
    let mut write_err: Option<std::io::Error> = None;
    let mut observer = |r: &LogRecord| {
        eprintln!("{r}");
        if write_err.is_none() {
            if let Err(e) = writeln!(log, "{r}").and_then(|_| log.flush()) {
                write_err = Some(e);
            }
        }
    };
    let run = match start {
        Start::Fresh(params) => training::train(model, params, data, &cfg, Some(&mut observer))?,
        Start::Resume(path) => resume_from(&path, data, &cfg, Some(&mut observer))?,
    };
    if let Some(e) = write_err {
        return Err(CliError::Io {
            context: format!("writing {}", log_path.display()),
            source: e,
        });
    }
    let loss_path = dir.join("loss.tsv");
    let mut loss = String::from("step\tloss\n");
    for (i, l) in run.losses.iter().enumerate() {
        loss.push_str(&format!("{i}\t{l}\n"));
    }
    std::fs::write(&loss_path, loss).ctx(|| format!("writing {}", loss_path.display()))?;
    let final_path = dir.join("final.hlt");
    let (epochs, _) = cfg.plan(data.len());
    Checkpoint {
        model: model.clone(),
        params: run.params.clone(),
        adam: run.adam.clone(),
        epoch: epochs,
        step: run.losses.len(),
        losses: run.losses.clone(),
    }
    .save(&final_path)?;
    let mut artifacts = vec![log_path, loss_path, final_path];
    artifacts.extend(run.checkpoints.iter().cloned());
    Ok((run, artifacts))
}

pub enum Start {
    Fresh(HlnetParams),
    Resume(PathBuf),
}
