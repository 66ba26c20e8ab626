use hlnet::model::init_params;
use hlnet::training::training_samples;

use super::{base_model_for, check_compatible, load_checkpoint, load_dataset, model_overrides, train_into, train_overrides, Start};
use crate::error::CliResult;
use crate::manifest::RunManifest;
use crate::settings::{layered, model_config, train_config};
use crate::TrainArgs;

pub fn run(a: TrainArgs) -> CliResult<()> {
    let ds = load_dataset(&a.data)?;
    let mut flags = model_overrides(&a.model);
    flags.extend(train_overrides(&a.train));
    let o = layered(a.config.as_deref(), flags)?;
    let tcfg = train_config(&o)?;
    let (model, start) = match &a.resume {
        Some(path) => {
            let ck = load_checkpoint(path)?;
            (ck.model, Start::Resume(path.clone()))
        }
        None => {
            let model = model_config(base_model_for(&ds), &o)?;
            let params = init_params(&model, tcfg.seed)?;
            (model, Start::Fresh(params))
        }
    };
    check_compatible(&model, &ds)?;
    tcfg.validate(&model).map_err(|e| crate::error::usage(e.to_string()))?;
    let data = training_samples(&ds.pairs, &model, &tcfg)?;
    eprintln!(
        "training {} ({} parameters) on {} crops from {} scenes",
        model.ablation.name(),
        init_params(&model, 0)?.count(),
        data.len(),
        ds.pairs.len()
    );
    let (run, artifacts) = train_into(&a.out, &model, start, &data, &tcfg)?;
    let mut inputs = vec![a.data.clone()];
    inputs.extend(a.config.iter().cloned());
    inputs.extend(a.resume.iter().cloned());
    RunManifest {
        command: "train".into(),
        seed: tcfg.seed,
        config: format!("{}{}", model.to_kv(), tcfg.to_kv()),
        inputs,
        artifacts,
    }
    .write(&a.out)?;
    println!(
        "trained {} steps; final loss {:.6}; checkpoints in {}",
        run.losses.len(),
        run.losses.last().copied().unwrap_or(f64::NAN),
        a.out.join("checkpoints").display()
    );
    Ok(())
}
