use std::fmt::Write as _;

use hlnet::config::parse_list;
use hlnet::imaging::DEFAULT_MU;
use hlnet::model::{init_params, Ablation};
use hlnet::training::{ablation_registry_with, evaluate, training_samples};

use super::{base_model_for, check_compatible, load_dataset, model_overrides, train_into, train_overrides, Start};
use crate::error::{usage, CliError, CliResult, IoContext};
use crate::manifest::RunManifest;
use crate::settings::{layered, model_config, train_config};
use crate::AblateArgs;

pub const TABLE_FILE: &str = "ablation.tsv";

pub fn run(a: AblateArgs) -> CliResult<()> {
    let ds = load_dataset(&a.data)?;
    let eval_ds = match &a.eval_data {
        Some(p) => load_dataset(p)?,
        None => load_dataset(&a.data)?,
    };
    let mut flags = model_overrides(&a.model);
    flags.extend(train_overrides(&a.train));
    let o = layered(a.config.as_deref(), flags)?;
    let tcfg = train_config(&o)?;
    let base = model_config(base_model_for(&ds), &o)?;
    check_compatible(&base, &eval_ds)?;

    let names: Vec<String> = match &a.variants {
        Some(v) => parse_list("variants", v).map_err(|e| usage(e.to_string()))?,
        None => Ablation::names().into_iter().map(String::from).collect(),
    };
    if names.is_empty() {
        return Err(usage("--variants is empty"));
    }
    // Resolve every variant before spending time on training.
    let configs = names
        .iter()
        .map(|n| ablation_registry_with(&base, n).map_err(|e| usage(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;

    let mu = tcfg.mu;
    let mu_eval = if mu > 0.0 { mu } else { DEFAULT_MU };
    let mut table = String::from("variant\tparams\tsteps\tfinal_loss\tpsnr_mu\tssim_mu\n");
    let mut artifacts = Vec::new();
    for (name, model) in names.iter().zip(&configs) {
        tcfg.validate(model).map_err(|e| usage(e.to_string()))?;
        let params = init_params(model, tcfg.seed)?;
        let count = params.count();
        let data = training_samples(&ds.pairs, model, &tcfg)?;
        eprintln!("variant {name}: {count} parameters, {} crops", data.len());
        let dir = a.out.join(name);
        let (run, written) = train_into(&dir, model, Start::Fresh(params), &data, &tcfg)?;
        let metrics = evaluate(&run.params, model, &eval_ds.pairs, mu_eval)?;
        if !metrics.is_finite() {
            return Err(CliError::Failed(format!("variant {name}: metrics are not finite")));
        }
        writeln!(
            table,
            "{name}\t{count}\t{}\t{:.6}\t{:.4}\t{:.6}",
            run.losses.len(),
            run.losses.last().copied().unwrap_or(f64::NAN),
            metrics.mean_psnr_mu,
            metrics.mean_ssim_mu
        )
        .unwrap();
        artifacts.extend(written);
    }
    let path = a.out.join(TABLE_FILE);
    std::fs::write(&path, &table).ctx(|| format!("writing {}", path.display()))?;
    print!("{table}");
    artifacts.insert(0, path);
    let mut inputs = vec![a.data.clone()];
    inputs.extend(a.eval_data.iter().cloned());
    inputs.extend(a.config.iter().cloned());
    RunManifest {
        command: "ablate".into(),
        seed: tcfg.seed,
        config: format!("variants={}\n{}{}", names.join(","), base.to_kv(), tcfg.to_kv()),
        inputs,
        artifacts,
    }
    .write(&a.out)?;
    Ok(())
}
