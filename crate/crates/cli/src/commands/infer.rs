use hlnet::container::{write_container, TensorRecord};
use hlnet::imaging::DEFAULT_MU;
use hlnet::model::forward_eval;
use hlnet::simdata::sample_path;

use super::{check_compatible, create_dir, load_checkpoint, load_dataset};
use crate::error::{usage, CliResult};
use crate::manifest::RunManifest;
use crate::preview::save_tonemapped;
use crate::InferArgs;

/// Record name of the restored image in output containers.
pub const OUTPUT_RECORD: &str = "output";

pub fn run(a: InferArgs) -> CliResult<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.data)?;
    check_compatible(&ck.model, &ds)?;
    let mu = a.mu.unwrap_or(DEFAULT_MU);
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(usage(format!("--mu must be positive, got {mu}")));
    }
    create_dir(&a.out)?;
    let mut artifacts = Vec::new();
    for p in &ds.pairs {
        let pred = forward_eval(&p.bracket, &ck.params, &ck.model)?;
        let path = sample_path(&a.out, p.id());
        write_container(&path, &[TensorRecord::f32(OUTPUT_RECORD, pred.mapv(|v| v as f32).into_dyn())])?;
        let png = path.with_extension("png");
        save_tonemapped(&pred, mu, &png)?;
        let (_, c, h, w) = pred.dim();
        println!("{}: {c}x{h}x{w} -> {}", p.id(), path.display());
        artifacts.push(path);
        artifacts.push(png);
    }
    RunManifest {
        command: "infer".into(),
        seed: 0,
        config: format!("{}mu={mu}\n", ck.model.to_kv()),
        inputs: vec![a.checkpoint.clone(), a.data.clone()],
        artifacts,
    }
    .write(&a.out)?;
    Ok(())
}
