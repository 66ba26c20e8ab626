use std::path::Path;

use hlnet::container::{find, read_container};
use hlnet::imaging::DEFAULT_MU;
use hlnet::simdata::{sample_path, Dataset};
use hlnet::training::{evaluate, sample_metrics, MetricsRecord};
use hlnet::FeatureMap;
use ndarray::Ix4;

use super::{check_compatible, create_dir, load_checkpoint, load_dataset};
use crate::error::{usage, CliError, CliResult, IoContext};
use crate::manifest::RunManifest;
use crate::EvalArgs;

pub const METRICS_FILE: &str = "metrics.tsv";

fn read_prediction(dir: &Path, id: &str, record: &str) -> CliResult<FeatureMap<f64>> {
    let path = sample_path(dir, id);
    let recs = read_container(&path).map_err(|e| CliError::Failed(format!("reading {}: {e}", path.display())))?;
    let rec = find(&recs, record).map_err(|_| {
        let names: Vec<&str> = recs.iter().map(|r| r.name.as_str()).collect();
        usage(format!("{} has no tensor '{record}' (available: {})", path.display(), names.join(", ")))
    })?;
    rec.data
        .to_f64()
        .into_dimensionality::<Ix4>()
        .map_err(|_| usage(format!("tensor '{record}' in {} is not 4-D", path.display())))
}

fn score_predictions(ds: &Dataset, dir: &Path, record: &str, mu: f64) -> CliResult<MetricsRecord> {
    let mut samples = Vec::with_capacity(ds.pairs.len());
    for p in &ds.pairs {
        let pred = read_prediction(dir, p.id(), record)?;
        let gt = p.gt.mapv(f64::from);
        if pred.dim() != gt.dim() {
            return Err(usage(format!(
                "prediction for scene {} has shape {:?}, ground truth {:?}",
                p.id(),
                pred.dim(),
                gt.dim()
            )));
        }
        samples.push(sample_metrics(p.id(), &pred, &gt, mu)?);
    }
    Ok(MetricsRecord::from_samples(samples))
}

pub fn run(a: EvalArgs) -> CliResult<()> {
    let ds = load_dataset(&a.data)?;
    let mu = a.mu.unwrap_or(DEFAULT_MU);
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(usage(format!("--mu must be positive, got {mu}")));
    }
    let mut inputs = vec![a.data.clone()];
    let (record, source) = match (&a.checkpoint, &a.pred) {
        (Some(ck), None) => {
            let c = load_checkpoint(ck)?;
            check_compatible(&c.model, &ds)?;
            inputs.push(ck.clone());
            (evaluate(&c.params, &c.model, &ds.pairs, mu)?, format!("checkpoint={}", ck.display()))
        }
        (None, Some(dir)) => {
            inputs.push(dir.clone());
            (
                score_predictions(&ds, dir, &a.pred_record, mu)?,
                format!("pred={}\npred_record={}", dir.display(), a.pred_record),
            )
        }
        _ => return Err(usage("exactly one of --checkpoint or --pred is required")),
    };
    if !record.is_finite() {
        return Err(CliError::Failed("metrics are not finite".into()));
    }
    let table = record.to_tsv();
    print!("{table}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        let path = out.join(METRICS_FILE);
        std::fs::write(&path, &table).ctx(|| format!("writing {}", path.display()))?;
        RunManifest {
            command: "eval".into(),
            seed: 0,
            config: format!("mu={mu}\n{source}\n"),
            inputs,
            artifacts: vec![path],
        }
        .write(out)?;
    }
    Ok(())
}
