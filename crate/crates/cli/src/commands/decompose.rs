use hlnet::container::{read_container, write_container, TensorRecord};
use hlnet::freqops::split_high_low;
use hlnet::FeatureMap;
use ndarray::{Ix2, Ix3, Ix4};

use super::create_dir;
use crate::error::{usage, CliError, CliResult};
use crate::manifest::RunManifest;
use crate::preview::{save_normalized, save_signed};
use crate::DecomposeArgs;

pub const OUTPUT_FILE: &str = "decompose.hlt";
pub const VERIFY_TOL: f64 = 1e-6;

fn as_map(data: ndarray::ArrayD<f64>, name: &str) -> CliResult<FeatureMap<f64>> {
    let shape = data.shape().to_vec();
    let bad = || usage(format!("tensor '{name}' must be 2-D, 3-D or 4-D, got shape {shape:?}"));
    match data.ndim() {
        2 => {
            let m = data.into_dimensionality::<Ix2>().map_err(|_| bad())?;
            let (h, w) = m.dim();
            Ok(m.into_shape_with_order((1, 1, h, w)).map_err(|_| bad())?)
        }
        3 => {
            let m = data.into_dimensionality::<Ix3>().map_err(|_| bad())?;
            let (c, h, w) = m.dim();
            Ok(m.into_shape_with_order((1, c, h, w)).map_err(|_| bad())?)
        }
        4 => data.into_dimensionality::<Ix4>().map_err(|_| bad()),
        _ => Err(bad()),
    }
}

pub fn run(a: DecomposeArgs) -> CliResult<()> {
    let recs = read_container(&a.input).map_err(|e| CliError::Failed(format!("reading {}: {e}", a.input.display())))?;
    let rec = recs.iter().find(|r| r.name == a.tensor).ok_or_else(|| {
        let names: Vec<&str> = recs.iter().map(|r| r.name.as_str()).collect();
        usage(format!(
            "{} has no tensor '{}' (available: {})",
            a.input.display(),
            a.tensor,
            if names.is_empty() { "none".to_string() } else { names.join(", ") }
        ))
    })?;
    let f = as_map(rec.data.to_f64().as_standard_layout().into_owned(), &a.tensor)?;
    let split = split_high_low(&f, a.pool_k).map_err(|e| usage(e.to_string()))?;

    create_dir(&a.out)?;
    let path = a.out.join(OUTPUT_FILE);
    write_container(
        &path,
        &[
            TensorRecord::f64("high", split.high.clone().into_dyn()),
            TensorRecord::f64("low", split.low.clone().into_dyn()),
            TensorRecord::f64("low_up", split.low_up.clone().into_dyn()),
        ],
    )?;
    let previews = [a.out.join("high.png"), a.out.join("low.png"), a.out.join("low_up.png")];
    save_signed(&split.high, &previews[0])?;
    save_normalized(&split.low, &previews[1])?;
    save_normalized(&split.low_up, &previews[2])?;

    let (_, c, h, w) = f.dim();
    let (_, _, lh, lw) = split.low.dim();
    println!("{}: {c}x{h}x{w}, pool_k={}, low {lh}x{lw}", a.tensor, a.pool_k);
    let mut artifacts = vec![path];
    artifacts.extend(previews);
    RunManifest {
        command: "decompose".into(),
        seed: 0,
        config: format!("tensor={}\npool_k={}\n", a.tensor, a.pool_k),
        inputs: vec![a.input.clone()],
        artifacts,
    }
    .write(&a.out)?;

    if a.verify {
        let err = (&split.high + &split.low_up - &f)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        println!("max |f - (high + low_up)| = {err:.3e}");
        if !(err <= VERIFY_TOL) {
            return Err(CliError::Failed(format!(
                "reconstruction error {err:.3e} exceeds {VERIFY_TOL:e}"
            )));
        }
    }
    Ok(())
}
