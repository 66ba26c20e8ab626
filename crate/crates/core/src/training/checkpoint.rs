//! Training checkpoints stored in the tensor container.
//!
//! Records: `header.model` (numeric model config), `header.train`
//! (`[next_epoch, step, adam_step]`), `losses`, then `param/<name>`,
//! `adam.m/<name>` and `adam.v/<name>` for every weight.

use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::optim::AdamState;
use crate::container::{self, TensorRecord};
use crate::error::{invalid, Result};
use crate::model::{HlnetConfig, HlnetParams};
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: HlnetConfig,
    pub params: HlnetParams,
    pub adam: AdamState,
    /// First epoch still to run.
    pub epoch: usize,
    /// Optimizer steps completed.
    pub step: usize,
    pub losses: Vec<f64>,
}

fn vec1(v: Vec<f64>) -> ArrayD<f64> {
    let n = v.len();
    ArrayD::from_shape_vec(IxDyn(&[n]), v).unwrap()
}

impl Checkpoint {
    pub fn to_records(&self) -> Vec<TensorRecord> {
        let mut recs = vec![
            TensorRecord::f64("header.model", vec1(self.model.to_header())),
            TensorRecord::f64(
                "header.train",
                vec1(vec![self.epoch as f64, self.step as f64, self.adam.step as f64]),
            ),
            TensorRecord::f64("losses", vec1(self.losses.clone())),
        ];
        for (name, t) in self.params.store.iter() {
            recs.push(TensorRecord::f64(format!("param/{name}"), t.clone()));
        }
        for (name, t) in &self.adam.m {
            recs.push(TensorRecord::f64(format!("adam.m/{name}"), t.clone()));
        }
        for (name, t) in &self.adam.v {
            recs.push(TensorRecord::f64(format!("adam.v/{name}"), t.clone()));
        }
        recs
    }

    pub fn from_records(records: &[TensorRecord]) -> Result<Self> {
        let header: Vec<f64> = container::find(records, "header.model")?.data.to_f64().iter().copied().collect();
        let model = HlnetConfig::from_header(&header)?;
        let train = container::find(records, "header.train")?.data.to_f64();
        if train.len() != 3 {
            return Err(invalid("malformed training header"));
        }
        let losses = container::find(records, "losses")?.data.to_f64().iter().copied().collect();
        let mut store = ParamStore::new();
        let mut adam = AdamState { step: train[[2]] as u64, ..AdamState::default() };
        for r in records {
            if let Some(n) = r.name.strip_prefix("param/") {
                store.insert(n, r.data.to_f64());
            } else if let Some(n) = r.name.strip_prefix("adam.m/") {
                adam.m.insert(n.to_string(), r.data.to_f64());
            } else if let Some(n) = r.name.strip_prefix("adam.v/") {
                adam.v.insert(n.to_string(), r.data.to_f64());
            }
        }
        let expected = crate::model::init_params(&model, 0)?;
        for (name, t) in expected.store.iter() {
            let got = store.get(name).ok_or_else(|| invalid(format!("checkpoint lacks parameter {name}")))?;
            if got.shape() != t.shape() {
                return Err(invalid(format!(
                    "checkpoint parameter {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        if store.len() != expected.store.len() {
            return Err(invalid("checkpoint has parameters the model config does not define"));
        }
        Ok(Checkpoint {
            model,
            params: HlnetParams { store },
            adam,
            epoch: train[[0]] as usize,
            step: train[[1]] as usize,
            losses,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        container::write_container(path, &self.to_records())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_records(&container::read_container(path)?)
    }
}
