use std::path::Path;

use gradcore::{load_checkpoint, save_checkpoint, ParamStore, Tensor};

use super::schedule::DiffusionSchedule;
use super::unet::{DiffusionModel, UNetConfig};
use crate::error::{invalid, Result};

/// Writes every parameter plus `config.*` scalars describing the
/// architecture and schedule.
pub fn save_model(model: &DiffusionModel, schedule: &DiffusionSchedule, path: impl AsRef<Path>) -> Result<()> {
    let mut store = ParamStore::new();
    for src in [&model.unet.params, &model.reference.params, &model.fusion.store] {
        for (name, t) in src.iter() {
            store.insert(name, t.clone());
        }
    }
    let cfg = model.config();
    for (i, c) in cfg.channels.iter().enumerate() {
        store.insert(format!("config.channels{i}"), Tensor::scalar(*c as f64));
    }
    store.insert("config.time_dim", Tensor::scalar(cfg.time_dim as f64));
    store.insert("config.steps", Tensor::scalar(schedule.steps() as f64));
    store.insert("config.beta_start", Tensor::scalar(schedule.beta_start));
    store.insert("config.beta_end", Tensor::scalar(schedule.beta_end));
    save_checkpoint(&store, path)?;
    Ok(())
}

fn fill(dst: &mut ParamStore, src: &ParamStore) -> Result<()> {
    let names: Vec<String> = dst.names().map(str::to_string).collect();
    for name in names {
        let loaded = src.get(&name)?;
        let slot = dst.get_mut(&name)?;
        if slot.shape() != loaded.shape() {
            return Err(invalid(format!(
                "checkpoint tensor {name} has shape {:?}, expected {:?}",
                loaded.shape(),
                slot.shape()
            )));
        }
        *slot = loaded.clone();
    }
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(DiffusionModel, DiffusionSchedule)> {
    let store = load_checkpoint(path)?;
    let get = |k: &str| -> Result<f64> { Ok(store.get(k)?.item()) };
    let config = UNetConfig {
        channels: [
            get("config.channels0")? as usize,
            get("config.channels1")? as usize,
            get("config.channels2")? as usize,
        ],
        time_dim: get("config.time_dim")? as usize,
    };
    let schedule = DiffusionSchedule::linear(get("config.steps")? as usize, get("config.beta_start")?, get("config.beta_end")?)?;
    let mut model = DiffusionModel::new(config, 0);
    fill(&mut model.unet.params, &store)?;
    fill(&mut model.reference.params, &store)?;
    fill(&mut model.fusion.store, &store)?;
    Ok((model, schedule))
}
