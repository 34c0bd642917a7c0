//! `TDG1` checkpoint files: header, configuration echo, named f32 tensors.

use std::io::{self, Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use super::train::{CycleModel, TrainConfig};
use crate::binio;
use crate::error::{Error, Result};
use crate::vlad::{read_file, write_file};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_NAME: usize = 1 << 12;
const MAX_RANK: usize = 8;

pub fn write_checkpoint(w: &mut impl Write, model: &CycleModel) -> io::Result<()> {
    w.write_all(b"TDG1")?;
    binio::write_u32(w, CHECKPOINT_VERSION)?;
    binio::write_string(w, &model.config.to_text())?;
    let count: usize = model.stores().iter().map(|s| s.len()).sum();
    binio::write_u32(w, count as u32)?;
    for store in model.stores() {
        for (name, t) in store.iter() {
            binio::write_string(w, name)?;
            binio::write_u32(w, t.shape().len() as u32)?;
            for &d in t.shape() {
                binio::write_u32(w, d as u32)?;
            }
            binio::write_f32s(w, t.data())?;
        }
    }
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<CycleModel> {
    let load = |e: io::Error| Error::Load(format!("corrupt checkpoint: {e}"));
    binio::check_magic(r, b"TDG1").map_err(load)?;
    let version = binio::read_u32(r).map_err(load)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Load(format!("unsupported checkpoint version {version}")));
    }
    let echo = binio::read_string(r, 1 << 16).map_err(load)?;
    let config = TrainConfig::from_text(&echo)
        .map_err(|e| Error::Load(format!("checkpoint configuration: {e}")))?;
    let mut model = CycleModel::new(config).map_err(|e| Error::Load(e.to_string()))?;
    let expected: usize = model.stores().iter().map(|s| s.len()).sum();
    let count = binio::read_u32(r).map_err(load)? as usize;
    if count != expected {
        return Err(Error::Load(format!(
            "checkpoint holds {count} tensors, the configured model has {expected}"
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for _ in 0..count {
        let name = binio::read_string(r, MAX_NAME).map_err(load)?;
        let rank = binio::read_u32(r).map_err(load)? as usize;
        if rank > MAX_RANK {
            return Err(load(corrupt(format!("tensor {name} has rank {rank}"))));
        }
        let shape = (0..rank)
            .map(|_| binio::read_u32(r).map(|d| d as usize))
            .collect::<io::Result<Vec<_>>>()
            .map_err(load)?;
        let n: usize = shape.iter().product();
        if n > 1 << 28 {
            return Err(load(corrupt(format!("tensor {name} is implausibly large"))));
        }
        let data = binio::read_f32s(r, n).map_err(load)?;
        let t = Tensor::new(shape, data).map_err(|e| Error::Load(e.to_string()))?;
        if !t.is_finite() {
            return Err(Error::Load(format!("tensor {name} holds non-finite values")));
        }
        let store = model
            .stores_mut()
            .into_iter()
            .find(|s| s.iter().any(|(n, _)| n == name))
            .ok_or_else(|| Error::Load(format!("unexpected tensor {name}")))?;
        store.set(&name, t)?;
        if !seen.insert(name.clone()) {
            return Err(Error::Load(format!("tensor {name} appears twice")));
        }
    }
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &CycleModel) -> Result<()> {
    write_file(path, |w| write_checkpoint(w, model))
}

pub fn load_checkpoint(path: &Path) -> Result<CycleModel> {
    let bytes = read_file(path, |r| {
        let mut b = Vec::new();
        r.read_to_end(&mut b)?;
        Ok(b)
    })?;
    read_checkpoint(&mut bytes.as_slice())
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))
}
