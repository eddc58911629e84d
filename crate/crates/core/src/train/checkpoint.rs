//! Parameter checkpoints in the embedding container: one single-column
//! record per parameter path, buffers included, stored as f64.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{EmbeddingFile, EmbeddingWriter, DTYPE_F64};
use crate::tensor::ParamStore;

pub fn checkpoint_bytes(store: &ParamStore) -> Result<Vec<u8>> {
    let mut w = EmbeddingWriter::new(DTYPE_F64)?;
    for p in store.iter() {
        w.push(p.path.clone(), &p.value.clone().reshape(&[p.value.numel()])?)?;
    }
    w.to_bytes()
}

pub fn save_checkpoint(store: &ParamStore, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(store)?)?;
    Ok(())
}

/// Overwrites every parameter of `store` from `file`. Every path must be
/// present with the right size and no extra records are allowed.
pub fn restore_checkpoint(store: &mut ParamStore, file: &EmbeddingFile) -> Result<()> {
    if file.cols() != 1 || file.dtype() != DTYPE_F64 {
        return Err(Error::input("checkpoint must hold f64 single-column records"));
    }
    if file.len() != store.len() {
        return Err(Error::input(format!(
            "checkpoint holds {} parameters, model expects {}",
            file.len(),
            store.len()
        )));
    }
    for p in store.iter_mut() {
        let t = file
            .get(&p.path)
            .ok_or_else(|| Error::input(format!("checkpoint lacks parameter {:?}", p.path)))?;
        if t.numel() != p.value.numel() {
            return Err(Error::input(format!(
                "parameter {:?} has {} values in the checkpoint, expected {}",
                p.path,
                t.numel(),
                p.value.numel()
            )));
        }
        p.value.data_mut().copy_from_slice(t.data());
    }
    Ok(())
}

pub fn load_checkpoint(store: &mut ParamStore, path: impl AsRef<Path>) -> Result<()> {
    restore_checkpoint(store, &EmbeddingFile::open(path)?)
}
