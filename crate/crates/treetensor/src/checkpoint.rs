//! Single-file binary checkpoints: a JSON manifest (config echo,
//! parameter names and shapes, loop counters, PRNG state) followed by
//! little-endian 64-bit real payloads for every parameter and its
//! optimizer accumulators. Identical trainer states serialize to
//! identical bytes.

use std::io::{Read, Write};
use std::path::Path;

use rand_pcg::Pcg32;
use thiserror::Error;

use crate::train::{AdaDeltaState, Model, TrainConfig, Trainer};

const MAGIC: &[u8; 4] = b"TTCP";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error("checkpoint does not match its config: {0}")]
    Mismatch(String),
}

#[derive(serde::Serialize, serde::Deserialize)]
struct ParamMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Manifest {
    config: TrainConfig,
    params: Vec<ParamMeta>,
    epoch: usize,
    best_val_accuracy: f64,
    best_epoch: usize,
    stale_epochs: usize,
    rng: Pcg32,
}

/// Serializes the full resumable training state.
pub fn save(path: &Path, trainer: &Trainer) -> std::io::Result<()> {
    let store = &trainer.model.store;
    let manifest = Manifest {
        config: trainer.cfg.clone(),
        params: store
            .ids()
            .map(|id| ParamMeta {
                name: store.param(id).name().to_string(),
                shape: store.value(id).shape().to_vec(),
            })
            .collect(),
        epoch: trainer.epoch,
        best_val_accuracy: trainer.best_val_accuracy,
        best_epoch: trainer.best_epoch,
        stale_epochs: trainer.stale_epochs,
        rng: trainer.rng.clone(),
    };
    let manifest_bytes = serde_json::to_vec(&manifest).expect("manifest serializes");

    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;

    let (eg2, ex2) = trainer.opt.accumulators();
    for id in store.ids() {
        write_f64s(&mut w, store.value(id).data())?;
        write_f64s(&mut w, &eg2[id.index()])?;
        write_f64s(&mut w, &ex2[id.index()])?;
    }
    w.flush()
}

/// Rebuilds a trainer from a checkpoint. The model skeleton is rebuilt
/// from the embedded config and must agree with the stored parameter
/// list exactly.
pub fn load(path: &Path) -> Result<Trainer, CheckpointError> {
    let file = std::fs::File::open(path)?;
    let mut r = std::io::BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::Format("wrong magic bytes".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(CheckpointError::Format(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let mut len8 = [0u8; 8];
    r.read_exact(&mut len8)?;
    let manifest_len = u64::from_le_bytes(len8) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_bytes)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)?;

    let mut model = Model::new(&manifest.config);
    let ids: Vec<_> = model.store.ids().collect();
    if ids.len() != manifest.params.len() {
        return Err(CheckpointError::Mismatch(format!(
            "{} parameters stored, config builds {}",
            manifest.params.len(),
            ids.len()
        )));
    }
    for (id, meta) in ids.iter().zip(&manifest.params) {
        let p = model.store.param(*id);
        if p.name() != meta.name || p.value().shape() != meta.shape.as_slice() {
            return Err(CheckpointError::Mismatch(format!(
                "parameter {:?} {:?} vs stored {:?} {:?}",
                p.name(),
                p.value().shape(),
                meta.name,
                meta.shape
            )));
        }
    }

    let mut opt = AdaDeltaState::new(&model.store, manifest.config.rho, manifest.config.epsilon);
    {
        let (eg2, ex2) = opt.accumulators_mut();
        for id in ids {
            let slot = id.index();
            read_f64s(&mut r, model.store.value_mut(id).data_mut())?;
            read_f64s(&mut r, &mut eg2[slot])?;
            read_f64s(&mut r, &mut ex2[slot])?;
        }
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing)? {
        0 => {}
        _ => return Err(CheckpointError::Format("trailing bytes after payload".into())),
    }

    Ok(Trainer {
        cfg: manifest.config,
        model,
        opt,
        rng: manifest.rng,
        epoch: manifest.epoch,
        best_val_accuracy: manifest.best_val_accuracy,
        best_epoch: manifest.best_epoch,
        stale_epochs: manifest.stale_epochs,
    })
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, out: &mut [f64]) -> std::io::Result<()> {
    let mut buf = [0u8; 8];
    for v in out {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(())
}
