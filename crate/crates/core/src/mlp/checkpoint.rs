//! Model checkpoints: one share file per parameter and party, plus a JSON
//! manifest.
//!
//! Files in a checkpoint directory:
//! `manifest.json`, `w{layer}.p{party}.prss` and `b{layer}.p{party}.prss`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::SharedModel;
use crate::error::{Error, Result};
use crate::sharing::{read_share_file, write_share_file, PartyId};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointSeeds {
    pub init: u64,
    pub shuffle: u64,
    pub split: u64,
    /// Session seeds of the three parties.
    pub session: [u64; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub layer_sizes: Vec<usize>,
    pub epoch: usize,
    pub seeds: CheckpointSeeds,
}

fn param_path(dir: &Path, kind: char, layer: usize, party: PartyId) -> std::path::PathBuf {
    dir.join(format!("{kind}{layer}.p{}.prss", party.index()))
}

/// Writes `model` (this party's view) and the manifest into `dir`.
pub fn save(dir: &Path, manifest: &Manifest, model: &SharedModel) -> Result<()> {
    let party = model
        .weights
        .first()
        .ok_or_else(|| Error::Config("empty model".into()))?
        .owner;
    if model.layers() + 1 != manifest.layer_sizes.len() {
        return Err(Error::Config(
            "manifest layer sizes do not match the model".into(),
        ));
    }
    fs::create_dir_all(dir)?;
    for (l, (w, b)) in model.weights.iter().zip(&model.biases).enumerate() {
        write_share_file(param_path(dir, 'w', l, party), w)?;
        write_share_file(param_path(dir, 'b', l, party), b)?;
    }
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(manifest)?,
    )?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Loads `party`'s view and checks every shape against the manifest.
pub fn load(dir: &Path, party: PartyId) -> Result<(Manifest, SharedModel)> {
    let manifest = read_manifest(dir)?;
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for (l, sizes) in manifest.layer_sizes.windows(2).enumerate() {
        let w = read_share_file(param_path(dir, 'w', l, party))?;
        let b = read_share_file(param_path(dir, 'b', l, party))?;
        if w.shape() != (sizes[0], sizes[1])
            || b.shape() != (1, sizes[1])
            || w.owner != party
            || b.owner != party
        {
            return Err(Error::Format(format!(
                "layer {l} files do not match the manifest for {party}"
            )));
        }
        weights.push(w);
        biases.push(b);
    }
    Ok((manifest, SharedModel { weights, biases }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sharing::AdditiveShare;
    use crate::tensor::Matrix;

    fn model(party: PartyId) -> SharedModel {
        let sh = |r, c, v| {
            AdditiveShare::new(party, Matrix::filled(r, c, v), Matrix::filled(r, c, -v)).unwrap()
        };
        SharedModel {
            weights: vec![sh(4, 5, 1.5), sh(5, 3, 2.5)],
            biases: vec![sh(1, 5, 0.5), sh(1, 3, 0.25)],
        }
    }

    fn manifest() -> Manifest {
        Manifest {
            layer_sizes: vec![4, 5, 3],
            epoch: 5,
            seeds: CheckpointSeeds {
                init: 1,
                shuffle: 2,
                split: 3,
                session: [4, 5, 6],
            },
        }
    }

    #[test]
    fn save_and_load_each_party() {
        let dir = tempfile::tempdir().unwrap();
        for p in PartyId::ALL {
            save(dir.path(), &manifest(), &model(p)).unwrap();
        }
        for p in PartyId::ALL {
            let (m, got) = load(dir.path(), p).unwrap();
            assert_eq!(m, manifest());
            assert_eq!(got, model(p));
        }
        let json: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(json["layer_sizes"], serde_json::json!([4, 5, 3]));
        assert_eq!(json["epoch"], 5);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        save(dir.path(), &manifest(), &model(PartyId::P1)).unwrap();
        let mut m = manifest();
        m.layer_sizes = vec![4, 6, 3];
        fs::write(
            dir.path().join(MANIFEST_FILE),
            serde_json::to_vec(&m).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            load(dir.path(), PartyId::P1).unwrap_err(),
            Error::Format(_)
        ));
        assert!(load(dir.path(), PartyId::P2).is_err());
    }
}
