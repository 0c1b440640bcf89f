//! A checkpoint directory: `manifest.json` plus one `.t4d` dump per parameter buffer.

use std::path::Path;

use cyclicnet::nn::{ModelSpec, Network};
use cyclicnet::tensor::dump;
use cyclicnet::{Dims, Scalar};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferEntry {
    pub name: String,
    pub file: String,
    pub dims: Dims,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub model: ModelSpec,
    pub epochs: usize,
    pub seed: u64,
    pub buffers: Vec<BufferEntry>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Manifest> {
        Ok(serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST))?)?)
    }
}

pub fn save<T: Scalar>(net: &Network<T>, dir: &Path, epochs: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut buffers = Vec::new();
    for (name, b) in net.buffer_names().into_iter().zip(net.buffers()) {
        let file = format!("{name}.t4d");
        dump::write_file(dir.join(&file), b)?;
        buffers.push(BufferEntry { name, file, dims: b.dims() });
    }
    let manifest = Manifest { model: net.arch().spec().clone(), epochs, seed, buffers };
    std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Loads parameters as `T`, converting from the stored precision if needed.
pub fn load<T: Scalar>(dir: &Path) -> Result<(Manifest, Network<T>)> {
    let manifest = Manifest::read(dir)?;
    let arch = manifest.model.validate()?;
    let mut buffers = Vec::with_capacity(manifest.buffers.len());
    for entry in &manifest.buffers {
        let t = dump::read_file::<T>(dir.join(&entry.file))?;
        if t.dims() != entry.dims {
            return Err(HarnessError::Config(format!("{} holds {} but the manifest says {}", entry.file, t.dims(), entry.dims)));
        }
        buffers.push(t);
    }
    let net = Network::from_buffers(arch, buffers)?;
    Ok((manifest, net))
}

#[cfg(test)]
mod tests {
    use super::*;
    use cyclicnet::nn::{InputSpec, LayerSpec, LossKind, Padding};
    use cyclicnet::{DType, GroupKind};

    #[test]
    fn round_trip_preserves_every_bit() {
        let spec = ModelSpec {
            input: InputSpec { channels: 1, size: 6 },
            layers: vec![
                LayerSpec::Slice { group: GroupKind::C4 },
                LayerSpec::Conv { filters: 2, kernel: 3, padding: Padding::Same, bias: true },
                LayerSpec::Flatten {},
                LayerSpec::Dense { units: 3, bias: false },
                LayerSpec::Pool { function: Default::default(), relu: false, realign: false },
            ],
            loss: LossKind::CrossEntropy,
            dtype: DType::F32,
        };
        let net = Network::<f32>::init(spec.validate().unwrap(), 9);
        let dir = tempfile::tempdir().unwrap();
        save(&net, dir.path(), 3, 9).unwrap();
        let (m, back) = load::<f32>(dir.path()).unwrap();
        assert_eq!(back, net);
        assert_eq!(m.buffers.len(), 3);
        assert_eq!(m.buffers[2].name, "layer3_dense_weight");

        std::fs::write(dir.path().join(&m.buffers[0].file), dump::encode(&back.buffers()[1].clone())).unwrap();
        assert!(load::<f32>(dir.path()).is_err());
    }
}
