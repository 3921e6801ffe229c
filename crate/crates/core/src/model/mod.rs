//! A small, hand-differentiated classifier with SGD/Nesterov training,
//! cosine learning-rate schedule, evaluation, and binary checkpoints.

mod net;
mod train;

pub use net::{softmax_cross_entropy, Net};
pub use train::{cosine_lr, evaluate, mean_loss, train_epoch, PolicyMode, Schedule, TrainConfig, Trainer};

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::io::{Read, Write};
use std::path::Path;

/// One layer of the architecture descriptor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// Valid (unpadded) convolution, stride 1, square kernel.
    Conv { out_ch: usize, kernel: usize },
    Relu,
    /// Non-overlapping max pooling, window = stride.
    MaxPool { size: usize },
    /// Fully connected layer on the flattened input.
    Dense { out: usize },
}

/// Architecture: input shape (height, width, channels) plus a layer list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Arch {
    pub input: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl Arch {
    /// The default desk-scale classifier:
    /// conv(c->8, 3x3), relu, maxpool2, conv(8->16, 3x3), relu, maxpool2, dense.
    pub fn toy(height: usize, width: usize, channels: usize, n_classes: usize) -> Self {
        Arch {
            input: (height, width, channels),
            layers: vec![
                LayerSpec::Conv { out_ch: 8, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv { out_ch: 16, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Dense { out: n_classes },
            ],
        }
    }

    /// Canonical text form, e.g.
    /// `input 16x16x3; conv 8 3; relu; maxpool 2; dense 10`.
    pub fn descriptor(&self) -> String {
        let mut parts = vec![format!("input {}x{}x{}", self.input.0, self.input.1, self.input.2)];
        for layer in &self.layers {
            parts.push(match layer {
                LayerSpec::Conv { out_ch, kernel } => format!("conv {out_ch} {kernel}"),
                LayerSpec::Relu => "relu".to_string(),
                LayerSpec::MaxPool { size } => format!("maxpool {size}"),
                LayerSpec::Dense { out } => format!("dense {out}"),
            });
        }
        parts.join("; ")
    }

    pub fn from_descriptor(text: &str) -> Result<Self> {
        let mut input = None;
        let mut layers = Vec::new();
        for (i, part) in text.split(';').enumerate() {
            let fields: Vec<&str> = part.split_whitespace().collect();
            let parse = |s: &str| -> Result<usize> {
                s.parse().map_err(|_| Error::CorruptCheckpoint(format!("bad arch field `{s}`")))
            };
            match fields.as_slice() {
                ["input", dims] if i == 0 => {
                    let d: Vec<&str> = dims.split('x').collect();
                    if d.len() != 3 {
                        return Err(Error::CorruptCheckpoint("bad input shape".into()));
                    }
                    input = Some((parse(d[0])?, parse(d[1])?, parse(d[2])?));
                }
                ["conv", oc, k] => layers.push(LayerSpec::Conv { out_ch: parse(oc)?, kernel: parse(k)? }),
                ["relu"] => layers.push(LayerSpec::Relu),
                ["maxpool", s] => layers.push(LayerSpec::MaxPool { size: parse(s)? }),
                ["dense", n] => layers.push(LayerSpec::Dense { out: parse(n)? }),
                other => {
                    return Err(Error::CorruptCheckpoint(format!("bad arch part `{other:?}`")))
                }
            }
        }
        let input = input.ok_or_else(|| Error::CorruptCheckpoint("missing input shape".into()))?;
        Ok(Arch { input, layers })
    }

    pub fn param_count(&self) -> usize {
        Net::new(self).map(|n| n.param_count()).unwrap_or(0)
    }
}

/// Model weights plus their architecture and the seed they were drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub arch: Arch,
    pub params: Vec<f64>,
    pub rng_seed: u64,
}

impl ModelState {
    /// He-uniform initialization: weights ~ U(-sqrt(6/fan_in), +sqrt(6/fan_in)),
    /// biases zero.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        let net = Net::new(&arch)?;
        let mut rng = crate::rng::derive_rng(seed, crate::rng::stream::MODEL_INIT, 0);
        let mut params = vec![0.0; net.param_count()];
        for layer in net.layers() {
            if let Some((w_range, _b_range, fan_in)) = layer.weight_layout() {
                let limit = (6.0 / fan_in as f64).sqrt();
                for slot in &mut params[w_range] {
                    *slot = rng.random_range(-limit..limit);
                }
            }
        }
        Ok(Self { arch, params, rng_seed: seed })
    }

    pub fn zeros(arch: Arch) -> Result<Self> {
        let net = Net::new(&arch)?;
        Ok(Self { arch, params: vec![0.0; net.param_count()], rng_seed: 0 })
    }
}

const CKPT_MAGIC: &[u8; 8] = b"AWSCKPT1";
const CKPT_VERSION: u8 = 1;

/// Write the checkpoint atomically (temp file + rename).
///
/// Layout: magic "AWSCKPT1", version byte, u32-LE descriptor length,
/// descriptor text, u64-LE parameter count, raw little-endian f64 params.
pub fn save_checkpoint(m: &ModelState, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.push(CKPT_VERSION);
    let desc = m.arch.descriptor();
    buf.extend_from_slice(&(desc.len() as u32).to_le_bytes());
    buf.extend_from_slice(desc.as_bytes());
    buf.extend_from_slice(&(m.params.len() as u64).to_le_bytes());
    for &p in &m.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let take = |bytes: &[u8], at: &mut usize, n: usize| -> Result<Vec<u8>> {
        if *at + n > bytes.len() {
            return Err(Error::CorruptCheckpoint("truncated file".into()));
        }
        let out = bytes[*at..*at + n].to_vec();
        *at += n;
        Ok(out)
    };
    let mut at = 0usize;
    let magic = take(&bytes, &mut at, 8)?;
    if magic != CKPT_MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = take(&bytes, &mut at, 1)?[0];
    if version != CKPT_VERSION {
        return Err(Error::CheckpointVersion(version));
    }
    let desc_len = u32::from_le_bytes(take(&bytes, &mut at, 4)?.try_into().unwrap()) as usize;
    let desc = String::from_utf8(take(&bytes, &mut at, desc_len)?)
        .map_err(|_| Error::CorruptCheckpoint("descriptor is not utf-8".into()))?;
    let arch = Arch::from_descriptor(&desc)?;
    let count = u64::from_le_bytes(take(&bytes, &mut at, 8)?.try_into().unwrap()) as usize;
    if count != arch.param_count() {
        return Err(Error::CorruptCheckpoint(format!(
            "parameter count {count} does not match architecture ({})",
            arch.param_count()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for _ in 0..count {
        let chunk = take(&bytes, &mut at, 8)?;
        params.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    if at != bytes.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::CorruptCheckpoint("non-finite parameter".into()));
    }
    Ok(ModelState { arch, params, rng_seed: 0 })
}

/// Load a checkpoint that must match an expected architecture.
pub fn load_checkpoint_expecting(path: &Path, expected: &Arch) -> Result<ModelState> {
    let m = load_checkpoint(path)?;
    if &m.arch != expected {
        return Err(Error::ArchMismatch {
            expected: expected.descriptor(),
            found: m.arch.descriptor(),
        });
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_round_trips() {
        let arch = Arch::toy(16, 16, 3, 10);
        let text = arch.descriptor();
        assert_eq!(text, "input 16x16x3; conv 8 3; relu; maxpool 2; conv 16 3; relu; maxpool 2; dense 10");
        assert_eq!(Arch::from_descriptor(&text).unwrap(), arch);
    }

    #[test]
    fn toy_param_count() {
        let arch = Arch::toy(16, 16, 3, 10);
        // conv1: 8*(3*9)+8; conv2: 16*(8*9)+16; dense: 10*64+10
        assert_eq!(arch.param_count(), 224 + 1168 + 650);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = ModelState::init(Arch::toy(8, 8, 3, 4), 123).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.arch, m.arch);
        assert_eq!(back.params.len(), m.params.len());
        for (a, b) in back.params.iter().zip(&m.params) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_checkpoint_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = ModelState::init(Arch::toy(8, 8, 1, 2), 5).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("corrupt checkpoint"), "{err}");
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = ModelState::init(Arch::toy(8, 8, 1, 2), 5).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 9;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("unsupported checkpoint version"), "{err}");
    }

    #[test]
    fn arch_mismatch_on_expected_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = ModelState::init(Arch::toy(8, 8, 1, 2), 5).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let err = load_checkpoint_expecting(&path, &Arch::toy(16, 16, 3, 10)).unwrap_err();
        assert!(err.to_string().contains("architecture mismatch"), "{err}");
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = ModelState::init(Arch::toy(8, 8, 3, 4), 7).unwrap();
        let b = ModelState::init(Arch::toy(8, 8, 3, 4), 7).unwrap();
        let c = ModelState::init(Arch::toy(8, 8, 3, 4), 8).unwrap();
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }
}
