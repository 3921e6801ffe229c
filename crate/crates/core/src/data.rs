//! Dataset ingestion (CIFAR-10 binary format), deterministic splitting, and
//! a synthetic dataset generator for desk-scale experiments.
//!
//! The synthetic classes are oriented colored bars: class = (color, bar
//! orientation). Position and brightness vary per sample, so a small model
//! trained on few samples overfits those nuisances, and geometric or
//! normalizing augmentations measurably close the train/validation gap.
//! Inverting transforms corrupt the color identity (inverted magenta reads
//! as green), which gives a policy search genuinely harmful operations to
//! avoid.

use crate::augment::Image;
use crate::error::{Error, Result};
use crate::rng::{derive_rng, stream};
use rand::seq::SliceRandom;
use rand::Rng;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// An immutable labeled image collection.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<u8>,
    pub n_classes: usize,
    pub split_tag: SplitTag,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Deterministic split specification.
#[derive(Clone, Copy, Debug)]
pub struct SplitSpec {
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

const CIFAR_RECORD: usize = 3073;
const CIFAR_SIDE: usize = 32;
const CIFAR_PLANE: usize = CIFAR_SIDE * CIFAR_SIDE;

/// Parse CIFAR-10 binary files: 3073-byte records of one label byte followed
/// by three 1024-byte channel planes; planes are converted to channel-last.
pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P]) -> Result<Dataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path.as_ref())
            .map_err(|_| Error::DatasetNotFound(path.as_ref().display().to_string()))?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::MalformedCifar(format!(
                "{}: {} bytes is not a multiple of {CIFAR_RECORD}",
                path.as_ref().display(),
                bytes.len()
            )));
        }
        for record in bytes.chunks_exact(CIFAR_RECORD) {
            let label = record[0];
            if label > 9 {
                return Err(Error::InvalidLabel(label));
            }
            let planes = &record[1..];
            let mut pixels = vec![0u8; CIFAR_PLANE * 3];
            for y in 0..CIFAR_SIDE {
                for x in 0..CIFAR_SIDE {
                    for c in 0..3 {
                        pixels[(y * CIFAR_SIDE + x) * 3 + c] = planes[c * CIFAR_PLANE + y * CIFAR_SIDE + x];
                    }
                }
            }
            images.push(Image { height: CIFAR_SIDE, width: CIFAR_SIDE, channels: 3, pixels });
            labels.push(label);
        }
    }
    Ok(Dataset { images, labels, n_classes: 10, split_tag: SplitTag::Train })
}

/// Inverse of `load_cifar_binary` for one file; used to build fixture data.
pub fn write_cifar_binary(d: &Dataset, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(d.len() * CIFAR_RECORD);
    for (img, &label) in d.images.iter().zip(&d.labels) {
        if (img.height, img.width, img.channels) != (CIFAR_SIDE, CIFAR_SIDE, 3) {
            return Err(Error::ShapeMismatch {
                expected: "32x32x3".into(),
                got: format!("{}x{}x{}", img.height, img.width, img.channels),
            });
        }
        bytes.push(label);
        let mut planes = vec![0u8; CIFAR_PLANE * 3];
        for y in 0..CIFAR_SIDE {
            for x in 0..CIFAR_SIDE {
                for c in 0..3 {
                    planes[c * CIFAR_PLANE + y * CIFAR_SIDE + x] = img.at(y, x, c);
                }
            }
        }
        bytes.extend_from_slice(&planes);
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Seeded shuffle followed by a disjoint partition into (train, val).
pub fn split(d: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset)> {
    let wanted = spec.train_size + spec.val_size;
    if wanted > d.len() {
        return Err(Error::SplitOversubscribed { requested: wanted, available: d.len() });
    }
    let mut indices: Vec<usize> = (0..d.len()).collect();
    let mut rng = derive_rng(spec.seed, stream::DATA_SPLIT, 0);
    indices.shuffle(&mut rng);
    let pick = |range: std::ops::Range<usize>, tag: SplitTag| Dataset {
        images: indices[range.clone()].iter().map(|&i| d.images[i].clone()).collect(),
        labels: indices[range].iter().map(|&i| d.labels[i]).collect(),
        n_classes: d.n_classes,
        split_tag: tag,
    };
    let train = pick(0..spec.train_size, SplitTag::Train);
    let val = pick(spec.train_size..wanted, SplitTag::Val);
    Ok((train, val))
}

/// Random subset restricted to `classes` randomly chosen classes, relabeled
/// onto [0, classes) in ascending original-label order.
pub fn subsample(d: &Dataset, n: usize, classes: usize, seed: u64) -> Result<Dataset> {
    if classes == 0 || classes > d.n_classes {
        return Err(Error::InvalidConfig(format!(
            "subsample wants {classes} of {} classes",
            d.n_classes
        )));
    }
    let mut rng = derive_rng(seed, stream::DATA_SPLIT, 1);
    let mut class_ids: Vec<u8> = (0..d.n_classes as u8).collect();
    class_ids.shuffle(&mut rng);
    let mut chosen: Vec<u8> = class_ids.into_iter().take(classes).collect();
    chosen.sort_unstable();
    let relabel: std::collections::BTreeMap<u8, u8> =
        chosen.iter().enumerate().map(|(new, &old)| (old, new as u8)).collect();
    let mut indices: Vec<usize> =
        (0..d.len()).filter(|&i| relabel.contains_key(&d.labels[i])).collect();
    indices.shuffle(&mut rng);
    if n > indices.len() {
        return Err(Error::SplitOversubscribed { requested: n, available: indices.len() });
    }
    indices.truncate(n);
    Ok(Dataset {
        images: indices.iter().map(|&i| d.images[i].clone()).collect(),
        labels: indices.iter().map(|&i| relabel[&d.labels[i]]).collect(),
        n_classes: classes,
        split_tag: d.split_tag,
    })
}

/// Foreground colors; inverting the magenta and yellow entries lands close
/// to the green and blue entries, so Invert genuinely flips labels.
const SYNTH_COLORS: [[f64; 3]; 5] = [
    [230.0, 60.0, 60.0],  // red
    [60.0, 230.0, 60.0],  // green
    [70.0, 70.0, 230.0],  // blue
    [230.0, 230.0, 60.0], // yellow
    [230.0, 60.0, 230.0], // magenta
];
const SYNTH_BACKGROUND: f64 = 45.0;

/// Class-conditional oriented colored bars with position, brightness, and
/// tint nuisance. Labels are assigned round-robin, so classes stay balanced
/// within one sample for any n.
pub fn synth_dataset(n: usize, n_classes: usize, size: usize, seed: u64) -> Dataset {
    assert!(n_classes >= 1 && n_classes <= 10, "n_classes must be in 1..=10");
    assert!(size >= 8, "size must be at least 8");
    let mut rng = derive_rng(seed, stream::SYNTH, 0);
    let thickness = (size / 5).max(2) as isize;
    let length = (3 * size / 4) as isize;
    let jitter = (size as f64 * 0.19).round() as isize;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % n_classes) as u8;
        let color = SYNTH_COLORS[class as usize % SYNTH_COLORS.len()];
        let vertical = (class as usize / SYNTH_COLORS.len()) == 1;
        let cx = size as isize / 2 + rng.random_range(-jitter..=jitter) as isize;
        let cy = size as isize / 2 + rng.random_range(-jitter..=jitter) as isize;
        let brightness = rng.random_range(0.55..1.0);
        let tint: [f64; 3] = [
            1.0 + rng.random_range(-0.12..0.12),
            1.0 + rng.random_range(-0.12..0.12),
            1.0 + rng.random_range(-0.12..0.12),
        ];
        let mut pixels = vec![0u8; size * size * 3];
        for y in 0..size as isize {
            for x in 0..size as isize {
                let on_bar = if vertical {
                    (x - cx).abs() * 2 <= thickness && (y - cy).abs() * 2 <= length
                } else {
                    (y - cy).abs() * 2 <= thickness && (x - cx).abs() * 2 <= length
                };
                let noise = rng.random_range(-9.0..9.0);
                for c in 0..3 {
                    let base = if on_bar { color[c] } else { SYNTH_BACKGROUND };
                    let v = (base * brightness * tint[c] + noise).round().clamp(0.0, 255.0);
                    pixels[((y as usize) * size + x as usize) * 3 + c] = v as u8;
                }
            }
        }
        images.push(Image { height: size, width: size, channels: 3, pixels });
        labels.push(class);
    }
    Dataset { images, labels, n_classes, split_tag: SplitTag::Train }
}
