//! In-memory image classification datasets.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

pub const CIFAR10_RECORD: usize = 1 + 3 * 32 * 32;
pub const CIFAR10_CLASSES: usize = 10;

/// Per-channel `(x − mean) / std` applied after scaling pixels to [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    pub const CIFAR10: Normalization = Normalization {
        mean: [0.4914, 0.4822, 0.4465],
        std: [0.2470, 0.2435, 0.2616],
    };
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization::CIFAR10
    }
}

/// Where samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Cifar10 {
        paths: Vec<PathBuf>,
        #[serde(default)]
        normalization: Normalization,
    },
    Synthetic(SyntheticSpec),
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Cifar10 {
                paths,
                normalization,
            } => load_cifar10_binary(paths, normalization),
            DatasetSource::Synthetic(spec) => synthetic(spec),
        }
    }
}

/// Images stored as `f32`, `(samples, channels, height, width)` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<f32>,
    labels: Vec<usize>,
    channels: usize,
    height: usize,
    width: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(
        images: Vec<f32>,
        labels: Vec<usize>,
        (channels, height, width): (usize, usize, usize),
        classes: usize,
    ) -> Result<Self> {
        let item = channels * height * width;
        if images.len() != labels.len() * item {
            return Err(Error::Data(format!(
                "{} pixel values for {} samples of {channels}x{height}x{width}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Data(format!("label {y} outside 0..{classes}")));
        }
        Ok(Dataset {
            images,
            labels,
            channels,
            height,
            width,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.channels * self.height * self.width;
        &self.images[i * n..(i + 1) * n]
    }

    /// Gather the given samples into a batch, optionally mirroring images
    /// left to right where `flip[k]` is set.
    pub fn batch<T: Element>(&self, indices: &[usize], flip: Option<&[bool]>) -> (Tensor<T>, Vec<usize>) {
        let (c, h, w) = self.image_shape();
        let mut data = Vec::with_capacity(indices.len() * c * h * w);
        for (k, &i) in indices.iter().enumerate() {
            let img = self.image(i);
            let mirror = flip.is_some_and(|f| f[k]);
            for row in img.chunks_exact(w) {
                if mirror {
                    data.extend(row.iter().rev().map(|&v| T::from_f32(v)));
                } else {
                    data.extend(row.iter().map(|&v| T::from_f32(v)));
                }
            }
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let t = Tensor::from_vec(Shape::new(indices.len(), c, h, w), data).expect("batch extents");
        (t, labels)
    }
}

fn decode_cifar(path: &Path, bytes: &[u8], norm: &Normalization, images: &mut Vec<f32>, labels: &mut Vec<usize>) -> Result<()> {
    let whole = bytes.len() - bytes.len() % CIFAR10_RECORD;
    if whole != bytes.len() {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            offset: whole as u64,
            detail: format!(
                "truncated record: {} of {CIFAR10_RECORD} bytes",
                bytes.len() - whole
            ),
        });
    }
    for (r, record) in bytes.chunks_exact(CIFAR10_RECORD).enumerate() {
        let label = record[0] as usize;
        if label >= CIFAR10_CLASSES {
            return Err(Error::Data(format!(
                "{}: record {r} (byte offset {}) has label {label}, expected 0..=9",
                path.display(),
                r * CIFAR10_RECORD
            )));
        }
        labels.push(label);
        for (ch, plane) in record[1..].chunks_exact(32 * 32).enumerate() {
            let (m, s) = (norm.mean[ch], norm.std[ch]);
            images.extend(plane.iter().map(|&p| (p as f32 / 255.0 - m) / s));
        }
    }
    Ok(())
}

/// Read CIFAR-10 binary batches: each record is one label byte followed by
/// 3072 pixel bytes (red, green, blue planes, each 32×32 row-major).
pub fn load_cifar10_binary<P: AsRef<Path>>(paths: &[P], norm: &Normalization) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::config("dataset.paths must list at least one file"));
    }
    if norm.std.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::config("dataset.normalization.std entries must be positive"));
    }
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let path = p.as_ref();
        let bytes = fs::read(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        decode_cifar(path, &bytes, norm, &mut images, &mut labels)?;
    }
    Dataset::new(images, labels, (3, 32, 32), CIFAR10_CLASSES)
}

/// A seeded dataset of class prototypes plus Gaussian noise.
///
/// Each class gets its own per-channel colour offset and a fixed spatial
/// pattern; samples add independent noise. Classes are balanced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub samples: usize,
    pub image_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_noise() -> f64 {
    0.5
}

impl SyntheticSpec {
    pub fn new(classes: usize, samples: usize, image_size: usize, seed: u64) -> Self {
        SyntheticSpec {
            classes,
            samples,
            image_size,
            seed,
            noise: default_noise(),
        }
    }
}

pub fn synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.classes == 0 || spec.samples == 0 || spec.image_size == 0 {
        return Err(Error::config(format!(
            "synthetic dataset needs positive classes, samples and image_size, got {}, {}, {}",
            spec.classes, spec.samples, spec.image_size
        )));
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::config(format!("dataset.noise must be >= 0, got {}", spec.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let plane = spec.image_size * spec.image_size;
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let prototypes: Vec<Vec<f32>> = (0..spec.classes)
        .map(|_| {
            let colour: Vec<f64> = (0..3).map(|_| normal()).collect();
            colour
                .iter()
                .flat_map(|&c| (0..plane).map(|_| (c + 0.5 * normal()) as f32).collect::<Vec<_>>())
                .collect()
        })
        .collect();
    let mut images = Vec::with_capacity(spec.samples * 3 * plane);
    let mut labels = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let y = i % spec.classes;
        labels.push(y);
        images.extend(prototypes[y].iter().map(|&p| p + (spec.noise * normal()) as f32));
    }
    Dataset::new(images, labels, (3, spec.image_size, spec.image_size), spec.classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![fill; CIFAR10_RECORD];
        r[0] = label;
        r
    }

    #[test]
    fn decodes_records() {
        let mut bytes = record(7, 255);
        bytes.extend(record(0, 0));
        let (mut images, mut labels) = (Vec::new(), Vec::new());
        decode_cifar(Path::new("x.bin"), &bytes, &Normalization::IDENTITY, &mut images, &mut labels).unwrap();
        assert_eq!(labels, [7, 0]);
        assert_eq!(images.len(), 2 * 3072);
        assert_eq!(images[0], 1.0);
        assert_eq!(images[3072], 0.0);
    }

    #[test]
    fn channel_major_layout() {
        let mut r = record(1, 0);
        r[1 + 1024 + 5] = 255; // green plane, row 0, column 5
        let (mut images, mut labels) = (Vec::new(), Vec::new());
        decode_cifar(Path::new("x.bin"), &r, &Normalization::IDENTITY, &mut images, &mut labels).unwrap();
        let ds = Dataset::new(images, labels, (3, 32, 32), 10).unwrap();
        let (t, _) = ds.batch::<f32>(&[0], None);
        assert_eq!(t.get(0, 1, 0, 5), 1.0);
        let (t, _) = ds.batch::<f32>(&[0], Some(&[true]));
        assert_eq!(t.get(0, 1, 0, 26), 1.0);
    }

    #[test]
    fn truncated_file_reports_offset() {
        let mut bytes = record(1, 9);
        bytes.extend_from_slice(&[3; 100]);
        let err = decode_cifar(Path::new("t.bin"), &bytes, &Normalization::IDENTITY, &mut Vec::new(), &mut Vec::new())
            .unwrap_err();
        match err {
            Error::Ingestion { offset, .. } => assert_eq!(offset, CIFAR10_RECORD as u64),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn bad_label_is_a_data_error() {
        let bytes = record(10, 0);
        let err = decode_cifar(Path::new("b.bin"), &bytes, &Normalization::IDENTITY, &mut Vec::new(), &mut Vec::new());
        assert!(matches!(err, Err(Error::Data(_))));
    }

    #[test]
    fn synthetic_is_seeded_and_balanced() {
        let spec = SyntheticSpec::new(4, 10, 6, 3);
        let a = synthetic(&spec).unwrap();
        assert_eq!(a, synthetic(&spec).unwrap());
        assert_eq!(a.labels(), [0, 1, 2, 3, 0, 1, 2, 3, 0, 1]);
        assert_ne!(a, synthetic(&SyntheticSpec { seed: 4, ..spec }).unwrap());
    }
}
