//! Datasets: IDX and CIFAR binary loaders, synthetic blobs, batching.
//!
//! Loaders return pixels scaled to `[0, 1]`. [`normalize_splits`] then
//! standardizes every split per channel with statistics taken from the
//! training split.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[n, C, H, W]`
    images: Tensor<f32>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        images.expect_rank("Dataset", 4)?;
        let n = images.shape()[0];
        if n != labels.len() {
            return Err(Error::CountMismatch {
                images: n,
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    /// `[C, H, W]`
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    fn image_len(&self) -> usize {
        self.image_shape().iter().product()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        let len = self.image_len();
        &self.images.data()[i * len..(i + 1) * len]
    }

    /// Gathers the given samples into a `[B, C, H, W]` tensor.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let [c, h, w] = self.image_shape();
        let mut data = Vec::with_capacity(indices.len() * c * h * w);
        for &i in indices {
            data.extend(self.image(i).iter().map(|&v| T::from_f64_lossy(v as f64)));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (
            Tensor::from_vec(&[indices.len(), c, h, w], data).expect("batch shape"),
            labels,
        )
    }

    /// Splits off everything from `at` onwards.
    pub fn split_off(&mut self, at: usize) -> Result<Dataset> {
        let n = self.len();
        if at == 0 || at >= n {
            return Err(Error::InvalidArgument(format!("cannot split {n} samples at {at}")));
        }
        let [c, h, w] = self.image_shape();
        let len = c * h * w;
        let mut data = std::mem::replace(&mut self.images, Tensor::zeros(&[1])).into_data();
        let tail = data.split_off(at * len);
        self.images = Tensor::from_vec(&[at, c, h, w], data)?;
        let labels = self.labels.split_off(at);
        Dataset::new(Tensor::from_vec(&[n - at, c, h, w], tail)?, labels, self.num_classes)
    }

    /// Per-channel mean and (population) standard deviation.
    pub fn channel_stats(&self) -> Vec<(f64, f64)> {
        let [c, h, w] = self.image_shape();
        let sp = h * w;
        (0..c)
            .map(|ch| {
                let mut sum = 0.0;
                let mut count = 0usize;
                for i in 0..self.len() {
                    let plane = &self.image(i)[ch * sp..(ch + 1) * sp];
                    sum += plane.iter().map(|&v| v as f64).sum::<f64>();
                    count += sp;
                }
                let mean = sum / count as f64;
                let mut sq = 0.0;
                for i in 0..self.len() {
                    let plane = &self.image(i)[ch * sp..(ch + 1) * sp];
                    sq += plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>();
                }
                (mean, (sq / count as f64).sqrt())
            })
            .collect()
    }

    pub fn normalize_with(&mut self, stats: &[(f64, f64)]) {
        let [c, h, w] = self.image_shape();
        let sp = h * w;
        for (j, v) in self.images.data_mut().iter_mut().enumerate() {
            let ch = (j / sp) % c;
            let (mean, std) = stats[ch];
            let std = if std > 0.0 { std } else { 1.0 };
            *v = ((*v as f64 - mean) / std) as f32;
        }
    }
}

/// Standardizes `train` and every split in `others` with the training
/// split's per-channel statistics, which are returned.
pub fn normalize_splits(train: &mut Dataset, others: &mut [&mut Dataset]) -> Vec<(f64, f64)> {
    let stats = train.channel_stats();
    train.normalize_with(&stats);
    for d in others.iter_mut() {
        d.normalize_with(&stats);
    }
    stats
}

fn read_u32_be(bytes: &[u8], at: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::Truncated {
            what,
            expected: at + 4,
            found: bytes.len(),
        })
}

/// Parses an IDX3 unsigned-byte image file: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_u32_be(bytes, 0, "IDX image header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let n = read_u32_be(bytes, 4, "IDX image header")? as usize;
    let rows = read_u32_be(bytes, 8, "IDX image header")? as usize;
    let cols = read_u32_be(bytes, 12, "IDX image header")? as usize;
    let expected = 16 + n * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            what: "IDX image data",
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Corrupt {
            path: "IDX image file".into(),
            msg: format!("{} trailing bytes after {n} images", bytes.len() - expected),
        });
    }
    Ok((n, rows, cols, &bytes[16..]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_u32_be(bytes, 0, "IDX label header")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let n = read_u32_be(bytes, 4, "IDX label header")? as usize;
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            what: "IDX label data",
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Corrupt {
            path: "IDX label file".into(),
            msg: format!("{} trailing bytes after {n} labels", bytes.len() - expected),
        });
    }
    Ok(&bytes[8..])
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

fn scale_pixels(pixels: &[u8]) -> Vec<f32> {
    pixels.iter().map(|&p| p as f32 / 255.0).collect()
}

/// Loads an IDX image/label pair as single-channel images in `[0, 1]`.
/// The class count is one more than the largest label.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;
    let (n, rows, cols, pixels) = parse_idx_images(&img_bytes)?;
    let labels = parse_idx_labels(&lbl_bytes)?;
    if labels.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("IDX file holds no images".into()));
    }
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    Dataset::new(Tensor::from_vec(&[n, 1, rows, cols], scale_pixels(pixels))?, labels, classes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CifarVariant {
    /// `<label> <3072 pixels>`
    Cifar10,
    /// `<coarse> <fine> <3072 pixels>`; the fine label is used.
    Cifar100,
}

impl CifarVariant {
    pub fn record_len(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 3073,
            CifarVariant::Cifar100 => 3074,
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }
}

pub fn parse_cifar_records(bytes: &[u8], variant: CifarVariant) -> Result<(Vec<usize>, Vec<f32>)> {
    let rec = variant.record_len();
    if bytes.is_empty() || bytes.len() % rec != 0 {
        return Err(Error::RecordSize {
            len: bytes.len(),
            record: rec,
        });
    }
    let classes = variant.num_classes();
    let mut labels = Vec::with_capacity(bytes.len() / rec);
    let mut pixels = Vec::with_capacity(bytes.len() / rec * 3072);
    for record in bytes.chunks_exact(rec) {
        let label = record[rec - 3073] as usize;
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        labels.push(label);
        pixels.extend(scale_pixels(&record[rec - 3072..]));
    }
    Ok((labels, pixels))
}

/// Loads and concatenates CIFAR binary batch files as `3x32x32` images.
pub fn load_cifar_binary<P: AsRef<Path>>(paths: &[P], variant: CifarVariant) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for p in paths {
        let (l, px) = parse_cifar_records(&fs::read(p)?, variant)?;
        labels.extend(l);
        pixels.extend(px);
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no CIFAR files given".into()));
    }
    Dataset::new(
        Tensor::from_vec(&[labels.len(), 3, 32, 32], pixels)?,
        labels,
        variant.num_classes(),
    )
}

/// Parameters of the synthetic blob dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub n: usize,
    pub image_side: usize,
    #[serde(default = "default_channels")]
    pub channels: usize,
    /// Standard deviation of the per-pixel Gaussian noise.
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default = "default_blobs")]
    pub blobs_per_class: usize,
    pub seed: u64,
}

fn default_channels() -> usize {
    1
}
fn default_noise() -> f64 {
    0.6
}
fn default_blobs() -> usize {
    3
}

/// Class-conditional Gaussian-blob images with the default channel count,
/// noise level and blob count.
pub fn synthetic_blobs(num_classes: usize, n: usize, image_side: usize, seed: u64) -> Result<Dataset> {
    synthetic(&SyntheticSpec {
        num_classes,
        n,
        image_side,
        channels: default_channels(),
        noise: default_noise(),
        blobs_per_class: default_blobs(),
        seed,
    })
}

/// Each class owns a template made of a few Gaussian bumps per channel. A
/// sample is its class template shifted by up to one pixel, scaled by a
/// random gain in `[0.8, 1.2]`, plus i.i.d. Gaussian pixel noise. Labels are
/// assigned round-robin and then shuffled, so every class count is within
/// one of `n / num_classes`.
pub fn synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let SyntheticSpec {
        num_classes,
        n,
        image_side: side,
        channels,
        noise,
        blobs_per_class,
        seed,
    } = *spec;
    if num_classes == 0 || n == 0 || side == 0 || channels == 0 || blobs_per_class == 0 {
        return Err(Error::InvalidArgument("synthetic dataset parameters must be positive".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidArgument("noise must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sf = side as f64;
    let width = (sf / 8.0).max(0.75);
    let plane = side * side;

    let templates: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            let mut t = vec![0.0; channels * plane];
            for ch in 0..channels {
                for _ in 0..blobs_per_class {
                    let cy = rng.random_range(0.15..0.85) * sf;
                    let cx = rng.random_range(0.15..0.85) * sf;
                    let amp = rng.random_range(0.6..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    for y in 0..side {
                        for x in 0..side {
                            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                            t[ch * plane + y * side + x] += amp * (-d2 / (2.0 * width * width)).exp();
                        }
                    }
                }
            }
            t
        })
        .collect();

    let mut labels: Vec<usize> = (0..n).map(|i| i % num_classes).collect();
    labels.shuffle(&mut rng);

    let mut pixels = Vec::with_capacity(n * channels * plane);
    for &label in &labels {
        let dy = rng.random_range(-1i64..=1) as isize;
        let dx = rng.random_range(-1i64..=1) as isize;
        let gain = rng.random_range(0.8..1.2);
        let t = &templates[label];
        for ch in 0..channels {
            for y in 0..side as isize {
                for x in 0..side as isize {
                    let (sy, sx) = (y - dy, x - dx);
                    let base = if (0..side as isize).contains(&sy) && (0..side as isize).contains(&sx) {
                        t[ch * plane + sy as usize * side + sx as usize]
                    } else {
                        0.0
                    };
                    let z: f64 = StandardNormal.sample(&mut rng);
                    pixels.push((gain * base + noise * z) as f32);
                }
            }
        }
    }
    Dataset::new(Tensor::from_vec(&[n, channels, side, side], pixels)?, labels, num_classes)
}

/// Shuffled mini-batches of sample indices. The order is a pure function of
/// `(seed, epoch)`; the last batch may be short.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Batches {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Batches {
        order,
        size: batch_size.max(1),
        pos: 0,
    }
}

#[derive(Clone, Debug)]
pub struct Batches {
    order: Vec<usize>,
    size: usize,
    pos: usize,
}

impl Iterator for Batches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.size).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..3 * 4 * 5).map(|i| (i * 7 % 256) as u8).collect();
        let labels = [2u8, 0, 1];
        std::fs::write(dir.path().join("img"), encode_idx_images(4, 5, &pixels)).unwrap();
        std::fs::write(dir.path().join("lbl"), encode_idx_labels(&labels)).unwrap();
        let ds = load_idx(dir.path().join("img"), dir.path().join("lbl")).unwrap();
        assert_eq!(ds.images().shape(), &[3, 1, 4, 5]);
        assert_eq!(ds.labels(), &[2, 0, 1]);
        assert_eq!(ds.num_classes(), 3);
        let back: Vec<u8> = ds.images().data().iter().map(|&v| (v * 255.0).round() as u8).collect();
        assert_eq!(back, pixels);
        for (&p, &v) in pixels.iter().zip(ds.images().data()) {
            assert_eq!(v, p as f32 / 255.0);
        }
    }

    #[test]
    fn idx_errors_are_distinct() {
        let good = encode_idx_images(2, 2, &[0; 8]);
        assert!(matches!(parse_idx_images(&good[..20]), Err(Error::Truncated { .. })));
        assert!(matches!(parse_idx_images(&good[..10]), Err(Error::Truncated { .. })));
        let mut bad = good.clone();
        bad[3] = 0x01;
        assert!(matches!(parse_idx_images(&bad), Err(Error::BadMagic { found: 0x801, .. })));
        let mut long = good.clone();
        long.push(0);
        assert!(parse_idx_images(&long).is_err());

        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("img"), &good).unwrap();
        std::fs::write(dir.path().join("lbl"), encode_idx_labels(&[1, 2, 3])).unwrap();
        assert!(matches!(
            load_idx(dir.path().join("img"), dir.path().join("lbl")),
            Err(Error::CountMismatch { images: 2, labels: 3 })
        ));
    }

    #[test]
    fn idx_header_constant_for_ten_thousand_items() {
        let bytes = encode_idx_images(28, 28, &vec![0u8; 10_000 * 784]);
        let (n, r, c, _) = parse_idx_images(&bytes).unwrap();
        assert_eq!((n, r, c), (10_000, 28, 28));
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
    }

    fn cifar_fixture(variant: CifarVariant, labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            if variant == CifarVariant::Cifar100 {
                out.push(l / 5);
            }
            out.push(l);
            out.extend((0..3072).map(|p| ((p + i * 31) % 256) as u8));
        }
        out
    }

    #[test]
    fn cifar_records() {
        let bytes = cifar_fixture(CifarVariant::Cifar10, &[9, 1, 0, 3, 9]);
        let (labels, pixels) = parse_cifar_records(&bytes, CifarVariant::Cifar10).unwrap();
        assert_eq!(labels, vec![9, 1, 0, 3, 9]);
        assert_eq!(pixels.len(), 5 * 3072);
        assert!(matches!(
            parse_cifar_records(&bytes[..bytes.len() - 1], CifarVariant::Cifar10),
            Err(Error::RecordSize { record: 3073, .. })
        ));
        let fine = cifar_fixture(CifarVariant::Cifar100, &[42, 99]);
        let (labels, _) = parse_cifar_records(&fine, CifarVariant::Cifar100).unwrap();
        assert_eq!(labels, vec![42, 99]);
    }

    #[test]
    fn cifar_file_order_does_not_change_the_multiset() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.bin");
        let b = dir.path().join("b.bin");
        std::fs::write(&a, cifar_fixture(CifarVariant::Cifar10, &[1, 2, 3])).unwrap();
        std::fs::write(&b, cifar_fixture(CifarVariant::Cifar10, &[7, 8])).unwrap();
        let ab = load_cifar_binary(&[&a, &b], CifarVariant::Cifar10).unwrap();
        let ba = load_cifar_binary(&[&b, &a], CifarVariant::Cifar10).unwrap();
        let key = |d: &Dataset| {
            let mut v: Vec<(usize, Vec<u32>)> = (0..d.len())
                .map(|i| (d.labels()[i], d.image(i).iter().map(|x| x.to_bits()).collect()))
                .collect();
            v.sort();
            v
        };
        assert_eq!(key(&ab), key(&ba));
        assert_eq!(ab.len(), 5);
    }

    #[test]
    fn synthetic_is_seeded_and_balanced() {
        let a = synthetic_blobs(4, 103, 12, 5).unwrap();
        let b = synthetic_blobs(4, 103, 12, 5).unwrap();
        assert_eq!(a, b);
        let c = synthetic_blobs(4, 103, 12, 6).unwrap();
        assert_ne!(a, c);
        let mut hist = [0usize; 4];
        for &l in a.labels() {
            hist[l] += 1;
        }
        assert!(hist.iter().all(|&h| (25..=26).contains(&h)), "{hist:?}");
    }

    #[test]
    fn normalization_uses_training_stats() {
        let mut train = synthetic_blobs(3, 200, 8, 1).unwrap();
        let mut test = train.split_off(150).unwrap();
        let stats = normalize_splits(&mut train, &mut [&mut test]);
        assert_eq!(stats.len(), 1);
        let after = train.channel_stats();
        assert!(after[0].0.abs() < 1e-6);
        assert!((after[0].1 - 1.0).abs() < 1e-3);
        assert_eq!(test.len(), 50);
    }

    #[test]
    fn batching() {
        let sizes: Vec<usize> = batches(10, 4, 1, 0).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let a: Vec<_> = batches(10, 4, 1, 3).collect();
        let b: Vec<_> = batches(10, 4, 1, 3).collect();
        assert_eq!(a, b);
        let c: Vec<_> = batches(10, 4, 1, 4).collect();
        assert_ne!(a, c);
        let mut all: Vec<usize> = a.into_iter().flatten().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
