//! IDX dataset loading, 8×8 preprocessing, benchmark subsets and synthetic
//! data.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pqc::FEATURES;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Side length of the preprocessed image.
pub const TARGET_SIDE: usize = 8;

/// Images and labels as stored in a pair of IDX files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDataset {
    pub rows: usize,
    pub cols: usize,
    /// Row-major pixels, one `rows * cols` slice per image.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let chunk = bytes.get(offset..offset + 4).ok_or_else(|| Error::Format {
        offset: offset as u64,
        message: format!("header ends early: need 4 bytes, file has {}", bytes.len().saturating_sub(offset)),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("slice of 4")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != expected {
        return Err(Error::Format { offset: 0, message: format!("magic {magic:#010x}, expected {expected:#010x}") });
    }
    Ok(())
}

fn body(bytes: &[u8], offset: usize, expected: usize) -> Result<&[u8]> {
    let actual = bytes.len().saturating_sub(offset);
    if actual != expected {
        return Err(Error::Format {
            offset: offset as u64,
            message: format!("data section has {actual} bytes, expected {expected}"),
        });
    }
    Ok(&bytes[offset..])
}

/// Parses an IDX3 image file: returns `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format { offset: 8, message: format!("image dimensions {rows}×{cols}") });
    }
    let pixels = body(bytes, 16, count * rows * cols)?;
    Ok((count, rows, cols, pixels.to_vec()))
}

/// Parses an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    Ok(body(bytes, 8, count)?.to_vec())
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<RawDataset> {
    let (count, rows, cols, pixels) = parse_idx_images(&std::fs::read(images)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels)?)?;
    if labels.len() != count {
        return Err(Error::Format {
            offset: 4,
            message: format!("label file holds {} entries, image file {count}", labels.len()),
        });
    }
    Ok(RawDataset { rows, cols, pixels, labels })
}

/// Corner-aligned bilinear resize to 8×8, scaled to `[0, 1]`, flattened
/// row-major (`(r, c)` lands at `8r + c`).
pub fn preprocess(image: &[u8], rows: usize, cols: usize) -> Vec<f64> {
    assert_eq!(image.len(), rows * cols, "image buffer does not match its dimensions");
    let coord = |i: usize, src: usize| -> (usize, usize, f64) {
        if src == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (src - 1) as f64 / (TARGET_SIDE - 1) as f64;
        let lo = (pos.floor() as usize).min(src - 2);
        (lo, lo + 1, pos - lo as f64)
    };
    let px = |r: usize, c: usize| f64::from(image[r * cols + c]);
    let mut out = Vec::with_capacity(TARGET_SIDE * TARGET_SIDE);
    for r in 0..TARGET_SIDE {
        let (r0, r1, fr) = coord(r, rows);
        for c in 0..TARGET_SIDE {
            let (c0, c1, fc) = coord(c, cols);
            let top = px(r0, c0) * (1.0 - fc) + px(r0, c1) * fc;
            let bottom = px(r1, c0) * (1.0 - fc) + px(r1, c1) * fc;
            let v = (top * (1.0 - fr) + bottom * fr) / 255.0;
            out.push(v.clamp(0.0, 1.0));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: usize, classes: usize) -> Result<Self> {
        if features.len() != FEATURES {
            return Err(Error::Data(format!("sample has {} features, expected {FEATURES}", features.len())));
        }
        if features.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Data("sample feature outside [0, 1]".into()));
        }
        if label >= classes {
            return Err(Error::Data(format!("label {label} outside 0..{classes}")));
        }
        Ok(Self { features, label })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Benchmark {
    Mnist4,
    Mnist2,
    Fashion4,
    Fashion2,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [Benchmark::Mnist4, Benchmark::Mnist2, Benchmark::Fashion4, Benchmark::Fashion2];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Mnist4 => "MNIST-4",
            Benchmark::Mnist2 => "MNIST-2",
            Benchmark::Fashion4 => "Fashion-4",
            Benchmark::Fashion2 => "Fashion-2",
        }
    }

    /// Original labels kept, in the order they are remapped to `0..c`.
    pub fn source_classes(self) -> &'static [u8] {
        match self {
            Benchmark::Mnist4 => &[0, 1, 2, 3],
            Benchmark::Mnist2 => &[3, 6],
            // t-shirt/top, trouser, pullover, dress
            Benchmark::Fashion4 => &[0, 1, 2, 3],
            // dress, shirt
            Benchmark::Fashion2 => &[3, 6],
        }
    }

    pub fn classes(self) -> usize {
        self.source_classes().len()
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Benchmark::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown benchmark {s:?}")))
    }
}

impl Serialize for Benchmark {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Benchmark {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn class_indices(raw: &RawDataset, benchmark: Benchmark) -> Result<Vec<Vec<usize>>> {
    let sources = benchmark.source_classes();
    let mut by_class = vec![Vec::new(); sources.len()];
    for (i, l) in raw.labels.iter().enumerate() {
        if let Some(k) = sources.iter().position(|s| s == l) {
            by_class[k].push(i);
        }
    }
    if let Some(k) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("{benchmark}: no samples of source class {}", sources[k])));
    }
    Ok(by_class)
}

fn to_dataset(raw: &RawDataset, picks: &[(usize, usize)], classes: usize) -> Dataset {
    let samples = picks
        .iter()
        .map(|&(i, label)| Sample { features: preprocess(raw.image(i), raw.rows, raw.cols), label })
        .collect();
    Dataset { classes, samples }
}

/// Balanced, seeded train and test subsets drawn from one raw dataset.
///
/// Each class contributes `train_cap / c` training and `test_cap / c` test
/// images; the two subsets never share an image. Classes with fewer images
/// contribute what they have, training first.
pub fn make_benchmark(
    raw: &RawDataset,
    benchmark: Benchmark,
    train_cap: usize,
    test_cap: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let c = benchmark.classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (label, mut idx) in class_indices(raw, benchmark)?.into_iter().enumerate() {
        idx.shuffle(&mut rng);
        let n_train = (train_cap / c).min(idx.len());
        let n_test = (test_cap / c).min(idx.len() - n_train);
        train.extend(idx[..n_train].iter().map(|&i| (i, label)));
        test.extend(idx[n_train..n_train + n_test].iter().map(|&i| (i, label)));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((to_dataset(raw, &train, c), to_dataset(raw, &test, c)))
}

/// Balanced, seeded subsets from separate train and test files.
pub fn make_benchmark_from_splits(
    train_raw: &RawDataset,
    test_raw: &RawDataset,
    benchmark: Benchmark,
    train_cap: usize,
    test_cap: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let c = benchmark.classes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |raw: &RawDataset, cap: usize| -> Result<Dataset> {
        let mut out = Vec::new();
        for (label, mut idx) in class_indices(raw, benchmark)?.into_iter().enumerate() {
            idx.shuffle(&mut rng);
            out.extend(idx.into_iter().take(cap / c).map(|i| (i, label)));
        }
        out.sort_unstable();
        Ok(to_dataset(raw, &out, c))
    };
    let train = pick(train_raw, train_cap)?;
    let test = pick(test_raw, test_cap)?;
    Ok((train, test))
}

const BLOB_NOISE: f64 = 0.1;
const BLOB_STEP: f64 = 0.05;

/// Clipped Gaussian clusters around random sign-pattern anchors
/// `0.5 ± 0.05·separation` per feature.
pub fn synthetic_blobs(classes: usize, per_class: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes != 2 && classes != 4 {
        return Err(Error::Validation(format!("synthetic data supports 2 or 4 classes, got {classes}")));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::Validation(format!("separation {separation} must be finite and ≥ 0")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..FEATURES)
                .map(|_| 0.5 + if rng.random::<bool>() { 1.0 } else { -1.0 } * BLOB_STEP * separation)
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, BLOB_NOISE).expect("positive deviation");
    let mut samples = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (label, anchor) in anchors.iter().enumerate() {
            let features = anchor.iter().map(|a| (a + noise.sample(&mut rng)).clamp(0.0, 1.0)).collect();
            samples.push(Sample { features, label });
        }
    }
    Ok(Dataset { classes, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IMAGE_MAGIC, count, rows, cols] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    #[test]
    fn parses_idx_headers() {
        let pixels: Vec<u8> = (0..2 * 28 * 28).map(|i| (i % 251) as u8).collect();
        let (count, rows, cols, body) = parse_idx_images(&idx_images(2, 28, 28, &pixels)).unwrap();
        assert_eq!((count, rows, cols), (2, 28, 28));
        assert_eq!(body, pixels);
        assert_eq!(parse_idx_labels(&idx_labels(&[3, 6])).unwrap(), vec![3, 6]);
    }

    #[test]
    fn rejects_bad_magic_at_offset_zero() {
        let mut bytes = idx_images(1, 2, 2, &[0; 4]);
        bytes[3] = 0x01;
        let err = parse_idx_images(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
        assert!(matches!(parse_idx_labels(&idx_images(1, 2, 2, &[0; 4])), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncated_pixels_name_both_lengths() {
        let bytes = idx_images(2, 28, 28, &[0; 1000]);
        let err = parse_idx_images(&bytes).unwrap_err();
        let Error::Format { offset, message } = err else { panic!("wrong error kind") };
        assert_eq!(offset, 16);
        assert!(message.contains("1000") && message.contains("1568"), "{message}");
        assert!(matches!(parse_idx_images(&bytes[..10]), Err(Error::Format { offset: 8, .. })));
    }

    #[test]
    fn load_checks_counts_and_is_pure() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        std::fs::write(&img, idx_images(2, 28, 28, &[7; 2 * 784])).unwrap();
        std::fs::write(&lab, idx_labels(&[1, 2, 3])).unwrap();
        assert!(matches!(load_idx(&img, &lab), Err(Error::Format { .. })));
        std::fs::write(&lab, idx_labels(&[1, 2])).unwrap();
        let a = load_idx(&img, &lab).unwrap();
        assert_eq!(a, load_idx(&img, &lab).unwrap());
        assert_eq!(a.image(1).len(), 784);
    }

    #[test]
    fn preprocess_constants() {
        assert_eq!(preprocess(&[0; 784], 28, 28), vec![0.0; 64]);
        assert_eq!(preprocess(&[255; 784], 28, 28), vec![1.0; 64]);
        for v in [1u8, 77, 200] {
            for x in preprocess(&[v; 784], 28, 28) {
                assert!((x - f64::from(v) / 255.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn preprocess_samples_corners_and_interpolates() {
        // pixel value = column index: bilinear output is linear in the column
        let image: Vec<u8> = (0..784).map(|i| (i % 28) as u8).collect();
        let out = preprocess(&image, 28, 28);
        for r in 0..8 {
            for c in 0..8 {
                let expected = c as f64 * 27.0 / 7.0 / 255.0;
                assert!((out[8 * r + c] - expected).abs() < 1e-12);
            }
        }
        // single bright corner pixel lands only at index 0
        let mut corner = vec![0u8; 784];
        corner[0] = 255;
        let out = preprocess(&corner, 28, 28);
        assert_eq!(out[0], 1.0);
        assert!(out[1..].iter().all(|&x| x == 0.0));
    }

    fn fake_raw(per_class: usize) -> RawDataset {
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for i in 0..per_class {
            for digit in 0..10u8 {
                labels.push(digit);
                pixels.extend(std::iter::repeat_n(digit * 20 + (i % 7) as u8, 784));
            }
        }
        RawDataset { rows: 28, cols: 28, pixels, labels }
    }

    #[test]
    fn benchmark_filters_and_remaps() {
        let raw = fake_raw(40);
        let (train, test) = make_benchmark(&raw, Benchmark::Mnist2, 20, 10, 1).unwrap();
        assert_eq!(train.classes, 2);
        assert_eq!(train.class_counts(), vec![10, 10]);
        assert_eq!(test.class_counts(), vec![5, 5]);
        for s in train.samples.iter().chain(&test.samples) {
            // digit 3 → label 0, digit 6 → label 1
            let digit = (s.features[0] * 255.0).round() as u32 / 20;
            assert_eq!(digit, [3, 6][s.label]);
        }
    }

    #[test]
    fn benchmark_caps_balance_and_determinism() {
        let raw = fake_raw(400);
        let (train, test) = make_benchmark(&raw, Benchmark::Mnist4, 1000, 500, 9).unwrap();
        assert_eq!(train.class_counts(), vec![250; 4]);
        assert_eq!(test.class_counts(), vec![125; 4]);
        let again = make_benchmark(&raw, Benchmark::Mnist4, 1000, 500, 9).unwrap();
        assert_eq!((train, test), again);
    }

    #[test]
    fn benchmark_missing_class_is_a_data_error() {
        let mut raw = fake_raw(3);
        for l in raw.labels.iter_mut() {
            if *l == 6 {
                *l = 5;
            }
        }
        assert!(matches!(make_benchmark(&raw, Benchmark::Fashion2, 4, 2, 0), Err(Error::Data(_))));
    }

    #[test]
    fn benchmark_names_round_trip() {
        for b in Benchmark::ALL {
            assert_eq!(b.name().parse::<Benchmark>().unwrap(), b);
        }
        assert_eq!(Benchmark::Fashion2.source_classes(), &[3, 6]);
        assert!("MNIST-10".parse::<Benchmark>().is_err());
    }

    fn probe_accuracy(data: &Dataset) -> f64 {
        // least-squares linear probe with a bias column, targets ±1
        let rows = data.len();
        let x =
            DMatrix::from_fn(rows, FEATURES + 1, |i, j| if j == FEATURES { 1.0 } else { data.samples[i].features[j] });
        let y = DVector::from_fn(rows, |i, _| if data.samples[i].label == 0 { 1.0 } else { -1.0 });
        let w = (x.transpose() * &x + DMatrix::identity(FEATURES + 1, FEATURES + 1) * 1e-9)
            .lu()
            .solve(&(x.transpose() * &y))
            .unwrap();
        let pred = x * w;
        (0..rows).filter(|&i| (pred[i] > 0.0) == (y[i] > 0.0)).count() as f64 / rows as f64
    }

    #[test]
    fn separated_blobs_are_linearly_separable() {
        let data = synthetic_blobs(2, 200, 3.0, 4).unwrap();
        assert!(probe_accuracy(&data) >= 0.99);
        assert_eq!(data, synthetic_blobs(2, 200, 3.0, 4).unwrap());
        assert!(data.samples.iter().flat_map(|s| &s.features).all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn coincident_blobs_share_their_anchor() {
        let data = synthetic_blobs(4, 50, 0.0, 5).unwrap();
        let mean = |label: usize| -> f64 {
            let xs: Vec<f64> =
                data.samples.iter().filter(|s| s.label == label).flat_map(|s| s.features.clone()).collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        for k in 0..4 {
            assert!((mean(k) - 0.5).abs() < 0.01);
        }
        assert!(synthetic_blobs(3, 1, 1.0, 0).is_err());
        assert!(synthetic_blobs(2, 1, -1.0, 0).is_err());
    }
}
