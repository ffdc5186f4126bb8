//! MNIST ingestion from IDX files, plus a procedural stand-in dataset.
//!
//! IDX headers are big-endian: magic, count, then (for images) rows and cols.
//! Files may be raw or gzip-compressed; the two leading bytes decide.

use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tensor4};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const CLASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// File stem used by the distribution files.
    pub fn stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::parse(bytes.len() as u64, format!("header truncated, need {} bytes", offset + 4)))
}

fn check_payload(bytes: &[u8], header: usize, expected: usize) -> Result<&[u8]> {
    let found = bytes.len() - header;
    if found != expected {
        return Err(Error::parse(
            bytes.len().min(header + expected) as u64,
            format!("payload holds {found} bytes, header declares {expected}"),
        ));
    }
    Ok(&bytes[header..])
}

/// Decodes an IDX image file, scaling every pixel by `1/255`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor4> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::parse(0, format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    if count == 0 || rows == 0 || cols == 0 {
        return Err(Error::parse(4, format!("empty image file ({count}x{rows}x{cols})")));
    }
    let pixels = check_payload(bytes, 16, count * rows * cols)?;
    Tensor4::new(count, 1, rows, cols, pixels.iter().map(|&b| f64::from(b) / 255.0).collect())
}

/// Decodes an IDX label file into class indices `0..=9`.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::parse(0, format!("label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let labels = check_payload(bytes, 8, count)?;
    if let Some(i) = labels.iter().position(|&l| usize::from(l) >= CLASSES) {
        return Err(Error::parse(8 + i as u64, format!("label {} outside 0..{CLASSES}", labels[i])));
    }
    Ok(labels.to_vec())
}

pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Tensor4> {
    let path = path.as_ref();
    parse_idx_images(&read_bytes(path)?).map_err(|e| at_path(e, path))
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    parse_idx_labels(&read_bytes(path)?).map_err(|e| at_path(e, path))
}

fn at_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { offset, message } => Error::parse(offset, format!("{}: {message}", path.display())),
        other => other,
    }
}

/// Rows with a single 1 at each label's index.
pub fn one_hot(labels: &[u8], classes: usize) -> Result<Matrix> {
    if labels.is_empty() {
        return Err(Error::Label("no labels".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= classes) {
        return Err(Error::Label(format!("class {bad} outside 0..{classes}")));
    }
    Ok(Matrix::from_fn(labels.len(), classes, |i, j| {
        if usize::from(labels[i]) == j {
            1.0
        } else {
            0.0
        }
    }))
}

/// Images in `[0, 1]` with their one-hot labels.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Tensor4,
    pub labels: Matrix,
    pub split: Split,
}

fn locate(dir: &Path, split: Split, kind: &str) -> Result<PathBuf> {
    let base = dir.join(format!("{}-{kind}-ubyte", split.stem()));
    let gz = dir.join(format!("{}-{kind}-ubyte.gz", split.stem()));
    if base.exists() {
        Ok(base)
    } else if gz.exists() {
        Ok(gz)
    } else {
        Err(Error::io(
            base,
            std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found (raw or .gz)"),
        ))
    }
}

impl Dataset {
    pub fn new(images: Tensor4, labels: Matrix, split: Split) -> Result<Dataset> {
        if images.n() != labels.rows() {
            return Err(Error::shape("dataset", images.shape_string(), labels.shape_string()));
        }
        Ok(Dataset { images, labels, split })
    }

    /// Loads `<dir>/{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]`.
    pub fn load(dir: impl AsRef<Path>, split: Split) -> Result<Dataset> {
        let dir = dir.as_ref();
        let images = load_idx_images(locate(dir, split, "images-idx3")?)?;
        let labels = load_idx_labels(locate(dir, split, "labels-idx1")?)?;
        if images.n() != labels.len() {
            return Err(Error::parse(
                4,
                format!("{} images but {} labels for the {split} split", images.n(), labels.len()),
            ));
        }
        Dataset::new(images, one_hot(&labels, CLASSES)?, split)
    }

    /// Sixteen procedurally drawn seven-segment digits per class, with
    /// per-sample jitter in position, slant, stroke width and intensity.
    pub fn synthetic(split: Split) -> Dataset {
        const PER_CLASS: usize = 16;
        let seed = match split {
            Split::Train => 0x5EED_0001,
            Split::Test => 0x5EED_0002,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = PER_CLASS * CLASSES;
        let mut pixels = Vec::with_capacity(n * 28 * 28);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let digit = (i % CLASSES) as u8;
            pixels.extend(draw_digit(digit, &mut rng));
            labels.push(digit);
        }
        let images = Tensor4::new(n, 1, 28, 28, pixels).expect("synthetic geometry");
        Dataset::new(images, one_hot(&labels, CLASSES).expect("digits"), split).expect("matching counts")
    }

    pub fn len(&self) -> usize {
        self.images.n()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels.argmax_row(i)
    }

    /// Samples at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor4, Matrix) {
        let [_, d, h, w] = self.images.dims();
        let per = d * h * w;
        let src = self.images.data();
        let mut pixels = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            pixels.extend_from_slice(&src[i * per..(i + 1) * per]);
        }
        let images = Tensor4::new(indices.len(), d, h, w, pixels).expect("non-empty gather");
        let labels = Matrix::from_fn(indices.len(), self.labels.cols(), |r, c| self.labels.get(indices[r], c));
        (images, labels)
    }

    /// The first `count` samples (all of them if fewer).
    pub fn take(&self, count: usize) -> Dataset {
        let idx: Vec<usize> = (0..count.min(self.len())).collect();
        let (images, labels) = self.gather(&idx);
        Dataset {
            images,
            labels,
            split: self.split,
        }
    }

    /// Minibatches of `batch_size`; a trailing partial batch is kept only if
    /// it has at least two samples. With `order` set, samples are visited in
    /// a Fisher-Yates permutation drawn from a sub-seed of `(seed, epoch)`.
    pub fn batches(&self, batch_size: usize, order: Option<(u64, usize)>) -> Batches<'_> {
        let mut indices: Vec<usize> = (0..self.len()).collect();
        if let Some((seed, epoch)) = order {
            indices.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch)));
        }
        Batches {
            dataset: self,
            batch_size: batch_size.max(1),
            indices,
            cursor: 0,
        }
    }
}

/// Per-epoch shuffle seed.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut z = seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct Batches<'a> {
    dataset: &'a Dataset,
    batch_size: usize,
    indices: Vec<usize>,
    cursor: usize,
}

impl Batches<'_> {
    /// Sample indices of the batches still to come.
    pub fn remaining_indices(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut c = self.cursor;
        while let Some(chunk) = self.chunk_at(c) {
            c += chunk.len();
            out.push(chunk.to_vec());
        }
        out
    }

    fn chunk_at(&self, cursor: usize) -> Option<&[usize]> {
        let left = self.indices.len().saturating_sub(cursor);
        let take = left.min(self.batch_size);
        if take == 0 || (take < self.batch_size && take < 2) {
            return None;
        }
        Some(&self.indices[cursor..cursor + take])
    }
}

impl Iterator for Batches<'_> {
    type Item = (Tensor4, Matrix);

    fn next(&mut self) -> Option<Self::Item> {
        let chunk = self.chunk_at(self.cursor)?.to_vec();
        self.cursor += chunk.len();
        Some(self.dataset.gather(&chunk))
    }
}

// segment endpoints on a 0..1 box: a top, b upper right, c lower right,
// d bottom, e lower left, f upper left, g middle
const SEGMENTS: [((f64, f64), (f64, f64)); 7] = [
    ((0.0, 0.0), (1.0, 0.0)),
    ((1.0, 0.0), (1.0, 0.5)),
    ((1.0, 0.5), (1.0, 1.0)),
    ((0.0, 1.0), (1.0, 1.0)),
    ((0.0, 0.5), (0.0, 1.0)),
    ((0.0, 0.0), (0.0, 0.5)),
    ((0.0, 0.5), (1.0, 0.5)),
];

const DIGIT_SEGMENTS: [&[usize]; 10] = [
    &[0, 1, 2, 3, 4, 5],
    &[1, 2],
    &[0, 1, 6, 4, 3],
    &[0, 1, 6, 2, 3],
    &[5, 6, 1, 2],
    &[0, 5, 6, 2, 3],
    &[0, 5, 4, 3, 2, 6],
    &[0, 1, 2],
    &[0, 1, 2, 3, 4, 5, 6],
    &[6, 5, 0, 1, 2, 3],
];

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

fn draw_digit(digit: u8, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let width = rng.gen_range(9.0..13.0);
    let height = rng.gen_range(15.0..19.0);
    let x0 = 14.0 - width / 2.0 + rng.gen_range(-2.5..2.5);
    let y0 = 14.0 - height / 2.0 + rng.gen_range(-2.0..2.0);
    let slant = rng.gen_range(-0.25..0.25);
    let stroke = rng.gen_range(1.2..2.2);
    let ink = rng.gen_range(0.75..1.0);
    let place = |(u, v): (f64, f64)| (x0 + u * width + slant * (0.5 - v) * height, y0 + v * height);
    let segs: Vec<_> = DIGIT_SEGMENTS[usize::from(digit)]
        .iter()
        .map(|&s| (place(SEGMENTS[s].0), place(SEGMENTS[s].1)))
        .collect();
    let mut out = Vec::with_capacity(28 * 28);
    for i in 0..28 {
        for j in 0..28 {
            let p = (j as f64 + 0.5, i as f64 + 0.5);
            let d = segs.iter().map(|&(a, b)| segment_distance(p, a, b)).fold(f64::INFINITY, f64::min);
            let v = (ink * (1.0 - (d - stroke).max(0.0))).clamp(0.0, 1.0);
            // quantized like the real files
            out.push((v * 255.0).round() / 255.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_file(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IMAGE_MAGIC, count, rows, cols] {
            b.extend(v.to_be_bytes());
        }
        b.extend(pixels);
        b
    }

    fn label_file(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend(LABEL_MAGIC.to_be_bytes());
        b.extend((labels.len() as u32).to_be_bytes());
        b.extend(labels);
        b
    }

    #[test]
    fn parses_and_scales_images() {
        let px = [0, 255, 128, 64, 1, 2, 3, 4];
        let t = parse_idx_images(&image_file(2, 2, 2, &px)).unwrap();
        assert_eq!(t.dims(), [2, 1, 2, 2]);
        let want: Vec<f64> = px.iter().map(|&b| f64::from(b) / 255.0).collect();
        assert_eq!(t.data(), want.as_slice());
    }

    #[test]
    fn rejects_malformed_files() {
        let mut bad = image_file(1, 2, 2, &[0; 4]);
        bad[3] = 0x01;
        assert!(matches!(parse_idx_images(&bad), Err(Error::Parse { offset: 0, .. })));
        let short = image_file(2, 2, 2, &[0; 7]);
        assert!(matches!(parse_idx_images(&short), Err(Error::Parse { offset: 23, .. })));
        let long = image_file(1, 2, 2, &[0; 5]);
        assert!(parse_idx_images(&long).is_err());
        assert!(matches!(parse_idx_images(&[0, 0]), Err(Error::Parse { .. })));

        assert_eq!(parse_idx_labels(&label_file(&[3, 0, 9])).unwrap(), vec![3, 0, 9]);
        assert!(matches!(parse_idx_labels(&label_file(&[1, 10])), Err(Error::Parse { offset: 9, .. })));
    }

    #[test]
    fn one_hot_rows() {
        let m = one_hot(&[3, 0, 9], 10).unwrap();
        assert_eq!(m.row(0), &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        for i in 0..3 {
            assert_eq!(m.row(i).iter().sum::<f64>(), 1.0);
        }
        assert_eq!((0..3).map(|i| m.argmax_row(i)).collect::<Vec<_>>(), vec![3, 0, 9]);
        assert!(matches!(one_hot(&[10], 10), Err(Error::Label(_))));
    }

    #[test]
    fn loads_gzip_and_raw_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("t10k-images-idx3-ubyte"), image_file(2, 1, 1, &[0, 255])).unwrap();
        let mut gz = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        std::io::Write::write_all(&mut gz, &label_file(&[7, 1])).unwrap();
        std::fs::write(dir.path().join("t10k-labels-idx1-ubyte.gz"), gz.finish().unwrap()).unwrap();
        let ds = Dataset::load(dir.path(), Split::Test).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.label(0), 7);
        assert!(matches!(Dataset::load(dir.path(), Split::Train), Err(Error::Io { .. })));

        std::fs::write(dir.path().join("t10k-labels-idx1-ubyte"), label_file(&[1, 2, 3])).unwrap();
        assert!(matches!(Dataset::load(dir.path(), Split::Test), Err(Error::Parse { .. })));
    }

    #[test]
    fn batching_rules() {
        let ds = Dataset::synthetic(Split::Train).take(10);
        let sizes: Vec<usize> = ds.batches(4, None).map(|(x, _)| x.n()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let sizes: Vec<usize> = ds.batches(3, None).map(|(x, _)| x.n()).collect();
        assert_eq!(sizes, vec![3, 3, 3]);

        let plain = ds.batches(4, None).remaining_indices();
        assert_eq!(plain.concat(), (0..10).collect::<Vec<_>>());
        let a = ds.batches(4, Some((7, 0))).remaining_indices();
        let b = ds.batches(4, Some((7, 0))).remaining_indices();
        let c = ds.batches(4, Some((7, 1))).remaining_indices();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut all = a.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn synthetic_is_deterministic_and_valid() {
        let a = Dataset::synthetic(Split::Train);
        assert_eq!(a.len(), 160);
        assert_eq!(a.images, Dataset::synthetic(Split::Train).images);
        assert_ne!(a.images, Dataset::synthetic(Split::Test).images);
        assert!(a.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!((0..160).filter(|&i| a.label(i) == 4).count(), 16);
    }
}
