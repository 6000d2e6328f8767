//! Dataset ingestion and synthesis: the IDX image/label format, a bundled
//! handwritten-digits corpus, deterministic synthetic corpora for fast
//! tests, stratified subsetting, and a small PGM reader.

use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use std::path::Path;

use crate::error::{AconvError, Result};
use crate::report::content_hash;
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// One (images, labels) pair: `x` is `[N,H,W,1]` scaled to `[0,1]`.
#[derive(Debug, Clone)]
pub struct IdxSplit {
    pub x: Tensor,
    pub y: Vec<usize>,
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .ok_or_else(|| {
            AconvError::DataFormat(format!(
                "{what} file ends at byte {} inside the header",
                bytes.len()
            ))
        })
        .map(|s| u32::from_be_bytes(s.try_into().unwrap()))
}

pub(crate) fn parse_idx_images(bytes: &[u8], what: &str) -> Result<Tensor> {
    let magic = be_u32(bytes, 0, what)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(AconvError::DataFormat(format!(
            "{what} file has magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x} (IDX images)"
        )));
    }
    let count = be_u32(bytes, 4, what)? as usize;
    let rows = be_u32(bytes, 8, what)? as usize;
    let cols = be_u32(bytes, 12, what)? as usize;
    if count == 0 || rows == 0 || cols == 0 {
        return Err(AconvError::DataFormat(format!(
            "{what} file declares a degenerate {count}x{rows}x{cols} image array"
        )));
    }
    let expected = count * rows * cols;
    let payload = &bytes[16..];
    if payload.len() != expected {
        return Err(AconvError::DataFormat(format!(
            "{what} file ends at byte {}, expected {} payload bytes after the 16-byte header",
            bytes.len(),
            expected
        )));
    }
    let data = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(&[count, rows, cols, 1], data)
}

pub(crate) fn parse_idx_labels(bytes: &[u8], what: &str) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, what)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(AconvError::DataFormat(format!(
            "{what} file has magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x} (IDX labels)"
        )));
    }
    let count = be_u32(bytes, 4, what)? as usize;
    let payload = &bytes[8..];
    if payload.len() != count {
        return Err(AconvError::DataFormat(format!(
            "{what} file ends at byte {}, expected {count} payload bytes after the 8-byte header",
            bytes.len()
        )));
    }
    Ok(payload.iter().map(|&b| b as usize).collect())
}

/// Loads one IDX images/labels pair from disk. Pixels are scaled by 1/255
/// into `[0,1]`; the image count must match the label count.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<IdxSplit> {
    let ib = std::fs::read(images.as_ref())?;
    let lb = std::fs::read(labels.as_ref())?;
    let x = parse_idx_images(&ib, "images")?;
    let y = parse_idx_labels(&lb, "labels")?;
    if x.shape()[0] != y.len() {
        return Err(AconvError::DataFormat(format!(
            "{} images but {} labels",
            x.shape()[0],
            y.len()
        )));
    }
    Ok(IdxSplit { x, y })
}

/// A train/test dataset with a fixed class count.
#[derive(Debug, Clone)]
pub struct DatasetBundle {
    pub name: String,
    pub train_x: Tensor,
    pub train_y: Vec<usize>,
    pub test_x: Tensor,
    pub test_y: Vec<usize>,
    pub class_count: usize,
}

impl DatasetBundle {
    /// Assembles a bundle from two loaded splits, checking that their item
    /// shapes agree. The class count is the largest label plus one.
    pub fn from_splits(name: impl Into<String>, train: IdxSplit, test: IdxSplit) -> Result<Self> {
        if train.x.shape()[1..] != test.x.shape()[1..] {
            return Err(AconvError::ShapeMismatch(format!(
                "train items {:?} differ from test items {:?}",
                &train.x.shape()[1..],
                &test.x.shape()[1..]
            )));
        }
        let class_count = train
            .y
            .iter()
            .chain(&test.y)
            .max()
            .copied()
            .map(|m| m + 1)
            .unwrap_or(0);
        if class_count < 2 {
            return Err(AconvError::InvalidArgument(format!(
                "a classification dataset needs at least 2 classes, found {class_count}"
            )));
        }
        Ok(Self {
            name: name.into(),
            train_x: train.x,
            train_y: train.y,
            test_x: test.x,
            test_y: test.y,
            class_count,
        })
    }

    /// Loads a bundle from four IDX files (train images/labels, test
    /// images/labels) — the layout MNIST-style corpora ship in.
    pub fn from_idx_files(
        name: impl Into<String>,
        train_images: impl AsRef<Path>,
        train_labels: impl AsRef<Path>,
        test_images: impl AsRef<Path>,
        test_labels: impl AsRef<Path>,
    ) -> Result<Self> {
        let train = load_idx(train_images, train_labels)?;
        let test = load_idx(test_images, test_labels)?;
        Self::from_splits(name, train, test)
    }

    /// The bundled handwritten-digits corpus: 1797 real 8×8 grayscale digit
    /// images (10 classes) with a fixed stratified 2:1 train/test split,
    /// stored in the repository as IDX files.
    pub fn builtin_digits() -> Result<Self> {
        const TRAIN_IMAGES: &[u8] = include_bytes!("../data/digits-train-images-idx3-ubyte");
        const TRAIN_LABELS: &[u8] = include_bytes!("../data/digits-train-labels-idx1-ubyte");
        const TEST_IMAGES: &[u8] = include_bytes!("../data/digits-test-images-idx3-ubyte");
        const TEST_LABELS: &[u8] = include_bytes!("../data/digits-test-labels-idx1-ubyte");
        let train = IdxSplit {
            x: parse_idx_images(TRAIN_IMAGES, "bundled train images")?,
            y: parse_idx_labels(TRAIN_LABELS, "bundled train labels")?,
        };
        let test = IdxSplit {
            x: parse_idx_images(TEST_IMAGES, "bundled test images")?,
            y: parse_idx_labels(TEST_LABELS, "bundled test labels")?,
        };
        Self::from_splits("digits", train, test)
    }

    /// (height, width, channels) of one item.
    pub fn image_dims(&self) -> (usize, usize, usize) {
        (self.train_x.shape()[1], self.train_x.shape()[2], self.train_x.shape()[3])
    }

    /// A stratified subset: per-class quotas split the requested counts as
    /// evenly as possible, clamped to what each class actually has, taking
    /// the first matches in original order. Deterministic by construction.
    pub fn subset(&self, train_count: usize, test_count: usize) -> DatasetBundle {
        let (tx, ty) = take_stratified(&self.train_x, &self.train_y, self.class_count, train_count);
        let (ex, ey) = take_stratified(&self.test_x, &self.test_y, self.class_count, test_count);
        DatasetBundle {
            name: self.name.clone(),
            train_x: tx,
            train_y: ty,
            test_x: ex,
            test_y: ey,
            class_count: self.class_count,
        }
    }

    /// Content hash of every pixel and label, for run manifests.
    pub fn fingerprint(&self) -> String {
        let tensor_bytes = |t: &Tensor| -> Vec<u8> {
            t.data().iter().flat_map(|v| v.to_le_bytes()).collect()
        };
        let label_bytes = |y: &[usize]| -> Vec<u8> {
            y.iter().flat_map(|v| (*v as u64).to_le_bytes()).collect()
        };
        content_hash(&[
            self.name.as_bytes().to_vec(),
            tensor_bytes(&self.train_x),
            label_bytes(&self.train_y),
            tensor_bytes(&self.test_x),
            label_bytes(&self.test_y),
        ])
    }
}

fn take_stratified(x: &Tensor, y: &[usize], classes: usize, want: usize) -> (Tensor, Vec<usize>) {
    let item: usize = x.shape()[1..].iter().product();
    let base = want / classes;
    let rem = want % classes;
    let mut quota: Vec<usize> = (0..classes).map(|c| base + usize::from(c < rem)).collect();
    let mut picked = Vec::new();
    for (i, &cy) in y.iter().enumerate() {
        if cy < classes && quota[cy] > 0 {
            quota[cy] -= 1;
            picked.push(i);
        }
    }
    assert!(!picked.is_empty(), "subset of {want} items selected nothing");
    let mut data = Vec::with_capacity(picked.len() * item);
    let mut ny = Vec::with_capacity(picked.len());
    for &i in &picked {
        data.extend_from_slice(&x.data()[i * item..(i + 1) * item]);
        ny.push(y[i]);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = picked.len();
    (Tensor::new(&shape, data).expect("subset preserves item shape"), ny)
}

/// Families of deterministic synthetic two-class images.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Gaussian blobs whose radius depends on the class — structure at two
    /// spatial scales, so aperture learning is exercised.
    Blobs,
    /// Horizontal versus vertical stripes.
    Bars,
}

const SYNTH_SIDE: usize = 16;

/// Generates a two-class synthetic bundle: `n_per_class` training images per
/// class and `max(4, n_per_class/2)` test images per class, all values in
/// `[0,1]`, fully determined by the seed.
pub fn synth_dataset(kind: SynthKind, n_per_class: usize, seed: u64) -> DatasetBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_test = usize::max(4, n_per_class / 2);
    let (train_x, train_y) = synth_split(kind, n_per_class, &mut rng);
    let (test_x, test_y) = synth_split(kind, n_test, &mut rng);
    DatasetBundle {
        name: match kind {
            SynthKind::Blobs => "blobs".to_string(),
            SynthKind::Bars => "bars".to_string(),
        },
        train_x,
        train_y,
        test_x,
        test_y,
        class_count: 2,
    }
}

fn synth_split(kind: SynthKind, per_class: usize, rng: &mut ChaCha8Rng) -> (Tensor, Vec<usize>) {
    assert!(per_class > 0, "synthetic split needs at least one item per class");
    let mut data = Vec::with_capacity(per_class * 2 * SYNTH_SIDE * SYNTH_SIDE);
    let mut ys = Vec::with_capacity(per_class * 2);
    for _ in 0..per_class {
        for class in 0..2usize {
            let img = match kind {
                SynthKind::Blobs => blob_image(class, rng),
                SynthKind::Bars => bars_image(class, rng),
            };
            data.extend_from_slice(&img);
            ys.push(class);
        }
    }
    let x = Tensor::new(&[per_class * 2, SYNTH_SIDE, SYNTH_SIDE, 1], data)
        .expect("synthetic split shape");
    (x, ys)
}

fn blob_image(class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let radius = if class == 0 { 1.6 } else { 3.6 };
    let half = SYNTH_SIDE as i64 / 2;
    let cx = half + rng.gen_range(-2i64..=2);
    let cy = half + rng.gen_range(-2i64..=2);
    let mut img = vec![0.0; SYNTH_SIDE * SYNTH_SIDE];
    for (p, v) in img.iter_mut().enumerate() {
        let (i, j) = ((p / SYNTH_SIDE) as i64, (p % SYNTH_SIDE) as i64);
        let d2 = ((i - cy) * (i - cy) + (j - cx) * (j - cx)) as f64;
        *v = 0.9 * (-d2 / (2.0 * radius * radius)).exp();
    }
    img
}

fn bars_image(class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut img = vec![0.0; SYNTH_SIDE * SYNTH_SIDE];
    for _ in 0..3 {
        let line = rng.gen_range(0..SYNTH_SIDE);
        for t in 0..SYNTH_SIDE {
            let p = if class == 0 { line * SYNTH_SIDE + t } else { t * SYNTH_SIDE + line };
            img[p] = 0.8;
        }
    }
    img
}

/// Reads a grayscale PGM image (binary `P5` or ASCII `P2`, 8-bit depth) as
/// an `[H,W]` tensor scaled to `[0,1]`.
pub fn load_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = std::fs::read(path.as_ref())?;

    fn next_token(b: &[u8], mut pos: usize) -> Result<(String, usize)> {
        loop {
            while pos < b.len() && b[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < b.len() && b[pos] == b'#' {
                while pos < b.len() && b[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < b.len() && !b[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(AconvError::DataFormat("PGM header ended early".into()));
        }
        Ok((String::from_utf8_lossy(&b[start..pos]).into_owned(), pos))
    }

    fn parse_dim(tok: &str, what: &str) -> Result<usize> {
        tok.parse::<usize>()
            .map_err(|_| AconvError::DataFormat(format!("PGM {what} {tok:?} is not a number")))
    }

    let (magic, pos) = next_token(&bytes, 0)?;
    if magic != "P5" && magic != "P2" {
        return Err(AconvError::DataFormat(format!(
            "PGM magic {magic:?} is neither P5 (binary) nor P2 (ASCII)"
        )));
    }
    let (wtok, pos) = next_token(&bytes, pos)?;
    let (htok, pos) = next_token(&bytes, pos)?;
    let (mtok, pos) = next_token(&bytes, pos)?;
    let w = parse_dim(&wtok, "width")?;
    let h = parse_dim(&htok, "height")?;
    let maxval = parse_dim(&mtok, "maxval")?;
    if w == 0 || h == 0 {
        return Err(AconvError::DataFormat(format!("PGM declares a degenerate {w}x{h} image")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(AconvError::DataFormat(format!(
            "PGM maxval {maxval} unsupported (8-bit only)"
        )));
    }

    let data: Vec<f64> = if magic == "P5" {
        // A single whitespace byte separates the header from the raster.
        let start = pos + 1;
        let raster = bytes.get(start..start + w * h).ok_or_else(|| {
            AconvError::DataFormat(format!(
                "PGM raster ends at byte {}, expected {} pixels",
                bytes.len(),
                w * h
            ))
        })?;
        raster.iter().map(|&b| b as f64 / maxval as f64).collect()
    } else {
        let mut vals = Vec::with_capacity(w * h);
        let mut cur = pos;
        for _ in 0..w * h {
            let (tok, next) = next_token(&bytes, cur)?;
            let v = parse_dim(&tok, "pixel")?;
            if v > maxval {
                return Err(AconvError::DataFormat(format!(
                    "PGM pixel value {v} exceeds maxval {maxval}"
                )));
            }
            vals.push(v as f64 / maxval as f64);
            cur = next;
        }
        vals
    };
    Tensor::new(&[h, w], data)
}
