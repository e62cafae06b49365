//! Datasets: MNIST-style IDX files, a synthetic moving-bar sequence task,
//! shuffled batching and one-hot label expansion.

use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Static samples, stored flat (`N × sample_len`, row-major `C × H × W`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<f64>,
    sample_shape: Vec<usize>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl Dataset {
    pub fn new(
        images: Vec<f64>,
        sample_shape: Vec<usize>,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        let sample_len: usize = sample_shape.iter().product();
        if labels.is_empty() {
            return Err(Error::Consistency("dataset is empty".into()));
        }
        if images.len() != labels.len() * sample_len {
            return Err(Error::Consistency(format!(
                "{} pixel values for {} samples of {sample_len}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(v) = images.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Consistency(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Consistency(format!(
                "label {l} outside [0, {n_classes})"
            )));
        }
        Ok(Self {
            images,
            sample_shape,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// The first `n` samples (all of them if `n` exceeds the size).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images[..n * self.sample_len()].to_vec(),
            sample_shape: self.sample_shape.clone(),
            labels: self.labels[..n].to_vec(),
            n_classes: self.n_classes,
        }
    }
}

/// Sequences of frames sharing one shape; one label per sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    sequences: Vec<Vec<Vec<f64>>>,
    frame_shape: Vec<usize>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl SequenceDataset {
    pub fn new(
        sequences: Vec<Vec<Vec<f64>>>,
        frame_shape: Vec<usize>,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        let frame_len: usize = frame_shape.iter().product();
        if sequences.is_empty() || sequences.len() != labels.len() {
            return Err(Error::Consistency(
                "sequence and label counts differ or are zero".into(),
            ));
        }
        for seq in &sequences {
            if seq.is_empty() || seq.iter().any(|f| f.len() != frame_len) {
                return Err(Error::Consistency(
                    "frames do not match the frame shape".into(),
                ));
            }
            if seq.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Consistency("frame value outside [0, 1]".into()));
            }
        }
        if labels.iter().any(|&l| l >= n_classes) {
            return Err(Error::Consistency("label out of range".into()));
        }
        Ok(Self {
            sequences,
            frame_shape,
            labels,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn frame_shape(&self) -> &[usize] {
        &self.frame_shape
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn frames(&self, i: usize) -> &[Vec<f64>] {
        &self.sequences[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Split off the last `n` sequences as a second dataset.
    pub fn split_tail(mut self, n: usize) -> Result<(Self, Self)> {
        let keep = self.len().saturating_sub(n);
        let tail_seq = self.sequences.split_off(keep);
        let tail_lab = self.labels.split_off(keep);
        let tail = Self::new(tail_seq, self.frame_shape.clone(), tail_lab, self.n_classes)?;
        let head = Self::new(
            self.sequences,
            self.frame_shape,
            self.labels,
            self.n_classes,
        )?;
        Ok((head, tail))
    }

    /// Each frame as a static sample with its sequence's label.
    pub fn flatten_frames(&self) -> Result<Dataset> {
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (seq, &l) in self.sequences.iter().zip(&self.labels) {
            for f in seq {
                images.extend_from_slice(f);
                labels.push(l);
            }
        }
        Dataset::new(images, self.frame_shape.clone(), labels, self.n_classes)
    }
}

// ---------------------------------------------------------------------------
// IDX

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| truncated("header"))
}

fn truncated(what: &str) -> Error {
    Error::Io(io::Error::new(
        io::ErrorKind::UnexpectedEof,
        format!("IDX file truncated in {what}"),
    ))
}

/// Parse an IDX image file: returns `(count, rows, cols, pixels / 255)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<f64>)> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_IMAGES {
        return Err(Error::Format(format!(
            "image file magic {magic:#010x}, expected {IDX_IMAGES:#010x}"
        )));
    }
    let n = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let body = &bytes[16..];
    let need = n * rows * cols;
    if body.len() < need {
        return Err(truncated("pixel data"));
    }
    Ok((
        n,
        rows,
        cols,
        body[..need].iter().map(|&b| f64::from(b) / 255.0).collect(),
    ))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0)?;
    if magic != IDX_LABELS {
        return Err(Error::Format(format!(
            "label file magic {magic:#010x}, expected {IDX_LABELS:#010x}"
        )));
    }
    let n = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(truncated("label data"));
    }
    Ok(body[..n].iter().map(|&b| b as usize).collect())
}

/// Load an IDX image/label pair. Images get shape `1 × H × W`; the class
/// count is the largest label plus one (at least 10 for digit files).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    if labels.len() != n {
        return Err(Error::Consistency(format!(
            "{n} images but {} labels",
            labels.len()
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Dataset::new(pixels, vec![1, rows, cols], labels, n_classes)
}

pub fn encode_idx_images(ds: &Dataset) -> Result<Vec<u8>> {
    let shape = ds.sample_shape();
    let (rows, cols) = match shape {
        [1, h, w] | [h, w] => (*h, *w),
        _ => {
            return Err(Error::Dimension(format!(
                "IDX images need 1×H×W samples, got {shape:?}"
            )))
        }
    };
    let mut out = Vec::with_capacity(16 + ds.images.len());
    for v in [IDX_IMAGES, ds.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(ds.images.iter().map(|&v| (v * 255.0).round() as u8));
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(
            u8::try_from(l).map_err(|_| Error::Format(format!("label {l} does not fit a byte")))?,
        );
    }
    Ok(out)
}

/// Write a dataset as an IDX pair; pixels are quantized to `k / 255`.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    fs::write(images_path, encode_idx_images(ds)?)?;
    fs::write(labels_path, encode_idx_labels(ds.labels())?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Synthetic moving bar

/// Vertical bars sweeping one column per frame across a `size × size` field.
/// Class 0 moves left, class 1 moves right. Frames have two event channels in
/// the style of a DVS sensor: channel 0 marks the bar's current column,
/// channel 1 the column it just left (empty on the first frame). Bar length,
/// vertical offset and start column are drawn per sample.
pub fn make_moving_bar(
    n_samples: usize,
    frames: usize,
    size: usize,
    seed: u64,
) -> Result<SequenceDataset> {
    if frames < 2 {
        return Err(Error::Contract(
            "moving bar needs at least two frames".into(),
        ));
    }
    if size < frames {
        return Err(Error::Contract(format!(
            "a {size}-pixel field cannot hold {frames} bar positions"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n_samples).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);
    let plane = size * size;
    let mut sequences = Vec::with_capacity(n_samples);
    for &label in &labels {
        let len = rng.random_range(size.div_ceil(2)..=size);
        let top = rng.random_range(0..=size - len);
        let start = if label == 1 {
            rng.random_range(0..=size - frames)
        } else {
            rng.random_range(frames - 1..size)
        };
        let column = |t: usize| if label == 1 { start + t } else { start - t };
        let mut seq = Vec::with_capacity(frames);
        for t in 0..frames {
            let mut f = vec![0.0; 2 * plane];
            for r in top..top + len {
                f[r * size + column(t)] = 1.0;
                if t > 0 {
                    f[plane + r * size + column(t - 1)] = 1.0;
                }
            }
            seq.push(f);
        }
        sequences.push(seq);
    }
    SequenceDataset::new(sequences, vec![2, size, size], labels, 2)
}

// ---------------------------------------------------------------------------
// Batching

/// One-hot target with class `c` occupying `[c·n_perclass, (c+1)·n_perclass)`.
pub fn expand_label(label: usize, n_classes: usize, n_perclass: usize) -> Vec<f64> {
    let mut y = vec![0.0; n_classes * n_perclass];
    y[label * n_perclass..(label + 1) * n_perclass].fill(1.0);
    y
}

/// Index order for one epoch: a seeded permutation, or identity without a seed.
pub fn epoch_order(n: usize, shuffle_seed: Option<u64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub targets: Vec<Vec<f64>>,
}

/// Batches of dataset indices with expanded targets; the last batch may be short.
pub fn batches(
    ds: &Dataset,
    batch_size: usize,
    shuffle_seed: Option<u64>,
    n_perclass: usize,
) -> Result<impl Iterator<Item = Batch> + '_> {
    if batch_size == 0 {
        return Err(Error::Contract("batch size must be at least 1".into()));
    }
    let order = epoch_order(ds.len(), shuffle_seed);
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    Ok(chunks.into_iter().map(move |indices| Batch {
        targets: indices
            .iter()
            .map(|&i| expand_label(ds.label(i), ds.n_classes(), n_perclass))
            .collect(),
        indices,
    }))
}
