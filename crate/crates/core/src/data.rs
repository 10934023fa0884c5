//! IDX image/label loading, class filtering, splits and downsampling.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::SplitMix64;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Images `[N, H, W]` in `[0, 1]` with one integer label each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    pub name: String,
    images: Tensor,
    labels: Vec<u8>,
}

impl LabeledImageSet {
    pub fn new(name: impl Into<String>, images: Tensor, labels: Vec<u8>) -> Result<Self> {
        match images.shape() {
            [n, _, _] if *n == labels.len() => {}
            [n, _, _] => return Err(Error::shape(format!("{n} images but {} labels", labels.len()))),
            other => return Err(Error::shape(format!("images must be [N, H, W], got {other:?}"))),
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn height(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.images.shape()[2]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let cells = self.height() * self.width();
        &self.images.data()[i * cells..(i + 1) * cells]
    }

    pub fn image_tensor(&self, i: usize) -> Tensor {
        Tensor::new(vec![self.height(), self.width()], self.image(i).to_vec()).expect("image slice matches its shape")
    }

    /// New set holding the given samples, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let cells = self.height() * self.width();
        let mut data = Vec::with_capacity(indices.len() * cells);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Self {
            name: self.name.clone(),
            images: Tensor::new(vec![indices.len(), self.height(), self.width()], data).expect("selection shape"),
            labels,
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn u32(&mut self, field: &str) -> Result<u32> {
        let chunk = self.take(4, field)?;
        Ok(u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                field,
                format!(
                    "{} is truncated: needed {n} bytes at offset {}, {} left",
                    self.path.display(),
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_magic(r: &mut Reader, expected: u32, field: &str) -> Result<()> {
    let magic = r.u32(field)?;
    if magic != expected {
        return Err(Error::format(
            field,
            format!("{}: expected {expected:#010x}, found {magic:#010x}", r.path.display()),
        ));
    }
    Ok(())
}

/// Parse an IDX image file and its label file into an unfiltered set.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledImageSet> {
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;
    parse_idx(&image_bytes, images_path, &label_bytes, labels_path)
}

pub fn parse_idx(
    image_bytes: &[u8],
    images_path: &Path,
    label_bytes: &[u8],
    labels_path: &Path,
) -> Result<LabeledImageSet> {
    let mut img = Reader {
        bytes: image_bytes,
        pos: 0,
        path: images_path,
    };
    check_magic(&mut img, IMAGE_MAGIC, "image magic")?;
    let n = img.u32("image count")? as usize;
    let h = img.u32("image rows")? as usize;
    let w = img.u32("image cols")? as usize;
    if h == 0 || w == 0 {
        return Err(Error::format("image dims", format!("zero-sized {h}x{w} images")));
    }
    let pixels: Vec<f64> = img
        .take(n * h * w, "image pixels")?
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();

    let mut lab = Reader {
        bytes: label_bytes,
        pos: 0,
        path: labels_path,
    };
    check_magic(&mut lab, LABEL_MAGIC, "label magic")?;
    let n_labels = lab.u32("label count")? as usize;
    if n_labels != n {
        return Err(Error::format(
            "label count",
            format!("{n_labels} labels for {n} images"),
        ));
    }
    let labels = lab.take(n, "label values")?.to_vec();
    let name = images_path
        .parent()
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".to_string());
    LabeledImageSet::new(name, Tensor::new(vec![n, h, w], pixels)?, labels)
}

/// Standard IDX training-file paths inside `dir`.
pub fn train_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))
}

/// Keep samples with label `< k`, preserving order.
pub fn filter_first_k(set: &LabeledImageSet, k: u8) -> Result<LabeledImageSet> {
    if k < 2 {
        return Err(Error::config(format!("need at least two classes, got k={k}")));
    }
    let keep: Vec<usize> = (0..set.len()).filter(|&i| set.labels[i] < k).collect();
    if keep.is_empty() {
        return Err(Error::EmptyResult(format!(
            "no samples of {} have a label below {k}",
            set.name
        )));
    }
    Ok(set.select(&keep))
}

/// Seeded shuffle of the sample indices, split into train / validation.
pub fn split_indices(n: usize, n_train: usize, n_val: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_train + n_val > n {
        return Err(Error::InsufficientSamples {
            needed: n_train + n_val,
            available: n,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut idx);
    let val = idx[n_train..n_train + n_val].to_vec();
    idx.truncate(n_train);
    Ok((idx, val))
}

pub fn take_split(
    set: &LabeledImageSet,
    n_train: usize,
    n_val: usize,
    seed: u64,
) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let (train, val) = split_indices(set.len(), n_train, n_val, seed)?;
    Ok((set.select(&train), set.select(&val)))
}

/// 2×2 average pooling of every image.
pub fn downsample2x(set: &LabeledImageSet) -> Result<LabeledImageSet> {
    let (h, w) = (set.height(), set.width());
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("cannot halve odd {h}x{w} images")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(set.len() * oh * ow);
    for i in 0..set.len() {
        let img = set.image(i);
        for y in 0..oh {
            for x in 0..ow {
                let (r0, r1) = (2 * y * w + 2 * x, (2 * y + 1) * w + 2 * x);
                out.push((img[r0] + img[r0 + 1] + img[r1] + img[r1 + 1]) / 4.0);
            }
        }
    }
    LabeledImageSet::new(
        set.name.clone(),
        Tensor::new(vec![set.len(), oh, ow], out)?,
        set.labels.clone(),
    )
}

/// Serialise a set back to IDX bytes (pixels rounded to u8).
pub fn to_idx_bytes(set: &LabeledImageSet) -> (Vec<u8>, Vec<u8>) {
    let mut images = Vec::with_capacity(16 + set.images.len());
    images.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [set.len(), set.height(), set.width()] {
        images.extend_from_slice(&(d as u32).to_be_bytes());
    }
    images.extend(
        set.images
            .data()
            .iter()
            .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut labels = Vec::with_capacity(8 + set.len());
    labels.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(set.len() as u32).to_be_bytes());
    labels.extend_from_slice(&set.labels);
    (images, labels)
}
