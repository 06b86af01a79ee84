use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Vector;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const CLASSES: usize = 10;

/// Images scaled to `[0, 1]` with their class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub images: Vec<Vector>,
    pub labels: Vec<usize>,
    pub rows: usize,
    pub cols: usize,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Pixels at or above one half become 1, the rest 0.
    pub fn binarized(&self) -> Self {
        let images = self
            .images
            .iter()
            .map(|im| im.iter().map(|&p| if p >= 0.5 { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            images,
            ..self.clone()
        }
    }

    /// Input vectors paired with one-hot targets.
    pub fn examples(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.images
            .iter()
            .zip(&self.labels)
            .map(|(im, &l)| (im.to_vec(), Vector::one_hot(CLASSES, l).into_inner()))
            .collect()
    }

    pub fn take(&self, count: usize) -> Self {
        let count = count.min(self.len());
        Self {
            images: self.images[..count].to_vec(),
            labels: self.labels[..count].to_vec(),
            rows: self.rows,
            cols: self.cols,
        }
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

fn header(path: &Path, bytes: &[u8], words: usize, magic: u32) -> Result<Vec<u32>> {
    let short = || Error::Truncated {
        path: path.to_path_buf(),
        detail: format!("{} bytes cannot hold a {}-byte header", bytes.len(), 4 * words),
    };
    if bytes.len() < 4 {
        return Err(short());
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
            expected: magic,
        });
    }
    if bytes.len() < 4 * words {
        return Err(short());
    }
    Ok((1..words).map(|i| be_u32(bytes, 4 * i)).collect())
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<ImageDataset> {
    let img = fs::read(images_path)?;
    let dims = header(images_path, &img, 4, IMAGE_MAGIC)?;
    let (count, rows, cols) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let area = rows * cols;
    let need = 16 + count * area;
    if img.len() < need {
        return Err(Error::Truncated {
            path: images_path.to_path_buf(),
            detail: format!("{count} images of {rows}x{cols} need {need} bytes, file has {}", img.len()),
        });
    }
    let lab = fs::read(labels_path)?;
    let ldims = header(labels_path, &lab, 2, LABEL_MAGIC)?;
    let lcount = ldims[0] as usize;
    if lab.len() < 8 + lcount {
        return Err(Error::Truncated {
            path: labels_path.to_path_buf(),
            detail: format!("{lcount} labels need {} bytes, file has {}", 8 + lcount, lab.len()),
        });
    }
    if lcount != count {
        return Err(Error::Inconsistent(format!(
            "{count} images in {} but {lcount} labels in {}",
            images_path.display(),
            labels_path.display()
        )));
    }
    let labels: Vec<usize> = lab[8..8 + count].iter().map(|&b| b as usize).collect();
    if let Some(bad) = labels.iter().find(|&&l| l >= CLASSES) {
        return Err(Error::Inconsistent(format!("label {bad} is not a digit class")));
    }
    let images = img[16..need]
        .chunks_exact(area.max(1))
        .take(count)
        .map(|px| px.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect();
    Ok(ImageDataset {
        images,
        labels,
        rows,
        cols,
    })
}

/// Writes raw 8-bit images and labels as an IDX pair.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    images: &[Vec<u8>],
    labels: &[u8],
    rows: usize,
    cols: usize,
) -> Result<()> {
    if images.len() != labels.len() {
        return Err(Error::Inconsistent(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    if let Some(bad) = images.iter().find(|im| im.len() != rows * cols) {
        return Err(Error::Shape(format!("image of {} pixels is not {rows}x{cols}", bad.len())));
    }
    let count = u32::try_from(images.len()).map_err(|_| Error::Config("too many images".into()))?;
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    for word in [IMAGE_MAGIC, count, rows as u32, cols as u32] {
        img.extend_from_slice(&word.to_be_bytes());
    }
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&count.to_be_bytes());
    lab.extend_from_slice(labels);
    fs::write(images_path, img)?;
    fs::write(labels_path, lab)?;
    Ok(())
}

/// Standard file names of a train/test IDX quartet under `dir`.
pub fn idx_paths(dir: &Path) -> [PathBuf; 4] {
    [
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three(dir: &Path) -> (PathBuf, PathBuf) {
        let (i, l) = (dir.join("img"), dir.join("lab"));
        let images = vec![vec![0u8, 255, 128, 1], vec![7u8; 4], vec![255u8; 4]];
        write_idx(&i, &l, &images, &[3, 0, 9], 2, 2).unwrap();
        (i, l)
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = three(dir.path());
        let ds = load_idx(&i, &l).unwrap();
        assert_eq!(ds.labels, vec![3, 0, 9]);
        assert_eq!(ds.images[0].as_slice(), &[0.0, 1.0, 128.0 / 255.0, 1.0 / 255.0]);
        assert_eq!((ds.rows, ds.cols), (2, 2));
        assert_eq!(ds.binarized().images[0].as_slice(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(ds.examples()[2].1[9], 1.0);
    }

    #[test]
    fn wrong_magic_names_the_value() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = three(dir.path());
        let err = load_idx(&l, &i).unwrap_err();
        assert!(matches!(err, Error::BadMagic { found: 2049, expected: 2051, .. }));
        assert!(err.to_string().contains("2049"));
    }

    #[test]
    fn truncated_and_mismatched() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = three(dir.path());
        let bytes = fs::read(&i).unwrap();
        let short = dir.path().join("short");
        fs::write(&short, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_idx(&short, &l), Err(Error::Truncated { .. })));
        fs::write(&short, &bytes[..6]).unwrap();
        assert!(matches!(load_idx(&short, &l), Err(Error::Truncated { .. })));

        let (i2, l2) = (dir.path().join("i2"), dir.path().join("l2"));
        write_idx(&i2, &l2, &[vec![0u8; 4]], &[1], 2, 2).unwrap();
        assert!(matches!(load_idx(&i, &l2), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn missing_file_is_io() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_idx(&dir.path().join("nope"), &dir.path().join("nope2")),
            Err(Error::Io(_))
        ));
    }
}
