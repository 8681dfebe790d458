//! Reader for the big-endian IDX pair format used by the MNIST
//! distribution: an image file with magic 0x00000803 and a label file
//! with magic 0x00000801.

use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::{from_f64, Scalar};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    let slice = bytes.get(offset..end).ok_or_else(|| {
        Error::ingest(format!(
            "{}: truncated header, expected 4 bytes at offset {offset}, file has {}",
            path.display(),
            bytes.len()
        ))
    })?;
    Ok(u32::from_be_bytes(slice.try_into().expect("slice of length 4")))
}

/// Load an IDX image/label file pair into a dataset. Pixel bytes are
/// scaled to [0, 1] and flattened row-major; the label range must be
/// fully covered.
pub fn load_idx<F: Scalar>(images_path: &Path, labels_path: &Path) -> Result<Dataset<F>> {
    let images = std::fs::read(images_path)
        .map_err(|e| Error::ingest(format!("{}: {e}", images_path.display())))?;
    let labels = std::fs::read(labels_path)
        .map_err(|e| Error::ingest(format!("{}: {e}", labels_path.display())))?;

    let magic = read_be_u32(&images, 0, images_path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::ingest(format!(
            "{}: bad magic 0x{magic:08x} at offset 0, expected 0x{IMAGE_MAGIC:08x}",
            images_path.display()
        )));
    }
    let n_images = read_be_u32(&images, 4, images_path)? as usize;
    let rows = read_be_u32(&images, 8, images_path)? as usize;
    let cols = read_be_u32(&images, 12, images_path)? as usize;
    let input_dim = rows * cols;
    if input_dim == 0 || n_images == 0 {
        return Err(Error::ingest(format!(
            "{}: empty image file (count {n_images}, {rows}x{cols})",
            images_path.display()
        )));
    }
    let expected = 16 + n_images * input_dim;
    if images.len() != expected {
        return Err(Error::ingest(format!(
            "{}: expected {expected} bytes for {n_images} images of {rows}x{cols}, found {}",
            images_path.display(),
            images.len()
        )));
    }

    let magic = read_be_u32(&labels, 0, labels_path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::ingest(format!(
            "{}: bad magic 0x{magic:08x} at offset 0, expected 0x{LABEL_MAGIC:08x}",
            labels_path.display()
        )));
    }
    let n_labels = read_be_u32(&labels, 4, labels_path)? as usize;
    if labels.len() != 8 + n_labels {
        return Err(Error::ingest(format!(
            "{}: expected {} bytes for {n_labels} labels, found {}",
            labels_path.display(),
            8 + n_labels,
            labels.len()
        )));
    }
    if n_images != n_labels {
        return Err(Error::ingest(format!(
            "count mismatch: {} has {n_images} images but {} has {n_labels} labels",
            images_path.display(),
            labels_path.display()
        )));
    }

    let scale = 1.0 / 255.0;
    let mut examples = Vec::with_capacity(n_images);
    for i in 0..n_images {
        let start = 16 + i * input_dim;
        let x: Vec<F> = images[start..start + input_dim]
            .iter()
            .map(|&b| from_f64::<F>(b as f64 * scale))
            .collect();
        examples.push((x, labels[8 + i] as usize));
    }
    let n_classes = examples.iter().map(|(_, y)| y + 1).max().unwrap_or(0);
    Dataset::new(examples, n_classes, input_dim)
        .map_err(|e| Error::ingest(format!("{}: {e}", images_path.display())))
}
