//! IDX (MNIST family) and CIFAR-10 binary readers.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::{DatasetHandle, ImageShape, Label, LabeledImage};
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 2051;
const LABELS_MAGIC: u32 = 2049;

fn locate(dir: &Path, stem: &str) -> Result<PathBuf> {
    let plain = dir.join(stem);
    if plain.is_file() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{stem}.gz"));
    if gz.is_file() {
        return Ok(gz);
    }
    Err(Error::NotFound(format!("{} (or .gz)", plain.display())))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = BufReader::new(File::open(path)?);
    let mut buf = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file)
            .read_to_end(&mut buf)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    } else {
        let mut file = file;
        file.read_to_end(&mut buf)?;
    }
    Ok(buf)
}

fn be_u32(buf: &[u8], at: usize, path: &Path) -> Result<u32> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse(format!("{}: truncated header", path.display())))
}

/// Reads an IDX image file and its label file.
///
/// With `transposed`, each stored image is transposed back (EMNIST convention).
pub fn load_idx_pair(
    dir: &Path,
    images: &str,
    labels: &str,
    transposed: bool,
) -> Result<(Vec<LabeledImage>, ImageShape)> {
    let ipath = locate(dir, images)?;
    let lpath = locate(dir, labels)?;
    let ibuf = read_all(&ipath)?;
    let lbuf = read_all(&lpath)?;

    if be_u32(&ibuf, 0, &ipath)? != IMAGES_MAGIC {
        return Err(Error::Parse(format!("{}: bad magic number", ipath.display())));
    }
    if be_u32(&lbuf, 0, &lpath)? != LABELS_MAGIC {
        return Err(Error::Parse(format!("{}: bad magic number", lpath.display())));
    }
    let n = be_u32(&ibuf, 4, &ipath)? as usize;
    let rows = be_u32(&ibuf, 8, &ipath)? as usize;
    let cols = be_u32(&ibuf, 12, &ipath)? as usize;
    let nl = be_u32(&lbuf, 4, &lpath)? as usize;
    if n != nl {
        return Err(Error::Parse(format!("{n} images but {nl} labels")));
    }
    let pixels = &ibuf[16..];
    let labels = &lbuf[8..];
    if pixels.len() != n * rows * cols || labels.len() != n {
        return Err(Error::Parse(format!("{}: record count does not match header", ipath.display())));
    }
    let shape = ImageShape::new(1, rows, cols);
    let samples = pixels
        .chunks_exact(rows * cols)
        .zip(labels)
        .map(|(img, &label)| {
            let px = if transposed {
                (0..rows * cols).map(|i| img[(i % cols) * rows + i / cols]).collect::<Vec<u8>>()
            } else {
                img.to_vec()
            };
            LabeledImage {
                pixels: px.into_iter().map(|b| f32::from(b) / 255.0).collect(),
                label: Label::Class(usize::from(label)),
            }
        })
        .collect();
    Ok((samples, shape))
}

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

fn read_cifar_batch(path: &Path) -> Result<Vec<LabeledImage>> {
    let buf = read_all(path)?;
    if buf.len() % CIFAR_RECORD != 0 {
        return Err(Error::Parse(format!("{}: not a whole number of records", path.display())));
    }
    Ok(buf
        .chunks_exact(CIFAR_RECORD)
        .map(|r| LabeledImage {
            pixels: r[1..].iter().map(|&b| f32::from(b) / 255.0).collect(),
            label: Label::Class(usize::from(r[0])),
        })
        .collect())
}

/// CIFAR-10 "binary version" batches.
pub fn load_cifar10(dir: &Path) -> Result<DatasetHandle> {
    let mut train = Vec::new();
    for i in 1..=5 {
        train.extend(read_cifar_batch(&locate(dir, &format!("data_batch_{i}.bin"))?)?);
    }
    let test = read_cifar_batch(&locate(dir, "test_batch.bin")?)?;
    Ok(DatasetHandle { name: "cifar10".into(), shape: ImageShape::CIFAR, train, test })
}
