//! Versioned binary container for named parameter tensors.
//!
//! Layout (little endian):
//!
//! ```text
//! magic        8 bytes  "OSRKDCKP"
//! version      u32
//! kind         u32 length + UTF-8
//! meta         u32 length + UTF-8   (JSON architecture description)
//! fingerprint  u32 length + UTF-8
//! step         u64
//! elem_size    u8                   (4 = f32, 8 = f64)
//! count        u32
//! per tensor:  name (u32 length + UTF-8), frozen u8, ndim u32, dims u64 x ndim, data
//! ```

use std::path::Path;

use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"OSRKDCKP";

#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub kind: String,
    pub meta: String,
    pub fingerprint: String,
    pub step: u64,
    pub params: ParamSet<T>,
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend((s.len() as u32).to_le_bytes());
    buf.extend(s.as_bytes());
}

pub fn save_checkpoint<T: Float>(path: &Path, ck: &Checkpoint<T>) -> Result<()> {
    let elem = std::mem::size_of::<T>();
    let mut buf = Vec::with_capacity(64 + ck.params.num_scalars() * elem);
    buf.extend(MAGIC);
    buf.extend(CHECKPOINT_VERSION.to_le_bytes());
    put_str(&mut buf, &ck.kind);
    put_str(&mut buf, &ck.meta);
    put_str(&mut buf, &ck.fingerprint);
    buf.extend(ck.step.to_le_bytes());
    buf.push(elem as u8);
    buf.extend((ck.params.len() as u32).to_le_bytes());
    for p in ck.params.iter() {
        put_str(&mut buf, &p.name);
        buf.push(u8::from(p.frozen));
        buf.extend((p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            buf.extend((d as u64).to_le_bytes());
        }
        for &v in p.value.data() {
            match elem {
                4 => buf.extend((v.to_f64_lossy() as f32).to_le_bytes()),
                _ => buf.extend(v.to_f64_lossy().to_le_bytes()),
            }
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Parse("checkpoint is truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Parse("checkpoint string is not UTF-8".into()))
    }
}

/// Reads a checkpoint. With `expected_fingerprint`, a differing stored
/// fingerprint is an error.
pub fn load_checkpoint<T: Float>(path: &Path, expected_fingerprint: Option<&str>) -> Result<Checkpoint<T>> {
    if !path.is_file() {
        return Err(Error::NotFound(path.display().to_string()));
    }
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Parse(format!("{} is not a checkpoint", path.display())));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let kind = r.string()?;
    let meta = r.string()?;
    let fingerprint = r.string()?;
    if let Some(expected) = expected_fingerprint {
        if expected != fingerprint {
            return Err(Error::FingerprintMismatch {
                path: path.to_path_buf(),
                expected: expected.to_owned(),
                found: fingerprint,
            });
        }
    }
    let step = r.u64()?;
    let elem = r.u8()?;
    if elem != 4 && elem != 8 {
        return Err(Error::Parse(format!("unsupported element size {elem}")));
    }
    let count = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = r.string()?;
        let frozen = r.u8()? != 0;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n * elem as usize)?;
        let data: Vec<T> = if elem == 4 {
            raw.chunks_exact(4)
                .map(|b| T::from_f64_lossy(f64::from(f32::from_le_bytes(b.try_into().expect("4")))))
                .collect()
        } else {
            raw.chunks_exact(8).map(|b| T::from_f64_lossy(f64::from_le_bytes(b.try_into().expect("8")))).collect()
        };
        let t = Tensor::new(shape, data);
        if frozen {
            params.add_frozen(name, t);
        } else {
            params.add(name, t);
        }
    }
    if r.pos != buf.len() {
        return Err(Error::Parse("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint { kind, meta, fingerprint, step, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::ImageShape;
    use crate::networks::{build_classifier, Backbone, ClassifierNet, ClassifierSpec};
    use crate::rng::rng_from_seed;

    fn net() -> ClassifierNet<f32> {
        let spec = ClassifierSpec { shape: ImageShape::MNIST, known: 4, unknown: 3, backbone: Backbone::plain_small() };
        build_classifier(spec, &mut rng_from_seed(11)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        let n = net();
        n.save(&path, "abc", 17).unwrap();
        let (back, step) = ClassifierNet::<f32>::load(&path, Some("abc")).unwrap();
        assert_eq!(step, 17);
        let probe = Tensor::new([2, 1, 28, 28], (0..2 * 784).map(|i| (i % 7) as f32 / 7.0).collect());
        assert_eq!(n.forward_logits(&probe).unwrap(), back.forward_logits(&probe).unwrap());
        assert_eq!(back.params.flatten(), n.params.flatten());
    }

    #[test]
    fn fingerprint_and_corruption_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        net().save(&path, "abc", 0).unwrap();
        let err = ClassifierNet::<f32>::load(&path, Some("xyz")).unwrap_err();
        assert!(matches!(err, Error::FingerprintMismatch { .. }));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(ClassifierNet::<f32>::load(&path, None), Err(Error::Parse(_))));

        std::fs::write(&path, b"garbage").unwrap();
        assert!(matches!(ClassifierNet::<f32>::load(&path, None), Err(Error::Parse(_))));
        let mut v2 = MAGIC.to_vec();
        v2.extend(2u32.to_le_bytes());
        std::fs::write(&path, v2).unwrap();
        assert!(matches!(ClassifierNet::<f32>::load(&path, None), Err(Error::UnsupportedVersion(2))));
    }
}
