//! Binary dataset files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic      b"GLKD"
//! version    u16 (= 1)
//! kind       u8   0 = vision, 1 = token classification, 2 = token language model
//! n          u64  number of items
//! dims       vision: channels u32, height u32, width u32
//!            tokens: seq_len u32, vocab u32
//! labels     u32  label-count: number of classes (0 for language-model data)
//! payload    vision: n·C·H·W f64 pixels, then n u32 labels
//!            tokens: n·L u32 token ids, then n u32 labels when label-count > 0
//! crc        u32  CRC-32 of the payload bytes
//! ```
//!
//! Item ids are not stored; loading numbers items `0..n`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::text::{TokenDataset, TokenTask};
use super::vision::{ImageShape, VisionDataset};
use super::Dataset;
use crate::error::{Error, Result};
use crate::model::Example;

pub const DATASET_MAGIC: &[u8; 4] = b"GLKD";
pub const DATASET_VERSION: u16 = 1;

const KIND_VISION: u8 = 0;
const KIND_TOKEN_CLS: u8 = 1;
const KIND_TOKEN_LM: u8 = 2;

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} does not fit in u32")))
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let mut header = Vec::new();
    let mut payload = Vec::new();
    header.extend_from_slice(DATASET_MAGIC);
    header.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    match ds {
        Dataset::Vision(v) => {
            header.push(KIND_VISION);
            header.extend_from_slice(&(v.len() as u64).to_le_bytes());
            for d in [v.shape.channels, v.shape.height, v.shape.width] {
                header.extend_from_slice(&to_u32(d, "dimension")?.to_le_bytes());
            }
            header.extend_from_slice(&to_u32(v.class_count, "class count")?.to_le_bytes());
            for e in &v.items {
                let px = e
                    .input
                    .pixels()
                    .filter(|p| p.len() == v.shape.len())
                    .ok_or_else(|| Error::Shape(format!("item {} does not match the image shape", e.id)))?;
                px.iter().for_each(|p| payload.extend_from_slice(&p.to_le_bytes()));
            }
            for e in &v.items {
                let l = e.label.ok_or_else(|| Error::Shape(format!("item {} lacks a label", e.id)))?;
                payload.extend_from_slice(&to_u32(l, "label")?.to_le_bytes());
            }
        }
        Dataset::Tokens(t) => {
            let (kind, classes) = match t.task {
                TokenTask::Classification { classes } => (KIND_TOKEN_CLS, classes),
                TokenTask::LanguageModel => (KIND_TOKEN_LM, 0),
            };
            header.push(kind);
            header.extend_from_slice(&(t.len() as u64).to_le_bytes());
            header.extend_from_slice(&to_u32(t.seq_len, "sequence length")?.to_le_bytes());
            header.extend_from_slice(&to_u32(t.vocab, "vocab")?.to_le_bytes());
            header.extend_from_slice(&to_u32(classes, "class count")?.to_le_bytes());
            for e in &t.items {
                let ids = e
                    .input
                    .tokens()
                    .filter(|s| s.len() == t.seq_len)
                    .ok_or_else(|| Error::Shape(format!("item {} does not match the sequence length", e.id)))?;
                ids.iter().for_each(|v| payload.extend_from_slice(&v.to_le_bytes()));
            }
            if classes > 0 {
                for e in &t.items {
                    let l = e.label.ok_or_else(|| Error::Shape(format!("item {} lacks a label", e.id)))?;
                    payload.extend_from_slice(&to_u32(l, "label")?.to_le_bytes());
                }
            }
        }
    }
    let crc = crc32fast::hash(&payload);
    header.extend_from_slice(&payload);
    header.extend_from_slice(&crc.to_le_bytes());
    Ok(header)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format("dataset file is truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != DATASET_MAGIC {
        return Err(Error::Format("bad magic: not a dataset file".into()));
    }
    let version = c.u16()?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let kind = c.u8()?;
    let n = usize::try_from(c.u64()?).map_err(|_| Error::Format("item count overflows".into()))?;
    let ds = match kind {
        KIND_VISION => {
            let shape = ImageShape::new(c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
            let classes = c.u32()? as usize;
            let expected = n
                .checked_mul(shape.len())
                .and_then(|p| p.checked_mul(8))
                .and_then(|p| p.checked_add(n * 4 + 4))
                .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
            check_remaining(&c, expected)?;
            let payload_start = c.pos;
            let mut pixels = Vec::with_capacity(n);
            for _ in 0..n {
                let px: Vec<f64> = (0..shape.len()).map(|_| c.f64()).collect::<Result<_>>()?;
                if px.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Format("pixel outside [0, 1]".into()));
                }
                pixels.push(px);
            }
            let labels = read_labels(&mut c, n, classes)?;
            verify_crc(&mut c, payload_start)?;
            Dataset::Vision(VisionDataset {
                items: pixels
                    .into_iter()
                    .zip(labels)
                    .enumerate()
                    .map(|(i, (p, l))| Example::image(i as u64, p, l))
                    .collect(),
                class_count: classes,
                shape,
                provenance: None,
            })
        }
        KIND_TOKEN_CLS | KIND_TOKEN_LM => {
            let seq_len = c.u32()? as usize;
            let vocab = c.u32()? as usize;
            let classes = c.u32()? as usize;
            let task = match (kind, classes) {
                (KIND_TOKEN_LM, 0) => TokenTask::LanguageModel,
                (KIND_TOKEN_CLS, k) if k > 0 => TokenTask::Classification { classes: k },
                _ => return Err(Error::Format("label count inconsistent with dataset kind".into())),
            };
            let label_bytes = if classes > 0 { n * 4 } else { 0 };
            let expected = n
                .checked_mul(seq_len)
                .and_then(|p| p.checked_mul(4))
                .and_then(|p| p.checked_add(label_bytes + 4))
                .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
            check_remaining(&c, expected)?;
            let payload_start = c.pos;
            let mut seqs = Vec::with_capacity(n);
            for _ in 0..n {
                let s: Vec<u32> = (0..seq_len).map(|_| c.u32()).collect::<Result<_>>()?;
                if s.iter().any(|&t| t as usize >= vocab) {
                    return Err(Error::Format("token id outside vocab".into()));
                }
                seqs.push(s);
            }
            let labels: Vec<Option<usize>> = if classes > 0 {
                read_labels(&mut c, n, classes)?.into_iter().map(Some).collect()
            } else {
                vec![None; n]
            };
            verify_crc(&mut c, payload_start)?;
            Dataset::Tokens(TokenDataset {
                items: seqs
                    .into_iter()
                    .zip(labels)
                    .enumerate()
                    .map(|(i, (s, l))| Example::text(i as u64, s, l))
                    .collect(),
                vocab,
                seq_len,
                task,
                provenance: None,
            })
        }
        k => return Err(Error::Format(format!("unknown dataset kind {k}"))),
    };
    Ok(ds)
}

fn check_remaining(c: &Cursor<'_>, expected: usize) -> Result<()> {
    let remaining = c.buf.len() - c.pos;
    if remaining < expected {
        return Err(Error::Format("dataset file is truncated".into()));
    }
    if remaining > expected {
        return Err(Error::Format("trailing bytes after dataset payload".into()));
    }
    Ok(())
}

fn read_labels(c: &mut Cursor<'_>, n: usize, classes: usize) -> Result<Vec<usize>> {
    (0..n)
        .map(|_| {
            let l = c.u32()? as usize;
            if l >= classes {
                return Err(Error::Format(format!("label {l} outside {classes} classes")));
            }
            Ok(l)
        })
        .collect()
}

fn verify_crc(c: &mut Cursor<'_>, payload_start: usize) -> Result<()> {
    let actual = crc32fast::hash(&c.buf[payload_start..c.pos]);
    let stored = c.u32()?;
    if actual != stored {
        return Err(Error::Format(format!(
            "payload checksum mismatch (stored {stored:08x}, computed {actual:08x})"
        )));
    }
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_text, gen_synthetic_vision};

    fn vision() -> Dataset {
        Dataset::Vision(gen_synthetic_vision(4, 10, ImageShape::new(3, 4, 4), 1).unwrap())
    }

    fn strip(ds: Dataset) -> Dataset {
        match ds {
            Dataset::Vision(mut v) => {
                v.provenance = None;
                Dataset::Vision(v)
            }
            Dataset::Tokens(mut t) => {
                t.provenance = None;
                Dataset::Tokens(t)
            }
        }
    }

    #[test]
    fn round_trips() {
        let lm = Dataset::Tokens(gen_synthetic_text(16, 5, 7, TokenTask::LanguageModel, 2).unwrap());
        let cls = Dataset::Tokens(gen_synthetic_text(16, 5, 7, TokenTask::Classification { classes: 2 }, 2).unwrap());
        for ds in [vision(), lm, cls] {
            let back = decode_dataset(&encode_dataset(&ds).unwrap()).unwrap();
            assert_eq!(back, strip(ds));
        }
    }

    #[test]
    fn truncation_is_an_error() {
        let bytes = encode_dataset(&vision()).unwrap();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode_dataset(&bytes[..cut]), Err(Error::Format(_))));
        }
    }

    #[test]
    fn bad_magic_and_checksum() {
        let mut bytes = encode_dataset(&vision()).unwrap();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(decode_dataset(&wrong).is_err());
        // flip a low mantissa bit of the first pixel
        let payload = 4 + 2 + 1 + 8 + 12 + 4;
        bytes[payload] ^= 1;
        let err = decode_dataset(&bytes).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }
}
