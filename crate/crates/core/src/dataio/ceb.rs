//! CEB v1: little-endian embedding bundle.
//!
//! ```text
//! 0..4    magic "CEB1"
//! 4       version (1)
//! 5..9    sample count, u32
//! 9..21   d_a, d_v, d_av, u32 each
//! then per sample:
//!         id length u16, UTF-8 id bytes
//!         label u8 (0 authentic, 1 manipulated)
//!         presence mask u8 (bit0 a, bit1 v, bit2 av)
//!         d_m f32 values for each present modality in (a, v, av) order
//! last 8  CRC-64/XZ of all preceding bytes, u64
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Dims, EmbeddingBundle, Label, ModalityKind, Sample};
use crate::checksum::crc64;
use crate::error::{Error, FormatError, FormatErrorKind as Kind, Result};

pub const MAGIC: &[u8; 4] = b"CEB1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 21;
pub const TRAILER_LEN: usize = 8;

pub fn encode_bundle(bundle: &EmbeddingBundle) -> Result<Vec<u8>> {
    bundle.validate()?;
    let count = u32::try_from(bundle.samples.len())
        .map_err(|_| Error::contract("too many samples for CEB v1"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + TRAILER_LEN);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&count.to_le_bytes());
    for d in bundle.dims.as_array() {
        let d = u32::try_from(d).map_err(|_| Error::contract("dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for s in &bundle.samples {
        let id = s.id.as_bytes();
        let id_len = u16::try_from(id.len())
            .map_err(|_| Error::contract(format!("sample id {:?} longer than 65535 bytes", s.id)))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        out.push(s.label.as_u8());
        out.push(s.presence_mask());
        for m in ModalityKind::ALL {
            if let Some(z) = s.embedding(m) {
                for v in z {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    let crc = crc64(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_bundle(bundle: &EmbeddingBundle, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_bundle(bundle)?;
    write_atomic(path.as_ref(), &bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<EmbeddingBundle> {
    let bytes = fs::read(path)?;
    Ok(decode_bundle(&bytes)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    end: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        if self.end - self.pos < n {
            return Err(FormatError::new(
                Kind::Truncated,
                self.pos,
                format!("need {n} bytes for {what}, {} left", self.end - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, FormatError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_bundle(bytes: &[u8]) -> Result<EmbeddingBundle, FormatError> {
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        let found = &bytes[..bytes.len().min(4)];
        return Err(FormatError::new(
            Kind::BadMagic,
            0,
            format!("expected \"CEB1\", found {:?}", String::from_utf8_lossy(found)),
        ));
    }
    // The trailer is excluded from the parse window so running into it reads as truncation.
    let end = bytes.len().saturating_sub(TRAILER_LEN).max(4);
    let mut cur = Cursor {
        bytes,
        pos: 4,
        end,
    };
    let version = cur.u8("version")?;
    if version != VERSION {
        return Err(FormatError::new(
            Kind::UnsupportedVersion,
            4,
            format!("version {version}, only {VERSION} is supported"),
        ));
    }
    let count = cur.u32("sample count")? as usize;
    let dims = Dims::new(
        cur.u32("d_a")? as usize,
        cur.u32("d_v")? as usize,
        cur.u32("d_av")? as usize,
    );

    let mut samples = Vec::with_capacity(count.min(1 << 20));
    let mut ids = HashSet::with_capacity(count.min(1 << 20));
    for index in 0..count {
        let start = cur.pos;
        let id_len = cur.u16("id length")? as usize;
        let id_off = cur.pos;
        let id = std::str::from_utf8(cur.take(id_len, "sample id")?)
            .map_err(|e| FormatError::new(Kind::InvalidUtf8, id_off, e.to_string()))?
            .to_owned();
        if !ids.insert(id.clone()) {
            return Err(FormatError::new(
                Kind::DuplicateId,
                start,
                format!("sample {index} repeats id {id:?}"),
            ));
        }
        let label_off = cur.pos;
        let raw_label = cur.u8("label")?;
        let label = Label::from_u8(raw_label).ok_or_else(|| {
            FormatError::new(Kind::BadLabel, label_off, format!("label {raw_label}"))
        })?;
        let mask_off = cur.pos;
        let mask = cur.u8("presence mask")?;
        if mask == 0 || mask & !0b111 != 0 {
            return Err(FormatError::new(
                Kind::BadPresenceMask,
                mask_off,
                format!("presence mask {mask:#010b} for sample {id:?}"),
            ));
        }
        let mut embeddings: [Option<Vec<f32>>; 3] = [None, None, None];
        for m in ModalityKind::ALL {
            if mask & (1 << m.index()) == 0 {
                continue;
            }
            let d = dims.get(m);
            if d == 0 {
                return Err(FormatError::new(
                    Kind::DimMismatch,
                    mask_off,
                    format!("sample {id:?} marks {m} present but d_{} = 0", m.short_name()),
                ));
            }
            let raw = cur.take(4 * d, "embedding values")?;
            embeddings[m.index()] = Some(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            );
        }
        samples.push(Sample {
            id,
            label,
            embeddings,
        });
    }

    if bytes.len() < cur.pos + TRAILER_LEN {
        return Err(FormatError::new(
            Kind::Truncated,
            cur.pos,
            "missing CRC trailer",
        ));
    }
    if bytes.len() > cur.pos + TRAILER_LEN {
        return Err(FormatError::new(
            Kind::TrailingBytes,
            cur.pos,
            format!("{} bytes after the last sample", bytes.len() - cur.pos),
        ));
    }
    let stored = u64::from_le_bytes(bytes[cur.pos..].try_into().expect("8-byte trailer"));
    let computed = crc64(&bytes[..cur.pos]);
    if stored != computed {
        return Err(FormatError::new(
            Kind::BadChecksum,
            cur.pos,
            format!("stored CRC {stored:#018x}, computed {computed:#018x}"),
        ));
    }
    Ok(EmbeddingBundle {
        dims,
        samples,
        provenance: String::new(),
    })
}
