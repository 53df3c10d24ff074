//! The GZT tensor container.
//!
//! ```text
//! "GZT1"                      4 bytes
//! entry count                 u32 LE
//! per entry:
//!   name length               u16 LE
//!   name                      UTF-8
//!   dtype                     u8 (0 = f32)
//!   ndim                      u8
//!   dims                      ndim × u32 LE
//!   payload                   product(dims) × f32 LE, row-major
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"GZT1";
pub const DTYPE_F32: u8 = 0;

/// Serializes named tensors in the given order.
pub fn encode<'a>(entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<Vec<u8>> {
    let entries: Vec<(&str, &Tensor)> = entries.into_iter().collect();
    let mut seen = BTreeSet::new();
    let payload: usize = entries.iter().map(|(n, t)| n.len() + 4 * t.ndim() + 4 * t.numel() + 4).sum();
    let mut out = Vec::with_capacity(8 + payload);
    out.extend_from_slice(&MAGIC);
    let count = u32::try_from(entries.len()).map_err(|_| Error::Format("too many entries".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in entries {
        if !seen.insert(name) {
            return Err(Error::DuplicateName(name.to_string()));
        }
        let len = u16::try_from(name.len())
            .map_err(|_| Error::Format(format!("name of {} bytes exceeds u16", name.len())))?;
        let ndim = u8::try_from(t.ndim()).map_err(|_| Error::Format(format!("{name}: too many dims")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.push(ndim);
        for &d in t.dims() {
            let d = u32::try_from(d).map_err(|_| Error::Format(format!("{name}: extent exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, context: impl FnOnce() -> String) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(Error::Truncated {
                context: context(),
                needed: n - left,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, context: impl FnOnce() -> String) -> Result<u8> {
        Ok(self.take(1, context)?[0])
    }

    fn u16(&mut self, context: impl FnOnce() -> String) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, context)?.try_into().unwrap()))
    }

    fn u32(&mut self, context: impl FnOnce() -> String) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, context)?.try_into().unwrap()))
    }
}

/// Parses a container, preserving entry order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, || "magic".into())?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            found: magic.try_into().unwrap(),
        });
    }
    let count = r.u32(|| "entry count".into())? as usize;
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let len = r.u16(|| format!("entry {i} name length"))? as usize;
        let raw = r.take(len, || format!("entry {i} name"))?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| Error::Format(format!("entry {i} name is not UTF-8")))?
            .to_string();
        let dtype = r.u8(|| format!("{name} dtype"))?;
        if dtype != DTYPE_F32 {
            return Err(Error::UnsupportedDtype(dtype));
        }
        let ndim = r.u8(|| format!("{name} ndim"))? as usize;
        if ndim == 0 {
            return Err(Error::Format(format!("{name}: zero-dimensional entry")));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.u32(|| format!("{name} dims"))? as usize);
        }
        if dims.contains(&0) {
            return Err(Error::Format(format!("{name}: zero extent in {dims:?}")));
        }
        let numel = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("{name}: payload size overflows")))?;
        let payload = r.take(numel, || format!("{name} payload"))?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !seen.insert(name.clone()) {
            return Err(Error::DuplicateName(name));
        }
        let t = Tensor::new(&dims, data)?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn save_gzt<'a>(path: &Path, entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
    write_atomic(path, &encode(entries)?)
}

pub fn load_gzt(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
