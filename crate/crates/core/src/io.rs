//! On-disk formats: the "TL1T" binary tensor container, named-tensor
//! checkpoints and plain-text `key = value` files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TL1T";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u32 = 0;

/// Serialize as binary32; values are rounded to the nearest `f32`.
pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.reserve(4 * t.numel());
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.buf.len() {
            return Err(format!("truncated data at byte {} (wanted {n} more)", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn decode_tensor(c: &mut Cursor<'_>) -> std::result::Result<Tensor, String> {
    if c.take(4)? != MAGIC {
        return Err("bad magic bytes (expected TL1T)".into());
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let dtype = c.u32()?;
    if dtype != DTYPE_F32 {
        return Err(format!("unsupported dtype code {dtype}"));
    }
    let rank = c.u32()? as usize;
    if rank == 0 || rank > 8 {
        return Err(format!("implausible rank {rank}"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(usize::try_from(c.u64()?).map_err(|_| "dimension overflows usize".to_string())?);
    }
    let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("element count overflows")?;
    let bytes = c.take(numel.checked_mul(4).ok_or("payload size overflows")?)?;
    let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64).collect();
    Tensor::new(shape, data).map_err(|e| e.to_string())
}

pub fn tensor_from_bytes(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let t = decode_tensor(&mut c)?;
    if !c.done() {
        return Err(format!("{} trailing bytes after tensor", bytes.len() - c.pos));
    }
    Ok(t)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    encode_tensor(t, &mut buf);
    write_bytes(path, &buf)
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    tensor_from_bytes(&read_bytes(path)?).map_err(|r| Error::format(path, r))
}

/// Ordered `(u32 name length, UTF-8 name, TL1T tensor)` records.
pub fn encode_named(entries: &[(String, Tensor)]) -> Vec<u8> {
    let mut buf = Vec::new();
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        encode_tensor(t, &mut buf);
    }
    buf
}

pub fn decode_named(bytes: &[u8]) -> std::result::Result<Vec<(String, Tensor)>, String> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let mut out = Vec::new();
    while !c.done() {
        let len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| "tensor name is not UTF-8".to_string())?;
        let t = decode_tensor(&mut c).map_err(|e| format!("record '{name}': {e}"))?;
        out.push((name.to_string(), t));
    }
    Ok(out)
}

pub fn save_named(path: &Path, entries: &[(String, Tensor)]) -> Result<()> {
    write_bytes(path, &encode_named(entries))
}

pub fn load_named(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode_named(&read_bytes(path)?).map_err(|r| Error::format(path, r))
}

/// Parsed `key = value` text. Blank lines and `#` comments are ignored.
/// Consumers take the keys they know and then call [`KvMap::finish`], which
/// rejects anything left over.
#[derive(Clone, Debug, Default)]
pub struct KvMap {
    entries: BTreeMap<String, String>,
    origin: String,
}

impl KvMap {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut map = KvMap { entries: BTreeMap::new(), origin: origin.to_string() };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected `key = value`, got `{line}`", lineno + 1)))?;
            map.insert(k.trim(), v.trim())?;
        }
        Ok(map)
    }

    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>, origin: &str) -> Result<Self> {
        let mut map = KvMap { entries: BTreeMap::new(), origin: origin.to_string() };
        for (k, v) in pairs {
            map.insert(k, v)?;
        }
        Ok(map)
    }

    fn insert(&mut self, k: &str, v: &str) -> Result<()> {
        if k.is_empty() {
            return Err(Error::Config(format!("{}: empty key", self.origin)));
        }
        if self.entries.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("{}: duplicate key `{k}`", self.origin)));
        }
        Ok(())
    }

    /// Later values win.
    pub fn overlay(&mut self, other: KvMap) {
        self.entries.extend(other.entries);
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| Error::Config(format!("{}: cannot parse `{key} = {v}`", self.origin))),
        }
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T> {
        self.take(key)?.ok_or_else(|| Error::Config(format!("{}: missing key `{key}`", self.origin)))
    }

    /// Comma-separated list; an empty value is an empty list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) if v.trim().is_empty() => Ok(Some(Vec::new())),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("{}: cannot parse list `{key} = {v}`", self.origin))))
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    pub fn finish(self) -> Result<()> {
        if self.entries.is_empty() {
            return Ok(());
        }
        let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
        Err(Error::Config(format!("{}: unknown key(s): {}", self.origin, keys.join(", "))))
    }
}

/// Nine significant digits in scientific notation; non-finite values as `NaN`, `inf`, `-inf`.
pub fn fmt_sig(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8e}")
    } else {
        format!("{x}")
    }
}

pub fn join_list<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}
