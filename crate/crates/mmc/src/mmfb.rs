//! The MMFB feature-bank format.
//!
//! ```text
//! "MMFB"                       magic, 4 bytes
//! u32 version = 1
//! u32 feature_dim
//! u32 num_classes
//! per class:
//!   u32 class_id
//!   u32 num_examples
//!   num_examples * feature_dim f32 values
//! ```
//!
//! All integers and floats are little-endian. An optional sidecar
//! `<file>.meta.json` maps class ids to names.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use mmc_core::numerics::Array;
use mmc_core::problems::{ClassBank, ClassData, SplitTag};

pub const MAGIC: [u8; 4] = *b"MMFB";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum MmfbError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed feature bank at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("class {class_id}: value {value} is not exactly representable as f32")]
    Precision { class_id: u32, value: f64 },
    #[error("{path}: {source}")]
    Sidecar { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Bank(#[from] mmc_core::Error),
}

pub type Result<T> = std::result::Result<T, MmfbError>;

fn format_err<T>(offset: usize, reason: impl Into<String>) -> Result<T> {
    Err(MmfbError::Format { offset, reason: reason.into() })
}

/// Serializes a bank. Fails if any value would change when narrowed to f32.
pub fn encode(bank: &ClassBank) -> Result<Vec<u8>> {
    let d = bank.feature_dim();
    let total: usize = bank.classes().iter().map(|c| 8 + 4 * d * c.examples.len()).sum();
    let mut out = Vec::with_capacity(16 + total);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(bank.num_classes() as u32).to_le_bytes());
    for class in bank.classes() {
        out.extend_from_slice(&class.class_id.to_le_bytes());
        out.extend_from_slice(&(class.examples.len() as u32).to_le_bytes());
        for x in &class.examples {
            for &v in x.data() {
                let narrow = v as f32;
                if narrow as f64 != v {
                    return Err(MmfbError::Precision { class_id: class.class_id, value: v });
                }
                out.extend_from_slice(&narrow.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return format_err(self.pos, format!("truncated while reading {}", what));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses an MMFB byte buffer into a bank tagged with `split`.
pub fn decode(bytes: &[u8], split: SplitTag) -> Result<ClassBank> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return format_err(0, "bad magic, expected \"MMFB\"");
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return format_err(4, format!("unsupported version {}", version));
    }
    let d = c.u32("feature_dim")? as usize;
    if d == 0 {
        return format_err(8, "feature_dim is 0");
    }
    let n = c.u32("num_classes")? as usize;
    let mut classes = Vec::with_capacity(n.min(1 << 16));
    let mut seen = BTreeMap::new();
    for _ in 0..n {
        let at = c.pos;
        let class_id = c.u32("class_id")?;
        if seen.insert(class_id, at).is_some() {
            return format_err(at, format!("duplicate class id {}", class_id));
        }
        let count = c.u32("num_examples")? as usize;
        if count == 0 {
            return format_err(at + 4, format!("class {} has no examples", class_id));
        }
        let mut examples = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let at = c.pos;
            let raw = c.take(4 * d, "feature values")?;
            let values: Vec<f64> =
                raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect();
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return format_err(at + 4 * i, "non-finite feature value");
            }
            examples.push(Array::vector(values));
        }
        classes.push(ClassData { class_id, examples });
    }
    if c.pos != bytes.len() {
        return format_err(c.pos, format!("{} trailing bytes", bytes.len() - c.pos));
    }
    Ok(ClassBank::new(d, classes, split)?)
}

pub fn save_feature_bank(bank: &ClassBank, path: &Path) -> Result<()> {
    let bytes = encode(bank)?;
    fs::write(path, bytes).map_err(|source| MmfbError::Io { path: path.to_path_buf(), source })
}

pub fn load_feature_bank(path: &Path, split: SplitTag) -> Result<ClassBank> {
    let bytes = fs::read(path).map_err(|source| MmfbError::Io { path: path.to_path_buf(), source })?;
    decode(&bytes, split)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Class names from the sidecar file, if there is one.
pub fn load_class_names(path: &Path) -> Result<Option<BTreeMap<u32, String>>> {
    let side = sidecar_path(path);
    match fs::read(&side) {
        Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|source| MmfbError::Sidecar { path: side, source }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(MmfbError::Io { path: side, source }),
    }
}

pub fn save_class_names(path: &Path, names: &BTreeMap<u32, String>) -> Result<()> {
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(names).expect("string map serializes");
    fs::write(&side, text).map_err(|source| MmfbError::Io { path: side, source })
}
