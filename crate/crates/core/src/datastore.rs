//! On-disk episode datasets.
//!
//! A dataset is a directory holding `manifest.json` plus one binary file per
//! episode. The manifest is written last, so a directory without one is an
//! unfinished recording and readers refuse it.
//!
//! Episode file layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "SWMD"
//! version    u32      FORMAT_VERSION
//! key_count  u32
//! key_count × {
//!     name_len u16, name (UTF-8),
//!     dtype u8 (0 = u8, 1 = f32), per_step u8 (0/1), ndim u8,
//!     dims u64 × ndim, offset u64, nbytes u64
//! }
//! raw C-order array bytes, keys in name order
//! ```
//!
//! Per-step arrays have the episode length as their leading dimension;
//! static arrays (the goal) are stored once.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, Axis, IxDyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::variation::Assignment;

pub const MAGIC: &[u8; 4] = b"SWMD";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("dataset already exists at {0} (pass overwrite to replace it)")]
    NameCollision(PathBuf),
    #[error("no dataset at {0}")]
    NotFound(PathBuf),
    #[error("dataset at {0} was never finalized")]
    NotFinalized(PathBuf),
    #[error("key `{key}`: expected {expected}, got {got}")]
    Signature { key: String, expected: String, got: String },
    #[error("unknown key `{key}`; stored keys: {}", stored.join(", "))]
    UnknownKey { key: String, stored: Vec<String> },
    #[error("corrupt episode file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("invalid manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("episode index {index} out of range ({count} episodes)")]
    EpisodeIndex { index: usize, count: usize },
    #[error("invalid window spec: {0}")]
    WindowSpec(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    F32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::U8 => 0,
            DType::F32 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::U8),
            1 => Some(DType::F32),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::F32 => 4,
        }
    }
}

/// A dynamically shaped array of one of the stored dtypes.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    U8(ArrayD<u8>),
    F32(ArrayD<f32>),
}

impl ArrayData {
    pub fn dtype(&self) -> DType {
        match self {
            ArrayData::U8(_) => DType::U8,
            ArrayData::F32(_) => DType::F32,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            ArrayData::U8(a) => a.shape(),
            ArrayData::F32(a) => a.shape(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape().first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_u8(&self) -> Option<&ArrayD<u8>> {
        match self {
            ArrayData::U8(a) => Some(a),
            _ => None,
        }
    }

    pub fn as_f32(&self) -> Option<&ArrayD<f32>> {
        match self {
            ArrayData::F32(a) => Some(a),
            _ => None,
        }
    }

    /// C-order little-endian bytes.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            ArrayData::U8(a) => a.iter().copied().collect(),
            ArrayData::F32(a) => a.iter().flat_map(|v| v.to_le_bytes()).collect(),
        }
    }

    pub fn from_le_bytes(dtype: DType, shape: &[usize], bytes: &[u8]) -> Option<Self> {
        let n: usize = shape.iter().product();
        if bytes.len() != n * dtype.size() {
            return None;
        }
        let shape = IxDyn(shape);
        Some(match dtype {
            DType::U8 => ArrayData::U8(ArrayD::from_shape_vec(shape, bytes.to_vec()).ok()?),
            DType::F32 => {
                let v = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                ArrayData::F32(ArrayD::from_shape_vec(shape, v).ok()?)
            }
        })
    }

    /// Rows `start, start + stride, ...` (`count` of them) along axis 0.
    pub fn rows(&self, start: usize, count: usize, stride: usize) -> ArrayData {
        let idx: Vec<usize> = (0..count).map(|k| start + k * stride).collect();
        match self {
            ArrayData::U8(a) => ArrayData::U8(a.select(Axis(0), &idx)),
            ArrayData::F32(a) => ArrayData::F32(a.select(Axis(0), &idx)),
        }
    }

    /// Bit-level equality (distinguishes NaN payloads and signed zeros).
    pub fn bit_eq(&self, other: &ArrayData) -> bool {
        self.dtype() == other.dtype() && self.shape() == other.shape() && self.to_le_bytes() == other.to_le_bytes()
    }
}

/// One recorded episode: time-major arrays plus per-episode constants.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeRecord {
    pub steps: BTreeMap<String, ArrayData>,
    pub statics: BTreeMap<String, ArrayData>,
}

impl EpisodeRecord {
    /// Episode length `T` (leading dimension of the per-step arrays).
    pub fn len(&self) -> usize {
        self.steps.values().next().map(ArrayData::len).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn signature(&self) -> BTreeMap<String, KeySignature> {
        let mut out = BTreeMap::new();
        for (k, a) in &self.steps {
            out.insert(
                k.clone(),
                KeySignature {
                    dtype: a.dtype(),
                    shape: a.shape()[1..].to_vec(),
                    per_step: true,
                },
            );
        }
        for (k, a) in &self.statics {
            out.insert(
                k.clone(),
                KeySignature {
                    dtype: a.dtype(),
                    shape: a.shape().to_vec(),
                    per_step: false,
                },
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySignature {
    pub dtype: DType,
    /// Row shape for per-step keys, full shape for static keys.
    pub shape: Vec<usize>,
    pub per_step: bool,
}

impl std::fmt::Display for KeySignature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = if self.per_step { "T × " } else { "" };
        write!(f, "{:?} {kind}{:?}", self.dtype, self.shape)
    }
}

/// Per-episode bookkeeping stored in the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub seed: u64,
    pub variation: Assignment,
    /// Leaves that were resampled for this episode.
    pub varied: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub file: String,
    pub length: usize,
    #[serde(flatten)]
    pub meta: EpisodeMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub name: String,
    pub env_id: String,
    pub episode_count: usize,
    pub keys: BTreeMap<String, KeySignature>,
    pub episodes: Vec<EpisodeEntry>,
}

impl DatasetManifest {
    pub fn total_steps(&self) -> usize {
        self.episodes.iter().map(|e| e.length).sum()
    }
}

pub fn dataset_dir(root: &Path, name: &str) -> PathBuf {
    root.join(name)
}

/// Single writer for a new dataset.
#[derive(Debug)]
pub struct DatasetWriter {
    dir: PathBuf,
    manifest: DatasetManifest,
}

impl DatasetWriter {
    pub fn create(root: &Path, name: &str, env_id: &str, overwrite: bool) -> Result<Self, StoreError> {
        let dir = dataset_dir(root, name);
        if dir.exists() {
            if !overwrite {
                return Err(StoreError::NameCollision(dir));
            }
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self {
            dir,
            manifest: DatasetManifest {
                format_version: FORMAT_VERSION,
                name: name.to_string(),
                env_id: env_id.to_string(),
                episode_count: 0,
                keys: BTreeMap::new(),
                episodes: Vec::new(),
            },
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn episode_count(&self) -> usize {
        self.manifest.episodes.len()
    }

    pub fn append(&mut self, record: &EpisodeRecord, meta: EpisodeMeta) -> Result<(), StoreError> {
        let length = record.len();
        for (k, a) in &record.steps {
            if a.len() != length {
                return Err(StoreError::Signature {
                    key: k.clone(),
                    expected: format!("leading length {length}"),
                    got: format!("{:?}", a.shape()),
                });
            }
        }
        if let Some(k) = record.steps.keys().find(|k| record.statics.contains_key(*k)) {
            return Err(StoreError::Signature {
                key: k.clone(),
                expected: "either per-step or static".into(),
                got: "both".into(),
            });
        }
        let sig = record.signature();
        if self.manifest.episodes.is_empty() {
            self.manifest.keys = sig;
        } else {
            check_signature(&self.manifest.keys, &sig)?;
        }

        let file = format!("episode_{:06}.bin", self.manifest.episodes.len());
        let path = self.dir.join(&file);
        write_episode(&path, record).map_err(io_err(&path))?;
        self.manifest.episodes.push(EpisodeEntry { file, length, meta });
        self.manifest.episode_count = self.manifest.episodes.len();
        Ok(())
    }

    /// Writes the manifest, making the dataset visible to readers.
    pub fn finalize(self) -> Result<DatasetManifest, StoreError> {
        let path = self.dir.join(MANIFEST_FILE);
        let tmp = self.dir.join(format!("{MANIFEST_FILE}.tmp"));
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(self.manifest)
    }
}

fn check_signature(
    expected: &BTreeMap<String, KeySignature>,
    got: &BTreeMap<String, KeySignature>,
) -> Result<(), StoreError> {
    for (k, e) in expected {
        match got.get(k) {
            Some(g) if g == e => {}
            Some(g) => {
                return Err(StoreError::Signature {
                    key: k.clone(),
                    expected: e.to_string(),
                    got: g.to_string(),
                })
            }
            None => {
                return Err(StoreError::Signature {
                    key: k.clone(),
                    expected: e.to_string(),
                    got: "missing".into(),
                })
            }
        }
    }
    if let Some(k) = got.keys().find(|k| !expected.contains_key(*k)) {
        return Err(StoreError::Signature {
            key: k.clone(),
            expected: "absent".into(),
            got: got[k].to_string(),
        });
    }
    Ok(())
}

struct HeaderEntry {
    name: String,
    dtype: DType,
    per_step: bool,
    dims: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

fn write_episode(path: &Path, record: &EpisodeRecord) -> io::Result<()> {
    let mut keys: Vec<(&String, &ArrayData, bool)> = record
        .steps
        .iter()
        .map(|(k, a)| (k, a, true))
        .chain(record.statics.iter().map(|(k, a)| (k, a, false)))
        .collect();
    keys.sort_by(|a, b| a.0.cmp(b.0));

    let header_len: usize = 12
        + keys
            .iter()
            .map(|(k, a, _)| 2 + k.len() + 3 + 8 * a.shape().len() + 16)
            .sum::<usize>();
    let mut header = Vec::with_capacity(header_len);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    header.extend_from_slice(&(keys.len() as u32).to_le_bytes());
    let mut offset = header_len as u64;
    for (k, a, per_step) in &keys {
        let nbytes = (a.shape().iter().product::<usize>() * a.dtype().size()) as u64;
        header.extend_from_slice(&(k.len() as u16).to_le_bytes());
        header.extend_from_slice(k.as_bytes());
        header.push(a.dtype().code());
        header.push(*per_step as u8);
        header.push(a.shape().len() as u8);
        for &d in a.shape() {
            header.extend_from_slice(&(d as u64).to_le_bytes());
        }
        header.extend_from_slice(&offset.to_le_bytes());
        header.extend_from_slice(&nbytes.to_le_bytes());
        offset += nbytes;
    }
    debug_assert_eq!(header.len(), header_len);

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&header)?;
    for (_, a, _) in &keys {
        w.write_all(&a.to_le_bytes())?;
    }
    w.flush()
}

fn read_header(path: &Path, file: &mut File) -> Result<Vec<HeaderEntry>, StoreError> {
    let corrupt = |reason: &str| StoreError::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut r = io::BufReader::new(&mut *file);
    let mut fixed = [0u8; 12];
    r.read_exact(&mut fixed).map_err(|_| corrupt("truncated header"))?;
    if &fixed[0..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(fixed[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(fixed[8..12].try_into().unwrap()) as usize;
    let mut entries = Vec::with_capacity(count);
    let mut u64_buf = [0u8; 8];
    for _ in 0..count {
        let mut len = [0u8; 2];
        r.read_exact(&mut len).map_err(|_| corrupt("truncated key table"))?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        r.read_exact(&mut name).map_err(|_| corrupt("truncated key table"))?;
        let name = String::from_utf8(name).map_err(|_| corrupt("key name is not UTF-8"))?;
        let mut meta = [0u8; 3];
        r.read_exact(&mut meta).map_err(|_| corrupt("truncated key table"))?;
        let dtype = DType::from_code(meta[0]).ok_or_else(|| corrupt("unknown dtype code"))?;
        let mut dims = Vec::with_capacity(meta[2] as usize);
        for _ in 0..meta[2] {
            r.read_exact(&mut u64_buf).map_err(|_| corrupt("truncated key table"))?;
            dims.push(u64::from_le_bytes(u64_buf) as usize);
        }
        r.read_exact(&mut u64_buf).map_err(|_| corrupt("truncated key table"))?;
        let offset = u64::from_le_bytes(u64_buf);
        r.read_exact(&mut u64_buf).map_err(|_| corrupt("truncated key table"))?;
        let nbytes = u64::from_le_bytes(u64_buf);
        if dims.iter().product::<usize>() as u64 * dtype.size() as u64 != nbytes {
            return Err(corrupt(&format!("byte count of `{name}` disagrees with its shape")));
        }
        entries.push(HeaderEntry {
            name,
            dtype,
            per_step: meta[1] != 0,
            dims,
            offset,
            nbytes,
        });
    }
    Ok(entries)
}

/// Read-only handle on a finalized dataset. Cheap to share across threads.
#[derive(Debug, Clone)]
pub struct Dataset {
    dir: PathBuf,
    manifest: DatasetManifest,
}

impl Dataset {
    /// Opens and validates every episode header against the manifest.
    pub fn open(root: &Path, name: &str) -> Result<Self, StoreError> {
        Self::open_dir(&dataset_dir(root, name))
    }

    pub fn open_dir(dir: &Path) -> Result<Self, StoreError> {
        if !dir.is_dir() {
            return Err(StoreError::NotFound(dir.to_path_buf()));
        }
        let path = dir.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(StoreError::NotFinalized(dir.to_path_buf()));
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| StoreError::Manifest {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let bad = |reason: String| StoreError::Manifest {
            path: path.clone(),
            reason,
        };
        if manifest.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", manifest.format_version)));
        }
        if manifest.episode_count != manifest.episodes.len() {
            return Err(bad(format!(
                "episode_count {} but {} episode entries",
                manifest.episode_count,
                manifest.episodes.len()
            )));
        }
        let ds = Self {
            dir: dir.to_path_buf(),
            manifest,
        };
        for i in 0..ds.manifest.episodes.len() {
            ds.validated_header(i)?;
        }
        Ok(ds)
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.manifest.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.episodes.is_empty()
    }

    pub fn keys(&self) -> Vec<String> {
        self.manifest.keys.keys().cloned().collect()
    }

    fn entry(&self, index: usize) -> Result<&EpisodeEntry, StoreError> {
        self.manifest.episodes.get(index).ok_or(StoreError::EpisodeIndex {
            index,
            count: self.manifest.episodes.len(),
        })
    }

    fn validated_header(&self, index: usize) -> Result<(PathBuf, File, Vec<HeaderEntry>), StoreError> {
        let entry = self.entry(index)?;
        let path = self.dir.join(&entry.file);
        let mut file = File::open(&path).map_err(io_err(&path))?;
        let header = read_header(&path, &mut file)?;
        let size = file.metadata().map_err(io_err(&path))?.len();
        let corrupt = |reason: String| StoreError::Corrupt {
            path: path.clone(),
            reason,
        };
        if header.len() != self.manifest.keys.len() {
            return Err(corrupt(format!(
                "{} keys in file, {} in manifest",
                header.len(),
                self.manifest.keys.len()
            )));
        }
        for h in &header {
            let sig = self
                .manifest
                .keys
                .get(&h.name)
                .ok_or_else(|| corrupt(format!("key `{}` not in manifest", h.name)))?;
            let (shape, per_step) = if h.per_step {
                if h.dims.first() != Some(&entry.length) {
                    return Err(corrupt(format!(
                        "key `{}` has {:?} rows, manifest length is {}",
                        h.name,
                        h.dims.first(),
                        entry.length
                    )));
                }
                (h.dims[1..].to_vec(), true)
            } else {
                (h.dims.clone(), false)
            };
            let got = KeySignature {
                dtype: h.dtype,
                shape,
                per_step,
            };
            if &got != sig {
                return Err(StoreError::Signature {
                    key: h.name.clone(),
                    expected: sig.to_string(),
                    got: got.to_string(),
                });
            }
            if h.offset + h.nbytes > size {
                return Err(corrupt(format!("payload of `{}` runs past end of file", h.name)));
            }
        }
        Ok((path, file, header))
    }

    /// Loads a whole episode.
    pub fn episode(&self, index: usize) -> Result<EpisodeRecord, StoreError> {
        let (path, mut file, header) = self.validated_header(index)?;
        let mut rec = EpisodeRecord::default();
        for h in header {
            let mut buf = vec![0u8; h.nbytes as usize];
            file.seek(SeekFrom::Start(h.offset)).map_err(io_err(&path))?;
            file.read_exact(&mut buf).map_err(io_err(&path))?;
            let a = ArrayData::from_le_bytes(h.dtype, &h.dims, &buf).expect("sizes checked");
            if h.per_step {
                rec.steps.insert(h.name, a);
            } else {
                rec.statics.insert(h.name, a);
            }
        }
        Ok(rec)
    }

    /// Reads `count` rows of a per-step key starting at `start`, `stride` apart.
    /// Static keys are returned whole.
    pub fn read_rows(
        &self,
        index: usize,
        key: &str,
        start: usize,
        count: usize,
        stride: usize,
    ) -> Result<ArrayData, StoreError> {
        let (path, mut file, header) = self.validated_header(index)?;
        let h = header
            .iter()
            .find(|h| h.name == key)
            .ok_or_else(|| StoreError::UnknownKey {
                key: key.to_string(),
                stored: self.keys(),
            })?;
        if !h.per_step {
            let mut buf = vec![0u8; h.nbytes as usize];
            file.seek(SeekFrom::Start(h.offset)).map_err(io_err(&path))?;
            file.read_exact(&mut buf).map_err(io_err(&path))?;
            return Ok(ArrayData::from_le_bytes(h.dtype, &h.dims, &buf).expect("sizes checked"));
        }
        let rows = h.dims[0];
        let span = if count == 0 { 0 } else { (count - 1) * stride + 1 };
        if start + span > rows {
            return Err(StoreError::WindowSpec(format!(
                "rows {start}..{} exceed episode length {rows}",
                start + span
            )));
        }
        let row_bytes = h.dims[1..].iter().product::<usize>() * h.dtype.size();
        let mut buf = vec![0u8; span * row_bytes];
        file.seek(SeekFrom::Start(h.offset + (start * row_bytes) as u64))
            .map_err(io_err(&path))?;
        file.read_exact(&mut buf).map_err(io_err(&path))?;
        let picked: Vec<u8> = (0..count)
            .flat_map(|k| {
                buf[k * stride * row_bytes..(k * stride + 1) * row_bytes]
                    .iter()
                    .copied()
            })
            .collect();
        let mut dims = h.dims.clone();
        dims[0] = count;
        Ok(ArrayData::from_le_bytes(h.dtype, &dims, &picked).expect("sizes checked"))
    }
}

/// Loader window parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSpec {
    pub frameskip: usize,
    pub num_steps: usize,
    pub keys_to_load: Vec<String>,
}

impl WindowSpec {
    pub fn new<S: Into<String>>(frameskip: usize, num_steps: usize, keys: impl IntoIterator<Item = S>) -> Self {
        Self {
            frameskip,
            num_steps,
            keys_to_load: keys.into_iter().map(Into::into).collect(),
        }
    }

    /// Frames covered by one window.
    pub fn span(&self) -> usize {
        (self.num_steps - 1) * self.frameskip + 1
    }
}

/// Windows available in an episode of length `len`.
pub fn window_count(len: usize, num_steps: usize, frameskip: usize) -> usize {
    let span = (num_steps.max(1) - 1) * frameskip + 1;
    (len + 1).saturating_sub(span)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub episode: usize,
    pub start: usize,
    pub data: BTreeMap<String, ArrayData>,
}

/// Fixed-length strided windows over a dataset.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    dataset: Dataset,
    spec: WindowSpec,
    index: Vec<(usize, usize)>,
}

impl WindowedDataset {
    pub fn open(root: &Path, name: &str, spec: WindowSpec) -> Result<Self, StoreError> {
        Self::new(Dataset::open(root, name)?, spec)
    }

    pub fn new(dataset: Dataset, spec: WindowSpec) -> Result<Self, StoreError> {
        if spec.frameskip == 0 || spec.num_steps == 0 {
            return Err(StoreError::WindowSpec("frameskip and num_steps must be >= 1".into()));
        }
        for k in &spec.keys_to_load {
            if !dataset.manifest.keys.contains_key(k) {
                return Err(StoreError::UnknownKey {
                    key: k.clone(),
                    stored: dataset.keys(),
                });
            }
        }
        let index = dataset
            .manifest
            .episodes
            .iter()
            .enumerate()
            .flat_map(|(e, entry)| (0..window_count(entry.length, spec.num_steps, spec.frameskip)).map(move |s| (e, s)))
            .collect();
        Ok(Self { dataset, spec, index })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    /// `(episode, start)` of the i-th window.
    pub fn locate(&self, i: usize) -> Option<(usize, usize)> {
        self.index.get(i).copied()
    }

    pub fn get(&self, i: usize) -> Result<Window, StoreError> {
        let (episode, start) = self.locate(i).ok_or(StoreError::EpisodeIndex {
            index: i,
            count: self.index.len(),
        })?;
        self.window(episode, start)
    }

    pub fn window(&self, episode: usize, start: usize) -> Result<Window, StoreError> {
        let mut data = BTreeMap::new();
        for k in &self.spec.keys_to_load {
            let a = self
                .dataset
                .read_rows(episode, k, start, self.spec.num_steps, self.spec.frameskip)?;
            data.insert(k.clone(), a);
        }
        Ok(Window { episode, start, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn record(t: usize, action_dim: usize) -> EpisodeRecord {
        let mut r = EpisodeRecord::default();
        r.steps.insert(
            "pixels".into(),
            ArrayData::U8(
                Array::from_shape_fn(IxDyn(&[t, 4, 4, 3]), |i| (i[0] * 7 + i[1] * 3 + i[3]) as u8).into_dyn(),
            ),
        );
        r.steps.insert(
            "action".into(),
            ArrayData::F32(Array::from_shape_fn(IxDyn(&[t, action_dim]), |i| {
                i[0] as f32 * 0.5 - i[1] as f32
            })),
        );
        r.steps.insert(
            "state".into(),
            ArrayData::F32(Array::from_shape_fn(IxDyn(&[t, 3]), |i| (i[0] + i[1]) as f32)),
        );
        r.statics
            .insert("goal_state".into(), ArrayData::F32(Array::from_elem(IxDyn(&[3]), 1.5)));
        r
    }

    #[test]
    fn empty_dataset_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let w = DatasetWriter::create(dir.path(), "empty", "swm/TwoRoom-v1", false).unwrap();
        let m = w.finalize().unwrap();
        assert_eq!(m.episode_count, 0);
        let ds = Dataset::open(dir.path(), "empty").unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn round_trip_seven_steps() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = DatasetWriter::create(dir.path(), "d", "env", false).unwrap();
        let rec = record(7, 2);
        w.append(&rec, EpisodeMeta::default()).unwrap();
        w.finalize().unwrap();
        let ds = Dataset::open(dir.path(), "d").unwrap();
        let back = ds.episode(0).unwrap();
        assert_eq!(back.len(), 7);
        for (k, a) in &rec.steps {
            assert!(a.bit_eq(&back.steps[k]), "{k}");
        }
        assert!(rec.statics["goal_state"].bit_eq(&back.statics["goal_state"]));
    }

    #[test]
    fn mismatched_action_dim_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = DatasetWriter::create(dir.path(), "d", "env", false).unwrap();
        w.append(&record(5, 2), EpisodeMeta::default()).unwrap();
        let err = w.append(&record(5, 3), EpisodeMeta::default()).unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("action") && msg.contains("[2]") && msg.contains("[3]"),
            "{msg}"
        );
    }

    #[test]
    fn unfinalized_and_colliding_datasets() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = DatasetWriter::create(dir.path(), "d", "env", false).unwrap();
        w.append(&record(3, 2), EpisodeMeta::default()).unwrap();
        assert!(matches!(
            Dataset::open(dir.path(), "d"),
            Err(StoreError::NotFinalized(_))
        ));
        drop(w);
        assert!(matches!(
            DatasetWriter::create(dir.path(), "d", "env", false),
            Err(StoreError::NameCollision(_))
        ));
        assert!(DatasetWriter::create(dir.path(), "d", "env", true).is_ok());
        assert!(matches!(
            Dataset::open(dir.path(), "missing"),
            Err(StoreError::NotFound(_))
        ));
    }

    #[test]
    fn truncated_payload_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = DatasetWriter::create(dir.path(), "d", "env", false).unwrap();
        w.append(&record(6, 2), EpisodeMeta::default()).unwrap();
        w.finalize().unwrap();
        let f = dir.path().join("d/episode_000000.bin");
        let len = fs::metadata(&f).unwrap().len();
        let file = fs::OpenOptions::new().write(true).open(&f).unwrap();
        file.set_len(len - 5).unwrap();
        assert!(matches!(
            Dataset::open(dir.path(), "d"),
            Err(StoreError::Corrupt { .. })
        ));
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_count(16, 16, 1), 1);
        assert_eq!(window_count(10, 4, 2), 4);
        assert_eq!(window_count(3, 4, 1), 0);
        assert_eq!(window_count(0, 1, 1), 0);
    }

    #[test]
    fn windows_load_only_requested_keys() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = DatasetWriter::create(dir.path(), "d", "env", false).unwrap();
        w.append(&record(10, 2), EpisodeMeta::default()).unwrap();
        w.finalize().unwrap();
        let wd = WindowedDataset::open(dir.path(), "d", WindowSpec::new(2, 4, ["pixels"])).unwrap();
        assert_eq!(wd.len(), 4);
        let win = wd.get(3).unwrap();
        assert_eq!(win.data.keys().collect::<Vec<_>>(), vec!["pixels"]);
        let full = Dataset::open(dir.path(), "d").unwrap().episode(0).unwrap();
        assert!(win.data["pixels"].bit_eq(&full.steps["pixels"].rows(3, 4, 2)));
        let err = WindowedDataset::open(dir.path(), "d", WindowSpec::new(1, 2, ["depth"])).unwrap_err();
        assert!(err.to_string().contains("pixels"));
    }
}
