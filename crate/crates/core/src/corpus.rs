//! Word entries, the immutable corpus index, and its on-disk format.
//!
//! File layout (little-endian):
//!
//! ```text
//! "DIRX" | version u32 | entry count u64
//! per entry: word_id u64 | doc_id u64 | x, y, w, h u32 | 93 x f64
//!            | label length u32 (u32::MAX = no label) | label bytes
//! feature mean 93 x f64
//! pca flag u8, then if 1:
//!   n u32 | m u32 | whitened u8 | epsilon f64 | mean n x f64
//!   | eigenvalues n x f64 | basis m*n x f64 | whitening scales m x f64
//! CRC-32 (IEEE) of every preceding byte, u32
//! ```

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;

use log::{debug, warn};
use thiserror::Error;

use crate::features::{self, FeatureError, WordBox, WordDescriptor, DESCRIPTOR_LEN};
use crate::raster::PageImage;
use crate::subspace::PcaModel;

pub const MAGIC: &[u8; 4] = b"DIRX";
pub const FORMAT_VERSION: u32 = 1;
const NO_LABEL: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("page has {boxes} word boxes but {labels} labels were supplied")]
    LabelCount { boxes: usize, labels: usize },
}

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("index format error: {0}")]
    Format(String),
    #[error("unsupported index format version {0}")]
    Version(u32),
    #[error("invalid index: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One segmented word occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct WordEntry {
    pub word_id: u64,
    pub doc_id: u64,
    pub bbox: WordBox,
    pub descriptor: WordDescriptor,
    pub label: Option<String>,
}

/// Segments a page and describes every word on it. Word ids start at
/// `first_word_id` and increase in reading order; boxes without ink are
/// skipped.
pub fn ingest_document(
    page: &PageImage,
    doc_id: u64,
    labels: Option<&[String]>,
    first_word_id: u64,
) -> Result<Vec<WordEntry>, IngestError> {
    let boxes = features::segment_words(page);
    if let Some(labels) = labels {
        if labels.len() != boxes.len() {
            return Err(IngestError::LabelCount {
                boxes: boxes.len(),
                labels: labels.len(),
            });
        }
    }
    let mut entries = Vec::with_capacity(boxes.len());
    let mut skipped = 0usize;
    for (i, bbox) in boxes.into_iter().enumerate() {
        match features::extract_descriptor(page, bbox) {
            Ok(descriptor) => entries.push(WordEntry {
                word_id: first_word_id + entries.len() as u64,
                doc_id,
                bbox,
                descriptor,
                label: labels.map(|l| l[i].to_lowercase()),
            }),
            Err(FeatureError::DegenerateWord(_)) | Err(FeatureError::OutOfBounds { .. }) => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!("doc {doc_id}: skipped {skipped} degenerate word boxes");
    }
    debug!("doc {doc_id}: ingested {} words", entries.len());
    Ok(entries)
}

/// Accumulates documents into an index with dense word ids.
#[derive(Debug, Default)]
pub struct IndexBuilder {
    entries: Vec<WordEntry>,
}

impl IndexBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_document(
        &mut self,
        page: &PageImage,
        doc_id: u64,
        labels: Option<&[String]>,
    ) -> Result<usize, IngestError> {
        let added = ingest_document(page, doc_id, labels, self.entries.len() as u64)?;
        let n = added.len();
        self.entries.extend(added);
        Ok(n)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn build(self) -> Result<CorpusIndex, IndexError> {
        CorpusIndex::new(self.entries)
    }
}

/// Immutable collection of word entries plus feature-space metadata.
///
/// Descriptors are also kept as one contiguous row-major matrix (and, with a
/// PCA model attached, as a projected matrix) for the ranking scan.
#[derive(Debug, Clone)]
pub struct CorpusIndex {
    entries: Vec<WordEntry>,
    feature_mean: Vec<f64>,
    pca: Option<PcaModel>,
    format_version: u32,
    matrix: Vec<f64>,
    word_ids: Vec<u64>,
    projected: Option<Vec<f64>>,
}

impl PartialEq for CorpusIndex {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
            && self.feature_mean == other.feature_mean
            && self.pca == other.pca
            && self.format_version == other.format_version
    }
}

impl CorpusIndex {
    /// Builds an index; entries are sorted by word id, which must be unique.
    pub fn new(mut entries: Vec<WordEntry>) -> Result<Self, IndexError> {
        entries.sort_by_key(|e| e.word_id);
        if entries.windows(2).any(|w| w[0].word_id == w[1].word_id) {
            return Err(IndexError::Invalid("duplicate word_id".into()));
        }
        let feature_mean = mean_of(&entries);
        Ok(Self::assemble(entries, feature_mean, None))
    }

    fn assemble(entries: Vec<WordEntry>, feature_mean: Vec<f64>, pca: Option<PcaModel>) -> Self {
        let mut matrix = Vec::with_capacity(entries.len() * DESCRIPTOR_LEN);
        for e in &entries {
            matrix.extend_from_slice(e.descriptor.as_slice());
        }
        let word_ids = entries.iter().map(|e| e.word_id).collect();
        let mut index = Self {
            entries,
            feature_mean,
            pca: None,
            format_version: FORMAT_VERSION,
            matrix,
            word_ids,
            projected: None,
        };
        if let Some(model) = pca {
            index.set_pca(model);
        }
        index
    }

    fn set_pca(&mut self, model: PcaModel) {
        let m = model.dim();
        let mut projected = Vec::with_capacity(self.entries.len() * m);
        for row in self.matrix.chunks_exact(DESCRIPTOR_LEN) {
            projected.extend(model.project_unchecked(row));
        }
        self.projected = Some(projected);
        self.pca = Some(model);
    }

    /// Returns a copy of this index carrying `model`.
    pub fn with_pca(&self, model: PcaModel) -> Result<Self, IndexError> {
        if model.source_dim() != DESCRIPTOR_LEN {
            return Err(IndexError::Invalid(format!(
                "pca source dimension {} != {DESCRIPTOR_LEN}",
                model.source_dim()
            )));
        }
        let mut out = self.clone();
        out.set_pca(model);
        Ok(out)
    }

    pub fn without_pca(&self) -> Self {
        let mut out = self.clone();
        out.pca = None;
        out.projected = None;
        out
    }

    pub fn entries(&self) -> &[WordEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn feature_mean(&self) -> &[f64] {
        &self.feature_mean
    }

    pub fn pca(&self) -> Option<&PcaModel> {
        self.pca.as_ref()
    }

    pub fn format_version(&self) -> u32 {
        self.format_version
    }

    /// Row-major `len() x 93` descriptor matrix.
    pub fn descriptor_matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// Row-major `len() x m` matrix of projected descriptors, when a model is attached.
    pub fn projected_matrix(&self) -> Option<&[f64]> {
        self.projected.as_deref()
    }

    /// Word ids in entry order.
    pub fn word_ids(&self) -> &[u64] {
        &self.word_ids
    }

    /// Position of `word_id` in `entries()`.
    pub fn position(&self, word_id: u64) -> Option<usize> {
        self.word_ids.binary_search(&word_id).ok()
    }

    pub fn entry(&self, word_id: u64) -> Option<&WordEntry> {
        self.position(word_id).map(|i| &self.entries[i])
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &[f64]> {
        self.matrix.chunks_exact(DESCRIPTOR_LEN)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.entries.len() * (DESCRIPTOR_LEN * 8 + 48));
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.format_version);
        put_u64(&mut out, self.entries.len() as u64);
        for e in &self.entries {
            put_u64(&mut out, e.word_id);
            put_u64(&mut out, e.doc_id);
            for v in [e.bbox.x, e.bbox.y, e.bbox.w, e.bbox.h] {
                put_u32(&mut out, v);
            }
            put_f64s(&mut out, e.descriptor.as_slice());
            match &e.label {
                Some(l) => {
                    put_u32(&mut out, l.len() as u32);
                    out.extend_from_slice(l.as_bytes());
                }
                None => put_u32(&mut out, NO_LABEL),
            }
        }
        put_f64s(&mut out, &self.feature_mean);
        match &self.pca {
            None => out.push(0),
            Some(p) => {
                out.push(1);
                put_u32(&mut out, p.source_dim() as u32);
                put_u32(&mut out, p.dim() as u32);
                out.push(u8::from(p.is_whitened()));
                put_f64s(&mut out, &[p.epsilon()]);
                put_f64s(&mut out, p.mean());
                put_f64s(&mut out, p.eigenvalues());
                put_f64s(&mut out, p.basis());
                put_f64s(&mut out, p.whitening_scales());
            }
        }
        let crc = crc32fast::hash(&out);
        put_u32(&mut out, crc);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        if bytes.len() < MAGIC.len() + 4 + 8 + 4 {
            return Err(IndexError::Format(format!("file too short ({} bytes)", bytes.len())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(IndexError::Format("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(IndexError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(IndexError::Version(version));
        }
        let count = r.u64()?;
        // Each record is at least this long; reject absurd counts before allocating.
        let min_record = 8 + 8 + 16 + DESCRIPTOR_LEN * 8 + 4;
        if count > (body.len() / min_record) as u64 {
            return Err(IndexError::Format(format!("entry count {count} exceeds file size")));
        }
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let word_id = r.u64()?;
            let doc_id = r.u64()?;
            let bbox = WordBox::new(r.u32()?, r.u32()?, r.u32()?, r.u32()?);
            let values = r.f64s(DESCRIPTOR_LEN)?;
            let descriptor = WordDescriptor::from_slice(&values)
                .ok_or_else(|| IndexError::Invalid(format!("word {word_id}: descriptor out of range")))?;
            let len = r.u32()?;
            let label = if len == NO_LABEL {
                None
            } else {
                let raw = r.take(len as usize)?;
                Some(
                    String::from_utf8(raw.to_vec())
                        .map_err(|_| IndexError::Format(format!("word {word_id}: label is not utf-8")))?,
                )
            };
            entries.push(WordEntry {
                word_id,
                doc_id,
                bbox,
                descriptor,
                label,
            });
        }
        if entries.windows(2).any(|w| w[0].word_id >= w[1].word_id) {
            return Err(IndexError::Invalid("entries not strictly sorted by word_id".into()));
        }
        let feature_mean = r.f64s(DESCRIPTOR_LEN)?;
        let pca = match r.take(1)?[0] {
            0 => None,
            1 => {
                let n = r.u32()? as usize;
                let m = r.u32()? as usize;
                if n != DESCRIPTOR_LEN || m == 0 || m > n {
                    return Err(IndexError::Invalid(format!("pca block with n={n}, m={m}")));
                }
                let whitened = match r.take(1)?[0] {
                    0 => false,
                    1 => true,
                    b => return Err(IndexError::Format(format!("bad whitening flag {b}"))),
                };
                let epsilon = r.f64s(1)?[0];
                let mean = r.f64s(n)?;
                let eigenvalues = r.f64s(n)?;
                let basis = r.f64s(m * n)?;
                let scales = r.f64s(m)?;
                Some(
                    PcaModel::from_parts(mean, eigenvalues, basis, m, scales, epsilon, whitened)
                        .map_err(|e| IndexError::Invalid(format!("pca block: {e}")))?,
                )
            }
            b => return Err(IndexError::Format(format!("bad pca flag {b}"))),
        };
        if r.pos != body.len() {
            return Err(IndexError::Format(format!(
                "{} trailing bytes before checksum",
                body.len() - r.pos
            )));
        }
        let recomputed = mean_of(&entries);
        if recomputed
            .iter()
            .zip(&feature_mean)
            .any(|(a, b)| !b.is_finite() || (a - b).abs() > 1e-9)
        {
            return Err(IndexError::Invalid("feature mean does not match entries".into()));
        }
        Ok(Self::assemble(entries, feature_mean, pca))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn save_index(index: &CorpusIndex, path: impl AsRef<Path>) -> Result<(), IndexError> {
    index.save(path)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<CorpusIndex, IndexError> {
    CorpusIndex::load(path)
}

fn mean_of(entries: &[WordEntry]) -> Vec<f64> {
    let mut mean = vec![0.0; DESCRIPTOR_LEN];
    if entries.is_empty() {
        return mean;
    }
    for e in entries {
        for (m, v) in mean.iter_mut().zip(e.descriptor.as_slice()) {
            *m += v;
        }
    }
    let n = entries.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| IndexError::Format("unexpected end of file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, IndexError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| IndexError::Format("length overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

/// Collects the set of distinct labels with their occurrence positions.
pub fn label_occurrences(index: &CorpusIndex) -> std::collections::BTreeMap<&str, Vec<usize>> {
    let mut map: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
    for (i, e) in index.entries().iter().enumerate() {
        if let Some(l) = e.label.as_deref() {
            map.entry(l).or_default().push(i);
        }
    }
    map
}

/// Distinct documents present in the index.
pub fn document_ids(index: &CorpusIndex) -> HashSet<u64> {
    index.entries().iter().map(|e| e.doc_id).collect()
}
