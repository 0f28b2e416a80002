//! Content-addressed PNG crops of word boxes.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use log::warn;
use sha2::{Digest, Sha256};
use wordspot_core::{PageImage, WordBox, WordEntry};

use crate::error::AppError;
use crate::pages;

/// White border around each crop, in pixels.
const PAD: usize = 2;
/// Decoded pages kept in memory.
const PAGE_CACHE: usize = 8;

pub struct ThumbnailStore {
    pages: Vec<PathBuf>,
    threshold: f64,
    inner: Mutex<Inner>,
}

#[derive(Default)]
struct Inner {
    by_hash: HashMap<String, Arc<Vec<u8>>>,
    by_box: HashMap<(u64, WordBox), String>,
    decoded: Vec<(u64, Arc<PageImage>)>,
}

impl ThumbnailStore {
    /// `pages[doc_id]` is the image file of that document.
    pub fn new(pages: Vec<PathBuf>, threshold: f64) -> Self {
        Self {
            pages,
            threshold,
            inner: Mutex::default(),
        }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), wordspot_core::raster::DEFAULT_THRESHOLD)
    }

    pub fn has_pages(&self) -> bool {
        !self.pages.is_empty()
    }

    /// Hex SHA-256 of the entry's crop, rendering it on first use. `None`
    /// when the page is unavailable.
    pub fn reference(&self, entry: &WordEntry) -> Option<String> {
        let key = (entry.doc_id, entry.bbox);
        if let Some(h) = self.inner.lock().expect("thumbnail lock").by_box.get(&key) {
            return Some(h.clone());
        }
        match self.render(entry) {
            Ok(png) => {
                let hash = hex::encode(Sha256::digest(&png));
                let mut inner = self.inner.lock().expect("thumbnail lock");
                inner.by_hash.entry(hash.clone()).or_insert_with(|| Arc::new(png));
                inner.by_box.insert(key, hash.clone());
                Some(hash)
            }
            Err(e) => {
                if self.has_pages() {
                    warn!("thumbnail for word {}: {e}", entry.word_id);
                }
                None
            }
        }
    }

    pub fn get(&self, hash: &str) -> Option<Arc<Vec<u8>>> {
        self.inner.lock().expect("thumbnail lock").by_hash.get(hash).cloned()
    }

    fn page(&self, doc_id: u64) -> Result<Arc<PageImage>, AppError> {
        if let Some((_, p)) = self.inner.lock().expect("thumbnail lock").decoded.iter().find(|(d, _)| *d == doc_id) {
            return Ok(p.clone());
        }
        let path = self
            .pages
            .get(doc_id as usize)
            .ok_or_else(|| AppError::Usage(format!("no page image for document {doc_id}")))?;
        let page = Arc::new(pages::load_image(path, self.threshold)?);
        let mut inner = self.inner.lock().expect("thumbnail lock");
        if inner.decoded.len() >= PAGE_CACHE {
            inner.decoded.remove(0);
        }
        inner.decoded.push((doc_id, page.clone()));
        Ok(page)
    }

    fn render(&self, entry: &WordEntry) -> Result<Vec<u8>, AppError> {
        let page = self.page(entry.doc_id)?;
        let b = entry.bbox;
        let (x, y) = (b.x as usize, b.y as usize);
        let x0 = x.saturating_sub(PAD);
        let y0 = y.saturating_sub(PAD);
        let x1 = (x + b.w as usize + PAD).min(page.width());
        let y1 = (y + b.h as usize + PAD).min(page.height());
        let crop = page.crop(x0, y0, x1 - x0, y1 - y0)?;
        pages::encode_png(&crop)
    }
}
