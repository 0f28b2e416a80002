//! Deterministic synthetic page generation from plain text.
//!
//! Words are lowercased, rendered with the embedded bitmap font at a
//! per-document scale and weight, laid out in lines, and roughened with a
//! little edge noise. Labels are the rendered words in reading order, so a
//! generated page can be fed straight into ingestion.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::corpus::{CorpusIndex, IndexBuilder, IndexError, IngestError};
use crate::features::segment_words;
use crate::font::{glyph, CELL_HEIGHT};
use crate::raster::PageImage;

/// A short original text bundled with the crate, used when no source text is given.
pub const DEFAULT_SOURCE_TEXT: &str = include_str!("../data/source.txt");

pub const DEFAULT_DOCS: usize = 100;
pub const DEFAULT_WORDS_PER_PAGE: usize = 120;
/// Distinct words of at least this length are spread over two documents.
pub const MIN_SPREAD_LEN: usize = 3;
const MIN_VOCABULARY: usize = 50;

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error("source text has {found} distinct words of length >= {MIN_SPREAD_LEN}, need {MIN_VOCABULARY}")]
    Vocabulary { found: usize },
    #[error("at least one document is required")]
    NoDocuments,
    #[error("invalid generator settings: {0}")]
    Config(String),
    #[error("document {doc}: rendered {words} words but segmentation found {boxes} boxes")]
    Layout { doc: usize, words: usize, boxes: usize },
    #[error("not enough query-eligible words: {found} < {needed}")]
    Queries { found: usize, needed: usize },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Rendering knobs. The defaults produce the reference corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub words_per_page: usize,
    pub page_width: usize,
    pub margin: usize,
    /// Pixel scales a document may be drawn at.
    pub scales: Vec<usize>,
    pub bold_probability: f64,
    /// Chance that a white pixel touching ink becomes ink.
    pub noise_add: f64,
    /// Chance that an ink pixel touching white is erased.
    pub noise_remove: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            words_per_page: DEFAULT_WORDS_PER_PAGE,
            page_width: 1400,
            margin: 24,
            scales: vec![2, 3],
            bold_probability: 0.3,
            noise_add: 0.04,
            noise_remove: 0.01,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), GenerationError> {
        let bad = |m: &str| Err(GenerationError::Config(m.to_string()));
        if self.words_per_page == 0 {
            return bad("words_per_page must be positive");
        }
        if self.scales.is_empty() || self.scales.contains(&0) {
            return bad("scales must be non-empty and positive");
        }
        for p in [self.bold_probability, self.noise_add, self.noise_remove] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        let widest = 12 * 6 * self.scales.iter().max().unwrap() + 2 * self.margin;
        if self.page_width < widest {
            return bad("page_width too small for the configured scales");
        }
        Ok(())
    }
}

/// Rendered pages and their per-page word lists.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub pages: Vec<PageImage>,
    pub labels: Vec<Vec<String>>,
}

impl SyntheticCorpus {
    /// Ingests every page with its labels; doc ids follow page order.
    pub fn build_index(&self) -> Result<CorpusIndex, GenerationError> {
        let mut builder = IndexBuilder::new();
        for (doc, (page, labels)) in self.pages.iter().zip(&self.labels).enumerate() {
            builder.add_document(page, doc as u64, Some(labels))?;
        }
        Ok(builder.build()?)
    }

    /// Writes `doc_NNNN.pbm` and `doc_NNNN.txt` (one label per line) per page.
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<(), GenerationError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (doc, (page, labels)) in self.pages.iter().zip(&self.labels).enumerate() {
            fs::write(dir.join(format!("doc_{doc:04}.pbm")), page.to_pbm())?;
            let mut text = labels.join("\n");
            text.push('\n');
            fs::write(dir.join(format!("doc_{doc:04}.txt")), text)?;
        }
        Ok(())
    }
}

/// Lowercased alphabetic tokens of `text`, in order.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphabetic())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .collect()
}

/// [`generate_with`] under the default configuration.
pub fn generate_synthetic_corpus(
    source_text: &str,
    n_docs: usize,
    seed: u64,
) -> Result<SyntheticCorpus, GenerationError> {
    generate_with(source_text, n_docs, seed, &SynthConfig::default())
}

/// Renders `n_docs` pages from `source_text`.
///
/// Every distinct word of length >= 3 is first placed on two different
/// documents while capacity allows; the remaining slots take consecutive
/// runs of the source text starting at random offsets.
pub fn generate_with(
    source_text: &str,
    n_docs: usize,
    seed: u64,
    config: &SynthConfig,
) -> Result<SyntheticCorpus, GenerationError> {
    config.validate()?;
    if n_docs == 0 {
        return Err(GenerationError::NoDocuments);
    }
    let tokens = tokenize(source_text);
    let vocabulary: BTreeSet<&str> = tokens
        .iter()
        .map(String::as_str)
        .filter(|t| t.len() >= MIN_SPREAD_LEN)
        .collect();
    if vocabulary.len() < MIN_VOCABULARY {
        return Err(GenerationError::Vocabulary { found: vocabulary.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_page = config.words_per_page;
    let mut pages: Vec<Vec<String>> = vec![Vec::with_capacity(per_page); n_docs];

    let mut spread: Vec<&str> = vocabulary.into_iter().collect();
    spread.shuffle(&mut rng);
    let copies = n_docs.min(2);
    let mut cursor = 0usize;
    'place: for word in spread {
        if pages.iter().map(Vec::len).sum::<usize>() + copies > n_docs * per_page {
            break;
        }
        let mut placed = 0;
        for step in 0..n_docs {
            let doc = (cursor + step) % n_docs;
            if pages[doc].len() < per_page && !pages[doc].iter().any(|w| w == word) {
                pages[doc].push(word.to_string());
                placed += 1;
                if placed == copies {
                    cursor = (doc + 1) % n_docs;
                    continue 'place;
                }
            }
        }
        break;
    }

    for page in &mut pages {
        while page.len() < per_page {
            let start = rng.random_range(0..tokens.len());
            let run = rng.random_range(4..=12usize);
            for t in tokens.iter().cycle().skip(start).take(run.min(per_page - page.len())) {
                page.push(t.clone());
            }
        }
        page.shuffle(&mut rng);
    }

    let mut images = Vec::with_capacity(n_docs);
    for (doc, words) in pages.iter().enumerate() {
        let scale = config.scales[rng.random_range(0..config.scales.len())];
        let bold = rng.random_bool(config.bold_probability);
        let mut page = render_page(words, scale, bold, config, &mut rng);
        roughen(&mut page, config, &mut rng);
        let boxes = segment_words(&page).len();
        if boxes != words.len() {
            return Err(GenerationError::Layout {
                doc,
                words: words.len(),
                boxes,
            });
        }
        images.push(page);
    }
    Ok(SyntheticCorpus {
        pages: images,
        labels: pages,
    })
}

/// Row-major ink mask of one word on a `CELL_HEIGHT * scale` tall strip.
fn render_word(word: &str, scale: usize, bold: bool, rng: &mut ChaCha8Rng) -> (usize, Vec<bool>) {
    let glyphs: Vec<_> = word.chars().filter_map(glyph).collect();
    let gaps: Vec<usize> = (1..glyphs.len()).map(|_| scale + rng.random_range(0..=1)).collect();
    let extra = usize::from(bold);
    let width = glyphs.iter().map(|g| g.width * scale + extra).sum::<usize>() + gaps.iter().sum::<usize>();
    let height = CELL_HEIGHT * scale;
    let mut mask = vec![false; width * height];
    let mut x0 = 0;
    for (i, g) in glyphs.iter().enumerate() {
        for gy in 0..CELL_HEIGHT {
            for gx in 0..g.width {
                if !g.ink(gx, gy) {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale + extra {
                        mask[(gy * scale + dy) * width + x0 + gx * scale + dx] = true;
                    }
                }
            }
        }
        x0 += g.width * scale + extra + gaps.get(i).copied().unwrap_or(0);
    }
    (width, mask)
}

fn render_page(words: &[String], scale: usize, bold: bool, config: &SynthConfig, rng: &mut ChaCha8Rng) -> PageImage {
    let cell = CELL_HEIGHT * scale;
    let word_gap = 6 * scale;
    let line_pitch = cell + 12 * scale;
    let usable = config.page_width - 2 * config.margin;

    let rendered: Vec<(usize, Vec<bool>)> = words.iter().map(|w| render_word(w, scale, bold, rng)).collect();
    let mut placements = Vec::with_capacity(words.len());
    let (mut x, mut line) = (0usize, 0usize);
    for (w, _) in &rendered {
        if x > 0 && x + w > usable {
            x = 0;
            line += 1;
        }
        placements.push((config.margin + x, config.margin + line * line_pitch));
        x += w + word_gap;
    }
    let height = 2 * config.margin + (line + 1) * line_pitch;
    let mut page = PageImage::new(config.page_width, height).expect("page dimensions are positive");
    for ((w, mask), &(px, py)) in rendered.iter().zip(&placements) {
        for (i, &ink) in mask.iter().enumerate() {
            if ink {
                page.set(px + i % w, py + i / w, true);
            }
        }
    }
    page
}

/// Edge noise: grows and erodes single pixels along ink boundaries.
fn roughen(page: &mut PageImage, config: &SynthConfig, rng: &mut ChaCha8Rng) {
    if config.noise_add == 0.0 && config.noise_remove == 0.0 {
        return;
    }
    let src = page.clone();
    let (w, h) = (src.width(), src.height());
    let touches = |x: usize, y: usize, want: bool| {
        (x > 0 && src.get(x - 1, y) == want)
            || (x + 1 < w && src.get(x + 1, y) == want)
            || (y > 0 && src.get(x, y - 1) == want)
            || (y + 1 < h && src.get(x, y + 1) == want)
    };
    for y in 0..h {
        for x in 0..w {
            let ink = src.get(x, y);
            if ink {
                if touches(x, y, false) && rng.random_bool(config.noise_remove) {
                    page.set(x, y, false);
                }
            } else if touches(x, y, true) && rng.random_bool(config.noise_add) {
                page.set(x, y, true);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, HashSet};

    fn small_text() -> String {
        DEFAULT_SOURCE_TEXT.split_whitespace().take(400).collect::<Vec<_>>().join(" ")
    }

    fn small_config() -> SynthConfig {
        SynthConfig {
            words_per_page: 40,
            page_width: 800,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn tokenize_lowercases_and_splits() {
        assert_eq!(tokenize("The harbor's LIGHT, 2 ships"), ["the", "harbor", "s", "light", "ships"]);
    }

    #[test]
    fn same_seed_same_pages() {
        let a = generate_with(&small_text(), 3, 7, &small_config()).unwrap();
        let b = generate_with(&small_text(), 3, 7, &small_config()).unwrap();
        assert_eq!(a, b);
        let c = generate_with(&small_text(), 3, 8, &small_config()).unwrap();
        assert_ne!(a.pages, c.pages);
    }

    #[test]
    fn single_document_has_labels() {
        let c = generate_with(&small_text(), 1, 1, &small_config()).unwrap();
        assert_eq!(c.pages.len(), 1);
        assert_eq!(c.labels[0].len(), 40);
    }

    #[test]
    fn small_vocabulary_is_rejected() {
        let text = "alpha beta gamma ".repeat(100);
        assert!(matches!(
            generate_synthetic_corpus(&text, 2, 0),
            Err(GenerationError::Vocabulary { found: 3 })
        ));
        assert!(matches!(
            generate_synthetic_corpus(DEFAULT_SOURCE_TEXT, 0, 0),
            Err(GenerationError::NoDocuments)
        ));
    }

    #[test]
    fn spread_words_land_on_two_documents() {
        let text = small_text();
        let c = generate_with(&text, 12, 3, &small_config()).unwrap();
        let mut docs: BTreeMap<&str, HashSet<usize>> = BTreeMap::new();
        for (d, labels) in c.labels.iter().enumerate() {
            for l in labels {
                docs.entry(l).or_default().insert(d);
            }
        }
        for t in tokenize(&text).iter().filter(|t| t.len() >= MIN_SPREAD_LEN) {
            assert!(docs[t.as_str()].len() >= 2, "{t}");
        }
    }

    #[test]
    fn rendered_pages_ingest_with_their_labels() {
        let c = generate_with(&small_text(), 2, 11, &small_config()).unwrap();
        let index = c.build_index().unwrap();
        assert_eq!(index.len(), 80);
        assert_eq!(index.entries()[0].label.as_deref(), Some(c.labels[0][0].as_str()));
    }
}
