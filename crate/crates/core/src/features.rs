//! Word segmentation and the 93-component word descriptor.
//!
//! Descriptor layout (all components in `[0, 1]`):
//!
//! | range      | family                                   |
//! |------------|------------------------------------------|
//! | `0`        | width-to-height ratio, `min(w/h, 4) / 4` |
//! | `1`        | word area density                        |
//! | `2..4`     | center of gravity `(x, y)`               |
//! | `4..29`    | vertical projection, 25 column slices    |
//! | `29..45`   | top shape projection, 16 slices          |
//! | `45..61`   | bottom shape projection, 16 slices       |
//! | `61..77`   | upper-half 4x4 grid densities            |
//! | `77..93`   | lower-half 4x4 grid densities            |

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::PageImage;

pub const DESCRIPTOR_LEN: usize = 93;

pub const RATIO: usize = 0;
pub const DENSITY: usize = 1;
pub const COG: Range<usize> = 2..4;
pub const VERTICAL: Range<usize> = 4..29;
pub const TOP: Range<usize> = 29..45;
pub const BOTTOM: Range<usize> = 45..61;
pub const UPPER_GRID: Range<usize> = 61..77;
pub const LOWER_GRID: Range<usize> = 77..93;

const VERTICAL_BINS: usize = 25;
const SHAPE_BINS: usize = 16;
const GRID_SIDE: usize = 4;
const MAX_RATIO: f64 = 4.0;
const SMEAR_FACTOR: f64 = 0.4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeatureError {
    #[error("word box {0:?} contains no ink")]
    DegenerateWord(WordBox),
    #[error("word box {bbox:?} lies outside the {width}x{height} page")]
    OutOfBounds {
        bbox: WordBox,
        width: usize,
        height: usize,
    },
}

/// Axis-aligned word block on a page, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WordBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl WordBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    #[inline]
    fn right(&self) -> u32 {
        self.x + self.w
    }

    #[inline]
    fn bottom(&self) -> u32 {
        self.y + self.h
    }

    fn union(&self, other: &WordBox) -> WordBox {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        WordBox {
            x,
            y,
            w: self.right().max(other.right()) - x,
            h: self.bottom().max(other.bottom()) - y,
        }
    }

    /// White columns between the boxes; 0 when their x-extents touch or overlap.
    fn x_gap(&self, other: &WordBox) -> u32 {
        other.x.saturating_sub(self.right()).max(self.x.saturating_sub(other.right()))
    }

    fn y_gap(&self, other: &WordBox) -> u32 {
        other.y.saturating_sub(self.bottom()).max(self.y.saturating_sub(other.bottom()))
    }

    pub fn contains_box(&self, page: &PageImage) -> bool {
        self.w >= 1
            && self.h >= 1
            && self.right() as usize <= page.width()
            && self.bottom() as usize <= page.height()
    }
}

/// The 93-component word descriptor.
#[derive(Clone, PartialEq)]
pub struct WordDescriptor([f64; DESCRIPTOR_LEN]);

impl std::fmt::Debug for WordDescriptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "WordDescriptor({:?})", &self.0[..6])
    }
}

impl WordDescriptor {
    /// Wraps raw components, rejecting anything non-finite or outside `[0, 1]`.
    pub fn from_slice(values: &[f64]) -> Option<Self> {
        if values.len() != DESCRIPTOR_LEN || !values.iter().all(|v| (0.0..=1.0).contains(v)) {
            return None;
        }
        let mut out = [0.0; DESCRIPTOR_LEN];
        out.copy_from_slice(values);
        Some(Self(out))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarFeatures {
    pub ratio: f64,
    pub density: f64,
    pub cog_x: f64,
    pub cog_y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionFeatures {
    pub vertical: [f64; VERTICAL_BINS],
    pub top: [f64; SHAPE_BINS],
    pub bottom: [f64; SHAPE_BINS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFeatures {
    pub upper: [f64; GRID_SIDE * GRID_SIDE],
    pub lower: [f64; GRID_SIDE * GRID_SIDE],
}

/// `[start, end)` of slice `j` when `extent` pixels are cut into `bins`
/// equal slices. Every slice covers at least one pixel, so narrow extents
/// repeat pixels across neighbouring slices instead of leaving holes.
fn slice_bounds(extent: usize, bins: usize, j: usize) -> (usize, usize) {
    let start = (j * extent / bins).min(extent - 1);
    let end = ((j + 1) * extent / bins).max(start + 1).min(extent);
    (start, end)
}

/// Borrowed view of the box region of a page.
struct Region<'a> {
    page: &'a PageImage,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

impl<'a> Region<'a> {
    fn new(page: &'a PageImage, bbox: WordBox) -> Result<Self, FeatureError> {
        if !bbox.contains_box(page) {
            return Err(FeatureError::OutOfBounds {
                bbox,
                width: page.width(),
                height: page.height(),
            });
        }
        let region = Region {
            page,
            x0: bbox.x as usize,
            y0: bbox.y as usize,
            w: bbox.w as usize,
            h: bbox.h as usize,
        };
        if region.ink_in(0..region.w, 0..region.h) == 0 {
            return Err(FeatureError::DegenerateWord(bbox));
        }
        Ok(region)
    }

    #[inline]
    fn ink(&self, x: usize, y: usize) -> bool {
        self.page.get(self.x0 + x, self.y0 + y)
    }

    fn ink_in(&self, xs: Range<usize>, ys: Range<usize>) -> usize {
        ys.map(|y| {
            let row = &self.page.row(self.y0 + y)[self.x0 + xs.start..self.x0 + xs.end];
            row.iter().filter(|&&p| p).count()
        })
        .sum()
    }
}

/// Ratio, density and ink centroid (pixel-center convention).
pub fn scalar_features(page: &PageImage, bbox: WordBox) -> Result<ScalarFeatures, FeatureError> {
    let r = Region::new(page, bbox)?;
    Ok(scalars(&r))
}

fn scalars(r: &Region<'_>) -> ScalarFeatures {
    let (w, h) = (r.w as f64, r.h as f64);
    let mut count = 0usize;
    let (mut sx, mut sy) = (0.0, 0.0);
    for y in 0..r.h {
        for x in 0..r.w {
            if r.ink(x, y) {
                count += 1;
                sx += x as f64 + 0.5;
                sy += y as f64 + 0.5;
            }
        }
    }
    let n = count as f64;
    ScalarFeatures {
        ratio: (w / h).min(MAX_RATIO) / MAX_RATIO,
        density: n / (w * h),
        cog_x: clamp01(sx / n / w),
        cog_y: clamp01(sy / n / h),
    }
}

/// Vertical projection plus top and bottom shape profiles.
pub fn projection_features(page: &PageImage, bbox: WordBox) -> Result<ProjectionFeatures, FeatureError> {
    let r = Region::new(page, bbox)?;
    Ok(projections(&r))
}

fn projections(r: &Region<'_>) -> ProjectionFeatures {
    let h = r.h as f64;
    // Per-column ink count, first and last ink row.
    let mut counts = vec![0usize; r.w];
    let mut first = vec![usize::MAX; r.w];
    let mut last = vec![0usize; r.w];
    for y in 0..r.h {
        for x in 0..r.w {
            if r.ink(x, y) {
                counts[x] += 1;
                first[x] = first[x].min(y);
                last[x] = y;
            }
        }
    }

    let mut vertical = [0.0; VERTICAL_BINS];
    for (j, v) in vertical.iter_mut().enumerate() {
        let (s, e) = slice_bounds(r.w, VERTICAL_BINS, j);
        let ink: usize = counts[s..e].iter().sum();
        *v = clamp01(ink as f64 / (h * (e - s) as f64));
    }

    let mut top = [0.0; SHAPE_BINS];
    let mut bottom = [0.0; SHAPE_BINS];
    for j in 0..SHAPE_BINS {
        let (s, e) = slice_bounds(r.w, SHAPE_BINS, j);
        let lo = first[s..e].iter().copied().min().unwrap_or(usize::MAX);
        if lo == usize::MAX {
            continue;
        }
        let hi = (s..e).filter(|&x| counts[x] > 0).map(|x| last[x]).max().unwrap_or(0);
        top[j] = clamp01(1.0 - lo as f64 / h);
        bottom[j] = clamp01((hi + 1) as f64 / h);
    }

    ProjectionFeatures {
        vertical,
        top,
        bottom,
    }
}

/// 4x4 ink-density grids over the upper and lower halves of the box.
pub fn grid_features(page: &PageImage, bbox: WordBox) -> Result<GridFeatures, FeatureError> {
    let r = Region::new(page, bbox)?;
    Ok(grids(&r))
}

fn grids(r: &Region<'_>) -> GridFeatures {
    let half = |which: usize| {
        let (hs, he) = slice_bounds(r.h, 2, which);
        let mut cells = [0.0; GRID_SIDE * GRID_SIDE];
        for gy in 0..GRID_SIDE {
            let (ys, ye) = slice_bounds(he - hs, GRID_SIDE, gy);
            for gx in 0..GRID_SIDE {
                let (xs, xe) = slice_bounds(r.w, GRID_SIDE, gx);
                let area = ((ye - ys) * (xe - xs)) as f64;
                let ink = r.ink_in(xs..xe, hs + ys..hs + ye);
                cells[gy * GRID_SIDE + gx] = clamp01(ink as f64 / area);
            }
        }
        cells
    };
    GridFeatures {
        upper: half(0),
        lower: half(1),
    }
}

/// Full descriptor for one word box.
pub fn extract_descriptor(page: &PageImage, bbox: WordBox) -> Result<WordDescriptor, FeatureError> {
    let r = Region::new(page, bbox)?;
    let s = scalars(&r);
    let p = projections(&r);
    let g = grids(&r);

    let mut v = [0.0; DESCRIPTOR_LEN];
    v[RATIO] = s.ratio;
    v[DENSITY] = s.density;
    v[COG].copy_from_slice(&[s.cog_x, s.cog_y]);
    v[VERTICAL].copy_from_slice(&p.vertical);
    v[TOP].copy_from_slice(&p.top);
    v[BOTTOM].copy_from_slice(&p.bottom);
    v[UPPER_GRID].copy_from_slice(&g.upper);
    v[LOWER_GRID].copy_from_slice(&g.lower);
    Ok(WordDescriptor(v))
}

/// Descriptor of the tight ink bounding box of a stand-alone word image.
pub fn describe_word_image(image: &PageImage) -> Result<WordDescriptor, FeatureError> {
    let (x, y, w, h) = image
        .ink_bounds()
        .ok_or(FeatureError::DegenerateWord(WordBox::new(0, 0, image.width() as u32, image.height() as u32)))?;
    extract_descriptor(image, WordBox::new(x as u32, y as u32, w as u32, h as u32))
}

#[inline]
fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// 8-connected component bounding boxes, in raster order of each
/// component's first pixel.
pub fn connected_components(page: &PageImage) -> Vec<WordBox> {
    let (w, h) = (page.width(), page.height());
    let mut seen = vec![false; w * h];
    let mut stack = Vec::new();
    let mut boxes = Vec::new();
    for start in 0..w * h {
        if seen[start] || !page.pixels()[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(idx) = stack.pop() {
            let (x, y) = (idx % w, idx / w);
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let n = ny * w + nx;
                    if !seen[n] && page.pixels()[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        boxes.push(WordBox::new(
            x0 as u32,
            y0 as u32,
            (x1 - x0 + 1) as u32,
            (y1 - y0 + 1) as u32,
        ));
    }
    boxes
}

/// Horizontal smearing gap for a page: `max(1, round(0.4 * median component height))`.
pub fn smear_threshold(page: &PageImage) -> Option<usize> {
    let mut heights: Vec<u32> = connected_components(page).iter().map(|b| b.h).collect();
    if heights.is_empty() {
        return None;
    }
    heights.sort_unstable();
    let n = heights.len();
    let median = if n % 2 == 1 {
        f64::from(heights[n / 2])
    } else {
        (f64::from(heights[n / 2 - 1]) + f64::from(heights[n / 2])) / 2.0
    };
    Some(((SMEAR_FACTOR * median).round() as usize).max(1))
}

/// Fills white runs of at most `gap` pixels that sit between two ink pixels
/// on the same row.
pub fn smear_horizontal(page: &PageImage, gap: usize) -> PageImage {
    let mut out = page.clone();
    for y in 0..page.height() {
        let row = page.row(y);
        let mut last_ink: Option<usize> = None;
        for (x, &p) in row.iter().enumerate() {
            if !p {
                continue;
            }
            if let Some(prev) = last_ink {
                let run = x - prev - 1;
                if run > 0 && run <= gap {
                    for xx in prev + 1..x {
                        out.set(xx, y, true);
                    }
                }
            }
            last_ink = Some(x);
        }
    }
    out
}

/// Segments a page into word boxes in reading order.
///
/// Components of the horizontally smeared page are grouped when their boxes
/// lie within the smear gap of each other on both axes (this reattaches
/// i-dots and glyph fragments), then ordered top-to-bottom by text line and
/// left-to-right within a line.
pub fn segment_words(page: &PageImage) -> Vec<WordBox> {
    let Some(gap) = smear_threshold(page) else {
        return Vec::new();
    };
    let gap = gap as u32;
    let smeared = smear_horizontal(page, gap as usize);
    let mut boxes = connected_components(&smeared);

    loop {
        let mut merged = false;
        let mut i = 0;
        while i < boxes.len() {
            let mut j = i + 1;
            while j < boxes.len() {
                let (a, b) = (boxes[i], boxes[j]);
                if a.x_gap(&b) <= gap && a.y_gap(&b) <= gap {
                    boxes[i] = a.union(&b);
                    boxes.swap_remove(j);
                    merged = true;
                } else {
                    j += 1;
                }
            }
            i += 1;
        }
        if !merged {
            break;
        }
    }

    reading_order(boxes)
}

fn reading_order(mut boxes: Vec<WordBox>) -> Vec<WordBox> {
    boxes.sort_by_key(|b| (b.y, b.x));
    let mut lines: Vec<(u32, Vec<WordBox>)> = Vec::new();
    for b in boxes {
        match lines.last_mut() {
            Some((bottom, line)) if b.y < *bottom => {
                *bottom = (*bottom).max(b.bottom());
                line.push(b);
            }
            _ => lines.push((b.bottom(), vec![b])),
        }
    }
    lines
        .into_iter()
        .flat_map(|(_, mut line)| {
            line.sort_by_key(|b| (b.x, b.y));
            line
        })
        .collect()
}
