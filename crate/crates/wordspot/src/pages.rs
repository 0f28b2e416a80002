//! Page and query image files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use image::ImageFormat;
use wordspot_core::PageImage;

use crate::error::AppError;

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";
const PAGE_EXTENSIONS: [&str; 4] = ["pbm", "pgm", "pnm", "png"];

/// Page images in `dir`, sorted by file name. A page's position in this
/// list is its document id.
pub fn page_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| PAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Decodes PBM/PGM or PNG bytes, binarizing at `threshold` (fraction of
/// full intensity below which a pixel is ink).
pub fn decode_image(bytes: &[u8], threshold: f64) -> Result<PageImage, AppError> {
    if bytes.starts_with(PNG_MAGIC) {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let cut = threshold * 255.0;
        let pixels = img.as_raw().iter().map(|&v| f64::from(v) < cut).collect();
        return Ok(PageImage::from_pixels(w, h, pixels)?);
    }
    Ok(PageImage::from_pnm(bytes, threshold)?)
}

pub fn load_image(path: &Path, threshold: f64) -> Result<PageImage, AppError> {
    let bytes = fs::read(path).map_err(|e| AppError::Path(path.to_path_buf(), e))?;
    decode_image(&bytes, threshold)
}

/// Word labels for a page: `<labels>/<page stem>.txt`, one label per line.
pub fn load_labels(labels_dir: &Path, page: &Path) -> Result<Vec<String>, AppError> {
    let stem = page.file_stem().unwrap_or_default();
    let path = labels_dir.join(stem).with_extension("txt");
    let text = fs::read_to_string(&path).map_err(|e| AppError::Path(path.clone(), e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

/// Grayscale PNG of a binary image, ink black.
pub fn encode_png(image: &PageImage) -> Result<Vec<u8>, AppError> {
    use image::ImageEncoder;
    let buf: Vec<u8> = image.pixels().iter().map(|&ink| if ink { 0 } else { 255 }).collect();
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out).write_image(
        &buf,
        image.width() as u32,
        image.height() as u32,
        image::ExtendedColorType::L8,
    )?;
    Ok(out)
}
