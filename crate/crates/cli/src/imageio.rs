//! PNG/PPM decoding into rasters and image-directory listing.

use std::path::{Path, PathBuf};

use anyhow::Context;

use styleforge::features::RasterImage;
use styleforge::Error;

const EXTENSIONS: [&str; 3] = ["png", "ppm", "pnm"];

pub fn read_image(path: &Path) -> anyhow::Result<RasterImage> {
    let decoded =
        image::open(path).with_context(|| format!("{}: cannot decode image", path.display()))?;
    let rgb = decoded.to_rgb8();
    let raster = RasterImage::from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw())?;
    Ok(raster)
}

pub fn write_png(path: &Path, img: &RasterImage) -> anyhow::Result<()> {
    let buffer = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_rgb8())
        .expect("buffer matches dimensions");
    buffer
        .save_with_format(path, image::ImageFormat::Png)
        .with_context(|| format!("{}: cannot write image", path.display()))
}

/// Image files directly inside `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let known = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if known && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(Error::validation(format!(
            "{}: no PNG/PPM images",
            dir.display()
        )));
    }
    Ok(paths)
}

pub fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
