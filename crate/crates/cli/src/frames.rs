//! Grayscale frame directories (PGM or PNG, ordered by file name).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use image::{GrayImage, Luma};
use ndarray::{Array2, Array3};
use spikekit::camera::{to_grayscale, IntensityVideo};

use crate::exit::precondition;

fn is_frame(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "png" | "ppm")
    )
}

/// Frame files of a directory in name order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .with_context(|| format!("listing {}", dir.display()))?;
    files.retain(|p| is_frame(p));
    files.sort();
    Ok(files)
}

/// Loads one image as intensities in `[0, 1]`; colour images go through
/// ITU-R 601 luma.
pub fn read_frame(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path).with_context(|| format!("decoding {}", path.display()))?;
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let arr = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
            rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
        });
        Ok(to_grayscale(arr.view())?)
    } else {
        let g = img.to_luma8();
        let (w, h) = g.dimensions();
        Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
            g.get_pixel(x as u32, y as u32)[0] as f64 / 255.0
        }))
    }
}

pub fn read_video(dir: &Path) -> Result<IntensityVideo> {
    let files = list_frames(dir)?;
    if files.is_empty() {
        return precondition(format!("no PGM/PNG frames in {}", dir.display()));
    }
    let frames = files.iter().map(|p| read_frame(p)).collect::<Result<Vec<_>>>()?;
    Ok(IntensityVideo::new(frames)?)
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:05}.pgm")
}

/// Writes 8-bit frames as binary PGM files `frame_00000.pgm`, ...
pub fn write_frames<'a>(dir: &Path, frames: impl IntoIterator<Item = &'a Array2<u8>>) -> Result<usize> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut n = 0;
    for (i, f) in frames.into_iter().enumerate() {
        let (h, w) = f.dim();
        let img = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([f[[y as usize, x as usize]]]));
        let path = dir.join(frame_name(i));
        img.save_with_format(&path, image::ImageFormat::Pnm)
            .with_context(|| format!("writing {}", path.display()))?;
        n += 1;
    }
    Ok(n)
}

/// Intensity in `[0, 1]` to an 8-bit level, rounding to nearest.
pub fn to_u8(v: &Array2<f64>) -> Array2<u8> {
    v.mapv(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = Array2::from_shape_fn((5, 7), |(y, x)| (y * 40 + x * 3) as u8);
        write_frames(dir.path(), [&f, &f]).unwrap();
        let v = read_video(dir.path()).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(to_u8(&v.frames()[1]), f);
    }
}
