//! On-disk corpus layout:
//!
//! ```text
//! <root>/manifest                   one class name per line, line 0 = background
//! <root>/<sequence_id>/<index>.png  8- or 16-bit grayscale scan
//! <root>/<sequence_id>/<index>_mask.png  8-bit label map
//! ```

use crate::error::{Error, Result};
use crate::dataset::{ScanFrame, ScanSequence};
use image::DynamicImage;
use ndarray::Array2;
use std::fs;
use std::path::{Path, PathBuf};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads every sequence under `root`, sorted by sequence id; frames sorted by
/// numeric filename. Images are normalized to [0, 1] by their bit depth.
pub fn load_corpus(root: &Path) -> Result<Vec<ScanSequence>> {
    let manifest_path = root.join("manifest");
    let manifest = fs::read_to_string(&manifest_path).map_err(|_| Error::MissingManifest {
        path: manifest_path.clone(),
    })?;
    let class_names: Vec<String> = manifest
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect();
    if class_names.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "manifest {} declares no classes",
            manifest_path.display()
        )));
    }
    let n = class_names.len();

    let mut seq_dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    seq_dirs.sort();

    let mut sequences = Vec::new();
    for dir in seq_dirs {
        let id = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut indexed: Vec<(usize, PathBuf)> = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io_err(&dir))? {
            let path = entry.map_err(io_err(&dir))?.path();
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            if path.extension().and_then(|e| e.to_str()) != Some("png") || stem.ends_with("_mask")
            {
                continue;
            }
            let Ok(index) = stem.parse::<usize>() else {
                continue;
            };
            indexed.push((index, path));
        }
        if indexed.is_empty() {
            continue;
        }
        indexed.sort();

        let mut frames = Vec::with_capacity(indexed.len());
        for (index, image_path) in indexed {
            let mask_path = dir.join(format!(
                "{}_mask.png",
                image_path.file_stem().unwrap().to_string_lossy()
            ));
            if !mask_path.exists() {
                return Err(Error::MissingMask { image: image_path });
            }
            let image = load_grayscale(&image_path)?;
            let mask = load_mask(&mask_path, n)?;
            frames.push(ScanFrame::new(index, image, mask)?);
        }
        sequences.push(ScanSequence::new(id, frames, class_names.clone())?);
    }
    sequences.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(sequences)
}

fn load_grayscale(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(match img {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
                buf.get_pixel(x as u32, y as u32).0[0] as f64 / 65535.0
            })
        }
        other => {
            let buf = other.to_luma8();
            let (w, h) = buf.dimensions();
            Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
                buf.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0
            })
        }
    })
}

fn load_mask(path: &Path, num_classes: usize) -> Result<Array2<u8>> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let buf = img.to_luma8();
    let (w, h) = buf.dimensions();
    let mask = Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        buf.get_pixel(x as u32, y as u32).0[0]
    });
    if let Some(&v) = mask.iter().max() {
        if (v as usize) >= num_classes {
            return Err(Error::MaskValueOutOfRange {
                value: v as u32,
                num_classes,
                context: path.display().to_string(),
            });
        }
    }
    Ok(mask)
}

/// A sequence loaded from a bare directory of frames, where masks may be
/// absent (inference input).
#[derive(Debug, Clone)]
pub struct LoadedSequence {
    pub sequence: ScanSequence,
    /// True when every frame had a mask file; false means the masks are
    /// all-zero placeholders.
    pub has_truth: bool,
}

/// Loads a single sequence directory of `<index>.png` frames. Masks are used
/// when present for every frame, otherwise zero placeholders are substituted.
pub fn load_sequence_dir(dir: &Path, class_names: Vec<String>) -> Result<LoadedSequence> {
    let n = class_names.len();
    let mut indexed: Vec<(usize, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if path.extension().and_then(|e| e.to_str()) != Some("png") || stem.ends_with("_mask") {
            continue;
        }
        let Ok(index) = stem.parse::<usize>() else {
            continue;
        };
        indexed.push((index, path));
    }
    if indexed.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "no numeric .png frames found in {}",
            dir.display()
        )));
    }
    indexed.sort();

    let has_truth = indexed.iter().all(|(_, p)| {
        dir.join(format!("{}_mask.png", p.file_stem().unwrap().to_string_lossy()))
            .exists()
    });
    let mut frames = Vec::with_capacity(indexed.len());
    for (index, image_path) in indexed {
        let image = load_grayscale(&image_path)?;
        let mask = if has_truth {
            let mask_path = dir.join(format!(
                "{}_mask.png",
                image_path.file_stem().unwrap().to_string_lossy()
            ));
            load_mask(&mask_path, n)?
        } else {
            Array2::zeros(image.dim())
        };
        frames.push(ScanFrame::new(index, image, mask)?);
    }
    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "sequence".to_string());
    Ok(LoadedSequence {
        sequence: ScanSequence::new(id, frames, class_names)?,
        has_truth,
    })
}

/// Writes sequences to `root` in the corpus layout. Images are quantized to
/// 8-bit grayscale; masks are stored verbatim as 8-bit label maps.
pub fn save_corpus(root: &Path, sequences: &[ScanSequence]) -> Result<()> {
    if sequences.is_empty() {
        return Err(Error::InvalidConfig("refusing to write empty corpus".into()));
    }
    fs::create_dir_all(root).map_err(io_err(root))?;
    let manifest_path = root.join("manifest");
    let mut manifest = sequences[0].class_names.join("\n");
    manifest.push('\n');
    fs::write(&manifest_path, manifest).map_err(io_err(&manifest_path))?;

    for seq in sequences {
        let dir = root.join(&seq.id);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for frame in &seq.frames {
            let (h, w) = frame.dims();
            let image_path = dir.join(format!("{:03}.png", frame.index));
            let mut img = image::GrayImage::new(w as u32, h as u32);
            for ((y, x), &v) in frame.image.indexed_iter() {
                img.put_pixel(x as u32, y as u32, image::Luma([(v * 255.0).round().clamp(0.0, 255.0) as u8]));
            }
            img.save(&image_path).map_err(|source| Error::Image {
                path: image_path.clone(),
                source,
            })?;

            let mask_path = dir.join(format!("{:03}_mask.png", frame.index));
            let mut msk = image::GrayImage::new(w as u32, h as u32);
            for ((y, x), &v) in frame.mask.indexed_iter() {
                msk.put_pixel(x as u32, y as u32, image::Luma([v]));
            }
            msk.save(&mask_path).map_err(|source| Error::Image {
                path: mask_path.clone(),
                source,
            })?;
        }
    }
    Ok(())
}
