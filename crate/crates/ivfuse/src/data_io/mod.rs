//! Image codecs (PGM P5/P2, 8-bit PNG), preprocessing into network tensors,
//! and paired-dataset ingestion.
//!
//! Datasets live on disk as a directory with `ir/` and `vis/` subdirectories
//! holding identically named grayscale images; listings are sorted so a
//! dataset enumerates the same way on any filesystem.

pub mod checkpoint;
pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor4;
use crate::trainer::TrainPair;

/// Decoded 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Gray8 {
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<u8>,
}

fn data_err(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::Data(format!("{}: {reason}", path.display()))
}

/// PGM header tokenizer: skips whitespace and `#` comments.
struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PgmCursor<'a> {
    fn skip_separators(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => return,
            }
        }
    }

    fn next_number(&mut self) -> Option<u32> {
        self.skip_separators();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start || self.pos - start > 9 {
            return None;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()?
            .parse()
            .ok()
    }
}

fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<Gray8> {
    let binary = bytes.starts_with(b"P5");
    let mut cur = PgmCursor { bytes, pos: 2 };
    let (w, h, maxval) = match (cur.next_number(), cur.next_number(), cur.next_number()) {
        (Some(w), Some(h), Some(m)) => (w as usize, h as usize, m),
        _ => return Err(data_err(path, "malformed PGM header")),
    };
    if maxval != 255 {
        return Err(data_err(
            path,
            format!("unsupported PGM maxval {maxval} (only 255)"),
        ));
    }
    if w == 0 || h == 0 {
        return Err(data_err(path, format!("degenerate image size {w}x{h}")));
    }
    let n = w * h;
    let pixels = if binary {
        // exactly one separator byte after the maxval, then the payload
        let start = cur.pos + 1;
        if start > bytes.len() || bytes.len() - start < n {
            return Err(data_err(
                path,
                format!(
                    "truncated pixel data: expected {n} bytes, found {}",
                    bytes.len().saturating_sub(start)
                ),
            ));
        }
        bytes[start..start + n].to_vec()
    } else {
        let mut pixels = Vec::with_capacity(n);
        for i in 0..n {
            match cur.next_number() {
                Some(v) if v <= 255 => pixels.push(v as u8),
                Some(v) => {
                    return Err(data_err(path, format!("pixel value {v} exceeds maxval 255")))
                }
                None => {
                    return Err(data_err(
                        path,
                        format!("truncated pixel data: expected {n} values, found {i}"),
                    ))
                }
            }
        }
        pixels
    };
    Ok(Gray8 { h, w, pixels })
}

/// ITU-R 601 luma with round-half-away-from-zero.
fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .round()
        .clamp(0.0, 255.0) as u8
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<Gray8> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| data_err(path, format!("PNG decode failed: {e}")))?;
    match img {
        image::DynamicImage::ImageLuma8(buf) => Ok(Gray8 {
            h: buf.height() as usize,
            w: buf.width() as usize,
            pixels: buf.into_raw(),
        }),
        image::DynamicImage::ImageRgb8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let raw = buf.into_raw();
            let pixels = raw.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect();
            Ok(Gray8 { h, w, pixels })
        }
        other => Err(data_err(
            path,
            format!(
                "unsupported PNG pixel format {:?} (only 8-bit gray or RGB)",
                other.color()
            ),
        )),
    }
}

/// Load a PGM (P5/P2, maxval 255) or 8-bit gray/RGB PNG as grayscale.
pub fn load_image(path: &Path) -> Result<Gray8> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P2") {
        decode_pgm(path, &bytes)
    } else if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
        decode_png(path, &bytes)
    } else {
        Err(data_err(
            path,
            "unrecognized image format (expected PGM P5/P2 or PNG)",
        ))
    }
}

/// Write a binary PGM (P5, maxval 255).
pub fn save_pgm(path: &Path, img: &Gray8) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", img.w, img.h).into_bytes();
    out.extend_from_slice(&img.pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Write an 8-bit grayscale PNG.
pub fn save_png(path: &Path, img: &Gray8) -> Result<()> {
    image::save_buffer(
        path,
        &img.pixels,
        img.w as u32,
        img.h as u32,
        image::ExtendedColorType::L8,
    )
    .map_err(|e| data_err(path, format!("PNG encode failed: {e}")))
}

/// Write `img` in the format chosen by the path's extension
/// (`.pgm` or `.png`).
pub fn save_image(path: &Path, img: &Gray8) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => save_pgm(path, img),
        Some("png") => save_png(path, img),
        _ => Err(Error::InvalidArgument(format!(
            "{}: unsupported output extension (use .pgm or .png)",
            path.display()
        ))),
    }
}

/// Whether `preprocess` center-crops (training) or only trims odd
/// dimensions (evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PreprocessMode {
    Train,
    Eval,
}

/// Crop size used by `preprocess` in Train mode.
pub const TRAIN_CROP: (usize, usize) = (128, 128);

/// Convert a decoded image into a (1,1,h,w) tensor scaled to [0,1].
/// Train mode center-crops to 128×128; Eval mode trims odd dimensions down
/// to even so behavior stays uniform with downstream metric windows.
pub fn preprocess(img: &Gray8, mode: PreprocessMode) -> Result<Tensor4> {
    preprocess_with_crop(img, mode, TRAIN_CROP)
}

/// `preprocess` with an explicit Train-mode crop size.
pub fn preprocess_with_crop(
    img: &Gray8,
    mode: PreprocessMode,
    crop: (usize, usize),
) -> Result<Tensor4> {
    let (h, w) = match mode {
        PreprocessMode::Train => {
            let (ch, cw) = crop;
            if img.h < ch || img.w < cw {
                return Err(Error::Data(format!(
                    "image {}x{} is too small for a {}x{} training crop",
                    img.h, img.w, ch, cw
                )));
            }
            (ch, cw)
        }
        PreprocessMode::Eval => {
            let (h, w) = (img.h & !1, img.w & !1);
            if h == 0 || w == 0 {
                return Err(Error::Data(format!(
                    "image {}x{} is too small to evaluate",
                    img.h, img.w
                )));
            }
            (h, w)
        }
    };
    let (top, left) = match mode {
        PreprocessMode::Train => ((img.h - h) / 2, (img.w - w) / 2),
        PreprocessMode::Eval => (0, 0),
    };
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        let row = (top + y) * img.w + left;
        data.extend(
            img.pixels[row..row + w]
                .iter()
                .map(|&p| p as f32 / 255.0),
        );
    }
    Tensor4::new(1, 1, h, w, data)
}

/// Which part of the corpus a dataset directory holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Ordered list of aligned (infrared, visible) image paths.
#[derive(Debug, Clone)]
pub struct PairedDataset {
    pub split: Split,
    /// (ir_path, vis_path), sorted by filename.
    pub pairs: Vec<(PathBuf, PathBuf)>,
}

impl PairedDataset {
    /// List `dir/ir` and `dir/vis`, pairing identical filenames. The listing
    /// is sorted lexicographically, so it is stable across filesystems.
    pub fn from_dir(dir: &Path, split: Split) -> Result<Self> {
        let ir_dir = dir.join("ir");
        let vis_dir = dir.join("vis");
        for d in [&ir_dir, &vis_dir] {
            if !d.is_dir() {
                return Err(Error::Data(format!(
                    "{}: missing dataset subdirectory",
                    d.display()
                )));
            }
        }
        let mut names: Vec<std::ffi::OsString> = fs::read_dir(&ir_dir)
            .map_err(|e| Error::io(&ir_dir, e))?
            .filter_map(|entry| {
                let entry = entry.ok()?;
                entry.file_type().ok()?.is_file().then(|| entry.file_name())
            })
            .collect();
        names.sort();
        let mut pairs = Vec::with_capacity(names.len());
        for name in names {
            let vis = vis_dir.join(&name);
            if !vis.is_file() {
                return Err(Error::Data(format!(
                    "{}: no matching visible image for {}",
                    vis.display(),
                    Path::new(&name).display()
                )));
            }
            pairs.push((ir_dir.join(&name), vis));
        }
        Ok(PairedDataset { split, pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Display name of a pair: the shared filename.
pub fn pair_name(ir_path: &Path) -> String {
    ir_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| ir_path.display().to_string())
}

/// Load and crop every pair of a training dataset.
pub fn load_training_pairs(dataset: &PairedDataset, crop: (usize, usize)) -> Result<Vec<TrainPair>> {
    let mut out = Vec::with_capacity(dataset.len());
    for (ir_path, vis_path) in &dataset.pairs {
        let ir = preprocess_with_crop(&load_image(ir_path)?, PreprocessMode::Train, crop)?;
        let vis = preprocess_with_crop(&load_image(vis_path)?, PreprocessMode::Train, crop)?;
        out.push(TrainPair { ir, vis });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn pgm_p5_round_trips_exact_pixel_values() {
        let dir = tmp();
        let path = dir.path().join("t.pgm");
        let img = Gray8 {
            h: 1,
            w: 3,
            pixels: vec![0, 128, 255],
        };
        save_pgm(&path, &img).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);
    }

    #[test]
    fn pgm_p2_parses_with_comments() {
        let dir = tmp();
        let path = dir.path().join("t.pgm");
        fs::write(&path, "P2\n# a comment\n3 1\n255\n0 128 255\n").unwrap();
        assert_eq!(load_image(&path).unwrap().pixels, vec![0, 128, 255]);
    }

    #[test]
    fn pgm_rejects_wrong_maxval_and_truncation() {
        let dir = tmp();
        let path = dir.path().join("t.pgm");
        fs::write(&path, "P5\n2 2\n65535\n\0\0\0\0").unwrap();
        let err = load_image(&path).unwrap_err().to_string();
        assert!(err.contains("maxval 65535"), "{err}");

        fs::write(&path, b"P5\n4 4\n255\n\0\0\0".as_slice()).unwrap();
        let err = load_image(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");

        fs::write(&path, "P2\n2 2\n255\n0 1 2\n").unwrap();
        let err = load_image(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn png_gray_round_trips_and_rgb_converts_by_luma() {
        let dir = tmp();
        let path = dir.path().join("g.png");
        let img = Gray8 {
            h: 2,
            w: 2,
            pixels: vec![0, 77, 200, 255],
        };
        save_png(&path, &img).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);

        // pure red → 0.299·255 = 76.245 → 76
        let rgb = dir.path().join("c.png");
        image::save_buffer(&rgb, &[255, 0, 0], 1, 1, image::ExtendedColorType::Rgb8).unwrap();
        assert_eq!(load_image(&rgb).unwrap().pixels, vec![76]);
    }

    #[test]
    fn unrecognized_bytes_are_a_data_error() {
        let dir = tmp();
        let path = dir.path().join("t.pgm");
        fs::write(&path, "not an image").unwrap();
        let err = load_image(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("unrecognized"), "{err}");
    }

    #[test]
    fn train_preprocess_center_crops_and_scales() {
        // 200×160 → crop offset (36,16)
        let mut pixels = vec![0u8; 200 * 160];
        pixels[36 * 160 + 16] = 255; // lands at tensor (0,0)
        let img = Gray8 {
            h: 200,
            w: 160,
            pixels,
        };
        let t = preprocess(&img, PreprocessMode::Train).unwrap();
        assert_eq!((t.h(), t.w()), (128, 128));
        assert_eq!(t.at(0, 0, 0, 0), 1.0);
        assert_eq!(t.at(0, 0, 0, 1), 0.0);

        let small = Gray8 {
            h: 100,
            w: 150,
            pixels: vec![0; 100 * 150],
        };
        assert!(preprocess(&small, PreprocessMode::Train).is_err());
    }

    #[test]
    fn eval_preprocess_trims_odd_dimensions() {
        let img = Gray8 {
            h: 257,
            w: 129,
            pixels: vec![9; 257 * 129],
        };
        let t = preprocess(&img, PreprocessMode::Eval).unwrap();
        assert_eq!((t.h(), t.w()), (256, 128));
        assert!((t.at(0, 0, 0, 0) - 9.0 / 255.0).abs() < 1e-7);
    }

    #[test]
    fn dataset_listing_is_sorted_and_pairs_must_match() {
        let dir = tmp();
        fs::create_dir_all(dir.path().join("ir")).unwrap();
        fs::create_dir_all(dir.path().join("vis")).unwrap();
        let img = Gray8 {
            h: 2,
            w: 2,
            pixels: vec![1, 2, 3, 4],
        };
        for name in ["b.pgm", "a.pgm", "c.pgm"] {
            save_pgm(&dir.path().join("ir").join(name), &img).unwrap();
            save_pgm(&dir.path().join("vis").join(name), &img).unwrap();
        }
        let ds = PairedDataset::from_dir(dir.path(), Split::Train).unwrap();
        let names: Vec<String> = ds.pairs.iter().map(|(ir, _)| pair_name(ir)).collect();
        assert_eq!(names, ["a.pgm", "b.pgm", "c.pgm"]);

        fs::remove_file(dir.path().join("vis").join("b.pgm")).unwrap();
        let err = PairedDataset::from_dir(dir.path(), Split::Train).unwrap_err();
        assert!(err.to_string().contains("b.pgm"), "{err}");

        let empty = tmp();
        assert!(PairedDataset::from_dir(empty.path(), Split::Val).is_err());
    }

    #[test]
    fn training_pairs_come_out_cropped() {
        let dir = tmp();
        fs::create_dir_all(dir.path().join("ir")).unwrap();
        fs::create_dir_all(dir.path().join("vis")).unwrap();
        let img = Gray8 {
            h: 20,
            w: 20,
            pixels: (0..400).map(|i| (i % 251) as u8).collect(),
        };
        save_pgm(&dir.path().join("ir").join("p.pgm"), &img).unwrap();
        save_pgm(&dir.path().join("vis").join("p.pgm"), &img).unwrap();
        let ds = PairedDataset::from_dir(dir.path(), Split::Train).unwrap();
        let pairs = load_training_pairs(&ds, (16, 16)).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!((pairs[0].ir.h(), pairs[0].ir.w()), (16, 16));
        assert_eq!(pairs[0].ir.data(), pairs[0].vis.data());
    }
}
