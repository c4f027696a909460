//! Grid-of-patches datasets: 1024×1024 bitmaps named `patches0000.bmp`,
//! `patches0001.bmp`, … each holding a 16 × 16 row-major array of 64 × 64
//! patches, plus an info file with one integer correspondence key per patch
//! (first whitespace-separated field of each line). Patches sharing a key
//! depict the same physical point.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::{GrayImage, Luma};

use super::image::load_gray;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const GRID_SIDE: usize = 16;
pub const GRID_PATCH: usize = 64;
const PER_BITMAP: usize = GRID_SIDE * GRID_SIDE;

fn bitmap_name(i: usize) -> String {
    format!("patches{i:04}.bmp")
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchGridDataset<T> {
    pub patches: Vec<Tensor<T>>,
    pub keys: Vec<i64>,
}

impl<T: Scalar> PatchGridDataset<T> {
    /// Index pairs `(i, j)`, `i < j`, with equal keys.
    pub fn positive_pairs(&self) -> Vec<(usize, usize)> {
        self.pairs(true)
    }

    /// Index pairs `(i, j)`, `i < j`, with different keys.
    pub fn negative_pairs(&self) -> Vec<(usize, usize)> {
        self.pairs(false)
    }

    fn pairs(&self, same: bool) -> Vec<(usize, usize)> {
        let n = self.keys.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if (self.keys[i] == self.keys[j]) == same {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn key_groups(&self) -> BTreeMap<i64, Vec<usize>> {
        let mut g: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, &k) in self.keys.iter().enumerate() {
            g.entry(k).or_default().push(i);
        }
        g
    }
}

pub fn ingest_patch_grid<T: Scalar>(bitmap_dir: impl AsRef<Path>, info_file: impl AsRef<Path>) -> Result<PatchGridDataset<T>> {
    let (dir, info) = (bitmap_dir.as_ref(), info_file.as_ref());
    let text = fs::read_to_string(info).map_err(|e| Error::io(info, e))?;
    let mut keys = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let Some(tok) = line.split_whitespace().next() else {
            continue;
        };
        keys.push(tok.parse::<i64>().map_err(|_| Error::Parse {
            path: info.into(),
            reason: format!("line {}: '{tok}' is not an integer key", lineno + 1),
        })?);
    }
    if keys.is_empty() {
        log::warn!("{} lists no patches; dataset is empty", info.display());
        return Ok(PatchGridDataset {
            patches: Vec::new(),
            keys,
        });
    }

    let mut bitmaps = 0;
    while dir.join(bitmap_name(bitmaps)).exists() {
        bitmaps += 1;
    }
    let needed = keys.len().div_ceil(PER_BITMAP);
    if bitmaps != needed {
        return Err(Error::Format {
            offset: 0,
            reason: format!(
                "{} keys need {needed} bitmaps but {} holds {bitmaps}",
                keys.len(),
                dir.display()
            ),
        });
    }

    let mut patches = Vec::with_capacity(keys.len());
    for b in 0..bitmaps {
        let path = dir.join(bitmap_name(b));
        let img = load_gray::<T>(&path)?;
        let side = GRID_SIDE * GRID_PATCH;
        if img.width != side || img.height != side {
            return Err(Error::Format {
                offset: 0,
                reason: format!("{} is {}x{}, expected {side}x{side}", path.display(), img.width, img.height),
            });
        }
        for cell in 0..PER_BITMAP {
            if patches.len() == keys.len() {
                break;
            }
            let (gy, gx) = (cell / GRID_SIDE, cell % GRID_SIDE);
            let data = (0..GRID_PATCH * GRID_PATCH)
                .map(|i| img.get(gx * GRID_PATCH + i % GRID_PATCH, gy * GRID_PATCH + i / GRID_PATCH))
                .collect();
            patches.push(Tensor::new(vec![1, GRID_PATCH, GRID_PATCH], data)?);
        }
    }
    Ok(PatchGridDataset { patches, keys })
}

/// Writes patches (values in `[0, 1]`) and keys in the grid layout.
pub fn write_patch_grid<T: Scalar>(dir: impl AsRef<Path>, info_name: &str, patches: &[Tensor<T>], keys: &[i64]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if patches.len() != keys.len() {
        return Err(Error::dim("write_patch_grid", "keys", patches.len(), keys.len()));
    }
    let side = (GRID_SIDE * GRID_PATCH) as u32;
    for (b, chunk) in patches.chunks(PER_BITMAP).enumerate() {
        let mut img = GrayImage::new(side, side);
        for (cell, p) in chunk.iter().enumerate() {
            let (gy, gx) = (cell / GRID_SIDE, cell % GRID_SIDE);
            for (i, v) in p.data().iter().enumerate() {
                let px = (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
                img.put_pixel(
                    (gx * GRID_PATCH + i % GRID_PATCH) as u32,
                    (gy * GRID_PATCH + i / GRID_PATCH) as u32,
                    Luma([px]),
                );
            }
        }
        let path = dir.join(bitmap_name(b));
        img.save(&path).map_err(|source| Error::Image { path, source })?;
    }
    let info: String = keys.iter().map(|k| format!("{k} 0\n")).collect();
    let path = dir.join(info_name);
    fs::write(&path, info).map_err(|e| Error::io(path, e))
}
