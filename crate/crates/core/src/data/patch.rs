use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Side length of network input patches.
pub const PATCH_SIZE: usize = 64;

/// Relative growth of a detection box before cropping.
pub const BBOX_GROWTH: f64 = 0.1;

/// Axis-aligned box in pixel coordinates, origin top-left.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }
}

/// How the 10% growth is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnlargeMode {
    /// Each axis grows by 10% in total (5% per side).
    #[default]
    Total,
    /// Each side grows by 10% of the extent (20% per axis).
    PerSide,
}

pub fn enlarge_bbox(b: BBox, mode: EnlargeMode) -> BBox {
    let f = match mode {
        EnlargeMode::Total => 1.0 + BBOX_GROWTH,
        EnlargeMode::PerSide => 1.0 + 2.0 * BBOX_GROWTH,
    };
    let (cx, cy) = b.center();
    let (w, h) = (b.w * f, b.h * f);
    BBox {
        x: cx - w / 2.0,
        y: cy - h / 2.0,
        w,
        h,
    }
}

/// Corner-aligned bilinear resampling of a `w × h` plane to `out × out`.
pub fn resize_bilinear<T: Scalar>(src: &[T], w: usize, h: usize, out: usize) -> Vec<T> {
    let coord = |i: usize, n: usize| {
        if n == 1 || out == 1 {
            0.0
        } else {
            i as f64 * (n - 1) as f64 / (out - 1) as f64
        }
    };
    let axis = |n: usize| -> Vec<(usize, usize, T)> {
        (0..out)
            .map(|i| {
                let c = coord(i, n);
                let i0 = (c.floor() as usize).min(n - 1);
                let i1 = (i0 + 1).min(n - 1);
                (i0, i1, T::c(c - i0 as f64))
            })
            .collect()
    };
    let xs = axis(w);
    let ys = axis(h);
    let mut dst = Vec::with_capacity(out * out);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p00 = src[y0 * w + x0];
            let p01 = src[y0 * w + x1];
            let p10 = src[y1 * w + x0];
            let p11 = src[y1 * w + x1];
            let top = p00 + (p01 - p00) * fx;
            let bottom = p10 + (p11 - p10) * fx;
            dst.push(top + (bottom - top) * fy);
        }
    }
    dst
}

/// Crops the enlarged box (clipped to the image) and resizes it to a
/// `[1, 64, 64]` patch.
pub fn extract_patch<T: Scalar>(image: &Image<T>, bbox: BBox, mode: EnlargeMode) -> Result<Tensor<T>> {
    let b = enlarge_bbox(bbox, mode);
    let x0 = b.x.floor().max(0.0);
    let y0 = b.y.floor().max(0.0);
    let x1 = (b.x + b.w).ceil().min(image.width as f64);
    let y1 = (b.y + b.h).ceil().min(image.height as f64);
    if !(x1 > x0 && y1 > y0) || !b.w.is_finite() || !b.h.is_finite() {
        return Err(Error::Geometry(format!(
            "box {bbox:?} does not intersect the {}x{} image",
            image.width, image.height
        )));
    }
    let (x0, y0, x1, y1) = (x0 as usize, y0 as usize, x1 as usize, y1 as usize);
    let (cw, ch) = (x1 - x0, y1 - y0);
    let mut crop = Vec::with_capacity(cw * ch);
    for y in y0..y1 {
        crop.extend_from_slice(&image.data[y * image.width + x0..y * image.width + x1]);
    }
    let data = resize_bilinear(&crop, cw, ch, PATCH_SIZE);
    Tensor::new(vec![1, PATCH_SIZE, PATCH_SIZE], data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedPatch<T> {
    pub patch: Tensor<T>,
    /// Set when the input was (numerically) constant and came out all zeros.
    pub degenerate: bool,
}

/// Subtracts the patch mean and divides by its population standard deviation.
pub fn normalize_patch<T: Scalar>(patch: &Tensor<T>) -> NormalizedPatch<T> {
    let n = T::c(patch.len() as f64);
    let mean = patch.data().iter().copied().sum::<T>() / n;
    let var = patch.data().iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let std = var.sqrt();
    if !(std >= T::c(1e-8)) {
        return NormalizedPatch {
            patch: patch.map(|_| T::zero()),
            degenerate: true,
        };
    }
    NormalizedPatch {
        patch: patch.map(|v| (v - mean) / std),
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> Image<f64> {
        Image::new(w, h, (0..w * h).map(|i| ((i * 7919) % 251) as f64 / 251.0).collect()).unwrap()
    }

    #[test]
    fn enlargement_arithmetic() {
        let b = enlarge_bbox(BBox { x: 10.0, y: 10.0, w: 100.0, h: 200.0 }, EnlargeMode::Total);
        assert!((b.w - 110.0).abs() < 1e-12 && (b.h - 220.0).abs() < 1e-12);
        let (cx, cy) = b.center();
        assert!((cx - 60.0).abs() < 1e-12 && (cy - 110.0).abs() < 1e-12);
        let p = enlarge_bbox(BBox { x: 10.0, y: 10.0, w: 100.0, h: 200.0 }, EnlargeMode::PerSide);
        assert!((p.w - 120.0).abs() < 1e-12 && (p.h - 240.0).abs() < 1e-12);
    }

    #[test]
    fn constant_region_gives_constant_patch() {
        let img = Image::filled(300, 300, 0.37f64);
        let p = extract_patch(&img, BBox { x: 40.0, y: 50.0, w: 90.0, h: 33.0 }, EnlargeMode::Total).unwrap();
        assert_eq!(p.dims(), &[1, 64, 64]);
        assert!(p.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn unit_scale_resize_is_identity() {
        let img = ramp(64, 64);
        let out = resize_bilinear(&img.data, 64, 64, 64);
        for (a, b) in out.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-9);
        }
        // a box whose enlargement is exactly the 64×64 image
        let side = 64.0 / 1.1;
        let off = (64.0 - side) / 2.0;
        let p = extract_patch(&img, BBox { x: off, y: off, w: side, h: side }, EnlargeMode::Total).unwrap();
        for (a, b) in p.data().iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn outside_box_is_geometry_error() {
        let img = ramp(32, 32);
        let err = extract_patch(&img, BBox { x: 100.0, y: 5.0, w: 10.0, h: 10.0 }, EnlargeMode::Total);
        assert!(matches!(err, Err(Error::Geometry(_))));
    }

    #[test]
    fn box_is_clipped_to_image() {
        let img = ramp(32, 32);
        let p = extract_patch(&img, BBox { x: -10.0, y: 20.0, w: 20.0, h: 30.0 }, EnlargeMode::Total).unwrap();
        assert!(p.all_finite());
    }

    #[test]
    fn normalize_examples() {
        let c = normalize_patch(&Tensor::filled(&[1, 4, 4], 3.0));
        assert!(c.degenerate);
        assert!(c.patch.data().iter().all(|&v| v == 0.0));
        let two = normalize_patch(&Tensor::vector(vec![0.0, 2.0, 0.0, 2.0]));
        assert!(!two.degenerate);
        assert_eq!(two.patch.data(), &[-1.0, 1.0, -1.0, 1.0]);
    }

    proptest! {
        #[test]
        fn normalize_stats_idempotence_affine(
            v in proptest::collection::vec(-100.0f64..100.0, 16),
            a in 0.01f64..50.0, b in -20.0f64..20.0,
        ) {
            let t = Tensor::new(vec![1, 4, 4], v).unwrap();
            let n = normalize_patch(&t);
            prop_assume!(!n.degenerate);
            let m = n.patch.mean();
            let var = n.patch.data().iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 16.0;
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
            let twice = normalize_patch(&n.patch);
            for (x, y) in twice.patch.data().iter().zip(n.patch.data()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            let affine = normalize_patch(&t.map(|x| a * x + b));
            for (x, y) in affine.patch.data().iter().zip(n.patch.data()) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
