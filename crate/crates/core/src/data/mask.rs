use super::manifest::Polygon;
use super::patch::BBox;
use crate::error::{Error, Result};

/// Binary mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Even-odd fill sampled at pixel centers `(x + 0.5, y + 0.5)`, in a window
/// whose top-left pixel is `(ox, oy)`.
fn rasterize_window(poly: &Polygon, ox: i64, oy: i64, width: usize, height: usize) -> Mask {
    let mut mask = Mask::empty(width, height);
    let n = poly.len();
    let mut xs = Vec::new();
    for row in 0..height {
        let cy = (oy + row as i64) as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let [x0, y0] = poly[i];
            let [x1, y1] = poly[(i + 1) % n];
            if (y0 <= cy && cy < y1) || (y1 <= cy && cy < y0) {
                xs.push(x0 + (cy - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            // pixel columns whose centers lie in [span[0], span[1])
            let lo = ((span[0] - 0.5).ceil() as i64 - ox).max(0);
            let hi = ((span[1] - 0.5).ceil() as i64 - ox).min(width as i64);
            for x in lo..hi {
                mask.bits[row * width + x as usize] = true;
            }
        }
    }
    mask
}

pub fn rasterize_polygon(poly: &Polygon, width: usize, height: usize) -> Mask {
    rasterize_window(poly, 0, 0, width, height)
}

pub fn polygon_bbox(poly: &Polygon) -> BBox {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &[x, y] in poly {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    BBox {
        x: x0,
        y: y0,
        w: x1 - x0,
        h: y1 - y0,
    }
}

/// `2|A∩B| / (|A| + |B|)`, and 0 when both masks are empty.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::dim(
            "dice",
            "mask shape",
            format!("{}x{}", a.width, a.height),
            format!("{}x{}", b.width, b.height),
        ));
    }
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Dice of two polygons rasterized on a `width × height` image. Only the
/// union of their bounding boxes is rasterized.
pub fn polygon_dice(a: &Polygon, b: &Polygon, width: usize, height: usize) -> f64 {
    let (ba, bb) = (polygon_bbox(a), polygon_bbox(b));
    let x0 = (ba.x.min(bb.x).floor() as i64 - 1).max(0);
    let y0 = (ba.y.min(bb.y).floor() as i64 - 1).max(0);
    let x1 = ((ba.x + ba.w).max(bb.x + bb.w).ceil() as i64 + 1).min(width as i64);
    let y1 = ((ba.y + ba.h).max(bb.y + bb.h).ceil() as i64 + 1).min(height as i64);
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    let (w, h) = ((x1 - x0) as usize, (y1 - y0) as usize);
    let ma = rasterize_window(a, x0, y0, w, h);
    let mb = rasterize_window(b, x0, y0, w, h);
    dice(&ma, &mb).expect("same window")
}
