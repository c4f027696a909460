use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Single-channel image, row-major, intensities nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dim("image", "pixels", width * height, data.len()));
        }
        Ok(Image { width, height, data })
    }

    pub fn filled(width: usize, height: usize, v: T) -> Self {
        Image {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }
}

/// Reads an 8- or 16-bit grayscale (or color, converted) image into `[0, 1]`.
pub fn load_gray<T: Scalar>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|v| T::c(v as f64 / 65535.0)).collect(),
        other => other
            .to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| T::c(v as f64 / 255.0))
            .collect(),
    };
    Image::new(w, h, data)
}

/// Writes a 16-bit grayscale PNG, clamping to `[0, 1]`.
pub fn save_gray16<T: Scalar>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u16> = img
        .data
        .iter()
        .map(|v| (v.as_f64().clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, _> =
        ImageBuffer::from_raw(img.width as u32, img.height as u32, raw).expect("buffer sized to image");
    buf.save(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })
}
