use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit RGB image, row-major with interleaved channels.
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Raster({}×{})", self.width, self.height)
    }
}

impl Raster {
    /// Black image.
    pub fn new(width: usize, height: usize) -> Self {
        Raster {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_rgb(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidInput(format!(
                "{} bytes for a {width}×{height} RGB image",
                data.len()
            )));
        }
        Ok(Raster {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// `w × h` window at `(x, y)`; pixels outside the image are zero.
    pub fn crop_padded(&self, x: usize, y: usize, w: usize, h: usize) -> Raster {
        let mut out = Raster::new(w, h);
        let cw = self.width.saturating_sub(x).min(w);
        for row in 0..h.min(self.height.saturating_sub(y)) {
            let src = ((y + row) * self.width + x) * 3;
            let dst = row * w * 3;
            out.data[dst..dst + cw * 3].copy_from_slice(&self.data[src..src + cw * 3]);
        }
        out
    }

    /// Copies `src` into this image with its top-left at `(x, y)`, dropping
    /// whatever falls outside.
    pub fn paste(&mut self, src: &Raster, x: usize, y: usize) {
        let cw = self.width.saturating_sub(x).min(src.width);
        for row in 0..src.height.min(self.height.saturating_sub(y)) {
            let dst = ((y + row) * self.width + x) * 3;
            let s = row * src.width * 3;
            self.data[dst..dst + cw * 3].copy_from_slice(&src.data[s..s + cw * 3]);
        }
    }

    /// `1 × 3 × H × W` tensor with values in `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        Self::batch_tensor(std::slice::from_ref(self)).expect("single image batch")
    }

    /// Stacks equally sized images into `N × 3 × H × W`.
    pub fn batch_tensor(images: &[Raster]) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidInput("empty image batch".into()))?;
        let (w, h) = (first.width, first.height);
        if images.iter().any(|r| r.width != w || r.height != h) {
            return Err(Error::InvalidInput("batch images differ in size".into()));
        }
        let plane = w * h;
        let mut data = vec![0.0; images.len() * 3 * plane];
        for (n, img) in images.iter().enumerate() {
            for p in 0..plane {
                for c in 0..3 {
                    data[(n * 3 + c) * plane + p] = img.data[p * 3 + c] as f64 / 255.0;
                }
            }
        }
        Tensor::new([images.len(), 3, h, w], data)
    }

    pub fn load_png(path: &Path) -> Result<Raster> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Raster::from_rgb(w as usize, h as usize, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf =
            image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
                .ok_or_else(|| Error::InvalidInput("raster buffer size mismatch".into()))?;
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// PNG encoding in memory.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = std::io::Cursor::new(Vec::new());
        image::write_buffer_with_format(
            &mut out,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )?;
        Ok(out.into_inner())
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Raster> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8();
        let (w, h) = img.dimensions();
        Raster::from_rgb(w as usize, h as usize, img.into_raw())
    }
}
