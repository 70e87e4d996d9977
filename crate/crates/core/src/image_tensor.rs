//! Planar real-valued images, the common currency between the data pipeline,
//! the networks, and the metrics.
//!
//! Two value ranges are in use: `[-1, 1]` inside the networks and `[0, 255]`
//! for export and pixel metrics. The container does not track which one it
//! holds; conversions are explicit.

use std::fs;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{GrayImage, ImageBuffer, RgbImage};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    /// Channel-major (CHW) samples.
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels * height * width != data.len() {
            return Err(Error::Shape(format!(
                "{channels}x{height}x{width} image needs {} samples, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn get(&self, c: usize, v: usize, u: usize) -> f32 {
        self.data[(c * self.height + v) * self.width + u]
    }

    pub fn set(&mut self, c: usize, v: usize, u: usize, value: f32) {
        self.data[(c * self.height + v) * self.width + u] = value;
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut data = vec![0.0; 3 * w * h];
        for (i, px) in img.pixels().enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = f32::from(px[c]);
            }
        }
        Self {
            channels: 3,
            height: h,
            width: w,
            data,
        }
    }

    /// Reads any supported image file as RGB in `[0, 255]`.
    pub fn load_rgb(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// Maps `[0, 255]` to `[-1, 1]`.
    pub fn to_signed(&self) -> Self {
        self.map(|v| v / 127.5 - 1.0)
    }

    /// Maps `[-1, 1]` to `[0, 255]` without rounding.
    pub fn to_unsigned(&self) -> Self {
        self.map(|v| (v + 1.0) * 127.5)
    }

    /// Maps `[-1, 1]` to the 8-bit export grid, still stored as reals.
    pub fn quantized(&self) -> Self {
        self.map(|v| ((v + 1.0) * 127.5).round().clamp(0.0, 255.0))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Left-right mirror.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for (src, dst) in self
            .data
            .chunks_exact(self.width)
            .zip(out.data.chunks_exact_mut(self.width))
        {
            for (d, s) in dst.iter_mut().zip(src.iter().rev()) {
                *d = *s;
            }
        }
        out
    }

    /// Box-filter resampling: each output pixel is the area-weighted mean of
    /// the source pixels it covers.
    pub fn resize_area(&self, new_width: usize, new_height: usize) -> Result<Self> {
        if new_width == 0 || new_height == 0 {
            return Err(Error::InvalidConfig(format!(
                "resize target must be positive, got {new_width}x{new_height}"
            )));
        }
        if new_width == self.width && new_height == self.height {
            return Ok(self.clone());
        }
        let wx = area_weights(self.width, new_width);
        let wy = area_weights(self.height, new_height);
        let mut tmp = vec![0.0f64; self.channels * self.height * new_width];
        for c in 0..self.channels {
            for v in 0..self.height {
                let row = &self.data[(c * self.height + v) * self.width..][..self.width];
                let out = &mut tmp[(c * self.height + v) * new_width..][..new_width];
                for (o, taps) in out.iter_mut().zip(&wx) {
                    *o = taps.iter().map(|&(i, w)| f64::from(row[i]) * w).sum();
                }
            }
        }
        let mut data = vec![0.0f32; self.channels * new_height * new_width];
        for c in 0..self.channels {
            for (nv, taps) in wy.iter().enumerate() {
                for u in 0..new_width {
                    let acc: f64 = taps
                        .iter()
                        .map(|&(v, w)| tmp[(c * self.height + v) * new_width + u] * w)
                        .sum();
                    data[(c * new_height + nv) * new_width + u] = acc as f32;
                }
            }
        }
        Ok(Self {
            channels: self.channels,
            height: new_height,
            width: new_width,
            data,
        })
    }

    /// `(1, C, H, W)` tensor.
    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(
            &self.data,
            (1, self.channels, self.height, self.width),
            device,
        )?)
    }

    /// Accepts `(C, H, W)` or `(1, C, H, W)`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.rank() {
            4 if t.dim(0)? == 1 => t.squeeze(0)?,
            3 => t.clone(),
            _ => {
                return Err(Error::Shape(format!(
                    "expected a single image tensor, got {:?}",
                    t.dims()
                )))
            }
        };
        let (c, h, w) = t.dims3()?;
        let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Self::new(c, h, w, data)
    }

    /// Stacks images of identical shape into `(N, C, H, W)`.
    pub fn stack(images: &[&Image], device: &Device) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero images".into()))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for img in images {
            if img.shape() != first.shape() {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    img.shape(),
                    first.shape()
                )));
            }
            data.extend_from_slice(&img.data);
        }
        Ok(Tensor::from_vec(
            data,
            (images.len(), first.channels, first.height, first.width),
            device,
        )?)
    }

    /// Writes an 8-bit PNG from `[0, 255]` samples (1 or 3 channels) using a
    /// write-then-rename so a failed run leaves no partial file.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let plane = self.height * self.width;
        let byte = |v: f32| v.round().clamp(0.0, 255.0) as u8;
        let mut bytes = Vec::new();
        let encoded = match self.channels {
            1 => {
                let buf: Vec<u8> = self.data.iter().map(|&v| byte(v)).collect();
                let img: GrayImage = ImageBuffer::from_raw(w, h, buf).expect("sized buffer");
                img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
            }
            3 => {
                let mut buf = Vec::with_capacity(3 * plane);
                for i in 0..plane {
                    for c in 0..3 {
                        buf.push(byte(self.data[c * plane + i]));
                    }
                }
                let img: RgbImage = ImageBuffer::from_raw(w, h, buf).expect("sized buffer");
                img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
            }
            n => return Err(Error::Shape(format!("cannot encode {n}-channel image"))),
        };
        encoded.map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        write_atomic(path, &bytes)
    }

    /// Concatenates images of equal height left to right.
    pub fn hconcat(parts: &[&Image]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
        let (c, h) = (first.channels, first.height);
        if parts.iter().any(|p| p.channels != c || p.height != h) {
            return Err(Error::Shape("hconcat needs equal channels and height".into()));
        }
        let width: usize = parts.iter().map(|p| p.width).sum();
        let mut out = Image::filled(c, h, width, 0.0);
        let mut offset = 0;
        for p in parts {
            for ch in 0..c {
                for v in 0..h {
                    for u in 0..p.width {
                        out.set(ch, v, offset + u, p.get(ch, v, u));
                    }
                }
            }
            offset += p.width;
        }
        Ok(out)
    }
}

/// For each output index, the source indices it overlaps and their weights.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let lo = i as f64 * scale;
            let hi = (i + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|j| {
                    let overlap = (hi.min((j + 1) as f64) - lo.max(j as f64)).max(0.0);
                    (overlap > 0.0).then_some((j, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Writes `bytes` to a hidden sibling file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.partial"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Image {
        let data = (0..c * h * w).map(|i| i as f32).collect();
        Image::new(c, h, w, data).unwrap()
    }

    #[test]
    fn integer_downsample_averages_blocks() {
        let img = ramp(1, 2, 4);
        // rows: [0 1 2 3] [4 5 6 7]
        let small = img.resize_area(2, 1).unwrap();
        assert_eq!(small.data(), &[2.5, 4.5]);
    }

    #[test]
    fn fractional_resize_preserves_mean() {
        let img = ramp(3, 7, 5);
        let small = img.resize_area(3, 4).unwrap();
        let mean = |i: &Image| i.data().iter().map(|&v| f64::from(v)).sum::<f64>() / i.data().len() as f64;
        assert!((mean(&img) - mean(&small)).abs() < 1e-4);
    }

    #[test]
    fn mirror_is_involution() {
        let img = ramp(3, 4, 5);
        assert_ne!(img.mirrored(), img);
        assert_eq!(img.mirrored().mirrored(), img);
        assert_eq!(img.mirrored().get(1, 2, 0), img.get(1, 2, 4));
    }

    #[test]
    fn tensor_round_trip() {
        let img = ramp(3, 4, 5);
        let t = img.to_tensor(&Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[1, 3, 4, 5]);
        assert_eq!(Image::from_tensor(&t).unwrap(), img);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = ramp(3, 4, 5);
        img.save_png(&path).unwrap();
        assert_eq!(Image::load_rgb(&path).unwrap(), img);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
