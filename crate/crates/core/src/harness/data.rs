//! Image ingestion, the bundled synthetic texture set, and crop sampling.

use std::path::{Path, PathBuf};

use fgs_autograd::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::DOWNSAMPLE;
use crate::error::{Error, Result};
use crate::transforms::ImageBatch;

/// One RGB image, planar `3×H×W`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn from_rgb(name: impl Into<String>, rgb: &image::RgbImage) -> Self {
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let mut data = vec![0f32; 3 * h * w];
        for (x, y, p) in rgb.enumerate_pixels() {
            for c in 0..3 {
                data[c * h * w + y as usize * w + x as usize] = p[c] as f32 / 255.0;
            }
        }
        Self {
            name: name.into(),
            height: h,
            width: w,
            data,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rgb = image::open(path)?.to_rgb8();
        let name = path
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        Ok(Self::from_rgb(name, &rgb))
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Self {
        assert!(
            top + h <= self.height && left + w <= self.width,
            "crop outside the image"
        );
        let mut data = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for y in top..top + h {
                let row = c * self.height * self.width + y * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + w]);
            }
        }
        Self {
            name: self.name.clone(),
            height: h,
            width: w,
            data,
        }
    }

    /// Largest centered crop whose sides are multiples of 16. Returns `None`
    /// when the image already conforms.
    pub fn center_crop16(&self) -> Result<Option<Self>> {
        let (h, w) = (
            self.height / DOWNSAMPLE * DOWNSAMPLE,
            self.width / DOWNSAMPLE * DOWNSAMPLE,
        );
        if h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "{} is {}×{}, smaller than {DOWNSAMPLE} pixels",
                self.name, self.height, self.width
            )));
        }
        if (h, w) == (self.height, self.width) {
            return Ok(None);
        }
        Ok(Some(self.crop(
            (self.height - h) / 2,
            (self.width - w) / 2,
            h,
            w,
        )))
    }

    /// Center-cropped to multiples of 16, with a note on stderr when pixels
    /// were dropped.
    pub fn conformed(self) -> Result<Self> {
        match self.center_crop16()? {
            None => Ok(self),
            Some(c) => {
                eprintln!(
                    "warning: {} center-cropped from {}×{} to {}×{}",
                    self.name, self.height, self.width, c.height, c.width
                );
                Ok(c)
            }
        }
    }

    pub fn to_batch(&self) -> Result<ImageBatch<f32>> {
        ImageBatch::new(Tensor::from_vec(
            self.data.clone(),
            [1, 3, self.height, self.width],
        ))
    }

    /// Reads image `index` of an `N×3×H×W` tensor, clamping to `[0, 1]`.
    pub fn from_tensor(name: impl Into<String>, t: &Tensor<f32>, index: usize) -> Self {
        let [_, _, h, w] = t.shape();
        let n = 3 * h * w;
        Self {
            name: name.into(),
            height: h,
            width: w,
            data: t.data()[index * n..(index + 1) * n]
                .iter()
                .map(|v| v.clamp(0.0, 1.0))
                .collect(),
        }
    }

    pub fn to_rgb(&self) -> image::RgbImage {
        let plane = self.height * self.width;
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let i = y as usize * self.width + x as usize;
            let px = |c: usize| (self.data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_rgb().save(path)?;
        Ok(())
    }
}

/// A named collection of images.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// Directory path, or a `synthetic:` descriptor.
    pub id: String,
    pub images: Vec<Image>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

impl Dataset {
    /// Every PNG or JPEG in `dir`, in file-name order.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::EmptyDataset {
                path: dir.to_path_buf(),
            });
        }
        let images = paths
            .iter()
            .map(|p| Image::load(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            id: dir.display().to_string(),
            images,
        })
    }

    pub fn synthetic(count: usize, size: usize, seed: u64) -> Self {
        let images = (0..count)
            .map(|i| {
                synthetic_image(
                    format!("synthetic-{i:04}.png"),
                    size,
                    size,
                    seed.wrapping_mul(0x9e37_79b9).wrapping_add(i as u64),
                )
            })
            .collect();
        Self {
            id: format!("synthetic:{count}x{size}:seed{seed}"),
            images,
        }
    }

    /// Center-crops every image to multiples of 16.
    pub fn conformed(self) -> Result<Self> {
        let images = self
            .images
            .into_iter()
            .map(Image::conformed)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            id: self.id,
            images,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Draws `batch` uniform random `crop×crop` patches from uniformly chosen images.
    pub fn sample_batch<R: Rng>(
        &self,
        rng: &mut R,
        crop: usize,
        batch: usize,
    ) -> Result<ImageBatch<f32>> {
        if self.images.is_empty() {
            return Err(Error::EmptyDataset {
                path: PathBuf::from(&self.id),
            });
        }
        let mut data = Vec::with_capacity(batch * 3 * crop * crop);
        for _ in 0..batch {
            let img = &self.images[rng.random_range(0..self.images.len())];
            if img.height < crop || img.width < crop {
                return Err(Error::Shape(format!(
                    "{} is {}×{}, smaller than the {crop}-pixel crop",
                    img.name, img.height, img.width
                )));
            }
            let top = rng.random_range(0..=img.height - crop);
            let left = rng.random_range(0..=img.width - crop);
            data.extend(img.crop(top, left, crop, crop).data);
        }
        ImageBatch::new(Tensor::from_vec(data, [batch, 3, crop, crop]))
    }
}

/// A procedural photograph stand-in: a smooth illumination field, a few
/// flat-shaded shapes with hard edges, and oriented gratings whose
/// amplitude falls with frequency, plus light sensor noise.
pub fn synthetic_image(name: String, h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0f32; 3 * h * w];
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.8));
    let tilt: [[f32; 2]; 3] =
        std::array::from_fn(|_| [rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)]);

    struct Grating {
        fx: f32,
        fy: f32,
        phase: f32,
        amp: [f32; 3],
    }
    let gratings: Vec<Grating> = (0..6)
        .map(|_| {
            let freq = rng.random_range(0.01f32..0.25);
            let angle = rng.random_range(0.0..std::f32::consts::PI);
            let strength = 0.012 / freq.max(0.02);
            Grating {
                fx: freq * angle.cos(),
                fy: freq * angle.sin(),
                phase: rng.random_range(0.0..std::f32::consts::TAU),
                amp: std::array::from_fn(|_| strength * rng.random_range(0.3..1.0)),
            }
        })
        .collect();

    enum Shape {
        Disc { cy: f32, cx: f32, r: f32 },
        Rect { y0: f32, x0: f32, y1: f32, x1: f32 },
    }
    let shapes: Vec<(Shape, [f32; 3])> = (0..rng.random_range(2..6))
        .map(|_| {
            let (cy, cx) = (
                rng.random_range(0.0..h as f32),
                rng.random_range(0.0..w as f32),
            );
            let size = rng.random_range(0.08..0.35) * h.min(w) as f32;
            let shape = if rng.random_bool(0.5) {
                Shape::Disc { cy, cx, r: size }
            } else {
                Shape::Rect {
                    y0: cy - size,
                    x0: cx - size * 0.7,
                    y1: cy + size,
                    x1: cx + size * 0.7,
                }
            };
            (shape, std::array::from_fn(|_| rng.random_range(0.05..0.95)))
        })
        .collect();

    for y in 0..h {
        for x in 0..w {
            let (yf, xf) = (y as f32, x as f32);
            let (ny, nx) = (yf / h as f32 - 0.5, xf / w as f32 - 0.5);
            let mut px: [f32; 3] =
                std::array::from_fn(|c| base[c] + tilt[c][0] * ny + tilt[c][1] * nx);
            for (shape, color) in &shapes {
                let inside = match *shape {
                    Shape::Disc { cy, cx, r } => (yf - cy).powi(2) + (xf - cx).powi(2) <= r * r,
                    Shape::Rect { y0, x0, y1, x1 } => yf >= y0 && yf <= y1 && xf >= x0 && xf <= x1,
                };
                if inside {
                    px = std::array::from_fn(|c| 0.3 * px[c] + 0.7 * color[c]);
                }
            }
            for g in &gratings {
                let s = (g.fx * xf + g.fy * yf + g.phase).sin();
                for c in 0..3 {
                    px[c] += g.amp[c] * s;
                }
            }
            for c in 0..3 {
                let noise = rng.random_range(-0.01f32..0.01);
                data[c * h * w + y * w + x] = (px[c] + noise).clamp(0.0, 1.0);
            }
        }
    }
    Image {
        name,
        height: h,
        width: w,
        data,
    }
}
