//! RGB textures: bilinear lookup, PNG I/O and the procedural patterns used
//! by the built-in scenes.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SimError;

#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    width: usize,
    height: usize,
    /// Row-major, row 0 at `v = 0`.
    pixels: Vec<[u8; 3]>,
}

fn to_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

impl Texture {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self, SimError> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(SimError::InvalidScene(format!(
                "texture of {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, color: Vector3<f64>) -> Self {
        let px = [to_u8(color.x), to_u8(color.y), to_u8(color.z)];
        Self { width, height, pixels: vec![px; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> Vector3<f64> {
        let p = self.pixels[y * self.width + x];
        Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0
    }

    /// Bilinear lookup with pixel centers at `(i + 0.5) / width`; `u, v` are
    /// clamped to [0, 1].
    pub fn sample(&self, u: f64, v: f64) -> Vector3<f64> {
        let x = (u.clamp(0.0, 1.0) * self.width as f64 - 0.5).clamp(0.0, (self.width - 1) as f64);
        let y = (v.clamp(0.0, 1.0) * self.height as f64 - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let top = self.pixel(x0, y0) * (1.0 - fx) + self.pixel(x1, y0) * fx;
        let bottom = self.pixel(x0, y1) * (1.0 - fx) + self.pixel(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    fn paint_disc(&mut self, cx: f64, cy: f64, r: f64, color: [u8; 3]) {
        let x_lo = ((cx - r).floor().max(0.0)) as usize;
        let x_hi = ((cx + r).ceil() as usize).min(self.width - 1);
        let y_lo = ((cy - r).floor().max(0.0)) as usize;
        let y_hi = ((cy + r).ceil() as usize).min(self.height - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy <= r * r {
                    self.pixels[y * self.width + x] = color;
                }
            }
        }
    }

    fn paint_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, color: [u8; 3]) {
        for y in y0..(y0 + h).min(self.height) {
            for x in x0..(x0 + w).min(self.width) {
                self.pixels[y * self.width + x] = color;
            }
        }
    }

    /// Square checkerboard with `squares` cells per side.
    pub fn checkerboard(size: usize, squares: usize, a: Vector3<f64>, b: Vector3<f64>) -> Self {
        let (pa, pb) = ([to_u8(a.x), to_u8(a.y), to_u8(a.z)], [to_u8(b.x), to_u8(b.y), to_u8(b.z)]);
        let cell = (size / squares.max(1)).max(1);
        let pixels = (0..size * size)
            .map(|i| if ((i % size) / cell + (i / size) / cell) % 2 == 0 { pa } else { pb })
            .collect();
        Self { width: size, height: size, pixels }
    }

    /// Uniform background with one red disc of radius `r` (texture units,
    /// i.e. fraction of the width) centered at `(u, v)`.
    pub fn red_dot(size: usize, background: Vector3<f64>, u: f64, v: f64, r: f64) -> Self {
        let mut t = Self::filled(size, size, background);
        let s = size as f64;
        t.paint_disc(u * s, v * s, r * s, [220, 30, 30]);
        t
    }

    /// Dense random collage of colored discs and rectangles over a mid-tone
    /// background, slightly blurred; gives strong intensity gradients at
    /// centimeter scale.
    pub fn rich(size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = Self::filled(size, size, Vector3::new(0.55, 0.5, 0.45));
        let s = size as f64;
        let color = |rng: &mut ChaCha8Rng| [rng.random::<u8>(), rng.random::<u8>(), rng.random::<u8>()];
        for _ in 0..(size * size / 2600) {
            let c = color(&mut rng);
            if rng.random_bool(0.6) {
                let r = rng.random_range(0.004..0.03) * s;
                t.paint_disc(rng.random_range(0.0..s), rng.random_range(0.0..s), r, c);
            } else {
                let w = (rng.random_range(0.005..0.05) * s) as usize + 1;
                let h = (rng.random_range(0.005..0.05) * s) as usize + 1;
                t.paint_rect(rng.random_range(0..size), rng.random_range(0..size), w, h, c);
            }
        }
        // Soften edges to about a centimeter at the default size, so the
        // intensity field is locally linear at registration voxel scales.
        t.blurred(4.0 * s as f32 / 1024.0)
    }

    /// Gaussian blur with standard deviation `sigma` pixels.
    pub fn blurred(&self, sigma: f32) -> Self {
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, raw).expect("pixel buffer matches dimensions");
        let out = image::imageops::blur(&img, sigma);
        Self { width: self.width, height: self.height, pixels: out.pixels().map(|p| p.0).collect() }
    }

    pub fn save_png(&self, path: &Path) -> Result<(), SimError> {
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("pixel buffer matches dimensions");
        img.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| SimError::Texture { path: path.display().to_string(), reason: e.to_string() })
    }

    pub fn load_png(path: &Path) -> Result<Self, SimError> {
        let img = image::open(path)
            .map_err(|e| SimError::Texture { path: path.display().to_string(), reason: e.to_string() })?
            .to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let pixels = img.pixels().map(|p| p.0).collect();
        Self::new(w, h, pixels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_hits_pixel_centers_and_midpoints() {
        let t = Texture::new(2, 1, vec![[0, 0, 0], [255, 255, 255]]).unwrap();
        assert_eq!(t.sample(0.25, 0.5), Vector3::zeros());
        assert_eq!(t.sample(0.75, 0.5), Vector3::repeat(1.0));
        assert!((t.sample(0.5, 0.5) - Vector3::repeat(0.5)).norm() < 1e-12);
        assert_eq!(t.sample(-3.0, 9.0), Vector3::zeros());
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let t = Texture::rich(64, 3);
        let p = dir.path().join("t.png");
        t.save_png(&p).unwrap();
        assert_eq!(Texture::load_png(&p).unwrap(), t);
    }

    #[test]
    fn rich_texture_is_deterministic_and_varied() {
        let a = Texture::rich(256, 11);
        assert_eq!(a, Texture::rich(256, 11));
        assert_ne!(a, Texture::rich(256, 12));
        let distinct: std::collections::HashSet<[u8; 3]> = a.pixels.iter().copied().collect();
        assert!(distinct.len() > 20);
    }

    #[test]
    fn size_mismatch_rejected() {
        assert!(Texture::new(2, 2, vec![[0; 3]; 3]).is_err());
    }
}
