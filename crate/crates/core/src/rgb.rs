/// Float RGB image, channel values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    /// From interleaved 8-bit RGB bytes. Panics if the buffer is short.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Self {
        assert!(bytes.len() >= width * height * 3);
        let data = bytes
            .chunks_exact(3)
            .take(width * height)
            .map(|c| [c[0] as f32 / 255.0, c[1] as f32 / 255.0, c[2] as f32 / 255.0])
            .collect();
        Self { width, height, data }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f32; 3]) {
        self.data[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.data
    }

    /// Euclidean colour distance between two pixels scaled to `[0, 1]`.
    #[inline]
    pub fn color_distance(a: [f32; 3], b: [f32; 3]) -> f64 {
        let d: f32 = (0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum();
        (d as f64).sqrt() / 3f64.sqrt()
    }
}

#[cfg(feature = "io")]
mod io {
    use std::path::Path;

    use super::RgbImage;

    impl RgbImage {
        pub fn load(path: impl AsRef<Path>) -> Result<Self, image::ImageError> {
            let img = image::open(path)?.to_rgb8();
            let (w, h) = img.dimensions();
            Ok(Self::from_rgb8(w as usize, h as usize, img.as_raw()))
        }

        pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), image::ImageError> {
            image::save_buffer(
                path,
                &self.to_rgb8(),
                self.width as u32,
                self.height as u32,
                image::ExtendedColorType::Rgb8,
            )
        }

        pub fn encode_png(&self) -> Result<Vec<u8>, image::ImageError> {
            let mut out = std::io::Cursor::new(Vec::new());
            image::write_buffer_with_format(
                &mut out,
                &self.to_rgb8(),
                self.width as u32,
                self.height as u32,
                image::ExtendedColorType::Rgb8,
                image::ImageFormat::Png,
            )?;
            Ok(out.into_inner())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb8_round_trip() {
        let bytes: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
        let img = RgbImage::from_rgb8(2, 2, &bytes);
        assert_eq!(img.to_rgb8(), bytes);
    }

    #[test]
    fn color_distance_is_normalized() {
        assert!((RgbImage::color_distance([0.0; 3], [1.0; 3]) - 1.0).abs() < 1e-6);
    }
}
