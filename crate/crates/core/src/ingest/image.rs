use std::io::Cursor;
use std::path::Path;

use super::IngestError;

/// Single-channel image with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self, IngestError> {
        if height * width != pixels.len() {
            return Err(IngestError::Image(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(IngestError::Image(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            pixels: vec![0.0; height * width],
        }
    }

    /// Clamps each value into `[0, 1]`; NaN becomes 0.
    pub fn from_clamped(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self, IngestError> {
        let pixels = pixels
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self::new(height, width, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.pixels[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum()
    }
}

/// Decodes an 8- or 16-bit grayscale, RGB or palette PNG. Colour is reduced
/// by luminance `0.299 R + 0.587 G + 0.114 B`; alpha is ignored.
pub fn decode_png(bytes: &[u8]) -> Result<GrayImage, IngestError> {
    let bad = |e: png::DecodingError| IngestError::Image(format!("undecodable PNG: {e}"));
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| IngestError::Image("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let (w, h) = (info.width as usize, info.height as usize);
    if w == 0 || h == 0 {
        return Err(IngestError::Image("zero-dimension image".into()));
    }
    let channels = info.color_type.samples();
    let stride = info.line_size;
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &buf[y * stride..y * stride + w * channels];
        for px in row.chunks_exact(channels) {
            let v = match channels {
                1 | 2 => px[0] as f32 / 255.0,
                _ => luminance(px[0], px[1], px[2]),
            };
            pixels.push(v.clamp(0.0, 1.0));
        }
    }
    GrayImage::new(h, w, pixels)
}

pub fn luminance(r: u8, g: u8, b: u8) -> f32 {
    ((0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0) as f32
}

/// 8-bit grayscale PNG; values are rounded to the nearest level.
pub fn encode_png(image: &GrayImage) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let bytes: Vec<u8> = image.pixels.iter().map(|&v| (v * 255.0).round() as u8).collect();
        // Writing to a Vec cannot fail for a well-formed header.
        let mut writer = enc.write_header().expect("in-memory PNG header");
        writer.write_image_data(&bytes).expect("in-memory PNG data");
    }
    out
}

pub fn save_png(path: &Path, image: &GrayImage) -> Result<(), IngestError> {
    std::fs::write(path, encode_png(image)).map_err(|e| IngestError::io(path, e))
}

/// Reads a PNG and letterboxes it to `target_size` square.
pub fn load_image(path: &Path, target_size: usize) -> Result<GrayImage, IngestError> {
    let bytes = std::fs::read(path).map_err(|e| IngestError::io(path, e))?;
    let img = decode_png(&bytes).map_err(|e| match e {
        IngestError::Image(m) => IngestError::Image(format!("{}: {m}", path.display())),
        other => other,
    })?;
    letterbox(&img, target_size)
}

/// Scales the longer side to `target` preserving aspect ratio and centres
/// the result on a black square. Padding pixels are exactly 0.
pub fn letterbox(image: &GrayImage, target: usize) -> Result<GrayImage, IngestError> {
    if target == 0 {
        return Err(IngestError::Image("target size must be >= 1".into()));
    }
    let (h, w) = (image.height, image.width);
    if h == 0 || w == 0 {
        return Err(IngestError::Image("zero-dimension image".into()));
    }
    let scale = target as f64 / h.max(w) as f64;
    let nh = ((h as f64 * scale).round() as usize).clamp(1, target);
    let nw = ((w as f64 * scale).round() as usize).clamp(1, target);
    let scaled = resize(image, nh, nw);
    let (top, left) = ((target - nh) / 2, (target - nw) / 2);
    let mut out = GrayImage::zeros(target, target);
    for y in 0..nh {
        let src = &scaled.pixels[y * nw..(y + 1) * nw];
        out.pixels[(top + y) * target + left..(top + y) * target + left + nw].copy_from_slice(src);
    }
    Ok(out)
}

/// Separable resize: area averaging on shrinking axes, bilinear on growing ones.
pub fn resize(image: &GrayImage, height: usize, width: usize) -> GrayImage {
    let wx = axis_weights(image.width, width);
    let wy = axis_weights(image.height, height);
    let mut tmp = vec![0.0f64; image.height * width];
    for y in 0..image.height {
        let row = &image.pixels[y * image.width..(y + 1) * image.width];
        for (ox, taps) in wx.iter().enumerate() {
            tmp[y * width + ox] = taps.iter().map(|&(i, c)| row[i] as f64 * c).sum();
        }
    }
    let mut pixels = vec![0.0f32; height * width];
    for (oy, taps) in wy.iter().enumerate() {
        for ox in 0..width {
            let v: f64 = taps.iter().map(|&(i, c)| tmp[i * width + ox] * c).sum();
            pixels[oy * width + ox] = v.clamp(0.0, 1.0) as f32;
        }
    }
    GrayImage { height, width, pixels }
}

/// Per output index, the source taps and their weights (summing to 1).
fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    if dst <= src {
        let ratio = src as f64 / dst as f64;
        (0..dst)
            .map(|o| {
                let (a, b) = (o as f64 * ratio, (o + 1) as f64 * ratio);
                let mut taps = Vec::new();
                let mut i = a.floor() as usize;
                while (i as f64) < b && i < src {
                    let cover = (b.min(i as f64 + 1.0) - a.max(i as f64)) / ratio;
                    if cover > 0.0 {
                        taps.push((i, cover));
                    }
                    i += 1;
                }
                taps
            })
            .collect()
    } else {
        let ratio = src as f64 / dst as f64;
        (0..dst)
            .map(|o| {
                let c = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = c.floor() as usize;
                let f = c - i0 as f64;
                if f == 0.0 || i0 + 1 >= src {
                    vec![(i0, 1.0)]
                } else {
                    vec![(i0, 1.0 - f), (i0 + 1, f)]
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> GrayImage {
        let px = (0..h * w).map(|i| (i % 251) as f32 / 250.0).collect();
        GrayImage::new(h, w, px).unwrap()
    }

    #[test]
    fn same_size_is_identity() {
        let img = ramp(32, 32);
        assert_eq!(letterbox(&img, 32).unwrap(), img);
    }

    #[test]
    fn wide_padding_geometry() {
        // 512 tall, 256 wide: full height, 128-pixel bands left and right.
        let img = GrayImage::new(512, 256, vec![1.0; 512 * 256]).unwrap();
        let out = letterbox(&img, 512).unwrap();
        for y in [0, 200, 511] {
            assert_eq!(out.get(y, 127), 0.0);
            assert_eq!(out.get(y, 128), 1.0);
            assert_eq!(out.get(y, 383), 1.0);
            assert_eq!(out.get(y, 384), 0.0);
        }
        assert_eq!(out.sum(), (512 * 256) as f64);
    }

    #[test]
    fn downscale_preserves_mean_intensity() {
        let white = GrayImage::new(100, 100, vec![1.0; 10_000]).unwrap();
        let out = letterbox(&white, 64).unwrap();
        let expected = 64.0 * 64.0;
        assert!((out.sum() - expected).abs() <= 0.01 * expected);
    }

    #[test]
    fn upscale_is_bilinear_and_bounded() {
        let img = GrayImage::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let out = resize(&img, 4, 4);
        assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        // corners clamp to the source corners
        assert_eq!(out.get(0, 0), 0.0);
        assert_eq!(out.get(0, 3), 1.0);
        // (0.5 + 1) * 0.5 - 0.5 = 0.25 along each axis
        assert!((out.get(1, 1) - 0.375).abs() < 1e-6);
    }

    #[test]
    fn png_roundtrip_is_exact_on_8bit_levels() {
        let px = (0..30 * 20).map(|i| (i % 256) as f32 / 255.0).collect();
        let img = GrayImage::new(30, 20, px).unwrap();
        let back = decode_png(&encode_png(&img)).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn rgb_uses_luminance() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[255, 0, 0, 10, 200, 30]).unwrap();
        }
        let img = decode_png(&out).unwrap();
        assert!((img.get(0, 0) - 0.299).abs() < 1e-6);
        assert!((img.get(0, 1) - luminance(10, 200, 30)).abs() < 1e-6);
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(matches!(decode_png(b"not a png"), Err(IngestError::Image(_))));
    }

    proptest::proptest! {
        #[test]
        fn letterbox_never_crops(h in 1usize..90, w in 1usize..90, target in 8usize..80) {
            // mean intensity of an all-white source survives within 2%
            let img = GrayImage::new(h, w, vec![1.0; h * w]).unwrap();
            let out = letterbox(&img, target).unwrap();
            let scale = target as f64 / h.max(w) as f64;
            let nh = ((h as f64 * scale).round() as usize).clamp(1, target);
            let nw = ((w as f64 * scale).round() as usize).clamp(1, target);
            let expected = (nh * nw) as f64;
            proptest::prop_assert!((out.sum() - expected).abs() <= 0.02 * expected);
            proptest::prop_assert_eq!(out.height(), target);
            proptest::prop_assert_eq!(out.width(), target);
        }
    }
}
