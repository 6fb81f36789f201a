use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::ingest::GrayImage;

/// Boolean image, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self, PreprocessError> {
        if height * width != bits.len() {
            return Err(PreprocessError::Params(format!(
                "{height}x{width} mask needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Self { height, width, bits })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Foreground 1, background 0.
    pub fn to_image(&self) -> GrayImage {
        let px = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        GrayImage::new(self.height, self.width, px).expect("dimensions match")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    pub blur_kernel: usize,
    pub blur_sigma: f64,
    pub threshold: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            blur_kernel: 5,
            blur_sigma: 1.0,
            threshold: 0.08,
        }
    }
}

impl MaskParams {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        check_blur(self.blur_kernel, self.blur_sigma)?;
        check_threshold(self.threshold)
    }
}

fn check_blur(kernel: usize, sigma: f64) -> Result<(), PreprocessError> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(PreprocessError::Params(format!("blur kernel {kernel} must be odd and >= 1")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(PreprocessError::Params(format!("blur sigma {sigma} must be > 0")));
    }
    Ok(())
}

fn check_threshold(t: f64) -> Result<(), PreprocessError> {
    if !(t > 0.0 && t < 1.0) {
        return Err(PreprocessError::Params(format!("threshold {t} must be in (0, 1)")));
    }
    Ok(())
}

/// Normalised 1-D Gaussian weights for offsets `-k/2 ..= k/2`.
pub fn gaussian_kernel(kernel: usize, sigma: f64) -> Result<Vec<f64>, PreprocessError> {
    check_blur(kernel, sigma)?;
    let r = (kernel / 2) as f64;
    let w: Vec<f64> = (0..kernel)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / s).collect())
}

/// Separable Gaussian blur with edge replication at the border.
pub fn gaussian_blur(img: &GrayImage, kernel: usize, sigma: f64) -> Result<GrayImage, PreprocessError> {
    let w = gaussian_kernel(kernel, sigma)?;
    let r = kernel / 2;
    let (h, wd) = (img.height(), img.width());
    let src = img.pixels();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f64; h * wd];
    for y in 0..h {
        for x in 0..wd {
            tmp[y * wd + x] = w
                .iter()
                .enumerate()
                .map(|(i, &c)| c * src[y * wd + clamp(x as isize + i as isize - r as isize, wd)] as f64)
                .sum();
        }
    }
    let mut out = vec![0.0f32; h * wd];
    for y in 0..h {
        for x in 0..wd {
            let v: f64 = w
                .iter()
                .enumerate()
                .map(|(i, &c)| c * tmp[clamp(y as isize + i as isize - r as isize, h) * wd + x])
                .sum();
            out[y * wd + x] = v as f32;
        }
    }
    Ok(GrayImage::from_clamped(h, wd, out)?)
}

/// True where the pixel is strictly above `threshold`.
pub fn binarize(img: &GrayImage, threshold: f64) -> Result<BinaryMask, PreprocessError> {
    check_threshold(threshold)?;
    let bits = img.pixels().iter().map(|&v| v as f64 > threshold).collect();
    BinaryMask::new(img.height(), img.width(), bits)
}

/// Blur then threshold.
pub fn mask_pipeline(img: &GrayImage, params: &MaskParams) -> Result<BinaryMask, PreprocessError> {
    params.validate()?;
    let blurred = gaussian_blur(img, params.blur_kernel, params.blur_sigma)?;
    binarize(&blurred, params.threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{synth_generate, SynthConfig};

    fn noise(h: usize, w: usize, seed: u64) -> GrayImage {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(h, w, (0..h * w).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn constant_image_unchanged() {
        let img = GrayImage::new(9, 7, vec![0.5; 63]).unwrap();
        let out = gaussian_blur(&img, 5, 1.0).unwrap();
        assert!(out.pixels().iter().all(|&v| (v - 0.5).abs() < 1e-7));
    }

    #[test]
    fn impulse_center_weight() {
        let mut img = GrayImage::zeros(7, 7);
        img.set(3, 3, 1.0);
        let out = gaussian_blur(&img, 3, 1.0).unwrap();
        // direct 2-D formula: exp(0) / (sum over the 3x3 grid of exp(-(dx^2+dy^2)/2))
        let mut z = 0.0;
        for dy in -1i32..=1 {
            for dx in -1i32..=1 {
                z += (-((dx * dx + dy * dy) as f64) / 2.0).exp();
            }
        }
        assert!((out.get(3, 3) as f64 - 1.0 / z).abs() < 1e-7);
    }

    #[test]
    fn interior_mass_conserved_against_dense_oracle() {
        let mut img = GrayImage::zeros(24, 24);
        let n = noise(12, 12, 5);
        for y in 0..12 {
            for x in 0..12 {
                img.set(y + 6, x + 6, n.get(y, x));
            }
        }
        let out = gaussian_blur(&img, 5, 1.3).unwrap();
        // dense 2-D oracle at a few interior pixels
        let k = gaussian_kernel(5, 1.3).unwrap();
        for (y, x) in [(8, 8), (12, 15), (17, 10)] {
            let mut v = 0.0;
            for i in 0..5 {
                for j in 0..5 {
                    v += k[i] * k[j] * img.get(y + i - 2, x + j - 2) as f64;
                }
            }
            assert!((out.get(y, x) as f64 - v).abs() < 1e-6);
        }
        assert!((out.sum() - img.sum()).abs() < 1e-4);
    }

    #[test]
    fn parameter_errors() {
        let img = GrayImage::zeros(4, 4);
        assert!(gaussian_blur(&img, 4, 1.0).is_err());
        assert!(gaussian_blur(&img, 3, 0.0).is_err());
        assert!(binarize(&img, 1.0).is_err());
        assert!(binarize(&img, 0.0).is_err());
    }

    #[test]
    fn binarize_is_strict() {
        let img = GrayImage::new(1, 3, vec![0.5, 0.50001, 0.0]).unwrap();
        assert_eq!(binarize(&img, 0.5).unwrap().bits(), &[false, true, false]);
        assert_eq!(binarize(&GrayImage::zeros(5, 5), 0.1).unwrap().count(), 0);
    }

    #[test]
    fn random_binarize_matches_elementwise() {
        let img = noise(16, 16, 2);
        let m = binarize(&img, 0.3).unwrap();
        for (b, &v) in m.bits().iter().zip(img.pixels()) {
            assert_eq!(*b, v > 0.3);
        }
    }

    #[test]
    fn synthetic_foreground_retained() {
        let (images, _) = synth_generate(&SynthConfig::with_default_classes(4, 5, 64, 3)).unwrap();
        for img in &images {
            let m = mask_pipeline(img, &MaskParams::default()).unwrap();
            let kept = img
                .pixels()
                .iter()
                .zip(m.bits())
                .filter(|(&v, &b)| v > 0.0 && b)
                .count();
            assert!(kept as f64 >= 0.95 * img.sum());
            assert_eq!(m, mask_pipeline(img, &MaskParams::default()).unwrap());
        }
    }
}
