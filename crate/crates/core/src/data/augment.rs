use crate::tensor::Rng;

use super::{DataError, SampleShape};

/// Random view transformations. Crop and flip only apply to image-shaped
/// samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationConfig {
    pub crop_lo: f64,
    pub crop_hi: f64,
    pub flip_prob: f64,
    pub pixel_noise_std: f64,
    pub scale_lo: f64,
    pub scale_hi: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            crop_lo: 0.6,
            crop_hi: 1.0,
            flip_prob: 0.5,
            pixel_noise_std: 0.1,
            scale_lo: 0.8,
            scale_hi: 1.2,
        }
    }
}

impl AugmentationConfig {
    /// Leaves every sample untouched.
    pub fn identity() -> Self {
        Self {
            crop_lo: 1.0,
            crop_hi: 1.0,
            flip_prob: 0.0,
            pixel_noise_std: 0.0,
            scale_lo: 1.0,
            scale_hi: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidAugmentation(m));
        if !(self.crop_lo > 0.0 && self.crop_lo <= self.crop_hi && self.crop_hi <= 1.0) {
            return bad(format!(
                "crop range [{}, {}] must satisfy 0 < lo <= hi <= 1",
                self.crop_lo, self.crop_hi
            ));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob {} outside [0, 1]", self.flip_prob));
        }
        if !(self.pixel_noise_std >= 0.0 && self.pixel_noise_std.is_finite()) {
            return bad(format!("pixel_noise_std {} must be >= 0", self.pixel_noise_std));
        }
        if !(self.scale_lo <= self.scale_hi && self.scale_lo.is_finite() && self.scale_hi.is_finite())
        {
            return bad(format!(
                "channel scale range [{}, {}] must satisfy lo <= hi",
                self.scale_lo, self.scale_hi
            ));
        }
        Ok(())
    }
}

/// Produces one augmented view of `sample`.
///
/// Steps, in order: crop and nearest-neighbour resize back to full size,
/// horizontal flip, per-channel scaling, additive Gaussian noise. A vector
/// sample is treated as a single channel.
pub fn augment(sample: &[f32], shape: SampleShape, cfg: &AugmentationConfig, rng: &mut Rng) -> Vec<f32> {
    let mut out = sample.to_vec();
    let (channels, plane) = match shape {
        SampleShape::Vector(d) => (1, d as usize),
        SampleShape::Image { c, h, w } => {
            let (c, h, w) = (c as usize, h as usize, w as usize);
            crop_resize(&mut out, sample, c, h, w, cfg, rng);
            if rng.bernoulli(cfg.flip_prob) {
                flip_horizontal(&mut out, c, h, w);
            }
            (c, h * w)
        }
    };
    for ch in 0..channels {
        let s = rng.uniform(cfg.scale_lo, cfg.scale_hi) as f32;
        if s != 1.0 {
            out[ch * plane..(ch + 1) * plane].iter_mut().for_each(|v| *v *= s);
        }
    }
    if cfg.pixel_noise_std > 0.0 {
        for v in &mut out {
            *v += (rng.normal() * cfg.pixel_noise_std) as f32;
        }
    }
    out
}

fn crop_resize(
    out: &mut [f32],
    src: &[f32],
    c: usize,
    h: usize,
    w: usize,
    cfg: &AugmentationConfig,
    rng: &mut Rng,
) {
    let f = rng.uniform(cfg.crop_lo, cfg.crop_hi);
    let ch = ((f * h as f64).round() as usize).clamp(1, h.max(1));
    let cw = ((f * w as f64).round() as usize).clamp(1, w.max(1));
    let y0 = rng.below(h - ch + 1);
    let x0 = rng.below(w - cw + 1);
    if ch == h && cw == w {
        return;
    }
    for k in 0..c {
        for y in 0..h {
            let sy = y0 + y * ch / h;
            for x in 0..w {
                let sx = x0 + x * cw / w;
                out[(k * h + y) * w + x] = src[(k * h + sy) * w + sx];
            }
        }
    }
}

fn flip_horizontal(data: &mut [f32], c: usize, h: usize, w: usize) {
    for row in data.chunks_exact_mut(w).take(c * h) {
        row.reverse();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const IMG: SampleShape = SampleShape::Image { c: 2, h: 3, w: 4 };

    fn image() -> Vec<f32> {
        (0..24).map(|i| i as f32).collect()
    }

    #[test]
    fn identity_config_is_identity() {
        let cfg = AugmentationConfig::identity();
        let mut rng = Rng::seed_from_u64(1);
        assert_eq!(augment(&image(), IMG, &cfg, &mut rng), image());
        let v = vec![1.5f32, -2.0, 0.25];
        assert_eq!(augment(&v, SampleShape::Vector(3), &cfg, &mut rng), v);
    }

    #[test]
    fn forced_flip_twice_is_identity() {
        let cfg = AugmentationConfig {
            flip_prob: 1.0,
            ..AugmentationConfig::identity()
        };
        let mut rng = Rng::seed_from_u64(2);
        let once = augment(&image(), IMG, &cfg, &mut rng);
        assert_ne!(once, image());
        assert_eq!(&once[..4], &[3.0, 2.0, 1.0, 0.0]);
        assert_eq!(augment(&once, IMG, &cfg, &mut rng), image());
    }

    #[test]
    fn deterministic_and_shape_preserving() {
        let cfg = AugmentationConfig::default();
        let a = augment(&image(), IMG, &cfg, &mut Rng::seed_from_u64(9));
        let b = augment(&image(), IMG, &cfg, &mut Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.len(), 24);
        for seed in 0..50 {
            let v = augment(&[1.0; 7], SampleShape::Vector(7), &cfg, &mut Rng::seed_from_u64(seed));
            assert_eq!(v.len(), 7);
        }
    }

    #[test]
    fn crop_resize_picks_from_source_window() {
        let cfg = AugmentationConfig {
            crop_lo: 0.5,
            crop_hi: 0.5,
            ..AugmentationConfig::identity()
        };
        let src: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let shape = SampleShape::Image { c: 1, h: 4, w: 4 };
        let out = augment(&src, shape, &cfg, &mut Rng::seed_from_u64(4));
        // A 2x2 window upsampled: every value appears in a 2x2 block.
        for y in (0..4).step_by(2) {
            for x in (0..4).step_by(2) {
                let v = out[y * 4 + x];
                assert_eq!(out[y * 4 + x + 1], v);
                assert_eq!(out[(y + 1) * 4 + x], v);
            }
        }
        assert_eq!(out[2] - out[0], 1.0);
    }

    #[test]
    fn validation() {
        assert!(AugmentationConfig::default().validate().is_ok());
        let bad = [
            AugmentationConfig { crop_lo: 0.0, ..Default::default() },
            AugmentationConfig { crop_lo: 0.9, crop_hi: 0.8, ..Default::default() },
            AugmentationConfig { flip_prob: 1.5, ..Default::default() },
            AugmentationConfig { pixel_noise_std: -0.1, ..Default::default() },
            AugmentationConfig { scale_lo: 2.0, scale_hi: 1.0, ..Default::default() },
        ];
        for b in bad {
            assert!(b.validate().is_err(), "{b:?}");
        }
    }
}
