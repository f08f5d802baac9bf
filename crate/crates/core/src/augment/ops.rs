use image::Luma;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AugmentationKind {
    Geometric,
    Brightness,
    Color,
}

/// Closed interval `[lo, hi]`; `lo == hi` pins the value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        Range { lo: v, hi: v }
    }

    fn sample(&self, g: &mut rng::Rng) -> f64 {
        let u: f64 = g.random();
        self.lo + (self.hi - self.lo) * u
    }

    fn check(&self, name: &str, min: f64, max: f64) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::InvalidAugmentation(format!(
                "{name} range [{}, {}] is empty",
                self.lo, self.hi
            )));
        }
        if self.lo < min || self.hi > max {
            return Err(Error::InvalidAugmentation(format!(
                "{name} range [{}, {}] outside [{min}, {max}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "UPPERCASE", deny_unknown_fields)]
pub enum OpParams {
    /// Rotation with reflect padding, then independent horizontal and
    /// vertical flips.
    Geometric {
        rotation_deg: Range,
        hflip_prob: f64,
        vflip_prob: f64,
    },
    /// Multiplicative intensity factor.
    Brightness { factor: Range },
    /// Gamma curve followed by contrast stretch about the image mean. On
    /// single-channel images this is the tone part of a colour jitter.
    Color { gamma: Range, contrast: Range },
}

impl OpParams {
    pub fn default_for(kind: AugmentationKind) -> Self {
        match kind {
            AugmentationKind::Geometric => OpParams::Geometric {
                rotation_deg: Range::new(-180.0, 180.0),
                hflip_prob: 0.5,
                vflip_prob: 0.5,
            },
            AugmentationKind::Brightness => OpParams::Brightness {
                factor: Range::new(0.7, 1.3),
            },
            AugmentationKind::Color => OpParams::Color {
                gamma: Range::new(0.8, 1.25),
                contrast: Range::new(0.8, 1.2),
            },
        }
    }

    pub fn kind(&self) -> AugmentationKind {
        match self {
            OpParams::Geometric { .. } => AugmentationKind::Geometric,
            OpParams::Brightness { .. } => AugmentationKind::Brightness,
            OpParams::Color { .. } => AugmentationKind::Color,
        }
    }
}

/// A seeded transform. Bounds: rotation within [-180, 180] degrees, flip
/// probabilities within [0, 1], brightness/gamma/contrast within [0.25, 4].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationOp {
    pub params: OpParams,
    pub seed: u64,
}

impl AugmentationOp {
    pub fn new(params: OpParams, seed: u64) -> Self {
        AugmentationOp { params, seed }
    }

    pub fn default_for(kind: AugmentationKind, seed: u64) -> Self {
        Self::new(OpParams::default_for(kind), seed)
    }

    pub fn kind(&self) -> AugmentationKind {
        self.params.kind()
    }

    pub fn validate(&self) -> Result<()> {
        match &self.params {
            OpParams::Geometric {
                rotation_deg,
                hflip_prob,
                vflip_prob,
            } => {
                rotation_deg.check("rotation_deg", -180.0, 180.0)?;
                for (name, p) in [("hflip_prob", hflip_prob), ("vflip_prob", vflip_prob)] {
                    if !(0.0..=1.0).contains(p) {
                        return Err(Error::InvalidAugmentation(format!(
                            "{name} must lie in [0, 1], got {p}"
                        )));
                    }
                }
                Ok(())
            }
            OpParams::Brightness { factor } => factor.check("brightness factor", 0.25, 4.0),
            OpParams::Color { gamma, contrast } => {
                gamma.check("gamma", 0.25, 4.0)?;
                contrast.check("contrast", 0.25, 4.0)
            }
        }
    }
}

/// Apply `op` to `image` with the parameter draw keyed by `draw_seed`.
/// Output has the input's shape; values are clamped to [0, 255].
pub fn apply_op(image: &GrayImage, op: &AugmentationOp, draw_seed: u64) -> Result<GrayImage> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::InvalidAugmentation("empty image".into()));
    }
    op.validate()?;
    let mut g = rng::rng_for(op.seed, &[draw_seed]);
    Ok(match &op.params {
        OpParams::Geometric {
            rotation_deg,
            hflip_prob,
            vflip_prob,
        } => {
            let angle = rotation_deg.sample(&mut g);
            let hflip = g.random::<f64>() < *hflip_prob;
            let vflip = g.random::<f64>() < *vflip_prob;
            let mut out = rotate(image, angle);
            if hflip {
                image::imageops::flip_horizontal_in_place(&mut out);
            }
            if vflip {
                image::imageops::flip_vertical_in_place(&mut out);
            }
            out
        }
        OpParams::Brightness { factor } => {
            let f = factor.sample(&mut g);
            map_pixels(image, |v| v * f)
        }
        OpParams::Color { gamma, contrast } => {
            let gm = gamma.sample(&mut g);
            let c = contrast.sample(&mut g);
            let toned: Vec<f64> = image
                .pixels()
                .map(|p| 255.0 * (f64::from(p[0]) / 255.0).powf(gm))
                .collect();
            let mean = toned.iter().sum::<f64>() / toned.len() as f64;
            let mut out = GrayImage::new(image.width(), image.height());
            for (dst, v) in out.pixels_mut().zip(toned) {
                *dst = Luma([quantize(mean + c * (v - mean))]);
            }
            out
        }
    })
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn map_pixels(image: &GrayImage, f: impl Fn(f64) -> f64) -> GrayImage {
    let mut out = image.clone();
    for p in out.pixels_mut() {
        p[0] = quantize(f(f64::from(p[0])));
    }
    out
}

/// Reflect an index into `[0, n)` without repeating the edge sample.
fn reflect(i: i64, n: i64) -> i64 {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    if m < n {
        m
    } else {
        period - m
    }
}

/// Rotate counter-clockwise by `angle_deg` about the image centre.
/// Quarter turns on square images are exact pixel permutations; other
/// angles use bilinear sampling with reflect padding.
pub fn rotate(image: &GrayImage, angle_deg: f64) -> GrayImage {
    let (w, h) = image.dimensions();
    let quarter = angle_deg / 90.0;
    if quarter == quarter.round() {
        let q = (quarter as i64).rem_euclid(4);
        match q {
            0 => return image.clone(),
            2 => return image::imageops::rotate180(image),
            1 if w == h => return image::imageops::rotate270(image),
            3 if w == h => return image::imageops::rotate90(image),
            _ => {}
        }
    }
    let theta = angle_deg.to_radians();
    let (s, c) = theta.sin_cos();
    let cx = (f64::from(w) - 1.0) / 2.0;
    let cy = (f64::from(h) - 1.0) / 2.0;
    let (wi, hi) = (i64::from(w), i64::from(h));
    let px = |x: i64, y: i64| -> f64 { f64::from(image.get_pixel(reflect(x, wi) as u32, reflect(y, hi) as u32)[0]) };
    let mut out = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let dx = f64::from(x) - cx;
            let dy = f64::from(y) - cy;
            // inverse map of a counter-clockwise rotation (y axis down)
            let sx = cx + c * dx - s * dy;
            let sy = cy + s * dx + c * dy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (x0, y0) = (x0 as i64, y0 as i64);
            let v = (1.0 - fx) * (1.0 - fy) * px(x0, y0)
                + fx * (1.0 - fy) * px(x0 + 1, y0)
                + (1.0 - fx) * fy * px(x0, y0 + 1)
                + fx * fy * px(x0 + 1, y0 + 1);
            out.put_pixel(x, y, Luma([quantize(v)]));
        }
    }
    out
}
