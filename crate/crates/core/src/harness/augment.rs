//! Flip and rotation augmentation of projected images.

use rand::Rng;

use crate::preprocess::Image2D;

/// One random draw, applied identically to every modality of a subject.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentDraw {
    pub vflip: bool,
    pub hflip: bool,
    /// Counter-clockwise quarter turns, 0..4.
    pub quarter_turns: u8,
    /// Extra rotation in radians; only drawn with arbitrary rotation enabled.
    pub angle: Option<f64>,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        vflip: false,
        hflip: false,
        quarter_turns: 0,
        angle: None,
    };

    pub fn sample(rng: &mut impl Rng, arbitrary_rotation: bool) -> Self {
        let vflip = rng.gen_bool(0.5);
        let hflip = rng.gen_bool(0.5);
        let quarter_turns = rng.gen_range(0..4u8);
        let angle = arbitrary_rotation.then(|| rng.gen_range(-std::f64::consts::FRAC_PI_4..std::f64::consts::FRAC_PI_4));
        AugmentDraw { vflip, hflip, quarter_turns, angle }
    }

    pub fn apply(&self, img: &Image2D) -> Image2D {
        let n = img.size;
        let mut out = img.clone();
        for c in 0..Image2D::CHANNELS {
            let src = img.channel(c);
            let dst = &mut out.data[c * n * n..(c + 1) * n * n];
            for y in 0..n {
                for x in 0..n {
                    // walk the inverse transform: rotation first, then flips
                    let (mut sy, mut sx) = (y, x);
                    for _ in 0..self.quarter_turns {
                        (sy, sx) = (sx, n - 1 - sy);
                    }
                    if self.hflip {
                        sx = n - 1 - sx;
                    }
                    if self.vflip {
                        sy = n - 1 - sy;
                    }
                    dst[y * n + x] = src[sy * n + sx];
                }
            }
        }
        match self.angle {
            Some(a) => rotate_bilinear(&out, a),
            None => out,
        }
    }
}

/// Rotation about the image centre with bilinear sampling and zero fill.
pub fn rotate_bilinear(img: &Image2D, angle: f64) -> Image2D {
    let n = img.size;
    let centre = (n as f64 - 1.0) / 2.0;
    let (sin, cos) = angle.sin_cos();
    let mut out = Image2D {
        size: n,
        data: vec![0.0; img.data.len()],
    };
    for c in 0..Image2D::CHANNELS {
        let src = img.channel(c);
        let at = |y: isize, x: isize| -> f64 {
            if y < 0 || x < 0 || y >= n as isize || x >= n as isize {
                0.0
            } else {
                src[y as usize * n + x as usize] as f64
            }
        };
        for y in 0..n {
            for x in 0..n {
                let (dy, dx) = (y as f64 - centre, x as f64 - centre);
                let sy = cos * dy - sin * dx + centre;
                let sx = sin * dy + cos * dx + centre;
                let (y0, x0) = (sy.floor(), sx.floor());
                let (fy, fx) = (sy - y0, sx - x0);
                let (y0, x0) = (y0 as isize, x0 as isize);
                let v = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + at(y0, x0 + 1) * (1.0 - fy) * fx
                    + at(y0 + 1, x0) * fy * (1.0 - fx)
                    + at(y0 + 1, x0 + 1) * fy * fx;
                out.data[c * n * n + y * n + x] = v as f32;
            }
        }
    }
    out
}

/// Draws once and applies the same transform to all images of a subject.
pub fn augment(images: &[Image2D], rng: &mut impl Rng, arbitrary_rotation: bool) -> Vec<Image2D> {
    let draw = AugmentDraw::sample(rng, arbitrary_rotation);
    images.iter().map(|i| draw.apply(i)).collect()
}
