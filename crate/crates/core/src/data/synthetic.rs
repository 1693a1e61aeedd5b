//! Procedural rotated-glyph domains.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{sha256_hex, DomainDataset, Provenance};
use crate::array::Array;
use crate::error::{Error, Result};

pub const MAX_GLYPH_CLASSES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Rotation in degrees, one per domain.
    pub angles: Vec<f64>,
    pub gains: Vec<f64>,
    pub biases: Vec<f64>,
    pub noise_std: f64,
    /// Maximum per-sample translation, in units of half the canvas.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            samples_per_class: 100,
            channels: 1,
            height: 28,
            width: 28,
            angles: vec![0.0, 15.0, 30.0, 45.0, 60.0, 75.0],
            gains: vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.5],
            biases: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25],
            noise_std: 0.05,
            jitter: 0.1,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn num_domains(&self) -> usize {
        self.angles.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.angles.len();
        if m == 0 || self.gains.len() != m || self.biases.len() != m {
            return Err(Error::invalid(format!(
                "need matching non-empty angles/gains/biases, got {}/{}/{}",
                m,
                self.gains.len(),
                self.biases.len()
            )));
        }
        for (i, a) in self.angles.iter().enumerate() {
            if !a.is_finite() || self.angles[..i].contains(a) {
                return Err(Error::invalid(format!("angles must be finite and distinct, got {:?}", self.angles)));
            }
        }
        if self.gains.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
            return Err(Error::invalid("gains must be positive"));
        }
        if self.biases.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("biases must be finite"));
        }
        if !(1..=MAX_GLYPH_CLASSES).contains(&self.num_classes) {
            return Err(Error::invalid(format!(
                "num_classes must be in 1..={MAX_GLYPH_CLASSES}, got {}",
                self.num_classes
            )));
        }
        if self.samples_per_class == 0 || self.channels == 0 || self.height < 4 || self.width < 4 {
            return Err(Error::invalid("samples_per_class and channels must be positive and images at least 4x4"));
        }
        if !(self.noise_std >= 0.0) || !(0.0..=0.5).contains(&self.jitter) {
            return Err(Error::invalid("noise_std must be >= 0 and jitter in [0, 0.5]"));
        }
        Ok(())
    }
}

/// Per-sample glyph perturbation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jitter {
    pub dx: f64,
    pub dy: f64,
    pub scale: f64,
    pub half_width: f64,
}

impl Jitter {
    pub const NONE: Jitter = Jitter {
        dx: 0.0,
        dy: 0.0,
        scale: 1.0,
        half_width: 0.11,
    };
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn draw_jitter(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Jitter {
    let t = cfg.jitter;
    let sym = |rng: &mut ChaCha8Rng, r: f64| if r > 0.0 { rng.random_range(-r..r) } else { 0.0 };
    Jitter {
        dx: sym(rng, t),
        dy: sym(rng, t),
        scale: 1.0 + sym(rng, 0.1),
        half_width: 0.11 + sym(rng, 0.02),
    }
}

/// The jitter used for sample `index` of the generated dataset.
pub fn sample_jitter(cfg: &SyntheticConfig, index: usize) -> Jitter {
    draw_jitter(cfg, &mut sample_rng(cfg.seed, index))
}

enum Stroke {
    Seg([f64; 2], [f64; 2]),
    Ring([f64; 2], f64),
    Disc([f64; 2], f64),
}

fn polyline(points: &[[f64; 2]], closed: bool) -> Vec<Stroke> {
    let mut out: Vec<Stroke> = points.windows(2).map(|w| Stroke::Seg(w[0], w[1])).collect();
    if closed {
        out.push(Stroke::Seg(points[points.len() - 1], points[0]));
    }
    out
}

fn glyph(class: usize) -> Vec<Stroke> {
    use Stroke::*;
    match class {
        0 => vec![Ring([0.0, 0.0], 0.55)],
        1 => vec![Seg([0.0, -0.65], [0.0, 0.65])],
        2 => vec![Seg([-0.6, 0.0], [0.6, 0.0]), Seg([0.0, -0.6], [0.0, 0.6])],
        3 => polyline(&[[-0.4, -0.6], [-0.4, 0.5], [0.5, 0.5]], false),
        4 => polyline(&[[0.0, -0.6], [0.6, 0.5], [-0.6, 0.5]], true),
        5 => polyline(&[[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]], true),
        6 => vec![Seg([-0.6, -0.5], [0.6, -0.5]), Seg([0.0, -0.5], [0.0, 0.65])],
        7 => vec![Seg([-0.55, -0.25], [0.55, -0.25]), Seg([-0.55, 0.25], [0.55, 0.25])],
        8 => vec![
            Seg([-0.25, -0.6], [-0.25, 0.6]),
            Seg([0.25, -0.6], [0.25, 0.6]),
            Seg([-0.6, -0.25], [0.6, -0.25]),
            Seg([-0.6, 0.25], [0.6, 0.25]),
        ],
        _ => vec![Ring([0.0, 0.0], 0.55), Disc([0.0, 0.0], 0.12)],
    }
}

fn distance(s: &Stroke, p: [f64; 2]) -> f64 {
    let norm = |x: f64, y: f64| (x * x + y * y).sqrt();
    match *s {
        Stroke::Seg(a, b) => {
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let t = (((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
            norm(p[0] - a[0] - t * ex, p[1] - a[1] - t * ey)
        }
        Stroke::Ring(c, r) => (norm(p[0] - c[0], p[1] - c[1]) - r).abs(),
        Stroke::Disc(c, r) => (norm(p[0] - c[0], p[1] - c[1]) - r).max(0.0),
    }
}

/// Anti-aliased `height x width` render of a class glyph, values in `[0, 1]`.
pub fn render_glyph(class: usize, jitter: &Jitter, height: usize, width: usize) -> Vec<f64> {
    let strokes = glyph(class);
    let pixel = 2.0 / width.min(height) as f64;
    let mut out = Vec::with_capacity(height * width);
    for i in 0..height {
        let v = (i as f64 + 0.5) / height as f64 * 2.0 - 1.0;
        for j in 0..width {
            let u = (j as f64 + 0.5) / width as f64 * 2.0 - 1.0;
            let p = [(u - jitter.dx) / jitter.scale, (v - jitter.dy) / jitter.scale];
            let d = strokes.iter().map(|s| distance(s, p)).fold(f64::INFINITY, f64::min) * jitter.scale;
            out.push(((jitter.half_width - d) / pixel + 0.5).clamp(0.0, 1.0));
        }
    }
    out
}

/// Rotates a plane about its centre by `degrees` (counter-clockwise on
/// screen) with bilinear sampling and zeros outside the canvas.
pub fn rotate_bilinear(plane: &[f64], height: usize, width: usize, degrees: f64) -> Vec<f64> {
    if degrees == 0.0 {
        return plane.to_vec();
    }
    let (s, c) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    let at = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= height as isize || x >= width as isize {
            0.0
        } else {
            plane[y as usize * width + x as usize]
        }
    };
    let mut out = Vec::with_capacity(plane.len());
    for i in 0..height {
        for j in 0..width {
            let (dy, dx) = (i as f64 - cy, j as f64 - cx);
            // Inverse map: rotate the output coordinate back.
            let sx = c * dx - s * dy + cx;
            let sy = s * dx + c * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            out.push(v);
        }
    }
    out
}

/// Every `(class, domain)` cell gets `samples_per_class` images. Samples
/// are ordered by domain, then class, and each draws from its own seeded
/// stream, so the output depends only on the config.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<DomainDataset> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let n = cfg.num_domains() * cfg.num_classes * cfg.samples_per_class;
    let mut pixels = Vec::with_capacity(n * cfg.channels * h * w);
    let mut labels = Vec::with_capacity(n);
    let mut domains = Vec::with_capacity(n);
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut index = 0;
    for d in 0..cfg.num_domains() {
        let (angle, gain, bias) = (cfg.angles[d], cfg.gains[d], cfg.biases[d]);
        for class in 0..cfg.num_classes {
            for _ in 0..cfg.samples_per_class {
                let mut rng = sample_rng(cfg.seed, index);
                let jitter = draw_jitter(cfg, &mut rng);
                let base = rotate_bilinear(&render_glyph(class, &jitter, h, w), h, w, angle);
                let styled: Vec<f64> = base.iter().map(|&x| (gain * x + bias).clamp(0.0, 1.0)).collect();
                for _ in 0..cfg.channels {
                    pixels.extend(styled.iter().map(|&x| {
                        if cfg.noise_std > 0.0 {
                            (x + noise.sample(&mut rng)).clamp(0.0, 1.0)
                        } else {
                            x
                        }
                    }));
                }
                labels.push(class);
                domains.push(d);
                index += 1;
            }
        }
    }
    DomainDataset::new(
        [cfg.channels, h, w],
        pixels,
        labels,
        domains,
        cfg.num_classes,
        cfg.num_domains(),
        Provenance::Synthetic { seed: cfg.seed },
    )
}

/// Splits a sample pool into contiguous, near-equal chunks, one per angle,
/// and rotates each chunk by its angle.
pub fn make_rotation_domains(images: &Array, labels: &[usize], angles: &[f64]) -> Result<DomainDataset> {
    let s = images.shape();
    if s.len() != 4 || s[0] != labels.len() {
        return Err(Error::shape("make_rotation_domains", s, &[labels.len()]));
    }
    if angles.is_empty() {
        return Err(Error::invalid("need at least one angle"));
    }
    let (n, m) = (labels.len(), angles.len());
    if n < m {
        return Err(Error::invalid(format!("{n} samples cannot fill {m} domains")));
    }
    let (h, w) = (s[2], s[3]);
    let plane = h * w;
    let mut pixels = Vec::with_capacity(images.len());
    let mut domains = Vec::with_capacity(n);
    for (i, img) in images.data().chunks(s[1] * plane).enumerate() {
        let d = i * m / n;
        for ch in img.chunks(plane) {
            pixels.extend(rotate_bilinear(ch, h, w, angles[d]).into_iter().map(|v| v.clamp(0.0, 1.0)));
        }
        domains.push(d);
    }
    let num_classes = labels.iter().max().map_or(0, |&y| y + 1);
    let mut digest_input: Vec<u8> = images.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    digest_input.extend(labels.iter().flat_map(|&y| (y as u64).to_le_bytes()));
    DomainDataset::new(
        [s[1], h, w],
        pixels,
        labels.to_vec(),
        domains,
        num_classes,
        m,
        Provenance::Digest {
            sha256: sha256_hex(&digest_input),
        },
    )
}
