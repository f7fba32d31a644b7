//! Synthetic 10-class image sets.
//!
//! Classes are defined by small localized "parts": oriented colored blobs
//! stamped at jittered positions over a noisy, grating-cluttered
//! background. Local class features keep the task CNN-learnable over a few
//! epochs while leaving room for genuinely ambiguous samples, which is the
//! regime the backdoor experiments need.

use ndarray::Array4;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::Result;
use crate::rng::{derive_seed, derive_seed_n, rng_from_seed};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    /// Std-dev of per-pixel Gaussian noise.
    pub noise: f32,
    /// Localized class parts per class.
    pub parts_per_class: usize,
    /// Peak amplitude of a part stamp.
    pub part_amp: f32,
    /// Positional jitter of each part, in pixels.
    pub part_jitter: i32,
    /// Background gratings shared by all classes.
    pub shared_gratings: usize,
    /// Peak amplitude of one background grating.
    pub distractor_amp: f32,
    /// Fraction of samples that swap one part for another class's part,
    /// capping achievable accuracy the way natural-image ambiguity does.
    pub ambiguity: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 10,
            height: 32,
            width: 32,
            seed: 0,
            noise: 0.12,
            parts_per_class: 3,
            part_amp: 0.50,
            part_jitter: 5,
            shared_gratings: 3,
            distractor_amp: 0.10,
            ambiguity: 0.15,
        }
    }
}

#[derive(Clone, Copy)]
struct Part {
    base_y: f32,
    base_x: f32,
    // inverse covariance of the oriented Gaussian footprint
    ixx: f32,
    ixy: f32,
    iyy: f32,
    color: [f32; 3],
}

#[derive(Clone, Copy)]
struct Grating {
    fy: f32,
    fx: f32,
    amp: [f32; 3],
}

struct Defs {
    shared: Vec<Grating>,
    parts: Vec<Vec<Part>>, // per class
}

fn draw_part(rng: &mut rand_chacha::ChaCha8Rng, h: usize, w: usize) -> Part {
    let margin_y = (h as f32 / 5.0).min(6.0);
    let margin_x = (w as f32 / 5.0).min(6.0);
    let base_y = rng.random_range(margin_y..h as f32 - margin_y);
    let base_x = rng.random_range(margin_x..w as f32 - margin_x);
    let s_major: f32 = rng.random_range(2.0..3.5);
    let s_minor: f32 = rng.random_range(1.0..2.0);
    let theta: f32 = rng.random_range(0.0..std::f32::consts::PI);
    let (c, s) = (theta.cos(), theta.sin());
    let (a, b) = (1.0 / (s_major * s_major), 1.0 / (s_minor * s_minor));
    // rotate the diagonal inverse covariance
    let ixx = a * c * c + b * s * s;
    let iyy = a * s * s + b * c * c;
    let ixy = (a - b) * s * c;
    let color = [
        rng.random_range(-1.0f32..1.0),
        rng.random_range(-1.0f32..1.0),
        rng.random_range(-1.0f32..1.0),
    ];
    Part {
        base_y,
        base_x,
        ixx,
        ixy,
        iyy,
        color,
    }
}

fn draw_grating(rng: &mut rand_chacha::ChaCha8Rng) -> Grating {
    let freq: f32 = rng.random_range(1.5..6.0);
    let theta: f32 = rng.random_range(0.0..std::f32::consts::PI);
    let mix = [
        rng.random_range(0.2f32..1.0),
        rng.random_range(0.2f32..1.0),
        rng.random_range(0.2f32..1.0),
    ];
    let s: f32 = mix.iter().sum();
    Grating {
        fy: freq * theta.sin(),
        fx: freq * theta.cos(),
        amp: [3.0 * mix[0] / s, 3.0 * mix[1] / s, 3.0 * mix[2] / s],
    }
}

fn build_defs(cfg: &SynthConfig) -> Defs {
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "synth/shared"));
    let shared = (0..cfg.shared_gratings).map(|_| draw_grating(&mut rng)).collect();
    let parts = (0..cfg.classes)
        .map(|c| {
            let mut rng = rng_from_seed(derive_seed_n(cfg.seed, &[0xC1A5, c as u64]));
            (0..cfg.parts_per_class)
                .map(|_| draw_part(&mut rng, cfg.height, cfg.width))
                .collect()
        })
        .collect();
    Defs { shared, parts }
}

fn render_sample(
    cfg: &SynthConfig,
    defs: &Defs,
    class: usize,
    sample_seed: u64,
    out: &mut ndarray::ArrayViewMut3<f32>,
) {
    let mut rng = rng_from_seed(sample_seed);
    let noise = Normal::new(0.0f32, cfg.noise).unwrap();
    let (h, w) = (cfg.height as f32, cfg.width as f32);

    // choose this sample's parts: with probability `ambiguity` one part is
    // swapped for a random part of another class
    let mut parts: Vec<Part> = defs.parts[class].clone();
    if cfg.classes > 1 && rng.random_range(0.0f32..1.0) < cfg.ambiguity && !parts.is_empty() {
        let victim = rng.random_range(0..parts.len());
        let other = {
            let o = rng.random_range(0..cfg.classes - 1);
            if o >= class {
                o + 1
            } else {
                o
            }
        };
        let donor = rng.random_range(0..defs.parts[other].len());
        parts[victim] = defs.parts[other][donor];
    }
    // per-sample pose for each part
    let placed: Vec<(Part, f32, f32, f32)> = parts
        .into_iter()
        .map(|p| {
            let jy = rng.random_range(-cfg.part_jitter..=cfg.part_jitter) as f32;
            let jx = rng.random_range(-cfg.part_jitter..=cfg.part_jitter) as f32;
            let amp = cfg.part_amp * rng.random_range(0.75f32..1.25);
            (p, p.base_y + jy, p.base_x + jx, amp)
        })
        .collect();

    let gratings: Vec<(Grating, f32, f32)> = defs
        .shared
        .iter()
        .map(|g| {
            (
                *g,
                rng.random_range(0.0..std::f32::consts::TAU),
                rng.random_range(0.0..cfg.distractor_amp),
            )
        })
        .collect();

    let brightness: f32 = rng.random_range(-0.10..0.10);

    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let mut px = [0.0f32; 3];
            for &(g, phase, amp) in &gratings {
                let arg = std::f32::consts::TAU * (g.fy * y as f32 / h + g.fx * x as f32 / w) + phase;
                let v = arg.sin() * amp;
                px[0] += g.amp[0] * v;
                px[1] += g.amp[1] * v;
                px[2] += g.amp[2] * v;
            }
            for &(p, py, px_, amp) in &placed {
                let dy = y as f32 - py;
                let dx = x as f32 - px_;
                let q = p.ixx * dx * dx + 2.0 * p.ixy * dx * dy + p.iyy * dy * dy;
                if q < 9.0 {
                    let g = amp * (-0.5 * q).exp();
                    px[0] += p.color[0] * g;
                    px[1] += p.color[1] * g;
                    px[2] += p.color[2] * g;
                }
            }
            for ch in 0..3 {
                let v = 0.5 + brightness + px[ch] + noise.sample(&mut rng);
                out[[y, x, ch]] = v.clamp(0.0, 1.0);
            }
        }
    }
}

/// Generate `n` samples with labels cycling through the classes. The
/// `stream` label keeps train and test draws disjoint for the same seed.
pub fn generate(cfg: &SynthConfig, n: usize, stream: &str) -> Result<LabeledDataset> {
    let defs = build_defs(cfg);
    let stream_seed = derive_seed(cfg.seed, stream);
    let mut images = Array4::<f32>::zeros((n, cfg.height, cfg.width, 3));
    let labels: Vec<usize> = (0..n).map(|i| i % cfg.classes).collect();
    for i in 0..n {
        let mut view = images.index_axis_mut(ndarray::Axis(0), i);
        render_sample(
            cfg,
            &defs,
            labels[i],
            derive_seed_n(stream_seed, &[i as u64]),
            &mut view,
        );
    }
    LabeledDataset::new(images, labels, cfg.classes)
}

/// Generate a train/test pair drawn from the same class definitions.
pub fn generate_pair(
    cfg: &SynthConfig,
    train_n: usize,
    test_n: usize,
) -> Result<(LabeledDataset, LabeledDataset)> {
    Ok((
        generate(cfg, train_n, "train")?,
        generate(cfg, test_n, "test")?,
    ))
}

/// A tiny two-class set that is linearly separable on raw pixels: class 0 is
/// bright on the left half, class 1 on the right. Used by trainer tests.
pub fn linearly_separable_pair(n: usize, h: usize, w: usize, seed: u64) -> Result<LabeledDataset> {
    let mut rng = rng_from_seed(seed);
    let mut images = Array4::<f32>::zeros((n, h, w, 3));
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    for i in 0..n {
        for y in 0..h {
            for x in 0..w {
                let left = x < w / 2;
                let hot = (labels[i] == 0) == left;
                let base = if hot { 0.8 } else { 0.2 };
                for ch in 0..3 {
                    let v: f32 = base + rng.random_range(-0.05..0.05);
                    images[[i, y, x, ch]] = v.clamp(0.0, 1.0);
                }
            }
        }
    }
    LabeledDataset::new(images, labels, 2)
}
