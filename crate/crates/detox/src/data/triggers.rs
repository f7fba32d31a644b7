//! Trigger patterns and the injection operator.
//!
//! Three representative trigger families are provided: a pixel patch
//! overwrite (BadNets-style), convex blending with a fixed pattern image
//! (Blended-style), and an additive horizontal sinusoid (SIG-style).

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use rand::Rng;

/// Where a patch sits inside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    At { row: usize, col: usize },
}

impl Anchor {
    fn origin(&self, img_h: usize, img_w: usize, ph: usize, pw: usize) -> Result<(usize, usize)> {
        let (r, c) = match *self {
            Anchor::TopLeft => (0, 0),
            Anchor::TopRight => (0, img_w.saturating_sub(pw)),
            Anchor::BottomLeft => (img_h.saturating_sub(ph), 0),
            Anchor::BottomRight => (img_h.saturating_sub(ph), img_w.saturating_sub(pw)),
            Anchor::At { row, col } => (row, col),
        };
        if r + ph > img_h || c + pw > img_w {
            return Err(Error::config(format!(
                "patch {ph}x{pw} at ({r},{c}) exceeds {img_h}x{img_w} image"
            )));
        }
        Ok((r, c))
    }
}

/// A trigger pattern plus its injection method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum TriggerSpec {
    /// Overwrite a pixel block at an anchor position.
    Patch {
        /// `(ph, pw, channels)` pattern, values in `[0,1]`.
        pattern: Array3<f32>,
        anchor: Anchor,
    },
    /// `x' = (1 - ratio) * x + ratio * image`.
    Blended { image: Array3<f32>, ratio: f32 },
    /// Additive horizontal sinusoid `amplitude * sin(2*pi*col*frequency / width)`.
    Sinusoid { amplitude: f32, frequency: f32 },
}

impl TriggerSpec {
    /// Validate internal consistency (ranges, pattern values).
    pub fn validate(&self) -> Result<()> {
        match self {
            TriggerSpec::Patch { pattern, .. } => {
                if pattern.is_empty() {
                    return Err(Error::config("empty patch pattern".to_string()));
                }
                if pattern.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::config("patch values must lie in [0,1]".to_string()));
                }
                Ok(())
            }
            TriggerSpec::Blended { image, ratio } => {
                if !(0.0..=1.0).contains(ratio) {
                    return Err(Error::config(format!("blend ratio {ratio} outside [0,1]")));
                }
                if image.is_empty() {
                    return Err(Error::config("empty blend image".to_string()));
                }
                Ok(())
            }
            TriggerSpec::Sinusoid { amplitude, frequency } => {
                if !amplitude.is_finite() || !frequency.is_finite() || *amplitude < 0.0 {
                    return Err(Error::config("bad sinusoid parameters".to_string()));
                }
                Ok(())
            }
        }
    }

    /// Short name used in file names and reports.
    pub fn kind(&self) -> &'static str {
        match self {
            TriggerSpec::Patch { .. } => "patch",
            TriggerSpec::Blended { .. } => "blended",
            TriggerSpec::Sinusoid { .. } => "sinusoid",
        }
    }
}

/// Inject a trigger into one image. Pure and deterministic; output values
/// are clipped to `[0,1]`; pixels outside a patch's support are untouched.
pub fn apply_trigger(image: ArrayView3<f32>, spec: &TriggerSpec) -> Result<Array3<f32>> {
    spec.validate()?;
    let (h, w, c) = image.dim();
    if image.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::data("image values must lie in [0,1]".to_string()));
    }
    let mut out = image.to_owned();
    match spec {
        TriggerSpec::Patch { pattern, anchor } => {
            let (ph, pw, pc) = pattern.dim();
            if pc != c {
                return Err(Error::config(format!(
                    "patch has {pc} channels, image has {c}"
                )));
            }
            let (r0, c0) = anchor.origin(h, w, ph, pw)?;
            for dy in 0..ph {
                for dx in 0..pw {
                    for ch in 0..c {
                        out[[r0 + dy, c0 + dx, ch]] = pattern[[dy, dx, ch]].clamp(0.0, 1.0);
                    }
                }
            }
        }
        TriggerSpec::Blended { image: blend, ratio } => {
            if blend.dim() != (h, w, c) {
                return Err(Error::config(format!(
                    "blend image {:?} does not match image {:?}",
                    blend.dim(),
                    (h, w, c)
                )));
            }
            let l = *ratio;
            ndarray::Zip::from(&mut out).and(blend).for_each(|o, &b| {
                *o = ((1.0 - l) * *o + l * b).clamp(0.0, 1.0);
            });
        }
        TriggerSpec::Sinusoid { amplitude, frequency } => {
            for col in 0..w {
                let v = amplitude
                    * (2.0 * std::f32::consts::PI * col as f32 * frequency / w as f32).sin();
                for row in 0..h {
                    for ch in 0..c {
                        out[[row, col, ch]] = (out[[row, col, ch]] + v).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// The default patch trigger: a 3x3 black/white checkerboard anchored at the
/// bottom-right corner, replicated across channels.
pub fn badnets_patch(channels: usize) -> TriggerSpec {
    let mut pattern = Array3::<f32>::zeros((3, 3, channels));
    for dy in 0..3 {
        for dx in 0..3 {
            if (dy + dx) % 2 == 0 {
                for ch in 0..channels {
                    pattern[[dy, dx, ch]] = 1.0;
                }
            }
        }
    }
    TriggerSpec::Patch {
        pattern,
        anchor: Anchor::BottomRight,
    }
}

/// The fixed blend pattern shipped with the crate: a smooth deterministic
/// mixture of low-frequency gratings, generated from a hard-coded seed.
pub fn default_blend_image(h: usize, w: usize, c: usize) -> Array3<f32> {
    let mut rng = rng_from_seed(0xB1E5_D01D);
    let mut img = Array3::<f32>::from_elem((h, w, c), 0.5);
    for ch in 0..c {
        for _ in 0..4 {
            let fy: f32 = rng.random_range(0.5..3.0);
            let fx: f32 = rng.random_range(0.5..3.0);
            let phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
            let amp: f32 = rng.random_range(0.1..0.25);
            for y in 0..h {
                for x in 0..w {
                    let v = amp
                        * (std::f32::consts::TAU * (fy * y as f32 / h as f32 + fx * x as f32 / w as f32)
                            + phase)
                            .sin();
                    img[[y, x, ch]] += v;
                }
            }
        }
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

/// Blended trigger with the shipped pattern at the conventional ratio 0.1.
pub fn blended_default(h: usize, w: usize, c: usize) -> TriggerSpec {
    TriggerSpec::Blended {
        image: default_blend_image(h, w, c),
        ratio: 0.1,
    }
}

/// Sinusoidal trigger with the conventional parameters: amplitude 20/255,
/// frequency 6.
pub fn sig_default() -> TriggerSpec {
    TriggerSpec::Sinusoid {
        amplitude: 20.0 / 255.0,
        frequency: 6.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn flat(h: usize, w: usize, v: f32) -> Array3<f32> {
        Array3::from_elem((h, w, 3), v)
    }

    #[test]
    fn blend_ratio_zero_is_identity() {
        let img = flat(8, 8, 0.3);
        let spec = TriggerSpec::Blended {
            image: flat(8, 8, 0.9),
            ratio: 0.0,
        };
        let out = apply_trigger(img.view(), &spec).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn blend_ratio_one_is_blend_image() {
        let img = flat(8, 8, 0.3);
        let blend = flat(8, 8, 0.9);
        let spec = TriggerSpec::Blended {
            image: blend.clone(),
            ratio: 1.0,
        };
        let out = apply_trigger(img.view(), &spec).unwrap();
        assert_eq!(out, blend);
    }

    #[test]
    fn white_patch_on_zero_image_touches_only_its_support() {
        let img = Array3::<f32>::zeros((32, 32, 3));
        let spec = TriggerSpec::Patch {
            pattern: flat(3, 3, 1.0),
            anchor: Anchor::BottomRight,
        };
        let out = apply_trigger(img.view(), &spec).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                for ch in 0..3 {
                    let expected = if y >= 29 && x >= 29 { 1.0 } else { 0.0 };
                    assert_eq!(out[[y, x, ch]], expected, "at ({y},{x},{ch})");
                }
            }
        }
    }

    #[test]
    fn patch_is_idempotent() {
        let img = flat(16, 16, 0.4);
        let spec = badnets_patch(3);
        let once = apply_trigger(img.view(), &spec).unwrap();
        let twice = apply_trigger(once.view(), &spec).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn oversized_patch_is_a_config_error() {
        let img = flat(4, 4, 0.0);
        let spec = TriggerSpec::Patch {
            pattern: flat(8, 8, 1.0),
            anchor: Anchor::TopLeft,
        };
        assert!(apply_trigger(img.view(), &spec).is_err());
    }

    #[test]
    fn explicit_anchor_out_of_bounds_rejected() {
        let img = flat(8, 8, 0.0);
        let spec = TriggerSpec::Patch {
            pattern: flat(3, 3, 1.0),
            anchor: Anchor::At { row: 7, col: 0 },
        };
        assert!(apply_trigger(img.view(), &spec).is_err());
    }

    #[test]
    fn sinusoid_stays_in_range_and_is_deterministic() {
        let img = flat(16, 16, 0.95);
        let spec = sig_default();
        let a = apply_trigger(img.view(), &spec).unwrap();
        let b = apply_trigger(img.view(), &spec).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = badnets_patch(3);
        let json = serde_json::to_string(&spec).unwrap();
        let back: TriggerSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }
}
