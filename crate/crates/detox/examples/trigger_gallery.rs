//! The attack side in isolation: inject each trigger variant into one image
//! and report what changed.
//!
//! ```text
//! cargo run --release --example trigger_gallery
//! ```

use detox::data::synth::{generate, SynthConfig};
use detox::data::triggers::{apply_trigger, badnets_patch, blended_default, sig_default};

fn main() {
    let cfg = SynthConfig {
        seed: 5,
        ..Default::default()
    };
    let ds = generate(&cfg, 1, "train").unwrap();
    let image = ds.images.index_axis(ndarray::Axis(0), 0);
    let (h, w, c) = (32, 32, 3);

    for (name, spec) in [
        ("badnets (3x3 corner patch)", badnets_patch(c)),
        ("blended (ratio 0.1)", blended_default(h, w, c)),
        ("sig (additive sinusoid)", sig_default()),
    ] {
        let out = apply_trigger(image, &spec).unwrap();
        let mut changed = 0usize;
        let mut max_delta = 0.0f32;
        let mut sum_delta = 0.0f64;
        for (a, b) in image.iter().zip(out.iter()) {
            let d = (a - b).abs();
            if d > 0.0 {
                changed += 1;
            }
            max_delta = max_delta.max(d);
            sum_delta += d as f64;
        }
        println!(
            "{name:<28} pixels touched: {changed:>4}/{}  max |delta|: {max_delta:.3}  mean |delta|: {:.4}",
            h * w * c,
            sum_delta / (h * w * c) as f64
        );
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    println!("all outputs stay inside [0,1]");
}
