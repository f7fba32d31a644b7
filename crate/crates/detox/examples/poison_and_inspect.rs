//! Poison a dataset in both label modes and inspect the result with the
//! ground-truth views, then round-trip it through the on-disk format.
//!
//! ```text
//! cargo run --release --example poison_and_inspect
//! ```

use detox::data::io::{load_dataset, save_dataset};
use detox::data::poison::{poison_dataset, LabelMode, PoisonConfig};
use detox::data::synth::{generate, SynthConfig};
use detox::data::triggers::badnets_patch;

fn main() {
    let cfg = SynthConfig {
        seed: 11,
        ..Default::default()
    };
    let clean = generate(&cfg, 600, "train").unwrap();
    let trigger = badnets_patch(3);

    for mode in [LabelMode::PoisonLabel, LabelMode::CleanLabel] {
        let pcfg = PoisonConfig {
            rate_alpha: 0.1,
            target_class: 3,
            label_mode: mode,
            seed: 2,
        };
        let poisoned = poison_dataset(&clean, &pcfg, &trigger).unwrap();
        let (clean_view, poisoned_view) = poisoned.subset_views();
        let label_changes = clean
            .labels
            .iter()
            .zip(&poisoned.labels)
            .filter(|(a, b)| a != b)
            .count();
        println!(
            "{mode:?}: {} poisoned / {} clean, {} labels rewritten",
            poisoned_view.len(),
            clean_view.len(),
            label_changes
        );
        for &i in poisoned_view.iter().take(3) {
            println!(
                "  sample {i}: label {} (was {})",
                poisoned.labels[i], clean.labels[i]
            );
        }
    }

    // the on-disk format round-trips bit-exactly
    let pcfg = PoisonConfig {
        rate_alpha: 0.1,
        target_class: 3,
        label_mode: LabelMode::PoisonLabel,
        seed: 2,
    };
    let poisoned = poison_dataset(&clean, &pcfg, &trigger).unwrap();
    let dir = std::env::temp_dir().join("detox-example-poison");
    save_dataset(&poisoned, &dir, Some(&trigger), Some(LabelMode::PoisonLabel)).unwrap();
    let (back, meta) = load_dataset(&dir).unwrap();
    assert_eq!(back.labels, poisoned.labels);
    let bits_equal = poisoned
        .images
        .iter()
        .zip(back.images.iter())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    println!(
        "saved to {} (trigger echo: {:?}); reloaded bit-exact: {bits_equal}",
        dir.display(),
        meta.trigger.map(|t| t.kind())
    );
}
