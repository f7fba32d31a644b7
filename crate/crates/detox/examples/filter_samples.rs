//! Entropy-based filtering against the training-loss baseline: train on a
//! poisoned set, then compare how precisely each method isolates the
//! poisoned samples.
//!
//! ```text
//! cargo run --release --example filter_samples
//! ```

use detox::data::poison::{poison_dataset, LabelMode, PoisonConfig};
use detox::data::synth::{generate, SynthConfig};
use detox::data::triggers::badnets_patch;
use detox::filter::{filter_precision, filter_split, loss_filter_split};
use detox::model::{build_model, ArchId};
use detox::train::{supervised_train, Augmentation, TrainConfig};

fn main() {
    let synth = SynthConfig {
        seed: 33,
        ..Default::default()
    };
    let train = generate(&synth, 1500, "train").unwrap();
    let trigger = badnets_patch(3);
    let pcfg = PoisonConfig {
        rate_alpha: 0.1,
        target_class: 0,
        label_mode: LabelMode::PoisonLabel,
        seed: 33,
    };
    let poisoned = poison_dataset(&train, &pcfg, &trigger).unwrap();

    let model = build_model(ArchId::SmallCnn, 10, 33).unwrap();
    let cfg = TrainConfig {
        epochs: 6,
        augmentation: Augmentation::None,
        seed: 33,
        ..Default::default()
    };
    let (model, _) = supervised_train(model, &poisoned, &cfg, None).unwrap();

    let gamma = 0.02;
    let by_entropy = filter_split(&model, &poisoned, gamma).unwrap();
    let by_loss = loss_filter_split(&model, &poisoned, gamma).unwrap();

    println!("filtering rate {gamma}: {} samples per subset\n", by_entropy.poisoned_idx.len());
    for (name, result) in [("entropy", &by_entropy), ("loss (baseline)", &by_loss)] {
        let (precision, purity) = filter_precision(result, &poisoned);
        println!(
            "{name:<16} suspected-poisoned precision: {precision:.3}   trusted-clean purity: {purity:.3}"
        );
    }

    let scores = &by_entropy.scores;
    let lowest = by_entropy.poisoned_idx.first().map(|&i| scores[i]).unwrap_or(f64::NAN);
    let highest = by_entropy.clean_idx.first().map(|&i| scores[i]).unwrap_or(f64::NAN);
    println!("\nprediction entropy range in the split: {lowest:.4} bits (most confident) to {highest:.4} bits");
}
