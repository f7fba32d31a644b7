//! Stage SL on a poisoned set, watching the per-subset training accuracy:
//! the poisoned subset is mastered before the clean one, which is the
//! signal the whole defense is built on.
//!
//! ```text
//! cargo run --release --example train_supervised
//! ```

use detox::data::poison::{poison_dataset, LabelMode, PoisonConfig};
use detox::data::synth::{generate_pair, SynthConfig};
use detox::data::triggers::badnets_patch;
use detox::eval::{attack_success_rate, clean_accuracy};
use detox::model::{build_model, ArchId};
use detox::train::{supervised_train, Augmentation, TrainConfig};

fn main() {
    let synth = SynthConfig {
        seed: 21,
        ..Default::default()
    };
    let (train, test) = generate_pair(&synth, 1500, 600).unwrap();
    let trigger = badnets_patch(3);
    let pcfg = PoisonConfig {
        rate_alpha: 0.1,
        target_class: 0,
        label_mode: LabelMode::PoisonLabel,
        seed: 21,
    };
    let poisoned = poison_dataset(&train, &pcfg, &trigger).unwrap();

    let model = build_model(ArchId::SmallCnn, 10, 21).unwrap();
    let cfg = TrainConfig {
        epochs: 6,
        augmentation: Augmentation::None,
        seed: 21,
        ..Default::default()
    };
    let (model, metrics) = supervised_train(model, &poisoned, &cfg, None).unwrap();

    println!("epoch | loss   | clean subset acc | poisoned subset acc");
    for r in &metrics.epochs {
        println!(
            "{:>5} | {:.4} | {:>16.3} | {:>19.3}",
            r.epoch + 1,
            r.mean_loss,
            r.clean_train_acc.unwrap_or(f64::NAN),
            r.poisoned_train_acc.unwrap_or(f64::NAN),
        );
    }
    let ca = clean_accuracy(&model, &test).unwrap();
    let asr = attack_success_rate(&model, &test, &trigger, 0, false).unwrap();
    println!("\nheld-out: clean accuracy {:.2}%, attack success rate {:.2}%", ca * 100.0, asr * 100.0);
}
