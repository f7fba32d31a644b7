//! Stage AU in isolation: take a backdoored checkpoint, run gradient
//! ascent on the filtered poisoned subset, and watch the attack success
//! rate collapse while the forget-set loss rises.
//!
//! ```text
//! cargo run --release --example unlearn_backdoor
//! ```

use detox::data::poison::{poison_dataset, LabelMode, PoisonConfig};
use detox::data::synth::{generate_pair, SynthConfig};
use detox::data::triggers::badnets_patch;
use detox::eval::{attack_success_rate, clean_accuracy};
use detox::filter::filter_split;
use detox::model::{build_model, ArchId};
use detox::train::{supervised_train, Augmentation, TrainConfig};
use detox::unlearn::{active_unlearn, UnlearnConfig};

fn main() {
    let synth = SynthConfig {
        seed: 44,
        ..Default::default()
    };
    let (train, test) = generate_pair(&synth, 1500, 600).unwrap();
    let trigger = badnets_patch(3);
    let pcfg = PoisonConfig {
        rate_alpha: 0.1,
        target_class: 0,
        label_mode: LabelMode::PoisonLabel,
        seed: 44,
    };
    let poisoned = poison_dataset(&train, &pcfg, &trigger).unwrap();

    let model = build_model(ArchId::SmallCnn, 10, 44).unwrap();
    let tcfg = TrainConfig {
        epochs: 8,
        augmentation: Augmentation::None,
        seed: 44,
        ..Default::default()
    };
    let (model, _) = supervised_train(model, &poisoned, &tcfg, None).unwrap();
    let ca = clean_accuracy(&model, &test).unwrap();
    let asr = attack_success_rate(&model, &test, &trigger, 0, false).unwrap();
    println!("after supervised training: CA {:.2}%  ASR {:.2}%", ca * 100.0, asr * 100.0);

    let fr = filter_split(&model, &poisoned, 0.02).unwrap();
    println!("filtered poisoned subset: {} samples", fr.poisoned_idx.len());

    let ucfg = UnlearnConfig {
        epochs: 10,
        seed: 44,
        ..Default::default()
    };
    let (model, metrics) = active_unlearn(model, &poisoned, &fr.poisoned_idx, &ucfg, None).unwrap();
    for r in &metrics.epochs {
        println!("  unlearn epoch {:>2}: forget-set loss {:.3}", r.epoch + 1, r.mean_loss);
    }
    let ca = clean_accuracy(&model, &test).unwrap();
    let asr = attack_success_rate(&model, &test, &trigger, 0, false).unwrap();
    println!("after active unlearning: CA {:.2}%  ASR {:.2}%", ca * 100.0, asr * 100.0);
    println!("(clean accuracy drops here; the semi-supervised stage recovers it)");
}
