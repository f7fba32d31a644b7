//! Stage ASSFT in isolation: trust a tiny labeled subset, strip every other
//! label, and fine-tune with weak/strong consistency training.
//!
//! ```text
//! cargo run --release --example semi_supervised_finetune
//! ```

use detox::data::synth::{generate_pair, SynthConfig};
use detox::eval::{clean_accuracy, EvalMonitor};
use detox::filter::filter_split;
use detox::model::{build_model, ArchId};
use detox::ssl::{ssl_train, strip_labels, SSLConfig};
use detox::train::{supervised_train, Augmentation, TrainConfig};

fn main() {
    let synth = SynthConfig {
        seed: 55,
        ..Default::default()
    };
    let (train, test) = generate_pair(&synth, 1500, 600).unwrap();

    // a weak starting point: one epoch of supervised training on clean data
    let model = build_model(ArchId::SmallCnn, 10, 55).unwrap();
    let tcfg = TrainConfig {
        epochs: 1,
        augmentation: Augmentation::None,
        seed: 55,
        ..Default::default()
    };
    let (model, _) = supervised_train(model, &train, &tcfg, None).unwrap();
    println!(
        "starting point CA: {:.2}%",
        clean_accuracy(&model, &test).unwrap() * 100.0
    );

    // trust the 30 highest-entropy samples (class-balanced), drop the rest
    let fr = filter_split(&model, &train, 0.02).unwrap();
    let semi = strip_labels(&train, &fr.clean_idx).unwrap();
    println!(
        "labeled: {} samples, unlabeled: {} samples",
        semi.labeled_labels.len(),
        semi.unlabeled_src.len()
    );

    let cfg = SSLConfig {
        epochs: 10,
        learning_rate: 0.005,
        seed: 55,
        ..Default::default()
    };
    let monitor = EvalMonitor::new(&test, None);
    let (model, metrics) = ssl_train(model, &semi, &cfg, Some(&monitor)).unwrap();
    for r in &metrics.epochs {
        println!(
            "  epoch {:>2}: loss {:.3}  pseudo-label acceptance {:.1}%  CA {:.2}%",
            r.epoch + 1,
            r.mean_loss,
            r.pseudo_label_rate.unwrap_or(0.0) * 100.0,
            r.clean_accuracy.unwrap_or(f64::NAN) * 100.0
        );
    }
    println!(
        "final CA: {:.2}%",
        clean_accuracy(&model, &test).unwrap() * 100.0
    );
}
