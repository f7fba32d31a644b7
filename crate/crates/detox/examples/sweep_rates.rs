//! Sweep the poisoning rate and compare final defense performance across
//! runs sharing one base seed.
//!
//! ```text
//! cargo run --release --example sweep_rates
//! ```

use detox::data::io::save_dataset;
use detox::data::poison::LabelMode;
use detox::data::synth::{generate_pair, SynthConfig};
use detox::filter::FilterMethod;
use detox::model::ArchId;
use detox::pipeline::{sweep, AttackConfig, PipelineConfig, StageOrder, SweepAxis};
use detox::ssl::SSLConfig;
use detox::train::{Augmentation, TrainConfig};
use detox::unlearn::UnlearnConfig;

fn main() {
    let work = std::env::temp_dir().join("detox-example-sweep");
    let synth = SynthConfig {
        seed: 77,
        ..Default::default()
    };
    let (train, test) = generate_pair(&synth, 1000, 400).unwrap();
    save_dataset(&train, &work.join("train"), None, None).unwrap();
    save_dataset(&test, &work.join("test"), None, None).unwrap();

    let template = PipelineConfig {
        train_dir: work.join("train"),
        test_dir: work.join("test"),
        out_dir: work.join("sweep"),
        arch: ArchId::SmallCnn,
        stage_order: StageOrder::SlFilterAuAssft,
        seed: 77,
        gamma: 0.02,
        filter_method: FilterMethod::Entropy,
        attack: Some(AttackConfig {
            trigger: "badnets".to_string(),
            rate_alpha: 0.1,
            target_class: 0,
            label_mode: LabelMode::PoisonLabel,
        }),
        train: TrainConfig {
            epochs: 6,
            augmentation: Augmentation::None,
            ..Default::default()
        },
        unlearn: UnlearnConfig {
            epochs: 8,
            ..Default::default()
        },
        ssl: SSLConfig {
            epochs: 6,
            learning_rate: 0.005,
            ..Default::default()
        },
    };

    let runs = sweep(&template, SweepAxis::PoisonRate, &[0.1, 0.3]).unwrap();
    println!("poison rate | final CA | final ASR");
    for run in &runs {
        match &run.result {
            Ok(m) => {
                let last = m.stages.iter().rev().find_map(|s| s.eval.as_ref()).unwrap();
                println!(
                    "{:>11} | {:>7.2}% | {:>8.2}%",
                    run.value,
                    last.clean_accuracy * 100.0,
                    last.attack_success_rate.unwrap_or(0.0) * 100.0
                );
            }
            Err(e) => println!("{:>11} | failed: {e}", run.value),
        }
    }
    println!("joined CSV: {}", template.out_dir.join("sweep.csv").display());
}
