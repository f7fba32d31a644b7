//! The whole defense as one configured pipeline run: poison, supervised
//! learning, entropy filtering, active unlearning, semi-supervised
//! fine-tuning, with evaluations after every stage and a manifest on disk.
//!
//! ```text
//! cargo run --release --example end_to_end
//! ```

use detox::data::io::save_dataset;
use detox::data::poison::LabelMode;
use detox::data::synth::{generate_pair, SynthConfig};
use detox::filter::FilterMethod;
use detox::model::ArchId;
use detox::pipeline::{run_pipeline, AttackConfig, PipelineConfig, StageOrder};
use detox::ssl::SSLConfig;
use detox::train::{Augmentation, TrainConfig};
use detox::unlearn::UnlearnConfig;

fn main() {
    let work = std::env::temp_dir().join("detox-example-e2e");
    let synth = SynthConfig {
        seed: 66,
        ..Default::default()
    };
    let (train, test) = generate_pair(&synth, 1500, 600).unwrap();
    save_dataset(&train, &work.join("train"), None, None).unwrap();
    save_dataset(&test, &work.join("test"), None, None).unwrap();

    let cfg = PipelineConfig {
        train_dir: work.join("train"),
        test_dir: work.join("test"),
        out_dir: work.join("run"),
        arch: ArchId::SmallCnn,
        stage_order: StageOrder::SlFilterAuAssft,
        seed: 66,
        gamma: 0.02,
        filter_method: FilterMethod::Entropy,
        attack: Some(AttackConfig {
            trigger: "badnets".to_string(),
            rate_alpha: 0.1,
            target_class: 0,
            label_mode: LabelMode::PoisonLabel,
        }),
        train: TrainConfig {
            epochs: 8,
            augmentation: Augmentation::None,
            ..Default::default()
        },
        unlearn: UnlearnConfig {
            epochs: 10,
            ..Default::default()
        },
        ssl: SSLConfig {
            epochs: 8,
            learning_rate: 0.005,
            ..Default::default()
        },
    };
    cfg.save(&work.join("config.json")).unwrap();

    let manifest = run_pipeline(&cfg, false).unwrap();
    println!("stage  | clean accuracy | attack success rate");
    for s in &manifest.stages {
        if let Some(e) = &s.eval {
            println!(
                "{:<6} | {:>13.2}% | {}",
                s.name,
                e.clean_accuracy * 100.0,
                e.attack_success_rate
                    .map(|v| format!("{:>18.2}%", v * 100.0))
                    .unwrap_or_else(|| "                 -".to_string())
            );
        }
    }
    if let Some(f) = &manifest.filter {
        println!(
            "filter | {} suspected poisoned (precision {}), {} trusted clean",
            f.poisoned_count,
            f.precision
                .map(|p| format!("{p:.2}"))
                .unwrap_or_else(|| "n/a".to_string()),
            f.clean_count
        );
    }
    println!("artifacts: {}", cfg.out_dir.display());
}
