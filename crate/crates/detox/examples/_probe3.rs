// prefix runner: SL + filter + AU once, artifacts to /tmp/detox_tune
use detox::data::io::save_dataset;
use detox::data::poison::{poison_dataset, LabelMode, PoisonConfig};
use detox::data::synth::{generate_pair, SynthConfig};
use detox::data::triggers::badnets_patch;
use detox::eval::{attack_success_rate, clean_accuracy};
use detox::filter::filter_split;
use detox::model::{build_model, ArchId};
use detox::train::{supervised_train, Augmentation, TrainConfig};
use detox::unlearn::{active_unlearn, UnlearnConfig};
use std::path::Path;

fn main() {
    let out = Path::new("/tmp/detox_tune");
    std::fs::create_dir_all(out).unwrap();
    let synth = SynthConfig { seed: 100, ..Default::default() };
    let (train, test) = generate_pair(&synth, 5000, 2000).unwrap();
    let trigger = badnets_patch(3);
    let pcfg = PoisonConfig { rate_alpha: 0.1, target_class: 0, label_mode: LabelMode::PoisonLabel, seed: 100 };
    let poisoned = poison_dataset(&train, &pcfg, &trigger).unwrap();
    save_dataset(&poisoned, &out.join("poisoned"), Some(&trigger), Some(LabelMode::PoisonLabel)).unwrap();
    save_dataset(&test, &out.join("test"), None, None).unwrap();
    save_dataset(&train, &out.join("clean"), None, None).unwrap();

    let tcfg = TrainConfig { seed: 100, augmentation: Augmentation::None, ..Default::default() };

    let base = build_model(ArchId::SmallCnn, 10, 100).unwrap();
    let (base, _) = supervised_train(base, &train, &tcfg, None).unwrap();
    println!("clean baseline CA {:.4}", clean_accuracy(&base, &test).unwrap());
    base.save(&out.join("baseline.ckpt")).unwrap();

    let model = build_model(ArchId::SmallCnn, 10, 100).unwrap();
    let (model, _) = supervised_train(model, &poisoned, &tcfg, None).unwrap();
    println!("post-SL CA {:.4} ASR {:.4}",
        clean_accuracy(&model, &test).unwrap(),
        attack_success_rate(&model, &test, &trigger, 0, false).unwrap());
    model.save(&out.join("sl.ckpt")).unwrap();

    let fr = filter_split(&model, &poisoned, 0.01).unwrap();
    fr.save(&out.join("filter.json")).unwrap();

    let ucfg = UnlearnConfig { seed: 100, ..Default::default() };
    let (model, _) = active_unlearn(model, &poisoned, &fr.poisoned_idx, &ucfg, None).unwrap();
    println!("post-AU CA {:.4} ASR {:.4}",
        clean_accuracy(&model, &test).unwrap(),
        attack_success_rate(&model, &test, &trigger, 0, false).unwrap());
    model.save(&out.join("au.ckpt")).unwrap();
}
