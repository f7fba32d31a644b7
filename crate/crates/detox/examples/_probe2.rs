use detox::data::poison::{poison_dataset, LabelMode, PoisonConfig};
use detox::data::synth::{generate_pair, SynthConfig};
use detox::data::triggers::badnets_patch;
use detox::eval::{attack_success_rate, clean_accuracy, EvalMonitor};
use detox::filter::{filter_precision, filter_split};
use detox::model::{build_model, ArchId};
use detox::ssl::{ssl_train, strip_labels, SSLConfig};
use detox::train::{supervised_train, Augmentation, TrainConfig};
use detox::unlearn::{active_unlearn, UnlearnConfig};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let synth = SynthConfig { seed: 100, ..Default::default() };
    let (train, test) = generate_pair(&synth, 5000, 2000).unwrap();
    let trigger = badnets_patch(3);
    let pcfg = PoisonConfig { rate_alpha: 0.1, target_class: 0, label_mode: LabelMode::PoisonLabel, seed: 100 };
    let poisoned = poison_dataset(&train, &pcfg, &trigger).unwrap();
    let tcfg = TrainConfig { seed: 100, augmentation: Augmentation::None, ..Default::default() };

    // clean baseline
    let base = build_model(ArchId::SmallCnn, 10, 100).unwrap();
    let (base, _) = supervised_train(base, &train, &tcfg, None).unwrap();
    let base_ca = clean_accuracy(&base, &test).unwrap();
    println!("[{:?}] clean baseline CA {:.4}", t0.elapsed(), base_ca);

    // SL on poisoned
    let model = build_model(ArchId::SmallCnn, 10, 100).unwrap();
    let (model, _) = supervised_train(model, &poisoned, &tcfg, None).unwrap();
    let ca = clean_accuracy(&model, &test).unwrap();
    let asr = attack_success_rate(&model, &test, &trigger, 0, false).unwrap();
    println!("[{:?}] post-SL CA {:.4} ASR {:.4}", t0.elapsed(), ca, asr);

    // filter
    let fr = filter_split(&model, &poisoned, 0.01).unwrap();
    let (prec, purity) = filter_precision(&fr, &poisoned);
    println!("filter prec {:.3} purity {:.3}", prec, purity);

    // AU
    let ucfg = UnlearnConfig { seed: 100, ..Default::default() };
    let monitor = EvalMonitor { test: &test, attack: Some((&trigger, 0)), every: 5 };
    let (model, au_metrics) = active_unlearn(model, &poisoned, &fr.poisoned_idx, &ucfg, Some(&monitor)).unwrap();
    for r in &au_metrics.epochs {
        if r.clean_accuracy.is_some() || r.epoch < 3 {
            println!("  au epoch {}: loss {:.3} ca {:?} asr {:?}", r.epoch, r.mean_loss, r.clean_accuracy, r.attack_success_rate);
        }
    }
    let ca = clean_accuracy(&model, &test).unwrap();
    let asr = attack_success_rate(&model, &test, &trigger, 0, false).unwrap();
    println!("[{:?}] post-AU CA {:.4} ASR {:.4}", t0.elapsed(), ca, asr);

    // ASSFT
    let semi = strip_labels(&poisoned, &fr.clean_idx).unwrap();
    let scfg = SSLConfig { seed: 100, epochs: 30, ..Default::default() };
    let t1 = Instant::now();
    let (model, ssl_metrics) = ssl_train(model, &semi, &scfg, Some(&monitor)).unwrap();
    for r in &ssl_metrics.epochs {
        if r.clean_accuracy.is_some() {
            println!("  ssl epoch {}: loss {:.3} accept {:.3} ca {:.4} asr {:.4}",
                r.epoch, r.mean_loss, r.pseudo_label_rate.unwrap_or(f64::NAN),
                r.clean_accuracy.unwrap(), r.attack_success_rate.unwrap());
        }
    }
    println!("ssl wall: {:?} total {:?}", t1.elapsed(), t0.elapsed());
    let ca = clean_accuracy(&model, &test).unwrap();
    let asr = attack_success_rate(&model, &test, &trigger, 0, false).unwrap();
    println!("post-ASSFT CA {:.4} ASR {:.4} (baseline {:.4})", ca, asr, base_ca);
}
