use detox::data::poison::{poison_dataset, LabelMode, PoisonConfig};
use detox::data::synth::{generate_pair, SynthConfig};
use detox::data::triggers::badnets_patch;
use detox::eval::{attack_success_rate, clean_accuracy};
use detox::filter::{filter_precision, filter_split, loss_filter_split};
use detox::model::{build_model, ArchId};
use detox::train::{supervised_train, TrainConfig};
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let ntest = n * 2 / 5;
    let t0 = Instant::now();
    let sig: f32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.085);
    let noise: f32 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.18);
    let dist: f32 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.16);
    let amb: f32 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(0.4);
    let synth = SynthConfig { seed: 100, part_amp: sig, noise, distractor_amp: dist, ambiguity: amb, ..Default::default() };
    let (train, test) = generate_pair(&synth, n, ntest).unwrap();

    let trigger = badnets_patch(3);
    let pcfg = PoisonConfig { rate_alpha: 0.1, target_class: 0, label_mode: LabelMode::PoisonLabel, seed: 100 };
    let poisoned = poison_dataset(&train, &pcfg, &trigger).unwrap();

    let model = build_model(ArchId::SmallCnn, 10, 100).unwrap();
    let aug = args.get(5).map(|s| s == "aug").unwrap_or(true);
    let tcfg = TrainConfig { seed: 100, augmentation: if aug { detox::train::Augmentation::Standard } else { detox::train::Augmentation::None }, ..Default::default() };
    let (model, metrics) = supervised_train(model, &poisoned, &tcfg, None).unwrap();
    for r in &metrics.epochs {
        println!("  epoch {}: loss {:.4} clean {:.4} poisoned {:.4}",
            r.epoch, r.mean_loss,
            r.clean_train_acc.unwrap_or(f64::NAN),
            r.poisoned_train_acc.unwrap_or(f64::NAN));
    }
    let ca = clean_accuracy(&model, &test).unwrap();
    let asr = attack_success_rate(&model, &test, &trigger, 0, false).unwrap();
    println!("post-SL: CA {:.4} ASR {:.4}  [{:?}]", ca, asr, t0.elapsed());

    let fr = filter_split(&model, &poisoned, 0.01).unwrap();
    let (prec_e, purity_e) = filter_precision(&fr, &poisoned);
    let lr = loss_filter_split(&model, &poisoned, 0.01).unwrap();
    let (prec_l, _) = filter_precision(&lr, &poisoned);
    println!("filter: |Dp|={} entropy prec {:.3} purity {:.3}; loss prec {:.3}",
        fr.poisoned_idx.len(), prec_e, purity_e, prec_l);
}
