// two-phase assft test: warmup (lambda=0) then consistency
use detox::data::io::load_dataset;
use detox::data::triggers::badnets_patch;
use detox::eval::{attack_success_rate, clean_accuracy, EvalMonitor};
use detox::filter::FilterResult;
use detox::model::{ModelState, StageTag};
use detox::ssl::{ssl_train, strip_labels, SSLConfig};
use detox::unlearn::{active_unlearn, UnlearnConfig};
use std::path::Path;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let clamp: f32 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2.3);
    let warmup: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(6);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(14);
    let lr: f32 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.005);
    let tau: f32 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.95);

    let out = Path::new("/tmp/detox_tune");
    let (poisoned, _) = load_dataset(&out.join("poisoned")).unwrap();
    let (test, _) = load_dataset(&out.join("test")).unwrap();
    let trigger = badnets_patch(3);
    let sl = ModelState::load(&out.join("sl.ckpt")).unwrap();
    let fr = FilterResult::load(&out.join("filter.json")).unwrap();

    let ucfg = UnlearnConfig { seed: 100, loss_clamp: Some(clamp), ..Default::default() };
    let (au, _) = active_unlearn(sl, &poisoned, &fr.poisoned_idx, &ucfg, None).unwrap();
    println!("post-AU: CA {:.4} ASR {:.4}",
        clean_accuracy(&au, &test).unwrap(),
        attack_success_rate(&au, &test, &trigger, 0, false).unwrap());

    let semi = strip_labels(&poisoned, &fr.clean_idx).unwrap();
    let monitor = EvalMonitor { test: &test, attack: Some((&trigger, 0)), every: 2 };

    // phase 1: labeled-only warmup
    let cfg1 = SSLConfig { learning_rate: lr, epochs: warmup, lambda_u: 0.0, seed: 100, ..Default::default() };
    let (mut model, m1) = ssl_train(au, &semi, &cfg1, Some(&monitor)).unwrap();
    for r in &m1.epochs {
        if let Some(ca) = r.clean_accuracy {
            println!("warm {:>2}: CA {:.4} ASR {:.4}", r.epoch, ca, r.attack_success_rate.unwrap_or(f64::NAN));
        }
    }
    // phase 2: consistency
    model.stage = StageTag::Au;
    let cfg2 = SSLConfig { learning_rate: lr, epochs, confidence_tau: tau, seed: 101, ..Default::default() };
    let (_, m2) = ssl_train(model, &semi, &cfg2, Some(&monitor)).unwrap();
    for r in &m2.epochs {
        if let Some(ca) = r.clean_accuracy {
            println!("cons {:>2}: accept {:.3} CA {:.4} ASR {:.4}",
                r.epoch, r.pseudo_label_rate.unwrap_or(f64::NAN), ca, r.attack_success_rate.unwrap_or(f64::NAN));
        }
    }
}
