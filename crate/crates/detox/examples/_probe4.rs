// AU-clamp + SSL variant tester: loads /tmp/detox_tune artifacts
use detox::data::io::load_dataset;
use detox::data::triggers::badnets_patch;
use detox::eval::{attack_success_rate, clean_accuracy, EvalMonitor};
use detox::filter::FilterResult;
use detox::model::ModelState;
use detox::ssl::{ssl_train, strip_labels, SSLConfig};
use detox::unlearn::{active_unlearn, UnlearnConfig};
use std::path::Path;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let clamp: f32 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2.5);
    let lr: f32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.005);
    let epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(14);

    let out = Path::new("/tmp/detox_tune");
    let (poisoned, _) = load_dataset(&out.join("poisoned")).unwrap();
    let (test, _) = load_dataset(&out.join("test")).unwrap();
    let trigger = badnets_patch(3);
    let sl = ModelState::load(&out.join("sl.ckpt")).unwrap();
    let fr = FilterResult::load(&out.join("filter.json")).unwrap();

    let ucfg = UnlearnConfig { seed: 100, loss_clamp: Some(clamp), ..Default::default() };
    let (au, _) = active_unlearn(sl, &poisoned, &fr.poisoned_idx, &ucfg, None).unwrap();
    println!("post-AU (clamp {clamp}): CA {:.4} ASR {:.4}",
        clean_accuracy(&au, &test).unwrap(),
        attack_success_rate(&au, &test, &trigger, 0, false).unwrap());

    let semi = strip_labels(&poisoned, &fr.clean_idx).unwrap();
    let lambda_u: f32 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let tau: f32 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.95);
    let cfg = SSLConfig { learning_rate: lr, epochs, seed: 100, lambda_u, confidence_tau: tau, ..Default::default() };
    let monitor = EvalMonitor { test: &test, attack: Some((&trigger, 0)), every: 2 };
    let (_, metrics) = ssl_train(au, &semi, &cfg, Some(&monitor)).unwrap();
    for r in &metrics.epochs {
        if let Some(ca) = r.clean_accuracy {
            println!("epoch {:>2}: loss {:.3} accept {:.3} CA {:.4} ASR {:.4}",
                r.epoch, r.mean_loss, r.pseudo_label_rate.unwrap_or(f64::NAN),
                ca, r.attack_success_rate.unwrap_or(f64::NAN));
        }
    }
}
