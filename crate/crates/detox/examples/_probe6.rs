// diagnostic: pseudo-label composition on the unlabeled pool post-AU
use detox::augment::{augment, Strength};
use detox::data::io::load_dataset;
use detox::filter::FilterResult;
use detox::model::ModelState;
use detox::ssl::strip_labels;
use detox::unlearn::{active_unlearn, UnlearnConfig};
use ndarray::Array4;
use std::path::Path;

fn main() {
    let out = Path::new("/tmp/detox_tune");
    let (poisoned, _) = load_dataset(&out.join("poisoned")).unwrap();
    let sl = ModelState::load(&out.join("sl.ckpt")).unwrap();
    let fr = FilterResult::load(&out.join("filter.json")).unwrap();
    let ucfg = UnlearnConfig { seed: 100, loss_clamp: Some(2.3), ..Default::default() };
    let (au, _) = active_unlearn(sl, &poisoned, &fr.poisoned_idx, &ucfg, None).unwrap();

    let semi = strip_labels(&poisoned, &fr.clean_idx).unwrap();
    let mask = poisoned.poison_mask();

    // weak views of every unlabeled sample, as assft would see them
    let (_, h, w, c) = semi.unlabeled_images.dim();
    let n = semi.unlabeled_src.len();
    let mut weak = Array4::<f32>::zeros((n, h, w, c));
    for (row, _) in semi.unlabeled_src.iter().enumerate() {
        let img = augment(semi.unlabeled_images.index_axis(ndarray::Axis(0), row), Strength::Weak, row as u64);
        weak.index_axis_mut(ndarray::Axis(0), row).assign(&img);
    }
    let probs = au.predict_proba(weak.view()).unwrap();

    let mut stats = |name: &str, rows: Vec<usize>| {
        let mut conf_sum = 0.0; let mut acc95_0 = 0; let mut acc95_other = 0; let mut argmax0 = 0;
        for &r in &rows {
            let row = probs.row(r);
            let (mut best, mut bi) = (f32::MIN, 0);
            for (i, &v) in row.iter().enumerate() { if v > best { best = v; bi = i; } }
            conf_sum += best as f64;
            if bi == 0 { argmax0 += 1; }
            if best >= 0.95 { if bi == 0 { acc95_0 += 1; } else { acc95_other += 1; } }
        }
        println!("{name}: n={} mean_conf {:.3} argmax0 {:.3} accepted@.95 -> class0 {} other {}",
            rows.len(), conf_sum / rows.len() as f64, argmax0 as f64 / rows.len() as f64, acc95_0, acc95_other);
    };

    let triggered: Vec<usize> = (0..n).filter(|&r| mask[semi.unlabeled_src[r]]).collect();
    let clean: Vec<usize> = (0..n).filter(|&r| !mask[semi.unlabeled_src[r]]).collect();
    stats("triggered", triggered);
    stats("clean    ", clean);
}
