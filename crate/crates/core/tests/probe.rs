use fare_core::conformal::PredictionBand;
use fare_core::eval::{build_test_set, TestSetConfig};
use fare_core::policy::{Evaluator, PolicyWeights};
use fare_core::simworld::FailureKind;
use std::path::Path;

#[test]
fn probe_scores() {
    let w = PolicyWeights::load(Path::new("/tmp/full2/models/policy.fwt")).unwrap();
    let band = PredictionBand::load(Path::new("/tmp/full2/models/policy.band")).unwrap();
    let mu_min = band.mu.iter().cloned().fold(f64::INFINITY, f64::min);
    let mu_max = band.mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "band mu range [{mu_min:.4}, {mu_max:.4}], w = {:.4}, n_mu={} n_w={}",
        band.w, band.n_mu, band.n_w
    );

    let mut ev = Evaluator::new(&w).unwrap();
    let zero = vec![0.0f32; 48 * 64];
    let (kl_zero, _) = ev.eval(&zero).unwrap();
    println!("zero-frame KL = {kl_zero:.4}");

    let ts = build_test_set(&TestSetConfig {
        n_fail: 12,
        n_normal: 8,
        seed: 3,
        height: 48,
        width: 64,
    })
    .unwrap();
    // Clean-trajectory score trace: how does KL vary over time and across trajs?
    let mut clean_at = vec![Vec::new(); 100];
    for traj in ts.trajs.iter().filter(|t| t.failure.is_none()) {
        for (t, frame) in traj.frames.iter().enumerate() {
            let (s, _) = ev.eval(frame).unwrap();
            clean_at[t].push(s);
        }
    }
    for t in [0, 10, 30, 50, 79, 85, 95] {
        let v = &clean_at[t];
        let mn = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!(
            "clean t={t:3}: min {mn:9.4} max {mx:9.4} | band upper {:9.4}",
            band.upper(t)
        );
    }

    for kind in FailureKind::ALL {
        let mut pre = Vec::new();
        let mut post = Vec::new();
        let mut post_margin = Vec::new();
        for traj in &ts.trajs {
            if traj.failure.map(|(k, _)| k) != Some(kind) {
                continue;
            }
            for (t, frame) in traj.frames.iter().enumerate() {
                let (s, _) = ev.eval(frame).unwrap();
                if t >= 80 {
                    post.push(s);
                    post_margin.push(s - band.upper(t));
                } else {
                    pre.push(s);
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!(
            "{:12} pre mean {:8.4} max {:8.4} | post mean {:8.4} max {:8.4} | margin mean {:8.4} max {:8.4}",
            kind.name(),
            mean(&pre),
            max(&pre),
            mean(&post),
            max(&post),
            mean(&post_margin),
            max(&post_margin)
        );
    }
}
