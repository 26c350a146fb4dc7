use dram_core::dataset::make_split;
use dram_core::metrics::evaluate_poses;
use dram_core::skeleton::SkeletonTopology;
use dram_core::synth::{generate_dataset, SynthConfig};
use dram_core::tensor::Tensor;

#[test]
fn frozen_pose_baseline() {
    let topo = SkeletonTopology::default_upper_body();
    let cfg = SynthConfig { duration: 5400, audio_dim: 23, seed: 0, ..Default::default() };
    let ds = generate_dataset(&cfg, 30).unwrap();
    let split = make_split(30, [0.8, 0.1, 0.1], 0).unwrap();
    let k = 32usize;

    for horizon in [120usize, 360, 1080] {
        let mut preds = Vec::new();
        let mut truths = Vec::new();
        for &idx in &split.test {
            let seq = &ds.sequences[idx];
            let h = (seq.frames() - k).min(horizon);
            let frozen = seq.avatar_pose.col(k - 1);
            let mut p = Tensor::zeros(&[seq.avatar_pose.rows(), h]);
            for t in 0..h {
                p.set_col(t, &frozen);
            }
            preds.push(p);
            truths.push(seq.avatar_pose.cols_slice(k, h));
        }
        let (pr, tr) = concat(&preds, &truths);
        let rep = evaluate_poses(&pr, &tr, &topo).unwrap();
        println!("frozen horizon {horizon}: ape {:.3}", rep.ape_avg);
    }

    // in-window frame share under the responsiveness rule
    let (mut inn, mut out) = (0usize, 0usize);
    for seq in &ds.sequences {
        for t in k..seq.frames() {
            let inside = seq
                .labels
                .iter()
                .any(|l| t >= l.start && t < l.response_onset + (l.end - l.start));
            if inside {
                inn += 1
            } else {
                out += 1
            }
        }
    }
    println!("in-window frames: {} / {} = {:.3}", inn, inn + out, inn as f64 / (inn + out) as f64);
}

fn concat(preds: &[Tensor], truths: &[Tensor]) -> (Tensor, Tensor) {
    let rows = preds[0].rows();
    let total: usize = preds.iter().map(|p| p.cols()).sum();
    let mut p = Tensor::zeros(&[rows, total]);
    let mut t = Tensor::zeros(&[rows, total]);
    let mut at = 0;
    for (a, b) in preds.iter().zip(truths) {
        for c in 0..a.cols() {
            p.set_col(at, &a.col(c));
            t.set_col(at, &b.col(c));
            at += 1;
        }
    }
    (p, t)
}
