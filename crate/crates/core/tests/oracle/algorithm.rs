//! Independent transcription of the GAN-based adversarial dataset
//! construction, used to check `gadot_augment` on toy inputs.

use floodguard::augment::{donor_seed, PerturbationPlan, PlanFeature};
use floodguard::flow::{LabeledDataset, NUM_FEATURES};
use floodguard::gan::GanModel;

/// Line-by-line reading of the adversarial dataset algorithm, before balancing.
pub fn literal_algorithm(
    t: &LabeledDataset,
    plan: &PerturbationPlan,
    g: &GanModel,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<u8>) {
    let rows = t.rows;
    let width = rows * NUM_FEATURES;
    let n_ddos = t.labels.iter().filter(|&&y| y == 1).count();
    // T_adv <- T
    let mut x_adv: Vec<Vec<f64>> = t.samples.iter().map(|s| s.matrix.clone()).collect();
    let mut y_adv = t.labels.clone();
    for (k, f) in plan.features().iter().enumerate() {
        // z ~ N(0, 1); T_g <- G(z)
        let tg = g.generate(n_ddos, donor_seed(seed, k)).unwrap();
        let tg = tg.data.data();
        // T_c <- copy(T)
        let mut tc: Vec<Vec<f64>> = t.samples.iter().map(|s| s.matrix.clone()).collect();
        let mut i = 0;
        for (j, s) in t.samples.iter().enumerate() {
            if t.labels[j] != 1 {
                continue;
            }
            let donor = &tg[i * width..(i + 1) * width];
            match f {
                // fill the zero-padded rows
                PlanFeature::FlowLength => {
                    for r in s.flow_length..rows {
                        for c in 0..NUM_FEATURES {
                            tc[j][r * NUM_FEATURES + c] = donor[r * NUM_FEATURES + c];
                        }
                    }
                }
                // T_c[Y == 1, f] <- T_g[:, f]
                PlanFeature::Column(feat) => {
                    let c = feat.column();
                    for r in 0..s.flow_length {
                        tc[j][r * NUM_FEATURES + c] = donor[r * NUM_FEATURES + c];
                    }
                }
            }
            i += 1;
        }
        // T_adv <- T_adv + T_c
        x_adv.extend(tc);
        y_adv.extend(t.labels.iter().copied());
    }
    (x_adv, y_adv)
}
