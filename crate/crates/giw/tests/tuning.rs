//! Manual tuning sweeps for the validation-split heuristics. Run with
//! `cargo test -p giw --test tuning -- --ignored --nocapture`.

use giw::net::Mlp;
use giw::synth::{CaseId, Side, SupportSpec};
use giw::train::{val_data_split, OsvmSplitConfig, SplitRule};
use giw::kernel::GammaSpec;

fn sweep(case: CaseId, gamma: f64, nu: f64) -> (usize, usize, usize) {
    let spec = SupportSpec::case_spec(case);
    let n_test_only = spec.test_only_boxes().len();
    let expected_oot = 2 * n_test_only;
    let n_val = 2 * spec.test.len();
    let expected_alpha = (n_val - expected_oot) as f64 / n_val as f64;
    let model = Mlp::new_he(&[2, 32, 32, 2], 0).unwrap();
    let cfg = OsvmSplitConfig {
        nu,
        gamma: GammaSpec::Fixed(gamma),
        rule: SplitRule::Auto,
        representation: giw::train::SplitRepr::RawInput,
    };
    let mut alpha_ok = 0;
    let mut partition_ok = 0;
    let mut total = 0;
    for seed in 0..100u64 {
        let dtr = spec.sample(Side::Train, 200, seed ^ 0x44415452).unwrap();
        let dv = spec.boxed_validation(2, seed ^ 0x4441564c).unwrap();
        let split = val_data_split(&model, &dtr, &dv, &cfg).unwrap();
        total += 1;
        if (split.alpha_hat - expected_alpha).abs() < 1e-12 {
            alpha_ok += 1;
        }
        // ground truth: a point is OOT iff no same-label train box contains it
        let truth_oot: Vec<usize> = (0..dv.len())
            .filter(|&i| {
                let x = [dv.features[[i, 0]], dv.features[[i, 1]]];
                !spec
                    .train
                    .iter()
                    .any(|b| b.label == dv.labels[i] && b.contains(x))
            })
            .collect();
        if split.oot_indices == truth_oot {
            partition_ok += 1;
        }
    }
    (alpha_ok, partition_ok, total)
}

#[test]
#[ignore]
fn sweep_case_iii_and_i() {
    for gamma in [50.0, 100.0, 200.0, 300.0, 500.0] {
        for nu in [0.1, 0.5, 1.0] {
            let (a3, p3, t) = sweep(CaseId::III, gamma, nu);
            let (a1, p1, _) = sweep(CaseId::I, gamma, nu);
            println!(
                "gamma={gamma:6.0} nu={nu:3.1}  case3 alpha={a3:3}/{t} part={p3:3}  case1 alpha={a1:3} part={p1:3}"
            );
        }
    }
}
