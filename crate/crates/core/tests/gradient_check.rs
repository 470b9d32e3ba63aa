mod common;

use nplb::losses::LossKind;

#[test]
fn backprop_matches_finite_differences_for_every_loss() {
    for kind in [
        LossKind::Traditional,
        LossKind::DistanceSwap,
        LossKind::NPLB2,
        LossKind::nplb(4).unwrap(),
    ] {
        for seed in 0..5 {
            let err = common::max_relative_error(kind, seed, 6);
            assert!(err < 1e-4, "{kind} seed {seed}: relative error {err:e}");
        }
    }
}
