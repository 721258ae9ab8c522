//! Property tests for the recovery state machine and heatmap binning.

use fare_core::error::Error;
use fare_core::policy::ActionCmd;
use fare_core::recovery::{
    bin_heatmap, BinFlags, MacroAction, Mode, RecoveryConfig, RecoveryController, MAX_TRIES,
};
use fare_core::tensor::Tensor;
use proptest::prelude::*;

fn to_flags(bits: u8) -> BinFlags {
    BinFlags {
        left: bits & 1 != 0,
        middle: bits & 2 != 0,
        right: bits & 4 != 0,
    }
}

proptest! {
    #[test]
    fn controller_invariants_hold(
        seq in prop::collection::vec((any::<bool>(), 0u8..8), 1..250),
        blind in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let mut c = RecoveryController::new(RecoveryConfig {
            blind,
            seed,
            ..RecoveryConfig::default()
        });
        let pa = ActionCmd { v: 0.4, omega: -0.15 };
        let mut helps = 0usize;
        let mut terminated = false;
        for (i, &(b, bits)) in seq.iter().enumerate() {
            match c.step(i, b, to_flags(bits), pa) {
                Ok(d) => {
                    prop_assert!(!terminated, "stepped after termination");
                    prop_assert!(c.tries() <= MAX_TRIES);
                    if d.help {
                        helps += 1;
                        terminated = true;
                        prop_assert_eq!(d.mode, Mode::Terminated);
                        prop_assert_eq!(d.action, ActionCmd::STOP);
                    }
                    if d.mode == Mode::Normal {
                        // Normal mode is pure pass-through.
                        prop_assert_eq!(d.action, pa);
                        prop_assert!(d.macro_active.is_none());
                    } else {
                        prop_assert!(d.macro_active.is_some());
                    }
                    // Every emitted command is executable.
                    prop_assert!(d.action.v.abs() <= 1.0);
                    prop_assert!(d.action.omega.abs() <= 1.0);
                }
                Err(e) => {
                    prop_assert!(matches!(e, Error::RecoveryTerminated));
                    prop_assert!(terminated);
                }
            }
        }
        prop_assert!(helps <= 1, "help must be terminal and unique");
    }

    #[test]
    fn unflagged_streams_never_leave_normal_mode(
        n in 1usize..300,
        v in 0.0f64..1.0,
        omega in -1.0f64..1.0,
    ) {
        let mut c = RecoveryController::new(RecoveryConfig::default());
        let pa = ActionCmd { v, omega };
        for i in 0..n {
            let d = c.step(i, false, BinFlags::NONE, pa).unwrap();
            prop_assert_eq!(d.mode, Mode::Normal);
            prop_assert_eq!(d.action, pa);
        }
        prop_assert_eq!(c.successes(), 0);
    }

    #[test]
    fn first_macro_rotates_away_from_one_sided_hazards(bits in 1u8..8) {
        let flags = to_flags(bits);
        let mut c = RecoveryController::new(RecoveryConfig::default());
        let d = c.step(0, true, flags, ActionCmd::STOP).unwrap();
        let m = d.macro_active.unwrap();
        match (flags.left, flags.right) {
            (false, true) => prop_assert_eq!(m, MacroAction::RotateLeft),
            (true, false) => prop_assert_eq!(m, MacroAction::RotateRight),
            _ => prop_assert_eq!(m, MacroAction::Backtrack),
        }
    }

    #[test]
    fn binning_is_invariant_under_positive_scaling(
        cells in prop::collection::vec(0.0f64..1.0, 6 * 9..=6 * 9),
        scale in prop::sample::select(vec![1e-6, 0.03, 1.0, 7.0, 1e5]),
    ) {
        let base = Tensor::new(vec![6, 9], cells.clone()).unwrap();
        let scaled = Tensor::new(vec![6, 9], cells.iter().map(|v| v * scale).collect()).unwrap();
        prop_assert_eq!(bin_heatmap(&base), bin_heatmap(&scaled));
    }

    #[test]
    fn nonpositive_maps_flag_nothing(
        cells in prop::collection::vec(-2.0f64..=0.0, 6 * 9..=6 * 9),
    ) {
        let t = Tensor::new(vec![6, 9], cells).unwrap();
        prop_assert_eq!(bin_heatmap(&t), BinFlags::NONE);
    }
}
