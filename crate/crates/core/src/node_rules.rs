//! Double-threshold node typing, hungry-level-of-energy bookkeeping and the
//! partially observable status reports.

use crate::scalar::Scalar;
use crate::state::{NodeType, UavState, WnState};

/// Hysteresis rule: I-node at or above `b_i`, E-node at or below `b_e`, and
/// the previous type in between.
pub fn update_node_type<T: Scalar>(battery: T, prev: NodeType, b_e: T, b_i: T) -> NodeType {
    if battery >= b_i {
        NodeType::Info
    } else if battery <= b_e {
        NodeType::Energy
    } else {
        prev
    }
}

/// Per-slot harvest an E-node needs on average to turn into an I-node once
/// over the horizon.
pub fn expected_harvest<T: Scalar>(b_e: T, b_i: T, horizon_slots: usize) -> T {
    (b_i - b_e) / T::lit(horizon_slots as f64)
}

/// Next HoE value. I-nodes reset to 0; E-nodes count up while under-charged
/// and count down (never below 1) otherwise.
pub fn update_hoe<T: Scalar>(prev: u32, last_harvest: T, node_type: NodeType, expected: T) -> u32 {
    match node_type {
        NodeType::Info => 0,
        NodeType::Energy => {
            if last_harvest < expected {
                prev + 1
            } else {
                prev.saturating_sub(1).max(1)
            }
        }
    }
}

/// Status reports received by one UAV at the start of a slot.
///
/// I-node reports always arrive. E-node reports arrive only within `d_cov`
/// horizontal distance (inclusive); otherwise the previous observation is kept.
pub fn observe_status(uav: &mut UavState, wns: &[WnState], d_cov: f64) {
    debug_assert_eq!(uav.observed_batteries.len(), wns.len());
    for (w, wn) in wns.iter().enumerate() {
        let dx = uav.pos[0] - wn.pos[0];
        let dy = uav.pos[1] - wn.pos[1];
        let reachable = wn.node_type.is_info() || (dx * dx + dy * dy).sqrt() <= d_cov;
        if reachable {
            uav.observed_batteries[w] = wn.battery;
            uav.observed_acc_data[w] = wn.acc_data;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const BE: f64 = 2e-3;
    const BI: f64 = 4e-3;

    fn wn(pos: [f64; 2], battery: f64, node_type: NodeType) -> WnState {
        WnState {
            pos,
            battery,
            node_type,
            hoe: if node_type.is_info() { 0 } else { 1 },
            acc_data: 7.0,
            last_harvest: 0.0,
        }
    }

    fn uav(pos: [f64; 2], n: usize) -> UavState {
        UavState {
            pos,
            battery: 1.0,
            wet: false,
            velocity: 0.0,
            observed_batteries: vec![-1.0; n],
            observed_acc_data: vec![-1.0; n],
        }
    }

    #[test]
    fn thresholds_override_previous_type() {
        for prev in [NodeType::Energy, NodeType::Info] {
            assert_eq!(update_node_type(BI, prev, BE, BI), NodeType::Info);
            assert_eq!(update_node_type(BE, prev, BE, BI), NodeType::Energy);
            assert_eq!(update_node_type(0.5 * (BE + BI), prev, BE, BI), prev);
        }
    }

    #[test]
    fn hoe_fixtures() {
        let e_exp = expected_harvest(BE, BI, 300);
        assert!((e_exp - 6.666666666666667e-6f64).abs() < 1e-18);
        assert_eq!(update_hoe(3, 0.0, NodeType::Energy, e_exp), 4);
        assert_eq!(update_hoe(1, e_exp, NodeType::Energy, e_exp), 1);
        assert_eq!(update_hoe(5, 1.0, NodeType::Energy, e_exp), 4);
        assert_eq!(update_hoe(7, 0.0, NodeType::Info, e_exp), 0);
        // A node that just stopped transmitting starts counting from 1.
        assert_eq!(update_hoe(0, 0.0, NodeType::Energy, e_exp), 1);
        assert_eq!(update_hoe(0, 1.0, NodeType::Energy, e_exp), 1);
    }

    #[test]
    fn reporting_range_is_inclusive() {
        let wns = vec![
            wn([20.0, 0.0], 3e-3, NodeType::Energy),
            wn([21.0, 0.0], 3e-3, NodeType::Energy),
        ];
        let mut u = uav([0.0, 0.0], 2);
        observe_status(&mut u, &wns, 20.0);
        assert_eq!(u.observed_batteries, vec![3e-3, -1.0]);
        assert_eq!(u.observed_acc_data, vec![7.0, -1.0]);
    }

    #[test]
    fn i_nodes_are_always_observed() {
        let wns = vec![wn([300.0, 300.0], 4.5e-3, NodeType::Info)];
        let mut u = uav([0.0, 0.0], 1);
        observe_status(&mut u, &wns, 20.0);
        assert_eq!(u.observed_batteries, vec![4.5e-3]);
    }

    #[derive(Clone, Copy, PartialEq, Debug)]
    enum Automaton {
        Harvesting,
        Transmitting,
    }

    // Reference two-state machine, written as transitions rather than thresholds.
    fn step(state: Automaton, b: f64) -> Automaton {
        match state {
            Automaton::Harvesting if b >= BI => Automaton::Transmitting,
            Automaton::Transmitting if b <= BE => Automaton::Harvesting,
            s => s,
        }
    }

    #[test]
    fn random_walks_follow_reference_automaton() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut b: f64 = rng.random_range(0.0..6e-3);
            let mut flag = NodeType::Energy;
            let mut auto = Automaton::Harvesting;
            let mut flips = 0;
            for _ in 0..200 {
                b = (b + rng.random_range(-4e-4..4e-4)).clamp(0.0, 6e-3);
                let next = update_node_type(b, flag, BE, BI);
                auto = step(auto, b);
                assert_eq!(next.is_info(), auto == Automaton::Transmitting);
                if next != flag {
                    flips += 1;
                }
                flag = next;
            }
            let _ = flips;
        }
    }

    #[test]
    fn i_node_persists_inside_band() {
        let mut flag = update_node_type(4.1e-3, NodeType::Energy, BE, BI);
        assert!(flag.is_info());
        for i in 0..20 {
            let b = 3.9e-3 - i as f64 * 9e-5;
            flag = update_node_type(b, flag, BE, BI);
            assert!(flag.is_info(), "dropped out at {b}");
        }
    }
}
