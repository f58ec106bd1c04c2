use proptest::prelude::*;
use wpcn_core::channel::{
    channel_gain, link_geometry, los_probability, sinr_matrix, subslot_data_size, ChannelParams,
    GainMatrix,
};
use wpcn_core::config::{dbm_to_watts, WorldConfig};
use wpcn_core::energy::{
    harvested_dc_power, propulsion_power, update_uav_battery, update_wn_battery, LogisticHarvester,
    Propulsion,
};
use wpcn_core::node_rules::{update_hoe, update_node_type};
use wpcn_core::{NodeType, SubSlotSchedule};

fn cfg() -> WorldConfig {
    WorldConfig::default()
}

proptest! {
    #[test]
    fn gain_decreases_with_horizontal_distance(d in 0.0f64..400.0, step in 0.1f64..50.0) {
        let p = ChannelParams::<f64>::from_config(&cfg());
        let near = channel_gain(&link_geometry([0.0, 0.0], [d, 0.0], 5.0), &p);
        let far = channel_gain(&link_geometry([0.0, 0.0], [d + step, 0.0], 5.0), &p);
        prop_assert!(far < near);
        prop_assert!(near > 0.0 && near.is_finite());
    }

    #[test]
    fn gain_depends_only_on_relative_position(x in -100.0f64..100.0, y in -100.0f64..100.0, ox in -50.0f64..50.0, oy in -50.0f64..50.0) {
        let p = ChannelParams::<f64>::from_config(&cfg());
        let a = channel_gain(&link_geometry([x, y], [0.0, 0.0], 5.0), &p);
        let b = channel_gain(&link_geometry([x + ox, y + oy], [ox, oy], 5.0), &p);
        prop_assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn los_probability_is_a_probability(beta in 0.0f64..=90.0) {
        let p = los_probability(beta, 12.08, 0.11);
        prop_assert!(p > 0.0 && p < 1.0);
    }

    #[test]
    fn harvester_is_monotone_and_bounded(dbm_a in -30.0f64..20.0, gap in 0.0f64..10.0) {
        let c = cfg();
        let h = LogisticHarvester::<f64>::from_config(&c);
        let lo = harvested_dc_power(dbm_to_watts(dbm_a), &h);
        let hi = harvested_dc_power(dbm_to_watts(dbm_a + gap), &h);
        prop_assert!(lo >= 0.0);
        prop_assert!(hi >= lo);
        prop_assert!(hi <= c.harvester.f_max_w * (1.0 + 1e-12));
    }

    #[test]
    fn propulsion_is_positive_and_finite(v in 0.0f64..40.0) {
        let p = propulsion_power(v, &Propulsion::<f64>::new(&cfg().propulsion));
        prop_assert!(p > 0.0 && p.is_finite());
    }

    #[test]
    fn wn_battery_stays_in_range(b in 0.0f64..0.02, harvest in 0.0f64..0.02, tx in 0usize..=16) {
        let c = cfg();
        let e = update_wn_battery(b.min(c.b_wn_max), NodeType::Energy, harvest, 0, c.p_wn_tx_w, c.subslot_len_s, c.b_wn_max).unwrap();
        prop_assert!((0.0..=c.b_wn_max).contains(&e));
        let i = update_wn_battery(b.min(c.b_wn_max), NodeType::Info, 0.0, tx, c.p_wn_tx_w, c.subslot_len_s, c.b_wn_max).unwrap();
        prop_assert!((0.0..=c.b_wn_max).contains(&i));
    }

    #[test]
    fn e_nodes_never_transmit(b in 0.0f64..0.01, tx in 1usize..=16) {
        let c = cfg();
        prop_assert!(update_wn_battery(b, NodeType::Energy, 0.0, tx, c.p_wn_tx_w, c.subslot_len_s, c.b_wn_max).is_err());
    }

    #[test]
    fn uav_battery_never_negative(b in 0.0f64..1e6, e in 0.0f64..2e6) {
        let next = update_uav_battery(b, e);
        prop_assert!(next >= 0.0 && next <= b);
    }

    /// The rule agrees with a two-state automaton that switches E -> I only at
    /// or above the upper bound and I -> E only at or below the lower bound.
    #[test]
    fn hysteresis_matches_two_state_automaton(walk in prop::collection::vec(0.0f64..0.012, 1..200), start_info: bool) {
        let (b_e, b_i) = (2e-3, 8e-3);
        let mut state = if start_info { NodeType::Info } else { NodeType::Energy };
        let mut reference = start_info;
        for b in walk {
            state = update_node_type(b, state, b_e, b_i);
            reference = if reference { b > b_e } else { b >= b_i };
            prop_assert_eq!(state.is_info(), reference);
        }
    }

    #[test]
    fn hoe_invariants(prev in 1u32..50, harvest in 0.0f64..1e-4, expected in 0.0f64..1e-4) {
        prop_assert_eq!(update_hoe(prev, harvest, NodeType::Info, expected), 0);
        let next = update_hoe(prev, harvest, NodeType::Energy, expected);
        prop_assert!(next >= 1);
        prop_assert!(next == prev + 1 || next + 1 == prev || (prev == 1 && next == 1));
    }

    #[test]
    fn sinr_is_nonnegative_and_silent_uavs_get_zero(g in prop::collection::vec(1e-9f64..1e-3, 6), a0 in prop::option::of(0usize..3), a1 in prop::option::of(0usize..3)) {
        prop_assume!(a0.is_none() || a0 != a1);
        let gains = GainMatrix::from_rows(vec![g[..3].to_vec(), g[3..].to_vec()]);
        let s = SubSlotSchedule { assignment: vec![a0, a1] };
        let sinr = sinr_matrix(&s, &gains, 1e-4, 1e-12);
        for (u, a) in [a0, a1].iter().enumerate() {
            prop_assert!(sinr[u] >= 0.0);
            if a.is_none() {
                prop_assert_eq!(sinr[u], 0.0);
            }
            prop_assert!(subslot_data_size(sinr[u], 0.25) >= 0.0);
        }
    }
}

#[test]
fn hover_propulsion_is_blade_plus_induced() {
    let c = cfg();
    let p = propulsion_power(0.0, &Propulsion::<f64>::new(&c.propulsion));
    assert_eq!(p, c.propulsion.p_a + c.propulsion.p_b);
}
