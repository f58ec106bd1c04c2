//! Per-entity state shared by the environment, rules and agents.

use serde::{Deserialize, Serialize};

/// Ground-node role in a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeType {
    /// Harvests energy (flag 0).
    Energy,
    /// Transmits data (flag 1).
    Info,
}

impl NodeType {
    pub fn flag(self) -> u8 {
        match self {
            NodeType::Energy => 0,
            NodeType::Info => 1,
        }
    }

    pub fn from_flag(flag: u8) -> Self {
        if flag == 0 {
            NodeType::Energy
        } else {
            NodeType::Info
        }
    }

    pub fn is_info(self) -> bool {
        self == NodeType::Info
    }
}

/// A ground wireless node. Position is fixed on the ground plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WnState {
    pub pos: [f64; 2],
    /// Battery (W·s), within `[0, b_wn_max]`.
    pub battery: f64,
    pub node_type: NodeType,
    /// Hungry-level of energy. At least 1 for E-nodes, 0 for I-nodes.
    pub hoe: u32,
    /// Data delivered so far (bits/Hz).
    pub acc_data: f64,
    /// Energy harvested in the previous slot (W·s).
    pub last_harvest: f64,
}

/// A UAV flying at the configured altitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub pos: [f64; 2],
    /// Battery (W·s), within `[0, b_uav_max]`.
    pub battery: f64,
    pub wet: bool,
    /// Effective speed over the last slot (m/s).
    pub velocity: f64,
    /// Battery levels as last reported to this UAV, one per node.
    pub observed_batteries: Vec<f64>,
    /// Accumulated data as last reported to this UAV, one per node.
    pub observed_acc_data: Vec<f64>,
}

impl UavState {
    pub fn is_depleted(&self) -> bool {
        self.battery <= 0.0
    }
}

/// Data-collection assignment for one sub-slot: UAV index → node index.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SubSlotSchedule {
    pub assignment: Vec<Option<usize>>,
}

impl SubSlotSchedule {
    pub fn silent(num_uavs: usize) -> Self {
        Self {
            assignment: vec![None; num_uavs],
        }
    }

    pub fn num_uavs(&self) -> usize {
        self.assignment.len()
    }

    /// `(uav, node)` pairs in UAV order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignment
            .iter()
            .enumerate()
            .filter_map(|(u, w)| w.map(|w| (u, w)))
    }

    /// UAV serving `node`, if any.
    pub fn uav_for(&self, node: usize) -> Option<usize> {
        self.pairs().find(|&(_, w)| w == node).map(|(u, _)| u)
    }

    /// Checks one-to-one association and that every mapped node is an I-node.
    pub fn is_feasible(&self, node_types: &[NodeType]) -> bool {
        let mut claimed = vec![false; node_types.len()];
        for (_, w) in self.pairs() {
            if w >= node_types.len() || !node_types[w].is_info() || claimed[w] {
                return false;
            }
            claimed[w] = true;
        }
        true
    }

    /// Number of sub-slots in which each node transmits, given a slot's schedules.
    pub fn tx_counts(schedules: &[SubSlotSchedule], num_wns: usize) -> Vec<usize> {
        let mut counts = vec![0; num_wns];
        for s in schedules {
            for (_, w) in s.pairs() {
                counts[w] += 1;
            }
        }
        counts
    }
}
