//! World configuration, unit conversion and configuration validation.
//!
//! Powers are stored in watts and energies in watt-seconds. dBm only appears
//! when building defaults from datasheet-style values.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Converts dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Converts watts to dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Fit constants of the normalized-logistic RF-to-DC curve used between
/// sensitivity and saturation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarvesterParams {
    /// DC output at saturation (W).
    pub f_max_w: f64,
    /// Logistic midpoint (W).
    pub midpoint_w: f64,
    /// Logistic steepness (1/W).
    pub steepness_per_w: f64,
}

impl Default for HarvesterParams {
    fn default() -> Self {
        Self {
            f_max_w: 4.5e-3,
            midpoint_w: 1.5e-3,
            steepness_per_w: 2500.0,
        }
    }
}

/// Rotary-wing propulsion constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropulsionParams {
    /// Blade profile power in hover (W).
    pub p_a: f64,
    /// Induced power in hover (W).
    pub p_b: f64,
    /// Rotor blade tip speed (m/s).
    pub v_tip: f64,
    /// Mean rotor induced velocity in hover (m/s).
    pub e0: f64,
    /// Fuselage drag ratio.
    pub f0: f64,
    /// Air density (kg/m^3).
    pub air_density: f64,
    /// Rotor solidity.
    pub e1: f64,
    /// Rotor disc area (m^2).
    pub rotor_area: f64,
}

impl Default for PropulsionParams {
    fn default() -> Self {
        Self {
            p_a: 79.86,
            p_b: 88.63,
            v_tip: 120.0,
            e0: 4.03,
            f0: 0.6,
            air_density: 1.225,
            e1: 0.05,
            rotor_area: 0.503,
        }
    }
}

/// Sign convention for the SAC entropy target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyTarget {
    /// `+|o|`, the observation width.
    ObservationDim,
    /// `-|o|`, for ablation against common SAC practice.
    NegObservationDim,
}

/// When tier-2 networks take a gradient step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DqnTrainCadence {
    PerSubslot,
    PerSlot,
}

/// Learning hyper-parameters for both tiers and the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningConfig {
    pub hidden_width: usize,
    /// Hidden layers per network; 3 hidden layers give 5 layers counting input and output.
    pub hidden_layers: usize,
    pub sac_lr: f64,
    pub alpha_lr: f64,
    pub init_alpha: f64,
    pub gamma: f64,
    pub tau: f64,
    pub entropy_target: EntropyTarget,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub dqn_lr_start: f64,
    pub dqn_lr_end: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episodes over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub target_sync_steps: u64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub dqn_cadence: DqnTrainCadence,
    /// SAC gradient steps are taken every this many slots.
    pub sac_train_interval: usize,
    /// Actor parameters are copied to the UAVs every this many slots.
    pub actor_sync_interval: usize,
    pub episodes: usize,
    /// Training episodes per candidate in the phase-division search.
    pub tbar_episodes: usize,
    /// Step between phase-division candidates.
    pub tbar_stride: usize,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            hidden_width: 256,
            hidden_layers: 3,
            sac_lr: 3e-4,
            alpha_lr: 2e-4,
            init_alpha: 0.05,
            gamma: 0.99,
            tau: 0.999,
            entropy_target: EntropyTarget::ObservationDim,
            log_std_min: -20.0,
            log_std_max: 2.0,
            dqn_lr_start: 0.01,
            dqn_lr_end: 1e-6,
            epsilon_start: 0.9,
            epsilon_end: 0.02,
            epsilon_decay_fraction: 0.8,
            target_sync_steps: 200,
            buffer_capacity: 131_072,
            batch_size: 128,
            dqn_cadence: DqnTrainCadence::PerSubslot,
            sac_train_interval: 1,
            actor_sync_interval: 1,
            episodes: 2000,
            tbar_episodes: 100,
            tbar_stride: 1,
        }
    }
}

/// Every physical, protocol and learning constant of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub area_width_m: f64,
    pub area_height_m: f64,
    pub num_uavs: usize,
    pub num_wns: usize,
    pub altitude_m: f64,
    pub horizon_slots: usize,
    pub subslots: usize,
    pub slot_len_s: f64,
    pub subslot_len_s: f64,
    pub p_uav_tx_w: f64,
    pub p_wn_tx_w: f64,
    pub p_wdc_w: f64,
    pub noise_w: f64,
    pub g0: f64,
    pub alpha_los: f64,
    pub alpha_nlos: f64,
    pub los_a: f64,
    pub los_b: f64,
    pub p_sen_w: f64,
    pub p_sat_w: f64,
    pub harvester: HarvesterParams,
    pub b_e: f64,
    pub b_i: f64,
    pub b_wn_max: f64,
    pub b_uav_max: f64,
    pub b_uav_min: f64,
    pub wn_init_battery_min: f64,
    pub wn_init_battery_max: f64,
    pub d_min_m: f64,
    pub d_cov_m: f64,
    pub c_min: f64,
    pub v_max: f64,
    pub propulsion: PropulsionParams,
    /// Mixing weights for the WET, WDC, energy-saving and safe-distance rewards.
    pub reward_weights: [f64; 4],
    /// Accumulated-data normalizer for observation features (bits/Hz).
    pub data_scale: f64,
    /// Seed of the ground-node deployment.
    pub seed: u64,
    pub learning: LearningConfig,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            area_width_m: 400.0,
            area_height_m: 400.0,
            num_uavs: 4,
            num_wns: 10,
            altitude_m: 5.0,
            horizon_slots: 300,
            subslots: 4,
            slot_len_s: 1.0,
            subslot_len_s: 0.25,
            p_uav_tx_w: 1.0,
            p_wn_tx_w: 1e-4,
            p_wdc_w: 1e-2,
            noise_w: dbm_to_watts(-90.0),
            g0: 0.1,
            alpha_los: 3.0,
            alpha_nlos: 5.0,
            los_a: 12.08,
            los_b: 0.11,
            p_sen_w: dbm_to_watts(-10.0),
            p_sat_w: dbm_to_watts(7.0),
            harvester: HarvesterParams::default(),
            b_e: 2e-3,
            b_i: 4e-3,
            b_wn_max: 6e-3,
            b_uav_max: 4e5,
            b_uav_min: 3e4,
            wn_init_battery_min: 2e-3,
            wn_init_battery_max: 4e-3,
            d_min_m: 2.0,
            d_cov_m: 20.0,
            c_min: 100.0,
            v_max: 20.0,
            propulsion: PropulsionParams::default(),
            reward_weights: [20.0, 0.01, 1e-6, 1.0],
            data_scale: 1000.0,
            seed: 0,
            learning: LearningConfig::default(),
        }
    }
}

impl WorldConfig {
    /// Desk-scale scenario: 2 UAVs, 4 nodes, 300 slots, 200 training episodes.
    ///
    /// The area is shrunk to 100 m x 100 m. At 300 m, short training runs never
    /// find the few metres around a node where energy transfer works, and
    /// every evaluation collects nothing. The entropy target is negative so the
    /// temperature decays instead of growing without bound. SAC updates run every
    /// second slot.
    pub fn desk() -> Self {
        Self {
            area_width_m: 100.0,
            area_height_m: 100.0,
            num_uavs: 2,
            num_wns: 4,
            learning: LearningConfig {
                hidden_width: 32,
                entropy_target: EntropyTarget::NegObservationDim,
                sac_train_interval: 2,
                episodes: 200,
                dqn_cadence: DqnTrainCadence::PerSlot,
                tbar_episodes: 30,
                tbar_stride: 60,
                ..LearningConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Tier-1 observation width `3W + 3`.
    pub fn tier1_obs_dim(&self) -> usize {
        3 * self.num_wns + 3
    }

    /// Tier-2 observation width `W + 3`.
    pub fn tier2_obs_dim(&self) -> usize {
        self.num_wns + 3
    }

    /// Joint SAC state width `(3W + 3) * U`.
    pub fn joint_state_dim(&self) -> usize {
        self.tier1_obs_dim() * self.num_uavs
    }

    /// Expected per-slot harvest `(B_I - B_E) / T` used by the HoE counter.
    pub fn expected_harvest(&self) -> f64 {
        (self.b_i - self.b_e) / self.horizon_slots as f64
    }
}

/// Relations checked by [`validate_config`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    SensitivityPositive,
    SensitivityBelowSaturation,
    WnTxEnergyBelowEThreshold,
    EThresholdBelowIThreshold,
    IThresholdWithinCapacity,
    SlotIsSubslotMultiple,
    LosExponentPositive,
    LosBelowNlosExponent,
    AtLeastTwoUavs,
    MoreWnsThanUavs,
    PositiveGeometry,
    PositiveHorizon,
    PositiveReportingRange,
    InitBatteryRange,
    UavBatteryRange,
    PositiveMaxSpeed,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Relation::SensitivityPositive => "0 < p_sen",
            Relation::SensitivityBelowSaturation => "p_sen < p_sat",
            Relation::WnTxEnergyBelowEThreshold => "p_wn_tx * slot_len < b_e",
            Relation::EThresholdBelowIThreshold => "b_e < b_i",
            Relation::IThresholdWithinCapacity => "b_i <= b_wn_max",
            Relation::SlotIsSubslotMultiple => "slot_len = subslots * subslot_len",
            Relation::LosExponentPositive => "0 < alpha_los",
            Relation::LosBelowNlosExponent => "alpha_los < alpha_nlos",
            Relation::AtLeastTwoUavs => "num_uavs >= 2",
            Relation::MoreWnsThanUavs => "num_wns > num_uavs",
            Relation::PositiveGeometry => "area, altitude > 0",
            Relation::PositiveHorizon => "horizon_slots, subslots >= 1",
            Relation::PositiveReportingRange => "d_cov > 0",
            Relation::InitBatteryRange => {
                "0 <= wn_init_battery_min <= wn_init_battery_max <= b_wn_max"
            }
            Relation::UavBatteryRange => "0 <= b_uav_min <= b_uav_max",
            Relation::PositiveMaxSpeed => "v_max > 0",
        };
        f.write_str(s)
    }
}

/// One failed relation, naming the offending field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub field: &'static str,
    pub relation: Relation,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: violates {}", self.field, self.relation)
    }
}

/// Checks every configuration invariant. Empty output means the config is valid.
pub fn validate_config(cfg: &WorldConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut check = |ok: bool, field: &'static str, relation: Relation| {
        if !ok {
            out.push(Violation { field, relation });
        }
    };
    check(cfg.p_sen_w > 0.0, "p_sen_w", Relation::SensitivityPositive);
    check(
        cfg.p_sen_w < cfg.p_sat_w,
        "p_sat_w",
        Relation::SensitivityBelowSaturation,
    );
    check(
        cfg.p_wn_tx_w * cfg.slot_len_s < cfg.b_e,
        "b_e",
        Relation::WnTxEnergyBelowEThreshold,
    );
    check(
        cfg.b_e < cfg.b_i,
        "b_i",
        Relation::EThresholdBelowIThreshold,
    );
    check(
        cfg.b_i <= cfg.b_wn_max,
        "b_wn_max",
        Relation::IThresholdWithinCapacity,
    );
    let k_rho = cfg.subslots as f64 * cfg.subslot_len_s;
    check(
        (cfg.slot_len_s - k_rho).abs() <= 1e-9 * cfg.slot_len_s.abs().max(1.0),
        "subslot_len_s",
        Relation::SlotIsSubslotMultiple,
    );
    check(
        cfg.alpha_los > 0.0,
        "alpha_los",
        Relation::LosExponentPositive,
    );
    check(
        cfg.alpha_los < cfg.alpha_nlos,
        "alpha_nlos",
        Relation::LosBelowNlosExponent,
    );
    check(cfg.num_uavs >= 2, "num_uavs", Relation::AtLeastTwoUavs);
    check(
        cfg.num_wns > cfg.num_uavs,
        "num_wns",
        Relation::MoreWnsThanUavs,
    );
    check(
        cfg.area_width_m > 0.0 && cfg.area_height_m > 0.0 && cfg.altitude_m > 0.0,
        "altitude_m",
        Relation::PositiveGeometry,
    );
    check(
        cfg.horizon_slots >= 1 && cfg.subslots >= 1,
        "horizon_slots",
        Relation::PositiveHorizon,
    );
    check(
        cfg.d_cov_m > 0.0,
        "d_cov_m",
        Relation::PositiveReportingRange,
    );
    check(
        0.0 <= cfg.wn_init_battery_min
            && cfg.wn_init_battery_min <= cfg.wn_init_battery_max
            && cfg.wn_init_battery_max <= cfg.b_wn_max,
        "wn_init_battery_max",
        Relation::InitBatteryRange,
    );
    check(
        0.0 <= cfg.b_uav_min && cfg.b_uav_min <= cfg.b_uav_max,
        "b_uav_min",
        Relation::UavBatteryRange,
    );
    check(cfg.v_max > 0.0, "v_max", Relation::PositiveMaxSpeed);
    out
}

/// Validates, tolerating the listed relations.
pub fn ensure_valid(cfg: &WorldConfig, allowed: &[Relation]) -> Result<()> {
    let violations: Vec<Violation> = validate_config(cfg)
        .into_iter()
        .filter(|v| !allowed.contains(&v.relation))
        .collect();
    if violations.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(violations))
    }
}
