//! The slot/sub-slot engine: action application, the WDC association
//! protocol, both reward tiers, observations and constraint accounting.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{sinr_matrix, subslot_data_size, ChannelParams, GainMatrix};
use crate::config::{ensure_valid, Relation, WorldConfig};
use crate::energy::{
    harvested_energy_slot, uav_slot_energy, update_uav_battery, update_wn_battery, Harvester,
    LogisticHarvester, UavEnergyModel,
};
use crate::error::{Error, Result};
use crate::node_rules::{observe_status, update_hoe, update_node_type};
use crate::state::{NodeType, SubSlotSchedule, UavState, WnState};

/// Tier-1 decision of one UAV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotAction {
    /// Radians in `[0, 2pi)`.
    pub heading: f64,
    /// m/s in `[0, v_max]`.
    pub speed: f64,
    pub wet: bool,
}

impl SlotAction {
    pub const HOVER: SlotAction = SlotAction {
        heading: 0.0,
        speed: 0.0,
        wet: false,
    };
}

/// Raw and mixed tier-1 reward terms of one UAV.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub b_wet: f64,
    pub b_wdc: f64,
    pub b_es: f64,
    pub b_sd: f64,
    pub r_total: f64,
}

impl RewardBreakdown {
    pub fn mix(b_wet: f64, b_wdc: f64, b_es: f64, b_sd: f64, xi: &[f64; 4]) -> Self {
        Self {
            b_wet,
            b_wdc,
            b_es,
            b_sd,
            r_total: xi[0] * b_wet + xi[1] * b_wdc + xi[2] * b_es + xi[3] * b_sd,
        }
    }
}

/// How the WET reward weighs E-nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WetWeighting {
    Hoe,
    Uniform,
}

/// Result of one sub-slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SubslotOutcome {
    pub schedule: SubSlotSchedule,
    /// Data each UAV received (bits/Hz).
    pub data: Vec<f64>,
    /// Tier-2 reward per UAV.
    pub rewards: Vec<f64>,
}

/// Result of closing a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    pub rewards: Vec<RewardBreakdown>,
    /// Data delivered by each node during the slot.
    pub slot_data: Vec<f64>,
    pub min_pair_distance: f64,
    pub done: bool,
}

/// Constraint summary of a finished (or interrupted) episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub slots: usize,
    pub wn_data: Vec<f64>,
    pub wn_meets_c_min: Vec<bool>,
    pub uav_end_battery: Vec<f64>,
    pub uav_meets_b_min: Vec<bool>,
    /// Slots in which some UAV pair was closer than `d_min`.
    pub d_min_violations: usize,
    /// Closest UAV pair over the episode; `None` with fewer than two UAVs.
    pub min_pair_distance: Option<f64>,
    pub c_total: f64,
}

impl EpisodeReport {
    pub fn all_pass(&self) -> bool {
        self.wn_meets_c_min.iter().all(|&x| x)
            && self.uav_meets_b_min.iter().all(|&x| x)
            && self.d_min_violations == 0
    }
}

/// One slot of an exported trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: usize,
    pub uav_pos: Vec<[f64; 2]>,
    pub uav_wet: Vec<bool>,
    pub uav_velocity: Vec<f64>,
    pub uav_battery: Vec<f64>,
    pub wn_battery: Vec<f64>,
    pub wn_flag: Vec<u8>,
    pub wn_hoe: Vec<u32>,
    pub wn_acc_data: Vec<f64>,
    pub reward: Vec<f64>,
}

/// Association protocol: UAVs in index order walk their scores from best to
/// worst (ties to the lower node index), skipping E-nodes and nodes claimed
/// by a lower-index UAV. `None` scores mean the UAV does not collect.
pub fn resolve_wdc_associations(
    scores: &[Option<Vec<f64>>],
    node_types: &[NodeType],
) -> SubSlotSchedule {
    let mut claimed = vec![false; node_types.len()];
    let assignment = scores
        .iter()
        .map(|s| {
            let s = s.as_ref()?;
            debug_assert_eq!(s.len(), node_types.len());
            let mut order: Vec<usize> = (0..s.len()).collect();
            order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
            let w = order
                .into_iter()
                .find(|&w| node_types[w].is_info() && !claimed[w])?;
            claimed[w] = true;
            Some(w)
        })
        .collect();
    SubSlotSchedule { assignment }
}

/// Per-slot bookkeeping reset by [`Environment::apply_slot_actions`].
#[derive(Debug, Clone, Default)]
struct SlotScratch {
    active: bool,
    next_subslot: usize,
    gains: Option<GainMatrix<f64>>,
    slot_data: Vec<f64>,
    tx_counts: Vec<usize>,
    wdc_counts: Vec<usize>,
}

/// The POMDP engine. Node positions are fixed per instance; UAV positions
/// and node batteries are redrawn by every [`reset`](Self::reset).
#[derive(Debug, Clone)]
pub struct Environment {
    cfg: WorldConfig,
    channel: ChannelParams<f64>,
    harvester: LogisticHarvester<f64>,
    energy: UavEnergyModel<f64>,
    wet_weighting: WetWeighting,
    wn_positions: Vec<[f64; 2]>,
    pub wns: Vec<WnState>,
    pub uavs: Vec<UavState>,
    /// Completed slots.
    t: usize,
    scratch: SlotScratch,
    d_min_violations: usize,
    min_pair_distance: f64,
    recording: bool,
    trajectory: Vec<SlotRecord>,
}

impl Environment {
    pub fn new(cfg: WorldConfig) -> Result<Self> {
        Self::with_exemptions(cfg, &[])
    }

    /// Like [`new`](Self::new) but tolerating the listed config relations.
    pub fn with_exemptions(cfg: WorldConfig, allowed: &[Relation]) -> Result<Self> {
        ensure_valid(&cfg, allowed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let wn_positions = (0..cfg.num_wns)
            .map(|_| {
                [
                    rng.random_range(0.0..=cfg.area_width_m),
                    rng.random_range(0.0..=cfg.area_height_m),
                ]
            })
            .collect();
        let mut env = Self {
            channel: ChannelParams::from_config(&cfg),
            harvester: LogisticHarvester::from_config(&cfg),
            energy: UavEnergyModel::from_config(&cfg),
            wet_weighting: WetWeighting::Hoe,
            wn_positions,
            wns: Vec::new(),
            uavs: Vec::new(),
            t: 0,
            scratch: SlotScratch::default(),
            d_min_violations: 0,
            min_pair_distance: f64::INFINITY,
            recording: false,
            trajectory: Vec::new(),
            cfg,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn wn_positions(&self) -> &[[f64; 2]] {
        &self.wn_positions
    }

    pub fn set_wet_weighting(&mut self, w: WetWeighting) {
        self.wet_weighting = w;
    }

    pub fn set_recording(&mut self, on: bool) {
        self.recording = on;
    }

    pub fn trajectory(&self) -> &[SlotRecord] {
        &self.trajectory
    }

    /// Completed slots in the current episode.
    pub fn slot(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.cfg.horizon_slots
    }

    pub fn node_types(&self) -> Vec<NodeType> {
        self.wns.iter().map(|w| w.node_type).collect()
    }

    /// Starts a new episode and returns every UAV's tier-1 observation.
    pub fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        let cfg = &self.cfg;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.uavs = (0..cfg.num_uavs)
            .map(|_| UavState {
                pos: [
                    rng.random_range(0.0..=cfg.area_width_m),
                    rng.random_range(0.0..=cfg.area_height_m),
                ],
                battery: cfg.b_uav_max,
                wet: false,
                velocity: 0.0,
                observed_batteries: vec![0.0; cfg.num_wns],
                observed_acc_data: vec![0.0; cfg.num_wns],
            })
            .collect();
        self.wns = self
            .wn_positions
            .iter()
            .map(|&pos| {
                let battery = rng.random_range(cfg.wn_init_battery_min..=cfg.wn_init_battery_max);
                let node_type = update_node_type(battery, NodeType::Energy, cfg.b_e, cfg.b_i);
                WnState {
                    pos,
                    battery,
                    node_type,
                    hoe: if node_type.is_info() { 0 } else { 1 },
                    acc_data: 0.0,
                    last_harvest: 0.0,
                }
            })
            .collect();
        // Deployment-time global sync of node status.
        for u in &mut self.uavs {
            for (w, wn) in self.wns.iter().enumerate() {
                u.observed_batteries[w] = wn.battery;
                u.observed_acc_data[w] = wn.acc_data;
            }
        }
        self.t = 0;
        self.scratch = SlotScratch::default();
        self.d_min_violations = 0;
        self.min_pair_distance = f64::INFINITY;
        self.trajectory.clear();
        self.tier1_observations()
    }

    /// Moves every UAV and latches its WET flag. Depleted UAVs hover silently.
    pub fn apply_slot_actions(&mut self, actions: &[SlotAction]) -> Result<()> {
        if self.is_done() {
            return Err(Error::EpisodeFinished);
        }
        if actions.len() != self.uavs.len() {
            return Err(Error::WidthMismatch {
                expected: self.uavs.len(),
                got: actions.len(),
            });
        }
        let (w_max, h_max, dt, v_max) = (
            self.cfg.area_width_m,
            self.cfg.area_height_m,
            self.cfg.slot_len_s,
            self.cfg.v_max,
        );
        for (u, a) in self.uavs.iter_mut().zip(actions) {
            if u.is_depleted() {
                u.velocity = 0.0;
                u.wet = false;
                continue;
            }
            let step = a.speed.clamp(0.0, v_max) * dt;
            let target = [
                (u.pos[0] + step * a.heading.cos()).clamp(0.0, w_max),
                (u.pos[1] + step * a.heading.sin()).clamp(0.0, h_max),
            ];
            let moved = ((target[0] - u.pos[0]).powi(2) + (target[1] - u.pos[1]).powi(2)).sqrt();
            u.pos = target;
            u.velocity = moved / dt;
            u.wet = a.wet;
        }
        let uav_pos: Vec<[f64; 2]> = self.uavs.iter().map(|u| u.pos).collect();
        let n = self.cfg.num_wns;
        self.scratch = SlotScratch {
            active: true,
            next_subslot: 1,
            gains: Some(GainMatrix::compute(
                &uav_pos,
                &self.wn_positions,
                self.cfg.altitude_m,
                &self.channel,
            )),
            slot_data: vec![0.0; n],
            tx_counts: vec![0; n],
            wdc_counts: vec![0; self.uavs.len()],
        };
        Ok(())
    }

    /// Runs the association protocol for the current sub-slot. Depleted UAVs
    /// never collect.
    pub fn resolve_wdc_associations(&self, scores: &[Option<Vec<f64>>]) -> SubSlotSchedule {
        let masked: Vec<Option<Vec<f64>>> = scores
            .iter()
            .zip(&self.uavs)
            .map(|(s, u)| if u.is_depleted() { None } else { s.clone() })
            .collect();
        resolve_wdc_associations(&masked, &self.node_types())
    }

    /// Index (1-based) of the next sub-slot to step.
    pub fn next_subslot(&self) -> usize {
        self.scratch.next_subslot
    }

    /// Delivers one sub-slot of data under `schedule`.
    pub fn step_subslot(&mut self, schedule: &SubSlotSchedule) -> Result<SubslotOutcome> {
        if !self.scratch.active || self.scratch.next_subslot > self.cfg.subslots {
            return Err(Error::SlotOrder("step_subslot outside an open slot"));
        }
        let types = self.node_types();
        if schedule.num_uavs() != self.uavs.len() || !schedule.is_feasible(&types) {
            return Err(Error::InfeasibleSchedule(schedule.assignment.clone()));
        }
        let gains = self
            .scratch
            .gains
            .as_ref()
            .expect("gains set with the slot");
        let sinr = sinr_matrix(schedule, gains, self.cfg.p_wn_tx_w, self.cfg.noise_w);
        let data: Vec<f64> = sinr
            .iter()
            .map(|&g| subslot_data_size(g, self.cfg.subslot_len_s))
            .collect();
        for (u, w) in schedule.pairs() {
            self.scratch.slot_data[w] += data[u];
            self.scratch.tx_counts[w] += 1;
            self.scratch.wdc_counts[u] += 1;
            self.wns[w].acc_data += data[u];
        }
        // Slot index is 1-based here: (t - 1) / T with t = self.t + 1.
        let expected = self.t as f64 / self.cfg.horizon_slots as f64 * self.cfg.c_min;
        let rewards = self
            .uavs
            .iter()
            .enumerate()
            .map(|(u, uav)| {
                let gap: f64 = types
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.is_info())
                    .map(|(w, _)| uav.observed_acc_data[w] - expected)
                    .sum();
                data[u] + gap
            })
            .collect();
        self.scratch.next_subslot += 1;
        Ok(SubslotOutcome {
            schedule: schedule.clone(),
            data,
            rewards,
        })
    }

    /// Closes the slot: batteries, node types, HoE, status reports and the
    /// tier-1 rewards. Skipped sub-slots count as silent.
    pub fn end_slot(&mut self) -> Result<SlotOutcome> {
        if !self.scratch.active {
            return Err(Error::SlotOrder("end_slot before apply_slot_actions"));
        }
        let cfg = &self.cfg;
        let gains = self.scratch.gains.take().expect("gains set with the slot");
        let wet_flags: Vec<bool> = self.uavs.iter().map(|u| u.wet).collect();
        let types_before = self.node_types();
        let hoe_before: Vec<u32> = self.wns.iter().map(|w| w.hoe).collect();
        let observed_before: Vec<Vec<f64>> = self
            .uavs
            .iter()
            .map(|u| u.observed_batteries.clone())
            .collect();
        let e_exp = cfg.expected_harvest();

        // Per-UAV harvest share for the WET weight N_u.
        let mut solo_harvest = vec![vec![0.0; cfg.num_wns]; cfg.num_uavs];
        for (w, wn) in self.wns.iter_mut().enumerate() {
            let column = gains.column(w);
            let harvested = match wn.node_type {
                NodeType::Energy => {
                    for (u, row) in solo_harvest.iter_mut().enumerate() {
                        if wet_flags[u] {
                            row[w] = self.harvester.dc_power(cfg.p_uav_tx_w * column[u])
                                * cfg.slot_len_s;
                        }
                    }
                    harvested_energy_slot(
                        &wet_flags,
                        &column,
                        cfg.p_uav_tx_w,
                        cfg.slot_len_s,
                        &self.harvester,
                    )
                }
                NodeType::Info => 0.0,
            };
            let tx = self.scratch.tx_counts[w];
            wn.battery = update_wn_battery(
                wn.battery,
                wn.node_type,
                harvested,
                tx,
                cfg.p_wn_tx_w,
                cfg.subslot_len_s,
                cfg.b_wn_max,
            )
            .map_err(|_| Error::ENodeTransmitted {
                node: w,
                subslots: tx,
            })?;
            wn.last_harvest = harvested;
            wn.node_type = update_node_type(wn.battery, wn.node_type, cfg.b_e, cfg.b_i);
            wn.hoe = update_hoe(wn.hoe, harvested, wn.node_type, e_exp);
        }

        for (u, uav) in self.uavs.iter_mut().enumerate() {
            let spent = uav_slot_energy(
                self.scratch.wdc_counts[u],
                uav.wet,
                uav.velocity,
                &self.energy,
            );
            uav.battery = update_uav_battery(uav.battery, spent);
            observe_status(uav, &self.wns, cfg.d_cov_m);
        }

        let min_pair = min_pair_distance(&self.uavs);
        let unsafe_pair = min_pair < cfg.d_min_m;
        if unsafe_pair {
            self.d_min_violations += 1;
        }
        self.min_pair_distance = self.min_pair_distance.min(min_pair);

        let t = self.t + 1;
        let expected_data = t as f64 / cfg.horizon_slots as f64 * cfg.c_min;
        let b_wdc: f64 = types_before
            .iter()
            .zip(&self.wns)
            .filter(|(ty, _)| ty.is_info())
            .map(|(_, wn)| wn.acc_data - expected_data)
            .sum();
        let b_sd = if unsafe_pair { -1.0 } else { 0.0 };
        let rewards = self
            .uavs
            .iter()
            .enumerate()
            .map(|(u, uav)| {
                let mut weight = 0.0;
                let mut gain_sum = 0.0;
                for w in (0..cfg.num_wns).filter(|&w| !types_before[w].is_info()) {
                    let delta = uav.observed_batteries[w] - observed_before[u][w];
                    if delta != 0.0 {
                        weight += solo_harvest[u][w] / delta;
                    }
                    let h = match self.wet_weighting {
                        WetWeighting::Hoe => hoe_before[w] as f64,
                        WetWeighting::Uniform => 1.0,
                    };
                    gain_sum += h * delta;
                }
                let b_es = uav.battery - cfg.b_uav_min;
                RewardBreakdown::mix(weight * gain_sum, b_wdc, b_es, b_sd, &cfg.reward_weights)
            })
            .collect::<Vec<_>>();

        let slot_data = std::mem::take(&mut self.scratch.slot_data);
        self.scratch.active = false;
        self.t = t;
        if self.recording {
            self.trajectory.push(self.snapshot(&rewards));
        }
        Ok(SlotOutcome {
            rewards,
            slot_data,
            min_pair_distance: min_pair,
            done: self.is_done(),
        })
    }

    fn snapshot(&self, rewards: &[RewardBreakdown]) -> SlotRecord {
        SlotRecord {
            slot: self.t,
            uav_pos: self.uavs.iter().map(|u| u.pos).collect(),
            uav_wet: self.uavs.iter().map(|u| u.wet).collect(),
            uav_velocity: self.uavs.iter().map(|u| u.velocity).collect(),
            uav_battery: self.uavs.iter().map(|u| u.battery).collect(),
            wn_battery: self.wns.iter().map(|w| w.battery).collect(),
            wn_flag: self.wns.iter().map(|w| w.node_type.flag()).collect(),
            wn_hoe: self.wns.iter().map(|w| w.hoe).collect(),
            wn_acc_data: self.wns.iter().map(|w| w.acc_data).collect(),
            reward: rewards.iter().map(|r| r.r_total).collect(),
        }
    }

    /// `[flags, observed batteries, observed data, x, y, own battery]`, each in `[0, 1]`.
    pub fn make_tier1_observation(&self, u: usize) -> Vec<f64> {
        let cfg = &self.cfg;
        let uav = &self.uavs[u];
        let mut o = Vec::with_capacity(cfg.tier1_obs_dim());
        o.extend(self.wns.iter().map(|w| w.node_type.flag() as f64));
        o.extend(uav.observed_batteries.iter().map(|b| b / cfg.b_wn_max));
        o.extend(
            uav.observed_acc_data
                .iter()
                .map(|c| (c / cfg.data_scale).min(1.0)),
        );
        o.push(uav.pos[0] / cfg.area_width_m);
        o.push(uav.pos[1] / cfg.area_height_m);
        o.push(uav.battery / cfg.b_uav_max);
        o
    }

    pub fn tier1_observations(&self) -> Vec<Vec<f64>> {
        (0..self.uavs.len())
            .map(|u| self.make_tier1_observation(u))
            .collect()
    }

    /// Concatenation of every UAV's tier-1 observation.
    pub fn joint_state(&self) -> Vec<f64> {
        self.tier1_observations().concat()
    }

    /// `[x, y, observed data, k / K]` for sub-slot `k` (1-based).
    pub fn make_tier2_observation(&self, u: usize, k: usize) -> Vec<f64> {
        let cfg = &self.cfg;
        let uav = &self.uavs[u];
        let mut o = Vec::with_capacity(cfg.tier2_obs_dim());
        o.push(uav.pos[0] / cfg.area_width_m);
        o.push(uav.pos[1] / cfg.area_height_m);
        o.extend(
            uav.observed_acc_data
                .iter()
                .map(|c| (c / cfg.data_scale).min(1.0)),
        );
        o.push(k as f64 / cfg.subslots as f64);
        o
    }

    pub fn c_total(&self) -> f64 {
        self.wns.iter().map(|w| w.acc_data).sum()
    }

    pub fn episode_report(&self) -> EpisodeReport {
        let cfg = &self.cfg;
        let wn_data: Vec<f64> = self.wns.iter().map(|w| w.acc_data).collect();
        let uav_end_battery: Vec<f64> = self.uavs.iter().map(|u| u.battery).collect();
        EpisodeReport {
            slots: self.t,
            wn_meets_c_min: wn_data.iter().map(|&c| c >= cfg.c_min).collect(),
            uav_meets_b_min: uav_end_battery
                .iter()
                .map(|&b| b >= cfg.b_uav_min)
                .collect(),
            c_total: wn_data.iter().sum(),
            wn_data,
            uav_end_battery,
            d_min_violations: self.d_min_violations,
            min_pair_distance: Some(self.min_pair_distance).filter(|d| d.is_finite()),
        }
    }
}

fn min_pair_distance(uavs: &[UavState]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in uavs.iter().enumerate() {
        for b in &uavs[i + 1..] {
            best = best.min(((a.pos[0] - b.pos[0]).powi(2) + (a.pos[1] - b.pos[1]).powi(2)).sqrt());
        }
    }
    best
}

/// Writes one JSON object per slot.
pub fn write_trajectory_jsonl<W: Write>(records: &[SlotRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trajectory_jsonl(text: &str) -> Result<Vec<SlotRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Per-slot metrics table: slot, C_total so far, then per-UAV reward and
/// battery columns.
pub fn write_slot_metrics_csv<W: Write>(records: &[SlotRecord], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let num_uavs = records.first().map_or(0, |r| r.uav_pos.len());
    let mut header = vec![
        "slot".to_string(),
        "c_total".to_string(),
        "i_nodes".to_string(),
    ];
    for u in 0..num_uavs {
        header.push(format!("uav{u}_reward"));
        header.push(format!("uav{u}_battery"));
        header.push(format!("uav{u}_wet"));
    }
    wtr.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.slot.to_string(),
            r.wn_acc_data.iter().sum::<f64>().to_string(),
            r.wn_flag
                .iter()
                .map(|&f| f as usize)
                .sum::<usize>()
                .to_string(),
        ];
        for u in 0..num_uavs {
            row.push(r.reward[u].to_string());
            row.push(r.uav_battery[u].to_string());
            row.push((r.uav_wet[u] as u8).to_string());
        }
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
