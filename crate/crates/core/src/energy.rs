//! Non-linear RF-to-DC harvesting, UAV propulsion power and the battery laws.

use crate::config::{PropulsionParams, WorldConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::state::NodeType;

/// An RF-to-DC conversion law. Implementations must return 0 below their
/// sensitivity and be non-decreasing.
pub trait Harvester<T: Scalar>: Send + Sync {
    fn dc_power(&self, p_rf: T) -> T;
}

/// Piecewise harvester: zero below `p_sen`, a normalized logistic between
/// `p_sen` and `p_sat`, and flat at `f_max` above `p_sat`.
///
/// The logistic is shifted and scaled so it equals 0 at `p_sen` and `f_max`
/// at `p_sat`, which makes the whole curve continuous.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticHarvester<T> {
    pub p_sen: T,
    pub p_sat: T,
    pub f_max: T,
    pub midpoint: T,
    pub steepness: T,
}

impl<T: Scalar> LogisticHarvester<T> {
    pub fn from_config(cfg: &WorldConfig) -> Self {
        Self {
            p_sen: T::lit(cfg.p_sen_w),
            p_sat: T::lit(cfg.p_sat_w),
            f_max: T::lit(cfg.harvester.f_max_w),
            midpoint: T::lit(cfg.harvester.midpoint_w),
            steepness: T::lit(cfg.harvester.steepness_per_w),
        }
    }

    fn sigmoid(&self, p: T) -> T {
        T::one() / (T::one() + (-self.steepness * (p - self.midpoint)).exp())
    }

    /// The active-interval curve `f(p)`.
    pub fn transform(&self, p: T) -> T {
        let lo = self.sigmoid(self.p_sen);
        let hi = self.sigmoid(self.p_sat);
        self.f_max * (self.sigmoid(p) - lo) / (hi - lo)
    }
}

impl<T: Scalar> Harvester<T> for LogisticHarvester<T> {
    fn dc_power(&self, p_rf: T) -> T {
        if p_rf < self.p_sen {
            T::zero()
        } else if p_rf < self.p_sat {
            self.transform(p_rf)
        } else {
            self.transform(self.p_sat)
        }
    }
}

pub fn harvested_dc_power<T: Scalar, H: Harvester<T> + ?Sized>(p_rf: T, model: &H) -> T {
    model.dc_power(p_rf)
}

/// Energy one node harvests in a slot from the superposed RF power of every
/// transmitting UAV.
pub fn harvested_energy_slot<T: Scalar, H: Harvester<T> + ?Sized>(
    wet_flags: &[bool],
    gains: &[T],
    p_uav_tx: T,
    slot_len: T,
    model: &H,
) -> T {
    debug_assert_eq!(wet_flags.len(), gains.len());
    let received = wet_flags
        .iter()
        .zip(gains)
        .filter(|(z, _)| **z)
        .fold(T::zero(), |acc, (_, &g)| acc + p_uav_tx * g);
    model.dc_power(received) * slot_len
}

/// Rotary-wing propulsion power model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Propulsion<T> {
    pub p_a: T,
    pub p_b: T,
    pub v_tip: T,
    pub e0: T,
    pub f0: T,
    pub air_density: T,
    pub e1: T,
    pub rotor_area: T,
}

impl<T: Scalar> Propulsion<T> {
    pub fn new(p: &PropulsionParams) -> Self {
        Self {
            p_a: T::lit(p.p_a),
            p_b: T::lit(p.p_b),
            v_tip: T::lit(p.v_tip),
            e0: T::lit(p.e0),
            f0: T::lit(p.f0),
            air_density: T::lit(p.air_density),
            e1: T::lit(p.e1),
            rotor_area: T::lit(p.rotor_area),
        }
    }

    /// Blade-profile, parasite and induced power at speed `v` (W).
    pub fn power(&self, v: T) -> T {
        let two = T::lit(2.0);
        let v2 = v * v;
        let blade = self.p_a * (T::one() + T::lit(3.0) * v2 / (self.v_tip * self.v_tip));
        let parasite =
            T::lit(0.5) * self.f0 * self.air_density * self.e1 * self.rotor_area * v2 * v;
        let e0_2 = self.e0 * self.e0;
        let inner = (T::one() + v2 * v2 / (T::lit(4.0) * e0_2 * e0_2)).sqrt() - v2 / (two * e0_2);
        let induced = self.p_b * inner.sqrt();
        blade + parasite + induced
    }
}

pub fn propulsion_power<T: Scalar>(v: T, model: &Propulsion<T>) -> T {
    model.power(v)
}

/// Constants entering a UAV's per-slot energy draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavEnergyModel<T> {
    pub propulsion: Propulsion<T>,
    pub p_wdc: T,
    pub p_uav_tx: T,
    pub slot_len: T,
    pub subslot_len: T,
}

impl<T: Scalar> UavEnergyModel<T> {
    pub fn from_config(cfg: &WorldConfig) -> Self {
        Self {
            propulsion: Propulsion::new(&cfg.propulsion),
            p_wdc: T::lit(cfg.p_wdc_w),
            p_uav_tx: T::lit(cfg.p_uav_tx_w),
            slot_len: T::lit(cfg.slot_len_s),
            subslot_len: T::lit(cfg.subslot_len_s),
        }
    }
}

/// Energy a UAV spends in one slot: data collection, propulsion and energy
/// transfer (W·s).
pub fn uav_slot_energy<T: Scalar>(
    wdc_subslots: usize,
    wet: bool,
    velocity: T,
    model: &UavEnergyModel<T>,
) -> T {
    let wdc = T::lit(wdc_subslots as f64) * model.p_wdc * model.subslot_len;
    let pro = model.propulsion.power(velocity) * model.slot_len;
    let wet = if wet {
        model.p_uav_tx * model.slot_len
    } else {
        T::zero()
    };
    wdc + pro + wet
}

/// Battery law for a ground node over one slot.
///
/// E-nodes add their harvest up to capacity. I-nodes drain `p_wn_tx * subslot_len`
/// per transmitting sub-slot, floored at zero.
pub fn update_wn_battery<T: Scalar>(
    battery: T,
    node_type: NodeType,
    harvested: T,
    tx_subslots: usize,
    p_wn_tx: T,
    subslot_len: T,
    capacity: T,
) -> Result<T> {
    match node_type {
        NodeType::Energy => {
            if tx_subslots > 0 {
                return Err(Error::ENodeTransmitted {
                    node: usize::MAX,
                    subslots: tx_subslots,
                });
            }
            Ok((battery + harvested).min(capacity))
        }
        NodeType::Info => {
            let drain = T::lit(tx_subslots as f64) * p_wn_tx * subslot_len;
            Ok((battery - drain).max(T::zero()))
        }
    }
}

pub fn update_uav_battery<T: Scalar>(battery: T, slot_energy: T) -> T {
    (battery - slot_energy).max(T::zero())
}
