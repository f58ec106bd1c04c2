//! Air-to-ground geometry, LoS-probability channel gain, SINR and per-sub-slot
//! data size.

use crate::config::WorldConfig;
use crate::scalar::Scalar;
use crate::state::SubSlotSchedule;

/// Geometry of one UAV-to-node link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry<T> {
    /// 3-D distance (m), never below the altitude.
    pub distance: T,
    /// Ground-plane distance (m).
    pub horizontal: T,
    /// Elevation angle in degrees, in `(0, 90]`.
    pub elevation_deg: T,
}

/// Constants of the average-gain model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams<T> {
    pub g0: T,
    pub alpha_los: T,
    pub alpha_nlos: T,
    pub los_a: T,
    pub los_b: T,
}

impl<T: Scalar> ChannelParams<T> {
    pub fn from_config(cfg: &WorldConfig) -> Self {
        Self {
            g0: T::lit(cfg.g0),
            alpha_los: T::lit(cfg.alpha_los),
            alpha_nlos: T::lit(cfg.alpha_nlos),
            los_a: T::lit(cfg.los_a),
            los_b: T::lit(cfg.los_b),
        }
    }
}

pub fn link_geometry<T: Scalar>(uav: [T; 2], wn: [T; 2], altitude: T) -> LinkGeometry<T> {
    let dx = uav[0] - wn[0];
    let dy = uav[1] - wn[1];
    let horizontal = (dx * dx + dy * dy).sqrt();
    let distance = (horizontal * horizontal + altitude * altitude).sqrt();
    let elevation_deg = (altitude / distance).min(T::one()).asin().to_degrees();
    LinkGeometry {
        distance,
        horizontal,
        elevation_deg,
    }
}

/// Logistic LoS probability `1 / (1 + a exp(-b (beta - a)))` with `beta` in degrees.
pub fn los_probability<T: Scalar>(elevation_deg: T, a: T, b: T) -> T {
    T::one() / (T::one() + a * (-b * (elevation_deg - a)).exp())
}

/// Average channel gain mixing the LoS and NLoS path-loss laws.
pub fn channel_gain<T: Scalar>(geom: &LinkGeometry<T>, p: &ChannelParams<T>) -> T {
    let p_los = los_probability(geom.elevation_deg, p.los_a, p.los_b);
    let d = geom.distance;
    p_los * p.g0 * d.powf(-p.alpha_los) + (T::one() - p_los) * p.g0 * d.powf(-p.alpha_nlos)
}

/// Dense `U x W` gain table for one slot, row-major by UAV.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix<T> {
    pub num_uavs: usize,
    pub num_wns: usize,
    pub gains: Vec<T>,
}

impl<T: Scalar> GainMatrix<T> {
    pub fn compute(
        uav_pos: &[[T; 2]],
        wn_pos: &[[T; 2]],
        altitude: T,
        params: &ChannelParams<T>,
    ) -> Self {
        let mut gains = Vec::with_capacity(uav_pos.len() * wn_pos.len());
        for &u in uav_pos {
            for &w in wn_pos {
                gains.push(channel_gain(&link_geometry(u, w, altitude), params));
            }
        }
        Self {
            num_uavs: uav_pos.len(),
            num_wns: wn_pos.len(),
            gains,
        }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Self {
        let num_uavs = rows.len();
        let num_wns = rows.first().map_or(0, Vec::len);
        Self {
            num_uavs,
            num_wns,
            gains: rows.into_iter().flatten().collect(),
        }
    }

    #[inline]
    pub fn get(&self, uav: usize, wn: usize) -> T {
        self.gains[uav * self.num_wns + wn]
    }

    pub fn set(&mut self, uav: usize, wn: usize, value: T) {
        self.gains[uav * self.num_wns + wn] = value;
    }

    /// Gains from every UAV to one node.
    pub fn column(&self, wn: usize) -> Vec<T> {
        (0..self.num_uavs).map(|u| self.get(u, wn)).collect()
    }
}

/// SINR of each UAV's assigned link in one sub-slot; zero for silent UAVs.
///
/// Every other scheduled node interferes at the receiving UAV.
pub fn sinr_matrix<T: Scalar>(
    schedule: &SubSlotSchedule,
    gains: &GainMatrix<T>,
    p_wn_tx: T,
    noise: T,
) -> Vec<T> {
    let scheduled: Vec<usize> = schedule.pairs().map(|(_, w)| w).collect();
    schedule
        .assignment
        .iter()
        .enumerate()
        .map(|(u, w)| match *w {
            None => T::zero(),
            Some(w) => {
                let interference = scheduled
                    .iter()
                    .filter(|&&j| j != w)
                    .fold(T::zero(), |acc, &j| acc + p_wn_tx * gains.get(u, j));
                p_wn_tx * gains.get(u, w) / (interference + noise)
            }
        })
        .collect()
}

/// Data delivered in one sub-slot, `log2(1 + sinr) * subslot_len` (bits/Hz).
pub fn subslot_data_size<T: Scalar>(sinr: T, subslot_len: T) -> T {
    sinr.ln_1p() / T::LN_2() * subslot_len
}
