//! Fixed-size network inputs built from CSI and buffer reports.

use crate::channel::linear_to_db;
use crate::linalg;
use crate::world::{Cell, WorldState};

use super::subspace::SubState;

const DB_FLOOR: f64 = -30.0;
const DB_CEIL: f64 = 40.0;
const DB_CENTER: f64 = 5.0;
const DB_SPAN: f64 = 35.0;
const BUFFER_CLIP: f64 = 2.0;

/// Inputs of one network, split by branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub csi: Vec<f64>,
    pub buf: Vec<f64>,
}

/// Squared channel norm mapped to a roughly unit-range value via the SNR it
/// would give at full-band per-tone power.
pub fn gain_feature(cell: &Cell, gain: f64) -> f64 {
    let snr = cell.reference_snr(gain);
    let db = if snr > 0.0 {
        linear_to_db(snr)
    } else {
        DB_FLOOR
    };
    (db.clamp(DB_FLOOR, DB_CEIL) - DB_CENTER) / DB_SPAN
}

/// Single-stream spectral efficiency on a band of `tones` tones given each
/// tone's squared channel norm, as a fraction of the top MCS.
pub fn efficiency_feature(cell: &Cell, tones: usize, gains: impl Iterator<Item = f64>) -> f64 {
    let snr_per_gain = cell.phy.tone_power(tones) / cell.phy.noise_power;
    let peak = cell.phy.mcs.efficiency(f64::INFINITY);
    gains
        .map(|g| cell.phy.mcs.efficiency(g * snr_per_gain))
        .sum::<f64>()
        / (tones.max(1) as f64 * peak)
}

pub fn buffer_feature(packets: u64, scale: f64) -> f64 {
    (packets as f64 / scale).min(BUFFER_CLIP)
}

/// Bands summarised in the master's CSI branch: every RU one level below the
/// full band, then the full band itself.
fn master_bands(cell: &Cell) -> Vec<usize> {
    let layout = &cell.layout;
    let mut slots = Vec::new();
    if layout.level_count() > 1 {
        let base = layout.level_size(0);
        slots.extend(base..base + layout.level_size(1));
    }
    slots.extend(0..layout.level_size(0));
    slots
}

pub fn master_csi_inputs(cell: &Cell) -> usize {
    2 * master_bands(cell).len() * cell.stations
}

/// Per STA and band of [`master_bands`]: the gain feature of the mean
/// `‖H‖²_F` and the single-user efficiency feature. The buffer branch holds
/// one queue feature per STA.
pub fn master_features(cell: &Cell, state: &WorldState, buffer_scale: f64) -> Features {
    let bands = master_bands(cell);
    let mut csi = Vec::with_capacity(master_csi_inputs(cell));
    for k in 0..cell.stations {
        for &slot in &bands {
            let ru = &cell.layout.rus()[slot];
            let gains = || {
                ru.subcarriers
                    .iter()
                    .map(|&s| state.csi.matrix(s, k).frobenius_sqr())
            };
            csi.push(gain_feature(cell, gains().sum::<f64>() / ru.tones() as f64));
            csi.push(efficiency_feature(cell, ru.tones(), gains()));
        }
    }
    let buf = state
        .buffers
        .packets()
        .iter()
        .map(|&b| buffer_feature(b, buffer_scale))
        .collect();
    Features { csi, buf }
}

pub fn sub_csi_inputs(cell: &Cell) -> usize {
    2 * cell.stations
}

pub fn sub_buf_inputs(cell: &Cell) -> usize {
    3 * cell.stations + 1
}

/// CSI branch: per STA the projected-channel gain and efficiency features,
/// or `-1` for STAs that can no longer be chosen. Buffer branch: queue
/// features, selectable flags, selected flags, and the round counter as a
/// fraction of `rounds`.
pub fn sub_features(
    cell: &Cell,
    sub: &SubState,
    buffers: &[u64],
    round: usize,
    rounds: usize,
    scale: f64,
) -> Features {
    let k_count = sub.stations();
    let mut csi = Vec::with_capacity(sub_csi_inputs(cell));
    let mut buf = Vec::with_capacity(sub_buf_inputs(cell));
    for k in 0..k_count {
        if sub.is_selectable(k) {
            csi.push(gain_feature(cell, sub.mean_gain(k)));
            csi.push(efficiency_feature(
                cell,
                sub.tones(),
                (0..sub.tones()).map(|t| linalg::norm_sqr(sub.channel(t, k))),
            ));
        } else {
            csi.extend([-1.0, -1.0]);
        }
    }
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    buf.extend(buffers.iter().map(|&b| buffer_feature(b, scale)));
    buf.extend((0..k_count).map(|k| flag(sub.is_selectable(k))));
    buf.extend((0..k_count).map(|k| flag(sub.selected().contains(&k))));
    buf.push(round as f64 / rounds.max(1) as f64);
    Features { csi, buf }
}

/// `stations` consecutive per-STA blocks of `width` entries starting at
/// `offset` within one feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StationBlocks {
    pub offset: usize,
    pub width: usize,
}

/// How relabelling the STAs acts on a network's inputs and outputs. STAs
/// are statistically exchangeable, so a transition with relabelled STAs is
/// as valid a sample as the original.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StationSymmetry {
    pub stations: usize,
    pub csi: Vec<StationBlocks>,
    pub buf: Vec<StationBlocks>,
    /// Output `k < stations` refers to STA `k`; later outputs are fixed.
    pub per_station_actions: bool,
}

impl StationSymmetry {
    pub fn master(cell: &Cell) -> Self {
        let k = cell.stations;
        StationSymmetry {
            stations: k,
            csi: vec![StationBlocks {
                offset: 0,
                width: master_csi_inputs(cell) / k.max(1),
            }],
            buf: vec![StationBlocks {
                offset: 0,
                width: 1,
            }],
            per_station_actions: false,
        }
    }

    pub fn sub(cell: &Cell) -> Self {
        let k = cell.stations;
        StationSymmetry {
            stations: k,
            csi: vec![StationBlocks {
                offset: 0,
                width: 2,
            }],
            buf: (0..3)
                .map(|i| StationBlocks {
                    offset: i * k,
                    width: 1,
                })
                .collect(),
            per_station_actions: true,
        }
    }

    /// Copy of `v` with STA `k`'s blocks moved to STA `perm[k]`'s place.
    pub fn permute(&self, v: &[f64], blocks: &[StationBlocks], perm: &[usize]) -> Vec<f64> {
        let mut out = v.to_vec();
        for b in blocks {
            for (k, &to) in perm.iter().enumerate() {
                let src = b.offset + k * b.width;
                let dst = b.offset + to * b.width;
                out[dst..dst + b.width].copy_from_slice(&v[src..src + b.width]);
            }
        }
        out
    }

    pub fn permute_action(&self, action: usize, perm: &[usize]) -> usize {
        if self.per_station_actions && action < self.stations {
            perm[action]
        } else {
            action
        }
    }

    pub fn permute_mask(&self, mask: &[bool], perm: &[usize]) -> Vec<bool> {
        let mut out = mask.to_vec();
        if self.per_station_actions {
            for (k, &to) in perm.iter().enumerate() {
                out[to] = mask[k];
            }
        }
        out
    }
}

/// Legal sub-agent actions: selectable STAs, then break (always legal).
pub fn sub_mask(sub: &SubState) -> Vec<bool> {
    let mut mask: Vec<bool> = (0..sub.stations()).map(|k| sub.is_selectable(k)).collect();
    mask.push(true);
    mask
}
