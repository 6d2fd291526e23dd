//! Receiver and link abstraction: ZF receive beamforming, per-tone SINR,
//! MCS mapping, OFDM rates, PPDU-limited packet counts and the per-step
//! throughput objective.
//!
//! Each STA sends one spatial stream. Its receive vector lies in the
//! orthogonal complement of the other co-scheduled STAs' channel column
//! spaces and, within that complement, is aligned with the strongest
//! direction of its own projected channel. With `N_T = 1` this is the usual
//! pseudo-inverse ZF receiver.

use serde::{Deserialize, Serialize};

use crate::channel::{db_to_linear, CsiTensor};
use crate::error::{Error, Result};
use crate::linalg::{self, MatRef, C64};
use crate::ru_plan::{AllocationCube, Ru, RuId, RuLayout};

/// Relative residual below which a channel is taken to lie in the span of
/// the others.
pub const RANK_TOL: f64 = 1e-10;

const VALID_BITS: [u32; 6] = [1, 2, 4, 6, 8, 10];
const VALID_RATES: [f64; 4] = [1.0 / 2.0, 2.0 / 3.0, 3.0 / 4.0, 5.0 / 6.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McsRow {
    pub threshold_db: f64,
    pub bits: u32,
    pub code_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McsTable {
    rows: Vec<McsRow>,
    thresholds: Vec<f64>,
}

impl McsTable {
    pub fn new(rows: Vec<McsRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("MCS table is empty"));
        }
        for w in rows.windows(2) {
            if w[1].threshold_db <= w[0].threshold_db {
                return Err(Error::invalid("MCS thresholds must be strictly increasing"));
            }
        }
        for r in &rows {
            if !VALID_BITS.contains(&r.bits) {
                return Err(Error::invalid(format!(
                    "invalid bits per symbol {}",
                    r.bits
                )));
            }
            if !VALID_RATES.iter().any(|c| (c - r.code_rate).abs() < 1e-9) {
                return Err(Error::invalid(format!("invalid code rate {}", r.code_rate)));
            }
        }
        let thresholds = rows.iter().map(|r| db_to_linear(r.threshold_db)).collect();
        Ok(McsTable { rows, thresholds })
    }

    /// 802.11ax MCS0-11.
    pub fn ax_default() -> Self {
        const ROWS: [(f64, u32, f64); 12] = [
            (-1.0, 1, 1.0 / 2.0),
            (2.0, 2, 1.0 / 2.0),
            (5.0, 2, 3.0 / 4.0),
            (8.0, 4, 1.0 / 2.0),
            (11.0, 4, 3.0 / 4.0),
            (15.0, 6, 2.0 / 3.0),
            (18.0, 6, 3.0 / 4.0),
            (20.0, 6, 5.0 / 6.0),
            (24.0, 8, 3.0 / 4.0),
            (26.0, 8, 5.0 / 6.0),
            (29.0, 10, 3.0 / 4.0),
            (31.0, 10, 5.0 / 6.0),
        ];
        McsTable::new(
            ROWS.iter()
                .map(|&(threshold_db, bits, code_rate)| McsRow {
                    threshold_db,
                    bits,
                    code_rate,
                })
                .collect(),
        )
        .expect("default MCS table is valid")
    }

    pub fn rows(&self) -> &[McsRow] {
        &self.rows
    }

    pub fn threshold_linear(&self, row: usize) -> f64 {
        self.thresholds[row]
    }

    /// `(m, c)` of the highest row whose threshold is at or below `gamma`,
    /// `(0, 0.0)` below the first row.
    pub fn lookup(&self, gamma: f64) -> (u32, f64) {
        let n = self.thresholds.partition_point(|&t| t <= gamma);
        if n == 0 {
            (0, 0.0)
        } else {
            let r = &self.rows[n - 1];
            (r.bits, r.code_rate)
        }
    }

    /// Information bits per tone per symbol, `m(Γ) c(Γ)`.
    pub fn efficiency(&self, gamma: f64) -> f64 {
        let (m, c) = self.lookup(gamma);
        m as f64 * c
    }
}

pub fn mcs_lookup(gamma: f64, table: &McsTable) -> (u32, f64) {
    table.lookup(gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhyParams {
    /// OFDM symbol duration including GI, seconds.
    pub symbol_s: f64,
    pub packet_bits: f64,
    pub ppdu_max_s: f64,
    /// Per-STA protocol overhead `V`, seconds.
    pub overhead_s: Vec<f64>,
    /// Per-STA transmit power, watts.
    pub tx_power: f64,
    /// Per-subcarrier noise power, watts.
    pub noise_power: f64,
    pub mcs: McsTable,
}

impl PhyParams {
    pub fn new(stations: usize, tx_power: f64, noise_power: f64) -> Self {
        PhyParams {
            symbol_s: 13.6e-6,
            packet_bits: 12_000.0,
            ppdu_max_s: 4.848e-3,
            overhead_s: vec![100e-6; stations],
            tx_power,
            noise_power,
            mcs: McsTable::ax_default(),
        }
    }

    pub fn overhead(&self, k: usize) -> f64 {
        self.overhead_s[k]
    }

    pub fn max_overhead(&self) -> f64 {
        self.overhead_s.iter().copied().fold(0.0, f64::max)
    }

    /// Per-tone transmit power of an STA spreading its power over `tones`.
    pub fn tone_power(&self, tones: usize) -> f64 {
        self.tx_power / tones as f64
    }
}

/// ZF receive vectors for STAs co-scheduled on one subcarrier.
pub fn zf_beamformers(channels: &[MatRef<'_>]) -> Result<Vec<Vec<C64>>> {
    let mut out = Vec::with_capacity(channels.len());
    for (k, hk) in channels.iter().enumerate() {
        let mut basis = Vec::new();
        let others = channels
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != k)
            .flat_map(|(_, h)| h.columns());
        if !linalg::extend_basis(&mut basis, others, RANK_TOL) {
            return Err(Error::SingularChannel);
        }
        let mut projected = hk.data.to_vec();
        for col in projected.chunks_mut(hk.rows) {
            linalg::project_out(col, &basis);
        }
        let a = MatRef::new(hk.rows, hk.cols, &projected);
        if a.frobenius_sqr() <= RANK_TOL * RANK_TOL * hk.frobenius_sqr()
            || hk.frobenius_sqr() == 0.0
        {
            return Err(Error::SingularChannel);
        }
        out.push(linalg::dominant_left_vector(a).ok_or(Error::SingularChannel)?);
    }
    Ok(out)
}

/// Per-tone SINR of each STA in `stations` over the subcarriers of `ru`,
/// indexed `[station][tone]`. `None` if the channels are rank deficient on
/// any tone.
pub fn ru_sinr(
    csi: &CsiTensor,
    ru: &Ru,
    stations: &[usize],
    phy: &PhyParams,
) -> Option<Vec<Vec<f64>>> {
    let p = phy.tone_power(ru.tones());
    let mut out = vec![Vec::with_capacity(ru.tones()); stations.len()];
    let mut mats = Vec::with_capacity(stations.len());
    for &s in &ru.subcarriers {
        mats.clear();
        mats.extend(stations.iter().map(|&k| csi.matrix(s, k)));
        let w = zf_beamformers(&mats).ok()?;
        for (i, wi) in w.iter().enumerate() {
            let signal = p * mats[i].gain_through(wi);
            let interference: f64 = mats
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != i)
                .map(|(_, hm)| p * hm.gain_through(wi))
                .sum();
            out[i].push(signal / (interference + phy.noise_power));
        }
    }
    Some(out)
}

/// OFDM rate (bits/s) of each STA in `stations` when co-scheduled on `ru`.
pub fn ru_rates(csi: &CsiTensor, ru: &Ru, stations: &[usize], phy: &PhyParams) -> Vec<f64> {
    match ru_sinr(csi, ru, stations, phy) {
        Some(g) => g
            .iter()
            .map(|tones| tones.iter().map(|&x| phy.mcs.efficiency(x)).sum::<f64>() / phy.symbol_s)
            .collect(),
        None => vec![0.0; stations.len()],
    }
}

/// Dense `[subcarrier][station]` SINR, zero where unscheduled.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrMatrix {
    stations: usize,
    gamma: Vec<f64>,
}

impl SinrMatrix {
    pub fn zeros(subcarriers: usize, stations: usize) -> Self {
        SinrMatrix {
            stations,
            gamma: vec![0.0; subcarriers * stations],
        }
    }

    pub fn get(&self, s: usize, k: usize) -> f64 {
        self.gamma[s * self.stations + k]
    }

    fn set(&mut self, s: usize, k: usize, v: f64) {
        self.gamma[s * self.stations + k] = v;
    }
}

pub fn sinr(csi: &CsiTensor, layout: &RuLayout, x: &AllocationCube, phy: &PhyParams) -> SinrMatrix {
    let mut out = SinrMatrix::zeros(csi.subcarriers(), x.stations());
    for (slot, ks) in x.used_slots() {
        let ru = &layout.rus()[slot];
        if let Some(g) = ru_sinr(csi, ru, &ks, phy) {
            for (i, &k) in ks.iter().enumerate() {
                for (j, &s) in ru.subcarriers.iter().enumerate() {
                    out.set(s, k, g[i][j]);
                }
            }
        }
    }
    out
}

/// `O = Σ_{s∈RU} m(Γ) c(Γ) / τ`, zero if `k` is not on `ru`.
pub fn ofdm_rate(
    x: &AllocationCube,
    layout: &RuLayout,
    sinr: &SinrMatrix,
    ru: RuId,
    k: usize,
    table: &McsTable,
    symbol_s: f64,
) -> f64 {
    if !x.is_assigned(layout, ru, k) {
        return 0.0;
    }
    let ru = layout.ru(ru).expect("assigned RU exists");
    ru.subcarriers
        .iter()
        .map(|&s| table.efficiency(sinr.get(s, k)))
        .sum::<f64>()
        / symbol_s
}

/// Per-STA OFDM rate of whatever RU it is scheduled on.
pub fn station_rates(
    x: &AllocationCube,
    layout: &RuLayout,
    sinr: &SinrMatrix,
    phy: &PhyParams,
) -> Vec<f64> {
    let mut rates = vec![0.0; x.stations()];
    for (slot, ks) in x.used_slots() {
        let id = layout.rus()[slot].id;
        for k in ks {
            rates[k] = ofdm_rate(x, layout, sinr, id, k, &phy.mcs, phy.symbol_s);
        }
    }
    rates
}

pub type PacketVector = Vec<u64>;

/// Largest `p <= buffer` with `Q p / rate <= τ_PPDU`.
pub fn packets_for_rate(rate: f64, buffer: u64, phy: &PhyParams) -> u64 {
    if rate <= 0.0 || buffer == 0 {
        return 0;
    }
    let fits = |p: u64| phy.packet_bits * p as f64 / rate <= phy.ppdu_max_s;
    let guess = (rate * phy.ppdu_max_s / phy.packet_bits).floor();
    let mut p = if guess >= buffer as f64 {
        buffer
    } else {
        guess.max(0.0) as u64
    };
    // Settle floating-point edge cases against the airtime test itself.
    while p > 0 && !fits(p) {
        p -= 1;
    }
    while p < buffer && fits(p + 1) {
        p += 1;
    }
    p
}

pub fn packet_search(
    x: &AllocationCube,
    layout: &RuLayout,
    sinr: &SinrMatrix,
    buffers: &[u64],
    phy: &PhyParams,
) -> PacketVector {
    station_rates(x, layout, sinr, phy)
        .iter()
        .zip(buffers)
        .map(|(&o, &b)| packets_for_rate(o, b, phy))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Throughput {
    /// `R_k`, bits/s.
    pub per_station: Vec<f64>,
    pub total: f64,
    /// `max_k (T_k + V_k)` over transmitting STAs; zero if none transmit.
    pub airtime: f64,
}

/// Per-STA throughput from OFDM rates and packet counts.
///
/// STAs sending no packets take no part in the airtime maximum.
pub fn throughput_from_rates(rates: &[f64], packets: &[u64], phy: &PhyParams) -> Throughput {
    let mut airtime: f64 = 0.0;
    for (k, (&o, &p)) in rates.iter().zip(packets).enumerate() {
        if p > 0 && o > 0.0 {
            airtime = airtime.max(phy.packet_bits * p as f64 / o + phy.overhead(k));
        }
    }
    let per_station: Vec<f64> = rates
        .iter()
        .zip(packets)
        .map(|(&o, &p)| {
            if p > 0 && o > 0.0 {
                phy.packet_bits * p as f64 / airtime
            } else {
                0.0
            }
        })
        .collect();
    Throughput {
        total: per_station.iter().sum(),
        per_station,
        airtime,
    }
}

pub fn throughput(
    x: &AllocationCube,
    layout: &RuLayout,
    sinr: &SinrMatrix,
    packets: &[u64],
    phy: &PhyParams,
) -> Throughput {
    throughput_from_rates(&station_rates(x, layout, sinr, phy), packets, phy)
}

/// Everything that follows from executing one allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub rates: Vec<f64>,
    pub packets: PacketVector,
    pub throughput: Throughput,
}

impl StepOutcome {
    pub fn from_rates(rates: Vec<f64>, buffers: &[u64], phy: &PhyParams) -> Self {
        let packets: PacketVector = rates
            .iter()
            .zip(buffers)
            .map(|(&o, &b)| packets_for_rate(o, b, phy))
            .collect();
        let throughput = throughput_from_rates(&rates, &packets, phy);
        StepOutcome {
            rates,
            packets,
            throughput,
        }
    }
}

/// Executes `x`: SINR, packet search and throughput.
pub fn evaluate_allocation(
    csi: &CsiTensor,
    layout: &RuLayout,
    x: &AllocationCube,
    buffers: &[u64],
    phy: &PhyParams,
) -> StepOutcome {
    let mut rates = vec![0.0; x.stations()];
    for (slot, ks) in x.used_slots() {
        let r = ru_rates(csi, &layout.rus()[slot], &ks, phy);
        for (k, o) in ks.into_iter().zip(r) {
            rates[k] = o;
        }
    }
    StepOutcome::from_rates(rates, buffers, phy)
}
