//! Uplink CSI generation: log-distance path loss over a tapped-delay
//! Rayleigh channel, one independent realisation per antenna pair.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{MatRef, C64};

pub const CSI_MAGIC: [u8; 4] = *b"AXCS";
pub const CSI_VERSION: u32 = 1;

/// Thermal noise density at room temperature.
pub const NOISE_DENSITY_DBM_HZ: f64 = -174.0;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Per-subcarrier noise power for a band of `bandwidth_hz` split into
/// `fft_size` subcarriers.
pub fn subcarrier_noise_power(noise_figure_db: f64, bandwidth_hz: f64, fft_size: usize) -> f64 {
    let total_dbm = NOISE_DENSITY_DBM_HZ + noise_figure_db + linear_to_db(bandwidth_hz);
    dbm_to_watts(total_dbm) / fft_size as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub num_taps: usize,
    /// Power decay between consecutive taps, dB.
    pub tap_decay_db: f64,
    pub pathloss_exponent: f64,
    /// Path loss at 1 m, dB.
    pub ref_loss_db: f64,
    pub min_distance_m: f64,
    pub max_distance_m: f64,
    pub noise_figure_db: f64,
    pub bandwidth_hz: f64,
    /// Per-STA transmit power, dBm, split across the tones it occupies.
    pub tx_power_dbm: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            num_taps: 8,
            tap_decay_db: 15.0 / 7.0,
            pathloss_exponent: 3.5,
            ref_loss_db: 40.0,
            min_distance_m: 20.0,
            max_distance_m: 100.0,
            noise_figure_db: 7.0,
            bandwidth_hz: 20e6,
            tx_power_dbm: 15.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("channel.{m}")));
        if self.num_taps == 0 {
            return bad("num_taps must be >= 1");
        }
        if !(self.tap_decay_db >= 0.0 && self.tap_decay_db.is_finite()) {
            return bad("tap_decay_db must be finite and >= 0");
        }
        if self.pathloss_exponent.is_nan() || self.pathloss_exponent <= 0.0 {
            return bad("pathloss_exponent must be > 0");
        }
        if !(self.min_distance_m > 0.0 && self.max_distance_m >= self.min_distance_m) {
            return bad("distance range must satisfy 0 < min <= max");
        }
        if self.bandwidth_hz.is_nan() || self.bandwidth_hz <= 0.0 {
            return bad("bandwidth_hz must be > 0");
        }
        if !self.tx_power_dbm.is_finite() || !self.noise_figure_db.is_finite() {
            return bad("powers must be finite");
        }
        Ok(())
    }

    /// Linear power gain of the path at `distance_m`.
    pub fn pathloss(&self, distance_m: f64) -> f64 {
        db_to_linear(-(self.ref_loss_db + 10.0 * self.pathloss_exponent * distance_m.log10()))
    }

    pub fn tx_power(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm)
    }

    pub fn noise_power(&self, fft_size: usize) -> f64 {
        subcarrier_noise_power(self.noise_figure_db, self.bandwidth_hz, fft_size)
    }

    /// Tap powers, normalised to unit sum.
    pub fn tap_powers(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.num_taps)
            .map(|j| db_to_linear(-self.tap_decay_db * j as f64))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / total).collect()
    }
}

/// Uniform i.i.d. station distances in `[min, max]` metres.
pub fn drop_stations<R: Rng + ?Sized>(
    k_count: usize,
    params: &ChannelParams,
    rng: &mut R,
) -> Vec<f64> {
    let dist = Uniform::new_inclusive(params.min_distance_m, params.max_distance_m)
        .expect("validated range");
    (0..k_count).map(|_| dist.sample(rng)).collect()
}

/// Per-subcarrier, per-STA `N_R x N_T` channel matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiTensor {
    subcarriers: usize,
    stations: usize,
    n_r: usize,
    n_t: usize,
    /// `[s][k]` blocks, each column-major `n_r x n_t`.
    data: Vec<C64>,
}

impl CsiTensor {
    pub fn zeros(subcarriers: usize, stations: usize, n_r: usize, n_t: usize) -> Self {
        CsiTensor {
            subcarriers,
            stations,
            n_r,
            n_t,
            data: vec![C64::new(0.0, 0.0); subcarriers * stations * n_r * n_t],
        }
    }

    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    fn block(&self) -> usize {
        self.n_r * self.n_t
    }

    fn offset(&self, s: usize, k: usize) -> usize {
        (s * self.stations + k) * self.block()
    }

    pub fn matrix(&self, s: usize, k: usize) -> MatRef<'_> {
        let o = self.offset(s, k);
        MatRef::new(self.n_r, self.n_t, &self.data[o..o + self.block()])
    }

    pub fn matrix_mut(&mut self, s: usize, k: usize) -> &mut [C64] {
        let o = self.offset(s, k);
        let b = self.block();
        &mut self.data[o..o + b]
    }

    /// Element `(r, t)` of `H_s^{(k)}`.
    pub fn get(&self, s: usize, k: usize, r: usize, t: usize) -> C64 {
        self.data[self.offset(s, k) + t * self.n_r + r]
    }

    pub fn set(&mut self, s: usize, k: usize, r: usize, t: usize, v: C64) {
        let o = self.offset(s, k) + t * self.n_r + r;
        self.data[o] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// Writes the tensor: magic, version and the four dimensions as
    /// little-endian `u32`, then `(re, im)` little-endian `f32` pairs in
    /// row-major `[s][k][r][t]` order.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&CSI_MAGIC)?;
        for v in [
            CSI_VERSION,
            self.subcarriers as u32,
            self.stations as u32,
            self.n_r as u32,
            self.n_t as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for s in 0..self.subcarriers {
            for k in 0..self.stations {
                for r in 0..self.n_r {
                    for t in 0..self.n_t {
                        let c = self.get(s, k, r, t);
                        w.write_all(&(c.re as f32).to_le_bytes())?;
                        w.write_all(&(c.im as f32).to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        let io = |e| Error::invalid(format!("truncated CSI dump: {e}"));
        r.read_exact(&mut magic).map_err(io)?;
        if magic != CSI_MAGIC {
            return Err(Error::invalid("bad CSI dump magic"));
        }
        let mut word = || -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(io)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = word()?;
        if version != CSI_VERSION {
            return Err(Error::invalid(format!(
                "unsupported CSI dump version {version}"
            )));
        }
        let (s, k, nr, nt) = (
            word()? as usize,
            word()? as usize,
            word()? as usize,
            word()? as usize,
        );
        let mut out = CsiTensor::zeros(s, k, nr, nt);
        let mut buf = vec![0u8; s * k * nr * nt * 8];
        r.read_exact(&mut buf).map_err(io)?;
        let mut chunks = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        for si in 0..s {
            for ki in 0..k {
                for ri in 0..nr {
                    for ti in 0..nt {
                        let re = chunks.next().unwrap();
                        let im = chunks.next().unwrap();
                        out.set(si, ki, ri, ti, C64::new(re, im));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn dump(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Precomputed DFT kernel for a fixed tap count and FFT size.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    params: ChannelParams,
    fft_size: usize,
    tap_std: Vec<f64>,
    /// `twiddle[s * taps + j] = exp(-2πi j s / S)`.
    twiddle: Vec<C64>,
}

impl ChannelModel {
    pub fn new(params: ChannelParams, fft_size: usize) -> Self {
        let taps = params.num_taps;
        let tap_std = params.tap_powers().into_iter().map(f64::sqrt).collect();
        let twiddle = (0..fft_size)
            .flat_map(|s| {
                (0..taps).map(move |j| {
                    C64::from_polar(1.0, -2.0 * PI * (j * s) as f64 / fft_size as f64)
                })
            })
            .collect();
        ChannelModel {
            params,
            fft_size,
            tap_std,
            twiddle,
        }
    }

    pub fn params(&self) -> &ChannelParams {
        &self.params
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    /// Draws one block-fading realisation for stations at `distances`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        distances: &[f64],
        n_r: usize,
        n_t: usize,
        rng: &mut R,
    ) -> CsiTensor {
        let taps = self.params.num_taps;
        let s_count = self.fft_size;
        let mut csi = CsiTensor::zeros(s_count, distances.len(), n_r, n_t);
        let mut tap = vec![C64::new(0.0, 0.0); taps];
        for (k, &d) in distances.iter().enumerate() {
            let amp = self.params.pathloss(d).sqrt();
            for r in 0..n_r {
                for t in 0..n_t {
                    for (c, sd) in tap.iter_mut().zip(&self.tap_std) {
                        let re: f64 = StandardNormal.sample(rng);
                        let im: f64 = StandardNormal.sample(rng);
                        *c = C64::new(re, im) * (sd * std::f64::consts::FRAC_1_SQRT_2 * amp);
                    }
                    for s in 0..s_count {
                        let tw = &self.twiddle[s * taps..(s + 1) * taps];
                        let h: C64 = tap.iter().zip(tw).map(|(a, b)| a * b).sum();
                        csi.set(s, k, r, t, h);
                    }
                }
            }
        }
        csi
    }
}

/// One-shot form of [`ChannelModel::sample`].
pub fn sample_csi<R: Rng + ?Sized>(
    params: &ChannelParams,
    distances: &[f64],
    n_r: usize,
    n_t: usize,
    fft_size: usize,
    rng: &mut R,
) -> CsiTensor {
    ChannelModel::new(params.clone(), fft_size).sample(distances, n_r, n_t, rng)
}
