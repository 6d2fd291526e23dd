//! Static cell description, the per-step world state, and the scheduler
//! interface shared by the learned agent, the baselines and the oracle.

use crate::channel::CsiTensor;
use crate::error::Result;
use crate::phy::{self, PhyParams, StepOutcome};
use crate::ru_plan::{validate_allocation, AllocationCube, GoalTable, RuLayout, ValidityReport};
use crate::traffic::BufferState;

/// Everything about the BSS that does not change between steps.
#[derive(Debug, Clone)]
pub struct Cell {
    pub layout: RuLayout,
    pub goals: GoalTable,
    pub stations: usize,
    pub n_r: usize,
    pub n_t: usize,
    pub phy: PhyParams,
    group_limits: Vec<usize>,
}

impl Cell {
    pub fn new(
        layout: RuLayout,
        stations: usize,
        n_r: usize,
        n_t: usize,
        phy: PhyParams,
    ) -> Result<Self> {
        let group_limits = (0..layout.level_count())
            .map(|l| layout.group_limit(l, n_r, n_t))
            .collect::<Result<Vec<_>>>()?;
        if phy.overhead_s.len() != stations {
            return Err(crate::Error::invalid(
                "one overhead value per station is required",
            ));
        }
        let goals = layout.enumerate_goals();
        Ok(Cell {
            layout,
            goals,
            stations,
            n_r,
            n_t,
            phy,
            group_limits,
        })
    }

    pub fn group_limit(&self, level: usize) -> usize {
        self.group_limits[level]
    }

    pub fn validate(&self, x: &AllocationCube) -> ValidityReport {
        validate_allocation(x, &self.layout, self.n_r, self.n_t)
    }

    pub fn evaluate(&self, state: &WorldState, x: &AllocationCube) -> StepOutcome {
        phy::evaluate_allocation(
            &state.csi,
            &self.layout,
            x,
            state.buffers.packets(),
            &self.phy,
        )
    }

    /// Sum throughput of `stations` on the RU in `slot`, ignoring every other RU.
    pub fn ru_throughput(&self, state: &WorldState, slot: usize, stations: &[usize]) -> f64 {
        if stations.is_empty() {
            return 0.0;
        }
        let rates = phy::ru_rates(&state.csi, &self.layout.rus()[slot], stations, &self.phy);
        let mut full = vec![0.0; self.stations];
        for (&k, o) in stations.iter().zip(rates) {
            full[k] = o;
        }
        StepOutcome::from_rates(full, state.buffers.packets(), &self.phy)
            .throughput
            .total
    }

    /// SNR a channel of squared norm `gain` would see with the full band's
    /// per-tone power.
    pub fn reference_snr(&self, gain: f64) -> f64 {
        let tones = self
            .layout
            .rus_at_level(0)
            .iter()
            .map(|r| r.tones())
            .max()
            .unwrap_or(1);
        gain * self.phy.tone_power(tones) / self.phy.noise_power
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub csi: CsiTensor,
    pub buffers: BufferState,
}

/// A per-step decision rule mapping the observed state to an allocation.
pub trait Scheduler {
    fn name(&self) -> &'static str;

    fn schedule(&mut self, cell: &Cell, state: &WorldState) -> Result<AllocationCube>;
}

/// Arrival process and queue settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficParams {
    /// Frames per second.
    pub arrival_rate: f64,
    /// `true`: `arrival_rate` applies to every STA; `false`: it is the
    /// aggregate, split evenly across STAs.
    pub per_station: bool,
    pub capacity: Option<u64>,
    /// Initial queue length drawn uniformly from `[min, max]`.
    pub initial_min: u64,
    pub initial_max: u64,
    /// Fixed gap added to every step's airtime, seconds.
    pub protocol_gap_s: f64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        TrafficParams {
            arrival_rate: 500.0,
            per_station: true,
            capacity: None,
            initial_min: 0,
            initial_max: 20,
            protocol_gap_s: 0.0,
        }
    }
}

impl TrafficParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(crate::Error::Config(format!("traffic.{m}")));
        if !(self.arrival_rate >= 0.0 && self.arrival_rate.is_finite()) {
            return bad("arrival_rate must be finite and >= 0");
        }
        if self.initial_min > self.initial_max {
            return bad("initial_min must not exceed initial_max");
        }
        if self.protocol_gap_s.is_nan() || self.protocol_gap_s < 0.0 {
            return bad("protocol_gap_s must be >= 0");
        }
        if self.capacity == Some(0) {
            return bad("capacity must be positive when set");
        }
        Ok(())
    }

    pub fn station_rate(&self, stations: usize) -> f64 {
        if self.per_station {
            self.arrival_rate
        } else {
            self.arrival_rate / stations.max(1) as f64
        }
    }
}

/// What happened when an allocation was executed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub outcome: StepOutcome,
    /// Simulated time the step occupied, seconds.
    pub duration_s: f64,
    pub delivered: u64,
    pub arrived: u64,
}

/// Block-fading, queue-driven uplink environment for one replication.
///
/// Placement, fading and arrivals draw from separate streams, so the channel
/// sequence seen by two schedulers under the same seed is identical.
#[derive(Debug, Clone)]
pub struct Environment {
    pub cell: Cell,
    pub traffic: TrafficParams,
    channel: crate::channel::ChannelModel,
    distances: Vec<f64>,
    state: WorldState,
    placement_rng: crate::rng::SimRng,
    channel_rng: crate::rng::SimRng,
    traffic_rng: crate::rng::SimRng,
}

impl Environment {
    pub fn new(
        cell: Cell,
        channel: crate::channel::ChannelParams,
        traffic: TrafficParams,
        seed: u64,
        replication: u64,
    ) -> Self {
        use crate::rng::{stream, Stream};
        let model = crate::channel::ChannelModel::new(channel, cell.layout.fft_size());
        let state = WorldState {
            csi: CsiTensor::zeros(cell.layout.fft_size(), cell.stations, cell.n_r, cell.n_t),
            buffers: BufferState::empty(cell.stations, traffic.capacity),
        };
        let mut env = Environment {
            distances: Vec::new(),
            channel: model,
            state,
            placement_rng: stream(seed, replication, Stream::Placement),
            channel_rng: stream(seed, replication, Stream::Channel),
            traffic_rng: stream(seed, replication, Stream::Traffic),
            cell,
            traffic,
        };
        env.reset();
        env
    }

    /// New station drop, initial queues and channel draw.
    pub fn reset(&mut self) {
        use rand::Rng;
        let k = self.cell.stations;
        self.distances =
            crate::channel::drop_stations(k, self.channel.params(), &mut self.placement_rng);
        let (lo, hi) = (self.traffic.initial_min, self.traffic.initial_max);
        let init = (0..k)
            .map(|_| self.traffic_rng.random_range(lo..=hi))
            .collect();
        self.state.buffers = BufferState::new(init, self.traffic.capacity);
        self.redraw_channel();
    }

    fn redraw_channel(&mut self) {
        self.state.csi = self.channel.sample(
            &self.distances,
            self.cell.n_r,
            self.cell.n_t,
            &mut self.channel_rng,
        );
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    pub fn is_terminal(&self) -> bool {
        self.state.buffers.all_empty()
    }

    /// Executes `x`: packets leave, the step's airtime elapses while new
    /// packets arrive, and the channel is redrawn.
    pub fn apply(&mut self, x: &AllocationCube) -> Result<StepReport> {
        let outcome = self.cell.evaluate(&self.state, x);
        self.state.buffers.depart(&outcome.packets)?;
        let delivered = outcome.packets.iter().sum();
        let airtime = if outcome.throughput.airtime > 0.0 {
            outcome.throughput.airtime
        } else {
            self.cell.phy.max_overhead()
        };
        let duration_s = airtime + self.traffic.protocol_gap_s;
        let rate = self.traffic.station_rate(self.cell.stations);
        let arrived = self
            .state
            .buffers
            .arrivals(rate, duration_s, &mut self.traffic_rng);
        self.redraw_channel();
        Ok(StepReport {
            outcome,
            duration_s,
            delivered,
            arrived,
        })
    }
}
