//! Two-level Q-learning scheduler: a master network picks the RU combination,
//! one network per RU level picks users for each RU, one STA per round.
//!
//! Sub-agents see a goal only through the RU they are asked to fill (its CSI
//! slice and level); they are not given the goal index.

mod features;
mod subspace;

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    read_checkpoint, write_checkpoint, MlpParams, MlpShape, ReplayBuffer, Sample, Transition,
};
use crate::rng::{stream, SimRng, Stream};
use crate::ru_plan::AllocationCube;
use crate::world::{Cell, Environment, Scheduler, StepReport, WorldState};

pub use features::{
    buffer_feature, efficiency_feature, gain_feature, master_csi_inputs, master_features,
    sub_buf_inputs, sub_csi_inputs, sub_features, sub_mask, Features, StationBlocks,
    StationSymmetry,
};
pub use subspace::{gram_schmidt_update, SubState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub csi_hidden: Vec<usize>,
    pub buf_hidden: Vec<usize>,
    pub fusion_hidden: Vec<usize>,
    pub master_learning_rate: f64,
    pub sub_learning_rate: f64,
    pub batch_size: usize,
    pub master_discount: f64,
    /// Sub-agent rewards are throughput increments within one RU, so the
    /// default sums them undiscounted.
    pub sub_discount: f64,
    pub master_replay: usize,
    pub sub_replay: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episodes over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    /// Target-network refresh period in updates; 0 bootstraps from the
    /// online network.
    pub target_period: usize,
    /// Minibatch updates per stored transition.
    pub updates_per_transition: usize,
    /// Relabel the STAs of every replayed transition with a random
    /// permutation.
    pub station_permutation: bool,
    /// Throughput (bits/s) corresponding to a reward of 1.
    pub reward_scale_bps: f64,
    /// Queue length (packets) corresponding to a buffer feature of 1.
    pub buffer_scale: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            csi_hidden: vec![64],
            buf_hidden: vec![64],
            fusion_hidden: vec![128, 64],
            master_learning_rate: 0.05,
            sub_learning_rate: 0.05,
            batch_size: 32,
            master_discount: 0.9,
            sub_discount: 1.0,
            master_replay: 10_000,
            sub_replay: 10_000,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_decay_fraction: 0.8,
            target_period: 0,
            updates_per_transition: 1,
            station_permutation: false,
            reward_scale_bps: 1e8,
            buffer_scale: 50.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("agent.{m}")));
        let rate_ok = |a: f64| a.is_finite() && a >= 0.0;
        if !rate_ok(self.master_learning_rate) || !rate_ok(self.sub_learning_rate) {
            return bad("learning rates must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.updates_per_transition == 0 {
            return bad("updates_per_transition must be positive");
        }
        if !(0.0..=1.0).contains(&self.master_discount) || !(0.0..=1.0).contains(&self.sub_discount)
        {
            return bad("discounts must lie in [0, 1]");
        }
        if self.master_replay == 0 || self.sub_replay == 0 {
            return bad("replay capacities must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start)
            || !(0.0..=1.0).contains(&self.epsilon_end)
            || self.epsilon_end > self.epsilon_start
        {
            return bad("epsilon must satisfy 0 <= end <= start <= 1");
        }
        if !(self.epsilon_decay_fraction > 0.0 && self.epsilon_decay_fraction <= 1.0) {
            return bad("epsilon_decay_fraction must lie in (0, 1]");
        }
        if !(self.reward_scale_bps > 0.0 && self.buffer_scale > 0.0) {
            return bad("reward_scale_bps and buffer_scale must be positive");
        }
        if self
            .csi_hidden
            .iter()
            .chain(&self.buf_hidden)
            .chain(&self.fusion_hidden)
            .any(|&w| w == 0)
        {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }

    pub fn schedule(&self, episodes: usize) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            end: self.epsilon_end,
            decay_fraction: self.epsilon_decay_fraction,
            episodes,
        }
    }
}

/// Linear decay from `start` to `end` over the first `decay_fraction` of the
/// episodes, flat afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
    pub episodes: usize,
}

impl EpsilonSchedule {
    pub fn value(&self, episode: usize) -> f64 {
        let last = self.episodes.saturating_sub(1) as f64;
        let span = (self.decay_fraction * last).ceil().max(1.0);
        let frac = (episode as f64 / span).min(1.0);
        if frac >= 1.0 {
            return self.end;
        }
        self.start + (self.end - self.start) * frac
    }
}

/// Index of the largest `q[i]` with `mask[i]`; ties go to the lowest index.
pub fn masked_argmax(q: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in q.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|b| v > q[b]) {
            best = Some(i);
        }
    }
    best
}

/// With probability `epsilon` a uniform legal action, otherwise the greedy one.
pub fn epsilon_greedy<R: Rng + ?Sized>(
    q: &[f64],
    mask: &[bool],
    epsilon: f64,
    rng: &mut R,
) -> Option<usize> {
    let legal: Vec<usize> = (0..q.len()).filter(|&i| mask[i]).collect();
    if legal.is_empty() {
        return None;
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Some(legal[rng.random_range(0..legal.len())]);
    }
    masked_argmax(q, mask)
}

/// One DQN learner: online network, optional target copy, and its memory.
#[derive(Debug, Clone)]
pub struct QAgent {
    pub params: MlpParams,
    target: Option<MlpParams>,
    pub replay: ReplayBuffer,
    learning_rate: f64,
    discount: f64,
    batch_size: usize,
    target_period: usize,
    repeats: usize,
    symmetry: Option<StationSymmetry>,
    updates: u64,
}

impl QAgent {
    pub fn new(
        params: MlpParams,
        replay: usize,
        learning_rate: f64,
        discount: f64,
        batch_size: usize,
        target_period: usize,
    ) -> Self {
        let target = (target_period > 0).then(|| params.clone());
        QAgent {
            params,
            target,
            replay: ReplayBuffer::new(replay),
            learning_rate,
            discount,
            batch_size,
            target_period,
            repeats: 1,
            symmetry: None,
            updates: 0,
        }
    }

    /// Number of minibatch updates each [`QAgent::learn`] call performs.
    pub fn with_repeats(mut self, repeats: usize) -> Self {
        self.repeats = repeats.max(1);
        self
    }

    pub fn q_values(&self, f: &Features) -> Result<Vec<f64>> {
        self.params.forward(&f.csi, &f.buf)
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Replays every sampled transition under a random STA relabelling.
    pub fn with_symmetry(mut self, symmetry: Option<StationSymmetry>) -> Self {
        self.symmetry = symmetry;
        self
    }

    /// SGD steps on fresh replay minibatches, returning their mean loss;
    /// `None` while the memory holds fewer transitions than a batch.
    pub fn learn<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<f64>> {
        if self.replay.len() < self.batch_size {
            return Ok(None);
        }
        let mut total = 0.0;
        for _ in 0..self.repeats {
            total += self.update(rng)?;
        }
        Ok(Some(total / self.repeats as f64))
    }

    fn update<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<f64> {
        let sampled = self.replay.sample(self.batch_size, rng)?;
        let relabelled: Vec<Transition>;
        let batch: Vec<&Transition> = match &self.symmetry {
            None => sampled,
            Some(sym) => {
                let mut perm: Vec<usize> = (0..sym.stations).collect();
                relabelled = sampled
                    .into_iter()
                    .map(|t| {
                        perm.shuffle(rng);
                        Transition {
                            csi: sym.permute(&t.csi, &sym.csi, &perm),
                            buf: sym.permute(&t.buf, &sym.buf, &perm),
                            action: sym.permute_action(t.action, &perm),
                            reward: t.reward,
                            next_csi: sym.permute(&t.next_csi, &sym.csi, &perm),
                            next_buf: sym.permute(&t.next_buf, &sym.buf, &perm),
                            next_mask: sym.permute_mask(&t.next_mask, &perm),
                            terminal: t.terminal,
                        }
                    })
                    .collect();
                relabelled.iter().collect()
            }
        };
        let bootstrap = self.target.as_ref().unwrap_or(&self.params);
        let mut targets = Vec::with_capacity(batch.len());
        for t in &batch {
            let mut y = t.reward;
            if !t.terminal && self.discount > 0.0 {
                let q = bootstrap.forward(&t.next_csi, &t.next_buf)?;
                if let Some(a) = masked_argmax(&q, &t.next_mask) {
                    y += self.discount * q[a];
                }
            }
            targets.push(y);
        }
        let samples: Vec<Sample<'_>> = batch
            .iter()
            .zip(&targets)
            .map(|(t, &y)| Sample {
                csi: &t.csi,
                buf: &t.buf,
                action: t.action,
                target: y,
            })
            .collect();
        let loss = self.params.sgd_step(&samples, self.learning_rate)?;
        self.updates += 1;
        if self.target_period > 0 && self.updates.is_multiple_of(self.target_period as u64) {
            self.target = Some(self.params.clone());
        }
        Ok(loss)
    }
}

/// ε-greedy goal choice over the whole goal table.
pub fn select_goal<R: Rng + ?Sized>(
    master: &QAgent,
    features: &Features,
    epsilon: f64,
    rng: &mut R,
) -> Result<usize> {
    let q = master.q_values(features)?;
    let mask = vec![true; q.len()];
    epsilon_greedy(&q, &mask, epsilon, rng)
        .ok_or_else(|| Error::invalid("master network has no outputs"))
}

/// Running sum of losses for reporting.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTally {
    pub sum: f64,
    pub count: usize,
}

impl LossTally {
    pub fn add(&mut self, loss: Option<f64>) {
        if let Some(l) = loss {
            self.sum += l;
            self.count += 1;
        }
    }

    pub fn merge(&mut self, other: LossTally) {
        self.sum += other.sum;
        self.count += other.count;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Result of filling one RU.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub stations: Vec<usize>,
    /// Intrinsic reward per completed round, in reward units.
    pub increments: Vec<f64>,
    pub losses: LossTally,
}

/// Exploration and learning switches for one decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub master_epsilon: f64,
    pub sub_epsilon: f64,
    pub learn: bool,
}

impl Mode {
    pub const GREEDY: Mode = Mode {
        master_epsilon: 0.0,
        sub_epsilon: 0.0,
        learn: false,
    };
}

/// Sequential user selection on one RU. Rounds are capped by the level's
/// group limit; each round picks a selectable STA or break.
#[allow(clippy::too_many_arguments)]
pub fn select_users<R: Rng + ?Sized>(
    agent: &mut QAgent,
    cell: &Cell,
    state: &WorldState,
    mut sub: SubState,
    level: usize,
    epsilon: f64,
    learn: bool,
    config: &AgentConfig,
    act_rng: &mut R,
    replay_rng: &mut R,
) -> Result<Selection> {
    let rounds = cell.group_limit(level);
    let break_action = cell.stations;
    let buffers = state.buffers.packets();
    let mut out = Selection {
        stations: Vec::new(),
        increments: Vec::new(),
        losses: LossTally::default(),
    };
    let mut previous = 0.0;
    for round in 0..rounds {
        let f = sub_features(cell, &sub, buffers, round, rounds, config.buffer_scale);
        let mask = sub_mask(&sub);
        let q = agent.q_values(&f)?;
        let action = epsilon_greedy(&q, &mask, epsilon, act_rng).unwrap_or(break_action);
        let chosen = if action == break_action {
            None
        } else {
            match sub.gram_schmidt_update(action) {
                Ok(()) => Some(action),
                Err(Error::DegenerateSelection) => None,
                Err(e) => return Err(e),
            }
        };
        let Some(k) = chosen else {
            if learn {
                agent.replay.push(Transition {
                    csi: f.csi.clone(),
                    buf: f.buf.clone(),
                    action,
                    reward: 0.0,
                    next_csi: f.csi,
                    next_buf: f.buf,
                    next_mask: mask,
                    terminal: true,
                });
                out.losses.add(agent.learn(replay_rng)?);
            }
            break;
        };
        out.stations.push(k);
        let current =
            cell.ru_throughput(state, sub.slot(), &out.stations) / config.reward_scale_bps;
        out.increments.push(current - previous);
        if learn {
            let next = sub_features(cell, &sub, buffers, round + 1, rounds, config.buffer_scale);
            agent.replay.push(Transition {
                csi: f.csi,
                buf: f.buf,
                action,
                reward: current - previous,
                next_csi: next.csi,
                next_buf: next.buf,
                next_mask: sub_mask(&sub),
                terminal: round + 1 == rounds,
            });
            out.losses.add(agent.learn(replay_rng)?);
        }
        previous = current;
    }
    Ok(out)
}

/// One executed decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub goal: usize,
    pub allocation: AllocationCube,
    pub sub_losses: LossTally,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub decision: Decision,
    pub report: StepReport,
    /// Extrinsic reward in reward units.
    pub reward: f64,
    pub master_loss: Option<f64>,
}

/// Per-episode summary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeMetrics {
    pub steps: usize,
    /// Mean over steps of the summed per-step throughput, bits/s.
    pub mean_throughput_bps: f64,
    pub packets_delivered: u64,
    pub mean_epsilon: f64,
    pub master_loss: f64,
    pub sub_loss: f64,
}

/// The master agent plus one sub-agent per RU level.
#[derive(Debug, Clone)]
pub struct Dhqn {
    pub config: AgentConfig,
    pub master: QAgent,
    pub subs: Vec<QAgent>,
    act_rng: SimRng,
    replay_rng: SimRng,
}

impl Dhqn {
    pub fn master_shape(cell: &Cell, config: &AgentConfig) -> MlpShape {
        MlpShape {
            csi_inputs: master_csi_inputs(cell),
            buf_inputs: cell.stations,
            csi_hidden: config.csi_hidden.clone(),
            buf_hidden: config.buf_hidden.clone(),
            fusion_hidden: config.fusion_hidden.clone(),
            outputs: cell.goals.len(),
        }
    }

    pub fn sub_shape(cell: &Cell, config: &AgentConfig) -> MlpShape {
        MlpShape {
            csi_inputs: sub_csi_inputs(cell),
            buf_inputs: sub_buf_inputs(cell),
            csi_hidden: config.csi_hidden.clone(),
            buf_hidden: config.buf_hidden.clone(),
            fusion_hidden: config.fusion_hidden.clone(),
            outputs: cell.stations + 1,
        }
    }

    pub fn new(cell: &Cell, config: AgentConfig, seed: u64, replication: u64) -> Result<Self> {
        config.validate()?;
        let mut init = stream(seed, replication, Stream::Init);
        let master = MlpParams::new(&Self::master_shape(cell, &config), &mut init);
        let subs = (0..cell.layout.level_count())
            .map(|_| MlpParams::new(&Self::sub_shape(cell, &config), &mut init))
            .collect();
        Self::from_params(cell, config, master, subs, seed, replication)
    }

    fn from_params(
        cell: &Cell,
        config: AgentConfig,
        master: MlpParams,
        subs: Vec<MlpParams>,
        seed: u64,
        replication: u64,
    ) -> Result<Self> {
        let incompatible = |what: &str| Err(Error::IncompatibleCheckpoint(what.to_string()));
        if master.shape() != Self::master_shape(cell, &config) {
            return incompatible("master network does not match the scenario");
        }
        if subs.len() != cell.layout.level_count() {
            return incompatible("one sub-agent network per RU level is required");
        }
        if subs
            .iter()
            .any(|s| s.shape() != Self::sub_shape(cell, &config))
        {
            return incompatible("sub-agent network does not match the scenario");
        }
        let c = &config;
        let master = QAgent::new(
            master,
            c.master_replay,
            c.master_learning_rate,
            c.master_discount,
            c.batch_size,
            c.target_period,
        )
        .with_repeats(c.updates_per_transition)
        .with_symmetry(c.station_permutation.then(|| StationSymmetry::master(cell)));
        let subs = subs
            .into_iter()
            .map(|p| {
                QAgent::new(
                    p,
                    c.sub_replay,
                    c.sub_learning_rate,
                    c.sub_discount,
                    c.batch_size,
                    c.target_period,
                )
                .with_repeats(c.updates_per_transition)
                .with_symmetry(c.station_permutation.then(|| StationSymmetry::sub(cell)))
            })
            .collect();
        Ok(Dhqn {
            config,
            master,
            subs,
            act_rng: stream(seed, replication, Stream::Agent),
            replay_rng: stream(seed, replication, Stream::Replay),
        })
    }

    /// Networks in checkpoint order: master, then sub-agents by level.
    pub fn networks(&self) -> Vec<&MlpParams> {
        std::iter::once(&self.master.params)
            .chain(self.subs.iter().map(|s| &s.params))
            .collect()
    }

    pub fn save<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_checkpoint(&self.networks(), w)
    }

    /// Restores networks written by [`Dhqn::save`]; memories start empty.
    pub fn load<R: Read>(
        cell: &Cell,
        config: AgentConfig,
        r: R,
        seed: u64,
        replication: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut nets = read_checkpoint(r)?.into_iter();
        let master = nets
            .next()
            .ok_or_else(|| Error::IncompatibleCheckpoint("checkpoint holds no networks".into()))?;
        Self::from_params(cell, config, master, nets.collect(), seed, replication)
    }

    /// Goal choice and per-RU user selection for `state`.
    pub fn act(&mut self, cell: &Cell, state: &WorldState, mode: Mode) -> Result<Decision> {
        let f = master_features(cell, state, self.config.buffer_scale);
        let goal = select_goal(&self.master, &f, mode.master_epsilon, &mut self.act_rng)?;
        self.fill_goal(cell, state, goal, mode)
    }

    /// User selection on every RU of `goal`; STAs placed on one RU are
    /// unavailable to the RUs after it.
    pub fn fill_goal(
        &mut self,
        cell: &Cell,
        state: &WorldState,
        goal: usize,
        mode: Mode,
    ) -> Result<Decision> {
        let rus = cell
            .goals
            .get(goal)
            .ok_or_else(|| Error::invalid(format!("goal {goal} out of range")))?
            .to_vec();
        let mut x = AllocationCube::new(&cell.layout, cell.stations);
        let mut taken = vec![false; cell.stations];
        let mut losses = LossTally::default();
        for id in rus {
            let slot = cell.layout.slot(id)?;
            let sub = SubState::new(&state.csi, slot, &cell.layout.rus()[slot], taken.clone());
            let sel = select_users(
                &mut self.subs[id.level],
                cell,
                state,
                sub,
                id.level,
                mode.sub_epsilon,
                mode.learn,
                &self.config,
                &mut self.act_rng,
                &mut self.replay_rng,
            )?;
            for &k in &sel.stations {
                x.set_slot(slot, k, true);
                taken[k] = true;
            }
            losses.merge(sel.losses);
        }
        Ok(Decision {
            goal,
            allocation: x,
            sub_losses: losses,
        })
    }

    /// Decide, execute on `env`, and (when learning) store the master
    /// transition and update the master network.
    pub fn step(&mut self, env: &mut Environment, mode: Mode) -> Result<StepResult> {
        let before = master_features(&env.cell, env.state(), self.config.buffer_scale);
        let decision = self.act(&env.cell, &env.state().clone(), mode)?;
        let report = env.cell.validate(&decision.allocation);
        if !report.is_valid() {
            return Err(Error::ContractViolation(format!(
                "agent emitted an invalid allocation: {report:?}"
            )));
        }
        let report = env.apply(&decision.allocation)?;
        let reward = report.outcome.throughput.total / self.config.reward_scale_bps;
        let mut master_loss = None;
        if mode.learn {
            let after = master_features(&env.cell, env.state(), self.config.buffer_scale);
            self.master.replay.push(Transition {
                csi: before.csi,
                buf: before.buf,
                action: decision.goal,
                reward,
                next_csi: after.csi,
                next_buf: after.buf,
                next_mask: vec![true; env.cell.goals.len()],
                terminal: env.is_terminal(),
            });
            master_loss = self.master.learn(&mut self.replay_rng)?;
        }
        Ok(StepResult {
            decision,
            report,
            reward,
            master_loss,
        })
    }
}

impl Scheduler for Dhqn {
    fn name(&self) -> &'static str {
        "dhqn"
    }

    fn schedule(&mut self, cell: &Cell, state: &WorldState) -> Result<AllocationCube> {
        Ok(self.act(cell, state, Mode::GREEDY)?.allocation)
    }
}

/// One training episode: fresh drop and queues, then steps until every queue
/// is empty or `max_steps` is reached.
pub fn train_episode(
    agents: &mut Dhqn,
    env: &mut Environment,
    episode: usize,
    episodes: usize,
    max_steps: usize,
) -> Result<EpisodeMetrics> {
    let eps = agents.config.schedule(episodes).value(episode);
    let mode = Mode {
        master_epsilon: eps,
        sub_epsilon: eps,
        learn: true,
    };
    env.reset();
    let mut m = EpisodeMetrics {
        mean_epsilon: eps,
        ..EpisodeMetrics::default()
    };
    let (mut master, mut sub) = (LossTally::default(), LossTally::default());
    let mut throughput = 0.0;
    while m.steps < max_steps && !env.is_terminal() {
        let r = agents.step(env, mode)?;
        throughput += r.report.outcome.throughput.total;
        m.packets_delivered += r.report.delivered;
        master.add(r.master_loss);
        sub.merge(r.decision.sub_losses);
        m.steps += 1;
    }
    if m.steps > 0 {
        m.mean_throughput_bps = throughput / m.steps as f64;
    }
    m.master_loss = master.mean();
    m.sub_loss = sub.mean();
    Ok(m)
}

/// `C(n, k)`, exact.
pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Size of the per-RU action space when a whole user group is one action:
/// every non-empty set of at most `group_limit` STAs.
pub fn joint_action_space(stations: u64, group_limit: u64) -> u128 {
    (1..=group_limit).map(|i| binomial(stations, i)).sum()
}

/// Size of the per-round action space under sequential selection.
pub fn sequential_action_space(stations: u64) -> u128 {
    stations as u128 + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelParams;
    use crate::nn::Dense;
    use crate::phy::PhyParams;
    use crate::rng::seeded;
    use crate::ru_plan::RuLayout;
    use crate::world::TrafficParams;

    fn cell(k: usize, n_r: usize, n_t: usize) -> Cell {
        let params = ChannelParams::default();
        let phy = PhyParams::new(k, params.tx_power(), params.noise_power(256));
        Cell::new(RuLayout::twenty_mhz(), k, n_r, n_t, phy).unwrap()
    }

    fn small_config() -> AgentConfig {
        AgentConfig {
            csi_hidden: vec![8],
            buf_hidden: vec![8],
            fusion_hidden: vec![8],
            batch_size: 4,
            ..AgentConfig::default()
        }
    }

    /// Network whose output `i` is `bias[i]` regardless of input.
    fn constant_net(shape: &MlpShape, bias: &[f64]) -> MlpParams {
        let mut p = MlpParams::new(shape, &mut seeded(0));
        for layer in p
            .csi
            .iter_mut()
            .chain(p.buf.iter_mut())
            .chain(p.fusion.iter_mut())
        {
            *layer = Dense::zeros(layer.inputs, layer.outputs);
        }
        p.fusion.last_mut().unwrap().bias.copy_from_slice(bias);
        p
    }

    #[test]
    fn action_space_sizes() {
        assert_eq!(joint_action_space(20, 4), 6195);
        assert_eq!(sequential_action_space(20), 21);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 4), 0);
    }

    #[test]
    fn epsilon_schedule_shape() {
        let s = AgentConfig::default().schedule(101);
        assert_eq!(s.value(0), 1.0);
        assert_eq!(s.value(80), 0.1);
        assert_eq!(s.value(100), s.value(80));
        let mut prev = f64::INFINITY;
        for e in 0..101 {
            assert!(s.value(e) <= prev);
            prev = s.value(e);
        }
        assert_eq!(AgentConfig::default().schedule(2).value(1), 0.1);
    }

    #[test]
    fn greedy_ties_take_lowest_index() {
        assert_eq!(
            masked_argmax(&[1.0, 3.0, 3.0], &[true, true, true]),
            Some(1)
        );
        assert_eq!(
            masked_argmax(&[1.0, 3.0, 3.0], &[true, false, true]),
            Some(2)
        );
        assert_eq!(masked_argmax(&[1.0], &[false]), None);
        assert_eq!(
            epsilon_greedy(&[0.0, 0.0], &[true, true], 0.0, &mut seeded(1)),
            Some(0)
        );
    }

    #[test]
    fn epsilon_one_is_uniform_over_goals() {
        let c = cell(2, 2, 1);
        let shape = Dhqn::master_shape(&c, &small_config());
        let mut bias = vec![0.0; 26];
        bias[3] = 5.0;
        let master = QAgent::new(constant_net(&shape, &bias), 10, 0.1, 0.9, 4, 0);
        let f = Features {
            csi: vec![0.0; shape.csi_inputs],
            buf: vec![0.0; shape.buf_inputs],
        };
        let mut rng = seeded(9);
        let draws = 10_000;
        let mut counts = [0usize; 26];
        for _ in 0..draws {
            counts[select_goal(&master, &f, 1.0, &mut rng).unwrap()] += 1;
        }
        let p = 1.0 / 26.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for &n in &counts {
            assert!(
                (n as f64 - draws as f64 * p).abs() < 4.0 * sigma,
                "{counts:?}"
            );
        }
        for _ in 0..50 {
            assert_eq!(select_goal(&master, &f, 0.0, &mut rng).unwrap(), 3);
        }
    }

    fn world(c: &Cell, buffers: Vec<u64>) -> WorldState {
        let model = crate::channel::ChannelModel::new(ChannelParams::default(), 256);
        let d: Vec<f64> = (0..c.stations).map(|k| 25.0 + 5.0 * k as f64).collect();
        WorldState {
            csi: model.sample(&d, c.n_r, c.n_t, &mut seeded(4)),
            buffers: crate::traffic::BufferState::new(buffers, None),
        }
    }

    #[test]
    fn favoured_stations_are_picked_in_order() {
        let c = cell(6, 8, 2);
        let cfg = small_config();
        let shape = Dhqn::sub_shape(&c, &cfg);
        // Prefers STAs 1..4 in that order, break below all of them.
        let bias = [0.0, 9.0, 8.0, 7.0, 6.0, 1.0, 0.5];
        let mut agent = QAgent::new(constant_net(&shape, &bias), 10, 0.0, 1.0, 4, 0);
        let state = world(&c, vec![10; 6]);
        let slot = c.layout.slot(crate::ru_plan::RuId::new(1, 0)).unwrap();
        let sub = SubState::new(&state.csi, slot, &c.layout.rus()[slot], vec![false; 6]);
        let (mut a, mut b) = (seeded(1), seeded(2));
        let sel = select_users(
            &mut agent, &c, &state, sub, 1, 0.0, false, &cfg, &mut a, &mut b,
        )
        .unwrap();
        assert_eq!(sel.stations, vec![1, 2, 3, 4]);
        let total: f64 = sel.increments.iter().sum();
        let direct = c.ru_throughput(&state, slot, &sel.stations) / cfg.reward_scale_bps;
        assert!((total - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn break_first_leaves_ru_empty_and_small_rus_take_one_round() {
        let c = cell(3, 4, 1);
        let cfg = small_config();
        let shape = Dhqn::sub_shape(&c, &cfg);
        let state = world(&c, vec![5; 3]);
        let mut stopper = QAgent::new(
            constant_net(&shape, &[0.0, 0.0, 0.0, 1.0]),
            10,
            0.0,
            1.0,
            4,
            0,
        );
        let slot = c.layout.slot(crate::ru_plan::RuId::new(0, 0)).unwrap();
        let sub = SubState::new(&state.csi, slot, &c.layout.rus()[slot], vec![false; 3]);
        let (mut a, mut b) = (seeded(1), seeded(2));
        let sel = select_users(
            &mut stopper,
            &c,
            &state,
            sub,
            0,
            0.0,
            true,
            &cfg,
            &mut a,
            &mut b,
        )
        .unwrap();
        assert!(sel.stations.is_empty());
        assert_eq!(stopper.replay.len(), 1);

        let mut eager = QAgent::new(
            constant_net(&shape, &[3.0, 2.0, 1.0, 0.0]),
            10,
            0.0,
            1.0,
            4,
            0,
        );
        let slot = c.layout.slot(crate::ru_plan::RuId::new(2, 1)).unwrap();
        let sub = SubState::new(&state.csi, slot, &c.layout.rus()[slot], vec![false; 3]);
        let sel = select_users(
            &mut eager, &c, &state, sub, 2, 0.0, false, &cfg, &mut a, &mut b,
        )
        .unwrap();
        assert_eq!(sel.stations, vec![0]);
    }

    fn env(c: Cell, seed: u64) -> Environment {
        let traffic = TrafficParams {
            initial_min: 5,
            initial_max: 30,
            ..TrafficParams::default()
        };
        Environment::new(c, ChannelParams::default(), traffic, seed, 0)
    }

    #[test]
    fn zero_max_steps_is_an_empty_episode() {
        let c = cell(3, 2, 1);
        let mut agents = Dhqn::new(&c, small_config(), 1, 0).unwrap();
        let mut e = env(c, 1);
        let m = train_episode(&mut agents, &mut e, 0, 10, 0).unwrap();
        assert_eq!(m.steps, 0);
        assert_eq!(agents.master.replay.len(), 0);
        assert_eq!(agents.master.updates(), 0);
    }

    #[test]
    fn warm_up_skips_updates() {
        let c = cell(3, 2, 1);
        let cfg = AgentConfig {
            batch_size: 1000,
            ..small_config()
        };
        let mut agents = Dhqn::new(&c, cfg, 1, 0).unwrap();
        let mut e = env(c, 1);
        let m = train_episode(&mut agents, &mut e, 0, 10, 5).unwrap();
        assert!(m.steps > 0);
        assert_eq!(agents.master.updates(), 0);
        assert!(agents.subs.iter().all(|s| s.updates() == 0));
        assert_eq!(m.master_loss, 0.0);
    }

    #[test]
    fn empty_buffers_give_zero_reward() {
        let c = cell(3, 2, 1);
        let mut agents = Dhqn::new(&c, small_config(), 3, 0).unwrap();
        let state = world(&c, vec![0, 0, 0]);
        for goal in 0..c.goals.len() {
            let d = agents.fill_goal(&c, &state, goal, Mode::GREEDY).unwrap();
            assert!(c.validate(&d.allocation).is_valid());
            assert_eq!(c.evaluate(&state, &d.allocation).throughput.total, 0.0);
        }
    }

    #[test]
    fn training_is_deterministic_and_valid() {
        let run = || {
            let c = cell(3, 2, 1);
            let mut agents = Dhqn::new(&c, small_config(), 7, 1).unwrap();
            let mut e = env(c, 7);
            let mut out = Vec::new();
            for ep in 0..4 {
                out.push(train_episode(&mut agents, &mut e, ep, 4, 8).unwrap());
            }
            let mut bytes = Vec::new();
            agents.save(&mut bytes).unwrap();
            (out, bytes)
        };
        let (a, ca) = run();
        let (b, cb) = run();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert!(a.iter().any(|m| m.master_loss > 0.0));
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let c = cell(3, 2, 1);
        let agents = Dhqn::new(&c, small_config(), 2, 0).unwrap();
        let mut bytes = Vec::new();
        agents.save(&mut bytes).unwrap();
        let back = Dhqn::load(&c, small_config(), bytes.as_slice(), 2, 0).unwrap();
        assert_eq!(back.master.params, agents.master.params);
        let other = cell(4, 2, 1);
        assert!(matches!(
            Dhqn::load(&other, small_config(), bytes.as_slice(), 2, 0),
            Err(Error::IncompatibleCheckpoint(_))
        ));
    }
}
