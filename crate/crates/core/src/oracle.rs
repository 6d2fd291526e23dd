//! Exact per-step solver by enumeration, for small instances only.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phy::{self, PacketVector, StepOutcome};
use crate::ru_plan::AllocationCube;
use crate::world::{Cell, Scheduler, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleLimits {
    pub max_stations: usize,
    pub max_rx_antennas: usize,
    /// Upper bound on enumerated allocations per call.
    pub max_allocations: u64,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits {
            max_stations: 5,
            max_rx_antennas: 4,
            max_allocations: 5_000_000,
        }
    }
}

impl OracleLimits {
    /// Worst-case allocation count for `cell`: every STA either idle or on
    /// one RU of the goal.
    pub fn allocation_bound(cell: &Cell) -> u64 {
        cell.goals
            .iter()
            .map(|g| (g.len() as u64 + 1).saturating_pow(cell.stations as u32))
            .fold(0u64, u64::saturating_add)
    }

    pub fn check(&self, cell: &Cell) -> Result<()> {
        if cell.stations > self.max_stations || cell.n_r > self.max_rx_antennas {
            return Err(Error::TooLarge(format!(
                "exhaustive search supports at most {} stations and {} receive antennas (got {} and {})",
                self.max_stations, self.max_rx_antennas, cell.stations, cell.n_r
            )));
        }
        let bound = Self::allocation_bound(cell);
        if bound > self.max_allocations {
            return Err(Error::TooLarge(format!(
                "{bound} candidate allocations exceed the cap of {}",
                self.max_allocations
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub allocation: AllocationCube,
    pub packets: PacketVector,
    /// Summed throughput, bits/s.
    pub throughput: f64,
    pub goal: usize,
    /// Allocations evaluated during the search.
    pub evaluated: u64,
    /// Distinct (RU, STA set) rate evaluations.
    pub rate_evaluations: usize,
}

struct Search<'a> {
    cell: &'a Cell,
    state: &'a WorldState,
    memo: HashMap<(usize, u32), Vec<f64>>,
    evaluated: u64,
    best: Option<(f64, usize, Vec<usize>)>,
}

impl Search<'_> {
    fn rates_on(&mut self, slot: usize, set: u32) -> &[f64] {
        let (cell, state) = (self.cell, self.state);
        self.memo.entry((slot, set)).or_insert_with(|| {
            let ks: Vec<usize> = (0..cell.stations)
                .filter(|&k| set & (1 << k) != 0)
                .collect();
            phy::ru_rates(&state.csi, &cell.layout.rus()[slot], &ks, &cell.phy)
        })
    }

    fn score(&mut self, slots: &[usize], choice: &[usize]) -> f64 {
        let mut rates = vec![0.0; self.cell.stations];
        for (j, &slot) in slots.iter().enumerate() {
            let set = choice
                .iter()
                .enumerate()
                .filter(|&(_, &c)| c == j + 1)
                .fold(0u32, |m, (k, _)| m | (1 << k));
            if set == 0 {
                continue;
            }
            let r = self.rates_on(slot, set).to_vec();
            let mut it = r.into_iter();
            for (k, rate) in rates.iter_mut().enumerate() {
                if set & (1 << k) != 0 {
                    *rate = it.next().unwrap_or(0.0);
                }
            }
        }
        StepOutcome::from_rates(rates, self.state.buffers.packets(), &self.cell.phy)
            .throughput
            .total
    }

    /// Depth-first over STAs; choice 0 is idle, choice `j + 1` is the goal's
    /// `j`-th RU.
    fn visit(
        &mut self,
        goal: usize,
        slots: &[usize],
        limits: &[usize],
        load: &mut [usize],
        choice: &mut Vec<usize>,
    ) {
        if choice.len() == self.cell.stations {
            self.evaluated += 1;
            let v = self.score(slots, choice);
            if self.best.as_ref().is_none_or(|&(b, _, _)| v > b) {
                self.best = Some((v, goal, choice.clone()));
            }
            return;
        }
        for c in 0..=slots.len() {
            if c > 0 && load[c - 1] >= limits[c - 1] {
                continue;
            }
            if c > 0 {
                load[c - 1] += 1;
            }
            choice.push(c);
            self.visit(goal, slots, limits, load, choice);
            choice.pop();
            if c > 0 {
                load[c - 1] -= 1;
            }
        }
    }
}

/// Highest-throughput allocation among all goals and all user assignments
/// meeting the per-STA and per-RU limits. Ties keep the first found.
pub fn optimal_step(
    cell: &Cell,
    state: &WorldState,
    limits: &OracleLimits,
) -> Result<OracleSolution> {
    limits.check(cell)?;
    let mut search = Search {
        cell,
        state,
        memo: HashMap::new(),
        evaluated: 0,
        best: None,
    };
    for (g, rus) in cell.goals.iter().enumerate() {
        let slots: Vec<usize> = rus
            .iter()
            .map(|&id| cell.layout.slot(id))
            .collect::<Result<_>>()?;
        let caps: Vec<usize> = rus.iter().map(|id| cell.group_limit(id.level)).collect();
        let mut load = vec![0; slots.len()];
        search.visit(
            g,
            &slots,
            &caps,
            &mut load,
            &mut Vec::with_capacity(cell.stations),
        );
    }
    let (_, goal, choice) = search
        .best
        .clone()
        .ok_or_else(|| Error::invalid("empty goal table"))?;
    let rus = cell.goals.get(goal).expect("goal index from the search");
    let mut x = AllocationCube::new(&cell.layout, cell.stations);
    for (k, &c) in choice.iter().enumerate() {
        if c > 0 {
            x.assign(&cell.layout, rus[c - 1], k)?;
        }
    }
    let outcome = cell.evaluate(state, &x);
    Ok(OracleSolution {
        allocation: x,
        packets: outcome.packets,
        throughput: outcome.throughput.total,
        goal,
        evaluated: search.evaluated,
        rate_evaluations: search.memo.len(),
    })
}

/// The exhaustive solver as a scheduler.
#[derive(Debug, Clone, Default)]
pub struct Oracle {
    pub limits: OracleLimits,
}

impl Scheduler for Oracle {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn schedule(&mut self, cell: &Cell, state: &WorldState) -> Result<AllocationCube> {
        Ok(optimal_step(cell, state, &self.limits)?.allocation)
    }
}
