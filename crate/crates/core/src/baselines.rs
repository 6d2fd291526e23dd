//! Comparison schedulers: SINR-driven selection over all RU combinations or
//! a fixed RU level, and a buffer-ordered heuristic on the fixed level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::ru_plan::{AllocationCube, RuId};
use crate::world::{Cell, Scheduler, WorldState};

/// Semi-orthogonal user selection knob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SusParams {
    pub alpha: f64,
}

impl Default for SusParams {
    fn default() -> Self {
        SusParams { alpha: 0.3 }
    }
}

impl SusParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("sus.alpha must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Complex mean of each STA's channel over the RU's subcarriers, as a
/// column-major `n_r x n_t` block.
pub fn averaged_channels(cell: &Cell, state: &WorldState, slot: usize) -> Vec<Vec<C64>> {
    let ru = &cell.layout.rus()[slot];
    let n = ru.subcarriers.len() as f64;
    (0..cell.stations)
        .map(|k| {
            let mut acc = vec![C64::new(0.0, 0.0); cell.n_r * cell.n_t];
            for &s in &ru.subcarriers {
                for (a, h) in acc.iter_mut().zip(state.csi.matrix(s, k).data) {
                    *a += h;
                }
            }
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        })
        .collect()
}

fn residual_sqr(h: &[C64], n_r: usize, basis: &[Vec<C64>]) -> f64 {
    h.chunks(n_r)
        .map(|col| {
            let mut v = col.to_vec();
            linalg::project_out(&mut v, basis);
            linalg::norm_sqr(&v)
        })
        .sum()
}

/// Greedy semi-orthogonal selection among `candidates`.
///
/// Starts from the strongest channel; each further pick is the candidate
/// with the largest component outside the selected subspace, among those
/// whose normalized projection onto that subspace stays below `alpha`.
/// Returns STAs in selection order.
pub fn sus_select(
    channels: &[Vec<C64>],
    n_r: usize,
    candidates: &[usize],
    group_limit: usize,
    params: &SusParams,
) -> Vec<usize> {
    let mut selected = Vec::new();
    let mut basis: Vec<Vec<C64>> = Vec::new();
    let mut pool: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&k| linalg::norm_sqr(&channels[k]) > 0.0)
        .collect();
    while selected.len() < group_limit && !pool.is_empty() {
        let mut best: Option<(usize, f64)> = None;
        for &k in &pool {
            let r = residual_sqr(&channels[k], n_r, &basis);
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((k, r));
            }
        }
        let (pick, residual) = best.expect("pool is non-empty");
        if residual <= 0.0 {
            break;
        }
        selected.push(pick);
        linalg::extend_basis(&mut basis, channels[pick].chunks(n_r), crate::phy::RANK_TOL);
        pool.retain(|&k| {
            if k == pick {
                return false;
            }
            let total = linalg::norm_sqr(&channels[k]);
            let inside = (total - residual_sqr(&channels[k], n_r, &basis)).max(0.0);
            (inside / total).sqrt() < params.alpha
        });
    }
    selected
}

/// Fills the RUs in order with SUS, each STA on at most one RU.
fn sus_fill(
    cell: &Cell,
    state: &WorldState,
    rus: &[RuId],
    params: &SusParams,
) -> Result<AllocationCube> {
    let mut x = AllocationCube::new(&cell.layout, cell.stations);
    let mut taken = vec![false; cell.stations];
    for &id in rus {
        let slot = cell.layout.slot(id)?;
        let channels = averaged_channels(cell, state, slot);
        let candidates: Vec<usize> = (0..cell.stations).filter(|&k| !taken[k]).collect();
        for k in sus_select(
            &channels,
            cell.n_r,
            &candidates,
            cell.group_limit(id.level),
            params,
        ) {
            x.set_slot(slot, k, true);
            taken[k] = true;
        }
    }
    Ok(x)
}

/// Sum of OFDM rates of `x`, ignoring queues.
pub fn saturated_score(cell: &Cell, state: &WorldState, x: &AllocationCube) -> f64 {
    x.used_slots()
        .into_iter()
        .map(|(slot, ks)| {
            crate::phy::ru_rates(&state.csi, &cell.layout.rus()[slot], &ks, &cell.phy)
                .iter()
                .sum::<f64>()
        })
        .sum()
}

/// SUS on every goal; the goal with the highest saturated rate sum wins,
/// ties to the lowest goal index. Returns the cube and the winning goal.
pub fn sinr_sched_searched_ra_with(
    cell: &Cell,
    state: &WorldState,
    params: &SusParams,
) -> Result<(AllocationCube, usize)> {
    let mut best: Option<(AllocationCube, usize, f64)> = None;
    for (g, rus) in cell.goals.iter().enumerate() {
        let x = sus_fill(cell, state, rus, params)?;
        let score = saturated_score(cell, state, &x);
        if best.as_ref().is_none_or(|&(_, _, b)| score > b) {
            best = Some((x, g, score));
        }
    }
    let (x, g, _) = best.ok_or_else(|| Error::invalid("empty goal table"))?;
    Ok((x, g))
}

pub fn sinr_sched_searched_ra(cell: &Cell, state: &WorldState) -> Result<AllocationCube> {
    Ok(sinr_sched_searched_ra_with(cell, state, &SusParams::default())?.0)
}

/// `min(L - 2, floor(log2(K n_r / n_t)))`, clamped at level 0.
pub fn fixed_ra_level(stations: usize, n_r: usize, n_t: usize, top_level: usize) -> Result<usize> {
    if stations == 0 || n_r == 0 || n_t == 0 || top_level == 0 {
        return Err(Error::invalid("fixed_ra_level needs positive arguments"));
    }
    // Largest j with 2^j * n_t <= K * n_r.
    let num = (stations * n_r) as u128;
    let mut j = 0usize;
    while (n_t as u128) << (j + 1) <= num {
        j += 1;
    }
    Ok(j.min(top_level.saturating_sub(2)))
}

fn fixed_rus(cell: &Cell) -> Result<Vec<RuId>> {
    let level = fixed_ra_level(cell.stations, cell.n_r, cell.n_t, cell.layout.top_level())?;
    Ok((0..cell.layout.level_size(level))
        .map(|i| RuId::new(level, i))
        .collect())
}

pub fn sinr_sched_fixed_ra(
    cell: &Cell,
    state: &WorldState,
    params: &SusParams,
) -> Result<AllocationCube> {
    sus_fill(cell, state, &fixed_rus(cell)?, params)
}

/// Order in which the buffer heuristic serves STAs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferOrder {
    #[default]
    Ascending,
    Descending,
}

/// STAs with queued packets, sorted by queue length (ties by index), dealt
/// round-robin onto the fixed-level RUs up to each RU's group limit.
pub fn buffer_sched_fixed_ra(
    cell: &Cell,
    state: &WorldState,
    order: BufferOrder,
) -> Result<AllocationCube> {
    let rus = fixed_rus(cell)?;
    let b = state.buffers.packets();
    let mut queue: Vec<usize> = (0..cell.stations).filter(|&k| b[k] > 0).collect();
    match order {
        BufferOrder::Ascending => queue.sort_by_key(|&k| (b[k], k)),
        BufferOrder::Descending => queue.sort_by_key(|&k| (std::cmp::Reverse(b[k]), k)),
    }
    let mut x = AllocationCube::new(&cell.layout, cell.stations);
    let slots: Vec<usize> = rus
        .iter()
        .map(|&id| cell.layout.slot(id))
        .collect::<Result<_>>()?;
    let limits: Vec<usize> = rus.iter().map(|id| cell.group_limit(id.level)).collect();
    let mut load = vec![0usize; rus.len()];
    let mut next = 0usize;
    for k in queue {
        let Some(j) = (0..rus.len())
            .map(|i| (next + i) % rus.len())
            .find(|&j| load[j] < limits[j])
        else {
            break;
        };
        x.set_slot(slots[j], k, true);
        load[j] += 1;
        next = (j + 1) % rus.len();
    }
    Ok(x)
}

/// SINR-based scheduling with RU-combination search.
#[derive(Debug, Clone, Default)]
pub struct SinrSearched {
    pub sus: SusParams,
}

impl Scheduler for SinrSearched {
    fn name(&self) -> &'static str {
        "sinr_searched"
    }

    fn schedule(&mut self, cell: &Cell, state: &WorldState) -> Result<AllocationCube> {
        Ok(sinr_sched_searched_ra_with(cell, state, &self.sus)?.0)
    }
}

/// SINR-based scheduling on the fixed RU level.
#[derive(Debug, Clone, Default)]
pub struct SinrFixed {
    pub sus: SusParams,
}

impl Scheduler for SinrFixed {
    fn name(&self) -> &'static str {
        "sinr_fixed"
    }

    fn schedule(&mut self, cell: &Cell, state: &WorldState) -> Result<AllocationCube> {
        sinr_sched_fixed_ra(cell, state, &self.sus)
    }
}

/// Buffer-ordered heuristic on the fixed RU level.
#[derive(Debug, Clone, Default)]
pub struct BufferFixed {
    pub order: BufferOrder,
}

impl Scheduler for BufferFixed {
    fn name(&self) -> &'static str {
        "buffer_fixed"
    }

    fn schedule(&mut self, cell: &Cell, state: &WorldState) -> Result<AllocationCube> {
        buffer_sched_fixed_ra(cell, state, self.order)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelModel, ChannelParams};
    use crate::phy::PhyParams;
    use crate::rng::seeded;
    use crate::ru_plan::RuLayout;
    use crate::traffic::BufferState;
    use rand_distr::{Distribution, StandardNormal};

    fn cell(k: usize, n_r: usize, n_t: usize) -> Cell {
        let params = ChannelParams::default();
        let phy = PhyParams::new(k, params.tx_power(), params.noise_power(256));
        Cell::new(RuLayout::twenty_mhz(), k, n_r, n_t, phy).unwrap()
    }

    fn world(c: &Cell, buffers: Vec<u64>, seed: u64) -> WorldState {
        let model = ChannelModel::new(ChannelParams::default(), 256);
        let d: Vec<f64> = (0..c.stations).map(|k| 20.0 + 10.0 * k as f64).collect();
        WorldState {
            csi: model.sample(&d, c.n_r, c.n_t, &mut seeded(seed)),
            buffers: BufferState::new(buffers, None),
        }
    }

    fn randn(n: usize, rng: &mut crate::rng::SimRng) -> Vec<C64> {
        (0..n)
            .map(|_| C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng)))
            .collect()
    }

    #[test]
    fn sus_single_pick_is_strongest() {
        let mut rng = seeded(1);
        let mut ch: Vec<Vec<C64>> = (0..5).map(|_| randn(4, &mut rng)).collect();
        ch[3].iter_mut().for_each(|x| *x *= 10.0);
        assert_eq!(
            sus_select(&ch, 4, &[0, 1, 2, 3, 4], 1, &SusParams::default()),
            vec![3]
        );
        assert_eq!(
            sus_select(&ch, 4, &[0, 1, 2, 4], 1, &SusParams::default()).len(),
            1
        );
    }

    #[test]
    fn sus_rejects_identical_channels() {
        let mut rng = seeded(2);
        let h = randn(4, &mut rng);
        let ch = vec![h.clone(), h];
        assert_eq!(
            sus_select(&ch, 4, &[0, 1], 2, &SusParams::default()).len(),
            1
        );
    }

    #[test]
    fn sus_selection_is_semi_orthogonal() {
        let params = SusParams::default();
        let mut rng = seeded(3);
        for _ in 0..200 {
            let ch: Vec<Vec<C64>> = (0..6).map(|_| randn(8, &mut rng)).collect();
            let sel = sus_select(&ch, 8, &[0, 1, 2, 3, 4, 5], 4, &params);
            assert!(!sel.is_empty() && sel.len() <= 4);
            for (i, &a) in sel.iter().enumerate() {
                for &b in &sel[i + 1..] {
                    let c = linalg::inner(&ch[a], &ch[b]).norm()
                        / (linalg::norm(&ch[a]) * linalg::norm(&ch[b]));
                    assert!(c < params.alpha, "{c}");
                }
            }
        }
    }

    #[test]
    fn fixed_level_examples() {
        assert_eq!(fixed_ra_level(20, 8, 2, 3).unwrap(), 1);
        assert_eq!(fixed_ra_level(1, 1, 1, 3).unwrap(), 0);
        assert_eq!(fixed_ra_level(2, 2, 1, 3).unwrap(), 1);
        assert_eq!(fixed_ra_level(3, 3, 2, 3).unwrap(), 1);
        assert!(fixed_ra_level(0, 1, 1, 3).is_err());
    }

    #[test]
    fn single_station_takes_full_band() {
        let c = cell(1, 2, 1);
        let state = world(&c, vec![10], 4);
        let (x, g) = sinr_sched_searched_ra_with(&c, &state, &SusParams::default()).unwrap();
        assert_eq!(c.goals.get(g).unwrap(), &[RuId::new(0, 0)]);
        assert!(x.is_assigned(&c.layout, RuId::new(0, 0), 0));
    }

    #[test]
    fn searched_ra_ignores_buffers() {
        let c = cell(4, 4, 1);
        let full = world(&c, vec![100; 4], 5);
        let empty = WorldState {
            buffers: BufferState::empty(4, None),
            ..full.clone()
        };
        assert_eq!(
            sinr_sched_searched_ra(&c, &full).unwrap(),
            sinr_sched_searched_ra(&c, &empty).unwrap()
        );
    }

    #[test]
    fn searched_ra_beats_every_fixed_goal() {
        let c = cell(4, 2, 1);
        let params = SusParams::default();
        for seed in 0..5 {
            let state = world(&c, vec![10; 4], seed);
            let (x, _) = sinr_sched_searched_ra_with(&c, &state, &params).unwrap();
            let best = saturated_score(&c, &state, &x);
            for rus in c.goals.iter() {
                let y = sus_fill(&c, &state, rus, &params).unwrap();
                assert!(best >= saturated_score(&c, &state, &y));
            }
            assert!(c.validate(&x).is_valid());
        }
    }

    #[test]
    fn buffer_heuristic_examples() {
        let c = cell(4, 2, 1);
        let equal = world(&c, vec![3; 4], 6);
        let x = buffer_sched_fixed_ra(&c, &equal, BufferOrder::Ascending).unwrap();
        // Level 1: RU(1,0) gets STAs 0 and 2, RU(1,1) gets 1 and 3.
        assert!(x.is_assigned(&c.layout, RuId::new(1, 0), 0));
        assert!(x.is_assigned(&c.layout, RuId::new(1, 1), 1));
        assert!(x.is_assigned(&c.layout, RuId::new(1, 0), 2));
        assert!(x.is_assigned(&c.layout, RuId::new(1, 1), 3));

        let one = world(&c, vec![0, 1, 0, 0], 6);
        let x = buffer_sched_fixed_ra(&c, &one, BufferOrder::Ascending).unwrap();
        assert_eq!(x.scheduled_count(), 1);
        assert!(x.is_assigned(&c.layout, RuId::new(1, 0), 1));

        let c8 = cell(8, 8, 2);
        let s8 = world(&c8, vec![5, 1, 7, 2, 9, 3, 4, 8], 7);
        let x = buffer_sched_fixed_ra(&c8, &s8, BufferOrder::Ascending).unwrap();
        assert_eq!(
            x.stations_on_slot(c8.layout.slot(RuId::new(1, 0)).unwrap())
                .len(),
            4
        );
        assert_eq!(
            x.stations_on_slot(c8.layout.slot(RuId::new(1, 1)).unwrap())
                .len(),
            4
        );
        assert!(c8.validate(&x).is_valid());
        // Ascending: STA 1 (b = 1) first, onto RU(1,0); STA 3 (b = 2) onto RU(1,1).
        assert!(x.is_assigned(&c8.layout, RuId::new(1, 0), 1));
        assert!(x.is_assigned(&c8.layout, RuId::new(1, 1), 3));
        let y = buffer_sched_fixed_ra(&c8, &s8, BufferOrder::Descending).unwrap();
        assert!(y.is_assigned(&c8.layout, RuId::new(1, 0), 4));
    }

    #[test]
    fn limited_capacity_drops_extra_stations() {
        let c = cell(6, 2, 1);
        let s = world(&c, vec![1, 2, 3, 4, 5, 6], 8);
        let x = buffer_sched_fixed_ra(&c, &s, BufferOrder::Ascending).unwrap();
        assert_eq!(x.scheduled_count(), 4);
        assert!(c.validate(&x).is_valid());
    }
}
