//! OFDMA resource-unit tree, goal space and allocation validity.
//!
//! A layout is a data table of RUs, each described by its level, index and
//! the signed tone ranges (relative to DC) it occupies. Everything else is
//! derived from that table: the 26-tone unit coverage of every RU, the
//! SU-only levels, and the goal space of maximal disjoint RU combinations.
//! The 20 MHz table is built in; other bandwidths can be loaded from a file
//! with the same schema.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest RU that only permits SU-MIMO.
const SU_ONLY_MAX_TONES: usize = 52;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RuId {
    pub level: usize,
    pub index: usize,
}

impl RuId {
    pub const fn new(level: usize, index: usize) -> Self {
        RuId { level, index }
    }
}

impl fmt::Display for RuId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RU({},{})", self.level, self.index)
    }
}

/// One row of a layout table as it appears on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuEntry {
    pub level: usize,
    pub index: usize,
    /// Inclusive signed tone ranges relative to DC.
    pub tones: Vec<[i32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutTable {
    pub name: String,
    pub fft_size: usize,
    #[serde(rename = "ru")]
    pub rus: Vec<RuEntry>,
}

impl LayoutTable {
    pub fn twenty_mhz() -> Self {
        let e = |level, index, tones: &[[i32; 2]]| RuEntry {
            level,
            index,
            tones: tones.to_vec(),
        };
        let rus = vec![
            e(0, 0, &[[-122, -2], [2, 122]]),
            e(1, 0, &[[-122, -17]]),
            e(1, 1, &[[17, 122]]),
            e(2, 0, &[[-121, -70]]),
            e(2, 1, &[[-68, -17]]),
            e(2, 2, &[[17, 68]]),
            e(2, 3, &[[70, 121]]),
            e(3, 0, &[[-121, -96]]),
            e(3, 1, &[[-95, -70]]),
            e(3, 2, &[[-68, -43]]),
            e(3, 3, &[[-42, -17]]),
            e(3, 4, &[[-16, -4], [4, 16]]),
            e(3, 5, &[[17, 42]]),
            e(3, 6, &[[43, 68]]),
            e(3, 7, &[[70, 95]]),
            e(3, 8, &[[96, 121]]),
        ];
        LayoutTable {
            name: "20MHz".into(),
            fft_size: 256,
            rus,
        }
    }
}

/// A resolved RU: its id, FFT bins, and the 26-tone units it overlaps.
#[derive(Debug, Clone, PartialEq)]
pub struct Ru {
    pub id: RuId,
    pub subcarriers: Vec<usize>,
    pub units: Vec<usize>,
}

impl Ru {
    pub fn tones(&self) -> usize {
        self.subcarriers.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuLayout {
    table: LayoutTable,
    rus: Vec<Ru>,
    /// Slot of each RU, addressed as `level_offsets[level] + index`.
    level_offsets: Vec<usize>,
    level_sizes: Vec<usize>,
    su_only: Vec<bool>,
    unit_count: usize,
}

impl RuLayout {
    pub fn twenty_mhz() -> Self {
        Self::from_table(LayoutTable::twenty_mhz()).expect("built-in layout is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: LayoutTable =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_table(table)
    }

    pub fn from_table(table: LayoutTable) -> Result<Self> {
        if table.rus.is_empty() {
            return Err(Error::invalid("layout has no RUs"));
        }
        let half = (table.fft_size / 2) as i32;
        let levels = table.rus.iter().map(|r| r.level).max().unwrap() + 1;

        let mut level_sizes = vec![0usize; levels];
        for r in &table.rus {
            level_sizes[r.level] = level_sizes[r.level].max(r.index + 1);
        }
        let mut level_offsets = Vec::with_capacity(levels);
        let mut acc = 0;
        for &n in &level_sizes {
            level_offsets.push(acc);
            acc += n;
        }
        if acc != table.rus.len() {
            return Err(Error::invalid("RU indices must be dense within each level"));
        }

        let mut slots: Vec<Option<Ru>> = vec![None; acc];
        for r in &table.rus {
            let mut bins = Vec::new();
            for &[lo, hi] in &r.tones {
                if lo > hi || lo < -half || hi >= half {
                    return Err(Error::invalid(format!(
                        "RU({},{}) has tone range [{lo},{hi}] outside the FFT",
                        r.level, r.index
                    )));
                }
                bins.extend((lo..=hi).map(|t| (t + half) as usize));
            }
            bins.sort_unstable();
            bins.dedup();
            let slot = level_offsets[r.level] + r.index;
            if slots[slot].is_some() {
                return Err(Error::invalid(format!(
                    "duplicate RU({},{})",
                    r.level, r.index
                )));
            }
            slots[slot] = Some(Ru {
                id: RuId::new(r.level, r.index),
                subcarriers: bins,
                units: Vec::new(),
            });
        }
        let mut rus: Vec<Ru> = slots
            .into_iter()
            .map(|s| s.ok_or_else(|| Error::invalid("missing RU in layout")))
            .collect::<Result<_>>()?;

        // Coverage: RU(l,i) covers unit n iff it shares a tone with RU(L,n).
        let top = levels - 1;
        let unit_count = level_sizes[top];
        let unit_bins: Vec<Vec<usize>> = (0..unit_count)
            .map(|n| rus[level_offsets[top] + n].subcarriers.clone())
            .collect();
        for ru in rus.iter_mut() {
            ru.units = (0..unit_count)
                .filter(|&n| {
                    unit_bins[n]
                        .iter()
                        .any(|b| ru.subcarriers.binary_search(b).is_ok())
                })
                .collect();
        }

        for l in 0..levels {
            let range = level_offsets[l]..level_offsets[l] + level_sizes[l];
            for a in range.clone() {
                for b in a + 1..range.end {
                    if rus[a].units.iter().any(|u| rus[b].units.contains(u)) {
                        return Err(Error::invalid(format!(
                            "{} and {} overlap on the same level",
                            rus[a].id, rus[b].id
                        )));
                    }
                }
            }
        }

        let su_only = (0..levels)
            .map(|l| {
                rus[level_offsets[l]..level_offsets[l] + level_sizes[l]]
                    .iter()
                    .all(|r| r.tones() <= SU_ONLY_MAX_TONES)
            })
            .collect();

        Ok(RuLayout {
            table,
            rus,
            level_offsets,
            level_sizes,
            su_only,
            unit_count,
        })
    }

    pub fn table(&self) -> &LayoutTable {
        &self.table
    }

    /// Highest level `L`.
    pub fn top_level(&self) -> usize {
        self.level_sizes.len() - 1
    }

    pub fn level_count(&self) -> usize {
        self.level_sizes.len()
    }

    /// Number of 26-tone units `q`.
    pub fn unit_count(&self) -> usize {
        self.unit_count
    }

    pub fn fft_size(&self) -> usize {
        self.table.fft_size
    }

    pub fn rus(&self) -> &[Ru] {
        &self.rus
    }

    pub fn len(&self) -> usize {
        self.rus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rus.is_empty()
    }

    pub fn level_size(&self, level: usize) -> usize {
        self.level_sizes.get(level).copied().unwrap_or(0)
    }

    pub fn rus_at_level(&self, level: usize) -> &[Ru] {
        let off = self.level_offsets[level];
        &self.rus[off..off + self.level_sizes[level]]
    }

    pub fn slot(&self, id: RuId) -> Result<usize> {
        if id.level < self.level_sizes.len() && id.index < self.level_sizes[id.level] {
            Ok(self.level_offsets[id.level] + id.index)
        } else {
            Err(Error::invalid(format!(
                "{id} is not in layout {}",
                self.table.name
            )))
        }
    }

    pub fn ru(&self, id: RuId) -> Result<&Ru> {
        self.slot(id).map(|s| &self.rus[s])
    }

    pub fn is_su_only(&self, level: usize) -> bool {
        self.su_only.get(level).copied().unwrap_or(true)
    }

    /// Maximum number of co-scheduled STAs on an RU of `level`, `G(l)`.
    pub fn group_limit(&self, level: usize, n_r: usize, n_t: usize) -> Result<usize> {
        if n_t == 0 || n_r < n_t {
            return Err(Error::invalid(format!(
                "antenna counts must satisfy n_r >= n_t >= 1 (got n_r={n_r}, n_t={n_t})"
            )));
        }
        if level >= self.level_count() {
            return Err(Error::invalid(format!("level {level} not in layout")));
        }
        Ok(if self.is_su_only(level) { 1 } else { n_r / n_t })
    }

    pub fn coverage_vector(&self, id: RuId) -> Result<Vec<u8>> {
        let ru = self.ru(id)?;
        let mut v = vec![0u8; self.unit_count];
        for &u in &ru.units {
            v[u] = 1;
        }
        Ok(v)
    }

    /// All maximal disjoint RU covers of the band.
    ///
    /// Goals are ordered by RU count, then lexicographically by their RU ids
    /// listed in spectral order, so `[RU(0,0)]` is always goal 0. Within a
    /// goal the RUs are listed in spectral order.
    pub fn enumerate_goals(&self) -> GoalTable {
        let mut goals = Vec::new();
        let mut covered = vec![false; self.unit_count];
        let mut chosen = Vec::new();
        self.cover_from(&mut covered, &mut chosen, &mut goals);

        for g in goals.iter_mut() {
            g.sort_by_key(|id: &RuId| {
                let ru = &self.rus[self.slot(*id).unwrap()];
                (ru.units[0], id.level)
            });
        }
        goals.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
        goals.dedup();
        GoalTable { goals }
    }

    fn cover_from(&self, covered: &mut [bool], chosen: &mut Vec<RuId>, out: &mut Vec<Vec<RuId>>) {
        let Some(first) = covered.iter().position(|c| !c) else {
            out.push(chosen.clone());
            return;
        };
        for ru in &self.rus {
            if ru.units.is_empty()
                || !ru.units.contains(&first)
                || ru.units.iter().any(|&u| covered[u])
            {
                continue;
            }
            for &u in &ru.units {
                covered[u] = true;
            }
            chosen.push(ru.id);
            self.cover_from(covered, chosen, out);
            chosen.pop();
            for &u in &ru.units {
                covered[u] = false;
            }
        }
    }
}

/// Free-function form of [`RuLayout::coverage_vector`].
pub fn coverage_vector(ru: RuId, layout: &RuLayout) -> Result<Vec<u8>> {
    layout.coverage_vector(ru)
}

/// Free-function form of [`RuLayout::enumerate_goals`].
pub fn enumerate_goals(layout: &RuLayout) -> GoalTable {
    layout.enumerate_goals()
}

/// `G(l)` for the 20 MHz layout.
pub fn mimo_group_limit(level: usize, n_r: usize, n_t: usize) -> Result<usize> {
    static LAYOUT: std::sync::OnceLock<RuLayout> = std::sync::OnceLock::new();
    LAYOUT
        .get_or_init(RuLayout::twenty_mhz)
        .group_limit(level, n_r, n_t)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalTable {
    goals: Vec<Vec<RuId>>,
}

impl GoalTable {
    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&[RuId]> {
        self.goals.get(index).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = &[RuId]> {
        self.goals.iter().map(Vec::as_slice)
    }

    pub fn position(&self, goal: &[RuId]) -> Option<usize> {
        self.goals.iter().position(|g| g.as_slice() == goal)
    }
}

/// On-disk form of a layout together with its goal table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayoutDump {
    pub layout: LayoutTable,
    pub unit_count: usize,
    pub coverage: Vec<CoverageEntry>,
    #[serde(rename = "goal")]
    pub goals: Vec<GoalEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub level: usize,
    pub index: usize,
    pub tones: usize,
    pub units: Vec<usize>,
    pub su_only: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoalEntry {
    pub goal: usize,
    /// `[level, index]` pairs in spectral order.
    pub rus: Vec<[usize; 2]>,
}

impl LayoutDump {
    pub fn new(layout: &RuLayout, goals: &GoalTable) -> Self {
        LayoutDump {
            layout: layout.table().clone(),
            unit_count: layout.unit_count(),
            coverage: layout
                .rus()
                .iter()
                .map(|r| CoverageEntry {
                    level: r.id.level,
                    index: r.id.index,
                    tones: r.tones(),
                    units: r.units.clone(),
                    su_only: layout.is_su_only(r.id.level),
                })
                .collect(),
            goals: goals
                .iter()
                .enumerate()
                .map(|(i, g)| GoalEntry {
                    goal: i,
                    rus: g.iter().map(|r| [r.level, r.index]).collect(),
                })
                .collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("layout dump serializes")
    }
}

/// Binary RU assignment `x[(l,i), k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationCube {
    ru_count: usize,
    stations: usize,
    entries: Vec<bool>,
}

impl AllocationCube {
    pub fn new(layout: &RuLayout, stations: usize) -> Self {
        AllocationCube {
            ru_count: layout.len(),
            stations,
            entries: vec![false; layout.len() * stations],
        }
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn ru_count(&self) -> usize {
        self.ru_count
    }

    pub fn get_slot(&self, slot: usize, k: usize) -> bool {
        self.entries[slot * self.stations + k]
    }

    pub fn set_slot(&mut self, slot: usize, k: usize, value: bool) {
        self.entries[slot * self.stations + k] = value;
    }

    pub fn assign(&mut self, layout: &RuLayout, ru: RuId, k: usize) -> Result<()> {
        if k >= self.stations {
            return Err(Error::invalid(format!("station {k} out of range")));
        }
        let slot = layout.slot(ru)?;
        self.set_slot(slot, k, true);
        Ok(())
    }

    pub fn is_assigned(&self, layout: &RuLayout, ru: RuId, k: usize) -> bool {
        layout
            .slot(ru)
            .map(|s| k < self.stations && self.get_slot(s, k))
            .unwrap_or(false)
    }

    /// Stations on the RU in `slot`, ascending.
    pub fn stations_on_slot(&self, slot: usize) -> Vec<usize> {
        (0..self.stations)
            .filter(|&k| self.get_slot(slot, k))
            .collect()
    }

    /// `(slot, stations)` for every RU with at least one station.
    pub fn used_slots(&self) -> Vec<(usize, Vec<usize>)> {
        (0..self.ru_count)
            .filter_map(|s| {
                let ks = self.stations_on_slot(s);
                (!ks.is_empty()).then_some((s, ks))
            })
            .collect()
    }

    /// Number of scheduled (RU, STA) pairs, `‖X‖_F²`.
    pub fn scheduled_count(&self) -> usize {
        self.entries.iter().filter(|&&x| x).count()
    }

    pub fn is_empty(&self) -> bool {
        self.scheduled_count() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidityReport {
    /// Pairs of used RUs sharing a 26-tone unit.
    pub overlaps: Vec<(RuId, RuId)>,
    /// Stations assigned to more than one RU.
    pub multi_ru: Vec<usize>,
    /// `(ru, stations, limit)` for RUs above their MIMO group limit.
    pub over_limit: Vec<(RuId, usize, usize)>,
    /// Cube shape does not match the layout.
    pub shape_mismatch: bool,
}

impl ValidityReport {
    pub fn no_overlap(&self) -> bool {
        self.overlaps.is_empty()
    }

    pub fn unique_assignment(&self) -> bool {
        self.multi_ru.is_empty()
    }

    pub fn within_group_limit(&self) -> bool {
        self.over_limit.is_empty()
    }

    pub fn is_valid(&self) -> bool {
        !self.shape_mismatch
            && self.no_overlap()
            && self.unique_assignment()
            && self.within_group_limit()
    }
}

pub fn validate_allocation(
    x: &AllocationCube,
    layout: &RuLayout,
    n_r: usize,
    n_t: usize,
) -> ValidityReport {
    let mut report = ValidityReport::default();
    if x.ru_count() != layout.len() {
        report.shape_mismatch = true;
        return report;
    }
    let used = x.used_slots();

    for (a, (sa, _)) in used.iter().enumerate() {
        for (sb, _) in &used[a + 1..] {
            let (ra, rb) = (&layout.rus()[*sa], &layout.rus()[*sb]);
            if ra.units.iter().any(|u| rb.units.contains(u)) {
                report.overlaps.push((ra.id, rb.id));
            }
        }
    }

    for k in 0..x.stations() {
        let n = (0..x.ru_count()).filter(|&s| x.get_slot(s, k)).count();
        if n > 1 {
            report.multi_ru.push(k);
        }
    }

    for (s, ks) in &used {
        let id = layout.rus()[*s].id;
        let limit = layout.group_limit(id.level, n_r, n_t).unwrap_or(0);
        if ks.len() > limit {
            report.over_limit.push((id, ks.len(), limit));
        }
    }
    report
}
