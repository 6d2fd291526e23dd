//! Per-RU user-selection state: each STA's channel with the directions of
//! the already selected STAs removed, tone by tone.

use crate::channel::CsiTensor;
use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::phy::RANK_TOL;
use crate::ru_plan::Ru;

#[derive(Debug, Clone, PartialEq)]
pub struct SubState {
    slot: usize,
    subcarriers: Vec<usize>,
    stations: usize,
    n_r: usize,
    n_t: usize,
    /// `[tone][station]` flattened; each entry a column-major `n_r x n_t` block.
    g: Vec<C64>,
    raw_norm_sqr: Vec<f64>,
    selected: Vec<usize>,
    unavailable: Vec<bool>,
}

impl SubState {
    /// Round-one state: `g = h` for every STA. `unavailable` marks STAs
    /// already placed on another RU this step.
    pub fn new(csi: &CsiTensor, slot: usize, ru: &Ru, unavailable: Vec<bool>) -> Self {
        let (k_count, n_r, n_t) = (csi.stations(), csi.n_r(), csi.n_t());
        assert_eq!(unavailable.len(), k_count, "availability mask length");
        let mut g = Vec::with_capacity(ru.subcarriers.len() * k_count * n_r * n_t);
        let mut raw_norm_sqr = Vec::with_capacity(ru.subcarriers.len() * k_count);
        for &s in &ru.subcarriers {
            for k in 0..k_count {
                let h = csi.matrix(s, k);
                g.extend_from_slice(h.data);
                raw_norm_sqr.push(h.frobenius_sqr());
            }
        }
        SubState {
            slot,
            subcarriers: ru.subcarriers.clone(),
            stations: k_count,
            n_r,
            n_t,
            g,
            raw_norm_sqr,
            selected: Vec::new(),
            unavailable,
        }
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    pub fn stations(&self) -> usize {
        self.stations
    }

    pub fn tones(&self) -> usize {
        self.subcarriers.len()
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn is_selectable(&self, k: usize) -> bool {
        !self.unavailable[k] && !self.selected.contains(&k)
    }

    pub fn is_unavailable(&self, k: usize) -> bool {
        self.unavailable[k]
    }

    fn block(&self) -> usize {
        self.n_r * self.n_t
    }

    /// Current orthogonalized channel of STA `k` on tone `tone` (column-major).
    pub fn channel(&self, tone: usize, k: usize) -> &[C64] {
        let b = self.block();
        let at = (tone * self.stations + k) * b;
        &self.g[at..at + b]
    }

    /// `‖g‖²_F` of STA `k` averaged over the RU's tones.
    pub fn mean_gain(&self, k: usize) -> f64 {
        let n = self.tones();
        (0..n)
            .map(|t| linalg::norm_sqr(self.channel(t, k)))
            .sum::<f64>()
            / n.max(1) as f64
    }

    /// Removes the span of STA `chosen`'s current channel from every STA's
    /// channel on each tone and records the selection.
    pub fn gram_schmidt_update(&mut self, chosen: usize) -> Result<()> {
        if chosen >= self.stations {
            return Err(Error::invalid(format!("station {chosen} out of range")));
        }
        if !self.is_selectable(chosen) {
            return Err(Error::invalid(format!(
                "station {chosen} is not selectable"
            )));
        }
        let tol = RANK_TOL * RANK_TOL;
        let live = (0..self.tones()).any(|t| {
            let i = t * self.stations + chosen;
            linalg::norm_sqr(self.channel(t, chosen)) > tol * self.raw_norm_sqr[i]
        });
        if !live {
            return Err(Error::DegenerateSelection);
        }
        let (b, n_r) = (self.block(), self.n_r);
        for t in 0..self.tones() {
            let i = t * self.stations + chosen;
            let reference = self.raw_norm_sqr[i];
            // Orthonormal basis for the chosen STA's current column space.
            let mut basis: Vec<Vec<C64>> = Vec::with_capacity(self.n_t);
            let tilde = self.channel(t, chosen).to_vec();
            for col in tilde.chunks(n_r) {
                let mut v = col.to_vec();
                linalg::project_out(&mut v, &basis);
                let n2 = linalg::norm_sqr(&v);
                if n2 > tol * reference && n2 > 0.0 {
                    let n = n2.sqrt();
                    v.iter_mut().for_each(|x| *x /= n);
                    basis.push(v);
                }
            }
            if basis.is_empty() {
                continue;
            }
            for k in 0..self.stations {
                let at = (t * self.stations + k) * b;
                for col in self.g[at..at + b].chunks_mut(n_r) {
                    linalg::project_out(col, &basis);
                }
            }
        }
        self.selected.push(chosen);
        Ok(())
    }
}

/// Free-function form of [`SubState::gram_schmidt_update`].
pub fn gram_schmidt_update(mut state: SubState, chosen: usize) -> Result<SubState> {
    state.gram_schmidt_update(chosen)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{ChannelModel, ChannelParams};
    use crate::rng::seeded;
    use crate::ru_plan::{RuId, RuLayout};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn flat_csi(chans: &[Vec<C64>], n_r: usize) -> CsiTensor {
        let mut csi = CsiTensor::zeros(256, chans.len(), n_r, 1);
        for s in 0..256 {
            for (k, h) in chans.iter().enumerate() {
                for (r, &v) in h.iter().enumerate() {
                    csi.set(s, k, r, 0, v);
                }
            }
        }
        csi
    }

    #[test]
    fn round_one_is_raw_channel() {
        let layout = RuLayout::twenty_mhz();
        let model = ChannelModel::new(ChannelParams::default(), 256);
        let csi = model.sample(&[30.0, 50.0, 80.0], 4, 2, &mut seeded(5));
        let id = RuId::new(2, 1);
        let ru = layout.ru(id).unwrap();
        let st = SubState::new(&csi, layout.slot(id).unwrap(), ru, vec![false; 3]);
        for (t, &s) in ru.subcarriers.iter().enumerate() {
            for k in 0..3 {
                assert_eq!(st.channel(t, k), csi.matrix(s, k).data);
            }
        }
    }

    #[test]
    fn projection_example() {
        let layout = RuLayout::twenty_mhz();
        let e1 = vec![c(1.0, 0.0), c(0.0, 0.0)];
        let e12 = vec![c(1.0, 0.0), c(1.0, 0.0)];
        let csi = flat_csi(&[e1, e12], 2);
        let ru = layout.ru(RuId::new(0, 0)).unwrap();
        let mut st = SubState::new(&csi, 0, ru, vec![false; 2]);
        st.gram_schmidt_update(0).unwrap();
        for t in 0..st.tones() {
            let g = st.channel(t, 1);
            assert!((g[0] - c(0.0, 0.0)).norm() < 1e-15);
            assert!((g[1] - c(1.0, 0.0)).norm() < 1e-15);
        }
        assert_eq!(st.selected(), &[0]);
        assert!(!st.is_selectable(0));
    }

    #[test]
    fn complex_projection_uses_the_right_coefficient() {
        let layout = RuLayout::twenty_mhz();
        let a = vec![c(0.0, 1.0), c(1.0, 0.0)];
        let b = vec![c(2.0, -1.0), c(0.5, 3.0)];
        let csi = flat_csi(&[a.clone(), b.clone()], 2);
        let ru = layout.ru(RuId::new(3, 0)).unwrap();
        let mut st = SubState::new(&csi, 0, ru, vec![false; 2]);
        st.gram_schmidt_update(0).unwrap();
        let g = st.channel(0, 1);
        let coeff = linalg::inner(&a, &b) / linalg::norm_sqr(&a);
        for r in 0..2 {
            assert!((g[r] - (b[r] - coeff * a[r])).norm() < 1e-12);
        }
        assert!(linalg::inner(&a, g).norm() < 1e-12);
    }

    #[test]
    fn zero_channel_is_degenerate() {
        let layout = RuLayout::twenty_mhz();
        let csi = flat_csi(
            &[
                vec![c(1.0, 0.0), c(0.0, 0.0)],
                vec![c(2.0, 0.0), c(0.0, 0.0)],
            ],
            2,
        );
        let ru = layout.ru(RuId::new(1, 0)).unwrap();
        let mut st = SubState::new(&csi, 1, ru, vec![false; 2]);
        st.gram_schmidt_update(0).unwrap();
        assert!(matches!(
            st.gram_schmidt_update(1),
            Err(Error::DegenerateSelection)
        ));
        assert_eq!(st.selected(), &[0]);
    }

    #[test]
    fn unavailable_stations_are_rejected() {
        let layout = RuLayout::twenty_mhz();
        let csi = flat_csi(&[vec![c(1.0, 0.0)], vec![c(1.0, 0.0)]], 1);
        let ru = layout.ru(RuId::new(3, 4)).unwrap();
        let mut st = SubState::new(&csi, 0, ru, vec![true, false]);
        assert!(matches!(
            st.gram_schmidt_update(0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(st.gram_schmidt_update(1).is_ok());
    }
}
