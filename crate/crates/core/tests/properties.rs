//! Property tests over the model invariants.

use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use axsched::baselines::{BufferFixed, BufferOrder, SinrFixed, SinrSearched};
use axsched::linalg::{extend_basis, inner, norm, MatRef, C64};
use axsched::phy::{packets_for_rate, zf_beamformers, PhyParams, StepOutcome};
use axsched::rng::{seeded, SimRng};
use axsched::ru_plan::{AllocationCube, RuLayout};
use axsched::sim::ScenarioConfig;
use axsched::traffic::BufferState;
use axsched::world::{Cell, Environment, Scheduler};

fn gaussian(rng: &mut SimRng) -> C64 {
    C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
}

fn cell(stations: usize, n_r: usize, n_t: usize) -> (Cell, ScenarioConfig) {
    let mut c = ScenarioConfig::default();
    c.cell.stations = stations;
    c.cell.rx_antennas = n_r;
    c.cell.tx_antennas = n_t;
    (c.cell().unwrap(), c)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn goals_tile_the_band_exactly_once(idx in 0usize..26) {
        let layout = RuLayout::twenty_mhz();
        let goals = layout.enumerate_goals();
        let goal = goals.get(idx).unwrap();
        let mut cover = vec![0u8; layout.unit_count()];
        for &id in goal {
            for (c, v) in cover.iter_mut().zip(layout.coverage_vector(id).unwrap()) {
                *c += v;
            }
        }
        prop_assert!(cover.iter().all(|&c| c == 1));
    }

    #[test]
    fn packet_count_is_the_largest_fitting(rate in 1e4f64..1e9, buffer in 0u64..5000) {
        let phy = PhyParams::new(1, 0.03, 1e-12);
        let p = packets_for_rate(rate, buffer, &phy);
        let fits = |p: u64| phy.packet_bits * p as f64 / rate <= phy.ppdu_max_s;
        prop_assert!(p <= buffer);
        prop_assert!(fits(p));
        prop_assert!(p == buffer || !fits(p + 1));
        prop_assert!(packets_for_rate(rate, buffer + 1, &phy) >= p);
    }

    #[test]
    fn delivered_bits_match_rate_times_airtime(
        rates in prop::collection::vec(prop_oneof![Just(0.0), 1e5f64..5e8], 1..8),
        seed in any::<u64>(),
    ) {
        let mut rng = seeded(seed);
        let buffers: Vec<u64> = rates.iter().map(|_| rng.random_range(0..80)).collect();
        let phy = PhyParams::new(rates.len(), 0.03, 1e-12);
        let out = StepOutcome::from_rates(rates, &buffers, &phy);
        let bits = phy.packet_bits * out.packets.iter().sum::<u64>() as f64;
        let lhs = out.throughput.total * out.throughput.airtime;
        prop_assert!((lhs - bits).abs() <= 1e-9 * bits.max(1.0));
        prop_assert!(out.throughput.airtime <= phy.ppdu_max_s + phy.max_overhead() + 1e-15);
    }

    #[test]
    fn zero_forcing_cancels_co_scheduled_streams(
        seed in any::<u64>(),
        n_t in 1usize..=2,
        streams in 1usize..=4,
    ) {
        let mut rng = seeded(seed);
        let data: Vec<Vec<C64>> = (0..streams)
            .map(|_| (0..8 * n_t).map(|_| gaussian(&mut rng)).collect())
            .collect();
        let mats: Vec<MatRef> = data.iter().map(|d| MatRef::new(8, n_t, d)).collect();
        let w = zf_beamformers(&mats).unwrap();
        for (k, wk) in w.iter().enumerate() {
            for (_, hm) in mats.iter().enumerate().filter(|(m, _)| *m != k) {
                for col in hm.columns() {
                    prop_assert!(inner(wk, col).norm() < 1e-9 * norm(wk) * norm(col));
                }
            }
        }
    }

    #[test]
    fn extended_basis_is_orthonormal(seed in any::<u64>(), dim in 2usize..9) {
        let mut rng = seeded(seed);
        let cols: Vec<Vec<C64>> = (0..dim)
            .map(|_| (0..dim).map(|_| gaussian(&mut rng)).collect())
            .collect();
        let mut basis = Vec::new();
        prop_assert!(extend_basis(&mut basis, cols.iter().map(|c| c.as_slice()), 1e-12));
        for (i, a) in basis.iter().enumerate() {
            for (j, b) in basis.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((inner(a, b) - C64::new(want, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn buffers_conserve_packets(
        start in prop::collection::vec(0u64..100, 1..10),
        seed in any::<u64>(),
        cap in prop::option::of(50u64..200),
    ) {
        let mut rng = seeded(seed);
        let mut b = BufferState::new(start, cap);
        let before = b.total();
        let added = b.arrivals(2000.0, 0.004, &mut rng);
        prop_assert_eq!(b.total(), before + added);
        if let Some(c) = cap {
            prop_assert!(b.packets().iter().all(|&p| p <= c));
        }
        let sent: Vec<u64> = b.packets().iter().map(|&p| rng.random_range(0..=p)).collect();
        let total = b.total();
        b.depart(&sent).unwrap();
        prop_assert_eq!(b.total(), total - sent.iter().sum::<u64>());
        let too_many: Vec<u64> = b.packets().iter().map(|&p| p + 1).collect();
        prop_assert!(b.depart(&too_many).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn baselines_emit_valid_allocations(
        seed in any::<u64>(),
        stations in 2usize..8,
        n_t in 1usize..=2,
    ) {
        let (cell, cfg) = cell(stations, 4, n_t);
        let mut schedulers: Vec<Box<dyn Scheduler>> = vec![
            Box::new(SinrSearched::default()),
            Box::new(SinrFixed::default()),
            Box::new(BufferFixed::default()),
            Box::new(BufferFixed { order: BufferOrder::Descending }),
        ];
        for s in schedulers.iter_mut() {
            let mut env = Environment::new(
                cell.clone(),
                cfg.channel.clone(),
                cfg.traffic.clone(),
                seed,
                0,
            );
            env.reset();
            for _ in 0..4 {
                if env.is_terminal() {
                    break;
                }
                let x: AllocationCube = s.schedule(&cell, env.state()).unwrap();
                prop_assert!(cell.validate(&x).is_valid());
                let before = env.state().buffers.total();
                let out = cell.evaluate(env.state(), &x);
                env.apply(&x).unwrap();
                let sent: u64 = out.packets.iter().sum();
                prop_assert!(sent <= before);
            }
        }
    }
}
