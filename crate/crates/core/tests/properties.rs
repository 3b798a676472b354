//! Randomized invariants across the crate.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vredge::catalog::{QualityConfig, Tile, TileGrid};
use vredge::delay::{objective_l, ChannelModel, MeanRateConvention};
use vredge::partition::{surrogate_split, PwlCurve};
use vredge::placement::{mvc_only_fill, place, svc_only_fill, PlacementInstance};
use vredge::quality::{chain_misses, tier_transitions, MovementChain};
use vredge::scheduler::{action_values, exact_whittle, schedule_slot, AgentReport, ToyMdp};
use vredge::sim::SimConfig;
use vredge::stats::spearman;
use vredge::testbed::tiny_placement;

fn grid() -> impl Strategy<Value = TileGrid> {
    (2usize..8, 2usize..10).prop_flat_map(|(r, c)| {
        (Just(r), Just(c), 1..=r, 1..=c).prop_map(|(r, c, fr, fc)| TileGrid::new(r, c, fr, fc).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fov_window_is_inside_the_grid_and_has_fov_size(g in grid(), row in 0usize..8, col in 0usize..10) {
        let center = Tile::new(row % g.rows, col % g.cols);
        let tiles = g.fov_tiles(center);
        prop_assert_eq!(tiles.len(), g.fov_size());
        prop_assert!(tiles.contains(&center));
        for t in &tiles {
            prop_assert!(g.contains(*t));
            prop_assert_eq!(g.footprint_distance(center, *t), 0);
        }
    }

    #[test]
    fn tiles_by_distance_is_a_sorted_permutation(g in grid(), row in 0usize..8, col in 0usize..10) {
        let center = Tile::new(row % g.rows, col % g.cols);
        let order = g.tiles_by_distance(center);
        prop_assert_eq!(order.len(), g.tile_count());
        let d: Vec<usize> = order.iter().map(|t| g.footprint_distance(center, *t)).collect();
        prop_assert!(d.windows(2).all(|w| w[0] <= w[1]));
        let mut idx: Vec<usize> = order.iter().map(|t| g.tile_index(*t)).collect();
        idx.sort();
        prop_assert_eq!(idx, (0..g.tile_count()).collect::<Vec<_>>());
    }

    #[test]
    fn stationary_rates_lie_between_the_state_rates(p in 0.01f64..1.0, q in 0.01f64..1.0, lo in 1.0f64..500.0, gap in 0.0f64..500.0) {
        let ch = ChannelModel { rate_low: lo * 1e6, rate_high: (lo + gap) * 1e6, p_to_high: p, p_to_low: q };
        prop_assert!((ch.pi_high() + ch.pi_low() - 1.0).abs() < 1e-12);
        let m = ch.mean_rate(MeanRateConvention::Stationary);
        prop_assert!(m >= ch.rate_low * (1.0 - 1e-12) && m <= ch.rate_high * (1.0 + 1e-12));
    }

    #[test]
    fn tier_rows_are_distributions(p in 0.0f64..0.25, q in 0.0f64..1.0, max_tier in 0usize..6, state in 0usize..10) {
        let chain = MovementChain::new(p, q, max_tier).unwrap();
        let row = tier_transitions(&chain, state);
        let total: f64 = row.probs.iter().map(|x| x.1).sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "{:?}", row);
        prop_assert!(row.probs.iter().all(|x| (0.0..=1.0).contains(&x.1)));
        // the viewpoint moves at most one ring per slot
        prop_assert!(row.probs.iter().all(|x| x.0 <= state + 1 || x.1 == 0.0));
    }

    #[test]
    fn miss_distribution_is_normalized(p in 0.0f64..0.25, q in 0.0f64..1.0, max_tier in 0usize..4, horizon in 1usize..40) {
        let chain = MovementChain::new(p, q, max_tier).unwrap();
        let m = chain_misses(&chain, horizon).unwrap();
        prop_assert!((m.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let mean: f64 = m.distribution.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        prop_assert!((mean - m.mean_misses).abs() < 1e-9);
        prop_assert!(m.mean_misses >= 0.0 && m.mean_misses <= horizon as f64);
    }

    #[test]
    fn a_wider_base_layer_never_misses_more(p in 0.001f64..0.25, q in 0.0f64..1.0, x0 in 35usize..68) {
        let g = TileGrid::equirect_default();
        let narrow = vredge::quality::expected_misses(p, q, x0, &g, 60).unwrap().mean_misses;
        let wide = vredge::quality::expected_misses(p, q, x0 + 1, &g, 60).unwrap().mean_misses;
        prop_assert!(wide <= narrow + 1e-12);
    }

    #[test]
    fn spearman_is_bounded_and_rank_invariant(xs in prop::collection::vec(-100.0f64..100.0, 2..30)) {
        let ys: Vec<f64> = xs.iter().map(|x| x.powi(3) + 5.0).collect();
        let r = spearman(&xs, &ys);
        let distinct = xs.iter().any(|x| *x != xs[0]);
        if distinct {
            prop_assert!((r - 1.0).abs() < 1e-12);
            let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
            prop_assert!((spearman(&xs, &neg) + 1.0).abs() < 1e-12);
        }
        prop_assert!(r.is_nan() || (-1.0..=1.0).contains(&r));
    }

    #[test]
    fn curves_stay_monotone_under_any_probes(probes in prop::collection::vec((0.0f64..10.0, 0.0f64..1.0), 1..20)) {
        let mut c = PwlCurve::default();
        for (x, y) in probes {
            c.refine(x, y);
        }
        let pts = c.points();
        prop_assert!(pts.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.25).collect();
        prop_assert!(xs.windows(2).all(|w| c.eval(w[0]) <= c.eval(w[1])));
    }

    #[test]
    fn surrogate_split_fits_the_budget(
        curves in prop::collection::vec(prop::collection::vec((0.0f64..4.0, 0.0f64..1.0), 1..6), 1..5),
        budget in 0.1f64..4.0,
    ) {
        let curves: Vec<PwlCurve> = curves
            .into_iter()
            .map(|pts| {
                let mut c = PwlCurve::default();
                pts.into_iter().for_each(|(x, y)| c.refine(x, y));
                c
            })
            .collect();
        let split = surrogate_split(&curves, budget, 32);
        prop_assert_eq!(split.len(), curves.len());
        prop_assert!(split.iter().all(|x| *x >= 0.0));
        prop_assert!(split.iter().sum::<f64>() <= budget * (1.0 + 1e-12));
        // never worse than an even split on the same grid
        let even = budget / curves.len() as f64;
        let unit = budget / 32.0;
        let even = (even / unit).floor() * unit;
        let value = |s: &[f64]| s.iter().zip(&curves).map(|(x, c)| c.eval(*x)).sum::<f64>();
        prop_assert!(value(&split) >= value(&vec![even; curves.len()]) - 1e-12);
    }

    #[test]
    fn scheduling_grants_distinct_pending_requests(
        pending in prop::collection::vec(any::<bool>(), 0..12),
        units in 0usize..5,
        epsilon in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let agents: Vec<AgentReport> = pending
            .iter()
            .enumerate()
            .map(|(i, p)| AgentReport { user: i, pending: *p, wi: (i as f64 * 0.37).sin(), deadline: i })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let got = schedule_slot(&agents, units, epsilon, &mut rng);
        let want = units.min(pending.iter().filter(|p| **p).count());
        prop_assert_eq!(got.len(), want);
        let mut seen = got.clone();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), got.len());
        prop_assert!(got.iter().all(|i| agents[*i].pending));
        if epsilon == 0.0 && want > 0 {
            let best = agents.iter().filter(|a| a.pending).map(|a| a.wi).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(agents[got[0]].wi, best);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn whittle_index_makes_both_actions_equal(seed in any::<u64>(), levels in 1usize..4, modes in 1usize..3, delay in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = ToyMdp::random_download(&mut rng, levels, modes, delay).unwrap();
        let idx = exact_whittle(&mdp, 0.9).unwrap();
        for (s, &lambda) in idx.iter().enumerate() {
            let (_, q) = action_values(&mdp, 0.9, lambda, None).unwrap();
            let scale = 1.0 + q[s].0.abs().max(q[s].1.abs());
            prop_assert!((q[s].0 - q[s].1).abs() <= 1e-4 * scale, "state {}: {:?}", s, q[s]);
        }
    }

    #[test]
    fn placement_fits_and_beats_both_single_kind_fills(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = tiny_placement(&mut rng, 9).unwrap();
        let inst = PlacementInstance::new(&t.catalog, t.params, t.channel, t.capacity);
        let r = place(&inst);
        prop_assert!(r.cache.weight(&t.catalog) <= t.capacity * (1.0 + 1e-9));
        let recomputed = objective_l(&t.catalog, &r.cache, &t.params, &t.channel);
        prop_assert!((recomputed - r.objective).abs() < 1e-9);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&r.objective));
        prop_assert!(r.objective >= inst.objective(&mvc_only_fill(&inst)) - 1e-12);
        prop_assert!(r.objective >= inst.objective(&svc_only_fill(&inst)) - 1e-12);
    }

    #[test]
    fn config_text_round_trips(
        users in 1usize..50,
        cap in 1u32..200,
        p in 1u32..100,
        x0 in 35usize..=68,
        hidden in prop::collection::vec(1usize..128, 0..3),
        lr in 1u32..1000,
    ) {
        let mut c = SimConfig { seed: Some(3), users, capacity: cap as f64 * 1e6, ..SimConfig::default() };
        c.channel.p_to_low = p as f64 / 100.0;
        c.catalog.quality = QualityConfig::new(68, x0);
        c.hyper.hidden = hidden;
        c.hyper.lr_q = lr as f64 * 1e-6;
        let back = SimConfig::parse(&c.to_text()).unwrap();
        prop_assert_eq!(back, c);
    }
}
