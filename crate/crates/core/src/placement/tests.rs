use super::*;
use crate::catalog::{QualityConfig, Tile, TileGrid, Viewpoint, KBIT};
use crate::testbed::tiny_placement;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn svc(row: usize, col: usize, segment: usize) -> SvcId {
    SvcId { center: Tile::new(row, col), segment }
}

/// 1 x n grid, 1x1 FoV, one MVC per SVC, explicit sizes and popularity.
fn line_catalog(sizes: &[f64], pop: &[f64]) -> Catalog {
    let grid = TileGrid::new(1, sizes.len(), 1, 1).unwrap();
    let mvc: Vec<f64> = sizes.iter().flat_map(|s| [*s, *s]).collect();
    Catalog::new(grid, 1, QualityConfig::new(1, 1), 1.3, mvc, pop.to_vec()).unwrap()
}

fn fast_params() -> DelayParams {
    DelayParams { chi: 1e-8, ..Default::default() }
}

#[test]
fn zero_capacity_places_nothing() {
    let cat = line_catalog(&[30e3, 30e3, 30e3], &[0.5, 0.3, 0.2]);
    let inst = PlacementInstance::new(&cat, fast_params(), ChannelModel::default(), 0.0);
    assert!(greedy_mvc_fill(&inst).is_empty());
    assert!(svc_only_fill(&inst).is_empty());
    let r = place(&inst);
    assert!(r.cache.is_empty());
    assert_eq!(r.objective, 0.0);
    let b = brute_force_optimal(&inst, 14, BruteForceMode::GroupUnions).unwrap();
    assert_eq!(b.objective, 0.0);
}

#[test]
fn one_group_fits_picks_most_popular() {
    let cat = line_catalog(&[30e3, 30e3, 30e3], &[0.2, 0.5, 0.3]);
    let inst = PlacementInstance::new(&cat, fast_params(), ChannelModel::default(), 35e3);
    let m = greedy_mvc_fill(&inst);
    assert_eq!(m.len(), 1);
    assert_eq!(m.iter().next().unwrap().tile, Tile::new(0, 1));
}

#[test]
fn ties_go_to_smaller_svc_id() {
    let cat = line_catalog(&[30e3, 30e3], &[0.5, 0.5]);
    let inst = PlacementInstance::new(&cat, fast_params(), ChannelModel::default(), 31e3);
    let m = greedy_mvc_fill(&inst);
    assert_eq!(m.iter().next().unwrap().tile, Tile::new(0, 0));
    let inst = inst.with_capacity(40e3);
    let s = svc_only_fill(&inst);
    assert_eq!(s.svcs.iter().next(), Some(&svc(0, 0, 0)));
}

#[test]
fn swap_to_svc_when_stitching_misses_deadline() {
    // stitching alone takes 0.3 s, an SVC is delivered in well under a millisecond
    let cat = line_catalog(&[30e3, 30e3], &[0.6, 0.4]);
    let params = DelayParams { chi: 1e-5, ..Default::default() };
    let inst = PlacementInstance::new(&cat, params, ChannelModel::default(), 80e3);
    let m = greedy_mvc_fill(&inst);
    // no group meets the deadline, so the group fill has nothing to gain
    assert!(m.is_empty());
    let r = replace_with_svcs(&inst, &m);
    assert_eq!(r.cache.svcs.len(), 2);
    assert!((r.objective - 1.0).abs() < 1e-12);
}

#[test]
fn no_beneficial_swap_keeps_input() {
    let cat = line_catalog(&[30e3, 30e3], &[0.6, 0.4]);
    let inst = PlacementInstance::new(&cat, fast_params(), ChannelModel::default(), 60e3);
    let m = greedy_mvc_fill(&inst);
    assert_eq!(m.len(), 2);
    let r = replace_with_svcs(&inst, &m);
    assert_eq!(r.cache.mvcs, m);
    assert!(r.cache.svcs.is_empty());
    assert!(r.phase_trace.is_empty());
}

#[test]
fn mixed_caching_can_win() {
    // groups meet the deadline and are cheaper: four groups fit where only three SVCs would
    let cat = line_catalog(&[30e3; 4], &[0.25; 4]);
    let inst = PlacementInstance::new(&cat, fast_params(), ChannelModel::default(), 125e3);
    let r = place(&inst);
    assert!((r.objective - 1.0).abs() < 1e-12);
    assert_eq!(r.cache.mvcs.len(), 4);
    let s = svc_only_fill(&inst);
    assert!(inst.objective(&s) < 0.8);
}

#[test]
fn hand_checked_three_svcs() {
    // sizes 10, 20, 30 Kbit; SVC weights 13, 26, 39; group route meets the deadline
    // only for the 10 Kbit chunk (chi = 5e-6 s/bit: 50 ms vs 100 ms and 150 ms).
    let cat = line_catalog(&[10e3, 20e3, 30e3], &[0.2, 0.3, 0.5]);
    let params = DelayParams { chi: 5e-6, ..Default::default() };
    let inst = PlacementInstance::new(&cat, params, ChannelModel::default(), 50e3);
    // options within 50 Kbit: {g0, s2} = 10 + 39 = 49 -> 0.7; {s0, s1} = 39 -> 0.5;
    // {s1, g0} = 36 -> 0.5; {s2} alone -> 0.5; best is 0.7
    let b = brute_force_optimal(&inst, 14, BruteForceMode::GroupUnions).unwrap();
    assert!((b.objective - 0.7).abs() < 1e-12);
    assert!(b.cache.svcs.contains(&svc(0, 2, 0)));
    let any = brute_force_optimal(&inst, 14, BruteForceMode::AnyMvcs).unwrap();
    assert!((any.objective - 0.7).abs() < 1e-12);
    assert!(place(&inst).objective <= b.objective + 1e-12);
}

#[test]
fn brute_force_rejects_large_universe() {
    let cat = line_catalog(&[30e3; 6], &[1.0 / 6.0; 6]);
    let inst = PlacementInstance::new(&cat, fast_params(), ChannelModel::default(), 1e6);
    assert!(matches!(
        brute_force_optimal(&inst, 5, BruteForceMode::GroupUnions),
        Err(crate::Error::UniverseTooLarge { size: 6, limit: 5 })
    ));
}

#[test]
fn marginal_index_of_subset_is_zero() {
    let cat = line_catalog(&[30e3, 30e3], &[0.6, 0.4]);
    let mut f = CacheSolution::empty(1e9);
    f.svcs.insert(svc(0, 0, 0));
    let c = f.clone();
    let p = fast_params();
    let ch = ChannelModel::default();
    assert_eq!(marginal_index(&cat, &c, &f, &p, &ch), 0.0);
    let mut g = CacheSolution::empty(1e9);
    g.svcs.insert(svc(0, 1, 0));
    assert!((marginal_index(&cat, &g, &f, &p, &ch) - 0.4).abs() < 1e-12);
}

#[test]
fn overlapping_render_sets_break_supermodularity() {
    // 1 x 5 grid, x0 = 2: groups {1, 0} and {2, 1} both render viewpoint 1
    let grid = TileGrid::new(1, 5, 1, 1).unwrap();
    let cat = Catalog::new(grid, 1, QualityConfig::new(2, 2), 1.0, vec![10e3; 10], vec![0.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
    let p = fast_params();
    let ch = ChannelModel::default();
    let l = |ms: &[MvcId]| {
        let mut c = CacheSolution::empty(1e9);
        c.mvcs.extend(ms.iter().copied());
        objective_l(&cat, &c, &p, &ch)
    };
    let g0 = cat.members(svc(0, 1, 0));
    let g1 = cat.members(svc(0, 2, 0));
    assert!(cat.renders(svc(0, 1, 0), Viewpoint::new(0, 1, 0)));
    assert!(cat.renders(svc(0, 2, 0), Viewpoint::new(0, 1, 0)));
    let shared: Vec<MvcId> = g0.iter().filter(|t| g1.contains(t)).copied().collect();
    let only0: Vec<MvcId> = g0.iter().filter(|t| !g1.contains(t)).copied().collect();
    let only1: Vec<MvcId> = g1.iter().filter(|t| !g0.contains(t)).copied().collect();
    assert_eq!((only0.len(), only1.len()), (1, 1));
    let t = only0[0];
    let small = shared.clone();
    let mut big = shared;
    big.extend(only1);
    let with = |base: &[MvcId]| {
        let mut v = base.to_vec();
        v.push(t);
        v
    };
    let gain_small = l(&with(&small)) - l(&small);
    let gain_big = l(&with(&big)) - l(&big);
    assert!(gain_small > gain_big);
}

#[test]
fn place_matches_reference_and_dominates_benchmarks() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..40 {
        let t = tiny_placement(&mut rng, 12).unwrap();
        let inst = PlacementInstance::new(&t.catalog, t.params, t.channel, t.capacity);
        let r = place(&inst);
        assert!((r.objective - inst.objective(&r.cache)).abs() < 1e-12);
        assert!(r.cache.fits(&t.catalog));
        for e in &r.phase_trace {
            assert!(e.weight <= t.capacity + CAP_TOL);
        }
        let mvc = inst.objective(&mvc_only_fill(&inst));
        let s = inst.objective(&svc_only_fill(&inst));
        assert!(r.objective >= mvc.max(s) - 1e-12);
        let b = brute_force_optimal(&inst, 14, BruteForceMode::GroupUnions).unwrap();
        assert!(b.objective >= r.objective - 1e-12);
        assert!((b.objective - inst.objective(&b.cache)).abs() < 1e-12);
        let ss = cache_size_search(&inst, &default_omegas());
        assert!((ss.profile[0].1 - mvc).abs() < 1e-12);
        assert!((ss.profile[10].1 - s).abs() < 1e-12);
    }
}

#[test]
fn group_unions_agree_with_free_mvc_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 10 {
        let t = tiny_placement(&mut rng, 6).unwrap();
        let inst = PlacementInstance::new(&t.catalog, t.params, t.channel, t.capacity);
        let Ok(any) = brute_force_optimal(&inst, 14, BruteForceMode::AnyMvcs) else {
            continue;
        };
        let groups = brute_force_optimal(&inst, 14, BruteForceMode::GroupUnions).unwrap();
        assert!((any.objective - groups.objective).abs() < 1e-12);
        checked += 1;
    }
}

#[test]
fn replace_objective_never_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..30 {
        let t = tiny_placement(&mut rng, 12).unwrap();
        let inst = PlacementInstance::new(&t.catalog, t.params, t.channel, t.capacity);
        let m = greedy_mvc_fill(&inst);
        let mut start = CacheSolution::empty(t.capacity);
        start.mvcs = m.clone();
        let base = inst.objective(&start);
        let r = replace_with_svcs(&inst, &m);
        assert!(r.objective >= base - 1e-12);
        for e in &r.phase_trace {
            assert!(e.delta >= -1e-12);
        }
    }
}

#[test]
fn svc_size_in_kbit_units() {
    let cat = line_catalog(&[30.0 * KBIT], &[1.0]);
    assert!((cat.svc_size(svc(0, 0, 0)) - 39.0 * KBIT).abs() < 1e-9);
}
