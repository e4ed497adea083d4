use proptest::prelude::*;
use proteus::design::{PenaltyGrid, SearchSpace};
use proteus::link::{self, LinkConfig, LinkModels, SensitivityModel};
use proteus::lossmap::{self, path_insertion_loss, Composition, LossParams, PathProfile};
use proteus::metrics::{power_breakdown, LaserModel, OverheadModel};
use proteus::rules::{decode_entry, encode_entry, RuleEntry, SwitchVector, Q_CODES};
use proteus::sim::{self, Network, Policy, SystemConfig};
use proteus::traffic::{generate, SystemDims, TrafficKind, TrafficSpec};
use std::sync::OnceLock;

fn grid() -> &'static PenaltyGrid {
    static GRID: OnceLock<PenaltyGrid> = OnceLock::new();
    GRID.get_or_init(|| PenaltyGrid::new(&SearchSpace::default(), &LinkConfig::default(), &LinkModels::default()).unwrap())
}

fn network() -> &'static Network {
    static NET: OnceLock<Network> = OnceLock::new();
    NET.get_or_init(|| {
        Network::from_layout(&lossmap::ChipLayout::calibrated(32), &LossParams::default(), Composition::PropagationOnly).unwrap()
    })
}

fn profile() -> impl Strategy<Value = PathProfile> {
    (0.0..30.0f64, 0u32..40, 0u32..4, 0u32..3).prop_map(|(length_cm, n_bends, n_splitters, n_couplers)| PathProfile {
        length_cm,
        n_bends,
        n_splitters,
        n_couplers,
    })
}

proptest! {
    #[test]
    fn crosstalk_ratio_is_a_fraction(q in 1000.0..20_000.0f64, br in 1.0..40.0f64, df in -500.0..500.0f64) {
        let g = link::crosstalk_ratio(q, br, df, 193.4);
        prop_assert!((0.0..=1.0).contains(&g), "{g}");
    }

    #[test]
    fn margin_strictly_decreases_with_loss(p in -5.0..20.0f64, il in 0.0..15.0f64, d in 0.01..5.0f64,
                                           qi in 0usize..29, bi in 0usize..4) {
        let g = grid();
        if let (Some(a), Some(b)) = (g.margin(p, il, bi, qi), g.margin(p, il + d, bi, qi)) {
            prop_assert!(b < a);
            prop_assert!((a - b - d).abs() < 1e-9);
        }
    }

    #[test]
    fn feasibility_closure(p in 5.0..20.0f64, il in 0.0..12.0f64, lower in 0.0..1.0f64) {
        let g = grid();
        if let Some((q, br, _)) = g.optimal_duplet(il, p) {
            let space = g.space();
            let (qi, bi) = (space.q_index(q).unwrap(), space.br_index(br).unwrap());
            prop_assert!(g.margin(p, il * lower, bi, qi).unwrap() >= 0.0);
            // The selection at a lower loss is at least as fast.
            let (_, br_low, _) = g.optimal_duplet(il * lower, p).unwrap();
            prop_assert!(br_low >= br);
        }
    }

    #[test]
    fn selected_duplet_is_feasible(p in 5.0..20.0f64, il in 0.0..12.0f64) {
        if let Some((q, br, e)) = grid().optimal_duplet(il, p) {
            prop_assert!(e >= 0.0);
            let direct = link::residual_margin(p, il, &LinkConfig::default().with_q_br(q, br), &LinkModels::default()).unwrap();
            prop_assert!((direct - e).abs() < 1e-9);
        }
    }

    #[test]
    fn er_penalty_falls_as_extinction_improves(er in 0.5..30.0f64, d in 0.01..10.0f64) {
        let a = link::er_penalty(er).unwrap();
        let b = link::er_penalty(er + d).unwrap();
        prop_assert!(b < a);
        prop_assert!(b > 0.0);
    }

    #[test]
    fn sensitivity_rises_with_bitrate(br in 1.0..50.0f64, d in 0.1..10.0f64) {
        let m = SensitivityModel::default();
        prop_assert!(link::sensitivity(br + d, &m) > link::sensitivity(br, &m));
    }

    #[test]
    fn total_penalty_is_the_sum(q in 5000.0..12000.0f64, bi in 0usize..4) {
        let br = [10.0, 15.0, 20.0, 25.0][bi];
        let cfg = LinkConfig::default().with_q_br(q, br);
        if let Ok(p) = link::worst_channel_penalty(&cfg, &LinkModels::default()) {
            prop_assert!((p.total_db - (p.er_penalty_db + p.mod_xtalk_db + p.fil_xtalk_db)).abs() < 1e-12);
            prop_assert!(p.fil_xtalk_db >= 0.0);
        }
    }

    #[test]
    fn insertion_loss_is_additive_and_non_negative(a in profile(), b in profile()) {
        let params = LossParams::default();
        for c in [Composition::PropagationOnly, Composition::Full] {
            let (la, lb) = (path_insertion_loss(&a, &params, c), path_insertion_loss(&b, &params, c));
            prop_assert!(la >= 0.0);
            prop_assert!((path_insertion_loss(&(a + b), &params, c) - la - lb).abs() < 1e-9);
        }
    }

    #[test]
    fn quantized_loss_never_understates(il in 0.0..50.0f64) {
        let back = lossmap::dequantize_il(lossmap::quantize_il(il));
        prop_assert!(back >= il - 1e-12);
        prop_assert!(back - il < 0.01 + 1e-9);
    }

    #[test]
    fn rule_word_round_trip(pair_id in 0u8..64, switch in 0usize..4, q_code in 0u8..Q_CODES) {
        let e = RuleEntry { pair_id, switch_vector: SwitchVector::one_hot(switch), q_code, reserved: 0 };
        let w = encode_entry(&e).unwrap();
        prop_assert!(w < 1 << 24);
        prop_assert_eq!(decode_entry(w).unwrap(), e);
    }

    #[test]
    fn decode_never_accepts_garbage_silently(word in 0u32..(1 << 24)) {
        if let Ok(e) = decode_entry(word) {
            prop_assert_eq!(encode_entry(&e).unwrap(), word);
        }
    }

    #[test]
    fn generated_streams_are_sorted_and_reproducible(seed in any::<u64>(), rate in 0.01..0.5f64) {
        let dims = SystemDims { n_cores: 32, cores_per_cluster: 4, clock_ghz: 5.0 };
        let spec = TrafficSpec { kind: TrafficKind::UniformRandom, injection_rate: rate, duration_cycles: 50, seed, ..TrafficSpec::default() };
        let a: Vec<_> = generate(&spec, &dims).unwrap().collect();
        let b: Vec<_> = generate(&spec, &dims).unwrap().collect();
        prop_assert!(a.windows(2).all(|w| w[0].inject_time_ns <= w[1].inject_time_ns));
        prop_assert_eq!(a, b);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulated_records_add_up(seed in any::<u64>(), rate in 0.01..0.3f64, abm in any::<bool>()) {
        let cfg = SystemConfig::default();
        let spec = TrafficSpec { kind: TrafficKind::UniformRandom, injection_rate: rate, duration_cycles: 60, seed, ..TrafficSpec::default() };
        let reqs: Vec<_> = generate(&spec, &cfg.dims()).unwrap().collect();
        let policy = if abm { Policy::Abm } else { Policy::Opa };
        let r = sim::run(&cfg, &policy, network(), &LinkModels::default(), &LinkConfig::default(), reqs.iter().copied()).unwrap();
        prop_assert_eq!(r.totals.delivered + r.totals.in_flight + r.totals.intra_cluster, reqs.len() as u64);
        for rec in &r.records {
            let sum = rec.inject_time_ns + rec.queue_delay_ns + rec.arbitration_delay_ns + rec.adaptation_delay_ns
                + rec.frame_delay_ns + rec.propagation_delay_ns;
            prop_assert!((rec.eject_time_ns - sum).abs() < 1e-6);
            prop_assert!(rec.queue_delay_ns >= 0.0 && rec.arbitration_delay_ns >= 0.0);
        }
        let power = power_breakdown(&r, &LaserModel::default(), &OverheadModel::default()).unwrap();
        prop_assert!(power.electrical_laser_w >= 0.0);
        prop_assert_eq!(power.total_w, power.electrical_laser_w + power.thermal_tuning_w + power.overhead_w);
    }

    #[test]
    fn thermal_term_never_changes_a_power_gap(dist in 0.0..3.0f64, seed in 0u64..1000) {
        let cfg = SystemConfig::default();
        let spec = TrafficSpec { kind: TrafficKind::UniformRandom, injection_rate: 0.05, duration_cycles: 60, seed, ..TrafficSpec::default() };
        let reqs: Vec<_> = generate(&spec, &cfg.dims()).unwrap().collect();
        let run = |p: &Policy<'_>| sim::run(&cfg, p, network(), &LinkModels::default(), &LinkConfig::default(), reqs.iter().copied()).unwrap();
        let (a, b) = (run(&Policy::Opa), run(&Policy::Abm));
        let laser = LaserModel::default();
        let base = OverheadModel::default();
        let moved = OverheadModel { mean_tuning_distance_nm: dist, ..base.clone() };
        let gap = |m: &OverheadModel| power_breakdown(&a, &laser, m).unwrap().total_w - power_breakdown(&b, &laser, m).unwrap().total_w;
        prop_assert!((gap(&base) - gap(&moved)).abs() < 1e-9);
    }
}
