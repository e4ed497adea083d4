use approx::assert_abs_diff_eq;
use proteus::design::{build_static_design, SearchSpace};
use proteus::link::{LinkConfig, LinkModels};
use proteus::lossmap::{ChipLayout, Composition, LossParams};
use proteus::rules::{build_rule_tables, PairIdMap};
use proteus::sim::*;
use proteus::traffic::{generate, FlitRequest, TrafficKind, TrafficSpec};

struct Setup {
    cfg: SystemConfig,
    net: Network,
    rules: ProteusRules,
    models: LinkModels,
    link: LinkConfig,
}

fn setup() -> Setup {
    let cfg = SystemConfig::default();
    let net = Network::from_layout(&ChipLayout::calibrated(32), &LossParams::default(), Composition::PropagationOnly).unwrap();
    let (space, link, models) = (SearchSpace::default(), LinkConfig::default(), LinkModels::default());
    let design = build_static_design(&net.il, &space, &link, &models).unwrap();
    let pair_map = PairIdMap::lexicographic(32);
    let tables = build_rule_tables(&design, &net.il, &pair_map, &space).unwrap();
    Setup { cfg, net, rules: ProteusRules { design, tables, pair_map, space }, models, link }
}

impl Setup {
    fn policy(&self, kind: PolicyKind) -> Policy<'_> {
        match kind {
            PolicyKind::Proteus => Policy::Proteus(&self.rules),
            PolicyKind::Opa => Policy::Opa,
            PolicyKind::Abm => Policy::Abm,
            PolicyKind::StaticBaseline => Policy::StaticBaseline,
        }
    }

    fn run(&self, kind: PolicyKind, reqs: &[FlitRequest]) -> SimReport {
        run(&self.cfg, &self.policy(kind), &self.net, &self.models, &self.link, reqs.iter().copied()).unwrap()
    }

    fn uniform(&self, rate: f64, cycles: u64, seed: u64) -> Vec<FlitRequest> {
        let spec = TrafficSpec {
            kind: TrafficKind::UniformRandom,
            injection_rate: rate,
            duration_cycles: cycles,
            seed,
            ..TrafficSpec::default()
        };
        generate(&spec, &self.cfg.dims()).unwrap().collect()
    }
}

fn req(t: f64, src: u32, dst: u32) -> FlitRequest {
    FlitRequest { inject_time_ns: t, src_core: src, dst_core: dst, size_bits: 512 }
}

#[test]
fn latency_component_examples() {
    let s = setup();
    let (a, f, p) = packet_latency_components(&s.cfg, &Policy::Opa, &s.net, 0, 1).unwrap();
    assert_eq!(a, 0.0);
    assert_abs_diff_eq!(f, 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(p, s.net.path_len_cm[0][1] * 4.2 / 29.9792458, epsilon = 1e-12);
    assert_abs_diff_eq!(s.cfg.propagation_ns(1.74), 0.2438, epsilon = 1e-3);
    let (a, _, _) = packet_latency_components(&s.cfg, &Policy::Proteus(&s.rules), &s.net, 0, 1).unwrap();
    assert!((0.265..=0.270).contains(&a));
}

#[test]
fn empty_traffic() {
    let s = setup();
    for kind in PolicyKind::ALL {
        let r = s.run(kind, &[]);
        assert_eq!(r.totals.delivered, 0);
        assert_eq!(r.totals.avg_latency_ns, None);
        assert_eq!(r.totals.throughput_bits_per_ns, 0.0);
        assert_eq!(r.activity.optical_energy_mw_ns, 0.0);
    }
    let json = serde_json::to_value(s.run(PolicyKind::Proteus, &[])).unwrap();
    assert!(json["totals"]["avg_latency_ns"].is_null());
}

#[test]
fn single_packet_closed_form() {
    let s = setup();
    // Core 0 sits in GI 0; core 9 in GI 1.
    let (src_gi, dst_gi) = (0usize, 1usize);
    let (q, br) = s.rules.lookup(src_gi, dst_gi).unwrap();
    let r = s.run(PolicyKind::Proteus, &[req(3.0, 0, 9)]);
    let rec = r.records[0];
    let frame = 10.0 / br;
    let prop = s.cfg.propagation_ns(s.net.path_len_cm[src_gi][dst_gi]);
    let expected = 2.0 / 5.0 + 0.265 + frame + prop;
    assert_abs_diff_eq!(rec.latency_ns(), expected, epsilon = 1e-12);
    assert_abs_diff_eq!(rec.eject_time_ns, 3.0 + expected, epsilon = 1e-12);
    assert_eq!((rec.q_used, rec.br_used), (q, br));
    assert_eq!(rec.queue_delay_ns, 0.0);
    assert_abs_diff_eq!(rec.arbitration_delay_ns, 0.4, epsilon = 1e-12);

    let opa = s.run(PolicyKind::Opa, &[req(3.0, 0, 9)]).records[0];
    assert_abs_diff_eq!(opa.latency_ns(), 0.4 + 1.0 + prop, epsilon = 1e-12);
}

#[test]
fn one_waveguide_serves_one_packet_at_a_time() {
    let s = setup();
    // GI 0 and GI 2 both target GI 10.
    let reqs = [req(0.0, 0, 80), req(0.0, 16, 81)];
    for kind in PolicyKind::ALL {
        let r = s.run(kind, &reqs);
        let (a, b) = (r.records[0], r.records[1]);
        let a_end = a.eject_time_ns;
        assert!(b.eject_time_ns - b.frame_delay_ns - b.propagation_delay_ns >= a_end - 1e-12, "{kind:?}");
        assert!(b.latency_ns() >= a_end - b.inject_time_ns);
    }
}

#[test]
fn sender_serializes_its_queue() {
    let s = setup();
    // Same source GI, different destinations: the second waits for the first frame.
    let reqs = [req(0.0, 0, 80), req(0.0, 1, 120)];
    let r = s.run(PolicyKind::Opa, &reqs);
    let second = r.records[1];
    assert!(second.queue_delay_ns >= r.records[0].frame_delay_ns - 1e-12);
}

#[test]
fn records_are_conserved_and_consistent() {
    let s = setup();
    let reqs = s.uniform(0.1, 1500, 4);
    for kind in PolicyKind::ALL {
        let r = s.run(kind, &reqs);
        let t = &r.totals;
        assert_eq!(t.injected, reqs.len() as u64);
        assert_eq!(t.delivered + t.in_flight + t.intra_cluster, t.injected);
        assert_eq!(t.delivered, r.records.len() as u64);
        assert_eq!(t.delivered_bits, 512 * t.delivered);
        assert_abs_diff_eq!(t.throughput_bits_per_ns, t.delivered_bits as f64 / t.duration_ns, epsilon = 1e-9);
        for rec in &r.records {
            let sum = rec.inject_time_ns
                + rec.queue_delay_ns
                + rec.arbitration_delay_ns
                + rec.adaptation_delay_ns
                + rec.frame_delay_ns
                + rec.propagation_delay_ns;
            assert_abs_diff_eq!(rec.eject_time_ns, sum, epsilon = 1e-6);
            for c in [rec.queue_delay_ns, rec.arbitration_delay_ns, rec.adaptation_delay_ns, rec.frame_delay_ns] {
                assert!(c >= 0.0);
            }
        }
    }
}

#[test]
fn cutoff_leaves_packets_in_flight() {
    let mut s = setup();
    let reqs = s.uniform(0.2, 2000, 8);
    s.cfg.cutoff_ns = Some(100.0);
    let r = s.run(PolicyKind::Abm, &reqs);
    assert!(r.totals.in_flight > 0);
    assert_eq!(r.totals.duration_ns, 100.0);
    assert_eq!(r.totals.delivered + r.totals.in_flight + r.totals.intra_cluster, r.totals.injected);
}

#[test]
fn proteus_follows_its_tables() {
    let s = setup();
    let r = s.run(PolicyKind::Proteus, &s.uniform(0.05, 1000, 2));
    for rec in &r.records {
        let (q, br) = s.rules.lookup(rec.src_gi as usize, rec.dst_gi as usize).unwrap();
        assert_eq!((rec.q_used, rec.br_used), (q, br));
        assert_eq!(rec.p_laser_sample_dbm, s.rules.design.p_laser_dbm);
    }
}

#[test]
fn budget_audit_on_runs_and_forgeries() {
    let s = setup();
    let reqs = s.uniform(0.05, 1000, 6);
    let tmpl = s.link.with_n_lambda(55);
    for kind in [PolicyKind::Proteus, PolicyKind::Opa] {
        let r = s.run(kind, &reqs);
        let audit = budget_audit(&r.records, &s.models, &tmpl);
        assert_eq!(audit.checked, r.records.len() as u64);
        assert!(audit.violations.is_empty(), "{kind:?}: {:?}", audit.violations.first());
        assert!(audit.max_p_laser_dbm <= 20.0);
    }
    let mut records = s.run(PolicyKind::Opa, &reqs[..20]).records;
    let victim = &mut records[3];
    victim.p_laser_sample_dbm = -20.0 - 1.0;
    let audit = budget_audit(&records, &s.models, &tmpl);
    assert_eq!(audit.violations.len(), 1);
    assert_eq!(audit.violations[0].packet_id, records[3].id);
}

#[test]
fn opa_power_tracks_loss() {
    let s = setup();
    let mut cache = PenaltyCache::new(s.link, &s.models);
    let worst = s.net.il.max_entry();
    let hi = laser_power_sample(&Policy::Opa, &s.cfg, 10.0, worst, &mut cache).unwrap();
    let lo = laser_power_sample(&Policy::Opa, &s.cfg, 0.47, worst, &mut cache).unwrap();
    assert!(lo < hi);
    assert_abs_diff_eq!(hi - lo, 9.53, epsilon = 1e-9);
    let p = laser_power_sample(&Policy::Proteus(&s.rules), &s.cfg, 0.47, worst, &mut cache).unwrap();
    assert_eq!(p, laser_power_sample(&Policy::Proteus(&s.rules), &s.cfg, 10.0, worst, &mut cache).unwrap());
    assert_eq!(laser_power_sample(&Policy::StaticBaseline, &s.cfg, 1.0, worst, &mut cache).unwrap(), 20.0);
}

#[test]
fn abm_goes_dark_between_bursts() {
    let s = setup();
    let reqs = [req(0.0, 0, 80), req(5000.0, 0, 80)];
    let r = s.run(PolicyKind::Abm, &reqs);
    // Both packets pay the switch-on delay.
    for rec in &r.records {
        assert!(rec.arbitration_delay_ns >= 100.0);
    }
    let series = &r.power_series_mw;
    assert!(series[0] > 0.0);
    assert!(series[2..5].iter().all(|&p| p == 0.0), "{series:?}");
    assert!(series[5] > 0.0);
}

#[test]
fn constant_provisioning_for_proteus_and_static() {
    let s = setup();
    let reqs = s.uniform(0.05, 20_000, 1);
    for (kind, dbm) in [(PolicyKind::Proteus, s.rules.design.p_laser_dbm), (PolicyKind::StaticBaseline, 20.0)] {
        let r = s.run(kind, &reqs);
        let expected = 32.0 * dbm_to_mw(dbm);
        assert_abs_diff_eq!(r.avg_optical_mw(), expected, epsilon = 1e-6 * expected);
        let full = r.power_series_mw.len() - 1;
        assert!(r.power_series_mw[..full].iter().all(|p| (p - expected).abs() < 1e-6 * expected));
    }
}

#[test]
fn runs_are_deterministic() {
    let s = setup();
    let reqs = s.uniform(0.1, 1000, 12);
    for kind in PolicyKind::ALL {
        let a = s.run(kind, &reqs);
        let b = s.run(kind, &reqs);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.records, b.records);
        assert_eq!(a.traffic_fingerprint, fingerprint(&reqs));
    }
    let other = s.uniform(0.1, 1000, 13);
    assert_ne!(fingerprint(&reqs), fingerprint(&other));
}

#[test]
fn latency_ordering_at_moderate_load() {
    let s = setup();
    let reqs = s.uniform(0.05, 3000, 3);
    let lat = |k| s.run(k, &reqs).totals.avg_latency_ns.unwrap();
    let (p, o, a) = (lat(PolicyKind::Proteus), lat(PolicyKind::Opa), lat(PolicyKind::Abm));
    assert!(p < o, "{p} vs {o}");
    assert!(o <= a, "{o} vs {a}");
}

#[test]
fn bad_requests_and_configs() {
    let s = setup();
    let policy = Policy::Opa;
    let out_of_range = [req(0.0, 0, 256)];
    assert!(matches!(
        run(&s.cfg, &policy, &s.net, &s.models, &s.link, out_of_range),
        Err(SimError::Request(_))
    ));
    let unsorted = [req(5.0, 0, 80), req(1.0, 0, 80)];
    assert!(matches!(run(&s.cfg, &policy, &s.net, &s.models, &s.link, unsorted), Err(SimError::Request(_))));
    let cfg = SystemConfig { n_cores: 255, ..SystemConfig::default() };
    assert!(matches!(run(&cfg, &policy, &s.net, &s.models, &s.link, []), Err(SimError::Config(_))));
    let mut rules = s.rules.clone();
    rules.tables[4].entries[0] = None;
    // GI 4 to GI 0 is pair id 0 for sender 4.
    let err = run(&s.cfg, &Policy::Proteus(&rules), &s.net, &s.models, &s.link, [req(0.0, 32, 0)]).unwrap_err();
    assert!(matches!(err, SimError::Rule { src: 4, dst: 0, .. }), "{err}");
}

#[test]
fn policy_names_round_trip() {
    for kind in PolicyKind::ALL {
        assert_eq!(kind.name().parse::<PolicyKind>().unwrap(), kind);
    }
    assert!("fastest".parse::<PolicyKind>().is_err());
}
