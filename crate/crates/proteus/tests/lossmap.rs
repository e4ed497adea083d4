use approx::assert_abs_diff_eq;
use proteus::lossmap::*;

fn prop_only(length_cm: f64, n_bends: u32) -> f64 {
    let profile = PathProfile { length_cm, n_bends, ..PathProfile::default() };
    path_insertion_loss(&profile, &LossParams::default(), Composition::PropagationOnly)
}

#[test]
fn reference_path_examples() {
    assert_abs_diff_eq!(prop_only(1.74, 0), 0.9396, epsilon = 1e-9);
    assert_abs_diff_eq!(prop_only(2.61, 1), 1.4144, epsilon = 1e-9);
    assert_eq!(prop_only(0.0, 0), 0.0);
}

#[test]
fn full_composition_adds_fixed_losses() {
    let profile = PathProfile { length_cm: 1.0, n_bends: 2, n_splitters: 1, n_couplers: 2 };
    let p = LossParams::default();
    let full = path_insertion_loss(&profile, &p, Composition::Full);
    assert_abs_diff_eq!(full, 0.54 + 0.01 + 0.5 + 4.0, epsilon = 1e-12);
    assert_abs_diff_eq!(path_insertion_loss(&profile, &p, Composition::PropagationOnly), 0.55, epsilon = 1e-12);
}

#[test]
fn loss_is_additive_over_profiles() {
    let a = PathProfile { length_cm: 0.7, n_bends: 3, n_splitters: 1, n_couplers: 0 };
    let b = PathProfile { length_cm: 2.2, n_bends: 1, n_splitters: 0, n_couplers: 1 };
    let p = LossParams::default();
    for c in [Composition::PropagationOnly, Composition::Full] {
        let sum = path_insertion_loss(&a, &p, c) + path_insertion_loss(&b, &p, c);
        assert_abs_diff_eq!(path_insertion_loss(&(a + b), &p, c), sum, epsilon = 1e-12);
    }
}

#[test]
fn calibrated_layout_hits_published_bounds() {
    for n in [16, 32] {
        let layout = ChipLayout::calibrated(n);
        layout.validate().unwrap();
        let m = build_il_matrix(&layout, &LossParams::default(), Composition::PropagationOnly).unwrap();
        assert_abs_diff_eq!(m.min_entry(), 0.47, epsilon = 0.05);
        assert_abs_diff_eq!(m.max_entry(), 10.0, epsilon = 0.2);
    }
    let layout = ChipLayout::calibrated(16);
    let shortest = path_profile(&layout, 15, 0).unwrap();
    let longest = path_profile(&layout, 0, 15).unwrap();
    assert_abs_diff_eq!(shortest.length_cm, 0.87, epsilon = 1e-9);
    assert_abs_diff_eq!(longest.length_cm, 18.5, epsilon = 1e-9);
}

#[test]
fn geometry_examples() {
    let layout = ChipLayout::calibrated(8);
    // Last writer and first reader are neighbours across the turnaround.
    let p = path_profile(&layout, 7, 0).unwrap();
    assert_abs_diff_eq!(p.length_cm, layout.turnaround_cm, epsilon = 1e-12);
    assert_eq!(p.n_bends, 0);
    let full = path_profile(&layout, 0, 7).unwrap();
    assert_abs_diff_eq!(full.length_cm, layout.used_length_cm(), epsilon = 1e-12);
    assert!(full.n_bends > 0);
    assert_eq!(full.n_bends % 2, 0);
}

#[test]
fn path_profile_errors() {
    let layout = ChipLayout::calibrated(4);
    assert!(matches!(path_profile(&layout, 2, 2), Err(LossMapError::SelfPath(2))));
    assert!(matches!(path_profile(&layout, 0, 4), Err(LossMapError::OutOfRange { .. })));
}

#[test]
fn two_gi_matrix() {
    let m = build_il_matrix(&ChipLayout::calibrated(2), &LossParams::default(), Composition::PropagationOnly).unwrap();
    let pairs: Vec<_> = m.pairs().collect();
    assert_eq!(pairs.len(), 2);
    assert!(pairs.iter().all(|p| p.2 >= 0.0));
}

#[test]
fn matrix_monotone_in_length_at_fixed_bends() {
    let layout = ChipLayout::calibrated(32);
    let params = LossParams::default();
    let mut rows: Vec<(PathProfile, f64)> = Vec::new();
    let m = build_il_matrix(&layout, &params, Composition::PropagationOnly).unwrap();
    for (s, d, v) in m.pairs() {
        rows.push((path_profile(&layout, s, d).unwrap(), v));
    }
    for a in &rows {
        for b in rows.iter().filter(|b| b.0.n_bends == a.0.n_bends && b.0.length_cm > a.0.length_cm + 1e-9) {
            assert!(b.1 > a.1);
        }
    }
}

#[test]
fn matrix_is_deterministic() {
    let layout = ChipLayout::calibrated(32);
    let a = build_il_matrix(&layout, &LossParams::default(), Composition::Full).unwrap();
    let b = build_il_matrix(&layout, &LossParams::default(), Composition::Full).unwrap();
    assert_eq!(a.to_csv_string(), b.to_csv_string());
}

#[test]
fn layout_validation() {
    let mut l = ChipLayout::calibrated(4);
    l.gi_order = vec![0, 1, 1, 3];
    assert!(matches!(l.validate(), Err(LossMapError::InvalidLayout(_))));
    let mut l = ChipLayout::calibrated(4);
    l.gi_pitch_cm = 50.0;
    assert!(l.validate().is_err());
    assert!(ChipLayout::calibrated(1).validate().is_err());
}

#[test]
fn gi_order_permutes_positions() {
    let mut l = ChipLayout::calibrated(4);
    let base = build_il_matrix(&l, &LossParams::default(), Composition::PropagationOnly).unwrap();
    l.gi_order = vec![3, 2, 1, 0];
    let flipped = build_il_matrix(&l, &LossParams::default(), Composition::PropagationOnly).unwrap();
    assert_eq!(flipped.get(3, 0), base.get(0, 3));
    assert_eq!(flipped.get(0, 3), base.get(3, 0));
}

#[test]
fn store_load_round_trip() {
    let m = build_il_matrix(&ChipLayout::calibrated(6), &LossParams::default(), Composition::PropagationOnly).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("il.csv");
    m.store(&path).unwrap();
    let back = load_il_matrix(&path).unwrap();
    assert_eq!(back.losses_db, m.losses_db);
}

#[test]
fn parse_reports_worst_pair() {
    let text = "n_gis,3\n0,1.5,10.0\n2.0,0,3.0\n4.0,5.0,0\n";
    let m = parse_il_matrix(text, "t").unwrap();
    assert_eq!(m.worst_pair(), (0, 2));
    assert_eq!(m.max_entry(), 10.0);
    assert_eq!(m.min_entry(), 1.5);
}

#[test]
fn parse_errors() {
    assert!(matches!(parse_il_matrix("n_gis,1\n0\n", "t"), Err(LossMapError::Parse { .. })));
    assert!(matches!(parse_il_matrix("", "t"), Err(LossMapError::Parse { .. })));
    assert!(matches!(parse_il_matrix("n_gis,2\n0,1\n", "t"), Err(LossMapError::Parse { .. })));
    assert!(matches!(parse_il_matrix("n_gis,2\n0,1,2\n1,0\n", "t"), Err(LossMapError::Parse { .. })));
    match parse_il_matrix("n_gis,2\n0,1\n-1,0\n", "t") {
        Err(LossMapError::Entry { row, col, .. }) => assert_eq!((row, col), (1, 0)),
        other => panic!("{other:?}"),
    }
    match parse_il_matrix("n_gis,2\n0,x\n1,0\n", "t") {
        Err(LossMapError::Entry { row, col, .. }) => assert_eq!((row, col), (0, 1)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn quantization_rounds_up() {
    assert_eq!(quantize_il(10.0), 1000);
    assert_eq!(quantize_il(10.001), 1001);
    assert_eq!(quantize_il(0.47), 47);
    for il in [0.4698, 3.27, 9.99999] {
        assert!(dequantize_il(quantize_il(il)) >= il);
        assert!(dequantize_il(quantize_il(il)) - il < 0.01 + 1e-9);
    }
}
