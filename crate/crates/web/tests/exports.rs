use xwas_web::{loss_map, power_curves, refined_max_loss, x_sweep};

#[test]
fn power_curves_start_at_alpha() {
    let v = power_curves(&[1, 2, 3], 0.0025, 40.0, 41).unwrap();
    assert_eq!(v.len(), 41 * 4);
    assert!(v[1..4].iter().all(|p| (p - 0.0025).abs() < 1e-9));
    // Rows increase in ncp and, at fixed ncp > 0, decrease in df.
    let row = &v[10 * 4..11 * 4];
    assert_eq!(row[0], 10.0);
    assert!(row[1] > row[2] && row[2] > row[3]);
}

#[test]
fn loss_map_peak_matches_search() {
    let (cols, rows) = (60, 80);
    let v = loss_map(1, 2, 6.0, 40.0, cols, rows).unwrap();
    assert_eq!(v.len(), cols * rows + 3);
    let (peak, alpha, ncp) = (v[cols * rows], v[cols * rows + 1], v[cols * rows + 2]);
    let refined = refined_max_loss(1, 2).unwrap();
    assert!(peak <= refined[0] + 1e-9);
    assert!(refined[0] - peak < 0.005);
    assert!((refined[0] - 0.1137).abs() < 0.002);
    assert!((alpha.log10() - refined[1].log10()).abs() < 0.2);
    assert!((ncp - refined[2]).abs() < 1.0);
}

#[test]
fn x_sweep_rows() {
    let v = x_sweep(&[-0.3, 0.0, 0.3, 0.0, 0.3], false, 0.2, 1000, 0.0008, 4.0, false, 25).unwrap();
    assert_eq!(v.len(), 25 * 5);
    assert!((v[0] + 0.6).abs() < 1e-12 && (v[24 * 5] - 0.6).abs() < 1e-12);
    for row in v.chunks(5) {
        assert!(row[1..].iter().all(|p| (0.0..=1.0).contains(p)));
    }
    assert!(x_sweep(&[0.0; 4], true, 0.2, 1000, 0.0008, 4.0, false, 5).is_err());
    assert!(x_sweep(&[0.0; 5], true, 1.5, 1000, 0.0008, 4.0, false, 5).is_err());
}
