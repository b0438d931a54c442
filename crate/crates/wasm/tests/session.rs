use trainfractal_core::fracdim::report_field;
use trainfractal_core::conditions::pixel_to_hyper;
use trainfractal_core::{colorize, preset, render_field, ConditionId, Viewport};
use trainfractal_wasm::session::{axis_labels, critical_readout_coordinate, default_window, Session};

const WINDOW: [f64; 4] = [1.5, 3.0, 1.5, 3.0];

#[test]
fn incremental_render_matches_whole_render() {
    let c = preset(ConditionId::TanhFullBatch);
    let whole = render_field(&c, &Viewport::with_ranges(&c, (1.5, 3.0), (1.5, 3.0)), 12, 9, 4, 40).unwrap();

    let mut s = Session::new("tanh-fullbatch", WINDOW, 12, 9, 40, 4).unwrap();
    assert!(s.rgba().unwrap().iter().all(|&b| b == 0));
    assert!(s.dimension().is_nan());
    let mut calls = 0;
    while !s.step(7).unwrap() {
        calls += 1;
        assert!(s.progress() < 1.0);
    }
    assert_eq!(calls, 108 / 7);
    assert_eq!(s.progress(), 1.0);

    let image = colorize(&whole).unwrap();
    let rgba = s.rgba().unwrap();
    assert_eq!(rgba.len(), 4 * 12 * 9);
    for (px, rgb) in rgba.chunks_exact(4).zip(image.pixels.chunks_exact(3)) {
        assert_eq!(&px[..3], rgb);
        assert_eq!(px[3], 255);
    }
    let expected = report_field(&whole).dimension;
    assert!(s.dimension().to_bits() == expected.to_bits() || (s.dimension().is_nan() && expected.is_nan()));
}

#[test]
fn partial_render_shows_finished_rows_only() {
    let mut s = Session::new("deep-linear", [0.0, 4.0, 0.0, 4.0], 5, 4, 10, 0).unwrap();
    s.step(12).unwrap();
    let rgba = s.rgba().unwrap();
    let alpha: Vec<u8> = rgba.chunks_exact(4).map(|p| p[3]).collect();
    assert!(alpha[..10].iter().all(|&a| a == 255));
    assert!(alpha[10..].iter().all(|&a| a == 0));
}

#[test]
fn readouts_follow_the_axes() {
    let s = Session::new("tanh-fullbatch", WINDOW, 10, 10, 1, 0).unwrap();
    assert_eq!(s.axis_point(0.0, 0.0), (1.5, 3.0));
    assert_eq!(s.axis_point(1.0, 1.0), (3.0, 1.5));
    let c = preset(ConditionId::TanhFullBatch).x_axis.with_range(1.5, 3.0);
    let (x, y) = s.hypers_at(3, 0).unwrap();
    assert_eq!(x, pixel_to_hyper(&c, 3, 10).unwrap());
    assert_eq!(y, pixel_to_hyper(&c, 9, 10).unwrap());
    assert!(s.hypers_at(10, 0).is_err());
}

#[test]
fn preset_metadata() {
    assert_eq!(default_window("tanh-fullbatch").unwrap(), [0.0, 4.0, 0.0, 4.0]);
    assert!(axis_labels("tanh-fullbatch").unwrap()[1].contains("eta1"));
    let edge = critical_readout_coordinate("tanh-fullbatch", 0).unwrap();
    assert!((edge - 197.9747f64.log10()).abs() < 1e-4, "{edge}");
    assert!(Session::new("sigmoid", WINDOW, 4, 4, 1, 0).is_err());
    assert!(Session::new("tanh-fullbatch", [1.0, 0.0, 0.0, 1.0], 4, 4, 1, 0).is_err());
}
