use std::f64::consts::PI;

use rehar_core::flow::{estimate_flow, flow_to_color, read_flo, write_flo, FlowField, FlowParams};
use rehar_core::image::GrayImage;

fn sinusoid(x: f64, y: f64) -> f64 {
    0.5 + 0.2 * (2.0 * PI * x / 12.0).sin() * (2.0 * PI * y / 15.0).cos()
        + 0.15 * (2.0 * PI * (x + y) / 21.0).sin()
}

/// Frame pair whose true flow is exactly `(du, dv)`: the second frame is
/// the texture sampled at the displaced coordinates.
fn translated_pair(du: f64, dv: f64) -> (GrayImage, GrayImage) {
    let prev = GrayImage::from_fn(64, 64, |x, y| sinusoid(x as f64, y as f64));
    let curr = GrayImage::from_fn(64, 64, |x, y| sinusoid(x as f64 - du, y as f64 - dv));
    (prev, curr)
}

#[test]
fn one_pixel_translations_in_all_cardinal_directions() {
    let params = FlowParams::default();
    for (du, dv) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
        let (prev, curr) = translated_pair(du, dv);
        let flow = estimate_flow(&prev, &curr, &params).unwrap();
        let epe = flow.mean_endpoint_error((du, dv));
        println!(
            "shift ({du:+}, {dv:+}): mean EPE {epe:.4}, mean flow ({:.3}, {:.3})",
            flow.mean_u(),
            flow.mean_v()
        );
        assert!(epe <= 0.5, "shift ({du}, {dv}): EPE {epe}");
    }
}

#[test]
fn rightward_shift_mean_components() {
    let (prev, curr) = translated_pair(1.0, 0.0);
    let flow = estimate_flow(&prev, &curr, &FlowParams::default()).unwrap();
    let mean_abs_v = flow.v.iter().map(|v| v.abs()).sum::<f64>() / flow.v.len() as f64;
    assert!(
        (0.7..=1.3).contains(&flow.mean_u()),
        "mean u {}",
        flow.mean_u()
    );
    assert!(mean_abs_v < 0.3, "mean |v| {mean_abs_v}");
}

#[test]
fn swapping_frames_negates_flow() {
    let (prev, curr) = translated_pair(1.0, 0.0);
    let params = FlowParams::default();
    let fwd = estimate_flow(&prev, &curr, &params).unwrap();
    let bwd = estimate_flow(&curr, &prev, &params).unwrap();
    let sum = fwd.mean_u() + bwd.mean_u();
    assert!(sum.abs() < 0.3, "mean(u_fwd + u_bwd) = {sum}");
}

#[test]
fn estimation_is_deterministic() {
    let (prev, curr) = translated_pair(0.0, 1.0);
    let a = estimate_flow(&prev, &curr, &FlowParams::default()).unwrap();
    let b = estimate_flow(&prev, &curr, &FlowParams::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn estimated_field_survives_flo_roundtrip_and_renders() {
    let (prev, curr) = translated_pair(1.0, 0.0);
    let flow = estimate_flow(&prev, &curr, &FlowParams::default()).unwrap();
    let mut bytes = Vec::new();
    write_flo(&flow, &mut bytes).unwrap();
    assert_eq!(bytes.len(), 12 + 8 * 64 * 64);
    let back: FlowField = read_flo(&bytes[..]).unwrap();
    for (a, b) in flow.u.iter().zip(&back.u).chain(flow.v.iter().zip(&back.v)) {
        assert_eq!(*a as f32 as f64, *b);
    }
    let img = flow_to_color(&flow, None);
    assert_eq!((img.width, img.height), (64, 64));
}
