use std::f64::consts::PI;

use super::FlowField;
use crate::image::RgbImage;

// Ring lengths of the Middlebury color wheel:
// red→yellow, yellow→green, green→cyan, cyan→blue, blue→magenta, magenta→red.
const RY: usize = 15;
const YG: usize = 6;
const GC: usize = 4;
const CB: usize = 11;
const BM: usize = 13;
const MR: usize = 6;

pub const COLOR_WHEEL_SIZE: usize = RY + YG + GC + CB + BM + MR;

/// Entry `k` of the 55-color wheel, channels in 0–255.
pub fn wheel_color(k: usize) -> [f64; 3] {
    let ramp = |i: usize, n: usize| (255 * i / n) as f64;
    let mut k = k % COLOR_WHEEL_SIZE;
    if k < RY {
        return [255.0, ramp(k, RY), 0.0];
    }
    k -= RY;
    if k < YG {
        return [255.0 - ramp(k, YG), 255.0, 0.0];
    }
    k -= YG;
    if k < GC {
        return [0.0, 255.0, ramp(k, GC)];
    }
    k -= GC;
    if k < CB {
        return [0.0, 255.0 - ramp(k, CB), 255.0];
    }
    k -= CB;
    if k < BM {
        return [ramp(k, BM), 0.0, 255.0];
    }
    k -= BM;
    [255.0, 0.0, 255.0 - ramp(k, MR)]
}

/// Fractional wheel position in `[0, COLOR_WHEEL_SIZE − 1]` for direction `(u, v)`.
pub fn wheel_position(u: f64, v: f64) -> f64 {
    let a = (-v).atan2(-u) / PI;
    (a + 1.0) / 2.0 * (COLOR_WHEEL_SIZE - 1) as f64
}

fn encode(u: f64, v: f64, radius: f64) -> [u8; 3] {
    let fk = wheel_position(u, v);
    let k0 = fk.floor() as usize;
    let k1 = if k0 + 1 == COLOR_WHEEL_SIZE {
        0
    } else {
        k0 + 1
    };
    let f = fk - k0 as f64;
    let (c0, c1) = (wheel_color(k0), wheel_color(k1));
    let mut out = [0u8; 3];
    for ch in 0..3 {
        let col = ((1.0 - f) * c0[ch] + f * c1[ch]) / 255.0;
        let col = if radius <= 1.0 {
            1.0 - radius * (1.0 - col)
        } else {
            col * 0.75
        };
        out[ch] = (255.0 * col).floor().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Middlebury flow coloring: hue encodes direction, saturation encodes
/// magnitude relative to `max_magnitude` (the field maximum when `None`).
/// Vectors longer than an explicit `max_magnitude` are darkened.
pub fn flow_to_color(flow: &FlowField, max_magnitude: Option<f64>) -> RgbImage {
    let (max, from_field) = match max_magnitude {
        Some(m) => (m, false),
        None => (flow.max_magnitude(), true),
    };
    let mut data = Vec::with_capacity(flow.u.len() * 3);
    for (&u, &v) in flow.u.iter().zip(&flow.v) {
        let mag = u.hypot(v);
        let px = if mag == 0.0 || max <= 0.0 {
            [255, 255, 255]
        } else {
            let mut radius = mag / max;
            if from_field {
                // the field maximum must map to radius exactly 1
                radius = radius.min(1.0);
            }
            encode(u / max, v / max, radius)
        };
        data.extend_from_slice(&px);
    }
    RgbImage {
        width: flow.width,
        height: flow.height,
        data,
    }
}
