use super::{FlowField, FlowParams};
use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Smallest side a pyramid level may have.
const MIN_LEVEL_SIZE: usize = 4;

/// Coarse-to-fine Horn–Schunck flow from `prev` to `curr`.
///
/// Intensities are rescaled to 0–255 so `alpha` has its classical meaning.
/// Each warp linearises brightness constancy around the current estimate
/// and runs Jacobi sweeps on the full (not incremental) flow, so the
/// smoothness term always acts on the total displacement.
pub fn estimate_flow(prev: &GrayImage, curr: &GrayImage, params: &FlowParams) -> Result<FlowField> {
    params.validate()?;
    if prev.width != curr.width || prev.height != curr.height {
        return Err(Error::Shape(format!(
            "flow frames differ in size: {}x{} vs {}x{}",
            prev.width, prev.height, curr.width, curr.height
        )));
    }
    if prev.width < 8 || prev.height < 8 {
        return Err(Error::Shape(format!(
            "flow frames must be at least 8x8, got {}x{}",
            prev.width, prev.height
        )));
    }

    let scale = |img: &GrayImage| GrayImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|v| v * 255.0).collect(),
    };
    let mut prev_pyr = vec![scale(prev)];
    let mut curr_pyr = vec![scale(curr)];
    while prev_pyr.len() < params.pyramid_levels {
        let last = prev_pyr.last().unwrap();
        if last.width.div_ceil(2) < MIN_LEVEL_SIZE || last.height.div_ceil(2) < MIN_LEVEL_SIZE {
            break;
        }
        let p = downsample(last);
        let c = downsample(curr_pyr.last().unwrap());
        prev_pyr.push(p);
        curr_pyr.push(c);
    }

    let mut flow: Option<FlowField> = None;
    for (p, c) in prev_pyr.iter().zip(&curr_pyr).rev() {
        let mut f = match flow {
            None => FlowField::zeros(p.width, p.height),
            Some(coarse) => upsample_flow(&coarse, p.width, p.height),
        };
        for _ in 0..params.warps_per_level {
            refine(p, c, &mut f, params);
        }
        flow = Some(f);
    }
    let flow = flow.expect("pyramid has at least one level");
    if flow.u.iter().chain(&flow.v).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("optical flow diverged".into()));
    }
    Ok(flow)
}

fn downsample(img: &GrayImage) -> GrayImage {
    let (w, h) = (img.width.div_ceil(2), img.height.div_ceil(2));
    GrayImage::from_fn(w, h, |x, y| {
        let (x2, y2) = (2 * x as isize, 2 * y as isize);
        0.25 * (img.at_clamped(x2, y2)
            + img.at_clamped(x2 + 1, y2)
            + img.at_clamped(x2, y2 + 1)
            + img.at_clamped(x2 + 1, y2 + 1))
    })
}

fn upsample_flow(coarse: &FlowField, width: usize, height: usize) -> FlowField {
    let sx = width as f64 / coarse.width as f64;
    let sy = height as f64 / coarse.height as f64;
    let u = GrayImage {
        width: coarse.width,
        height: coarse.height,
        data: coarse.u.clone(),
    };
    let v = GrayImage {
        width: coarse.width,
        height: coarse.height,
        data: coarse.v.clone(),
    };
    let mut out = FlowField::zeros(width, height);
    for y in 0..height {
        for x in 0..width {
            let cx = (x as f64 + 0.5) / sx - 0.5;
            let cy = (y as f64 + 0.5) / sy - 0.5;
            out.u[y * width + x] = u.sample(cx, cy) * sx;
            out.v[y * width + x] = v.sample(cx, cy) * sy;
        }
    }
    out
}

/// Weighted 8-neighbour average of the classical Horn–Schunck scheme, with
/// edge replication at the border.
fn local_average(field: &[f64], w: usize, h: usize, x: usize, y: usize) -> f64 {
    if x > 0 && y > 0 && x + 1 < w && y + 1 < h {
        let i = y * w + x;
        return (field[i - 1] + field[i + 1] + field[i - w] + field[i + w]) / 6.0
            + (field[i - w - 1] + field[i - w + 1] + field[i + w - 1] + field[i + w + 1]) / 12.0;
    }
    let at = |dx: isize, dy: isize| {
        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
        field[yy * w + xx]
    };
    (at(-1, 0) + at(1, 0) + at(0, -1) + at(0, 1)) / 6.0
        + (at(-1, -1) + at(1, -1) + at(-1, 1) + at(1, 1)) / 12.0
}

fn refine(prev: &GrayImage, curr: &GrayImage, flow: &mut FlowField, params: &FlowParams) {
    let (w, h) = (prev.width, prev.height);
    let n = w * h;
    let warped = GrayImage::from_fn(w, h, |x, y| {
        let i = y * w + x;
        curr.sample(x as f64 + flow.u[i], y as f64 + flow.v[i])
    });

    let mut ix = vec![0.0; n];
    let mut iy = vec![0.0; n];
    let mut it = vec![0.0; n];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let dx =
                |img: &GrayImage| 0.5 * (img.at_clamped(xi + 1, yi) - img.at_clamped(xi - 1, yi));
            let dy =
                |img: &GrayImage| 0.5 * (img.at_clamped(xi, yi + 1) - img.at_clamped(xi, yi - 1));
            let i = y * w + x;
            ix[i] = 0.5 * (dx(prev) + dx(&warped));
            iy[i] = 0.5 * (dy(prev) + dy(&warped));
            it[i] = warped.data[i] - prev.data[i];
        }
    }

    let u0 = flow.u.clone();
    let v0 = flow.v.clone();
    let alpha2 = params.alpha * params.alpha;
    let denom: Vec<f64> = (0..n)
        .map(|i| alpha2 + ix[i] * ix[i] + iy[i] * iy[i])
        .collect();
    let mut u_next = vec![0.0; n];
    let mut v_next = vec![0.0; n];
    for _ in 0..params.iterations {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let ubar = local_average(&flow.u, w, h, x, y);
                let vbar = local_average(&flow.v, w, h, x, y);
                let r = ix[i] * (ubar - u0[i]) + iy[i] * (vbar - v0[i]) + it[i];
                u_next[i] = ubar - ix[i] * r / denom[i];
                v_next[i] = vbar - iy[i] * r / denom[i];
            }
        }
        std::mem::swap(&mut flow.u, &mut u_next);
        std::mem::swap(&mut flow.v, &mut v_next);
    }
}
