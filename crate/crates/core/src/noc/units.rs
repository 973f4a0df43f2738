//! Router-side functional units: image-to-column broadcast and the integer
//! softmax / layernorm approximations. All functions are pure and total on
//! integer inputs; their outputs are requantized through ST-BIF neurons by
//! the engine.

use crate::model::ConvGeom;

/// Integer square root (floor).
pub fn isqrt(x: i64) -> i64 {
    if x <= 0 {
        return 0;
    }
    let mut r = (x as f64).sqrt() as i64;
    while (r + 1) * (r + 1) <= x {
        r += 1;
    }
    while r * r > x {
        r -= 1;
    }
    r
}

/// Shift-based integer softmax: scores are shifted by the row maximum and
/// mapped through a truncated power-of-two kernel, then normalized to
/// `scale`. A constant row yields the uniform distribution.
pub fn ssoftmax_int(row: &[i64], scale: i64) -> Vec<i64> {
    if row.is_empty() {
        return Vec::new();
    }
    const MAX_SHIFT: i64 = 8;
    let m = *row.iter().max().unwrap();
    let weights: Vec<i64> = row
        .iter()
        .map(|&x| {
            let d = (m - x).min(MAX_SHIFT);
            1i64 << (MAX_SHIFT - d)
        })
        .collect();
    let total: i64 = weights.iter().sum();
    weights.iter().map(|&w| w * scale / total).collect()
}

/// Integer layernorm: center by the floor mean, scale by `gain / sigma`
/// where `sigma` is the floor standard deviation (at least one). A zero row
/// maps to zero.
pub fn slayernorm_int(row: &[i64], gain: i64) -> Vec<i64> {
    if row.is_empty() {
        return Vec::new();
    }
    let n = row.len() as i64;
    let mean = row.iter().sum::<i64>().div_euclid(n);
    let centered: Vec<i64> = row.iter().map(|&x| x - mean).collect();
    let var = centered.iter().map(|&c| c * c).sum::<i64>() / n;
    let sigma = isqrt(var).max(1);
    centered.iter().map(|&c| c * gain / sigma).collect()
}

/// Saturating residual merge of two level vectors.
pub fn residual_add(a: &[i64], b: &[i64], s_min: i32, s_max: i32) -> Vec<i64> {
    a.iter()
        .zip(b.iter())
        .map(|(&x, &y)| (x + y).clamp(s_min as i64, s_max as i64))
        .collect()
}

/// Expands one input-spine spike to every output spine whose receptive
/// field contains it, with the matching unrolled kernel position. Input
/// coordinates are in the unpadded grid.
pub fn im2col_broadcast(geom: &ConvGeom, input_spine: u32, channel: u32) -> Vec<(u32, u32)> {
    let (out_h, out_w) = match geom.output_dims(0) {
        Ok(d) => d,
        Err(_) => return Vec::new(),
    };
    let i = (input_spine / geom.input_w) as i64;
    let j = (input_spine % geom.input_w) as i64;
    let s = geom.stride as i64;
    let p = geom.padding as i64;
    let mut targets = Vec::new();
    for r in 0..out_h as i64 {
        let kh = i - (r * s - p);
        if kh < 0 || kh >= geom.kernel_h as i64 {
            continue;
        }
        for c in 0..out_w as i64 {
            let kw = j - (c * s - p);
            if kw < 0 || kw >= geom.kernel_w as i64 {
                continue;
            }
            let out_spine = (r * out_w as i64 + c) as u32;
            let unrolled =
                ((kh as u32 * geom.kernel_w + kw as u32) * geom.channels) + channel;
            targets.push((out_spine, unrolled));
        }
    }
    targets
}
