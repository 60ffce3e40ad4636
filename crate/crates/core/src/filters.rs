//! Small image-processing kernels shared by the channel, alignment and
//! quality-control code.

use crate::imgcore::Raster;

/// Normalized 1-D Gaussian taps with radius `ceil(3σ)`; `[1.0]` for σ = 0.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(src: &Raster, sigma: f64) -> Raster {
    let taps = gaussian_kernel(sigma);
    if taps.len() == 1 {
        return src.clone();
    }
    let r = (taps.len() / 2) as i64;
    let (w, h) = src.dims();
    let px = src.pixels();
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &px[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = (x as i64 + k as i64 - r).clamp(0, w as i64 - 1) as usize;
                acc += t * row[xx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = (y as i64 + k as i64 - r).clamp(0, h as i64 - 1) as usize;
                acc += t * tmp[yy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    Raster::new(w, h, out).expect("same dimensions")
}

/// Bilinear sample at continuous pixel coordinates (pixel centers at
/// integers). Neighbors outside the raster read as `fill`, or are clamped to
/// the edge when `fill` is `None`.
pub fn sample_bilinear(src: &Raster, u: f64, v: f64, fill: Option<f64>) -> f64 {
    let (w, h) = (src.width() as i64, src.height() as i64);
    let x0 = u.floor();
    let y0 = v.floor();
    let fx = u - x0;
    let fy = v - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let read = |x: i64, y: i64| -> f64 {
        if x >= 0 && x < w && y >= 0 && y < h {
            src.get(x as usize, y as usize)
        } else {
            match fill {
                Some(f) => f,
                None => src.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize),
            }
        }
    };
    let mut acc = 0.0;
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        if wy == 0.0 {
            continue;
        }
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            if wx == 0.0 {
                continue;
            }
            acc += wy * wx * read(x0 + dx, y0 + dy);
        }
    }
    acc
}

/// Variance of the 4-neighbor Laplacian over interior pixels.
pub fn laplacian_variance(src: &Raster) -> f64 {
    let (w, h) = src.dims();
    if w < 3 || h < 3 {
        return 0.0;
    }
    let mut vals = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            vals.push(
                src.get(x - 1, y) + src.get(x + 1, y) + src.get(x, y - 1) + src.get(x, y + 1)
                    - 4.0 * src.get(x, y),
            );
        }
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64
}

/// Linear-interpolated percentile, `p` in `[0, 100]`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}
