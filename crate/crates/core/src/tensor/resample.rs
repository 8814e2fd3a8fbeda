//! Catmull-Rom resampling weights shared by image resizing and the tape.

/// Catmull-Rom cubic convolution kernel (a = -0.5).
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Normalized taps for one output coordinate.
pub struct CubicTaps {
    /// Source index of the first weight; may fall outside the input.
    pub start: isize,
    pub weights: Vec<f64>,
    /// Source sample nearest the output center, clamped into range.
    pub nearest: usize,
}

/// Half-pixel-centered taps; the kernel widens when minifying so it acts as
/// a low-pass filter.
pub fn cubic_taps(in_len: usize, out_len: usize) -> Vec<CubicTaps> {
    let scale = in_len as f64 / out_len as f64;
    let stretch = scale.max(1.0);
    let support = 2.0 * stretch;
    (0..out_len)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale;
            let start = (center - support).floor() as isize;
            let end = (center + support).ceil() as isize;
            let mut weights: Vec<f64> = (start..end)
                .map(|i| cubic_kernel((i as f64 + 0.5 - center) / stretch))
                .collect();
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);
            let nearest = (center.floor() as isize).clamp(0, in_len as isize - 1) as usize;
            CubicTaps { start, weights, nearest }
        })
        .collect()
}

pub fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Sparse rows of the resampling matrix with border samples folded onto the edge.
pub(crate) fn cubic_rows(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    cubic_taps(in_len, out_len)
        .into_iter()
        .map(|t| {
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(t.weights.len());
            for (k, &wt) in t.weights.iter().enumerate() {
                let i = clamp_index(t.start + k as isize, in_len);
                match row.iter_mut().find(|(j, _)| *j == i) {
                    Some(e) => e.1 += wt,
                    None => row.push((i, wt)),
                }
            }
            row
        })
        .collect()
}
