use super::{clamp_to_frame, positive_grid, CodecError, LandmarkSet, Point, Result};

/// Gaussian heatmaps `[N, H/stride, W/stride]`, peak 1 at each landmark's
/// grid, truncated beyond three radii.
pub fn encode_gaussian(lm: &LandmarkSet, input_h: usize, input_w: usize, stride: usize, radius: f64) -> Result<Vec<f64>> {
    if !(radius > 0.0) {
        return Err(CodecError::Config(format!("gaussian radius must be positive, got {radius}")));
    }
    if stride == 0 || input_h % stride != 0 || input_w % stride != 0 {
        return Err(CodecError::Config(format!("stride {stride} does not divide {input_h}x{input_w}")));
    }
    let (h, w) = (input_h / stride, input_w / stride);
    let lm = clamp_to_frame(lm, input_w, input_h);
    let mut out = vec![0.0; lm.len() * h * w];
    let cut2 = 9.0 * radius * radius;
    for (i, p) in lm.points().iter().enumerate() {
        let (pr, pc) = positive_grid(*p, stride, h, w);
        let ch = &mut out[i * h * w..(i + 1) * h * w];
        for r in 0..h {
            for c in 0..w {
                let (dr, dc) = (r as f64 - pr as f64, c as f64 - pc as f64);
                let d2 = dr * dr + dc * dc;
                if d2 <= cut2 {
                    ch[r * w + c] = (-d2 / (2.0 * radius * radius)).exp();
                }
            }
        }
    }
    Ok(out)
}

/// Argmax decode with a quarter-grid shift toward the strongest 4-neighbor.
///
/// The shift is dropped when the in-bounds neighbors all tie. A channel
/// without a unique value decodes to grid (0, 0).
pub fn decode_quarter(heatmaps: &[f64], n: usize, h: usize, w: usize, stride: usize) -> Result<LandmarkSet> {
    if heatmaps.len() != n * h * w {
        return Err(CodecError::Shape(format!("heatmaps have {} values, expected {}", heatmaps.len(), n * h * w)));
    }
    let s = stride as f64;
    let hw = h * w;
    let cells = super::pip::argmax_cells(heatmaps, n, hw)?;
    let points = cells
        .iter()
        .enumerate()
        .map(|(i, &cell)| {
            let ch = &heatmaps[i * hw..(i + 1) * hw];
            let (r, c) = ((cell / w) as isize, (cell % w) as isize);
            // row-major order of the 4-neighbors: up, left, right, down
            let cands = [(r - 1, c), (r, c - 1), (r, c + 1), (r + 1, c)];
            let inside: Vec<(isize, isize, f64)> = cands
                .iter()
                .filter(|&&(rr, cc)| rr >= 0 && cc >= 0 && rr < h as isize && cc < w as isize)
                .map(|&(rr, cc)| (rr, cc, ch[rr as usize * w + cc as usize]))
                .collect();
            let mut shift = (0.0, 0.0);
            if let Some(first) = inside.first() {
                let all_equal = inside.iter().all(|e| e.2 == first.2);
                if !all_equal {
                    let mut best = inside[0];
                    for &e in &inside[1..] {
                        if e.2 > best.2 {
                            best = e;
                        }
                    }
                    shift = (0.25 * (best.1 - c) as f64, 0.25 * (best.0 - r) as f64);
                }
            }
            Point::new((c as f64 + shift.0) * s, (r as f64 + shift.1) * s)
        })
        .collect();
    LandmarkSet::new(points)
}
