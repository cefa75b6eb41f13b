use super::{CodecError, HeadConfig, LandmarkSet, NeighborTable, Point, Result, CLAMP_MARGIN};

/// Score, offset and neighbor labels of one sample (see the module docs for
/// the channel layout).
#[derive(Clone, Debug, PartialEq)]
pub struct TargetMaps {
    pub num_landmarks: usize,
    pub num_neighbors: usize,
    pub map_h: usize,
    pub map_w: usize,
    pub score: Vec<f64>,
    pub offset: Vec<f64>,
    pub neighbor: Vec<f64>,
    /// `(row, col)` of each landmark's positive grid.
    pub positive: Vec<(usize, usize)>,
    /// Ground-truth offsets `(x, y)` at the positive grid.
    pub offset_values: Vec<(f64, f64)>,
    /// Ground-truth neighbor displacements, `[i * C + m] = (x, y)`.
    pub neighbor_values: Vec<(f64, f64)>,
}

impl TargetMaps {
    pub fn pixels(&self) -> usize {
        self.map_h * self.map_w
    }
}

/// Clamps every point into `[0, w - margin] x [0, h - margin]`.
pub fn clamp_to_frame(lm: &LandmarkSet, w: usize, h: usize) -> LandmarkSet {
    let (xmax, ymax) = (w as f64 - CLAMP_MARGIN, h as f64 - CLAMP_MARGIN);
    lm.map(|p| Point::new(p.x.clamp(0.0, xmax), p.y.clamp(0.0, ymax)))
}

/// `(row, col)` of the grid containing `p`, clamped to the map.
pub fn positive_grid(p: Point, stride: usize, map_h: usize, map_w: usize) -> (usize, usize) {
    let s = stride as f64;
    let row = ((p.y / s).floor().max(0.0) as usize).min(map_h - 1);
    let col = ((p.x / s).floor().max(0.0) as usize).min(map_w - 1);
    (row, col)
}

pub fn encode_targets(lm: &LandmarkSet, cfg: &HeadConfig, table: Option<&NeighborTable>) -> Result<TargetMaps> {
    cfg.validate()?;
    let n = cfg.num_landmarks;
    if lm.len() != n {
        return Err(CodecError::Shape(format!("{} landmarks, config expects {n}", lm.len())));
    }
    let c = cfg.num_neighbors;
    if c > 0 {
        match table {
            Some(t) if t.num_landmarks() == n && t.num_neighbors() == c => {}
            Some(t) => {
                return Err(CodecError::Shape(format!(
                    "neighbor table is {}x{}, config needs {n}x{c}",
                    t.num_landmarks(),
                    t.num_neighbors()
                )))
            }
            None => return Err(CodecError::Config("neighbor regression needs a neighbor table".into())),
        }
    }
    let lm = clamp_to_frame(lm, cfg.input_w, cfg.input_h);
    let (h, w) = (cfg.map_h(), cfg.map_w());
    let hw = h * w;
    let s = cfg.stride as f64;
    let mut score = vec![0.0; n * hw];
    let mut offset = vec![0.0; 2 * n * hw];
    let mut neighbor = vec![0.0; 2 * c * n * hw];
    let mut positive = Vec::with_capacity(n);
    let mut offset_values = Vec::with_capacity(n);
    let mut neighbor_values = Vec::with_capacity(n * c);
    for (i, p) in lm.points().iter().enumerate() {
        let (row, col) = positive_grid(*p, cfg.stride, h, w);
        let cell = row * w + col;
        score[i * hw + cell] = 1.0;
        let (ox, oy) = (p.x / s - col as f64, p.y / s - row as f64);
        offset[i * hw + cell] = ox;
        offset[(n + i) * hw + cell] = oy;
        positive.push((row, col));
        offset_values.push((ox, oy));
        if let Some(t) = table.filter(|_| c > 0) {
            for (m, &j) in t.row(i).iter().enumerate() {
                let q = lm.get(j);
                let (nx, ny) = (q.x / s - col as f64, q.y / s - row as f64);
                neighbor[(i * c + m) * hw + cell] = nx;
                neighbor[(n * c + i * c + m) * hw + cell] = ny;
                neighbor_values.push((nx, ny));
            }
        }
    }
    Ok(TargetMaps {
        num_landmarks: n,
        num_neighbors: c,
        map_h: h,
        map_w: w,
        score,
        offset,
        neighbor,
        positive,
        offset_values,
        neighbor_values,
    })
}

fn check_len(name: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(CodecError::Shape(format!("{name} map has {got} values, expected {want}")));
    }
    Ok(())
}

/// Row-major argmax of each score channel; ties go to the lowest index.
pub fn argmax_cells(score: &[f64], n: usize, hw: usize) -> Result<Vec<usize>> {
    (0..n)
        .map(|i| {
            let ch = &score[i * hw..(i + 1) * hw];
            let mut best = 0;
            for (k, &v) in ch.iter().enumerate() {
                if v.is_nan() {
                    return Err(CodecError::NanScore(i));
                }
                if v > ch[best] {
                    best = k;
                }
            }
            Ok(best)
        })
        .collect()
}

pub fn decode_pip(score: &[f64], offset: &[f64], cfg: &HeadConfig) -> Result<LandmarkSet> {
    let (n, w, hw) = (cfg.num_landmarks, cfg.map_w(), cfg.map_pixels());
    check_len("score", score.len(), n * hw)?;
    check_len("offset", offset.len(), 2 * n * hw)?;
    let s = cfg.stride as f64;
    let cells = argmax_cells(score, n, hw)?;
    let points = cells
        .iter()
        .enumerate()
        .map(|(i, &cell)| {
            let (row, col) = ((cell / w) as f64, (cell % w) as f64);
            Point::new((col + offset[i * hw + cell]) * s, (row + offset[(n + i) * hw + cell]) * s)
        })
        .collect();
    LandmarkSet::new(points)
}

/// PIP decode fused with neighbor votes: each landmark averages its own
/// prediction with the positions predicted for it by every landmark that
/// lists it as a neighbor.
pub fn decode_pip_nrm(
    score: &[f64],
    offset: &[f64],
    neighbor: &[f64],
    table: &NeighborTable,
    cfg: &HeadConfig,
) -> Result<LandmarkSet> {
    let (n, c, w, hw) = (cfg.num_landmarks, cfg.num_neighbors, cfg.map_w(), cfg.map_pixels());
    if table.num_landmarks() != n || table.num_neighbors() != c {
        return Err(CodecError::Shape(format!(
            "neighbor table is {}x{}, config needs {n}x{c}",
            table.num_landmarks(),
            table.num_neighbors()
        )));
    }
    check_len("neighbor", neighbor.len(), 2 * c * n * hw)?;
    let own = decode_pip(score, offset, cfg)?;
    let cells = argmax_cells(score, n, hw)?;
    let s = cfg.stride as f64;
    let mut sums: Vec<(f64, f64, usize)> = own.points().iter().map(|p| (p.x, p.y, 1)).collect();
    for (j, &cell) in cells.iter().enumerate() {
        let (row, col) = ((cell / w) as f64, (cell % w) as f64);
        for (m, &target) in table.row(j).iter().enumerate() {
            let nx = neighbor[(j * c + m) * hw + cell];
            let ny = neighbor[(n * c + j * c + m) * hw + cell];
            let e = &mut sums[target];
            e.0 += (col + nx) * s;
            e.1 += (row + ny) * s;
            e.2 += 1;
        }
    }
    LandmarkSet::new(sums.into_iter().map(|(x, y, k)| Point::new(x / k as f64, y / k as f64)).collect())
}
