use serde::{Deserialize, Serialize};

use super::{BBox, CodecError, LandmarkSet, Point, Result};

/// Average landmark configuration in box-normalized coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanShape {
    pub points: Vec<Point>,
}

impl MeanShape {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The mean shape placed inside `bbox`.
    pub fn place(&self, bbox: &BBox) -> Result<LandmarkSet> {
        LandmarkSet::new(self.points.iter().map(|&p| bbox.denormalize(p)).collect())
    }
}

/// Samples skipped while averaging, by input index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanShapeReport {
    pub used: usize,
    pub rejected: Vec<usize>,
}

pub fn mean_shape(samples: &[(LandmarkSet, BBox)]) -> Result<(MeanShape, MeanShapeReport)> {
    let mut report = MeanShapeReport::default();
    let mut sums: Vec<(f64, f64)> = Vec::new();
    for (idx, (lm, bbox)) in samples.iter().enumerate() {
        if bbox.is_degenerate() {
            report.rejected.push(idx);
            continue;
        }
        if sums.is_empty() {
            sums = vec![(0.0, 0.0); lm.len()];
        } else if sums.len() != lm.len() {
            return Err(CodecError::Shape(format!(
                "sample {idx} has {} landmarks, earlier samples have {}",
                lm.len(),
                sums.len()
            )));
        }
        for (s, p) in sums.iter_mut().zip(lm.points()) {
            let q = bbox.normalize(*p);
            s.0 += q.x;
            s.1 += q.y;
        }
        report.used += 1;
    }
    if report.used == 0 {
        return Err(CodecError::EmptyTrainingSet);
    }
    let k = report.used as f64;
    let points = sums.into_iter().map(|(x, y)| Point::new(x / k, y / k)).collect();
    Ok((MeanShape { points }, report))
}

/// For every landmark, the indices of its `C` closest other landmarks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborTable {
    rows: Vec<Vec<usize>>,
}

impl NeighborTable {
    /// Validates rows: equal length `C < n`, distinct entries, no self index.
    pub fn from_rows(rows: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        if rows.len() != n {
            return Err(CodecError::Shape(format!("{} rows for {n} landmarks", rows.len())));
        }
        let c = rows.first().map_or(0, Vec::len);
        if c >= n {
            return Err(CodecError::Config(format!("{c} neighbors need more than {n} landmarks")));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != c {
                return Err(CodecError::Shape(format!("row {i} has {} entries, expected {c}", row.len())));
            }
            for (m, &j) in row.iter().enumerate() {
                if j >= n || j == i || row[..m].contains(&j) {
                    return Err(CodecError::Config(format!("row {i} has invalid neighbor {j}")));
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn num_landmarks(&self) -> usize {
        self.rows.len()
    }

    pub fn num_neighbors(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }
}

pub fn build_neighbor_table(mean: &MeanShape, c: usize) -> Result<NeighborTable> {
    let n = mean.len();
    if c >= n {
        return Err(CodecError::Config(format!("{c} neighbors requested for {n} landmarks")));
    }
    let rows = (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> =
                (0..n).filter(|&j| j != i).map(|j| (mean.points[i].dist(&mean.points[j]), j)).collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(c).map(|(_, j)| j).collect()
        })
        .collect();
    NeighborTable::from_rows(rows, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(xy: &[(f64, f64)]) -> MeanShape {
        MeanShape { points: xy.iter().map(|&(x, y)| Point::new(x, y)).collect() }
    }

    #[test]
    fn collinear_table() {
        let t = build_neighbor_table(&shape(&[(0.0, 0.0), (1.0, 0.0), (3.0, 0.0)]), 1).unwrap();
        assert_eq!(t.rows(), &[vec![1], vec![0], vec![1]]);
    }

    #[test]
    fn full_table_and_ties() {
        let m = shape(&[(0.0, 0.0), (1.0, 0.0), (-1.0, 0.0), (0.0, 1.0)]);
        let t = build_neighbor_table(&m, 3).unwrap();
        assert_eq!(t.row(0), &[1, 2, 3]);
        let t = build_neighbor_table(&m, 2).unwrap();
        // 1, 2, 3 are all at distance 1 from point 0
        assert_eq!(t.row(0), &[1, 2]);
        assert!(matches!(build_neighbor_table(&m, 4), Err(CodecError::Config(_))));
    }

    #[test]
    fn mean_of_two_and_rejection() {
        let b = BBox::new(0.0, 0.0, 10.0, 10.0);
        let s1 = LandmarkSet::from_xy(&[(2.0, 2.0), (5.0, 5.0)]).unwrap();
        let s2 = LandmarkSet::from_xy(&[(4.0, 4.0), (5.0, 5.0)]).unwrap();
        let bad = BBox::new(0.0, 0.0, 0.0, 10.0);
        let (m, r) = mean_shape(&[(s1.clone(), b), (s2, b), (s1, bad)]).unwrap();
        assert!((m.points[0].x - 0.3).abs() < 1e-12 && (m.points[0].y - 0.3).abs() < 1e-12);
        assert_eq!(r, MeanShapeReport { used: 2, rejected: vec![2] });
        assert_eq!(mean_shape(&[]), Err(CodecError::EmptyTrainingSet));
    }

    #[test]
    fn translation_invariance() {
        let b = BBox::new(3.0, 4.0, 13.0, 24.0);
        let s = LandmarkSet::from_xy(&[(5.0, 7.0), (11.0, 20.0)]).unwrap();
        let (m1, _) = mean_shape(&[(s.clone(), b)]).unwrap();
        let shifted = s.map(|p| Point::new(p.x + 40.0, p.y - 3.0));
        let b2 = BBox::new(43.0, 1.0, 53.0, 21.0);
        let (m2, _) = mean_shape(&[(shifted, b2)]).unwrap();
        for (a, c) in m1.points.iter().zip(&m2.points) {
            assert!(a.dist(c) < 1e-12);
        }
    }

    #[test]
    fn from_rows_rejects_bad_tables() {
        assert!(NeighborTable::from_rows(vec![vec![0], vec![0]], 2).is_err());
        assert!(NeighborTable::from_rows(vec![vec![1, 1], vec![0, 2], vec![0, 1]], 3).is_err());
        assert!(NeighborTable::from_rows(vec![vec![1], vec![0, 2], vec![0]], 3).is_err());
    }
}
