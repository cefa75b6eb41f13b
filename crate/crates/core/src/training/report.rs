use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Mean loss components over one epoch. Absent components are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub round: Option<usize>,
    pub task: Option<String>,
    pub epoch: usize,
    pub loss: f64,
    pub loss_score: f64,
    pub loss_offset: f64,
    pub loss_neighbor: f64,
    pub val_nme: Option<f64>,
}

/// Per-epoch records plus wall-clock seconds, kept apart so that the record
/// CSV is reproducible byte for byte.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub records: Vec<EpochRecord>,
    pub seconds: Vec<f64>,
}

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

impl TrainReport {
    pub fn first_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    pub fn extend(&mut self, other: TrainReport) {
        self.records.extend(other.records);
        self.seconds.extend(other.seconds);
    }

    /// `round,task,epoch,L,L_S,L_O,L_N,val_nme`, one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("round,task,epoch,L,L_S,L_O,L_N,val_nme\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                opt(&r.round),
                opt(&r.task),
                r.epoch,
                r.loss,
                r.loss_score,
                r.loss_offset,
                r.loss_neighbor,
                opt(&r.val_nme)
            );
        }
        s
    }

    /// `row,round,epoch,seconds`, aligned with the rows of [`Self::to_csv`].
    pub fn timing_csv(&self) -> String {
        let mut s = String::from("row,round,epoch,seconds\n");
        for (i, (r, t)) in self.records.iter().zip(&self.seconds).enumerate() {
            let _ = writeln!(s, "{i},{},{},{t:.6}", opt(&r.round), r.epoch);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows() {
        let mut r = TrainReport::default();
        r.records.push(EpochRecord {
            round: Some(1),
            task: Some("T2".into()),
            epoch: 0,
            loss: 0.5,
            loss_score: 0.25,
            loss_offset: 1.0,
            loss_neighbor: 0.0,
            val_nme: None,
        });
        r.seconds.push(1.5);
        let csv = r.to_csv();
        assert_eq!(csv.lines().nth(1), Some("1,T2,0,0.5,0.25,1,0,"));
        assert_eq!(r.timing_csv().lines().nth(1), Some("0,1,0,1.500000"));
    }
}
