//! Per-task and joint confusion matrices.

use crate::data::{InfectionTask, LabelVector, JOINT_STATE_COUNT, JOINT_TABLE_ORDER};
use crate::error::{Error, Result};

/// 2x2 confusion counts; rows are actual, columns predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion2 {
    pub true_neg: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_pos: u64,
}

impl Confusion2 {
    pub fn total(&self) -> u64 {
        self.true_neg + self.false_pos + self.false_neg + self.true_pos
    }

    /// Matrix layout `[actual][predicted]` with negative first.
    pub fn as_matrix(&self) -> [[u64; 2]; 2] {
        [
            [self.true_neg, self.false_pos],
            [self.false_neg, self.true_pos],
        ]
    }
}

/// Count a binary confusion matrix.
pub fn confusion(pred: &[bool], truth: &[bool]) -> Result<Confusion2> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut cf = Confusion2::default();
    for (&p, &t) in pred.iter().zip(truth.iter()) {
        match (t, p) {
            (false, false) => cf.true_neg += 1,
            (false, true) => cf.false_pos += 1,
            (true, false) => cf.false_neg += 1,
            (true, true) => cf.true_pos += 1,
        }
    }
    Ok(cf)
}

/// 8x8 joint confusion over the three infection bits, indexed in the table
/// display order `H, B, F, A, BF, FA, BA, BFA` on both axes.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct JointConfusion {
    pub counts: [[u64; JOINT_STATE_COUNT]; JOINT_STATE_COUNT],
}

/// Count the joint confusion matrix of predicted versus actual label vectors.
pub fn joint_confusion(pred: &[LabelVector], truth: &[LabelVector]) -> Result<JointConfusion> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(alloc::format!(
            "{} predictions vs {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut joint = JointConfusion::default();
    for (p, t) in pred.iter().zip(truth.iter()) {
        let row = JOINT_TABLE_ORDER[t.joint_index()];
        let col = JOINT_TABLE_ORDER[p.joint_index()];
        joint.counts[row][col] += 1;
    }
    Ok(joint)
}

impl JointConfusion {
    /// Marginalize onto one task's 2x2 confusion; exact by construction.
    pub fn marginal(&self, task: InfectionTask) -> Confusion2 {
        let bit = task.index();
        let mut cf = Confusion2::default();
        for (row, row_counts) in self.counts.iter().enumerate() {
            let actual = (JOINT_TABLE_ORDER[row] >> bit) & 1 == 1;
            for (col, &count) in row_counts.iter().enumerate() {
                let predicted = (JOINT_TABLE_ORDER[col] >> bit) & 1 == 1;
                match (actual, predicted) {
                    (false, false) => cf.true_neg += count,
                    (false, true) => cf.false_pos += count,
                    (true, false) => cf.false_neg += count,
                    (true, true) => cf.true_pos += count,
                }
            }
        }
        cf
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn all_correct_has_empty_off_diagonal() {
        let labels = vec![
            LabelVector::new(true, false, false),
            LabelVector::new(false, true, true),
            LabelVector::new(true, true, true),
        ];
        let joint = joint_confusion(&labels, &labels).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    assert_eq!(joint.counts[i][j], 0);
                }
            }
        }
        let cf = confusion(&[true, false, true], &[true, false, true]).unwrap();
        assert_eq!(cf.false_pos + cf.false_neg, 0);
    }

    #[test]
    fn fungi_row_layout_matches_expected_ordering() {
        // true fungi-only cases predicted as
        // (H:0, B:19, F:12, A:0, BF:21, FA:0, BA:2, BFA:0)
        let mut pred: Vec<LabelVector> = Vec::new();
        let spread = [
            (LabelVector::new(true, false, false), 19usize), // B
            (LabelVector::new(false, true, false), 12),      // F
            (LabelVector::new(true, true, false), 21),       // B,F
            (LabelVector::new(true, false, true), 2),        // B,A
        ];
        for (lv, n) in spread {
            for _ in 0..n {
                pred.push(lv);
            }
        }
        let truth = vec![LabelVector::new(false, true, false); pred.len()];
        let joint = joint_confusion(&pred, &truth).unwrap();
        // fungi-only sits at table position 2
        assert_eq!(joint.counts[2], [0, 19, 12, 0, 21, 0, 2, 0]);
        for (row, counts) in joint.counts.iter().enumerate() {
            if row != 2 {
                assert!(counts.iter().all(|&c| c == 0));
            }
        }
    }

    #[test]
    fn marginalization_matches_direct_confusion() {
        let mut rng = crate::rng::Rng::from_seed(17);
        for _ in 0..50 {
            let n = 1 + rng.below(200);
            let truth: Vec<LabelVector> = (0..n)
                .map(|_| LabelVector::from_joint_index(rng.below(8)))
                .collect();
            let pred: Vec<LabelVector> = (0..n)
                .map(|_| LabelVector::from_joint_index(rng.below(8)))
                .collect();
            let joint = joint_confusion(&pred, &truth).unwrap();
            for task in InfectionTask::ALL {
                let direct = confusion(
                    &pred.iter().map(|p| p.get(task)).collect::<Vec<_>>(),
                    &truth.iter().map(|t| t.get(task)).collect::<Vec<_>>(),
                )
                .unwrap();
                assert_eq!(joint.marginal(task), direct);
            }
        }
    }

    #[test]
    fn length_mismatch_errors() {
        assert!(confusion(&[true], &[true, false]).is_err());
        assert!(joint_confusion(&[], &[LabelVector::new(true, false, false)]).is_err());
    }
}
