use serde::Serialize;

use crate::error::{Error, Result};

/// Rows are ground truth, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    ignore_label: u32,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize, ignore_label: u32) -> Self {
        Self {
            classes,
            ignore_label,
            counts: vec![0; classes * classes],
        }
    }

    /// Builds a matrix from explicit counts, row-major.
    pub fn from_counts(rows: &[Vec<u64>], ignore_label: u32) -> Result<Self> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Shape("confusion matrix must be square".into()));
        }
        Ok(Self {
            classes: c,
            ignore_label,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn accumulate(&mut self, pred: u32, gt: u32) -> Result<()> {
        if gt == self.ignore_label {
            return Ok(());
        }
        let c = self.classes as u32;
        if pred >= c || gt >= c {
            return Err(Error::Shape(format!("class pair ({gt}, {pred}) outside {c} classes")));
        }
        self.counts[(gt * c + pred) as usize] += 1;
        Ok(())
    }

    pub fn accumulate_all(&mut self, pred: &[u32], gt: &[u32]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::Shape(format!("{} predictions for {} labels", pred.len(), gt.len())));
        }
        pred.iter().zip(gt).try_for_each(|(p, g)| self.accumulate(*p, *g))
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape("cannot merge matrices of different size".into()));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn gt_count(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    fn pred_count(&self, c: usize) -> u64 {
        (0..self.classes).map(|g| self.get(g, c)).sum()
    }

    /// `TP / (TP + FP + FN)`; `None` when the class appears in neither
    /// ground truth nor predictions.
    pub fn iou_per_class(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c);
                let denom = self.gt_count(c) + self.pred_count(c) - tp;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Recall per class; `None` for classes absent from the ground truth.
    pub fn recall_per_class(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let n = self.gt_count(c);
                (n > 0).then(|| self.get(c, c) as f64 / n as f64)
            })
            .collect()
    }

    pub fn summary(&self) -> Result<Summary> {
        let total = self.total();
        if total == 0 {
            return Err(Error::Empty("confusion matrix has no counts".into()));
        }
        let iou = self.iou_per_class();
        let defined: Vec<f64> = iou.iter().flatten().copied().collect();
        let recall: Vec<f64> = self.recall_per_class().into_iter().flatten().collect();
        let wiou = iou
            .iter()
            .enumerate()
            .filter_map(|(c, v)| v.map(|v| v * self.gt_count(c) as f64 / total as f64))
            .sum();
        Ok(Summary {
            miou: defined.iter().sum::<f64>() / defined.len() as f64,
            macc: recall.iter().sum::<f64>() / recall.len() as f64,
            wiou,
            points: total,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub miou: f64,
    pub macc: f64,
    pub wiou: f64,
    pub points: u64,
}
