use std::fmt::Write as _;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("grids of {pred} and {gt} voxels cannot be compared")]
    Shape { pred: usize, gt: usize },
    #[error("class {class} outside 0..{k}")]
    Class { class: u8, k: usize },
}

fn check(pred: usize, gt: usize, mask: Option<&[bool]>) -> Result<(), MetricsError> {
    if pred != gt || mask.is_some_and(|m| m.len() != gt) {
        return Err(MetricsError::Shape { pred, gt });
    }
    Ok(())
}

fn ratio(inter: u64, union: u64) -> f64 {
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// `|pred ∧ gt| / |pred ∨ gt|` over voxels where `mask` holds (all when
/// `None`); an empty union scores 1.
pub fn compute_iou(pred: &[bool], gt: &[bool], mask: Option<&[bool]>) -> Result<f64, MetricsError> {
    let mut c = MetricCounts::new(2);
    c.add_binary(pred, gt, mask)?;
    Ok(c.sc_iou())
}

/// Per-class IoU over classes `1..k` (`None` for classes absent from both
/// grids) and their mean.
pub fn compute_miou(
    pred: &[u8],
    gt: &[u8],
    k: usize,
    mask: Option<&[bool]>,
) -> Result<(Vec<Option<f64>>, f64), MetricsError> {
    let mut c = MetricCounts::new(k);
    c.add_semantic(pred, gt, mask)?;
    Ok((c.per_class_iou(), c.miou()))
}

/// Pooled intersection and union counts over any number of grids.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricCounts {
    pub classes: usize,
    pub sc_inter: u64,
    pub sc_union: u64,
    pub class_inter: Vec<u64>,
    pub class_union: Vec<u64>,
    pub occluded_hit: u64,
    pub occluded_total: u64,
}

impl MetricCounts {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            sc_inter: 0,
            sc_union: 0,
            class_inter: vec![0; classes],
            class_union: vec![0; classes],
            occluded_hit: 0,
            occluded_total: 0,
        }
    }

    pub fn add_binary(&mut self, pred: &[bool], gt: &[bool], mask: Option<&[bool]>) -> Result<(), MetricsError> {
        check(pred.len(), gt.len(), mask)?;
        for i in 0..gt.len() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            self.sc_inter += u64::from(pred[i] && gt[i]);
            self.sc_union += u64::from(pred[i] || gt[i]);
        }
        Ok(())
    }

    /// Semantic counts; class 0 is free space.
    pub fn add_semantic(&mut self, pred: &[u8], gt: &[u8], mask: Option<&[bool]>) -> Result<(), MetricsError> {
        check(pred.len(), gt.len(), mask)?;
        for &c in pred.iter().chain(gt) {
            if c as usize >= self.classes {
                return Err(MetricsError::Class { class: c, k: self.classes });
            }
        }
        for i in 0..gt.len() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let (p, g) = (pred[i] as usize, gt[i] as usize);
            if p == g {
                if p != 0 {
                    self.class_inter[p] += 1;
                    self.class_union[p] += 1;
                }
            } else {
                if p != 0 {
                    self.class_union[p] += 1;
                }
                if g != 0 {
                    self.class_union[g] += 1;
                }
            }
        }
        Ok(())
    }

    /// Occupied ground-truth voxels no camera sees, and how many of them
    /// are predicted occupied.
    pub fn add_occluded(&mut self, pred: &[bool], gt: &[bool], visible: &[bool]) -> Result<(), MetricsError> {
        check(pred.len(), gt.len(), Some(visible))?;
        for i in 0..gt.len() {
            if gt[i] && !visible[i] {
                self.occluded_total += 1;
                self.occluded_hit += u64::from(pred[i]);
            }
        }
        Ok(())
    }

    pub fn sc_iou(&self) -> f64 {
        ratio(self.sc_inter, self.sc_union)
    }

    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (1..self.classes)
            .map(|c| (self.class_union[c] > 0).then(|| ratio(self.class_inter[c], self.class_union[c])))
            .collect()
    }

    pub fn miou(&self) -> f64 {
        let present: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if present.is_empty() {
            1.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        }
    }

    pub fn occluded_recall(&self) -> f64 {
        ratio(self.occluded_hit, self.occluded_total)
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport {
            sc_iou: self.sc_iou(),
            per_class_iou: self.per_class_iou(),
            miou: self.miou(),
            occluded_recall: self.occluded_recall(),
            seconds: 0.0,
        }
    }
}

/// Evaluation summary. `seconds` is wall time and is not part of the CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub sc_iou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub occluded_recall: f64,
    pub seconds: f64,
}

impl MetricsReport {
    pub fn csv_header(classes: usize) -> String {
        let mut h = String::from("sc_iou,miou,occluded_recall");
        for c in 1..classes {
            let _ = write!(h, ",iou_class_{c}");
        }
        h
    }

    /// Fixed six-decimal row; absent classes are empty fields.
    pub fn csv_row(&self) -> String {
        let mut r = format!("{:.6},{:.6},{:.6}", self.sc_iou, self.miou, self.occluded_recall);
        for c in &self.per_class_iou {
            match c {
                Some(v) => {
                    let _ = write!(r, ",{v:.6}");
                }
                None => r.push(','),
            }
        }
        r
    }
}
