use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub overall_accuracy: Real,
    /// Mean over classes that have at least one sample.
    pub mean_class_accuracy: Real,
    /// `None` for classes without samples.
    pub per_class_accuracy: Vec<Option<Real>>,
    pub miou: Option<Real>,
    pub per_shape_iou: Vec<Real>,
}

impl MetricsReport {
    /// `metric,value` rows; per-class rows are left empty for absent classes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        out += &format!("overall_accuracy,{}\n", self.overall_accuracy);
        out += &format!("mean_class_accuracy,{}\n", self.mean_class_accuracy);
        for (c, a) in self.per_class_accuracy.iter().enumerate() {
            out += &format!("class_{c}_accuracy,{}\n", a.map(|a| a.to_string()).unwrap_or_default());
        }
        if let Some(m) = self.miou {
            out += &format!("miou,{m}\n");
        }
        out
    }
}

pub fn classification_metrics(predicted: &[usize], truth: &[usize], num_classes: usize) -> Result<MetricsReport> {
    if truth.is_empty() {
        return Err(Error::param("cannot score an empty dataset"));
    }
    if predicted.len() != truth.len() {
        return Err(Error::dim("prediction and label counts differ"));
    }
    let classes = num_classes.max(truth.iter().max().map_or(0, |m| m + 1));
    let mut total = vec![0usize; classes];
    let mut right = vec![0usize; classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        total[t] += 1;
        right[t] += usize::from(p == t);
    }
    let per_class: Vec<Option<Real>> = total
        .iter()
        .zip(&right)
        .map(|(&n, &r)| (n > 0).then(|| r as Real / n as Real))
        .collect();
    let present: Vec<Real> = per_class.iter().flatten().copied().collect();
    Ok(MetricsReport {
        overall_accuracy: right.iter().sum::<usize>() as Real / truth.len() as Real,
        mean_class_accuracy: present.iter().sum::<Real>() / present.len() as Real,
        per_class_accuracy: per_class,
        miou: None,
        per_shape_iou: Vec::new(),
    })
}

/// IoU of one shape: the mean over the category's parts of
/// `|pred ∩ true| / |pred ∪ true|`, counting a part absent from both as 1.
pub fn shape_iou(predicted: &[usize], truth: &[usize], parts: &[usize]) -> Result<Real> {
    if predicted.len() != truth.len() {
        return Err(Error::dim("prediction and label counts differ"));
    }
    if parts.is_empty() {
        return Err(Error::Data("category has no parts".into()));
    }
    if let Some(bad) = predicted.iter().chain(truth).find(|l| !parts.contains(l)) {
        return Err(Error::Data(format!("label {bad} is outside the category's parts {parts:?}")));
    }
    let mut sum = 0.0;
    for &part in parts {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&p, &t) in predicted.iter().zip(truth) {
            let (a, b) = (p == part, t == part);
            inter += usize::from(a && b);
            union += usize::from(a || b);
        }
        sum += if union == 0 { 1.0 } else { inter as Real / union as Real };
    }
    Ok(sum / parts.len() as Real)
}

/// Mean shape IoU over all shapes; `overall_accuracy` is point accuracy.
pub fn miou_shapenet(
    predicted: &[Vec<usize>],
    truth: &[Vec<usize>],
    categories: &[usize],
    part_sets: &[Vec<usize>],
) -> Result<MetricsReport> {
    if truth.is_empty() {
        return Err(Error::param("cannot score an empty dataset"));
    }
    if predicted.len() != truth.len() || categories.len() != truth.len() {
        return Err(Error::dim("prediction, label and category counts differ"));
    }
    let mut ious = Vec::with_capacity(truth.len());
    let (mut right, mut points) = (0usize, 0usize);
    for ((p, t), &c) in predicted.iter().zip(truth).zip(categories) {
        let parts = part_sets.get(c).ok_or_else(|| Error::Data(format!("unknown category {c}")))?;
        ious.push(shape_iou(p, t, parts)?);
        right += p.iter().zip(t).filter(|(a, b)| a == b).count();
        points += t.len();
    }
    let miou = ious.iter().sum::<Real>() / ious.len() as Real;
    let acc = if points == 0 { 0.0 } else { right as Real / points as Real };
    Ok(MetricsReport {
        overall_accuracy: acc,
        mean_class_accuracy: acc,
        per_class_accuracy: Vec::new(),
        miou: Some(miou),
        per_shape_iou: ious,
    })
}
