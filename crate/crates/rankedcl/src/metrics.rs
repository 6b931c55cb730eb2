//! Detection AP, nearest-centroid classification, and ROC/AUROC for OOD.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{dot, Matrix};

/// Axis-aligned bounding box with class label and (for predictions) a score.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub class: String,
    pub score: Option<f64>,
}

impl BoundingBox {
    pub fn new(
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        class: impl Into<String>,
        score: Option<f64>,
    ) -> Result<Self> {
        if !(x_min < x_max) || !(y_min < y_max) {
            return Err(Error::Validation(format!(
                "invalid box [{x_min}, {y_min}, {x_max}, {y_max}]"
            )));
        }
        Ok(BoundingBox { x_min, y_min, x_max, y_max, class: class.into(), score })
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// Intersection over union, in [0, 1].
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    inter / union
}

/// Per-image detections: (image id, box). Matching never crosses images.
pub type Detection = (usize, BoundingBox);

/// 101-point interpolated AP at one IoU threshold: greedy matching in
/// descending score order, each ground truth matched at most once, then
/// mean over classes present in the ground truth.
pub fn average_precision(
    preds: &[Detection],
    gts: &[Detection],
    iou_threshold: f64,
) -> Result<f64> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::Validation(format!("iou threshold {iou_threshold} not in (0,1]")));
    }
    if gts.is_empty() {
        return Err(Error::UndefinedMetric("AP over empty ground truth".into()));
    }
    let mut classes: Vec<&str> = gts.iter().map(|(_, b)| b.class.as_str()).collect();
    classes.sort_unstable();
    classes.dedup();

    let mut sum = 0.0;
    for class in &classes {
        sum += class_ap(preds, gts, class, iou_threshold);
    }
    Ok(sum / classes.len() as f64)
}

fn class_ap(preds: &[Detection], gts: &[Detection], class: &str, thr: f64) -> f64 {
    let class_gts: Vec<&Detection> = gts.iter().filter(|(_, b)| b.class == class).collect();
    let n_gt = class_gts.len();
    let mut class_preds: Vec<(usize, &Detection)> = preds
        .iter()
        .enumerate()
        .filter(|(_, (_, b))| b.class == class)
        .map(|(i, d)| (i, d))
        .collect();
    if class_preds.is_empty() {
        return 0.0;
    }
    // descending score, insertion order breaks ties
    class_preds.sort_by(|(ia, (_, a)), (ib, (_, b))| {
        let sa = a.score.unwrap_or(0.0);
        let sb = b.score.unwrap_or(0.0);
        sb.partial_cmp(&sa).unwrap().then(ia.cmp(ib))
    });

    let mut matched = vec![false; n_gt];
    let mut tp = Vec::with_capacity(class_preds.len());
    for (_, (img, pbox)) in &class_preds {
        let mut best: Option<(usize, f64)> = None;
        for (gi, (gimg, gbox)) in class_gts.iter().enumerate() {
            if gimg != img || matched[gi] {
                continue;
            }
            let v = iou(pbox, gbox);
            if v >= thr && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((gi, v));
            }
        }
        match best {
            Some((gi, _)) => {
                matched[gi] = true;
                tp.push(true);
            }
            None => tp.push(false),
        }
    }

    // precision-recall points along the ranked list
    let mut points = Vec::with_capacity(tp.len());
    let mut cum_tp = 0usize;
    for (k, &hit) in tp.iter().enumerate() {
        if hit {
            cum_tp += 1;
        }
        let precision = cum_tp as f64 / (k + 1) as f64;
        let recall = cum_tp as f64 / n_gt as f64;
        points.push((recall, precision));
    }

    // 101-point interpolation: p(r) = max precision at recall >= r
    let mut ap = 0.0;
    for step in 0..=100 {
        let r = step as f64 / 100.0;
        let p = points
            .iter()
            .filter(|(rec, _)| *rec >= r - 1e-12)
            .map(|(_, prec)| *prec)
            .fold(0.0, f64::max);
        ap += p;
    }
    ap / 101.0
}

/// COCO-style summary: AP = mean over IoU thresholds 0.50:0.05:0.95,
/// plus AP50 and AP75, all reported x100.
pub fn coco_ap(preds: &[Detection], gts: &[Detection]) -> Result<(f64, f64, f64)> {
    let thresholds: Vec<f64> = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
    let mut sum = 0.0;
    let mut ap50 = 0.0;
    let mut ap75 = 0.0;
    for &t in &thresholds {
        let v = average_precision(preds, gts, t)?;
        sum += v;
        if (t - 0.5).abs() < 1e-9 {
            ap50 = v;
        }
        if (t - 0.75).abs() < 1e-9 {
            ap75 = v;
        }
    }
    Ok((100.0 * sum / thresholds.len() as f64, 100.0 * ap50, 100.0 * ap75))
}

/// L2-normalized per-class mean embeddings. Returns (centroids, class order);
/// classes ordered by first appearance is too fragile for comparisons, so
/// they are sorted.
pub fn class_centroids(z: &Matrix, labels: &[String]) -> Result<(Matrix, Vec<String>)> {
    if z.rows() != labels.len() {
        return Err(Error::Shape(format!("{} rows vs {} labels", z.rows(), labels.len())));
    }
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.is_empty() {
        return Err(Error::UndefinedMetric("centroids of an empty set".into()));
    }
    let mut rows = Vec::with_capacity(classes.len());
    for class in &classes {
        let mut acc = vec![0.0; z.cols()];
        let mut count = 0usize;
        for (i, l) in labels.iter().enumerate() {
            if l == class {
                for (a, v) in acc.iter_mut().zip(z.row(i)) {
                    *a += v;
                }
                count += 1;
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::Degenerate(format!(
                "class '{class}' ({count} samples) has zero-norm mean"
            )));
        }
        rows.push(acc.iter().map(|v| v / norm).collect());
    }
    Ok((Matrix::from_rows(&rows)?, classes))
}

/// Fraction of rows whose nearest centroid (by cosine similarity, ties to
/// the lowest class index) carries the correct label.
pub fn nearest_centroid_accuracy(
    z: &Matrix,
    labels: &[String],
    centroids: &Matrix,
    centroid_classes: &[String],
) -> Result<f64> {
    if z.rows() != labels.len() {
        return Err(Error::Shape(format!("{} rows vs {} labels", z.rows(), labels.len())));
    }
    if z.rows() == 0 {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    let mut correct = 0usize;
    for i in 0..z.rows() {
        let mut best = 0usize;
        let mut best_sim = f64::NEG_INFINITY;
        for c in 0..centroids.rows() {
            let s = dot(z.row(i), centroids.row(c));
            if s > best_sim {
                best_sim = s;
                best = c;
            }
        }
        if centroid_classes[best] == labels[i] {
            correct += 1;
        }
    }
    Ok(correct as f64 / z.rows() as f64)
}

/// OOD score of one embedding: negative max cosine similarity to any known
/// class centroid. Higher = more out-of-distribution.
pub fn ood_score(z: &[f64], centroids: &Matrix) -> f64 {
    assert!(centroids.rows() > 0, "need at least one centroid");
    -(0..centroids.rows())
        .map(|c| dot(z, centroids.row(c)))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// ROC curve as (false positive rate, true positive rate) points plus the
/// trapezoidal AUROC. OOD samples are the positive population.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RocCurve {
    pub auroc: f64,
    pub roc: Vec<(f64, f64)>,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (fpr, tpr) in &self.roc {
            out.push_str(&format!("{fpr},{tpr}\n"));
        }
        out
    }
}

/// Threshold sweep over unique score values, ties stepped simultaneously;
/// AUROC by the trapezoidal rule.
pub fn roc_auroc(scores: &[f64], is_ood: &[bool]) -> Result<RocCurve> {
    if scores.len() != is_ood.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} flags",
            scores.len(),
            is_ood.len()
        )));
    }
    let n_pos = is_ood.iter().filter(|&&b| b).count();
    let n_neg = is_ood.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "ROC needs both an OOD and an in-distribution population".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));

    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut auroc = 0.0;
    let mut i = 0;
    while i < order.len() {
        // consume the whole tie group at once
        let s = scores[order[i]];
        let (mut dtp, mut dfp) = (0usize, 0usize);
        while i < order.len() && scores[order[i]] == s {
            if is_ood[order[i]] {
                dtp += 1;
            } else {
                dfp += 1;
            }
            i += 1;
        }
        let (prev_fpr, prev_tpr) = *points.last().expect("non-empty");
        tp += dtp;
        fp += dfp;
        let fpr = fp as f64 / n_neg as f64;
        let tpr = tp as f64 / n_pos as f64;
        auroc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        points.push((fpr, tpr));
    }
    Ok(RocCurve { auroc, roc: points })
}

/// Evaluation report written by the CLI.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricReport {
    Detection { ap: f64, ap50: f64, ap75: f64 },
    Classification { accuracy: f64 },
    Ood { auroc: f64, roc: Vec<(f64, f64)> },
}
