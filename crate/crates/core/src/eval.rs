//! Confusion-matrix metrics, per-side report slices, and ROC/AUC.
//!
//! Tinnitus (class 1) is the positive class. Metrics with a 0/0 denominator
//! report an explicit undefined marker (`None`, rendered `NA`) instead of a
//! fabricated 0 or 1.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::pipeline::{ClassLabel, Side};

/// Binary confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub false_neg: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.false_neg
    }

    fn count(&mut self, pred: ClassLabel, truth: ClassLabel) {
        match (pred, truth) {
            (ClassLabel::Tinnitus, ClassLabel::Tinnitus) => self.tp += 1,
            (ClassLabel::Control, ClassLabel::Control) => self.tn += 1,
            (ClassLabel::Tinnitus, ClassLabel::Control) => self.fp += 1,
            (ClassLabel::Control, ClassLabel::Tinnitus) => self.false_neg += 1,
        }
    }
}

/// Build confusion counts from parallel prediction/label lists.
pub fn confusion(preds: &[ClassLabel], labels: &[ClassLabel]) -> Result<Confusion> {
    if preds.len() != labels.len() {
        return Err(Error::EvalLengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut c = Confusion::default();
    for (&p, &t) in preds.iter().zip(labels) {
        c.count(p, t);
    }
    Ok(c)
}

/// The seven report columns. `None` marks an undefined (0/0) cell.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MetricSet {
    pub npv: Option<f64>,
    pub tnr: Option<f64>,
    pub n_f1: Option<f64>,
    pub ppv: Option<f64>,
    pub tpr: Option<f64>,
    pub p_f1: Option<f64>,
    pub acc: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

fn f1(precision: Option<f64>, recall: Option<f64>) -> Option<f64> {
    match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    }
}

/// NPV, TNR, N-F1, PPV, TPR, P-F1, and accuracy from confusion counts.
/// Total on any input, including all-zero counts.
pub fn metrics(c: &Confusion) -> MetricSet {
    let npv = ratio(c.tn, c.false_neg + c.tn);
    let tnr = ratio(c.tn, c.fp + c.tn);
    let ppv = ratio(c.tp, c.tp + c.fp);
    let tpr = ratio(c.tp, c.tp + c.false_neg);
    MetricSet {
        npv,
        tnr,
        n_f1: f1(npv, tnr),
        ppv,
        tpr,
        p_f1: f1(ppv, tpr),
        acc: ratio(c.tp + c.tn, c.total()),
    }
}

/// ROC curve by descending-threshold sweep (ties collapse into one step)
/// plus trapezoidal AUC. Requires both classes present.
pub fn roc_auc(scores: &[f64], labels: &[ClassLabel]) -> Result<(Vec<(f64, f64)>, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::EvalLengthMismatch {
            preds: scores.len(),
            labels: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l == ClassLabel::Tinnitus).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClassInput);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut points = vec![(0.0, 0.0)];
    let mut auc = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            match labels[order[i]] {
                ClassLabel::Tinnitus => tp += 1,
                ClassLabel::Control => fp += 1,
            }
            i += 1;
        }
        let prev = *points.last().unwrap();
        let point = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        auc += (point.0 - prev.0) * (point.1 + prev.1) / 2.0;
        points.push(point);
    }
    Ok((points, auc))
}

/// One evaluated signal, as written to the prediction file.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub subject_id: String,
    pub side: Side,
    pub true_label: ClassLabel,
    pub pred_label: ClassLabel,
    /// Probability assigned to the tinnitus class; feeds the ROC sweep.
    pub score: f64,
}

/// Confusion, metrics, and ROC for one side slice. A slice without both
/// classes present has no ROC; an empty slice reports all-undefined metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SliceEval {
    pub confusion: Confusion,
    pub metrics: MetricSet,
    pub roc_points: Vec<(f64, f64)>,
    pub auc: Option<f64>,
}

fn eval_slice(preds: &[&Prediction]) -> SliceEval {
    let mut confusion = Confusion::default();
    for p in preds {
        confusion.count(p.pred_label, p.true_label);
    }
    let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
    let labels: Vec<ClassLabel> = preds.iter().map(|p| p.true_label).collect();
    let (roc_points, auc) = match roc_auc(&scores, &labels) {
        Ok((points, auc)) => (points, Some(auc)),
        Err(_) => (Vec::new(), None),
    };
    SliceEval {
        confusion,
        metrics: metrics(&confusion),
        roc_points,
        auc,
    }
}

/// Full evaluation report: both ears together plus the left and right
/// slices, each evaluated independently.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub both: SliceEval,
    pub left: SliceEval,
    pub right: SliceEval,
}

pub fn slice_report(predictions: &[Prediction]) -> EvalReport {
    let all: Vec<&Prediction> = predictions.iter().collect();
    let left: Vec<&Prediction> = predictions.iter().filter(|p| p.side == Side::Left).collect();
    let right: Vec<&Prediction> = predictions.iter().filter(|p| p.side == Side::Right).collect();
    EvalReport {
        both: eval_slice(&all),
        left: eval_slice(&left),
        right: eval_slice(&right),
    }
}

fn fmt_metric(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.3}"),
        None => "NA".to_string(),
    }
}

impl EvalReport {
    /// Human-readable table with one row per slice and the seven metric
    /// columns plus AUC.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str("slice  npv    tnr    n_f1   ppv    tpr    p_f1   acc    auc    (tp/tn/fp/fn)\n");
        for (name, slice) in [("both", &self.both), ("left", &self.left), ("right", &self.right)] {
            let m = &slice.metrics;
            let c = &slice.confusion;
            out.push_str(&format!(
                "{name:<6} {:<6} {:<6} {:<6} {:<6} {:<6} {:<6} {:<6} {:<6} {}/{}/{}/{}\n",
                fmt_metric(m.npv),
                fmt_metric(m.tnr),
                fmt_metric(m.n_f1),
                fmt_metric(m.ppv),
                fmt_metric(m.tpr),
                fmt_metric(m.p_f1),
                fmt_metric(m.acc),
                fmt_metric(slice.auc),
                c.tp,
                c.tn,
                c.fp,
                c.false_neg,
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn labels(bits: &[u8]) -> Vec<ClassLabel> {
        bits.iter()
            .map(|&b| ClassLabel::from_index(b as usize).unwrap())
            .collect()
    }

    #[test]
    fn confusion_perfect_split() {
        let truth = labels(&[1, 1, 1, 0, 0, 0]);
        let c = confusion(&truth, &truth).unwrap();
        assert_eq!((c.tp, c.tn, c.fp, c.false_neg), (3, 3, 0, 0));
    }

    #[test]
    fn confusion_all_positive_predictions() {
        let preds = labels(&[1; 80]);
        let mut truth = labels(&[1; 40]);
        truth.extend(labels(&[0; 40]));
        let c = confusion(&preds, &truth).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.false_neg), (40, 40, 0, 0));
    }

    #[test]
    fn confusion_rejects_mismatch_and_empty() {
        assert!(matches!(
            confusion(&labels(&[1]), &labels(&[1, 0])),
            Err(Error::EvalLengthMismatch { .. })
        ));
        assert!(matches!(confusion(&[], &[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn reference_row_reproduced_from_rates() {
        // TPR 0.725 and TNR 0.750 on a 40/40 split back-solve to these
        // counts, which reproduce the full reference metric row.
        let c = Confusion {
            tp: 29,
            false_neg: 11,
            tn: 30,
            fp: 10,
        };
        let m = metrics(&c);
        assert_relative_eq!(m.npv.unwrap(), 30.0 / 41.0, epsilon = 1e-12);
        assert!((m.npv.unwrap() - 0.732).abs() < 5e-4);
        assert!((m.tnr.unwrap() - 0.750).abs() < 5e-4);
        assert!((m.n_f1.unwrap() - 0.741).abs() < 5e-4);
        assert!((m.ppv.unwrap() - 0.744).abs() < 5e-4);
        assert!((m.tpr.unwrap() - 0.725).abs() < 5e-4);
        assert!((m.p_f1.unwrap() - 0.734).abs() < 5e-4);
        assert!((m.acc.unwrap() - 0.738).abs() <= 5.01e-4);
    }

    #[test]
    fn perfect_confusion_gives_all_ones() {
        let c = Confusion {
            tp: 10,
            tn: 10,
            fp: 0,
            false_neg: 0,
        };
        let m = metrics(&c);
        for v in [m.npv, m.tnr, m.n_f1, m.ppv, m.tpr, m.p_f1, m.acc] {
            assert_eq!(v, Some(1.0));
        }
    }

    #[test]
    fn undefined_cells_are_none_not_fabricated() {
        // No positive predictions at all: PPV is 0/0.
        let c = Confusion {
            tp: 0,
            fp: 0,
            tn: 5,
            false_neg: 5,
        };
        let m = metrics(&c);
        assert_eq!(m.ppv, None);
        assert_eq!(m.p_f1, None);
        assert_eq!(m.npv, Some(0.5));
        assert_eq!(m.tnr, Some(1.0));
        assert_eq!(m.acc, Some(0.5));

        let empty = metrics(&Confusion::default());
        assert_eq!(empty.acc, None);
        assert_eq!(empty.npv, None);
    }

    #[test]
    fn complement_symmetry() {
        let c = Confusion {
            tp: 13,
            tn: 22,
            fp: 7,
            false_neg: 4,
        };
        // Swapping classes and predictions swaps positive and negative roles.
        let swapped = Confusion {
            tp: c.tn,
            tn: c.tp,
            fp: c.false_neg,
            false_neg: c.fp,
        };
        let m = metrics(&c);
        let s = metrics(&swapped);
        assert_eq!(m.ppv, s.npv);
        assert_eq!(m.tpr, s.tnr);
        assert_eq!(m.p_f1, s.n_f1);
        assert_eq!(m.acc, s.acc);
    }

    #[test]
    fn roc_perfect_separation() {
        let scores = vec![0.9, 0.8, 0.7, 0.2, 0.1];
        let truth = labels(&[1, 1, 1, 0, 0]);
        let (points, auc) = roc_auc(&scores, &truth).unwrap();
        assert_eq!(auc, 1.0);
        assert_eq!(points.first(), Some(&(0.0, 0.0)));
        assert_eq!(points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn roc_rejects_single_class() {
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &labels(&[1, 1])),
            Err(Error::SingleClassInput)
        ));
    }

    /// Fraction of (positive, negative) pairs ranked correctly, ties half.
    fn mann_whitney(scores: &[f64], truth: &[ClassLabel]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &li) in truth.iter().enumerate() {
            if li != ClassLabel::Tinnitus {
                continue;
            }
            for (j, &lj) in truth.iter().enumerate() {
                if lj != ClassLabel::Control {
                    continue;
                }
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_equals_pairwise_statistic_with_ties() {
        // Quantized scores force plenty of ties.
        let mut rng_state = 12345u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng_state >> 33) as f64 / (1u64 << 31) as f64
        };
        for _ in 0..20 {
            let n = 50 + (next() * 100.0) as usize;
            let scores: Vec<f64> = (0..n).map(|_| (next() * 8.0).floor() / 8.0).collect();
            let truth: Vec<ClassLabel> = (0..n)
                .map(|_| if next() > 0.5 { ClassLabel::Tinnitus } else { ClassLabel::Control })
                .collect();
            let pos = truth.iter().filter(|&&l| l == ClassLabel::Tinnitus).count();
            if pos == 0 || pos == n {
                continue;
            }
            let (_, auc) = roc_auc(&scores, &truth).unwrap();
            assert!((auc - mann_whitney(&scores, &truth)).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn auc_invariant_under_monotone_transform(
            raw in prop::collection::vec((0.0f64..1.0, 0usize..2), 4..60)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| (s * 16.0).floor() / 16.0).collect();
            let truth: Vec<ClassLabel> =
                raw.iter().map(|(_, l)| ClassLabel::from_index(*l).unwrap()).collect();
            let pos = truth.iter().filter(|&&l| l == ClassLabel::Tinnitus).count();
            prop_assume!(pos > 0 && pos < truth.len());
            let (points, auc) = roc_auc(&scores, &truth).unwrap();
            // exp is strictly increasing; curve and area must be identical.
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 0.5).collect();
            let (points_t, auc_t) = roc_auc(&transformed, &truth).unwrap();
            prop_assert_eq!(points, points_t);
            prop_assert_eq!(auc, auc_t);
        }

        #[test]
        fn roc_points_monotone(raw in prop::collection::vec((0.0f64..1.0, 0usize..2), 4..60)) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s).collect();
            let truth: Vec<ClassLabel> =
                raw.iter().map(|(_, l)| ClassLabel::from_index(*l).unwrap()).collect();
            let pos = truth.iter().filter(|&&l| l == ClassLabel::Tinnitus).count();
            prop_assume!(pos > 0 && pos < truth.len());
            let (points, auc) = roc_auc(&scores, &truth).unwrap();
            prop_assert_eq!(points[0], (0.0, 0.0));
            prop_assert_eq!(*points.last().unwrap(), (1.0, 1.0));
            for w in points.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
            prop_assert!((0.0..=1.0).contains(&auc));
        }
    }

    fn prediction(side: Side, truth: u8, pred: u8, score: f64) -> Prediction {
        Prediction {
            subject_id: "s".into(),
            side,
            true_label: ClassLabel::from_index(truth as usize).unwrap(),
            pred_label: ClassLabel::from_index(pred as usize).unwrap(),
            score,
        }
    }

    #[test]
    fn slices_partition_the_confusion() {
        let preds = vec![
            prediction(Side::Left, 1, 1, 0.9),
            prediction(Side::Left, 0, 1, 0.8),
            prediction(Side::Right, 1, 0, 0.2),
            prediction(Side::Right, 0, 0, 0.1),
            prediction(Side::Left, 0, 0, 0.3),
        ];
        let report = slice_report(&preds);
        assert_eq!(report.left.confusion.total(), 3);
        assert_eq!(report.right.confusion.total(), 2);
        let b = &report.both.confusion;
        let l = &report.left.confusion;
        let r = &report.right.confusion;
        assert_eq!(b.tp, l.tp + r.tp);
        assert_eq!(b.tn, l.tn + r.tn);
        assert_eq!(b.fp, l.fp + r.fp);
        assert_eq!(b.false_neg, l.false_neg + r.false_neg);
    }

    #[test]
    fn empty_slice_reports_undefined() {
        let preds = vec![
            prediction(Side::Left, 1, 1, 0.9),
            prediction(Side::Left, 0, 0, 0.1),
        ];
        let report = slice_report(&preds);
        assert_eq!(report.right.metrics.acc, None);
        assert_eq!(report.right.auc, None);
        assert!(report.right.roc_points.is_empty());
        assert_eq!(report.left.metrics.acc, Some(1.0));
        assert_eq!(report.both.metrics.acc, Some(1.0));
    }

    #[test]
    fn table_renders_na_for_undefined() {
        let preds = vec![
            prediction(Side::Left, 1, 1, 0.9),
            prediction(Side::Left, 1, 0, 0.1),
        ];
        let table = slice_report(&preds).render_table();
        assert!(table.contains("NA"));
        assert!(table.lines().count() >= 4);
    }
}
