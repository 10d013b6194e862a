//! Segmentation evaluation: confusion counts and the metric set derived
//! from them, plus a streaming accumulator for whole-split evaluation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::loss::{CE_CLAMP, DICE_EPS};
use crate::math::Element;
use crate::model::predict_mask;
use crate::tensor::{LabelMap, Tensor};

/// Per-class pixel counts from comparing two label maps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub num_classes: usize,
    pub true_positives: Vec<u64>,
    pub false_positives: Vec<u64>,
    pub false_negatives: Vec<u64>,
    pub true_negatives: Vec<u64>,
    pub total_pixels: u64,
}

impl ConfusionCounts {
    pub fn new(num_classes: usize) -> Self {
        ConfusionCounts {
            num_classes,
            true_positives: vec![0; num_classes],
            false_positives: vec![0; num_classes],
            false_negatives: vec![0; num_classes],
            true_negatives: vec![0; num_classes],
            total_pixels: 0,
        }
    }

    /// Adds every pixel of a label-map pair to the counts.
    pub fn accumulate(&mut self, y_true: &LabelMap, y_pred: &LabelMap) -> Result<()> {
        if (y_true.n, y_true.h, y_true.w) != (y_pred.n, y_pred.h, y_pred.w) {
            return Err(Error::shape(
                "confusion_counts",
                format!(
                    "label maps differ: {}x{}x{} vs {}x{}x{}",
                    y_true.n, y_true.h, y_true.w, y_pred.n, y_pred.h, y_pred.w
                ),
            ));
        }
        for (&t, &p) in y_true.data.iter().zip(&y_pred.data) {
            let (t, p) = (t as usize, p as usize);
            if t >= self.num_classes || p >= self.num_classes {
                return Err(Error::contract(
                    "confusion_counts",
                    format!("label out of range: true {t}, predicted {p}, {} classes", self.num_classes),
                ));
            }
            if t == p {
                self.true_positives[t] += 1;
            } else {
                self.false_negatives[t] += 1;
                self.false_positives[p] += 1;
            }
            self.total_pixels += 1;
        }
        Ok(())
    }

    /// Derives the per-class true negatives from the identity
    /// `TP + FP + FN + TN = total`; call once accumulation is done.
    fn finalized(mut self) -> Self {
        for c in 0..self.num_classes {
            self.true_negatives[c] = self.total_pixels
                - self.true_positives[c]
                - self.false_positives[c]
                - self.false_negatives[c];
        }
        self
    }

    /// Micro-averaged sensitivity `(TP + eps) / (TP + FN + eps)` with counts
    /// summed across classes.
    pub fn sensitivity(&self, eps: f64) -> f64 {
        let tp: u64 = self.true_positives.iter().sum();
        let fn_: u64 = self.false_negatives.iter().sum();
        (tp as f64 + eps) / ((tp + fn_) as f64 + eps)
    }

    /// Micro-averaged specificity `(TN + eps) / (TN + FP + eps)`.
    pub fn specificity(&self, eps: f64) -> f64 {
        let tn: u64 = self.true_negatives.iter().sum();
        let fp: u64 = self.false_positives.iter().sum();
        (tn as f64 + eps) / ((tn + fp) as f64 + eps)
    }

    /// Fraction of pixels whose predicted class equals the true class.
    pub fn accuracy(&self) -> f64 {
        if self.total_pixels == 0 {
            return 0.0;
        }
        let tp: u64 = self.true_positives.iter().sum();
        tp as f64 / self.total_pixels as f64
    }

    /// Mean per-class `TP / (TP + FP + FN)`, excluding classes absent from
    /// both maps.
    pub fn mean_iou(&self) -> Result<f64> {
        let mut sum = 0.0;
        let mut classes = 0usize;
        for c in 0..self.num_classes {
            let denom = self.true_positives[c] + self.false_positives[c] + self.false_negatives[c];
            if denom == 0 {
                continue;
            }
            sum += self.true_positives[c] as f64 / denom as f64;
            classes += 1;
        }
        if classes == 0 {
            return Err(Error::contract(
                "mean_iou",
                "every class is absent from both label maps",
            ));
        }
        Ok(sum / classes as f64)
    }

    /// Per-class hard Dice `(2 TP + eps) / (2 TP + FP + FN + eps)`.
    pub fn per_class_dice(&self, eps: f64) -> Vec<f64> {
        (0..self.num_classes)
            .map(|c| {
                let tp = self.true_positives[c] as f64;
                let fp = self.false_positives[c] as f64;
                let fn_ = self.false_negatives[c] as f64;
                (2.0 * tp + eps) / (2.0 * tp + fp + fn_ + eps)
            })
            .collect()
    }
}

/// Exact counts from an exhaustive pixel scan of two label maps.
pub fn confusion_counts(
    y_true: &LabelMap,
    y_pred: &LabelMap,
    num_classes: usize,
) -> Result<ConfusionCounts> {
    let mut counts = ConfusionCounts::new(num_classes);
    counts.accumulate(y_true, y_pred)?;
    Ok(counts.finalized())
}

fn counts_from_tensors<E: Element>(
    y_true: &Tensor<E>,
    y_pred: &Tensor<E>,
) -> Result<ConfusionCounts> {
    let (_, c, _, _) = y_true.dims4("confusion_counts")?;
    let t = predict_mask(y_true)?;
    let p = predict_mask(y_pred)?;
    confusion_counts(&t, &p, c)
}

/// Micro-averaged sensitivity of argmax-thresholded predictions.
pub fn sensitivity<E: Element>(y_true: &Tensor<E>, y_pred: &Tensor<E>, eps: f64) -> Result<f64> {
    Ok(counts_from_tensors(y_true, y_pred)?.sensitivity(eps))
}

/// Micro-averaged specificity of argmax-thresholded predictions.
pub fn specificity<E: Element>(y_true: &Tensor<E>, y_pred: &Tensor<E>, eps: f64) -> Result<f64> {
    Ok(counts_from_tensors(y_true, y_pred)?.specificity(eps))
}

/// Mean IoU over the classes present in at least one map.
pub fn mean_iou(y_true: &LabelMap, y_pred: &LabelMap, num_classes: usize) -> Result<f64> {
    confusion_counts(y_true, y_pred, num_classes)?.mean_iou()
}

/// Fraction of pixels whose predicted argmax matches the true class.
pub fn categorical_accuracy<E: Element>(y_true: &Tensor<E>, y_pred: &Tensor<E>) -> Result<f64> {
    Ok(counts_from_tensors(y_true, y_pred)?.accuracy())
}

/// The evaluation metric set for one data split.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// Global soft Dice over every prediction of the split.
    pub dice: f64,
    pub mean_iou: f64,
    pub categorical_accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    /// Hard per-class Dice from the confusion counts.
    pub per_class_dice: Vec<f64>,
}

/// Streams batches of (one-hot truth, predicted probabilities) and derives
/// the split-level metrics and combined loss, independent of batch sizing.
pub struct EvalAccumulator {
    counts: ConfusionCounts,
    intersection: f64,
    true_sum: f64,
    pred_sum: f64,
    ce_sum: f64,
    pixels: u64,
}

impl EvalAccumulator {
    pub fn new(num_classes: usize) -> Self {
        EvalAccumulator {
            counts: ConfusionCounts::new(num_classes),
            intersection: 0.0,
            true_sum: 0.0,
            pred_sum: 0.0,
            ce_sum: 0.0,
            pixels: 0,
        }
    }

    pub fn push<E: Element>(&mut self, y_true: &Tensor<E>, y_pred: &Tensor<E>) -> Result<()> {
        if y_true.shape() != y_pred.shape() {
            return Err(Error::shape(
                "evaluate",
                format!("shapes differ: {:?} vs {:?}", y_true.shape(), y_pred.shape()),
            ));
        }
        let (n, _, h, w) = y_true.dims4("evaluate")?;
        for (&t, &p) in y_true.data().iter().zip(y_pred.data()) {
            let (t, p) = (t.to_f64(), p.to_f64());
            self.intersection += t * p;
            self.true_sum += t;
            self.pred_sum += p;
            self.ce_sum -= t * crate::math::ln(p + CE_CLAMP);
        }
        self.pixels += (n * h * w) as u64;
        let t_labels = predict_mask(y_true)?;
        let p_labels = predict_mask(y_pred)?;
        self.counts.accumulate(&t_labels, &p_labels)
    }

    /// Global soft Dice of everything pushed so far.
    pub fn soft_dice(&self) -> f64 {
        (2.0 * self.intersection + DICE_EPS) / (self.true_sum + self.pred_sum + DICE_EPS)
    }

    /// Combined loss (mean cross-entropy plus `1 - dice`) over the split.
    pub fn combined_loss(&self) -> f64 {
        let ce = if self.pixels == 0 { 0.0 } else { self.ce_sum / self.pixels as f64 };
        ce + (1.0 - self.soft_dice())
    }

    pub fn report(&self) -> Result<MetricsReport> {
        let counts = self.counts.clone().finalized();
        Ok(MetricsReport {
            dice: self.soft_dice(),
            mean_iou: counts.mean_iou()?,
            categorical_accuracy: counts.accuracy(),
            sensitivity: counts.sensitivity(DICE_EPS),
            specificity: counts.specificity(DICE_EPS),
            per_class_dice: counts.per_class_dice(DICE_EPS),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedRng;

    fn labels(n: usize, h: usize, w: usize, data: &[u8]) -> LabelMap {
        LabelMap::new(n, h, w, data.to_vec()).unwrap()
    }

    fn one_hot(map: &LabelMap, c: usize) -> Tensor<f64> {
        let hw = map.h * map.w;
        let mut t = Tensor::zeros(&[map.n, c, map.h, map.w]);
        for ni in 0..map.n {
            for p in 0..hw {
                let class = map.data[ni * hw + p] as usize;
                t.data_mut()[(ni * c + class) * hw + p] = 1.0;
            }
        }
        t
    }

    #[test]
    fn identical_maps_have_no_errors() {
        let t = labels(1, 2, 2, &[0, 1, 2, 3]);
        let counts = confusion_counts(&t, &t, 4).unwrap();
        assert!(counts.false_positives.iter().all(|&v| v == 0));
        assert!(counts.false_negatives.iter().all(|&v| v == 0));
        assert_eq!(counts.true_positives, vec![1, 1, 1, 1]);
        assert_eq!(counts.true_negatives, vec![3, 3, 3, 3]);
    }

    #[test]
    fn single_disagreement_lands_in_the_right_cells() {
        let t = labels(1, 1, 1, &[1]);
        let p = labels(1, 1, 1, &[2]);
        let counts = confusion_counts(&t, &p, 4).unwrap();
        assert_eq!(counts.false_negatives[1], 1);
        assert_eq!(counts.false_positives[2], 1);
        assert_eq!(counts.true_positives, vec![0; 4]);
    }

    #[test]
    fn counts_satisfy_the_partition_identity() {
        let mut rng = SeedRng::new(31);
        let t_data: alloc::vec::Vec<u8> = (0..256).map(|_| rng.below(4) as u8).collect();
        let p_data: alloc::vec::Vec<u8> = (0..256).map(|_| rng.below(4) as u8).collect();
        let t = labels(1, 16, 16, &t_data);
        let p = labels(1, 16, 16, &p_data);
        let counts = confusion_counts(&t, &p, 4).unwrap();
        for c in 0..4 {
            assert_eq!(
                counts.true_positives[c]
                    + counts.false_positives[c]
                    + counts.false_negatives[c]
                    + counts.true_negatives[c],
                256
            );
        }
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let t = labels(1, 1, 2, &[0, 4]);
        let p = labels(1, 1, 2, &[0, 0]);
        assert!(confusion_counts(&t, &p, 4).is_err());
    }

    #[test]
    fn perfect_prediction_scores_one_everywhere() {
        let t = labels(1, 2, 2, &[0, 1, 2, 3]);
        let one = one_hot(&t, 4);
        assert!((sensitivity(&one, &one, 1e-6).unwrap() - 1.0).abs() < 1e-9);
        assert!((specificity(&one, &one, 1e-6).unwrap() - 1.0).abs() < 1e-9);
        assert!((mean_iou(&t, &t, 4).unwrap() - 1.0).abs() < 1e-12);
        assert!((categorical_accuracy(&one, &one).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sensitivity_matches_hand_counts() {
        // 4 pixels, 3 correct: micro TP = 3, FN = 1
        let t = labels(1, 2, 2, &[1, 1, 1, 1]);
        let p = labels(1, 2, 2, &[1, 1, 1, 0]);
        let s = confusion_counts(&t, &p, 4).unwrap().sensitivity(1e-6);
        assert!((s - 0.75).abs() < 1e-6);
    }

    #[test]
    fn all_background_maps_hit_the_smoothing_contract() {
        let t = labels(1, 2, 2, &[0, 0, 0, 0]);
        let one = one_hot(&t, 4);
        assert!((sensitivity(&one, &one, 1e-6).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn half_swapped_classes_give_third_iou() {
        // truth [1,1,2,2], prediction [1,2,1,2]: class1 TP=1,FP=1,FN=1 ->
        // IoU 1/3; class2 the same; mean 1/3
        let t = labels(1, 2, 2, &[1, 1, 2, 2]);
        let p = labels(1, 2, 2, &[1, 2, 1, 2]);
        let iou = mean_iou(&t, &p, 4).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn absent_classes_are_excluded_from_mean_iou() {
        // only classes 0 and 1 appear; classes 2,3 must not drag the mean
        let t = labels(1, 2, 2, &[0, 0, 1, 1]);
        let iou = mean_iou(&t, &t, 4).unwrap();
        assert!((iou - 1.0).abs() < 1e-12);
    }

    #[test]
    fn accuracy_is_half_when_half_the_pixels_are_wrong() {
        let t = labels(1, 2, 2, &[0, 1, 2, 3]);
        let p = labels(1, 2, 2, &[0, 1, 3, 2]);
        let acc = confusion_counts(&t, &p, 4).unwrap().accuracy();
        assert!((acc - 0.5).abs() < 1e-12);

        let one_t = one_hot(&t, 4);
        let one_p = one_hot(&p, 4);
        assert!((categorical_accuracy(&one_t, &one_p).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn hard_dice_equals_confusion_formula() {
        let mut rng = SeedRng::new(32);
        let t_data: alloc::vec::Vec<u8> = (0..64).map(|_| rng.below(4) as u8).collect();
        let p_data: alloc::vec::Vec<u8> = (0..64).map(|_| rng.below(4) as u8).collect();
        let t = labels(1, 8, 8, &t_data);
        let p = labels(1, 8, 8, &p_data);
        let counts = confusion_counts(&t, &p, 4).unwrap();

        let soft =
            crate::loss::dice_coefficient(&one_hot(&t, 4), &one_hot(&p, 4), 1e-6).unwrap();
        let tp: u64 = counts.true_positives.iter().sum();
        let fp: u64 = counts.false_positives.iter().sum();
        let fn_: u64 = counts.false_negatives.iter().sum();
        let hard = (2.0 * tp as f64 + 1e-6) / ((2 * tp + fp + fn_) as f64 + 1e-6);
        assert!((soft - hard).abs() < 1e-12);
    }

    #[test]
    fn accumulator_is_batch_size_independent() {
        let mut rng = SeedRng::new(33);
        let t_data: alloc::vec::Vec<u8> = (0..4 * 16).map(|_| rng.below(4) as u8).collect();
        let t = labels(4, 4, 4, &t_data);
        let truth = one_hot(&t, 4);
        let mut logits = Tensor::<f64>::zeros(&[4, 4, 4, 4]);
        logits.fill_normal(&mut rng, 1.0);
        let probs = crate::ops::softmax_channels_forward(&logits).unwrap();

        let mut whole = EvalAccumulator::new(4);
        whole.push(&truth, &probs).unwrap();

        // same data split into four single-sample batches
        let mut split = EvalAccumulator::new(4);
        for ni in 0..4 {
            let slice = |x: &Tensor<f64>| {
                Tensor::new(&[1, 4, 4, 4], x.data()[ni * 64..][..64].to_vec()).unwrap()
            };
            split.push(&slice(&truth), &slice(&probs)).unwrap();
        }

        assert_eq!(whole.combined_loss(), split.combined_loss());
        assert_eq!(whole.report().unwrap(), split.report().unwrap());
    }

    #[test]
    fn perfect_accumulator_report_is_all_ones() {
        let t = labels(1, 2, 2, &[0, 1, 2, 3]);
        let truth = one_hot(&t, 4);
        let mut acc = EvalAccumulator::new(4);
        acc.push(&truth, &truth).unwrap();
        let report = acc.report().unwrap();
        assert!((report.dice - 1.0).abs() < 1e-6);
        assert!((report.mean_iou - 1.0).abs() < 1e-6);
        assert!((report.categorical_accuracy - 1.0).abs() < 1e-6);
        assert!((report.sensitivity - 1.0).abs() < 1e-6);
        assert!((report.specificity - 1.0).abs() < 1e-6);
        assert!(report.per_class_dice.iter().all(|d| (d - 1.0).abs() < 1e-6));
    }
}
