//! Classification metrics from a confusion matrix, and inference-mode
//! evaluation over a sample set.
//!
//! Everything derives from integer confusion counts: overall accuracy is
//! trace/total, mean class accuracy averages the per-class recalls. Classes
//! with zero test support are excluded from the mean and reported — they
//! cannot occur on full ModelNet but can on subsets.

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::model::{forward_batch_infer, MrfgatConfig, NetworkParams};
use crate::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Accuracy summary plus the confusion matrix it was derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `confusion[t][p]` counts samples of true class `t` predicted as `p`.
    pub confusion: Vec<Vec<u64>>,
    /// Correct / total over all samples.
    pub overall_accuracy: f64,
    /// Mean of per-class accuracies over classes with support.
    pub mean_class_accuracy: f64,
    /// Per-class accuracy; `None` for classes with zero support.
    pub per_class: Vec<Option<f64>>,
    /// Classes excluded from the mean for lack of support.
    pub excluded_classes: Vec<u32>,
}

impl Metrics {
    /// Derives every reported number from integer confusion counts.
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Metrics> {
        let c = confusion.len();
        if c == 0 || confusion.iter().any(|row| row.len() != c) {
            return Err(Error::Invalid("confusion matrix must be square".into()));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Invalid("confusion matrix has no samples".into()));
        }
        let correct: u64 = (0..c).map(|i| confusion[i][i]).sum();
        let mut per_class = Vec::with_capacity(c);
        let mut excluded = Vec::new();
        let mut acc_sum = 0.0;
        let mut supported = 0usize;
        for (t, row) in confusion.iter().enumerate() {
            let support: u64 = row.iter().sum();
            if support == 0 {
                per_class.push(None);
                excluded.push(t as u32);
            } else {
                let acc = confusion[t][t] as f64 / support as f64;
                per_class.push(Some(acc));
                acc_sum += acc;
                supported += 1;
            }
        }
        Ok(Metrics {
            confusion,
            overall_accuracy: correct as f64 / total as f64,
            mean_class_accuracy: acc_sum / supported as f64,
            per_class,
            excluded_classes: excluded,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }
}

/// Index of the largest logit; ties go to the lower index.
pub(crate) fn argmax_row(row: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Predicted classes for a batch of clouds, inference mode.
fn predict_chunk(
    clouds: &[PointCloud],
    net: &NetworkParams,
    config: &MrfgatConfig,
) -> Result<Vec<u32>> {
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    let bf = forward_batch_infer(&refs, net, config)?;
    let logits: &Tensor = bf.tape.value(bf.logits);
    Ok(logits
        .data()
        .chunks(config.num_classes)
        .map(argmax_row)
        .collect())
}

/// Inference-mode evaluation: predicts every labeled cloud and reduces to
/// [`Metrics`].
///
/// Parameters and running statistics are borrowed immutably, so evaluation
/// can never change the model. Chunks fan out across threads; each cloud's
/// forward pass is independent of its batch-mates in inference mode and the
/// reduction is integer counting, so the result is identical at any thread
/// count.
pub fn evaluate(
    clouds: &[PointCloud],
    net: &NetworkParams,
    config: &MrfgatConfig,
    chunk_size: usize,
) -> Result<Metrics> {
    if clouds.is_empty() {
        return Err(Error::Invalid("nothing to evaluate".into()));
    }
    if chunk_size == 0 {
        return Err(Error::Invalid("chunk_size must be at least 1".into()));
    }
    let c = config.num_classes;
    for pc in clouds {
        match pc.label {
            Some(l) if (l as usize) < c => {}
            Some(l) => {
                return Err(Error::Invalid(format!(
                    "label {l} out of range for {c} classes"
                )))
            }
            None => return Err(Error::Invalid("evaluation cloud has no label".into())),
        }
    }
    let predictions: Vec<Vec<u32>> = clouds
        .par_chunks(chunk_size)
        .map(|chunk| predict_chunk(chunk, net, config))
        .collect::<Result<_>>()?;
    let mut confusion = vec![vec![0u64; c]; c];
    for (pc, pred) in clouds.iter().zip(predictions.iter().flatten()) {
        let t = pc.label.expect("checked above") as usize;
        confusion[t][*pred as usize] += 1;
    }
    Metrics::from_confusion(confusion)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::param_init;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictor_scores_one() {
        let m = Metrics::from_confusion(vec![vec![3, 0], vec![0, 5]]).unwrap();
        assert_eq!(m.overall_accuracy, 1.0);
        assert_eq!(m.mean_class_accuracy, 1.0);
        assert_eq!(m.per_class, vec![Some(1.0), Some(1.0)]);
        assert!(m.excluded_classes.is_empty());
    }

    #[test]
    fn constant_predictor_on_balanced_classes() {
        // Always predicts class 0 on a balanced 2-class set.
        let m = Metrics::from_confusion(vec![vec![4, 0], vec![4, 0]]).unwrap();
        assert_eq!(m.overall_accuracy, 0.5);
        assert_eq!(m.mean_class_accuracy, 0.5);
        assert_eq!(m.per_class, vec![Some(1.0), Some(0.0)]);
    }

    #[test]
    fn oa_ma_match_independent_recomputation() {
        // Independent oracle: recompute both from the emitted matrix with
        // different arithmetic (f64 accumulation over flattened counts).
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let c = rng.gen_range(2..6);
            let confusion: Vec<Vec<u64>> = (0..c)
                .map(|_| (0..c).map(|_| rng.gen_range(0..20)).collect())
                .collect();
            let total: u64 = confusion.iter().flatten().sum();
            if total == 0 {
                continue;
            }
            let m = Metrics::from_confusion(confusion.clone()).unwrap();
            let mut diag = 0.0;
            let mut all = 0.0;
            let mut recalls = Vec::new();
            for t in 0..c {
                let mut row_sum = 0.0;
                for p in 0..c {
                    all += confusion[t][p] as f64;
                    row_sum += confusion[t][p] as f64;
                    if t == p {
                        diag += confusion[t][p] as f64;
                    }
                }
                if row_sum > 0.0 {
                    recalls.push(confusion[t][t] as f64 / row_sum);
                }
            }
            let oa = diag / all;
            let ma = recalls.iter().sum::<f64>() / recalls.len() as f64;
            assert!((m.overall_accuracy - oa).abs() < 1e-15);
            assert!((m.mean_class_accuracy - ma).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_support_classes_excluded_and_reported() {
        let m = Metrics::from_confusion(vec![
            vec![2, 0, 0],
            vec![0, 0, 0],
            vec![1, 0, 1],
        ])
        .unwrap();
        assert_eq!(m.excluded_classes, vec![1]);
        assert_eq!(m.per_class[1], None);
        assert!((m.mean_class_accuracy - (1.0 + 0.5) / 2.0).abs() < 1e-15);
        assert!((m.overall_accuracy - 3.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_matrices_rejected() {
        assert!(Metrics::from_confusion(vec![]).is_err());
        assert!(Metrics::from_confusion(vec![vec![1, 2]]).is_err());
        assert!(Metrics::from_confusion(vec![vec![0, 0], vec![0, 0]]).is_err());
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax_row(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax_row(&[5.0]), 0);
        assert_eq!(argmax_row(&[2.0, 1.0, 2.0]), 0);
    }

    fn labeled_cloud(rng: &mut ChaCha8Rng, n: usize, label: u32) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| {
                    [
                        rng.gen::<f64>() - 0.5,
                        rng.gen::<f64>() - 0.5,
                        rng.gen::<f64>() - 0.5,
                    ]
                })
                .collect(),
            Some(label),
        )
        .unwrap()
    }

    #[test]
    fn evaluate_is_chunk_invariant_and_read_only() {
        let cfg = MrfgatConfig::reduced_test();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let net = param_init(&cfg, &mut rng).unwrap();
        let clouds: Vec<PointCloud> = (0..13)
            .map(|i| labeled_cloud(&mut rng, 16, (i % 4) as u32))
            .collect();
        let stats_before = net.stats.clone();
        let a = evaluate(&clouds, &net, &cfg, 1).unwrap();
        let b = evaluate(&clouds, &net, &cfg, 4).unwrap();
        let c = evaluate(&clouds, &net, &cfg, 13).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(net.stats, stats_before);
        let total: u64 = a.confusion.iter().flatten().sum();
        assert_eq!(total, 13);

        // Label out of range is a validation error.
        let bad = vec![labeled_cloud(&mut rng, 16, 9)];
        assert!(evaluate(&bad, &net, &cfg, 4).is_err());
    }
}
