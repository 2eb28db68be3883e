//! Grasp-failure (success) prediction from alignment metrics and the
//! transformation estimate. With no robot in the loop, "success" is the
//! ADD-threshold proxy: ADD strictly below the configured threshold.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{AlignmentReport, TAU_RMSE_INLIER};
use crate::nnet::{self, Activation, Network, NnetError, TrainConfig, VectorDataset};
use crate::registration::IcpResult;

/// Feature layout: the five alignment metrics, then the 12 entries of
/// [R | t] row-major (three rotation entries and the translation component
/// per row).
pub const FEATURE_DIM: usize = 17;

/// Default ADD threshold standing in for grasp success, meters.
pub const DEFAULT_SUCCESS_ADD_THRESHOLD: f64 = 0.01;
/// Default probability cutoff for the success label.
pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum FailureError {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error(transparent)]
    Nnet(#[from] NnetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessPrediction {
    pub probability: f64,
    pub label: bool,
}

/// Packs the five metrics (inlier RMSE already sentinel-collapsed to τ3)
/// and the transform estimate, in the fixed feature order.
pub fn extract_features(icp_result: &IcpResult, report: &AlignmentReport) -> FeatureVector {
    let mut f = [0.0; FEATURE_DIM];
    f[0] = report.fitness_1cm;
    f[1] = report.fitness_2cm;
    f[2] = if report.rmse_no_inliers { TAU_RMSE_INLIER } else { report.rmse_inlier };
    f[3] = report.dist_mesh_to_scene;
    f[4] = report.dist_scene_to_mesh;
    let t = &icp_result.transform;
    for row in 0..3 {
        for col in 0..3 {
            f[5 + row * 4 + col] = t.rotation[row][col];
        }
        f[5 + row * 4 + 3] = t.translation[row];
    }
    FeatureVector(f)
}

/// Sigmoid success probability plus the thresholded label
/// (probability ≥ threshold).
pub fn predict_success(
    model: &Network,
    features: &FeatureVector,
    threshold: f64,
) -> Result<SuccessPrediction, FailureError> {
    if model.input_dim() != FEATURE_DIM || model.output_dim() != 1 {
        return Err(FailureError::Nnet(NnetError::DimensionMismatch(format!(
            "failure model must be {FEATURE_DIM}→1, got {}→{}",
            model.input_dim(),
            model.output_dim()
        ))));
    }
    let probability = model.forward(features.as_slice())?[0];
    Ok(SuccessPrediction { probability, label: probability >= threshold })
}

/// True iff `add` is strictly below `success_threshold`.
pub fn label_by_add(add: f64, success_threshold: f64) -> bool {
    add < success_threshold
}

/// Default failure-predictor architecture: 17→32→16→1, ReLU hidden and
/// sigmoid output.
pub fn default_failure_network(seed: u64) -> Network {
    Network::new(
        &[FEATURE_DIM, 32, 16, 1],
        &[Activation::Relu, Activation::Relu, Activation::Sigmoid],
        seed,
    )
}

/// Trains the success predictor with binary cross-entropy. Both classes
/// must be present.
pub fn train_failure_model(
    dataset: &[(FeatureVector, bool)],
    config: &TrainConfig,
    net_seed: u64,
) -> Result<(Network, nnet::TrainReport), FailureError> {
    let positives = dataset.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == dataset.len() {
        return Err(FailureError::InvalidDataset(format!(
            "both classes required: {positives} positive of {}",
            dataset.len()
        )));
    }
    let data = VectorDataset::from_pairs(
        dataset.iter().map(|(f, _)| f.as_slice().to_vec()).collect(),
        dataset.iter().map(|(_, y)| vec![if *y { 1.0 } else { 0.0 }]).collect(),
    );
    let mut net = default_failure_network(net_seed);
    let report = nnet::train(&mut net, &data, config, None)?;
    Ok((net, report))
}

/// Binary confusion counts; "positive" is predicted success.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

impl ConfusionMatrix {
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.true_positive += 1,
            (true, false) => self.false_positive += 1,
            (false, true) => self.false_negative += 1,
            (false, false) => self.true_negative += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.true_positive + self.true_negative) as f64 / self.total() as f64
    }

    pub fn text_report(&self) -> String {
        format!(
            "predicted\\actual  success  failure\n\
             success           {:7}  {:7}\n\
             failure           {:7}  {:7}\n\
             accuracy: {:.4} over {} samples\n",
            self.true_positive,
            self.false_positive,
            self.false_negative,
            self.true_negative,
            self.accuracy(),
            self.total()
        )
    }
}

/// Runs the model over labeled features at `threshold`.
pub fn evaluate(
    model: &Network,
    dataset: &[(FeatureVector, bool)],
    threshold: f64,
) -> Result<ConfusionMatrix, FailureError> {
    let mut cm = ConfusionMatrix::default();
    for (features, actual) in dataset {
        let pred = predict_success(model, features, threshold)?;
        cm.record(pred.label, *actual);
    }
    Ok(cm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RigidTransform;
    use crate::metrics::AlignmentReport;
    use crate::nnet::LossTag;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn perfect_report() -> AlignmentReport {
        AlignmentReport {
            fitness_1cm: 1.0,
            fitness_2cm: 1.0,
            rmse_inlier: 0.0,
            rmse_no_inliers: false,
            dist_mesh_to_scene: 0.0,
            dist_scene_to_mesh: 0.0,
        }
    }

    fn identity_result() -> IcpResult {
        IcpResult {
            transform: RigidTransform::identity(),
            fitness: 1.0,
            inlier_rmse: 0.0,
            iterations_used: 1,
            converged: true,
        }
    }

    #[test]
    fn feature_packing_identity_perfect() {
        let f = extract_features(&identity_result(), &perfect_report());
        let expected = [
            1.0, 1.0, 0.0, 0.0, 0.0, //
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0,
        ];
        assert_eq!(f.0, expected);
    }

    #[test]
    fn feature_packing_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = RigidTransform::from_euler(
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
            rng.gen_range(-0.2..0.2),
            0.4,
            -0.2,
            0.9,
        )
        .unwrap();
        let result = IcpResult { transform: t, ..identity_result() };
        let report = AlignmentReport {
            fitness_1cm: 0.25,
            fitness_2cm: 0.5,
            rmse_inlier: 0.004,
            rmse_no_inliers: false,
            dist_mesh_to_scene: 0.01,
            dist_scene_to_mesh: 0.02,
        };
        let a = extract_features(&result, &report);
        let b = extract_features(&result, &report);
        assert_eq!(a.0.map(f64::to_bits), b.0.map(f64::to_bits));
    }

    #[test]
    fn no_inlier_sentinel_lands_in_rmse_slot() {
        let report = AlignmentReport {
            rmse_inlier: TAU_RMSE_INLIER,
            rmse_no_inliers: true,
            fitness_1cm: 0.0,
            fitness_2cm: 0.0,
            dist_mesh_to_scene: 0.05,
            dist_scene_to_mesh: 0.05,
        };
        let f = extract_features(&identity_result(), &report);
        assert_eq!(f.0[2], 0.01);
    }

    #[test]
    fn thresholds_pin_labels() {
        let net = default_failure_network(1);
        let f = extract_features(&identity_result(), &perfect_report());
        let p0 = predict_success(&net, &f, 0.0).unwrap();
        assert!(p0.label);
        let p1 = predict_success(&net, &f, 1.0).unwrap();
        if p1.probability < 1.0 {
            assert!(!p1.label);
        }
        assert!((0.0..=1.0).contains(&p0.probability));
    }

    #[test]
    fn label_by_add_is_strict() {
        assert!(label_by_add(0.0, 0.01));
        assert!(!label_by_add(0.01, 0.01));
        assert!(!label_by_add(0.02, 0.01));
    }

    #[test]
    fn label_recount_matches_on_dataset() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let adds: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..0.03)).collect();
        let labels: Vec<bool> = adds.iter().map(|a| label_by_add(*a, 0.01)).collect();
        let recount = adds.iter().filter(|a| **a < 0.01).count();
        assert_eq!(labels.iter().filter(|l| **l).count(), recount);
    }

    fn rule_based_dataset(n: usize, seed: u64) -> Vec<(FeatureVector, bool)> {
        // Success iff fitness_1cm > 0.5; remaining features are noise. A
        // small margin keeps the rule learnable to arbitrary accuracy.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let fit: f64 = loop {
                    let f: f64 = rng.gen_range(0.0..1.0);
                    if (f - 0.5).abs() > 0.05 {
                        break f;
                    }
                };
                let mut f = [0.0; FEATURE_DIM];
                f[0] = fit;
                f[1] = (fit + rng.gen_range(0.0..0.2)).min(1.0);
                f[2] = rng.gen_range(0.0..0.01);
                f[3] = rng.gen_range(0.0..0.05);
                f[4] = rng.gen_range(0.0..0.05);
                for v in f.iter_mut().skip(5) {
                    *v = rng.gen_range(-1.0..1.0);
                }
                (FeatureVector(f), fit > 0.5)
            })
            .collect()
    }

    fn train_config() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 300,
            batch_size: 16,
            seed: 5,
            loss: LossTag::BinaryCrossEntropy,
            momentum: 0.9,
            lr_decay: 0.0,
        }
    }

    #[test]
    fn learns_rule_based_success() {
        let train_set = rule_based_dataset(400, 3);
        let eval_set = rule_based_dataset(200, 4);
        let (net, report) = train_failure_model(&train_set, &train_config(), 6).unwrap();
        assert_eq!(report.epoch_losses.len(), 300);
        let cm = evaluate(&net, &eval_set, DEFAULT_DECISION_THRESHOLD).unwrap();
        assert!(cm.accuracy() >= 0.99, "accuracy {}", cm.accuracy());
    }

    #[test]
    fn rejects_single_class_dataset() {
        let all_good: Vec<_> = rule_based_dataset(50, 7)
            .into_iter()
            .map(|(f, _)| (f, true))
            .collect();
        assert!(matches!(
            train_failure_model(&all_good, &train_config(), 8),
            Err(FailureError::InvalidDataset(_))
        ));
    }

    #[test]
    fn seeded_training_reproduces_weights() {
        let data = rule_based_dataset(100, 9);
        let (a, _) = train_failure_model(&data, &train_config(), 10).unwrap();
        let (b, _) = train_failure_model(&data, &train_config(), 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn threshold_sweep_trades_fp_for_fn() {
        let data = rule_based_dataset(300, 11);
        let (net, _) = train_failure_model(&data, &train_config(), 12).unwrap();
        let mut prev_fp = usize::MAX;
        let mut prev_fn = 0usize;
        for threshold in [0.0, 0.25, 0.5, 0.75, 1.0 + 1e-9] {
            let cm = evaluate(&net, &data, threshold).unwrap();
            assert!(cm.false_positive <= prev_fp);
            assert!(cm.false_negative >= prev_fn);
            prev_fp = cm.false_positive;
            prev_fn = cm.false_negative;
        }
    }

    #[test]
    fn confusion_matrix_report_counts() {
        let mut cm = ConfusionMatrix::default();
        cm.record(true, true);
        cm.record(true, false);
        cm.record(false, true);
        cm.record(false, false);
        assert_eq!(cm.total(), 4);
        assert_eq!(cm.accuracy(), 0.5);
        let text = cm.text_report();
        assert!(text.contains("accuracy: 0.5000 over 4 samples"));
    }
}
