//! Error-source attribution: classify a scene point cloud into
//! {noise, bad initialization, occlusion} once failure is predicted. A
//! shared per-point encoder with max pooling stands in for the transformer
//! classifier; the class order is fixed as Noise=0, BadInit=1, Occlusion=2.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{farthest_point_sample, Point3, PointCloud};
use crate::nnet::{
    cross_entropy_loss, pool_max_argmax, Activation, MixingSchedule, Network, NetworkGrad,
    NnetError, TrainConfig, TrainReport, WeightDoc,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Default resampled cloud size fed to the classifier.
pub const DEFAULT_N_POINTS: usize = 2048;

/// Guard below which the radius normalization divisor becomes 1.
const SCALE_GUARD: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Nnet(#[from] NnetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Noise,
    BadInit,
    Occlusion,
}

impl ErrorClass {
    pub const ALL: [ErrorClass; 3] = [ErrorClass::Noise, ErrorClass::BadInit, ErrorClass::Occlusion];

    pub fn index(self) -> usize {
        match self {
            ErrorClass::Noise => 0,
            ErrorClass::BadInit => 1,
            ErrorClass::Occlusion => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<ErrorClass> {
        ErrorClass::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Noise => "noise",
            ErrorClass::BadInit => "badinit",
            ErrorClass::Occlusion => "occlusion",
        }
    }

    pub fn from_name(name: &str) -> Option<ErrorClass> {
        ErrorClass::ALL.iter().copied().find(|c| c.name() == name)
    }
}

/// Probabilities in class order; strictly positive, renormalized to sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities(pub [f64; 3]);

impl ClassProbabilities {
    pub fn argmax(&self) -> ErrorClass {
        let mut best = 0;
        for i in 1..3 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        ErrorClass::from_index(best).unwrap()
    }
}

/// Shared per-point encoder pooled into a classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionModel {
    /// Per-point encoder, 3 → feature dim.
    pub encoder: Network,
    /// Pooled head, feature dim → 3 with softmax output.
    pub head: Network,
    /// Input conditioning: clouds are resampled to exactly this many points.
    pub n_points: usize,
    /// Seed for the with-replacement resampling of undersized clouds.
    pub resample_seed: u64,
}

impl AttributionModel {
    pub fn new(feature_dim: usize, n_points: usize, seed: u64) -> AttributionModel {
        AttributionModel {
            encoder: Network::new(
                &[3, feature_dim, feature_dim],
                &[Activation::Relu, Activation::Identity],
                seed,
            ),
            head: Network::new(
                &[feature_dim, feature_dim / 2, 3],
                &[Activation::Relu, Activation::Softmax],
                seed.wrapping_add(1),
            ),
            n_points,
            resample_seed: seed.wrapping_add(2),
        }
    }

    pub fn validate(&self) -> Result<(), AttributionError> {
        if self.encoder.input_dim() != 3 {
            return Err(AttributionError::InvalidInput("encoder must take 3-D points".into()));
        }
        if self.encoder.output_dim() != self.head.input_dim() {
            return Err(AttributionError::InvalidInput(format!(
                "encoder output {} does not chain into head input {}",
                self.encoder.output_dim(),
                self.head.input_dim()
            )));
        }
        if self.head.output_dim() != 3 {
            return Err(AttributionError::InvalidInput("head must output 3 classes".into()));
        }
        Ok(())
    }
}

/// Resamples to exactly `n_points` (FPS when larger, seeded sampling with
/// replacement when smaller), subtracts the centroid of the resampled set
/// and divides by its max radius (divisor 1 below the degenerate guard).
pub fn normalize_cloud(cloud: &PointCloud, n_points: usize, seed: u64) -> Vec<Point3> {
    assert!(!cloud.is_empty(), "normalize_cloud needs at least one point");
    let mut pts: Vec<Point3> = if cloud.len() > n_points {
        farthest_point_sample(cloud, n_points, 0)
            .expect("k <= len checked")
            .into_iter()
            .map(|i| cloud.points[i])
            .collect()
    } else if cloud.len() < n_points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_points).map(|_| cloud.points[rng.gen_range(0..cloud.len())]).collect()
    } else {
        cloud.points.clone()
    };
    let mut centroid = Point3::ORIGIN;
    for p in &pts {
        centroid = centroid.add(*p);
    }
    centroid = centroid.scale(1.0 / pts.len() as f64);
    let mut max_radius = 0.0f64;
    for p in pts.iter_mut() {
        *p = p.sub(centroid);
        max_radius = max_radius.max(p.norm());
    }
    let divisor = if max_radius < SCALE_GUARD { 1.0 } else { max_radius };
    for p in pts.iter_mut() {
        *p = p.scale(1.0 / divisor);
    }
    pts
}

/// Encode every normalized point, max-pool, softmax head. Permutation
/// invariant in the cloud order (pooling) and translation invariant
/// (centroid normalization).
pub fn classify(
    model: &AttributionModel,
    cloud: &PointCloud,
) -> Result<ClassProbabilities, AttributionError> {
    model.validate()?;
    if cloud.is_empty() {
        return Err(AttributionError::InvalidInput("empty cloud".into()));
    }
    let pts = normalize_cloud(cloud, model.n_points, model.resample_seed);
    let encoded: Vec<Vec<f64>> = pts
        .iter()
        .map(|p| model.encoder.forward(&p.to_array()))
        .collect::<Result<_, _>>()?;
    let (pooled, _) = pool_max_argmax(&encoded)?;
    let mut probs = model.head.forward(&pooled)?;
    let sum: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= sum;
    }
    Ok(ClassProbabilities([probs[0], probs[1], probs[2]]))
}

/// One labeled training cloud; `source` feeds the optional mixing schedule.
#[derive(Debug, Clone)]
pub struct AttributionSample {
    pub cloud: PointCloud,
    pub label: ErrorClass,
    pub source: usize,
}

/// Cross-entropy training of encoder + head. All three classes must be
/// present. Deterministic per config seed.
pub fn train_attribution(
    dataset: &[AttributionSample],
    model: AttributionModel,
    config: &TrainConfig,
    schedule: Option<&MixingSchedule>,
) -> Result<(AttributionModel, TrainReport), AttributionError> {
    model.validate()?;
    config.validate()?;
    for class in ErrorClass::ALL {
        if !dataset.iter().any(|s| s.label == class) {
            return Err(AttributionError::InvalidDataset(format!(
                "class '{}' missing from dataset",
                class.name()
            )));
        }
    }
    if let Some(s) = schedule {
        s.validate()?;
    }
    let mut model = model;

    // Normalize every cloud once up front; resampling is part of input
    // conditioning, not of the learned model.
    let normalized: Vec<Vec<Point3>> = dataset
        .iter()
        .map(|s| normalize_cloud(&s.cloud, model.n_points, model.resample_seed))
        .collect();

    let n_sources = dataset.iter().map(|s| s.source).max().unwrap_or(0) + 1;
    let mut by_source: Vec<Vec<usize>> = vec![Vec::new(); n_sources];
    for (i, s) in dataset.iter().enumerate() {
        by_source[s.source].push(i);
    }
    if let Some(s) = schedule {
        for (i, stage) in s.stages.iter().enumerate() {
            if stage.dataset_weights.len() != n_sources {
                return Err(AttributionError::Nnet(NnetError::InvalidInput(format!(
                    "stage {i} has {} weights but dataset has {n_sources} sources",
                    stage.dataset_weights.len()
                ))));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut source_sample_counts = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut counts = vec![0usize; n_sources];
        let order: Vec<usize> = match schedule {
            None => {
                let mut idx: Vec<usize> = (0..dataset.len()).collect();
                use rand::seq::SliceRandom;
                idx.shuffle(&mut rng);
                for &i in &idx {
                    counts[dataset[i].source] += 1;
                }
                idx
            }
            Some(s) => {
                let stage = s.stage_for_epoch(epoch);
                let total: f64 = stage.dataset_weights.iter().sum();
                (0..dataset.len())
                    .map(|_| {
                        let mut u = rng.gen_range(0.0..total);
                        let mut src = 0;
                        for (k, w) in stage.dataset_weights.iter().enumerate() {
                            if u < *w {
                                src = k;
                                break;
                            }
                            u -= w;
                        }
                        counts[src] += 1;
                        let pool = &by_source[src];
                        pool[rng.gen_range(0..pool.len())]
                    })
                    .collect()
            }
        };

        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut enc_grad = NetworkGrad::zeros_like(&model.encoder);
            let mut head_grad = NetworkGrad::zeros_like(&model.head);
            for &i in batch {
                let pts = &normalized[i];
                let traces: Vec<_> = pts
                    .iter()
                    .map(|p| model.encoder.forward_trace(&p.to_array()))
                    .collect::<Result<_, _>>()?;
                let encoded: Vec<Vec<f64>> =
                    traces.iter().map(|t| t.output().to_vec()).collect();
                let (pooled, argmax) = pool_max_argmax(&encoded)?;
                let head_trace = model.head.forward_trace(&pooled)?;
                let mut target = [0.0; 3];
                target[dataset[i].label.index()] = 1.0;
                let (loss, dloss) = cross_entropy_loss(head_trace.output(), &target);
                epoch_loss += loss;
                let hg = model.head.backward_from_trace(&head_trace, &dloss)?;
                // Route the pooled gradient back through the argmax points
                // only; all other points received zero gradient.
                let dim = pooled.len();
                let mut upstream_per_point: std::collections::BTreeMap<usize, Vec<f64>> =
                    std::collections::BTreeMap::new();
                for d in 0..dim {
                    upstream_per_point
                        .entry(argmax[d])
                        .or_insert_with(|| vec![0.0; dim])[d] += hg.input[d];
                }
                for (pt_idx, upstream) in upstream_per_point {
                    let g = model.encoder.backward_from_trace(&traces[pt_idx], &upstream)?;
                    enc_grad.add_assign(&g);
                }
                head_grad.add_assign(&hg);
            }
            let scale = 1.0 / batch.len() as f64;
            enc_grad.scale(scale);
            head_grad.scale(scale);
            model.encoder.apply_gradient(&enc_grad, config.learning_rate);
            model.head.apply_gradient(&head_grad, config.learning_rate);
        }
        let mean_loss = epoch_loss / dataset.len() as f64;
        if !mean_loss.is_finite()
            || !model.encoder.all_weights_finite()
            || !model.head.all_weights_finite()
        {
            return Err(AttributionError::Nnet(NnetError::TrainingDiverged { epoch }));
        }
        epoch_losses.push(mean_loss);
        source_sample_counts.push(counts);
    }
    Ok((model, TrainReport { epoch_losses, source_sample_counts }))
}

/// 3×3 confusion counts, rows = true class, cols = predicted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassConfusion(pub [[usize; 3]; 3]);

impl ClassConfusion {
    pub fn record(&mut self, actual: ErrorClass, predicted: ErrorClass) {
        self.0[actual.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> usize {
        self.0.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..3).map(|i| self.0[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        self.correct() as f64 / self.total() as f64
    }

    /// Rate at which `actual` was predicted as `predicted`, within the
    /// actual class.
    pub fn confusion_rate(&self, actual: ErrorClass, predicted: ErrorClass) -> f64 {
        let row: usize = self.0[actual.index()].iter().sum();
        if row == 0 {
            return 0.0;
        }
        self.0[actual.index()][predicted.index()] as f64 / row as f64
    }

    pub fn text_report(&self) -> String {
        let mut s = String::from("true\\pred      noise  badinit  occlusion\n");
        for class in ErrorClass::ALL {
            s.push_str(&format!(
                "{:<12} {:7}  {:7}  {:9}\n",
                class.name(),
                self.0[class.index()][0],
                self.0[class.index()][1],
                self.0[class.index()][2]
            ));
        }
        s.push_str(&format!("accuracy: {:.4} over {} samples\n", self.accuracy(), self.total()));
        s
    }
}

pub fn evaluate(
    model: &AttributionModel,
    dataset: &[AttributionSample],
) -> Result<ClassConfusion, AttributionError> {
    let mut cm = ClassConfusion::default();
    for s in dataset {
        let probs = classify(model, &s.cloud)?;
        cm.record(s.label, probs.argmax());
    }
    Ok(cm)
}

const MODEL_KIND: &str = "attribution";

/// Weight file with the attribution metadata block (fixed class order).
pub fn save_model(model: &AttributionModel, path: impl AsRef<std::path::Path>) -> Result<(), AttributionError> {
    let mut doc = WeightDoc::new(MODEL_KIND);
    doc.push_network("encoder", &model.encoder);
    doc.push_network("head", &model.head);
    doc.insert_meta("class_order", serde_json::json!(["noise", "badinit", "occlusion"]));
    doc.insert_meta("n_points", serde_json::json!(model.n_points));
    doc.insert_meta("resample_seed", serde_json::json!(model.resample_seed));
    doc.save(path)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<std::path::Path>) -> Result<AttributionModel, AttributionError> {
    let doc = WeightDoc::load_kind(path, MODEL_KIND)?;
    let order = doc
        .metadata
        .get("class_order")
        .and_then(|v| v.as_array())
        .ok_or_else(|| NnetError::WeightFile("missing class_order metadata".into()))?;
    let expected = ["noise", "badinit", "occlusion"];
    let matches = order.len() == 3
        && order.iter().zip(expected).all(|(v, e)| v.as_str() == Some(e));
    if !matches {
        return Err(AttributionError::Nnet(NnetError::WeightFile(
            "unexpected class order in attribution weight file".into(),
        )));
    }
    let model = AttributionModel {
        encoder: doc.network("encoder")?,
        head: doc.network("head")?,
        n_points: doc.meta_u64("n_points")? as usize,
        resample_seed: doc.meta_u64("resample_seed")?,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::LossTag;

    fn cloud_from(points: Vec<Point3>) -> PointCloud {
        PointCloud::new(points, "t")
    }

    fn random_cloud(n: usize, seed: u64, center: Point3, extent: f64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        cloud_from(
            (0..n)
                .map(|_| {
                    Point3::new(
                        center.x + rng.gen_range(-extent..extent),
                        center.y + rng.gen_range(-extent..extent),
                        center.z + rng.gen_range(-extent..extent),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn normalize_centers_and_scales() {
        let cloud = random_cloud(64, 1, Point3::new(5.0, -2.0, 1.0), 0.3);
        let pts = normalize_cloud(&cloud, 64, 0);
        let mut centroid = Point3::ORIGIN;
        let mut max_norm = 0.0f64;
        for p in &pts {
            centroid = centroid.add(*p);
            max_norm = max_norm.max(p.norm());
        }
        centroid = centroid.scale(1.0 / pts.len() as f64);
        assert!(centroid.norm() < 1e-9);
        assert!((max_norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn normalize_degenerate_cloud_guard() {
        let cloud = cloud_from(vec![Point3::new(2.0, 2.0, 2.0); 10]);
        let pts = normalize_cloud(&cloud, 10, 0);
        for p in &pts {
            assert_eq!((p.x, p.y, p.z), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn normalize_resamples_to_exact_count() {
        let small = random_cloud(10, 2, Point3::ORIGIN, 0.1);
        assert_eq!(normalize_cloud(&small, 32, 7).len(), 32);
        let large = random_cloud(100, 3, Point3::ORIGIN, 0.1);
        assert_eq!(normalize_cloud(&large, 32, 7).len(), 32);
    }

    #[test]
    fn classify_permutation_invariant() {
        let model = AttributionModel::new(16, 32, 4);
        let cloud = random_cloud(32, 5, Point3::ORIGIN, 0.2);
        let base = classify(&model, &cloud).unwrap();
        let mut permuted = cloud.points.clone();
        permuted.reverse();
        let p = classify(&model, &cloud_from(permuted)).unwrap();
        for i in 0..3 {
            assert!((base.0[i] - p.0[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_translation_invariant() {
        let model = AttributionModel::new(16, 32, 6);
        let cloud = random_cloud(32, 7, Point3::ORIGIN, 0.2);
        let moved = cloud_from(
            cloud.points.iter().map(|p| p.add(Point3::new(3.0, -1.0, 2.0))).collect(),
        );
        let a = classify(&model, &cloud).unwrap();
        let b = classify(&model, &moved).unwrap();
        for i in 0..3 {
            assert!((a.0[i] - b.0[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn classify_scale_invariant_argmax() {
        let model = AttributionModel::new(16, 32, 8);
        let cloud = random_cloud(32, 9, Point3::ORIGIN, 0.2);
        let scaled = cloud_from(cloud.points.iter().map(|p| p.scale(7.5)).collect());
        assert_eq!(
            classify(&model, &cloud).unwrap().argmax(),
            classify(&model, &scaled).unwrap().argmax()
        );
    }

    #[test]
    fn probabilities_positive_and_normalized() {
        let model = AttributionModel::new(16, 32, 10);
        for seed in 0..20u64 {
            let cloud = random_cloud(48, 100 + seed, Point3::ORIGIN, 0.3);
            let p = classify(&model, &cloud).unwrap();
            assert!(p.0.iter().all(|v| *v > 0.0));
            assert!((p.0.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    fn cluster_dataset(per_class: usize, seed: u64) -> Vec<AttributionSample> {
        // Three shape families at distinct offsets along one axis after
        // normalization: flat discs, elongated rods and two-blob clouds.
        let mut out = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..per_class {
            let s = seed + i as u64;
            // Noise: thin disc.
            let mut pts = Vec::new();
            let mut r = ChaCha8Rng::seed_from_u64(s);
            for _ in 0..64 {
                pts.push(Point3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-0.05..0.05)));
            }
            out.push(AttributionSample {
                cloud: cloud_from(pts),
                label: ErrorClass::Noise,
                source: 0,
            });
            // BadInit: rod along z.
            let mut pts = Vec::new();
            for _ in 0..64 {
                pts.push(Point3::new(r.gen_range(-0.05..0.05), r.gen_range(-0.05..0.05), r.gen_range(-1.0..1.0)));
            }
            out.push(AttributionSample {
                cloud: cloud_from(pts),
                label: ErrorClass::BadInit,
                source: 0,
            });
            // Occlusion: two separated blobs.
            let mut pts = Vec::new();
            for _ in 0..32 {
                pts.push(Point3::new(1.0 + r.gen_range(-0.1..0.1), r.gen_range(-0.1..0.1), r.gen_range(-0.1..0.1)));
                pts.push(Point3::new(-1.0 + r.gen_range(-0.1..0.1), r.gen_range(-0.1..0.1), r.gen_range(-0.1..0.1)));
            }
            out.push(AttributionSample {
                cloud: cloud_from(pts),
                label: ErrorClass::Occlusion,
                source: 0,
            });
            let _ = rng.gen::<f64>();
        }
        out
    }

    fn config(epochs: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: 0.05,
            epochs,
            batch_size: 8,
            seed: 1,
            loss: LossTag::CrossEntropy,
            momentum: 0.9,
            lr_decay: 0.0,
        }
    }

    #[test]
    fn learns_separable_shape_classes() {
        let train_set = cluster_dataset(30, 1000);
        let eval_set = cluster_dataset(15, 9000);
        let model = AttributionModel::new(16, 64, 11);
        let (trained, report) = train_attribution(&train_set, model, &config(40), None).unwrap();
        assert_eq!(report.epoch_losses.len(), 40);
        let cm = evaluate(&trained, &eval_set).unwrap();
        assert!(cm.accuracy() >= 0.99, "accuracy {}\n{}", cm.accuracy(), cm.text_report());
    }

    #[test]
    fn training_rejects_missing_class() {
        let mut data = cluster_dataset(5, 2000);
        data.retain(|s| s.label != ErrorClass::Occlusion);
        let model = AttributionModel::new(8, 32, 12);
        assert!(matches!(
            train_attribution(&data, model, &config(2), None),
            Err(AttributionError::InvalidDataset(_))
        ));
    }

    #[test]
    fn seeded_training_reproducible() {
        let data = cluster_dataset(8, 3000);
        let (a, _) =
            train_attribution(&data, AttributionModel::new(8, 32, 13), &config(5), None).unwrap();
        let (b, _) =
            train_attribution(&data, AttributionModel::new(8, 32, 13), &config(5), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_save_load_round_trip() {
        let dir = tempfile::TempDir::new().unwrap();
        let path = dir.path().join("attrib.json");
        let model = AttributionModel::new(8, 32, 14);
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded, model);
    }

    #[test]
    fn confusion_rates_recount() {
        let mut cm = ClassConfusion::default();
        for _ in 0..8 {
            cm.record(ErrorClass::BadInit, ErrorClass::BadInit);
        }
        cm.record(ErrorClass::BadInit, ErrorClass::Occlusion);
        cm.record(ErrorClass::Occlusion, ErrorClass::Occlusion);
        assert_eq!(cm.total(), 10);
        assert!((cm.confusion_rate(ErrorClass::BadInit, ErrorClass::Occlusion) - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(cm.confusion_rate(ErrorClass::Occlusion, ErrorClass::BadInit), 0.0);
    }
}
