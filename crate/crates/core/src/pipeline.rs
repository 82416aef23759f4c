//! End-to-end training and inference.
//!
//! Training partitions the data, and for every cluster encodes the poses to a
//! binary label matrix, selects `r` label columns, computes the lifting matrix
//! `Z` and fits a ridge regressor from descriptors to the selected bits.
//! Inference routes a descriptor to a cluster, regresses its reduced label,
//! lifts it with `Z`, thresholds every entry to a bit and decodes the pose.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::codec::{decode_pose, encode_pose, BinaryLabel, CodecError, DecodeFailure};
use crate::config::{ConfigError, TrainConfig};
use crate::embed::{fit_projection, select_columns, EmbedError, EmbeddingModel, LabelMatrix};
use crate::pose::{Dataset, PoseVector};
use crate::ridge::{fit_ridge, RegressorModel, RidgeError};
use crate::route::{fit_classifier, partition_data, Partition, RouteError, RoutingClassifier};

/// Bytes per stored real number.
pub const BYTES_PER_REAL: u64 = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cluster count k={k} exceeds the {n} training items")]
    ClusterTooLarge { k: usize, n: usize },
    #[error("cluster {cluster} received {size} item(s); at least 2 are required")]
    ClusterTooSmall { cluster: usize, size: usize },
    #[error("encoding pose of item {id:?}: {source}")]
    Encode { id: String, source: CodecError },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Ridge(#[from] RidgeError),
    #[error(transparent)]
    Route(#[from] RouteError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictError {
    #[error("descriptor has dimension {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Decode(#[from] DecodeFailure),
}

/// Per-cluster label embedding and regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub embedding: EmbeddingModel,
    pub regressor: RegressorModel,
}

/// Everything needed at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    config: TrainConfig,
    dim: usize,
    classifier: RoutingClassifier,
    clusters: Vec<ClusterModel>,
    centroids: Option<DMatrix<f64>>,
}

/// `8 (k r (d + 7b) + (k − 1)(d + 1))` bytes; for `k = 1` this is `8 r (d + 7b)`.
pub fn storage_bytes(d: usize, r: usize, b: usize, k: usize) -> u64 {
    let (d, r, b, k) = (d as u64, r as u64, b as u64, k as u64);
    BYTES_PER_REAL * (k * r * (d + 7 * b) + (k - 1) * (d + 1))
}

impl ModelBundle {
    /// Assembles a bundle from parts, checking that all shapes agree.
    pub fn from_parts(
        config: TrainConfig,
        dim: usize,
        classifier: RoutingClassifier,
        clusters: Vec<ClusterModel>,
        centroids: Option<DMatrix<f64>>,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let shape_error = |what: &str| {
            TrainError::Route(RouteError::InvalidPartition(format!("inconsistent bundle: {what}")))
        };
        if clusters.len() != config.k || classifier.k() != config.k {
            return Err(shape_error("cluster count"));
        }
        if classifier.dim() != dim {
            return Err(shape_error("classifier dimension"));
        }
        let label_len = config.precision.label_len();
        for c in &clusters {
            if c.embedding.r() != config.r
                || c.embedding.label_len() != label_len
                || c.regressor.dim() != dim
                || c.regressor.r() != config.r
            {
                return Err(shape_error("cluster matrix shape"));
            }
        }
        if let Some(cent) = &centroids {
            if cent.shape() != (config.k, dim) {
                return Err(shape_error("centroid shape"));
            }
        }
        Ok(ModelBundle {
            config,
            dim,
            classifier,
            clusters,
            centroids,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classifier(&self) -> &RoutingClassifier {
        &self.classifier
    }

    pub fn clusters(&self) -> &[ClusterModel] {
        &self.clusters
    }

    /// Training centroids; only present on bundles that were trained in this
    /// process (they are not serialized).
    pub fn centroids(&self) -> Option<&DMatrix<f64>> {
        self.centroids.as_ref()
    }

    /// Changes the bit decision threshold used by [`ModelBundle::predict`].
    pub fn set_threshold(&mut self, threshold: f64) -> Result<(), ConfigError> {
        if !threshold.is_finite() {
            return Err(ConfigError::Threshold(threshold));
        }
        self.config.threshold = threshold;
        Ok(())
    }

    /// Storage predicted by the closed-form formula for this bundle's shape.
    pub fn storage_bytes(&self) -> u64 {
        storage_bytes(self.dim, self.config.r, self.config.precision.bits(), self.config.k)
    }

    /// Number of stored reals actually held by the bundle.
    pub fn parameter_count(&self) -> usize {
        self.classifier.hyperplanes().len()
            + self
                .clusters
                .iter()
                .map(|c| c.embedding.z().len() + c.regressor.weights().len())
                .sum::<usize>()
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), PredictError> {
        if x.len() != self.dim {
            return Err(PredictError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn route(&self, x: &[f64]) -> Result<usize, PredictError> {
        self.check_dim(x)?;
        Ok(self.classifier.classify(x).expect("dimension checked"))
    }

    /// Real-valued lifted label `ỹ_Cᵀ Z` of cluster `cluster`.
    pub fn lifted_label(&self, cluster: usize, x: &[f64]) -> Result<DVector<f64>, PredictError> {
        self.check_dim(x)?;
        let model = &self.clusters[cluster];
        let reduced = model.regressor.predict_reduced(x).expect("dimension checked");
        Ok(model.embedding.lift(&reduced))
    }

    /// Routed cluster and thresholded binary label for `x`.
    pub fn predict_label(&self, x: &[f64]) -> Result<(usize, BinaryLabel), PredictError> {
        let cluster = self.route(x)?;
        let lifted = self.lifted_label(cluster, x)?;
        let label = threshold_bits(&lifted, self.config.threshold);
        let label = BinaryLabel::from_bits(label, self.config.precision).expect("7b bits");
        Ok((cluster, label))
    }

    pub fn predict(&self, x: &[f64]) -> Result<PoseVector, PredictError> {
        let (_, label) = self.predict_label(x)?;
        Ok(decode_pose(&label)?)
    }
}

/// Bit `i` is set iff `values[i] > threshold`.
pub fn threshold_bits(values: &DVector<f64>, threshold: f64) -> Vec<bool> {
    values.iter().map(|&v| v > threshold).collect()
}

/// Trains a bundle. Deterministic for a fixed dataset and config.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<ModelBundle, TrainError> {
    config.validate()?;
    if config.k > dataset.len() {
        return Err(TrainError::ClusterTooLarge {
            k: config.k,
            n: dataset.len(),
        });
    }
    let partition = partition_data(dataset, config.k, config.seed)?;
    train_with_partition(dataset, config, &partition)
}

/// Trains with a caller-supplied partition (e.g. known scene labels).
pub fn train_with_partition(
    dataset: &Dataset,
    config: &TrainConfig,
    partition: &Partition,
) -> Result<ModelBundle, TrainError> {
    config.validate()?;
    if partition.k() != config.k {
        return Err(RouteError::InvalidPartition(format!(
            "partition has {} clusters, config asks for {}",
            partition.k(),
            config.k
        ))
        .into());
    }
    for (cluster, &size) in partition.sizes().iter().enumerate() {
        if size < 2 {
            return Err(TrainError::ClusterTooSmall { cluster, size });
        }
    }
    let labels = dataset
        .items()
        .iter()
        .map(|s| {
            encode_pose(&s.pose, config.precision).map_err(|source| TrainError::Encode {
                id: s.id.clone(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let clusters = (0..config.k)
        .into_par_iter()
        .map(|cluster| {
            let members = partition.members(cluster);
            let cluster_labels: Vec<BinaryLabel> =
                members.iter().map(|&i| labels[i].clone()).collect();
            let y = LabelMatrix::from_labels(&cluster_labels)?;
            let seed = config.seed.wrapping_add(cluster as u64);
            let selection = select_columns(&y, config.r, config.css_strategy, seed)?;
            let (embedding, reduced) = fit_projection(&y, &selection)?;
            let x = dataset.descriptor_matrix_for(&members);
            let regressor = fit_ridge(&x, &reduced, config.lambda)?;
            Ok(ClusterModel {
                embedding,
                regressor,
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;

    let classifier = fit_classifier(dataset, partition)?;
    ModelBundle::from_parts(
        config.clone(),
        dataset.dim(),
        classifier,
        clusters,
        Some(partition.centroids().clone()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{round_to_precision, Precision};
    use crate::pose::Sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items = (0..n)
            .map(|i| {
                let q = [
                    rng.random_range(0.5..1.0),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                ];
                let t = [
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(0.0..2.0),
                ];
                Sample {
                    id: format!("f{i:03}"),
                    descriptor: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    pose: PoseVector::new(q, t).unwrap(),
                }
            })
            .collect();
        Dataset::new(items).unwrap()
    }

    #[test]
    fn storage_formula_examples() {
        assert_eq!(storage_bytes(128, 50, 16, 1), 96_000);
        assert_eq!(storage_bytes(128, 50, 16, 4), 387_096);
        for (d, r, b) in [(1, 1, 16), (4096, 224, 32), (64, 10, 64)] {
            assert_eq!(storage_bytes(d, r, b, 1), 8 * (r * (d + 7 * b)) as u64);
        }
    }

    #[test]
    fn constant_poses_are_reproduced() {
        let base = random_dataset(8, 16, 1);
        let pose = PoseVector::new([0.9, 0.1, -0.2, 0.3], [1.25, -3.5, 0.75]).unwrap();
        let items = base
            .items()
            .iter()
            .map(|s| Sample {
                pose,
                ..s.clone()
            })
            .collect();
        let ds = Dataset::new(items).unwrap();
        let cfg = TrainConfig {
            r: 20,
            ..TrainConfig::default()
        };
        let bundle = train(&ds, &cfg).unwrap();
        let expected = decode_pose(&encode_pose(&pose, Precision::Half).unwrap()).unwrap();
        for s in ds.items() {
            assert_eq!(bundle.predict(&s.descriptor).unwrap(), expected);
        }
    }

    #[test]
    fn memorizes_when_interpolating() {
        let ds = random_dataset(24, 48, 2);
        let cfg = TrainConfig {
            r: 112,
            lambda: 1e-8,
            ..TrainConfig::default()
        };
        let bundle = train(&ds, &cfg).unwrap();
        for s in ds.items() {
            let got = bundle.predict(&s.descriptor).unwrap();
            for (g, t) in got.translation().iter().zip(s.pose.translation()) {
                assert_eq!(*g, round_to_precision(t, Precision::Half).unwrap());
            }
            assert!(got.rotation_error_deg(&s.pose) < 0.2);
        }
    }

    #[test]
    fn parameter_count_matches_formula() {
        let ds = random_dataset(60, 12, 3);
        for (r, k) in [(5, 1), (10, 3), (112, 2)] {
            let cfg = TrainConfig {
                r,
                k,
                ..TrainConfig::default()
            };
            let bundle = train(&ds, &cfg).unwrap();
            assert_eq!(bundle.parameter_count() as u64 * 8, bundle.storage_bytes());
            assert_eq!(bundle.classifier().hyperplanes().nrows(), k - 1);
        }
    }

    #[test]
    fn training_errors() {
        let ds = random_dataset(5, 4, 4);
        let cfg = TrainConfig {
            k: 6,
            ..TrainConfig::default()
        };
        assert_eq!(train(&ds, &cfg), Err(TrainError::ClusterTooLarge { k: 6, n: 5 }));
        let cfg = TrainConfig {
            k: 5,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&ds, &cfg), Err(TrainError::ClusterTooSmall { size: 1, .. })));
        let cfg = TrainConfig {
            r: 200,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&ds, &cfg), Err(TrainError::Config(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = random_dataset(80, 10, 5);
        let cfg = TrainConfig {
            r: 30,
            k: 3,
            seed: 9,
            ..TrainConfig::default()
        };
        assert_eq!(train(&ds, &cfg).unwrap(), train(&ds, &cfg).unwrap());
    }

    #[test]
    fn exact_reduced_label_recovers_training_bits() {
        let ds = random_dataset(40, 8, 6);
        let cfg = TrainConfig {
            r: 112,
            ..TrainConfig::default()
        };
        let bundle = train(&ds, &cfg).unwrap();
        let model = &bundle.clusters()[0];
        for s in ds.items().iter().take(10) {
            let label = encode_pose(&s.pose, Precision::Half).unwrap();
            let reduced = DVector::from_iterator(
                model.embedding.r(),
                model
                    .embedding
                    .columns()
                    .iter()
                    .map(|&c| if label.bits()[c] { 1.0 } else { 0.0 }),
            );
            let bits = threshold_bits(&model.embedding.lift(&reduced), 0.5);
            assert_eq!(bits, label.bits());
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let ds = random_dataset(10, 6, 7);
        let bundle = train(&ds, &TrainConfig::default()).unwrap();
        assert_eq!(
            bundle.predict(&[0.0; 5]),
            Err(PredictError::DimensionMismatch { expected: 6, got: 5 })
        );
    }

    #[test]
    fn non_finite_pattern_becomes_decode_failure() {
        let ds = random_dataset(12, 6, 8);
        let bundle = train(&ds, &TrainConfig::default()).unwrap();
        // force every lifted entry above the threshold: all-ones exponents
        let mut lowered = bundle.clone();
        lowered.set_threshold(-1e300).unwrap();
        assert!(matches!(
            lowered.predict(&ds.items()[0].descriptor),
            Err(PredictError::Decode(_))
        ));
    }
}
