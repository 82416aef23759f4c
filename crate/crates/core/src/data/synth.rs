//! Synthetic scenes with clustered poses and descriptors that are an affine
//! function of the pose within each cluster.
//!
//! Cluster `c` sits on a circle of radius [`SyntheticSpec::radius`] at camera
//! height [`SyntheticSpec::height`], with a base orientation `q_c`. Items of
//! the cluster jitter the center uniformly by up to `translation_spread` per
//! axis and rotate `q_c` by up to `rotation_spread_deg` about a random axis.
//! The descriptor of pose `p` in cluster `c` is
//!
//! `G_c ((p − p̄_c) ⊘ s) + o_c + h e_c + ε`,
//!
//! where `p̄_c` is the cluster's center pose, `s` the per-component spread,
//! `G_c` a Gaussian `d x 7` matrix, `o_c` a Gaussian offset, `h e_c` a
//! one-hot marker and `ε ~ N(0, σ²)` noise.
//!
//! The circle phase and the base orientations are chosen so that no pose
//! component of a cluster crosses a power of two (or zero), i.e. each
//! component keeps its floating point sign and exponent within a cluster.

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::pose::{Dataset, PoseVector, Sample};

/// Generator parameters. [`SyntheticSpec::new`] fills in the scene geometry
/// defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub k_true: usize,
    /// Total items before the 50/50 train/test split.
    pub n: usize,
    pub d: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub radius: f64,
    pub height: f64,
    /// Half-width of the uniform per-axis translation jitter, meters.
    pub translation_spread: f64,
    /// Largest rotation away from the cluster's base orientation, degrees.
    pub rotation_spread_deg: f64,
    /// Magnitude of the one-hot cluster marker.
    pub marker: f64,
    /// Standard deviation of the per-cluster descriptor offset.
    pub offset_scale: f64,
}

impl SyntheticSpec {
    pub fn new(k_true: usize, n: usize, d: usize, noise_sigma: f64, seed: u64) -> Self {
        SyntheticSpec {
            k_true,
            n,
            d,
            noise_sigma,
            seed,
            radius: 10.0,
            height: 1.5,
            translation_spread: 0.03,
            rotation_spread_deg: 1.0,
            marker: 5.0,
            offset_scale: 2.0,
        }
    }
}

/// Generated split with the generator's own cluster labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test: Dataset,
    pub train_labels: Vec<usize>,
    pub test_labels: Vec<usize>,
    /// Center pose of every cluster.
    pub centers: Vec<PoseVector>,
}

/// `(train, test)` with default scene geometry.
///
/// # Panics
/// If `k_true == 0`, `d < 8` or `n < 2`.
pub fn generate_synthetic(k_true: usize, n: usize, d: usize, noise_sigma: f64, seed: u64) -> (Dataset, Dataset) {
    let data = SyntheticSpec::new(k_true, n, d, noise_sigma, seed).generate();
    (data.train, data.test)
}

/// Smallest distance from `v` to zero or to any signed power of two in
/// `[2^-6, 2^10]`.
fn binade_margin(v: f64) -> f64 {
    (-6..=10)
        .map(|e| (v.abs() - 2f64.powi(e)).abs())
        .fold(v.abs(), f64::min)
}

fn pick_phase(k: usize, radius: f64) -> f64 {
    let mut best = (0.0, f64::NEG_INFINITY);
    for step in 0..720 {
        let phase = (step as f64 * 0.5).to_radians();
        let margin = (0..k)
            .flat_map(|c| {
                let angle = phase + std::f64::consts::TAU * c as f64 / k as f64;
                [radius * angle.cos(), radius * angle.sin()]
            })
            .map(binade_margin)
            .fold(f64::INFINITY, f64::min);
        if margin > best.1 {
            best = (phase, margin);
        }
    }
    best.0
}

fn base_orientation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    let mut best = (UnitQuaternion::identity(), f64::NEG_INFINITY);
    for _ in 0..2000 {
        let q = nalgebra::Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let unit = UnitQuaternion::from_quaternion(q);
        let canonical = PoseVector::new([unit.w, unit.i, unit.j, unit.k], [0.0; 3]).expect("unit");
        let margin = canonical
            .quaternion()
            .iter()
            .map(|&v| binade_margin(v))
            .fold(f64::INFINITY, f64::min);
        if margin > best.1 {
            best = (unit, margin);
        }
        if margin > 0.06 {
            break;
        }
    }
    best.0
}

impl SyntheticSpec {
    pub fn generate(&self) -> SyntheticData {
        assert!(self.k_true >= 1, "k_true must be at least 1");
        assert!(self.d >= 8, "descriptor dimension must be at least 8");
        assert!(self.n >= 2, "need at least two items to split");
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let k = self.k_true;
        let phase = pick_phase(k, self.radius);
        let spread_rad = self.rotation_spread_deg.to_radians();
        let scale = [
            spread_rad / 2.0,
            spread_rad / 2.0,
            spread_rad / 2.0,
            spread_rad / 2.0,
            self.translation_spread,
            self.translation_spread,
            self.translation_spread,
        ];

        let mut centers = Vec::with_capacity(k);
        let mut maps = Vec::with_capacity(k);
        for c in 0..k {
            let angle = phase + std::f64::consts::TAU * c as f64 / k as f64;
            let q = base_orientation(&mut rng);
            let center = PoseVector::new(
                [q.w, q.i, q.j, q.k],
                [self.radius * angle.cos(), self.radius * angle.sin(), self.height],
            )
            .expect("unit quaternion");
            let g = DMatrix::<f64>::from_fn(self.d, 7, |_, _| {
                rng.sample::<f64, _>(StandardNormal) / 7f64.sqrt()
            });
            let mut offset = DVector::<f64>::from_fn(self.d, |_, _| {
                self.offset_scale * rng.sample::<f64, _>(StandardNormal)
            });
            offset[c % self.d] += self.marker;
            centers.push(center);
            maps.push((g, offset));
        }

        let noise = Normal::new(0.0, self.noise_sigma.max(0.0)).expect("valid sigma");
        let mut items = Vec::with_capacity(self.n);
        let mut labels = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let c = i % k;
            let center = &centers[c];
            let axis = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            let angle = rng.random_range(0.0..=spread_rad);
            let delta = nalgebra::Unit::try_new(axis, 1e-12)
                .map(|a| UnitQuaternion::from_axis_angle(&a, angle))
                .unwrap_or_else(UnitQuaternion::identity);
            let q = center.unit_quaternion() * delta;
            let ct = center.translation();
            let t = [
                ct[0] + rng.random_range(-self.translation_spread..=self.translation_spread),
                ct[1] + rng.random_range(-self.translation_spread..=self.translation_spread),
                ct[2] + rng.random_range(-self.translation_spread..=self.translation_spread),
            ];
            let pose = PoseVector::new([q.w, q.i, q.j, q.k], t).expect("unit quaternion");
            let (g, offset) = &maps[c];
            let deviation = DVector::from_iterator(
                7,
                pose.components()
                    .iter()
                    .zip(center.components())
                    .zip(scale)
                    .map(|((p, m), s)| (p - m) / s),
            );
            let mut descriptor = g * deviation + offset;
            if self.noise_sigma > 0.0 {
                descriptor.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
            }
            items.push(Sample {
                id: format!("syn{i:06}"),
                descriptor: descriptor.iter().copied().collect(),
                pose,
            });
            labels.push(c);
        }

        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut rng);
        let cut = self.n.div_ceil(2);
        let split = |idx: &[usize]| {
            let ds = Dataset::new(idx.iter().map(|&i| items[i].clone()).collect()).expect("valid synthetic items");
            (ds, idx.iter().map(|&i| labels[i]).collect::<Vec<_>>())
        };
        let (train, train_labels) = split(&order[..cut]);
        let (test, test_labels) = split(&order[cut..]);
        SyntheticData {
            train,
            test,
            train_labels,
            test_labels,
            centers,
        }
    }
}
