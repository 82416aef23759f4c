//! Data partitioning and the routing classifier that picks a cluster for a query.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::pose::Dataset;

pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

/// L2 penalty on the (standardized) routing weights.
pub const ROUTING_L2: f64 = 1e-3;
/// Training stops once the gradient's max-norm drops below this.
pub const ROUTING_GRAD_TOL: f64 = 1e-6;
const ROUTING_MAX_ITERS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RouteError {
    #[error("cannot form {k} clusters from {n} items")]
    KTooLarge { k: usize, n: usize },
    #[error("cluster count must be at least 1")]
    ZeroClusters,
    #[error("descriptor has dimension {got}, classifier expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("partition does not match the dataset: {0}")]
    InvalidPartition(String),
    #[error("classifier has {got} hyperplanes, expected {expected}")]
    HyperplaneCount { expected: usize, got: usize },
    #[error("classifier parameters are not finite")]
    NonFinite,
}

/// Cluster assignment of every training item plus the cluster centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    assignments: Vec<usize>,
    centroids: DMatrix<f64>,
}

impl Partition {
    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// `k x d` centroid matrix.
    pub fn centroids(&self) -> &DMatrix<f64> {
        &self.centroids
    }

    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    /// Item indices of cluster `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| a == c)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest_centroid(&self, x: &[f64]) -> usize {
        nearest(&self.centroids, x).0
    }
}

fn squared_distance(centroids: &DMatrix<f64>, c: usize, x: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(j, v)| {
            let d = v - centroids[(c, j)];
            d * d
        })
        .sum()
}

fn nearest(centroids: &DMatrix<f64>, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.nrows() {
        let d = squared_distance(centroids, c, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Seeded k-means (k-means++ initialization, Lloyd iterations) on descriptors.
pub fn partition_data(dataset: &Dataset, k: usize, seed: u64) -> Result<Partition, RouteError> {
    let rows: Vec<&[f64]> = dataset.items().iter().map(|s| s.descriptor.as_slice()).collect();
    kmeans(&rows, k, seed)
}

/// k-means over row vectors. Empty clusters are repaired by moving the point
/// of the largest cluster that lies farthest from its centroid.
pub fn kmeans(rows: &[&[f64]], k: usize, seed: u64) -> Result<Partition, RouteError> {
    let n = rows.len();
    if k == 0 {
        return Err(RouteError::ZeroClusters);
    }
    if k > n {
        return Err(RouteError::KTooLarge { k, n });
    }
    let d = rows[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(rows, k, &mut rng);
    let mut assignments = vec![0; n];

    for _ in 0..KMEANS_MAX_ITERS {
        assignments = rows.par_iter().map(|x| nearest(&centroids, x).0).collect();
        repair_empty(rows, &mut assignments, &mut centroids);
        let updated = cluster_means(rows, &assignments, k, d);
        let movement = (0..k)
            .map(|c| (updated.row(c) - centroids.row(c)).norm())
            .fold(0.0, f64::max);
        centroids = updated;
        if movement < KMEANS_TOL {
            break;
        }
    }
    Ok(Partition {
        assignments,
        centroids,
    })
}

fn kmeans_plus_plus(rows: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = rows.len();
    let d = rows[0].len();
    let mut centroids = DMatrix::zeros(k, d);
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centroids.row_mut(0).copy_from_slice(rows[first]);
    let mut dist: Vec<f64> = rows.iter().map(|x| squared_distance(&centroids, 0, x)).collect();

    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in dist.iter().enumerate().filter(|(_, &w)| w > 0.0) {
                pick = Some(i);
                if u < w {
                    break;
                }
                u -= w;
            }
            pick.expect("positive total")
        } else {
            let open: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            open[rng.random_range(0..open.len())]
        };
        chosen[pick] = true;
        centroids.row_mut(c).copy_from_slice(rows[pick]);
        for (i, x) in rows.iter().enumerate() {
            dist[i] = dist[i].min(squared_distance(&centroids, c, x));
        }
    }
    centroids
}

fn repair_empty(rows: &[&[f64]], assignments: &mut [usize], centroids: &mut DMatrix<f64>) {
    let k = centroids.nrows();
    loop {
        let mut sizes = vec![0usize; k];
        for &a in assignments.iter() {
            sizes[a] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..k).fold(0, |best, c| if sizes[c] > sizes[best] { c } else { best });
        let mut far = (usize::MAX, -1.0);
        for (i, x) in rows.iter().enumerate().filter(|(i, _)| assignments[*i] == largest) {
            let dist = squared_distance(centroids, largest, x);
            if dist > far.1 {
                far = (i, dist);
            }
        }
        assignments[far.0] = empty;
        centroids.row_mut(empty).copy_from_slice(rows[far.0]);
    }
}

fn cluster_means(rows: &[&[f64]], assignments: &[usize], k: usize, d: usize) -> DMatrix<f64> {
    let mut sums = DMatrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (x, &a) in rows.iter().zip(assignments) {
        counts[a] += 1;
        for (j, v) in x.iter().enumerate() {
            sums[(a, j)] += v;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            sums.row_mut(c).scale_mut(1.0 / count as f64);
        }
    }
    sums
}

/// Linear `k`-class router with `k - 1` stored hyperplanes.
///
/// Hyperplane `j` scores class `j` as `w_j · x + b_j`; the last class has an
/// implicit score of zero. Each row of the stored matrix is `[w_j, b_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingClassifier {
    hyperplanes: DMatrix<f64>,
    k: usize,
}

impl RoutingClassifier {
    pub fn from_parts(hyperplanes: DMatrix<f64>, k: usize) -> Result<Self, RouteError> {
        if k == 0 {
            return Err(RouteError::ZeroClusters);
        }
        if hyperplanes.nrows() != k - 1 {
            return Err(RouteError::HyperplaneCount {
                expected: k - 1,
                got: hyperplanes.nrows(),
            });
        }
        if hyperplanes.iter().any(|v| !v.is_finite()) {
            return Err(RouteError::NonFinite);
        }
        Ok(RoutingClassifier { hyperplanes, k })
    }

    /// Classifier for a single cluster: stores nothing, always answers 0.
    pub fn single(dim: usize) -> Self {
        RoutingClassifier {
            hyperplanes: DMatrix::zeros(0, dim + 1),
            k: 1,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.hyperplanes.ncols() - 1
    }

    /// `(k - 1) x (d + 1)` matrix of stored parameters.
    pub fn hyperplanes(&self) -> &DMatrix<f64> {
        &self.hyperplanes
    }

    /// Scores for all `k` classes (last is always 0).
    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>, RouteError> {
        let d = self.dim();
        if x.len() != d {
            return Err(RouteError::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        let mut scores = Vec::with_capacity(self.k);
        for row in self.hyperplanes.row_iter() {
            let dot: f64 = x.iter().enumerate().map(|(j, v)| row[j] * v).sum();
            scores.push(dot + row[d]);
        }
        scores.push(0.0);
        Ok(scores)
    }

    /// Arg-max class; ties go to the lowest index.
    pub fn classify(&self, x: &[f64]) -> Result<usize, RouteError> {
        let scores = self.scores(x)?;
        let mut best = 0;
        for (j, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = j;
            }
        }
        Ok(best)
    }
}

/// Trains the router on all items with their cluster index as label.
pub fn fit_classifier(dataset: &Dataset, partition: &Partition) -> Result<RoutingClassifier, RouteError> {
    if partition.assignments.len() != dataset.len() {
        return Err(RouteError::InvalidPartition(format!(
            "{} assignments for {} items",
            partition.assignments.len(),
            dataset.len()
        )));
    }
    if partition.centroids.ncols() != dataset.dim() {
        return Err(RouteError::InvalidPartition("centroid dimension".into()));
    }
    let rows: Vec<&[f64]> = dataset.items().iter().map(|s| s.descriptor.as_slice()).collect();
    fit_router(&rows, &partition.assignments, partition.k())
}

/// Reference-class multinomial logistic regression, fit on standardized
/// features and mapped back to raw descriptor coordinates.
pub fn fit_router(rows: &[&[f64]], labels: &[usize], k: usize) -> Result<RoutingClassifier, RouteError> {
    if k == 0 {
        return Err(RouteError::ZeroClusters);
    }
    let d = rows.first().map(|r| r.len()).unwrap_or(0);
    if k == 1 {
        return Ok(RoutingClassifier::single(d));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(RouteError::InvalidPartition(format!("label {bad} >= k={k}")));
    }
    let n = rows.len();
    let mut mean = vec![0.0; d];
    for x in rows {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v / n as f64;
        }
    }
    let mut scale = vec![0.0; d];
    for x in rows {
        for j in 0..d {
            scale[j] += (x[j] - mean[j]).powi(2) / n as f64;
        }
    }
    let scale: Vec<f64> = scale
        .into_iter()
        .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
        .collect();
    let standardized: Vec<Vec<f64>> = rows
        .iter()
        .map(|x| (0..d).map(|j| (x[j] - mean[j]) / scale[j]).collect())
        .collect();

    let objective = LogisticObjective {
        rows: &standardized,
        labels,
        k,
        d,
    };
    let params = lbfgs(
        |p| objective.evaluate(p),
        vec![0.0; (k - 1) * (d + 1)],
        ROUTING_GRAD_TOL,
        ROUTING_MAX_ITERS,
    );

    let mut hyperplanes = DMatrix::zeros(k - 1, d + 1);
    for c in 0..k - 1 {
        let p = &params[c * (d + 1)..(c + 1) * (d + 1)];
        let mut bias = p[d];
        for j in 0..d {
            let w = p[j] / scale[j];
            hyperplanes[(c, j)] = w;
            bias -= w * mean[j];
        }
        hyperplanes[(c, d)] = bias;
    }
    RoutingClassifier::from_parts(hyperplanes, k)
}

struct LogisticObjective<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [usize],
    k: usize,
    d: usize,
}

impl LogisticObjective<'_> {
    /// Mean cross-entropy plus `ROUTING_L2 / 2 * ‖W‖²` (biases unpenalized).
    fn evaluate(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let (k, d) = (self.k, self.d);
        let stride = d + 1;
        let n = self.rows.len() as f64;
        let partials: Vec<(f64, Vec<f64>)> = self
            .rows
            .par_chunks(256)
            .zip(self.labels.par_chunks(256))
            .map(|(rows, labels)| {
                let mut loss = 0.0;
                let mut grad = vec![0.0; params.len()];
                let mut scores = vec![0.0; k];
                for (x, &label) in rows.iter().zip(labels) {
                    for c in 0..k - 1 {
                        let p = &params[c * stride..(c + 1) * stride];
                        scores[c] = p[d] + x.iter().zip(p).map(|(a, b)| a * b).sum::<f64>();
                    }
                    scores[k - 1] = 0.0;
                    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
                    loss += max + sum.ln() - scores[label];
                    for c in 0..k - 1 {
                        let prob = (scores[c] - max).exp() / sum;
                        let coef = prob - if c == label { 1.0 } else { 0.0 };
                        let g = &mut grad[c * stride..(c + 1) * stride];
                        for (gj, xj) in g.iter_mut().zip(x) {
                            *gj += coef * xj;
                        }
                        g[d] += coef;
                    }
                }
                (loss, grad)
            })
            .collect();

        let mut loss = 0.0;
        let mut grad = vec![0.0; params.len()];
        for (l, g) in partials {
            loss += l;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        loss /= n;
        grad.iter_mut().for_each(|g| *g /= n);
        for c in 0..k - 1 {
            for j in 0..d {
                let w = params[c * stride + j];
                loss += 0.5 * ROUTING_L2 * w * w;
                grad[c * stride + j] += ROUTING_L2 * w;
            }
        }
        (loss, grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with Armijo backtracking.
fn lbfgs<F>(f: F, mut x: Vec<f64>, grad_tol: f64, max_iters: usize) -> Vec<f64>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    const MEMORY: usize = 10;
    let (mut fx, mut g) = f(&x);
    let mut history: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::with_capacity(MEMORY);

    for iter in 0..max_iters {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < grad_tol {
            break;
        }
        // two-loop recursion
        let mut dir: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &dir);
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.last() {
            let gamma = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= gamma);
        } else {
            let gnorm = dot(&g, &g).sqrt();
            dir.iter_mut().for_each(|d| *d /= gnorm.max(1.0));
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (a - b) * si);
        }
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let candidate: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (fc, gc) = f(&candidate);
            if fc <= fx + 1e-4 * step * slope {
                accepted = Some((candidate, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((next, f_next, g_next)) = accepted else {
            log::debug!("lbfgs line search stalled at iteration {iter}");
            break;
        };
        let s: Vec<f64> = next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 {
            if history.len() == MEMORY {
                history.remove(0);
            }
            history.push((s, y, 1.0 / sy));
        }
        let decrease = fx - f_next;
        x = next;
        fx = f_next;
        g = g_next;
        if decrease.abs() <= 1e-15 * fx.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Fraction of items in each true cluster that the classifier routes back to it.
/// Clusters with no items report `None`.
pub fn routing_accuracy(
    classifier: &RoutingClassifier,
    rows: &[&[f64]],
    truth: &[usize],
) -> Result<Vec<Option<f64>>, RouteError> {
    let k = classifier.k();
    let mut hits = vec![0usize; k];
    let mut totals = vec![0usize; k];
    for (x, &t) in rows.iter().zip(truth) {
        if t >= k {
            return Err(RouteError::InvalidPartition(format!("label {t} >= k={k}")));
        }
        totals[t] += 1;
        if classifier.classify(x)? == t {
            hits[t] += 1;
        }
    }
    Ok(hits
        .into_iter()
        .zip(totals)
        .map(|(h, t)| (t > 0).then(|| h as f64 / t as f64))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{PoseVector, Sample};
    use rand_distr::{Distribution, Normal};

    fn dataset(rows: &[Vec<f64>]) -> Dataset {
        Dataset::new(
            rows.iter()
                .enumerate()
                .map(|(i, r)| Sample {
                    id: format!("s{i}"),
                    descriptor: r.clone(),
                    pose: PoseVector::identity(),
                })
                .collect(),
        )
        .unwrap()
    }

    /// `per` points around each center with the given noise, plus true labels.
    fn blobs(centers: &[Vec<f64>], per: usize, noise: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise).unwrap();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..per {
            for (c, center) in centers.iter().enumerate() {
                rows.push(center.iter().map(|v| v + normal.sample(&mut rng)).collect());
                labels.push(c);
            }
        }
        (rows, labels)
    }

    fn random_centers(k: usize, d: usize, spread: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..k)
            .map(|_| (0..d).map(|_| rng.random_range(-spread..spread)).collect())
            .collect()
    }

    #[test]
    fn single_cluster() {
        let ds = dataset(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let p = partition_data(&ds, 1, 0).unwrap();
        assert_eq!(p.assignments(), &[0, 0, 0]);
        let clf = fit_classifier(&ds, &p).unwrap();
        assert_eq!(clf.hyperplanes().nrows(), 0);
        assert_eq!(clf.classify(&[100.0, -3.0]).unwrap(), 0);
    }

    #[test]
    fn too_many_clusters() {
        let ds = dataset(&[vec![1.0], vec![2.0]]);
        assert_eq!(partition_data(&ds, 3, 0), Err(RouteError::KTooLarge { k: 3, n: 2 }));
    }

    #[test]
    fn singleton_clusters_when_k_equals_n() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let p = partition_data(&dataset(&rows), 6, 3).unwrap();
        let mut seen = p.assignments().to_vec();
        seen.sort_unstable();
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let rows = vec![vec![1.0]; 5];
        let p = partition_data(&dataset(&rows), 5, 1).unwrap();
        assert!(p.sizes().iter().all(|&s| s == 1));
    }

    #[test]
    fn two_blobs_are_recovered() {
        let centers = vec![vec![10.0; 4], vec![-10.0; 4]];
        let (rows, truth) = blobs(&centers, 30, 0.5, 4);
        let p = partition_data(&dataset(&rows), 2, 9).unwrap();
        // oracle: label by nearest true center
        let oracle: Vec<usize> = rows
            .iter()
            .map(|x| if x[0] > 0.0 { 0 } else { 1 })
            .collect();
        assert_eq!(oracle, truth);
        let map0 = p.assignments()[0];
        for (a, t) in p.assignments().iter().zip(&oracle) {
            assert_eq!(*a == map0, *t == oracle[0]);
        }
    }

    #[test]
    fn partition_is_seed_deterministic() {
        let centers = random_centers(3, 5, 8.0, 1);
        let (rows, _) = blobs(&centers, 20, 1.0, 2);
        let ds = dataset(&rows);
        assert_eq!(partition_data(&ds, 3, 17).unwrap(), partition_data(&ds, 3, 17).unwrap());
    }

    #[test]
    fn classify_examples() {
        let clf = RoutingClassifier::from_parts(DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]), 2).unwrap();
        assert_eq!(clf.classify(&[5.0, 1.0]).unwrap(), 0);
        assert_eq!(clf.classify(&[-5.0, 1.0]).unwrap(), 1);
        // all scores zero: lowest index wins
        assert_eq!(clf.classify(&[0.0, 7.0]).unwrap(), 0);
        assert!(matches!(clf.classify(&[1.0]), Err(RouteError::DimensionMismatch { .. })));
        let tie = RoutingClassifier::from_parts(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]), 3).unwrap();
        assert_eq!(tie.classify(&[2.0]).unwrap(), 0);
        assert!(matches!(
            RoutingClassifier::from_parts(DMatrix::zeros(2, 2), 2),
            Err(RouteError::HyperplaneCount { expected: 1, got: 2 })
        ));
    }

    #[test]
    fn separable_1d() {
        let rows: Vec<Vec<f64>> = (1..=10)
            .flat_map(|i| [vec![-(i as f64) - 0.5], vec![i as f64 + 0.5]])
            .collect();
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let clf = fit_router(&refs, &labels, 2).unwrap();
        for (x, &l) in refs.iter().zip(&labels) {
            assert_eq!(clf.classify(x).unwrap(), l);
        }
    }

    #[test]
    fn four_blobs_route_held_out_points() {
        let centers = random_centers(4, 16, 5.0, 31);
        let (train, train_labels) = blobs(&centers, 50, 0.8, 32);
        let (test, test_labels) = blobs(&centers, 50, 0.8, 33);
        let refs: Vec<&[f64]> = train.iter().map(|r| r.as_slice()).collect();
        let clf = fit_router(&refs, &train_labels, 4).unwrap();
        assert_eq!(clf.hyperplanes().shape(), (3, 17));
        // oracle: nearest true center
        let mut oracle_hits = 0;
        let mut hits = 0;
        for (x, &t) in test.iter().zip(&test_labels) {
            let nearest = (0..4)
                .min_by(|&a, &b| {
                    let da: f64 = x.iter().zip(&centers[a]).map(|(p, q)| (p - q).powi(2)).sum();
                    let db: f64 = x.iter().zip(&centers[b]).map(|(p, q)| (p - q).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            oracle_hits += (nearest == t) as usize;
            hits += (clf.classify(x).unwrap() == t) as usize;
        }
        assert_eq!(oracle_hits, 200);
        assert!(hits as f64 / 200.0 >= 0.99, "routing accuracy {hits}/200");
        let acc = routing_accuracy(&clf, &refs, &train_labels).unwrap();
        assert!(acc.iter().all(|a| a.unwrap() >= 0.99));
    }
}
