//! K-Means (k-means++ seeding, Lloyd iterations) and X-Means with local
//! BIC-scored binary splits under a hard cap on the number of clusters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sq_dist, Matrix, Rng};

pub const DEFAULT_MAX_ITERS: usize = 100;

/// Lower bound on the pooled variance estimate.
pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub k: usize,
    /// `k × d`
    pub centroids: Matrix,
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
}

impl ClusterResult {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignment {
            s[a] += 1;
        }
        s
    }
}

/// Nearest centroid, ties to the lowest index.
fn nearest(point: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.iter_rows().enumerate() {
        let d = sq_dist(point, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &Matrix, centroids: &Matrix, assignment: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, p) in points.iter_rows().enumerate() {
        let (c, d) = nearest(p, centroids);
        assignment[i] = c;
        inertia += d;
    }
    inertia
}

fn kmeans_pp_seed(points: &Matrix, k: usize, rng: &mut Rng) -> Matrix {
    let n = points.rows();
    let mut centroids = Matrix::zeros(k, points.cols());
    let first = rng.below(n);
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = points
        .iter_rows()
        .map(|p| sq_dist(p, points.row(first)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.below(n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, p) in points.iter_rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, centroids.row(c)));
        }
    }
    centroids
}

/// Lloyd iterations from the given centroids. `trace` receives the inertia
/// after every assignment step.
fn lloyd(
    points: &Matrix,
    mut centroids: Matrix,
    max_iters: usize,
    mut trace: Option<&mut Vec<f64>>,
) -> ClusterResult {
    let (n, d, k) = (points.rows(), points.cols(), centroids.rows());
    let mut assignment = vec![0usize; n];
    let mut inertia = assign(points, &centroids, &mut assignment);
    if let Some(t) = trace.as_deref_mut() {
        t.push(inertia);
    }
    for _ in 0..max_iters {
        // update step
        let mut sums = Matrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter_rows().enumerate() {
            let c = assignment[i];
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                let row = sums.row(c).iter().map(|s| s * inv).collect::<Vec<_>>();
                centroids.row_mut(c).copy_from_slice(&row);
            }
        }
        // empty clusters jump to the points farthest from their centroids
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far: Option<(usize, f64)> = None;
            for (i, p) in points.iter_rows().enumerate() {
                if taken[i] {
                    continue;
                }
                let dist = sq_dist(p, centroids.row(assignment[i]));
                if far.is_none_or(|(_, best)| dist > best) {
                    far = Some((i, dist));
                }
            }
            if let Some((i, _)) = far {
                taken[i] = true;
                centroids.row_mut(c).copy_from_slice(points.row(i));
            }
        }

        let previous = assignment.clone();
        inertia = assign(points, &centroids, &mut assignment);
        if let Some(t) = trace.as_deref_mut() {
            t.push(inertia);
        }
        if assignment == previous {
            break;
        }
    }
    ClusterResult {
        k,
        centroids,
        assignment,
        inertia,
    }
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` updates have run.
pub fn kmeans(points: &Matrix, k: usize, rng: &mut Rng, max_iters: usize) -> Result<ClusterResult> {
    kmeans_traced(points, k, rng, max_iters, None)
}

/// [`kmeans`] that also records the inertia after each assignment step.
pub fn kmeans_traced(
    points: &Matrix,
    k: usize,
    rng: &mut Rng,
    max_iters: usize,
    trace: Option<&mut Vec<f64>>,
) -> Result<ClusterResult> {
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    if points.rows() < k {
        return Err(Error::DegenerateInput(format!(
            "{} points cannot form {k} clusters",
            points.rows()
        )));
    }
    let seeds = kmeans_pp_seed(points, k, rng);
    Ok(lloyd(points, seeds, max_iters, trace))
}

/// Terms of the BIC score, exposed for inspection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BicParts {
    pub log_likelihood: f64,
    pub penalty: f64,
    pub free_params: usize,
    pub variance: f64,
}

impl BicParts {
    pub fn score(&self) -> f64 {
        self.log_likelihood - self.penalty
    }
}

/// BIC terms under identical spherical Gaussians with pooled variance
/// `inertia / (R − k)`.
pub fn bic_parts(points: &Matrix, result: &ClusterResult) -> Result<BicParts> {
    let r = points.rows();
    let k = result.k;
    let d = points.cols();
    if result.assignment.len() != r {
        return Err(Error::Dimension {
            expected: r,
            got: result.assignment.len(),
        });
    }
    if r <= k {
        return Err(Error::DegenerateInput(format!(
            "BIC needs more than {k} points, got {r}"
        )));
    }
    let rf = r as f64;
    let variance = (result.inertia / (rf - k as f64)).max(VARIANCE_FLOOR);
    let mut mix = 0.0;
    for size in result.sizes() {
        if size > 0 {
            let s = size as f64;
            mix += s * (s / rf).ln();
        }
    }
    let log_likelihood = mix
        - 0.5 * rf * d as f64 * (2.0 * std::f64::consts::PI * variance).ln()
        - result.inertia / (2.0 * variance);
    let free_params = (k - 1) + k * d + 1;
    let penalty = 0.5 * free_params as f64 * rf.ln();
    Ok(BicParts {
        log_likelihood,
        penalty,
        free_params,
        variance,
    })
}

/// Bayesian information criterion of a clustering; higher is better.
pub fn bic_score(points: &Matrix, result: &ClusterResult) -> Result<f64> {
    bic_parts(points, result).map(|p| p.score())
}

/// Tuning for [`xmeans_capped_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XMeansParams {
    /// Independent 2-means attempts per candidate split; the lowest-inertia one is scored.
    pub split_restarts: usize,
    pub max_iters: usize,
}

impl Default for XMeansParams {
    fn default() -> Self {
        Self {
            split_restarts: 1,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

/// X-Means that never produces more than `max_k` clusters.
pub fn xmeans_capped(points: &Matrix, max_k: usize, rng: &mut Rng) -> Result<ClusterResult> {
    xmeans_capped_with(points, max_k, rng, XMeansParams::default())
}

fn single_cluster(points: &Matrix) -> ClusterResult {
    let mean = points.mean_of_rows(None);
    let inertia = points.iter_rows().map(|p| sq_dist(p, &mean)).sum();
    ClusterResult {
        k: 1,
        centroids: Matrix::from_vec(1, points.cols(), mean).expect("shape"),
        assignment: vec![0; points.rows()],
        inertia,
    }
}

/// Best of `restarts` local 2-means runs on `subset`.
fn local_split(subset: &Matrix, rng: &mut Rng, params: XMeansParams) -> Result<ClusterResult> {
    let mut best: Option<ClusterResult> = None;
    for _ in 0..params.split_restarts.max(1) {
        let r = kmeans(subset, 2, rng, params.max_iters)?;
        if best.as_ref().is_none_or(|b| r.inertia < b.inertia) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Starting from one cluster, repeatedly tries to split every cluster in two
/// and keeps a split when the two-child model has the higher local BIC.
/// When more splits qualify than the cap allows, the largest BIC gains win.
/// Lloyd refinement over all points follows each round of accepted splits.
pub fn xmeans_capped_with(
    points: &Matrix,
    max_k: usize,
    rng: &mut Rng,
    params: XMeansParams,
) -> Result<ClusterResult> {
    if max_k == 0 {
        return Err(Error::param("max_k", "must be at least 1"));
    }
    if points.rows() == 0 {
        return Err(Error::EmptyInput("no points to cluster".into()));
    }
    let mut current = single_cluster(points);
    if points.rows() < 2 || max_k == 1 {
        return Ok(current);
    }
    // each round either grows k or stops; the bound only guards against
    // refinement collapsing clusters back repeatedly
    for _ in 0..4 * max_k {
        if current.k >= max_k {
            break;
        }
        // candidate splits: (gain, cluster, child centroids)
        let mut candidates: Vec<(f64, usize, Matrix)> = Vec::new();
        for c in 0..current.k {
            let members: Vec<usize> = (0..points.rows())
                .filter(|&i| current.assignment[i] == c)
                .collect();
            if members.len() < 3 {
                continue;
            }
            let subset = points.select_rows(&members);
            let parent = single_cluster(&subset);
            let children = local_split(&subset, rng, params)?;
            if children.sizes().contains(&0) {
                continue;
            }
            let gain = bic_score(&subset, &children)? - bic_score(&subset, &parent)?;
            if gain > 0.0 {
                candidates.push((gain, c, children.centroids));
            }
        }
        if candidates.is_empty() {
            break;
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let room = max_k - current.k;
        candidates.truncate(room);
        candidates.sort_by_key(|c| c.1);

        let mut split_of = vec![None; current.k];
        for (_, c, children) in candidates {
            split_of[c] = Some(children);
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (c, split) in split_of.into_iter().enumerate() {
            match split {
                Some(ch) => rows.extend(ch.iter_rows().map(<[f64]>::to_vec)),
                None => rows.push(current.centroids.row(c).to_vec()),
            }
        }
        let seeds = Matrix::from_rows(&rows)?;
        current = compact(lloyd(points, seeds, params.max_iters, None));
    }
    Ok(current)
}

/// Drops clusters with no members and renumbers the rest in order.
fn compact(result: ClusterResult) -> ClusterResult {
    let sizes = result.sizes();
    if !sizes.contains(&0) {
        return result;
    }
    let mut remap = vec![usize::MAX; result.k];
    let mut rows = Vec::new();
    for c in 0..result.k {
        if sizes[c] > 0 {
            remap[c] = rows.len();
            rows.push(result.centroids.row(c).to_vec());
        }
    }
    ClusterResult {
        k: rows.len(),
        centroids: Matrix::from_rows(&rows).expect("equal widths"),
        assignment: result.assignment.iter().map(|&a| remap[a]).collect(),
        inertia: result.inertia,
    }
}
