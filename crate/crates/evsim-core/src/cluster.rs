//! Seeded k-means, elbow-method scan, the five-cluster-by-purpose driver
//! grouping, and exact Jenks natural-breaks classification.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::scenario::{DriverAgent, Purpose};

/// Row-major feature matrix with a per-column min-max record so values
/// can be denormalized exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// `(min, max)` per column captured by the last `normalize` call.
    pub normalization: Option<Vec<(f64, f64)>>,
}

impl FeatureMatrix {
    pub fn new(feature_names: Vec<String>, rows: Vec<Vec<f64>>) -> Self {
        FeatureMatrix { feature_names, rows, normalization: None }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.feature_names.len()
    }

    /// Min-max scale every column into [0, 1]. Constant columns map to 0.
    pub fn normalize(&self) -> FeatureMatrix {
        let cols = self.n_cols();
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); cols];
        for row in &self.rows {
            for (c, v) in row.iter().enumerate() {
                bounds[c].0 = bounds[c].0.min(*v);
                bounds[c].1 = bounds[c].1.max(*v);
            }
        }
        let rows = self
            .rows
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(c, v)| {
                        let (lo, hi) = bounds[c];
                        if hi > lo {
                            (v - lo) / (hi - lo)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        FeatureMatrix {
            feature_names: self.feature_names.clone(),
            rows,
            normalization: Some(bounds),
        }
    }

    /// Map a normalized point back to original feature units.
    pub fn denormalize_point(&self, point: &[f64]) -> Vec<f64> {
        match &self.normalization {
            Some(bounds) => point
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    let (lo, hi) = bounds[c];
                    if hi > lo {
                        lo + v * (hi - lo)
                    } else {
                        lo
                    }
                })
                .collect(),
            None => point.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_centroid(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0usize, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

const MAX_ITER: usize = 300;
const RESTARTS: u64 = 10;

/// Lloyd's algorithm with seeded random-point initialization.
///
/// Runs a fixed number of seeded restarts and keeps the lowest-inertia
/// model, so small datasets do not get stuck in a poor local optimum.
/// Deterministic per seed; assignment ties go to the lowest centroid
/// index; empty clusters are re-seeded to the point farthest from its
/// centroid.
pub fn kmeans(points: &FeatureMatrix, k: usize, seed: u64) -> Result<ClusterModel, CoreError> {
    let mut best: Option<ClusterModel> = None;
    for restart in 0..RESTARTS {
        let model = kmeans_once(points, k, seed.wrapping_add(restart))?;
        if best.as_ref().is_none_or(|b| model.inertia < b.inertia) {
            best = Some(model);
        }
    }
    Ok(best.unwrap())
}

fn kmeans_once(points: &FeatureMatrix, k: usize, seed: u64) -> Result<ClusterModel, CoreError> {
    let n = points.n_rows();
    if k < 1 || k > n {
        return Err(CoreError::TooFewPoints { k, points: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // k distinct rows as the initial centroids
    let mut pool: Vec<usize> = (0..n).collect();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let idx = pool.remove(rng.random_range(0..pool.len()));
        centroids.push(points.rows[idx].clone());
    }

    // sentinel so the first pass always recomputes centroids
    let mut assignments = vec![usize::MAX; n];
    let mut prev_inertia = f64::INFINITY;
    for _ in 0..MAX_ITER {
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, row) in points.rows.iter().enumerate() {
            let (c, d) = nearest_centroid(row, &centroids);
            inertia += d;
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        if inertia > prev_inertia + 1e-9 {
            return Err(CoreError::InternalInconsistency(String::from(
                "k-means inertia increased",
            )));
        }
        prev_inertia = inertia;
        if !changed {
            break;
        }
        // recompute centroids
        let cols = points.n_cols();
        let mut sums = vec![vec![0.0; cols]; k];
        let mut counts = vec![0usize; k];
        for (i, row) in points.rows.iter().enumerate() {
            counts[assignments[i]] += 1;
            for (c, v) in row.iter().enumerate() {
                sums[assignments[i]][c] += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for v in &mut sums[c] {
                    *v /= counts[c] as f64;
                }
                centroids[c] = sums[c].clone();
            } else {
                // re-seed to the point farthest from its assigned centroid
                let far = points
                    .rows
                    .iter()
                    .enumerate()
                    .max_by(|(ia, a), (ib, b)| {
                        sq_dist(a, &centroids[assignments[*ia]])
                            .total_cmp(&sq_dist(b, &centroids[assignments[*ib]]))
                            .then(ib.cmp(ia))
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                centroids[c] = points.rows[far].clone();
            }
        }
    }
    // final tight assignment + inertia
    let mut inertia = 0.0;
    for (i, row) in points.rows.iter().enumerate() {
        let (c, d) = nearest_centroid(row, &centroids);
        assignments[i] = c;
        inertia += d;
    }
    Ok(ClusterModel { k, centroids, assignments, inertia })
}

/// Inertia per candidate k, plus the elbow suggested by the maximum
/// second difference of the inertia curve.
pub fn elbow_scan(
    points: &FeatureMatrix,
    k_range: &[usize],
    seed: u64,
) -> Result<Vec<(usize, f64)>, CoreError> {
    if k_range.is_empty() {
        return Err(CoreError::InvalidConfig(String::from("k_range empty")));
    }
    let mut out = Vec::with_capacity(k_range.len());
    for &k in k_range {
        let model = kmeans(points, k, seed)?;
        out.push((k, model.inertia));
    }
    Ok(out)
}

/// The k maximizing the second difference of inertia over the scan.
pub fn suggest_elbow(scan: &[(usize, f64)]) -> Option<usize> {
    if scan.len() < 3 {
        return scan.first().map(|(k, _)| *k);
    }
    let mut best: Option<(usize, f64)> = None;
    for w in scan.windows(3) {
        let d2 = w[0].1 - 2.0 * w[1].1 + w[2].1;
        if best.is_none_or(|(_, b)| d2 > b) {
            best = Some((w[1].0, d2));
        }
    }
    best.map(|(k, _)| k)
}

/// Key for one driver group: (cluster index, trip purpose).
pub type GroupKey = (u32, Purpose);

pub const DRIVER_CLUSTERS: usize = 5;

/// Partition of the agent population into cluster-by-purpose groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverGroups {
    pub groups: BTreeMap<GroupKey, Vec<u32>>,
    pub model: ClusterModel,
    pub features: FeatureMatrix,
}

impl DriverGroups {
    pub fn keys() -> impl Iterator<Item = GroupKey> {
        (0..DRIVER_CLUSTERS as u32)
            .flat_map(|c| [(c, Purpose::Work), (c, Purpose::Leisure)].into_iter())
    }
}

/// Driver feature matrix: total trip distance, initial SOC, TCD, CD.
pub fn driver_features(agents: &[DriverAgent]) -> FeatureMatrix {
    let names = vec![
        String::from("total_trip_distance_mi"),
        String::from("initial_soc"),
        String::from("tcd"),
        String::from("cd"),
    ];
    let rows = agents
        .iter()
        .map(|a| {
            let total: f64 = a.trips.iter().map(|t| t.planned_distance_mi).sum();
            vec![total, a.soc, a.tcd, a.cd]
        })
        .collect();
    FeatureMatrix::new(names, rows)
}

/// Five k-means clusters over min-max normalized features, each split by
/// the purpose of the agent's first trip.
pub fn cluster_drivers(agents: &[DriverAgent], seed: u64) -> Result<DriverGroups, CoreError> {
    if agents.len() < DRIVER_CLUSTERS {
        return Err(CoreError::TooFewPoints { k: DRIVER_CLUSTERS, points: agents.len() });
    }
    let features = driver_features(agents).normalize();
    let model = kmeans(&features, DRIVER_CLUSTERS, seed)?;
    let mut groups: BTreeMap<GroupKey, Vec<u32>> = BTreeMap::new();
    for key in DriverGroups::keys() {
        groups.insert(key, Vec::new());
    }
    for (i, agent) in agents.iter().enumerate() {
        let purpose = agent.trips[0].purpose;
        let key = (model.assignments[i] as u32, purpose);
        groups.get_mut(&key).unwrap().push(agent.agent_id);
    }
    Ok(DriverGroups { groups, model, features })
}

/// Exact natural-breaks classification by dynamic programming.
///
/// Returns the class upper bounds in ascending order; the partition
/// minimizes the within-class sum of squared deviations.
pub fn jenks_breaks(values: &[f64], classes: usize) -> Result<Vec<f64>, CoreError> {
    let n = values.len();
    if classes < 1 || n < classes {
        return Err(CoreError::TooFewValues { classes, values: n });
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);

    // prefix sums for O(1) within-class SSE
    let mut pre = vec![0.0; n + 1];
    let mut pre2 = vec![0.0; n + 1];
    for (i, v) in sorted.iter().enumerate() {
        pre[i + 1] = pre[i] + v;
        pre2[i + 1] = pre2[i] + v * v;
    }
    let sse = |lo: usize, hi: usize| -> f64 {
        // half-open [lo, hi)
        let cnt = (hi - lo) as f64;
        let sum = pre[hi] - pre[lo];
        (pre2[hi] - pre2[lo]) - sum * sum / cnt
    };

    // cost[c][i]: best SSE splitting the first i values into c classes
    let mut cost = vec![vec![f64::INFINITY; n + 1]; classes + 1];
    let mut split = vec![vec![0usize; n + 1]; classes + 1];
    cost[0][0] = 0.0;
    for c in 1..=classes {
        for i in c..=n {
            for j in (c - 1)..i {
                if cost[c - 1][j].is_finite() {
                    let cand = cost[c - 1][j] + sse(j, i);
                    if cand < cost[c][i] {
                        cost[c][i] = cand;
                        split[c][i] = j;
                    }
                }
            }
        }
    }

    let mut bounds = vec![0.0; classes];
    let mut i = n;
    for c in (1..=classes).rev() {
        bounds[c - 1] = sorted[i - 1];
        i = split[c][i];
    }
    Ok(bounds)
}

/// Class index (0-based) of `value` under ascending `breaks` upper bounds.
pub fn classify(value: f64, breaks: &[f64]) -> usize {
    for (i, b) in breaks.iter().enumerate() {
        if value <= *b {
            return i;
        }
    }
    breaks.len().saturating_sub(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn matrix(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        let names = (0..cols).map(|i| alloc::format!("f{i}")).collect();
        FeatureMatrix::new(names, rows)
    }

    #[test]
    fn k1_centroid_is_columnwise_mean() {
        let m = matrix(vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 4.0]]);
        let model = kmeans(&m, 1, 0).unwrap();
        assert!((model.centroids[0][0] - 3.0).abs() < 1e-12);
        assert!((model.centroids[0][1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let m = matrix(vec![vec![0.0], vec![1.0], vec![5.0], vec![9.0]]);
        let model = kmeans(&m, 4, 0).unwrap();
        assert_eq!(model.inertia, 0.0);
        let mut seen: Vec<usize> = model.assignments.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn k_greater_than_n_errors() {
        let m = matrix(vec![vec![0.0]]);
        assert!(matches!(kmeans(&m, 2, 0), Err(CoreError::TooFewPoints { .. })));
    }

    fn blobs(seed: u64, n_per: usize) -> (FeatureMatrix, Vec<usize>) {
        let centers = [(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (b, (cx, cy)) in centers.iter().enumerate() {
            for _ in 0..n_per {
                let dx: f64 = (rng.random::<f64>() - 0.5) * 1.0;
                let dy: f64 = (rng.random::<f64>() - 0.5) * 1.0;
                rows.push(vec![cx + dx, cy + dy]);
                labels.push(b);
            }
        }
        (matrix(rows), labels)
    }

    #[test]
    fn three_blobs_recovered_exactly() {
        let (m, labels) = blobs(11, 30);
        let model = kmeans(&m, 3, 5).unwrap();
        // exhaustive nearest-blob oracle: assignments must agree up to relabeling
        let mut mapping: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, lab) in labels.iter().enumerate() {
            let c = model.assignments[i];
            match mapping.get(lab) {
                None => {
                    mapping.insert(*lab, c);
                }
                Some(&m) => assert_eq!(m, c, "blob {lab} split across clusters"),
            }
        }
        assert_eq!(mapping.values().collect::<alloc::collections::BTreeSet<_>>().len(), 3);
    }

    #[test]
    fn elbow_finds_three_on_blob_data() {
        let (m, _) = blobs(12, 25);
        let scan = elbow_scan(&m, &[1, 2, 3, 4, 5, 6, 7, 8], 5).unwrap();
        // inertia non-increasing in k
        for w in scan.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-9);
        }
        assert_eq!(suggest_elbow(&scan), Some(3));
    }

    #[test]
    fn elbow_on_repeated_point_is_all_zero() {
        let m = matrix(vec![vec![2.0, 2.0]; 6]);
        let scan = elbow_scan(&m, &[1, 2, 3], 1).unwrap();
        for (_, inertia) in scan {
            assert_eq!(inertia, 0.0);
        }
    }

    #[test]
    fn normalize_bounds_and_idempotence() {
        let m = matrix(vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![9.0, 5.0]]);
        let n1 = m.normalize();
        for row in &n1.rows {
            for v in row {
                assert!((0.0..=1.0).contains(v));
            }
        }
        let n2 = n1.normalize();
        for (a, b) in n1.rows.iter().zip(&n2.rows) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        // exact denormalization round-trip
        let back = n1.denormalize_point(&n1.rows[1]);
        assert!((back[0] - 3.0).abs() < 1e-12);
        assert!((back[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn jenks_two_group_split() {
        let values = [1.0, 2.0, 3.0, 10.0, 11.0, 12.0];
        let breaks = jenks_breaks(&values, 2).unwrap();
        assert_eq!(breaks, vec![3.0, 12.0]);
    }

    #[test]
    fn jenks_saturation_and_degenerate() {
        let values = [4.0, 1.0, 9.0];
        let breaks = jenks_breaks(&values, 3).unwrap();
        assert_eq!(breaks, vec![1.0, 4.0, 9.0]);
        let one = jenks_breaks(&values, 1).unwrap();
        assert_eq!(one, vec![9.0]);
        assert!(matches!(jenks_breaks(&values, 4), Err(CoreError::TooFewValues { .. })));
    }

    /// Brute-force partition oracle used by the property check below.
    fn jenks_brute(sorted: &[f64], classes: usize) -> f64 {
        fn sse(xs: &[f64]) -> f64 {
            let n = xs.len() as f64;
            let mean: f64 = xs.iter().sum::<f64>() / n;
            xs.iter().map(|x| (x - mean) * (x - mean)).sum()
        }
        fn rec(xs: &[f64], classes: usize) -> f64 {
            if classes == 1 {
                return sse(xs);
            }
            let mut best = f64::INFINITY;
            for cut in 1..=(xs.len() - classes + 1) {
                let cost = sse(&xs[..cut]) + rec(&xs[cut..], classes - 1);
                if cost < best {
                    best = cost;
                }
            }
            best
        }
        rec(sorted, classes)
    }

    #[test]
    fn jenks_matches_brute_force_on_seeded_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let n = rng.random_range(4..=12);
            let classes = rng.random_range(1..=4.min(n));
            let values: Vec<f64> =
                (0..n).map(|_| (rng.random::<f64>() * 100.0 * 8.0).round() / 8.0).collect();
            let breaks = jenks_breaks(&values, classes).unwrap();
            // recompute DP cost from the returned breaks
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let mut cost = 0.0;
            let mut start = 0;
            for b in &breaks {
                let end = sorted.iter().rposition(|v| v <= b).unwrap() + 1;
                let xs = &sorted[start..end];
                if !xs.is_empty() {
                    let mean: f64 = xs.iter().sum::<f64>() / xs.len() as f64;
                    cost += xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
                }
                start = end;
            }
            let oracle = jenks_brute(&sorted, classes);
            assert!(
                (cost - oracle).abs() < 1e-6,
                "dp cost {cost} vs brute {oracle} for {values:?} k={classes}"
            );
        }
    }

    use crate::scenario::{default_ev_catalog, Trip};

    fn agent(id: u32, dist: f64, soc: f64, tcd: f64, cd: f64, purpose: Purpose) -> DriverAgent {
        DriverAgent {
            agent_id: id,
            ev: default_ev_catalog()[0].clone(),
            soc,
            soc_threshold: 0.2,
            trips: vec![Trip {
                origin: 0,
                destination: 1,
                purpose,
                start_time_min: 480.0,
                planned_distance_mi: dist,
            }],
            cluster_id: None,
            cd,
            tcd,
        }
    }

    fn regime_agents() -> Vec<DriverAgent> {
        // five regimes echoing the centroid table, one work + one leisure each
        let regimes = [
            (19.6, 0.49, 0.03, 0.03),
            (30.1, 0.25, 0.04, 0.03),
            (20.4, 0.52, 0.31, 0.26),
            (30.6, 0.76, 0.04, 0.03),
            (10.6, 0.70, 0.49, 1.00),
        ];
        let mut agents = Vec::new();
        for (r, (d, s, t, c)) in regimes.iter().enumerate() {
            agents.push(agent(2 * r as u32, *d, *s, *t, *c, Purpose::Work));
            agents.push(agent(2 * r as u32 + 1, *d + 0.2, *s + 0.01, *t, *c, Purpose::Leisure));
        }
        agents
    }

    #[test]
    fn ten_engineered_agents_form_ten_singleton_groups() {
        let agents = regime_agents();
        let groups = cluster_drivers(&agents, 17).unwrap();
        assert_eq!(groups.groups.len(), 10);
        let mut seen = alloc::collections::BTreeSet::new();
        for ids in groups.groups.values() {
            assert_eq!(ids.len(), 1);
            seen.insert(ids[0]);
        }
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn single_purpose_population_leaves_half_empty() {
        let mut agents = regime_agents();
        for a in &mut agents {
            for t in &mut a.trips {
                t.purpose = Purpose::Work;
            }
        }
        let groups = cluster_drivers(&agents, 17).unwrap();
        let (mut filled, mut empty) = (0, 0);
        for ((_, p), ids) in &groups.groups {
            match p {
                Purpose::Work => {
                    assert!(!ids.is_empty());
                    filled += 1;
                }
                Purpose::Leisure => {
                    assert!(ids.is_empty());
                    empty += 1;
                }
            }
        }
        assert_eq!((filled, empty), (5, 5));
    }

    #[test]
    fn dense_short_regime_maps_to_full_cd_centroid() {
        let agents = regime_agents();
        let groups = cluster_drivers(&agents, 17).unwrap();
        // find the cluster containing agent 8/9 (short distance, dense chargers)
        let idx = groups
            .groups
            .iter()
            .find(|(_, ids)| ids.contains(&8))
            .map(|((c, _), _)| *c as usize)
            .unwrap();
        let centroid = &groups.model.centroids[idx];
        // normalized CD column is index 3; distance column 0 is the smallest
        assert!(centroid[3] > 0.99);
        for (i, other) in groups.model.centroids.iter().enumerate() {
            if i != idx {
                assert!(centroid[0] < other[0]);
            }
        }
    }

    #[test]
    fn groups_partition_the_agent_set() {
        let agents = regime_agents();
        let groups = cluster_drivers(&agents, 3).unwrap();
        let mut all: Vec<u32> = groups.groups.values().flatten().copied().collect();
        all.sort();
        let mut expect: Vec<u32> = agents.iter().map(|a| a.agent_id).collect();
        expect.sort();
        assert_eq!(all, expect);
    }
}
