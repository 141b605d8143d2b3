//! Dataset ingestion and EMD-controlled non-IID label-skew partitioning.
//!
//! The skew metric is the weighted L1 distance between each client's label
//! distribution and the population distribution ("earth moving distance").
//! Zero means every client mirrors the population; the maximum for `C`
//! classes is `2 * (1 - 1/C)` (every client holds a single class).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// In-memory dataset: row-major feature matrix plus dense class labels.
/// Immutable after construction; every class in `[0, n_classes)` is present.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<u32>,
    n_features: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<u32>,
        n_classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidArgument("dataset has no samples".into()));
        }
        if n_features == 0 || n_classes == 0 {
            return Err(Error::InvalidArgument(
                "n_features and n_classes must be positive".into(),
            ));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::InvalidArgument(format!(
                "feature matrix has {} values, expected {} ({} samples x {} features)",
                features.len(),
                labels.len() * n_features,
                labels.len(),
                n_features
            )));
        }
        if !features.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("dataset features".into()));
        }
        let mut seen = vec![false; n_classes];
        for &l in &labels {
            let idx = l as usize;
            if idx >= n_classes {
                return Err(Error::InvalidArgument(format!(
                    "label {l} out of range for {n_classes} classes"
                )));
            }
            seen[idx] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidArgument(format!(
                "class {missing} has no samples"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            n_features,
            n_classes,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Population label distribution.
    pub fn class_proportions(&self) -> Vec<f64> {
        let n = self.n_samples() as f64;
        self.label_counts().iter().map(|&c| c as f64 / n).collect()
    }

    /// New dataset holding the given rows (indices must be in range and the
    /// subset must still contain every class).
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n_samples() {
                return Err(Error::InvalidArgument(format!(
                    "sample index {i} out of range"
                )));
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(features, self.n_features, labels, self.n_classes)
    }
}

/// A client partition: per-client sample indices, the label distribution each
/// client ended up with, and the skew actually achieved.
#[derive(Clone, Debug)]
pub struct PartitionSpec {
    pub assignments: Vec<Vec<usize>>,
    pub client_class_props: Vec<Vec<f64>>,
    pub achieved_emd: f64,
}

/// One bisection step: the skew-mix coefficient tried, the skew of the
/// continuous (pre-assignment) mix, and the skew achieved after integral
/// sample assignment.
#[derive(Clone, Copy, Debug)]
pub struct PartitionTracePoint {
    pub lambda: f64,
    pub mix_emd: f64,
    pub achieved_emd: f64,
}

/// Largest achievable skew for a given class count.
pub fn emd_max(n_classes: usize) -> f64 {
    2.0 * (1.0 - 1.0 / n_classes as f64)
}

/// Weighted mean L1 distance between client label distributions and the
/// population distribution.
pub fn emd(client_props: &[Vec<f64>], client_weights: &[f64], global_props: &[f64]) -> Result<f64> {
    if client_props.len() != client_weights.len() {
        return Err(Error::DimMismatch {
            expected: client_props.len(),
            got: client_weights.len(),
        });
    }
    if client_props.is_empty() {
        return Err(Error::InvalidArgument(
            "emd needs at least one client".into(),
        ));
    }
    let n_classes = global_props.len();
    check_distribution(global_props, "global_props")?;
    let weight_sum: f64 = client_weights.iter().sum();
    if client_weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite())
        || (weight_sum - 1.0).abs() > 1e-6
    {
        return Err(Error::InvalidArgument(
            "client weights must be nonnegative and sum to 1".into(),
        ));
    }
    let mut total = 0.0;
    for (k, props) in client_props.iter().enumerate() {
        if props.len() != n_classes {
            return Err(Error::DimMismatch {
                expected: n_classes,
                got: props.len(),
            });
        }
        check_distribution(props, "client_props")?;
        let l1: f64 = props
            .iter()
            .zip(global_props)
            .map(|(p, q)| (p - q).abs())
            .sum();
        total += client_weights[k] * l1;
    }
    Ok(total)
}

fn check_distribution(p: &[f64], name: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} is empty")));
    }
    if p.iter().any(|&x| !x.is_finite() || x < -1e-12) {
        return Err(Error::InvalidArgument(format!(
            "{name} must be a probability vector"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "{name} sums to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Equal-size (+/-1) client shards whose achieved skew lands within 0.05 of
/// `target_emd`.
///
/// A Dirichlet-skewed allocation (each client concentrated on a rotating
/// dominant class, so per-class demand stays feasible) is mixed with the
/// population allocation; the mixing coefficient is bisected until the skew
/// achieved after integral assignment matches the target.
pub fn partition_by_target_emd(
    ds: &Dataset,
    n_clients: usize,
    target_emd: f64,
    seed: u64,
) -> Result<PartitionSpec> {
    partition_by_target_emd_traced(ds, n_clients, target_emd, seed).map(|(spec, _)| spec)
}

/// [`partition_by_target_emd`] plus the bisection trace, for diagnostics and
/// monotonicity checks.
pub fn partition_by_target_emd_traced(
    ds: &Dataset,
    n_clients: usize,
    target_emd: f64,
    seed: u64,
) -> Result<(PartitionSpec, Vec<PartitionTracePoint>)> {
    const TOLERANCE: f64 = 0.05;
    const EARLY_STOP: f64 = 0.01;
    const MAX_ITERS: usize = 48;

    let n = ds.n_samples();
    let n_classes = ds.n_classes();
    if n_clients == 0 || n_clients > n {
        return Err(Error::Partition(format!(
            "n_clients must be in [1, {n}], got {n_clients}"
        )));
    }
    let max = emd_max(n_classes);
    if !(0.0..max).contains(&target_emd) {
        return Err(Error::Partition(format!(
            "target emd {target_emd} outside [0, {max}) for {n_classes} classes"
        )));
    }

    let global_props = ds.class_proportions();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // Per-class sample pools, shuffled once so every bisection step sees the
    // same draw order.
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in ds.labels().iter().enumerate() {
        pools[l as usize].push(i);
    }
    for pool in &mut pools {
        pool.shuffle(&mut rng);
    }

    // Equal-size shards: the first n % K clients get one extra sample.
    let base = n / n_clients;
    let shard_sizes: Vec<usize> = (0..n_clients)
        .map(|k| base + usize::from(k < n % n_clients))
        .collect();
    let weights: Vec<f64> = shard_sizes.iter().map(|&s| s as f64 / n as f64).collect();

    let skew_rows = draw_skew_rows(&mut rng, n_clients, n_classes);

    let evaluate = |lambda: f64| -> Result<(PartitionSpec, f64)> {
        let rows: Vec<Vec<f64>> = skew_rows
            .iter()
            .map(|q| {
                q.iter()
                    .zip(&global_props)
                    .map(|(qi, pi)| lambda * qi + (1.0 - lambda) * pi)
                    .collect()
            })
            .collect();
        let mix_emd = emd(&rows, &weights, &global_props)?;
        let spec = assign_samples(&pools, &shard_sizes, &rows, &global_props, &weights)?;
        Ok((spec, mix_emd))
    };

    let mut trace = Vec::new();
    let mut best: Option<(f64, PartitionSpec)> = None;
    let mut consider = |lambda: f64,
                        trace: &mut Vec<PartitionTracePoint>,
                        best: &mut Option<(f64, PartitionSpec)>|
     -> Result<f64> {
        let (spec, mix_emd) = evaluate(lambda)?;
        let achieved = spec.achieved_emd;
        trace.push(PartitionTracePoint {
            lambda,
            mix_emd,
            achieved_emd: achieved,
        });
        let gap = (achieved - target_emd).abs();
        if best.as_ref().map_or(true, |(g, _)| gap < *g) {
            *best = Some((gap, spec));
        }
        Ok(achieved)
    };

    consider(0.0, &mut trace, &mut best)?;
    let at_one = consider(1.0, &mut trace, &mut best)?;
    if target_emd > at_one + TOLERANCE {
        return Err(Error::Partition(format!(
            "target emd {target_emd} unreachable: the fully skewed allocation achieves only \
             {at_one:.4} (need more samples per class or fewer clients)"
        )));
    }

    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..MAX_ITERS {
        if best.as_ref().map_or(false, |(g, _)| *g <= EARLY_STOP) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let achieved = consider(mid, &mut trace, &mut best)?;
        if achieved < target_emd {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let (gap, spec) = best.expect("bisection evaluated at least one point");
    if gap > TOLERANCE {
        return Err(Error::Partition(format!(
            "could not reach target emd {target_emd}: best achieved gap {gap:.4}"
        )));
    }
    Ok((spec, trace))
}

/// Skew basis: one Dirichlet row per client, concentrated on class
/// `k % n_classes` so per-class demand stays balanced across clients.
fn draw_skew_rows(rng: &mut ChaCha20Rng, n_clients: usize, n_classes: usize) -> Vec<Vec<f64>> {
    const DOMINANT_ALPHA: f64 = 20.0;
    const BASE_ALPHA: f64 = 0.05;
    (0..n_clients)
        .map(|k| {
            let dominant = k % n_classes;
            let mut row: Vec<f64> = (0..n_classes)
                .map(|c| {
                    let alpha = if c == dominant {
                        DOMINANT_ALPHA
                    } else {
                        BASE_ALPHA
                    };
                    Gamma::new(alpha, 1.0).expect("valid gamma shape").sample(rng)
                })
                .collect();
            let sum: f64 = row.iter().sum();
            if sum < 1e-300 {
                row = vec![0.0; n_classes];
                row[dominant] = 1.0;
            } else {
                for x in &mut row {
                    *x /= sum;
                }
            }
            row
        })
        .collect()
}

/// Integral assignment of pooled samples to shards that tracks the requested
/// per-client class proportions; shortfalls are substituted from whichever
/// class has the most stock left (lowest class index on ties).
fn assign_samples(
    pools: &[Vec<usize>],
    shard_sizes: &[usize],
    rows: &[Vec<f64>],
    global_props: &[f64],
    weights: &[f64],
) -> Result<PartitionSpec> {
    let n_classes = pools.len();
    let mut cursors = vec![0usize; n_classes];

    let mut assignments = Vec::with_capacity(shard_sizes.len());
    let mut achieved_props = Vec::with_capacity(shard_sizes.len());
    for (&size, row) in shard_sizes.iter().zip(rows) {
        let desired = largest_remainder_counts(size, row);
        let mut take: Vec<usize> = desired
            .iter()
            .enumerate()
            .map(|(c, &d)| d.min(pools[c].len() - cursors[c]))
            .collect();
        let mut shortfall = size - take.iter().sum::<usize>();
        while shortfall > 0 {
            let (mut best_c, mut best_left) = (None, 0usize);
            for c in 0..n_classes {
                let left = pools[c].len() - cursors[c] - take[c];
                if left > best_left {
                    best_left = left;
                    best_c = Some(c);
                }
            }
            let Some(c) = best_c else {
                return Err(Error::Partition(
                    "ran out of samples while building shards".into(),
                ));
            };
            let extra = shortfall.min(best_left);
            take[c] += extra;
            shortfall -= extra;
        }
        let mut members = Vec::with_capacity(size);
        for (c, &t) in take.iter().enumerate() {
            members.extend_from_slice(&pools[c][cursors[c]..cursors[c] + t]);
            cursors[c] += t;
        }
        members.sort_unstable();
        achieved_props.push(take.iter().map(|&t| t as f64 / size as f64).collect());
        assignments.push(members);
    }

    let achieved_emd = emd(&achieved_props, weights, global_props)?;
    Ok(PartitionSpec {
        assignments,
        client_class_props: achieved_props,
        achieved_emd,
    })
}

/// Integer counts summing to `total` that track `props` (largest-remainder
/// rounding; remainder ties go to the lower class).
fn largest_remainder_counts(total: usize, props: &[f64]) -> Vec<usize> {
    let targets: Vec<f64> = props.iter().map(|&p| p * total as f64).collect();
    let mut counts: Vec<usize> = targets.iter().map(|&t| t.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - targets[a].floor();
        let fb = targets[b] - targets[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &c in order.iter().take(total.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

/// Gaussian class blobs with means `class_separation` apart on a randomly
/// oriented simplex. Balanced labels (sample `i` has class `i % n_classes`);
/// bit-identical datasets for equal seeds.
pub fn make_synthetic(
    n_classes: usize,
    n_features: usize,
    n_samples: usize,
    class_separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_classes < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    if n_features == 0 {
        return Err(Error::InvalidArgument("need at least one feature".into()));
    }
    if n_samples < n_classes {
        return Err(Error::InvalidArgument(format!(
            "need at least one sample per class ({n_classes}), got {n_samples}"
        )));
    }
    if !(class_separation.is_finite() && class_separation >= 0.0) {
        return Err(Error::InvalidArgument(
            "class_separation must be nonnegative".into(),
        ));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let means = simplex_means(&mut rng, n_classes, n_features, class_separation);
    let mut features = Vec::with_capacity(n_samples * n_features);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let class = i % n_classes;
        labels.push(class as u32);
        for f in 0..n_features {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features.push(means[class][f] + noise);
        }
    }
    Dataset::new(features, n_features, labels, n_classes)
}

/// Random directions scaled so pairwise mean distance is `separation`. Rows
/// are Gram-Schmidt orthonormalized when the feature space is wide enough,
/// which makes pairwise distances exact.
fn simplex_means(
    rng: &mut ChaCha20Rng,
    n_classes: usize,
    n_features: usize,
    separation: f64,
) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..n_features).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    if n_features >= n_classes {
        for i in 0..n_classes {
            for j in 0..i {
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                let prev = rows[j].clone();
                for (x, y) in rows[i].iter_mut().zip(&prev) {
                    *x -= dot * y;
                }
            }
            normalize_row(&mut rows[i], rng);
        }
    } else {
        for row in &mut rows {
            normalize_row(row, rng);
        }
    }
    let scale = separation / 2.0_f64.sqrt();
    for row in &mut rows {
        for x in row.iter_mut() {
            *x *= scale;
        }
    }
    rows
}

fn normalize_row(row: &mut [f64], rng: &mut ChaCha20Rng) {
    loop {
        let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for x in row.iter_mut() {
                *x /= norm;
            }
            return;
        }
        for x in row.iter_mut() {
            *x = StandardNormal.sample(rng);
        }
    }
}

/// Splits off a stratified test set: `frac` of each class (at least one
/// sample), the rest stays in the training set.
pub fn stratified_holdout(ds: &Dataset, frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "holdout fraction must be in (0, 1), got {frac}"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
    for (i, &l) in ds.labels().iter().enumerate() {
        pools[l as usize].push(i);
    }
    let mut test_idx = Vec::new();
    let mut train_idx = Vec::new();
    for (class, pool) in pools.iter_mut().enumerate() {
        if pool.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "class {class} has {} sample(s); need at least 2 to hold out a test sample",
                pool.len()
            )));
        }
        pool.shuffle(&mut rng);
        let want = ((pool.len() as f64 * frac).round() as usize)
            .max(1)
            .min(pool.len() - 1);
        test_idx.extend_from_slice(&pool[..want]);
        train_idx.extend_from_slice(&pool[want..]);
    }
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((ds.subset(&train_idx)?, ds.subset(&test_idx)?))
}

/// Loads a `f0,...,fM,label` CSV. Labels are remapped to dense `[0, C)`;
/// the returned vector maps each dense label back to its original value.
pub fn load_csv(path: &std::path::Path) -> Result<(Dataset, Vec<i64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .enumerate();

    let (_, header) = lines.next().ok_or(Error::CsvParse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 2 || columns[columns.len() - 1] != "label" {
        return Err(Error::CsvParse {
            line: 1,
            msg: "header must be f0,...,fN,label".into(),
        });
    }
    let n_features = columns.len() - 1;
    for (i, col) in columns[..n_features].iter().enumerate() {
        if *col != format!("f{i}") {
            return Err(Error::CsvParse {
                line: 1,
                msg: format!("expected column f{i}, found '{col}'"),
            });
        }
    }

    let mut features = Vec::new();
    let mut raw_labels: Vec<i64> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns.len() {
            return Err(Error::CsvParse {
                line: line_no,
                msg: format!("expected {} cells, found {}", columns.len(), cells.len()),
            });
        }
        for (c, cell) in cells[..n_features].iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| Error::CsvParse {
                line: line_no,
                msg: format!("column f{c}: '{cell}' is not numeric"),
            })?;
            if !value.is_finite() {
                return Err(Error::CsvParse {
                    line: line_no,
                    msg: format!("column f{c}: non-finite value"),
                });
            }
            features.push(value);
        }
        let label_cell = cells[n_features].trim();
        let label: f64 = label_cell.parse().map_err(|_| Error::CsvParse {
            line: line_no,
            msg: format!("column label: '{label_cell}' is not numeric"),
        })?;
        if !label.is_finite() || label.fract() != 0.0 {
            return Err(Error::CsvParse {
                line: line_no,
                msg: format!("column label: '{label_cell}' is not an integer"),
            });
        }
        raw_labels.push(label as i64);
    }
    if raw_labels.is_empty() {
        return Err(Error::CsvParse {
            line: 2,
            msg: "no data rows".into(),
        });
    }

    let mut label_map: Vec<i64> = raw_labels.clone();
    label_map.sort_unstable();
    label_map.dedup();
    let labels: Vec<u32> = raw_labels
        .iter()
        .map(|l| label_map.binary_search(l).unwrap() as u32)
        .collect();
    let ds = Dataset::new(features, n_features, labels, label_map.len())?;
    Ok((ds, label_map))
}
