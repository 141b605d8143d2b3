//! Dense/sparse vectors, top-K masks, and the arithmetic they support.
//!
//! All types are immutable values after construction and every operation is a
//! pure function, so they are safe to use from any number of threads. Vector
//! entries must stay finite; constructors and combining operations enforce it.

use crate::error::{Error, Result};

/// Norms below this threshold are treated as zero by [`normalize`].
pub const NORM_EPSILON: f64 = 1e-12;

/// Flat vector of 64-bit reals with a fixed positive dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseVector {
    values: Vec<f64>,
}

impl DenseVector {
    /// All-zero vector of dimension `dim`.
    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "vector dimension must be positive");
        DenseVector {
            values: vec![0.0; dim],
        }
    }

    /// Builds a vector from raw values, rejecting empty or non-finite input.
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "vector dimension must be positive".into(),
            ));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dense vector".into()));
        }
        Ok(DenseVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self * c`, validated to stay finite.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        DenseVector::from_vec(self.values.iter().map(|v| v * c).collect())
    }

    /// `self + other`, validated to stay finite.
    pub fn add(&self, other: &DenseVector) -> Result<Self> {
        self.check_dim(other.dim())?;
        DenseVector::from_vec(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn dot(&self, other: &DenseVector) -> Result<f64> {
        self.check_dim(other.dim())?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    fn check_dim(&self, other: usize) -> Result<()> {
        if self.dim() != other {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: other,
            });
        }
        Ok(())
    }
}

/// Sorted (index, value) pairs over a fixed dimension; the unit of all
/// transmission. Stored values are always nonzero and finite.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl SparseVector {
    /// Builds a sparse vector, validating ordering, range and value rules.
    pub fn new(dim: usize, entries: Vec<(u32, f64)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "vector dimension must be positive".into(),
            ));
        }
        if dim > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "dimension {dim} exceeds the u32 index space"
            )));
        }
        let mut prev: Option<u32> = None;
        for &(i, v) in &entries {
            if (i as usize) >= dim {
                return Err(Error::InvalidArgument(format!(
                    "sparse index {i} out of range for dim {dim}"
                )));
            }
            if let Some(p) = prev {
                if i <= p {
                    return Err(Error::InvalidArgument(
                        "sparse indices must be strictly increasing".into(),
                    ));
                }
            }
            if !v.is_finite() {
                return Err(Error::NonFinite("sparse vector".into()));
            }
            if v == 0.0 {
                return Err(Error::InvalidArgument(
                    "sparse vector entries must be nonzero".into(),
                ));
            }
            prev = Some(i);
        }
        Ok(SparseVector { dim, entries })
    }

    /// Sparse vector with no entries.
    pub fn empty(dim: usize) -> Self {
        assert!(dim > 0, "vector dimension must be positive");
        SparseVector {
            dim,
            entries: Vec::new(),
        }
    }

    /// Collects every nonzero coordinate of a dense vector.
    pub fn from_dense(v: &DenseVector) -> Self {
        let entries = v
            .values()
            .iter()
            .enumerate()
            .filter(|(_, &x)| x != 0.0)
            .map(|(i, &x)| (i as u32, x))
            .collect();
        SparseVector {
            dim: v.dim(),
            entries,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    /// Scatters the entries into a dense zero-filled vector.
    pub fn densify(&self) -> DenseVector {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i as usize] = v;
        }
        DenseVector { values: out }
    }
}

/// Sorted set of selected coordinate indices in `[0, dim)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    dim: usize,
    selected: Vec<u32>,
}

impl Mask {
    pub fn new(dim: usize, selected: Vec<u32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "mask dimension must be positive".into(),
            ));
        }
        let mut prev: Option<u32> = None;
        for &i in &selected {
            if (i as usize) >= dim {
                return Err(Error::InvalidArgument(format!(
                    "mask index {i} out of range for dim {dim}"
                )));
            }
            if let Some(p) = prev {
                if i <= p {
                    return Err(Error::InvalidArgument(
                        "mask indices must be strictly increasing".into(),
                    ));
                }
            }
            prev = Some(i);
        }
        Ok(Mask { dim, selected })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn selected(&self) -> &[u32] {
        &self.selected
    }

    /// Jaccard overlap `|a ∩ b| / |a ∪ b|` of two masks over the same
    /// dimension. Two empty masks count as identical (1.0).
    pub fn jaccard(&self, other: &Mask) -> f64 {
        assert_eq!(self.dim, other.dim, "mask dimensions must match");
        let (mut i, mut j) = (0usize, 0usize);
        let mut inter = 0usize;
        while i < self.selected.len() && j < other.selected.len() {
            match self.selected[i].cmp(&other.selected[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    inter += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        let union = self.selected.len() + other.selected.len() - inter;
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// Number of coordinates kept at a given compression rate: `ceil(rate * dim)`,
/// clamped to `[1, dim]`. Products within 1e-9 of an integer are snapped to it
/// first so decimal rates like 0.3 * 10 do not round up spuriously.
pub fn keep_count(rate: f64, dim: usize) -> usize {
    let raw = rate * dim as f64;
    let nearest = raw.round();
    let k = if (raw - nearest).abs() < 1e-9 {
        nearest
    } else {
        raw.ceil()
    };
    (k as usize).clamp(1, dim)
}

/// Selects the `keep` indices of largest magnitude. Ties break toward the
/// lower index, so the result is deterministic and seed-independent.
pub fn top_k_select(v: &DenseVector, keep: usize) -> Result<Mask> {
    if keep == 0 || keep > v.dim() {
        return Err(Error::InvalidArgument(format!(
            "keep must be in [1, {}], got {keep}",
            v.dim()
        )));
    }
    let values = v.values();
    let mut order: Vec<u32> = (0..v.dim() as u32).collect();
    order.sort_unstable_by(|&a, &b| {
        let ma = values[a as usize].abs();
        let mb = values[b as usize].abs();
        mb.total_cmp(&ma).then(a.cmp(&b))
    });
    order.truncate(keep);
    order.sort_unstable();
    Mask::new(v.dim(), order)
}

/// Keeps the selected coordinates of `v` as a sparse vector. Selected
/// coordinates whose value is exactly zero carry no information and are
/// dropped from the entry list.
pub fn apply_mask(v: &DenseVector, m: &Mask) -> Result<SparseVector> {
    if v.dim() != m.dim() {
        return Err(Error::DimMismatch {
            expected: v.dim(),
            got: m.dim(),
        });
    }
    let entries = m
        .selected()
        .iter()
        .filter_map(|&i| {
            let x = v.get(i as usize);
            (x != 0.0).then_some((i, x))
        })
        .collect();
    SparseVector::new(v.dim(), entries)
}

/// Zeroes the selected coordinates of `v`, keeping the rest untouched.
pub fn complement_mask_zero(v: &DenseVector, m: &Mask) -> Result<DenseVector> {
    if v.dim() != m.dim() {
        return Err(Error::DimMismatch {
            expected: v.dim(),
            got: m.dim(),
        });
    }
    let mut out = v.values().to_vec();
    for &i in m.selected() {
        out[i as usize] = 0.0;
    }
    Ok(DenseVector { values: out })
}

/// `v / ‖v‖₂`, or `v` unchanged when the norm is at most [`NORM_EPSILON`]
/// (the zero vector maps to itself).
pub fn normalize(v: &DenseVector) -> DenseVector {
    let norm = v.l2_norm();
    if norm <= NORM_EPSILON {
        return v.clone();
    }
    DenseVector {
        values: v.values().iter().map(|x| x / norm).collect(),
    }
}

/// Coordinate-wise sum over the union of supports, then scaled. Summation
/// order is fixed by ascending (list position, index) so the result is
/// bitwise deterministic; exact zeros produced by cancellation are dropped.
pub fn sparse_sum_scaled(vs: &[SparseVector], scale: f64) -> Result<SparseVector> {
    let first = vs
        .first()
        .ok_or_else(|| Error::InvalidArgument("sparse_sum_scaled needs a nonempty list".into()))?;
    let dim = first.dim();
    for v in vs {
        if v.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: v.dim(),
            });
        }
    }
    if !scale.is_finite() {
        return Err(Error::NonFinite("sparse_sum_scaled scale".into()));
    }
    let mut acc = vec![0.0f64; dim];
    for v in vs {
        for &(i, x) in v.entries() {
            acc[i as usize] += x;
        }
    }
    let entries: Vec<(u32, f64)> = acc
        .iter()
        .enumerate()
        .filter_map(|(i, &x)| {
            let y = x * scale;
            (y != 0.0).then_some((i as u32, y))
        })
        .collect();
    SparseVector::new(dim, entries)
}
