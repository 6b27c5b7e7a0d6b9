//! Coordinate-format tensors and the multilinear kernels built on them.
//!
//! Entries are kept in a canonical colexicographic order: the last mode is the
//! most significant key. Growth happens along the last mode, so appending a
//! batch of slices is a concatenation that keeps the order intact, and any
//! contiguous range of last-mode slices is a contiguous range of entries.

use std::cmp::Ordering;
use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Dense factor matrix, one row per mode index and one column per component.
pub type FactorMatrix = DMatrix<f64>;

/// Sparse N-mode tensor in coordinate format.
///
/// Duplicate coordinates are summed and exact zeros dropped at construction,
/// so two tensors holding the same values compare equal. Dense data is just a
/// fully populated instance. A mode of size zero is allowed (an empty batch).
#[derive(Clone, Debug, PartialEq)]
pub struct SparseTensor {
    dims: Vec<usize>,
    coords: Vec<usize>,
    values: Vec<f64>,
}

fn colex_cmp(a: &[usize], b: &[usize]) -> Ordering {
    a.iter().rev().cmp(b.iter().rev())
}

impl SparseTensor {
    /// Builds a tensor from flattened coordinates (`values.len() * dims.len()`
    /// entries, one coordinate tuple after another) and values.
    pub fn new(dims: Vec<usize>, coords: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n = dims.len();
        if n == 0 {
            return Err(Error::InvalidArgument("tensor needs at least one mode".into()));
        }
        if coords.len() != values.len() * n {
            return Err(Error::ShapeMismatch(format!(
                "{} coordinates for {} values of a {}-mode tensor",
                coords.len(),
                values.len(),
                n
            )));
        }
        for (e, c) in coords.chunks_exact(n).enumerate() {
            for (mode, (&index, &size)) in c.iter().zip(&dims).enumerate() {
                if index >= size {
                    return Err(Error::IndexOutOfRange { mode, index, size });
                }
            }
            if !values[e].is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite value {} at entry {e}",
                    values[e]
                )));
            }
        }

        let sorted = coords
            .chunks_exact(n)
            .zip(coords.chunks_exact(n).skip(1))
            .all(|(a, b)| colex_cmp(a, b) == Ordering::Less);
        if sorted && values.iter().all(|&v| v != 0.0) {
            return Ok(Self { dims, coords, values });
        }

        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| colex_cmp(&coords[a * n..(a + 1) * n], &coords[b * n..(b + 1) * n]));

        let mut out_coords = Vec::with_capacity(coords.len());
        let mut out_values: Vec<f64> = Vec::with_capacity(values.len());
        let mut run = 0;
        while run < order.len() {
            let head = &coords[order[run] * n..(order[run] + 1) * n];
            let mut sum = 0.0;
            let mut end = run;
            while end < order.len() && &coords[order[end] * n..(order[end] + 1) * n] == head {
                sum += values[order[end]];
                end += 1;
            }
            if sum != 0.0 {
                out_coords.extend_from_slice(head);
                out_values.push(sum);
            }
            run = end;
        }
        Ok(Self { dims, coords: out_coords, values: out_values })
    }

    /// Builds a tensor from `(coordinate, value)` pairs.
    pub fn from_entries<I>(dims: Vec<usize>, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<usize>, f64)>,
    {
        let n = dims.len();
        let mut coords = Vec::new();
        let mut values = Vec::new();
        for (c, v) in entries {
            if c.len() != n {
                return Err(Error::ShapeMismatch(format!(
                    "coordinate of length {} for a {n}-mode tensor",
                    c.len()
                )));
            }
            coords.extend(c);
            values.push(v);
        }
        Self::new(dims, coords, values)
    }

    /// Tensor with no stored entries.
    pub fn zeros(dims: Vec<usize>) -> Self {
        Self { dims, coords: Vec::new(), values: Vec::new() }
    }

    /// Builds a tensor from a dense buffer laid out with the first index
    /// varying fastest.
    pub fn from_dense(dims: Vec<usize>, data: &[f64]) -> Result<Self> {
        let numel: usize = dims.iter().product();
        if data.len() != numel {
            return Err(Error::ShapeMismatch(format!(
                "dense buffer of {} values for {numel} entries",
                data.len()
            )));
        }
        let n = dims.len();
        let mut coords = Vec::with_capacity(numel * n);
        let mut values = Vec::with_capacity(numel);
        let mut c = vec![0usize; n];
        for &v in data {
            if v != 0.0 {
                coords.extend_from_slice(&c);
                values.push(v);
            }
            for (m, idx) in c.iter_mut().enumerate() {
                *idx += 1;
                if *idx < dims[m] {
                    break;
                }
                *idx = 0;
            }
        }
        // First-index-fastest traversal is exactly colexicographic order.
        Self::new(dims, coords, values)
    }

    /// Dense copy with the first index varying fastest.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.numel()];
        for (c, v) in self.iter() {
            out[self.linear_index(c)] = v;
        }
        out
    }

    fn linear_index(&self, coord: &[usize]) -> usize {
        coord
            .iter()
            .zip(&self.dims)
            .rev()
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndims(&self) -> usize {
        self.dims.len()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Number of entries in the dense layout.
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn coord(&self, entry: usize) -> &[usize] {
        let n = self.ndims();
        &self.coords[entry * n..(entry + 1) * n]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[usize], f64)> + '_ {
        self.coords
            .chunks_exact(self.ndims())
            .zip(self.values.iter().copied())
    }

    /// Value at `coord`, zero when not stored.
    pub fn get(&self, coord: &[usize]) -> f64 {
        let n = self.ndims();
        let mut lo = 0;
        let mut hi = self.nnz();
        while lo < hi {
            let mid = (lo + hi) / 2;
            match colex_cmp(&self.coords[mid * n..(mid + 1) * n], coord) {
                Ordering::Less => lo = mid + 1,
                Ordering::Greater => hi = mid,
                Ordering::Equal => return self.values[mid],
            }
        }
        0.0
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Per-index sum of squared entries along `mode`.
    pub fn mode_sum_of_squares(&self, mode: usize) -> Result<Vec<f64>> {
        self.check_mode(mode)?;
        let mut out = vec![0.0; self.dims[mode]];
        for (c, v) in self.iter() {
            out[c[mode]] += v * v;
        }
        Ok(out)
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.ndims() {
            return Err(Error::ModeOutOfRange { mode, modes: self.ndims() });
        }
        Ok(())
    }

    /// Appends `batch` after the existing slices of the last mode.
    pub fn append_slices(&self, batch: &SparseTensor) -> Result<SparseTensor> {
        let mut out = self.clone();
        out.extend_slices(batch)?;
        Ok(out)
    }

    /// In-place [`append_slices`](Self::append_slices).
    pub fn extend_slices(&mut self, batch: &SparseTensor) -> Result<()> {
        let n = self.ndims();
        if batch.ndims() != n || self.dims[..n - 1] != batch.dims[..n - 1] {
            return Err(Error::ShapeMismatch(format!(
                "cannot append {:?} to {:?}",
                batch.dims, self.dims
            )));
        }
        let offset = self.dims[n - 1];
        self.dims[n - 1] += batch.dims[n - 1];
        self.coords.reserve(batch.coords.len());
        for c in batch.coords.chunks_exact(n) {
            self.coords.extend_from_slice(&c[..n - 1]);
            self.coords.push(c[n - 1] + offset);
        }
        self.values.extend_from_slice(&batch.values);
        Ok(())
    }

    /// Slices `range` of the last mode, relabelled to start at zero.
    pub fn slice_range(&self, range: Range<usize>) -> Result<SparseTensor> {
        let n = self.ndims();
        let k = self.dims[n - 1];
        if range.start > range.end || range.end > k {
            return Err(Error::IndexOutOfRange { mode: n - 1, index: range.end, size: k });
        }
        let last = |e: usize| self.coords[e * n + n - 1];
        let first = partition_point(self.nnz(), |e| last(e) < range.start);
        let end = partition_point(self.nnz(), |e| last(e) < range.end);

        let mut coords = self.coords[first * n..end * n].to_vec();
        for c in coords.chunks_exact_mut(n) {
            c[n - 1] -= range.start;
        }
        let mut dims = self.dims.clone();
        dims[n - 1] = range.end - range.start;
        Ok(SparseTensor { dims, coords, values: self.values[first..end].to_vec() })
    }

    /// Sub-tensor at the cartesian product of `index_sets`, one sorted,
    /// duplicate-free list per mode. Position in each list becomes the new
    /// index along that mode.
    pub fn subtensor(&self, index_sets: &[Vec<usize>]) -> Result<SparseTensor> {
        let n = self.ndims();
        if index_sets.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} index sets for a {n}-mode tensor",
                index_sets.len()
            )));
        }
        let mut lookup = Vec::with_capacity(n);
        for (mode, set) in index_sets.iter().enumerate() {
            let size = self.dims[mode];
            let mut map = vec![usize::MAX; size];
            for (pos, &index) in set.iter().enumerate() {
                if index >= size {
                    return Err(Error::IndexOutOfRange { mode, index, size });
                }
                if pos > 0 && set[pos - 1] >= index {
                    return Err(Error::InvalidArgument(format!(
                        "index set for mode {mode} is not sorted and duplicate-free"
                    )));
                }
                map[index] = pos;
            }
            lookup.push(map);
        }

        let mut coords = Vec::new();
        let mut values = Vec::new();
        let mut buf = vec![0usize; n];
        let last = |e: usize| self.coords[e * n + n - 1];
        let mut start = 0;
        for (pos, &k) in index_sets[n - 1].iter().enumerate() {
            // Slices are contiguous and in order, so each search starts where
            // the previous slice began.
            let first = start + partition_point(self.nnz() - start, |e| last(start + e) < k);
            let end = first + partition_point(self.nnz() - first, |e| last(first + e) <= k);
            start = end;
            buf[n - 1] = pos;
            'entries: for e in first..end {
                let c = &self.coords[e * n..(e + 1) * n];
                for m in 0..n - 1 {
                    let p = lookup[m][c[m]];
                    if p == usize::MAX {
                        continue 'entries;
                    }
                    buf[m] = p;
                }
                coords.extend_from_slice(&buf);
                values.push(self.values[e]);
            }
        }
        // Monotone relabelling of a filtered colex sequence stays colex-sorted.
        let dims = index_sets.iter().map(Vec::len).collect();
        Ok(SparseTensor { dims, coords, values })
    }

    /// Leading sub-tensor keeping indices `< caps[m]` in every mode.
    pub fn leading(&self, caps: &[usize]) -> Result<SparseTensor> {
        if caps.len() != self.ndims() {
            return Err(Error::ShapeMismatch(format!(
                "{} caps for a {}-mode tensor",
                caps.len(),
                self.ndims()
            )));
        }
        let sets: Vec<Vec<usize>> = self
            .dims
            .iter()
            .zip(caps)
            .map(|(&d, &cap)| (0..d.min(cap)).collect())
            .collect();
        self.subtensor(&sets)
    }
}

fn partition_point(len: usize, pred: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, len);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if pred(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Column-wise Kronecker product. Row `ia * b.nrows() + ib` of column `f`
/// holds `a[(ia, f)] * b[(ib, f)]`.
pub fn khatri_rao(a: &FactorMatrix, b: &FactorMatrix) -> Result<FactorMatrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::ColumnCountMismatch { left: a.ncols(), right: b.ncols() });
    }
    let (ra, rb) = (a.nrows(), b.nrows());
    Ok(FactorMatrix::from_fn(ra * rb, a.ncols(), |row, f| {
        a[(row / rb, f)] * b[(row % rb, f)]
    }))
}

fn row_major(m: &FactorMatrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter());
    }
    out
}

/// Matricized tensor times Khatri-Rao product for `mode`.
///
/// `factors` holds one matrix per mode; the entry at `mode` is ignored. The
/// result equals the mode unfolding of `x` (remaining modes ordered with the
/// lowest mode varying fastest) times the Khatri-Rao product of the remaining
/// factors taken in descending mode order, e.g. `X_(0) (C ⊙ B)` for three modes.
pub fn mttkrp(x: &SparseTensor, factors: &[FactorMatrix], mode: usize) -> Result<FactorMatrix> {
    let n = x.ndims();
    x.check_mode(mode)?;
    if factors.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} factors for a {n}-mode tensor",
            factors.len()
        )));
    }
    let others: Vec<usize> = (0..n).filter(|&m| m != mode).collect();
    let rank = match others.first() {
        Some(&m) => factors[m].ncols(),
        None => factors[mode].ncols(),
    };
    for &m in &others {
        if factors[m].ncols() != rank {
            return Err(Error::ColumnCountMismatch { left: rank, right: factors[m].ncols() });
        }
        if factors[m].nrows() != x.dims[m] {
            return Err(Error::ShapeMismatch(format!(
                "factor {m} has {} rows, mode size is {}",
                factors[m].nrows(),
                x.dims[m]
            )));
        }
    }

    let rows: Vec<Vec<f64>> = factors
        .iter()
        .enumerate()
        .map(|(m, f)| if m == mode { Vec::new() } else { row_major(f) })
        .collect();
    let mut out = vec![0.0; x.dims[mode] * rank];

    if n == 3 {
        mttkrp3(x, &rows, mode, rank, &mut out);
    } else {
        let mut prod = vec![0.0; rank];
        for (c, v) in x.iter() {
            prod.iter_mut().for_each(|p| *p = v);
            for &m in &others {
                let r = &rows[m][c[m] * rank..(c[m] + 1) * rank];
                prod.iter_mut().zip(r).for_each(|(p, f)| *p *= f);
            }
            let o = &mut out[c[mode] * rank..(c[mode] + 1) * rank];
            o.iter_mut().zip(&prod).for_each(|(o, p)| *o += p);
        }
    }
    Ok(FactorMatrix::from_row_slice(x.dims[mode], rank, &out))
}

/// Three-mode kernel exploiting the colex entry order: consecutive entries
/// share their last two (mode 0) or last (mode 2) coordinates.
fn mttkrp3(x: &SparseTensor, rows: &[Vec<f64>], mode: usize, rank: usize, out: &mut [f64]) {
    let row = |m: usize, i: usize| &rows[m][i * rank..(i + 1) * rank];
    let mut cache = vec![0.0; rank];
    match mode {
        0 => {
            let mut key = (usize::MAX, usize::MAX);
            for (c, v) in x.iter() {
                if (c[1], c[2]) != key {
                    key = (c[1], c[2]);
                    let (b, cc) = (row(1, c[1]), row(2, c[2]));
                    cache.iter_mut().zip(b.iter().zip(cc)).for_each(|(p, (b, c))| *p = b * c);
                }
                let o = &mut out[c[0] * rank..(c[0] + 1) * rank];
                o.iter_mut().zip(&cache).for_each(|(o, p)| *o += v * p);
            }
        }
        1 => {
            for (c, v) in x.iter() {
                let (a, cc) = (row(0, c[0]), row(2, c[2]));
                let o = &mut out[c[1] * rank..(c[1] + 1) * rank];
                for f in 0..rank {
                    o[f] += v * a[f] * cc[f];
                }
            }
        }
        _ => {
            let mut current = usize::MAX;
            for (c, v) in x.iter() {
                if c[2] != current {
                    if current != usize::MAX {
                        let o = &mut out[current * rank..(current + 1) * rank];
                        o.iter_mut().zip(&cache).for_each(|(o, p)| *o += p);
                    }
                    current = c[2];
                    cache.iter_mut().for_each(|p| *p = 0.0);
                }
                let (a, b) = (row(0, c[0]), row(1, c[1]));
                for f in 0..rank {
                    cache[f] += v * a[f] * b[f];
                }
            }
            if current != usize::MAX {
                let o = &mut out[current * rank..(current + 1) * rank];
                o.iter_mut().zip(&cache).for_each(|(o, p)| *o += p);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sparse(dims: &[usize], fill: f64, seed: u64) -> SparseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let numel: usize = dims.iter().product();
        let data: Vec<f64> = (0..numel)
            .map(|_| if rng.random::<f64>() < fill { rng.random::<f64>() - 0.5 } else { 0.0 })
            .collect();
        SparseTensor::from_dense(dims.to_vec(), &data).unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> FactorMatrix {
        FactorMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() - 0.5)
    }

    #[test]
    fn duplicates_are_summed_and_zeros_dropped() {
        let t = SparseTensor::from_entries(
            vec![2, 2, 2],
            vec![
                (vec![1, 0, 1], 2.0),
                (vec![0, 0, 0], 1.0),
                (vec![1, 0, 1], 3.0),
                (vec![1, 1, 1], 0.0),
                (vec![0, 1, 0], 4.0),
                (vec![0, 1, 0], -4.0),
            ],
        )
        .unwrap();
        assert_eq!(t.nnz(), 2);
        assert_eq!(t.get(&[1, 0, 1]), 5.0);
        assert_eq!(t.get(&[0, 0, 0]), 1.0);
        assert_eq!(t.get(&[0, 1, 0]), 0.0);
    }

    #[test]
    fn construction_rejects_bad_input() {
        let oob = SparseTensor::from_entries(vec![2, 2], vec![(vec![2, 0], 1.0)]);
        assert!(matches!(oob, Err(Error::IndexOutOfRange { mode: 0, index: 2, size: 2 })));
        let nan = SparseTensor::from_entries(vec![2, 2], vec![(vec![0, 0], f64::NAN)]);
        assert!(matches!(nan, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn dense_round_trip() {
        let t = random_sparse(&[3, 4, 5], 0.6, 1);
        let back = SparseTensor::from_dense(t.dims().to_vec(), &t.to_dense()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn khatri_rao_identity_and_hand_cases() {
        let eye = FactorMatrix::identity(2, 2);
        let kr = khatri_rao(&eye, &eye).unwrap();
        assert_eq!(kr.shape(), (4, 2));
        assert_eq!(kr.column(0).as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(kr.column(1).as_slice(), &[0.0, 0.0, 0.0, 1.0]);

        let a = FactorMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let b = FactorMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        assert_eq!(khatri_rao(&a, &b).unwrap().as_slice(), &[3.0, 4.0, 6.0, 8.0]);

        let c = FactorMatrix::zeros(2, 3);
        assert!(matches!(khatri_rao(&a, &c), Err(Error::ColumnCountMismatch { .. })));
    }

    #[test]
    fn khatri_rao_gram_identity_3x2() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_matrix(3, 2, &mut rng);
        let b = random_matrix(3, 2, &mut rng);
        let kr = khatri_rao(&a, &b).unwrap();
        let lhs = kr.transpose() * &kr;
        let rhs = (a.transpose() * &a).component_mul(&(b.transpose() * &b));
        assert!((lhs - &rhs).norm() <= 1e-10 * rhs.norm());
    }

    /// Materializes the unfolding explicitly: column index of entry `(i, j, k)`
    /// in the mode-0 unfolding is `j + J k`, matching rows of `C ⊙ B`.
    fn unfold_oracle(x: &SparseTensor, factors: &[FactorMatrix], mode: usize) -> FactorMatrix {
        let dims = x.dims();
        let others: Vec<usize> = (0..dims.len()).rev().filter(|&m| m != mode).collect();
        let mut kr = factors[others[0]].clone();
        for &m in &others[1..] {
            kr = khatri_rao(&kr, &factors[m]).unwrap();
        }
        let cols: usize = others.iter().map(|&m| dims[m]).product();
        let mut unfolded = FactorMatrix::zeros(dims[mode], cols);
        for (c, v) in x.iter() {
            // Lowest remaining mode varies fastest.
            let mut col = 0;
            for &m in others.iter() {
                col = col * dims[m] + c[m];
            }
            unfolded[(c[mode], col)] += v;
        }
        unfolded * kr
    }

    #[test]
    fn mttkrp_matches_unfolding_oracle() {
        let x = random_sparse(&[5, 4, 3], 0.5, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let factors: Vec<FactorMatrix> =
            x.dims().iter().map(|&d| random_matrix(d, 2, &mut rng)).collect();
        for mode in 0..3 {
            let got = mttkrp(&x, &factors, mode).unwrap();
            let want = unfold_oracle(&x, &factors, mode);
            assert!((&got - &want).norm() <= 1e-10 * want.norm().max(1.0), "mode {mode}");
        }
    }

    #[test]
    fn mttkrp_four_modes_matches_oracle() {
        let x = random_sparse(&[3, 2, 4, 3], 0.4, 13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let factors: Vec<FactorMatrix> =
            x.dims().iter().map(|&d| random_matrix(d, 3, &mut rng)).collect();
        for mode in 0..4 {
            let got = mttkrp(&x, &factors, mode).unwrap();
            let want = unfold_oracle(&x, &factors, mode);
            assert!((&got - &want).norm() <= 1e-10 * want.norm().max(1.0), "mode {mode}");
        }
    }

    #[test]
    fn mttkrp_hand_cases() {
        let ones = SparseTensor::from_dense(vec![2, 2, 2], &[1.0; 8]).unwrap();
        let f = vec![FactorMatrix::from_element(2, 1, 1.0); 3];
        assert_eq!(mttkrp(&ones, &f, 1).unwrap().as_slice(), &[4.0, 4.0]);

        let zero = SparseTensor::zeros(vec![3, 2, 2]);
        let f = vec![
            FactorMatrix::from_element(3, 2, 1.0),
            FactorMatrix::from_element(2, 2, 1.0),
            FactorMatrix::from_element(2, 2, 1.0),
        ];
        let m = mttkrp(&zero, &f, 0).unwrap();
        assert_eq!(m.shape(), (3, 2));
        assert!(m.iter().all(|&v| v == 0.0));

        let bad = vec![FactorMatrix::from_element(2, 1, 1.0); 3];
        assert!(matches!(mttkrp(&zero, &bad, 1), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn mode_sums() {
        let ones = SparseTensor::from_dense(vec![2, 2, 2], &[1.0; 8]).unwrap();
        assert_eq!(ones.mode_sum_of_squares(1).unwrap(), vec![4.0, 4.0]);
        assert_eq!(SparseTensor::zeros(vec![3, 2]).mode_sum_of_squares(0).unwrap(), vec![0.0; 3]);
        assert!(matches!(ones.mode_sum_of_squares(3), Err(Error::ModeOutOfRange { .. })));

        let x = random_sparse(&[6, 5, 4], 0.7, 3);
        for mode in 0..3 {
            let mut want = vec![0.0; x.dims()[mode]];
            for i in 0..6 {
                for j in 0..5 {
                    for k in 0..4 {
                        let v = x.get(&[i, j, k]);
                        want[[i, j, k][mode]] += v * v;
                    }
                }
            }
            let got = x.mode_sum_of_squares(mode).unwrap();
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn append_slices_cases() {
        let x = random_sparse(&[4, 4, 10], 0.5, 5);
        let empty = SparseTensor::zeros(vec![4, 4, 0]);
        assert_eq!(x.append_slices(&empty).unwrap(), x);

        let batch = random_sparse(&[4, 4, 3], 0.5, 6);
        let joined = x.append_slices(&batch).unwrap();
        assert_eq!(joined.dims(), &[4, 4, 13]);
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..13 {
                    let want = if k < 10 { x.get(&[i, j, k]) } else { batch.get(&[i, j, k - 10]) };
                    assert_eq!(joined.get(&[i, j, k]), want);
                }
            }
        }
        assert_eq!(joined.slice_range(10..13).unwrap(), batch);
        assert_eq!(joined.slice_range(0..10).unwrap(), x);

        let wrong = SparseTensor::zeros(vec![4, 3, 2]);
        assert!(matches!(x.append_slices(&wrong), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn subtensor_cases() {
        let x = random_sparse(&[10, 10, 10], 0.3, 8);
        let full: Vec<Vec<usize>> = (0..3).map(|_| (0..10).collect()).collect();
        assert_eq!(x.subtensor(&full).unwrap(), x);

        let sets = vec![vec![1, 7], vec![0, 4, 9], vec![2, 3, 5, 8]];
        let s = x.subtensor(&sets).unwrap();
        assert_eq!(s.dims(), &[2, 3, 4]);
        for (a, &i) in sets[0].iter().enumerate() {
            for (b, &j) in sets[1].iter().enumerate() {
                for (c, &k) in sets[2].iter().enumerate() {
                    assert_eq!(s.get(&[a, b, c]), x.get(&[i, j, k]));
                }
            }
        }

        let oob = vec![vec![10], vec![0], vec![0]];
        assert!(matches!(x.subtensor(&oob), Err(Error::IndexOutOfRange { .. })));
        let unsorted = vec![vec![3, 1], vec![0], vec![0]];
        assert!(x.subtensor(&unsorted).is_err());
    }

    #[test]
    fn frobenius_cases() {
        assert_eq!(SparseTensor::zeros(vec![2, 2, 2]).frobenius_norm(), 0.0);
        let single = SparseTensor::from_entries(vec![2, 2, 2], vec![(vec![1, 0, 1], 3.0)]).unwrap();
        assert_eq!(single.frobenius_norm(), 3.0);
        let x = random_sparse(&[4, 3, 5], 0.8, 9);
        let want = x.to_dense().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((x.frobenius_norm() - want).abs() <= 1e-12);
    }
}
