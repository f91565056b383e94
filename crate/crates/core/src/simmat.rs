//! Similarity matrices with observation masks, and the constructors that
//! build them from triplet judgments, association counts, or feature vectors.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Result, SrfError};
use crate::stats;

const SYMMETRY_TOL: f64 = 1e-12;

/// Symmetric binary observation pattern; `true` marks an observed entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    n: usize,
    data: Vec<bool>,
}

impl Mask {
    /// Every entry observed.
    pub fn full(n: usize) -> Self {
        Mask {
            n,
            data: vec![true; n * n],
        }
    }

    /// Only the diagonal observed.
    pub fn diagonal(n: usize) -> Self {
        let mut m = Mask {
            n,
            data: vec![false; n * n],
        };
        for i in 0..n {
            m.data[i * n + i] = true;
        }
        m
    }

    /// Build from an arbitrary boolean matrix: the result is the logical AND
    /// of the matrix and its transpose, with the diagonal forced observed.
    pub fn from_fn_and(n: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Mask::diagonal(n);
        for i in 0..n {
            for j in (i + 1)..n {
                if f(i, j) && f(j, i) {
                    m.set_pair(i, j, true);
                }
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j]
    }

    /// Set both `(i, j)` and `(j, i)`. Diagonal entries stay observed.
    pub fn set_pair(&mut self, i: usize, j: usize, observed: bool) {
        if i == j {
            return;
        }
        self.data[i * self.n + j] = observed;
        self.data[j * self.n + i] = observed;
    }

    /// Observed unordered off-diagonal pairs `(i, j)` with `i < j`, row-major.
    pub fn observed_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.get(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn observed_offdiag_count(&self) -> usize {
        self.observed_pairs().len()
    }

    pub fn is_full(&self) -> bool {
        self.data.iter().all(|&b| b)
    }

    /// Mask as a 0/1 matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(
            self.n,
            self.n,
            |i, j| if self.get(i, j) { 1.0 } else { 0.0 },
        )
    }

    pub fn and(&self, other: &Mask) -> Mask {
        assert_eq!(self.n, other.n);
        Mask {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a && *b)
                .collect(),
        }
    }
}

/// Symmetric non-negative similarity values plus an observation mask.
///
/// Values at unobserved entries are stored as zero and ignored by every
/// consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSimilarity {
    values: DMatrix<f64>,
    mask: Mask,
    labels: Option<Vec<String>>,
}

impl DenseSimilarity {
    pub fn new(values: DMatrix<f64>, mask: Mask) -> Result<Self> {
        let (rows, cols) = values.shape();
        if rows != cols {
            return Err(SrfError::NotSquare { rows, cols });
        }
        if mask.n() != rows {
            return Err(SrfError::ShapeMismatch(format!(
                "values are {rows}x{rows} but mask is {0}x{0}",
                mask.n()
            )));
        }
        let mut values = values;
        for i in 0..rows {
            for j in 0..rows {
                if !mask.get(i, j) {
                    values[(i, j)] = 0.0;
                    continue;
                }
                let v = values[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(SrfError::invalid(format!(
                        "similarity ({i}, {j}) = {v} is not a finite non-negative value"
                    )));
                }
                if (v - values[(j, i)]).abs() > SYMMETRY_TOL * (1.0 + v.abs()) {
                    return Err(SrfError::invalid(format!(
                        "similarity is not symmetric at ({i}, {j}): {v} vs {}",
                        values[(j, i)]
                    )));
                }
            }
        }
        Ok(DenseSimilarity {
            values,
            mask,
            labels: None,
        })
    }

    /// Fully observed similarity.
    pub fn full(values: DMatrix<f64>) -> Result<Self> {
        let n = values.nrows();
        Self::new(values, Mask::full(n))
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(SrfError::ShapeMismatch(format!(
                "{} labels for {} items",
                labels.len(),
                self.n()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Same values restricted to a different observation pattern. Entries
    /// newly observed must have been observed before.
    pub fn with_mask(&self, mask: Mask) -> Result<Self> {
        let restricted = mask.and(&self.mask);
        let mut out = DenseSimilarity::new(self.values.clone(), restricted)?;
        out.labels = self.labels.clone();
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.mask.get(i, j).then(|| self.values[(i, j)])
    }

    /// Observed off-diagonal values in row-major upper-triangular order.
    pub fn observed_offdiag_values(&self) -> Vec<f64> {
        self.mask
            .observed_pairs()
            .into_iter()
            .map(|(i, j)| self.values[(i, j)])
            .collect()
    }

    /// `(min, max)` over all observed entries, diagonal included.
    pub fn observed_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let n = self.n();
        for i in 0..n {
            for j in 0..n {
                if self.mask.get(i, j) {
                    lo = lo.min(self.values[(i, j)]);
                    hi = hi.max(self.values[(i, j)]);
                }
            }
        }
        (lo, hi)
    }
}

/// Pair exposure and retained-together counts from odd-one-out triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletCounts {
    pub n: usize,
    pub m: DMatrix<u64>,
    pub c: DMatrix<u64>,
}

/// One odd-one-out trial: `a` and `b` were kept together, `odd` was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub a: usize,
    pub b: usize,
    pub odd: usize,
}

impl TripletCounts {
    pub fn zeros(n: usize) -> Self {
        TripletCounts {
            n,
            m: DMatrix::zeros(n, n),
            c: DMatrix::zeros(n, n),
        }
    }

    pub fn from_triplets(n: usize, triplets: &[Triplet]) -> Result<Self> {
        let mut t = TripletCounts::zeros(n);
        for tr in triplets {
            let items = [tr.a, tr.b, tr.odd];
            if items.iter().any(|&x| x >= n) {
                return Err(SrfError::invalid(format!(
                    "triplet {items:?} references an item outside 0..{n}"
                )));
            }
            if tr.a == tr.b || tr.a == tr.odd || tr.b == tr.odd {
                return Err(SrfError::invalid(format!(
                    "triplet {items:?} repeats an item"
                )));
            }
            for (x, y) in [(tr.a, tr.b), (tr.a, tr.odd), (tr.b, tr.odd)] {
                t.m[(x, y)] += 1;
                t.m[(y, x)] += 1;
            }
            t.c[(tr.a, tr.b)] += 1;
            t.c[(tr.b, tr.a)] += 1;
        }
        Ok(t)
    }
}

/// Smoothed retained-together frequency `(c + α) / (m + 2α)`.
///
/// Pairs never shown together are unobserved; the diagonal is 1 and observed.
pub fn triplet_similarity(t: &TripletCounts, alpha: f64) -> Result<DenseSimilarity> {
    if !(alpha > 0.0) {
        return Err(SrfError::invalid(format!(
            "smoothing alpha must be positive, got {alpha}"
        )));
    }
    let n = t.n;
    let mut values = DMatrix::zeros(n, n);
    let mut mask = Mask::diagonal(n);
    for i in 0..n {
        values[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let (m, c) = (t.m[(i, j)], t.c[(i, j)]);
            if m != t.m[(j, i)] || c != t.c[(j, i)] {
                return Err(SrfError::invalid(format!(
                    "triplet counts are not symmetric at ({i}, {j})"
                )));
            }
            if c > m {
                return Err(SrfError::InvalidCounts { i, j, c, m });
            }
            if m == 0 {
                continue;
            }
            let s = (c as f64 + alpha) / (m as f64 + 2.0 * alpha);
            values[(i, j)] = s;
            values[(j, i)] = s;
            mask.set_pair(i, j, true);
        }
    }
    DenseSimilarity::new(values, mask)
}

/// Directed cue-response counts restricted to one strongly connected component.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationCounts {
    pub vocabulary: Vec<String>,
    /// `(cue, response, count)` with indices into `vocabulary`.
    pub edges: Vec<(usize, usize, u64)>,
}

fn intern<'a>(index: &mut HashMap<&'a str, usize>, words: &mut Vec<&'a str>, w: &'a str) -> usize {
    let next = words.len();
    *index.entry(w).or_insert_with(|| {
        words.push(w);
        next
    })
}

/// Drop self-loops, merge duplicate edges, and keep the largest strongly
/// connected component. Ties between equally large components go to the one
/// containing the earliest-seen word.
pub fn preprocess_associations(raw: &[(String, String, u64)]) -> Result<AssociationCounts> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut words: Vec<&str> = Vec::new();
    let mut counts: HashMap<(usize, usize), u64> = HashMap::new();
    for (cue, resp, count) in raw {
        if cue == resp || *count == 0 {
            continue;
        }
        let a = intern(&mut index, &mut words, cue);
        let b = intern(&mut index, &mut words, resp);
        *counts.entry((a, b)).or_insert(0) += count;
    }
    let n = words.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut edge_list: Vec<(usize, usize, u64)> =
        counts.into_iter().map(|((a, b), c)| (a, b, c)).collect();
    edge_list.sort_unstable();
    for &(a, b, _) in &edge_list {
        adj[a].push(b);
    }

    let comp = strongly_connected_components(&adj);
    let n_comp = comp.iter().copied().max().map_or(0, |c| c + 1);
    let mut sizes = vec![0usize; n_comp];
    let mut first = vec![usize::MAX; n_comp];
    for (v, &c) in comp.iter().enumerate() {
        sizes[c] += 1;
        first[c] = first[c].min(v);
    }
    let best = (0..n_comp).min_by_key(|&c| (std::cmp::Reverse(sizes[c]), first[c]));
    let best = match best {
        Some(c) if sizes[c] >= 2 => c,
        _ => return Err(SrfError::EmptyGraph),
    };

    let mut remap = vec![usize::MAX; n];
    let mut vocabulary = Vec::new();
    for v in 0..n {
        if comp[v] == best {
            remap[v] = vocabulary.len();
            vocabulary.push(words[v].to_string());
        }
    }
    let edges = edge_list
        .into_iter()
        .filter(|&(a, b, _)| comp[a] == best && comp[b] == best)
        .map(|(a, b, c)| (remap[a], remap[b], c))
        .collect();
    Ok(AssociationCounts { vocabulary, edges })
}

/// Tarjan's algorithm, iterative. Returns a component id per vertex.
fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut comp = vec![usize::MAX; n];
    let mut next_index = 0;
    let mut next_comp = 0;
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        let mut call: Vec<(usize, usize)> = vec![(root, 0)];
        index[root] = next_index;
        low[root] = next_index;
        next_index += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut child)) = call.last_mut() {
            if *child < adj[v].len() {
                let w = adj[v][*child];
                *child += 1;
                if index[w] == usize::MAX {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    while let Some(w) = stack.pop() {
                        on_stack[w] = false;
                        comp[w] = next_comp;
                        if w == v {
                            break;
                        }
                    }
                    next_comp += 1;
                }
            }
        }
    }
    comp
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PpmiOptions {
    /// Treat zero-PPMI off-diagonal pairs as missing instead of observed zeros.
    pub zeros_missing: bool,
}

/// Positive pointwise mutual information on symmetrized counts, with
/// `s_ii = -log2 p_i` on the diagonal.
pub fn ppmi_similarity(a: &AssociationCounts, opts: PpmiOptions) -> Result<DenseSimilarity> {
    let n = a.vocabulary.len();
    if n == 0 || a.edges.is_empty() {
        return Err(SrfError::EmptyGraph);
    }
    let mut sym = DMatrix::<f64>::zeros(n, n);
    for &(i, j, c) in &a.edges {
        if i >= n || j >= n {
            return Err(SrfError::invalid(format!(
                "edge ({i}, {j}) outside vocabulary of {n}"
            )));
        }
        if i == j {
            continue;
        }
        sym[(i, j)] += c as f64;
        sym[(j, i)] += c as f64;
    }
    let total: f64 = sym.sum();
    if total <= 0.0 {
        return Err(SrfError::EmptyGraph);
    }
    let marg: Vec<f64> = (0..n).map(|i| sym.row(i).sum() / total).collect();
    if let Some(i) = marg.iter().position(|&p| p <= 0.0) {
        return Err(SrfError::invalid(format!(
            "word '{}' has no associations; run preprocess_associations first",
            a.vocabulary[i]
        )));
    }
    let mut values = DMatrix::zeros(n, n);
    let mut mask = Mask::full(n);
    for i in 0..n {
        values[(i, i)] = -marg[i].log2();
        for j in (i + 1)..n {
            let pij = sym[(i, j)] / total;
            let s = if pij > 0.0 {
                (pij / (marg[i] * marg[j])).log2().max(0.0)
            } else {
                0.0
            };
            values[(i, j)] = s;
            values[(j, i)] = s;
            if opts.zeros_missing && s == 0.0 {
                mask.set_pair(i, j, false);
            }
        }
    }
    let out = DenseSimilarity::new(values, mask)?;
    out.with_labels(a.vocabulary.clone())
}

/// Items by features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: DMatrix<f64>,
}

impl FeatureMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(SrfError::invalid(format!("non-finite feature value {v}")));
        }
        Ok(FeatureMatrix { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }
}

/// Gram matrix `x_iᵀ x_j` of non-negative features.
pub fn linear_kernel(f: &FeatureMatrix) -> Result<DenseSimilarity> {
    for i in 0..f.n() {
        for k in 0..f.d() {
            let v = f.values[(i, k)];
            if v < 0.0 {
                return Err(SrfError::NegativeFeature {
                    row: i,
                    col: k,
                    value: v,
                });
            }
        }
    }
    let mut g = &f.values * f.values.transpose();
    g = (&g + g.transpose()) * 0.5;
    DenseSimilarity::full(g)
}

fn pairwise_sq_distances(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut d2 = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (x.row(i) - x.row(j)).norm_squared();
            d2[(i, j)] = v;
            d2[(j, i)] = v;
        }
    }
    d2
}

/// RBF kernel with bandwidth `multiplier × median pairwise distance`
/// (lower median over the `n(n-1)/2` distances).
pub fn rbf_kernel(f: &FeatureMatrix, multiplier: f64) -> Result<DenseSimilarity> {
    let n = f.n();
    if n < 2 {
        return Err(SrfError::invalid("RBF kernel needs at least two items"));
    }
    if !(multiplier > 0.0) {
        return Err(SrfError::invalid(format!(
            "bandwidth multiplier must be positive, got {multiplier}"
        )));
    }
    let d2 = pairwise_sq_distances(&f.values);
    let dists: Vec<f64> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| d2[(i, j)].sqrt())
        .collect();
    let med = stats::lower_median(&dists);
    if med <= 0.0 {
        return Err(SrfError::DegenerateBandwidth);
    }
    let sigma = multiplier * med;
    let denom = 2.0 * sigma * sigma;
    let values = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            (-d2[(i, j)] / denom).exp()
        }
    });
    DenseSimilarity::full(values)
}

/// Average with the transpose, clip negatives to zero, and AND the mask with
/// its transpose.
pub fn symmetrize_clip(
    values: &DMatrix<f64>,
    mask: Option<&DMatrix<bool>>,
) -> Result<DenseSimilarity> {
    let (rows, cols) = values.shape();
    if rows != cols {
        return Err(SrfError::NotSquare { rows, cols });
    }
    let n = rows;
    let mask = match mask {
        Some(m) => {
            if m.shape() != (n, n) {
                return Err(SrfError::ShapeMismatch(format!(
                    "mask is {}x{} for a {n}x{n} matrix",
                    m.nrows(),
                    m.ncols()
                )));
            }
            Mask::from_fn_and(n, |i, j| m[(i, j)])
        }
        None => Mask::full(n),
    };
    let sym = DMatrix::from_fn(n, n, |i, j| {
        (0.5 * (values[(i, j)] + values[(j, i)])).max(0.0)
    });
    DenseSimilarity::new(sym, mask)
}
