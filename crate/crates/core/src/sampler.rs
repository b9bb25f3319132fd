//! Topic samplers.
//!
//! A token's topic is drawn from `p(k) ∝ (A_dk + α) · B̂_vk`. The sparse
//! sampler splits this law into two sub-problems:
//!
//! * `p1(k) ∝ A_dk · B̂_vk`, supported on the non-zeros of the document row,
//!   with mass `S`;
//! * `p2(k) ∝ B̂_vk`, which depends only on the word and is answered by a
//!   pre-built [`WaryTree`], with mass `Q_v = α · Σ_k B̂_vk`.
//!
//! The first is chosen with probability `S / (S + Q_v)`. The vanilla sampler
//! evaluates the full `O(K)` law and serves as the reference.

use crate::counts::SparseRowRef;
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// Branching factor used when none is given.
pub const DEFAULT_TREE_WIDTH: usize = 32;

/// Smallest `i` with `prefix[i] >= x`.
///
/// `x` may exceed the last prefix by accumulated rounding (relative
/// `len * eps`); such values resolve as if `x` were the total.
pub fn prefix_search<F: Scalar>(prefix: &[F], x: F) -> Result<usize> {
    let last = match prefix.last() {
        Some(&l) => l,
        None => return Err(Error::ZeroMass),
    };
    if x.is_nan() || x < F::zero() {
        return Err(Error::OutOfRange { x: x.to_f64_lossy(), total: last.to_f64_lossy() });
    }
    if x > last {
        let tol = last.abs() * F::epsilon() * F::from_count(prefix.len() as u32);
        if x - last > tol {
            return Err(Error::OutOfRange { x: x.to_f64_lossy(), total: last.to_f64_lossy() });
        }
        return Ok(prefix.partition_point(|&p| p < last));
    }
    Ok(prefix.partition_point(|&p| p < x))
}

/// First lane in `lanes` whose value is `>= x`. Lanes are non-decreasing,
/// so this is the number of lanes below `x`; counting has no early exit and
/// vectorizes.
#[inline]
fn vote<F: Scalar>(lanes: &[F], x: F) -> Option<usize> {
    let below = lanes.iter().map(|&v| (v < x) as usize).sum::<usize>();
    (below < lanes.len()).then_some(below)
}

/// Four-level prefix-sum search tree with branching factor `W`.
///
/// The leaf level holds the inclusive prefix sums of the weights; node `i`
/// of each upper level copies node `(i + 1) W - 1` of the level below. Every
/// level is padded to a multiple of `W` with the total, so a first-`>=`
/// search never lands on padding. Capacity is `W^3` weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WaryTree<F> {
    width: usize,
    len: usize,
    root: F,
    top: Vec<F>,
    middle: Vec<F>,
    leaves: Vec<F>,
}

impl<F: Scalar> WaryTree<F> {
    pub fn new(weights: &[F], width: usize) -> Result<Self> {
        let mut tree =
            WaryTree { width, len: 0, root: F::zero(), top: Vec::new(), middle: Vec::new(), leaves: Vec::new() };
        tree.rebuild(weights)?;
        Ok(tree)
    }

    pub fn capacity(width: usize) -> usize {
        width.saturating_pow(3)
    }

    /// Rebuilds over new weights, reusing the level buffers.
    pub fn rebuild(&mut self, weights: &[F]) -> Result<()> {
        let w = self.width;
        if w < 2 {
            return Err(Error::Config(format!("tree width must be at least 2, got {w}")));
        }
        let k = weights.len();
        if k == 0 {
            return Err(Error::ZeroMass);
        }
        if k > Self::capacity(w) {
            return Err(Error::TreeCapacity { topics: k, capacity: Self::capacity(w), width: w });
        }

        self.leaves.clear();
        let mut acc = F::zero();
        for (i, &x) in weights.iter().enumerate() {
            if !(x >= F::zero()) || !x.is_finite() {
                return Err(Error::InvalidWeight { index: i, value: x.to_f64_lossy() });
            }
            acc += x;
            self.leaves.push(acc);
        }
        let total = acc;
        pad_to_multiple(&mut self.leaves, w, total);
        collect_level(&self.leaves, w, &mut self.middle);
        pad_to_multiple(&mut self.middle, w, total);
        collect_level(&self.middle, w, &mut self.top);
        self.top.resize(w, total);

        self.len = k;
        self.root = total;
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of real (unpadded) weights.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn total(&self) -> F {
        self.root
    }

    /// Leaf prefix sums without padding.
    pub fn prefix(&self) -> &[F] {
        &self.leaves[..self.len]
    }

    pub fn leaves(&self) -> &[F] {
        &self.leaves
    }

    pub fn middle(&self) -> &[F] {
        &self.middle
    }

    pub fn top(&self) -> &[F] {
        &self.top
    }

    /// Position of `x` in the prefix sums, searched top-down one group of
    /// `W` nodes per level. Values at or beyond the total resolve to the
    /// first index reaching the total.
    pub fn sample(&self, x: F) -> usize {
        let w = self.width;
        let x = if x > self.root { self.root } else { x };
        let Some(s3) = vote(&self.top, x) else {
            return self.len - 1;
        };
        let base3 = s3 * w;
        let Some(s4) = vote(&self.middle[base3..base3 + w], x) else {
            return self.len - 1;
        };
        let base4 = (base3 + s4) * w;
        match vote(&self.leaves[base4..base4 + w], x) {
            Some(s) => (base4 + s).min(self.len - 1),
            None => self.len - 1,
        }
    }
}

fn pad_to_multiple<F: Copy>(v: &mut Vec<F>, w: usize, fill: F) {
    let target = v.len().div_ceil(w) * w;
    v.resize(target.max(w), fill);
}

fn collect_level<F: Copy>(lower: &[F], w: usize, upper: &mut Vec<F>) {
    upper.clear();
    upper.extend(lower.chunks_exact(w).map(|c| c[w - 1]));
}

/// Builds the word's tree and its sub-problem mass `Q = alpha * total`.
pub fn build_tree<F: Scalar>(row: &[F], alpha: F, width: usize) -> Result<(F, WaryTree<F>)> {
    let tree = WaryTree::new(row, width)?;
    Ok((alpha * tree.total(), tree))
}

/// Tree query for a value in `[0, total)`.
pub fn tree_sample<F: Scalar>(tree: &WaryTree<F>, x: F) -> usize {
    tree.sample(x)
}

/// Masses of the two sub-problems for one `(document, word)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchContext<F> {
    pub s: F,
    pub q: F,
    /// `A_dk * B̂_vk`, aligned with the non-zero topics of the row.
    pub p: Vec<F>,
}

impl<F: Scalar> BranchContext<F> {
    pub fn new(a_row: SparseRowRef<'_>, bhat_row: &[F], q: F) -> Self {
        let p: Vec<F> = a_row.iter().map(|(k, c)| F::from_count(c) * bhat_row[k as usize]).collect();
        let s = p.iter().copied().sum();
        BranchContext { s, q, p }
    }

    /// Probability of answering from the document sub-problem.
    pub fn first_branch_probability(&self) -> F {
        self.s / (self.s + self.q)
    }

    /// The law implied by mixing the sub-problems:
    /// `S/(S+Q) * p1 + Q/(S+Q) * p2`, over all `K` topics.
    pub fn mixture_law(&self, a_row: SparseRowRef<'_>, bhat_row: &[F]) -> Vec<F> {
        let denom = self.s + self.q;
        let row_total: F = bhat_row.iter().copied().sum();
        let second = self.q / denom;
        let mut law: Vec<F> = bhat_row.iter().map(|&b| second * b / row_total).collect();
        if self.s > F::zero() {
            let first = self.s / denom;
            for ((k, _), &pk) in a_row.iter().zip(&self.p) {
                law[k as usize] += first * pk / self.s;
            }
        }
        law
    }
}

/// Draws one topic from `(A_dk + α) · B̂_vk` in `O(nnz(A_d) + log_W K)`.
///
/// `q` and `tree` must come from [`build_tree`] over `bhat_row` with the
/// same `alpha`. `scratch` holds the prefix sums of the document branch.
#[allow(clippy::too_many_arguments)]
pub fn sample_token<F: Scalar>(
    a_row: SparseRowRef<'_>,
    bhat_row: &[F],
    q: F,
    tree: &WaryTree<F>,
    alpha: F,
    rng: &mut RngStream,
    scratch: &mut Vec<F>,
) -> Result<u32> {
    debug_assert!({
        let expect = alpha * tree.total();
        (q - expect).abs() <= expect * F::from_f64_lossy(1e-5)
    });
    scratch.clear();
    scratch.resize(a_row.len(), F::zero());
    let mut s = F::zero();
    for ((p, &k), &c) in scratch.iter_mut().zip(a_row.topics).zip(a_row.counts) {
        s += F::from_count(c) * bhat_row[k as usize];
        *p = s;
    }
    let mass = s + q;
    if !(mass > F::zero()) {
        return Err(Error::ZeroMass);
    }
    if rng.uniform::<F>() < s / mass {
        let x = rng.uniform::<F>() * s;
        let i = prefix_search(scratch, x)?;
        Ok(a_row.topics[i])
    } else {
        let x = rng.uniform::<F>() * tree.total();
        Ok(tree.sample(x) as u32)
    }
}

/// Draws one topic by evaluating all `K` terms: compute the law, draw
/// `u` in `[0, S)`, locate it in the prefix sums.
pub fn vanilla_sample<F: Scalar>(
    a_dense: &[u32],
    bhat_row: &[F],
    alpha: F,
    rng: &mut RngStream,
    scratch: &mut Vec<F>,
) -> Result<u32> {
    scratch.clear();
    let mut s = F::zero();
    for (&a, &b) in a_dense.iter().zip(bhat_row) {
        s += (F::from_count(a) + alpha) * b;
        scratch.push(s);
    }
    if !(s > F::zero()) {
        return Err(Error::ZeroMass);
    }
    let x = rng.uniform::<F>() * s;
    Ok(prefix_search(scratch, x)? as u32)
}
