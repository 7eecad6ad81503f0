//! Reference classifiers the post-classifier is compared against: Gaussian
//! naive Bayes, a Gini classification tree, and the same tree after
//! reduced-error pruning on a held-out split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const VARIANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BaselineError {
    #[error("training set is empty")]
    Empty,
    #[error("training set needs both classes")]
    SingleClass,
    #[error("row has {got} features, expected {expected}")]
    Width { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    GaussianNb,
    Cart,
    PrunedTree,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [BaselineKind::GaussianNb, BaselineKind::Cart, BaselineKind::PrunedTree];

    pub fn id(self) -> &'static str {
        match self {
            BaselineKind::GaussianNb => "gaussian_nb",
            BaselineKind::Cart => "cart",
            BaselineKind::PrunedTree => "pruned_tree",
        }
    }
}

fn check(xs: &[Vec<f64>], ys: &[bool]) -> Result<usize, BaselineError> {
    if xs.is_empty() {
        return Err(BaselineError::Empty);
    }
    let d = xs[0].len();
    if let Some(r) = xs.iter().find(|r| r.len() != d) {
        return Err(BaselineError::Width { expected: d, got: r.len() });
    }
    let pos = ys.iter().filter(|&&y| y).count();
    if pos == 0 || pos == ys.len() {
        return Err(BaselineError::SingleClass);
    }
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianNb {
    /// Index 0 is the negative class, 1 the positive class.
    pub log_prior: [f64; 2],
    pub mean: [Vec<f64>; 2],
    pub var: [Vec<f64>; 2],
}

impl GaussianNb {
    pub fn fit(xs: &[Vec<f64>], ys: &[bool]) -> Result<Self, BaselineError> {
        let d = check(xs, ys)?;
        let mut mean = [vec![0.0; d], vec![0.0; d]];
        let mut var = [vec![0.0; d], vec![0.0; d]];
        let mut count = [0usize; 2];
        for (x, &y) in xs.iter().zip(ys) {
            let c = y as usize;
            count[c] += 1;
            for (m, v) in mean[c].iter_mut().zip(x) {
                *m += v;
            }
        }
        for c in 0..2 {
            mean[c].iter_mut().for_each(|m| *m /= count[c] as f64);
        }
        for (x, &y) in xs.iter().zip(ys) {
            let c = y as usize;
            for j in 0..d {
                var[c][j] += (x[j] - mean[c][j]).powi(2);
            }
        }
        for c in 0..2 {
            var[c].iter_mut().for_each(|v| *v = (*v / count[c] as f64).max(VARIANCE_FLOOR));
        }
        let n = xs.len() as f64;
        Ok(Self { log_prior: [(count[0] as f64 / n).ln(), (count[1] as f64 / n).ln()], mean, var })
    }

    fn log_joint(&self, c: usize, x: &[f64]) -> f64 {
        self.log_prior[c]
            + x.iter()
                .zip(&self.mean[c])
                .zip(&self.var[c])
                .map(|((x, m), v)| -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (x - m).powi(2) / v))
                .sum::<f64>()
    }

    /// Posterior probability of the positive class.
    pub fn score(&self, x: &[f64]) -> f64 {
        let diff = self.log_joint(0, x) - self.log_joint(1, x);
        1.0 / (1.0 + diff.exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: 6, min_leaf: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    /// Training fraction of positives reaching this node.
    pub p: f64,
    pub n: usize,
    /// `(feature, threshold, left, right)`: rows with `x[feature] <= threshold` go left.
    pub split: Option<(usize, f64, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

impl Tree {
    pub fn fit(xs: &[Vec<f64>], ys: &[bool], params: &TreeParams) -> Result<Self, BaselineError> {
        check(xs, ys)?;
        let mut tree = Tree { nodes: Vec::new() };
        let idx: Vec<usize> = (0..xs.len()).collect();
        tree.grow(xs, ys, idx, 0, params);
        Ok(tree)
    }

    fn grow(&mut self, xs: &[Vec<f64>], ys: &[bool], idx: Vec<usize>, depth: usize, params: &TreeParams) -> usize {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| ys[i]).count();
        let me = self.nodes.len();
        self.nodes.push(Node { p: pos as f64 / n as f64, n, split: None });
        if depth >= params.max_depth || pos == 0 || pos == n || n < 2 * params.min_leaf.max(1) {
            return me;
        }
        let Some((f, thr)) = best_split(xs, ys, &idx, params.min_leaf.max(1)) else {
            return me;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| xs[i][f] <= thr);
        let left = self.grow(xs, ys, l, depth + 1, params);
        let right = self.grow(xs, ys, r, depth + 1, params);
        self.nodes[me].split = Some((f, thr, left, right));
        me
    }

    fn leaf_of(&self, x: &[f64]) -> usize {
        let mut i = 0;
        while let Some((f, thr, l, r)) = self.nodes[i].split {
            i = if x[f] <= thr { l } else { r };
        }
        i
    }

    /// Positive fraction of the leaf the row falls into.
    pub fn score(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_of(x)].p
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match t.nodes[i].split {
                None => 0,
                Some((_, _, l, r)) => 1 + go(t, l).max(go(t, r)),
            }
        }
        go(self, 0)
    }

    pub fn leaves(&self) -> usize {
        let mut stack = vec![0];
        let mut count = 0;
        while let Some(i) = stack.pop() {
            match self.nodes[i].split {
                None => count += 1,
                Some((_, _, l, r)) => stack.extend([l, r]),
            }
        }
        count
    }

    /// Bottom-up reduced-error pruning: a subtree becomes a leaf whenever that
    /// does not increase misclassifications on the validation rows.
    pub fn prune(&mut self, xs: &[Vec<f64>], ys: &[bool]) {
        let idx: Vec<usize> = (0..xs.len()).collect();
        self.prune_at(0, xs, ys, &idx);
    }

    /// Returns validation errors of the (possibly pruned) subtree at `i`.
    fn prune_at(&mut self, i: usize, xs: &[Vec<f64>], ys: &[bool], idx: &[usize]) -> usize {
        let as_leaf = idx.iter().filter(|&&k| (self.nodes[i].p >= 0.5) != ys[k]).count();
        let Some((f, thr, l, r)) = self.nodes[i].split else {
            return as_leaf;
        };
        let (li, ri): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&k| xs[k][f] <= thr);
        let subtree = self.prune_at(l, xs, ys, &li) + self.prune_at(r, xs, ys, &ri);
        if as_leaf <= subtree {
            self.nodes[i].split = None;
            as_leaf
        } else {
            subtree
        }
    }
}

/// Lowest weighted Gini split over midpoints between distinct feature values,
/// honouring the minimum leaf size. Ties keep the first feature and threshold found.
fn best_split(xs: &[Vec<f64>], ys: &[bool], idx: &[usize], min_leaf: usize) -> Option<(usize, f64)> {
    let n = idx.len();
    let total_pos = idx.iter().filter(|&&i| ys[i]).count();
    let parent = gini(total_pos, n);
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order = idx.to_vec();
    for f in 0..xs[idx[0]].len() {
        order.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]));
        let mut left_pos = 0;
        for k in 0..n - 1 {
            left_pos += ys[order[k]] as usize;
            let (a, b) = (xs[order[k]][f], xs[order[k + 1]][f]);
            let nl = k + 1;
            if a == b || nl < min_leaf || n - nl < min_leaf {
                continue;
            }
            let imp = (nl as f64 * gini(left_pos, nl) + (n - nl) as f64 * gini(total_pos - left_pos, n - nl)) / n as f64;
            if imp < parent - 1e-12 && best.is_none_or(|(bi, _, _)| imp < bi) {
                best = Some((imp, f, a + (b - a) / 2.0));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineModel {
    GaussianNb(GaussianNb),
    Cart(Tree),
    PrunedTree(Tree),
}

impl BaselineModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        match self {
            BaselineModel::GaussianNb(m) => m.score(x),
            BaselineModel::Cart(t) | BaselineModel::PrunedTree(t) => t.score(x),
        }
    }
}

/// Fraction of rows held out for pruning.
pub const PRUNE_HOLDOUT: f64 = 0.25;

pub fn train_baseline(
    kind: BaselineKind,
    xs: &[Vec<f64>],
    ys: &[bool],
    seed: u64,
) -> Result<BaselineModel, BaselineError> {
    check(xs, ys)?;
    let params = TreeParams::default();
    Ok(match kind {
        BaselineKind::GaussianNb => BaselineModel::GaussianNb(GaussianNb::fit(xs, ys)?),
        BaselineKind::Cart => BaselineModel::Cart(Tree::fit(xs, ys, &params)?),
        BaselineKind::PrunedTree => {
            let mut idx: Vec<usize> = (0..xs.len()).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let hold = ((xs.len() as f64) * PRUNE_HOLDOUT).round() as usize;
            let (val, grow) = idx.split_at(hold);
            let pick = |ix: &[usize]| -> (Vec<Vec<f64>>, Vec<bool>) {
                (ix.iter().map(|&i| xs[i].clone()).collect(), ix.iter().map(|&i| ys[i]).collect())
            };
            let (gx, gy) = pick(grow);
            let (vx, vy) = pick(val);
            // A growing split without both classes falls back to the whole set.
            let mut tree = Tree::fit(&gx, &gy, &params).or_else(|_| Tree::fit(xs, ys, &params))?;
            tree.prune(&vx, &vy);
            BaselineModel::PrunedTree(tree)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nb_boundary_between_symmetric_gaussians() {
        // Class samples mirrored around zero: equal variances, means +/-m, equal priors.
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let z: Vec<f64> = (0..500).map(|_| rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut r)).collect();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for v in &z {
            xs.push(vec![-1.0 + v]);
            ys.push(false);
            xs.push(vec![1.0 - v]);
            ys.push(true);
        }
        let nb = GaussianNb::fit(&xs, &ys).unwrap();
        let (mut lo, mut hi) = (-3.0, 3.0);
        for _ in 0..200 {
            let mid = (lo + hi) / 2.0;
            if nb.score(&[mid]) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!(lo.abs() < 1e-6, "boundary {lo}");
    }

    #[test]
    fn nb_zero_variance_is_floored() {
        let xs = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 5.0], vec![1.0, 6.0]];
        let ys = vec![false, false, true, true];
        let nb = GaussianNb::fit(&xs, &ys).unwrap();
        assert_eq!(nb.var[0][0], VARIANCE_FLOOR);
        let s = nb.score(&[1.0, 5.5]);
        assert!(s.is_finite() && s > 0.5);
    }

    #[test]
    fn pure_split_gives_depth_one() {
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect();
        let ys: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let t = Tree::fit(&xs, &ys, &TreeParams::default()).unwrap();
        assert_eq!(t.depth(), 1);
        assert!(xs.iter().zip(&ys).all(|(x, &y)| (t.score(x) >= 0.5) == y));
    }

    #[test]
    fn single_class_rejected() {
        let xs = vec![vec![0.0], vec![1.0]];
        for k in BaselineKind::ALL {
            assert_eq!(train_baseline(k, &xs, &[true, true], 0), Err(BaselineError::SingleClass));
        }
        assert_eq!(train_baseline(BaselineKind::Cart, &[], &[], 0), Err(BaselineError::Empty));
    }

    #[test]
    fn pruning_never_grows_the_tree() {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        use rand::Rng;
        let xs: Vec<Vec<f64>> = (0..300).map(|_| vec![r.gen::<f64>(), r.gen::<f64>()]).collect();
        // Noisy labels: a diagonal boundary with 20% flips.
        let ys: Vec<bool> = xs.iter().map(|x| (x[0] + x[1] > 1.0) ^ (r.gen::<f64>() < 0.2)).collect();
        let full = Tree::fit(&xs, &ys, &TreeParams::default()).unwrap();
        let BaselineModel::PrunedTree(p) = train_baseline(BaselineKind::PrunedTree, &xs, &ys, 1).unwrap() else {
            unreachable!()
        };
        assert!(p.leaves() <= full.leaves());
        assert!(full.depth() <= 6);
    }

    #[test]
    fn min_leaf_is_respected() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        use rand::Rng;
        let xs: Vec<Vec<f64>> = (0..200).map(|_| vec![r.gen::<f64>()]).collect();
        let ys: Vec<bool> = (0..200).map(|_| r.gen::<bool>()).collect();
        let t = Tree::fit(&xs, &ys, &TreeParams::default()).unwrap();
        for (i, n) in t.nodes.iter().enumerate() {
            if t.nodes[i].split.is_none() {
                assert!(n.n >= 5);
            }
        }
    }
}
