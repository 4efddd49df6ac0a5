//! Single CART trees grown on weighted samples.

use super::rng::XorShift64;

/// Weighted Gini impurity, `1 - sum(p_i^2)`.
pub fn gini(weights: &[f64]) -> Result<f64, super::ForestError> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(super::ForestError::ZeroWeight);
    }
    Ok(1.0 - weights.iter().map(|w| (w / total) * (w / total)).sum::<f64>())
}

/// `w * gini` for a two-class count pair, without the division by `w`.
fn weighted_impurity(c: [f64; 2]) -> f64 {
    let w = c[0] + c[1];
    if w <= 0.0 {
        0.0
    } else {
        w - (c[0] * c[0] + c[1] * c[1]) / w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Summed `w * gini` over the two children.
    pub score: f64,
}

/// Midpoint between two adjacent distinct values that still separates them.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo + (hi - lo) / 2.0;
    if m >= hi || m < lo {
        lo
    } else {
        m
    }
}

/// Borrowed view of a weighted training set.
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub rows: &'a [&'a [f64]],
    /// 0 = benign, 1 = malicious.
    pub labels: &'a [u8],
    pub weights: &'a [f64],
}

impl Samples<'_> {
    fn counts(&self, idx: &[usize]) -> [f64; 2] {
        let mut c = [0.0; 2];
        for &i in idx {
            c[self.labels[i] as usize] += self.weights[i];
        }
        c
    }
}

/// Best `x[feature] <= threshold` split of `idx` over `features`.
///
/// Candidates are ranked by summed child `w * gini`; ties keep the earlier
/// feature in `features` and then the lower threshold. `None` when no
/// candidate lowers the impurity of the node.
pub fn best_split(s: &Samples, idx: &[usize], features: &[usize]) -> Option<Split> {
    let parent = weighted_impurity(s.counts(idx));
    best_split_inner(s, idx, features).filter(|b| b.score < parent - parent.abs() * 1e-12 - 1e-12)
}

/// Like [`best_split`] but also returns non-improving splits.
fn best_split_inner(s: &Samples, idx: &[usize], features: &[usize]) -> Option<Split> {
    let total = s.counts(idx);
    let mut best: Option<Split> = None;
    let mut order: Vec<usize> = idx.to_vec();
    for &f in features {
        order.sort_by(|&a, &b| s.rows[a][f].total_cmp(&s.rows[b][f]));
        let mut left = [0.0; 2];
        for k in 0..order.len() - 1 {
            let i = order[k];
            left[s.labels[i] as usize] += s.weights[i];
            let (x, next) = (s.rows[i][f], s.rows[order[k + 1]][f]);
            if x == next {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1]];
            let score = weighted_impurity(left) + weighted_impurity(right);
            if best.is_none_or(|b| score < b.score) {
                best = Some(Split { feature: f, threshold: midpoint(x, next), score });
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// Summed sample weight per category, benign first.
    Leaf { votes: [f64; 2] },
}

/// A tree stored as a flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn leaf_for(&self, x: &[f64]) -> [f64; 2] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
                TreeNode::Leaf { votes } => return *votes,
            }
        }
    }

    pub fn depth(&self) -> usize {
        let mut max = 0;
        let mut stack = vec![(0usize, 1usize)];
        while let Some((i, d)) = stack.pop() {
            max = max.max(d);
            if let TreeNode::Split { left, right, .. } = self.nodes[i] {
                stack.push((left, d + 1));
                stack.push((right, d + 1));
            }
        }
        max
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GrowParams {
    /// Features tried per node.
    pub mtry: usize,
}

/// Grows a tree on `idx` until every leaf is pure or holds identical vectors.
///
/// Each node draws `mtry` candidate features. If none of them reduces the
/// impurity the remaining features are tried, and an impure node that still
/// has a separable feature takes the best non-improving split, so greedy
/// growth cannot stall on XOR-like data.
pub fn grow_tree(s: &Samples, idx: Vec<usize>, params: GrowParams, rng: &mut XorShift64) -> Tree {
    let n_features = s.rows.first().map_or(0, |r| r.len());
    let mut nodes = vec![TreeNode::Leaf { votes: [0.0; 2] }];
    let mut stack = vec![(0usize, idx)];
    let mut feats: Vec<usize> = (0..n_features).collect();
    while let Some((slot, idx)) = stack.pop() {
        let votes = s.counts(&idx);
        nodes[slot] = TreeNode::Leaf { votes };
        if votes[0] == 0.0 || votes[1] == 0.0 || idx.len() < 2 {
            continue;
        }
        let m = params.mtry.clamp(1, n_features);
        rng.partial_shuffle(&mut feats, m);
        let split = best_split(s, &idx, &feats[..m])
            .or_else(|| best_split(s, &idx, &feats[m..]))
            .or_else(|| best_split_inner(s, &idx, &feats));
        let Some(split) = split else { continue };
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| s.rows[i][split.feature] <= split.threshold);
        debug_assert!(!l.is_empty() && !r.is_empty());
        let (li, ri) = (nodes.len(), nodes.len() + 1);
        nodes.push(TreeNode::Leaf { votes: [0.0; 2] });
        nodes.push(TreeNode::Leaf { votes: [0.0; 2] });
        nodes[slot] = TreeNode::Split { feature: split.feature, threshold: split.threshold, left: li, right: ri };
        stack.push((ri, r));
        stack.push((li, l));
    }
    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[5.0, 0.0]).unwrap(), 0.0);
        assert_eq!(gini(&[2.0, 2.0]).unwrap(), 0.5);
        assert_eq!(gini(&[1.0, 3.0]).unwrap(), 0.375);
        assert!(gini(&[0.0, 0.0]).is_err());
    }

    fn samples<'a>(rows: &'a [&'a [f64]], labels: &'a [u8], weights: &'a [f64]) -> Samples<'a> {
        Samples { rows, labels, weights }
    }

    #[test]
    fn separable_pair_splits_at_midpoint() {
        let rows: Vec<&[f64]> = vec![&[0.0], &[1.0]];
        let s = samples(&rows, &[0, 1], &[1.0, 1.0]);
        let b = best_split(&s, &[0, 1], &[0]).unwrap();
        assert_eq!((b.feature, b.threshold), (0, 0.5));
    }

    #[test]
    fn constant_features_do_not_split() {
        let rows: Vec<&[f64]> = vec![&[3.0, 1.0], &[3.0, 1.0], &[3.0, 1.0]];
        let s = samples(&rows, &[0, 1, 0], &[1.0; 3]);
        assert_eq!(best_split(&s, &[0, 1, 2], &[0, 1]), None);
    }

    #[test]
    fn xor_grows_to_purity() {
        let rows: Vec<&[f64]> = vec![&[0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]];
        let labels = [0, 1, 1, 0];
        let s = samples(&rows, &labels, &[1.0; 4]);
        assert_eq!(best_split(&s, &[0, 1, 2, 3], &[0, 1]), None);
        let t = grow_tree(&s, vec![0, 1, 2, 3], GrowParams { mtry: 1 }, &mut XorShift64::new(1));
        for (r, &l) in rows.iter().zip(&labels) {
            let v = t.leaf_for(r);
            assert_eq!((v[1] > v[0]) as u8, l);
        }
    }

    #[test]
    fn adjacent_floats_keep_a_separating_threshold() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let m = midpoint(a, b);
        assert!(a <= m && m < b);
    }
}
