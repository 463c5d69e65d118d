//! Random-forest regressor: bootstrapped CART trees with variance-reduction
//! splits over every feature, grown until leaves are pure or hold a single
//! sample.

use ndarray::{ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::LearnerError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    /// A tree that predicts `value` everywhere.
    pub fn constant(value: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf(value)],
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf(_)))
            .count()
    }

    pub fn predict_row(&self, row: ArrayView1<'_, f64>) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
            }
        }
    }

    fn fit(x: ArrayView2<'_, f64>, targets: &[f64], sample: Vec<usize>) -> Self {
        let mut nodes = vec![Node::Leaf(0.0)];
        let mut stack = vec![(0usize, sample)];
        while let Some((slot, idx)) = stack.pop() {
            let first = targets[idx[0]];
            if idx.len() < 2 || idx.iter().all(|&i| targets[i] == first) {
                nodes[slot] = Node::Leaf(mean(idx.iter().map(|&i| targets[i])));
                continue;
            }
            match best_split(x, targets, &idx) {
                None => nodes[slot] = Node::Leaf(mean(idx.iter().map(|&i| targets[i]))),
                Some((feature, threshold)) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        idx.iter().partition(|&&i| x[[i, feature]] <= threshold);
                    let left = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    let right = nodes.len();
                    nodes.push(Node::Leaf(0.0));
                    nodes[slot] = Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    };
                    stack.push((right, r));
                    stack.push((left, l));
                }
            }
        }
        RegressionTree { nodes }
    }
}

/// Mean that returns the common value exactly when all inputs agree and
/// never leaves their range.
fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return lo;
    }
    (values.iter().sum::<f64>() / values.len() as f64).clamp(lo, hi)
}

/// Split minimizing the children's summed squared error; first feature and
/// lowest threshold win ties.
fn best_split(x: ArrayView2<'_, f64>, targets: &[f64], idx: &[usize]) -> Option<(usize, f64)> {
    let n = idx.len() as f64;
    let total: f64 = idx.iter().map(|&i| targets[i]).sum();
    let total_sq: f64 = idx.iter().map(|&i| targets[i] * targets[i]).sum();
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order = idx.to_vec();
    for feature in 0..x.ncols() {
        order.sort_by(|&a, &b| x[[a, feature]].total_cmp(&x[[b, feature]]));
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for pos in 0..order.len() - 1 {
            let t = targets[order[pos]];
            left_sum += t;
            left_sq += t * t;
            let here = x[[order[pos], feature]];
            let next = x[[order[pos + 1], feature]];
            if here == next {
                continue;
            }
            let nl = (pos + 1) as f64;
            let nr = n - nl;
            let right_sum = total - left_sum;
            let right_sq = total_sq - left_sq;
            let sse = (left_sq - left_sum * left_sum / nl).max(0.0)
                + (right_sq - right_sum * right_sum / nr).max(0.0);
            if best.is_none_or(|(b, _, _)| sse < b) {
                let mut threshold = here + (next - here) / 2.0;
                if threshold >= next {
                    threshold = here;
                }
                best = Some((sse, feature, threshold));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<RegressionTree>,
    pub n_trees: usize,
    pub seed: u64,
    pub n_features: usize,
}

impl ForestModel {
    /// Forest made of the given trees, e.g. constant trees.
    pub fn from_trees(trees: Vec<RegressionTree>, n_features: usize) -> Self {
        ForestModel {
            n_trees: trees.len(),
            trees,
            seed: 0,
            n_features,
        }
    }
}

/// Fits `config.n_trees` trees; tree `t` draws its bootstrap sample from a
/// generator seeded with `seed + t`.
pub fn forest_fit(
    x: ArrayView2<'_, f64>,
    targets: &[f64],
    config: &ForestConfig,
    seed: u64,
) -> Result<ForestModel, LearnerError> {
    let n = x.nrows();
    if n != targets.len() {
        return Err(LearnerError::InvalidData(format!(
            "{n} rows with {} targets",
            targets.len()
        )));
    }
    if n == 0 {
        return Err(LearnerError::InvalidData("no training rows".into()));
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(LearnerError::InvalidData("non-finite target".into()));
    }
    if config.n_trees == 0 {
        return Err(LearnerError::InvalidData("n_trees must be positive".into()));
    }
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let sample: Vec<usize> = if config.bootstrap {
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            RegressionTree::fit(x, targets, sample)
        })
        .collect();
    Ok(ForestModel {
        trees,
        n_trees: config.n_trees,
        seed,
        n_features: x.ncols(),
    })
}

/// Mean of the per-tree predictions. Tree outputs are summed in sorted order
/// so the result does not depend on tree order.
pub fn forest_predict(
    model: &ForestModel,
    x: ArrayView2<'_, f64>,
) -> Result<Vec<f64>, LearnerError> {
    if x.ncols() != model.n_features {
        return Err(LearnerError::WidthMismatch {
            expected: model.n_features,
            got: x.ncols(),
        });
    }
    Ok(x.rows()
        .into_iter()
        .map(|row| {
            let mut leaf: Vec<f64> = model.trees.iter().map(|t| t.predict_row(row)).collect();
            leaf.sort_by(f64::total_cmp);
            mean(leaf.into_iter())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn constant_target() {
        let x = Array2::from_shape_fn((20, 2), |(i, j)| (i * (j + 1)) as f64);
        let m = forest_fit(x.view(), &[0.3; 20], &ForestConfig::default(), 1).unwrap();
        assert!(m.trees.iter().all(|t| t.n_leaves() == 1));
        let p = forest_predict(&m, x.view()).unwrap();
        assert!(p.iter().all(|&v| v == 0.3));
    }

    #[test]
    fn identity_function_is_fit_closely() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 / 199.0).collect();
        let x = Array2::from_shape_vec((200, 1), xs.clone()).unwrap();
        let m = forest_fit(x.view(), &xs, &ForestConfig::default(), 5).unwrap();
        let p = forest_predict(&m, x.view()).unwrap();
        let mae: f64 = p.iter().zip(&xs).map(|(a, b)| (a - b).abs()).sum::<f64>() / 200.0;
        assert!(mae < 0.05, "mae {mae}");
    }

    #[test]
    fn same_seed_same_forest() {
        let x = Array2::from_shape_fn((30, 3), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
        let y: Vec<f64> = (0..30).map(|i| (i % 5) as f64 / 4.0).collect();
        let a = forest_fit(x.view(), &y, &ForestConfig::default(), 9).unwrap();
        let b = forest_fit(x.view(), &y, &ForestConfig::default(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_leaf_tree() {
        let m = ForestModel::from_trees(vec![RegressionTree::constant(0.7)], 2);
        assert_eq!(
            forest_predict(&m, array![[1.0, 2.0], [3.0, 4.0]].view()).unwrap(),
            vec![0.7, 0.7]
        );
        assert!(forest_predict(&m, array![[1.0]].view()).is_err());
    }

    #[test]
    fn pure_leaves_without_bootstrap_interpolate_training_set() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = [0.1, 0.9, 0.4, 0.2];
        let cfg = ForestConfig {
            n_trees: 1,
            bootstrap: false,
        };
        let m = forest_fit(x.view(), &y, &cfg, 0).unwrap();
        assert_eq!(forest_predict(&m, x.view()).unwrap(), y.to_vec());
    }

    proptest! {
        #[test]
        fn bounded_and_order_free(
            ys in prop::collection::vec(0.0f64..1.0, 4..30),
            seed in 0u64..1000,
        ) {
            let n = ys.len();
            let x = Array2::from_shape_fn((n, 2), |(i, j)| ((i * 13 + j * 5) % 7) as f64);
            let cfg = ForestConfig { n_trees: 8, bootstrap: true };
            let mut m = forest_fit(x.view(), &ys, &cfg, seed).unwrap();
            let p = forest_predict(&m, x.view()).unwrap();
            let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(p.iter().all(|&v| v >= lo && v <= hi && v.is_finite()));
            m.trees.reverse();
            prop_assert_eq!(forest_predict(&m, x.view()).unwrap(), p);
        }
    }
}
