use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{argmax, check_shape, encode_labels, rows_of, MODEL_VERSION};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub n_trees: usize,
    /// Candidate features per node; `None` means floor(sqrt(d)).
    pub max_features: Option<usize>,
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams {
            n_trees: 100,
            max_features: None,
            min_samples_split: 2,
            max_depth: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        counts: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root is node 0. Samples with `x[feature] <= threshold` go left.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_counts(&self, row: &[f64]) -> &[usize] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { counts } => return counts,
            }
        }
    }

    /// Majority class index at the leaf; the lowest index wins ties.
    pub fn predict_one(&self, row: &[f64]) -> usize {
        let counts = self.leaf_counts(row);
        let mut best = 0;
        for (c, &n) in counts.iter().enumerate() {
            if n > counts[best] {
                best = c;
            }
        }
        best
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub version: u32,
    pub classes: Vec<String>,
    pub trees: Vec<Tree>,
    pub d: usize,
    pub params: RfParams,
    pub seed: u64,
}

/// Sample indices (with replacement) used to grow tree `tree`.
pub fn bootstrap_indices(seed: u64, tree: usize, n: usize) -> Vec<usize> {
    let mut r = rng::indexed(seed, "rf-bootstrap", tree as u64);
    (0..n).map(|_| r.gen_range(0..n)).collect()
}

struct Grower<'a> {
    x: &'a [f64],
    d: usize,
    y: &'a [usize],
    k: usize,
    max_features: usize,
    params: &'a RfParams,
    rng: Rng,
    buf: Vec<(f64, usize)>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Grower<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    /// Best Gini split of `idx` on one feature, scored by
    /// sum(left_c^2)/n_left + sum(right_c^2)/n_right (higher is purer).
    fn best_on(&mut self, idx: &[usize], total: &[usize], feature: usize) -> Option<Candidate> {
        self.buf.clear();
        self.buf.extend(idx.iter().map(|&i| (self.x[i * self.d + feature], self.y[i])));
        self.buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if self.buf[0].0 == self.buf[self.buf.len() - 1].0 {
            return None;
        }
        let n = self.buf.len();
        let mut left = vec![0usize; self.k];
        let mut right = total.to_vec();
        let mut sq_left = 0.0;
        let mut sq_right: f64 = right.iter().map(|&c| (c * c) as f64).sum();
        let mut best: Option<Candidate> = None;
        for i in 0..n - 1 {
            let c = self.buf[i].1;
            sq_left += (2 * left[c] + 1) as f64;
            sq_right -= (2 * right[c] - 1) as f64;
            left[c] += 1;
            right[c] -= 1;
            let (v, next) = (self.buf[i].0, self.buf[i + 1].0);
            if v == next {
                continue;
            }
            let nl = (i + 1) as f64;
            let score = sq_left / nl + sq_right / (n as f64 - nl);
            if best.as_ref().is_none_or(|b| score > b.score) {
                let mid = v + (next - v) / 2.0;
                let threshold = if mid < next { mid } else { v };
                best = Some(Candidate {
                    feature,
                    threshold,
                    score,
                });
            }
        }
        best
    }

    fn find_split(&mut self, idx: &[usize], total: &[usize]) -> Option<Candidate> {
        let mut features: Vec<usize> = (0..self.d).collect();
        features.shuffle(&mut self.rng);
        let mut best: Option<Candidate> = None;
        for (visited, &f) in features.iter().enumerate() {
            if visited >= self.max_features && best.is_some() {
                break;
            }
            if let Some(c) = self.best_on(idx, total, f) {
                if best.as_ref().is_none_or(|b| c.score > b.score) {
                    best = Some(c);
                }
            }
        }
        best
    }

    fn grow(mut self, sample: Vec<usize>) -> Tree {
        let mut nodes: Vec<Node> = Vec::new();
        // (node slot, sample indices, depth)
        let mut stack = vec![(0usize, sample, 0usize)];
        nodes.push(Node::Leaf { counts: Vec::new() });
        while let Some((slot, idx, depth)) = stack.pop() {
            let counts = self.counts(&idx);
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let depth_ok = self.params.max_depth.is_none_or(|m| depth < m);
            let split = if pure || idx.len() < self.params.min_samples_split || !depth_ok {
                None
            } else {
                self.find_split(&idx, &counts)
            };
            match split {
                None => nodes[slot] = Node::Leaf { counts },
                Some(c) => {
                    let (l, r): (Vec<usize>, Vec<usize>) =
                        idx.iter().partition(|&&i| self.x[i * self.d + c.feature] <= c.threshold);
                    let (li, ri) = (nodes.len(), nodes.len() + 1);
                    nodes.push(Node::Leaf { counts: Vec::new() });
                    nodes.push(Node::Leaf { counts: Vec::new() });
                    nodes[slot] = Node::Split {
                        feature: c.feature,
                        threshold: c.threshold,
                        left: li,
                        right: ri,
                    };
                    stack.push((ri, r, depth + 1));
                    stack.push((li, l, depth + 1));
                }
            }
        }
        Tree { nodes }
    }
}

/// Bagged Gini trees, grown in parallel and stored in tree order.
pub fn rf_fit<S: AsRef<str> + Sync>(x: &[f64], d: usize, labels: &[S], params: &RfParams, seed: u64) -> Result<RandomForest> {
    if params.n_trees < 1 {
        return Err(Error::validation("random forest needs at least one tree"));
    }
    let n = check_shape(x, d, labels.len())?;
    let (classes, y) = encode_labels(labels);
    let max_features = params
        .max_features
        .unwrap_or_else(|| (d as f64).sqrt().floor() as usize)
        .clamp(1, d);
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let sample = if params.bootstrap {
                bootstrap_indices(seed, t, n)
            } else {
                (0..n).collect()
            };
            Grower {
                x,
                d,
                y: &y,
                k: classes.len(),
                max_features,
                params,
                rng: rng::indexed(seed, "rf-features", t as u64),
                buf: Vec::with_capacity(n),
            }
            .grow(sample)
        })
        .collect();
    Ok(RandomForest {
        version: MODEL_VERSION,
        classes,
        trees,
        d,
        params: *params,
        seed,
    })
}

/// Majority vote over trees; ties go to the lexicographically smaller label.
pub fn rf_predict(model: &RandomForest, x: &[f64]) -> Result<Vec<String>> {
    let d = model.d;
    let n = rows_of(x, d)?;
    Ok((0..n)
        .map(|r| {
            let row = &x[r * d..(r + 1) * d];
            let mut votes = vec![0.0; model.classes.len()];
            for t in &model.trees {
                votes[t.predict_one(row)] += 1.0;
            }
            model.classes[argmax(&votes)].clone()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_labels_single_tree() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let m = rf_fit(&x, 1, &["z"; 4], &RfParams { n_trees: 1, ..Default::default() }, 1).unwrap();
        assert_eq!(m.trees[0].nodes.len(), 1);
        assert_eq!(rf_predict(&m, &[10.0]).unwrap(), vec!["z"]);
    }

    #[test]
    fn four_point_hand_split() {
        // Feature 1 is constant; the only useful cut is feature 0 at 1.5.
        let x = [0.0, 5.0, 1.0, 5.0, 2.0, 5.0, 3.0, 5.0];
        let y = ["a", "a", "b", "b"];
        let params = RfParams { n_trees: 1, bootstrap: false, ..Default::default() };
        let m = rf_fit(&x, 2, &y, &params, 0).unwrap();
        match &m.trees[0].nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 1.5);
            }
            other => panic!("expected a split, got {other:?}"),
        }
        assert_eq!(m.trees[0].nodes.len(), 3);
    }

    #[test]
    fn xor_is_learned() {
        let mut r = rng::stream(4, "xor");
        let n = 200;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let (a, b): (f64, f64) = (r.gen(), r.gen());
            x.extend([a, b]);
            y.push(if (a > 0.5) ^ (b > 0.5) { "one" } else { "zero" });
        }
        let m = rf_fit(&x, 2, &y, &RfParams { n_trees: 50, ..Default::default() }, 8).unwrap();
        let pred = rf_predict(&m, &x).unwrap();
        let acc = pred.iter().zip(&y).filter(|(p, t)| p == t).count() as f64 / n as f64;
        assert!(acc > 0.95, "{acc}");
    }

    #[test]
    fn deterministic_and_trees_fit_their_bootstrap() {
        let mut r = rng::stream(5, "blobs");
        let n = 120;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let c = i % 3;
            x.extend([c as f64 + r.gen::<f64>() * 1.5, r.gen::<f64>()]);
            y.push(["a", "b", "c"][c]);
        }
        let p = RfParams { n_trees: 10, ..Default::default() };
        let a = rf_fit(&x, 2, &y, &p, 3).unwrap();
        assert_eq!(a, rf_fit(&x, 2, &y, &p, 3).unwrap());
        for (t, tree) in a.trees.iter().enumerate() {
            let boot = bootstrap_indices(3, t, n);
            let correct = boot.iter().filter(|&&i| a.classes[tree.predict_one(&x[i * 2..i * 2 + 2])] == y[i]).count();
            let mut counts = [0usize; 3];
            for &i in &boot {
                counts[i % 3] += 1;
            }
            assert!(correct >= *counts.iter().max().unwrap());
        }
    }

    #[test]
    fn vote_tie_goes_to_smaller_label() {
        let leaf = |counts: Vec<usize>| Tree { nodes: vec![Node::Leaf { counts }] };
        let m = RandomForest {
            version: MODEL_VERSION,
            classes: vec!["a".into(), "b".into()],
            trees: vec![leaf(vec![0, 1]), leaf(vec![1, 0])],
            d: 1,
            params: RfParams::default(),
            seed: 0,
        };
        assert_eq!(rf_predict(&m, &[0.0]).unwrap(), vec!["a"]);
    }
}
