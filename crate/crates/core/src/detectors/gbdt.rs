//! Newton boosting of regression trees on focal-loss gradients.
//!
//! Trees are grown level by level with exact greedy splits over presorted
//! feature columns, so a level costs one pass per feature regardless of how
//! many nodes it holds.

use serde::{Deserialize, Serialize};

use super::focal::focal_from_logit;
use super::logreg::check_binary;
use super::{sigmoid, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtParams {
    pub iterations: usize,
    pub depth: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    /// L2 penalty on leaf values.
    pub l2: f64,
    /// Floor applied to per-row hessians; focal loss is not convex everywhere.
    pub min_hessian: f64,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            iterations: 150,
            depth: 10,
            learning_rate: 0.1,
            gamma: 2.0,
            l2: 1.0,
            min_hessian: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if row[feature] <= threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbdtModel {
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub max_depth: usize,
    pub n_features: usize,
}

#[derive(Debug, Clone)]
pub struct GbdtFit {
    pub model: GbdtModel,
    /// Training log loss after each boosting iteration.
    pub logloss: Vec<f64>,
}

fn log_loss(raw: &[f64], y: &[u8]) -> f64 {
    raw.iter()
        .zip(y)
        .map(|(&z, &t)| {
            let p = sigmoid(z).clamp(1e-15, 1.0 - 1e-15);
            if t == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / raw.len() as f64
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

struct Grower<'a> {
    x: &'a Matrix,
    sorted: &'a [Vec<usize>],
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a GbdtParams,
}

impl Grower<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.l2)
    }

    fn leaf(&self, g: f64, h: f64) -> f64 {
        -g / (h + self.params.l2) * self.params.learning_rate
    }

    fn grow(&self) -> Tree {
        let n = self.x.rows();
        let mut nodes = vec![Node::Leaf(0.0)];
        let mut node_of = vec![0usize; n];
        let total = |rows: &mut dyn Iterator<Item = usize>| {
            rows.fold((0.0, 0.0), |(g, h), r| (g + self.grad[r], h + self.hess[r]))
        };
        let mut frontier: Vec<(usize, f64, f64)> = {
            let (g, h) = total(&mut (0..n));
            vec![(0, g, h)]
        };
        for _ in 0..self.params.depth {
            if frontier.is_empty() {
                break;
            }
            let mut slot_of = vec![usize::MAX; nodes.len()];
            for (s, &(node, _, _)) in frontier.iter().enumerate() {
                slot_of[node] = s;
            }
            let mut best: Vec<Option<Candidate>> = frontier.iter().map(|_| None).collect();
            let k = frontier.len();
            let mut gl = vec![0.0; k];
            let mut hl = vec![0.0; k];
            let mut last = vec![f64::NAN; k];
            for (f, order) in self.sorted.iter().enumerate() {
                gl.iter_mut().for_each(|v| *v = 0.0);
                hl.iter_mut().for_each(|v| *v = 0.0);
                last.iter_mut().for_each(|v| *v = f64::NAN);
                for &r in order {
                    let s = slot_of[node_of[r]];
                    if s == usize::MAX {
                        continue;
                    }
                    let v = self.x.get(r, f);
                    if !last[s].is_nan() && v > last[s] {
                        let (_, g, h) = frontier[s];
                        let (gr, hr) = (g - gl[s], h - hl[s]);
                        if hl[s] >= self.params.min_hessian && hr >= self.params.min_hessian {
                            let gain =
                                self.score(gl[s], hl[s]) + self.score(gr, hr) - self.score(g, h);
                            if gain > 1e-12 && best[s].as_ref().is_none_or(|b| gain > b.gain) {
                                let mut t = last[s] + (v - last[s]) / 2.0;
                                if !(last[s] <= t && t < v) {
                                    t = last[s];
                                }
                                best[s] = Some(Candidate {
                                    gain,
                                    feature: f,
                                    threshold: t,
                                });
                            }
                        }
                    }
                    gl[s] += self.grad[r];
                    hl[s] += self.hess[r];
                    last[s] = v;
                }
            }
            let mut next = Vec::new();
            let mut child_of: Vec<Option<(usize, usize, usize, f64)>> = vec![None; nodes.len()];
            for (s, &(node, g, h)) in frontier.iter().enumerate() {
                match best[s].take() {
                    Some(c) => {
                        let (left, right) = (nodes.len(), nodes.len() + 1);
                        nodes.push(Node::Leaf(0.0));
                        nodes.push(Node::Leaf(0.0));
                        nodes[node] = Node::Split {
                            feature: c.feature,
                            threshold: c.threshold,
                            left,
                            right,
                        };
                        child_of.resize(nodes.len(), None);
                        child_of[node] = Some((left, right, c.feature, c.threshold));
                    }
                    None => nodes[node] = Node::Leaf(self.leaf(g, h)),
                }
            }
            for r in 0..n {
                if let Some((left, right, f, t)) = child_of.get(node_of[r]).copied().flatten() {
                    node_of[r] = if self.x.get(r, f) <= t { left } else { right };
                }
            }
            let mut stats = vec![(0.0, 0.0); nodes.len()];
            for r in 0..n {
                stats[node_of[r]].0 += self.grad[r];
                stats[node_of[r]].1 += self.hess[r];
            }
            for &(node, _, _) in &frontier {
                if let Some((left, right, _, _)) = child_of[node] {
                    next.push((left, stats[left].0, stats[left].1));
                    next.push((right, stats[right].0, stats[right].1));
                }
            }
            frontier = next;
        }
        for (node, g, h) in frontier {
            nodes[node] = Node::Leaf(self.leaf(g, h));
        }
        Tree { nodes }
    }
}

pub fn gbdt_fit(x: &Matrix, y: &[u8], params: &GbdtParams) -> Result<GbdtFit> {
    check_binary(y, x.rows())?;
    if params.iterations == 0 || params.depth == 0 {
        return Err(Error::Config(
            "boosting needs iterations >= 1 and depth >= 1".into(),
        ));
    }
    if !(params.learning_rate > 0.0 && params.gamma >= 0.0 && params.l2 >= 0.0) {
        return Err(Error::Config(format!(
            "invalid boosting parameters {params:?}"
        )));
    }
    let n = x.rows();
    let pos = y.iter().filter(|&&t| t == 1).count() as f64 / n as f64;
    let base_score = (pos / (1.0 - pos)).ln();
    let sorted: Vec<Vec<usize>> = (0..x.cols())
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
            idx
        })
        .collect();
    let mut raw = vec![base_score; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.iterations);
    let mut logloss = Vec::with_capacity(params.iterations);
    for _ in 0..params.iterations {
        for r in 0..n {
            let t = focal_from_logit(raw[r], y[r], params.gamma);
            grad[r] = t.grad;
            hess[r] = t.hess.max(params.min_hessian);
        }
        let tree = Grower {
            x,
            sorted: &sorted,
            grad: &grad,
            hess: &hess,
            params,
        }
        .grow();
        for (r, z) in raw.iter_mut().enumerate() {
            *z += tree.predict(x.row(r));
        }
        trees.push(tree);
        logloss.push(log_loss(&raw, y));
    }
    Ok(GbdtFit {
        model: GbdtModel {
            base_score,
            trees,
            learning_rate: params.learning_rate,
            gamma: params.gamma,
            max_depth: params.depth,
            n_features: x.cols(),
        },
        logloss,
    })
}

impl GbdtModel {
    pub fn raw_score(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn score(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.cols() != self.n_features {
            return Err(Error::Dimension(format!(
                "model trained on {} features, matrix has {}",
                self.n_features,
                x.cols()
            )));
        }
        Ok(x.iter_rows().map(|r| sigmoid(self.raw_score(r))).collect())
    }
}

pub fn gbdt_score(model: &GbdtModel, x: &Matrix) -> Result<Vec<f64>> {
    model.score(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::auc_roc;
    use crate::seeds;
    use rand::Rng;

    /// Positive iff x0 > 0.3 and x1 < 0.6; a third column is noise.
    fn toy(seed: u64) -> (Matrix, Vec<u8>) {
        let mut rng = seeds::rng(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..120 {
            let r: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            y.push(u8::from(r[0] > 0.3 && r[1] < 0.6));
            rows.push(r);
        }
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn separable_toy_reaches_auc_one() {
        let (x, y) = toy(1);
        let params = GbdtParams {
            iterations: 10,
            depth: 3,
            ..Default::default()
        };
        let fit = gbdt_fit(&x, &y, &params).unwrap();
        assert_eq!(auc_roc(&fit.model.score(&x).unwrap(), &y).unwrap(), 1.0);
    }

    #[test]
    fn single_stump_has_two_outputs() {
        let (x, y) = toy(2);
        let params = GbdtParams {
            iterations: 1,
            depth: 1,
            ..Default::default()
        };
        let fit = gbdt_fit(&x, &y, &params).unwrap();
        assert_eq!(fit.model.trees.len(), 1);
        assert_eq!(fit.model.trees[0].nodes.len(), 3);
        let mut distinct: Vec<f64> = fit.model.score(&x).unwrap();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        assert_eq!(distinct.len(), 2);
    }

    #[test]
    fn logloss_trace_non_increasing() {
        let (x, y) = toy(3);
        for lr in [0.03, 0.1] {
            let params = GbdtParams {
                iterations: 40,
                depth: 4,
                learning_rate: lr,
                ..Default::default()
            };
            let fit = gbdt_fit(&x, &y, &params).unwrap();
            assert_eq!(fit.logloss.len(), 40);
            for w in fit.logloss.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "lr {lr}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn depth_bound_and_determinism() {
        let (x, y) = toy(4);
        let params = GbdtParams {
            iterations: 5,
            depth: 10,
            ..Default::default()
        };
        let a = gbdt_fit(&x, &y, &params).unwrap().model;
        let b = gbdt_fit(&x, &y, &params).unwrap().model;
        assert_eq!(a, b);
        assert!(a.trees.iter().all(|t| t.depth() <= 10));
    }

    #[test]
    fn single_class_rejected() {
        let (x, _) = toy(5);
        let y = vec![0u8; x.rows()];
        assert!(matches!(
            gbdt_fit(&x, &y, &GbdtParams::default()),
            Err(Error::Training(_))
        ));
    }
}
