//! Bagged regression trees with out-of-bag residual kriging.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kriging::{Kriging, KrigingFit, KrigingParams};
use crate::error::{Error, Result};
use crate::geodata::Point;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means ⌈√p⌉.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 200, max_depth: 8, min_leaf: 5, max_features: None, bootstrap: true, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Nodes stored flat; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        let mut n = 0;
        loop {
            match self.nodes[n] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    n = if x[(i, feature)] <= threshold { left } else { right };
                }
            }
        }
    }
}

/// Best split of `rows` on `feature`: (sse, threshold). Thresholds are
/// midpoints between consecutive distinct values; both sides keep at least
/// `min_leaf` rows.
fn best_split_on(x: &DMatrix<f64>, y: &DVector<f64>, rows: &[usize], feature: usize, min_leaf: usize) -> Option<(f64, f64)> {
    let mut order: Vec<(f64, f64)> = rows.iter().map(|&i| (x[(i, feature)], y[i])).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = order.len();
    let total: f64 = order.iter().map(|p| p.1).sum();
    let total_sq: f64 = order.iter().map(|p| p.1 * p.1).sum();
    let (mut s, mut sq) = (0.0, 0.0);
    let mut best: Option<(f64, f64)> = None;
    for k in 1..n {
        s += order[k - 1].1;
        sq += order[k - 1].1 * order[k - 1].1;
        if k < min_leaf || n - k < min_leaf || order[k - 1].0 == order[k].0 {
            continue;
        }
        let (nl, nr) = (k as f64, (n - k) as f64);
        let sse = (sq - s * s / nl) + ((total_sq - sq) - (total - s).powi(2) / nr);
        if best.is_none_or(|(b, _)| sse < b) {
            best = Some((sse, 0.5 * (order[k - 1].0 + order[k].0)));
        }
    }
    best
}

fn grow<R: Rng>(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    rows: Vec<usize>,
    depth: usize,
    cfg: &ForestConfig,
    mtry: usize,
    rng: &mut R,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    let mean = rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64;
    nodes.push(Node::Leaf(mean));
    if depth >= cfg.max_depth || rows.len() < 2 * cfg.min_leaf.max(1) {
        return id;
    }
    let p = x.ncols();
    let features = if mtry >= p { (0..p).collect() } else { sample(rng, p, mtry).into_vec() };
    let mut best: Option<(f64, usize, f64)> = None;
    for f in features {
        if let Some((sse, t)) = best_split_on(x, y, &rows, f, cfg.min_leaf.max(1)) {
            if best.is_none_or(|(b, bf, _)| sse < b || (sse == b && f < bf)) {
                best = Some((sse, f, t));
            }
        }
    }
    let Some((_, feature, threshold)) = best else { return id };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[(i, feature)] <= threshold);
    let left = grow(x, y, l, depth + 1, cfg, mtry, rng, nodes);
    let right = grow(x, y, r, depth + 1, cfg, mtry, rng, nodes);
    nodes[id] = Node::Split { feature, threshold, left, right };
    id
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    /// Out-of-bag prediction per training row (in-bag forest mean where a
    /// row was never out of bag).
    pub oob: Vec<f64>,
}

impl Forest {
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &ForestConfig) -> Result<Forest> {
        let n = y.len();
        if n == 0 || x.nrows() != n {
            return Err(Error::Input("forest inputs differ in length or are empty".into()));
        }
        if cfg.n_trees == 0 {
            return Err(Error::Parameter("forest needs at least one tree".into()));
        }
        let p = x.ncols().max(1);
        let mtry = cfg.max_features.unwrap_or_else(|| (p as f64).sqrt().ceil() as usize).clamp(1, p);
        let mut trees = Vec::with_capacity(cfg.n_trees);
        let mut oob_sum = vec![0.0; n];
        let mut oob_cnt = vec![0usize; n];
        for t in 0..cfg.n_trees {
            // per-tree stream so trees do not depend on each other's draws
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            let mut in_bag = vec![false; n];
            let rows: Vec<usize> = if cfg.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            for &i in &rows {
                in_bag[i] = true;
            }
            let mut nodes = Vec::new();
            if x.ncols() == 0 {
                nodes.push(Node::Leaf(rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64));
            } else {
                grow(x, y, rows, 0, cfg, mtry, &mut rng, &mut nodes);
            }
            let tree = Tree { nodes };
            for i in (0..n).filter(|&i| !in_bag[i]) {
                oob_sum[i] += tree.predict_row(x, i);
                oob_cnt[i] += 1;
            }
            trees.push(tree);
        }
        let mut forest = Forest { trees, oob: Vec::new() };
        let full = forest.predict(x);
        forest.oob = (0..n)
            .map(|i| if oob_cnt[i] > 0 { oob_sum[i] / oob_cnt[i] as f64 } else { full[i] })
            .collect();
        Ok(forest)
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| self.trees.iter().map(|t| t.predict_row(x, i)).sum::<f64>() / self.trees.len() as f64)
            .collect()
    }
}

/// Forest trend plus kriging of the out-of-bag residuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfKriging {
    pub forest: Forest,
    pub kriging: Kriging,
}

impl RfKriging {
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>, locations: &[Point], cfg: &ForestConfig, kfit: &KrigingFit) -> Result<Self> {
        let forest = Forest::fit(x, y, cfg)?;
        let r = DVector::from_iterator(y.len(), y.iter().zip(&forest.oob).map(|(a, b)| a - b));
        Ok(RfKriging { kriging: Kriging::fit(locations, &r, kfit)?, forest })
    }

    pub fn fit_with(x: &DMatrix<f64>, y: &DVector<f64>, locations: &[Point], cfg: &ForestConfig, params: KrigingParams) -> Result<Self> {
        let forest = Forest::fit(x, y, cfg)?;
        let r = DVector::from_iterator(y.len(), y.iter().zip(&forest.oob).map(|(a, b)| a - b));
        Ok(RfKriging { kriging: Kriging::with_params(locations, &r, params)?, forest })
    }

    /// OOB residuals the kriging was fitted on.
    pub fn residuals(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(y.len(), y.iter().zip(&self.forest.oob).map(|(a, b)| a - b))
    }

    pub fn predict(&self, x: &DMatrix<f64>, locations: &[Point]) -> (Vec<f64>, Vec<f64>) {
        let trend = self.forest.predict(x);
        let (m, v) = self.kriging.predict(locations);
        (trend.iter().zip(&m).map(|(a, b)| a + b).collect(), v)
    }
}
