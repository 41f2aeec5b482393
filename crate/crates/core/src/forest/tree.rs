use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ForestConfig;

pub const N_FEATURES: usize = 5;

/// Nodes above this size search quantile candidates instead of every
/// distinct value.
pub(crate) const EXACT_SPLIT_LIMIT: usize = 10_000;
const QUANTILE_CANDIDATES: usize = 64;
const QUANTILE_SUBSAMPLE: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    /// Samples with `x[feature] <= threshold` go to the next node in
    /// pre-order; the rest go to `right`.
    Split {
        feature: u8,
        threshold: f64,
        right: u32,
    },
    Leaf {
        value: [f64; 3],
        count: u32,
    },
}

/// A multi-output regression tree stored in pre-order.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn constant(value: [f64; 3]) -> Self {
        Self {
            nodes: vec![Node::Leaf { value, count: 0 }],
        }
    }

    /// Builds a tree from pre-order nodes, checking that every split's
    /// children lie inside the array.
    pub fn from_nodes(nodes: Vec<Node>) -> Option<Self> {
        fn check(nodes: &[Node], at: usize) -> Option<usize> {
            match *nodes.get(at)? {
                Node::Leaf { .. } => Some(at + 1),
                Node::Split { right, feature, .. } => {
                    if feature as usize >= N_FEATURES {
                        return None;
                    }
                    let after_left = check(nodes, at + 1)?;
                    if after_left != right as usize {
                        return None;
                    }
                    check(nodes, right as usize)
                }
            }
        }
        (check(&nodes, 0)? == nodes.len()).then_some(Self { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    #[inline]
    pub fn predict(&self, x: &[f64; N_FEATURES]) -> [f64; 3] {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    feature,
                    threshold,
                    right,
                } => {
                    at = if x[feature as usize] <= threshold {
                        at + 1
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    /// Length of the longest root-to-leaf path in edges.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> (usize, usize) {
            match nodes[at] {
                Node::Leaf { .. } => (0, at + 1),
                Node::Split { right, .. } => {
                    let (l, _) = walk(nodes, at + 1);
                    let (r, end) = walk(nodes, right as usize);
                    (1 + l.max(r), end)
                }
            }
        }
        walk(&self.nodes, 0).0
    }

    pub fn leaves(&self) -> impl Iterator<Item = ([f64; 3], u32)> + '_ {
        self.nodes.iter().filter_map(|n| match *n {
            Node::Leaf { value, count } => Some((value, count)),
            Node::Split { .. } => None,
        })
    }
}

pub(crate) struct TreeBuilder<'a> {
    x: &'a [[f64; N_FEATURES]],
    y: &'a [[f64; 3]],
    cfg: &'a ForestConfig,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    // scratch buffers reused across nodes
    sorted: Vec<(f64, u32)>,
}

struct Candidate {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<'a> TreeBuilder<'a> {
    pub(crate) fn new(x: &'a [[f64; N_FEATURES]], y: &'a [[f64; 3]], cfg: &'a ForestConfig, rng: ChaCha8Rng) -> Self {
        Self {
            x,
            y,
            cfg,
            rng,
            nodes: Vec::new(),
            sorted: Vec::new(),
        }
    }

    pub(crate) fn build(mut self) -> RegressionTree {
        let n = self.x.len();
        let draws = ((self.cfg.bootstrap_fraction * n as f64).round() as usize).max(1);
        let mut idx: Vec<u32> = if self.cfg.bootstrap {
            (0..draws).map(|_| self.rng.gen_range(0..n) as u32).collect()
        } else {
            (0..n as u32).collect()
        };
        self.grow(&mut idx, 0);
        RegressionTree { nodes: self.nodes }
    }

    fn grow(&mut self, idx: &mut [u32], depth: usize) {
        let m = idx.len();
        let mut sum = [0.0; 3];
        for &i in idx.iter() {
            for (s, v) in sum.iter_mut().zip(&self.y[i as usize]) {
                *s += v;
            }
        }
        let mean = sum.map(|s| s / m as f64);
        let sse: f64 = idx
            .iter()
            .map(|&i| {
                let y = &self.y[i as usize];
                (0..3).map(|a| (y[a] - mean[a]).powi(2)).sum::<f64>()
            })
            .sum();

        let splittable = depth < self.cfg.max_depth && m >= 2 * self.cfg.min_leaf && sse > 0.0;
        let best = if splittable { self.best_split(idx, &mean) } else { None };
        let Some(best) = best else {
            self.nodes.push(Node::Leaf {
                value: mean,
                count: m as u32,
            });
            return;
        };

        let mut left = 0;
        for j in 0..m {
            if self.x[idx[j] as usize][best.feature] <= best.threshold {
                idx.swap(left, j);
                left += 1;
            }
        }
        debug_assert!(left >= self.cfg.min_leaf && m - left >= self.cfg.min_leaf);

        let at = self.nodes.len();
        self.nodes.push(Node::Split {
            feature: best.feature as u8,
            threshold: best.threshold,
            right: 0,
        });
        let (l, r) = idx.split_at_mut(left);
        self.grow(l, depth + 1);
        let right_at = self.nodes.len() as u32;
        if let Node::Split { right, .. } = &mut self.nodes[at] {
            *right = right_at;
        }
        self.grow(r, depth + 1);
    }

    /// Visits features in random order and scores the first
    /// `features_per_split` that are not constant at this node.
    fn best_split(&mut self, idx: &[u32], mean: &[f64; 3]) -> Option<Candidate> {
        let mut order = [0usize, 1, 2, 3, 4];
        order.shuffle(&mut self.rng);
        let mut tried = 0;
        let mut best: Option<Candidate> = None;
        for f in order {
            if tried == self.cfg.features_per_split {
                break;
            }
            let first = self.x[idx[0] as usize][f];
            if idx.iter().all(|&i| self.x[i as usize][f] == first) {
                continue;
            }
            tried += 1;
            let cand = if idx.len() > EXACT_SPLIT_LIMIT {
                self.quantile_split(idx, f, mean)
            } else {
                self.exact_split(idx, f, mean)
            };
            if let Some(c) = cand {
                if best.as_ref().is_none_or(|b| c.gain > b.gain) {
                    best = Some(c);
                }
            }
        }
        best
    }

    /// Gain is the drop in summed per-axis SSE, computed from label sums
    /// centered on the node mean.
    fn exact_split(&mut self, idx: &[u32], f: usize, mean: &[f64; 3]) -> Option<Candidate> {
        let m = idx.len();
        let min_leaf = self.cfg.min_leaf;
        self.sorted.clear();
        self.sorted.extend(idx.iter().map(|&i| (self.x[i as usize][f], i)));
        self.sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

        let mut total = [0.0; 3];
        for &(_, i) in &self.sorted {
            for a in 0..3 {
                total[a] += self.y[i as usize][a] - mean[a];
            }
        }
        let base = total.iter().map(|s| s * s).sum::<f64>() / m as f64;

        let mut left = [0.0; 3];
        let mut best: Option<(f64, usize)> = None;
        for pos in 0..m - 1 {
            let i = self.sorted[pos].1 as usize;
            for a in 0..3 {
                left[a] += self.y[i][a] - mean[a];
            }
            let n_left = pos + 1;
            if n_left < min_leaf || m - n_left < min_leaf {
                continue;
            }
            if self.sorted[pos].0 == self.sorted[pos + 1].0 {
                continue;
            }
            let nl = n_left as f64;
            let nr = (m - n_left) as f64;
            let gain = (0..3)
                .map(|a| left[a] * left[a] / nl + (total[a] - left[a]).powi(2) / nr)
                .sum::<f64>()
                - base;
            if gain > 0.0 && best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, pos));
            }
        }
        let (gain, pos) = best?;
        let lo = self.sorted[pos].0;
        let hi = self.sorted[pos + 1].0;
        let mid = lo + (hi - lo) / 2.0;
        // adjacent floats can round the midpoint up onto `hi`
        let threshold = if mid >= lo && mid < hi { mid } else { lo };
        Some(Candidate {
            feature: f,
            threshold,
            gain,
        })
    }

    /// Large-node search: up to 64 thresholds at quantiles of a random
    /// subsample, scored by binning every sample once.
    fn quantile_split(&mut self, idx: &[u32], f: usize, mean: &[f64; 3]) -> Option<Candidate> {
        let m = idx.len();
        let min_leaf = self.cfg.min_leaf;
        let mut sub: Vec<f64> = (0..QUANTILE_SUBSAMPLE.min(m))
            .map(|_| self.x[idx[self.rng.gen_range(0..m)] as usize][f])
            .collect();
        sub.sort_unstable_by(f64::total_cmp);
        let mut thresholds: Vec<f64> = (1..QUANTILE_CANDIDATES)
            .map(|q| sub[q * (sub.len() - 1) / QUANTILE_CANDIDATES])
            .collect();
        thresholds.dedup();
        if thresholds.is_empty() {
            return None;
        }

        // bin b holds samples with thresholds[b-1] < x <= thresholds[b]
        let nb = thresholds.len() + 1;
        let mut count = vec![0usize; nb];
        let mut sums = vec![[0.0f64; 3]; nb];
        let mut total = [0.0; 3];
        for &i in idx {
            let v = self.x[i as usize][f];
            let b = thresholds.partition_point(|&t| t < v);
            count[b] += 1;
            for a in 0..3 {
                let c = self.y[i as usize][a] - mean[a];
                sums[b][a] += c;
                total[a] += c;
            }
        }
        let base = total.iter().map(|s| s * s).sum::<f64>() / m as f64;

        let mut n_left = 0;
        let mut left = [0.0; 3];
        let mut best: Option<(f64, usize)> = None;
        for b in 0..thresholds.len() {
            n_left += count[b];
            for a in 0..3 {
                left[a] += sums[b][a];
            }
            if n_left < min_leaf || m - n_left < min_leaf {
                continue;
            }
            let nl = n_left as f64;
            let nr = (m - n_left) as f64;
            let gain = (0..3)
                .map(|a| left[a] * left[a] / nl + (total[a] - left[a]).powi(2) / nr)
                .sum::<f64>()
                - base;
            if gain > 0.0 && best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, b));
            }
        }
        let (gain, b) = best?;
        Some(Candidate {
            feature: f,
            threshold: thresholds[b],
            gain,
        })
    }
}
