//! Descriptor matching with a KD-tree, positional gating and
//! threshold hysteresis.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::features::{Descriptor, FeatureSet, DESCRIPTOR_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    /// Leaf visits allowed during best-bin-first backtracking.
    pub max_leaf_visits: usize,
    pub leaf_size: usize,
    /// Lowe ratio; `None` disables the test.
    pub ratio_test: Option<f32>,
    pub r_min: f64,
    pub r_max: f64,
    pub r_floor: f64,
    pub offset_history: usize,
    pub high_watermark: usize,
    pub low_watermark: usize,
    pub hysteresis_factor: f64,
    pub max_feature_distance: f64,
    pub min_feature_distance_bound: f64,
    pub max_feature_distance_bound: f64,
    pub max_keypoints: usize,
    pub min_keypoints_bound: usize,
    pub max_keypoints_bound: usize,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            max_leaf_visits: 224,
            leaf_size: 8,
            ratio_test: None,
            r_min: 2.0,
            r_max: 20.0,
            r_floor: 1.0,
            offset_history: 10,
            high_watermark: 3000,
            low_watermark: 300,
            hysteresis_factor: 0.9,
            max_feature_distance: 0.7,
            min_feature_distance_bound: 0.3,
            max_feature_distance_bound: 1.2,
            max_keypoints: 1000,
            min_keypoints_bound: 200,
            max_keypoints_bound: 5000,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let bad = |m: &str| Err(crate::Error::Config(format!("matcher: {m}")));
        if self.max_leaf_visits == 0 || self.leaf_size == 0 {
            return bad("max_leaf_visits and leaf_size must be positive");
        }
        if !(self.r_min > 0.0 && self.r_min <= self.r_max) {
            return bad("need 0 < r_min <= r_max");
        }
        if self.low_watermark > self.high_watermark {
            return bad("low_watermark exceeds high_watermark");
        }
        if !(self.hysteresis_factor > 0.0 && self.hysteresis_factor < 1.0) {
            return bad("hysteresis_factor must be in (0, 1)");
        }
        if self.min_feature_distance_bound > self.max_feature_distance_bound
            || self.min_keypoints_bound > self.max_keypoints_bound
        {
            return bad("inverted threshold bounds");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub query: usize,
    pub map: usize,
    pub distance: f32,
    /// Global raster coordinates (set origin + keypoint position), pixels.
    pub query_pos: [f64; 2],
    pub map_pos: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchSet {
    pub pairs: Vec<Match>,
    pub candidates_examined: usize,
    pub radius: f64,
    pub resolution: f64,
}

impl MatchSet {
    pub fn empty(resolution: f64) -> Self {
        Self {
            pairs: Vec::new(),
            candidates_examined: 0,
            radius: f64::INFINITY,
            resolution,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Metric (query, map) positions of every pair, pixel centres.
    pub fn world_pairs(&self) -> Vec<([f64; 2], [f64; 2])> {
        let r = self.resolution;
        self.pairs
            .iter()
            .map(|m| {
                (
                    [(m.query_pos[0] + 0.5) * r, (m.query_pos[1] + 0.5) * r],
                    [(m.map_pos[0] + 0.5) * r, (m.map_pos[1] + 0.5) * r],
                )
            })
            .collect()
    }
}

fn global_pos(fs: &FeatureSet, i: usize) -> [f64; 2] {
    let k = &fs.keypoints[i];
    [fs.origin[0] as f64 + k.u, fs.origin[1] as f64 + k.v]
}

#[inline]
fn sq_dist(a: &Descriptor, b: &Descriptor) -> f32 {
    let mut acc = [0.0f32; 8];
    for (ca, cb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for k in 0..8 {
            let d = ca[k] - cb[k];
            acc[k] += d * d;
        }
    }
    acc.iter().sum()
}

enum Node {
    Leaf { start: usize, end: usize },
    Split { dim: usize, value: f32, left: usize, right: usize },
}

/// KD-tree over descriptors, split on the highest-variance dimension at the
/// median. Immutable once built.
pub struct KdTree<'a> {
    data: &'a [Descriptor],
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(PartialEq)]
struct Pending {
    bound: f32,
    node: usize,
    trail: usize,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on bound, then node id for determinism
        other
            .bound
            .total_cmp(&self.bound)
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Up to two nearest neighbours, ordered by (distance, index).
#[derive(Debug, Clone, Copy)]
struct Best2 {
    d: [f32; 2],
    i: [usize; 2],
}

impl Best2 {
    fn new() -> Self {
        Self {
            d: [f32::INFINITY; 2],
            i: [usize::MAX; 2],
        }
    }

    fn offer(&mut self, d: f32, i: usize) {
        let better = |d: f32, i: usize, d2: f32, i2: usize| d < d2 || (d == d2 && i < i2);
        if better(d, i, self.d[0], self.i[0]) {
            self.d[1] = self.d[0];
            self.i[1] = self.i[0];
            self.d[0] = d;
            self.i[0] = i;
        } else if better(d, i, self.d[1], self.i[1]) {
            self.d[1] = d;
            self.i[1] = i;
        }
    }
}

impl<'a> KdTree<'a> {
    pub fn build(data: &'a [Descriptor], leaf_size: usize) -> Self {
        let mut tree = Self {
            data,
            order: (0..data.len()).collect(),
            nodes: Vec::new(),
        };
        if !data.is_empty() {
            tree.build_node(0, data.len(), leaf_size.max(1));
        }
        tree
    }

    fn build_node(&mut self, start: usize, end: usize, leaf_size: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= leaf_size {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let n = (end - start) as f64;
        let mut mean = [0.0f64; DESCRIPTOR_DIM];
        let mut sq = [0.0f64; DESCRIPTOR_DIM];
        for &i in &self.order[start..end] {
            for (k, &x) in self.data[i].iter().enumerate() {
                mean[k] += x as f64;
                sq[k] += (x as f64) * (x as f64);
            }
        }
        let mut dim = 0;
        let mut best = -1.0;
        for k in 0..DESCRIPTOR_DIM {
            let var = sq[k] / n - (mean[k] / n).powi(2);
            if var > best {
                best = var;
                dim = k;
            }
        }
        let data = self.data;
        let mid = start + (end - start) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            data[a][dim].total_cmp(&data[b][dim]).then(a.cmp(&b))
        });
        let value = data[self.order[mid]][dim];
        self.nodes.push(Node::Split {
            dim,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build_node(start, mid, leaf_size);
        let right = self.build_node(mid, end, leaf_size);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id]
        {
            *l = left;
            *r = right;
        }
        id
    }

    /// Best-bin-first search; returns the two best (squared distance, index)
    /// found within `max_leaves` leaf visits and the number of candidates
    /// compared. Branch bounds accumulate the per-dimension offsets of the
    /// cells crossed on the way (incremental distance), so they are exact
    /// lower bounds on the distance to anything in the branch.
    fn search(&self, q: &Descriptor, max_leaves: usize) -> (Best2, usize) {
        let mut best = Best2::new();
        let mut examined = 0;
        if self.nodes.is_empty() {
            return (best, 0);
        }
        // arena of (parent, dim, offset) records; usize::MAX terminates
        let mut trail: Vec<(usize, usize, f32)> = Vec::new();
        let prior_offset = |trail: &[(usize, usize, f32)], mut at: usize, dim: usize| {
            while at != usize::MAX {
                let (parent, d, off) = trail[at];
                if d == dim {
                    return off;
                }
                at = parent;
            }
            0.0
        };
        let mut heap = BinaryHeap::new();
        heap.push(Pending {
            bound: 0.0,
            node: 0,
            trail: usize::MAX,
        });
        let mut leaves = 0;
        while let Some(Pending { bound, node, trail: tail }) = heap.pop() {
            if leaves >= max_leaves || bound > best.d[1] {
                break;
            }
            let mut cur = node;
            loop {
                match &self.nodes[cur] {
                    Node::Leaf { start, end } => {
                        for &i in &self.order[*start..*end] {
                            best.offer(sq_dist(q, &self.data[i]), i);
                        }
                        examined += end - start;
                        leaves += 1;
                        break;
                    }
                    Node::Split {
                        dim,
                        value,
                        left,
                        right,
                    } => {
                        let diff = q[*dim] - value;
                        let (near, far) = if diff < 0.0 {
                            (*left, *right)
                        } else {
                            (*right, *left)
                        };
                        let old = prior_offset(&trail, tail, *dim);
                        let far_bound = bound - old * old + diff * diff;
                        if far_bound <= best.d[1] {
                            trail.push((tail, *dim, diff));
                            heap.push(Pending {
                                bound: far_bound,
                                node: far,
                                trail: trail.len() - 1,
                            });
                        }
                        cur = near;
                    }
                }
            }
        }
        (best, examined)
    }
}

/// Approximate nearest map descriptor for every query descriptor. Ties go
/// to the lower map index; pairs farther than `max_dist` are dropped.
pub fn match_descriptors(
    query: &FeatureSet,
    map: &FeatureSet,
    max_dist: f64,
    config: &MatcherConfig,
) -> MatchSet {
    let mut out = MatchSet::empty(map.resolution);
    if query.is_empty() || map.is_empty() {
        return out;
    }
    let tree = KdTree::build(&map.descriptors, config.leaf_size);
    for (qi, qd) in query.descriptors.iter().enumerate() {
        let (best, examined) = tree.search(qd, config.max_leaf_visits);
        out.candidates_examined += examined;
        let d = best.d[0].sqrt();
        if best.i[0] == usize::MAX || d as f64 > max_dist {
            continue;
        }
        if let Some(ratio) = config.ratio_test {
            if best.i[1] != usize::MAX && d > ratio * best.d[1].sqrt() {
                continue;
            }
        }
        out.pairs.push(Match {
            query: qi,
            map: best.i[0],
            distance: d,
            query_pos: global_pos(query, qi),
            map_pos: global_pos(map, best.i[0]),
        });
    }
    out
}

/// Exact nearest neighbour by exhaustive search, same tie rule.
pub fn brute_force_nn(query: &Descriptor, map: &[Descriptor]) -> Option<(usize, f32)> {
    let mut best: Option<(usize, f32)> = None;
    for (i, d) in map.iter().enumerate() {
        let dd = sq_dist(query, d);
        if best.is_none_or(|(_, b)| dd < b) {
            best = Some((i, dd));
        }
    }
    best.map(|(i, d)| (i, d.sqrt()))
}

/// Index of the approximate nearest neighbour for each query.
pub fn approximate_nn(queries: &[Descriptor], map: &[Descriptor], config: &MatcherConfig) -> Vec<Option<usize>> {
    let tree = KdTree::build(map, config.leaf_size);
    queries
        .iter()
        .map(|q| {
            let (b, _) = tree.search(q, config.max_leaf_visits);
            (b.i[0] != usize::MAX).then_some(b.i[0])
        })
        .collect()
}

pub fn filter_by_radius(matches: &MatchSet, radius: f64, resolution: f64) -> MatchSet {
    let pairs = matches
        .pairs
        .iter()
        .filter(|m| {
            let dx = m.map_pos[0] - m.query_pos[0];
            let dy = m.map_pos[1] - m.query_pos[1];
            dx.hypot(dy) * resolution <= radius
        })
        .copied()
        .collect();
    MatchSet {
        pairs,
        candidates_examined: matches.candidates_examined,
        radius,
        resolution: matches.resolution,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatcherState {
    pub recent_offsets: VecDeque<f64>,
    pub max_feature_distance: f64,
    pub max_keypoints: usize,
    pub config: MatcherConfig,
}

impl MatcherState {
    pub fn new(config: MatcherConfig) -> Self {
        Self {
            recent_offsets: VecDeque::with_capacity(config.offset_history),
            max_feature_distance: config
                .max_feature_distance
                .clamp(config.min_feature_distance_bound, config.max_feature_distance_bound),
            max_keypoints: config
                .max_keypoints
                .clamp(config.min_keypoints_bound, config.max_keypoints_bound),
            config,
        }
    }

    /// Records the magnitude (metres) of a measured pose offset, before the
    /// correction gain and cap are applied.
    pub fn record_offset(&mut self, magnitude: f64) {
        if self.config.offset_history == 0 {
            return;
        }
        if self.recent_offsets.len() == self.config.offset_history {
            self.recent_offsets.pop_front();
        }
        self.recent_offsets.push_back(magnitude.abs());
    }
}

pub fn dynamic_radius(state: &MatcherState) -> f64 {
    let c = &state.config;
    if state.recent_offsets.is_empty() {
        return c.r_max;
    }
    let mut v: Vec<f64> = state.recent_offsets.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    (median * 3.0 + c.r_floor).clamp(c.r_min, c.r_max)
}

pub fn update_hysteresis(state: &MatcherState, match_count: usize) -> MatcherState {
    let mut next = state.clone();
    let c = &state.config;
    let f = c.hysteresis_factor;
    let scale = if match_count > c.high_watermark {
        f
    } else if match_count < c.low_watermark {
        1.0 / f
    } else {
        return next;
    };
    next.max_feature_distance = (state.max_feature_distance * scale)
        .clamp(c.min_feature_distance_bound, c.max_feature_distance_bound);
    next.max_keypoints = ((state.max_keypoints as f64 * scale).round() as usize)
        .clamp(c.min_keypoints_bound, c.max_keypoints_bound);
    next
}
