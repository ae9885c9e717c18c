use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::binning::MISSING;

/// Smallest hessian sum allowed in a child.
const MIN_CHILD_HESSIAN: f64 = 1e-3;
/// Splits must improve the objective by more than this.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `x <= threshold` go left; missing values follow `default_left`.
    Split {
        feature: usize,
        threshold: f64,
        default_left: bool,
        left: usize,
        right: usize,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    /// Multiplier applied to every leaf value of this tree.
    pub weight: f64,
}

impl Tree {
    /// Unweighted leaf value for one row; `value(f)` reads feature `f`.
    pub fn leaf_value(&self, value: impl Fn(usize) -> Option<f64>) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, default_left, left, right, .. } => {
                    let go_left = match value(*feature) {
                        Some(x) => x <= *threshold,
                        None => *default_left,
                    };
                    i = if go_left { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Binned training features, column-major, indexed by schema position.
pub(crate) struct BinnedData<'a> {
    pub bins: &'a [Vec<u16>],
    pub uppers: &'a [Vec<f64>],
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: u32,
    pub min_child_samples: u32,
    pub lambda_l1: f64,
    pub lambda_l2: f64,
}

/// Per-row weighted gradient statistics.
pub(crate) struct RowStats<'a> {
    pub g: &'a [f64],
    pub h: &'a [f64],
    /// Sample multiplicity (bootstrap counts), used for `min_child_samples`.
    pub count: &'a [u32],
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    bin: usize,
    default_left: bool,
    gain: f64,
}

fn soft_threshold(g: f64, l1: f64) -> f64 {
    if g > l1 {
        g - l1
    } else if g < -l1 {
        g + l1
    } else {
        0.0
    }
}

fn score(g: f64, h: f64, p: &GrowParams) -> f64 {
    let t = soft_threshold(g, p.lambda_l1);
    let d = h + p.lambda_l2;
    if d <= 0.0 {
        0.0
    } else {
        t * t / d
    }
}

pub(crate) fn leaf_value(g: f64, h: f64, p: &GrowParams) -> f64 {
    let d = h + p.lambda_l2;
    if d <= 0.0 {
        0.0
    } else {
        -soft_threshold(g, p.lambda_l1) / d
    }
}

/// Grow one tree depth-wise over `rows`. `features` must be in canonical
/// (name) order; ties between equal gains go to the earlier feature, then
/// the lower bin.
pub(crate) fn grow(
    data: &BinnedData<'_>,
    features: &[usize],
    rows: Vec<u32>,
    stats: &RowStats<'_>,
    params: &GrowParams,
    parallel: bool,
) -> Tree {
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut queue = VecDeque::from([(0usize, rows, 0u32)]);
    while let Some((idx, rows, depth)) = queue.pop_front() {
        let (mut gs, mut hs, mut cs) = (0.0, 0.0, 0u64);
        for &r in &rows {
            gs += stats.g[r as usize];
            hs += stats.h[r as usize];
            cs += u64::from(stats.count[r as usize]);
        }
        let can_split = depth < params.max_depth && cs >= 2 * u64::from(params.min_child_samples);
        let best = if can_split {
            let eval = |&f: &usize| best_for_feature(data, f, &rows, stats, params, (gs, hs, cs));
            let per_feature: Vec<Option<Candidate>> =
                if parallel { features.par_iter().map(eval).collect() } else { features.iter().map(eval).collect() };
            per_feature.into_iter().flatten().fold(None, |acc: Option<Candidate>, c| match acc {
                Some(a) if a.gain >= c.gain => Some(a),
                _ => Some(c),
            })
        } else {
            None
        };
        match best {
            None => nodes[idx] = Node::Leaf { value: leaf_value(gs, hs, params) },
            Some(c) => {
                let col = &data.bins[c.feature];
                let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows.iter().partition(|&&r| {
                    let b = col[r as usize];
                    if b == MISSING {
                        c.default_left
                    } else {
                        (b as usize) <= c.bin
                    }
                });
                let left = nodes.len();
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[idx] = Node::Split {
                    feature: c.feature,
                    threshold: data.uppers[c.feature][c.bin],
                    default_left: c.default_left,
                    left,
                    right: left + 1,
                    gain: c.gain,
                };
                queue.push_back((left, left_rows, depth + 1));
                queue.push_back((left + 1, right_rows, depth + 1));
            }
        }
    }
    Tree { nodes, weight: 1.0 }
}

fn best_for_feature(
    data: &BinnedData<'_>,
    f: usize,
    rows: &[u32],
    stats: &RowStats<'_>,
    p: &GrowParams,
    (gs, hs, cs): (f64, f64, u64),
) -> Option<Candidate> {
    let n_bins = data.uppers[f].len();
    if n_bins < 2 {
        return None;
    }
    let col = &data.bins[f];
    let mut hg = vec![0.0; n_bins];
    let mut hh = vec![0.0; n_bins];
    let mut hc = vec![0u64; n_bins];
    let (mut mg, mut mh, mut mc) = (0.0, 0.0, 0u64);
    for &r in rows {
        let r = r as usize;
        let b = col[r];
        if b == MISSING {
            mg += stats.g[r];
            mh += stats.h[r];
            mc += u64::from(stats.count[r]);
        } else {
            let b = b as usize;
            hg[b] += stats.g[r];
            hh[b] += stats.h[r];
            hc[b] += u64::from(stats.count[r]);
        }
    }
    let parent = score(gs, hs, p);
    let min_c = u64::from(p.min_child_samples);
    let mut best: Option<Candidate> = None;
    let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0u64);
    for b in 0..n_bins - 1 {
        gl += hg[b];
        hl += hh[b];
        cl += hc[b];
        let directions: &[bool] = if mc > 0 { &[true, false] } else { &[true] };
        for &miss_left in directions {
            let (gl2, hl2, cl2) = if miss_left && mc > 0 { (gl + mg, hl + mh, cl + mc) } else { (gl, hl, cl) };
            let (gr2, hr2, cr2) = (gs - gl2, hs - hl2, cs - cl2);
            if cl2 < min_c || cr2 < min_c || hl2 < MIN_CHILD_HESSIAN || hr2 < MIN_CHILD_HESSIAN {
                continue;
            }
            let gain = score(gl2, hl2, p) + score(gr2, hr2, p) - parent;
            if gain > MIN_GAIN && best.is_none_or(|c| gain > c.gain) {
                // With no missing values seen, send future missing values to the larger child.
                let default_left = if mc > 0 { miss_left } else { cl2 >= cr2 };
                best = Some(Candidate { feature: f, bin: b, default_left, gain });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> GrowParams {
        GrowParams { max_depth: 3, min_child_samples: 1, lambda_l1: 0.0, lambda_l2: 0.0 }
    }

    #[test]
    fn splits_on_the_separating_bin() {
        let bins = vec![vec![0u16, 0, 1, 1]];
        let uppers = vec![vec![0.5, f64::INFINITY]];
        let data = BinnedData { bins: &bins, uppers: &uppers };
        let g = [1.0, 1.0, -1.0, -1.0];
        let h = [1.0; 4];
        let count = [1u32; 4];
        let stats = RowStats { g: &g, h: &h, count: &count };
        let t = grow(&data, &[0], vec![0, 1, 2, 3], &stats, &params(), false);
        assert_eq!(t.depth(), 1);
        assert_eq!(t.leaf_value(|_| Some(0.0)), -1.0);
        assert_eq!(t.leaf_value(|_| Some(1.0)), 1.0);
    }

    #[test]
    fn equal_gain_prefers_first_feature_then_lowest_bin() {
        let bins = vec![vec![0u16, 1, 2, 3], vec![0u16, 1, 2, 3]];
        let uppers = vec![vec![0.5, 1.5, 2.5, f64::INFINITY]; 2];
        let data = BinnedData { bins: &bins, uppers: &uppers };
        // symmetric gradients: splitting after bin 0 or after bin 2 gains the same
        let g = [1.0, 0.0, 0.0, 1.0];
        let h = [1.0; 4];
        let count = [1u32; 4];
        let stats = RowStats { g: &g, h: &h, count: &count };
        let p = GrowParams { max_depth: 1, ..params() };
        let t = grow(&data, &[0, 1], vec![0, 1, 2, 3], &stats, &p, false);
        match &t.nodes[0] {
            Node::Split { feature, threshold, .. } => assert_eq!((*feature, *threshold), (0, 0.5)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_values_learn_a_direction() {
        let bins = vec![vec![0u16, 0, 1, 1, MISSING, MISSING]];
        let uppers = vec![vec![0.5, f64::INFINITY]];
        let data = BinnedData { bins: &bins, uppers: &uppers };
        let g = [1.0, 1.0, -1.0, -1.0, -1.0, -1.0];
        let h = [1.0; 6];
        let count = [1u32; 6];
        let stats = RowStats { g: &g, h: &h, count: &count };
        let t = grow(&data, &[0], (0..6).collect(), &stats, &GrowParams { max_depth: 1, ..params() }, false);
        assert_eq!(t.leaf_value(|_| None), t.leaf_value(|_| Some(1.0)));
    }
}
