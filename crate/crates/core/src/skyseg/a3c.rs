//! Agglomerative connectivity-constrained clustering of an image into
//! homogeneous patches.
//!
//! Seeds are square pixel blocks (`seed_block`, default 8; edge blocks may be
//! partial). Only 4-connected neighbor segments may merge, and each step
//! takes the merge with the minimal increase in total within-segment RGB
//! variance (Ward criterion), ties broken by the smallest `(label_a,
//! label_b)` pair. The surviving segment keeps the smaller label, so
//! tie-breaking is stable across the whole run.

use super::{SegmentMap, SkySegError};
use crate::imgio::ImageTensor;
use ndarray::Array2;
use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

pub const DEFAULT_SEED_BLOCK: usize = 8;

#[derive(Debug, Clone)]
pub struct A3cConfig {
    pub seed_block: usize,
}

impl Default for A3cConfig {
    fn default() -> Self {
        A3cConfig {
            seed_block: DEFAULT_SEED_BLOCK,
        }
    }
}

/// One executed merge: `absorbed` was folded into `kept`, increasing total
/// within-segment variance by `delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeEvent {
    pub kept: u32,
    pub absorbed: u32,
    pub delta: f64,
}

#[derive(Clone, Copy)]
struct SegStat {
    n: f64,
    sum: [f64; 3],
}

impl SegStat {
    fn mean(&self, c: usize) -> f64 {
        self.sum[c] / self.n
    }
}

fn ward_delta(a: &SegStat, b: &SegStat) -> f64 {
    let mut dist2 = 0.0;
    for c in 0..3 {
        let d = a.mean(c) - b.mean(c);
        dist2 += d * d;
    }
    a.n * b.n / (a.n + b.n) * dist2
}

struct Candidate {
    delta: f64,
    a: u32,
    b: u32,
    ver_a: u64,
    ver_b: u64,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}

impl Ord for Candidate {
    // Reversed so the max-heap pops the smallest (delta, a, b) first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .delta
            .total_cmp(&self.delta)
            .then(other.a.cmp(&self.a))
            .then(other.b.cmp(&self.b))
    }
}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn a3c_cluster(
    image: &ImageTensor,
    target_segments: usize,
    cfg: &A3cConfig,
) -> Result<SegmentMap, SkySegError> {
    a3c_cluster_logged(image, target_segments, cfg).map(|(seg, _)| seg)
}

/// Like [`a3c_cluster`], additionally returning the merge log so callers can
/// audit adjacency and the monotone growth of the Ward objective.
pub fn a3c_cluster_logged(
    image: &ImageTensor,
    target_segments: usize,
    cfg: &A3cConfig,
) -> Result<(SegmentMap, Vec<MergeEvent>), SkySegError> {
    let (ch, h, w) = image.dim();
    if ch != 3 || h == 0 || w == 0 {
        return Err(SkySegError::InvalidArgument(
            "image must be non-empty with 3 channels".into(),
        ));
    }
    if cfg.seed_block == 0 {
        return Err(SkySegError::InvalidArgument("seed_block must be >= 1".into()));
    }
    if target_segments < 2 || target_segments > h * w {
        return Err(SkySegError::InvalidArgument(format!(
            "target_segments={target_segments} outside [2, {}]",
            h * w
        )));
    }

    // Seed labels from the block grid.
    let b = cfg.seed_block;
    let blocks_x = w.div_ceil(b);
    let blocks_y = h.div_ceil(b);
    let n_seeds = blocks_x * blocks_y;
    if target_segments > n_seeds {
        return Err(SkySegError::InvalidArgument(format!(
            "target_segments={target_segments} exceeds the {n_seeds} seed blocks; \
             use a smaller seed_block"
        )));
    }
    let seed_label = |y: usize, x: usize| ((y / b) * blocks_x + (x / b)) as u32;

    let mut stats: HashMap<u32, SegStat> = HashMap::new();
    for y in 0..h {
        for x in 0..w {
            let s = stats.entry(seed_label(y, x)).or_insert(SegStat {
                n: 0.0,
                sum: [0.0; 3],
            });
            s.n += 1.0;
            for c in 0..3 {
                s.sum[c] += image[[c, y, x]];
            }
        }
    }

    let mut adjacency: HashMap<u32, BTreeSet<u32>> = HashMap::new();
    for y in 0..h {
        for x in 0..w {
            let l = seed_label(y, x);
            if x + 1 < w {
                let r = seed_label(y, x + 1);
                if r != l {
                    adjacency.entry(l).or_default().insert(r);
                    adjacency.entry(r).or_default().insert(l);
                }
            }
            if y + 1 < h {
                let d = seed_label(y + 1, x);
                if d != l {
                    adjacency.entry(l).or_default().insert(d);
                    adjacency.entry(d).or_default().insert(l);
                }
            }
        }
    }

    let mut versions: HashMap<u32, u64> = stats.keys().map(|&k| (k, 0)).collect();
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::new();
    for (&a, neighbors) in &adjacency {
        for &nb in neighbors {
            if a < nb {
                heap.push(Candidate {
                    delta: ward_delta(&stats[&a], &stats[&nb]),
                    a,
                    b: nb,
                    ver_a: versions[&a],
                    ver_b: versions[&nb],
                });
            }
        }
    }

    // Union-find over seed labels; roots keep the smallest label in their set.
    let mut parent: HashMap<u32, u32> = stats.keys().map(|&k| (k, k)).collect();
    fn find(parent: &mut HashMap<u32, u32>, mut x: u32) -> u32 {
        while parent[&x] != x {
            let gp = parent[&parent[&x]];
            parent.insert(x, gp);
            x = gp;
        }
        x
    }

    let mut n_current = n_seeds;
    let mut log = Vec::new();
    while n_current > target_segments {
        let cand = heap
            .pop()
            .ok_or_else(|| SkySegError::InvalidArgument("merge heap exhausted".into()))?;
        let (a, b) = (cand.a, cand.b);
        if !stats.contains_key(&a)
            || !stats.contains_key(&b)
            || versions[&a] != cand.ver_a
            || versions[&b] != cand.ver_b
        {
            continue; // stale entry
        }

        // Merge b into a (a < b by construction).
        let sb = stats.remove(&b).expect("b alive");
        let sa = stats.get_mut(&a).expect("a alive");
        sa.n += sb.n;
        for c in 0..3 {
            sa.sum[c] += sb.sum[c];
        }
        parent.insert(b, a);
        log.push(MergeEvent {
            kept: a,
            absorbed: b,
            delta: cand.delta,
        });

        let b_neighbors = adjacency.remove(&b).unwrap_or_default();
        let a_neighbors = adjacency.entry(a).or_default();
        a_neighbors.remove(&b);
        for nb in b_neighbors {
            if nb != a {
                a_neighbors.insert(nb);
            }
        }
        let merged_neighbors: Vec<u32> = a_neighbors.iter().copied().collect();
        for &nb in &merged_neighbors {
            let set = adjacency.get_mut(&nb).expect("neighbor alive");
            set.remove(&b);
            set.insert(a);
        }

        *versions.get_mut(&a).unwrap() += 1;
        versions.remove(&b);
        let ver_a = versions[&a];
        for &nb in &merged_neighbors {
            let (lo, hi) = if a < nb { (a, nb) } else { (nb, a) };
            heap.push(Candidate {
                delta: ward_delta(&stats[&lo], &stats[&hi]),
                a: lo,
                b: hi,
                ver_a: versions[&lo],
                ver_b: versions[&hi],
            });
        }
        debug_assert_eq!(versions[&a], ver_a);
        n_current -= 1;
    }

    // Resolve pixels and compact labels in row-major first-appearance order.
    let mut compact: HashMap<u32, u32> = HashMap::new();
    let mut labels = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let root = find(&mut parent, seed_label(y, x));
            let next = compact.len() as u32;
            let id = *compact.entry(root).or_insert(next);
            labels[[y, x]] = id;
        }
    }
    debug_assert_eq!(compact.len(), target_segments);

    Ok((
        SegmentMap {
            labels,
            n_segments: target_segments,
        },
        log,
    ))
}
