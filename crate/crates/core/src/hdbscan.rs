//! HDBSCAN* density clustering.
//!
//! Core distances, mutual reachability, a Prim spanning tree over the dense
//! mutual-reachability graph, single-linkage merging, the condensed tree and
//! excess-of-mass cluster selection. The root cluster is never selected.

use rayon::prelude::*;

use crate::engine::Matrix;

/// Per-point cluster id, `None` for noise.
pub type Labels = Vec<Option<usize>>;

/// Largest density level; stands in for `1 / 0` on duplicate points.
const MAX_LAMBDA: f64 = 1e12;

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn lambda(d: f64) -> f64 {
    if d > 1.0 / MAX_LAMBDA {
        1.0 / d
    } else {
        MAX_LAMBDA
    }
}

/// Distance from each point to its `min_samples`-th nearest point, the
/// point itself counted as the first.
pub fn core_distances(points: &Matrix, min_samples: usize) -> Vec<f64> {
    let m = points.nrows();
    let k = min_samples.clamp(1, m.max(1));
    let rows: Vec<&[f64]> = points.rows().into_iter().map(|r| r.to_slice().expect("standard layout")).collect();
    (0..m)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = rows.iter().map(|r| distance(rows[i], r)).collect();
            let (_, kth, _) = d.select_nth_unstable_by(k - 1, f64::total_cmp);
            *kth
        })
        .collect()
}

/// Minimum spanning tree over mutual reachability, as `(a, b, weight)`.
fn prim(points: &Matrix, core: &[f64]) -> Vec<(usize, usize, f64)> {
    let m = points.nrows();
    let rows: Vec<&[f64]> = points.rows().into_iter().map(|r| r.to_slice().expect("standard layout")).collect();
    let mut in_tree = vec![false; m];
    let mut best = vec![f64::INFINITY; m];
    let mut from = vec![0usize; m];
    let mut edges = Vec::with_capacity(m.saturating_sub(1));
    let mut current = 0;
    in_tree[0] = true;
    for _ in 1..m {
        for j in 0..m {
            if in_tree[j] {
                continue;
            }
            let d = distance(rows[current], rows[j]).max(core[current]).max(core[j]);
            if d < best[j] {
                best[j] = d;
                from[j] = current;
            }
        }
        let mut next = usize::MAX;
        for j in 0..m {
            if !in_tree[j] && (next == usize::MAX || best[j] < best[next]) {
                next = j;
            }
        }
        in_tree[next] = true;
        edges.push((from[next], next, best[next]));
        current = next;
    }
    edges
}

/// Single-linkage merge tree: node `m + i` joins `children` at `distance`.
/// Spanning-tree edges of equal weight are merged in one step, so the tree
/// only depends on the level sets of the mutual-reachability graph and not
/// on which of several equal-weight spanning trees was found.
struct Merge {
    children: Vec<usize>,
    distance: f64,
    size: usize,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn single_linkage(m: usize, mut edges: Vec<(usize, usize, f64)>) -> Vec<Merge> {
    edges.sort_by(|a, b| a.2.total_cmp(&b.2));
    let mut parent: Vec<usize> = (0..2 * m).collect();
    let mut size = vec![1usize; 2 * m];
    let mut merges: Vec<Merge> = Vec::new();
    let mut start = 0;
    while start < edges.len() {
        let level = edges[start].2;
        let mut end = start;
        while end < edges.len() && edges[end].2 == level {
            end += 1;
        }
        // group the current roots joined at this level
        let roots: Vec<(usize, usize)> = edges[start..end]
            .iter()
            .map(|&(a, b, _)| (find(&mut parent, a), find(&mut parent, b)))
            .collect();
        let mut local: std::collections::BTreeMap<usize, usize> = Default::default();
        for &(a, b) in &roots {
            local.entry(a).or_insert(a);
            local.entry(b).or_insert(b);
        }
        fn local_find(map: &mut std::collections::BTreeMap<usize, usize>, mut x: usize) -> usize {
            while map[&x] != x {
                x = map[&x];
            }
            x
        }
        for &(a, b) in &roots {
            let (ra, rb) = (local_find(&mut local, a), local_find(&mut local, b));
            if ra != rb {
                let (lo, hi) = (ra.min(rb), ra.max(rb));
                local.insert(hi, lo);
            }
        }
        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        let keys: Vec<usize> = local.keys().copied().collect();
        for k in keys {
            let r = local_find(&mut local, k);
            groups.entry(r).or_default().push(k);
        }
        for children in groups.into_values() {
            let node = m + merges.len();
            let total = children.iter().map(|&c| size[c]).sum();
            for &c in &children {
                parent[c] = node;
            }
            size[node] = total;
            merges.push(Merge {
                children,
                distance: level,
                size: total,
            });
        }
        start = end;
    }
    merges
}

/// A cluster of the condensed tree.
#[derive(Clone, Debug)]
struct Condensed {
    parent: Option<usize>,
    birth: f64,
    stability: f64,
    children: Vec<usize>,
}

/// Condenses the merge tree. Returns the clusters and, for every point, the
/// cluster it last belonged to.
fn condense(m: usize, merges: &[Merge], min_cluster_size: usize) -> (Vec<Condensed>, Vec<usize>) {
    let size_of = |node: usize| if node < m { 1 } else { merges[node - m].size };
    let mut clusters = vec![Condensed {
        parent: None,
        birth: 0.0,
        stability: 0.0,
        children: Vec::new(),
    }];
    let mut owner = vec![0usize; m];
    // (tree node, cluster it belongs to)
    let mut stack = vec![(m + merges.len() - 1, 0usize)];
    let mut leaves = Vec::new();
    while let Some((node, cluster)) = stack.pop() {
        if node < m {
            owner[node] = cluster;
            continue;
        }
        let merge = &merges[node - m];
        let lam = lambda(merge.distance);
        let birth = clusters[cluster].birth;
        let (big, small): (Vec<usize>, Vec<usize>) =
            merge.children.iter().partition(|&&c| size_of(c) >= min_cluster_size);
        leaves.clear();
        for &c in &small {
            collect_points(m, merges, c, &mut leaves);
        }
        for &p in &leaves {
            owner[p] = cluster;
        }
        if big.len() == 1 {
            clusters[cluster].stability += (lam - birth) * leaves.len() as f64;
            stack.push((big[0], cluster));
            continue;
        }
        clusters[cluster].stability += (lam - birth) * merge.size as f64;
        if big.len() >= 2 {
            for child in big {
                let id = clusters.len();
                clusters.push(Condensed {
                    parent: Some(cluster),
                    birth: lam,
                    stability: 0.0,
                    children: Vec::new(),
                });
                clusters[cluster].children.push(id);
                stack.push((child, id));
            }
        }
    }
    (clusters, owner)
}

fn collect_points(m: usize, merges: &[Merge], node: usize, out: &mut Vec<usize>) {
    let mut stack = vec![node];
    while let Some(n) = stack.pop() {
        if n < m {
            out.push(n);
        } else {
            stack.extend(merges[n - m].children.iter().copied());
        }
    }
}

/// Excess-of-mass selection; the root (cluster 0) is never selected.
fn select(clusters: &[Condensed]) -> Vec<bool> {
    let n = clusters.len();
    let mut selected = vec![false; n];
    let mut subtree = vec![0.0; n];
    // children always have larger ids than their parent
    for c in (1..n).rev() {
        let children_total: f64 = clusters[c].children.iter().map(|&k| subtree[k]).sum();
        if clusters[c].children.is_empty() || clusters[c].stability >= children_total {
            selected[c] = true;
            subtree[c] = clusters[c].stability;
            let mut stack = clusters[c].children.clone();
            while let Some(k) = stack.pop() {
                selected[k] = false;
                stack.extend(clusters[k].children.iter().copied());
            }
        } else {
            subtree[c] = children_total;
        }
    }
    selected
}

/// Renumbers cluster ids by their smallest member so labels do not depend
/// on traversal order.
pub fn canonical(labels: &[Option<usize>]) -> Labels {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            l.map(|c| {
                let next = map.len();
                *map.entry(c).or_insert(next)
            })
        })
        .collect()
}

/// Clusters the rows of `points`.
pub fn hdbscan(points: &Matrix, min_cluster_size: usize, min_samples: usize) -> Labels {
    let m = points.nrows();
    if m < min_cluster_size.max(1) || m < 2 {
        return vec![None; m];
    }
    let core = core_distances(points, min_samples);
    let edges = prim(points, &core);
    if edges.iter().all(|e| e.2 == 0.0) {
        // identical points: one cluster
        return vec![Some(0); m];
    }
    let merges = single_linkage(m, edges);
    let (clusters, owner) = condense(m, &merges, min_cluster_size.max(2));
    let selected = select(&clusters);
    let mut label_of = vec![None; clusters.len()];
    for c in 0..clusters.len() {
        // nearest selected ancestor (or self)
        let mut cur = Some(c);
        while let Some(k) = cur {
            if selected[k] {
                label_of[c] = Some(k);
                break;
            }
            cur = clusters[k].parent;
        }
    }
    canonical(&owner.iter().map(|&c| label_of[c]).collect::<Vec<_>>())
}
