//! Brute-force coloured induced-subgraph matching for small prototypes.

use std::collections::HashSet;

use megan_core::graph::Graph;
use megan_core::synthetic::Motif;

/// Largest prototype the exhaustive search is asked to handle.
pub const MAX_NODES: usize = 8;

fn pairs(g: &Graph) -> HashSet<(usize, usize)> {
    g.edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect()
}

fn same_features(a: &Graph, i: usize, b: &Graph, j: usize) -> bool {
    a.node_features
        .row(i)
        .iter()
        .zip(b.node_features.row(j).iter())
        .all(|(x, y)| (x - y).abs() < 1e-9)
}

/// Whether some injective map of `pattern` into `host` preserves node
/// features and makes the image's induced edges exactly the pattern edges.
pub fn contains_induced(host: &Graph, pattern: &Graph) -> bool {
    let (ph, pp) = (pairs(host), pairs(pattern));
    let k = pattern.node_count;
    let mut map = vec![usize::MAX; k];
    let mut used = vec![false; host.node_count];

    fn extend(
        depth: usize,
        map: &mut Vec<usize>,
        used: &mut Vec<bool>,
        host: &Graph,
        pattern: &Graph,
        ph: &HashSet<(usize, usize)>,
        pp: &HashSet<(usize, usize)>,
    ) -> bool {
        if depth == map.len() {
            return true;
        }
        for v in 0..host.node_count {
            if used[v] || !same_features(pattern, depth, host, v) {
                continue;
            }
            let consistent = (0..depth).all(|u| {
                let want = pp.contains(&(u.min(depth), u.max(depth)));
                let (a, b) = (map[u], v);
                want == ph.contains(&(a.min(b), a.max(b)))
            });
            if !consistent {
                continue;
            }
            map[depth] = v;
            used[v] = true;
            if extend(depth + 1, map, used, host, pattern, ph, pp) {
                return true;
            }
            used[v] = false;
        }
        false
    }

    k <= host.node_count && extend(0, &mut map, &mut used, host, pattern, &ph, &pp)
}

/// The prototype is the motif, colours included, plus at most `slack` nodes.
pub fn recovers(prototype: &Graph, motif: &Motif, slack: usize) -> bool {
    let limit = motif.node_count() + slack;
    prototype.node_count <= limit.min(MAX_NODES) && contains_induced(prototype, &motif.structure)
}
