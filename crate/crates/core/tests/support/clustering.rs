//! Planted blobs and an exhaustive density-level oracle for HDBSCAN*.

use megan_core::engine::Matrix;
use megan_core::hdbscan::{canonical, Labels};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const MAX_LAMBDA: f64 = 1e12;

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn lambda(d: f64) -> f64 {
    if d > 1.0 / MAX_LAMBDA {
        1.0 / d
    } else {
        MAX_LAMBDA
    }
}

/// Independent reference: walks every distinct mutual-reachability level
/// from the top, recomputing connected components of each live cluster
/// from scratch, then applies the same excess-of-mass rule.
pub fn oracle(points: &Matrix, min_cluster_size: usize, min_samples: usize) -> Labels {
    let m = points.nrows();
    let rows: Vec<Vec<f64>> = points.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut core = vec![0.0; m];
    for i in 0..m {
        let mut d: Vec<f64> = (0..m).map(|j| distance(&rows[i], &rows[j])).collect();
        d.sort_by(f64::total_cmp);
        core[i] = d[min_samples - 1];
    }
    let mr = |a: usize, b: usize| distance(&rows[a], &rows[b]).max(core[a]).max(core[b]);
    let mut levels: Vec<f64> = (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).map(|(a, b)| mr(a, b)).collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();

    let components = |members: &[usize], eps: f64| -> Vec<Vec<usize>> {
        let mut seen = vec![false; members.len()];
        let mut out = Vec::new();
        for s in 0..members.len() {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let mut comp = vec![members[s]];
            let mut frontier = vec![s];
            while let Some(x) = frontier.pop() {
                for y in 0..members.len() {
                    if !seen[y] && mr(members[x], members[y]) <= eps {
                        seen[y] = true;
                        comp.push(members[y]);
                        frontier.push(y);
                    }
                }
            }
            out.push(comp);
        }
        out
    };

    struct C {
        members: Vec<usize>,
        birth: f64,
        stability: f64,
        children: Vec<usize>,
        alive: bool,
    }
    let mut cs = vec![C {
        members: (0..m).collect(),
        birth: 0.0,
        stability: 0.0,
        children: vec![],
        alive: true,
    }];
    let mut owner = vec![0usize; m];
    for w in 0..levels.len() {
        let lam = lambda(levels[w]);
        let below = levels.get(w + 1).copied().unwrap_or(-1.0);
        for c in 0..cs.len() {
            if !cs[c].alive {
                continue;
            }
            let comps = components(&cs[c].members, below);
            let big: Vec<&Vec<usize>> = comps.iter().filter(|k| k.len() >= min_cluster_size).collect();
            let lost: usize = cs[c].members.len() - if big.len() == 1 { big[0].len() } else { 0 };
            if big.len() >= 2 {
                cs[c].stability += (lam - cs[c].birth) * cs[c].members.len() as f64;
                cs[c].alive = false;
                for k in comps.iter().filter(|k| k.len() < min_cluster_size).flatten() {
                    owner[*k] = c;
                }
                let kids: Vec<Vec<usize>> = big.into_iter().cloned().collect();
                for k in kids {
                    let id = cs.len();
                    for &p in &k {
                        owner[p] = id;
                    }
                    cs.push(C {
                        members: k,
                        birth: lam,
                        stability: 0.0,
                        children: vec![],
                        alive: true,
                    });
                    cs[c].children.push(id);
                }
            } else if big.len() == 1 {
                cs[c].stability += (lam - cs[c].birth) * lost as f64;
                let keep = big[0].clone();
                for k in comps.iter().filter(|k| k.len() < min_cluster_size).flatten() {
                    owner[*k] = c;
                }
                cs[c].members = keep;
            } else {
                cs[c].stability += (lam - cs[c].birth) * lost as f64;
                for &p in &cs[c].members {
                    owner[p] = c;
                }
                cs[c].alive = false;
            }
        }
    }

    // excess of mass, children before parents, root excluded
    let n = cs.len();
    let mut order: Vec<usize> = (1..n).collect();
    order.sort_by_key(|&c| std::cmp::Reverse(c));
    let mut chosen = vec![false; n];
    let mut value = vec![0.0; n];
    for c in order {
        let kids: f64 = cs[c].children.iter().map(|&k| value[k]).sum();
        if cs[c].children.is_empty() || cs[c].stability >= kids {
            value[c] = cs[c].stability;
            chosen[c] = true;
            let mut stack = cs[c].children.clone();
            while let Some(k) = stack.pop() {
                chosen[k] = false;
                stack.extend(cs[k].children.iter().copied());
            }
        } else {
            value[c] = kids;
        }
    }
    let mut parent = vec![None; n];
    for c in 0..n {
        for &k in &cs[c].children {
            parent[k] = Some(c);
        }
    }
    let resolve = |mut c: usize| loop {
        if chosen[c] {
            return Some(c);
        }
        match parent[c] {
            Some(p) => c = p,
            None => return None,
        }
    };
    canonical(&owner.iter().map(|&c| resolve(c)).collect::<Vec<_>>())
}

/// `centers` Gaussian blobs of `per` points each, projected onto the unit sphere.
pub fn blobs(centers: usize, per: usize, dim: usize, spread: f64, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spread).unwrap();
    let mut rows = Vec::new();
    for _ in 0..centers {
        let c: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0f64..1.0)).collect();
        for _ in 0..per {
            rows.extend(c.iter().map(|x| x + noise.sample(&mut rng)));
        }
    }
    let mut m = Array2::from_shape_vec((centers * per, dim), rows).unwrap();
    for mut r in m.rows_mut() {
        let n: f64 = r.dot(&r).sqrt();
        r /= n;
    }
    m
}
