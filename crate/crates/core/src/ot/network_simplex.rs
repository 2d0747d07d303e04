//! Primal network simplex for the uncapacitated bipartite transportation
//! problem with integer supplies.
//!
//! Nodes `0..m` are sources, `m..m+n` sinks, `m+n` an artificial root. The
//! initial basis uses only artificial arcs; anti-cycling follows the
//! strongly feasible tree rule (last blocking arc on the cycle oriented from
//! its apex).

/// Optimal flow on the real arcs plus node potentials.
#[derive(Debug, Clone)]
pub struct FlowSolution {
    /// `(i, j, flow)` for arcs with positive flow.
    pub flows: Vec<(usize, usize, i64)>,
    /// Potentials `π`, reduced cost of `(i, j)` is `c_ij + π_i − π_{m+j}`.
    pub potentials: Vec<f64>,
    pub pivots: usize,
}

struct Arc {
    from: usize,
    to: usize,
    cost: f64,
}

/// Solves `min Σ c_ij f_ij` subject to row sums `supply` and column sums
/// `demand` (equal totals). `cost` is row-major `m × n`.
pub fn solve(cost: &[f64], supply: &[i64], demand: &[i64]) -> FlowSolution {
    let m = supply.len();
    let n = demand.len();
    assert_eq!(cost.len(), m * n);
    assert_eq!(supply.iter().sum::<i64>(), demand.iter().sum::<i64>());
    let root = m + n;
    let nodes = m + n + 1;
    let max_cost = cost.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let art = (max_cost + 1.0) * (m + n) as f64;
    let eps = 1e-13 * (1.0 + max_cost);

    let mut arcs: Vec<Arc> = Vec::with_capacity(m * n + m + n);
    for i in 0..m {
        for j in 0..n {
            arcs.push(Arc {
                from: i,
                to: m + j,
                cost: cost[i * n + j],
            });
        }
    }
    let real = arcs.len();
    let mut flow = vec![0i64; real + m + n];
    let mut in_tree = vec![false; real + m + n];
    let mut tree: Vec<usize> = Vec::with_capacity(nodes - 1);
    for i in 0..m {
        arcs.push(Arc {
            from: i,
            to: root,
            cost: art,
        });
        flow[real + i] = supply[i];
        in_tree[real + i] = true;
        tree.push(real + i);
    }
    for j in 0..n {
        arcs.push(Arc {
            from: root,
            to: m + j,
            cost: art,
        });
        flow[real + m + j] = demand[j];
        in_tree[real + m + j] = true;
        tree.push(real + m + j);
    }
    let total_arcs = arcs.len();

    let mut parent = vec![usize::MAX; nodes];
    let mut pred = vec![usize::MAX; nodes];
    let mut depth = vec![0usize; nodes];
    let mut pi = vec![0.0f64; nodes];
    let mut adj_start = vec![0usize; nodes + 1];
    let mut adj = vec![0usize; 2 * (nodes - 1)];
    let mut queue = Vec::with_capacity(nodes);

    let rebuild = |tree: &[usize],
                   parent: &mut [usize],
                   pred: &mut [usize],
                   depth: &mut [usize],
                   pi: &mut [f64],
                   adj_start: &mut [usize],
                   adj: &mut [usize],
                   queue: &mut Vec<usize>| {
        adj_start.iter_mut().for_each(|v| *v = 0);
        for &a in tree {
            adj_start[arcs[a].from + 1] += 1;
            adj_start[arcs[a].to + 1] += 1;
        }
        for k in 0..nodes {
            adj_start[k + 1] += adj_start[k];
        }
        let mut fill = adj_start[..nodes].to_vec();
        for &a in tree {
            let (u, v) = (arcs[a].from, arcs[a].to);
            adj[fill[u]] = a;
            fill[u] += 1;
            adj[fill[v]] = a;
            fill[v] += 1;
        }
        parent.iter_mut().for_each(|p| *p = usize::MAX);
        queue.clear();
        queue.push(root);
        parent[root] = root;
        pred[root] = usize::MAX;
        depth[root] = 0;
        pi[root] = 0.0;
        let mut head = 0;
        while head < queue.len() {
            let x = queue[head];
            head += 1;
            for &a in &adj[adj_start[x]..adj_start[x + 1]] {
                let arc = &arcs[a];
                let y = if arc.from == x { arc.to } else { arc.from };
                if parent[y] != usize::MAX {
                    continue;
                }
                parent[y] = x;
                pred[y] = a;
                depth[y] = depth[x] + 1;
                // zero reduced cost on tree arcs
                pi[y] = if arc.from == x {
                    pi[x] + arc.cost
                } else {
                    pi[x] - arc.cost
                };
                queue.push(y);
            }
        }
    };

    rebuild(
        &tree,
        &mut parent,
        &mut pred,
        &mut depth,
        &mut pi,
        &mut adj_start,
        &mut adj,
        &mut queue,
    );

    let block = ((total_arcs as f64).sqrt().ceil() as usize).max(16);
    let mut next = 0usize;
    let mut pivots = 0usize;
    let mut up_u: Vec<usize> = Vec::new();
    let mut up_v: Vec<usize> = Vec::new();

    loop {
        // block search pricing
        let mut entering = usize::MAX;
        let mut best = -eps;
        let mut scanned = 0;
        let mut k = next;
        while scanned < total_arcs {
            let end = (scanned + block).min(total_arcs);
            while scanned < end {
                let a = k;
                if !in_tree[a] {
                    let arc = &arcs[a];
                    let rc = arc.cost + pi[arc.from] - pi[arc.to];
                    if rc < best || (rc == best && entering != usize::MAX && a < entering) {
                        best = rc;
                        entering = a;
                    }
                }
                k += 1;
                if k == total_arcs {
                    k = 0;
                }
                scanned += 1;
            }
            if entering != usize::MAX {
                break;
            }
        }
        if entering == usize::MAX {
            break;
        }
        next = k;

        // cycle: entering arc u → v, then tree path v → apex → u
        let (u, v) = (arcs[entering].from, arcs[entering].to);
        up_u.clear();
        up_v.clear();
        let (mut a, mut b) = (u, v);
        while a != b {
            if depth[a] >= depth[b] {
                up_u.push(a);
                a = parent[a];
            } else {
                up_v.push(b);
                b = parent[b];
            }
        }
        // blocking arcs: on the u side, arcs pointing up (child → parent) lose
        // flow; on the v side, arcs pointing down lose flow
        let mut delta = i64::MAX;
        let mut leaving_node = usize::MAX;
        for &x in &up_u {
            let arc = pred[x];
            if arcs[arc].from == x && flow[arc] < delta {
                delta = flow[arc];
                leaving_node = x;
            }
        }
        for &x in &up_v {
            let arc = pred[x];
            if arcs[arc].to == x && flow[arc] <= delta {
                delta = flow[arc];
                leaving_node = x;
            }
        }
        assert!(
            leaving_node != usize::MAX,
            "transportation problem is unbounded"
        );
        if delta > 0 {
            flow[entering] += delta;
            for &x in &up_u {
                let arc = pred[x];
                if arcs[arc].from == x {
                    flow[arc] -= delta;
                } else {
                    flow[arc] += delta;
                }
            }
            for &x in &up_v {
                let arc = pred[x];
                if arcs[arc].to == x {
                    flow[arc] -= delta;
                } else {
                    flow[arc] += delta;
                }
            }
        }
        let leaving = pred[leaving_node];
        in_tree[leaving] = false;
        in_tree[entering] = true;
        let pos = tree
            .iter()
            .position(|&t| t == leaving)
            .expect("leaving arc in tree");
        tree[pos] = entering;
        rebuild(
            &tree,
            &mut parent,
            &mut pred,
            &mut depth,
            &mut pi,
            &mut adj_start,
            &mut adj,
            &mut queue,
        );
        pivots += 1;
    }

    debug_assert!(flow[real..].iter().all(|f| *f == 0));
    let mut flows = Vec::new();
    for i in 0..m {
        for j in 0..n {
            let f = flow[i * n + j];
            if f > 0 {
                flows.push((i, j, f));
            }
        }
    }
    FlowSolution {
        flows,
        potentials: pi[..m + n].to_vec(),
        pivots,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_2x2(cost: &[f64], s: &[i64], d: &[i64]) -> f64 {
        // one free parameter f00
        let lo = 0.max(s[0] - d[1]);
        let hi = s[0].min(d[0]);
        (lo..=hi)
            .map(|f00| {
                let f01 = s[0] - f00;
                let f10 = d[0] - f00;
                let f11 = s[1] - f10;
                cost[0] * f00 as f64
                    + cost[1] * f01 as f64
                    + cost[2] * f10 as f64
                    + cost[3] * f11 as f64
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn small_instances_match_enumeration() {
        let cases = [
            (vec![1.0, 2.0, 3.0, 1.0], vec![3, 5], vec![4, 4]),
            (vec![0.0, 5.0, 5.0, 0.0], vec![7, 1], vec![2, 6]),
            (vec![2.0, 2.0, 2.0, 2.0], vec![1, 1], vec![1, 1]),
        ];
        for (c, s, d) in cases {
            let sol = solve(&c, &s, &d);
            let got: f64 = sol
                .flows
                .iter()
                .map(|(i, j, f)| c[i * 2 + j] * *f as f64)
                .sum();
            assert!((got - brute_force_2x2(&c, &s, &d)).abs() < 1e-12);
        }
    }

    #[test]
    fn potentials_certify_optimality() {
        let (m, n) = (5, 7);
        let cost: Vec<f64> = (0..m * n).map(|k| ((k * 37 % 11) as f64).sqrt()).collect();
        let supply = vec![7, 7, 7, 7, 7];
        let demand = vec![5, 5, 5, 5, 5, 5, 5];
        let sol = solve(&cost, &supply, &demand);
        let pi = &sol.potentials;
        for i in 0..m {
            for j in 0..n {
                assert!(cost[i * n + j] + pi[i] - pi[m + j] >= -1e-12);
            }
        }
        for (i, j, _) in &sol.flows {
            assert!((cost[i * n + j] + pi[*i] - pi[m + j]).abs() < 1e-12);
        }
        let rows: i64 = sol.flows.iter().map(|f| f.2).sum();
        assert_eq!(rows, 35);
    }
}
