//! Weight-preserving support reduction by recursive weighted-median splits.

use crate::error::Result;
use crate::measures::DiscreteMeasure;

/// Reduced measure and the largest distance from an original support point
/// to the point it was merged into.
#[derive(Debug, Clone)]
pub struct Coarsened {
    pub measure: DiscreteMeasure,
    pub radius: f64,
}

/// Merges the positive-weight support of `mu` into at most `max_points`
/// cells, each replaced by its barycenter with the cell's total weight.
pub fn coarsen(mu: &DiscreteMeasure, max_points: usize) -> Result<Coarsened> {
    let mu = mu.trimmed();
    if mu.len() <= max_points {
        return Ok(Coarsened {
            measure: mu,
            radius: 0.0,
        });
    }
    let d = mu.dim();
    let mut idx: Vec<usize> = (0..mu.len()).collect();
    let mut leaves: Vec<Vec<usize>> = Vec::new();
    split(&mu, mu.weights(), &mut idx, max_points.max(1), &mut leaves);

    let mut points = Vec::with_capacity(leaves.len() * d);
    let mut weights = Vec::with_capacity(leaves.len());
    let mut radius: f64 = 0.0;
    for leaf in &leaves {
        let w: f64 = leaf.iter().map(|&i| mu.weights()[i]).sum();
        let mut c = vec![0.0; d];
        for &i in leaf {
            for a in 0..d {
                c[a] += mu.weights()[i] * mu.point(i)[a];
            }
        }
        c.iter_mut().for_each(|v| *v /= w);
        for &i in leaf {
            let r = (0..d)
                .map(|a| (mu.point(i)[a] - c[a]).powi(2))
                .sum::<f64>()
                .sqrt();
            radius = radius.max(r);
        }
        points.extend_from_slice(&c);
        weights.push(w);
    }
    let measure = merge_duplicates(d, points, weights)?;
    Ok(Coarsened { measure, radius })
}

fn split(
    mu: &DiscreteMeasure,
    share: &[f64],
    idx: &mut [usize],
    leaves: usize,
    out: &mut Vec<Vec<usize>>,
) {
    if leaves <= 1 || idx.len() <= 1 {
        out.push(idx.to_vec());
        return;
    }
    if idx.len() <= leaves {
        out.extend(idx.iter().map(|&i| vec![i]));
        return;
    }
    let d = mu.dim();
    let axis = (0..d)
        .max_by(|&a, &b| {
            let ext = |ax: usize| {
                let (lo, hi) =
                    idx.iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                            let v = mu.point(i)[ax];
                            (lo.min(v), hi.max(v))
                        });
                hi - lo
            };
            ext(a).total_cmp(&ext(b))
        })
        .unwrap_or(0);
    idx.sort_by(|&a, &b| {
        mu.point(a)[axis]
            .total_cmp(&mu.point(b)[axis])
            .then(a.cmp(&b))
    });
    let left_leaves = leaves / 2;
    let right_leaves = leaves - left_leaves;
    let total: f64 = idx.iter().map(|&i| share[i]).sum();
    let target = total * left_leaves as f64 / leaves as f64;
    let mut acc = 0.0;
    let mut cut = 0;
    while cut < idx.len() && acc + share[idx[cut]] <= target {
        acc += share[idx[cut]];
        cut += 1;
    }
    let cut = cut.clamp(1, idx.len() - 1);
    let (l, r) = idx.split_at_mut(cut);
    split(mu, share, l, left_leaves, out);
    split(mu, share, r, right_leaves, out);
}

fn merge_duplicates(d: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<DiscreteMeasure> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    let pt = |i: usize| &points[i * d..(i + 1) * d];
    order.sort_by(|&a, &b| {
        pt(a)
            .partial_cmp(pt(b))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut p = Vec::with_capacity(points.len());
    let mut w: Vec<f64> = Vec::with_capacity(weights.len());
    for &i in &order {
        if !w.is_empty() && &p[p.len() - d..] == pt(i) {
            *w.last_mut().unwrap() += weights[i];
        } else {
            p.extend_from_slice(pt(i));
            w.push(weights[i]);
        }
    }
    DiscreteMeasure::normalized(d, p, w)
}
