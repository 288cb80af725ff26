use nalgebra::DMatrix;

use super::{check_p, check_weights, ground_cost, Coupling, OtError, WeightedSamples};

/// Largest `n_x · n_y` accepted by the exact solver.
pub const MAX_LP_ENTRIES: usize = 10_000;

/// Masses below this are treated as exhausted.
const MASS_EPS: f64 = 1e-15;

/// Exact discrete optimal transport by successive shortest paths on the
/// bipartite residual network (Dijkstra with Johnson potentials).
pub fn exact_transport(cost: &DMatrix<f64>, mu: &[f64], nu: &[f64]) -> Result<(f64, Coupling), OtError> {
    let (nx, ny) = cost.shape();
    if mu.len() != nx || nu.len() != ny {
        return Err(OtError::DimensionMismatch(format!(
            "cost {nx}×{ny}, marginals {} and {}",
            mu.len(),
            nu.len()
        )));
    }
    if nx * ny > MAX_LP_ENTRIES {
        return Err(OtError::TooLarge { n_x: nx, n_y: ny });
    }
    check_weights(mu, "mu")?;
    check_weights(nu, "nu")?;
    let mut min_cost = f64::INFINITY;
    for j in 0..ny {
        for i in 0..nx {
            let c = cost[(i, j)];
            if !c.is_finite() {
                return Err(OtError::NonFiniteCost { row: i, col: j });
            }
            min_cost = min_cost.min(c);
        }
    }
    // shifting by a constant leaves the optimal plan unchanged and makes
    // every forward edge non-negative
    let c = cost.map(|v| v - min_cost);

    // node layout: 0 = source hub, 1..=nx sources, nx+1..=nx+ny sinks, last = sink hub
    let nodes = nx + ny + 2;
    let (hub_s, hub_t) = (0, nodes - 1);
    let src = |i: usize| 1 + i;
    let snk = |j: usize| 1 + nx + j;
    let mut supply = mu.to_vec();
    let mut demand = nu.to_vec();
    let mut flow = DMatrix::<f64>::zeros(nx, ny);
    let mut potential = vec![0.0; nodes];
    let mut dist = vec![f64::INFINITY; nodes];
    let mut parent = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];

    while supply.iter().any(|&s| s > MASS_EPS) {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        parent.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        dist[hub_s] = 0.0;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX || u == hub_t {
                break;
            }
            done[u] = true;
            let mut relax = |v: usize, w: f64, dist: &mut Vec<f64>| {
                if done[v] {
                    return;
                }
                let nd = dist[u] + w + potential[u] - potential[v];
                if nd < dist[v] {
                    dist[v] = nd;
                    parent[v] = u;
                }
            };
            if u == hub_s {
                for i in 0..nx {
                    if supply[i] > MASS_EPS {
                        relax(src(i), 0.0, &mut dist);
                    }
                }
            } else if u <= nx {
                let i = u - 1;
                for j in 0..ny {
                    relax(snk(j), c[(i, j)], &mut dist);
                }
            } else {
                let j = u - 1 - nx;
                for i in 0..nx {
                    if flow[(i, j)] > MASS_EPS {
                        relax(src(i), -c[(i, j)], &mut dist);
                    }
                }
                if demand[j] > MASS_EPS {
                    relax(hub_t, 0.0, &mut dist);
                }
            }
        }
        if !dist[hub_t].is_finite() {
            break;
        }
        let reach = dist[hub_t];
        for v in 0..nodes {
            potential[v] += dist[v].min(reach);
        }
        // walk the path back from the sink hub to find the bottleneck
        let mut path = vec![hub_t];
        let mut v = hub_t;
        while v != hub_s {
            v = parent[v];
            path.push(v);
        }
        path.reverse();
        let first = path[1] - 1;
        let last = path[path.len() - 2] - 1 - nx;
        let mut amount = supply[first].min(demand[last]);
        for w in path[1..path.len() - 1].windows(2) {
            if w[0] > nx {
                // backward edge sink → source cancels existing flow
                amount = amount.min(flow[(w[1] - 1, w[0] - 1 - nx)]);
            }
        }
        for w in path[1..path.len() - 1].windows(2) {
            if w[0] > nx {
                flow[(w[1] - 1, w[0] - 1 - nx)] -= amount;
            } else {
                flow[(w[0] - 1, w[1] - 1 - nx)] += amount;
            }
        }
        supply[first] -= amount;
        demand[last] -= amount;
    }
    flow.iter_mut().for_each(|f| {
        if *f < MASS_EPS {
            *f = 0.0;
        }
    });
    let coupling = Coupling {
        matrix: flow,
        source: mu.to_vec(),
        target: nu.to_vec(),
    };
    Ok((coupling.cost(cost), coupling))
}

/// Exact `W_p^p` with ground cost `‖x − y‖^p`, for small instances.
pub fn exact_wasserstein_lp(a: &WeightedSamples, b: &WeightedSamples, p: f64) -> Result<(f64, Coupling), OtError> {
    check_p(p)?;
    if a.dim() != b.dim() {
        return Err(OtError::DimensionMismatch(format!("d = {} vs {}", a.dim(), b.dim())));
    }
    if a.len() * b.len() > MAX_LP_ENTRIES {
        return Err(OtError::TooLarge {
            n_x: a.len(),
            n_y: b.len(),
        });
    }
    exact_transport(&ground_cost(a.values(), b.values(), p), a.weights(), b.weights())
}
