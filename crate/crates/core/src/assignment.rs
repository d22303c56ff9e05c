//! Dense linear assignment (Hungarian method with potentials, O(n³)).

/// Minimum-cost perfect matching of a square row-major cost matrix.
///
/// Returns `(assignment, total)` where `assignment[row] = col`. Costs must be
/// finite.
pub fn solve(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n, "cost matrix must be n×n");
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // 1-based potentials; p[j] is the row matched to column j (0 = free).
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    (assignment, total)
}

/// Optimal assignment with ties broken toward the lexicographically smallest
/// column sequence. Two totals are tied when they differ by at most
/// `rel_tol · (1 + |optimum|)`.
pub fn solve_lexicographic(cost: &[f64], n: usize, rel_tol: f64) -> (Vec<usize>, f64) {
    let (mut best, opt) = solve(cost, n);
    if n <= 1 {
        return (best, opt);
    }
    let slack = rel_tol * (1.0 + opt.abs());
    let scale = cost.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let forbid = (scale + 1.0) * (n as f64) * 4.0 + 1.0;

    let mut work = cost.to_vec();
    for i in 0..n {
        let mut fixed = best[i];
        for c in 0..best[i] {
            // column already pinned to an earlier row
            if (0..i).any(|r| best[r] == c) {
                continue;
            }
            let mut trial = work.clone();
            pin(&mut trial, n, i, c, forbid);
            let (cand, _) = solve(&trial, n);
            let true_total: f64 = cand.iter().enumerate().map(|(r, &j)| cost[r * n + j]).sum();
            let feasible = cand.iter().enumerate().all(|(r, &j)| trial[r * n + j] < forbid);
            if feasible && true_total <= opt + slack {
                best = cand;
                fixed = c;
                break;
            }
        }
        pin(&mut work, n, i, fixed, forbid);
    }
    let total = best.iter().enumerate().map(|(r, &j)| cost[r * n + j]).sum();
    (best, total)
}

fn pin(cost: &mut [f64], n: usize, row: usize, col: usize, forbid: f64) {
    for j in 0..n {
        if j != col {
            cost[row * n + j] = forbid;
        }
    }
    for r in 0..n {
        if r != row {
            cost[r * n + col] = forbid;
        }
    }
}
