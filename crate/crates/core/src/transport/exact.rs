//! Transportation simplex: network simplex specialised to the bipartite
//! transportation graph.
//!
//! The basis is a spanning tree of the graph with row nodes `0..n` and column
//! nodes `n..n+m`, held as `n + m - 1` basic cells (possibly with zero flow).
//! Each pivot recomputes node potentials from the tree, picks an entering
//! cell with negative reduced cost, cancels flow around the unique tree cycle
//! and swaps the leaving cell out.
//!
//! Pricing uses a candidate list: a full Dantzig scan collects the most
//! negative cells, minor pivots drain the list (re-checking reduced costs)
//! before the next full scan. After a pivot budget the entering rule falls
//! back to Bland's smallest-index rule, which rules out cycling on degenerate
//! instances.

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Cell {
    row: usize,
    col: usize,
    flow: f64,
}

struct Workspace {
    n: usize,
    m: usize,
    cells: Vec<Cell>,
    /// Node adjacency over the basis tree: node -> (neighbour node, cell idx).
    adj: Vec<Vec<(usize, usize)>>,
    u: Vec<f64>,
    v: Vec<f64>,
    visited: Vec<bool>,
    stack: Vec<usize>,
    parent: Vec<(usize, usize)>,
    path: Vec<usize>,
    cursor: usize,
}

pub(super) fn solve(supply: &[f64], demand: &[f64], cost: &Array2<f64>) -> Result<Array2<f64>> {
    let n = supply.len();
    let m = demand.len();

    // Uniform equal-size instances have a permutation as an extreme-point
    // optimum (Birkhoff); the assignment reduction is much faster there.
    if n == m && n > 1 && is_uniform(supply) && is_uniform(demand) {
        let matching = solve_assignment(cost);
        let mut plan = Array2::zeros((n, m));
        let w = 1.0 / n as f64;
        for (row, col) in matching.into_iter().enumerate() {
            plan[[row, col]] = w;
        }
        return Ok(plan);
    }

    // Pivot on slightly perturbed marginals: strictly increasing offsets
    // break the exact ties that clumped geometries produce in bulk, avoiding
    // long runs of degenerate zero-flow pivots. The final flows are
    // recomputed from the optimal basis with the original marginals, so the
    // perturbation never reaches the reported plan.
    let min_pos = supply
        .iter()
        .chain(demand.iter())
        .filter(|&&w| w > 0.0)
        .fold(f64::INFINITY, |a, &b| a.min(b));
    let eps = 1e-9 * min_pos / (n + m + 1) as f64;
    let mut supply_p = supply.to_vec();
    let mut demand_p = demand.to_vec();
    let mut added = 0.0;
    for (i, s) in supply_p.iter_mut().enumerate() {
        let delta = eps * (i + 1) as f64;
        *s += delta;
        added += delta;
    }
    demand_p[m - 1] += added;

    let mut ws = Workspace {
        n,
        m,
        cells: northwest_corner(&supply_p, &demand_p),
        adj: vec![Vec::new(); n + m],
        u: vec![0.0; n],
        v: vec![0.0; m],
        visited: vec![false; n + m],
        stack: Vec::with_capacity(n + m),
        parent: vec![(usize::MAX, usize::MAX); n + m],
        path: Vec::with_capacity(n + m),
        cursor: 0,
    };
    debug_assert_eq!(ws.cells.len(), n + m - 1);
    for (idx, cell) in ws.cells.iter().enumerate() {
        ws.adj[cell.row].push((n + cell.col, idx));
        ws.adj[n + cell.col].push((cell.row, idx));
    }

    let max_cost = cost.iter().fold(0.0f64, |acc, &c| acc.max(c.abs()));
    let tol = 1e-11 * (1.0 + max_cost);
    let max_pivots = 20_000 + 400 * (n + m);
    let dantzig_budget = max_pivots / 2;
    let block = ((n * m) as f64).sqrt() as usize + 1;

    ws.compute_potentials(cost)?;
    let mut pivot = 0usize;
    loop {
        // Incremental dual updates accumulate rounding drift; refresh the
        // exact tree solution periodically.
        if pivot % 256 == 255 {
            ws.compute_potentials(cost)?;
        }

        let entering = if pivot < dantzig_budget {
            ws.find_entering_block(cost, tol, block)
        } else {
            first_negative_cell(cost, &ws.u, &ws.v, tol)
        };
        let (er, ec) = match entering {
            Some(cell) => cell,
            None => {
                if std::env::var("FEDEMD_PIVOT_DEBUG").is_ok() {
                    eprintln!("pivots: {pivot}");
                }
                return exact_flows_on_basis(&ws, supply, demand);
            }
        };

        let delta = cost[[er, ec]] - ws.u[er] - ws.v[ec];
        ws.pivot(er, ec)?;
        ws.shift_duals(er, ec, delta);
        pivot += 1;
        if pivot >= max_pivots {
            return Err(Error::Solver(format!(
                "transportation simplex did not terminate within {max_pivots} pivots"
            )));
        }
    }
}

impl Workspace {
    /// Solves `u[row] + v[col] = cost[row][col]` over the basis tree, `u[0] = 0`.
    fn compute_potentials(&mut self, cost: &Array2<f64>) -> Result<()> {
        let total = self.n + self.m;
        self.visited.iter_mut().for_each(|x| *x = false);
        self.stack.clear();
        self.visited[0] = true;
        self.u[0] = 0.0;
        self.stack.push(0);
        let mut seen = 1usize;
        while let Some(node) = self.stack.pop() {
            for &(next, ci) in &self.adj[node] {
                if !self.visited[next] {
                    self.visited[next] = true;
                    seen += 1;
                    let cell = self.cells[ci];
                    if next >= self.n {
                        self.v[next - self.n] = cost[[cell.row, cell.col]] - self.u[cell.row];
                    } else {
                        self.u[next] = cost[[cell.row, cell.col]] - self.v[cell.col];
                    }
                    self.stack.push(next);
                }
            }
        }
        if seen != total {
            return Err(Error::Solver("basis tree is not spanning".into()));
        }
        Ok(())
    }

    /// After swapping the entering edge `(er, ec)` in, restores the dual
    /// system by shifting the component on the non-root side of the new
    /// edge by the entering arc's old reduced cost `delta`.
    fn shift_duals(&mut self, er: usize, ec: usize, delta: f64) {
        if delta == 0.0 {
            return;
        }
        let col_node = self.n + ec;
        // Component of ec in the new tree without the entering edge.
        self.visited.iter_mut().for_each(|x| *x = false);
        self.stack.clear();
        self.visited[col_node] = true;
        self.visited[er] = true; // block the entering edge
        self.stack.push(col_node);
        let mut component = vec![col_node];
        let mut saw_root = col_node == 0;
        while let Some(node) = self.stack.pop() {
            for &(next, _) in &self.adj[node] {
                if !self.visited[next] {
                    self.visited[next] = true;
                    saw_root |= next == 0;
                    component.push(next);
                    self.stack.push(next);
                }
            }
        }
        if !saw_root {
            // shift ec's side: columns += delta, rows -= delta
            for &node in &component {
                if node >= self.n {
                    self.v[node - self.n] += delta;
                } else {
                    self.u[node] -= delta;
                }
            }
        } else {
            // root sits on ec's side; shift er's side the other way
            self.visited.iter_mut().for_each(|x| *x = false);
            self.stack.clear();
            self.visited[er] = true;
            self.visited[col_node] = true;
            self.stack.push(er);
            let mut other = vec![er];
            while let Some(node) = self.stack.pop() {
                for &(next, _) in &self.adj[node] {
                    if !self.visited[next] {
                        self.visited[next] = true;
                        other.push(next);
                        self.stack.push(next);
                    }
                }
            }
            for &node in &other {
                if node < self.n {
                    self.u[node] += delta;
                } else {
                    self.v[node - self.n] -= delta;
                }
            }
        }
    }

    /// Block pricing: starting from a rolling cursor, scans blocks of
    /// `block` arcs and returns the most negative arc of the first block
    /// that contains one. A full wrap with no hit means optimality.
    fn find_entering_block(
        &mut self,
        cost: &Array2<f64>,
        tol: f64,
        block: usize,
    ) -> Option<(usize, usize)> {
        let total = self.n * self.m;
        let flat = cost.as_slice().expect("contiguous cost matrix");
        let mut checked = 0usize;
        while checked < total {
            let mut best: Option<(usize, usize)> = None;
            let mut best_rc = -tol;
            let end = (self.cursor + block).min(self.cursor + (total - checked));
            let mut arc = self.cursor;
            while arc < end {
                let idx = if arc >= total { arc - total } else { arc };
                let i = idx / self.m;
                let j = idx - i * self.m;
                let rc = flat[idx] - self.u[i] - self.v[j];
                if rc < best_rc {
                    best_rc = rc;
                    best = Some((i, j));
                }
                arc += 1;
            }
            checked += end - self.cursor;
            self.cursor = if end >= total { end - total } else { end };
            if best.is_some() {
                return best;
            }
        }
        None
    }

    /// Unique tree path between two nodes as basis cell indices.
    fn tree_path(&mut self, from: usize, to: usize) -> Result<()> {
        self.visited.iter_mut().for_each(|x| *x = false);
        self.stack.clear();
        self.visited[from] = true;
        self.stack.push(from);
        let mut found = false;
        'outer: while let Some(node) = self.stack.pop() {
            for &(next, ci) in &self.adj[node] {
                if !self.visited[next] {
                    self.visited[next] = true;
                    self.parent[next] = (node, ci);
                    if next == to {
                        found = true;
                        break 'outer;
                    }
                    self.stack.push(next);
                }
            }
        }
        if !found {
            return Err(Error::Solver("no tree path between pivot nodes".into()));
        }
        self.path.clear();
        let mut node = to;
        while node != from {
            let (prev, ci) = self.parent[node];
            self.path.push(ci);
            node = prev;
        }
        self.path.reverse();
        Ok(())
    }

    fn pivot(&mut self, er: usize, ec: usize) -> Result<()> {
        self.tree_path(er, self.n + ec)?;

        // Walking the path from the entering row node, cells at even
        // positions lose flow when the entering cell gains it.
        let mut theta = f64::INFINITY;
        let mut leaving = usize::MAX;
        for (pos, &ci) in self.path.iter().enumerate() {
            if pos % 2 == 0 {
                let f = self.cells[ci].flow;
                let key = self.cells[ci].row * self.m + self.cells[ci].col;
                let better = f < theta
                    || (f == theta
                        && leaving != usize::MAX
                        && key < self.cells[leaving].row * self.m + self.cells[leaving].col);
                if better {
                    theta = f;
                    leaving = ci;
                }
            }
        }
        debug_assert!(leaving != usize::MAX);

        for (pos, &ci) in self.path.iter().enumerate() {
            if pos % 2 == 0 {
                self.cells[ci].flow = (self.cells[ci].flow - theta).max(0.0);
            } else {
                self.cells[ci].flow += theta;
            }
        }

        // Swap leaving for entering in the tree, patching adjacency.
        let old = self.cells[leaving];
        self.unlink(old.row, leaving);
        self.unlink(self.n + old.col, leaving);
        self.cells[leaving] = Cell {
            row: er,
            col: ec,
            flow: theta,
        };
        self.adj[er].push((self.n + ec, leaving));
        self.adj[self.n + ec].push((er, leaving));
        Ok(())
    }

    fn unlink(&mut self, node: usize, cell_idx: usize) {
        let list = &mut self.adj[node];
        if let Some(pos) = list.iter().position(|&(_, ci)| ci == cell_idx) {
            list.swap_remove(pos);
        }
    }
}

fn is_uniform(weights: &[f64]) -> bool {
    let w0 = weights[0];
    weights.iter().all(|&w| w == w0)
}

/// Minimum-cost perfect matching by shortest augmenting paths with dual
/// potentials (Hungarian algorithm, dense O(n^3) form). Returns the matched
/// column of each row.
fn solve_assignment(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    let flat = cost.as_slice().expect("contiguous cost matrix");
    // 1-indexed arrays with column 0 as the sentinel entry point.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let row = &flat[(i0 - 1) * n..i0 * n];
            let u_i0 = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = row[j - 1] - u_i0 - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=n {
        row_to_col[matched_row[j] - 1] = j - 1;
    }
    row_to_col
}

/// Re-derives the unique tree flow of the optimal basis under the original
/// (unperturbed) marginals via leaf elimination. Residual negatives are at
/// perturbation scale and clamp to zero.
fn exact_flows_on_basis(ws: &Workspace, supply: &[f64], demand: &[f64]) -> Result<Array2<f64>> {
    let n = ws.n;
    let m = ws.m;
    let total = n + m;
    let mut balance = vec![0.0f64; total];
    balance[..n].copy_from_slice(supply);
    balance[n..].copy_from_slice(demand);

    let mut degree: Vec<usize> = ws.adj.iter().map(|l| l.len()).collect();
    let mut resolved = vec![false; ws.cells.len()];
    let mut flows = vec![0.0f64; ws.cells.len()];
    let mut queue: Vec<usize> = (0..total).filter(|&v| degree[v] == 1).collect();

    let mut processed = 0usize;
    while let Some(leaf) = queue.pop() {
        let Some(&(other, ci)) = ws.adj[leaf].iter().find(|&&(_, ci)| !resolved[ci]) else {
            continue;
        };
        flows[ci] = balance[leaf];
        resolved[ci] = true;
        processed += 1;
        balance[other] -= balance[leaf];
        balance[leaf] = 0.0;
        degree[leaf] -= 1;
        degree[other] -= 1;
        if degree[other] == 1 {
            queue.push(other);
        }
    }
    if processed != ws.cells.len() {
        return Err(Error::Solver("basis tree leaf elimination stalled".into()));
    }

    let mut plan = Array2::zeros((n, m));
    for (cell, &flow) in ws.cells.iter().zip(&flows) {
        plan[[cell.row, cell.col]] += flow.max(0.0);
    }
    Ok(plan)
}

/// Northwest-corner starting basis: a degenerate-safe staircase with exactly
/// `n + m - 1` cells forming a spanning tree.
fn northwest_corner(supply: &[f64], demand: &[f64]) -> Vec<Cell> {
    let n = supply.len();
    let m = demand.len();
    let mut rem_a = supply.to_vec();
    let mut rem_b = demand.to_vec();
    let mut cells = Vec::with_capacity(n + m - 1);
    let (mut i, mut j) = (0usize, 0usize);
    for _ in 0..(n + m - 1) {
        let f = rem_a[i].min(rem_b[j]).max(0.0);
        cells.push(Cell {
            row: i,
            col: j,
            flow: f,
        });
        rem_a[i] -= f;
        rem_b[j] -= f;
        if i + 1 < n && (j + 1 >= m || rem_a[i] <= rem_b[j]) {
            i += 1;
        } else if j + 1 < m {
            j += 1;
        }
    }
    cells
}

fn first_negative_cell(
    cost: &Array2<f64>,
    u: &[f64],
    v: &[f64],
    tol: f64,
) -> Option<(usize, usize)> {
    for i in 0..u.len() {
        for j in 0..v.len() {
            if cost[[i, j]] - u[i] - v[j] < -tol {
                return Some((i, j));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn northwest_corner_counts() {
        let cells = northwest_corner(&[0.5, 0.5], &[0.5, 0.5]);
        assert_eq!(cells.len(), 3);
        let total: f64 = cells.iter().map(|c| c.flow).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn solves_cross_costs() {
        let cost = array![[1.0, 0.0], [0.0, 1.0]];
        let plan = solve(&[0.5, 0.5], &[0.5, 0.5], &cost).unwrap();
        let value = (&plan * &cost).sum();
        assert!(value.abs() < 1e-12);
    }

    #[test]
    fn solves_rectangular() {
        let cost = array![[2.0, 3.0]];
        let plan = solve(&[1.0], &[0.5, 0.5], &cost).unwrap();
        assert!((plan[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((plan[[0, 1]] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn degenerate_uniform_instance() {
        // Many exact ties; exercises zero-flow pivots.
        let cost = array![
            [0.0, 1.0, 2.0, 3.0],
            [1.0, 0.0, 1.0, 2.0],
            [2.0, 1.0, 0.0, 1.0],
            [3.0, 2.0, 1.0, 0.0]
        ];
        let w = [0.25; 4];
        let plan = solve(&w, &w, &cost).unwrap();
        let value = (&plan * &cost).sum();
        assert!(value.abs() < 1e-12);
    }

    #[test]
    fn larger_instance_satisfies_marginals() {
        let n = 60;
        let mut cost = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                cost[[i, j]] = ((i as f64 * 0.37).sin() - (j as f64 * 0.73).cos()).abs()
                    + ((i * 7 + j * 3) % 11) as f64 * 0.1;
            }
        }
        let w = vec![1.0 / n as f64; n];
        let plan = solve(&w, &w, &cost).unwrap();
        for i in 0..n {
            let row: f64 = plan.row(i).sum();
            assert!((row - w[i]).abs() < 1e-9);
            let col: f64 = plan.column(i).sum();
            assert!((col - w[i]).abs() < 1e-9);
        }
    }
}
