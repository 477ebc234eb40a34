//! Ground-truth comparison: match components to maze cells, then score the
//! learned transition columns by total-variation distance.

use nalgebra::DMatrix;

use crate::env::{true_transition_matrices, MazeSpec, NUM_ACTIONS};
use crate::transition::TransitionTensor;
use crate::vgm::MixtureState;

/// Minimum-cost assignment of rows to columns (Hungarian algorithm with
/// potentials, O(n²m)). Returns the column for each row, or `None` for
/// rows left over when there are more rows than columns.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<Option<usize>> {
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let t = hungarian(&cost.transpose());
        let mut out = vec![None; rows];
        for (c, r) in t.iter().enumerate() {
            if let Some(r) = r {
                out[*r] = Some(c);
            }
        }
        return out;
    }
    let (n, m) = (rows, cols);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: row matched to column j (1-based, 0 = none)
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
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
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

/// For each floor cell, the component whose posterior mean is matched to it.
/// Cost is squared distance between the mean and the cell center.
pub fn match_components_to_cells(state: &MixtureState, spec: &MazeSpec, active: &[bool]) -> Vec<Option<usize>> {
    let cells = spec.floor_cells();
    let comps: Vec<usize> = (0..state.num_components()).filter(|&k| active.get(k).copied().unwrap_or(true)).collect();
    let mut cost = DMatrix::zeros(cells.len(), comps.len());
    for (i, &cell) in cells.iter().enumerate() {
        let center = MazeSpec::cell_center(cell);
        for (j, &k) in comps.iter().enumerate() {
            cost[(i, j)] = (&state.posterior.components[k].m - &center).norm_squared();
        }
    }
    hungarian(&cost).into_iter().map(|j| j.map(|j| comps[j])).collect()
}

/// TV distance for every (cell, action) column, indexed `[cell][action]`.
///
/// The learned column for cell c is P(· | component(c), a) re-expressed over
/// cells. Probability on components with no matched cell counts fully toward
/// the distance. Unmatched cells score 1.
pub fn transition_tv(tensor: &TransitionTensor, spec: &MazeSpec, cell_to_comp: &[Option<usize>]) -> Vec<[f64; NUM_ACTIONS]> {
    let truth = true_transition_matrices(spec);
    let n = cell_to_comp.len();
    let learned = tensor.expected_transitions();
    let mut out = vec![[1.0; NUM_ACTIONS]; n];
    for (from_cell, comp) in cell_to_comp.iter().enumerate() {
        let Some(kf) = *comp else { continue };
        for a in 0..NUM_ACTIONS.min(learned.len()) {
            let col = learned[a].column(kf);
            let mut matched_mass = 0.0;
            let mut l1 = 0.0;
            for (to_cell, c2) in cell_to_comp.iter().enumerate() {
                let p = c2.map_or(0.0, |k| col[k]);
                matched_mass += p;
                l1 += (p - truth[a][(to_cell, from_cell)]).abs();
            }
            let unmatched = (1.0 - matched_mass).max(0.0);
            out[from_cell][a] = 0.5 * (l1 + unmatched);
        }
    }
    out
}

/// Mean TV over all columns after matching active components to cells;
/// 1 when the agent has no components.
pub fn agent_tv(agent: &super::Agent, spec: &MazeSpec) -> f64 {
    if agent.num_components() == 0 {
        return 1.0;
    }
    let matching = match_components_to_cells(&agent.state, spec, &agent.active_components());
    mean_tv(&transition_tv(&agent.tensor, spec, &matching))
}

/// Mean TV distance over all columns.
pub fn mean_tv(tv: &[[f64; NUM_ACTIONS]]) -> f64 {
    let total: f64 = tv.iter().flat_map(|r| r.iter()).sum();
    let count = tv.len() * NUM_ACTIONS;
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}
