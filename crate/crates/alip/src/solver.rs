//! Optimization engines.
//!
//! Two exact engines for the per-timestep integer program (branch-and-bound
//! over one-hot appliance groups and an exhaustive enumerator that doubles
//! as the ground-truth oracle), plus a bounded-variable simplex for the
//! transient refinement LP and its closed-form greedy counterpart.

use thiserror::Error;

use crate::formulation::{evaluate, Enhancements, MilpInstance, StateAssignment};
use crate::model::{HouseholdModel, LocalState, OFF};

/// Slack for residual-cost comparisons. Feasibility of indicators is exact
/// integer logic and uses no slack.
pub const COST_EPS: f64 = 1e-9;

/// Default cap on exhaustive-search space size.
pub const DEFAULT_SEARCH_CAP: u128 = 10_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("no feasible assignment (contradictory always-on and combination rows)")]
    Infeasible,
    #[error("search space of {space} assignments exceeds cap {cap}")]
    SearchSpaceTooLarge { space: u128, cap: u128 },
    #[error("refinement problem has no free transient states")]
    EmptyProblem,
    #[error("refinement bounds inverted at position {index}")]
    InvertedBounds { index: usize },
    #[error("simplex failed to converge")]
    SimplexStalled,
}

/// The transient-refinement box problem after the steady part of the
/// measurement has been subtracted out: choose draws within
/// [lower, upper] whose sum tracks `z_residual` as closely as possible.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementProblem {
    /// Reading minus the fixed steady draws.
    pub z_residual: f64,
    /// Transient minima of the free states.
    pub lower: Vec<f64>,
    /// Transient maxima of the free states.
    pub upper: Vec<f64>,
    /// Global state indices of the free (active transient) states.
    pub p2: Vec<usize>,
}

impl RefinementProblem {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.lower.is_empty() {
            return Err(SolverError::EmptyProblem);
        }
        for (i, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo > hi {
                return Err(SolverError::InvertedBounds { index: i });
            }
        }
        Ok(())
    }

    /// Optimal objective in closed form: the sum of draws can reach any
    /// value in [sum(lower), sum(upper)], so the residual is the distance
    /// from `z_residual` to that interval.
    pub fn optimal_objective(&self) -> f64 {
        let lo: f64 = self.lower.iter().sum();
        let hi: f64 = self.upper.iter().sum();
        (lo - self.z_residual).max(self.z_residual - hi).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementSolution {
    /// Refined draws for the free states, same order as `p2`.
    pub values: Vec<f64>,
    /// Objective reached by the simplex solve.
    pub objective: f64,
}

/// Solves the per-timestep program by branch-and-bound. Branches per
/// appliance over its l+1 one-hot options; prunes with the interval bound on
/// the attainable total draw. Returns the minimum-residual assignment; ties
/// go to the lexicographically smallest per-appliance state choice vector
/// (OFF before state 1 before state 2, appliances in model order).
pub fn solve_bb(
    instance: &MilpInstance,
    model: &HouseholdModel,
) -> Result<StateAssignment, SolverError> {
    let domains = full_domains(model, instance.enhancements);
    solve_bb_restricted(model, instance.z, instance.enhancements, &domains)
}

/// Per-appliance candidate state sets under the given flags: every state
/// plus OFF, except that always-on appliances lose the OFF option when the
/// augmentation constraints are active.
pub fn full_domains(model: &HouseholdModel, enhancements: Enhancements) -> Vec<Vec<LocalState>> {
    model
        .appliances
        .iter()
        .map(|a| {
            let first = if enhancements.constraints && a.always_on {
                1
            } else {
                0
            };
            (first..=a.num_states()).collect()
        })
        .collect()
}

/// Branch-and-bound over explicit per-appliance domains. The pipeline uses
/// this for STD-restricted re-solves.
pub fn solve_bb_restricted(
    model: &HouseholdModel,
    z: f64,
    enhancements: Enhancements,
    domains: &[Vec<LocalState>],
) -> Result<StateAssignment, SolverError> {
    let n = model.num_appliances();
    debug_assert_eq!(domains.len(), n);
    if domains.iter().any(|d| d.is_empty()) {
        return Err(SolverError::Infeasible);
    }

    // Branch on large-rating appliances first.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let max_a = domain_max_draw(model, a, &domains[a]);
        let max_b = domain_max_draw(model, b, &domains[b]);
        max_b.partial_cmp(&max_a).unwrap().then(a.cmp(&b))
    });

    // Suffix sums of attainable draw over the not-yet-branched appliances.
    let mut min_suffix = vec![0.0; n + 1];
    let mut max_suffix = vec![0.0; n + 1];
    for d in (0..n).rev() {
        let j = order[d];
        min_suffix[d] = min_suffix[d + 1] + domain_min_draw(model, j, &domains[j]);
        max_suffix[d] = max_suffix[d + 1] + domain_max_draw(model, j, &domains[j]);
    }

    // Group rows active in the search, with per-row membership per state.
    let groups: Vec<&Vec<usize>> = if enhancements.constraints {
        model
            .combo_groups
            .iter()
            .chain(&model.alias_groups)
            .collect()
    } else {
        Vec::new()
    };
    let mut rows_of_state: Vec<Vec<usize>> = vec![Vec::new(); model.num_states()];
    for (row, group) in groups.iter().enumerate() {
        for &i in group.iter() {
            rows_of_state[i].push(row);
        }
    }

    struct Search<'a> {
        model: &'a HouseholdModel,
        z: f64,
        order: &'a [usize],
        domains: &'a [Vec<LocalState>],
        min_suffix: &'a [f64],
        max_suffix: &'a [f64],
        rows_of_state: &'a [Vec<usize>],
        row_counts: Vec<u32>,
        choices: Vec<LocalState>,
        best: Option<(f64, Vec<LocalState>)>,
    }

    impl Search<'_> {
        fn descend(&mut self, depth: usize, committed: f64) {
            if let Some((best_delta, _)) = &self.best {
                let bound = (committed + self.min_suffix[depth] - self.z)
                    .max(self.z - (committed + self.max_suffix[depth]))
                    .max(0.0);
                if bound > best_delta + COST_EPS {
                    return;
                }
            }
            if depth == self.order.len() {
                let delta = (self.z - committed).abs();
                let accept = match &self.best {
                    None => true,
                    Some((best_delta, best_choices)) => {
                        delta < best_delta - COST_EPS
                            || (delta <= best_delta + COST_EPS && self.choices < *best_choices)
                    }
                };
                if accept {
                    self.best = Some((delta, self.choices.clone()));
                }
                return;
            }
            let j = self.order[depth];
            // Non-OFF states first: committing draw early tightens the bound.
            let domain = &self.domains[j];
            for &c in domain.iter().rev() {
                let (draw, touched): (f64, &[usize]) = if c == OFF {
                    (0.0, &[])
                } else {
                    let idx = self.model.state_index(j, c);
                    (self.model.r[idx], &self.rows_of_state[idx])
                };
                let mut blocked = false;
                for &row in touched {
                    if self.row_counts[row] >= 1 {
                        blocked = true;
                        break;
                    }
                }
                if blocked {
                    continue;
                }
                for &row in touched {
                    self.row_counts[row] += 1;
                }
                self.choices[j] = c;
                self.descend(depth + 1, committed + draw);
                self.choices[j] = OFF;
                for &row in touched {
                    self.row_counts[row] -= 1;
                }
            }
        }
    }

    let mut search = Search {
        model,
        z,
        order: &order,
        domains,
        min_suffix: &min_suffix,
        max_suffix: &max_suffix,
        rows_of_state: &rows_of_state,
        row_counts: vec![0; groups.len()],
        choices: vec![OFF; n],
        best: None,
    };
    search.descend(0, 0.0);

    match search.best {
        Some((_, choices)) => Ok(StateAssignment::from_choices(model, choices, z)),
        None => Err(SolverError::Infeasible),
    }
}

fn domain_min_draw(model: &HouseholdModel, j: usize, domain: &[LocalState]) -> f64 {
    domain
        .iter()
        .map(|&c| model.draw(j, c))
        .fold(f64::INFINITY, f64::min)
}

fn domain_max_draw(model: &HouseholdModel, j: usize, domain: &[LocalState]) -> f64 {
    domain
        .iter()
        .map(|&c| model.draw(j, c))
        .fold(0.0, f64::max)
}

/// Exhaustive enumeration over all per-appliance state combinations, in
/// lexicographic choice order. Same contract and tie-break as `solve_bb`;
/// serves as the ground-truth oracle.
pub fn solve_exhaustive(
    model: &HouseholdModel,
    z: f64,
    enhancements: Enhancements,
) -> Result<StateAssignment, SolverError> {
    solve_exhaustive_capped(model, z, enhancements, DEFAULT_SEARCH_CAP)
}

pub fn solve_exhaustive_capped(
    model: &HouseholdModel,
    z: f64,
    enhancements: Enhancements,
    cap: u128,
) -> Result<StateAssignment, SolverError> {
    let space = model.search_space();
    if space > cap {
        return Err(SolverError::SearchSpaceTooLarge { space, cap });
    }
    let domains = full_domains(model, enhancements);
    solve_exhaustive_restricted(model, z, enhancements, &domains)
}

/// Exhaustive solve over explicit per-appliance domains.
pub fn solve_exhaustive_restricted(
    model: &HouseholdModel,
    z: f64,
    enhancements: Enhancements,
    domains: &[Vec<LocalState>],
) -> Result<StateAssignment, SolverError> {
    let n = model.num_appliances();
    if domains.iter().any(|d| d.is_empty()) {
        return Err(SolverError::Infeasible);
    }
    let mut cursor = vec![0usize; n];
    let mut best: Option<(f64, Vec<LocalState>)> = None;
    loop {
        let choices: Vec<LocalState> = cursor.iter().enumerate().map(|(j, &i)| domains[j][i]).collect();
        let mut b = vec![0u8; model.num_states()];
        for (j, &c) in choices.iter().enumerate() {
            if c != OFF {
                b[model.state_index(j, c)] = 1;
            }
        }
        let (delta, feasible) = evaluate(model, &b, z, enhancements).expect("b has model length");
        if feasible {
            let accept = match &best {
                None => true,
                Some((best_delta, best_choices)) => {
                    delta < best_delta - COST_EPS
                        || (delta <= best_delta + COST_EPS && choices < *best_choices)
                }
            };
            if accept {
                best = Some((delta, choices));
            }
        }
        // Odometer increment, last appliance fastest.
        let mut k = n;
        loop {
            if k == 0 {
                match best {
                    Some((_, choices)) => {
                        return Ok(StateAssignment::from_choices(model, choices, z))
                    }
                    None => return Err(SolverError::Infeasible),
                }
            }
            k -= 1;
            cursor[k] += 1;
            if cursor[k] < domains[k].len() {
                break;
            }
            cursor[k] = 0;
        }
    }
}

/// Solves the refinement LP of the box problem with a two-phase simplex,
/// then reports the draw vector from the deterministic greedy fill so the
/// result is bit-identical to `refine_oracle`. The simplex objective is
/// retained for verification.
pub fn solve_refinement_lp(p: &RefinementProblem) -> Result<RefinementSolution, SolverError> {
    p.validate()?;
    let k = p.lower.len();
    let lo_sum: f64 = p.lower.iter().sum();
    let shifted_z = p.z_residual - lo_sum;

    // Variables [delta; y'] with y' = y - lower, all nonnegative.
    // Rows: -delta - sum(y') <= -shifted_z ; -delta + sum(y') <= shifted_z ;
    //       y'_i <= upper_i - lower_i.
    let ncols = k + 1;
    let mut a = Vec::with_capacity(k + 2);
    let mut rhs = Vec::with_capacity(k + 2);
    let mut row = vec![-1.0; ncols];
    a.push(row.clone());
    rhs.push(-shifted_z);
    row = vec![1.0; ncols];
    row[0] = -1.0;
    a.push(row);
    rhs.push(shifted_z);
    for i in 0..k {
        let mut row = vec![0.0; ncols];
        row[i + 1] = 1.0;
        a.push(row);
        rhs.push(p.upper[i] - p.lower[i]);
    }
    let mut cost = vec![0.0; ncols];
    cost[0] = 1.0;

    let solution = simplex_min(&cost, &a, &rhs)?;
    let objective = solution.objective;

    Ok(RefinementSolution {
        values: refine_oracle(p)?,
        objective,
    })
}

/// Closed-form refinement: start every free state at its lower bound and
/// pour the remaining attainable budget in index order up to each upper
/// bound. Any box point whose sum is clamp(z, sum lower, sum upper) is
/// optimal, so this reaches the LP optimum.
pub fn refine_oracle(p: &RefinementProblem) -> Result<Vec<f64>, SolverError> {
    p.validate()?;
    let lo_sum: f64 = p.lower.iter().sum();
    let hi_sum: f64 = p.upper.iter().sum();
    let target = p.z_residual.clamp(lo_sum, hi_sum);
    let mut budget = target - lo_sum;
    let mut y = p.lower.clone();
    for (yi, (&lo, &hi)) in y.iter_mut().zip(p.lower.iter().zip(&p.upper)) {
        let add = budget.min(hi - lo);
        debug_assert!(lo <= hi);
        *yi += add;
        budget -= add;
        if budget <= 0.0 {
            break;
        }
    }
    Ok(y)
}

struct LpSolution {
    objective: f64,
    #[allow(dead_code)]
    x: Vec<f64>,
}

/// Dense two-phase simplex for: minimize c'x subject to A x <= b, x >= 0.
/// Negative entries in b are allowed (phase 1 introduces artificials).
/// Bland's rule keeps pivoting deterministic and cycle-free.
fn simplex_min(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<LpSolution, SolverError> {
    const TOL: f64 = 1e-10;
    let m = a.len();
    let n = c.len();

    // Canonical equalities with b >= 0: negate rows with negative rhs, then
    // every row gets a slack (+1 for <=, -1 surplus for negated rows) and
    // negated rows also get an artificial.
    let mut need_artificial = vec![false; m];
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut rhs: Vec<f64> = Vec::with_capacity(m);
    for i in 0..m {
        let mut row = a[i].clone();
        let mut r = b[i];
        if r < 0.0 {
            for v in &mut row {
                *v = -*v;
            }
            r = -r;
            need_artificial[i] = true;
        }
        rows.push(row);
        rhs.push(r);
    }
    let n_art = need_artificial.iter().filter(|&&x| x).count();
    let total = n + m + n_art; // structural + slack + artificial
    let mut tableau: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut basis: Vec<usize> = Vec::with_capacity(m);
    let mut art_col = n + m;
    for i in 0..m {
        let mut row = vec![0.0; total + 1];
        row[..n].copy_from_slice(&rows[i]);
        row[n + i] = if need_artificial[i] { -1.0 } else { 1.0 };
        if need_artificial[i] {
            row[art_col] = 1.0;
            basis.push(art_col);
            art_col += 1;
        } else {
            basis.push(n + i);
        }
        row[total] = rhs[i];
        tableau.push(row);
    }

    let pivot = |tableau: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, obj: &mut Vec<f64>, limit: usize| -> Result<(), SolverError> {
        let mut iters = 0usize;
        let max_iters = 10_000 + 100 * (tableau.len() + limit);
        loop {
            // Bland: entering variable is the lowest-index negative reduced cost.
            let mut enter = None;
            for j in 0..limit {
                if obj[j] < -TOL {
                    enter = Some(j);
                    break;
                }
            }
            let Some(enter) = enter else { return Ok(()) };
            // Ratio test; Bland tie-break on basis index.
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for (i, row) in tableau.iter().enumerate() {
                if row[enter] > TOL {
                    let ratio = row[limit_rhs(row)] / row[enter];
                    if ratio < best_ratio - TOL
                        || ((ratio - best_ratio).abs() <= TOL
                            && leave.map_or(true, |l| basis[i] < basis[l]))
                    {
                        best_ratio = ratio;
                        leave = Some(i);
                    }
                }
            }
            let Some(leave) = leave else {
                // Unbounded; cannot happen for this problem family but kept
                // as a hard error.
                return Err(SolverError::SimplexStalled);
            };
            let pv = tableau[leave][enter];
            for v in tableau[leave].iter_mut() {
                *v /= pv;
            }
            let pivot_row = tableau[leave].clone();
            for (i, row) in tableau.iter_mut().enumerate() {
                if i != leave && row[enter].abs() > 0.0 {
                    let factor = row[enter];
                    for (v, pv) in row.iter_mut().zip(&pivot_row) {
                        *v -= factor * pv;
                    }
                }
            }
            let factor = obj[enter];
            if factor.abs() > 0.0 {
                for (v, pv) in obj.iter_mut().zip(&pivot_row) {
                    *v -= factor * pv;
                }
            }
            basis[leave] = enter;
            iters += 1;
            if iters > max_iters {
                return Err(SolverError::SimplexStalled);
            }
        }
    };

    // Phase 1: drive artificials to zero.
    if n_art > 0 {
        let mut obj = vec![0.0; total + 1];
        for j in n + m..total {
            obj[j] = 1.0;
        }
        // Price out the basic artificials.
        for (i, &bi) in basis.iter().enumerate() {
            if bi >= n + m {
                let row = tableau[i].clone();
                for (v, rv) in obj.iter_mut().zip(&row) {
                    *v -= rv;
                }
            }
        }
        pivot(&mut tableau, &mut basis, &mut obj, total)?;
        if -obj[total] > 1e-7 {
            // Infeasible phase 1; impossible for the box problem.
            return Err(SolverError::SimplexStalled);
        }
    }

    // Phase 2 over structural + slack columns only.
    let mut obj = vec![0.0; total + 1];
    obj[..n].copy_from_slice(c);
    for (i, &bi) in basis.iter().enumerate() {
        if obj[bi].abs() > 0.0 {
            let factor = obj[bi];
            let row = tableau[i].clone();
            for (v, rv) in obj.iter_mut().zip(&row) {
                *v -= factor * rv;
            }
        }
    }
    // Bar artificials from re-entering.
    let mut phase2_obj = obj;
    for j in n + m..total {
        if phase2_obj[j] < 0.0 {
            phase2_obj[j] = 0.0;
        }
    }
    pivot(&mut tableau, &mut basis, &mut phase2_obj, n + m)?;

    let mut x = vec![0.0; n];
    for (i, &bi) in basis.iter().enumerate() {
        if bi < n {
            x[bi] = tableau[i][total];
        }
    }
    let objective: f64 = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok(LpSolution { objective, x })
}

fn limit_rhs(row: &[f64]) -> usize {
    row.len() - 1
}
