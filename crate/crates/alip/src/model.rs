//! Appliance and household modeling.
//!
//! A household is declared as a list of appliances, each with its non-OFF
//! states (steady rating plus transient bounds) and a state transition
//! diagram. `compile` turns the declaration into the flat rating vector and
//! constraint groups the per-timestep program builder consumes.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// State index within one appliance: 0 is OFF, 1..=l are the non-OFF states.
pub type LocalState = usize;

pub const OFF: LocalState = 0;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("model has no appliances")]
    EmptyModel,
    #[error("appliance `{appliance}` state `{state}`: rating {rating} is not positive")]
    NonPositiveRating {
        appliance: String,
        state: String,
        rating: f64,
    },
    #[error("appliance `{appliance}` state `{state}`: transient bounds [{tmin}, {tmax}] do not bracket rating {rating}")]
    BoundViolation {
        appliance: String,
        state: String,
        tmin: f64,
        tmax: f64,
        rating: f64,
    },
    #[error("appliance `{appliance}`: duplicate state label `{state}`")]
    DuplicateLabel { appliance: String, state: String },
    #[error("appliance `{appliance}`: duplicate appliance id")]
    DuplicateId { appliance: String },
    #[error("appliance `{appliance}`: STD edge references state index {index} out of range (0..={max})")]
    EdgeOutOfRange {
        appliance: String,
        index: usize,
        max: usize,
    },
    #[error("appliance `{appliance}` is always-on but its STD has an edge into OFF")]
    AlwaysOnEdgeIntoOff { appliance: String },
    #[error("group override index {index} out of range (model has {m} states)")]
    GroupIndexOutOfRange { index: usize, m: usize },
}

/// One non-OFF state of an appliance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpec {
    pub label: String,
    /// Steady VA (or Watt) rating. Strictly positive; OFF is implicit.
    pub rating: f64,
    /// Minimum value observed during transients into this state.
    pub transient_min: f64,
    /// Maximum value observed during transients into this state.
    pub transient_max: f64,
}

impl StateSpec {
    /// Non-transient state: steady rating is the only value it ever draws.
    pub fn steady(label: impl Into<String>, rating: f64) -> Self {
        StateSpec {
            label: label.into(),
            rating,
            transient_min: rating,
            transient_max: rating,
        }
    }

    pub fn transient(
        label: impl Into<String>,
        rating: f64,
        transient_min: f64,
        transient_max: f64,
    ) -> Self {
        StateSpec {
            label: label.into(),
            rating,
            transient_min,
            transient_max,
        }
    }

    pub fn is_transient(&self) -> bool {
        self.transient_min < self.transient_max
    }
}

/// One appliance: ordered non-OFF states plus its state transition diagram.
///
/// STD edges are ordered pairs over local state indices, 0 meaning OFF.
/// Self-loops are always legal and are inserted by `compile` if missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplianceSpec {
    pub id: String,
    pub states: Vec<StateSpec>,
    #[serde(default)]
    pub always_on: bool,
    /// Empty set means fully connected (every transition legal).
    #[serde(default)]
    pub std_edges: BTreeSet<(LocalState, LocalState)>,
}

impl ApplianceSpec {
    pub fn new(id: impl Into<String>, states: Vec<StateSpec>) -> Self {
        ApplianceSpec {
            id: id.into(),
            states,
            always_on: false,
            std_edges: BTreeSet::new(),
        }
    }

    pub fn always_on(mut self) -> Self {
        self.always_on = true;
        self
    }

    pub fn with_edges(mut self, edges: impl IntoIterator<Item = (LocalState, LocalState)>) -> Self {
        self.std_edges = edges.into_iter().collect();
        self
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }
}

/// Compiled household model. Immutable after `compile`; shareable across
/// workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdModel {
    pub appliances: Vec<ApplianceSpec>,
    /// Concatenated steady ratings, length m = sum of state counts.
    pub r: Vec<f64>,
    /// Concatenated transient minima, same layout as `r`.
    pub r_min: Vec<f64>,
    /// Concatenated transient maxima, same layout as `r`.
    pub r_max: Vec<f64>,
    /// offsets[j] = number of states of appliances before j; global index of
    /// state s of appliance j is offsets[j] + s - 1.
    pub offsets: Vec<usize>,
    /// Index sets where one state's rating equals a subset sum of others.
    pub combo_groups: Vec<Vec<usize>>,
    /// Index pairs where one state's rating matches another's transient gap.
    pub alias_groups: Vec<Vec<usize>>,
    /// Per always-on appliance, the index set of its states (equality rows).
    pub always_on_rows: Vec<Vec<usize>>,
    /// Per appliance, adjacency over local states (0 = OFF): std[j][from] is
    /// the sorted set of states reachable from `from` in one step.
    pub std_adjacency: Vec<Vec<Vec<LocalState>>>,
}

impl HouseholdModel {
    pub fn num_appliances(&self) -> usize {
        self.appliances.len()
    }

    /// Total number of non-OFF states across appliances.
    pub fn num_states(&self) -> usize {
        self.r.len()
    }

    /// Global index of state `s` (1-based local) of appliance `j`.
    pub fn state_index(&self, appliance: usize, state: LocalState) -> usize {
        debug_assert!(state >= 1);
        self.offsets[appliance] + state - 1
    }

    /// (appliance, 1-based local state) for a global state index.
    pub fn appliance_of(&self, index: usize) -> (usize, LocalState) {
        let j = match self.offsets.binary_search(&index) {
            Ok(j) => {
                // offsets may repeat is impossible (l_i >= 1), but several
                // appliances can't share an offset; take the found one.
                j
            }
            Err(j) => j - 1,
        };
        (j, index - self.offsets[j] + 1)
    }

    /// Steady draw of appliance `j` in local state `s` (0 for OFF).
    pub fn draw(&self, appliance: usize, state: LocalState) -> f64 {
        if state == OFF {
            0.0
        } else {
            self.r[self.state_index(appliance, state)]
        }
    }

    /// Legal successor states of `from` for appliance `j`.
    pub fn reachable(&self, appliance: usize, from: LocalState) -> &[LocalState] {
        &self.std_adjacency[appliance][from]
    }

    pub fn is_edge(&self, appliance: usize, from: LocalState, to: LocalState) -> bool {
        self.std_adjacency[appliance][from].binary_search(&to).is_ok()
    }

    /// Number of candidate b vectors, capped (saturating) for overflow safety.
    pub fn search_space(&self) -> u128 {
        self.appliances
            .iter()
            .fold(1u128, |acc, a| acc.saturating_mul(a.num_states() as u128 + 1))
    }
}

/// Explicit constraint-group overrides, normally supplied from the model file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupOverrides {
    /// When set, replaces automatic combination detection.
    pub combo_groups: Option<Vec<Vec<usize>>>,
    /// When set, replaces automatic transient-alias detection.
    pub alias_groups: Option<Vec<Vec<usize>>>,
}

/// Default tolerance for rating-collision detection, in VA.
pub const DEFAULT_COMBO_TOL: f64 = 1.0;
/// Default cap on subset size in combination detection.
pub const DEFAULT_MAX_SUBSET: usize = 3;

/// Compiles appliance specs into a household model.
///
/// Combination and alias groups are detected automatically with tolerance
/// `tol` unless overridden. Deterministic: identical inputs give an
/// identical model.
pub fn compile(specs: &[ApplianceSpec], tol: f64) -> Result<HouseholdModel, ModelError> {
    compile_with(specs, tol, DEFAULT_MAX_SUBSET, &GroupOverrides::default())
}

pub fn compile_with(
    specs: &[ApplianceSpec],
    tol: f64,
    max_subset: usize,
    overrides: &GroupOverrides,
) -> Result<HouseholdModel, ModelError> {
    if specs.is_empty() {
        return Err(ModelError::EmptyModel);
    }
    let mut seen_ids = BTreeSet::new();
    for a in specs {
        if !seen_ids.insert(&a.id) {
            return Err(ModelError::DuplicateId {
                appliance: a.id.clone(),
            });
        }
        if a.states.is_empty() {
            return Err(ModelError::EmptyModel);
        }
        let mut labels = BTreeSet::new();
        for s in &a.states {
            if !labels.insert(&s.label) {
                return Err(ModelError::DuplicateLabel {
                    appliance: a.id.clone(),
                    state: s.label.clone(),
                });
            }
            if !(s.rating > 0.0) {
                return Err(ModelError::NonPositiveRating {
                    appliance: a.id.clone(),
                    state: s.label.clone(),
                    rating: s.rating,
                });
            }
            if !(s.transient_min <= s.rating && s.rating <= s.transient_max) {
                return Err(ModelError::BoundViolation {
                    appliance: a.id.clone(),
                    state: s.label.clone(),
                    tmin: s.transient_min,
                    tmax: s.transient_max,
                    rating: s.rating,
                });
            }
        }
        let l = a.states.len();
        for &(from, to) in &a.std_edges {
            if from > l || to > l {
                return Err(ModelError::EdgeOutOfRange {
                    appliance: a.id.clone(),
                    index: from.max(to),
                    max: l,
                });
            }
            if a.always_on && to == OFF {
                return Err(ModelError::AlwaysOnEdgeIntoOff {
                    appliance: a.id.clone(),
                });
            }
        }
    }

    let mut offsets = Vec::with_capacity(specs.len());
    let mut r = Vec::new();
    let mut r_min = Vec::new();
    let mut r_max = Vec::new();
    for a in specs {
        offsets.push(r.len());
        for s in &a.states {
            r.push(s.rating);
            r_min.push(s.transient_min);
            r_max.push(s.transient_max);
        }
    }
    let m = r.len();

    let mut always_on_rows = Vec::new();
    for (j, a) in specs.iter().enumerate() {
        if a.always_on {
            always_on_rows.push((offsets[j]..offsets[j] + a.states.len()).collect());
        }
    }

    let mut std_adjacency = Vec::with_capacity(specs.len());
    for a in specs {
        let l = a.states.len();
        let mut adj: Vec<Vec<LocalState>> = vec![Vec::new(); l + 1];
        if a.std_edges.is_empty() {
            // Fully connected; always-on appliances never transition to OFF.
            let first = if a.always_on { 1 } else { 0 };
            for from in 0..=l {
                adj[from] = (first..=l).collect();
            }
        } else {
            for &(from, to) in &a.std_edges {
                adj[from].push(to);
            }
            // Staying put is always legal.
            for (from, row) in adj.iter_mut().enumerate() {
                if a.always_on && from == OFF {
                    continue;
                }
                if !row.contains(&from) {
                    row.push(from);
                }
            }
            for row in &mut adj {
                row.sort_unstable();
                row.dedup();
            }
        }
        std_adjacency.push(adj);
    }

    let combo_groups = match &overrides.combo_groups {
        Some(groups) => validated_groups(groups, m)?,
        None => detect_combos(&r, &offsets, tol, max_subset),
    };
    let alias_groups = match &overrides.alias_groups {
        Some(groups) => validated_groups(groups, m)?,
        None => detect_aliases(&r, &r_min, &r_max, &offsets, tol),
    };

    Ok(HouseholdModel {
        appliances: specs.to_vec(),
        r,
        r_min,
        r_max,
        offsets,
        combo_groups,
        alias_groups,
        always_on_rows,
        std_adjacency,
    })
}

fn validated_groups(groups: &[Vec<usize>], m: usize) -> Result<Vec<Vec<usize>>, ModelError> {
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        for &i in g {
            if i >= m {
                return Err(ModelError::GroupIndexOutOfRange { index: i, m });
            }
        }
        let mut g = g.clone();
        g.sort_unstable();
        g.dedup();
        out.push(g);
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn appliance_of_index(offsets: &[usize], index: usize) -> usize {
    match offsets.binary_search(&index) {
        Ok(j) => j,
        Err(j) => j - 1,
    }
}

/// Finds index sets {target} ∪ subset where the target rating equals the
/// subset's rating sum within `tol`, the subset drawn from other appliances,
/// with |subset| in 2..=max_subset... strictly, sizes 1 are excluded because
/// a 1-element "combination" is a plain rating duplicate, which the one-hot
/// rows cannot disambiguate anyway.
pub fn detect_combos(
    r: &[f64],
    offsets: &[usize],
    tol: f64,
    max_subset: usize,
) -> Vec<Vec<usize>> {
    let m = r.len();
    let mut groups: BTreeSet<Vec<usize>> = BTreeSet::new();
    for target in 0..m {
        let target_app = appliance_of_index(offsets, target);
        // Candidate pool: states of appliances other than the target's.
        let pool: Vec<usize> = (0..m)
            .filter(|&i| appliance_of_index(offsets, i) != target_app)
            .collect();
        let mut subset = Vec::new();
        subsets_matching(
            r,
            offsets,
            &pool,
            0,
            r[target],
            tol,
            max_subset,
            &mut subset,
            &mut |s| {
                if s.len() >= 2 {
                    let mut g: Vec<usize> = s.to_vec();
                    g.push(target);
                    g.sort_unstable();
                    groups.insert(g);
                }
            },
        );
    }
    groups.into_iter().collect()
}

#[allow(clippy::too_many_arguments)]
fn subsets_matching(
    r: &[f64],
    offsets: &[usize],
    pool: &[usize],
    start: usize,
    remaining: f64,
    tol: f64,
    max_left: usize,
    subset: &mut Vec<usize>,
    emit: &mut impl FnMut(&[usize]),
) {
    if remaining.abs() <= tol && !subset.is_empty() {
        emit(subset);
        // Keep searching: further states could still sum within tol.
    }
    if max_left == 0 {
        return;
    }
    for (pos, &i) in pool.iter().enumerate().skip(start) {
        if r[i] > remaining + tol {
            continue;
        }
        // At most one state per appliance in a subset (one-hot).
        let app = appliance_of_index(offsets, i);
        if subset
            .iter()
            .any(|&j| appliance_of_index(offsets, j) == app)
        {
            continue;
        }
        subset.push(i);
        subsets_matching(
            r,
            offsets,
            pool,
            pos + 1,
            remaining - r[i],
            tol,
            max_left - 1,
            subset,
            emit,
        );
        subset.pop();
    }
}

/// Finds pairs {a, b} across appliances where rating(a) is within `tol` of
/// |rating(b) − bound| for either transient bound of b. Such a pair makes the
/// solver see a phantom co-activation while b is in transient.
pub fn detect_aliases(
    r: &[f64],
    r_min: &[f64],
    r_max: &[f64],
    offsets: &[usize],
    tol: f64,
) -> Vec<Vec<usize>> {
    let m = r.len();
    let mut groups: BTreeSet<Vec<usize>> = BTreeSet::new();
    for a in 0..m {
        for b in 0..m {
            if appliance_of_index(offsets, a) == appliance_of_index(offsets, b) {
                continue;
            }
            if r_min[b] == r_max[b] {
                continue;
            }
            for bound in [r_min[b], r_max[b]] {
                let gap = (r[b] - bound).abs();
                if gap > 0.0 && (r[a] - gap).abs() <= tol {
                    let mut g = vec![a, b];
                    g.sort_unstable();
                    groups.insert(g);
                }
            }
        }
    }
    groups.into_iter().collect()
}
