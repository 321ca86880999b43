//! End-to-end disaggregation flow.
//!
//! Per sample: solve the integer program, veto state transitions the
//! appliance's transition diagram forbids, smooth state chatter with a
//! lagged median, then refine transient power draws with the bounded LP.
//! The whole flow is deterministic for fixed inputs and independent of the
//! worker thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formulation::{Enhancements, StateAssignment};
use crate::model::{HouseholdModel, LocalState, OFF};
use crate::solver::{self, RefinementProblem, SolverError};

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    #[error("timestep {k}: {source}")]
    Solve {
        k: usize,
        #[source]
        source: SolverError,
    },
    #[error("timestep {k}: reading {value} is not finite and nonnegative")]
    InvalidReading { k: usize, value: f64 },
    #[error("appliance {appliance} has no legal successor from state {from}")]
    NoReachableState { appliance: usize, from: LocalState },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub enhancements: Enhancements,
    /// Median lag L: a state estimate is finalized L samples late, corrected
    /// by the window median when the window disagrees.
    pub median_lag: usize,
    /// Reporting block size N for per-block accuracy series.
    pub block_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            enhancements: Enhancements::ALL,
            median_lag: 4,
            block_size: 5040,
        }
    }
}

/// How often each cleanup stage changed something.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StageCounters {
    /// Appliance-timestep pairs rewritten by the STD correction.
    pub std_corrections: usize,
    /// Appliance-timestep pairs rewritten by the median correction.
    pub median_corrections: usize,
    /// Samples whose draws went through the refinement LP.
    pub lp_refined_samples: usize,
}

#[derive(Debug, Clone)]
pub struct DisaggregationResult {
    /// Final per-timestep assignments (after all corrections).
    pub assignments: Vec<StateAssignment>,
    /// Refined per-appliance power estimates, T x n.
    pub power: Vec<Vec<f64>>,
    pub counters: StageCounters,
    pub enhancements: Enhancements,
    /// Mean wall-clock seconds per sample for the whole pipeline.
    pub mean_sample_seconds: f64,
}

impl DisaggregationResult {
    /// Per-timestep local states, T x n.
    pub fn state_matrix(&self) -> Vec<Vec<LocalState>> {
        self.assignments.iter().map(|a| a.choices.clone()).collect()
    }

    /// Non-edge transitions remaining in the output, per appliance.
    pub fn std_violations(&self, model: &HouseholdModel) -> usize {
        let mut count = 0;
        for w in self.assignments.windows(2) {
            for j in 0..model.num_appliances() {
                if !model.is_edge(j, w[0].choices[j], w[1].choices[j]) {
                    count += 1;
                }
            }
        }
        count
    }
}

/// Replaces STD-violating states in `cand` by re-solving the timestep with
/// each violating appliance restricted to the states reachable from its
/// previous (corrected) state. STD-consistent appliances keep their states
/// fixed. Forward-only.
pub fn std_correct(
    prev: &[LocalState],
    cand: &StateAssignment,
    model: &HouseholdModel,
    enhancements: Enhancements,
) -> Result<StateAssignment, PipelineError> {
    let n = model.num_appliances();
    debug_assert_eq!(prev.len(), n);
    let mut violators = Vec::new();
    for j in 0..n {
        if !model.is_edge(j, prev[j], cand.choices[j]) {
            violators.push(j);
        }
    }
    if violators.is_empty() {
        return Ok(cand.clone());
    }
    let mut domains: Vec<Vec<LocalState>> = cand.choices.iter().map(|&c| vec![c]).collect();
    for &j in &violators {
        let reachable = model.reachable(j, prev[j]);
        if reachable.is_empty() {
            return Err(PipelineError::NoReachableState {
                appliance: j,
                from: prev[j],
            });
        }
        domains[j] = reachable.to_vec();
    }
    match solver::solve_exhaustive_restricted(model, cand.z, enhancements, &domains) {
        Ok(sol) => Ok(sol),
        // The fixed states plus the restricted domains can collide with a
        // combination row; drop the augmentation rows rather than leave an
        // STD violation in place.
        Err(SolverError::Infeasible) => {
            let relaxed = Enhancements {
                constraints: false,
                ..enhancements
            };
            solver::solve_exhaustive_restricted(model, cand.z, relaxed, &domains)
                .map_err(|e| PipelineError::Solve { k: 0, source: e })
        }
        Err(e) => Err(PipelineError::Solve { k: 0, source: e }),
    }
}

/// Window-mode correction of the oldest element. `window[0]` is the state
/// being finalized (position k-L); the rest of the window looks ahead to the
/// current estimate. Mode ties keep the existing estimate. For two-state
/// appliances and odd windows this is exactly the median rule.
pub fn median_correct(window: &[LocalState]) -> LocalState {
    debug_assert!(!window.is_empty());
    let incumbent = window[0];
    let mut counts: Vec<(LocalState, usize)> = Vec::new();
    for &s in window {
        match counts.iter_mut().find(|(v, _)| *v == s) {
            Some((_, c)) => *c += 1,
            None => counts.push((s, 1)),
        }
    }
    let max = counts.iter().map(|&(_, c)| c).max().unwrap();
    let incumbent_count = counts
        .iter()
        .find(|&&(v, _)| v == incumbent)
        .map_or(0, |&(_, c)| c);
    if incumbent_count == max {
        return incumbent;
    }
    // Unique-by-construction winner? Several states can share the max;
    // take the smallest such label for determinism.
    counts
        .iter()
        .filter(|&&(_, c)| c == max)
        .map(|&(v, _)| v)
        .min()
        .unwrap()
}

/// Runs the full pipeline over an aggregate series.
pub fn run(
    model: &HouseholdModel,
    readings: &[f64],
    cfg: &PipelineConfig,
) -> Result<DisaggregationResult, PipelineError> {
    let started = std::time::Instant::now();
    for (k, &z) in readings.iter().enumerate() {
        if !z.is_finite() || z < 0.0 {
            return Err(PipelineError::InvalidReading { k, value: z });
        }
    }
    let flags = cfg.enhancements;
    let n = model.num_appliances();
    let t = readings.len();

    // Stage 1: independent per-sample solves, parallel.
    let domains = solver::full_domains(model, flags);
    let solved: Result<Vec<StateAssignment>, PipelineError> = readings
        .par_iter()
        .enumerate()
        .map(|(k, &z)| {
            solver::solve_bb_restricted(model, z, flags, &domains)
                .map_err(|e| PipelineError::Solve { k, source: e })
        })
        .collect();
    let solved = solved?;

    let mut counters = StageCounters::default();

    // Stage 2: sequential STD correction against the corrected predecessor.
    let corrected: Vec<StateAssignment> = if flags.std_correction && t > 0 {
        let mut out: Vec<StateAssignment> = Vec::with_capacity(t);
        out.push(solved[0].clone());
        for k in 1..t {
            let prev = out[k - 1].choices.clone();
            let fixed =
                std_correct(&prev, &solved[k], model, flags).map_err(|e| match e {
                    PipelineError::Solve { source, .. } => PipelineError::Solve { k, source },
                    other => other,
                })?;
            counters.std_corrections += fixed
                .choices
                .iter()
                .zip(&solved[k].choices)
                .filter(|(a, b)| a != b)
                .count();
            out.push(fixed);
        }
        out
    } else {
        solved
    };

    // Stage 3: lagged median over each appliance's state stream. The filter
    // always reads the post-STD stream; corrections never feed back. When
    // the STD stage is active, a correction that would introduce a non-edge
    // transition is not applied, and if the stream value itself became
    // unreachable from an earlier correction, the nearest reachable state
    // (by draw) stands in.
    let lag = cfg.median_lag;
    let mut final_choices: Vec<Vec<LocalState>> = corrected.iter().map(|a| a.choices.clone()).collect();
    if flags.median && lag > 0 && t > 0 {
        for j in 0..n {
            let stream: Vec<LocalState> = corrected.iter().map(|a| a.choices[j]).collect();
            for k in 0..t {
                let window = &stream[k..(k + lag + 1).min(t)];
                let mut chosen = median_correct(window);
                if flags.std_correction && k > 0 {
                    let prev = final_choices[k - 1][j];
                    if !model.is_edge(j, prev, chosen) {
                        chosen = if model.is_edge(j, prev, stream[k]) {
                            stream[k]
                        } else {
                            nearest_reachable(model, j, prev, stream[k])
                        };
                    }
                }
                if chosen != stream[k] {
                    counters.median_corrections += 1;
                }
                final_choices[k][j] = chosen;
            }
        }
    }

    let assignments: Vec<StateAssignment> = final_choices
        .into_iter()
        .zip(readings)
        .map(|(choices, &z)| StateAssignment::from_choices(model, choices, z))
        .collect();

    // Stage 4: per-sample LP refinement of transient draws, parallel.
    let refined: Result<Vec<(Vec<f64>, bool)>, PipelineError> = assignments
        .par_iter()
        .enumerate()
        .map(|(k, a)| {
            refine_sample(model, a, flags).map_err(|e| PipelineError::Solve { k, source: e })
        })
        .collect();
    let refined = refined?;
    let mut power = Vec::with_capacity(t);
    for (row, was_refined) in refined {
        if was_refined {
            counters.lp_refined_samples += 1;
        }
        power.push(row);
    }

    let elapsed = started.elapsed().as_secs_f64();
    Ok(DisaggregationResult {
        assignments,
        power,
        counters,
        enhancements: flags,
        mean_sample_seconds: if t > 0 { elapsed / t as f64 } else { 0.0 },
    })
}

fn nearest_reachable(
    model: &HouseholdModel,
    appliance: usize,
    from: LocalState,
    target: LocalState,
) -> LocalState {
    let want = model.draw(appliance, target);
    let mut best = from;
    let mut best_gap = f64::INFINITY;
    for &c in model.reachable(appliance, from) {
        let gap = (model.draw(appliance, c) - want).abs();
        if gap < best_gap || (gap == best_gap && c < best) {
            best = c;
            best_gap = gap;
        }
    }
    best
}

/// Per-appliance draws for one finalized assignment. Active transient
/// states get LP-refined values; everything else reports steady ratings.
/// Returns (draws, whether the LP ran).
fn refine_sample(
    model: &HouseholdModel,
    assignment: &StateAssignment,
    flags: Enhancements,
) -> Result<(Vec<f64>, bool), SolverError> {
    let n = model.num_appliances();
    let mut draws = assignment.s.clone();
    if !flags.lp_refine {
        return Ok((draws, false));
    }
    let mut steady_sum = 0.0;
    let mut p2 = Vec::new();
    for (j, &c) in assignment.choices.iter().enumerate() {
        if c == OFF {
            continue;
        }
        let idx = model.state_index(j, c);
        if model.r_min[idx] < model.r_max[idx] {
            p2.push(idx);
        } else {
            steady_sum += model.r[idx];
        }
    }
    if p2.is_empty() {
        return Ok((draws, false));
    }
    let problem = RefinementProblem {
        z_residual: assignment.z - steady_sum,
        lower: p2.iter().map(|&i| model.r_min[i]).collect(),
        upper: p2.iter().map(|&i| model.r_max[i]).collect(),
        p2: p2.clone(),
    };
    let solution = solver::solve_refinement_lp(&problem)?;
    for (&idx, &value) in p2.iter().zip(&solution.values) {
        let (j, _) = model.appliance_of(idx);
        debug_assert!(j < n);
        draws[j] = value;
    }
    Ok((draws, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{compile, ApplianceSpec, StateSpec};
    use crate::solver::solve_exhaustive;
    use rand::{Rng, SeedableRng};

    fn fridge() -> ApplianceSpec {
        // Chain STD: OFF <-> s1 <-> s2 <-> s3, no shortcuts.
        ApplianceSpec::new(
            "FRG",
            vec![
                StateSpec::steady("s1", 120.0),
                StateSpec::steady("s2", 300.0),
                StateSpec::steady("s3", 480.0),
            ],
        )
        .with_edges([(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2)])
    }

    fn heater() -> ApplianceSpec {
        ApplianceSpec::new("HTR", vec![StateSpec::steady("s1", 1000.0)])
    }

    #[test]
    fn std_correct_restricts_to_reachable() {
        let model = compile(&[fridge(), heater()], 0.0).unwrap();
        // Candidate claims FRG jumped s1 -> s3; the reading matches s2 best.
        let cand = StateAssignment::from_choices(&model, vec![3, 0], 310.0);
        let fixed = std_correct(&[1, 0], &cand, &model, Enhancements::ALL).unwrap();
        assert_eq!(fixed.choices, vec![2, 0]);
        assert_eq!(fixed.delta, 10.0);
    }

    #[test]
    fn std_correct_keeps_consistent_candidate() {
        let model = compile(&[fridge(), heater()], 0.0).unwrap();
        let cand = StateAssignment::from_choices(&model, vec![2, 1], 1300.0);
        let fixed = std_correct(&[1, 1], &cand, &model, Enhancements::ALL).unwrap();
        assert_eq!(fixed, cand);
    }

    #[test]
    fn std_correct_random_sequences_never_violate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let model = compile(&[fridge(), heater()], 0.0).unwrap();
        let mut prev = vec![0usize, 0usize];
        for _ in 0..300 {
            let z: f64 = rng.gen_range(0.0..1600.0);
            let cand = solve_exhaustive(&model, z, Enhancements::ALL).unwrap();
            let fixed = std_correct(&prev, &cand, &model, Enhancements::ALL).unwrap();
            for j in 0..2 {
                assert!(model.is_edge(j, prev[j], fixed.choices[j]));
            }
            // Restricted exhaustive oracle: best residual over reachable
            // domains with consistent appliances fixed.
            let mut domains: Vec<Vec<usize>> = Vec::new();
            for j in 0..2 {
                if model.is_edge(j, prev[j], cand.choices[j]) {
                    domains.push(vec![cand.choices[j]]);
                } else {
                    domains.push(model.reachable(j, prev[j]).to_vec());
                }
            }
            let oracle =
                solver::solve_exhaustive_restricted(&model, z, Enhancements::ALL, &domains)
                    .unwrap();
            assert_eq!(fixed.delta, oracle.delta);
            prev = fixed.choices.clone();
        }
    }

    #[test]
    fn median_corrects_minority_sample() {
        // Window oldest-first: position k-2 holds s2, the rest s1.
        assert_eq!(median_correct(&[2, 1, 1]), 1);
    }

    #[test]
    fn median_keeps_constant_window() {
        assert_eq!(median_correct(&[1, 1, 1]), 1);
    }

    #[test]
    fn median_tie_keeps_incumbent() {
        assert_eq!(median_correct(&[2, 1, 1, 2]), 2);
    }

    #[test]
    fn median_matches_offline_oracle_on_binary_streams() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for &lag in &[2usize, 4] {
            for _ in 0..50 {
                let t = rng.gen_range(5..60);
                let stream: Vec<LocalState> = (0..t).map(|_| rng.gen_range(0..2)).collect();
                // Offline filter: mode of the clipped lookahead window.
                let offline: Vec<LocalState> = (0..t)
                    .map(|k| {
                        let window = &stream[k..(k + lag + 1).min(t)];
                        let ones = window.iter().filter(|&&v| v == 1).count();
                        let zeros = window.len() - ones;
                        if ones > zeros {
                            1
                        } else if zeros > ones {
                            0
                        } else {
                            stream[k]
                        }
                    })
                    .collect();
                let filtered: Vec<LocalState> = (0..t)
                    .map(|k| median_correct(&stream[k..(k + lag + 1).min(t)]))
                    .collect();
                assert_eq!(filtered, offline);
            }
        }
    }

    #[test]
    fn run_all_zero_readings() {
        let model = compile(&[fridge(), heater()], 0.0).unwrap();
        let cfg = PipelineConfig::default();
        let result = run(&model, &vec![0.0; 50], &cfg).unwrap();
        assert!(result
            .assignments
            .iter()
            .all(|a| a.choices.iter().all(|&c| c == OFF)));
        assert!(result.power.iter().all(|row| row.iter().all(|&p| p == 0.0)));
    }

    #[test]
    fn run_flags_off_matches_per_sample_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(71);
        let model = compile(&[fridge(), heater()], 0.0).unwrap();
        let readings: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..1600.0)).collect();
        let cfg = PipelineConfig {
            enhancements: Enhancements::NONE,
            ..PipelineConfig::default()
        };
        let result = run(&model, &readings, &cfg).unwrap();
        for (k, &z) in readings.iter().enumerate() {
            let oracle = solve_exhaustive(&model, z, Enhancements::NONE).unwrap();
            assert_eq!(result.assignments[k].choices, oracle.choices, "k={k}");
            assert_eq!(result.power[k], oracle.s);
        }
        assert_eq!(result.counters, StageCounters::default());
    }

    #[test]
    fn run_rejects_bad_reading() {
        let model = compile(&[heater()], 0.0).unwrap();
        let cfg = PipelineConfig::default();
        let err = run(&model, &[10.0, f64::NAN], &cfg).unwrap_err();
        assert!(matches!(err, PipelineError::InvalidReading { k: 1, .. }));
        let err = run(&model, &[-5.0], &cfg).unwrap_err();
        assert!(matches!(err, PipelineError::InvalidReading { k: 0, .. }));
    }

    #[test]
    fn run_with_std_has_zero_violations() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let model = compile(&[fridge(), heater()], 0.0).unwrap();
        let readings: Vec<f64> = (0..300).map(|_| rng.gen_range(0.0..1600.0)).collect();
        let cfg = PipelineConfig::default();
        let result = run(&model, &readings, &cfg).unwrap();
        assert_eq!(result.std_violations(&model), 0);
    }

    #[test]
    fn refinement_only_touches_active_transients() {
        let ramp = ApplianceSpec::new(
            "RMP",
            vec![StateSpec::transient("s1", 600.0, 400.0, 800.0)],
        );
        let model = compile(&[ramp, heater()], 0.0).unwrap();
        let cfg = PipelineConfig::default();
        // 650 is inside the transient band; the heater stays off.
        let result = run(&model, &[650.0], &cfg).unwrap();
        assert_eq!(result.assignments[0].choices, vec![1, 0]);
        assert_eq!(result.power[0], vec![650.0, 0.0]);
        assert_eq!(result.counters.lp_refined_samples, 1);

        // With refinement off the draw snaps to the steady rating.
        let cfg = PipelineConfig {
            enhancements: Enhancements {
                lp_refine: false,
                ..Enhancements::ALL
            },
            ..PipelineConfig::default()
        };
        let result = run(&model, &[650.0], &cfg).unwrap();
        assert_eq!(result.power[0], vec![600.0, 0.0]);
    }
}
