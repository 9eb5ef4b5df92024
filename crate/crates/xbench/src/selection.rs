//! Sequential reference-set selection.
//!
//! Step 1 solves a model that projects every DMU onto one common face of
//! the efficient frontier, minimizing the total weighted L1 distance
//! between data and targets. Each later step solves a simplified model
//! that offers every still-unmatched DMU the choice between its best
//! previous evaluation and a projection onto one new face, again
//! minimizing the total distance. The search stops as soon as an extra
//! face cannot bring any DMU strictly closer to the frontier.
//!
//! All frontier models share the same core: intensities over the
//! extreme-efficient set E, target rows, per-DMU distance rows built from
//! absolute-deviation splits, a supporting hyperplane `(V, U, b)` with
//! weights bounded below by one, and pairwise complementarity between each
//! unit's aggregate intensity and its hyperplane offset `b_k` (a unit that
//! participates as a referent must lie on the hyperplane).

use std::collections::BTreeSet;
use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::{Dataset, DmuRecord};
use crate::efficiency::{extreme_efficient_set, EfficiencyClassification, EfficiencyError};
use crate::milp::{
    ComplementarityMode, ConstraintSense, LinExpr, MilpError, ModelSpec, ObjSense, Solution,
    SolveStatus, SolverConfig, VarId, VarKind,
};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("dimension mismatch: actual has {actual} factors, target has {target}")]
    DimensionMismatch { actual: usize, target: usize },
    #[error(transparent)]
    Efficiency(#[from] EfficiencyError),
    #[error("solver failure in {model}: {source}")]
    Solver {
        model: String,
        #[source]
        source: MilpError,
    },
    #[error(
        "{model} reported {status:?}; this model is feasible for any valid dataset, \
         so this signals an encoding bug"
    )]
    UnexpectedStatus { model: String, status: SolveStatus },
    #[error(
        "step {step}: objective improved by {improvement} but no unit qualified for the new \
         reference set; tolerance settings are inconsistent"
    )]
    ToleranceInconsistency { step: usize, improvement: f64 },
    #[error("step {step}: reference-set certificate invalid: {reason}")]
    Certificate { step: usize, reason: String },
    #[error("failed to write LP dump: {0}")]
    Io(#[from] std::io::Error),
}

/// Tolerances and solver settings of one selection run.
#[derive(Debug, Clone)]
pub struct SelectionConfig {
    /// Threshold on intensities for reference-set membership.
    pub eps_lambda: f64,
    /// Absolute threshold for a strictly closer target.
    pub eps_improve: f64,
    /// Absolute threshold for the stop test on the objective sequence.
    pub eps_stop: f64,
    /// Hard cap on the number of selection steps.
    pub max_steps: usize,
    pub complementarity: ComplementarityMode,
    /// Upper bound imposed on the hyperplane weights in big-M mode only.
    pub weight_cap: f64,
    pub solver: SolverConfig,
    /// When set, every solved model is also written there in LP format.
    pub lp_dump: Option<PathBuf>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            eps_lambda: 1e-6,
            eps_improve: 1e-6,
            eps_stop: 1e-6,
            max_steps: 50,
            complementarity: ComplementarityMode::Sos1,
            weight_cap: 1e6,
            solver: SolverConfig::default(),
            lp_dump: None,
        }
    }
}

/// A supporting hyperplane of the production possibility set with
/// coefficients bounded below by one, certifying that a set of units spans
/// one face of the efficient frontier.
#[derive(Debug, Clone)]
pub struct HyperplaneCertificate {
    /// Input weights V, componentwise >= 1.
    pub input_weights: Vec<f64>,
    /// Output weights U, componentwise >= 1.
    pub output_weights: Vec<f64>,
    /// Offsets b_k = V'X_k - U'Y_k >= 0 for every k in E, keyed by DMU
    /// index; members of the face have b_k = 0.
    pub offsets: Vec<(usize, f64)>,
}

impl HyperplaneCertificate {
    fn from_solution(d: &Dataset, e_set: &[usize], v: &[f64], u: &[f64]) -> Self {
        let offsets = e_set
            .iter()
            .map(|&k| (k, eval_gap(d, k, v, u)))
            .collect();
        HyperplaneCertificate {
            input_weights: v.to_vec(),
            output_weights: u.to_vec(),
            offsets,
        }
    }

    /// Re-check every invariant from raw data: weights >= 1, offsets
    /// consistent and nonnegative, members on the hyperplane, and the
    /// hyperplane supporting the whole dataset cone.
    pub fn validate(&self, d: &Dataset, members: &[usize], tol: f64) -> Result<(), String> {
        for (i, &v) in self.input_weights.iter().enumerate() {
            if v < 1.0 - tol {
                return Err(format!("input weight {i} is {v} < 1"));
            }
        }
        for (r, &u) in self.output_weights.iter().enumerate() {
            if u < 1.0 - tol {
                return Err(format!("output weight {r} is {u} < 1"));
            }
        }
        for &(k, b) in &self.offsets {
            let gap = eval_gap(d, k, &self.input_weights, &self.output_weights);
            let scale = weighted_input(d, k, &self.input_weights).max(1.0);
            if (gap - b).abs() > tol * scale {
                return Err(format!(
                    "offset of {} is {b}, recomputed {gap}",
                    d.id(k)
                ));
            }
            if b < -tol * scale {
                return Err(format!("offset of {} is negative: {b}", d.id(k)));
            }
            if members.contains(&k) && b.abs() > tol * scale {
                return Err(format!(
                    "member {} lies off the hyperplane: b = {b}",
                    d.id(k)
                ));
            }
        }
        for j in 0..d.n() {
            let gap = eval_gap(d, j, &self.input_weights, &self.output_weights);
            let scale = weighted_input(d, j, &self.input_weights);
            if gap < -tol * scale {
                return Err(format!(
                    "hyperplane does not support {} (margin {gap})",
                    d.id(j)
                ));
            }
        }
        Ok(())
    }
}

fn weighted_input(d: &Dataset, j: usize, v: &[f64]) -> f64 {
    (0..d.num_inputs()).map(|i| v[i] * d.input(j, i)).sum()
}

/// `V'X_j - U'Y_j`, the support margin of DMU j under weights (V, U).
fn eval_gap(d: &Dataset, j: usize, v: &[f64], u: &[f64]) -> f64 {
    weighted_input(d, j, v)
        - (0..d.num_outputs())
            .map(|r| u[r] * d.output(j, r))
            .sum::<f64>()
}

/// One selected reference set: the face members plus the certificate of
/// the supporting hyperplane they lie on.
#[derive(Debug, Clone)]
pub struct ReferenceSet {
    /// 1-based step index h.
    pub step: usize,
    /// DMU indices of the members, in dataset order; all extreme-efficient.
    pub members: Vec<usize>,
    pub certificate: HyperplaneCertificate,
}

/// Projection of one DMU onto one face.
#[derive(Debug, Clone)]
pub struct TargetPoint {
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
    /// Nonzero intensities over E, `(dmu index, lambda)`.
    pub intensities: Vec<(usize, f64)>,
}

/// Everything recorded about one accepted selection step.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub reference_set: ReferenceSet,
    /// Per-DMU targets on this step's face; units already in the pool keep
    /// their own data.
    pub targets: Vec<TargetPoint>,
    /// Per-DMU distances d_j from the step model; 0 for pooled units.
    pub distances: Vec<f64>,
    /// Optimal objective of the step model.
    pub objective: f64,
}

/// Final state of a selection run.
#[derive(Debug, Clone)]
pub struct SelectionState {
    pub classification: EfficiencyClassification,
    pub big_m: f64,
    pub steps: Vec<StepRecord>,
    /// Best distance per DMU across all accepted steps.
    pub best_distances: Vec<f64>,
    /// Objective sequence D_1..D_A.
    pub objectives: Vec<f64>,
    /// Objective of the solve that triggered the stop, when it ran.
    pub stop_objective: Option<f64>,
    /// False when the run was cut by `max_steps` instead of the stop rule.
    pub converged: bool,
    /// Pairs `(h, a)` of coinciding reference sets, reported rather than
    /// suppressed.
    pub repeated_sets: Vec<(usize, usize)>,
}

impl SelectionState {
    pub fn reference_sets(&self) -> impl Iterator<Item = &ReferenceSet> {
        self.steps.iter().map(|s| &s.reference_set)
    }

    /// Union of all selected members.
    pub fn pool(&self) -> BTreeSet<usize> {
        self.steps
            .iter()
            .flat_map(|s| s.reference_set.members.iter().copied())
            .collect()
    }
}

/// Weighted L1 distance between actual data and a target point: absolute
/// deviations normalized by the actual values.
pub fn weighted_l1_distance(
    actual: &DmuRecord,
    target_inputs: &[f64],
    target_outputs: &[f64],
) -> Result<f64, SelectionError> {
    if actual.inputs.len() != target_inputs.len() || actual.outputs.len() != target_outputs.len() {
        return Err(SelectionError::DimensionMismatch {
            actual: actual.inputs.len() + actual.outputs.len(),
            target: target_inputs.len() + target_outputs.len(),
        });
    }
    let inputs = actual
        .inputs
        .iter()
        .zip(target_inputs)
        .map(|(x, t)| (x - t).abs() / x);
    let outputs = actual
        .outputs
        .iter()
        .zip(target_outputs)
        .map(|(y, t)| (y - t).abs() / y);
    Ok(inputs.chain(outputs).sum())
}

/// The big-M constant: the largest weighted L1 distance from any DMU to
/// any extreme-efficient unit. Provably sufficient for the step models.
pub fn compute_big_m(d: &Dataset, e_set: &[usize]) -> f64 {
    let mut m = 0.0f64;
    for &k in e_set {
        let rec_k = &d.records[k];
        for j in 0..d.n() {
            let dist = weighted_l1_distance(&d.records[j], &rec_k.inputs, &rec_k.outputs)
                .expect("records of one dataset share dimensions");
            m = m.max(dist);
        }
    }
    m
}

/// Variable handles of the shared frontier core.
struct FrontierVars {
    /// Scope: the DMU indices that get projected in this model.
    scope: Vec<usize>,
    /// lam\[kp\]\[sp\]: intensity of E-member kp for scope DMU sp.
    lam: Vec<Vec<VarId>>,
    /// Per-scope-DMU distance variable.
    dist: Vec<VarId>,
    v: Vec<VarId>,
    u: Vec<VarId>,
}

/// Build the constraints shared by all frontier models: targets as
/// combinations of E, distance rows, the supporting hyperplane and the
/// aggregate-intensity complementarity.
fn build_frontier_core(
    model: &mut ModelSpec,
    d: &Dataset,
    e_set: &[usize],
    scope: Vec<usize>,
    cfg: &SelectionConfig,
) -> Result<FrontierVars, MilpError> {
    let (m, s) = (d.num_inputs(), d.num_outputs());

    let lam: Vec<Vec<VarId>> = e_set
        .iter()
        .map(|&k| {
            scope
                .iter()
                .map(|&j| model.add_nonneg(format!("lam_{k}_{j}")))
                .collect()
        })
        .collect();

    let mut dist = Vec::with_capacity(scope.len());
    for (sp, &j) in scope.iter().enumerate() {
        let mut dist_terms = vec![];
        for i in 0..m {
            let xhat = model.add_nonneg(format!("xhat_{j}_{i}"));
            let mut terms: Vec<(VarId, f64)> = e_set
                .iter()
                .enumerate()
                .map(|(kp, &k)| (lam[kp][sp], d.input(k, i)))
                .collect();
            terms.push((xhat, -1.0));
            model.add_constraint(format!("tgt_in_{j}_{i}"), terms, ConstraintSense::Eq, 0.0);
            let dev = model.add_abs_deviation(
                &format!("dev_in_{j}_{i}"),
                LinExpr::new().term(xhat, -1.0).constant(d.input(j, i)),
                1.0 / d.input(j, i),
            )?;
            dist_terms.extend(dev.terms());
        }
        for r in 0..s {
            let yhat = model.add_nonneg(format!("yhat_{j}_{r}"));
            let mut terms: Vec<(VarId, f64)> = e_set
                .iter()
                .enumerate()
                .map(|(kp, &k)| (lam[kp][sp], d.output(k, r)))
                .collect();
            terms.push((yhat, -1.0));
            model.add_constraint(format!("tgt_out_{j}_{r}"), terms, ConstraintSense::Eq, 0.0);
            let dev = model.add_abs_deviation(
                &format!("dev_out_{j}_{r}"),
                LinExpr::new().term(yhat, -1.0).constant(d.output(j, r)),
                1.0 / d.output(j, r),
            )?;
            dist_terms.extend(dev.terms());
        }
        let d_j = model.add_nonneg(format!("d_{j}"));
        let mut row = vec![(d_j, 1.0)];
        row.extend(dist_terms.into_iter().map(|(v, w)| (v, -w)));
        model.add_constraint(format!("dist_{j}"), row, ConstraintSense::Eq, 0.0);
        dist.push(d_j);
    }

    let weight_ub = match cfg.complementarity {
        ComplementarityMode::Sos1 => f64::INFINITY,
        ComplementarityMode::BigM => cfg.weight_cap,
    };
    let v: Vec<VarId> = (0..m)
        .map(|i| model.add_var(format!("v_{i}"), 1.0, weight_ub, VarKind::Continuous))
        .collect();
    let u: Vec<VarId> = (0..s)
        .map(|r| model.add_var(format!("u_{r}"), 1.0, weight_ub, VarKind::Continuous))
        .collect();

    let mut pairs = Vec::with_capacity(e_set.len());
    for (kp, &k) in e_set.iter().enumerate() {
        let b_k = model.add_nonneg(format!("b_{k}"));
        let mut terms: Vec<(VarId, f64)> =
            (0..m).map(|i| (v[i], -d.input(k, i))).collect();
        terms.extend((0..s).map(|r| (u[r], d.output(k, r))));
        terms.push((b_k, 1.0));
        model.add_constraint(format!("hyp_{k}"), terms, ConstraintSense::Eq, 0.0);

        let lam_k = model.add_nonneg(format!("lamsum_{k}"));
        let mut sum_terms = vec![(lam_k, 1.0)];
        sum_terms.extend(lam[kp].iter().map(|&v| (v, -1.0)));
        model.add_constraint(format!("lamsum_def_{k}"), sum_terms, ConstraintSense::Eq, 0.0);
        pairs.push((lam_k, b_k));
    }

    let caps = match cfg.complementarity {
        ComplementarityMode::Sos1 => None,
        ComplementarityMode::BigM => Some(bigm_caps(d, e_set, cfg)),
    };
    model.encode_complementarity(&pairs, cfg.complementarity, caps.as_deref())?;

    Ok(FrontierVars {
        scope,
        lam,
        dist,
        v,
        u,
    })
}

/// Caps for big-M complementarity: an aggregate intensity never needs to
/// exceed n times the largest output ratio between any DMU and any member
/// of E, and an offset b_k is bounded by the capped weights against unit
/// k's inputs. Both are heuristically safe, not proven; the post-solve
/// checks guard them.
fn bigm_caps(d: &Dataset, e_set: &[usize], cfg: &SelectionConfig) -> Vec<(f64, f64)> {
    let mut ratio = 1.0f64;
    for r in 0..d.num_outputs() {
        for j in 0..d.n() {
            for &k in e_set {
                ratio = ratio.max(d.output(j, r) / d.output(k, r));
            }
        }
    }
    let cap_lambda = 2.0 * d.n() as f64 * ratio;
    e_set
        .iter()
        .map(|&k| {
            let cap_b = cfg.weight_cap * (0..d.num_inputs()).map(|i| d.input(k, i)).sum::<f64>();
            (cap_lambda, cap_b)
        })
        .collect()
}

fn solve_model(
    model: &ModelSpec,
    cfg: &SelectionConfig,
) -> Result<Solution, SelectionError> {
    if let Some(dir) = &cfg.lp_dump {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{}.lp", model.name)), model.to_lp_format())?;
    }
    let sol = model.solve(&cfg.solver).map_err(|source| SelectionError::Solver {
        model: model.name.clone(),
        source,
    })?;
    if sol.status != SolveStatus::Optimal {
        return Err(SelectionError::UnexpectedStatus {
            model: model.name.clone(),
            status: sol.status,
        });
    }
    Ok(sol)
}

/// Recompute a scope DMU's target from its intensities in the solution.
fn decode_target(
    d: &Dataset,
    e_set: &[usize],
    vars: &FrontierVars,
    sol: &Solution,
    sp: usize,
) -> TargetPoint {
    let (m, s) = (d.num_inputs(), d.num_outputs());
    let mut inputs = vec![0.0; m];
    let mut outputs = vec![0.0; s];
    let mut intensities = Vec::new();
    for (kp, &k) in e_set.iter().enumerate() {
        let lam = sol.value(vars.lam[kp][sp]);
        if lam > 0.0 {
            intensities.push((k, lam));
            for (i, x) in inputs.iter_mut().enumerate() {
                *x += lam * d.input(k, i);
            }
            for (r, y) in outputs.iter_mut().enumerate() {
                *y += lam * d.output(k, r);
            }
        }
    }
    TargetPoint {
        inputs,
        outputs,
        intensities,
    }
}

fn own_data_target(d: &Dataset, j: usize) -> TargetPoint {
    TargetPoint {
        inputs: d.records[j].inputs.clone(),
        outputs: d.records[j].outputs.clone(),
        intensities: vec![(j, 1.0)],
    }
}

fn certificate_from(
    d: &Dataset,
    e_set: &[usize],
    vars: &FrontierVars,
    sol: &Solution,
) -> HyperplaneCertificate {
    let v: Vec<f64> = vars.v.iter().map(|&x| sol.value(x)).collect();
    let u: Vec<f64> = vars.u.iter().map(|&x| sol.value(x)).collect();
    HyperplaneCertificate::from_solution(d, e_set, &v, &u)
}

/// Step 1: select the common reference set by solving the first-step
/// model over all DMUs.
pub fn select_first(
    d: &Dataset,
    e_set: &[usize],
    cfg: &SelectionConfig,
) -> Result<(StepRecord, Vec<f64>), SelectionError> {
    let mut model = ModelSpec::new("step_1");
    let vars = build_frontier_core(&mut model, d, e_set, (0..d.n()).collect(), cfg)
        .map_err(|source| SelectionError::Solver {
            model: "step_1".into(),
            source,
        })?;
    model.set_objective(
        ObjSense::Minimize,
        vars.dist.iter().map(|&v| (v, 1.0)).collect(),
    );
    let sol = solve_model(&model, cfg)?;

    let distances: Vec<f64> = vars.dist.iter().map(|&v| sol.value(v)).collect();
    let targets: Vec<TargetPoint> = (0..d.n())
        .map(|sp| decode_target(d, e_set, &vars, &sol, sp))
        .collect();
    let members: Vec<usize> = e_set
        .iter()
        .enumerate()
        .filter(|&(kp, _)| {
            vars.scope
                .iter()
                .enumerate()
                .any(|(sp, _)| sol.value(vars.lam[kp][sp]) > cfg.eps_lambda)
        })
        .map(|(_, &k)| k)
        .collect();
    let certificate = certificate_from(d, e_set, &vars, &sol);
    let record = StepRecord {
        reference_set: ReferenceSet {
            step: 1,
            members,
            certificate,
        },
        targets,
        distances: distances.clone(),
        objective: sol.objective,
    };
    Ok((record, distances))
}

/// Result of one later selection step.
pub enum StepOutcome {
    /// A new reference set strictly improved some DMU's evaluation.
    Selected {
        record: StepRecord,
        /// Updated best distances, all n DMUs.
        best_distances: Vec<f64>,
    },
    /// The objective matched the previous step within the stop tolerance.
    Stop { objective: f64 },
}

/// Step a >= 2: solve the simplified step model over the DMUs not yet in
/// the pool and decide membership of the new reference set.
pub fn select_next(
    d: &Dataset,
    e_set: &[usize],
    delta_prev: &[f64],
    pool: &BTreeSet<usize>,
    big_m: f64,
    step: usize,
    cfg: &SelectionConfig,
) -> Result<StepOutcome, SelectionError> {
    let name = format!("step_{step}");
    let scope: Vec<usize> = (0..d.n()).filter(|j| !pool.contains(j)).collect();
    let d_prev: f64 = scope.iter().map(|&j| delta_prev[j]).sum();

    let mut model = ModelSpec::new(name.clone());
    let vars = build_frontier_core(&mut model, d, e_set, scope, cfg).map_err(|source| {
        SelectionError::Solver {
            model: name.clone(),
            source,
        }
    })?;
    let mut deltas = Vec::with_capacity(vars.scope.len());
    for (sp, &j) in vars.scope.iter().enumerate() {
        let delta = model.add_nonneg(format!("delta_{j}"));
        let ind = model.add_var(format!("ind_{j}"), 0.0, 1.0, VarKind::Binary);
        // delta_prev[j] <= delta + M * ind
        model.add_constraint(
            format!("keep_{j}"),
            vec![(delta, 1.0), (ind, big_m)],
            ConstraintSense::Ge,
            delta_prev[j],
        );
        // d_j <= delta + M * (1 - ind)
        model.add_constraint(
            format!("switch_{j}"),
            vec![(vars.dist[sp], 1.0), (delta, -1.0), (ind, big_m)],
            ConstraintSense::Le,
            big_m,
        );
        deltas.push(delta);
    }
    model.set_objective(
        ObjSense::Minimize,
        deltas.iter().map(|&v| (v, 1.0)).collect(),
    );
    let sol = solve_model(&model, cfg)?;

    let improvement = d_prev - sol.objective;
    if improvement <= cfg.eps_stop {
        return Ok(StepOutcome::Stop {
            objective: sol.objective,
        });
    }

    // Strictly improved DMUs whose step distance realizes their new best.
    let eq_tol = cfg.solver.feasibility_tol;
    let mut improvers = Vec::new();
    for (sp, &j) in vars.scope.iter().enumerate() {
        let d_j = sol.value(vars.dist[sp]);
        let delta_j = sol.value(deltas[sp]);
        if delta_prev[j] - d_j > cfg.eps_improve && (delta_j - d_j).abs() <= eq_tol {
            improvers.push(sp);
        }
    }
    let members: Vec<usize> = e_set
        .iter()
        .enumerate()
        .filter(|&(kp, _)| {
            improvers
                .iter()
                .any(|&sp| sol.value(vars.lam[kp][sp]) > cfg.eps_lambda)
        })
        .map(|(_, &k)| k)
        .collect();
    if members.is_empty() {
        return Err(SelectionError::ToleranceInconsistency { step, improvement });
    }

    let mut best_distances = delta_prev.to_vec();
    let mut distances = vec![0.0; d.n()];
    let mut targets: Vec<TargetPoint> = (0..d.n()).map(|j| own_data_target(d, j)).collect();
    for (sp, &j) in vars.scope.iter().enumerate() {
        best_distances[j] = sol.value(deltas[sp]);
        distances[j] = sol.value(vars.dist[sp]);
        targets[j] = decode_target(d, e_set, &vars, &sol, sp);
    }
    let certificate = certificate_from(d, e_set, &vars, &sol);
    Ok(StepOutcome::Selected {
        record: StepRecord {
            reference_set: ReferenceSet {
                step,
                members,
                certificate,
            },
            targets,
            distances,
            objective: sol.objective,
        },
        best_distances,
    })
}

/// The unsimplified step model, kept behind this verification entry point
/// to confirm on small instances that the simplification is exact. It
/// carries one binary per DMU and step, plus the recorded per-step
/// distances of all earlier steps, and returns the optimal objective.
pub fn solve_unsimplified_step(
    d: &Dataset,
    e_set: &[usize],
    prior_distances: &[Vec<f64>],
    big_m: f64,
    cfg: &SelectionConfig,
) -> Result<f64, SelectionError> {
    let a = prior_distances.len() + 1;
    let name = format!("step_{a}_unsimplified");
    let mut model = ModelSpec::new(name.clone());
    let vars = build_frontier_core(&mut model, d, e_set, (0..d.n()).collect(), cfg).map_err(
        |source| SelectionError::Solver {
            model: name.clone(),
            source,
        },
    )?;
    let mut deltas = Vec::with_capacity(d.n());
    for (sp, &j) in vars.scope.iter().enumerate() {
        let delta = model.add_nonneg(format!("delta_{j}"));
        let mut indicators = Vec::with_capacity(a);
        for (h, dstar) in prior_distances.iter().enumerate() {
            let ind = model.add_var(format!("ind_{j}_{h}"), 0.0, 1.0, VarKind::Binary);
            // d_j^{h*} <= delta + M * ind_h
            model.add_constraint(
                format!("prev_{j}_{h}"),
                vec![(delta, 1.0), (ind, big_m)],
                ConstraintSense::Ge,
                dstar[j],
            );
            indicators.push(ind);
        }
        let ind_a = model.add_var(format!("ind_{j}_new"), 0.0, 1.0, VarKind::Binary);
        // d_j^a <= delta + M * ind_a
        model.add_constraint(
            format!("new_{j}"),
            vec![(vars.dist[sp], 1.0), (delta, -1.0), (ind_a, -big_m)],
            ConstraintSense::Le,
            0.0,
        );
        indicators.push(ind_a);
        model.add_constraint(
            format!("pick_{j}"),
            indicators.iter().map(|&v| (v, 1.0)).collect(),
            ConstraintSense::Le,
            a as f64 - 1.0,
        );
        deltas.push(delta);
    }
    model.set_objective(
        ObjSense::Minimize,
        deltas.iter().map(|&v| (v, 1.0)).collect(),
    );
    let sol = solve_model(&model, cfg)?;
    Ok(sol.objective)
}

/// Run the whole selection algorithm: classify, select the first set,
/// then add one set per step until the stop rule fires or `max_steps` is
/// reached.
pub fn run_selection(d: &Dataset, cfg: &SelectionConfig) -> Result<SelectionState, SelectionError> {
    let classification = extreme_efficient_set(d, &cfg.solver)?;
    let e_set = classification.extreme_set.clone();
    let big_m = compute_big_m(d, &e_set);

    let (first, best) = select_first(d, &e_set, cfg)?;
    validate_step(d, &first, 1, cfg)?;
    let mut pool: BTreeSet<usize> = first.reference_set.members.iter().copied().collect();
    let mut objectives = vec![first.objective];
    let mut steps = vec![first];
    let mut best_distances = best;
    let mut stop_objective = None;
    let mut converged = false;

    for step in 2..=cfg.max_steps {
        match select_next(d, &e_set, &best_distances, &pool, big_m, step, cfg)? {
            StepOutcome::Stop { objective } => {
                stop_objective = Some(objective);
                converged = true;
                break;
            }
            StepOutcome::Selected {
                record,
                best_distances: updated,
            } => {
                validate_step(d, &record, step, cfg)?;
                pool.extend(record.reference_set.members.iter().copied());
                objectives.push(record.objective);
                best_distances = updated;
                steps.push(record);
            }
        }
    }

    let mut repeated_sets = Vec::new();
    for a in 1..steps.len() {
        for h in 0..a {
            if steps[h].reference_set.members == steps[a].reference_set.members {
                repeated_sets.push((h + 1, a + 1));
            }
        }
    }

    Ok(SelectionState {
        classification,
        big_m,
        steps,
        best_distances,
        objectives,
        stop_objective,
        converged,
        repeated_sets,
    })
}

fn validate_step(
    d: &Dataset,
    record: &StepRecord,
    step: usize,
    cfg: &SelectionConfig,
) -> Result<(), SelectionError> {
    if record.reference_set.members.is_empty() {
        return Err(SelectionError::Certificate {
            step,
            reason: "reference set is empty".into(),
        });
    }
    record
        .reference_set
        .certificate
        .validate(d, &record.reference_set.members, cfg.solver.feasibility_tol)
        .map_err(|reason| SelectionError::Certificate { step, reason })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two adjacent facets in input space: extreme units A, B, C on the
    /// unit isoquant plus an interior unit Z. Hand-worked geometry: the
    /// cheapest common face costs 2.0 in total distance, a second face
    /// recovers everything except Z's irreducible 0.75.
    pub(crate) const THREE_FACETS: &str =
        "dmu,in:x1,in:x2,out:y\nA,1,4,1\nB,2,2,1\nC,4,1,1\nZ,4,4,1\n";

    fn parse(text: &str) -> Dataset {
        Dataset::parse_csv(text).unwrap()
    }

    fn cfg() -> SelectionConfig {
        SelectionConfig::default()
    }

    #[test]
    fn distance_identity_is_zero() {
        let d = parse(THREE_FACETS);
        let rec = &d.records[0];
        let dist = weighted_l1_distance(rec, &rec.inputs, &rec.outputs).unwrap();
        assert_eq!(dist, 0.0);
    }

    #[test]
    fn distance_matches_table_arithmetic() {
        // Actual row and first-face target of NIPPON: the componentwise
        // ratios are 0.7204 + 0.3152 + 0.3771 + 0.3072 + 0 + 0.
        let actual = DmuRecord {
            id: "NIPPON".into(),
            inputs: vec![12222.0, 860.0, 2008.0, 6074.0],
            outputs: vec![35261.0, 614.0],
        };
        let tx = [21026.7, 588.9, 1250.8, 4207.8];
        let ty = [35261.0, 614.0];
        let dist = weighted_l1_distance(&actual, &tx, &ty).unwrap();
        let expected = (21026.7 - 12222.0) / 12222.0
            + (860.0 - 588.9) / 860.0
            + (2008.0 - 1250.8) / 2008.0
            + (6074.0 - 4207.8) / 6074.0;
        assert!((dist - expected).abs() < 1e-12);
        assert!((dist - 1.7199).abs() < 1e-4);
    }

    #[test]
    fn distance_is_invariant_to_common_scaling() {
        let actual = DmuRecord {
            id: "u".into(),
            inputs: vec![4.0, 9.0],
            outputs: vec![2.0],
        };
        let base = weighted_l1_distance(&actual, &[3.0, 9.0], &[2.5]).unwrap();
        let doubled = DmuRecord {
            id: "u".into(),
            inputs: vec![8.0, 9.0],
            outputs: vec![2.0],
        };
        let scaled = weighted_l1_distance(&doubled, &[6.0, 9.0], &[2.5]).unwrap();
        assert!((base - scaled).abs() < 1e-12);
    }

    #[test]
    fn distance_rejects_dimension_mismatch() {
        let actual = DmuRecord {
            id: "u".into(),
            inputs: vec![1.0],
            outputs: vec![1.0],
        };
        assert!(matches!(
            weighted_l1_distance(&actual, &[1.0, 2.0], &[1.0]),
            Err(SelectionError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn big_m_trivial_cases() {
        let single = parse("dmu,in:x,out:y\nonly,3,4\n");
        assert_eq!(compute_big_m(&single, &[0]), 0.0);

        let twins = parse("dmu,in:x,out:y\nt1,2,3\nt2,2,3\n");
        assert_eq!(compute_big_m(&twins, &[0, 1]), 0.0);
    }

    #[test]
    fn big_m_matches_double_loop() {
        let d = parse(THREE_FACETS);
        let e = vec![0, 1, 2];
        // Direct evaluation of the max-distance formula.
        let mut expected = 0.0f64;
        for &k in &e {
            for j in 0..d.n() {
                let mut dist = 0.0;
                for i in 0..d.num_inputs() {
                    dist += (d.input(j, i) - d.input(k, i)).abs() / d.input(j, i);
                }
                for r in 0..d.num_outputs() {
                    dist += (d.output(j, r) - d.output(k, r)).abs() / d.output(j, r);
                }
                expected = expected.max(dist);
            }
        }
        assert!((compute_big_m(&d, &e) - expected).abs() < 1e-12);
        assert!((expected - 3.75).abs() < 1e-12);
    }

    #[test]
    fn first_step_on_two_facet_instance() {
        let d = parse(THREE_FACETS);
        let e = vec![0, 1, 2];
        let (record, best) = select_first(&d, &e, &cfg()).unwrap();
        assert!((record.objective - 2.0).abs() < 1e-6, "{}", record.objective);
        // The optimum is attained on either adjacent facet.
        let members = &record.reference_set.members;
        assert!(
            *members == vec![0, 1] || *members == vec![1, 2],
            "unexpected members {members:?}"
        );
        // Members project onto themselves.
        for &k in members {
            assert!(record.distances[k].abs() < 1e-7);
            assert!(best[k].abs() < 1e-7);
        }
        record
            .reference_set
            .certificate
            .validate(&d, members, 1e-6)
            .unwrap();
    }

    #[test]
    fn single_unit_selects_itself() {
        let d = parse("dmu,in:x,out:y\nonly,3,4\n");
        let state = run_selection(&d, &cfg()).unwrap();
        assert_eq!(state.steps.len(), 1);
        assert_eq!(state.steps[0].reference_set.members, vec![0]);
        assert!(state.objectives[0].abs() < 1e-9);
        assert!(state.converged);
    }

    #[test]
    fn one_ray_dataset_stops_after_first_step() {
        // Every unit sits on the same ray: one face covers everything.
        let d = parse("dmu,in:x,out:y\nu,1,2\nv,2,4\nw,3,6\n");
        let state = run_selection(&d, &cfg()).unwrap();
        assert_eq!(state.steps.len(), 1);
        assert!(state.objectives[0].abs() < 1e-9);
        assert!(state.converged);
        assert!(state.stop_objective.is_some());
    }

    #[test]
    fn full_run_on_two_facet_instance() {
        let d = parse(THREE_FACETS);
        let state = run_selection(&d, &cfg()).unwrap();
        assert_eq!(state.objectives.len(), 2);
        assert!((state.objectives[0] - 2.0).abs() < 1e-6);
        assert!((state.objectives[1] - 0.75).abs() < 1e-6);
        assert!(state.converged);
        // The two faces together cover all three extreme units.
        let pool = state.pool();
        assert_eq!(pool.into_iter().collect::<Vec<_>>(), vec![0, 1, 2]);
        // Final best distances: everything except Z is on a selected face.
        for j in 0..3 {
            assert!(state.best_distances[j].abs() < 1e-7);
        }
        assert!((state.best_distances[3] - 0.75).abs() < 1e-6);
        // Recorded distances reproduce the running minimum.
        for j in 0..d.n() {
            let min_d = state
                .steps
                .iter()
                .map(|s| s.distances[j])
                .fold(f64::INFINITY, f64::min);
            assert!((state.best_distances[j] - min_d).abs() < 1e-6);
        }
    }

    #[test]
    fn big_m_mode_reproduces_objectives() {
        let d = parse(THREE_FACETS);
        let mut big = cfg();
        big.complementarity = ComplementarityMode::BigM;
        let sos = run_selection(&d, &cfg()).unwrap();
        let bigm = run_selection(&d, &big).unwrap();
        assert_eq!(sos.objectives.len(), bigm.objectives.len());
        for (a, b) in sos.objectives.iter().zip(&bigm.objectives) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn oversized_big_m_leaves_step_objective_unchanged() {
        let d = parse(THREE_FACETS);
        let e = vec![0, 1, 2];
        let c = cfg();
        let (first, best) = select_first(&d, &e, &c).unwrap();
        let pool: BTreeSet<usize> = first.reference_set.members.iter().copied().collect();
        let m = compute_big_m(&d, &e);
        let obj = |mult: f64| match select_next(&d, &e, &best, &pool, m * mult, 2, &c).unwrap() {
            StepOutcome::Selected { record, .. } => record.objective,
            StepOutcome::Stop { objective } => objective,
        };
        assert!((obj(1.0) - obj(10.0)).abs() < 1e-6);
    }
}
