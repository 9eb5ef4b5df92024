//! Efficiency classification under constant returns to scale.
//!
//! Two notions are computed here. A DMU is *Pareto-efficient* when the CRS
//! additive model finds no feasible slack improvement: maximizing total
//! slacks over `X lambda + s_in = X_j`, `Y lambda - s_out = Y_j` yields an
//! optimum of zero. It is *extreme-efficient* when, additionally, it cannot
//! be reproduced as a nonnegative combination of the other Pareto-efficient
//! units. The extreme-efficient set E indexes every frontier model
//! downstream.
//!
//! Exact ray duplicates (units proportional under CRS) are broken by
//! dataset order: the first occurrence stays eligible for E, later copies
//! are classified non-extreme.

use thiserror::Error;

use crate::dataset::Dataset;
use crate::milp::{
    ConstraintSense, MilpError, ModelSpec, ObjSense, SolveStatus, SolverConfig,
};

/// Tolerance on the additive-model optimum below which a DMU counts as
/// Pareto-efficient.
pub const ADDITIVE_TOL: f64 = 1e-7;

/// Relative tolerance for detecting ray duplicates.
const RAY_DUP_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EfficiencyError {
    #[error("solver failure while classifying {dmu:?}: {source}")]
    Solver {
        dmu: String,
        #[source]
        source: MilpError,
    },
    #[error("unexpected status {status:?} while classifying {dmu:?}")]
    UnexpectedStatus { dmu: String, status: SolveStatus },
}

/// Per-DMU efficiency flags plus the ordered extreme-efficient index set E.
#[derive(Debug, Clone)]
pub struct EfficiencyClassification {
    pub pareto: Vec<bool>,
    pub extreme: Vec<bool>,
    /// Indices of the extreme-efficient DMUs, in dataset order.
    pub extreme_set: Vec<usize>,
}

impl EfficiencyClassification {
    pub fn extreme_ids<'a>(&self, d: &'a Dataset) -> Vec<&'a str> {
        self.extreme_set.iter().map(|&k| d.id(k)).collect()
    }
}

/// True iff the CRS additive model for `DMU_j` has optimum zero: no
/// nonnegative combination of the observed units dominates it with slack.
pub fn pareto_efficient(
    d: &Dataset,
    j: usize,
    solver: &SolverConfig,
) -> Result<bool, EfficiencyError> {
    let (m, s, n) = (d.num_inputs(), d.num_outputs(), d.n());
    let mut model = ModelSpec::new(format!("additive_{}", d.id(j)));
    let lambdas: Vec<_> = (0..n).map(|k| model.add_nonneg(format!("lam_{k}"))).collect();
    let slacks_in: Vec<_> = (0..m).map(|i| model.add_nonneg(format!("sin_{i}"))).collect();
    let slacks_out: Vec<_> = (0..s).map(|r| model.add_nonneg(format!("sout_{r}"))).collect();

    for i in 0..m {
        let mut terms: Vec<_> = (0..n).map(|k| (lambdas[k], d.input(k, i))).collect();
        terms.push((slacks_in[i], 1.0));
        model.add_constraint(format!("in_{i}"), terms, ConstraintSense::Eq, d.input(j, i));
    }
    for r in 0..s {
        let mut terms: Vec<_> = (0..n).map(|k| (lambdas[k], d.output(k, r))).collect();
        terms.push((slacks_out[r], -1.0));
        model.add_constraint(format!("out_{r}"), terms, ConstraintSense::Eq, d.output(j, r));
    }
    let obj = slacks_in
        .iter()
        .chain(slacks_out.iter())
        .map(|&v| (v, 1.0))
        .collect();
    model.set_objective(ObjSense::Maximize, obj);

    let sol = model.solve(solver).map_err(|source| EfficiencyError::Solver {
        dmu: d.id(j).to_string(),
        source,
    })?;
    if sol.status != SolveStatus::Optimal {
        return Err(EfficiencyError::UnexpectedStatus {
            dmu: d.id(j).to_string(),
            status: sol.status,
        });
    }
    Ok(sol.objective <= ADDITIVE_TOL)
}

/// Classify every DMU and assemble the extreme-efficient set E.
///
/// A Pareto-efficient `DMU_k` is extreme iff the system
/// `sum lambda_j X_j <= X_k`, `sum lambda_j Y_j >= Y_k` over the other
/// Pareto-efficient units is infeasible (it cannot be reproduced by the
/// others).
pub fn extreme_efficient_set(
    d: &Dataset,
    solver: &SolverConfig,
) -> Result<EfficiencyClassification, EfficiencyError> {
    let n = d.n();
    let mut pareto = vec![false; n];
    for j in 0..n {
        pareto[j] = pareto_efficient(d, j, solver)?;
    }
    let pareto_idx: Vec<usize> = (0..n).filter(|&j| pareto[j]).collect();

    let mut extreme = vec![false; n];
    for &k in &pareto_idx {
        let generators: Vec<usize> = pareto_idx
            .iter()
            .copied()
            .filter(|&j| j != k && !(j > k && is_ray_duplicate(d, j, k)))
            .collect();
        extreme[k] = !reproducible(d, k, &generators, solver)?;
    }
    let extreme_set = (0..n).filter(|&j| extreme[j]).collect();
    Ok(EfficiencyClassification {
        pareto,
        extreme,
        extreme_set,
    })
}

/// Feasibility of reproducing `DMU_k` from `generators`:
/// `sum lambda_j X_j <= X_k` and `sum lambda_j Y_j >= Y_k`, lambda >= 0.
fn reproducible(
    d: &Dataset,
    k: usize,
    generators: &[usize],
    solver: &SolverConfig,
) -> Result<bool, EfficiencyError> {
    if generators.is_empty() {
        // Outputs are strictly positive, so the empty combination fails.
        return Ok(false);
    }
    let mut model = ModelSpec::new(format!("exclusion_{}", d.id(k)));
    let lambdas: Vec<_> = generators
        .iter()
        .map(|&j| model.add_nonneg(format!("lam_{j}")))
        .collect();
    for i in 0..d.num_inputs() {
        let terms = generators
            .iter()
            .zip(&lambdas)
            .map(|(&j, &v)| (v, d.input(j, i)))
            .collect();
        model.add_constraint(format!("in_{i}"), terms, ConstraintSense::Le, d.input(k, i));
    }
    for r in 0..d.num_outputs() {
        let terms = generators
            .iter()
            .zip(&lambdas)
            .map(|(&j, &v)| (v, d.output(j, r)))
            .collect();
        model.add_constraint(format!("out_{r}"), terms, ConstraintSense::Ge, d.output(k, r));
    }
    model.set_objective(ObjSense::Minimize, vec![(lambdas[0], 0.0)]);
    let sol = model.solve(solver).map_err(|source| EfficiencyError::Solver {
        dmu: d.id(k).to_string(),
        source,
    })?;
    match sol.status {
        SolveStatus::Optimal => Ok(true),
        SolveStatus::Infeasible => Ok(false),
        status => Err(EfficiencyError::UnexpectedStatus {
            dmu: d.id(k).to_string(),
            status,
        }),
    }
}

/// Feasibility of expressing `DMU_j` exactly as a nonnegative combination
/// of `members`. Used to verify that the Pareto-efficient units lie in the
/// cone spanned by E.
pub fn is_combination_of(
    d: &Dataset,
    j: usize,
    members: &[usize],
    solver: &SolverConfig,
) -> Result<bool, EfficiencyError> {
    if members.is_empty() {
        return Ok(false);
    }
    let mut model = ModelSpec::new(format!("combo_{}", d.id(j)));
    let lambdas: Vec<_> = members
        .iter()
        .map(|&k| model.add_nonneg(format!("lam_{k}")))
        .collect();
    for i in 0..d.num_inputs() {
        let terms = members
            .iter()
            .zip(&lambdas)
            .map(|(&k, &v)| (v, d.input(k, i)))
            .collect();
        model.add_constraint(format!("in_{i}"), terms, ConstraintSense::Eq, d.input(j, i));
    }
    for r in 0..d.num_outputs() {
        let terms = members
            .iter()
            .zip(&lambdas)
            .map(|(&k, &v)| (v, d.output(k, r)))
            .collect();
        model.add_constraint(format!("out_{r}"), terms, ConstraintSense::Eq, d.output(j, r));
    }
    model.set_objective(ObjSense::Minimize, vec![(lambdas[0], 0.0)]);
    let sol = model.solve(solver).map_err(|source| EfficiencyError::Solver {
        dmu: d.id(j).to_string(),
        source,
    })?;
    Ok(sol.status == SolveStatus::Optimal)
}

fn is_ray_duplicate(d: &Dataset, a: usize, b: usize) -> bool {
    let alpha = d.input(a, 0) / d.input(b, 0);
    let close = |x: f64, y: f64| (x - y).abs() <= RAY_DUP_TOL * x.abs().max(y.abs());
    (0..d.num_inputs()).all(|i| close(d.input(a, i), alpha * d.input(b, i)))
        && (0..d.num_outputs()).all(|r| close(d.output(a, r), alpha * d.output(b, r)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solver() -> SolverConfig {
        SolverConfig::default()
    }

    fn parse(text: &str) -> Dataset {
        Dataset::parse_csv(text).unwrap()
    }

    #[test]
    fn dominated_unit_is_inefficient() {
        // b is strictly dominated: more input, less output.
        let d = parse("dmu,in:x,out:y\na,1,2\nb,2,1\n");
        assert!(pareto_efficient(&d, 0, &solver()).unwrap());
        assert!(!pareto_efficient(&d, 1, &solver()).unwrap());
        let cls = extreme_efficient_set(&d, &solver()).unwrap();
        assert_eq!(cls.extreme_set, vec![0]);
    }

    #[test]
    fn single_unit_is_extreme() {
        let d = parse("dmu,in:x,out:y\nonly,3,4\n");
        let cls = extreme_efficient_set(&d, &solver()).unwrap();
        assert_eq!(cls.pareto, vec![true]);
        assert_eq!(cls.extreme_set, vec![0]);
    }

    #[test]
    fn coincident_rays_keep_first_occurrence() {
        // (1,2) and (2,4) span the same ray under CRS: exactly one extreme
        // unit, the first in dataset order.
        let d = parse("dmu,in:x,out:y\nu,1,2\nv,2,4\n");
        let cls = extreme_efficient_set(&d, &solver()).unwrap();
        assert!(cls.pareto[0] && cls.pareto[1]);
        assert_eq!(cls.extreme_set, vec![0]);
    }

    #[test]
    fn identical_twins_keep_first_occurrence() {
        let d = parse("dmu,in:x,in:w,out:y\nt1,1,2,1\nt2,1,2,1\nother,2,1,1\n");
        let cls = extreme_efficient_set(&d, &solver()).unwrap();
        assert!(cls.extreme[0]);
        assert!(!cls.extreme[1]);
        assert!(cls.extreme[2]);
    }

    #[test]
    fn adjacent_facet_vertices_are_all_extreme() {
        // Three vertices of a two-facet isoquant plus one interior unit.
        let d = parse("dmu,in:x1,in:x2,out:y\nA,1,4,1\nB,2,2,1\nC,4,1,1\nZ,4,4,1\n");
        let cls = extreme_efficient_set(&d, &solver()).unwrap();
        assert_eq!(cls.extreme_set, vec![0, 1, 2]);
        assert!(!cls.pareto[3]);
    }

    #[test]
    fn efficient_units_lie_in_cone_of_extreme_set() {
        // A Pareto-efficient unit that is a midpoint of two extremes is
        // efficient but not extreme, and must be reproducible from E.
        let d = parse("dmu,in:x1,in:x2,out:y\nA,1,4,1\nB,2,2,1\nM,1.5,3,1\n");
        let cls = extreme_efficient_set(&d, &solver()).unwrap();
        assert!(cls.pareto[2]);
        assert!(!cls.extreme[2]);
        assert_eq!(cls.extreme_set, vec![0, 1]);
        assert!(is_combination_of(&d, 2, &cls.extreme_set, &solver()).unwrap());
    }

    #[test]
    fn extreme_set_is_scale_invariant() {
        let d = parse("dmu,in:x1,in:x2,out:y\nA,1,4,1\nB,2,2,1\nC,4,1,1\nZ,4,4,1\n");
        let scaled = d.rescale(&[1000.0, 0.01, 7.0]).unwrap();
        let a = extreme_efficient_set(&d, &solver()).unwrap();
        let b = extreme_efficient_set(&scaled, &solver()).unwrap();
        assert_eq!(a.extreme_set, b.extreme_set);
        assert_eq!(a.pareto, b.pareto);
    }
}
