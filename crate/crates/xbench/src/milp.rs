//! Solver-agnostic construction and solution of linear and mixed-integer
//! linear programs.
//!
//! A [`ModelSpec`] is built variable by variable and constraint by
//! constraint, then handed to [`ModelSpec::solve`], which drives the HiGHS
//! backend. Two devices used throughout the benchmarking models live here:
//!
//! - [`ModelSpec::add_abs_deviation`] splits a linear expression into the
//!   difference of two non-negative variables so that its weighted absolute
//!   value can enter an objective or a distance row.
//! - [`ModelSpec::encode_complementarity`] enforces pairwise
//!   complementarity (at most one of the two variables nonzero), either as
//!   SOS1 groups resolved by branching, or as a big-M reformulation with
//!   explicit caps.
//!
//! HiGHS exposes no SOS sets through its C API, so SOS1 groups are resolved
//! by a deterministic branch-and-bound layer in this module: each node
//! relaxes the remaining groups and is solved by the backend to proven
//! optimality; branching fixes one side of a violated group to zero.
//! Every optimal solution is re-checked against the original spec
//! independently of the backend before it is returned.

use std::collections::HashMap;
use std::fmt;
use std::ops::Bound;
use std::time::{Duration, Instant};

use highs::{ColProblem, HighsModelStatus, Sense as HighsSense};
use thiserror::Error;

/// Handle to a variable of one [`ModelSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone)]
pub struct VarDef {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintSense {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for ConstraintSense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintSense::Le => write!(f, "<="),
            ConstraintSense::Eq => write!(f, "="),
            ConstraintSense::Ge => write!(f, ">="),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RowDef {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: ConstraintSense,
    pub rhs: f64,
}

/// A set of variables of which at most one may be nonzero.
#[derive(Debug, Clone)]
pub struct Sos1Group {
    pub name: String,
    pub vars: Vec<VarId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjSense {
    Minimize,
    Maximize,
}

/// A linear expression `sum(coef * var) + constant`.
#[derive(Debug, Clone, Default)]
pub struct LinExpr {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn term(mut self, var: VarId, coef: f64) -> Self {
        self.terms.push((var, coef));
        self
    }

    pub fn constant(mut self, c: f64) -> Self {
        self.constant = c;
        self
    }
}

/// Handle returned by [`ModelSpec::add_abs_deviation`]: the expression
/// equals `pos - neg`, and `weight * (pos + neg)` is its weighted absolute
/// value at any vertex optimum.
#[derive(Debug, Clone, Copy)]
pub struct AbsDeviation {
    pub pos: VarId,
    pub neg: VarId,
    pub weight: f64,
}

impl AbsDeviation {
    /// The two terms `weight*pos + weight*neg` to register in a distance
    /// row or an objective.
    pub fn terms(&self) -> [(VarId, f64); 2] {
        [(self.pos, self.weight), (self.neg, self.weight)]
    }

    /// Weighted deviation evaluated on a solution.
    pub fn value(&self, sol: &Solution) -> f64 {
        self.weight * (sol.value(self.pos) + sol.value(self.neg))
    }
}

/// How complementarity pairs are enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComplementarityMode {
    /// Register each pair as an SOS1 group; resolved by branching without
    /// bounding either variable.
    Sos1,
    /// Add a binary switch per pair with explicit caps on both variables.
    /// An under-sized cap can cut the true optimum, so solutions are
    /// checked for binding caps after the solve.
    BigM,
}

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("model validation: {0}")]
    Invalid(String),
    #[error("big-M complementarity requires finite caps for every pair")]
    MissingCaps,
    #[error("backend failure: {0}")]
    Backend(String),
    #[error(
        "solution failed the independent feasibility re-check: {0} (tolerance {1:e})"
    )]
    FeasibilityCheck(String, f64),
    #[error(
        "complementarity violated at the reported optimum: {pair} has product {product:e} > {tol:e}; \
         if solved in big-M mode, increase the caps"
    )]
    ComplementarityViolated {
        pair: String,
        product: f64,
        tol: f64,
    },
    #[error(
        "big-M cap is binding at the optimum ({var} = {value} against cap {cap}); \
         the cap may be cutting the true optimum: increase it and re-solve"
    )]
    CapBinding { var: String, value: f64, cap: f64 },
}

/// Solver configuration shared by all models of a run.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Relative MIP optimality gap required from the backend.
    pub mip_rel_gap: f64,
    /// Absolute MIP optimality gap.
    pub mip_abs_gap: f64,
    /// Tolerance of the independent feasibility re-check, relative to each
    /// row's coefficient scale.
    pub feasibility_tol: f64,
    /// Wall-clock budget in seconds for one `solve` call (including all
    /// SOS1 branch-and-bound nodes).
    pub time_limit: Option<f64>,
    /// Backend random seed; fixed seed plus single-threaded solves make
    /// results reproducible.
    pub seed: i32,
    pub verbose: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mip_rel_gap: 1e-9,
            mip_abs_gap: 1e-9,
            feasibility_tol: 1e-6,
            time_limit: None,
            seed: 0,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    /// A limit was hit; the solution carries the best incumbent found.
    LimitHit,
}

#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    /// Nodes explored by the SOS1 branching layer (0 when no SOS1 groups).
    pub sos1_nodes: usize,
    /// Number of backend solves issued.
    pub backend_solves: usize,
    pub wall: Duration,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub objective: f64,
    values: Vec<f64>,
    pub stats: SolveStats,
}

impl Solution {
    pub fn value(&self, var: VarId) -> f64 {
        self.values[var.0]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Product threshold above which a relaxed SOS1 pair counts as violated and
/// forces a branch. Kept two orders of magnitude below the 1e-6 post-check
/// so branching always terminates before the check can fail.
const SOS_BRANCH_TOL: f64 = 1e-8;

/// Threshold of the post-solve complementarity product check.
const COMPLEMENTARITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Default)]
pub struct ModelSpec {
    pub name: String,
    vars: Vec<VarDef>,
    rows: Vec<RowDef>,
    sos1: Vec<Sos1Group>,
    objective: Vec<(VarId, f64)>,
    obj_sense: Option<ObjSense>,
    /// Pairs whose product is asserted `<= 1e-6` after every solve.
    compl_pairs: Vec<(VarId, VarId)>,
    /// Big-M caps to watch for binding values, `(var, cap)`.
    cap_watch: Vec<(VarId, f64)>,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>) -> Self {
        ModelSpec {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn var_name(&self, v: VarId) -> &str {
        &self.vars[v.0].name
    }

    pub fn add_var(&mut self, name: impl Into<String>, lb: f64, ub: f64, kind: VarKind) -> VarId {
        let (lb, ub) = match kind {
            VarKind::Binary => (0.0, 1.0),
            VarKind::Continuous => (lb, ub),
        };
        self.vars.push(VarDef {
            name: name.into(),
            lb,
            ub,
            kind,
        });
        VarId(self.vars.len() - 1)
    }

    /// Convenience: a continuous variable with lower bound 0.
    pub fn add_nonneg(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, 0.0, f64::INFINITY, VarKind::Continuous)
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        sense: ConstraintSense,
        rhs: f64,
    ) {
        self.rows.push(RowDef {
            name: name.into(),
            terms: merge_terms(terms),
            sense,
            rhs,
        });
    }

    pub fn add_sos1(&mut self, name: impl Into<String>, vars: Vec<VarId>) {
        self.sos1.push(Sos1Group {
            name: name.into(),
            vars,
        });
    }

    pub fn set_objective(&mut self, sense: ObjSense, terms: Vec<(VarId, f64)>) {
        self.obj_sense = Some(sense);
        self.objective = merge_terms(terms);
    }

    /// Introduce `pos, neg >= 0` with `expr = pos - neg`; the returned
    /// handle carries `weight * (pos + neg)`, the weighted absolute value of
    /// the expression at any vertex optimum (at most one of the two
    /// variables is positive there).
    pub fn add_abs_deviation(
        &mut self,
        name: &str,
        expr: LinExpr,
        weight: f64,
    ) -> Result<AbsDeviation, MilpError> {
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(MilpError::Invalid(format!(
                "abs-deviation weight must be a positive real, got {weight}"
            )));
        }
        let pos = self.add_nonneg(format!("{name}_p"));
        let neg = self.add_nonneg(format!("{name}_n"));
        let mut terms = expr.terms;
        terms.push((pos, -1.0));
        terms.push((neg, 1.0));
        // expr - pos + neg = 0  <=>  sum(terms) = -constant
        self.add_constraint(format!("{name}_split"), terms, ConstraintSense::Eq, -expr.constant);
        Ok(AbsDeviation { pos, neg, weight })
    }

    /// Enforce `a * b = 0` for every pair `(a, b)`.
    ///
    /// In big-M mode `caps` must supply finite positive upper bounds
    /// `(cap_a, cap_b)` per pair; a binary switch `z` is added with
    /// `a <= cap_a * z` and `b <= cap_b * (1 - z)`. In SOS1 mode the pair
    /// is registered as an SOS1 group and no bound is imposed.
    pub fn encode_complementarity(
        &mut self,
        pairs: &[(VarId, VarId)],
        mode: ComplementarityMode,
        caps: Option<&[(f64, f64)]>,
    ) -> Result<(), MilpError> {
        match mode {
            ComplementarityMode::Sos1 => {
                for (idx, &(a, b)) in pairs.iter().enumerate() {
                    self.add_sos1(format!("compl_{idx}"), vec![a, b]);
                    self.compl_pairs.push((a, b));
                }
            }
            ComplementarityMode::BigM => {
                let caps = caps.ok_or(MilpError::MissingCaps)?;
                if caps.len() != pairs.len() {
                    return Err(MilpError::MissingCaps);
                }
                for (idx, (&(a, b), &(cap_a, cap_b))) in pairs.iter().zip(caps).enumerate() {
                    if !(cap_a > 0.0 && cap_a.is_finite() && cap_b > 0.0 && cap_b.is_finite()) {
                        return Err(MilpError::MissingCaps);
                    }
                    let z = self.add_var(format!("compl_z_{idx}"), 0.0, 1.0, VarKind::Binary);
                    self.add_constraint(
                        format!("compl_a_{idx}"),
                        vec![(a, 1.0), (z, -cap_a)],
                        ConstraintSense::Le,
                        0.0,
                    );
                    self.add_constraint(
                        format!("compl_b_{idx}"),
                        vec![(b, 1.0), (z, cap_b)],
                        ConstraintSense::Le,
                        cap_b,
                    );
                    self.compl_pairs.push((a, b));
                    self.cap_watch.push((a, cap_a));
                    self.cap_watch.push((b, cap_b));
                }
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), MilpError> {
        let nv = self.vars.len();
        for v in &self.vars {
            if v.lb > v.ub {
                return Err(MilpError::Invalid(format!(
                    "variable {} has lb {} > ub {}",
                    v.name, v.lb, v.ub
                )));
            }
        }
        for row in &self.rows {
            if !row.rhs.is_finite() {
                return Err(MilpError::Invalid(format!(
                    "constraint {} has non-finite rhs",
                    row.name
                )));
            }
            for &(v, c) in &row.terms {
                if v.0 >= nv {
                    return Err(MilpError::Invalid(format!(
                        "constraint {} references undeclared variable #{}",
                        row.name, v.0
                    )));
                }
                if !c.is_finite() {
                    return Err(MilpError::Invalid(format!(
                        "constraint {} has non-finite coefficient on {}",
                        row.name,
                        self.vars[v.0].name
                    )));
                }
            }
        }
        for group in &self.sos1 {
            if group.vars.len() < 2 {
                return Err(MilpError::Invalid(format!(
                    "SOS1 group {} must list at least 2 variables",
                    group.name
                )));
            }
            for &v in &group.vars {
                if v.0 >= nv {
                    return Err(MilpError::Invalid(format!(
                        "SOS1 group {} references undeclared variable #{}",
                        group.name, v.0
                    )));
                }
                let def = &self.vars[v.0];
                if def.lb > 0.0 || def.ub < 0.0 {
                    return Err(MilpError::Invalid(format!(
                        "SOS1 member {} cannot take the value 0",
                        def.name
                    )));
                }
            }
        }
        for &(v, _) in &self.objective {
            if v.0 >= nv {
                return Err(MilpError::Invalid(format!(
                    "objective references undeclared variable #{}",
                    v.0
                )));
            }
        }
        if self.obj_sense.is_none() {
            return Err(MilpError::Invalid("objective not set".into()));
        }
        Ok(())
    }

    fn eval_objective(&self, values: &[f64]) -> f64 {
        self.objective.iter().map(|&(v, c)| c * values[v.0]).sum()
    }

    /// Solve to proven global optimality (within the configured gap).
    ///
    /// SOS1 groups are resolved by deterministic branching; everything else
    /// is handed to the backend as-is. Optimal solutions are re-checked
    /// against this spec independently of the backend.
    pub fn solve(&self, cfg: &SolverConfig) -> Result<Solution, MilpError> {
        self.validate()?;
        let t0 = Instant::now();

        if self.vars.is_empty() {
            // Degenerate spec: rows with no variables are plain conditions.
            for row in &self.rows {
                if !row_satisfied(0.0, row.sense, row.rhs, cfg.feasibility_tol, 1.0) {
                    return Ok(Solution {
                        status: SolveStatus::Infeasible,
                        objective: 0.0,
                        values: vec![],
                        stats: SolveStats {
                            wall: t0.elapsed(),
                            ..Default::default()
                        },
                    });
                }
            }
            return Ok(Solution {
                status: SolveStatus::Optimal,
                objective: 0.0,
                values: vec![],
                stats: SolveStats {
                    wall: t0.elapsed(),
                    ..Default::default()
                },
            });
        }

        let mut sol = if self.sos1.is_empty() {
            let mut stats = SolveStats::default();
            let outcome = self.backend_solve(cfg, &[], None, cfg.time_limit, &mut stats)?;
            let (status, values) = outcome;
            let objective = self.eval_objective(&values);
            stats.wall = t0.elapsed();
            Solution {
                status,
                objective,
                values,
                stats,
            }
        } else {
            self.solve_with_sos1(cfg, t0)?
        };
        sol.stats.wall = t0.elapsed();

        if matches!(sol.status, SolveStatus::Optimal | SolveStatus::LimitHit)
            && !sol.values.is_empty()
        {
            self.check_feasibility(sol.values(), cfg.feasibility_tol)
                .map_err(|msg| MilpError::FeasibilityCheck(msg, cfg.feasibility_tol))?;
            self.check_complementarity(sol.values())?;
        }
        Ok(sol)
    }

    /// Branch-and-bound over SOS1 groups. Each node relaxes the remaining
    /// groups and fixes a set of variables to zero; the backend solves the
    /// node to optimality and its objective is a valid bound for the
    /// subtree.
    fn solve_with_sos1(&self, cfg: &SolverConfig, t0: Instant) -> Result<Solution, MilpError> {
        struct Node {
            fixed: Vec<usize>,
            bound: f64,
        }
        let minimize = self.obj_sense == Some(ObjSense::Minimize);
        let mut stats = SolveStats::default();
        let mut stack = vec![Node {
            fixed: Vec::new(),
            bound: f64::NEG_INFINITY,
        }];
        let mut incumbent: Option<(f64, Vec<f64>)> = None;
        let mut timed_out = false;

        // Internally always minimize: flip sign of comparisons if maximizing.
        let key = |obj: f64| if minimize { obj } else { -obj };

        while let Some(node) = stack.pop() {
            if let Some((inc_obj, _)) = &incumbent {
                let margin = cfg.mip_abs_gap.max(cfg.mip_rel_gap * inc_obj.abs());
                if node.bound >= key(*inc_obj) - margin {
                    continue;
                }
            }
            let remaining = cfg.time_limit.map(|lim| lim - t0.elapsed().as_secs_f64());
            if let Some(rem) = remaining {
                if rem <= 0.0 {
                    timed_out = true;
                    break;
                }
            }
            stats.sos1_nodes += 1;
            let start_hint = incumbent.as_ref().and_then(|(_, vals)| {
                // Usable as a MIP start only if it respects the node's fixings.
                if node.fixed.iter().all(|&i| vals[i].abs() <= 1e-9) {
                    let mut v = vals.clone();
                    for &i in &node.fixed {
                        v[i] = 0.0;
                    }
                    Some(v)
                } else {
                    None
                }
            });
            let (status, values) =
                self.backend_solve(cfg, &node.fixed, start_hint.as_deref(), remaining, &mut stats)?;
            match status {
                SolveStatus::Infeasible => continue,
                SolveStatus::Unbounded => {
                    // A node relaxation unbounded below makes the whole
                    // model unbounded (fixing more variables cannot help).
                    return Ok(Solution {
                        status: SolveStatus::Unbounded,
                        objective: if minimize {
                            f64::NEG_INFINITY
                        } else {
                            f64::INFINITY
                        },
                        values: vec![],
                        stats,
                    });
                }
                SolveStatus::LimitHit => {
                    timed_out = true;
                    break;
                }
                SolveStatus::Optimal => {}
            }
            let obj = self.eval_objective(&values);
            if let Some((inc_obj, _)) = &incumbent {
                let margin = cfg.mip_abs_gap.max(cfg.mip_rel_gap * inc_obj.abs());
                if key(obj) >= key(*inc_obj) - margin {
                    continue;
                }
            }
            // Most-violated SOS1 group: largest product of its two largest
            // absolute values among non-fixed members.
            let mut worst: Option<(f64, usize, usize)> = None; // (product, top var, group)
            for (gi, group) in self.sos1.iter().enumerate() {
                let mut top: (f64, usize) = (0.0, usize::MAX);
                let mut second: f64 = 0.0;
                for &v in &group.vars {
                    if node.fixed.contains(&v.0) {
                        continue;
                    }
                    let a = values[v.0].abs();
                    if a > top.0 {
                        second = top.0;
                        top = (a, v.0);
                    } else if a > second {
                        second = a;
                    }
                }
                let product = top.0 * second;
                if product > SOS_BRANCH_TOL && worst.map_or(true, |(p, _, _)| product > p) {
                    worst = Some((product, top.1, gi));
                }
            }
            match worst {
                None => {
                    // SOS1-feasible: new incumbent.
                    incumbent = Some((obj, values));
                }
                Some((_, top_var, gi)) => {
                    // Either the largest member is zero, or every other
                    // member of the group is.
                    let mut rest = node.fixed.clone();
                    for &v in &self.sos1[gi].vars {
                        if v.0 != top_var && !rest.contains(&v.0) {
                            rest.push(v.0);
                        }
                    }
                    let mut fix_top = node.fixed.clone();
                    fix_top.push(top_var);
                    let bound = key(obj);
                    stack.push(Node { fixed: rest, bound });
                    stack.push(Node {
                        fixed: fix_top,
                        bound,
                    });
                }
            }
        }

        match incumbent {
            Some((obj, values)) => Ok(Solution {
                status: if timed_out {
                    SolveStatus::LimitHit
                } else {
                    SolveStatus::Optimal
                },
                objective: obj,
                values,
                stats,
            }),
            None => Ok(Solution {
                status: if timed_out {
                    SolveStatus::LimitHit
                } else {
                    SolveStatus::Infeasible
                },
                objective: 0.0,
                values: vec![],
                stats,
            }),
        }
    }

    /// One backend solve with the given variables fixed to zero.
    fn backend_solve(
        &self,
        cfg: &SolverConfig,
        fixed_to_zero: &[usize],
        start_hint: Option<&[f64]>,
        time_limit: Option<f64>,
        stats: &mut SolveStats,
    ) -> Result<(SolveStatus, Vec<f64>), MilpError> {
        let mut pb = ColProblem::new();
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|row| {
                let bounds: (Bound<f64>, Bound<f64>) = match row.sense {
                    ConstraintSense::Le => (Bound::Unbounded, Bound::Included(row.rhs)),
                    ConstraintSense::Ge => (Bound::Included(row.rhs), Bound::Unbounded),
                    ConstraintSense::Eq => (Bound::Included(row.rhs), Bound::Included(row.rhs)),
                };
                pb.add_row(bounds)
            })
            .collect();

        // Column-wise coefficients.
        let mut cols: Vec<Vec<(highs::Row, f64)>> = vec![Vec::new(); self.vars.len()];
        for (ri, row) in self.rows.iter().enumerate() {
            for &(v, c) in &row.terms {
                cols[v.0].push((rows[ri], c));
            }
        }
        let mut obj = vec![0.0; self.vars.len()];
        for &(v, c) in &self.objective {
            obj[v.0] = c;
        }
        let mut has_integer = false;
        for (vi, def) in self.vars.iter().enumerate() {
            let (mut lb, mut ub) = (def.lb, def.ub);
            if fixed_to_zero.contains(&vi) {
                lb = 0.0;
                ub = 0.0;
            }
            let bounds: (Bound<f64>, Bound<f64>) = (
                if lb.is_finite() {
                    Bound::Included(lb)
                } else {
                    Bound::Unbounded
                },
                if ub.is_finite() {
                    Bound::Included(ub)
                } else {
                    Bound::Unbounded
                },
            );
            let integer = def.kind == VarKind::Binary;
            has_integer |= integer;
            pb.add_column_with_integrality(obj[vi], bounds, std::mem::take(&mut cols[vi]), integer);
        }

        let sense = match self.obj_sense {
            Some(ObjSense::Maximize) => HighsSense::Maximise,
            _ => HighsSense::Minimise,
        };
        let mut model = pb.optimise(sense);
        if !cfg.verbose {
            model.make_quiet();
        }
        model.set_option("threads", 1);
        model.set_option("random_seed", cfg.seed);
        model.set_option("mip_rel_gap", cfg.mip_rel_gap);
        model.set_option("mip_abs_gap", cfg.mip_abs_gap);
        model.set_option("mip_feasibility_tolerance", 1e-7);
        model.set_option("primal_feasibility_tolerance", 1e-7);
        if let Some(lim) = time_limit {
            model.set_option("time_limit", lim.max(0.0));
        }
        if has_integer {
            if let Some(hint) = start_hint {
                model.set_solution(Some(hint), None, None, None);
            }
        }

        stats.backend_solves += 1;
        let solved = model.try_solve().map_err(|e| {
            MilpError::Backend(format!("{:?} while solving {}", e, self.name))
        })?;
        let status = solved.status();
        let mapped = match status {
            HighsModelStatus::Optimal => SolveStatus::Optimal,
            HighsModelStatus::Infeasible => SolveStatus::Infeasible,
            HighsModelStatus::Unbounded | HighsModelStatus::UnboundedOrInfeasible => {
                SolveStatus::Unbounded
            }
            HighsModelStatus::ReachedTimeLimit | HighsModelStatus::ReachedIterationLimit => {
                SolveStatus::LimitHit
            }
            other => {
                return Err(MilpError::Backend(format!(
                    "unexpected backend status {:?} while solving {}",
                    other, self.name
                )))
            }
        };
        let values = match mapped {
            SolveStatus::Optimal | SolveStatus::LimitHit => {
                solved.get_solution().columns().to_vec()
            }
            _ => vec![],
        };
        Ok((mapped, values))
    }

    /// Independent feasibility re-check: every constraint, bound and
    /// integrality requirement of this spec must hold at `values` within
    /// `tol` relative to the row's coefficient scale.
    pub fn check_feasibility(&self, values: &[f64], tol: f64) -> Result<(), String> {
        if values.len() != self.vars.len() {
            return Err(format!(
                "solution has {} values for {} variables",
                values.len(),
                self.vars.len()
            ));
        }
        for (vi, def) in self.vars.iter().enumerate() {
            let v = values[vi];
            if def.lb.is_finite() && v < def.lb - tol * def.lb.abs().max(1.0) {
                return Err(format!("{} = {v} below lower bound {}", def.name, def.lb));
            }
            if def.ub.is_finite() && v > def.ub + tol * def.ub.abs().max(1.0) {
                return Err(format!("{} = {v} above upper bound {}", def.name, def.ub));
            }
            if def.kind == VarKind::Binary && (v - v.round()).abs() > 1e-6 {
                return Err(format!("binary {} = {v} is fractional", def.name));
            }
        }
        for row in &self.rows {
            let mut act = 0.0;
            let mut scale: f64 = 1.0;
            for &(v, c) in &row.terms {
                let t = c * values[v.0];
                act += t;
                scale = scale.max(t.abs());
            }
            scale = scale.max(row.rhs.abs());
            if !row_satisfied(act, row.sense, row.rhs, tol, scale) {
                return Err(format!(
                    "constraint {}: lhs {act} {} rhs {} violated beyond {:e}",
                    row.name,
                    row.sense,
                    row.rhs,
                    tol * scale
                ));
            }
        }
        for group in &self.sos1 {
            let mut mags: Vec<f64> = group.vars.iter().map(|&v| values[v.0].abs()).collect();
            mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if mags.len() >= 2 && mags[0] * mags[1] > COMPLEMENTARITY_TOL {
                return Err(format!(
                    "SOS1 group {} has two nonzero members (product {:e})",
                    group.name,
                    mags[0] * mags[1]
                ));
            }
        }
        Ok(())
    }

    fn check_complementarity(&self, values: &[f64]) -> Result<(), MilpError> {
        for &(a, b) in &self.compl_pairs {
            let product = (values[a.0] * values[b.0]).abs();
            if product > COMPLEMENTARITY_TOL {
                return Err(MilpError::ComplementarityViolated {
                    pair: format!("({}, {})", self.vars[a.0].name, self.vars[b.0].name),
                    product,
                    tol: COMPLEMENTARITY_TOL,
                });
            }
        }
        for &(v, cap) in &self.cap_watch {
            let value = values[v.0];
            if value >= cap - 1e-6 * cap.abs().max(1.0) {
                return Err(MilpError::CapBinding {
                    var: self.vars[v.0].name.clone(),
                    value,
                    cap,
                });
            }
        }
        Ok(())
    }

    /// Render the model in LP text format for external verification.
    pub fn to_lp_format(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("\\ model: {}\n", self.name));
        out.push_str(match self.obj_sense {
            Some(ObjSense::Maximize) => "Maximize\n",
            _ => "Minimize\n",
        });
        out.push_str(" obj:");
        if self.objective.is_empty() {
            out.push_str(" 0 x_dummy_obj");
        }
        for &(v, c) in &self.objective {
            push_term(&mut out, c, &self.vars[v.0].name);
        }
        out.push_str("\nSubject To\n");
        for row in &self.rows {
            out.push_str(&format!(" {}:", sanitize(&row.name)));
            if row.terms.is_empty() {
                out.push_str(" 0 x_dummy_obj");
            }
            for &(v, c) in &row.terms {
                push_term(&mut out, c, &self.vars[v.0].name);
            }
            out.push_str(&format!(" {} {}\n", row.sense, lp_num(row.rhs)));
        }
        out.push_str("Bounds\n");
        for def in &self.vars {
            let name = sanitize(&def.name);
            match (def.lb.is_finite(), def.ub.is_finite()) {
                (true, true) => {
                    out.push_str(&format!(" {} <= {} <= {}\n", lp_num(def.lb), name, lp_num(def.ub)))
                }
                (true, false) => {
                    if def.lb != 0.0 {
                        out.push_str(&format!(" {} >= {}\n", name, lp_num(def.lb)));
                    }
                }
                (false, true) => out.push_str(&format!(" -inf <= {} <= {}\n", name, lp_num(def.ub))),
                (false, false) => out.push_str(&format!(" {} free\n", name)),
            }
        }
        let binaries: Vec<_> = self
            .vars
            .iter()
            .filter(|v| v.kind == VarKind::Binary)
            .map(|v| sanitize(&v.name))
            .collect();
        if !binaries.is_empty() {
            out.push_str("Binaries\n");
            for b in binaries {
                out.push_str(&format!(" {b}\n"));
            }
        }
        if !self.sos1.is_empty() {
            out.push_str("SOS\n");
            for group in &self.sos1 {
                out.push_str(&format!(" {}: S1 ::", sanitize(&group.name)));
                for (i, &v) in group.vars.iter().enumerate() {
                    out.push_str(&format!(" {}:{}", sanitize(&self.vars[v.0].name), i + 1));
                }
                out.push('\n');
            }
        }
        out.push_str("End\n");
        out
    }
}

fn merge_terms(terms: Vec<(VarId, f64)>) -> Vec<(VarId, f64)> {
    let mut merged: HashMap<usize, f64> = HashMap::new();
    let mut order: Vec<usize> = Vec::new();
    for (v, c) in terms {
        match merged.entry(v.0) {
            std::collections::hash_map::Entry::Occupied(mut e) => *e.get_mut() += c,
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(c);
                order.push(v.0);
            }
        }
    }
    order
        .into_iter()
        .map(|i| (VarId(i), merged[&i]))
        .collect()
}

fn row_satisfied(act: f64, sense: ConstraintSense, rhs: f64, tol: f64, scale: f64) -> bool {
    let slack = tol * scale;
    match sense {
        ConstraintSense::Le => act <= rhs + slack,
        ConstraintSense::Ge => act >= rhs - slack,
        ConstraintSense::Eq => (act - rhs).abs() <= slack,
    }
}

fn push_term(out: &mut String, coef: f64, name: &str) {
    if coef >= 0.0 {
        out.push_str(&format!(" + {} {}", lp_num(coef), sanitize(name)));
    } else {
        out.push_str(&format!(" - {} {}", lp_num(-coef), sanitize(name)));
    }
}

fn lp_num(v: f64) -> String {
    format!("{v}")
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn one_variable_lp() {
        let mut m = ModelSpec::new("one_var");
        let x = m.add_var("x", f64::NEG_INFINITY, f64::INFINITY, VarKind::Continuous);
        m.add_constraint("floor", vec![(x, 1.0)], ConstraintSense::Ge, 3.0);
        m.set_objective(ObjSense::Minimize, vec![(x, 1.0)]);
        let sol = m.solve(&cfg()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 3.0).abs() < 1e-9);
        assert!((sol.value(x) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn sos1_pair_with_both_sides_forced_is_infeasible() {
        let mut m = ModelSpec::new("sos_infeasible");
        let a = m.add_nonneg("a");
        let b = m.add_nonneg("b");
        m.add_constraint("a_floor", vec![(a, 1.0)], ConstraintSense::Ge, 1.0);
        m.add_constraint("b_floor", vec![(b, 1.0)], ConstraintSense::Ge, 1.0);
        m.add_sos1("pair", vec![a, b]);
        m.set_objective(ObjSense::Minimize, vec![(a, 1.0), (b, 1.0)]);
        let sol = m.solve(&cfg()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn sos1_picks_the_better_side() {
        let mut m = ModelSpec::new("sos_choice");
        let a = m.add_var("a", 0.0, 0.4, VarKind::Continuous);
        let b = m.add_var("b", 0.0, 5.0, VarKind::Continuous);
        m.encode_complementarity(&[(a, b)], ComplementarityMode::Sos1, None)
            .unwrap();
        m.set_objective(ObjSense::Maximize, vec![(a, 1.0), (b, 1.0)]);
        let sol = m.solve(&cfg()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 5.0).abs() < 1e-9);
        assert!(sol.value(a).abs() < 1e-9);
        assert!((sol.value(b) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn complementarity_forces_partner_to_zero() {
        // lambda is forced to 0.4, so the paired b must vanish even though
        // the objective rewards it.
        let mut m = ModelSpec::new("compl_forced");
        let lam = m.add_nonneg("lam");
        let b = m.add_var("b", 0.0, 10.0, VarKind::Continuous);
        m.add_constraint("fix_lam", vec![(lam, 1.0)], ConstraintSense::Eq, 0.4);
        m.encode_complementarity(&[(lam, b)], ComplementarityMode::Sos1, None)
            .unwrap();
        m.set_objective(ObjSense::Maximize, vec![(b, 1.0)]);
        let sol = m.solve(&cfg()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.value(lam) - 0.4).abs() < 1e-9);
        assert!(sol.value(b).abs() < 1e-9);
    }

    #[test]
    fn big_m_mode_matches_sos1_objective() {
        let build = |mode, caps: Option<&[(f64, f64)]>| {
            let mut m = ModelSpec::new("compl_modes");
            let a = m.add_var("a", 0.0, 0.4, VarKind::Continuous);
            let b = m.add_var("b", 0.0, 5.0, VarKind::Continuous);
            m.encode_complementarity(&[(a, b)], mode, caps).unwrap();
            m.set_objective(ObjSense::Maximize, vec![(a, 1.0), (b, 1.0)]);
            m
        };
        let sos = build(ComplementarityMode::Sos1, None).solve(&cfg()).unwrap();
        let bigm = build(ComplementarityMode::BigM, Some(&[(10.0, 10.0)]))
            .solve(&cfg())
            .unwrap();
        assert!((sos.objective - bigm.objective).abs() < 1e-9);
    }

    #[test]
    fn big_m_without_caps_is_rejected() {
        let mut m = ModelSpec::new("no_caps");
        let a = m.add_nonneg("a");
        let b = m.add_nonneg("b");
        let err = m
            .encode_complementarity(&[(a, b)], ComplementarityMode::BigM, None)
            .unwrap_err();
        assert!(matches!(err, MilpError::MissingCaps));
    }

    #[test]
    fn undersized_cap_is_flagged() {
        // The optimum wants a = 2, but the cap holds it at 1: the solve
        // must flag the binding cap instead of silently returning a cut
        // optimum.
        let mut m = ModelSpec::new("cap_too_small");
        let a = m.add_nonneg("a");
        let b = m.add_nonneg("b");
        m.encode_complementarity(&[(a, b)], ComplementarityMode::BigM, Some(&[(1.0, 1.0)]))
            .unwrap();
        m.add_constraint("ceil", vec![(a, 1.0)], ConstraintSense::Le, 2.0);
        m.set_objective(ObjSense::Maximize, vec![(a, 1.0)]);
        let err = m.solve(&cfg()).unwrap_err();
        assert!(matches!(err, MilpError::CapBinding { .. }), "got {err:?}");
    }

    #[test]
    fn abs_deviation_values() {
        // expr fixed at 5 with weight 0.1 contributes 0.5.
        let mut m = ModelSpec::new("absdev");
        let t = m.add_var("t", 5.0, 5.0, VarKind::Continuous);
        let dev = m
            .add_abs_deviation("dev", LinExpr::new().term(t, 1.0), 0.1)
            .unwrap();
        m.set_objective(ObjSense::Minimize, dev.terms().to_vec());
        let sol = m.solve(&cfg()).unwrap();
        assert!((sol.objective - 0.5).abs() < 1e-9);
        assert!((dev.value(&sol) - 0.5).abs() < 1e-9);

        // expr fixed at 0 contributes 0.
        let mut m = ModelSpec::new("absdev_zero");
        let t = m.add_var("t", 0.0, 0.0, VarKind::Continuous);
        let dev = m
            .add_abs_deviation("dev", LinExpr::new().term(t, 1.0), 0.3)
            .unwrap();
        m.set_objective(ObjSense::Minimize, dev.terms().to_vec());
        let sol = m.solve(&cfg()).unwrap();
        assert!(sol.objective.abs() < 1e-9);
    }

    #[test]
    fn abs_deviation_airline_ratio() {
        // |12222 - 21026.7| / 12222, the LAB deviation of NIPPON against
        // its first-face target.
        let mut m = ModelSpec::new("absdev_ratio");
        let t = m.add_var("t", 21026.7, 21026.7, VarKind::Continuous);
        let dev = m
            .add_abs_deviation(
                "dev",
                LinExpr::new().term(t, -1.0).constant(12222.0),
                1.0 / 12222.0,
            )
            .unwrap();
        m.set_objective(ObjSense::Minimize, dev.terms().to_vec());
        let sol = m.solve(&cfg()).unwrap();
        let expected = (21026.7 - 12222.0) / 12222.0;
        assert!((sol.objective - expected).abs() < 1e-9);
        assert!((expected - 0.7204).abs() < 1e-4);
    }

    #[test]
    fn abs_deviation_rejects_nonpositive_weight() {
        let mut m = ModelSpec::new("badweight");
        let t = m.add_nonneg("t");
        assert!(m
            .add_abs_deviation("dev", LinExpr::new().term(t, 1.0), 0.0)
            .is_err());
    }

    #[test]
    fn binary_variables_solve_as_mip() {
        let mut m = ModelSpec::new("tiny_mip");
        let x = m.add_var("x", 0.0, 1.0, VarKind::Binary);
        let y = m.add_var("y", 0.0, 1.0, VarKind::Binary);
        m.add_constraint("pick_one", vec![(x, 1.0), (y, 1.0)], ConstraintSense::Le, 1.0);
        m.set_objective(ObjSense::Maximize, vec![(x, 1.0), (y, 2.0)]);
        let sol = m.solve(&cfg()).unwrap();
        assert!((sol.objective - 2.0).abs() < 1e-9);
        assert!((sol.value(y) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_repeat_solves() {
        let build = || {
            let mut m = ModelSpec::new("det");
            let a = m.add_var("a", 0.0, 3.0, VarKind::Continuous);
            let b = m.add_var("b", 0.0, 4.0, VarKind::Continuous);
            let z = m.add_var("z", 0.0, 1.0, VarKind::Binary);
            m.add_constraint(
                "mix",
                vec![(a, 1.0), (b, 1.0), (z, 2.0)],
                ConstraintSense::Le,
                6.0,
            );
            m.add_sos1("ab", vec![a, b]);
            m.set_objective(ObjSense::Maximize, vec![(a, 1.0), (b, 1.1), (z, 0.5)]);
            m
        };
        let s1 = build().solve(&cfg()).unwrap();
        let s2 = build().solve(&cfg()).unwrap();
        assert_eq!(s1.objective, s2.objective);
        assert_eq!(s1.values(), s2.values());
    }

    #[test]
    fn sos1_group_needs_two_vars() {
        let mut m = ModelSpec::new("short_group");
        let a = m.add_nonneg("a");
        m.add_sos1("solo", vec![a]);
        m.set_objective(ObjSense::Minimize, vec![(a, 1.0)]);
        assert!(matches!(m.solve(&cfg()), Err(MilpError::Invalid(_))));
    }

    #[test]
    fn lp_format_dump_contains_sections() {
        let mut m = ModelSpec::new("dump");
        let a = m.add_nonneg("a");
        let b = m.add_nonneg("b");
        let z = m.add_var("z", 0.0, 1.0, VarKind::Binary);
        m.add_constraint("cap", vec![(a, 2.0), (b, -1.0)], ConstraintSense::Le, 7.0);
        m.add_sos1("ab", vec![a, b]);
        m.set_objective(ObjSense::Minimize, vec![(a, 1.0), (z, 3.0)]);
        let lp = m.to_lp_format();
        for section in ["Minimize", "Subject To", "Bounds", "Binaries", "SOS", "End"] {
            assert!(lp.contains(section), "missing {section} in:\n{lp}");
        }
        assert!(lp.contains("ab: S1 :: a:1 b:2"));
    }
}
