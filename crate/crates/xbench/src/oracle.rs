//! Exhaustive verification path for small instances.
//!
//! The frontier of the production possibility set consists of finitely
//! many faces, each spanned by a subset of the extreme-efficient units
//! that shares a supporting hyperplane with coefficients bounded below by
//! one. On small instances every candidate subset can be tested directly
//! by a feasibility LP, and the sequential selection can be replayed
//! greedily over the enumerated faces. The MILP path must reproduce this
//! oracle's objective sequence exactly; the oracle stays deliberately
//! simple and shares no model-building code with the selection module.

use thiserror::Error;

use crate::dataset::Dataset;
use crate::milp::{
    ConstraintSense, LinExpr, MilpError, ModelSpec, ObjSense, SolveStatus, SolverConfig,
};
use crate::selection::HyperplaneCertificate;

/// Default cap on |E| for subset enumeration (4095 candidate LPs).
pub const DEFAULT_SUBSET_CAP: usize = 12;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("face enumeration needs |E| <= {cap}, got {size}: the oracle is a combinatorial verification tool")]
    CapExceeded { size: usize, cap: usize },
    #[error("oracle solver failure in {model}: {source}")]
    Solver {
        model: String,
        #[source]
        source: MilpError,
    },
    #[error("oracle: {model} reported {status:?}")]
    UnexpectedStatus { model: String, status: SolveStatus },
}

/// A subset of E spanning one face of the efficient frontier.
#[derive(Debug, Clone)]
pub struct EfficientFace {
    pub members: Vec<usize>,
    pub certificate: HyperplaneCertificate,
    /// True when no feasible superset exists (the face is a facet).
    pub maximal: bool,
}

/// Enumerate every face: for each non-empty subset S of E, search for
/// weights `V >= 1, U >= 1` with `V'X_k = U'Y_k` on S that support the
/// whole dataset. Feasible subsets are faces; maximal ones are flagged.
pub fn enumerate_faces(
    d: &Dataset,
    e_set: &[usize],
    cap: usize,
    solver: &SolverConfig,
) -> Result<Vec<EfficientFace>, OracleError> {
    let e = e_set.len();
    if e > cap {
        return Err(OracleError::CapExceeded { size: e, cap });
    }
    // Subsets ordered by size then lexicographically, for deterministic
    // face indices.
    let mut masks: Vec<u32> = (1u32..(1 << e)).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));

    let mut feasible: Vec<(u32, HyperplaneCertificate)> = Vec::new();
    for &mask in &masks {
        let members: Vec<usize> = (0..e)
            .filter(|kp| mask >> kp & 1 == 1)
            .map(|kp| e_set[kp])
            .collect();
        if let Some(cert) = face_hyperplane(d, e_set, &members, solver)? {
            feasible.push((mask, cert));
        }
    }
    let faces = feasible
        .iter()
        .map(|(mask, cert)| {
            let maximal = !feasible
                .iter()
                .any(|(other, _)| other != mask && other & mask == *mask);
            EfficientFace {
                members: (0..e)
                    .filter(|kp| mask >> kp & 1 == 1)
                    .map(|kp| e_set[kp])
                    .collect(),
                certificate: cert.clone(),
                maximal,
            }
        })
        .collect();
    Ok(faces)
}

/// Feasibility LP for one candidate subset; returns the certificate when
/// the subset spans a face.
fn face_hyperplane(
    d: &Dataset,
    e_set: &[usize],
    members: &[usize],
    solver: &SolverConfig,
) -> Result<Option<HyperplaneCertificate>, OracleError> {
    let name = format!("face_{members:?}");
    let mut model = ModelSpec::new(name.clone());
    let v: Vec<_> = (0..d.num_inputs())
        .map(|i| model.add_var(format!("v_{i}"), 1.0, f64::INFINITY, crate::milp::VarKind::Continuous))
        .collect();
    let u: Vec<_> = (0..d.num_outputs())
        .map(|r| model.add_var(format!("u_{r}"), 1.0, f64::INFINITY, crate::milp::VarKind::Continuous))
        .collect();
    for j in 0..d.n() {
        let mut terms: Vec<_> = (0..d.num_inputs()).map(|i| (v[i], d.input(j, i))).collect();
        terms.extend((0..d.num_outputs()).map(|r| (u[r], -d.output(j, r))));
        let sense = if members.contains(&j) {
            ConstraintSense::Eq
        } else {
            ConstraintSense::Ge
        };
        model.add_constraint(format!("support_{j}"), terms, sense, 0.0);
    }
    // Members that are not dataset rows cannot happen: members come from E.
    model.set_objective(ObjSense::Minimize, vec![(v[0], 0.0)]);
    let sol = model.solve(solver).map_err(|source| OracleError::Solver {
        model: name.clone(),
        source,
    })?;
    match sol.status {
        SolveStatus::Optimal => {
            let vw: Vec<f64> = v.iter().map(|&x| sol.value(x)).collect();
            let uw: Vec<f64> = u.iter().map(|&x| sol.value(x)).collect();
            let offsets = e_set
                .iter()
                .map(|&k| {
                    let gap: f64 = (0..d.num_inputs())
                        .map(|i| vw[i] * d.input(k, i))
                        .sum::<f64>()
                        - (0..d.num_outputs())
                            .map(|r| uw[r] * d.output(k, r))
                            .sum::<f64>();
                    (k, gap)
                })
                .collect();
            Ok(Some(HyperplaneCertificate {
                input_weights: vw,
                output_weights: uw,
                offsets,
            }))
        }
        SolveStatus::Infeasible => Ok(None),
        status => Err(OracleError::UnexpectedStatus {
            model: name,
            status,
        }),
    }
}

/// Weighted L1 projection distance of one DMU onto the cone spanned by
/// `members`.
pub fn cone_distance(
    d: &Dataset,
    j: usize,
    members: &[usize],
    solver: &SolverConfig,
) -> Result<f64, OracleError> {
    let name = format!("cone_{j}_{members:?}");
    let mut model = ModelSpec::new(name.clone());
    let lambdas: Vec<_> = members
        .iter()
        .map(|&k| model.add_nonneg(format!("lam_{k}")))
        .collect();
    let mut obj = Vec::new();
    for i in 0..d.num_inputs() {
        let mut expr = LinExpr::new().constant(d.input(j, i));
        for (&k, &lam) in members.iter().zip(&lambdas) {
            expr = expr.term(lam, -d.input(k, i));
        }
        let dev = model
            .add_abs_deviation(&format!("dev_in_{i}"), expr, 1.0 / d.input(j, i))
            .map_err(|source| OracleError::Solver {
                model: name.clone(),
                source,
            })?;
        obj.extend(dev.terms());
    }
    for r in 0..d.num_outputs() {
        let mut expr = LinExpr::new().constant(d.output(j, r));
        for (&k, &lam) in members.iter().zip(&lambdas) {
            expr = expr.term(lam, -d.output(k, r));
        }
        let dev = model
            .add_abs_deviation(&format!("dev_out_{r}"), expr, 1.0 / d.output(j, r))
            .map_err(|source| OracleError::Solver {
                model: name.clone(),
                source,
            })?;
        obj.extend(dev.terms());
    }
    model.set_objective(ObjSense::Minimize, obj);
    let sol = model.solve(solver).map_err(|source| OracleError::Solver {
        model: name.clone(),
        source,
    })?;
    if sol.status != SolveStatus::Optimal {
        return Err(OracleError::UnexpectedStatus {
            model: name,
            status: sol.status,
        });
    }
    Ok(sol.objective)
}

/// Result of the exhaustive greedy replay.
#[derive(Debug, Clone)]
pub struct OracleSelection {
    /// Objective sequence, one value per accepted face.
    pub objectives: Vec<f64>,
    /// Indices into the enumerated face list, in acceptance order.
    pub chosen: Vec<usize>,
    pub best_distances: Vec<f64>,
}

/// Replay the sequential selection exhaustively: step 1 picks the face
/// minimizing the summed cone distances; step a picks the face minimizing
/// the sum of per-DMU minima against the running best; stop when no face
/// improves by more than `eps_stop`. Ties break on the lowest face index.
pub fn brute_force_selection(
    d: &Dataset,
    faces: &[EfficientFace],
    eps_stop: f64,
    solver: &SolverConfig,
) -> Result<OracleSelection, OracleError> {
    let n = d.n();
    let mut dist = vec![vec![0.0; n]; faces.len()];
    for (f, face) in faces.iter().enumerate() {
        for j in 0..n {
            dist[f][j] = cone_distance(d, j, &face.members, solver)?;
        }
    }

    let mut best_distances = vec![f64::INFINITY; n];
    let mut objectives = Vec::new();
    let mut chosen = Vec::new();
    for _ in 0..=faces.len() {
        let mut best: Option<(f64, usize)> = None;
        for f in 0..faces.len() {
            let total: f64 = (0..n).map(|j| best_distances[j].min(dist[f][j])).sum();
            if best.map_or(true, |(t, _)| total < t) {
                best = Some((total, f));
            }
        }
        let (total, f) = best.expect("at least one face exists");
        let current: f64 = if objectives.is_empty() {
            f64::INFINITY
        } else {
            best_distances.iter().sum()
        };
        if current - total <= eps_stop {
            break;
        }
        for j in 0..n {
            best_distances[j] = best_distances[j].min(dist[f][j]);
        }
        objectives.push(total);
        chosen.push(f);
    }
    Ok(OracleSelection {
        objectives,
        chosen,
        best_distances,
    })
}
