//! Closest targets per reference set and the deviation report.
//!
//! For a selected reference set R_h, every DMU is projected onto the cone
//! spanned by the members of R_h, minimizing the weighted L1 distance
//! between data and projection. The model is separable across DMUs, so the
//! production path solves one small LP per DMU; the joint formulation is
//! kept behind [`closest_targets_joint`] for verification.
//!
//! Deviations follow the reporting convention: inputs `(x - x_target)/x`,
//! outputs `(y_target - y)/y`, so a positive entry always means the actual
//! value is worse than the target. Dominance is not required: entries can
//! be negative when a target asks for more of an input or less of an
//! output in exchange for improvements elsewhere.

use thiserror::Error;

use crate::dataset::Dataset;
use crate::milp::{
    ConstraintSense, LinExpr, MilpError, ModelSpec, ObjSense, SolveStatus, SolverConfig,
};
use crate::selection::{
    run_selection, weighted_l1_distance, ReferenceSet, SelectionConfig, SelectionError,
    SelectionState,
};

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("selection stage failed: {0}")]
    Selection(#[from] SelectionError),
    #[error("target stage: solver failure in {model}: {source}")]
    Solver {
        model: String,
        #[source]
        source: MilpError,
    },
    #[error("target stage: {model} reported {status:?}; projection LPs are always feasible")]
    UnexpectedStatus { model: String, status: SolveStatus },
}

/// Closest projection of one DMU onto the face of one reference set.
#[derive(Debug, Clone)]
pub struct TargetBundle {
    pub dmu: usize,
    /// 1-based face index h.
    pub face: usize,
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
    /// Nonzero intensities over the members of R_h.
    pub intensities: Vec<(usize, f64)>,
    pub distance: f64,
}

/// Percent deviations between actual data and targets for every
/// (dmu, face, factor) triple, stored at full precision as fractions.
#[derive(Debug, Clone)]
pub struct DeviationMatrix {
    pub num_faces: usize,
    /// Factor labels, inputs first (with their `in:`/`out:` prefixes).
    pub factor_names: Vec<String>,
    /// Indexed `[dmu][face-1][factor]`.
    values: Vec<Vec<Vec<f64>>>,
}

impl DeviationMatrix {
    pub fn get(&self, dmu: usize, face: usize, factor: usize) -> f64 {
        self.values[dmu][face - 1][factor]
    }

    /// Flat iteration in (dmu, face, factor) order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        self.values.iter().enumerate().flat_map(|(j, faces)| {
            faces.iter().enumerate().flat_map(move |(h, row)| {
                row.iter()
                    .enumerate()
                    .map(move |(f, &v)| (j, h + 1, f, v))
            })
        })
    }

    /// The plot-ready CSV emission: one deviation per line.
    pub fn to_csv(&self, d: &Dataset) -> String {
        let mut out = String::from("dmu,face,factor,deviation\n");
        for (j, h, f, v) in self.iter() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                d.id(j),
                h,
                self.factor_names[f],
                v
            ));
        }
        out
    }
}

/// Solve the projection of every DMU onto the cone spanned by the members
/// of `rset`, one LP per DMU.
pub fn closest_targets_for_face(
    d: &Dataset,
    rset: &ReferenceSet,
    cfg: &SelectionConfig,
) -> Result<Vec<TargetBundle>, TargetError> {
    (0..d.n())
        .map(|j| closest_target(d, rset, j, &cfg.solver))
        .collect()
}

fn closest_target(
    d: &Dataset,
    rset: &ReferenceSet,
    j: usize,
    solver: &SolverConfig,
) -> Result<TargetBundle, TargetError> {
    let members = &rset.members;
    let name = format!("target_f{}_{}", rset.step, d.id(j));
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
            .map_err(|source| TargetError::Solver {
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
            .map_err(|source| TargetError::Solver {
                model: name.clone(),
                source,
            })?;
        obj.extend(dev.terms());
    }
    model.set_objective(ObjSense::Minimize, obj);
    let sol = model.solve(solver).map_err(|source| TargetError::Solver {
        model: name.clone(),
        source,
    })?;
    if sol.status != SolveStatus::Optimal {
        return Err(TargetError::UnexpectedStatus {
            model: name,
            status: sol.status,
        });
    }

    let mut inputs = vec![0.0; d.num_inputs()];
    let mut outputs = vec![0.0; d.num_outputs()];
    let mut intensities = Vec::new();
    for (&k, &lam) in members.iter().zip(&lambdas) {
        let value = sol.value(lam);
        if value > 0.0 {
            intensities.push((k, value));
            for (i, x) in inputs.iter_mut().enumerate() {
                *x += value * d.input(k, i);
            }
            for (r, y) in outputs.iter_mut().enumerate() {
                *y += value * d.output(k, r);
            }
        }
    }
    let distance = weighted_l1_distance(&d.records[j], &inputs, &outputs)
        .expect("target dimensions match the dataset");
    Ok(TargetBundle {
        dmu: j,
        face: rset.step,
        inputs,
        outputs,
        intensities,
        distance,
    })
}

/// The joint formulation over all DMUs at once. Verification-only: the
/// distances must coincide with the per-DMU solves.
pub fn closest_targets_joint(
    d: &Dataset,
    rset: &ReferenceSet,
    cfg: &SelectionConfig,
) -> Result<Vec<f64>, TargetError> {
    let members = &rset.members;
    let name = format!("target_joint_f{}", rset.step);
    let mut model = ModelSpec::new(name.clone());
    let mut lam = Vec::new(); // [j][member]
    let mut devs = Vec::new(); // [j] -> objective terms
    for j in 0..d.n() {
        let lambdas: Vec<_> = members
            .iter()
            .map(|&k| model.add_nonneg(format!("lam_{k}_{j}")))
            .collect();
        let mut terms = Vec::new();
        for i in 0..d.num_inputs() {
            let mut expr = LinExpr::new().constant(d.input(j, i));
            for (&k, &l) in members.iter().zip(&lambdas) {
                expr = expr.term(l, -d.input(k, i));
            }
            let dev = model
                .add_abs_deviation(&format!("dev_in_{j}_{i}"), expr, 1.0 / d.input(j, i))
                .map_err(|source| TargetError::Solver {
                    model: name.clone(),
                    source,
                })?;
            terms.extend(dev.terms());
        }
        for r in 0..d.num_outputs() {
            let mut expr = LinExpr::new().constant(d.output(j, r));
            for (&k, &l) in members.iter().zip(&lambdas) {
                expr = expr.term(l, -d.output(k, r));
            }
            let dev = model
                .add_abs_deviation(&format!("dev_out_{j}_{r}"), expr, 1.0 / d.output(j, r))
                .map_err(|source| TargetError::Solver {
                    model: name.clone(),
                    source,
                })?;
            terms.extend(dev.terms());
        }
        lam.push(lambdas);
        devs.push(terms);
    }
    model.set_objective(ObjSense::Minimize, devs.iter().flatten().copied().collect());
    let sol = model.solve(&cfg.solver).map_err(|source| TargetError::Solver {
        model: name.clone(),
        source,
    })?;
    if sol.status != SolveStatus::Optimal {
        return Err(TargetError::UnexpectedStatus {
            model: name,
            status: sol.status,
        });
    }
    let mut distances = Vec::with_capacity(d.n());
    for j in 0..d.n() {
        let mut inputs = vec![0.0; d.num_inputs()];
        let mut outputs = vec![0.0; d.num_outputs()];
        for (&k, &l) in members.iter().zip(&lam[j]) {
            let value = sol.value(l);
            for (i, x) in inputs.iter_mut().enumerate() {
                *x += value * d.input(k, i);
            }
            for (r, y) in outputs.iter_mut().enumerate() {
                *y += value * d.output(k, r);
            }
        }
        distances.push(
            weighted_l1_distance(&d.records[j], &inputs, &outputs)
                .expect("target dimensions match the dataset"),
        );
    }
    Ok(distances)
}

/// Assemble the full deviation matrix from target bundles covering every
/// (dmu, face) pair.
pub fn deviation_report(d: &Dataset, bundles: &[TargetBundle], num_faces: usize) -> DeviationMatrix {
    let (m, s) = (d.num_inputs(), d.num_outputs());
    let mut values = vec![vec![vec![0.0; m + s]; num_faces]; d.n()];
    for bundle in bundles {
        let row = &mut values[bundle.dmu][bundle.face - 1];
        for i in 0..m {
            row[i] = (d.input(bundle.dmu, i) - bundle.inputs[i]) / d.input(bundle.dmu, i);
        }
        for r in 0..s {
            row[m + r] = (bundle.outputs[r] - d.output(bundle.dmu, r)) / d.output(bundle.dmu, r);
        }
    }
    let factor_names = d
        .input_names
        .iter()
        .map(|n| format!("in:{n}"))
        .chain(d.output_names.iter().map(|n| format!("out:{n}")))
        .collect();
    DeviationMatrix {
        num_faces,
        factor_names,
        values,
    }
}

/// Outcome of a full cross-benchmarking run.
#[derive(Debug, Clone)]
pub struct CrossBenchmarkResult {
    pub selection: SelectionState,
    /// One bundle per (dmu, face), ordered by dmu then face.
    pub bundles: Vec<TargetBundle>,
    pub deviations: DeviationMatrix,
}

/// Run the whole pipeline: classification, reference-set selection, then
/// closest targets for every DMU against every selected set.
pub fn cross_benchmark(d: &Dataset, cfg: &SelectionConfig) -> Result<CrossBenchmarkResult, TargetError> {
    let selection = run_selection(d, cfg)?;
    let mut per_face = Vec::new();
    for step in &selection.steps {
        per_face.push(closest_targets_for_face(d, &step.reference_set, cfg)?);
    }
    let mut bundles = Vec::with_capacity(d.n() * per_face.len());
    for j in 0..d.n() {
        for face in &per_face {
            bundles.push(face[j].clone());
        }
    }
    let deviations = deviation_report(d, &bundles, selection.steps.len());
    Ok(CrossBenchmarkResult {
        selection,
        bundles,
        deviations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::SelectionConfig;

    const THREE_FACETS: &str = "dmu,in:x1,in:x2,out:y\nA,1,4,1\nB,2,2,1\nC,4,1,1\nZ,4,4,1\n";

    fn parse(text: &str) -> Dataset {
        Dataset::parse_csv(text).unwrap()
    }

    fn cfg() -> SelectionConfig {
        SelectionConfig::default()
    }

    #[test]
    fn members_project_onto_themselves() {
        let d = parse(THREE_FACETS);
        let state = run_selection(&d, &cfg()).unwrap();
        for step in &state.steps {
            let bundles = closest_targets_for_face(&d, &step.reference_set, &cfg()).unwrap();
            for &k in &step.reference_set.members {
                let b = &bundles[k];
                assert!(b.distance.abs() < 1e-7, "member {k} has distance {}", b.distance);
                for (i, &x) in b.inputs.iter().enumerate() {
                    assert!((x - d.input(k, i)).abs() <= 1e-6 * d.input(k, i));
                }
                for (r, &y) in b.outputs.iter().enumerate() {
                    assert!((y - d.output(k, r)).abs() <= 1e-6 * d.output(k, r));
                }
            }
        }
    }

    #[test]
    fn bundles_are_consistent_combinations() {
        let d = parse(THREE_FACETS);
        let state = run_selection(&d, &cfg()).unwrap();
        let bundles = closest_targets_for_face(&d, &state.steps[0].reference_set, &cfg()).unwrap();
        for b in &bundles {
            // Target recomputed from intensities, exactly.
            let mut x = vec![0.0; d.num_inputs()];
            let mut y = vec![0.0; d.num_outputs()];
            for &(k, lam) in &b.intensities {
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi += lam * d.input(k, i);
                }
                for (r, yr) in y.iter_mut().enumerate() {
                    *yr += lam * d.output(k, r);
                }
            }
            for (a, b_) in x.iter().zip(&b.inputs) {
                assert!((a - b_).abs() <= 1e-9 * a.abs().max(1.0));
            }
            let dist = weighted_l1_distance(&d.records[b.dmu], &b.inputs, &b.outputs).unwrap();
            assert!((dist - b.distance).abs() < 1e-9);
        }
    }

    #[test]
    fn joint_model_matches_per_dmu_distances() {
        let d = parse(THREE_FACETS);
        let state = run_selection(&d, &cfg()).unwrap();
        for step in &state.steps {
            let per_dmu = closest_targets_for_face(&d, &step.reference_set, &cfg()).unwrap();
            let joint = closest_targets_joint(&d, &step.reference_set, &cfg()).unwrap();
            for (b, j_dist) in per_dmu.iter().zip(&joint) {
                assert!(
                    (b.distance - j_dist).abs() < 1e-9,
                    "dmu {}: {} vs {}",
                    b.dmu,
                    b.distance,
                    j_dist
                );
            }
        }
    }

    #[test]
    fn single_unit_cross_benchmark_has_zero_deviations() {
        let d = parse("dmu,in:x,out:y\nonly,3,4\n");
        let result = cross_benchmark(&d, &cfg()).unwrap();
        assert_eq!(result.bundles.len(), 1);
        assert!(result.bundles[0].distance.abs() < 1e-9);
        for (_, _, _, v) in result.deviations.iter() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn deviation_signs_follow_reporting_convention() {
        let d = parse("dmu,in:x,out:y\nu,10,20\n");
        // A target using less input and more output than actual: both
        // deviations positive (room for improvement).
        let bundle = TargetBundle {
            dmu: 0,
            face: 1,
            inputs: vec![8.0],
            outputs: vec![25.0],
            intensities: vec![],
            distance: 0.45,
        };
        let matrix = deviation_report(&d, &[bundle], 1);
        assert!((matrix.get(0, 1, 0) - 0.2).abs() < 1e-12);
        assert!((matrix.get(0, 1, 1) - 0.25).abs() < 1e-12);

        // A target above the actual input: negative deviation.
        let worse = TargetBundle {
            dmu: 0,
            face: 1,
            inputs: vec![15.0],
            outputs: vec![20.0],
            intensities: vec![],
            distance: 0.5,
        };
        let matrix = deviation_report(&d, &[worse], 1);
        assert!((matrix.get(0, 1, 0) + 0.5).abs() < 1e-12);
        assert!(matrix.get(0, 1, 1).abs() < 1e-12);
    }

    #[test]
    fn best_face_distance_never_beats_selection_delta() {
        // Model-(7) re-optimization can only improve on the recorded best
        // distance of the selection bookkeeping.
        let d = parse(THREE_FACETS);
        let result = cross_benchmark(&d, &cfg()).unwrap();
        let faces = result.selection.steps.len();
        for j in 0..d.n() {
            let min_bundle = (0..faces)
                .map(|h| result.bundles[j * faces + h].distance)
                .fold(f64::INFINITY, f64::min);
            assert!(
                min_bundle <= result.selection.best_distances[j] + 1e-7,
                "dmu {j}: bundle min {min_bundle} vs delta {}",
                result.selection.best_distances[j]
            );
        }
    }

    #[test]
    fn deviation_csv_layout() {
        let d = parse("dmu,in:x,out:y\nu,10,20\n");
        let bundle = TargetBundle {
            dmu: 0,
            face: 1,
            inputs: vec![8.0],
            outputs: vec![25.0],
            intensities: vec![],
            distance: 0.45,
        };
        let matrix = deviation_report(&d, &[bundle], 1);
        let csv = matrix.to_csv(&d);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("dmu,face,factor,deviation"));
        assert_eq!(lines.next(), Some("u,1,in:x,0.2"));
        assert_eq!(lines.next(), Some("u,1,out:y,0.25"));
    }
}
