//! Cross-module checks of the two-scale driver against independent oracles:
//! a single-scale finite element solve (exact for homogeneous cells), the
//! trained surrogate's error bound, and generalization to held-out data.

use fe2_core::driver::{
    run_fe2, uniaxial_stretch_problem, ConstitutiveProvider, LoadKind, LoadSchedule, MacroProblem,
    TangentPolicy,
};
use fe2_core::fe::constraints::ConstraintSet;
use fe2_core::fe::mesh::Mesh;
use fe2_core::fe::newton::newton_solve_from;
use fe2_core::fe::quadrature::QuadratureRule;
use fe2_core::net::{evaluate_mse, surrogate_pk, train_lm, MlpNetwork, TrainingConfig};
use fe2_core::pipeline::{generate_dataset, sample_deformation_gradients, SamplingSpec};
use fe2_core::rve::{BcMode, RveProblem};
use fe2_core::tensor::{neo_hookean_pk, MaterialParams, Tensor2};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mat11() -> MaterialParams {
    MaterialParams::new(1.0, 1.0).unwrap()
}

/// Single-scale oracle: the same load stepping applied to a plain
/// neo-Hookean solve on the macro mesh.
fn single_scale_displacements(problem: &MacroProblem, mat: MaterialParams) -> Vec<DVector<f64>> {
    let mut u = DVector::zeros(problem.mesh.n_dofs());
    let mut out = Vec::new();
    for k in 1..=problem.load.n_increments {
        let factor = k as f64 / problem.load.n_increments as f64;
        let mut constraints = problem.fixed_bcs.clone();
        let mut f_ext = None;
        match problem.load.kind {
            LoadKind::PrescribedDisplacement => {
                for &(node, dof, value) in &problem.load.targets {
                    constraints.fix(node, dof, factor * value);
                }
            }
            LoadKind::NodalForce => {
                let mut f = DVector::zeros(problem.mesh.n_dofs());
                for &(node, dof, value) in &problem.load.targets {
                    f[2 * node + dof] += factor * value;
                }
                f_ext = Some(f);
            }
        }
        let (u_new, report) = newton_solve_from(
            &problem.mesh,
            &mat,
            &problem.quad,
            &constraints,
            f_ext.as_ref(),
            &u,
            1e-10,
            30,
        )
        .unwrap();
        assert!(report.converged);
        u = u_new;
        out.push(u.clone());
    }
    out
}

fn assert_direct_matches_single_scale(problem: &MacroProblem) {
    let rve = RveProblem::homogeneous(2, mat11(), BcMode::Periodic).unwrap();
    let provider = ConstitutiveProvider::direct(rve, TangentPolicy::PerIteration);
    let result = run_fe2(problem, &provider, 1e-9, 30).unwrap();
    assert!(result.completed);
    let oracle = single_scale_displacements(problem, mat11());
    for (inc, u_ref) in result.increments.iter().zip(&oracle) {
        let scale = u_ref.amax().max(1e-12);
        for (a, b) in inc.u.iter().zip(u_ref.iter()) {
            assert!(
                (a - b).abs() <= 1e-6 * scale,
                "coupled vs single-scale mismatch: {a} vs {b} (scale {scale})"
            );
        }
    }
}

#[test]
fn direct_mode_equals_single_scale_uniaxial_stretch() {
    let problem = uniaxial_stretch_problem(2, 2, 0.1, 5).unwrap();
    assert_direct_matches_single_scale(&problem);
}

#[test]
fn direct_mode_equals_single_scale_shear() {
    let mesh = Mesh::structured(2, 2, 1.0, 1.0).unwrap();
    let mut fixed = ConstraintSet::default();
    let mut targets = Vec::new();
    for (n, &x) in mesh.nodes().iter().enumerate() {
        if x[1].abs() < 1e-12 {
            fixed.fix(n, 0, 0.0);
            fixed.fix(n, 1, 0.0);
        }
        if (x[1] - 1.0).abs() < 1e-12 {
            targets.push((n, 0, 0.08));
            targets.push((n, 1, 0.0));
        }
    }
    let problem = MacroProblem {
        mesh,
        quad: QuadratureRule::gauss_2x2(),
        load: LoadSchedule {
            kind: LoadKind::PrescribedDisplacement,
            targets,
            n_increments: 4,
        },
        fixed_bcs: fixed,
    };
    assert_direct_matches_single_scale(&problem);
}

#[test]
fn direct_mode_equals_single_scale_nodal_force() {
    let mesh = Mesh::structured(2, 2, 1.0, 1.0).unwrap();
    let mut fixed = ConstraintSet::default();
    let mut targets = Vec::new();
    for (n, &x) in mesh.nodes().iter().enumerate() {
        if x[0].abs() < 1e-12 {
            fixed.fix(n, 0, 0.0);
            if x[1].abs() < 1e-12 {
                fixed.fix(n, 1, 0.0);
            }
        }
        if (x[0] - 1.0).abs() < 1e-12 {
            targets.push((n, 0, 0.05));
        }
    }
    let problem = MacroProblem {
        mesh,
        quad: QuadratureRule::gauss_2x2(),
        load: LoadSchedule {
            kind: LoadKind::NodalForce,
            targets,
            n_increments: 3,
        },
        fixed_bcs: fixed,
    };
    assert_direct_matches_single_scale(&problem);
}

fn trained_surrogate() -> (MlpNetwork, f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let rve = RveProblem::homogeneous(2, mat11(), BcMode::Periodic).unwrap();
    let samples = sample_deformation_gradients(&SamplingSpec {
        n_samples: 250,
        amplitude: 0.15,
        min_det: 0.5,
        seed: 3,
    })
    .unwrap();
    let gen = generate_dataset(&rve, &samples, 1e-10, 30).unwrap();
    // 80/20 split: every fifth row held out
    let mut train_set = fe2_core::net::Dataset::default();
    let mut held_f = Vec::new();
    let mut held_p = Vec::new();
    for (i, row) in gen.dataset.rows.iter().enumerate() {
        if i % 5 == 2 {
            held_f.push(row.f.to_vec());
            held_p.push(row.p.to_vec());
        } else {
            train_set.rows.push(*row);
        }
    }
    let net = MlpNetwork::init_nguyen_widrow(&[4, 16, 16, 4], 1).unwrap();
    let cfg = TrainingConfig {
        max_iterations: 200,
        target_mse: 1e-7,
        seed: 1,
        ..Default::default()
    };
    let (net, report) = train_lm(net, &train_set, &cfg).unwrap();
    (net, report.final_mse, held_f, held_p)
}

#[test]
fn surrogate_error_within_mse_bound_and_generalizes() {
    let (net, final_mse, held_f, held_p) = trained_surrogate();
    let sigma = final_mse.sqrt();
    // off-sample margin frozen from measurement: sqrt(training mse)
    // understates pointwise off-sample error by a factor of ~5-6 here
    let random_point_bound = 8.0 * sigma;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let f = loop {
            let f = Tensor2::new(
                1.0 + rng.gen_range(-0.15..0.15),
                rng.gen_range(-0.15..0.15),
                rng.gen_range(-0.15..0.15),
                1.0 + rng.gen_range(-0.15..0.15),
            );
            if f.det() > 0.5 {
                break f;
            }
        };
        let p_net = surrogate_pk(&net, f).unwrap();
        let p_exact = neo_hookean_pk(f, &mat11()).unwrap();
        for c in 0..4 {
            let err = (p_net.to_flat()[c] - p_exact.to_flat()[c]).abs();
            let scale = net.output_norm.scale[c];
            assert!(
                err <= random_point_bound * scale,
                "component {c}: error {err} exceeds {}",
                random_point_bound * scale
            );
        }
    }
    // the identity is a training point: training-point reproduction within
    // 3 sqrt(mse) x output scale
    let p0 = surrogate_pk(&net, Tensor2::IDENTITY).unwrap();
    let max_scale = net.output_norm.scale.iter().cloned().fold(0.0f64, f64::max);
    assert!(
        p0.max_abs() <= 3.0 * sigma * max_scale,
        "P(I) = {} exceeds training-point bound {}",
        p0.max_abs(),
        3.0 * sigma * max_scale
    );

    // held-out fifth of the data: no worse than 10x the training loss
    let held_mse = evaluate_mse(&net, &held_f, &held_p).unwrap();
    assert!(
        held_mse <= 10.0 * final_mse,
        "held-out mse {held_mse} vs training mse {final_mse}"
    );
}

#[test]
fn surrogate_mode_counts_extrapolation_warnings() {
    let (net, _, _, _) = trained_surrogate();
    let amplitude = net.meta.amplitude.unwrap();
    assert!(amplitude <= 0.15 + 1e-12);
    // 40% stretch leaves the training box; the run warns but proceeds
    let problem = uniaxial_stretch_problem(1, 1, 0.4, 2).unwrap();
    let provider = ConstitutiveProvider::surrogate(net, TangentPolicy::PerIteration);
    let result = run_fe2(&problem, &provider, 1e-6, 40).unwrap();
    assert!(
        result.extrapolation_warnings > 0,
        "no extrapolation warning recorded"
    );
    // within the box: no warnings
    let problem = uniaxial_stretch_problem(1, 1, 0.05, 1).unwrap();
    let (net2, _, _, _) = trained_surrogate();
    let provider = ConstitutiveProvider::surrogate(net2, TangentPolicy::PerIteration);
    let result = run_fe2(&problem, &provider, 1e-6, 40).unwrap();
    assert_eq!(result.extrapolation_warnings, 0);
}
