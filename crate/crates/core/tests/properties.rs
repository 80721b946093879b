use proptest::prelude::*;
use sllg::algebra::{cross_shift_solve, exp_sg_apply, rotate, NoiseCoefficient};
use sllg::fem::{assemble_stiffness, dirichlet_energy, project_to_sphere};
use sllg::io::{KRule, SimulationConfig};
use sllg::mesh::uniform_unit_square_mesh;
use sllg::stochastic::sample_path;
use sllg::{NodalField, Vec3};

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    [-range..range, -range..range, -range..range].prop_map(|[x, y, z]| Vec3::new(x, y, z))
}

fn unit_vec3() -> impl Strategy<Value = Vec3> {
    vec3(1.0).prop_filter("away from zero", |v| v.norm() > 1e-2).prop_map(|v| v.normalize())
}

proptest! {
    #[test]
    fn projection_is_idempotent(values in prop::collection::vec(vec3(5.0).prop_filter("nonzero", |v| v.norm() > 1e-3), 1..40)) {
        let u = NodalField::from_values(values).unwrap();
        let p = project_to_sphere(&u).unwrap();
        prop_assert!(p.max_unit_defect() <= 1e-15);
        prop_assert!(project_to_sphere(&p).unwrap().max_abs_diff(&p) <= 1e-15);
    }

    #[test]
    fn projection_lowers_energy_on_right_meshes(
        n in 2usize..7,
        seed in vec3(1.0),
        scale in 1.0f64..4.0,
    ) {
        let mesh = uniform_unit_square_mesh(n).unwrap();
        let a = assemble_stiffness(&mesh).unwrap();
        // smooth but wildly varying field with moduli at least 1
        let u = NodalField::from_values(
            mesh.nodes()
                .iter()
                .map(|p| {
                    let phase = 7.0 * (seed.x * p[0] + seed.y * p[1]) + seed.z;
                    let dir = Vec3::new(phase.cos(), phase.sin(), (3.0 * phase).sin()).normalize();
                    dir * (1.0 + scale * (p[0] + 0.5) * (p[1] + 0.5))
                })
                .collect(),
        )
        .unwrap();
        let before = dirichlet_energy(&a, &u).unwrap();
        let after = dirichlet_energy(&a, &project_to_sphere(&u).unwrap()).unwrap();
        prop_assert!(after <= before * (1.0 + 1e-14));
    }

    #[test]
    fn rotation_preserves_length_and_composes(u in vec3(3.0), g in unit_vec3(), s in -10.0f64..10.0, t in -10.0f64..10.0) {
        let r = rotate(s, &u, &g);
        prop_assert!((r.norm() - u.norm()).abs() <= 1e-13);
        prop_assert!((rotate(t, &r, &g) - rotate(s + t, &u, &g)).amax() <= 1e-13);
        prop_assert!((r.dot(&g) - u.dot(&g)).abs() <= 1e-13);
    }

    #[test]
    fn field_rotation_matches_pointwise(u in vec3(2.0), g in unit_vec3(), s in -6.0f64..6.0) {
        let mesh = uniform_unit_square_mesh(1).unwrap();
        let nc = NoiseCoefficient::constant(&mesh, g).unwrap();
        let field = exp_sg_apply(s, &NodalField::constant(4, u), &nc).unwrap();
        prop_assert!((field[3] - rotate(s, &u, &g)).amax() <= 1e-14);
    }

    #[test]
    fn cross_shift_inverts(l1 in 0.1f64..5.0, l2 in 0.0f64..5.0, zeta in unit_vec3(), psi in vec3(10.0)) {
        let phi = cross_shift_solve(l1, l2, &zeta, &psi).unwrap();
        prop_assert!((l1 * phi + l2 * phi.cross(&zeta) - psi).norm() <= 1e-12 * (1.0 + psi.norm()));
    }

    #[test]
    fn increments_sum_to_the_path(seed in any::<u64>(), index in any::<u64>(), steps in 1usize..200) {
        let p = sample_path(seed, index, steps, 1.0 / steps as f64).unwrap();
        for j in 0..steps {
            prop_assert_eq!(p.cumulative()[j + 1] - p.cumulative()[j], p.increments()[j]);
        }
        prop_assert_eq!(p.clone(), sample_path(seed, index, steps, 1.0 / steps as f64).unwrap());
    }

    #[test]
    fn k_rules_give_integer_step_counts(n in 1usize..80, t in prop::sample::select(vec![1.0, 2.0, 3.0])) {
        let c = SimulationConfig { final_time: t, ..SimulationConfig::default() };
        for (rule, div) in [(KRule::H, 1.0), (KRule::HalfH, 2.0), (KRule::QuarterH, 4.0)] {
            let j = c.resolve_steps(n, rule);
            prop_assert!(((t / j as f64) - 1.0 / (div * n as f64)).abs() <= 1e-12);
        }
    }
}
