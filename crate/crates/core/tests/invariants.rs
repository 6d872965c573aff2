//! Property tests of the geometric pipeline on the shipped models.

use proptest::prelude::*;
use transverse::comparison::{check_laplacian_comparison, radial_dirichlet_eigenvalue, rayleigh_quotient, BumpFunction};
use transverse::connection::{verify_structure_identities, PointGeometry};
use transverse::geodesic::{distance_to_leaf, integrate_geodesic, invert_normal_exp, normal_exp, ShootingOptions};
use transverse::jacobi::{exp_differential, hessian_form, DEFAULT_STEP};
use transverse::zoo::{build_default, ModelSpec};

fn horizontal(spec: &ModelSpec, p: &[f64], comps: &[f64]) -> Vec<f64> {
    let geo = PointGeometry::first_order(&spec.chart, p).unwrap();
    let mut c = comps.to_vec();
    c.resize(spec.chart.dim_total(), 0.0);
    geo.coordinates(&c)
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn exp_differential_is_linear(
        z in -1.0..1.0f64, a in 0.3..1.5f64, b in -1.0..1.0f64,
        v1 in prop::array::uniform3(-1.0..1.0f64), v2 in prop::array::uniform3(-1.0..1.0f64), s in -2.0..2.0f64,
    ) {
        let spec = build_default("heisenberg").unwrap();
        let y = [0.0, 0.0, z];
        let u = horizontal(&spec, &y, &[a, b]);
        let d1 = exp_differential(&spec.chart, &y, &u, &v1).unwrap().components;
        let d2 = exp_differential(&spec.chart, &y, &u, &v2).unwrap().components;
        let mix: Vec<f64> = v1.iter().zip(&v2).map(|(p, q)| p + s * q).collect();
        let dm = exp_differential(&spec.chart, &y, &u, &mix).unwrap().components;
        for i in 0..3 {
            prop_assert!((dm[i] - d1[i] - s * d2[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn hessian_polarizes_to_a_symmetric_form(angle in 0.0..6.28f64, r in 0.4..2.5f64, p in -1.0..1.0f64, q in -1.0..1.0f64) {
        let spec = build_default("hyperbolic_product").unwrap();
        let u: Vec<f64> = horizontal(&spec, &spec.seed_point, &[angle.cos(), angle.sin()]).iter().map(|x| x * r).collect();
        let target = normal_exp(&spec.chart, &spec.seed_point, &u).unwrap();
        let hess = hessian_form(&spec.chart, &spec.leaf, &spec.seed_point, &target, DEFAULT_STEP).unwrap();
        let geo = PointGeometry::first_order(&spec.chart, &target).unwrap();
        let x = geo.coordinates(&[p, q, 0.3]);
        let y = geo.coordinates(&[q, -p, -0.2]);
        let plus: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let minus: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let polar = (hess.eval(&plus).unwrap() - hess.eval(&minus).unwrap()) / 4.0;
        let cx = hess.components(&x).unwrap();
        let cy = hess.components(&y).unwrap();
        prop_assert!((polar - hess.bilinear(&cx, &cy)).abs() < 1e-7);
        prop_assert!((hess.bilinear(&cx, &cy) - hess.bilinear(&cy, &cx)).abs() < 1e-7);
    }

    #[test]
    fn boundary_value_fields_hit_their_targets(angle in 0.0..6.28f64, r in 0.4..3.0f64, z in -1.0..1.0f64) {
        let spec = build_default("heisenberg").unwrap();
        let y = [0.0, 0.0, z];
        let u: Vec<f64> = horizontal(&spec, &y, &[angle.cos(), angle.sin()]).iter().map(|x| x * r).collect();
        let target = normal_exp(&spec.chart, &y, &u).unwrap();
        let hess = hessian_form(&spec.chart, &spec.leaf, &spec.seed_point, &target, DEFAULT_STEP).unwrap();
        let d = hess.dim();
        for j in 0..d {
            let mut xi = vec![0.0; d];
            xi[j] = 1.0;
            let st = hess.bvp_field(&xi, hess.rho).unwrap();
            // V(ρ) = P_{j+1}: parallel components 1..n of the value part
            for (a, v) in st[..3].iter().enumerate() {
                let want = if a == j + 1 { 1.0 } else { 0.0 };
                prop_assert!((v - want).abs() < 1e-9, "j {} a {} got {}", j, a, v);
            }
        }
    }

    #[test]
    fn normal_exp_round_trips(s in -0.9..0.9f64, angle in 0.0..6.28f64, r in 0.1..3.0f64) {
        let spec = build_default("hyperbolic_product").unwrap();
        let y = spec.leaf.point(&spec.seed_point, &[s]);
        let u: Vec<f64> = horizontal(&spec, &y, &[angle.cos(), angle.sin()]).iter().map(|x| x * r).collect();
        let target = normal_exp(&spec.chart, &y, &u).unwrap();
        let res = invert_normal_exp(&spec.chart, &spec.leaf, &spec.seed_point, &target, None, ShootingOptions::default()).unwrap();
        prop_assert!((res.rho - r).abs() < 1e-8);
        for (a, b) in res.base.iter().zip(&y) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn distance_is_constant_along_leaves(x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64, dz in -1.0..1.0f64) {
        let spec = build_default("heisenberg").unwrap();
        prop_assume!(x.abs() + y.abs() > 0.1);
        let d0 = distance_to_leaf(&spec.chart, &spec.leaf, &spec.seed_point, &[x, y, z]).unwrap();
        let d1 = distance_to_leaf(&spec.chart, &spec.leaf, &spec.seed_point, &[x, y, z + dz]).unwrap();
        prop_assert!((d0 - d1).abs() < 1e-9);
        prop_assert!((d0 - (x * x + y * y).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn horizontal_geodesics_stay_horizontal(p in prop::array::uniform3(-1.0..1.0f64), angle in 0.0..6.28f64) {
        for id in ["heisenberg", "sol", "horosphere_h3"] {
            let spec = build_default(id).unwrap();
            let nh = spec.chart.dim_horizontal();
            let dir = if nh == 2 { vec![angle.cos(), angle.sin()] } else { vec![angle.cos().signum()] };
            let mut q = p.to_vec();
            if id == "horosphere_h3" {
                q[2] = 1.0 + 0.5 * q[2];
            }
            let u = horizontal(&spec, &q, &dir);
            let path = integrate_geodesic(&spec.chart, &q, &u, 3.0, 1e-10).unwrap();
            let d = path.drifts(&spec.chart).unwrap();
            prop_assert!(d.vertical < 1e-8 && d.speed < 1e-8, "{}: {:?}", id, d);
        }
    }

    #[test]
    fn comparison_holds_on_random_targets(x in -1.5..1.5f64, y in -1.5..1.5f64, z in -1.0..1.0f64) {
        prop_assume!(x.abs() + y.abs() > 0.2);
        let spec = build_default("heisenberg").unwrap();
        let rep = check_laplacian_comparison(&spec.chart, &spec.leaf, &spec.seed_point, 0.0, &[vec![x, y, z]]).unwrap();
        prop_assert!(rep.pass && rep.min_margin_h > -1e-6);
    }

    #[test]
    fn horizontal_quotient_never_exceeds_full(cx in -0.5..0.5f64, cy in 1.0..1.6f64, cz in -0.5..0.5f64, radius in 0.15..0.3f64) {
        let spec = build_default("hyperbolic_product").unwrap();
        let bump = BumpFunction::new(&spec.chart, &spec.leaf, &spec.seed_point, &[cx, cy, cz], radius, 1.0);
        prop_assume!(bump.is_ok());
        let q = rayleigh_quotient(&spec.chart, &bump.unwrap(), 64).unwrap();
        prop_assert!(q.horizontal <= q.full + 1e-10);
        prop_assert!(q.horizontal >= 0.25);
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn structure_identities_hold_for_any_seed(seed in any::<u64>()) {
        for id in ["heisenberg", "sol", "hyperbolic_product"] {
            let spec = build_default(id).unwrap();
            let rep = verify_structure_identities(&spec.chart, 4, seed).unwrap();
            prop_assert!(rep.max_residual() < 1e-7, "{}: {:?}", id, rep);
        }
    }

    #[test]
    fn radial_eigenvalue_decreases_toward_the_bound(r in 2.0..30.0f64, dr in 0.5..10.0f64) {
        let a = radial_dirichlet_eigenvalue(2, 1.0, r, 800).unwrap();
        let b = radial_dirichlet_eigenvalue(2, 1.0, r + dr, 800).unwrap();
        prop_assert!(a.gap > 0.0 && b.gap > 0.0);
        prop_assert!(b.lambda < a.lambda);
    }
}
