use std::sync::Arc;

use mmspec::energy::{Edge, EnergyForm, Exponent};
use mmspec::flow::{prox_step, DirichletFunctional};
use mmspec::models;
use mmspec::space::{DiscreteSpace, L2Function, RawSpace};
use mmspec::spectrum::{minmax_upper_bound, quadratic_oracle};
use mmspec::transport::{plan_to_map, solve_ot};
use proptest::prelude::*;

fn line_space(weights: &[f64], xs: &[f64]) -> Arc<DiscreteSpace> {
    let total: f64 = weights.iter().sum();
    let raw = RawSpace {
        ids: (0..weights.len()).map(|i| format!("p{i}")).collect(),
        coords: xs.iter().map(|x| vec![*x]).collect(),
        dist: None,
        measure: weights.iter().map(|w| w / total).collect(),
    };
    Arc::new(DiscreteSpace::validate(raw).unwrap())
}

fn distinct_points(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|gaps| {
        gaps.iter()
            .scan(0.0, |acc, g| {
                *acc += g;
                Some(*acc)
            })
            .collect()
    })
}

/// Path on `n` points with positive weights and edge weights.
fn path_energy() -> impl Strategy<Value = (Arc<DiscreteSpace>, Vec<Edge>)> {
    (3usize..9).prop_flat_map(|n| {
        (prop::collection::vec(0.1f64..1.0, n), distinct_points(n), prop::collection::vec(0.2f64..3.0, n - 1)).prop_map(
            |(w, xs, ew)| {
                let space = line_space(&w, &xs);
                let edges = ew.iter().enumerate().map(|(i, &c)| Edge::new(i, i + 1, c)).collect();
                (space, edges)
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn energy_is_two_homogeneous_and_shift_invariant(
        (space, edges) in path_energy(),
        vals in prop::collection::vec(-2.0f64..2.0, 9),
        c in -3.0f64..3.0,
        shift in -5.0f64..5.0,
        inf in any::<bool>(),
    ) {
        let e = if inf {
            EnergyForm::lq(&space, Exponent::Infinity, &edges).unwrap()
        } else {
            EnergyForm::quadratic(&space, edges).unwrap()
        };
        let u = L2Function::from_fn(&space, |i| vals[i]);
        let base = e.energy(&u).unwrap();
        let scaled = e.energy(&u.scaled(c)).unwrap();
        prop_assert!((scaled - c * c * base).abs() <= 1e-9 * (1.0 + scaled.abs()));
        let moved = e.energy(&u.axpy(shift, &L2Function::constant(&space, 1.0)).unwrap()).unwrap();
        prop_assert!((moved - base).abs() <= 1e-9 * (1.0 + base));
    }

    #[test]
    fn rayleigh_quotient_lies_in_the_spectrum_range(
        (space, edges) in path_energy(),
        vals in prop::collection::vec(-2.0f64..2.0, 9),
    ) {
        let e = EnergyForm::quadratic(&space, edges).unwrap();
        let eig = quadratic_oracle(&e).unwrap();
        let u = L2Function::from_fn(&space, |i| vals[i]);
        prop_assume!(u.norm() > 1e-3);
        let rq = e.energy(&u).unwrap() / u.norm().powi(2);
        let top = *eig.values.last().unwrap();
        prop_assert!(rq >= -1e-12 && rq <= top * (1.0 + 1e-10) + 1e-12);
    }

    #[test]
    fn resolvent_is_nonexpansive(
        (space, edges) in path_energy(),
        a in prop::collection::vec(-2.0f64..2.0, 9),
        b in prop::collection::vec(-2.0f64..2.0, 9),
        tau in 0.001f64..1.0,
        inf in any::<bool>(),
    ) {
        let e = if inf {
            EnergyForm::lq(&space, Exponent::Infinity, &edges).unwrap()
        } else {
            EnergyForm::quadratic(&space, edges).unwrap()
        };
        let phi = DirichletFunctional::half(e);
        let u = L2Function::from_fn(&space, |i| a[i]);
        let v = L2Function::from_fn(&space, |i| b[i]);
        let ju = prox_step(&phi, &u, tau).unwrap();
        let jv = prox_step(&phi, &v, tau).unwrap();
        prop_assert!(ju.dist(&jv).unwrap() <= u.dist(&v).unwrap() * (1.0 + 1e-7) + 1e-9);
    }

    #[test]
    fn minmax_values_are_monotone_in_k((space, edges) in path_energy()) {
        let e = EnergyForm::quadratic(&space, edges).unwrap();
        let vals: Vec<f64> = (1..=space.len() + 1).map(|k| minmax_upper_bound(&e, k, 2).unwrap().value).collect();
        prop_assert!(vals.windows(2).all(|w| w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs())));
        prop_assert!(vals.last().unwrap().is_infinite());
    }

    #[test]
    fn coupling_has_the_right_marginals_and_maps_are_isometric(
        wa in prop::collection::vec(0.1f64..1.0, 1..7),
        wb in prop::collection::vec(0.1f64..1.0, 1..7),
        f in prop::collection::vec(-3.0f64..3.0, 7),
        g in prop::collection::vec(-3.0f64..3.0, 7),
    ) {
        let a = line_space(&wa, &(0..wa.len()).map(|i| i as f64 / wa.len() as f64).collect::<Vec<_>>());
        let b = line_space(&wb, &(0..wb.len()).map(|i| 0.05 + i as f64 / wb.len() as f64).collect::<Vec<_>>());
        let plan = solve_ot(&a, &b).unwrap();
        prop_assert!(plan.marginal_error() <= 1e-12);
        prop_assert!(plan.cost >= 0.0);
        let map = plan_to_map(&plan);
        let (x, y) = (L2Function::from_fn(&b, |i| f[i]), L2Function::from_fn(&b, |i| g[i]));
        let (px, py) = (map.pull_back(&x).unwrap(), map.pull_back(&y).unwrap());
        prop_assert!((px.inner(&py).unwrap() - x.inner(&y).unwrap()).abs() <= 1e-10 * (1.0 + x.norm() * y.norm()));
    }

    #[test]
    fn cycle_spectrum_follows_the_circulant_formula(n in 3usize..40, c in 0.5f64..3.0) {
        let e = models::cycle(n, c).unwrap().quadratic();
        let eig = quadratic_oracle(&e).unwrap();
        let mut expect: Vec<f64> = (0..n)
            .map(|j| 2.0 * (n * n) as f64 / (c * c) * (1.0 - (2.0 * std::f64::consts::PI * j as f64 / n as f64).cos()))
            .collect();
        expect.sort_by(f64::total_cmp);
        for (a, b) in eig.values.iter().zip(&expect) {
            prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b));
        }
    }
}
