use std::sync::Arc;

use multispin::geometry::{overlap, sample_on_shell, sample_uniform};
use multispin::mixture::{log_volume_term, nesting_compose};
use multispin::seeding::rng_from_seed;
use multispin::{Backend, HamiltonianInstance, Mixture, OverlapVector, SpeciesLayout};
use proptest::prelude::*;

fn two_species() -> Vec<String> {
    vec!["a".into(), "b".into()]
}

fn mixture_strategy() -> impl Strategy<Value = Mixture> {
    prop::collection::btree_map((0u32..4, 0u32..4), 0.01f64..2.0, 1..6).prop_map(|terms| {
        let terms = terms.into_iter().filter(|((a, b), _)| a + b > 0).map(|((a, b), c)| (vec![a, b], c));
        Mixture::from_terms(two_species(), terms).unwrap()
    })
}

fn unit_interval() -> impl Strategy<Value = f64> {
    0.0f64..0.95
}

fn linear_part(m: &Mixture, x: &[f64]) -> f64 {
    m.coefficient(&[1, 0]) * x[0] + m.coefficient(&[0, 1]) * x[1]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn shifted_mixture_matches_definition(
        xi in mixture_strategy(),
        q in (unit_interval(), unit_interval()),
        x in (-1.0f64..1.0, -1.0f64..1.0),
    ) {
        let q = OverlapVector::new(vec![q.0, q.1]);
        let x = [x.0, x.1];
        let shifted = xi.shifted_coefficients(&q).unwrap();
        let arg = OverlapVector::new((0..2).map(|s| q.get(s) + (1.0 - q.get(s)) * x[s]).collect());
        let direct = xi.eval(&arg) - xi.eval(&q);
        prop_assert!((shifted.eval(&OverlapVector::new(x.to_vec())) - direct).abs() < 1e-10);

        let xi_q = xi.xi_q(&q).unwrap();
        let without_linear = direct - linear_part(&shifted, &x);
        prop_assert!((xi_q.eval(&OverlapVector::new(x.to_vec())) - without_linear).abs() < 1e-10);
        prop_assert!(!xi_q.has_linear_terms());
    }

    #[test]
    fn nesting_identity(
        xi in mixture_strategy(),
        q in (unit_interval(), unit_interval()),
        qp in (unit_interval(), unit_interval()),
    ) {
        let q = OverlapVector::new(vec![q.0, q.1]);
        let qp = OverlapVector::new(vec![qp.0, qp.1]);
        let q_hat = nesting_compose(&q, &qp).unwrap();
        let outer = xi.xi_q(&q_hat).unwrap();
        let inner = xi.xi_q(&q).unwrap().xi_q(&qp).unwrap();
        for (p, c) in outer.terms().chain(inner.terms()) {
            let d = outer.coefficient(p.degrees()) - inner.coefficient(p.degrees());
            prop_assert!(d.abs() < 1e-10 * c.abs().max(1.0), "{p:?}: {d}");
        }
        let layout = SpeciesLayout::new(two_species(), vec![3, 5]).unwrap();
        let sum = log_volume_term(&layout, &q).unwrap() + log_volume_term(&layout, &qp).unwrap();
        prop_assert!((sum - log_volume_term(&layout, &q_hat).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn overlaps_are_bounded_and_shells_hold(seed in any::<u64>(), qa in unit_interval(), qb in unit_interval()) {
        let layout = Arc::new(SpeciesLayout::new(two_species(), vec![4, 7]).unwrap());
        let mut rng = rng_from_seed(seed);
        let a = sample_uniform(&layout, &mut rng);
        let b = sample_uniform(&layout, &mut rng);
        let r = overlap(&a, &b).unwrap();
        prop_assert!(r.values().iter().all(|v| v.abs() <= 1.0 + 1e-12));
        let q = OverlapVector::new(vec![qa, qb]);
        let m = sample_on_shell(&layout, &q, &mut rng).unwrap();
        prop_assert!(m.is_on_shell(&q));
    }

    #[test]
    fn energy_is_homogeneous_per_degree(seed in 0u64..1000, t in 0.1f64..2.0) {
        // A pure degree-3 mixture scales like t^3 under sigma -> t sigma.
        let layout = Arc::new(SpeciesLayout::new(two_species(), vec![3, 2]).unwrap());
        let xi = Mixture::from_terms(two_species(), [(vec![2, 1], 1.0)]).unwrap();
        let h = HamiltonianInstance::build(&xi, layout.clone(), seed, Backend::CoefficientTensor).unwrap();
        let mut rng = rng_from_seed(seed);
        let s = sample_uniform(&layout, &mut rng);
        let e1 = h.energy(&s).unwrap();
        let et = h.energy(&s.scale_blocks(&[t, t])).unwrap();
        prop_assert!((et - t.powi(3) * e1).abs() < 1e-10 * (1.0 + e1.abs()));
    }
}
