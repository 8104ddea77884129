use std::sync::Arc;

use proptest::prelude::*;

use super::*;
use crate::measures::{group_by_condition, random_joint_instance, DiscreteJointMeasure};

const TOL: f64 = 1e-9;

fn appendix_pair(n: f64) -> (DiscreteJointMeasure, DiscreteJointMeasure) {
    let mu = DiscreteJointMeasure::uniform(1, 1, vec![(vec![0.0], vec![0.0]), (vec![1.0], vec![n])]).unwrap();
    let nu = DiscreteJointMeasure::uniform(1, 1, vec![(vec![1.0], vec![0.0]), (vec![0.0], vec![n])]).unwrap();
    (mu, nu)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Minimum over every per-condition permutation of `Σ_y P_Y(y) (1/n) Σ ‖x − z_σ‖^p`,
/// enumerated condition by condition (the conditions decouple).
fn brute_force_conditional_cost(mu: &DiscreteJointMeasure, nu: &DiscreteJointMeasure, p: f64) -> f64 {
    let ga = group_by_condition(mu, TOL).unwrap();
    let gb = group_by_condition(nu, TOL).unwrap();
    let mut total = 0.0;
    for a in &ga {
        let b = gb.iter().find(|g| crate::measures::euclidean(&g.y, &a.y) <= TOL).unwrap();
        let n = a.len();
        let best = permutations(n)
            .into_iter()
            .map(|perm| {
                (0..n)
                    .map(|i| crate::measures::euclidean(&a.conditional[i].0, &b.conditional[perm[i]].0).powf(p))
                    .sum::<f64>()
                    / n as f64
            })
            .fold(f64::INFINITY, f64::min);
        total += a.weight * best;
    }
    total
}

#[test]
fn appendix_example_values() {
    for n in [2.0, 5.0, 10.0] {
        let (mu, nu) = appendix_pair(n);
        assert_eq!(wasserstein(&mu, &nu, 1.0).unwrap().value, 1.0);
        let cw = conditional_wasserstein(&mu, &nu, 1.0, TOL).unwrap();
        assert_eq!(cw.value, n);
        assert!(cw.plan.is_y_diagonal());
        assert_eq!(y_leakage(&cw.plan, 1.0), 0.0);
        let relaxed = relaxed_wasserstein(&mu, &nu, &CostSpec::relaxed(1.0, 1.0)).unwrap();
        assert_eq!(relaxed.value, 1.0);
        assert_eq!(y_leakage(&relaxed.plan, 1.0), 1.0);
    }
    let (mu, nu) = appendix_pair(5.0);
    let strong = relaxed_wasserstein(&mu, &nu, &CostSpec::relaxed(1.0, 36.0)).unwrap();
    assert_eq!(strong.value, 5.0);
    assert_eq!(y_leakage(&strong.plan, 1.0), 0.0);
}

#[test]
fn identical_measures_have_zero_distance() {
    let (mu, _) = random_joint_instance(9, 2, 2, 3, 4).unwrap();
    let cw = conditional_wasserstein(&mu, &mu, 2.0, TOL).unwrap();
    assert_eq!(cw.value, 0.0);
    assert!(cw.plan.entries().iter().all(|e| e.i == e.j));
    assert_eq!(relaxed_wasserstein(&mu, &mu, &CostSpec::relaxed(2.0, 3.0)).unwrap().value, 0.0);
    let dual = dual_certificate(&mu, &mu, TOL).unwrap();
    assert!(dual.value.abs() < 1e-12 && dual.gap < 1e-12);
}

#[test]
fn brute_force_agreement_small() {
    for seed in 0..10 {
        let (mu, nu) = random_joint_instance(seed, 1, 2, 2, 3).unwrap();
        for p in [1.0, 2.0] {
            let cw = conditional_wasserstein(&mu, &nu, p, TOL).unwrap();
            assert!((cw.cost - brute_force_conditional_cost(&mu, &nu, p)).abs() < 1e-10);
        }
    }
}

#[test]
fn unsupported_exponent_and_marginal_mismatch() {
    let (mu, nu) = random_joint_instance(1, 1, 1, 2, 2).unwrap();
    assert!(matches!(conditional_wasserstein(&mu, &nu, 3.0, TOL), Err(crate::Error::UnsupportedExponent(_))));
    let (other, _) = random_joint_instance(2, 1, 1, 2, 2).unwrap();
    assert!(matches!(conditional_wasserstein(&mu, &other, 2.0, TOL), Err(crate::Error::MarginalMismatch)));
    assert!(relaxed_wasserstein(&mu, &nu, &CostSpec::strict(2.0)).is_err());
}

#[test]
fn unequal_conditionals_route_through_transport_solver() {
    // Condition 0: 1 source atom vs 2 target atoms; condition 1: 3 vs 2 with
    // non-uniform weights.
    use crate::measures::Atom;
    let mu = DiscreteJointMeasure::new(
        1,
        1,
        vec![
            Atom::new(vec![0.0], vec![0.0], 0.4),
            Atom::new(vec![1.0], vec![1.0], 0.3),
            Atom::new(vec![1.0], vec![2.0], 0.2),
            Atom::new(vec![1.0], vec![4.0], 0.1),
        ],
    )
    .unwrap();
    let nu = DiscreteJointMeasure::new(
        1,
        1,
        vec![
            Atom::new(vec![0.0], vec![1.0], 0.2),
            Atom::new(vec![0.0], vec![-1.0], 0.2),
            Atom::new(vec![1.0], vec![0.0], 0.3),
            Atom::new(vec![1.0], vec![3.0], 0.3),
        ],
    )
    .unwrap();
    let cw = conditional_wasserstein(&mu, &nu, 1.0, TOL).unwrap();
    // Condition 0: all mass travels distance 1.
    // Condition 1 in 1D, W1 = ∫|F − G|: on [0,1) .5, [1,2) 0, [2,3) 1/3, [3,4) 1/6 -> 1.
    let expected = 0.4 * 1.0 + 0.6 * (0.5 + 1.0 / 3.0 + 1.0 / 6.0);
    assert!((cw.cost - expected).abs() < 1e-12, "{} vs {expected}", cw.cost);
    let dual = dual_certificate(&mu, &nu, TOL).unwrap();
    assert!(dual.gap < 1e-9);
}

#[test]
fn plan_conversions_on_identity_and_appendix() {
    let (mu, _) = random_joint_instance(3, 1, 1, 2, 3).unwrap();
    let id = Plan4::identity(Arc::new(mu));
    let p3 = plan4_to_plan3(&id, TOL).unwrap();
    assert!(p3.entries().iter().all(|e| e.i == e.j));
    assert_eq!(p3.cost(2.0), 0.0);

    let (mu, nu) = appendix_pair(5.0);
    let cw = conditional_wasserstein(&mu, &nu, 1.0, TOL).unwrap();
    let p3 = plan4_to_plan3(&cw.plan, TOL).unwrap();
    assert_eq!(p3.cost(1.0), 5.0);
    assert_eq!(p3.cost(2.0), 25.0);
    let back = plan3_to_plan4(&p3);
    assert_eq!(back.entries(), cw.plan.entries());

    let crossing = relaxed_wasserstein(&mu, &nu, &CostSpec::relaxed(1.0, 1.0)).unwrap();
    assert!(matches!(plan4_to_plan3(&crossing.plan, TOL), Err(crate::Error::NotDiagonal)));
}

#[test]
fn plan_json_schema() {
    let (mu, nu) = appendix_pair(2.0);
    let cw = conditional_wasserstein(&mu, &nu, 1.0, TOL).unwrap();
    let rec = cw.plan.to_record(cw.value);
    let s = serde_json::to_string(&rec).unwrap();
    assert_eq!(s, r#"{"entries":[{"i":0,"j":1,"m":0.5},{"i":1,"j":0,"m":0.5}],"y_diagonal":true,"value":2.0}"#);
    let parsed: PlanRecord = serde_json::from_str(&s).unwrap();
    let rebuilt = Plan4::from_record(&parsed, cw.plan.source_arc().clone(), cw.plan.target_arc().clone(), TOL).unwrap();
    assert_eq!(rebuilt.entries(), cw.plan.entries());
}

#[test]
fn plan_validation_rejects_bad_marginals_and_fake_diagonal() {
    let (mu, nu) = appendix_pair(2.0);
    let (a, b) = (Arc::new(mu), Arc::new(nu));
    let half = |i, j| PlanEntry { i, j, mass: 0.5 };
    assert!(Plan4::new(a.clone(), b.clone(), vec![half(0, 1)], false, TOL).is_err());
    assert!(matches!(
        Plan4::new(a.clone(), b.clone(), vec![half(0, 0), half(1, 1)], true, TOL),
        Err(crate::Error::NotDiagonal)
    ));
    assert!(Plan4::new(a, b, vec![half(0, 0), half(1, 1)], false, TOL).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn conditional_equals_expected_conditional_cost(
        seed in 0u64..10_000, d in 1usize..3, m in 1usize..3, nc in 1usize..4, np in 1usize..5, p2 in any::<bool>()
    ) {
        let p = if p2 { 2.0 } else { 1.0 };
        let (mu, nu) = random_joint_instance(seed, d, m, nc, np).unwrap();
        let cw = conditional_wasserstein(&mu, &nu, p, TOL).unwrap();
        let sum: f64 = cw.per_condition.iter().map(|c| c.weight * c.cost).sum();
        prop_assert!((cw.cost - sum).abs() < 1e-10);
        prop_assert!((cw.plan.cost(p) - cw.cost).abs() < 1e-10);
        // Each condition's sub-plan re-solved independently.
        for c in &cw.per_condition {
            let pick = |m: &DiscreteJointMeasure| {
                let pts: Vec<_> = m.atoms().iter()
                    .filter(|a| crate::measures::euclidean(&a.y, &c.y) <= TOL)
                    .map(|a| (a.y.clone(), a.x.clone())).collect();
                DiscreteJointMeasure::uniform(m.d(), m.m(), pts).unwrap()
            };
            let w = wasserstein(&pick(&mu), &pick(&nu), p).unwrap();
            prop_assert!((w.cost - c.cost).abs() < 1e-10);
        }
    }

    #[test]
    fn relaxed_is_monotone_in_beta_and_below_conditional(seed in 0u64..10_000, nc in 1usize..4, np in 1usize..5) {
        let (mu, nu) = random_joint_instance(seed, 1, 2, nc, np).unwrap();
        let cw = conditional_wasserstein(&mu, &nu, 2.0, TOL).unwrap();
        let plain = wasserstein(&mu, &nu, 2.0).unwrap();
        let mut last = 0.0;
        for beta in [0.0, 0.5, 1.0, 4.0, 20.0, 100.0, 1e4] {
            let r = relaxed_wasserstein(&mu, &nu, &CostSpec::relaxed(2.0, beta)).unwrap();
            prop_assert!(r.cost >= last - 1e-10);
            prop_assert!(r.cost <= cw.cost + 1e-10);
            prop_assert!(beta * r.plan.y_leakage(2.0) <= cw.cost + 1e-9);
            if beta == 1.0 {
                prop_assert!((r.cost - plain.cost).abs() < 1e-10);
            }
            last = r.cost;
        }
    }

    #[test]
    fn plan_round_trip(seed in 0u64..10_000, nc in 1usize..4, np in 1usize..6, p2 in any::<bool>()) {
        let p = if p2 { 2.0 } else { 1.0 };
        let (mu, nu) = random_joint_instance(seed, 2, 2, nc, np).unwrap();
        let cw = conditional_wasserstein(&mu, &nu, p, TOL).unwrap();
        let p3 = plan4_to_plan3(&cw.plan, TOL).unwrap();
        prop_assert!(p3.marginal_violation() < 1e-12);
        prop_assert!((p3.cost(p) - cw.plan.cost(p)).abs() < 1e-12);
        let back = plan3_to_plan4(&p3);
        prop_assert_eq!(back.entries(), cw.plan.entries());
    }
}
