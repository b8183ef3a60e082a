use agmt_core::error::Error;
use agmt_core::oracle::*;
use agmt_core::Lang;
use proptest::prelude::*;

const LN2: f64 = std::f64::consts::LN_2;

fn spec(base: usize, m: usize, len: usize, eta: f64) -> RandomSystemSpec {
    let mut s = RandomSystemSpec::new(3, base, m, len);
    s.max_weight = 1.0 / m as f64;
    s.max_perturbation = eta;
    s
}

/// Two surface synonyms per language, each chosen uniformly and
/// independently, one-token sentences.
fn synonym_truth() -> TabularSystem {
    with_truth_models(random_system(&spec(1, 2, 1, 0.0), chain_graph(), 5).unwrap())
}

fn set_rows(sys: &mut TabularSystem, s: usize, t: usize, rows: &[&[f64]]) {
    let n = rows.len();
    let probs = rows.iter().flat_map(|r| r.iter().copied()).collect();
    sys.set_model(TabularConditional::new(Lang(s), Lang(t), n, probs).unwrap()).unwrap();
}

#[test]
fn bijective_truth_has_unit_constants() {
    let sys = random_system(&spec(2, 1, 1, 0.0), chain_graph(), 1).unwrap();
    let c = assumption_constants(&sys).unwrap();
    assert!((c.delta - 1.0).abs() < 1e-12 && (c.xi - 1.0).abs() < 1e-12);
}

#[test]
fn uniform_synonyms_have_half_constants() {
    let sys = synonym_truth();
    // eight equally likely tuples: sum_k (1/8)^2 / ((1/4)(1/4)) over two k
    assert!(sys.truth().iter().all(|&p| (p - 0.125).abs() < 1e-15));
    let c = assumption_constants(&sys).unwrap();
    assert!((c.delta - 0.5).abs() < 1e-12 && (c.xi - 0.5).abs() < 1e-12);
}

#[test]
fn truth_models_have_unit_pivot_constant() {
    for (b, m, l) in [(1, 2, 1), (2, 2, 1), (1, 3, 2)] {
        let sys = with_truth_models(random_system(&RandomSystemSpec::new(3, b, m, l), chain_graph(), 7).unwrap());
        let c = measure_constants(&sys).unwrap().c.unwrap();
        assert!((c - 1.0).abs() < 1e-9, "{c}");
    }
}

#[test]
fn agreement_term_is_a_two_term_sum() {
    let mut sys = random_unstructured_system(chain_graph(), 2, 1, 3).unwrap();
    set_rows(&mut sys, 0, 2, &[&[0.3, 0.7], &[0.9, 0.1]]);
    set_rows(&mut sys, 1, 2, &[&[0.6, 0.4], &[0.2, 0.8]]);
    let o = exact_agreement_objective(&sys, (Lang(0), Lang(1)), 1, 0, ContextModel::Independent).unwrap();
    let hand: f64 = (0.9 * 0.6 + 0.1 * 0.4f64).ln();
    assert!((o.agreement - hand).abs() < 1e-15);
    assert!(o.residual.abs() < 1e-12);
    assert!((o.lower_bound_from_s - (0.9 * 0.6f64.ln() + 0.1 * 0.4f64.ln())).abs() < 1e-15);
    assert!(o.lower_bound_from_s <= o.agreement && o.lower_bound_from_t <= o.agreement);
}

#[test]
fn agreement_on_shared_point_mass_is_zero() {
    let mut sys = random_unstructured_system(chain_graph(), 2, 1, 4).unwrap();
    set_rows(&mut sys, 0, 2, &[&[1.0, 0.0], &[1.0, 0.0]]);
    set_rows(&mut sys, 1, 2, &[&[1.0, 0.0], &[1.0, 0.0]]);
    let o = exact_agreement_objective(&sys, (Lang(0), Lang(1)), 0, 1, ContextModel::Independent).unwrap();
    assert_eq!(o.agreement, 0.0);
}

#[test]
fn product_of_experts_context_reduces_with_flat_auxiliary() {
    let mut sys = random_unstructured_system(chain_graph(), 3, 1, 8).unwrap();
    let flat: &[f64] = &[1.0 / 3.0; 3];
    set_rows(&mut sys, 2, 0, &[flat, flat, flat]);
    set_rows(&mut sys, 2, 1, &[flat, flat, flat]);
    for xs in 0..3 {
        for xt in 0..3 {
            let a = exact_agreement_objective(&sys, (Lang(0), Lang(1)), xs, xt, ContextModel::ProductOfExperts).unwrap();
            assert!(a.residual.abs() < 1e-12);
        }
    }
    let sys = random_unstructured_system(chain_graph(), 3, 1, 9).unwrap();
    let b = exact_agreement_objective(&sys, (Lang(0), Lang(1)), 0, 1, ContextModel::ProductOfExperts).unwrap();
    assert!(b.residual.abs() > 1e-6);
}

#[test]
fn zero_shot_cross_entropy_cases() {
    let sys = random_system(&RandomSystemSpec::new(3, 2, 2, 1), chain_graph(), 12).unwrap();
    let truth = with_truth_models(sys.clone());
    // conditional entropy straight from the joint
    let n = sys.n();
    let mut h = 0.0;
    for a in 0..n {
        for c in 0..n {
            let (mut pac, mut pa) = (0.0, 0.0);
            for (idx, &p) in sys.truth().iter().enumerate() {
                let x = sys.tuple(idx);
                if x[0] == a {
                    pa += p;
                    if x[2] == c {
                        pac += p;
                    }
                }
            }
            if pac > 0.0 {
                h -= pac * (pac / pa).ln();
            }
        }
    }
    assert!((exact_zero_shot_ce(&truth, (Lang(0), Lang(2))).unwrap() - h).abs() < 1e-12);

    let mut uni = sys.clone();
    uni.set_model(TabularConditional::uniform(Lang(0), Lang(2), n)).unwrap();
    assert!((exact_zero_shot_ce(&uni, (Lang(0), Lang(2))).unwrap() - (n as f64).ln()).abs() < 1e-12);

    let mut wrong = truth.clone();
    let mut rows = vec![0.0; n * n];
    for i in 0..n {
        let best = truth.model(Lang(0), Lang(2)).row(i).iter().position(|&p| p == 0.0).unwrap();
        rows[i * n + best] = 1.0;
    }
    wrong.set_model(TabularConditional::new(Lang(0), Lang(2), n, rows).unwrap()).unwrap();
    assert_eq!(exact_zero_shot_ce(&wrong, (Lang(0), Lang(2))).unwrap(), f64::INFINITY);
    assert!(exact_zero_shot_ce(&truth, (Lang(0), Lang(1))).is_err());
}

#[test]
fn theorem1_on_truth_synonyms() {
    let r = verify_theorem1(&synonym_truth()).unwrap();
    assert!((r.epsilon_hat - LN2).abs() < 1e-12);
    // ln2 / (ln2 - ln2 / 2)
    assert!((r.kappa.unwrap() - 2.0).abs() < 1e-9);
    assert!((r.zero_shot_ce - LN2).abs() < 1e-12);
    assert_eq!(r.satisfied, Some(true));
    assert_eq!(r.distillation_ok, Some(true));
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("\"seed\":5") && json.contains("\"space_size\":2"));
}

#[test]
fn undefined_bound_is_not_a_violation() {
    let mut sys = random_system(&spec(2, 1, 1, 0.0), chain_graph(), 2).unwrap();
    for (s, t) in [(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0)] {
        sys.set_model(TabularConditional::uniform(Lang(s), Lang(t), 2)).unwrap();
    }
    let r = verify_theorem1(&sys).unwrap();
    assert_eq!(r.satisfied, None);
    assert!(!r.violated() && r.kappa.is_none() && r.note.is_some());
}

#[test]
fn theorem1_harness_has_no_violations() {
    let reports = theorem1_harness(200, 17, 0.6).unwrap();
    assert_eq!(reports.len(), 200);
    assert!(reports.iter().all(|r| r.xi <= 0.6 && r.delta <= r.xi && r.delta >= 0.0));
    assert_eq!(reports.iter().filter(|r| r.violated()).count(), 0);
    assert!(reports.iter().all(|r| r.distillation_ok == Some(true)));
}

#[test]
fn lemma_chain_on_truth_synonyms() {
    let sys = synonym_truth();
    let r = verify_lemma1(&sys, (Lang(0), Lang(1)), Lang(2)).unwrap();
    // ratio is identically 1: Jensen is tight and E[log ratio] = 0
    assert_eq!(r.events, 4);
    assert_eq!(r.jensen_violations, 0);
    assert!(r.min_jensen_gap.abs() < 1e-12);
    assert!((r.target - (LN2 - LN2 * 0.5)).abs() < 1e-12);
    assert!((r.min_chain_margin + r.target).abs() < 1e-12);
    // the chain's target is positive while E[log ratio] = 0
    assert_eq!(r.chain_violations, 4);
    assert_eq!(r.supervised_step_violations, 4);
    assert!(verify_lemma1(&sys, (Lang(0), Lang(2)), Lang(1)).is_err());
}

#[test]
fn lemma_jensen_step_on_perturbed_systems() {
    let t = lemma1_harness(100, 23).unwrap();
    println!("lemma tally: {t:?}");
    assert_eq!(t.systems, 100);
    assert_eq!(t.jensen_violations, 0);
}

#[test]
fn pivot_marginalization_cases() {
    let det = random_system(&spec(2, 1, 2, 0.0), chain_graph(), 4).unwrap();
    let p = exact_pivot(&det, Lang(0), Lang(1), Lang(2)).unwrap();
    assert_eq!(p.argmax_gap, 0.0);
    let sys = random_system(&RandomSystemSpec::new(3, 2, 2, 2), chain_graph(), 6).unwrap();
    let p = exact_pivot(&sys, Lang(2), Lang(1), Lang(0)).unwrap();
    for i in 0..sys.n() {
        assert!((p.full.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
    assert!(exact_pivot(&sys, Lang(0), Lang(2), Lang(1)).is_err());
}

#[test]
fn pivoting_on_truth_synonyms() {
    let r = verify_pivoting(&synonym_truth()).unwrap();
    assert!((r.c.unwrap() - 1.0).abs() < 1e-12);
    assert!((r.zero_shot_ce - LN2).abs() < 1e-12);
    assert_eq!(r.satisfied, Some(true));
}

#[test]
fn pivoting_harness_has_no_violations() {
    let reports = pivoting_harness(100, 29, 5.0).unwrap();
    assert!(reports.iter().all(|r| r.c.unwrap() <= 5.0));
    assert_eq!(reports.iter().filter(|r| r.violated()).count(), 0);
}

#[test]
fn full_likelihood_direct_sum() {
    let sys = random_unstructured_system(star4_graph(), 2, 1, 31).unwrap();
    assert_eq!(sys.n().pow(4), 16);
    let mut z = 0.0;
    let mut pot = vec![0.0; 16];
    for (idx, p) in pot.iter_mut().enumerate() {
        let x = [idx >> 3 & 1, idx >> 2 & 1, idx >> 1 & 1, idx & 1];
        *p = 1.0;
        for i in 0..4 {
            for j in (0..4).filter(|&j| j != i) {
                *p *= sys.model(Lang(i), Lang(j)).get(x[i], x[j]);
            }
        }
        z += *p;
    }
    let full = FullLikelihood::new(&sys).unwrap();
    assert!((full.log_z - z.ln()).abs() < 1e-12);
    let r = full.check((Lang(0), Lang(1)), 1, 0);
    let marg: f64 = (0..4).map(|rest| pot[0b1000 | rest]).sum();
    assert!((r.log_p - (marg / z).ln()).abs() < 1e-12);
    assert!(r.holds);
}

#[test]
fn full_likelihood_uniform_closed_form() {
    let mut sys = random_unstructured_system(star4_graph(), 3, 1, 2).unwrap();
    let n = sys.n();
    for s in 0..4 {
        for t in (0..4).filter(|&t| t != s) {
            sys.set_model(TabularConditional::uniform(Lang(s), Lang(t), n)).unwrap();
        }
    }
    let ln_n = (n as f64).ln();
    let r = FullLikelihood::new(&sys).unwrap().check((Lang(0), Lang(1)), 2, 1);
    assert!((r.log_p + r.log_z + 10.0 * ln_n).abs() < 1e-12);
    assert!((r.l_agree + 4.0 * ln_n).abs() < 1e-12);
    assert!(r.holds);
}

#[test]
fn full_likelihood_harness_has_no_violations() {
    let t = full_likelihood_harness(50, 37).unwrap();
    assert_eq!(t.systems, 50);
    assert_eq!(t.violations, 0);
}

#[test]
fn oversized_spaces_are_refused() {
    assert!(matches!(SequenceSpace::new(10, 7), Err(Error::TooLarge { .. })));
    let big = RandomSystemSpec::new(3, 1, 10, 2);
    assert!(matches!(random_system(&big, chain_graph(), 1), Err(Error::TooLarge { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn jensen_lower_bound_never_exceeds_agreement(seed in any::<u64>(), v in 2usize..4, xs in 0usize..2, xt in 0usize..2) {
        let sys = random_unstructured_system(chain_graph(), v, 1, seed).unwrap();
        let o = exact_agreement_objective(&sys, (Lang(0), Lang(1)), xs, xt, ContextModel::Independent).unwrap();
        prop_assert!(o.lower_bound_from_s <= o.agreement + SLACK);
        prop_assert!(o.lower_bound_from_t <= o.agreement + SLACK);
        prop_assert!(o.residual.abs() < 1e-12);
    }

    #[test]
    fn kappa_grows_with_epsilon(eps in 0.0f64..0.5, d in 0.0f64..0.5, xi in 0.05f64..0.6) {
        if let (Ok(a), Ok(b)) = (kappa(eps, d, xi), kappa(eps + 0.01, d, xi)) {
            prop_assert!(b >= a);
        }
    }
}
