use mechsim_core::distopt::CommGraph;
use mechsim_core::game::{simulate, AgentStrategy, GameEnv, StrategyProfile};
use mechsim_core::mechanism::{vcg_payment_centralized, Mechanism};
use mechsim_core::scenario::{build_ev_instance, random_quadratic_instance, EvParams, Instance};
use proptest::prelude::*;

fn env(inst: &Instance, k_f: usize) -> GameEnv {
    let graph = CommGraph::complete(inst.costs.len()).unwrap();
    GameEnv::new(graph, inst.feasible.clone(), inst.costs.clone(), k_f, k_f - 2).unwrap()
}

#[test]
fn everybody_quitting_costs_p_bar() {
    let inst = random_quadratic_instance(3, 1, 1).unwrap();
    let e = env(&inst, 20);
    let profile = StrategyProfile::new(vec![AgentStrategy::Quit; 3]).unwrap();
    for mech in [Mechanism::DeVcg, Mechanism::DeVcgG] {
        let r = simulate(&profile, mech, &e).unwrap().report;
        assert!(r.quit);
        assert_eq!(r.payments, vec![e.p_bar; 3]);
        assert_eq!(r.payoffs, vec![-e.p_bar; 3]);
    }
}

#[test]
fn quitter_pays_nothing() {
    let inst = random_quadratic_instance(3, 2, 4).unwrap();
    let e = env(&inst, 100);
    let profile = StrategyProfile::truthful(&inst.costs).unwrap().with(2, AgentStrategy::Quit).unwrap();
    let r = simulate(&profile, Mechanism::DeVcgG, &e).unwrap().report;
    assert_eq!(r.participants, vec![0, 1]);
    assert_eq!(r.payments[2], 0.0);
    assert_eq!(r.penalties[2], 0.0);
    let own = inst.costs[2].evaluate(&r.o_star).unwrap();
    assert_eq!(r.payoffs[2], -own);
}

#[test]
fn ev_truthful_run_tracks_the_oracle() {
    let inst = build_ev_instance(&EvParams::desk(4).unwrap()).unwrap();
    let e = env(&inst, 300);
    let r = simulate(&StrategyProfile::truthful(&inst.costs).unwrap(), Mechanism::DeVcgG, &e).unwrap().report;
    let (_, oracle) = vcg_payment_centralized(&inst.costs, &inst.feasible).unwrap();
    for (p, q) in r.payments.iter().zip(&oracle) {
        assert!((p - q).abs() < 0.1, "{p} vs {q}");
    }
    assert!(r.penalties.iter().all(|p| *p == 0.0));
}

// A truthful agent can still be charged when its final gradient differs from
// the gradient at o* and some o_j sits close to o*. More iterations remove it.
#[test]
fn truthful_linearisation_penalty_vanishes_with_iterations() {
    let inst = random_quadratic_instance(3, 1, 271).unwrap();
    let truthful = StrategyProfile::truthful(&inst.costs).unwrap();
    let short = simulate(&truthful, Mechanism::DeVcgG, &env(&inst, 150)).unwrap();
    assert!(short.repair_log.iter().all(|x| x.repair == 0.0));
    assert!(short.report.e_terms[1] > 0.0);
    let long = simulate(&truthful, Mechanism::DeVcgG, &env(&inst, 1000)).unwrap().report;
    assert_eq!(long.e_terms, vec![0.0; 3]);
    assert_eq!(long.penalties, vec![0.0; 3]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn truthful_settlement_is_consistent(n in 2usize..5, seed in 0u64..1000) {
        let inst = random_quadratic_instance(n, 1, seed).unwrap();
        let e = env(&inst, 150);
        let sim = simulate(&StrategyProfile::truthful(&inst.costs).unwrap(), Mechanism::DeVcgG, &e).unwrap();
        let r = &sim.report;
        prop_assert_eq!(r.participants.len(), n);
        // Truthful gradients come from one convex function each: nothing to repair.
        prop_assert!(sim.repair_log.iter().all(|x| x.passed && x.repair == 0.0));
        for i in 0..n {
            let expected = if r.e_terms[i] == 0.0 { 0.0 } else { e.k_f as f64 * r.e_terms[i] + 1.0 };
            prop_assert_eq!(r.penalties[i], expected);
            prop_assert!(r.payments[i] - r.penalties[i] > -1e-2, "payment {}", r.payments[i]);
            let own = inst.costs[i].evaluate(&r.o_star).unwrap();
            prop_assert!((r.payoffs[i] + own + r.payments[i]).abs() < 1e-9);
        }
    }
}
