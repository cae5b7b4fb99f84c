mod common;

use std::collections::BTreeSet;

use common::{close, load, single_edge};
use nalgebra::DMatrix;
use proptest::prelude::*;
use treegibbs::gibbs::{self, Potential};
use treegibbs::indexed_graph;
use treegibbs::markov::{self, MarkovChain, SeqSpec};
use treegibbs::Error;

fn built(name: &str) -> MarkovChain {
    let g = load(name);
    let gd = gibbs::gibbs_data(&g, &Potential::zero(&g)).unwrap();
    let orders = indexed_graph::default_orders(&g).unwrap();
    markov::build_chain(&g, &gd, &orders, None).unwrap()
}

fn kernel(rows: &[&[f64]]) -> MarkovChain {
    let n = rows.len();
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    let labels = (0..n).map(|i| format!("s{i}")).collect();
    MarkovChain::from_kernel(labels, DMatrix::from_row_slice(n, n, &flat), None).unwrap()
}

fn flip() -> MarkovChain {
    let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    MarkovChain::from_kernel(vec!["e".into(), "ebar".into()], p, Some(vec![0.5, 0.5])).unwrap()
}

#[test]
fn single_edge_chain_alternates() {
    let g = single_edge(3, 3);
    let gd = gibbs::gibbs_data(&g, &Potential::zero(&g)).unwrap();
    let orders = indexed_graph::default_orders(&g).unwrap();
    let mc = markov::build_chain(&g, &gd, &orders, None).unwrap();
    assert_eq!(mc.len(), 2);
    assert!(close(mc.p[(0, 1)], 1.0, 1e-14) && close(mc.p[(1, 0)], 1.0, 1e-14));
    assert!(close(mc.pi[0], 0.5, 1e-14) && close(mc.pi[1], 0.5, 1e-14));
    assert_eq!(mc.period, 2);
    assert_eq!(mc.classes, vec![vec![0], vec![1]]);
}

#[test]
fn cuspidal_ray_goes_down_deterministically() {
    let mc = built("cusp_4_4");
    let info = &mc.tails[0];
    for n in 2..30 {
        assert!(close(info.down.at(n), 1.0, 1e-12));
    }
}

#[test]
fn transitions_respect_composability() {
    let g = load("double_edge");
    let gd = gibbs::gibbs_data(&g, &Potential::zero(&g)).unwrap();
    let orders = indexed_graph::default_orders(&g).unwrap();
    let mc = markov::build_chain(&g, &gd, &orders, None).unwrap();
    for i in 0..mc.len() {
        for j in 0..mc.len() {
            if mc.p[(i, j)] > 0.0 {
                let (e, f) = (mc.states[i].edge.unwrap(), mc.states[j].edge.unwrap());
                assert_eq!(g.edges[e].to, g.edges[f].from);
                assert!(indexed_graph::edge_multiplicity(&g, e, f).unwrap() > 0);
            }
        }
    }
}

#[test]
fn markov_property_residuals() {
    let r = markov::check_markov_property(&flip());
    assert_eq!(r.row_residual, 0.0);
    assert_eq!(r.stationarity_residual, 0.0);
    for name in ["triangle", "regular_ray", "core_with_tail"] {
        let r = markov::check_markov_property(&built(name));
        assert!(r.row_residual <= 1e-12 && r.stationarity_residual <= 1e-12, "{name}");
    }
}

#[test]
fn corruption_is_localized() {
    let mut mc = built("triangle");
    let target = mc.successors(2)[0];
    let v = mc.p[(2, target)];
    mc.set_entry(2, target, v * 0.5);
    let r = markov::check_markov_property(&mc);
    assert!(r.row_residual > 1e-3);
    assert_eq!(r.worst_row.as_deref(), Some(mc.states[2].label.as_str()));
    assert_eq!(r.worst_column.as_deref(), Some(mc.states[target].label.as_str()));
}

#[test]
fn periods_and_classes() {
    let c = markov::periodic_classes(&flip()).unwrap();
    assert_eq!(c.k, 2);
    assert_eq!(c.classes, vec![vec![0], vec![1]]);
    // a 2-cycle and a 3-cycle through state 0
    let mc = kernel(&[&[0.0, 0.5, 0.5, 0.0], &[1.0, 0.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 1.0], &[1.0, 0.0, 0.0, 0.0]]);
    assert_eq!(markov::periodic_classes(&mc).unwrap().k, 1);
    let reducible = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
    let r = MarkovChain::from_kernel(vec!["a".into(), "b".into()], reducible, Some(vec![1.0, 0.0]));
    assert!(matches!(r, Err(Error::Reducible)));
}

#[test]
fn k_step_chains_are_aperiodic() {
    for name in ["single_edge", "biregular_2_4", "cusp_2_2"] {
        let mc = built(name);
        for c in 0..mc.period {
            let pk = markov::k_step_kernel(&mc, c);
            let succ: Vec<Vec<usize>> =
                (0..pk.nrows()).map(|i| (0..pk.ncols()).filter(|&j| pk[(i, j)] > 1e-300).collect()).collect();
            let sub = MarkovChain::from_kernel((0..pk.nrows()).map(|i| i.to_string()).collect(), pk.clone(), Some(vec![1.0; pk.nrows()]));
            if let Ok(sub) = sub {
                assert_eq!(sub.period, 1, "{name} class {c}");
            }
            assert!(succ.iter().all(|s| !s.is_empty()));
        }
    }
}

#[test]
fn taboo_basics() {
    let mc = built("triangle");
    let none = BTreeSet::new();
    let t = markov::taboo_table(&mc, &none, 6);
    let mut pw = DMatrix::identity(mc.len(), mc.len());
    for n in 0..=6 {
        assert!((&t.p[n] - &pw).amax() < 1e-14);
        pw = &pw * &mc.p;
    }
    let b = BTreeSet::from([1usize]);
    let t = markov::taboo_table(&mc, &b, 3);
    assert_eq!(t.p[1], mc.p);
    let f = flip();
    assert_eq!(markov::taboo_probability(&f, &BTreeSet::from([1]), 0, 0, 2)[2], 0.0);
}

#[test]
fn first_passage_of_flip() {
    let f = flip();
    let none = BTreeSet::new();
    assert_eq!(markov::first_passage(&f, &none, 0, 1, 1)[1], 1.0);
    let fr = markov::first_passage(&f, &none, 0, 0, 6);
    assert_eq!(fr, vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let r = markov::mean_return_time(&f, 0, 10, None);
    assert_eq!(r.mean_partial, 2.0);
    assert_eq!(r.pi, 0.5);
    assert!(!r.defective);
}

#[test]
fn mean_return_matches_stationary_mass() {
    let mc = built("triangle");
    let r = markov::mean_return_time(&mc, 0, 400, None);
    assert!(close(1.0 / r.mean_partial, mc.pi[0], 1e-10));
    let leaky = kernel(&[&[0.0, 0.5], &[1.0, 0.0]]);
    let r = markov::mean_return_time(&leaky, 0, 50, None);
    assert!(r.defective && close(r.return_mass, 0.5, 1e-12));
}

#[test]
fn mixing_of_exact_chains() {
    assert!(matches!(markov::mixing_rate_estimate(&flip(), 0, 0, 20), Err(Error::AlreadyExact)));
    let half = kernel(&[&[0.5, 0.5], &[0.5, 0.5]]);
    assert!(matches!(markov::mixing_rate_estimate(&half, 0, 1, 20), Err(Error::AlreadyExact)));
}

#[test]
fn mixing_rate_of_double_edge() {
    let mc = built("double_edge");
    let fit = markov::mixing_rate_estimate(&mc, 0, 0, 40).unwrap();
    assert!(close(fit.theta, 0.0625, 1e-4) && fit.r2 > 0.999);
}

#[test]
fn correlations() {
    let mc = built("triangle");
    let empty = markov::correlation_decay(&mc, &[], &[], 5, None).unwrap();
    assert!(empty.iter().all(|r| r.cov == 0.0));
    let a = [0usize];
    let b = [mc.successors(0)[0]];
    let rows = markov::correlation_decay(&mc, &a, &b, 10, None).unwrap();
    let joint = markov::cylinder_measure(&mc, &[a[0], b[0]]).unwrap();
    let la = markov::cylinder_measure(&mc, &a).unwrap();
    let lb = markov::cylinder_measure(&mc, &b).unwrap();
    assert!(close(rows[0].cov, joint - la * lb, 1e-13));
    // the fitted rate carries a finite constant over the whole horizon
    let fit = markov::mixing_rate_estimate(&mc, 0, 0, 60).unwrap();
    let c_sup = fit.differences.iter().map(|&(n, d)| d / fit.theta.powi(n as i32)).fold(0.0, f64::max);
    assert!(c_sup < 10.0 * fit.c);
    let rows = markov::correlation_decay(&mc, &a, &a, 40, Some((c_sup, fit.theta))).unwrap();
    assert!(rows.iter().all(|r| r.cov.abs() <= r.envelope.unwrap() * (1.0 + 1e-9) + 1e-15));
}

#[test]
fn star_chain() {
    let half = SeqSpec::Constant { value: 0.5 };
    let mc = markov::counterexample_chain(&half, &SeqSpec::Uniform, 1).unwrap();
    assert_eq!(mc.len(), 4);
    let m = markov::counterexample_mean_return(&half, &SeqSpec::Uniform, 1).unwrap();
    assert!(close(m, 3.0, 1e-14));
    assert!(close(mc.pi[0], 1.0 / 3.0, 1e-12));
    let r = markov::check_markov_property(&mc);
    assert!(r.stationarity_residual < 1e-14);
    let two = markov::counterexample_chain(&half, &SeqSpec::Uniform, 0).unwrap();
    assert_eq!(two.p.as_slice(), &[0.0, 0.5, 1.0, 0.5]);
}

fn stochastic(raw: Vec<f64>, n: usize) -> MarkovChain {
    let mut p = DMatrix::from_row_slice(n, n, &raw);
    for i in 0..n {
        let s: f64 = p.row(i).sum();
        for j in 0..n {
            p[(i, j)] /= s;
        }
    }
    MarkovChain::from_kernel((0..n).map(|i| i.to_string()).collect(), p, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn convolution_identities_hold(raw in prop::collection::vec(0.05f64..1.0, 16), bmask in 0u8..16) {
        let mc = stochastic(raw, 4);
        let b: BTreeSet<usize> = (0..4).filter(|k| bmask & (1 << k) != 0).collect();
        let r = markov::convolution_check(&mc, &b, &[0, 1, 2, 3], 25);
        prop_assert!(r.first_passage_form < 1e-12);
        prop_assert!(r.first_return_form < 1e-12);
        prop_assert!(r.literal_diagonal < 1e-12);
    }

    #[test]
    fn taboo_is_monotone(raw in prop::collection::vec(0.0f64..1.0, 16), extra in 0usize..4) {
        let raw: Vec<f64> = raw.into_iter().map(|x| x + 0.01).collect();
        let mc = stochastic(raw, 4);
        let small = BTreeSet::from([0usize]);
        let mut big = small.clone();
        big.insert(extra);
        prop_assert!(markov::taboo_monotonicity_violation(&mc, &small, &big, 20) <= 0.0);
    }
}
