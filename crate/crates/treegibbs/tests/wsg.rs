mod common;

use std::collections::BTreeSet;

use common::{close, load};
use nalgebra::DMatrix;
use proptest::prelude::*;
use treegibbs::gibbs::{self, Potential};
use treegibbs::indexed_graph;
use treegibbs::markov::{self, MarkovChain, SeqSpec};
use treegibbs::wsg::{self, DriftCertificate, Provenance};
use treegibbs::Error;

fn built(name: &str, depth: Option<usize>) -> MarkovChain {
    let g = load(name);
    let gd = gibbs::gibbs_data(&g, &Potential::zero(&g)).unwrap();
    let orders = indexed_graph::default_orders(&g).unwrap();
    markov::build_chain(&g, &gd, &orders, depth).unwrap()
}

/// Reflecting walk on 0..n with forward probability p.
fn birth_death(p: f64, n: usize) -> MarkovChain {
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, (i + 1).min(n - 1))] += p;
        k[(i, i.saturating_sub(1))] += 1.0 - p;
    }
    MarkovChain::from_kernel((0..n).map(|i| i.to_string()).collect(), k, None).unwrap()
}

fn geometric_cert(mc: &MarkovChain, base: f64, rho: f64) -> DriftCertificate {
    let n = mc.len();
    DriftCertificate {
        t: (0..n).map(|i| base.powi(i as i32)).collect(),
        t_leak: vec![0.0; n],
        b: BTreeSet::from([0]),
        rho,
        provenance: Provenance::User,
    }
}

#[test]
fn birth_death_drift_ratio() {
    let mc = birth_death(1.0 / 3.0, 40);
    let cert = geometric_cert(&mc, 2f64.sqrt(), 0.943);
    let r = wsg::verify_certificate(&mc, &cert).unwrap();
    assert!(r.pass);
    assert!(close(r.max_ratio, 2.0 * 2f64.sqrt() / 3.0, 1e-12));
    let cert = geometric_cert(&mc, 2.0, 0.999);
    let r = wsg::verify_certificate(&mc, &cert).unwrap();
    assert!(!r.pass && close(r.max_ratio, 1.0, 1e-12));
}

#[test]
fn full_b_is_vacuous() {
    let mc = birth_death(0.5, 6);
    let mut cert = geometric_cert(&mc, 5.0, 0.1);
    cert.b = (0..6).collect();
    let r = wsg::verify_certificate(&mc, &cert).unwrap();
    assert!(r.pass && r.checked == 0);
    let l = wsg::lemma_bound_check(&mc, &cert, 10);
    assert_eq!(l.violations, 0);
}

#[test]
fn undefined_weight_is_reported() {
    let mc = birth_death(0.5, 4);
    let mut cert = geometric_cert(&mc, 2.0, 0.99);
    cert.t[2] = f64::INFINITY;
    assert!(matches!(wsg::verify_certificate(&mc, &cert), Err(Error::UndefinedWeight(_))));
}

#[test]
fn birth_death_taboo_bound() {
    let mc = birth_death(1.0 / 3.0, 40);
    let cert = geometric_cert(&mc, 2f64.sqrt(), 0.943);
    let l = wsg::lemma_bound_check(&mc, &cert, 60);
    assert!(l.checked > 0 && l.violations == 0 && l.return_violations == 0);
}

#[test]
fn cuspidal_tails_are_certified() {
    for name in ["cusp_2_2", "cusp_4_4"] {
        let mc = built(name, None);
        let c = wsg::tail_certificate(&mc).unwrap();
        assert!(c.rho < 1.0);
        assert!(wsg::verify_certificate(&mc, &c).unwrap().pass, "{name}");
        let s = wsg::search_certificate(&mc, None);
        assert!((s.rho - c.rho).abs() < 1e-6);
    }
}

#[test]
fn regular_ray_is_certified() {
    let mc = built("regular_ray", None);
    let c = wsg::tail_certificate(&mc).unwrap();
    assert!(c.rho < 1.0 && wsg::verify_certificate(&mc, &c).unwrap().pass);
}

#[test]
fn cuspidal_closed_form_certificate() {
    let mc = built("cusp_2_2", None);
    let (p, q) = (mc.tails[0].up.at(1), mc.tails[0].up.at(2));
    let r_max = (p * q).powf(-0.25);
    let c = wsg::cuspidal_certificate(&mc, 1.0 + 0.9 * (r_max - 1.0)).unwrap();
    let v = wsg::verify_certificate(&mc, &c).unwrap();
    assert!(v.pass, "{v:?}");
    assert!(matches!(wsg::cuspidal_certificate(&mc, r_max * 1.01), Err(Error::NoGeometricDrift)));
    assert!(wsg::cuspidal_certificate(&built("regular_ray", None), 1.1).is_err());
    // at the first level the displayed closed form is just t1
    assert_eq!(wsg::literal_cuspidal_weight(p, q, 1.1, 7.0, 1), 7.0);
    // from the second level on, sums starting at k = 1 overshoot the drift equalities
    let r_big = 1.0 / c.rho;
    let t = |n: usize| c.t[mc.tails[0].states[n - 1].0];
    assert!(close(wsg::literal_cuspidal_weight(p, q, r_big, t(1), 1), t(1), 1e-12));
    assert!(wsg::literal_cuspidal_weight(p, q, r_big, t(1), 2) > t(2) * (1.0 + 1e-6));
}

#[test]
fn finite_chains_have_certificates() {
    for name in ["triangle", "double_edge"] {
        let mc = built(name, None);
        let s = wsg::search_certificate(&mc, None);
        let c = s.certificate.unwrap();
        assert!(s.rho < 1.0 && wsg::verify_certificate(&mc, &c).unwrap().pass);
        assert_eq!(wsg::lemma_bound_check(&mc, &c, 40).violations, 0);
    }
}

#[test]
fn degradation_with_constant_holding() {
    let half = SeqSpec::Constant { value: 0.5 };
    let rows = wsg::degradation_probe(&half, &SeqSpec::Uniform, &[0, 5, 20, 40]).unwrap();
    assert!(close(rows[0].rho, 0.5, 1e-3));
    for r in &rows {
        assert!(r.rho < 1.0 && r.lower_bound_holds);
        assert!((r.rho - rows[1].rho).abs() < 1e-3);
    }
    let harmonic = wsg::degradation_probe(&SeqSpec::Harmonic, &SeqSpec::Geometric { ratio: 0.5 }, &[10, 20]).unwrap();
    assert!(harmonic[1].rho > harmonic[0].rho);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn optimal_birth_death_ratio(p in 0.05f64..0.45) {
        let mc = birth_death(p, 30);
        let c = ((1.0 - p) / p).sqrt();
        let best = 2.0 * (p * (1.0 - p)).sqrt();
        let cert = geometric_cert(&mc, c, best + 1e-9);
        let r = wsg::verify_certificate(&mc, &cert).unwrap();
        prop_assert!(r.pass);
        prop_assert!(close(r.max_ratio, best, 1e-10));
        let l = wsg::lemma_bound_check(&mc, &cert, 40);
        prop_assert_eq!(l.violations, 0);
    }
}
