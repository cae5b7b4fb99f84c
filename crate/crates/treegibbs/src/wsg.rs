//! Drift certificates (t, B, rho): verification, analytic tail weights,
//! feasibility search, the taboo bound replay and the degradation probe.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::markov::{self, MarkovChain, SeqSpec, TailChainInfo};

/// Largest weight accepted by the finite feasibility solve.
pub const WEIGHT_CAP: f64 = 1e9;
pub const DRIFT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    User,
    AnalyticTail,
    Search,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftCertificate {
    pub t: Vec<f64>,
    /// Weight of the state reached when leaving the window (per state).
    pub t_leak: Vec<f64>,
    pub b: BTreeSet<usize>,
    pub rho: f64,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftReport {
    pub pass: bool,
    pub max_ratio: f64,
    pub worst_state: Option<String>,
    pub checked: usize,
    pub ratios: Vec<(String, f64)>,
}

/// Drift ratio sum_j p_ij t_j / t_i, including the leak term.
pub fn drift_ratio(mc: &MarkovChain, cert: &DriftCertificate, i: usize) -> Result<f64> {
    let mut s = 0.0;
    for &j in mc.successors(i) {
        let tj = cert.t[j];
        if !tj.is_finite() {
            return Err(Error::UndefinedWeight(mc.states[j].label.clone()));
        }
        s += mc.p[(i, j)] * tj;
    }
    if mc.leak[i] > 0.0 {
        let tl = cert.t_leak[i];
        if !tl.is_finite() {
            return Err(Error::UndefinedWeight(format!("beyond {}", mc.states[i].label)));
        }
        s += mc.leak[i] * tl;
    }
    Ok(s / cert.t[i])
}

pub fn verify_certificate(mc: &MarkovChain, cert: &DriftCertificate) -> Result<DriftReport> {
    let mut rep = DriftReport { pass: true, max_ratio: 0.0, worst_state: None, checked: 0, ratios: Vec::new() };
    if cert.t.len() != mc.len() || cert.t_leak.len() != mc.len() {
        return Err(Error::UndefinedWeight("certificate length does not match the chain".into()));
    }
    for i in 0..mc.len() {
        if cert.b.contains(&i) {
            continue;
        }
        if !cert.t[i].is_finite() {
            return Err(Error::UndefinedWeight(mc.states[i].label.clone()));
        }
        if cert.t[i] <= 0.0 {
            continue;
        }
        let r = drift_ratio(mc, cert, i)?;
        rep.checked += 1;
        rep.ratios.push((mc.states[i].label.clone(), r));
        if r > rep.max_ratio {
            rep.max_ratio = r;
            rep.worst_state = Some(mc.states[i].label.clone());
        }
        if r > cert.rho + DRIFT_TOL {
            rep.pass = false;
        }
    }
    Ok(rep)
}

/// Weights (t(e_n), t(ebar_n)) for n = 1..=len solving the drift equalities
/// along one tail with ratio `rho`, scaled so ebar_1 satisfies its drift
/// against core weights 1. `None` if no positive solution exists.
pub fn tail_drift_weights(info: &TailChainInfo, rho: f64, len: usize) -> Option<Vec<(f64, f64)>> {
    let start = info.up.periodic_start().max(info.down.periodic_start());
    let per = info.period.max(1);
    let step = |n: usize, v: (f64, f64)| -> Option<(f64, f64)> {
        let a = info.up.at(n);
        let b = info.down.at(n + 1);
        if a <= 0.0 {
            return None;
        }
        let x = (rho * v.0 - (1.0 - a) * v.1) / a;
        let y = (b * v.1 + (1.0 - b) * x) / rho;
        Some((x, y))
    };
    // monodromy over one period from level `start`
    let col = |v: (f64, f64)| -> Option<(f64, f64)> {
        let mut w = v;
        for n in start..start + per {
            w = step(n, w)?;
        }
        Some(w)
    };
    let c0 = col((1.0, 0.0))?;
    let c1 = col((0.0, 1.0))?;
    let m = [[c0.0, c1.0], [c0.1, c1.1]];
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = tr * tr / 4.0 - det;
    if disc < 0.0 {
        return None;
    }
    let mu1 = tr / 2.0 + disc.sqrt();
    let mu2 = tr / 2.0 - disc.sqrt();
    if mu1 <= 0.0 || mu1 <= mu2.abs() * (1.0 + 1e-12) {
        return None;
    }
    let larger = |a: (f64, f64), b: (f64, f64)| if a.0.hypot(a.1) >= b.0.hypot(b.1) { a } else { b };
    let mut w1 = larger((m[0][1], mu1 - m[0][0]), (mu1 - m[1][1], m[1][0]));
    if w1.0 + w1.1 < 0.0 {
        w1 = (-w1.0, -w1.1);
    }
    let tiny = 1e-12 * w1.0.abs().max(w1.1.abs());
    if w1.0.abs() <= tiny {
        w1.0 = 0.0;
    }
    if w1.1.abs() <= tiny {
        w1.1 = 0.0;
    }
    // dominant orbit must stay positive through the period
    let mut w = w1;
    for n in start..start + per {
        let eps = 1e-12 * w.0.abs().max(w.1.abs());
        if w.0 < -eps || w.1 < -eps || w.0 + w.1 <= 0.0 {
            return None;
        }
        w = step(n, w)?;
    }
    let mut l1 = larger((m[1][0], mu1 - m[0][0]), (mu1 - m[1][1], m[0][1]));
    if l1.0 * w1.0 + l1.1 * w1.1 < 0.0 {
        l1 = (-l1.0, -l1.1);
    }

    // v_n = z * alpha_n + beta_n with v_1 = (z, 1); collect the z-interval
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut push = |a: f64, b: f64| -> bool {
        if a > 0.0 {
            lo = lo.max(-b / a);
        } else if a < 0.0 {
            hi = hi.min(-b / a);
        } else if b <= 0.0 {
            return false;
        }
        true
    };
    let b1 = info.down.at(1);
    if b1 < 1.0 && !push(-(1.0 - b1), rho) {
        return None;
    }
    let mut al = (1.0, 0.0);
    let mut be = (0.0, 1.0);
    let horizon = start + 100 * per;
    for n in 1..=horizon {
        if !(push(al.0, be.0) && push(al.1, be.1)) {
            return None;
        }
        if n == start && !push(l1.0 * al.0 + l1.1 * al.1, l1.0 * be.0 + l1.1 * be.1) {
            return None;
        }
        al = step(n, al)?;
        be = step(n, be)?;
        let s = al.0.abs().max(al.1.abs()).max(be.0.abs()).max(be.1.abs());
        if !(s.is_finite() && s > 0.0) {
            return None;
        }
        al = (al.0 / s, al.1 / s);
        be = (be.0 / s, be.1 / s);
    }
    if !(hi > lo * (1.0 + 1e-12) + 1e-300) {
        return None;
    }
    let z = if hi.is_finite() { (0.5 * (lo + hi)).min(2.0 * lo + 1.0) } else { 2.0 * lo + 1.0 };
    let margin = rho - (1.0 - b1) * z;
    let scale = if b1 > 0.0 { b1 / margin * (1.0 + 1e-12) } else { 1.0 };
    let mut out = Vec::with_capacity(len);
    let mut v = (z * scale, scale);
    for n in 1..=len {
        out.push(v);
        if n < len {
            v = step(n, v)?;
        }
    }
    Some(out)
}

fn bisect_rho(feasible: impl Fn(f64) -> bool, hi0: f64) -> Option<f64> {
    if !feasible(hi0) {
        return None;
    }
    let (mut lo, mut hi) = (0.0, hi0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Some(hi)
}

/// Smallest drift ratio (to bisection accuracy) attainable on one tail.
pub fn tail_best_rho(mc: &MarkovChain, tail: usize) -> Result<f64> {
    let info = &mc.tails[tail];
    bisect_rho(|r| tail_drift_weights(info, r, 4).is_some(), 1.0 - 1e-12).ok_or(Error::NoGeometricDrift)
}

/// Worst per-tail infimum, nudged inward so the positive cone has width.
pub fn working_rho(mc: &MarkovChain) -> Result<f64> {
    let mut rho = 0.0f64;
    for k in 0..mc.tails.len() {
        rho = rho.max(tail_best_rho(mc, k)?);
    }
    Ok(rho + TAIL_MARGIN * (1.0 - rho))
}

/// Fraction of the gap to 1 added to the tail infimum.
pub const TAIL_MARGIN: f64 = 0.01;

/// Analytic certificate for a windowed chain with tails: B = every non-tail
/// state, tail weights from the drift equalities at the worst tail's ratio.
pub fn tail_certificate(mc: &MarkovChain) -> Result<DriftCertificate> {
    if mc.tails.is_empty() {
        return Err(Error::NoGeometricDrift);
    }
    tail_certificate_at(mc, working_rho(mc)?, &BTreeSet::new())
}

/// Tail certificate at a given ratio; `extra_b` is added to the core states in B.
pub fn tail_certificate_at(mc: &MarkovChain, rho: f64, extra_b: &BTreeSet<usize>) -> Result<DriftCertificate> {
    let n = mc.len();
    let mut t = vec![1.0; n];
    let mut t_leak = vec![f64::NAN; n];
    let mut tail_states = BTreeSet::new();
    for info in &mc.tails {
        let w = tail_drift_weights(info, rho, mc.depth + 1).ok_or(Error::NoGeometricDrift)?;
        for (k, &(up, down)) in info.states.iter().enumerate() {
            t[up] = w[k].0;
            t[down] = w[k].1;
            tail_states.insert(up);
            tail_states.insert(down);
        }
        if let Some(&(up, _)) = info.states.last() {
            t_leak[up] = w[mc.depth].0;
        }
    }
    let b: BTreeSet<usize> = (0..n).filter(|s| !tail_states.contains(s) || extra_b.contains(s)).collect();
    Ok(DriftCertificate { t, t_leak, b, rho, provenance: Provenance::AnalyticTail })
}

/// Closed-form certificate for a cuspidal tail with alternating forward
/// probabilities p (odd levels) and q (even levels): t(ebar_i) = R^i,
/// t(e_1) = 2S + 1 with S the limit of the subtracted sums, and t(e_n)
/// from the drift equalities with ratio 1/R.
pub fn cuspidal_certificate(mc: &MarkovChain, r_big: f64) -> Result<DriftCertificate> {
    let n = mc.len();
    let mut t = vec![1.0; n];
    let mut t_leak = vec![f64::NAN; n];
    let mut tail_states = BTreeSet::new();
    for info in &mc.tails {
        let (p, q) = (info.up.at(1), info.up.at(2));
        let bad = (1..=info.states.len() + 2).any(|k| {
            let expect = if k % 2 == 1 { p } else { q };
            (info.up.at(k) - expect).abs() > 1e-9 || (info.down.at(k) - 1.0).abs() > 1e-9
        });
        if bad {
            return Err(Error::NonCuspidal("tail is not an alternating cuspidal ray".into()));
        }
        let x = p * q * r_big.powi(4);
        if !(r_big > 1.0 && x < 1.0) {
            return Err(Error::NoGeometricDrift);
        }
        let s = ((1.0 - p) * r_big * r_big + (1.0 - q) * p * r_big.powi(4)) / (1.0 - x);
        let mut te = 2.0 * s + 1.0;
        let depth = info.states.len();
        for k in 1..=depth {
            let (up, down) = info.states[k - 1];
            t[up] = te;
            t[down] = r_big.powi(k as i32);
            tail_states.insert(up);
            tail_states.insert(down);
            let a = info.up.at(k);
            te = (te / r_big - (1.0 - a) * r_big.powi(k as i32)) / a;
            if k == depth {
                t_leak[up] = te;
            }
        }
    }
    let b: BTreeSet<usize> = (0..n).filter(|s| !tail_states.contains(s)).collect();
    Ok(DriftCertificate { t, t_leak, b, rho: 1.0 / r_big, provenance: Provenance::AnalyticTail })
}

/// The displayed closed form for t(e_n) on an alternating cuspidal ray,
/// read literally (sums starting at k = 1).
pub fn literal_cuspidal_weight(p: f64, q: f64, r_big: f64, t1: f64, n: usize) -> f64 {
    let x = p * q * r_big.powi(4);
    let geo = |m: usize| (1..=m).map(|k| x.powi(k as i32)).sum::<f64>();
    if n.is_multiple_of(2) {
        let i = n / 2;
        (t1 - (1.0 - p) * r_big * r_big * geo(i) - (1.0 - q) * p * r_big.powi(4) * geo(i - 1))
            / (p.powi(i as i32) * q.powi(i as i32 - 1) * r_big.powi(2 * i as i32 - 1))
    } else {
        let i = (n - 1) / 2;
        (t1 - (1.0 - p) * r_big * r_big * geo(i) - (1.0 - q) * p * r_big.powi(4) * geo(i))
            / (p.powi(i as i32) * q.powi(i as i32) * r_big.powi(2 * i as i32))
    }
}

/// Minimal solution of (rho I - Q) t = P_{., B} 1 on S - B, or `None` when it
/// is not nonnegative, not finite, or exceeds the weight cap.
pub fn finite_drift_solution(mc: &MarkovChain, b: &BTreeSet<usize>, rho: f64) -> Option<Vec<f64>> {
    let rest: Vec<usize> = (0..mc.len()).filter(|s| !b.contains(s)).collect();
    let m = rest.len();
    let mut a = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for (r, &i) in rest.iter().enumerate() {
        a[(r, r)] += rho;
        for (c, &j) in rest.iter().enumerate() {
            a[(r, c)] -= mc.p[(i, j)];
        }
        rhs[r] = b.iter().map(|&j| mc.p[(i, j)]).sum::<f64>();
    }
    let sol = a.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > WEIGHT_CAP) {
        return None;
    }
    let mut t = vec![1.0; mc.len()];
    for (r, &i) in rest.iter().enumerate() {
        t[i] = sol[r];
    }
    Some(t)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub certificate: Option<DriftCertificate>,
    /// Smallest ratio found feasible (1 when none).
    pub rho: f64,
    pub message: String,
}

/// Feasibility search for a certificate. With tails, B always contains the
/// core states (plus `b0`); otherwise B = `b0` or the first state.
pub fn search_certificate(mc: &MarkovChain, b0: Option<&BTreeSet<usize>>) -> SearchOutcome {
    if !mc.tails.is_empty() {
        let extra = b0.cloned().unwrap_or_default();
        let result = (|| {
            tail_certificate_at(mc, working_rho(mc)?, &extra)
        })();
        return match result {
            Ok(mut c) => {
                c.provenance = Provenance::Search;
                let rho = c.rho;
                SearchOutcome { certificate: Some(c), rho, message: "tail drift equalities, B = core".into() }
            }
            Err(e) => SearchOutcome { certificate: None, rho: 1.0, message: e.to_string() },
        };
    }
    let b = b0.cloned().unwrap_or_else(|| BTreeSet::from([0]));
    if b.len() == mc.len() {
        return SearchOutcome {
            certificate: Some(DriftCertificate {
                t: vec![1.0; mc.len()],
                t_leak: vec![f64::NAN; mc.len()],
                b,
                rho: 0.5,
                provenance: Provenance::Search,
            }),
            rho: 0.5,
            message: "B covers every state".into(),
        };
    }
    match bisect_rho(|r| finite_drift_solution(mc, &b, r).is_some(), 1.0 - 1e-12) {
        Some(rho) => {
            let t = finite_drift_solution(mc, &b, rho).unwrap();
            SearchOutcome {
                certificate: Some(DriftCertificate {
                    t,
                    t_leak: vec![f64::NAN; mc.len()],
                    b,
                    rho,
                    provenance: Provenance::Search,
                }),
                rho,
                message: "linear drift solve".into(),
            }
        }
        None => SearchOutcome { certificate: None, rho: 1.0, message: "no feasible ratio below 1".into() },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaReport {
    pub checked: usize,
    pub violations: usize,
    /// max of p^{(n),B}_{ij} / (t_i t_j^{-1} rho^n).
    pub max_ratio: f64,
    pub return_checked: usize,
    pub return_violations: usize,
    pub max_return_ratio: f64,
    pub start_states: usize,
}

/// Replay p^{(n),B}_{ij} <= t_i/t_j rho^n and p^{(n),B}_{i,B} <= M t_i rho^n for
/// n = 1..=n_max. Start states are restricted to those whose n_max-step
/// futures stay inside the window.
pub fn lemma_bound_check(mc: &MarkovChain, cert: &DriftCertificate, n_max: usize) -> LemmaReport {
    let tab = markov::taboo_table(mc, &cert.b, n_max);
    let m_const = cert.b.iter().map(|&j| 1.0 / cert.t[j]).fold(0.0f64, f64::max);
    let windowed = mc.raw.is_some() && !mc.tails.is_empty();
    let starts: Vec<usize> = (0..mc.len())
        .filter(|i| !cert.b.contains(i) && cert.t[*i] > 0.0)
        .filter(|&i| !windowed || mc.states[i].level + n_max <= mc.depth)
        .collect();
    let mut rep = LemmaReport {
        checked: 0,
        violations: 0,
        max_ratio: 0.0,
        return_checked: 0,
        return_violations: 0,
        max_return_ratio: 0.0,
        start_states: starts.len(),
    };
    for n in 1..=n_max {
        let rn = cert.rho.powi(n as i32);
        for &i in &starts {
            for j in 0..mc.len() {
                if cert.t[j] <= 0.0 {
                    continue;
                }
                let v = tab.get(n, i, j);
                let bound = cert.t[i] / cert.t[j] * rn;
                rep.checked += 1;
                let ratio = v / bound;
                rep.max_ratio = rep.max_ratio.max(ratio);
                if v > bound * (1.0 + 1e-12) {
                    rep.violations += 1;
                }
            }
            if !cert.b.is_empty() {
                let v: f64 = cert.b.iter().map(|&j| tab.get(n, i, j)).sum();
                let bound = m_const * cert.t[i] * rn;
                rep.return_checked += 1;
                rep.max_return_ratio = rep.max_return_ratio.max(v / bound);
                if v > bound * (1.0 + 1e-12) {
                    rep.return_violations += 1;
                }
            }
        }
    }
    rep
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeRow {
    pub truncation: usize,
    pub rho: f64,
    pub sup_gamma: f64,
    pub lower_bound_holds: bool,
}

/// Best feasible ratio with B = {inf} for each truncation of the star chain.
pub fn degradation_probe(gammas: &SeqSpec, betas: &SeqSpec, truncations: &[usize]) -> Result<Vec<ProbeRow>> {
    let mut rows = Vec::new();
    for &n in truncations {
        let mc = markov::counterexample_chain(gammas, betas, n)?;
        let b = BTreeSet::from([0usize]);
        let out = search_certificate(&mc, Some(&b));
        let sup_gamma = gammas.values(n)?.into_iter().fold(0.0f64, f64::max);
        rows.push(ProbeRow { truncation: n, rho: out.rho, sup_gamma, lower_bound_holds: out.rho >= sup_gamma });
    }
    Ok(rows)
}
