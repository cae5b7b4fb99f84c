//! Orbit counting: sphere sizes, ball measures, the closed-path DP oracle,
//! main terms, renewal constants, error decay and boundary ratios.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{self, GibbsData, NormalizationRecord, Potential};
use crate::indexed_graph::{build_cover_ball, core_lift_degree, rational_to_f64, Flat, IndexedGraph, OrderGrading, DEFAULT_BALL_LIMIT};
use crate::linalg::{self, QMatrix};
use crate::markov;

/// Longest path length the DP will run to.
pub const MAX_DP_LENGTH: usize = 4096;
/// Bound on (window edges) x (length) work for one DP run.
pub const MAX_DP_WORK: usize = 200_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiregularParams {
    pub qd: u64,
    pub qdp: u64,
}

impl BiregularParams {
    pub fn new(qd: u64, qdp: u64) -> Result<Self> {
        if qd < 2 || qdp < 2 {
            return Err(Error::InvalidGraph(format!("biregular parameters must be at least 2, got ({qd}, {qdp})")));
        }
        Ok(BiregularParams { qd, qdp })
    }

    /// Read (qd, qdp) off a finite bipartite quotient whose cover is biregular,
    /// with the base vertex of degree qd + 1.
    pub fn from_graph(g: &IndexedGraph, base: usize) -> Result<Self> {
        if !g.rays.is_empty() {
            return Err(Error::InvalidGraph("biregular parameters need a finite quotient".into()));
        }
        let n = g.vertices.len();
        let mut color = vec![u8::MAX; n];
        color[base] = 0;
        let mut stack = vec![base];
        while let Some(a) = stack.pop() {
            for &e in &g.out[a] {
                let b = g.edges[e].to;
                if color[b] == u8::MAX {
                    color[b] = 1 - color[a];
                    stack.push(b);
                } else if color[b] == color[a] {
                    return Err(Error::InvalidGraph("quotient is not bipartite".into()));
                }
            }
        }
        let mut deg = [None::<u64>; 2];
        for a in 0..n {
            let d = core_lift_degree(g, a);
            let c = color[a] as usize;
            match deg[c] {
                None => deg[c] = Some(d),
                Some(x) if x != d => {
                    return Err(Error::InvalidGraph(format!(
                        "cover is not biregular: degrees {x} and {d} in one class"
                    )))
                }
                _ => {}
            }
        }
        let d0 = deg[0].unwrap();
        let d1 = deg[1].ok_or_else(|| Error::InvalidGraph("quotient has a single class".into()))?;
        Self::new(d0 - 1, d1 - 1)
    }
}

/// Number of vertices at distance 2j from a vertex of degree qd + 1.
pub fn sphere_size(params: BiregularParams, j: u32) -> u128 {
    if j == 0 {
        return 1;
    }
    (params.qd as u128 + 1) * (params.qd as u128).pow(j - 1) * (params.qdp as u128).pow(j)
}

pub fn mgamma_ball_measure(params: BiregularParams, delta: f64, r: u32, m_mass: f64) -> f64 {
    let e2 = (2.0 * delta).exp();
    let geo = if r == 0 { 0.0 } else { e2 * ((2.0 * delta * r as f64).exp() - 1.0) / (e2 - 1.0) };
    (1.0 + (params.qd as f64 + 1.0) / params.qd as f64 * geo) / m_mass
}

fn dp_guard(flat: &Flat, n_max: usize) -> Result<()> {
    if n_max > MAX_DP_LENGTH || flat.edges.len().saturating_mul(n_max.max(1)) > MAX_DP_WORK {
        return Err(Error::ResourceLimit(format!(
            "counting DP over {} edges to length {n_max}",
            flat.edges.len()
        )));
    }
    Ok(())
}

/// Starting vector and length for paths beginning with `constraint`
/// (or every first edge out of `base` when `None`).
fn dp_start(flat: &Flat, w: &[f64], base: usize, constraint: Option<&[usize]>) -> Result<(Vec<f64>, usize)> {
    let mut x = vec![0.0; flat.edges.len()];
    match constraint {
        None | Some([]) => {
            for &e in &flat.out[base] {
                x[e] = flat.edges[flat.edges[e].rev].index as f64 * w[e];
            }
            Ok((x, 1))
        }
        Some(path) => {
            let c = checked_path(flat, base, path)?;
            let mut v = flat.edges[flat.edges[path[0]].rev].index as f64 * w[path[0]];
            for pair in path.windows(2) {
                v *= flat.multiplicity(pair[0], pair[1]) as f64 * w[pair[1]];
            }
            x[c] = v;
            Ok((x, path.len()))
        }
    }
}

fn checked_path(flat: &Flat, base: usize, path: &[usize]) -> Result<usize> {
    let label = |e: usize| flat.edges[e].id.clone();
    if let Some(&e) = path.iter().find(|&&e| e >= flat.n_core_edges) {
        return Err(Error::UnknownEdge(format!("#{e}")));
    }
    if flat.edges[path[0]].from != base {
        return Err(Error::InvalidWord(format!("path must start at the base vertex, not with `{}`", label(path[0]))));
    }
    for pair in path.windows(2) {
        if flat.edges[pair[0]].to != flat.edges[pair[1]].from {
            return Err(Error::NotComposable(label(pair[0]), label(pair[1])));
        }
        if flat.multiplicity(pair[0], pair[1]) == 0 {
            return Err(Error::InvalidWord(format!("`{}` cannot follow `{}`", label(pair[1]), label(pair[0]))));
        }
    }
    Ok(*path.last().unwrap())
}

fn dp_step(flat: &Flat, w: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (e, &xe) in x.iter().enumerate() {
        if xe == 0.0 {
            continue;
        }
        for &f in &flat.out[flat.edges[e].to] {
            let m = flat.multiplicity(e, f);
            if m > 0 {
                y[f] += xe * m as f64 * w[f];
            }
        }
    }
    y
}

/// Weight of closed non-backtracking lifts of each exact length 0..=n_max at
/// `base`, including the factor N(base). A constraint fixes the first edges.
pub fn closed_path_weights(
    g: &IndexedGraph,
    orders: &OrderGrading,
    f: &Potential,
    base: usize,
    n_max: usize,
    constraint: Option<&[usize]>,
) -> Result<Vec<f64>> {
    let flat = g.materialize(if g.rays.is_empty() { 0 } else { n_max / 2 + 1 });
    dp_guard(&flat, n_max)?;
    let w: Vec<f64> = f.flat_values(&flat).iter().map(|v| v.exp()).collect();
    let nb = orders.vertex_f64(base);
    let mut out = vec![0.0; n_max + 1];
    let (mut x, start) = dp_start(&flat, &w, base, constraint)?;
    if constraint.is_none_or(|c| c.is_empty()) {
        out[0] = nb;
    }
    for (l, slot) in out.iter_mut().enumerate().skip(start) {
        if l > start {
            x = dp_step(&flat, &w, &x);
        }
        *slot = nb * flat.edges.iter().enumerate().filter(|(_, e)| e.to == base).map(|(e, _)| x[e]).sum::<f64>();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleCounts {
    /// Weight at each exact distance.
    pub per_length: Vec<f64>,
    /// N_x(n): weight at distance at most n.
    pub cumulative: Vec<f64>,
}

pub fn orbit_oracle(
    g: &IndexedGraph,
    orders: &OrderGrading,
    f: &Potential,
    base: usize,
    n_max: usize,
    constraint: Option<&[usize]>,
) -> Result<OracleCounts> {
    let per_length = closed_path_weights(g, orders, f, base, n_max, constraint)?;
    let mut acc = 0.0;
    let cumulative = per_length
        .iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect();
    Ok(OracleCounts { per_length, cumulative })
}

/// Exact number of cover vertices at each distance 0..=n_max from a lift of
/// `base`, grouped by the quotient label they lie over.
pub fn lift_label_counts(g: &IndexedGraph, base: usize, n_max: usize) -> Result<Vec<BTreeMap<String, u128>>> {
    let flat = g.materialize(n_max + 1);
    dp_guard(&flat, n_max)?;
    let mut out = vec![BTreeMap::new(); n_max + 1];
    out[0].insert(flat.vertex_labels[base].clone(), 1u128);
    let mut x = vec![0u128; flat.edges.len()];
    for &e in &flat.out[base] {
        x[e] = flat.edges[flat.edges[e].rev].index as u128;
    }
    for l in 1..=n_max {
        if l > 1 {
            let mut y = vec![0u128; x.len()];
            for (e, &xe) in x.iter().enumerate() {
                if xe == 0 {
                    continue;
                }
                for &f in &flat.out[flat.edges[e].to] {
                    let m = flat.multiplicity(e, f) as u128;
                    if m > 0 {
                        let add = xe.checked_mul(m).ok_or(Error::Overflow)?;
                        y[f] = y[f].checked_add(add).ok_or(Error::Overflow)?;
                    }
                }
            }
            x = y;
        }
        for (e, &xe) in x.iter().enumerate() {
            if xe > 0 {
                let slot = out[l].entry(flat.vertex_labels[flat.edges[e].to].clone()).or_insert(0u128);
                *slot = slot.checked_add(xe).ok_or(Error::Overflow)?;
            }
        }
    }
    Ok(out)
}

/// Exact unweighted count of lifts of `base` at each distance.
pub fn closed_lift_counts(g: &IndexedGraph, base: usize, n_max: usize) -> Result<Vec<u128>> {
    let label = &g.vertices[base];
    Ok(lift_label_counts(g, base, n_max)?.iter().map(|m| m.get(label).copied().unwrap_or(0)).collect())
}

/// Shadow mass of the cover boundary seen through an edge path from `base`:
/// (prod of multiplicities) exp(sum (F - delta)) u+(last edge).
pub fn shadow_measure(gd: &GibbsData, g: &IndexedGraph, base: usize, path: &[usize]) -> Result<f64> {
    if path.is_empty() {
        return Ok(1.0);
    }
    let flat = g.materialize(1);
    checked_path(&flat, base, path)?;
    let mut v = 1.0;
    for pair in path.windows(2) {
        v *= flat.multiplicity(pair[0], pair[1]) as f64;
    }
    let s: f64 = path.iter().map(|&e| gd.potential.core[e] - gd.delta).sum();
    Ok(v * s.exp() * gd.u_plus.core[*path.last().unwrap()])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MainTerms {
    pub main_ball: f64,
    pub main_shadow: f64,
    /// Coefficients of e^{2 delta n} in each variant.
    pub constant_ball: f64,
    pub constant_shadow: f64,
}

pub const NORMALIZATION_TOL: f64 = 1e-8;

pub fn check_normalization(rec: &NormalizationRecord) -> Result<()> {
    for (name, v) in [("plus", rec.plus_mass), ("minus", rec.minus_mass)] {
        if !((v - 1.0).abs() <= NORMALIZATION_TOL) {
            return Err(Error::NormalizationMismatch(format!("{name} mass at `{}` is {v}", rec.base_vertex)));
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn main_term(
    params: BiregularParams,
    gd: &GibbsData,
    orders: &OrderGrading,
    base: usize,
    m_mass: f64,
    n: u32,
    omega_mass: Option<f64>,
) -> Result<MainTerms> {
    check_normalization(&gd.normalization)?;
    let nb = orders.vertex_f64(base);
    let e2 = (2.0 * gd.delta).exp();
    let grow = (2.0 * gd.delta * n as f64).exp();
    let nu_plus = gd.normalization.plus_mass;
    let nu_minus = gd.normalization.minus_mass;
    let omega = omega_mass.unwrap_or(nu_plus);
    let qd = params.qd as f64;
    let constant_shadow = e2 * nu_minus * nu_plus * nb / ((e2 - 1.0) * m_mass);
    let constant_ball = e2 * (qd + 1.0) * nb * omega / (qd * (e2 - 1.0) * m_mass);
    Ok(MainTerms {
        main_ball: constant_ball * (grow - 1.0),
        main_shadow: constant_shadow * grow,
        constant_ball,
        constant_shadow,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RenewalMode {
    Exact,
    Float,
    Extrapolated,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RenewalConstant {
    pub c_star: f64,
    /// Exact value as "p/q" in exact mode.
    pub exact: Option<String>,
    /// e^{2 delta}.
    pub lambda: f64,
    pub exact_lambda: Option<u64>,
    pub mode: RenewalMode,
    #[serde(skip)]
    pub c_star_q: Option<BigRational>,
}

fn q_int(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Starting weights, return indicator and transfer matrix over core edges.
fn core_transfer(g: &IndexedGraph, f: &Potential, base: usize) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
    let n = g.edges.len();
    let w: Vec<f64> = f.core.iter().map(|v| v.exp()).collect();
    let w0 = DVector::from_fn(n, |e, _| {
        if g.edges[e].from == base { g.edges[g.edges[e].rev].index as f64 * w[e] } else { 0.0 }
    });
    let ret = DVector::from_fn(n, |e, _| if g.edges[e].to == base { 1.0 } else { 0.0 });
    let t = DMatrix::from_fn(n, n, |e, h| {
        if g.edges[e].to == g.edges[h].from {
            crate::indexed_graph::multiplicity_from(g.edges[e].index, g.edges[g.edges[h].rev].index, h == g.edges[e].rev)
                as f64
                * w[h]
        } else {
            0.0
        }
    });
    (w0, ret, t)
}

/// Limit of N_x(2n) e^{-2n delta} from the peripheral spectral projector of
/// the squared transfer matrix; exact when F = 0 on a finite quotient.
pub fn renewal_constant(
    g: &IndexedGraph,
    orders: &OrderGrading,
    f: &Potential,
    base: usize,
    delta_hint: Option<f64>,
) -> Result<RenewalConstant> {
    if !g.rays.is_empty() {
        let delta = match delta_hint {
            Some(d) => d,
            None => gibbs::critical_exponent(g, f)?,
        };
        return extrapolated_constant(g, orders, f, base, delta);
    }
    let (w0, ret, t) = core_transfer(g, f, base);
    let rho = linalg::spectral_radius(&t);
    if rho <= 1.0 {
        return Err(Error::NoClosedGeodesic);
    }
    let moduli = linalg::eigen_moduli(&t);
    let dim = moduli.iter().filter(|m| (*m - rho).abs() <= 1e-8 * rho).count();
    let lambda = rho * rho;
    let nb = &orders.vertex_order[base];
    if f.is_zero() {
        if let Some(rc) = exact_constant(g, &t, &w0, &ret, lambda, dim, nb) {
            return Ok(rc);
        }
    }
    let n = t.nrows();
    let a = &t * &t - DMatrix::identity(n, n) * lambda;
    let r = linalg::null_space(&a, dim);
    let l = linalg::null_space(&a.transpose(), dim);
    let m = l.transpose() * &r;
    let minv = m.try_inverse().ok_or_else(|| Error::NotConverged("peripheral projector is singular".into()))?;
    let pi = &r * minv * l.transpose();
    let ipt = DMatrix::identity(n, n) + &t;
    let v = (w0.transpose() * ipt * pi * ret)[(0, 0)];
    Ok(RenewalConstant {
        c_star: rational_to_f64(nb) * v / (lambda - 1.0),
        exact: None,
        lambda,
        exact_lambda: None,
        mode: RenewalMode::Float,
        c_star_q: None,
    })
}

fn exact_constant(
    g: &IndexedGraph,
    t: &DMatrix<f64>,
    w0: &DVector<f64>,
    ret: &DVector<f64>,
    lambda: f64,
    dim: usize,
    nb: &BigRational,
) -> Option<RenewalConstant> {
    let lam = lambda.round();
    if (lam - lambda).abs() > 1e-6 * lambda || lam < 2.0 {
        return None;
    }
    let n = t.nrows();
    let tq: QMatrix = (0..n).map(|i| (0..n).map(|j| q_int(t[(i, j)].round() as i64)).collect()).collect();
    let mut a = linalg::q_mul(&tq, &tq);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] -= q_int(lam as i64);
    }
    let r = linalg::q_null_space(&a);
    let l = linalg::q_null_space(&linalg::q_transpose(&a));
    if r.first().map_or(0, |x| x.len()) != dim || l.first().map_or(0, |x| x.len()) != dim {
        return None;
    }
    let minv = linalg::q_inverse(&linalg::q_mul(&linalg::q_transpose(&l), &r))?;
    let pi = linalg::q_mul(&linalg::q_mul(&r, &minv), &linalg::q_transpose(&l));
    let _ = g;
    // w0^T (I + T) Pi ret
    let row: Vec<BigRational> = (0..n)
        .map(|j| {
            let mut s = q_int(w0[j].round() as i64);
            for i in 0..n {
                s += q_int(w0[i].round() as i64) * &tq[i][j];
            }
            s
        })
        .collect();
    let mut v = BigRational::zero();
    for i in 0..n {
        for j in 0..n {
            if ret[j] != 0.0 && !pi[i][j].is_zero() {
                v += &row[i] * &pi[i][j];
            }
        }
    }
    let c = nb * v / (q_int(lam as i64) - BigRational::one());
    Some(RenewalConstant {
        c_star: rational_to_f64(&c),
        exact: Some(c.to_string()),
        lambda: lam,
        exact_lambda: Some(lam as u64),
        mode: RenewalMode::Exact,
        c_star_q: Some(c),
    })
}

/// Horizon (in units of 2n) for the extrapolated constant.
pub const EXTRAPOLATION_HORIZON: usize = 60;

fn extrapolated_constant(g: &IndexedGraph, orders: &OrderGrading, f: &Potential, base: usize, delta: f64) -> Result<RenewalConstant> {
    let oracle = orbit_oracle(g, orders, f, base, 2 * EXTRAPOLATION_HORIZON, None)?;
    let seq: Vec<f64> = (0..=EXTRAPOLATION_HORIZON)
        .map(|n| oracle.cumulative[2 * n] * (-2.0 * delta * n as f64).exp())
        .collect();
    let k = seq.len();
    let (a, b, c) = (seq[k - 3], seq[k - 2], seq[k - 1]);
    let denom = (c - b) - (b - a);
    let aitken = if denom.abs() > 0.0 { c - (c - b) * (c - b) / denom } else { c };
    let rel = |x: f64, y: f64| (x - y).abs() / y.abs().max(1e-300);
    if !(aitken.is_finite() && aitken > 0.0) || rel(c, aitken) > 1e-3 || rel(b, c) > 1e-3 {
        return Err(Error::NotConverged(format!(
            "N(2n) exp(-2n delta) still moving at n = {EXTRAPOLATION_HORIZON}: {b} -> {c}"
        )));
    }
    Ok(RenewalConstant {
        c_star: aitken,
        exact: None,
        lambda: (2.0 * delta).exp(),
        exact_lambda: None,
        mode: RenewalMode::Extrapolated,
        c_star_q: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountRow {
    pub n: usize,
    pub oracle: f64,
    pub main_ball: Option<f64>,
    pub main_shadow: Option<f64>,
    pub c_star_term: f64,
    pub residual: f64,
    /// main_shadow / oracle.
    pub ratio: Option<f64>,
    /// main_ball / oracle.
    pub ratio_ball: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountReport {
    pub n_lo: usize,
    pub n_hi: usize,
    pub delta: f64,
    pub rows: Vec<CountRow>,
    pub renewal: RenewalConstant,
    pub m_mass: f64,
    pub constant_ball: Option<f64>,
    pub constant_shadow: Option<f64>,
    /// constant_ball / constant_shadow.
    pub constant_ratio: Option<f64>,
    pub kappa_hat: Option<f64>,
    pub normalization: NormalizationRecord,
}

impl CountReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        let mut s = String::from("n,oracle,main_ball,main_shadow,cstar_term,residual,ratio\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.17e},{},{},{:.17e},{:.17e},{}\n",
                r.n,
                r.oracle,
                opt(r.main_ball),
                opt(r.main_shadow),
                r.c_star_term,
                r.residual,
                opt(r.ratio)
            ));
        }
        s
    }

    /// Largest relative spread of main_shadow/oracle over the rows.
    pub fn ratio_variation(&self) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter_map(|r| r.ratio).collect();
        if v.is_empty() {
            return None;
        }
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Some((hi - lo) / hi.abs())
    }
}

/// Oracle N_x(2n) against C* e^{2 delta n} and both main terms for n in [n_lo, n_hi].
pub fn error_decay_report(
    g: &IndexedGraph,
    gd: &GibbsData,
    orders: &OrderGrading,
    base: usize,
    params: Option<BiregularParams>,
    n_lo: usize,
    n_hi: usize,
) -> Result<CountReport> {
    let renewal = renewal_constant(g, orders, &gd.potential, base, Some(gd.delta))?;
    let delta = 0.5 * renewal.lambda.ln();
    let m_mass = markov::total_mass(g, gd, orders)?;
    let exact = match (&renewal.c_star_q, renewal.exact_lambda) {
        (Some(c), Some(lam)) => Some((c.clone(), lam)),
        _ => None,
    };
    let mut rows = Vec::new();
    let (float_oracle, exact_oracle) = match &exact {
        Some(_) => {
            let counts = closed_lift_counts(g, base, 2 * n_hi)?;
            let nb = &orders.vertex_order[base];
            let mut acc = BigRational::zero();
            let cum: Vec<BigRational> = counts
                .iter()
                .map(|&c| {
                    acc += BigRational::from_integer(BigInt::from(c));
                    nb * &acc
                })
                .collect();
            (None, Some(cum))
        }
        None => (Some(orbit_oracle(g, orders, &gd.potential, base, 2 * n_hi, None)?.cumulative), None),
    };
    let mut terms = (None, None);
    for n in n_lo..=n_hi {
        let (oracle, residual, c_term) = match (&exact, &exact_oracle) {
            (Some((c, lam)), Some(cum)) => {
                let ct = c * BigRational::from_integer(BigInt::from(*lam).pow(n as u32));
                let res = &cum[2 * n] - &ct;
                (rational_to_f64(&cum[2 * n]), rational_to_f64(&res), rational_to_f64(&ct))
            }
            _ => {
                let o = float_oracle.as_ref().unwrap()[2 * n];
                let ct = renewal.c_star * (2.0 * delta * n as f64).exp();
                (o, o - ct, ct)
            }
        };
        let mt = match params {
            Some(p) => Some(main_term(p, gd, orders, base, m_mass, n as u32, None)?),
            None => None,
        };
        if let Some(m) = &mt {
            terms = (Some(m.constant_ball), Some(m.constant_shadow));
        }
        rows.push(CountRow {
            n,
            oracle,
            main_ball: mt.as_ref().map(|m| m.main_ball),
            main_shadow: mt.as_ref().map(|m| m.main_shadow),
            c_star_term: c_term,
            residual,
            ratio: mt.as_ref().map(|m| m.main_shadow / oracle),
            ratio_ball: mt.as_ref().map(|m| m.main_ball / oracle),
        });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.residual.abs() > 1e-12 * r.oracle.abs().max(1.0) || (exact.is_some() && r.residual != 0.0))
        .map(|r| (r.n as f64, r.residual.abs().ln()))
        .collect();
    let kappa_hat = (pts.len() >= 2).then(|| {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let (_, slope, _) = linalg::linear_fit(&x, &y);
        2.0 * delta - slope
    });
    Ok(CountReport {
        n_lo,
        n_hi,
        delta,
        rows,
        renewal,
        m_mass,
        constant_ball: terms.0,
        constant_shadow: terms.1,
        constant_ratio: match terms {
            (Some(a), Some(b)) => Some(a / b),
            _ => None,
        },
        kappa_hat,
        normalization: gd.normalization.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetFamily {
    /// Cover ball of radius R around the base lift.
    Ball,
    /// Geodesic segment with R edges starting at the base lift.
    Path,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryRow {
    pub r: usize,
    pub size: u64,
    pub boundary: u64,
    pub ratio: f64,
    pub bound: f64,
    pub holds: bool,
}

fn cover_degree(flat: &Flat, v: usize) -> u64 {
    flat.out[v].iter().map(|&f| flat.edges[flat.edges[f].rev].index).sum()
}

/// |boundary E_R| / |E_R| for each R, with the verdict ratio <= R^{-beta}.
pub fn boundary_ratio(g: &IndexedGraph, base: usize, family: SetFamily, radii: &[usize], beta: f64) -> Result<Vec<BoundaryRow>> {
    let mut rows = Vec::new();
    for &r in radii {
        let (size, degsum) = match family {
            SetFamily::Ball => {
                let ball = build_cover_ball(g, base, r, DEFAULT_BALL_LIMIT)?;
                let d: u64 = ball.nodes.iter().map(|n| cover_degree(&ball.flat, n.vertex as usize)).sum();
                (ball.nodes.len() as u64, d)
            }
            SetFamily::Path => {
                let flat = g.materialize(r + 1);
                let mut d = cover_degree(&flat, base);
                let mut via: Option<usize> = None;
                let mut v = base;
                for step in 0..r {
                    let next = flat.out[v].iter().copied().find(|&f| match via {
                        None => true,
                        Some(e) => flat.multiplicity(e, f) > 0,
                    });
                    let f = next.ok_or_else(|| Error::InvalidWord(format!("no geodesic continues past step {step}")))?;
                    v = flat.edges[f].to;
                    via = Some(f);
                    d += cover_degree(&flat, v);
                }
                (r as u64 + 1, d)
            }
        };
        let boundary = degsum - 2 * (size - 1);
        let ratio = boundary as f64 / size as f64;
        let bound = if r == 0 { f64::INFINITY } else { (r as f64).powf(-beta) };
        rows.push(BoundaryRow { r, size, boundary, ratio, bound, holds: ratio <= bound });
    }
    Ok(rows)
}
