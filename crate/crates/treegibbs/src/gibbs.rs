//! Potentials, critical exponents, Patterson shadow vectors and Gibbs cocycles.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::counting;
use crate::error::{Error, Result};
use crate::indexed_graph::{
    core_lift_degree, default_orders, EdgeKind, Flat, IndexedGraph, PairSeq, RayKind,
};
use crate::linalg;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TailValuesSpec {
    pub tail_index: usize,
    #[serde(default)]
    pub prefix: Vec<[f64; 2]>,
    pub period: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    #[serde(default)]
    pub edges: BTreeMap<String, f64>,
    #[serde(default)]
    pub tail_values: Vec<TailValuesSpec>,
}

/// Real weight per quotient oriented edge. Tail edges carry eventually
/// periodic pairs (F(e_n), F(ebar_n)); funnel interiors carry 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Potential {
    pub core: Vec<f64>,
    pub tails: Vec<Option<PairSeq<(f64, f64)>>>,
}

impl Potential {
    pub fn zero(g: &IndexedGraph) -> Self {
        Potential { core: vec![0.0; g.edges.len()], tails: vec![None; g.n_tails] }
    }

    pub fn constant(g: &IndexedGraph, c: f64) -> Self {
        Potential {
            core: vec![c; g.edges.len()],
            tails: vec![Some(PairSeq::new(vec![], vec![(c, c)])); g.n_tails],
        }
    }

    pub fn from_spec(g: &IndexedGraph, spec: &PotentialSpec) -> Result<Self> {
        let mut p = Potential::zero(g);
        for (id, v) in &spec.edges {
            let e = g
                .edge(id)
                .map_err(|_| Error::config(format!("edges.{id}"), format!("unknown edge `{id}`")))?;
            if !v.is_finite() {
                return Err(Error::config(format!("edges.{id}"), "value must be finite"));
            }
            p.core[e] = *v;
        }
        for (k, t) in spec.tail_values.iter().enumerate() {
            if t.tail_index >= g.n_tails {
                return Err(Error::config(
                    format!("tail_values[{k}].tail_index"),
                    format!("no tail with index {}", t.tail_index),
                ));
            }
            if t.period.is_empty() {
                return Err(Error::config(format!("tail_values[{k}].period"), "period must be nonempty"));
            }
            let conv = |v: &Vec<[f64; 2]>| v.iter().map(|x| (x[0], x[1])).collect::<Vec<_>>();
            p.tails[t.tail_index] = Some(PairSeq::new(conv(&t.prefix), conv(&t.period)));
        }
        Ok(p)
    }

    /// The reversed potential F-(e) = F(ebar).
    pub fn reversed(&self, g: &IndexedGraph) -> Self {
        Potential {
            core: g.edges.iter().map(|e| self.core[e.rev]).collect(),
            tails: self
                .tails
                .iter()
                .map(|t| {
                    t.as_ref().map(|s| {
                        PairSeq::new(
                            s.prefix.iter().map(|&(a, b)| (b, a)).collect(),
                            s.period.iter().map(|&(a, b)| (b, a)).collect(),
                        )
                    })
                })
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.core.iter().all(|&v| v == 0.0)
            && self.tails.iter().flatten().all(|s| {
                s.prefix.iter().chain(&s.period).all(|&(a, b)| a == 0.0 && b == 0.0)
            })
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = self.core.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for s in self.tails.iter().flatten() {
            for &(a, b) in s.prefix.iter().chain(&s.period) {
                m = m.max(a.abs()).max(b.abs());
            }
        }
        m
    }

    /// Values (F(e_n), F(ebar_n)) on ray `ray` at level `n`.
    pub fn ray_pair(&self, ray: usize, n: usize) -> (f64, f64) {
        match self.tails.get(ray) {
            Some(Some(s)) => s.at(n),
            _ => (0.0, 0.0),
        }
    }

    pub fn flat_value(&self, flat: &Flat, e: usize) -> f64 {
        match flat.edges[e].kind {
            EdgeKind::Core => self.core[e],
            EdgeKind::Ray { ray, level, up } => {
                let (a, b) = self.ray_pair(ray, level);
                if up {
                    a
                } else {
                    b
                }
            }
        }
    }

    pub fn flat_values(&self, flat: &Flat) -> Vec<f64> {
        (0..flat.edges.len()).map(|e| self.flat_value(flat, e)).collect()
    }
}

/// Combined index and potential data of one ray level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Level {
    pub ie: u64,
    pub ieb: u64,
    pub fe: f64,
    pub feb: f64,
}

fn lcm(a: usize, b: usize) -> usize {
    a / crate::indexed_graph::gcd_u64(a as u64, b as u64) as usize * b
}

/// Joint eventually periodic description of indices and potential along a ray.
pub fn ray_profile(g: &IndexedGraph, f: &Potential, ray: usize) -> PairSeq<Level> {
    let r = &g.rays[ray];
    let (fp, fper) = match f.tails.get(ray) {
        Some(Some(s)) => (s.prefix.len(), s.period.len()),
        _ => (0, 1),
    };
    let pre = r.pairs.prefix.len().max(fp);
    let per = lcm(r.pairs.period.len(), fper);
    let level = |n: usize| {
        let (ie, ieb) = r.pairs.at(n);
        let (fe, feb) = f.ray_pair(ray, n);
        Level { ie, ieb, fe, feb }
    };
    PairSeq::new((1..=pre).map(level).collect(), (pre + 1..=pre + per).map(level).collect())
}

/// Excursion sums along a ray at exponent `s`: H_n is the weight of paths
/// leaving through e_n until they first come back through ebar_n, K_n the
/// factor with u(ebar_{n+1}) = K_n u(ebar_n).
#[derive(Clone, Debug, PartialEq)]
pub struct TailSol {
    pub hk: PairSeq<(f64, f64)>,
}

struct Step {
    a: f64,
    b: f64,
    c: f64,
    kk: f64,
}

fn step(profile: &PairSeq<Level>, j: usize, s: f64) -> Step {
    let lj = profile.at(j);
    let lj1 = profile.at(j + 1);
    let w_ebar = (lj.feb - s).exp();
    let w_up = (lj1.fe - s).exp();
    Step {
        a: (lj.ie - 1) as f64 * w_ebar,
        b: lj1.ieb as f64 * w_up * lj.ie as f64 * w_ebar,
        c: (lj1.ieb - 1) as f64 * w_up,
        kk: lj.ie as f64 * w_ebar,
    }
}

/// Minimal (decaying) solution of the ray recurrences, or `None` when the
/// excursion series diverge at `s`.
pub fn solve_tail(profile: &PairSeq<Level>, s: f64) -> Option<TailSol> {
    let l0 = profile.periodic_start();
    let p = profile.period.len();
    let steps: Vec<Step> = (1..l0 + p).map(|j| step(profile, j, s)).collect();
    let st = |j: usize| &steps[j - 1];

    // composite Moebius map of one period, h -> (alpha h + beta)/(gamma h + delta)
    let mut m = [[1.0f64, 0.0], [0.0, 1.0]];
    let mut all_linear = true;
    for j in l0..l0 + p {
        let x = st(j);
        if x.c != 0.0 {
            all_linear = false;
        }
        let mj = [[x.b - x.a * x.c, x.a], [-x.c, 1.0]];
        let mut r = [[0.0; 2]; 2];
        for (i, row) in r.iter_mut().enumerate() {
            for (k, cell) in row.iter_mut().enumerate() {
                *cell = m[i][0] * mj[0][k] + m[i][1] * mj[1][k];
            }
        }
        let scale = r.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(scale.is_finite() && scale > 0.0) {
            return None;
        }
        for v in r.iter_mut().flatten() {
            *v /= scale;
        }
        m = r;
    }
    let (al, be, ga, de) = (m[0][0], m[0][1], m[1][0], m[1][1]);
    let mut candidates = Vec::new();
    if all_linear {
        let denom = de - al;
        if denom <= 0.0 {
            return None;
        }
        candidates.push(be / denom);
    } else {
        let bq = de - al;
        let disc = bq * bq + 4.0 * ga * be;
        if disc < 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let qq = -0.5 * (bq + bq.signum() * sq);
        if ga != 0.0 {
            candidates.push(qq / ga);
        }
        if qq != 0.0 {
            candidates.push(-be / qq);
        }
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    }
    for mut h in candidates {
        if !h.is_finite() || h < -1e-14 {
            continue;
        }
        h = h.max(0.0);
        // polish by iterating the period map, which is contracting at the minimal root
        let mut sol = None;
        for _ in 0..4 {
            match propagate(&steps, l0, p, h) {
                Some((hk, h_new, deriv)) => {
                    sol = Some((hk, deriv));
                    h = h_new;
                }
                None => {
                    sol = None;
                    break;
                }
            }
        }
        let Some((hk, deriv)) = sol else { continue };
        if deriv >= 1.0 - 1e-12 {
            continue;
        }
        let h_l0 = hk[l0 - 1].0;
        if (h_l0 - h).abs() > 1e-8 * h.abs().max(1.0) {
            continue;
        }
        let prefix = hk[..l0 - 1].to_vec();
        let period = hk[l0 - 1..l0 - 1 + p].to_vec();
        return Some(TailSol { hk: PairSeq::new(prefix, period) });
    }
    None
}

/// Backward pass from H_{l0+p} = h. Returns (H_j, K_j) for j = 1..l0+p-1,
/// the new H_{l0}, and the derivative of the period map at h.
fn propagate(steps: &[Step], l0: usize, p: usize, h: f64) -> Option<(Vec<(f64, f64)>, f64, f64)> {
    let top = l0 + p - 1;
    let mut out = vec![(0.0, 0.0); top];
    let mut next = h;
    let mut deriv = 1.0;
    for j in (1..=top).rev() {
        let x = &steps[j - 1];
        let denom = 1.0 - x.c * next;
        if denom <= 0.0 || !denom.is_finite() {
            return None;
        }
        if j >= l0 {
            deriv *= x.b / (denom * denom);
        }
        let hj = x.a + x.b * next / denom;
        out[j - 1] = (hj, x.kk / denom);
        next = hj;
    }
    Some((out.clone(), out[l0 - 1].0, deriv))
}

/// Critical value of a single ray: the infimum of exponents at which its
/// excursion series converge. `None` if they converge for every exponent.
pub fn tail_critical_value(profile: &PairSeq<Level>) -> Option<f64> {
    let maxf = profile
        .prefix
        .iter()
        .chain(&profile.period)
        .fold(0.0f64, |a, l| a.max(l.fe.abs()).max(l.feb.abs()));
    let maxi = profile.prefix.iter().chain(&profile.period).map(|l| l.ie + l.ieb).max().unwrap_or(2);
    let mut hi = (maxi as f64).ln() + 2.0 * maxf + 2.0;
    while solve_tail(profile, hi).is_none() {
        hi += 1.0;
        if hi > 1e6 {
            return None;
        }
    }
    let mut step = 1.0;
    let mut lo = hi - step;
    while solve_tail(profile, lo).is_some() {
        hi = lo;
        step *= 2.0;
        lo = hi - step;
        if step > 1e4 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if solve_tail(profile, mid).is_some() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Weighted non-backtracking matrix of the core with every ray resummed:
/// states are the core edges followed by ebar_1 of each tail.
pub fn effective_matrix(g: &IndexedGraph, f: &Potential, s: f64, sols: &[Option<TailSol>]) -> DMatrix<f64> {
    let ne = g.edges.len();
    let n = ne + g.n_tails;
    let mut t = DMatrix::zeros(n, n);
    let first = |r: usize| -> (Level, f64) {
        let lv = ray_profile(g, f, r).at(1);
        let h = sols[r].as_ref().map_or(0.0, |s| s.hk.at(1).0);
        (lv, h)
    };
    let tails_at = |v: usize| -> Vec<usize> {
        (0..g.n_tails).filter(|&r| g.rays[r].attach == v).collect()
    };
    for x in 0..ne {
        let v = g.edges[x].to;
        for &y in &g.out[v] {
            let m = crate::indexed_graph::edge_multiplicity(g, x, y).unwrap();
            t[(x, y)] += m as f64 * (f.core[y] - s).exp();
        }
        for r in tails_at(v) {
            let (lv, h) = first(r);
            t[(x, ne + r)] += lv.ieb as f64 * (lv.fe - s).exp() * h;
        }
    }
    for r in 0..g.n_tails {
        let v = g.rays[r].attach;
        for &y in &g.out[v] {
            t[(ne + r, y)] += g.edges[g.edges[y].rev].index as f64 * (f.core[y] - s).exp();
        }
        for r2 in tails_at(v) {
            let (lv, h) = first(r2);
            let mult = if r2 == r { lv.ieb - 1 } else { lv.ieb };
            t[(ne + r, ne + r2)] += mult as f64 * (lv.fe - s).exp() * h;
        }
    }
    t
}

fn tail_solutions(g: &IndexedGraph, f: &Potential, s: f64) -> Option<Vec<Option<TailSol>>> {
    let mut out = Vec::with_capacity(g.rays.len());
    for (r, ray) in g.rays.iter().enumerate() {
        match ray.kind {
            RayKind::Tail(_) => out.push(Some(solve_tail(&ray_profile(g, f, r), s)?)),
            RayKind::Funnel(_) => out.push(None),
        }
    }
    Some(out)
}

/// T(s)[e,f] = m(e,f) exp(F(f) - s) on the core with rays cut at `depth`.
pub fn transfer_matrix(g: &IndexedGraph, f: &Potential, s: f64, depth: usize) -> (Flat, DMatrix<f64>) {
    let flat = g.materialize(depth);
    let fv = f.flat_values(&flat);
    let n = flat.edges.len();
    let mut t = DMatrix::zeros(n, n);
    for e in 0..n {
        for &y in &flat.out[flat.edges[e].to] {
            t[(e, y)] = flat.multiplicity(e, y) as f64 * (fv[y] - s).exp();
        }
    }
    (flat, t)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeltaReport {
    pub delta: f64,
    /// Largest critical value among the tails, when there are tails.
    pub s_tail: Option<f64>,
    pub method: String,
    pub bisection_steps: usize,
}

fn max_lift_degree(g: &IndexedGraph) -> u64 {
    let mut d = (0..g.vertices.len()).map(|a| core_lift_degree(g, a)).max().unwrap_or(1);
    for r in &g.rays {
        for l in r.pairs.prefix.iter().chain(&r.pairs.period) {
            d = d.max(l.0 + l.1);
        }
    }
    d
}

pub fn critical_exponent_report(g: &IndexedGraph, f: &Potential) -> Result<DeltaReport> {
    if !g.has_tails() {
        let t = effective_matrix(g, f, 0.0, &vec![None; g.rays.len()]);
        let rho = linalg::spectral_radius(&t);
        if rho <= 0.0 {
            return Err(Error::NoClosedGeodesic);
        }
        return Ok(DeltaReport { delta: rho.ln(), s_tail: None, method: "perron".into(), bisection_steps: 0 });
    }
    let mut s_tail: Option<f64> = None;
    for (r, ray) in g.rays.iter().enumerate() {
        if let RayKind::Tail(_) = ray.kind {
            if let Some(v) = tail_critical_value(&ray_profile(g, f, r)) {
                s_tail = Some(s_tail.map_or(v, |w: f64| w.max(v)));
            }
        }
    }
    let radius = |s: f64| -> Option<f64> {
        let sols = tail_solutions(g, f, s)?;
        Some(linalg::spectral_radius(&effective_matrix(g, f, s, &sols)))
    };
    let mut hi = (max_lift_degree(g) as f64).ln() + f.max_abs() + 1.0;
    while radius(hi).is_none_or(|r| r >= 1.0) {
        hi += 1.0;
        if hi > 1e6 {
            return Err(Error::NotConverged("no upper bracket for the critical exponent".into()));
        }
    }
    let mut lo = match s_tail {
        Some(st) => {
            let r = radius(st).ok_or(Error::Diverges { s_tail: st })?;
            if r <= 1.0 {
                return Err(Error::Diverges { s_tail: st });
            }
            st
        }
        None => {
            let mut step = 1.0;
            let mut lo = hi - step;
            while radius(lo).is_some_and(|r| r < 1.0) {
                step *= 2.0;
                lo = hi - step;
                if step > 1e4 {
                    return Err(Error::NotConverged("no lower bracket for the critical exponent".into()));
                }
            }
            lo
        }
    };
    let mut steps = 0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        steps += 1;
        match radius(mid) {
            Some(r) if r < 1.0 => hi = mid,
            _ => lo = mid,
        }
    }
    Ok(DeltaReport { delta: 0.5 * (lo + hi), s_tail, method: "tail-resummed bisection".into(), bisection_steps: steps })
}

/// delta_{Gamma,F}; errors if the reversed potential gives a different value.
pub fn critical_exponent(g: &IndexedGraph, f: &Potential) -> Result<f64> {
    let plus = critical_exponent_report(g, f)?.delta;
    let minus = critical_exponent_report(g, &f.reversed(g))?.delta;
    if (plus - minus).abs() > 1e-9 {
        return Err(Error::DeltaMismatch { plus, minus });
    }
    Ok(plus)
}

/// Growth rate of ||T(0)^n 1|| between `n_lo` and `n_hi` (finite graphs).
pub fn power_growth_estimate(g: &IndexedGraph, f: &Potential, n_lo: usize, n_hi: usize) -> f64 {
    let (_, t) = transfer_matrix(g, f, 0.0, 0);
    let mut v = DVector::from_element(t.nrows(), 1.0);
    let mut log_norm = 0.0;
    let mut at_lo = 0.0;
    for n in 1..=n_hi {
        v = &t * v;
        let s = v.sum();
        log_norm += s.ln();
        v /= s;
        if n == n_lo {
            at_lo = log_norm;
        }
    }
    (log_norm - at_lo) / (n_hi - n_lo) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailShadow {
    /// u(ebar_1).
    pub base: f64,
    pub sol: TailSol,
}

impl TailShadow {
    /// (u(e_n), u(ebar_n)) for n = 1..=depth.
    pub fn levels(&self, depth: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(depth);
        let mut down = self.base;
        for n in 1..=depth {
            let (h, k) = self.sol.hk.at(n);
            out.push((h * down, down));
            down *= k;
        }
        out
    }
}

/// Shadow values u(e) on the core, with analytic continuation along rays.
#[derive(Clone, Debug, PartialEq)]
pub struct Shadow {
    pub core: Vec<f64>,
    pub rays: Vec<Option<TailShadow>>,
}

impl Shadow {
    pub fn on_flat(&self, flat: &Flat) -> Vec<f64> {
        let mut u = vec![0.0; flat.edges.len()];
        u[..flat.n_core_edges].copy_from_slice(&self.core);
        for (r, list) in flat.ray_edges.iter().enumerate() {
            if let Some(ts) = &self.rays[r] {
                for (n, &(a, b)) in ts.levels(list.len()).iter().enumerate() {
                    u[list[n].0] = a;
                    u[list[n].1] = b;
                }
            }
        }
        u
    }
}

pub fn shadow_vector(g: &IndexedGraph, f: &Potential, delta: f64, direction: Direction) -> Result<Shadow> {
    let fd = match direction {
        Direction::Forward => f.clone(),
        Direction::Backward => f.reversed(g),
    };
    let sols = tail_solutions(g, &fd, delta)
        .ok_or_else(|| Error::NoPositiveSolution(format!("tail series diverge at {delta}")))?;
    let t = effective_matrix(g, &fd, delta, &sols);
    let rho = linalg::spectral_radius(&t);
    if (rho - 1.0).abs() > 1e-7 {
        return Err(Error::NoPositiveSolution(format!(
            "effective spectral radius is {rho} at exponent {delta}"
        )));
    }
    let v = linalg::perron_right(&t, rho);
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::NoPositiveSolution("Perron vector has negative entries".into()));
    }
    let ne = g.edges.len();
    let a0 = g.order_base;
    let mut mass = 0.0;
    for &e in &g.out[a0] {
        mass += g.edges[g.edges[e].rev].index as f64 * v[e] * (fd.core[e] - delta).exp();
    }
    for r in 0..g.n_tails {
        if g.rays[r].attach == a0 {
            let lv = ray_profile(g, &fd, r).at(1);
            let h = sols[r].as_ref().unwrap().hk.at(1).0;
            mass += lv.ieb as f64 * (lv.fe - delta).exp() * h * v[ne + r];
        }
    }
    if mass <= 0.0 {
        return Err(Error::NoPositiveSolution("zero shadow mass at the base vertex".into()));
    }
    let mut core: Vec<f64> = (0..ne).map(|e| v[e] / mass).collect();
    for &e in &g.funnel_entries {
        core[e] = 0.0;
    }
    let rays = g
        .rays
        .iter()
        .enumerate()
        .map(|(r, ray)| match ray.kind {
            RayKind::Tail(_) => Some(TailShadow { base: v[ne + r] / mass, sol: sols[r].clone().unwrap() }),
            RayKind::Funnel(_) => None,
        })
        .collect();
    Ok(Shadow { core, rays })
}

/// Sup-norm residual of u(e) = sum_f m(e,f) exp(F(f)-delta) u(f) on rays cut at `depth`.
pub fn shadow_residual(g: &IndexedGraph, f: &Potential, delta: f64, u: &Shadow, depth: usize) -> f64 {
    let flat = g.materialize(depth + 1);
    let uf = u.on_flat(&flat);
    let fv = f.flat_values(&flat);
    let mut worst = 0.0f64;
    for e in 0..flat.edges.len() {
        if flat.is_funnel_edge(e) || flat.edge_level(e) > depth {
            continue;
        }
        let mut s = 0.0;
        for &y in &flat.out[flat.edges[e].to] {
            s += flat.multiplicity(e, y) as f64 * (fv[y] - delta).exp() * uf[y];
        }
        worst = worst.max((uf[e] - s).abs());
    }
    worst
}

pub fn default_check_depth(g: &IndexedGraph) -> usize {
    g.rays
        .iter()
        .map(|r| r.pairs.prefix.len() + 2 * r.pairs.period.len() + 2)
        .max()
        .unwrap_or(0)
        .max(if g.rays.is_empty() { 0 } else { 8 })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormalizationRecord {
    pub base_vertex: String,
    pub rule: String,
    pub plus_mass: f64,
    pub minus_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverMeta {
    pub solver: String,
    pub s_tail: Option<f64>,
    pub bisection_steps: usize,
    pub check_depth: usize,
    pub residual_plus: f64,
    pub residual_minus: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GibbsData {
    pub delta: f64,
    pub delta_minus: f64,
    /// Critical exponent of the zero potential.
    pub delta_zero: f64,
    pub potential: Potential,
    pub u_plus: Shadow,
    pub u_minus: Shadow,
    pub normalization: NormalizationRecord,
    pub meta: SolverMeta,
}

impl GibbsData {
    pub fn reversed_potential(&self, g: &IndexedGraph) -> Potential {
        self.potential.reversed(g)
    }
}

/// Base-vertex mass sum_{e from a0} i(ebar) u(e) exp(F(e)-delta).
pub fn base_mass(g: &IndexedGraph, f: &Potential, delta: f64, u: &Shadow) -> f64 {
    let flat = g.materialize(1);
    let uf = u.on_flat(&flat);
    flat.out[g.order_base]
        .iter()
        .map(|&e| flat.edges[flat.edges[e].rev].index as f64 * uf[e] * (f.flat_value(&flat, e) - delta).exp())
        .sum()
}

pub fn gibbs_data(g: &IndexedGraph, f: &Potential) -> Result<GibbsData> {
    let plus = critical_exponent_report(g, f)?;
    let fm = f.reversed(g);
    let minus = critical_exponent_report(g, &fm)?;
    if (plus.delta - minus.delta).abs() > 1e-9 {
        return Err(Error::DeltaMismatch { plus: plus.delta, minus: minus.delta });
    }
    let delta = plus.delta;
    let delta_zero = if f.is_zero() { delta } else { critical_exponent_report(g, &Potential::zero(g))?.delta };
    let u_plus = shadow_vector(g, f, delta, Direction::Forward)?;
    let u_minus = shadow_vector(g, f, delta, Direction::Backward)?;
    let depth = default_check_depth(g);
    let meta = SolverMeta {
        solver: plus.method.clone(),
        s_tail: plus.s_tail,
        bisection_steps: plus.bisection_steps,
        check_depth: depth,
        residual_plus: shadow_residual(g, f, delta, &u_plus, depth),
        residual_minus: shadow_residual(g, &fm, delta, &u_minus, depth),
    };
    let normalization = NormalizationRecord {
        base_vertex: g.vertices[g.order_base].clone(),
        rule: "sum over e leaving base of i(rev e) * u(e) * exp(F(e) - delta) = 1".into(),
        plus_mass: base_mass(g, f, delta, &u_plus),
        minus_mass: base_mass(g, &fm, delta, &u_minus),
    };
    Ok(GibbsData { delta, delta_minus: minus.delta, delta_zero, potential: f.clone(), u_plus, u_minus, normalization, meta })
}

fn check_path(g: &IndexedGraph, path: &[usize]) -> Result<()> {
    for w in path.windows(2) {
        if g.edges[w[0]].to != g.edges[w[1]].from {
            return Err(Error::NotComposable(g.edges[w[0]].id.clone(), g.edges[w[1]].id.clone()));
        }
    }
    Ok(())
}

/// C_F(x,y) = sum of F along y->v minus sum of F along x->v.
pub fn gibbs_cocycle(g: &IndexedGraph, f: &Potential, path_x: &[usize], path_y: &[usize]) -> Result<f64> {
    check_path(g, path_x)?;
    check_path(g, path_y)?;
    if let (Some(&a), Some(&b)) = (path_x.last(), path_y.last()) {
        if g.edges[a].to != g.edges[b].to {
            return Err(Error::PathMismatch);
        }
    }
    let sum = |p: &[usize]| p.iter().map(|&e| f.core[e]).sum::<f64>();
    Ok(sum(path_y) - sum(path_x))
}

/// The cocycle of the normalized potential F - delta.
pub fn gibbs_cocycle_normalized(
    g: &IndexedGraph,
    f: &Potential,
    delta: f64,
    path_x: &[usize],
    path_y: &[usize],
) -> Result<f64> {
    let c = gibbs_cocycle(g, f, path_x, path_y)?;
    Ok(c - delta * (path_y.len() as f64 - path_x.len() as f64))
}

/// Partial sums of the Poincare series for n = 0..=n_max.
pub fn poincare_partial_sum(g: &IndexedGraph, f: &Potential, s: f64, n_max: usize, base: usize) -> Result<Vec<f64>> {
    let orders = default_orders(g)?;
    let w = counting::closed_path_weights(g, &orders, f, base, n_max, None)?;
    let mut acc = 0.0;
    Ok(w.iter()
        .enumerate()
        .map(|(n, x)| {
            acc += x * (-s * n as f64).exp();
            acc
        })
        .collect())
}

/// Lower bound (1/2) log limsup c_n^{1/n} for a cuspidal tail.
pub fn cusp_exponent_bound(g: &IndexedGraph, f: &Potential, tail: usize) -> Result<f64> {
    if tail >= g.n_tails {
        return Err(Error::NonCuspidal(format!("no tail with index {tail}")));
    }
    let prof = ray_profile(g, f, tail);
    if prof.prefix.iter().chain(&prof.period).any(|l| l.ieb != 1) {
        return Err(Error::NonCuspidal("some i(ebar_n) differs from 1".into()));
    }
    if prof.period.iter().all(|l| l.ie == 1) {
        return Ok(f64::NEG_INFINITY);
    }
    let p = prof.period.len() as f64;
    let log_growth: f64 = prof.period.iter().map(|l| (l.ie as f64).ln() + l.fe + l.feb).sum::<f64>() / p;
    Ok(0.5 * log_growth)
}
