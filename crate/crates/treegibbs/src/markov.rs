//! The countable Markov chain on quotient edges: kernel, stationary vector,
//! taboo and first-passage tables, recurrence and mixing diagnostics.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{ray_profile, GibbsData, Shadow};
use crate::indexed_graph::{core_lift_degree, period_of, scc, EdgeKind, Flat, IndexedGraph, OrderGrading, PairSeq, RayKind};
use crate::linalg;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainState {
    pub label: String,
    /// Index into the chain's flat window, for graph chains.
    pub edge: Option<usize>,
    pub level: usize,
}

/// Transition data along one tail: a_n = p(e_n -> e_{n+1}) and
/// b_n = p(ebar_n -> ebar_{n-1}) for n >= 2 (b_1 is the total probability of
/// entering the core from ebar_1).
#[derive(Clone, Debug, PartialEq)]
pub struct TailChainInfo {
    pub ray: usize,
    pub up: PairSeq<f64>,
    pub down: PairSeq<f64>,
    /// Chain indices of e_n and ebar_n for n = 1..=depth.
    pub states: Vec<(usize, usize)>,
    /// Ratio of tail mass over one period, deep in the tail.
    pub period_ratio: f64,
    pub period: usize,
}

/// Quantities needed to evaluate cylinder measures directly from shadows.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainRaw {
    pub flat: Flat,
    pub u_plus: Vec<f64>,
    pub u_minus: Vec<f64>,
    pub weight: Vec<f64>,
    pub log_order: Vec<f64>,
    pub total_mass: f64,
    pub beyond_mass: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarkovChain {
    pub states: Vec<ChainState>,
    pub p: DMatrix<f64>,
    /// Probability of leaving the materialized window, per state.
    pub leak: Vec<f64>,
    /// Stationary flow entering each state from outside the window.
    pub inflow: Vec<f64>,
    pub pi: Vec<f64>,
    pub period: usize,
    pub classes: Vec<Vec<usize>>,
    pub class_of: Vec<usize>,
    pub tails: Vec<TailChainInfo>,
    pub depth: usize,
    pub raw: Option<ChainRaw>,
    succ: Vec<Vec<usize>>,
}

impl MarkovChain {
    /// A chain from an explicit finite kernel. `pi` is computed when absent.
    pub fn from_kernel(labels: Vec<String>, p: DMatrix<f64>, pi: Option<Vec<f64>>) -> Result<Self> {
        let n = labels.len();
        if p.nrows() != n || p.ncols() != n {
            return Err(Error::InvalidProbabilities("kernel shape does not match labels".into()));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidProbabilities("negative or non-finite entry".into()));
        }
        let pi = match pi {
            Some(v) => v,
            None => {
                let v = linalg::perron_left(&p, 1.0);
                v.iter().copied().collect()
            }
        };
        let states = labels.into_iter().map(|label| ChainState { label, edge: None, level: 0 }).collect();
        Self::assemble(states, p, vec![0.0; n], vec![0.0; n], pi, Vec::new(), 0, None, None)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        states: Vec<ChainState>,
        p: DMatrix<f64>,
        leak: Vec<f64>,
        inflow: Vec<f64>,
        pi: Vec<f64>,
        tails: Vec<TailChainInfo>,
        depth: usize,
        raw: Option<ChainRaw>,
        extended: Option<(Vec<Vec<usize>>, Vec<usize>)>,
    ) -> Result<Self> {
        let n = states.len();
        let succ: Vec<Vec<usize>> =
            (0..n).map(|i| (0..n).filter(|&j| p[(i, j)] > 0.0).collect()).collect();
        let mut mc = MarkovChain {
            states,
            p,
            leak,
            inflow,
            pi,
            period: 0,
            classes: Vec::new(),
            class_of: Vec::new(),
            tails,
            depth,
            raw,
            succ,
        };
        let cl = match &extended {
            Some((ext, members)) => classes_within(ext, members)?,
            None => periodic_classes(&mc)?,
        };
        mc.period = cl.k;
        mc.class_of = cl.class_of;
        mc.classes = cl.classes;
        Ok(mc)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s.label == label)
    }

    pub fn successors(&self, i: usize) -> &[usize] {
        &self.succ[i]
    }

    /// Set one kernel entry (diagnostic use: corrupting a chain on purpose).
    pub fn set_entry(&mut self, i: usize, j: usize, v: f64) {
        self.p[(i, j)] = v;
        self.succ[i] = (0..self.len()).filter(|&k| self.p[(i, k)] > 0.0).collect();
    }
}

fn flat_log_orders(g: &IndexedGraph, orders: &OrderGrading, flat: &Flat) -> Vec<f64> {
    // log N(a_n) along rays, then N(e) = N(head)/i(e)
    let mut vlog = vec![0.0; flat.vertex_labels.len()];
    for (a, slot) in vlog.iter_mut().enumerate().take(flat.n_core_vertices) {
        *slot = orders.vertex_f64(a).ln();
    }
    for list in &flat.ray_edges {
        for &(up, _) in list {
            let e = &flat.edges[up];
            let ieb = flat.edges[e.rev].index as f64;
            vlog[e.to] = vlog[e.from] + (e.index as f64).ln() - ieb.ln();
        }
    }
    let _ = g;
    flat.edges.iter().map(|e| vlog[e.to] - (e.index as f64).ln()).collect()
}

struct Window {
    flat: Flat,
    u_plus: Vec<f64>,
    u_minus: Vec<f64>,
    weight: Vec<f64>,
    log_order: Vec<f64>,
    mass: Vec<f64>,
}

fn window(g: &IndexedGraph, gd: &GibbsData, orders: &OrderGrading, depth: usize) -> Window {
    let flat = g.materialize(depth);
    let u_plus = gd.u_plus.on_flat(&flat);
    let u_minus = gd.u_minus.on_flat(&flat);
    let weight: Vec<f64> = gd.potential.flat_values(&flat).iter().map(|f| (f - gd.delta).exp()).collect();
    let log_order = flat_log_orders(g, orders, &flat);
    let mass = (0..flat.edges.len())
        .map(|e| {
            if flat.is_funnel_edge(e) {
                return 0.0;
            }
            let a = u_minus[flat.edges[e].rev];
            let b = u_plus[e];
            if a <= 0.0 || b <= 0.0 {
                return 0.0;
            }
            (a.ln() + b.ln() + weight[e].ln() - log_order[e]).exp()
        })
        .collect();
    Window { flat, u_plus, u_minus, weight, log_order, mass }
}

/// Unnormalized cylinder mass of the materialized window plus the closed-form
/// mass of every tail beyond `depth`.
fn tail_mass_beyond(w: &Window, g: &IndexedGraph, depth: usize, ray: usize, period: usize) -> (f64, f64) {
    let list = &w.flat.ray_edges[ray];
    let level_mass = |n: usize| w.mass[list[n - 1].0] + w.mass[list[n - 1].1];
    let block1: f64 = (depth + 1..=depth + period).map(level_mass).sum();
    let block2: f64 = (depth + period + 1..=depth + 2 * period).map(level_mass).sum();
    let _ = g;
    if block1 <= 0.0 {
        return (0.0, 0.0);
    }
    let r = block2 / block1;
    (block1 / (1.0 - r), r)
}

fn tail_periods(g: &IndexedGraph, gd: &GibbsData) -> Vec<(usize, usize)> {
    // (periodic start, period) of each tail's joint profile
    (0..g.n_tails)
        .map(|r| {
            let p = ray_profile(g, &gd.potential, r);
            (p.periodic_start(), p.period.len())
        })
        .collect()
}

/// Unnormalized total mass sum_e u-(ebar) u+(e) exp(F(e)-delta) / N(e),
/// including closed-form tail mass.
pub fn total_mass(g: &IndexedGraph, gd: &GibbsData, orders: &OrderGrading) -> Result<f64> {
    let periods = tail_periods(g, gd);
    let depth = periods.iter().map(|&(s, p)| s + p).max().unwrap_or(0);
    let maxp = periods.iter().map(|&(_, p)| p).max().unwrap_or(0);
    let w = window(g, gd, orders, depth + 2 * maxp);
    let mut total: f64 = (0..w.flat.edges.len()).filter(|&e| w.flat.edge_level(e) <= depth).map(|e| w.mass[e]).sum();
    for (r, &(_, p)) in periods.iter().enumerate() {
        let (beyond, ratio) = tail_mass_beyond(&w, g, depth, r, p);
        if ratio >= 1.0 {
            return Err(Error::NoPositiveSolution("tail carries infinite measure".into()));
        }
        total += beyond;
    }
    Ok(total)
}

/// Smallest window depth leaving relative tail mass below 1e-12 (capped).
fn auto_depth(g: &IndexedGraph, gd: &GibbsData, orders: &OrderGrading) -> Result<usize> {
    let periods = tail_periods(g, gd);
    if periods.is_empty() {
        return Ok(0);
    }
    let base = periods.iter().map(|&(s, p)| s + p).max().unwrap() + 1;
    let maxp = periods.iter().map(|&(_, p)| p).max().unwrap();
    let total = total_mass(g, gd, orders)?;
    let w = window(g, gd, orders, base + 2 * maxp);
    let mut depth = base;
    for (r, &(_, p)) in periods.iter().enumerate() {
        let (beyond, ratio) = tail_mass_beyond(&w, g, base, r, p);
        if beyond <= 0.0 {
            continue;
        }
        let mut d = base;
        let mut b = beyond;
        while b > 1e-12 * total && d < MAX_AUTO_DEPTH {
            b *= ratio;
            d += p;
        }
        depth = depth.max(d);
    }
    Ok(depth.max(8))
}

pub const MAX_AUTO_DEPTH: usize = 400;

/// Build the chain on a window of depth `depth` (automatic when `None`).
pub fn build_chain(g: &IndexedGraph, gd: &GibbsData, orders: &OrderGrading, depth: Option<usize>) -> Result<MarkovChain> {
    for e in 0..g.edges.len() {
        if g.is_funnel_entry(e) || core_lift_degree(g, g.edges[e].to) <= 1 {
            continue;
        }
        if !(gd.u_plus.core[e] > 0.0) {
            return Err(Error::ZeroShadow(g.edges[e].id.clone()));
        }
    }
    let periods = tail_periods(g, gd);
    let depth = match depth {
        Some(d) => d.max(periods.iter().map(|&(s, _)| s).max().unwrap_or(0)),
        None => auto_depth(g, gd, orders)?,
    };
    let maxp = periods.iter().map(|&(_, p)| p).max().unwrap_or(0);
    let w = window(g, gd, orders, depth + 2 * maxp + 1);
    let flat = &w.flat;
    let in_window = |e: usize| flat.edge_level(e) <= depth && w.mass[e] > 0.0;

    let mut beyond_total = 0.0;
    let mut ratios = vec![0.0; g.n_tails];
    for (r, &(_, p)) in periods.iter().enumerate() {
        let (b, ratio) = tail_mass_beyond(&w, g, depth, r, p);
        if ratio >= 1.0 {
            return Err(Error::NoPositiveSolution("tail carries infinite measure".into()));
        }
        beyond_total += b;
        ratios[r] = ratio;
    }
    let window_mass: f64 = (0..flat.edges.len()).filter(|&e| in_window(e)).map(|e| w.mass[e]).sum();
    let total = window_mass + beyond_total;

    let mut idx = vec![usize::MAX; flat.edges.len()];
    let mut states = Vec::new();
    for e in 0..flat.edges.len() {
        if in_window(e) {
            idx[e] = states.len();
            states.push(ChainState { label: flat.edges[e].id.clone(), edge: Some(e), level: flat.edge_level(e) });
        }
    }
    let n = states.len();
    let trans = |e: usize, f: usize| -> f64 {
        flat.multiplicity(e, f) as f64 * w.weight[f] * w.u_plus[f] / w.u_plus[e]
    };
    let mut p = DMatrix::zeros(n, n);
    let mut leak = vec![0.0; n];
    for (i, st) in states.iter().enumerate() {
        let e = st.edge.unwrap();
        for &f in &flat.out[flat.edges[e].to] {
            let v = trans(e, f);
            if v == 0.0 {
                continue;
            }
            if idx[f] != usize::MAX {
                p[(i, idx[f])] += v;
            } else if flat.edge_level(f) > depth {
                leak[i] += v;
            }
        }
    }
    let pi: Vec<f64> = states.iter().map(|s| w.mass[s.edge.unwrap()] / total).collect();
    let mut inflow = vec![0.0; n];
    for e in 0..flat.edges.len() {
        if flat.edge_level(e) != depth + 1 || w.mass[e] <= 0.0 {
            continue;
        }
        for &f in &flat.out[flat.edges[e].to] {
            if idx[f] != usize::MAX {
                inflow[idx[f]] += w.mass[e] / total * trans(e, f);
            }
        }
    }

    let mut tails = Vec::new();
    for (r, ray) in g.rays.iter().enumerate() {
        if !matches!(ray.kind, RayKind::Tail(_)) {
            continue;
        }
        let (start, per) = periods[r];
        let list = &flat.ray_edges[r];
        let a: Vec<f64> = (1..=start + per).map(|k| trans(list[k - 1].0, list[k].0)).collect();
        let b: Vec<f64> = (1..=start + per)
            .map(|k| {
                if k == 1 {
                    let (_, down) = list[0];
                    flat.out[flat.edges[down].to].iter().filter(|&&f| f != list[0].0).map(|&f| trans(down, f)).sum()
                } else {
                    trans(list[k - 1].1, list[k - 2].1)
                }
            })
            .collect();
        tails.push(TailChainInfo {
            ray: r,
            up: PairSeq::new(a[..start].to_vec(), a[start..].to_vec()),
            down: PairSeq::new(b[..start].to_vec(), b[start..].to_vec()),
            states: (1..=depth).map(|k| (idx[list[k - 1].0], idx[list[k - 1].1])).collect(),
            period_ratio: ratios[r],
            period: per,
        });
    }
    let raw = ChainRaw {
        flat: w.flat.clone(),
        u_plus: w.u_plus.clone(),
        u_minus: w.u_minus.clone(),
        weight: w.weight.clone(),
        log_order: w.log_order.clone(),
        total_mass: total,
        beyond_mass: beyond_total,
    };
    // connectivity and period are read off the whole materialized window
    let mut ext_idx = vec![usize::MAX; flat.edges.len()];
    let mut ext_n = 0;
    for e in 0..flat.edges.len() {
        if w.mass[e] > 0.0 {
            ext_idx[e] = ext_n;
            ext_n += 1;
        }
    }
    let mut ext_succ = vec![Vec::new(); ext_n];
    for e in 0..flat.edges.len() {
        if ext_idx[e] == usize::MAX {
            continue;
        }
        for &f in &flat.out[flat.edges[e].to] {
            if ext_idx[f] != usize::MAX && trans(e, f) > 0.0 {
                ext_succ[ext_idx[e]].push(ext_idx[f]);
            }
        }
    }
    let members: Vec<usize> = states.iter().map(|s| ext_idx[s.edge.unwrap()]).collect();
    MarkovChain::assemble(states, p, leak, inflow, pi, tails, depth, Some(raw), Some((ext_succ, members)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarkovReport {
    pub row_residual: f64,
    pub stationarity_residual: f64,
    pub worst_row: Option<String>,
    pub worst_column: Option<String>,
    pub cylinder_residual: Option<f64>,
    pub pi_sum_window: f64,
}

/// lambda([w_0 .. w_{n-1}]) from shadows and orders; `None` for synthetic chains.
pub fn cylinder_measure(mc: &MarkovChain, word: &[usize]) -> Option<f64> {
    let raw = mc.raw.as_ref()?;
    let flat = &raw.flat;
    let edges: Vec<usize> = word.iter().map(|&s| mc.states[s].edge.unwrap()).collect();
    let first = *edges.first()?;
    let last = *edges.last()?;
    let mut lg = raw.u_minus[flat.edges[first].rev].ln() - raw.log_order[first] + raw.u_plus[last].ln();
    for &e in &edges {
        lg += raw.weight[e].ln();
    }
    for w in edges.windows(2) {
        if flat.edges[w[0]].to != flat.edges[w[1]].from {
            return Some(0.0);
        }
        lg += (flat.multiplicity(w[0], w[1]) as f64).ln();
    }
    Some(lg.exp() / raw.total_mass)
}

pub fn check_markov_property(mc: &MarkovChain) -> MarkovReport {
    let n = mc.len();
    let mut row_res = 0.0f64;
    let mut worst_row = None;
    for i in 0..n {
        let s: f64 = mc.p.row(i).sum() + mc.leak[i];
        let r = (s - 1.0).abs();
        if r > row_res {
            row_res = r;
            worst_row = Some(mc.states[i].label.clone());
        }
    }
    let mut st_res = 0.0f64;
    let mut worst_col = None;
    for j in 0..n {
        let s: f64 = (0..n).map(|i| mc.pi[i] * mc.p[(i, j)]).sum::<f64>() + mc.inflow[j];
        let r = (s - mc.pi[j]).abs();
        if r > st_res {
            st_res = r;
            worst_col = Some(mc.states[j].label.clone());
        }
    }
    let cylinder_residual = mc.raw.as_ref().map(|_| {
        let mut worst = 0.0f64;
        for i in 0..n {
            for &j in &mc.succ[i] {
                let direct = cylinder_measure(mc, &[i, j]).unwrap();
                worst = worst.max((direct - mc.pi[i] * mc.p[(i, j)]).abs());
            }
        }
        worst
    });
    MarkovReport {
        row_residual: row_res,
        stationarity_residual: st_res,
        worst_row,
        worst_column: worst_col,
        cylinder_residual,
        pi_sum_window: mc.pi.iter().sum(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Classes {
    pub k: usize,
    pub classes: Vec<Vec<usize>>,
    pub class_of: Vec<usize>,
}

/// Period and cyclic classes, relative to state 0.
pub fn periodic_classes(mc: &MarkovChain) -> Result<Classes> {
    let members: Vec<usize> = (0..mc.len()).collect();
    classes_within(&mc.succ, &members)
}

/// Cyclic classes of the window states `members` inside a (possibly larger)
/// transition graph. States near the window edge may only be connected
/// through excursions beyond it, so windowed chains pass an extended graph.
pub(crate) fn classes_within(succ: &[Vec<usize>], members: &[usize]) -> Result<Classes> {
    let Some(&root) = members.first() else { return Err(Error::Reducible) };
    let comp = scc(succ);
    let c = comp[root];
    if members.iter().any(|&m| comp[m] != c) {
        return Err(Error::Reducible);
    }
    let nodes: Vec<usize> = (0..succ.len()).filter(|&v| comp[v] == c).collect();
    let mut local = vec![usize::MAX; succ.len()];
    for (i, &v) in nodes.iter().enumerate() {
        local[v] = i;
    }
    let sub: Vec<Vec<usize>> = nodes
        .iter()
        .map(|&v| succ[v].iter().filter(|&&w| comp[w] == c).map(|&w| local[w]).collect())
        .collect();
    let k = period_of(&sub).ok_or(Error::Reducible)? as usize;
    let mut level = vec![usize::MAX; nodes.len()];
    level[local[root]] = 0;
    let mut queue = std::collections::VecDeque::from([local[root]]);
    while let Some(v) = queue.pop_front() {
        for &w in &sub[v] {
            if level[w] == usize::MAX {
                level[w] = level[v] + 1;
                queue.push_back(w);
            }
        }
    }
    let class_of: Vec<usize> = members.iter().map(|&m| level[local[m]] % k).collect();
    let mut classes = vec![Vec::new(); k];
    for (s, &cl) in class_of.iter().enumerate() {
        classes[cl].push(s);
    }
    Ok(Classes { k, classes, class_of })
}

/// The k-step kernel restricted to cyclic class `class`.
pub fn k_step_kernel(mc: &MarkovChain, class: usize) -> DMatrix<f64> {
    let mut pk = DMatrix::identity(mc.len(), mc.len());
    for _ in 0..mc.period {
        pk = &pk * &mc.p;
    }
    let members = &mc.classes[class];
    DMatrix::from_fn(members.len(), members.len(), |a, b| pk[(members[a], members[b])])
}

/// Modulus of the second eigenvalue of the k-step kernel on a class.
pub fn second_eigen_modulus(mc: &MarkovChain, class: usize) -> f64 {
    let m = linalg::eigen_moduli(&k_step_kernel(mc, class));
    m.get(1).copied().unwrap_or(0.0)
}

/// Taboo probabilities p^{(n),B}_{ij} for all i, j and n = 0..=n_max.
#[derive(Clone, Debug, PartialEq)]
pub struct TabooTable {
    pub b: BTreeSet<usize>,
    pub n_max: usize,
    pub p: Vec<DMatrix<f64>>,
}

impl TabooTable {
    pub fn get(&self, n: usize, i: usize, j: usize) -> f64 {
        self.p[n][(i, j)]
    }
}

pub fn taboo_table(mc: &MarkovChain, b: &BTreeSet<usize>, n_max: usize) -> TabooTable {
    let n = mc.len();
    let mut out = vec![DMatrix::identity(n, n)];
    if n_max >= 1 {
        out.push(mc.p.clone());
    }
    for _ in 2..=n_max {
        let prev = out.last().unwrap();
        let mut next = DMatrix::zeros(n, n);
        for i in 0..n {
            for &k in &mc.succ[i] {
                if b.contains(&k) {
                    continue;
                }
                let pik = mc.p[(i, k)];
                for j in 0..n {
                    next[(i, j)] += pik * prev[(k, j)];
                }
            }
        }
        out.push(next);
    }
    TabooTable { b: b.clone(), n_max, p: out }
}

pub fn taboo_probability(mc: &MarkovChain, b: &BTreeSet<usize>, i: usize, j: usize, n_max: usize) -> Vec<f64> {
    let t = taboo_table(mc, b, n_max);
    (0..=n_max).map(|n| t.get(n, i, j)).collect()
}

/// f^{(n),B}_{ij} for all i (indexed [n][i]), n = 0..=n_max.
pub fn first_passage_column(mc: &MarkovChain, b: &BTreeSet<usize>, j: usize, n_max: usize) -> Vec<Vec<f64>> {
    let n = mc.len();
    let mut out = vec![vec![0.0; n]];
    if n_max == 0 {
        return out;
    }
    out.push((0..n).map(|i| mc.p[(i, j)]).collect());
    for _ in 2..=n_max {
        let prev = out.last().unwrap();
        let next: Vec<f64> = (0..n)
            .map(|i| {
                mc.succ[i]
                    .iter()
                    .filter(|&&k| k != j && !b.contains(&k))
                    .map(|&k| mc.p[(i, k)] * prev[k])
                    .sum()
            })
            .collect();
        out.push(next);
    }
    out
}

pub fn first_passage(mc: &MarkovChain, b: &BTreeSet<usize>, i: usize, j: usize, n_max: usize) -> Vec<f64> {
    first_passage_column(mc, b, j, n_max).iter().map(|col| col[i]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvolutionReport {
    /// p^{(n),B}_{ii} = sum_r f^{(r),B}_{ii} p^{(n-r),B}_{ii}, i outside B.
    pub literal_diagonal: f64,
    /// The same pattern read literally for i != j (not an identity in general).
    pub literal_off_diagonal: f64,
    /// p^{(n),B}_{ij} = sum_r f^{(r),B}_{ij} p^{(n-r),B}_{jj}, j outside B.
    pub first_passage_form: f64,
    /// p^{(n),B}_{ij} = p^{(n),B+i}_{ij} + sum_{r<n} f^{(r),B}_{ii} p^{(n-r),B}_{ij}, i outside B.
    pub first_return_form: f64,
    pub checked: usize,
}

/// Residuals of the convolution relations for pairs drawn from `states`.
pub fn convolution_check(mc: &MarkovChain, b: &BTreeSet<usize>, states: &[usize], n_max: usize) -> ConvolutionReport {
    let tab = taboo_table(mc, b, n_max);
    let mut rep = ConvolutionReport {
        literal_diagonal: 0.0,
        literal_off_diagonal: 0.0,
        first_passage_form: 0.0,
        first_return_form: 0.0,
        checked: 0,
    };
    let fcols: Vec<Vec<Vec<f64>>> = states.iter().map(|&j| first_passage_column(mc, b, j, n_max)).collect();
    for (ii, &i) in states.iter().enumerate() {
        let fi = &fcols[ii];
        let mut bi = b.clone();
        bi.insert(i);
        let tab_i = taboo_table(mc, &bi, n_max);
        for (jj, &j) in states.iter().enumerate() {
            let fj = &fcols[jj];
            for n in 1..=n_max {
                rep.checked += 1;
                let lhs = tab.get(n, i, j);
                if !b.contains(&i) {
                    let lit: f64 = (1..=n).map(|r| fi[r][i] * tab.get(n - r, i, j)).sum();
                    let d = (lhs - lit).abs();
                    if i == j {
                        rep.literal_diagonal = rep.literal_diagonal.max(d);
                    } else {
                        rep.literal_off_diagonal = rep.literal_off_diagonal.max(d);
                    }
                    let fr: f64 = tab_i.get(n, i, j) + (1..n).map(|r| fi[r][i] * tab.get(n - r, i, j)).sum::<f64>();
                    rep.first_return_form = rep.first_return_form.max((lhs - fr).abs());
                }
                if !b.contains(&j) {
                    let fp: f64 = (1..=n).map(|r| fj[r][i] * tab.get(n - r, j, j)).sum();
                    rep.first_passage_form = rep.first_passage_form.max((lhs - fp).abs());
                }
            }
        }
    }
    rep
}

/// Largest violation of p^{(n),B'} <= p^{(n),B} for B contained in B'.
pub fn taboo_monotonicity_violation(mc: &MarkovChain, b: &BTreeSet<usize>, b_big: &BTreeSet<usize>, n_max: usize) -> f64 {
    let small = taboo_table(mc, b, n_max);
    let big = taboo_table(mc, b_big, n_max);
    let mut worst = 0.0f64;
    for n in 0..=n_max {
        for (x, y) in big.p[n].iter().zip(small.p[n].iter()) {
            worst = worst.max(x - y);
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReturnReport {
    pub state: String,
    pub mean_partial: f64,
    pub return_mass: f64,
    pub tail_bound: Option<f64>,
    pub pi: f64,
    pub defective: bool,
}

/// Partial mean return time sum_{n<=n_max} n f_jj^{(n)}. With a drift
/// certificate whose B is {j}, a geometric bound on the omitted tail is given.
pub fn mean_return_time(
    mc: &MarkovChain,
    j: usize,
    n_max: usize,
    cert: Option<&crate::wsg::DriftCertificate>,
) -> ReturnReport {
    let f = first_passage(mc, &BTreeSet::new(), j, j, n_max);
    let mean_partial: f64 = f.iter().enumerate().map(|(n, v)| n as f64 * v).sum();
    let return_mass: f64 = f.iter().sum();
    let tail_bound = cert.and_then(|c| {
        if c.b.len() != 1 || !c.b.contains(&j) || c.rho >= 1.0 {
            return None;
        }
        // f_jj^{(n)} <= sum_k p_jk M t_k rho^{n-1}, M = 1/t_j
        let m = 1.0 / c.t[j];
        let cst: f64 = mc.succ[j].iter().filter(|&&k| k != j).map(|&k| mc.p[(j, k)] * m * c.t[k]).sum::<f64>()
            + mc.leak[j] * m * c.t_leak[j];
        let r = c.rho;
        let big_n = n_max as f64;
        // sum_{n>N} n r^{n-1} = r^N (N + 1 - N r) / (1-r)^2
        Some(cst * r.powf(big_n) * (big_n + 1.0 - big_n * r) / ((1.0 - r) * (1.0 - r)))
    });
    ReturnReport {
        state: mc.states[j].label.clone(),
        mean_partial,
        return_mass,
        tail_bound,
        pi: mc.pi[j],
        defective: return_mass < 1.0 - 1e-9 && tail_bound.is_none_or(|t| t < 1e-9),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MixingFit {
    pub theta: f64,
    pub c: f64,
    pub r2: f64,
    pub n_lo: usize,
    pub n_hi: usize,
    /// (n, |p^{(kn)}_{ij} - k pi_j|) for n = 1..=n_max.
    pub differences: Vec<(usize, f64)>,
}

pub const MIX_HEAD: usize = 5;
pub const MIX_FLOOR: f64 = 1e-11;

/// |P^{kn}_{ij} - k pi_j| for n = 1..=n_max.
pub fn mixing_differences(mc: &MarkovChain, i: usize, j: usize, n_max: usize) -> Result<Vec<(usize, f64)>> {
    if mc.class_of[i] != mc.class_of[j] {
        return Err(Error::InsufficientData(format!(
            "states `{}` and `{}` lie in different cyclic classes",
            mc.states[i].label, mc.states[j].label
        )));
    }
    let k = mc.period;
    let target = k as f64 * mc.pi[j];
    let mut v = vec![0.0; mc.len()];
    v[i] = 1.0;
    let mut out = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        for _ in 0..k {
            let mut next = vec![0.0; mc.len()];
            for (a, &x) in v.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for &b in &mc.succ[a] {
                    next[b] += x * mc.p[(a, b)];
                }
            }
            v = next;
        }
        out.push((n, (v[j] - target).abs()));
    }
    Ok(out)
}

/// Fit log sup_{m>=n}|p^{(km)}_{ij} - k pi_j| ~ log C + n log theta, skipping
/// the first steps and stopping at the numerical floor.
pub fn mixing_rate_estimate(mc: &MarkovChain, i: usize, j: usize, n_max: usize) -> Result<MixingFit> {
    let diffs = mixing_differences(mc, i, j, n_max)?;
    if diffs.iter().all(|&(_, d)| d <= MIX_FLOOR) {
        return Err(Error::AlreadyExact);
    }
    // fit the upper envelope sup_{m >= n} d_m so oscillating decay is not penalized
    let end = diffs.iter().position(|&(n, d)| n >= MIX_HEAD && d <= MIX_FLOOR).unwrap_or(diffs.len());
    let mut env = vec![0.0f64; end];
    let mut run = 0.0f64;
    for k in (0..end).rev() {
        run = run.max(diffs[k].1);
        env[k] = run;
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, &(n, _)) in diffs[..end].iter().enumerate() {
        if n >= MIX_HEAD {
            xs.push(n as f64);
            ys.push(env[k].ln());
        }
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientData(format!("{} usable points", xs.len())));
    }
    let (a, b, r2) = linalg::linear_fit(&xs, &ys);
    Ok(MixingFit {
        theta: b.exp(),
        c: a.exp(),
        r2,
        n_lo: xs[0] as usize,
        n_hi: *xs.last().unwrap() as usize,
        differences: diffs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovRow {
    pub n: usize,
    pub cov: f64,
    pub envelope: Option<f64>,
}

fn word_measure(mc: &MarkovChain, w: &[usize]) -> f64 {
    let mut m = mc.pi[w[0]];
    for x in w.windows(2) {
        m *= mc.p[(x[0], x[1])];
    }
    m
}

fn check_word(mc: &MarkovChain, w: &[usize]) -> Result<()> {
    for x in w.windows(2) {
        if mc.p[(x[0], x[1])] <= 0.0 {
            return Err(Error::InvalidWord(format!(
                "{} -> {} has zero probability",
                mc.states[x[0]].label, mc.states[x[1]].label
            )));
        }
    }
    Ok(())
}

/// Cov(1_[a] o sigma^n, 1_[b]) for n = len(a)..=n_max; the optional (C, theta)
/// gives the envelope lambda[a] lambda[b] C theta^{n-len(a)+1} / pi_{b_0}.
pub fn correlation_decay(
    mc: &MarkovChain,
    a: &[usize],
    b: &[usize],
    n_max: usize,
    fit: Option<(f64, f64)>,
) -> Result<Vec<CovRow>> {
    check_word(mc, a)?;
    check_word(mc, b)?;
    if a.is_empty() || b.is_empty() {
        return Ok((0..=n_max).map(|n| CovRow { n, cov: 0.0, envelope: Some(0.0) }).collect());
    }
    let (la, lb) = (word_measure(mc, a), word_measure(mc, b));
    let k = a.len();
    let last = a[k - 1];
    let b0 = b[0];
    let mut v = vec![0.0; mc.len()];
    v[last] = 1.0;
    let mut rows = Vec::new();
    for n in k..=n_max {
        let mut next = vec![0.0; mc.len()];
        for (x, &val) in v.iter().enumerate() {
            if val == 0.0 {
                continue;
            }
            for &y in &mc.succ[x] {
                next[y] += val * mc.p[(x, y)];
            }
        }
        v = next;
        let steps = n - k + 1;
        let cov = la * (v[b0] - mc.pi[b0]) * lb / mc.pi[b0];
        let envelope = fit.map(|(c, th)| la * lb * c * th.powi(steps as i32) / mc.pi[b0]);
        rows.push(CovRow { n, cov, envelope });
    }
    Ok(rows)
}

/// A real sequence indexed by n in -N..=N.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeqSpec {
    Constant { value: f64 },
    /// 1 - 1/(1+|n|).
    Harmonic,
    /// Uniform weights (normalized).
    Uniform,
    /// Weights ratio^{|n|} (normalized).
    Geometric { ratio: f64 },
    /// Values for n = -N..=N in order.
    Explicit { values: Vec<f64> },
}

impl SeqSpec {
    pub fn values(&self, big_n: usize) -> Result<Vec<f64>> {
        let len = 2 * big_n + 1;
        let ns = (0..len).map(|k| k as i64 - big_n as i64);
        Ok(match self {
            SeqSpec::Constant { value } => vec![*value; len],
            SeqSpec::Harmonic => ns.map(|n| 1.0 - 1.0 / (1.0 + n.unsigned_abs() as f64)).collect(),
            SeqSpec::Uniform => vec![1.0; len],
            SeqSpec::Geometric { ratio } => ns.map(|n| ratio.powi(n.unsigned_abs() as i32)).collect(),
            SeqSpec::Explicit { values } => {
                if values.len() != len {
                    return Err(Error::InvalidProbabilities(format!(
                        "explicit sequence has {} values, expected {len}",
                        values.len()
                    )));
                }
                values.clone()
            }
        })
    }
}

/// The star with self-loops: p_{inf,n} = beta_n, p_{nn} = gamma_n,
/// p_{n,inf} = 1 - gamma_n, on states inf, -N..=N (betas renormalized).
pub fn counterexample_chain(gammas: &SeqSpec, betas: &SeqSpec, big_n: usize) -> Result<MarkovChain> {
    let g = gammas.values(big_n)?;
    let mut b = betas.values(big_n)?;
    if g.iter().any(|&x| !(0.0..1.0).contains(&x)) {
        return Err(Error::InvalidProbabilities("gamma_n must lie in [0, 1)".into()));
    }
    if b.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidProbabilities("beta_n must be nonnegative".into()));
    }
    let s: f64 = b.iter().sum();
    if s <= 0.0 {
        return Err(Error::InvalidProbabilities("beta sums to zero".into()));
    }
    for x in b.iter_mut() {
        *x /= s;
    }
    let len = g.len();
    let mut labels = vec!["inf".to_string()];
    labels.extend((0..len).map(|k| format!("n{}", k as i64 - big_n as i64)));
    let mut p = DMatrix::zeros(len + 1, len + 1);
    for k in 0..len {
        p[(0, k + 1)] = b[k];
        p[(k + 1, k + 1)] = g[k];
        p[(k + 1, 0)] = 1.0 - g[k];
    }
    // pi_n = pi_inf beta_n / (1 - gamma_n)
    let mut pi = vec![1.0];
    pi.extend((0..len).map(|k| b[k] / (1.0 - g[k])));
    let z: f64 = pi.iter().sum();
    for x in pi.iter_mut() {
        *x /= z;
    }
    MarkovChain::from_kernel(labels, p, Some(pi))
}

/// Mean return time to inf of the star chain: sum_n beta_n (1/(1-gamma_n) + 1).
pub fn counterexample_mean_return(gammas: &SeqSpec, betas: &SeqSpec, big_n: usize) -> Result<f64> {
    let g = gammas.values(big_n)?;
    let b = betas.values(big_n)?;
    let s: f64 = b.iter().sum();
    Ok(g.iter().zip(&b).map(|(gn, bn)| bn / s * (1.0 / (1.0 - gn) + 1.0)).sum())
}

/// Shadow on a chain's flat window (convenience for reports).
pub fn shadow_on_window(mc: &MarkovChain, u: &Shadow) -> Option<Vec<f64>> {
    let raw = mc.raw.as_ref()?;
    let full = u.on_flat(&raw.flat);
    Some(mc.states.iter().map(|s| full[s.edge.unwrap()]).collect())
}

pub fn state_kind(mc: &MarkovChain, s: usize) -> Option<EdgeKind> {
    let raw = mc.raw.as_ref()?;
    Some(raw.flat.edges[mc.states[s].edge?].kind)
}
