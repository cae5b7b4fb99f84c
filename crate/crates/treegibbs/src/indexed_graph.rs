//! Quotient edge-indexed graphs: a finite core, eventually periodic rays
//! (cusp-like tails) and funnels, together with the lift multiplicities that
//! describe the universal covering tree.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default ceiling on the number of vertices materialized by [`build_cover_ball`].
pub const DEFAULT_BALL_LIMIT: usize = 10_000_000;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub id: String,
    pub rev: String,
    pub from: String,
    pub to: String,
    pub index: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct TailSpec {
    pub attach: String,
    #[serde(default)]
    pub prefix: Vec<[u64; 2]>,
    pub period: Vec<[u64; 2]>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct FunnelSpec {
    pub entry_edge: String,
    /// Number of outward children per funnel level; the last entry repeats.
    pub branching: Vec<u64>,
}

/// A positive rational written either as a JSON integer or as a string `"p/q"`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(untagged)]
pub enum RationalValue {
    Int(u64),
    Text(String),
}

impl RationalValue {
    pub fn to_rational(&self) -> std::result::Result<BigRational, String> {
        match self {
            RationalValue::Int(v) => Ok(BigRational::from_integer(BigInt::from(*v))),
            RationalValue::Text(s) => parse_rational(s),
        }
    }
}

pub fn parse_rational(s: &str) -> std::result::Result<BigRational, String> {
    let s = s.trim();
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s, "1"),
    };
    let n: BigInt = num.parse().map_err(|_| format!("`{s}` is not a rational"))?;
    let d: BigInt = den.parse().map_err(|_| format!("`{s}` is not a rational"))?;
    if d.is_zero() {
        return Err(format!("`{s}` has zero denominator"));
    }
    Ok(BigRational::new(n, d))
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct OrderSpec {
    pub base_vertex: String,
    pub base_value: RationalValue,
}

/// Raw graph description, exactly as read from a config file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub vertices: Vec<String>,
    pub edges: Vec<EdgeSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tails: Vec<TailSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub funnels: Vec<FunnelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orders: Option<OrderSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub code: &'static str,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Legal but noteworthy features (lift-degree 1 vertices).
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, code: &'static str, message: String) {
        self.violations.push(Violation { code, message });
    }

    pub fn has(&self, code: &str) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }
}

/// Check the axioms of an edge-indexed graph. Never panics.
pub fn validate_graph(spec: &GraphSpec) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let mut vset = BTreeSet::new();
    for v in &spec.vertices {
        if !vset.insert(v.as_str()) {
            rep.push("duplicate-vertex", format!("vertex `{v}` listed twice"));
        }
    }
    let mut eidx: BTreeMap<&str, usize> = BTreeMap::new();
    for (k, e) in spec.edges.iter().enumerate() {
        if eidx.insert(e.id.as_str(), k).is_some() {
            rep.push("duplicate-edge", format!("edge `{}` listed twice", e.id));
        }
    }
    for (k, e) in spec.edges.iter().enumerate() {
        if e.index == 0 {
            rep.push("index", format!("edges[{k}].index: index of `{}` must be >= 1", e.id));
        }
        for (name, v) in [("from", &e.from), ("to", &e.to)] {
            if !vset.contains(v.as_str()) {
                rep.push("unknown-vertex", format!("edges[{k}].{name}: unknown vertex `{v}`"));
            }
        }
        match eidx.get(e.rev.as_str()) {
            None => rep.push("unknown-edge", format!("edges[{k}].rev: unknown edge `{}`", e.rev)),
            Some(&r) => {
                let re = &spec.edges[r];
                if r == k {
                    rep.push("involution-fixpoint", format!("involution has fixpoint at `{}`", e.id));
                } else if re.rev != e.id {
                    rep.push("involution", format!("rev(rev(`{}`)) != `{}`", e.id, e.id));
                } else if re.from != e.to || re.to != e.from {
                    rep.push("endpoints", format!("endpoints of `{}` and its reverse disagree", e.id));
                }
            }
        }
    }
    if spec.vertices.is_empty() {
        rep.push("empty", "graph has no vertices".into());
        return rep;
    }

    // connectivity of the core
    let vpos: BTreeMap<&str, usize> =
        spec.vertices.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
    let n = spec.vertices.len();
    let mut adj = vec![Vec::new(); n];
    for e in &spec.edges {
        if let (Some(&a), Some(&b)) = (vpos.get(e.from.as_str()), vpos.get(e.to.as_str())) {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(a) = queue.pop_front() {
        for &b in &adj[a] {
            if !seen[b] {
                seen[b] = true;
                queue.push_back(b);
            }
        }
    }
    if seen.iter().any(|s| !s) {
        rep.push("disconnected", "core not connected".into());
    }

    // tails and funnels
    for (k, t) in spec.tails.iter().enumerate() {
        if !vset.contains(t.attach.as_str()) {
            rep.push("unknown-vertex", format!("tails[{k}].attach: unknown vertex `{}`", t.attach));
        }
        if t.period.is_empty() {
            rep.push("tail-period", format!("tails[{k}].period: period must be nonempty"));
        }
        for (name, list) in [("prefix", &t.prefix), ("period", &t.period)] {
            for (j, p) in list.iter().enumerate() {
                if p[0] == 0 || p[1] == 0 {
                    rep.push("index", format!("tails[{k}].{name}[{j}]: indices must be >= 1"));
                }
            }
        }
    }
    let mut entry_heads = BTreeSet::new();
    for (k, f) in spec.funnels.iter().enumerate() {
        match eidx.get(f.entry_edge.as_str()) {
            None => rep.push(
                "unknown-edge",
                format!("funnels[{k}].entry_edge: unknown edge `{}`", f.entry_edge),
            ),
            Some(&e) => {
                let edge = &spec.edges[e];
                if edge.index != 1 {
                    rep.push(
                        "funnel-entry",
                        format!("funnels[{k}].entry_edge: index of `{}` must be 1", edge.id),
                    );
                }
                let others = spec.edges.iter().filter(|x| x.from == edge.to).count();
                if others != 1 {
                    rep.push(
                        "funnel-entry",
                        format!("funnels[{k}].entry_edge: head `{}` must meet the core only through the entry edge", edge.to),
                    );
                }
                if !entry_heads.insert(edge.to.clone()) {
                    rep.push("funnel-entry", format!("funnels[{k}]: two funnels share a head"));
                }
                for t in &spec.tails {
                    if t.attach == edge.to {
                        rep.push("funnel-entry", format!("funnels[{k}]: a tail attaches at the funnel head"));
                    }
                }
            }
        }
        if f.branching.is_empty() || f.branching.contains(&0) {
            rep.push("funnel-branching", format!("funnels[{k}].branching: entries must be >= 1 and nonempty"));
        }
    }
    if let Some(o) = &spec.orders {
        if !vset.contains(o.base_vertex.as_str()) {
            rep.push("unknown-vertex", format!("orders.base_vertex: unknown vertex `{}`", o.base_vertex));
        }
        match o.base_value.to_rational() {
            Ok(r) if r.is_positive() => {}
            Ok(_) => rep.push("orders", "orders.base_value: must be positive".into()),
            Err(m) => rep.push("orders", format!("orders.base_value: {m}")),
        }
    }

    // lift degrees (only meaningful once ids resolve)
    if rep.violations.is_empty() {
        let mut deg: BTreeMap<&str, u64> = spec.vertices.iter().map(|v| (v.as_str(), 0)).collect();
        for e in &spec.edges {
            let rev_index = spec.edges[eidx[e.rev.as_str()]].index;
            *deg.get_mut(e.from.as_str()).unwrap() += rev_index;
        }
        for t in &spec.tails {
            let first = t.prefix.first().or(t.period.first()).unwrap();
            *deg.get_mut(t.attach.as_str()).unwrap() += first[1];
        }
        for f in &spec.funnels {
            let head = &spec.edges[eidx[f.entry_edge.as_str()]].to;
            *deg.get_mut(head.as_str()).unwrap() += f.branching[0];
        }
        for (v, d) in deg {
            if d == 0 {
                rep.push("lift-degree", format!("vertex `{v}` has lift-degree 0"));
            } else if d == 1 {
                rep.warnings.push(format!("vertex `{v}` has lift-degree 1; geodesics cannot pass it"));
            }
        }
        for (k, t) in spec.tails.iter().enumerate() {
            // ray vertex a_n has degree i(e_n) + i(ebar_{n+1})
            let seq = PairSeq::new(
                t.prefix.iter().map(|p| (p[0], p[1])).collect(),
                t.period.iter().map(|p| (p[0], p[1])).collect(),
            );
            for n in 1..=seq.prefix.len() + seq.period.len() {
                if seq.at(n).0 + seq.at(n + 1).1 < 2 {
                    rep.push("tail-degree", format!("tails[{k}]: ray vertex {n} has lift-degree < 2"));
                }
            }
        }
    }
    rep
}

/// Eventually periodic sequence indexed from 1.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSeq<T> {
    pub prefix: Vec<T>,
    pub period: Vec<T>,
}

impl<T: Clone> PairSeq<T> {
    pub fn new(prefix: Vec<T>, period: Vec<T>) -> Self {
        assert!(!period.is_empty(), "period must be nonempty");
        PairSeq { prefix, period }
    }

    /// Element at level `n >= 1`.
    pub fn at(&self, n: usize) -> T {
        assert!(n >= 1);
        if n <= self.prefix.len() {
            self.prefix[n - 1].clone()
        } else {
            self.period[(n - 1 - self.prefix.len()) % self.period.len()].clone()
        }
    }

    /// First level of the periodic regime.
    pub fn periodic_start(&self) -> usize {
        self.prefix.len() + 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub id: String,
    pub rev: usize,
    pub from: usize,
    pub to: usize,
    pub index: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RayKind {
    Tail(usize),
    Funnel(usize),
}

/// An infinite ray hanging off the core: vertices a_0 (in the core), a_1, ...,
/// edges e_n from a_{n-1} to a_n with index pairs (i(e_n), i(ebar_n)).
#[derive(Clone, Debug, PartialEq)]
pub struct Ray {
    pub kind: RayKind,
    pub attach: usize,
    pub pairs: PairSeq<(u64, u64)>,
}

impl Ray {
    pub fn is_funnel(&self) -> bool {
        matches!(self.kind, RayKind::Funnel(_))
    }
}

/// A validated edge-indexed graph with canonical (sorted) id ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexedGraph {
    pub vertices: Vec<String>,
    pub edges: Vec<Edge>,
    /// Core out-edges per vertex, in edge order.
    pub out: Vec<Vec<usize>>,
    /// Tails first, then funnels.
    pub rays: Vec<Ray>,
    pub n_tails: usize,
    /// Core edges flagged as funnel entries.
    pub funnel_entries: Vec<usize>,
    pub order_base: usize,
    pub order_value: BigRational,
    spec: GraphSpec,
}

impl IndexedGraph {
    pub fn from_spec(spec: GraphSpec) -> Result<Self> {
        let report = validate_graph(&spec);
        if !report.is_valid() {
            let msgs: Vec<_> = report.violations.iter().map(|v| v.message.clone()).collect();
            return Err(Error::InvalidGraph(msgs.join("; ")));
        }
        let mut vertices = spec.vertices.clone();
        vertices.sort();
        let vpos: BTreeMap<&str, usize> =
            vertices.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
        let mut sorted: Vec<&EdgeSpec> = spec.edges.iter().collect();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        let epos: BTreeMap<&str, usize> =
            sorted.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
        let edges: Vec<Edge> = sorted
            .iter()
            .map(|e| Edge {
                id: e.id.clone(),
                rev: epos[e.rev.as_str()],
                from: vpos[e.from.as_str()],
                to: vpos[e.to.as_str()],
                index: e.index,
            })
            .collect();
        let mut out = vec![Vec::new(); vertices.len()];
        for (k, e) in edges.iter().enumerate() {
            out[e.from].push(k);
        }
        let mut rays = Vec::new();
        for (k, t) in spec.tails.iter().enumerate() {
            rays.push(Ray {
                kind: RayKind::Tail(k),
                attach: vpos[t.attach.as_str()],
                pairs: PairSeq::new(
                    t.prefix.iter().map(|p| (p[0], p[1])).collect(),
                    t.period.iter().map(|p| (p[0], p[1])).collect(),
                ),
            });
        }
        let mut funnel_entries = Vec::new();
        for (k, f) in spec.funnels.iter().enumerate() {
            let entry = epos[f.entry_edge.as_str()];
            funnel_entries.push(entry);
            let b = &f.branching;
            rays.push(Ray {
                kind: RayKind::Funnel(k),
                attach: edges[entry].to,
                pairs: PairSeq::new(
                    b[..b.len() - 1].iter().map(|&x| (1, x)).collect(),
                    vec![(1, *b.last().unwrap())],
                ),
            });
        }
        let (order_base, order_value) = match &spec.orders {
            Some(o) => (vpos[o.base_vertex.as_str()], o.base_value.to_rational().unwrap()),
            None => (0, BigRational::one()),
        };
        Ok(IndexedGraph {
            vertices,
            edges,
            out,
            n_tails: spec.tails.len(),
            rays,
            funnel_entries,
            order_base,
            order_value,
            spec,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let spec: GraphSpec = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))?;
        Self::from_spec(spec)
    }

    pub fn spec(&self) -> &GraphSpec {
        &self.spec
    }

    pub fn vertex(&self, id: &str) -> Result<usize> {
        self.vertices
            .binary_search_by(|v| v.as_str().cmp(id))
            .map_err(|_| Error::UnknownVertex(id.to_string()))
    }

    pub fn edge(&self, id: &str) -> Result<usize> {
        self.edges
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .map_err(|_| Error::UnknownEdge(id.to_string()))
    }

    pub fn has_tails(&self) -> bool {
        self.n_tails > 0
    }

    pub fn is_funnel_entry(&self, e: usize) -> bool {
        self.funnel_entries.contains(&e)
    }

    pub fn tails(&self) -> impl Iterator<Item = &Ray> {
        self.rays.iter().filter(|r| !r.is_funnel())
    }

    /// The finite core plus every ray expanded to `depth` levels.
    pub fn materialize(&self, depth: usize) -> Flat {
        Flat::build(self, depth)
    }
}

/// Combinatorial lift multiplicity m(e,f) for indices of e, f, and whether f reverses e.
#[inline]
pub fn multiplicity_from(i_e: u64, i_fbar: u64, backtrack: bool) -> u64 {
    if backtrack {
        i_e - 1
    } else {
        i_fbar
    }
}

pub fn edge_multiplicity(g: &IndexedGraph, e: usize, f: usize) -> Result<u64> {
    let (ee, ff) = (&g.edges[e], &g.edges[f]);
    if ff.from != ee.to {
        return Err(Error::NotComposable(ee.id.clone(), ff.id.clone()));
    }
    Ok(multiplicity_from(ee.index, g.edges[ff.rev].index, f == ee.rev))
}

/// Degree of any lift of the core vertex `a` in the covering tree.
pub fn lift_degree(g: &IndexedGraph, a: &str) -> Result<u64> {
    let a = g.vertex(a)?;
    Ok(core_lift_degree(g, a))
}

pub(crate) fn core_lift_degree(g: &IndexedGraph, a: usize) -> u64 {
    let mut d: u64 = g.out[a].iter().map(|&e| g.edges[g.edges[e].rev].index).sum();
    for r in &g.rays {
        if r.attach == a {
            d += r.pairs.at(1).1;
        }
    }
    d
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrderGrading {
    pub vertex_order: Vec<BigRational>,
    pub edge_order: Vec<BigRational>,
}

impl OrderGrading {
    pub fn vertex_f64(&self, a: usize) -> f64 {
        rational_to_f64(&self.vertex_order[a])
    }
    pub fn edge_f64(&self, e: usize) -> f64 {
        rational_to_f64(&self.edge_order[e])
    }
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}

/// Propagate vertex orders N from `base` along a spanning tree using
/// N(from e) = N(to e) * i(ebar) / i(e), then check every remaining edge.
pub fn propagate_orders(g: &IndexedGraph, base: usize, base_value: BigRational) -> Result<OrderGrading> {
    let n = g.vertices.len();
    let mut order: Vec<Option<BigRational>> = vec![None; n];
    order[base] = Some(base_value);
    let mut queue = VecDeque::from([base]);
    while let Some(a) = queue.pop_front() {
        for &e in &g.out[a] {
            let edge = &g.edges[e];
            if order[edge.to].is_none() {
                // N(to) = N(from) * i(e) / i(ebar)
                let na = order[a].clone().unwrap();
                let v = na * big(edge.index) / big(g.edges[edge.rev].index);
                order[edge.to] = Some(v);
                queue.push_back(edge.to);
            }
        }
    }
    let vertex_order: Vec<BigRational> = order.into_iter().map(|o| o.expect("connected core")).collect();
    for e in &g.edges {
        let lhs = &vertex_order[e.from] * big(e.index);
        let rhs = &vertex_order[e.to] * big(g.edges[e.rev].index);
        if lhs != rhs {
            let product = lhs / rhs;
            return Err(Error::NonUnimodular { edge: e.id.clone(), product: product.to_string() });
        }
    }
    let edge_order = g
        .edges
        .iter()
        .map(|e| &vertex_order[e.to] / big(e.index))
        .collect();
    Ok(OrderGrading { vertex_order, edge_order })
}

/// Orders normalized by the graph's own `orders` record (default 1 at the first vertex).
pub fn default_orders(g: &IndexedGraph) -> Result<OrderGrading> {
    propagate_orders(g, g.order_base, g.order_value.clone())
}

pub(crate) fn big(v: u64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Period of the non-backtracking state graph (gcd of closed path lengths).
pub fn length_spectrum_period(g: &IndexedGraph) -> Result<u64> {
    let depth = g
        .rays
        .iter()
        .map(|r| r.pairs.prefix.len() + 2 * r.pairs.period.len() + 2)
        .max()
        .unwrap_or(0);
    let flat = g.materialize(depth);
    let live: Vec<bool> = (0..flat.edges.len()).map(|e| !flat.is_funnel_edge(e)).collect();
    let succ: Vec<Vec<usize>> = (0..flat.edges.len())
        .map(|e| {
            if !live[e] {
                return Vec::new();
            }
            flat.out[flat.edges[e].to]
                .iter()
                .copied()
                .filter(|&f| live[f] && flat.multiplicity(e, f) > 0)
                .collect()
        })
        .collect();
    period_of(&succ).ok_or(Error::NoClosedGeodesic)
}

/// gcd of cycle lengths over all nontrivial strongly connected components.
pub(crate) fn period_of(succ: &[Vec<usize>]) -> Option<u64> {
    let comp = scc(succ);
    let ncomp = comp.iter().copied().max().map_or(0, |m| m + 1);
    let mut overall = 0u64;
    for c in 0..ncomp {
        let members: Vec<usize> = (0..succ.len()).filter(|&v| comp[v] == c).collect();
        let has_edge = members.iter().any(|&v| succ[v].iter().any(|&w| comp[w] == c));
        if !has_edge {
            continue;
        }
        let mut level: BTreeMap<usize, i64> = BTreeMap::new();
        level.insert(members[0], 0);
        let mut queue = VecDeque::from([members[0]]);
        let mut gg = 0i64;
        while let Some(v) = queue.pop_front() {
            let lv = level[&v];
            for &w in &succ[v] {
                if comp[w] != c {
                    continue;
                }
                match level.get(&w) {
                    None => {
                        level.insert(w, lv + 1);
                        queue.push_back(w);
                    }
                    Some(&lw) => gg = gcd_i64(gg, (lv + 1 - lw).abs()),
                }
            }
        }
        overall = gcd_u64(overall, gg as u64);
    }
    (overall > 0).then_some(overall)
}

pub(crate) fn gcd_u64(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd_u64(b, a % b)
    }
}

fn gcd_i64(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd_i64(b, a % b)
    }
}

/// Strongly connected components (iterative Kosaraju). Returns a component id per node.
pub(crate) fn scc(succ: &[Vec<usize>]) -> Vec<usize> {
    let n = succ.len();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut stack = vec![(s, 0usize)];
        while let Some(&mut (v, ref mut i)) = stack.last_mut() {
            if *i < succ[v].len() {
                let w = succ[v][*i];
                *i += 1;
                if !seen[w] {
                    seen[w] = true;
                    stack.push((w, 0));
                }
            } else {
                order.push(v);
                stack.pop();
            }
        }
    }
    let mut pred = vec![Vec::new(); n];
    for (v, ws) in succ.iter().enumerate() {
        for &w in ws {
            pred[w].push(v);
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut c = 0;
    for &s in order.iter().rev() {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = c;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &w in &pred[v] {
                if comp[w] == usize::MAX {
                    comp[w] = c;
                    stack.push(w);
                }
            }
        }
        c += 1;
    }
    comp
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    Core,
    /// Ray edge at `level >= 1`; `up` is e_n (away from the core), otherwise ebar_n.
    Ray { ray: usize, level: usize, up: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlatEdge {
    pub id: String,
    pub rev: usize,
    pub from: usize,
    pub to: usize,
    pub index: u64,
    pub kind: EdgeKind,
}

/// A finite window of the quotient: the core plus each ray cut at `depth`.
/// Core vertices and edges keep their indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Flat {
    pub vertex_labels: Vec<String>,
    /// Ray level of each vertex (0 for the core).
    pub vertex_level: Vec<usize>,
    pub edges: Vec<FlatEdge>,
    pub out: Vec<Vec<usize>>,
    pub n_core_vertices: usize,
    pub n_core_edges: usize,
    pub depth: usize,
    /// Per ray, flat indices of (e_n, ebar_n) for n = 1..=depth.
    pub ray_edges: Vec<Vec<(usize, usize)>>,
    funnel_flags: Vec<bool>,
}

impl Flat {
    fn build(g: &IndexedGraph, depth: usize) -> Flat {
        let mut vertex_labels = g.vertices.clone();
        let mut vertex_level = vec![0; g.vertices.len()];
        let mut edges: Vec<FlatEdge> = g
            .edges
            .iter()
            .map(|e| FlatEdge {
                id: e.id.clone(),
                rev: e.rev,
                from: e.from,
                to: e.to,
                index: e.index,
                kind: EdgeKind::Core,
            })
            .collect();
        let mut funnel_flags: Vec<bool> = (0..edges.len()).map(|e| g.is_funnel_entry(e)).collect();
        let mut ray_edges = Vec::new();
        for (r, ray) in g.rays.iter().enumerate() {
            let tag = match ray.kind {
                RayKind::Tail(k) => format!("tail{k}"),
                RayKind::Funnel(k) => format!("funnel{k}"),
            };
            let mut prev = ray.attach;
            let mut list = Vec::new();
            for n in 1..=depth {
                let v = vertex_labels.len();
                vertex_labels.push(format!("{tag}:a{n}"));
                vertex_level.push(n);
                let (ie, ieb) = ray.pairs.at(n);
                let up = edges.len();
                edges.push(FlatEdge {
                    id: format!("{tag}:e{n}"),
                    rev: up + 1,
                    from: prev,
                    to: v,
                    index: ie,
                    kind: EdgeKind::Ray { ray: r, level: n, up: true },
                });
                edges.push(FlatEdge {
                    id: format!("{tag}:e{n}bar"),
                    rev: up,
                    from: v,
                    to: prev,
                    index: ieb,
                    kind: EdgeKind::Ray { ray: r, level: n, up: false },
                });
                funnel_flags.push(ray.is_funnel());
                funnel_flags.push(ray.is_funnel());
                list.push((up, up + 1));
                prev = v;
            }
            ray_edges.push(list);
        }
        let mut out = vec![Vec::new(); vertex_labels.len()];
        for (k, e) in edges.iter().enumerate() {
            out[e.from].push(k);
        }
        Flat {
            vertex_labels,
            vertex_level,
            n_core_vertices: g.vertices.len(),
            n_core_edges: g.edges.len(),
            edges,
            out,
            depth,
            ray_edges,
            funnel_flags,
        }
    }

    pub fn multiplicity(&self, e: usize, f: usize) -> u64 {
        let ee = &self.edges[e];
        debug_assert_eq!(self.edges[f].from, ee.to);
        multiplicity_from(ee.index, self.edges[self.edges[f].rev].index, f == ee.rev)
    }

    /// Edges belonging to funnels (entry edges and interiors, both orientations).
    pub fn is_funnel_edge(&self, e: usize) -> bool {
        self.funnel_flags[e]
    }

    pub fn edge_level(&self, e: usize) -> usize {
        match self.edges[e].kind {
            EdgeKind::Core => 0,
            EdgeKind::Ray { level, .. } => level,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CoverNode {
    /// Vertex of the materialized quotient this node lies over.
    pub vertex: u32,
    pub parent: u32,
    /// Quotient edge used to reach this node (`u32::MAX` at the root).
    pub via: u32,
    pub depth: u32,
}

/// An explicit ball of the universal covering tree.
#[derive(Clone, Debug)]
pub struct CoverBall {
    pub nodes: Vec<CoverNode>,
    pub flat: Flat,
    pub radius: usize,
}

impl CoverBall {
    /// Number of cover vertices at each distance, keyed by quotient label.
    pub fn label_counts(&self) -> Vec<BTreeMap<String, u64>> {
        let mut out = vec![BTreeMap::new(); self.radius + 1];
        for n in &self.nodes {
            *out[n.depth as usize]
                .entry(self.flat.vertex_labels[n.vertex as usize].clone())
                .or_insert(0) += 1;
        }
        out
    }

    pub fn sphere_sizes(&self) -> Vec<u64> {
        let mut out = vec![0; self.radius + 1];
        for n in &self.nodes {
            out[n.depth as usize] += 1;
        }
        out
    }

    /// Children of each node grouped by the quotient edge used.
    pub fn child_edge_counts(&self) -> Vec<BTreeMap<u32, u64>> {
        let mut out = vec![BTreeMap::new(); self.nodes.len()];
        for n in self.nodes.iter().skip(1) {
            *out[n.parent as usize].entry(n.via).or_insert(0) += 1;
        }
        out
    }
}

/// Enumerate the ball of radius `radius` around a lift of `base`.
pub fn build_cover_ball(g: &IndexedGraph, base: usize, radius: usize, limit: usize) -> Result<CoverBall> {
    let flat = g.materialize(radius + 1);
    let mut nodes = vec![CoverNode { vertex: base as u32, parent: u32::MAX, via: u32::MAX, depth: 0 }];
    let mut frontier_start = 0;
    for d in 0..radius {
        let frontier_end = nodes.len();
        for k in frontier_start..frontier_end {
            let node = nodes[k];
            for &f in &flat.out[node.vertex as usize] {
                let count = if node.via == u32::MAX {
                    flat.edges[flat.edges[f].rev].index
                } else {
                    flat.multiplicity(node.via as usize, f)
                };
                if nodes.len() as u64 + count > limit as u64 {
                    return Err(Error::ResourceLimit(format!(
                        "cover ball of radius {radius} exceeds {limit} vertices"
                    )));
                }
                for _ in 0..count {
                    nodes.push(CoverNode {
                        vertex: flat.edges[f].to as u32,
                        parent: k as u32,
                        via: f as u32,
                        depth: d as u32 + 1,
                    });
                }
            }
        }
        frontier_start = frontier_end;
    }
    Ok(CoverBall { nodes, flat, radius })
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            write!(f, "valid")?;
        }
        for v in &self.violations {
            writeln!(f, "{}: {}", v.code, v.message)?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}
