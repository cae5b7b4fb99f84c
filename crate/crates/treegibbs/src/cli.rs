//! Command-line front end: run configs, subcommands and report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::counting::{self, BiregularParams, SetFamily};
use crate::error::{Error, Result};
use crate::gibbs::{self, GibbsData, NormalizationRecord, Potential, PotentialSpec};
use crate::indexed_graph::{self, IndexedGraph, OrderGrading};
use crate::markov::{self, MarkovChain, SeqSpec};
use crate::wsg::{self, DriftCertificate, Provenance};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_NMAX: usize = 40;
pub const DEFAULT_RADIUS: usize = 4;
pub const MAX_NMAX: usize = 2000;
pub const MAX_RADIUS: usize = 10;
pub const MAX_DEPTH: usize = 2000;
pub const MAX_TRUNCATION: usize = 2000;

#[derive(Parser, Debug)]
#[command(name = "treegibbs", version, about = "Gibbs measures, Markov codings and orbit counts for edge-indexed graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct CommonArgs {
    /// Run config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; reports go to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub nmax: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Validation, critical exponent, shadows and period.
    Analyze(CommonArgs),
    /// Markov chain and its Markov-property residuals.
    Chain(CommonArgs),
    /// Drift certificates and the taboo bound.
    Wsg(CommonArgs),
    /// Taboo tables, mixing fit and correlations.
    Mix(CommonArgs),
    /// Orbit counts against main terms.
    Count(CommonArgs),
    /// Certificate degradation on the star chain.
    Probe(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Analyze(_) => "analyze",
            Command::Chain(_) => "chain",
            Command::Wsg(_) => "wsg",
            Command::Mix(_) => "mix",
            Command::Count(_) => "count",
            Command::Probe(_) => "probe",
        }
    }

    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Analyze(a) | Command::Chain(a) | Command::Wsg(a) | Command::Mix(a) | Command::Count(a) | Command::Probe(a) => a,
        }
    }
}

/// The config file as written by the user.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub graph: Option<PathBuf>,
    #[serde(default)]
    pub potential: Option<PathBuf>,
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub n_max: Option<usize>,
    #[serde(default)]
    pub radius: Option<usize>,
    /// Window depth for chains on graphs with tails.
    #[serde(default)]
    pub depth: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub wsg: WsgSection,
    #[serde(default)]
    pub mix: MixSection,
    #[serde(default)]
    pub count: CountSection,
    #[serde(default)]
    pub probe: Option<ProbeSection>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WsgSection {
    /// Extra states (by label) for B.
    #[serde(default)]
    pub b: Vec<String>,
    /// A user certificate to verify in addition to the search.
    #[serde(default)]
    pub certificate: Option<UserCertificate>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserCertificate {
    pub t: BTreeMap<String, f64>,
    #[serde(default)]
    pub t_leak: BTreeMap<String, f64>,
    pub b: Vec<String>,
    pub rho: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSection {
    #[serde(default)]
    pub i: Option<String>,
    #[serde(default)]
    pub j: Option<String>,
    #[serde(default)]
    pub b: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountSection {
    #[serde(default)]
    pub n_lo: Option<usize>,
    #[serde(default)]
    pub base: Option<String>,
    #[serde(default)]
    pub beta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    #[serde(default = "default_gammas")]
    pub gammas: SeqSpec,
    #[serde(default = "default_betas")]
    pub betas: SeqSpec,
    #[serde(default = "default_truncations")]
    pub truncations: Vec<usize>,
}

fn default_gammas() -> SeqSpec {
    SeqSpec::Harmonic
}

fn default_betas() -> SeqSpec {
    SeqSpec::Geometric { ratio: 0.5 }
}

fn default_truncations() -> Vec<usize> {
    vec![10, 20, 40, 80]
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection { gammas: default_gammas(), betas: default_betas(), truncations: default_truncations() }
    }
}

/// Fully resolved run parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: String,
    pub graph: Option<IndexedGraph>,
    pub potential_spec: PotentialSpec,
    pub tol: f64,
    pub n_max: usize,
    pub radius: usize,
    pub depth: Option<usize>,
    pub out: Option<PathBuf>,
    pub wsg: WsgSection,
    pub mix: MixSection,
    pub count: CountSection,
    pub probe: ProbeSection,
    pub input_hash: String,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(format!("{}: {e}", path.display()))
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, prefix: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let p = e.path().to_string();
        let path = if prefix.is_empty() { p } else if p == "." { prefix.to_string() } else { format!("{prefix}.{p}") };
        Error::config(path, e.inner().to_string())
    })
}

/// Parse a config file; relative paths inside it are resolved against its directory.
pub fn parse_config(command: &str, args: &CommonArgs) -> Result<RunConfig> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| io_err(&args.config, e))?;
    let dir = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    resolve_config(command, &text, &dir, args.out.clone(), args.nmax, args.tol)
}

pub fn resolve_config(
    command: &str,
    text: &str,
    dir: &Path,
    out: Option<PathBuf>,
    nmax: Option<usize>,
    tol: Option<f64>,
) -> Result<RunConfig> {
    if !["analyze", "chain", "wsg", "mix", "count", "probe"].contains(&command) {
        return Err(Error::config("command", format!("unknown command `{command}`")));
    }
    let file: ConfigFile = parse_json(text, "")?;
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());

    let graph = match &file.graph {
        Some(p) => {
            let path = dir.join(p);
            let g_text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            hasher.update(g_text.as_bytes());
            Some(IndexedGraph::from_json_str(&g_text)?)
        }
        None if command != "probe" => return Err(Error::config("graph", "a graph file is required")),
        None => None,
    };
    let potential_spec = match &file.potential {
        Some(p) => {
            let path = dir.join(p);
            let p_text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            hasher.update(p_text.as_bytes());
            parse_json(&p_text, "potential")?
        }
        None => PotentialSpec::default(),
    };
    let tol = tol.or(file.tol).unwrap_or(DEFAULT_TOL);
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::config("tol", "tolerance must be positive"));
    }
    let n_max = nmax.or(file.n_max).unwrap_or(DEFAULT_NMAX);
    if n_max == 0 {
        return Err(Error::config("n_max", "must be at least 1"));
    }
    if n_max > MAX_NMAX {
        return Err(Error::ResourceLimit(format!("n_max {n_max} exceeds {MAX_NMAX}")));
    }
    let radius = file.radius.unwrap_or(DEFAULT_RADIUS);
    if radius > MAX_RADIUS {
        return Err(Error::ResourceLimit(format!("radius {radius} exceeds {MAX_RADIUS}")));
    }
    if file.depth.is_some_and(|d| d > MAX_DEPTH) {
        return Err(Error::ResourceLimit(format!("depth exceeds {MAX_DEPTH}")));
    }
    let probe = file.probe.clone().unwrap_or_default();
    if probe.truncations.iter().any(|&n| n > MAX_TRUNCATION) {
        return Err(Error::ResourceLimit(format!("truncation exceeds {MAX_TRUNCATION}")));
    }
    let input_hash = hasher.finalize().iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    });
    Ok(RunConfig {
        command: command.to_string(),
        graph,
        potential_spec,
        tol,
        n_max,
        radius,
        depth: file.depth,
        out: out.or(file.out.map(|p| dir.join(p))),
        wsg: file.wsg,
        mix: file.mix,
        count: file.count,
        probe,
        input_hash,
    })
}

/// One produced file.
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub summary: String,
    pub artifacts: Vec<Artifact>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'a str,
    tool_version: &'a str,
    input_hash: &'a str,
    normalization: Option<&'a NormalizationRecord>,
    result: T,
}

fn envelope<T: Serialize>(cfg: &RunConfig, norm: Option<&NormalizationRecord>, result: T) -> Result<String> {
    let env = Envelope {
        command: &cfg.command,
        tool_version: env!("CARGO_PKG_VERSION"),
        input_hash: &cfg.input_hash,
        normalization: norm,
        result,
    };
    let mut s = serde_json::to_string_pretty(&env).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

struct Prepared<'a> {
    g: &'a IndexedGraph,
    f: Potential,
    gd: GibbsData,
    orders: OrderGrading,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared<'_>> {
    let g = cfg.graph.as_ref().ok_or_else(|| Error::config("graph", "a graph file is required"))?;
    let f = Potential::from_spec(g, &cfg.potential_spec)?;
    let gd = gibbs::gibbs_data(g, &f)?;
    let orders = indexed_graph::default_orders(g)?;
    Ok(Prepared { g, f, gd, orders })
}

fn chain_for(cfg: &RunConfig, p: &Prepared, extra: usize) -> Result<MarkovChain> {
    let depth = match cfg.depth {
        Some(d) => Some(d),
        None if p.g.has_tails() && extra > 0 => Some(cfg.n_max + extra),
        None => None,
    };
    markov::build_chain(p.g, &p.gd, &p.orders, depth)
}

fn labels_to_states(mc: &MarkovChain, labels: &[String], field: &str) -> Result<BTreeSet<usize>> {
    labels
        .iter()
        .map(|l| mc.index_of(l).ok_or_else(|| Error::config(field, format!("no chain state `{l}`"))))
        .collect()
}

fn edge_map(g: &IndexedGraph, v: &[f64]) -> BTreeMap<String, f64> {
    g.edges.iter().zip(v).map(|(e, x)| (e.id.clone(), *x)).collect()
}

pub fn run_command(cfg: &RunConfig) -> Result<RunOutput> {
    match cfg.command.as_str() {
        "analyze" => analyze(cfg),
        "chain" => chain(cfg),
        "wsg" => wsg_cmd(cfg),
        "mix" => mix(cfg),
        "count" => count(cfg),
        "probe" => probe(cfg),
        other => Err(Error::config("command", format!("unknown command `{other}`"))),
    }
}

#[derive(Serialize)]
struct AnalyzeResult {
    validation: indexed_graph::ValidationReport,
    delta: f64,
    delta_minus: f64,
    delta_zero: f64,
    period: u64,
    solver: gibbs::SolverMeta,
    shadows_plus: BTreeMap<String, f64>,
    shadows_minus: BTreeMap<String, f64>,
    cusp_bounds: BTreeMap<String, std::result::Result<f64, String>>,
    residual_ok: bool,
}

fn analyze(cfg: &RunConfig) -> Result<RunOutput> {
    let p = prepare(cfg)?;
    let validation = indexed_graph::validate_graph(p.g.spec());
    let period = indexed_graph::length_spectrum_period(p.g)?;
    let mut cusp_bounds = BTreeMap::new();
    for t in 0..p.g.n_tails {
        let v = gibbs::cusp_exponent_bound(p.g, &p.f, t).map_err(|e| e.to_string());
        cusp_bounds.insert(format!("tail{t}"), v);
    }
    let residual_ok = p.gd.meta.residual_plus <= cfg.tol.max(1e-12) * 1e3 && p.gd.meta.residual_minus <= cfg.tol.max(1e-12) * 1e3;
    let res = AnalyzeResult {
        validation,
        delta: p.gd.delta,
        delta_minus: p.gd.delta_minus,
        delta_zero: p.gd.delta_zero,
        period,
        solver: p.gd.meta.clone(),
        shadows_plus: edge_map(p.g, &p.gd.u_plus.core),
        shadows_minus: edge_map(p.g, &p.gd.u_minus.core),
        cusp_bounds,
        residual_ok,
    };
    let summary = format!(
        "analyze: delta = {:.12}, period k = {}, solver = {}, shadow residuals {:.2e}/{:.2e}\n",
        res.delta, period, res.solver.solver, res.solver.residual_plus, res.solver.residual_minus
    );
    let json = envelope(cfg, Some(&p.gd.normalization), &res)?;
    Ok(RunOutput { summary, artifacts: vec![Artifact { name: "analyze.json".into(), contents: json }] })
}

#[derive(Serialize)]
struct ChainResult {
    states: usize,
    depth: usize,
    period: usize,
    class_sizes: Vec<usize>,
    report: markov::MarkovReport,
    pass: bool,
    pi: BTreeMap<String, f64>,
}

fn chain(cfg: &RunConfig) -> Result<RunOutput> {
    let p = prepare(cfg)?;
    let mc = chain_for(cfg, &p, 0)?;
    let report = markov::check_markov_property(&mc);
    let pass = report.row_residual <= cfg.tol && report.stationarity_residual <= cfg.tol;
    let res = ChainResult {
        states: mc.len(),
        depth: mc.depth,
        period: mc.period,
        class_sizes: mc.classes.iter().map(Vec::len).collect(),
        pass,
        pi: mc.states.iter().zip(&mc.pi).map(|(s, x)| (s.label.clone(), *x)).collect(),
        report,
    };
    let summary = format!(
        "chain: {} states, period {}, row residual {:.2e}, stationarity residual {:.2e}, {}\n",
        res.states,
        res.period,
        res.report.row_residual,
        res.report.stationarity_residual,
        if pass { "PASS" } else { "FAIL" }
    );
    let json = envelope(cfg, Some(&p.gd.normalization), &res)?;
    Ok(RunOutput { summary, artifacts: vec![Artifact { name: "chain.json".into(), contents: json }] })
}

#[derive(Serialize)]
struct CertificateFile {
    rho: f64,
    provenance: Provenance,
    b: Vec<String>,
    t: BTreeMap<String, f64>,
    t_leak: BTreeMap<String, f64>,
}

fn certificate_file(mc: &MarkovChain, c: &DriftCertificate) -> CertificateFile {
    let label = |i: usize| mc.states[i].label.clone();
    CertificateFile {
        rho: c.rho,
        provenance: c.provenance,
        b: c.b.iter().map(|&i| label(i)).collect(),
        t: (0..mc.len()).map(|i| (label(i), c.t[i])).collect(),
        t_leak: (0..mc.len()).filter(|&i| mc.leak[i] > 0.0).map(|i| (label(i), c.t_leak[i])).collect(),
    }
}

#[derive(Serialize)]
struct WsgResult {
    search_rho: f64,
    message: String,
    verify: Option<wsg::DriftReport>,
    lemma: Option<wsg::LemmaReport>,
    user_verify: Option<wsg::DriftReport>,
}

fn user_certificate(mc: &MarkovChain, u: &UserCertificate) -> Result<DriftCertificate> {
    let b = labels_to_states(mc, &u.b, "wsg.certificate.b")?;
    let mut t = vec![f64::NAN; mc.len()];
    for (l, v) in &u.t {
        let i = mc.index_of(l).ok_or_else(|| Error::config("wsg.certificate.t", format!("no chain state `{l}`")))?;
        t[i] = *v;
    }
    for &i in &b {
        if t[i].is_nan() {
            t[i] = 1.0;
        }
    }
    let t_leak = (0..mc.len()).map(|i| u.t_leak.get(&mc.states[i].label).copied().unwrap_or(t[i])).collect();
    Ok(DriftCertificate { t, t_leak, b, rho: u.rho, provenance: Provenance::User })
}

fn wsg_cmd(cfg: &RunConfig) -> Result<RunOutput> {
    let p = prepare(cfg)?;
    let mc = chain_for(cfg, &p, 40)?;
    let extra = labels_to_states(&mc, &cfg.wsg.b, "wsg.b")?;
    let out = wsg::search_certificate(&mc, if extra.is_empty() { None } else { Some(&extra) });
    let mut artifacts = Vec::new();
    let (verify, lemma) = match &out.certificate {
        Some(c) => {
            let v = wsg::verify_certificate(&mc, c)?;
            let l = wsg::lemma_bound_check(&mc, c, cfg.n_max);
            let file = envelope(cfg, Some(&p.gd.normalization), certificate_file(&mc, c))?;
            artifacts.push(Artifact { name: "certificate.json".into(), contents: file });
            (Some(v), Some(l))
        }
        None => (None, None),
    };
    let user_verify = match &cfg.wsg.certificate {
        Some(u) => Some(wsg::verify_certificate(&mc, &user_certificate(&mc, u)?)?),
        None => None,
    };
    let mut summary = format!("wsg: search rho = {:.6} ({})\n", out.rho, out.message);
    if let (Some(v), Some(l)) = (&verify, &lemma) {
        let _ = writeln!(
            summary,
            "wsg: verify {} (max ratio {:.6}), taboo bound: {} checks, {} violations",
            if v.pass { "PASS" } else { "FAIL" },
            v.max_ratio,
            l.checked,
            l.violations
        );
    }
    if let Some(v) = &user_verify {
        let _ = writeln!(summary, "wsg: user certificate {} (max ratio {:.6})", if v.pass { "PASS" } else { "FAIL" }, v.max_ratio);
    }
    let res = WsgResult { search_rho: out.rho, message: out.message.clone(), verify, lemma, user_verify };
    artifacts.insert(0, Artifact { name: "wsg.json".into(), contents: envelope(cfg, Some(&p.gd.normalization), &res)? });
    Ok(RunOutput { summary, artifacts })
}

#[derive(Serialize)]
struct MixResult {
    i: String,
    j: String,
    period: usize,
    fit: std::result::Result<markov::MixingFit, String>,
    second_eigen_modulus: f64,
    theta_per_step: Option<f64>,
    convolution: markov::ConvolutionReport,
    monotonicity_violation: f64,
    covariance: Vec<markov::CovRow>,
}

fn mix(cfg: &RunConfig) -> Result<RunOutput> {
    let p = prepare(cfg)?;
    let mc = chain_for(cfg, &p, 0)?;
    let pick = |l: &Option<String>, field: &str| -> Result<usize> {
        match l {
            Some(l) => mc.index_of(l).ok_or_else(|| Error::config(field, format!("no chain state `{l}`"))),
            None => Ok(0),
        }
    };
    let i = pick(&cfg.mix.i, "mix.i")?;
    let j = match &cfg.mix.j {
        Some(_) => pick(&cfg.mix.j, "mix.j")?,
        None => i,
    };
    let fit = markov::mixing_rate_estimate(&mc, i, j, cfg.n_max);
    let lambda2 = markov::second_eigen_modulus(&mc, mc.class_of[j]);
    let b = if cfg.mix.b.is_empty() {
        BTreeSet::from([0usize])
    } else {
        labels_to_states(&mc, &cfg.mix.b, "mix.b")?
    };
    let probe_states: Vec<usize> = (0..mc.len()).take(8).collect();
    let conv_n = cfg.n_max.min(40);
    let convolution = markov::convolution_check(&mc, &b, &probe_states, conv_n);
    let mut bigger = b.clone();
    bigger.extend((0..mc.len()).find(|s| !b.contains(s)));
    let monotonicity_violation = markov::taboo_monotonicity_violation(&mc, &b, &bigger, conv_n);
    let env_fit = fit.as_ref().ok().map(|f| (f.c, f.theta));
    let covariance = markov::correlation_decay(&mc, &[i], &[j], cfg.n_max, env_fit)?;

    let mut csv = String::from("n,difference,fit,cov,envelope\n");
    let diffs: BTreeMap<usize, f64> = match &fit {
        Ok(f) => f.differences.iter().copied().collect(),
        Err(_) => markov::mixing_differences(&mc, i, j, cfg.n_max).unwrap_or_default().into_iter().collect(),
    };
    let covs: BTreeMap<usize, &markov::CovRow> = covariance.iter().map(|r| (r.n, r)).collect();
    let ns: BTreeSet<usize> = diffs.keys().chain(covs.keys()).copied().collect();
    for n in ns {
        let d = diffs.get(&n).map(|v| format!("{v:e}")).unwrap_or_default();
        let f = match (&fit, diffs.contains_key(&n)) {
            (Ok(f), true) => format!("{:e}", f.c * f.theta.powi(n as i32)),
            _ => String::new(),
        };
        let (c, e) = match covs.get(&n) {
            Some(r) => (format!("{:e}", r.cov), r.envelope.map(|x| format!("{x:e}")).unwrap_or_default()),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(csv, "{n},{d},{f},{c},{e}");
    }

    let theta_per_step = fit.as_ref().ok().map(|f| f.theta.powf(1.0 / mc.period as f64));
    let summary = match &fit {
        Ok(f) => format!(
            "mix: period {}, theta = {:.6} (R^2 = {:.4}), second eigenvalue modulus = {:.6}, convolution residual {:.2e}\n",
            mc.period, f.theta, f.r2, lambda2, convolution.first_passage_form
        ),
        Err(e) => format!("mix: period {}, no fit ({e}), second eigenvalue modulus = {:.6}\n", mc.period, lambda2),
    };
    let res = MixResult {
        i: mc.states[i].label.clone(),
        j: mc.states[j].label.clone(),
        period: mc.period,
        fit: fit.map_err(|e| e.to_string()),
        second_eigen_modulus: lambda2,
        theta_per_step,
        convolution,
        monotonicity_violation,
        covariance,
    };
    let json = envelope(cfg, Some(&p.gd.normalization), &res)?;
    Ok(RunOutput {
        summary,
        artifacts: vec![
            Artifact { name: "mix.json".into(), contents: json },
            Artifact { name: "mix.csv".into(), contents: csv },
        ],
    })
}

#[derive(Serialize)]
struct CountResult {
    report: counting::CountReport,
    ratio_variation: Option<f64>,
    sphere_sizes: Option<Vec<u128>>,
    oracle_matches_cover: Option<bool>,
    boundary: Vec<counting::BoundaryRow>,
}

fn count(cfg: &RunConfig) -> Result<RunOutput> {
    let p = prepare(cfg)?;
    let base = match &cfg.count.base {
        Some(v) => p.g.vertex(v).map_err(|_| Error::config("count.base", format!("unknown vertex `{v}`")))?,
        None => p.g.order_base,
    };
    let params = BiregularParams::from_graph(p.g, base).ok();
    let n_hi = cfg.n_max;
    let n_lo = cfg.count.n_lo.unwrap_or(10.min(n_hi)).min(n_hi);
    let report = counting::error_decay_report(p.g, &p.gd, &p.orders, base, params, n_lo, n_hi)?;
    let ratio_variation = report.ratio_variation();
    let sphere_sizes = params.map(|pr| (0..=cfg.radius as u32).map(|j| counting::sphere_size(pr, j)).collect());
    let oracle_matches_cover = if p.g.has_tails() || !p.f.is_zero() {
        None
    } else {
        let n = 2 * cfg.radius;
        let oracle = counting::orbit_oracle(p.g, &p.orders, &p.f, base, n, None)?;
        let cover = counting::closed_lift_counts(p.g, base, n)?;
        Some(oracle.per_length.iter().zip(&cover).all(|(a, b)| (a - *b as f64).abs() <= 1e-9 * a.abs().max(1.0)))
    };
    let beta = cfg.count.beta.unwrap_or(1.0);
    let radii: Vec<usize> = (1..=cfg.radius).collect();
    let boundary = if p.g.has_tails() { Vec::new() } else { counting::boundary_ratio(p.g, base, SetFamily::Ball, &radii, beta)? };
    let csv = report.to_csv();
    let summary = format!(
        "count: C* = {} ({:?}), delta = {:.12}, n in [{}, {}], relative residual at n_hi {:.3e}\n",
        report.renewal.exact.clone().unwrap_or_else(|| format!("{:.12}", report.renewal.c_star)),
        report.renewal.mode,
        report.delta,
        n_lo,
        n_hi,
        report.rows.last().map_or(0.0, |r| if r.oracle != 0.0 { r.residual / r.oracle } else { 0.0 })
    );
    let res = CountResult { report, ratio_variation, sphere_sizes, oracle_matches_cover, boundary };
    let json = envelope(cfg, Some(&p.gd.normalization), &res)?;
    Ok(RunOutput {
        summary,
        artifacts: vec![
            Artifact { name: "count.json".into(), contents: json },
            Artifact { name: "count.csv".into(), contents: csv },
        ],
    })
}

fn probe(cfg: &RunConfig) -> Result<RunOutput> {
    let rows = wsg::degradation_probe(&cfg.probe.gammas, &cfg.probe.betas, &cfg.probe.truncations)?;
    let mut csv = String::from("truncation,rho,sup_gamma,lower_bound_holds\n");
    let mut summary = String::new();
    for r in &rows {
        let _ = writeln!(csv, "{},{:e},{:e},{}", r.truncation, r.rho, r.sup_gamma, r.lower_bound_holds);
        let _ = writeln!(summary, "probe: N = {:>4}  rho = {:.6}  sup gamma = {:.6}", r.truncation, r.rho, r.sup_gamma);
    }
    let json = envelope(cfg, None, &rows)?;
    Ok(RunOutput {
        summary,
        artifacts: vec![
            Artifact { name: "probe.json".into(), contents: json },
            Artifact { name: "probe.csv".into(), contents: csv },
        ],
    })
}

/// Write artifacts (and `summary.txt`) to `dir`.
pub fn emit_report(out: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for a in &out.artifacts {
        let path = dir.join(&a.name);
        std::fs::write(&path, &a.contents).map_err(|e| io_err(&path, e))?;
    }
    let path = dir.join("summary.txt");
    std::fs::write(&path, &out.summary).map_err(|e| io_err(&path, e))
}

/// Parse, run and emit; returns the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let name = cli.command.name();
    let result = parse_config(name, cli.command.args()).and_then(|cfg| {
        let out = run_command(&cfg)?;
        match &cfg.out {
            Some(dir) => {
                emit_report(&out, dir)?;
                print!("{}", out.summary);
            }
            None => {
                eprint!("{}", out.summary);
                for a in &out.artifacts {
                    if a.name.ends_with(".json") {
                        print!("{}", a.contents);
                    }
                }
            }
        }
        Ok(())
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixtures() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
    }

    fn cfg(command: &str, text: &str) -> Result<RunConfig> {
        resolve_config(command, text, &fixtures(), None, None, None)
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = cfg("analyze", r#"{"graph": "single_edge.json"}"#).unwrap();
        assert_eq!(c.tol, 1e-10);
        assert_eq!(c.n_max, 40);
        assert_eq!(c.potential_spec, PotentialSpec::default());
        assert_eq!(c.input_hash.len(), 64);
    }

    #[test]
    fn unknown_fields_and_commands_are_rejected() {
        let e = cfg("analyze", r#"{"graph": "single_edge.json", "nmax": 3}"#).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(cfg("plot", r#"{"graph": "single_edge.json"}"#).is_err());
        let e = cfg("analyze", r#"{"graph": "single_edge.json", "tol": -1.0}"#).unwrap_err();
        assert!(matches!(e, Error::Config { ref path, .. } if path == "tol"));
    }

    #[test]
    fn resource_guard_has_its_own_exit_code() {
        let e = cfg("count", r#"{"graph": "single_edge.json", "n_max": 100000}"#).unwrap_err();
        assert_eq!(e.exit_code(), 4);
    }

    #[test]
    fn bad_index_names_the_field() {
        let text = r#"{"vertices":["a"],"edges":[
            {"id":"e","rev":"f","from":"a","to":"a","index":2},
            {"id":"f","rev":"e","from":"a","to":"a","index":2},
            {"id":"g","rev":"h","from":"a","to":"a","index":2},
            {"id":"h","rev":"g","from":"a","to":"a","index":0}]}"#;
        let e = IndexedGraph::from_json_str(text).unwrap_err();
        assert!(e.to_string().contains("edges[3].index"), "{e}");
    }

    #[test]
    fn analyze_single_edge() {
        let c = cfg("analyze", r#"{"graph": "single_edge.json"}"#).unwrap();
        let out = run_command(&c).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out.artifacts[0].contents).unwrap();
        assert!((v["result"]["delta"].as_f64().unwrap() - 2f64.ln()).abs() < 1e-10);
        assert_eq!(v["result"]["period"], 2);
    }

    #[test]
    fn count_single_edge_reports_six() {
        let c = resolve_config("count", r#"{"graph": "single_edge.json"}"#, &fixtures(), None, Some(25), None).unwrap();
        let out = run_command(&c).unwrap();
        let v: serde_json::Value = serde_json::from_str(&out.artifacts[0].contents).unwrap();
        assert_eq!(v["result"]["report"]["renewal"]["exact"], "6");
        assert!(out.artifacts[1].contents.starts_with("n,oracle,main_ball,main_shadow,cstar_term,residual,ratio\n"));
    }

    #[test]
    fn probe_needs_no_graph() {
        let c = cfg("probe", r#"{"probe": {"truncations": [5, 10]}}"#).unwrap();
        let out = run_command(&c).unwrap();
        assert_eq!(out.artifacts[1].contents.lines().count(), 3);
        assert!(cfg("chain", r#"{}"#).is_err());
    }
}
