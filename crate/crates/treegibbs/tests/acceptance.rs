use std::collections::BTreeSet;
use std::time::Instant;

use treegibbs::counting::{self, BiregularParams};
use treegibbs::gibbs::{self, Potential};
use treegibbs::indexed_graph::{self, IndexedGraph};
use treegibbs::markov::{self, MarkovChain, SeqSpec};
use treegibbs::wsg;

const FIXTURES: [&str; 12] = [
    "single_edge",
    "biregular_2_3",
    "biregular_2_4",
    "biregular_3_3",
    "biregular_4_4",
    "double_edge",
    "triangle",
    "cusp_2_2",
    "cusp_2_4",
    "cusp_4_4",
    "regular_ray",
    "core_with_tail",
];

const CUSPIDAL: [(&str, f64, f64); 3] = [("cusp_2_2", 2.0, 2.0), ("cusp_2_4", 2.0, 4.0), ("cusp_4_4", 4.0, 4.0)];

fn load(name: &str) -> IndexedGraph {
    let path = format!("{}/fixtures/{name}.json", env!("CARGO_MANIFEST_DIR"));
    IndexedGraph::from_json_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn chain(name: &str, depth: Option<usize>) -> (IndexedGraph, gibbs::GibbsData, MarkovChain) {
    let g = load(name);
    let gd = gibbs::gibbs_data(&g, &Potential::zero(&g)).unwrap();
    let orders = indexed_graph::default_orders(&g).unwrap();
    let mc = markov::build_chain(&g, &gd, &orders, depth).unwrap();
    (g, gd, mc)
}

type Outcome = (bool, String);

fn critical_exponent() -> Outcome {
    let cases = [("single_edge", 2f64.ln()), ("biregular_2_4", 0.5 * 8f64.ln()), ("biregular_4_4", 0.5 * 16f64.ln())];
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, want) in cases {
        let g = load(name);
        let t0 = Instant::now();
        let d = gibbs::critical_exponent(&g, &Potential::zero(&g)).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        let err = (d - want).abs();
        ok &= err <= 1e-10 && secs < 1.0;
        notes.push(format!("{name} err {err:.1e} in {secs:.3}s"));
    }
    (ok, notes.join(", "))
}

fn markov_property() -> Outcome {
    let mut worst = 0.0f64;
    let mut at = "";
    for name in FIXTURES {
        let (_, _, mc) = chain(name, None);
        let r = markov::check_markov_property(&mc);
        let m = r.row_residual.max(r.stationarity_residual);
        if m > worst {
            worst = m;
            at = name;
        }
    }
    (worst <= 1e-12, format!("max residual {worst:.2e} ({at}) over {} fixtures", FIXTURES.len()))
}

fn closed_form_transitions() -> Outcome {
    let mut worst = 0.0f64;
    for (name, r, s) in CUSPIDAL {
        let (_, gd, mc) = chain(name, None);
        let x = (-2.0 * gd.delta).exp();
        let p = ((s - 1.0) * r * x + (r - 1.0) * r * s * x * x) / ((r - 1.0) + (s - 1.0) * r * x);
        let q = ((r - 1.0) * s * x + (s - 1.0) * r * s * x * x) / ((s - 1.0) + (r - 1.0) * s * x);
        let info = &mc.tails[0];
        for i in 1..=20 {
            let want = if i % 2 == 1 { p } else { q };
            worst = worst.max((info.up.at(i) - want).abs());
            if i > 1 {
                worst = worst.max((info.down.at(i) - 1.0).abs());
            }
        }
    }
    (worst <= 1e-8, format!("max deviation {worst:.2e} over 3 (r,s) cases, 20 levels"))
}

fn taboo_machinery() -> Outcome {
    let mut chains: Vec<(String, MarkovChain)> =
        ["triangle", "double_edge", "cusp_2_2", "regular_ray"].iter().map(|n| (n.to_string(), chain(n, None).2)).collect();
    let star = markov::counterexample_chain(&SeqSpec::Harmonic, &SeqSpec::Geometric { ratio: 0.5 }, 5).unwrap();
    chains.push(("star".into(), star));
    let mut worst_conv = 0.0f64;
    let mut worst_mono = 0.0f64;
    let mut checked = 0;
    for (_, mc) in &chains {
        let states: Vec<usize> = (0..mc.len().min(8)).collect();
        let sets = [BTreeSet::new(), BTreeSet::from([0]), BTreeSet::from([0, 1])];
        for b in &sets {
            let r = markov::convolution_check(mc, b, &states, 40);
            worst_conv = worst_conv.max(r.literal_diagonal).max(r.first_passage_form).max(r.first_return_form);
            checked += r.checked;
        }
        for w in sets.windows(2) {
            worst_mono = worst_mono.max(markov::taboo_monotonicity_violation(mc, &w[0], &w[1], 40));
        }
    }
    (
        worst_conv <= 1e-12 && worst_mono <= 0.0,
        format!("convolution residual {worst_conv:.2e} over {checked} entries, monotonicity violation {worst_mono:.2e}"),
    )
}

fn wsg_certificates() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for name in ["cusp_2_2", "cusp_2_4", "cusp_4_4", "regular_ray"] {
        let (_, _, mc) = chain(name, Some(100));
        let out = wsg::search_certificate(&mc, None);
        let Some(cert) = out.certificate else {
            ok = false;
            notes.push(format!("{name}: no certificate"));
            continue;
        };
        let v = wsg::verify_certificate(&mc, &cert).unwrap();
        let l = wsg::lemma_bound_check(&mc, &cert, 60);
        ok &= out.rho < 1.0 && v.pass && l.violations == 0 && l.checked > 0;
        notes.push(format!("{name}: rho {:.4}, {} violations / {}", out.rho, l.violations, l.checked));
    }
    (ok, notes.join("; "))
}

fn mixing() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for name in ["double_edge", "triangle"] {
        let (_, _, mc) = chain(name, None);
        let fit = markov::mixing_rate_estimate(&mc, 0, 0, 60).unwrap();
        let lambda = markov::second_eigen_modulus(&mc, mc.class_of[0]);
        let rel = (fit.theta - lambda).abs() / lambda;
        ok &= fit.theta > 0.0 && fit.theta < 1.0 && fit.r2 >= 0.99 && rel <= 0.02;
        notes.push(format!("{name}: theta {:.5} vs {:.5}, R2 {:.4}", fit.theta, lambda, fit.r2));
    }
    (ok, notes.join("; "))
}

fn degradation() -> Outcome {
    let rows = wsg::degradation_probe(&SeqSpec::Harmonic, &SeqSpec::Geometric { ratio: 0.5 }, &[10, 20, 40, 80]).unwrap();
    let increasing = rows.windows(2).all(|w| w[1].rho > w[0].rho);
    let last = rows.last().unwrap().rho;
    let bounds = rows.iter().all(|r| r.lower_bound_holds);
    let list: Vec<String> = rows.iter().map(|r| format!("{:.4}", r.rho)).collect();
    (increasing && last > 0.95 && bounds, format!("rho_N = [{}]", list.join(", ")))
}

fn counting_checks() -> Outcome {
    let mut ok = true;
    // sphere sizes against explicit enumeration
    for (name, base) in [("single_edge", "a"), ("biregular_2_3", "a"), ("biregular_2_3", "b"), ("biregular_3_3", "a")] {
        let g = load(name);
        let b = g.vertex(base).unwrap();
        let params = BiregularParams::from_graph(&g, b).unwrap();
        let ball = indexed_graph::build_cover_ball(&g, b, 12, 5_000_000).unwrap();
        let sizes = ball.sphere_sizes();
        for j in 0..=6u32 {
            ok &= counting::sphere_size(params, j) == sizes[2 * j as usize] as u128;
        }
    }
    // oracle against the cover ball
    for name in FIXTURES {
        let g = load(name);
        let orders = indexed_graph::default_orders(&g).unwrap();
        let f = Potential::zero(&g);
        let base = g.order_base;
        let oracle = counting::orbit_oracle(&g, &orders, &f, base, 4, None).unwrap();
        let ball = indexed_graph::build_cover_ball(&g, base, 4, 1_000_000).unwrap();
        let counts = ball.label_counts();
        let nb = orders.vertex_f64(base);
        for (n, c) in counts.iter().enumerate() {
            let lifts = c.get(&g.vertices[base]).copied().unwrap_or(0) as f64;
            ok &= oracle.per_length[n] == lifts * nb;
        }
    }
    let g = load("single_edge");
    let gd = gibbs::gibbs_data(&g, &Potential::zero(&g)).unwrap();
    let orders = indexed_graph::default_orders(&g).unwrap();
    let rc = counting::renewal_constant(&g, &orders, &gd.potential, g.order_base, None).unwrap();
    let report = counting::error_decay_report(&g, &gd, &orders, g.order_base, None, 25, 25).unwrap();
    let row = &report.rows[0];
    let dev = (row.oracle * (-2.0 * 25.0 * gd.delta).exp() - 6.0).abs();
    ok &= rc.exact.as_deref() == Some("6") && dev <= 1e-9;
    (ok, format!("C* = {}, |N(50) e^(-50 delta) - 6| = {dev:.1e}", rc.exact.unwrap_or_default()))
}

fn main_terms() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for name in ["single_edge", "biregular_2_3", "biregular_2_4", "biregular_4_4"] {
        let g = load(name);
        let gd = gibbs::gibbs_data(&g, &Potential::zero(&g)).unwrap();
        let orders = indexed_graph::default_orders(&g).unwrap();
        let base = g.order_base;
        let params = BiregularParams::from_graph(&g, base).unwrap();
        let report = counting::error_decay_report(&g, &gd, &orders, base, Some(params), 10, 25).unwrap();
        let var = report.ratio_variation().unwrap();
        let want = (params.qd as f64 + 1.0) / params.qd as f64;
        let cr = report.constant_ratio.unwrap();
        ok &= var <= 1e-6 && (cr - want).abs() <= 1e-9;
        notes.push(format!("{name}: variation {var:.1e}, ball/shadow ratio {cr:.6}"));
    }
    (ok, notes.join("; "))
}

fn cusp_bound() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, _, _) in CUSPIDAL {
        let g = load(name);
        let f = Potential::zero(&g);
        let delta = gibbs::critical_exponent(&g, &f).unwrap();
        let bound = gibbs::cusp_exponent_bound(&g, &f, 0).unwrap();
        ok &= delta - bound > 1e-6;
        notes.push(format!("{name}: {delta:.4} > {bound:.4}"));
    }
    (ok, notes.join("; "))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("critical exponent", critical_exponent),
        ("markov property", markov_property),
        ("closed-form transitions", closed_form_transitions),
        ("taboo machinery", taboo_machinery),
        ("drift certificates", wsg_certificates),
        ("mixing rate", mixing),
        ("degradation probe", degradation),
        ("counting", counting_checks),
        ("main-term consistency", main_terms),
        ("cusp bound", cusp_bound),
    ];
    println!();
    let mut failed = Vec::new();
    for (k, (name, f)) in criteria.iter().enumerate() {
        let (pass, detail) = f();
        println!("{} {:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" }, k + 1);
        if !pass {
            failed.push(k + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
