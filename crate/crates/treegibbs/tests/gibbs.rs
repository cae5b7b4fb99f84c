mod common;

use common::{close, load, single_edge};
use proptest::prelude::*;
use treegibbs::gibbs::{self, Direction, Potential};
use treegibbs::indexed_graph::IndexedGraph;

fn ray_graph(period: &str) -> IndexedGraph {
    let s = format!(
        r#"{{"vertices":["a","b"],"edges":[
            {{"id":"c","rev":"cbar","from":"a","to":"b","index":3}},
            {{"id":"cbar","rev":"c","from":"b","to":"a","index":3}}],
            "tails":[{{"attach":"a","period":{period}}}]}}"#
    );
    IndexedGraph::from_json_str(&s).unwrap()
}

#[test]
fn transfer_matrix_of_single_edge() {
    let g = single_edge(3, 3);
    let (_, t) = gibbs::transfer_matrix(&g, &Potential::zero(&g), 0.0, 0);
    assert_eq!(t.as_slice(), &[0.0, 2.0, 2.0, 0.0]);
    let (_, t1) = gibbs::transfer_matrix(&g, &Potential::zero(&g), 0.7, 0);
    assert!(close(t1[(0, 1)], 2.0 * (-0.7f64).exp(), 1e-15));
}

#[test]
fn critical_exponents_of_lattices() {
    let g = single_edge(3, 3);
    assert!(close(gibbs::critical_exponent(&g, &Potential::zero(&g)).unwrap(), 2f64.ln(), 1e-12));
    for (r, s) in [(2.0f64, 4.0), (4.0, 4.0), (2.0, 3.0)] {
        let g = single_edge(s as u64 + 1, r as u64 + 1);
        let d = gibbs::critical_exponent(&g, &Potential::zero(&g)).unwrap();
        assert!(close(d, 0.5 * (r * s).ln(), 1e-12));
    }
}

#[test]
fn shadow_of_three_regular_lattice() {
    let g = single_edge(3, 3);
    let gd = gibbs::gibbs_data(&g, &Potential::zero(&g)).unwrap();
    for u in gd.u_plus.core.iter().chain(&gd.u_minus.core) {
        assert!(close(*u, 2.0 / 3.0, 1e-12));
    }
    assert!(close(gd.normalization.plus_mass, 1.0, 1e-12));
}

#[test]
fn shadow_residuals_are_small_on_fixtures() {
    for name in ["triangle", "double_edge", "cusp_2_4", "regular_ray", "core_with_tail"] {
        let g = load(name);
        let gd = gibbs::gibbs_data(&g, &Potential::zero(&g)).unwrap();
        assert!(gd.meta.residual_plus < 1e-12 && gd.meta.residual_minus < 1e-12, "{name}");
        assert!(gd.u_plus.core.iter().all(|u| *u > 0.0), "{name}");
    }
}

#[test]
fn funnel_entry_has_zero_shadow() {
    let s = r#"{"vertices":["a","b","f"],"edges":[
        {"id":"e","rev":"ebar","from":"a","to":"b","index":3},
        {"id":"ebar","rev":"e","from":"b","to":"a","index":3},
        {"id":"l","rev":"lbar","from":"a","to":"a","index":2},
        {"id":"lbar","rev":"l","from":"a","to":"a","index":2},
        {"id":"out","rev":"in","from":"b","to":"f","index":1},
        {"id":"in","rev":"out","from":"f","to":"b","index":2}],
        "funnels":[{"entry_edge":"out","branching":[2]}]}"#;
    let g = IndexedGraph::from_json_str(s).unwrap();
    let f = Potential::zero(&g);
    let delta = gibbs::critical_exponent(&g, &f).unwrap();
    let u = gibbs::shadow_vector(&g, &f, delta, Direction::Forward).unwrap();
    assert_eq!(u.core[g.edge("out").unwrap()], 0.0);
    assert!(u.core[g.edge("e").unwrap()] > 0.0);
}

#[test]
fn cuspidal_downward_recurrence() {
    let g = load("cusp_2_4");
    let gd = gibbs::gibbs_data(&g, &Potential::zero(&g)).unwrap();
    let levels = gd.u_plus.rays[0].as_ref().unwrap().levels(12);
    let prof = gibbs::ray_profile(&g, &gd.potential, 0);
    for n in 2..=12 {
        let r_prev = prof.at(n - 1).ie as f64;
        assert!(close(levels[n - 1].1, r_prev * (-gd.delta).exp() * levels[n - 2].1, 1e-12));
    }
}

#[test]
fn cocycle_identities() {
    let g = load("double_edge");
    let f = Potential::constant(&g, 0.3);
    let e1 = g.edge("e1").unwrap();
    let e2b = g.edge("e2bar").unwrap();
    let e2 = g.edge("e2").unwrap();
    assert_eq!(gibbs::gibbs_cocycle(&g, &f, &[e1], &[e1]).unwrap(), 0.0);
    // x reaches v in one step, y in three: beta = 1 - 3
    let c = gibbs::gibbs_cocycle(&g, &f, &[e1], &[e2, e2b, e1]).unwrap();
    assert!(close(c, -0.3 * (1.0 - 3.0), 1e-15));
    let cn = gibbs::gibbs_cocycle_normalized(&g, &f, 0.5, &[e1], &[e2, e2b, e1]).unwrap();
    assert!(close(cn, c + 0.5 * (1.0 - 3.0), 1e-15));
    assert!(gibbs::gibbs_cocycle(&g, &f, &[e1], &[e2b]).is_err());
}

#[test]
fn poincare_partial_sums() {
    let g = load("single_edge");
    let f = Potential::zero(&g);
    let at_zero = gibbs::poincare_partial_sum(&g, &f, 1.0, 0, 0).unwrap();
    assert_eq!(at_zero, vec![3.0]);
    let conv = gibbs::poincare_partial_sum(&g, &f, 4f64.ln(), 30, 0).unwrap();
    // increments 3*2^{2k-1} 4^{-2k}... shrink by 1/4 every two steps
    let inc = |n: usize| conv[n] - conv[n - 2];
    assert!(close(inc(30) / inc(28), 0.25, 1e-12));
    let div = gibbs::poincare_partial_sum(&g, &f, 2f64.ln(), 40, 0).unwrap();
    let step = div[40] - div[38];
    assert!(close(step, 4.5, 1e-9) && close(div[38] - div[36], 4.5, 1e-9));
}

#[test]
fn cusp_bounds_of_model_rays() {
    let g = ray_graph("[[2,1],[4,1]]");
    let b = gibbs::cusp_exponent_bound(&g, &Potential::zero(&g), 0).unwrap();
    assert!(close(b, 0.25 * 8f64.ln(), 1e-14));
    let g = ray_graph("[[3,1]]");
    let b = gibbs::cusp_exponent_bound(&g, &Potential::zero(&g), 0).unwrap();
    assert!(close(b, 0.5 * 3f64.ln(), 1e-14));
    let g = ray_graph("[[1,1]]");
    assert_eq!(gibbs::cusp_exponent_bound(&g, &Potential::zero(&g), 0).unwrap(), f64::NEG_INFINITY);
    let g = load("regular_ray");
    assert!(gibbs::cusp_exponent_bound(&g, &Potential::zero(&g), 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn constant_potential_shifts_delta(c in -1.0f64..1.0) {
        for name in ["triangle", "cusp_2_2"] {
            let g = load(name);
            let d0 = gibbs::critical_exponent(&g, &Potential::zero(&g)).unwrap();
            let dc = gibbs::critical_exponent(&g, &Potential::constant(&g, c)).unwrap();
            prop_assert!(close(dc, d0 + c, 1e-9), "{} {} {}", name, dc, d0 + c);
        }
    }

    #[test]
    fn constant_potential_equals_shifted_s(c in -1.0f64..1.0, s in 0.0f64..2.0) {
        let g = load("double_edge");
        let (_, a) = gibbs::transfer_matrix(&g, &Potential::constant(&g, c), s, 0);
        let (_, b) = gibbs::transfer_matrix(&g, &Potential::zero(&g), s - c, 0);
        let (_, z) = gibbs::transfer_matrix(&g, &Potential::zero(&g), s, 0);
        for k in 0..a.len() {
            prop_assert!(close(a[k], b[k], 1e-13));
            prop_assert!(close(b[k], z[k] * c.exp(), 1e-13));
        }
    }

    #[test]
    fn biregular_delta(r in 1u64..8, s in 1u64..8) {
        prop_assume!(r * s > 1);
        let g = single_edge(s + 1, r + 1);
        let d = gibbs::critical_exponent(&g, &Potential::zero(&g)).unwrap();
        prop_assert!(close(d, 0.5 * ((r * s) as f64).ln(), 1e-12));
    }
}
