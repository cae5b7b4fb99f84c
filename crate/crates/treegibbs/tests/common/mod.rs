#![allow(dead_code)]

use treegibbs::indexed_graph::IndexedGraph;

pub fn load(name: &str) -> IndexedGraph {
    let path = format!("{}/fixtures/{name}.json", env!("CARGO_MANIFEST_DIR"));
    IndexedGraph::from_json_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// One edge a -> b with i(e) = ie and i(ebar) = ieb.
pub fn single_edge(ie: u64, ieb: u64) -> IndexedGraph {
    let s = format!(
        r#"{{"vertices":["a","b"],"edges":[
            {{"id":"e","rev":"ebar","from":"a","to":"b","index":{ie}}},
            {{"id":"ebar","rev":"e","from":"b","to":"a","index":{ieb}}}]}}"#
    );
    IndexedGraph::from_json_str(&s).unwrap()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
