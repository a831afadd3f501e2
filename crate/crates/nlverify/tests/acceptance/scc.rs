//! Random call graphs against a brute-force mutual-reachability oracle.

use std::collections::{BTreeMap, BTreeSet};

use nlverify_core::extract::{CallsiteRecord, FunctionRecord};
use nlverify_core::libattrs::LibAttrs;
use nlverify_core::CallGraph;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const GRAPHS: usize = 500;
const MAX_NODES: usize = 12;

fn name(i: usize) -> String {
    format!("f{i:02}")
}

fn func(i: usize) -> FunctionRecord {
    FunctionRecord {
        name: name(i),
        signature: format!("void {}(void)", name(i)),
        params: Vec::new(),
        file_path: "g.c".into(),
        line_span: (i + 1, i + 1),
        body: String::new(),
        is_external: false,
        lib_attrs: BTreeSet::new(),
    }
}

fn call(from: usize, to: usize) -> CallsiteRecord {
    CallsiteRecord {
        caller: name(from),
        file_path: "g.c".into(),
        callee_name: Some(name(to)),
        arg_exprs: Vec::new(),
        line: from + 1,
        is_indirect: false,
        span: (0, 0),
    }
}

/// Transitive closure by Floyd-Warshall; `r[i][i]` only via a cycle or self-loop.
fn closure(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut r = vec![vec![false; n]; n];
    for &(a, b) in edges {
        r[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if r[i][k] && r[k][j] {
                    r[i][j] = true;
                }
            }
        }
    }
    r
}

fn one(n: usize, edges: &[(usize, usize)]) -> Result<(), String> {
    let r = closure(n, edges);
    let mut oracle: BTreeSet<Vec<String>> = BTreeSet::new();
    for i in 0..n {
        oracle.insert((0..n).filter(|&j| j == i || (r[i][j] && r[j][i])).map(name).collect());
    }
    let g = CallGraph::build((0..n).map(func).collect(), edges.iter().map(|&(a, b)| call(a, b)).collect(), &LibAttrs::empty());
    let order = g.analysis_order();
    let got: BTreeSet<Vec<String>> = order.sccs.iter().map(|s| s.members.clone()).collect();
    if got != oracle || order.sccs.len() != oracle.len() {
        return Err(format!("partition {got:?} != oracle {oracle:?}"));
    }
    let pos: BTreeMap<&str, usize> = order.sccs.iter().enumerate().flat_map(|(i, s)| s.members.iter().map(move |m| (m.as_str(), i))).collect();
    for &(a, b) in edges {
        let (pa, pb) = (pos[name(a).as_str()], pos[name(b).as_str()]);
        if pa != pb && pb > pa {
            return Err(format!("edge {} -> {} goes from component {pa} to later component {pb}", name(a), name(b)));
        }
    }
    for s in &order.sccs {
        let i: usize = s.members[0][1..].parse().unwrap();
        let recursive = s.members.len() > 1 || r[i][i];
        if s.is_recursive != recursive {
            return Err(format!("{:?}: is_recursive {} but oracle says {recursive}", s.members, s.is_recursive));
        }
    }
    Ok(())
}

pub fn check() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(0x5cc0_0001);
    let mut edge_total = 0;
    for k in 0..GRAPHS {
        let n = rng.gen_range(1..=MAX_NODES);
        let density: f64 = rng.gen_range(0.0..=0.5);
        let edges: Vec<(usize, usize)> = (0..n).flat_map(|a| (0..n).map(move |b| (a, b))).filter(|_| rng.gen_bool(density)).collect();
        edge_total += edges.len();
        one(n, &edges).map_err(|e| format!("graph {k} (n={n}): {e}"))?;
    }
    Ok(format!("{GRAPHS} graphs, {edge_total} edges"))
}
