//! Call graph over extracted functions with external stubs, strongly
//! connected components and a deterministic callee-first order.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::extract::{CallsiteRecord, FunctionRecord};
use crate::libattrs::LibAttrs;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scc {
    /// Function keys, sorted.
    pub members: Vec<String>,
    pub is_recursive: bool,
    /// 0 for components with no callees; otherwise one more than the
    /// largest rank among callee components.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnalysisOrder {
    pub sccs: Vec<Scc>,
}

impl AnalysisOrder {
    pub fn functions(&self) -> impl Iterator<Item = &str> {
        self.sccs.iter().flat_map(|s| s.members.iter().map(String::as_str))
    }

    pub fn max_rank(&self) -> usize {
        self.sccs.iter().map(|s| s.rank).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Default)]
pub struct CallGraph {
    /// Keyed by function key: the bare name, or `file::name` for names
    /// defined in more than one file.
    pub nodes: BTreeMap<String, FunctionRecord>,
    pub edges: BTreeMap<String, BTreeSet<String>>,
    pub callsites: Vec<CallsiteRecord>,
    /// Names defined in more than one file.
    pub collisions: Vec<String>,
}

pub fn qualified_key(file: &str, name: &str) -> String {
    format!("{file}::{name}")
}

impl CallGraph {
    pub fn build(functions: Vec<FunctionRecord>, callsites: Vec<CallsiteRecord>, attrs: &LibAttrs) -> Self {
        let mut by_name: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for f in &functions {
            by_name.entry(f.name.clone()).or_default().push(f.file_path.clone());
        }
        let collisions: Vec<String> = by_name
            .iter()
            .filter(|(_, files)| files.len() > 1)
            .map(|(n, _)| n.clone())
            .collect();
        for n in &collisions {
            log::warn!("function `{n}` is defined in several files; keying by file");
        }
        let key_of = |file: &str, name: &str| -> String {
            if by_name.get(name).is_some_and(|v| v.len() > 1) {
                qualified_key(file, name)
            } else {
                name.to_string()
            }
        };
        let mut nodes = BTreeMap::new();
        for mut f in functions {
            let k = key_of(&f.file_path, &f.name);
            for a in attrs.get(&f.name) {
                if a == crate::libattrs::NORETURN {
                    f.lib_attrs.insert(a);
                }
            }
            if nodes.contains_key(&k) {
                log::warn!("duplicate definition of `{k}` ignored");
                continue;
            }
            nodes.insert(k, f);
        }
        let mut edges: BTreeMap<String, BTreeSet<String>> = nodes.keys().map(|k| (k.clone(), BTreeSet::new())).collect();
        let mut stubs = BTreeMap::new();
        for c in &callsites {
            let caller = key_of(&c.file_path, &c.caller);
            let Some(callee) = &c.callee_name else { continue };
            let target = match by_name.get(callee) {
                Some(files) if files.len() > 1 => {
                    if files.iter().any(|f| f == &c.file_path) {
                        qualified_key(&c.file_path, callee)
                    } else {
                        let mut sorted = files.clone();
                        sorted.sort();
                        log::warn!("call to `{callee}` from `{caller}` is ambiguous; using {}", sorted[0]);
                        qualified_key(&sorted[0], callee)
                    }
                }
                Some(_) => callee.clone(),
                None => {
                    stubs
                        .entry(callee.clone())
                        .or_insert_with(|| FunctionRecord::external(callee, attrs.get(callee)));
                    callee.clone()
                }
            };
            edges.entry(caller).or_default().insert(target);
        }
        for (k, stub) in stubs {
            edges.entry(k.clone()).or_default();
            nodes.insert(k, stub);
        }
        CallGraph { nodes, edges, callsites, collisions }
    }

    /// Key under which the function named `name` defined in `file` is stored.
    pub fn key_for(&self, file: &str, name: &str) -> String {
        let q = qualified_key(file, name);
        if self.nodes.contains_key(&q) {
            q
        } else {
            name.to_string()
        }
    }

    pub fn get(&self, key: &str) -> Option<&FunctionRecord> {
        self.nodes.get(key)
    }

    pub fn callees(&self, key: &str) -> impl Iterator<Item = &str> {
        self.edges.get(key).into_iter().flat_map(|s| s.iter().map(String::as_str))
    }

    pub fn callers(&self, key: &str) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|(_, cs)| cs.contains(key))
            .map(|(k, _)| k.as_str())
            .collect()
    }

    /// Callsites whose caller is the function stored under `key`.
    pub fn callsites_of(&self, key: &str) -> Vec<&CallsiteRecord> {
        let Some(f) = self.nodes.get(key) else { return Vec::new() };
        self.callsites
            .iter()
            .filter(|c| c.caller == f.name && c.file_path == f.file_path)
            .collect()
    }

    /// Key of the callee a callsite resolves to, if direct.
    pub fn resolve(&self, c: &CallsiteRecord) -> Option<String> {
        let name = c.callee_name.as_ref()?;
        let q = qualified_key(&c.file_path, name);
        if self.nodes.contains_key(&q) {
            return Some(q);
        }
        if self.nodes.contains_key(name) {
            return Some(name.clone());
        }
        let caller = self.key_for(&c.file_path, &c.caller);
        self.callees(&caller)
            .find(|k| k.rsplit("::").next() == Some(name.as_str()))
            .map(String::from)
    }

    pub fn is_stub(&self, key: &str) -> bool {
        self.nodes.get(key).is_some_and(|f| f.is_external)
    }

    /// Strongly connected components (Tarjan), each sorted, in discovery order.
    pub fn sccs(&self) -> Vec<Vec<String>> {
        let keys: Vec<&String> = self.nodes.keys().collect();
        let index_of: BTreeMap<&str, usize> = keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
        let n = keys.len();
        let adj: Vec<Vec<usize>> = keys
            .iter()
            .map(|k| self.callees(k).filter_map(|c| index_of.get(c).copied()).collect())
            .collect();
        tarjan(n, &adj)
            .into_iter()
            .map(|comp| {
                let mut names: Vec<String> = comp.into_iter().map(|i| keys[i].clone()).collect();
                names.sort();
                names
            })
            .collect()
    }

    /// Components ordered so that every callee component precedes its
    /// callers. Ties are broken by putting stubs first, then by the smallest
    /// member key.
    pub fn analysis_order(&self) -> AnalysisOrder {
        let comps = self.sccs();
        let mut comp_of: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, c) in comps.iter().enumerate() {
            for m in c {
                comp_of.insert(m.as_str(), i);
            }
        }
        let m = comps.len();
        // deps[i]: components that i calls (excluding itself)
        let mut deps: Vec<BTreeSet<usize>> = alloc::vec![BTreeSet::new(); m];
        let mut rdeps: Vec<BTreeSet<usize>> = alloc::vec![BTreeSet::new(); m];
        let mut self_loop = alloc::vec![false; m];
        for (caller, callees) in &self.edges {
            let Some(&ci) = comp_of.get(caller.as_str()) else { continue };
            for callee in callees {
                let Some(&cj) = comp_of.get(callee.as_str()) else { continue };
                if ci == cj {
                    if caller == callee || comps[ci].len() > 1 {
                        self_loop[ci] = true;
                    }
                } else {
                    deps[ci].insert(cj);
                    rdeps[cj].insert(ci);
                }
            }
        }
        let sort_key = |i: usize| (!comps[i].iter().all(|k| self.is_stub(k)), comps[i][0].clone());
        let mut remaining: Vec<usize> = deps.iter().map(BTreeSet::len).collect();
        let mut ready: BTreeSet<((bool, String), usize)> =
            (0..m).filter(|&i| remaining[i] == 0).map(|i| (sort_key(i), i)).collect();
        let mut rank = alloc::vec![0usize; m];
        let mut out = Vec::with_capacity(m);
        while let Some(first) = ready.iter().next().cloned() {
            ready.remove(&first);
            let i = first.1;
            rank[i] = deps[i].iter().map(|&d| rank[d] + 1).max().unwrap_or(0);
            out.push(Scc {
                members: comps[i].clone(),
                is_recursive: comps[i].len() > 1 || self_loop[i],
                rank: rank[i],
            });
            for &r in &rdeps[i] {
                remaining[r] -= 1;
                if remaining[r] == 0 {
                    ready.insert((sort_key(r), r));
                }
            }
        }
        AnalysisOrder { sccs: out }
    }

    /// `changed` plus every transitive caller of a function in it.
    pub fn affected_functions<'a>(&self, changed: impl IntoIterator<Item = &'a str>) -> BTreeSet<String> {
        let mut reverse: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (caller, callees) in &self.edges {
            for c in callees {
                reverse.entry(c.as_str()).or_default().push(caller.as_str());
            }
        }
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<&str> = VecDeque::new();
        for c in changed {
            if seen.insert(c.to_string()) {
                queue.push_back(c);
            }
        }
        while let Some(k) = queue.pop_front() {
            for &caller in reverse.get(k).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(caller.to_string()) {
                    queue.push_back(caller);
                }
            }
        }
        seen
    }
}

/// Iterative Tarjan over an adjacency list; components come out callee-first.
pub fn tarjan(n: usize, adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    const UNSEEN: usize = usize::MAX;
    let mut index = alloc::vec![UNSEEN; n];
    let mut low = alloc::vec![0usize; n];
    let mut on_stack = alloc::vec![false; n];
    let mut stack = Vec::new();
    let mut out = Vec::new();
    let mut next = 0usize;
    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        // (node, position in its adjacency list)
        let mut work: Vec<(usize, usize)> = alloc::vec![(root, 0)];
        index[root] = next;
        low[root] = next;
        next += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&mut (v, ref mut pos)) = work.last_mut() {
            if *pos < adj[v].len() {
                let w = adj[v][*pos];
                *pos += 1;
                if index[w] == UNSEEN {
                    index[w] = next;
                    low[w] = next;
                    next += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    work.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            work.pop();
            if let Some(&(parent, _)) = work.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                let mut comp = Vec::new();
                loop {
                    let w = stack.pop().expect("tarjan stack");
                    on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                out.push(comp);
            }
        }
    }
    out
}
