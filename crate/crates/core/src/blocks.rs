//! Splitting function bodies that exceed a size budget into contiguous
//! blocks at syntactic boundaries.
//!
//! The body is parsed into a statement tree. Pieces over budget are
//! decomposed into their children (if/else arms, switch case groups, loop
//! body statements, compound statement members) until every piece fits or
//! cannot be split further; adjacent pieces are then merged greedily while
//! the merged piece still fits. Blocks always tile the body exactly.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::lex::{self, TokKind, Token};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    IfElse,
    SwitchCase,
    LoopBody,
    SequentialChunk,
}

impl BoundaryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundaryKind::IfElse => "if_else",
            BoundaryKind::SwitchCase => "switch_case",
            BoundaryKind::LoopBody => "loop_body",
            BoundaryKind::SequentialChunk => "sequential_chunk",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub index: usize,
    pub kind: BoundaryKind,
    /// Byte range within the function body.
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Debug, Clone)]
struct Node {
    lo: usize,
    hi: usize,
    /// Kind of this statement when it appears at the top level.
    own: BoundaryKind,
    /// Kind assigned to pieces produced by splitting this node.
    split: BoundaryKind,
    children: Vec<Node>,
}

impl Node {
    fn leaf(lo: usize, hi: usize) -> Node {
        Node {
            lo,
            hi,
            own: BoundaryKind::SequentialChunk,
            split: BoundaryKind::SequentialChunk,
            children: Vec::new(),
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    toks: Vec<Token>,
}

impl<'a> Parser<'a> {
    fn text(&self, i: usize) -> &'a str {
        self.toks[i].text(self.src)
    }

    fn is(&self, i: usize, s: &str) -> bool {
        i < self.toks.len() && self.toks[i].kind == TokKind::Punct && self.text(i) == s
    }

    fn kw(&self, i: usize, s: &str) -> bool {
        i < self.toks.len() && self.toks[i].kind == TokKind::Ident && self.text(i) == s
    }

    fn matching(&self, i: usize) -> Option<usize> {
        lex::matching(self.src, &self.toks, i)
    }

    /// Statements in tokens `[a, b)`.
    fn list(&self, mut a: usize, b: usize) -> Option<Vec<Node>> {
        let mut out = Vec::new();
        while a < b {
            let (node, next) = self.stmt(a, b)?;
            out.push(node);
            a = next;
        }
        Some(out)
    }

    /// Children of a statement body: the members of a compound, or the statement itself.
    fn body_children(&self, body: Node, was_compound: bool) -> Vec<Node> {
        if was_compound && !body.children.is_empty() {
            body.children
        } else {
            alloc::vec![body]
        }
    }

    fn paren_after(&self, i: usize) -> Option<usize> {
        if self.is(i + 1, "(") {
            self.matching(i + 1)
        } else {
            None
        }
    }

    /// Parse one statement starting at token `i`, bounded by `limit`.
    /// Returns the node and the index of the next token.
    fn stmt(&self, i: usize, limit: usize) -> Option<(Node, usize)> {
        let t = self.toks[i];
        if t.kind == TokKind::Directive {
            return Some((Node::leaf(t.start, t.end), i + 1));
        }
        let s = self.text(i);
        if t.kind == TokKind::Punct && s == "{" {
            let close = self.matching(i)?;
            if close >= limit {
                return None;
            }
            let children = self.list(i + 1, close)?;
            let mut n = Node::leaf(t.start, self.toks[close].end);
            n.children = children;
            return Some((n, close + 1));
        }
        if t.kind == TokKind::Ident {
            match s {
                "if" => return self.if_chain(i, limit),
                "switch" => {
                    let cond = self.paren_after(i)?;
                    let (body, next) = self.stmt(cond + 1, limit)?;
                    let compound = self.is(cond + 1, "{");
                    let mut n = Node::leaf(t.start, body.hi);
                    n.own = BoundaryKind::SwitchCase;
                    n.split = BoundaryKind::SwitchCase;
                    n.children = if compound {
                        self.case_groups(body.children)
                    } else {
                        alloc::vec![body]
                    };
                    return Some((n, next));
                }
                "while" | "for" => {
                    let cond = self.paren_after(i)?;
                    if cond + 1 >= limit {
                        return None;
                    }
                    let compound = self.is(cond + 1, "{");
                    let (body, next) = self.stmt(cond + 1, limit)?;
                    let mut n = Node::leaf(t.start, body.hi);
                    n.own = BoundaryKind::LoopBody;
                    n.split = BoundaryKind::LoopBody;
                    n.children = self.body_children(body, compound);
                    return Some((n, next));
                }
                "do" => {
                    if i + 1 >= limit {
                        return None;
                    }
                    let compound = self.is(i + 1, "{");
                    let (body, next) = self.stmt(i + 1, limit)?;
                    if !self.kw(next, "while") {
                        return None;
                    }
                    let cond = self.paren_after(next)?;
                    let mut end = cond;
                    if self.is(cond + 1, ";") {
                        end = cond + 1;
                    }
                    let mut n = Node::leaf(t.start, self.toks[end].end);
                    n.own = BoundaryKind::LoopBody;
                    n.split = BoundaryKind::LoopBody;
                    n.children = self.body_children(body, compound);
                    return Some((n, end + 1));
                }
                "case" | "default" => {
                    let mut j = i + 1;
                    let mut depth = 0i32;
                    while j < limit {
                        match self.text(j) {
                            "(" | "[" => depth += 1,
                            ")" | "]" => depth -= 1,
                            ":" if depth == 0 => break,
                            _ => {}
                        }
                        j += 1;
                    }
                    if j >= limit {
                        return None;
                    }
                    return Some((Node::leaf(t.start, self.toks[j].end), j + 1));
                }
                _ => {}
            }
            if self.is(i + 1, ":") && !lex::is_keyword(s) {
                return Some((Node::leaf(t.start, self.toks[i + 1].end), i + 2));
            }
        }
        // expression or declaration statement
        let mut j = i;
        while j < limit {
            let tj = self.toks[j];
            if tj.kind == TokKind::Punct {
                match self.text(j) {
                    ";" => return Some((Node::leaf(t.start, tj.end), j + 1)),
                    "(" | "[" | "{" => {
                        j = self.matching(j)?;
                        if j >= limit {
                            return None;
                        }
                    }
                    "}" | ")" | "]" => return None,
                    _ => {}
                }
            } else if tj.kind == TokKind::Directive && j > i {
                break;
            }
            j += 1;
        }
        // no terminator before the end of the enclosing block (macro statement)
        let last = j - 1;
        Some((Node::leaf(t.start, self.toks[last].end), j))
    }

    fn if_chain(&self, i: usize, limit: usize) -> Option<(Node, usize)> {
        let mut arms = Vec::new();
        let mut arm_start = i;
        let mut kw = i;
        let next;
        loop {
            let cond = self.paren_after(kw)?;
            if cond + 1 >= limit {
                return None;
            }
            let compound = self.is(cond + 1, "{");
            let (body, after) = self.stmt(cond + 1, limit)?;
            let mut arm = Node::leaf(self.toks[arm_start].start, body.hi);
            arm.own = BoundaryKind::IfElse;
            arm.split = BoundaryKind::IfElse;
            arm.children = self.body_children(body, compound);
            arms.push(arm);
            if after < limit && self.kw(after, "else") {
                if self.kw(after + 1, "if") {
                    arm_start = after;
                    kw = after + 1;
                    continue;
                }
                if after + 1 >= limit {
                    return None;
                }
                let compound = self.is(after + 1, "{");
                let (body, after2) = self.stmt(after + 1, limit)?;
                let mut arm = Node::leaf(self.toks[after].start, body.hi);
                arm.own = BoundaryKind::IfElse;
                arm.split = BoundaryKind::IfElse;
                arm.children = self.body_children(body, compound);
                arms.push(arm);
                next = after2;
            } else {
                next = after;
            }
            break;
        }
        let mut n = Node::leaf(self.toks[i].start, arms.last()?.hi);
        n.own = BoundaryKind::IfElse;
        n.split = BoundaryKind::IfElse;
        n.children = arms;
        Some((n, next))
    }

    /// Group switch body statements so each group starts at a case label.
    fn case_groups(&self, stmts: Vec<Node>) -> Vec<Node> {
        let mut groups: Vec<Node> = Vec::new();
        for st in stmts {
            let label = {
                let txt = &self.src[st.lo..st.hi];
                (txt.starts_with("case") || txt.starts_with("default"))
                    && txt.trim_end().ends_with(':')
            };
            match groups.last_mut() {
                Some(g) if !label => {
                    g.hi = st.hi;
                    g.children.push(st);
                }
                _ => {
                    let mut g = Node::leaf(st.lo, st.hi);
                    g.own = BoundaryKind::SwitchCase;
                    g.split = BoundaryKind::SwitchCase;
                    g.children.push(st);
                    groups.push(g);
                }
            }
        }
        groups
    }
}

struct Leaf {
    lo: usize,
    hi: usize,
    kind: BoundaryKind,
}

fn split_node(node: &Node, lo: usize, hi: usize, kind: BoundaryKind, budget: usize, out: &mut Vec<Leaf>) {
    if hi - lo <= budget || node.children.is_empty() {
        if hi - lo > budget {
            log::warn!("statement of {} bytes exceeds the block budget of {budget}", hi - lo);
        }
        out.push(Leaf { lo, hi, kind });
        return;
    }
    let n = node.children.len();
    for (i, child) in node.children.iter().enumerate() {
        let clo = if i == 0 { lo } else { child.lo };
        let chi = if i + 1 == n { hi } else { node.children[i + 1].lo };
        split_node(child, clo, chi, node.split, budget, out);
    }
}

fn top_split(root: &Node, len: usize, budget: usize) -> Vec<Leaf> {
    let mut leaves = Vec::new();
    let n = root.children.len();
    for (i, child) in root.children.iter().enumerate() {
        let clo = if i == 0 { 0 } else { child.lo };
        let chi = if i + 1 == n { len } else { root.children[i + 1].lo };
        split_node(child, clo, chi, child.own, budget, &mut leaves);
    }
    leaves
}

fn merge(leaves: Vec<Leaf>, budget: usize) -> Vec<(usize, usize, BoundaryKind)> {
    let mut out: Vec<(usize, usize, Vec<Leaf>)> = Vec::new();
    for leaf in leaves {
        match out.last_mut() {
            Some((lo, hi, parts)) if leaf.hi - *lo <= budget => {
                *hi = leaf.hi;
                parts.push(leaf);
            }
            _ => out.push((leaf.lo, leaf.hi, alloc::vec![leaf])),
        }
    }
    out.into_iter()
        .map(|(lo, hi, parts)| {
            let first = parts[0].kind;
            let kind = if parts.iter().all(|p| p.kind == first) {
                first
            } else {
                // the kind of the largest piece, earliest on ties
                let mut best = &parts[0];
                for p in &parts[1..] {
                    if p.hi - p.lo > best.hi - best.lo {
                        best = p;
                    }
                }
                best.kind
            };
            (lo, hi, kind)
        })
        .collect()
}

/// Line-based fallback when the body cannot be parsed as balanced C.
fn split_lines(body: &str, budget: usize) -> Vec<(usize, usize, BoundaryKind)> {
    let mut out = Vec::new();
    let mut lo = 0;
    let mut hi = 0;
    for line in body.split_inclusive('\n') {
        let end = hi + line.len();
        if end - lo > budget && hi > lo {
            out.push((lo, hi, BoundaryKind::SequentialChunk));
            lo = hi;
        }
        hi = end;
    }
    if hi > lo || out.is_empty() {
        out.push((lo, hi, BoundaryKind::SequentialChunk));
    }
    out
}

/// Split a function definition `body` into blocks of at most `budget` bytes
/// where the syntax allows. Concatenating the block texts in order yields
/// `body` exactly.
pub fn split_function_blocks(body: &str, budget: usize) -> Vec<Block> {
    let budget = budget.max(1);
    let ranges = if body.len() <= budget {
        alloc::vec![(0, body.len(), BoundaryKind::SequentialChunk)]
    } else {
        match parse_root(body) {
            Some(root) if !root.children.is_empty() => merge(top_split(&root, body.len(), budget), budget),
            _ => {
                log::warn!("function body not parseable into statements; splitting by lines");
                split_lines(body, budget)
            }
        }
    };
    ranges
        .into_iter()
        .enumerate()
        .map(|(index, (start, end, kind))| Block { index, kind, start, end, text: body[start..end].into() })
        .collect()
}

/// Statements of the outermost compound of a function definition.
fn parse_root(body: &str) -> Option<Node> {
    let p = Parser { src: body, toks: lex::tokenize(body) };
    let mut depth = 0i32;
    let mut open = None;
    for (i, t) in p.toks.iter().enumerate() {
        if t.kind != TokKind::Punct {
            continue;
        }
        match t.text(body) {
            "(" | "[" => depth += 1,
            ")" | "]" => depth -= 1,
            "{" if depth == 0 => {
                open = Some(i);
                break;
            }
            _ => {}
        }
    }
    let open = open?;
    let close = p.matching(open)?;
    let children = p.list(open + 1, close)?;
    let mut root = Node::leaf(0, body.len());
    root.children = children;
    Some(root)
}

const SUMMARY_PREFIX: &str = "/* BLOCK ";

/// Render a prior-block summary as a one-line C comment.
pub fn block_summary_comment(index: usize, summary: &str) -> String {
    let flat = summary.replace("*/", "* /").replace(['\n', '\r'], " ");
    alloc::format!("{SUMMARY_PREFIX}{index}: {flat} */")
}

/// A block's text preceded by one summary comment line per earlier block.
pub fn with_prior_summaries(text: &str, prior: &[String]) -> String {
    let mut out = String::new();
    for (i, s) in prior.iter().enumerate() {
        out.push_str(&block_summary_comment(i, s));
        out.push('\n');
    }
    out.push_str(text);
    out
}

/// Inverse of [`with_prior_summaries`]: drop the leading summary lines,
/// which are numbered consecutively from 0.
pub fn strip_block_summaries(text: &str) -> &str {
    let mut rest = text;
    let mut next = 0usize;
    while let Some(nl) = rest.find('\n') {
        let line = &rest[..nl];
        let tag = alloc::format!("{SUMMARY_PREFIX}{next}: ");
        if !(line.starts_with(&tag) && line.ends_with(" */")) {
            break;
        }
        rest = &rest[nl + 1..];
        next += 1;
    }
    rest
}
