//! Missing-data DAGs (m-DAGs) with proxies: structure checks, d-separation,
//! missingness classification and the full-law identifiability criterion.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    /// X(1)ᵢ, the true value.
    Counterfactual,
    /// Rᵢ, the observability indicator.
    Indicator,
    /// Xᵢ, the recorded value.
    Proxy,
    /// Wᵢ, the proxy of Rᵢ.
    IndicatorProxy,
    Covariate,
}

impl NodeKind {
    fn keyword(self) -> &'static str {
        match self {
            Self::Counterfactual => "counterfactual",
            Self::Indicator => "indicator",
            Self::Proxy => "proxy",
            Self::IndicatorProxy => "indicator_proxy",
            Self::Covariate => "covariate",
        }
    }

    fn from_keyword(s: &str) -> Option<Self> {
        [Self::Counterfactual, Self::Indicator, Self::Proxy, Self::IndicatorProxy, Self::Covariate]
            .into_iter()
            .find(|k| k.keyword() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    /// Variable index taken from the trailing digits of the name (`R2` → 2);
    /// 0 for covariates.
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum MissClass {
    Mcar,
    Mar,
    Mnar,
}

impl fmt::Display for MissClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mcar => "MCAR",
            Self::Mar => "MAR",
            Self::Mnar => "MNAR",
        })
    }
}

/// Outcome of the full-law identifiability criterion. Indices are the
/// variable numbers from the node names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "verdict")]
pub enum Verdict {
    Identifiable,
    /// Edge X(1)ᵢ → Rᵢ.
    SelfCensoring { indicator: usize },
    /// Structure X(1)ⱼ → Rᵢ ← Rⱼ.
    Colluder { indicator: usize, partner: usize },
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identifiable => f.write_str("identifiable"),
            Self::SelfCensoring { indicator } => write!(f, "self_censoring({indicator})"),
            Self::Colluder { indicator, partner } => write!(f, "colluder({indicator}, {partner})"),
        }
    }
}

/// A validated m-DAG. Edges keep their declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MDag {
    nodes: Vec<Node>,
    edges: Vec<(usize, usize)>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

fn trailing_index(name: &str) -> Option<usize> {
    let digits: String = name.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    digits.chars().rev().collect::<String>().parse().ok()
}

impl MDag {
    /// Builds and validates a graph from typed node names and named edges.
    pub fn new(nodes: &[(&str, NodeKind)], edges: &[(&str, &str)]) -> Result<Self> {
        let mut out = Vec::with_capacity(nodes.len());
        for (name, kind) in nodes {
            if out.iter().any(|n: &Node| n.name == *name) {
                return Err(Error::GraphParse { line: 0, msg: format!("node {name} declared twice") });
            }
            let index = match kind {
                NodeKind::Covariate => 0,
                _ => trailing_index(name).ok_or_else(|| Error::GraphParse {
                    line: 0,
                    msg: format!("node {name} needs a trailing variable number"),
                })?,
            };
            out.push(Node { name: name.to_string(), kind: *kind, index });
        }
        let lookup = |name: &str| {
            out.iter().position(|n| n.name == name).ok_or_else(|| Error::UnknownNode(name.to_string()))
        };
        let mut es = Vec::with_capacity(edges.len());
        for (a, b) in edges {
            let e = (lookup(a)?, lookup(b)?);
            if !es.contains(&e) {
                es.push(e);
            }
        }
        let mut parents = vec![vec![]; out.len()];
        let mut children = vec![vec![]; out.len()];
        for &(a, b) in &es {
            parents[b].push(a);
            children[a].push(b);
        }
        let g = Self { nodes: out, edges: es, parents, children };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        for &(a, b) in &self.edges {
            let (na, nb) = (&self.nodes[a], &self.nodes[b]);
            if nb.kind == NodeKind::Counterfactual && matches!(na.kind, NodeKind::Proxy | NodeKind::Indicator) {
                return Err(Error::ForbiddenEdgeIntoCounterfactual { from: na.name.clone(), to: nb.name.clone() });
            }
        }
        for (v, node) in self.nodes.iter().enumerate() {
            match node.kind {
                NodeKind::Proxy => {
                    let want = [NodeKind::Counterfactual, NodeKind::Indicator];
                    let ok = self.parents[v].len() == 2
                        && want.iter().all(|k| {
                            self.parents[v].iter().any(|&p| self.nodes[p].kind == *k && self.nodes[p].index == node.index)
                        });
                    if !ok {
                        return Err(Error::BadProxyParents {
                            node: node.name.clone(),
                            expected: format!("X(1)_{i}, R{i}", i = node.index),
                        });
                    }
                }
                NodeKind::IndicatorProxy => {
                    let ok = self.parents[v]
                        .iter()
                        .any(|&p| self.nodes[p].kind == NodeKind::Indicator && self.nodes[p].index == node.index);
                    if !ok {
                        return Err(Error::BadIndicatorProxy {
                            node: node.name.clone(),
                            expected: format!("R{}", node.index),
                        });
                    }
                }
                _ => {}
            }
        }
        self.check_acyclic()
    }

    fn check_acyclic(&self) -> Result<()> {
        let n = self.nodes.len();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop_front() {
            seen += 1;
            for &c in &self.children[v] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    queue.push_back(c);
                }
            }
        }
        if seen == n {
            return Ok(());
        }
        let stuck = (0..n).find(|&v| indeg[v] > 0).expect("cycle leaves a node");
        Err(Error::CycleFound(self.nodes[stuck].name.clone()))
    }

    /// Parses the text format:
    ///
    /// ```text
    /// [nodes]
    /// counterfactual: X(1)_1
    /// indicator: R1
    /// proxy: X1
    /// indicator_proxy: W1
    /// covariate: C
    /// [edges]
    /// X(1)_1 -> X1
    /// R1 -> X1
    /// ```
    ///
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut nodes: Vec<(String, NodeKind)> = vec![];
        let mut edges: Vec<(String, String)> = vec![];
        let mut section = "";
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            if line == "[nodes]" || line == "[edges]" {
                section = if line == "[nodes]" { "nodes" } else { "edges" };
                continue;
            }
            let err = |msg: String| Error::GraphParse { line: lineno, msg };
            match section {
                "nodes" => {
                    let (kw, names) = line.split_once(':').ok_or_else(|| err("expected `kind: names`".into()))?;
                    let kind = NodeKind::from_keyword(kw.trim())
                        .ok_or_else(|| err(format!("unknown node kind `{}`", kw.trim())))?;
                    nodes.extend(names.split_whitespace().map(|n| (n.to_string(), kind)));
                }
                "edges" => {
                    let (a, b) = line.split_once("->").ok_or_else(|| err("expected `A -> B`".into()))?;
                    let (a, b) = (a.trim(), b.trim());
                    if a.is_empty() || b.is_empty() || a.contains(char::is_whitespace) || b.contains(char::is_whitespace)
                    {
                        return Err(err(format!("malformed edge `{line}`")));
                    }
                    edges.push((a.to_string(), b.to_string()));
                }
                _ => return Err(err("content before a [nodes] or [edges] header".into())),
            }
        }
        let nodes: Vec<(&str, NodeKind)> = nodes.iter().map(|(n, k)| (n.as_str(), *k)).collect();
        let edges: Vec<(&str, &str)> = edges.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        Self::new(&nodes, &edges)
    }

    /// Text form accepted by [`MDag::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::from("[nodes]\n");
        for kind in [
            NodeKind::Counterfactual,
            NodeKind::Indicator,
            NodeKind::Proxy,
            NodeKind::IndicatorProxy,
            NodeKind::Covariate,
        ] {
            let names: Vec<&str> = self.nodes.iter().filter(|n| n.kind == kind).map(|n| n.name.as_str()).collect();
            if !names.is_empty() {
                s += &format!("{}: {}\n", kind.keyword(), names.join(" "));
            }
        }
        s += "[edges]\n";
        for &(a, b) in &self.edges {
            s += &format!("{} -> {}\n", self.nodes[a].name, self.nodes[b].name);
        }
        s
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Edges as node ids, in declaration order.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_id(&self, name: &str) -> Result<usize> {
        self.nodes.iter().position(|n| n.name == name).ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn ids_of(&self, kind: NodeKind) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&v| self.nodes[v].kind == kind).collect()
    }

    pub fn n_indicators(&self) -> usize {
        self.ids_of(NodeKind::Indicator).len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.children[a].contains(&b)
    }

    /// d-separation of node sets `a` and `b` given `z`, by name.
    pub fn d_separated(&self, a: &[&str], b: &[&str], z: &[&str]) -> Result<bool> {
        let ids = |s: &[&str]| s.iter().map(|n| self.node_id(n)).collect::<Result<Vec<_>>>();
        Ok(self.d_separated_ids(&ids(a)?, &ids(b)?, &ids(z)?))
    }

    pub fn d_separated_ids(&self, a: &[usize], b: &[usize], z: &[usize]) -> bool {
        d_separated_adj(&self.parents, &self.children, a, b, z)
    }
}

/// Bayes-ball reachability: `a` and `b` are d-separated given `z` iff no node
/// of `b` is reachable from `a` along an active trail.
pub fn d_separated_adj(parents: &[Vec<usize>], children: &[Vec<usize>], a: &[usize], b: &[usize], z: &[usize]) -> bool {
    let n = parents.len();
    let mut in_z = vec![false; n];
    for &v in z {
        in_z[v] = true;
    }
    // z together with its ancestors: colliders there are open
    let mut anc_z = in_z.clone();
    let mut stack: Vec<usize> = z.to_vec();
    while let Some(v) = stack.pop() {
        for &p in &parents[v] {
            if !anc_z[p] {
                anc_z[p] = true;
                stack.push(p);
            }
        }
    }
    let mut in_b = vec![false; n];
    for &v in b {
        in_b[v] = true;
    }
    // visited[v][0]: arrived from a child (moving up); [1]: from a parent (moving down)
    let mut visited = vec![[false; 2]; n];
    let mut queue: VecDeque<(usize, usize)> = a.iter().map(|&v| (v, 0)).collect();
    while let Some((v, dir)) = queue.pop_front() {
        if visited[v][dir] {
            continue;
        }
        visited[v][dir] = true;
        if !in_z[v] && in_b[v] {
            return false;
        }
        if dir == 0 {
            if !in_z[v] {
                queue.extend(parents[v].iter().map(|&p| (p, 0)));
                queue.extend(children[v].iter().map(|&c| (c, 1)));
            }
        } else {
            if !in_z[v] {
                queue.extend(children[v].iter().map(|&c| (c, 1)));
            }
            if anc_z[v] {
                queue.extend(parents[v].iter().map(|&p| (p, 0)));
            }
        }
    }
    true
}

/// MCAR if every indicator is d-separated from all counterfactuals with no
/// conditioning, MAR if separated given the covariates, MNAR otherwise.
pub fn classify_missingness(g: &MDag) -> MissClass {
    let xs = g.ids_of(NodeKind::Counterfactual);
    let rs = g.ids_of(NodeKind::Indicator);
    let cs = g.ids_of(NodeKind::Covariate);
    if rs.iter().all(|&r| g.d_separated_ids(&[r], &xs, &[])) {
        MissClass::Mcar
    } else if !cs.is_empty() && rs.iter().all(|&r| g.d_separated_ids(&[r], &xs, &cs)) {
        MissClass::Mar
    } else {
        MissClass::Mnar
    }
}

/// Full-law identifiability: no self-censoring edge and no colluder. Edges into
/// indicators are scanned in declaration order and the first witness is named.
pub fn full_law_identifiable(g: &MDag) -> Verdict {
    for &(a, b) in g.edges() {
        let (na, nb) = (&g.nodes[a], &g.nodes[b]);
        if na.kind != NodeKind::Counterfactual || nb.kind != NodeKind::Indicator {
            continue;
        }
        if na.index == nb.index {
            return Verdict::SelfCensoring { indicator: nb.index };
        }
        let colluding = g.parents[b]
            .iter()
            .any(|&p| g.nodes[p].kind == NodeKind::Indicator && g.nodes[p].index == na.index);
        if colluding {
            return Verdict::Colluder { indicator: nb.index, partner: na.index };
        }
    }
    Verdict::Identifiable
}

/// The example graphs used throughout the documentation and tests.
pub mod catalog {
    use super::MDag;

    /// One indicator, no covariates, no proxy.
    pub const MCAR_BASIC: &str = "\
[nodes]
counterfactual: X(1)_1
indicator: R1
proxy: X1
[edges]
X(1)_1 -> X1
R1 -> X1
";

    /// One indicator whose missingness depends on a covariate.
    pub const MAR_BASIC: &str = "\
[nodes]
counterfactual: X(1)_1
indicator: R1
proxy: X1
covariate: C
[edges]
X(1)_1 -> X1
R1 -> X1
C -> X(1)_1
C -> R1
";

    /// Three indicators over a chain of counterfactuals, with X(1)_1 -> R3 <- R1: a colluder.
    pub const MNAR_CHAIN: &str = "\
[nodes]
counterfactual: X(1)_1 X(1)_2 X(1)_3
indicator: R1 R2 R3
proxy: X1 X2 X3
[edges]
X(1)_1 -> X(1)_2
X(1)_2 -> X(1)_3
R1 -> R2
R3 -> R2
X(1)_1 -> R3
R1 -> R3
X(1)_1 -> X1
R1 -> X1
X(1)_2 -> X2
R2 -> X2
X(1)_3 -> X3
R3 -> X3
X(1)_1 -> R2
X(1)_2 -> R3
";

    /// One indicator with an indicator proxy W1.
    pub const MCAR_PROXY: &str = "\
[nodes]
counterfactual: X(1)_1
indicator: R1
proxy: X1
indicator_proxy: W1
[edges]
X(1)_1 -> X1
R1 -> X1
R1 -> W1
";

    /// Covariate-dependent missingness; the proxy channel varies with C.
    pub const MAR_STRATIFIED_PROXY: &str = "\
[nodes]
counterfactual: X(1)_1
indicator: R1
proxy: X1
indicator_proxy: W1
covariate: C
[edges]
X(1)_1 -> X1
R1 -> X1
R1 -> W1
C -> R1
C -> X(1)_1
C -> W1
";

    /// Covariate-dependent missingness; one proxy channel for every stratum.
    pub const MAR_SHARED_PROXY: &str = "\
[nodes]
counterfactual: X(1)_1
indicator: R1
proxy: X1
indicator_proxy: W1
covariate: C
[edges]
X(1)_1 -> X1
R1 -> X1
R1 -> W1
C -> R1
C -> X(1)_1
";

    /// Two indicators, each driven by the other variable's counterfactual.
    pub const BLOCK_PARALLEL: &str = "\
[nodes]
counterfactual: X(1)_1 X(1)_2
indicator: R1 R2
proxy: X1 X2
indicator_proxy: W1 W2
[edges]
X(1)_1 -> X(1)_2
R1 -> W1
R2 -> W2
X(1)_1 -> R2
X(1)_2 -> R1
X(1)_1 -> X1
R1 -> X1
X(1)_2 -> X2
R2 -> X2
";

    /// Two indicators with X(1)_1 -> R2 <- R1: a colluder.
    pub const MNAR_COLLUDER: &str = "\
[nodes]
counterfactual: X(1)_1 X(1)_2
indicator: R1 R2
proxy: X1 X2
indicator_proxy: W1 W2
[edges]
X(1)_1 -> X(1)_2
R1 -> R2
R1 -> W1
R2 -> W2
X(1)_1 -> R2
X(1)_1 -> X1
R1 -> X1
X(1)_2 -> X2
R2 -> X2
";

    /// Named built-in graphs, in catalogue order.
    pub const ALL: [(&str, &str); 8] = [
        ("mcar-basic", MCAR_BASIC),
        ("mar-basic", MAR_BASIC),
        ("mnar-chain", MNAR_CHAIN),
        ("mcar-proxy", MCAR_PROXY),
        ("mar-stratified-proxy", MAR_STRATIFIED_PROXY),
        ("mar-shared-proxy", MAR_SHARED_PROXY),
        ("block-parallel", BLOCK_PARALLEL),
        ("mnar-colluder", MNAR_COLLUDER),
    ];

    pub fn by_name(name: &str) -> Option<MDag> {
        ALL.iter().find(|(n, _)| *n == name).map(|(_, t)| MDag::parse(t).expect("built-in graph is valid"))
    }
}
