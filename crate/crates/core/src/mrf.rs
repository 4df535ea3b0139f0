//! Binary pairwise MRFs with Potts smoothness and their exact MAP solution
//! by s-t minimum cut.
//!
//! Label `1` is foreground. In the flow network a node on the source side
//! of the cut takes label 1, and the source set returned is the one
//! reachable in the final residual graph, i.e. the smallest minimum cut.
//! Ties therefore resolve towards label 0.

use std::collections::VecDeque;
use std::fmt::Write as _;

use thiserror::Error;

/// Largest problem the exhaustive oracle accepts.
pub const BRUTE_FORCE_MAX_NODES: usize = 24;

#[derive(Debug, Error, PartialEq)]
pub enum MrfError {
    #[error("labeling has {found} entries, problem has {expected} nodes")]
    LengthMismatch { expected: usize, found: usize },
    #[error("edge ({i}, {j}) has negative weight {weight}; the energy is not submodular")]
    NotSubmodular { i: usize, j: usize, weight: f64 },
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("{0} nodes is too many for exhaustive search (max {BRUTE_FORCE_MAX_NODES})")]
    TooLarge(usize),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Potts term: `weight` is paid when the endpoints disagree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseTerm {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MrfProblem {
    unary: Vec<[f64; 2]>,
    edges: Vec<PairwiseTerm>,
}

impl MrfProblem {
    /// `unary[i] = [cost of label 0, cost of label 1]`. Negative pairwise
    /// weights are accepted here (the energy is still defined) but rejected
    /// by [`min_cut_infer`].
    pub fn new(unary: Vec<[f64; 2]>, edges: Vec<PairwiseTerm>) -> Result<Self, MrfError> {
        if let Some(i) = unary.iter().position(|u| !u[0].is_finite() || !u[1].is_finite()) {
            return Err(MrfError::Invalid(format!("unary cost of node {i} is not finite")));
        }
        let n = unary.len();
        for e in &edges {
            if e.i >= n || e.j >= n || e.i == e.j {
                return Err(MrfError::Invalid(format!("edge ({}, {}) invalid for {n} nodes", e.i, e.j)));
            }
            if !e.weight.is_finite() {
                return Err(MrfError::Invalid(format!("edge ({}, {}) weight is not finite", e.i, e.j)));
            }
        }
        Ok(Self { unary, edges })
    }

    pub fn len(&self) -> usize {
        self.unary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unary.is_empty()
    }

    pub fn unary(&self) -> &[[f64; 2]] {
        &self.unary
    }

    pub fn edges(&self) -> &[PairwiseTerm] {
        &self.edges
    }

    /// Line-oriented dump: `n`, then `n` lines of `cost0 cost1`, then one
    /// `i j w` line per edge. Floats use shortest round-trip formatting.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.unary.len());
        for u in &self.unary {
            let _ = writeln!(out, "{} {}", u[0], u[1]);
        }
        for e in &self.edges {
            let _ = writeln!(out, "{} {} {}", e.i, e.j, e.weight);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, MrfError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let err = |line: usize, msg: &str| MrfError::Parse {
            line: line + 1,
            msg: msg.to_string(),
        };
        let (ln, first) = lines.next().ok_or_else(|| err(0, "empty input"))?;
        let n: usize = first.trim().parse().map_err(|_| err(ln, "expected node count"))?;
        let mut unary = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, l) = lines.next().ok_or_else(|| err(ln, "missing unary line"))?;
            let v: Vec<f64> = l.split_whitespace().map(str::parse).collect::<Result<_, _>>().map_err(|_| err(ln, "bad unary cost"))?;
            if v.len() != 2 {
                return Err(err(ln, "unary line needs two costs"));
            }
            unary.push([v[0], v[1]]);
        }
        let mut edges = Vec::new();
        for (ln, l) in lines {
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 3 {
                return Err(err(ln, "edge line needs `i j w`"));
            }
            edges.push(PairwiseTerm {
                i: t[0].parse().map_err(|_| err(ln, "bad edge endpoint"))?,
                j: t[1].parse().map_err(|_| err(ln, "bad edge endpoint"))?,
                weight: t[2].parse().map_err(|_| err(ln, "bad edge weight"))?,
            });
        }
        Self::new(unary, edges)
    }
}

/// Binary labels, `true` meaning foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Labeling(pub Vec<bool>);

impl Labeling {
    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn count_foreground(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }
}

impl From<Vec<bool>> for Labeling {
    fn from(v: Vec<bool>) -> Self {
        Self(v)
    }
}

pub fn energy(p: &MrfProblem, x: &Labeling) -> Result<f64, MrfError> {
    if x.len() != p.len() {
        return Err(MrfError::LengthMismatch {
            expected: p.len(),
            found: x.len(),
        });
    }
    Ok(energy_unchecked(p, &x.0))
}

fn energy_unchecked(p: &MrfProblem, x: &[bool]) -> f64 {
    let unary: f64 = p.unary.iter().zip(x).map(|(u, &l)| u[usize::from(l)]).sum();
    let pairwise: f64 = p.edges.iter().filter(|e| x[e.i] != x[e.j]).map(|e| e.weight).sum();
    unary + pairwise
}

/// Result of a graph-cut solve together with its flow certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct CutSolution {
    pub labeling: Labeling,
    /// Value of the maximum flow in the reparameterised network.
    pub flow: f64,
    /// `Σ_i min(unary[i][0], unary[i][1])`, removed before building the
    /// network. `flow + constant` is the minimum energy.
    pub constant: f64,
}

pub fn min_cut_infer(p: &MrfProblem) -> Result<Labeling, MrfError> {
    min_cut_solve(p).map(|s| s.labeling)
}

pub fn min_cut_solve(p: &MrfProblem) -> Result<CutSolution, MrfError> {
    if let Some(e) = p.edges.iter().find(|e| e.weight < 0.0) {
        return Err(MrfError::NotSubmodular {
            i: e.i,
            j: e.j,
            weight: e.weight,
        });
    }
    let n = p.len();
    let (source, sink) = (n, n + 1);
    let mut net = FlowNetwork::new(n + 2);
    let mut constant = 0.0;
    for (i, u) in p.unary.iter().enumerate() {
        let m = u[0].min(u[1]);
        constant += m;
        // s->i is cut when i ends on the sink side (label 0)
        if u[0] > m {
            net.add_edge(source, i, u[0] - m, 0.0);
        }
        if u[1] > m {
            net.add_edge(i, sink, u[1] - m, 0.0);
        }
    }
    for e in &p.edges {
        if e.weight > 0.0 {
            net.add_edge(e.i, e.j, e.weight, e.weight);
        }
    }
    let flow = net.max_flow(source, sink);
    let reach = net.reachable_from(source);
    Ok(CutSolution {
        labeling: Labeling(reach[..n].to_vec()),
        flow,
        constant,
    })
}

/// Exhaustive minimiser; among equal energies the lexicographically
/// smallest labeling (label 0 before 1, node 0 first) wins.
pub fn brute_force_infer(p: &MrfProblem) -> Result<Labeling, MrfError> {
    let n = p.len();
    if n > BRUTE_FORCE_MAX_NODES {
        return Err(MrfError::TooLarge(n));
    }
    let mut x = vec![false; n];
    let mut best = (f64::INFINITY, x.clone());
    for code in 0u32..(1u32 << n) {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = (code >> (n - 1 - i)) & 1 == 1;
        }
        let e = energy_unchecked(p, &x);
        if e < best.0 {
            best = (e, x.clone());
        }
    }
    Ok(Labeling(best.1))
}

/// Residual network for Dinic's algorithm (shortest augmenting paths by BFS
/// levels). Capacities are real-valued.
struct FlowNetwork {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
}

impl FlowNetwork {
    fn new(n: usize) -> Self {
        Self {
            head: vec![Vec::new(); n],
            to: Vec::new(),
            cap: Vec::new(),
        }
    }

    /// Arc `a -> b` with capacity `c_ab`, paired with `b -> a` of `c_ba`.
    /// Arc `k` and `k ^ 1` are each other's reverse.
    fn add_edge(&mut self, a: usize, b: usize, c_ab: f64, c_ba: f64) {
        self.head[a].push(self.to.len());
        self.to.push(b);
        self.cap.push(c_ab);
        self.head[b].push(self.to.len());
        self.to.push(a);
        self.cap.push(c_ba);
    }

    fn bfs_levels(&self, s: usize) -> Vec<usize> {
        let mut level = vec![usize::MAX; self.head.len()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &k in &self.head[u] {
                let v = self.to[k];
                if self.cap[k] > 0.0 && level[v] == usize::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        level
    }

    fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        loop {
            let level = self.bfs_levels(s);
            if level[t] == usize::MAX {
                return total;
            }
            let mut cursor = vec![0usize; self.head.len()];
            loop {
                let pushed = self.augment(s, t, f64::INFINITY, &level, &mut cursor);
                if pushed <= 0.0 {
                    break;
                }
                total += pushed;
            }
        }
    }

    fn augment(&mut self, u: usize, t: usize, limit: f64, level: &[usize], cursor: &mut [usize]) -> f64 {
        if u == t {
            return limit;
        }
        while cursor[u] < self.head[u].len() {
            let k = self.head[u][cursor[u]];
            let v = self.to[k];
            if self.cap[k] > 0.0 && level[v] == level[u] + 1 {
                let pushed = self.augment(v, t, limit.min(self.cap[k]), level, cursor);
                if pushed > 0.0 {
                    self.cap[k] -= pushed;
                    self.cap[k ^ 1] += pushed;
                    return pushed;
                }
            }
            cursor[u] += 1;
        }
        0.0
    }

    fn reachable_from(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.head.len()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &k in &self.head[u] {
                let v = self.to[k];
                if self.cap[k] > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }
}
