//! Weighted digraphs in compressed-row form and the shortest-path family used
//! throughout: negative-cycle detection, minimum cycle mean (policy iteration),
//! Dijkstra, and strongly connected components.

use alloc::collections::BinaryHeap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{Error, Result};

/// Directed graph with `f64` edge weights, edges grouped by source.
#[derive(Debug, Clone, PartialEq)]
pub struct Digraph {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
}

impl Digraph {
    /// Builds the graph by asking `edges(u, push)` for the out-edges of each `u`.
    pub fn build(n: usize, mut edges: impl FnMut(usize, &mut dyn FnMut(usize, f64))) -> Self {
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for u in 0..n {
            edges(u, &mut |v, w| {
                targets.push(v as u32);
                weights.push(w);
            });
            offsets.push(targets.len());
        }
        Digraph { offsets, targets, weights }
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.offsets.len() - 1
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.targets.len()
    }

    #[inline]
    pub fn out_edges(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[u]..self.offsets[u + 1];
        self.targets[r.clone()].iter().zip(&self.weights[r]).map(|(&v, &w)| (v as usize, w))
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn map_weights(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let mut weights = Vec::with_capacity(self.weights.len());
        for u in 0..self.node_count() {
            for (v, w) in self.out_edges(u) {
                weights.push(f(u, v, w));
            }
        }
        Digraph { offsets: self.offsets.clone(), targets: self.targets.clone(), weights }
    }

    /// The graph with every edge reversed; edge order is by (new source, old source).
    pub fn reversed(&self) -> Self {
        let n = self.node_count();
        let mut counts = vec![0usize; n + 1];
        for &v in &self.targets {
            counts[v as usize + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let mut targets = vec![0u32; self.targets.len()];
        let mut weights = vec![0.0; self.weights.len()];
        for u in 0..n {
            for (v, w) in self.out_edges(u) {
                let slot = fill[v];
                targets[slot] = u as u32;
                weights[slot] = w;
                fill[v] += 1;
            }
        }
        Digraph { offsets, targets, weights }
    }

    pub fn min_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// True iff some cycle has negative total weight once `offset` is added to every edge.
///
/// Bellman–Ford from an all-zero potential, relaxing only from nodes that
/// changed in the previous round; a cycle in the predecessor graph certifies
/// a negative cycle early, and `n` productive rounds certify one in the worst case.
pub fn has_negative_cycle(g: &Digraph, offset: f64) -> bool {
    let n = g.node_count();
    let mut dist = vec![0.0f64; n];
    let mut parent = vec![u32::MAX; n];
    let mut active = vec![true; n];
    let mut next = vec![false; n];
    let mut mark = vec![0u32; n];
    let mut stamp = 0u32;
    for round in 0..=n {
        let mut changed = false;
        for u in 0..n {
            if !active[u] {
                continue;
            }
            let du = dist[u];
            for (v, w) in g.out_edges(u) {
                let cand = du + (w + offset);
                if cand < dist[v] && dist[v] - cand > 1e-13 * (1.0 + cand.abs()) {
                    dist[v] = cand;
                    parent[v] = u as u32;
                    next[v] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            return false;
        }
        if round == n {
            return true;
        }
        core::mem::swap(&mut active, &mut next);
        next.iter_mut().for_each(|b| *b = false);
        if round % 8 == 7 && parent_cycle(&parent, &mut mark, &mut stamp) {
            return true;
        }
    }
    true
}

fn parent_cycle(parent: &[u32], mark: &mut [u32], stamp: &mut u32) -> bool {
    let n = parent.len();
    let base = *stamp;
    for s in 0..n {
        if mark[s] > base {
            continue;
        }
        *stamp += 1;
        let id = *stamp;
        let mut v = s;
        loop {
            if mark[v] == id {
                return true;
            }
            if mark[v] > base {
                break;
            }
            mark[v] = id;
            let p = parent[v];
            if p == u32::MAX {
                break;
            }
            v = p as usize;
        }
    }
    false
}

/// Solution of the min-plus eigenproblem `x(v) = min_u [w(v,u) − η + x(u)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleMean {
    /// Minimal cycle mean reachable from each node (constant on strongly connected graphs).
    pub eta: Vec<f64>,
    pub bias: Vec<f64>,
    pub policy: Vec<u32>,
    pub iterations: usize,
}

impl CycleMean {
    pub fn min_mean(&self) -> f64 {
        self.eta.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Minimum cycle mean by Howard's policy iteration.
///
/// Every node needs an out-edge. `anchor` fixes the gauge of each policy cycle
/// (its smallest node keeps the anchor value); `init` seeds the policy.
pub fn min_cycle_mean(g: &Digraph, anchor: Option<&[f64]>, init: Option<&[u32]>) -> Result<CycleMean> {
    let n = g.node_count();
    let scale = 1.0 + g.weights.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    let eps = 1e-12 * scale;
    // policies are edge indices so that parallel edges stay distinguishable
    let mut edge = vec![usize::MAX; n];
    for u in 0..n {
        let want = init.map(|p| p[u] as usize);
        let mut best = f64::INFINITY;
        for e in g.offsets[u]..g.offsets[u + 1] {
            let ok = want.map_or(true, |t| g.targets[e] as usize == t);
            if ok && g.weights[e] < best {
                best = g.weights[e];
                edge[u] = e;
            }
        }
        if edge[u] == usize::MAX {
            return Err(crate::error::invalid("every node needs an out-edge"));
        }
    }
    let mut policy = vec![0u32; n];
    let mut pw = vec![0.0; n];
    let mut eta = vec![0.0; n];
    let mut bias = vec![0.0; n];
    let mut prev_bias: Option<Vec<f64>> = anchor.map(|a| a.to_vec());
    let mut state = vec![0u8; n];
    let mut path: Vec<usize> = Vec::new();
    let max_iter = 10_000;
    for it in 1..=max_iter {
        for u in 0..n {
            policy[u] = g.targets[edge[u]];
            pw[u] = g.weights[edge[u]];
        }
        evaluate_policy(&policy, &pw, prev_bias.as_deref(), &mut eta, &mut bias, &mut state, &mut path);

        let mut changed = false;
        for u in 0..n {
            let mut best = eta[policy[u] as usize];
            let mut cand = usize::MAX;
            for e in g.offsets[u]..g.offsets[u + 1] {
                let v = g.targets[e] as usize;
                if eta[v] < best - eps {
                    best = eta[v];
                    cand = e;
                }
            }
            if cand != usize::MAX {
                edge[u] = cand;
                changed = true;
            }
        }
        if !changed {
            for u in 0..n {
                let e_u = eta[u];
                let mut best = bias[u];
                let mut cand = usize::MAX;
                for e in g.offsets[u]..g.offsets[u + 1] {
                    let v = g.targets[e] as usize;
                    if (eta[v] - e_u).abs() <= eps {
                        let val = g.weights[e] - e_u + bias[v];
                        if val < best - eps {
                            best = val;
                            cand = e;
                        }
                    }
                }
                if cand != usize::MAX {
                    edge[u] = cand;
                    changed = true;
                }
            }
        }
        if !changed {
            return Ok(CycleMean { eta, bias, policy, iterations: it });
        }
        prev_bias = Some(bias.clone());
    }
    Err(Error::NonConvergence { iterations: max_iter, residual: f64::NAN })
}

fn evaluate_policy(
    policy: &[u32],
    pw: &[f64],
    anchor: Option<&[f64]>,
    eta: &mut [f64],
    bias: &mut [f64],
    state: &mut [u8],
    path: &mut Vec<usize>,
) {
    state.iter_mut().for_each(|s| *s = 0);
    for s in 0..policy.len() {
        if state[s] != 0 {
            continue;
        }
        path.clear();
        let mut v = s;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = policy[v] as usize;
        }
        let mut tail_end = path.len();
        if state[v] == 1 {
            let start = path.iter().position(|&p| p == v).expect("cycle node is on the path");
            let cycle = &path[start..];
            let len = cycle.len() as f64;
            let mean = cycle.iter().fold(0.0, |a, &c| a + pw[c]) / len;
            let (pos, &root) =
                cycle.iter().enumerate().min_by_key(|&(_, &c)| c).expect("cycle is nonempty");
            bias[root] = anchor.map_or(0.0, |a| a[root]);
            eta[root] = mean;
            let l = cycle.len();
            for j in 1..l {
                let c = cycle[(pos + l - j) % l];
                let nxt = policy[c] as usize;
                eta[c] = mean;
                bias[c] = pw[c] - mean + bias[nxt];
            }
            for &c in cycle {
                state[c] = 2;
            }
            tail_end = start;
        }
        for &c in path[..tail_end].iter().rev() {
            let nxt = policy[c] as usize;
            eta[c] = eta[nxt];
            bias[c] = pw[c] - eta[nxt] + bias[nxt];
            state[c] = 2;
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapItem(f64, u32);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Multi-source Dijkstra on nonnegative weights; labels above `cutoff` stay infinite.
pub fn dijkstra(g: &Digraph, sources: &[(usize, f64)], cutoff: f64) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; g.node_count()];
    let mut heap = BinaryHeap::new();
    for &(s, d) in sources {
        if d < dist[s] && d <= cutoff {
            dist[s] = d;
            heap.push(HeapItem(d, s as u32));
        }
    }
    while let Some(HeapItem(d, u)) = heap.pop() {
        let u = u as usize;
        if d > dist[u] {
            continue;
        }
        for (v, w) in g.out_edges(u) {
            let cand = d + w;
            if cand < dist[v] && cand <= cutoff {
                dist[v] = cand;
                heap.push(HeapItem(cand, v as u32));
            }
        }
    }
    dist
}

/// Strongly connected components of an implicit graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    /// Component id per node, in order of completion (sinks first).
    pub component: Vec<u32>,
    /// Whether each component is closed (no edge leaves it).
    pub closed: Vec<bool>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.closed.len()
    }

    /// Node lists per component, each in increasing node order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count()];
        for (v, &c) in self.component.iter().enumerate() {
            out[c as usize].push(v);
        }
        out
    }
}

/// Iterative Tarjan over successors produced on demand by `succ(v, out)`.
pub fn strongly_connected(n: usize, mut succ: impl FnMut(usize, &mut Vec<u32>)) -> Components {
    const UNSEEN: u32 = u32::MAX;
    let mut index = vec![UNSEEN; n];
    let mut low = vec![0u32; n];
    let mut component = vec![UNSEEN; n];
    let mut leaks = vec![false; n];
    let mut closed = Vec::new();
    let mut stack: Vec<u32> = Vec::new();
    let mut buffer: Vec<u32> = Vec::new();
    let mut scratch: Vec<u32> = Vec::new();
    // (node, next successor slot, end of its successor slots)
    let mut frames: Vec<(u32, usize, usize)> = Vec::new();
    let mut counter = 0u32;

    for root in 0..n {
        if index[root] != UNSEEN {
            continue;
        }
        let mut pending = Some(root);
        loop {
            if let Some(v) = pending.take() {
                index[v] = counter;
                low[v] = counter;
                counter += 1;
                stack.push(v as u32);
                scratch.clear();
                succ(v, &mut scratch);
                let start = buffer.len();
                buffer.extend_from_slice(&scratch);
                frames.push((v as u32, start, buffer.len()));
            }
            let Some(frame) = frames.last_mut() else { break };
            let v = frame.0 as usize;
            if frame.1 < frame.2 {
                let w = buffer[frame.1] as usize;
                frame.1 += 1;
                if index[w] == UNSEEN {
                    pending = Some(w);
                } else if component[w] == UNSEEN {
                    low[v] = low[v].min(index[w]);
                } else {
                    leaks[v] = true;
                }
                continue;
            }
            let start = frames.pop().expect("frame present").1;
            buffer.truncate(start);
            if low[v] == index[v] {
                let id = closed.len() as u32;
                let mut is_closed = true;
                loop {
                    let w = stack.pop().expect("tarjan stack holds the component") as usize;
                    component[w] = id;
                    is_closed &= !leaks[w];
                    if w == v {
                        break;
                    }
                }
                closed.push(is_closed);
                if let Some(&(parent, _, _)) = frames.last() {
                    leaks[parent as usize] = true;
                }
            } else if let Some(&(parent, _, _)) = frames.last() {
                let parent = parent as usize;
                low[parent] = low[parent].min(low[v]);
            }
        }
    }
    Components { component, closed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::vec::Vec as StdVec;

    fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Digraph {
        Digraph::build(n, |u, push| {
            for &(a, b, w) in edges {
                if a == u {
                    push(b, w);
                }
            }
        })
    }

    /// Karp's theorem, independent of policy iteration.
    fn karp(n: usize, edges: &[(usize, usize, f64)]) -> f64 {
        let inf = f64::INFINITY;
        let mut d = vec![vec![inf; n]; n + 1];
        d[0].iter_mut().for_each(|x| *x = 0.0);
        for k in 1..=n {
            for &(a, b, w) in edges {
                if d[k - 1][a] < inf {
                    d[k][b] = d[k][b].min(d[k - 1][a] + w);
                }
            }
        }
        let mut best = inf;
        for v in 0..n {
            if d[n][v] == inf {
                continue;
            }
            let mut worst = -inf;
            for k in 0..n {
                if d[k][v] < inf {
                    worst = worst.max((d[n][v] - d[k][v]) / (n - k) as f64);
                }
            }
            best = best.min(worst);
        }
        best
    }

    fn random_graph() -> impl Strategy<Value = (usize, StdVec<(usize, usize, f64)>)> {
        (2usize..9).prop_flat_map(|n| {
            let extra = proptest::collection::vec((0..n, 0..n, -5.0f64..5.0), 0..3 * n);
            let ring = proptest::collection::vec(-5.0f64..5.0, n);
            (Just(n), ring, extra).prop_map(|(n, ring, extra)| {
                let mut e: StdVec<_> = (0..n).map(|i| (i, (i + 1) % n, ring[i])).collect();
                e.extend(extra);
                (n, e)
            })
        })
    }

    #[test]
    fn simple_cycle_means() {
        let g = from_edges(3, &[(0, 1, 1.0), (1, 2, 2.0), (2, 0, 3.0), (1, 1, 1.5)]);
        let m = min_cycle_mean(&g, None, None).unwrap();
        assert!((m.min_mean() - 1.5).abs() < 1e-14);
        assert!(!has_negative_cycle(&g, -1.5 + 1e-9));
        assert!(has_negative_cycle(&g, -1.5 - 1e-9));
    }

    #[test]
    fn reversal_round_trip() {
        let g = from_edges(4, &[(0, 1, 1.0), (1, 2, 2.0), (3, 0, 3.0), (2, 3, 4.0), (0, 2, 5.0)]);
        let r = g.reversed();
        assert_eq!(r.edge_count(), 5);
        assert_eq!(r.out_edges(2).collect::<StdVec<_>>(), [(0, 5.0), (1, 2.0)]);
        assert_eq!(r.reversed(), g);
    }

    #[test]
    fn dijkstra_on_a_line() {
        let g = from_edges(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (0, 3, 5.0)]);
        let d = dijkstra(&g, &[(0, 0.0)], f64::INFINITY);
        assert_eq!(d, [0.0, 1.0, 2.0, 3.0]);
        let d = dijkstra(&g, &[(0, 0.0)], 1.5);
        assert_eq!(d[2], f64::INFINITY);
    }

    #[test]
    fn components_and_closed_classes() {
        // 0 <-> 1 -> 2 <-> 3, 4 -> 4
        let e = [(0, 1, 0.0), (1, 0, 0.0), (1, 2, 0.0), (2, 3, 0.0), (3, 2, 0.0), (4, 4, 0.0)];
        let c = strongly_connected(5, |v, out| {
            for &(a, b, _) in &e {
                if a == v {
                    out.push(b as u32);
                }
            }
        });
        assert_eq!(c.count(), 3);
        assert_eq!(c.component[0], c.component[1]);
        assert_eq!(c.component[2], c.component[3]);
        assert!(!c.closed[c.component[0] as usize]);
        assert!(c.closed[c.component[2] as usize]);
        assert!(c.closed[c.component[4] as usize]);
    }

    proptest! {
        #[test]
        fn howard_matches_karp((n, edges) in random_graph()) {
            let g = from_edges(n, &edges);
            let m = min_cycle_mean(&g, None, None).unwrap();
            prop_assert!((m.min_mean() - karp(n, &edges)).abs() < 1e-9);
            // bias certifies the eigen-equation on the optimal class
            for u in 0..n {
                if (m.eta[u] - m.min_mean()).abs() < 1e-9 {
                    let best = g.out_edges(u)
                        .filter(|&(v, _)| (m.eta[v] - m.eta[u]).abs() < 1e-9)
                        .map(|(v, w)| w - m.eta[u] + m.bias[v])
                        .fold(f64::INFINITY, f64::min);
                    prop_assert!((best - m.bias[u]).abs() < 1e-8);
                }
            }
        }

        #[test]
        fn negative_cycle_predicate_is_monotone((n, edges) in random_graph(), shift in -0.5f64..0.5) {
            let g = from_edges(n, &edges);
            let lam = karp(n, &edges);
            if shift.abs() > 1e-7 {
                prop_assert_eq!(has_negative_cycle(&g, -lam + shift), shift < 0.0);
            }
            prop_assert!(!has_negative_cycle(&g, -lam + 1e-7));
            prop_assert!(has_negative_cycle(&g, -lam - 1e-7));
        }

        #[test]
        fn sccs_partition_and_closedness((n, edges) in random_graph()) {
            let c = strongly_connected(n, |v, out| {
                for &(a, b, _) in &edges {
                    if a == v { out.push(b as u32); }
                }
            });
            // reachability oracle
            let mut reach = vec![vec![false; n]; n];
            for v in 0..n { reach[v][v] = true; }
            for &(a, b, _) in &edges { reach[a][b] = true; }
            for k in 0..n { for i in 0..n { for j in 0..n {
                if reach[i][k] && reach[k][j] { reach[i][j] = true; }
            }}}
            for i in 0..n { for j in 0..n {
                let same = reach[i][j] && reach[j][i];
                prop_assert_eq!(same, c.component[i] == c.component[j]);
            }}
            for (id, &closed) in c.closed.iter().enumerate() {
                let leaves = edges.iter().any(|&(a, b, _)| c.component[a] as usize == id && c.component[b] as usize != id);
                prop_assert_eq!(closed, !leaves);
            }
        }
    }
}
