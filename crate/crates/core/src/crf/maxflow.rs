//! Dinic max-flow on a graph with real capacities.
//!
//! Arcs are explored in insertion order, so the flow and the resulting cut
//! are fully determined by the construction order.

use std::collections::VecDeque;

pub(crate) struct FlowGraph {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    residual: Vec<f64>,
}

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        FlowGraph {
            head: vec![Vec::new(); nodes],
            to: Vec::new(),
            residual: Vec::new(),
        }
    }

    /// Adds `a -> b` with capacity `forward` and `b -> a` with `backward`
    /// as a mutually reverse arc pair.
    pub fn add_edge(&mut self, a: usize, b: usize, forward: f64, backward: f64) {
        debug_assert!(forward >= 0.0 && backward >= 0.0);
        let e = self.to.len();
        self.to.push(b);
        self.residual.push(forward);
        self.head[a].push(e);
        self.to.push(a);
        self.residual.push(backward);
        self.head[b].push(e + 1);
    }

    fn levels(&self, source: usize, sink: usize) -> Option<Vec<i64>> {
        let mut level = vec![-1i64; self.head.len()];
        level[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.head[u] {
                let v = self.to[e];
                if level[v] < 0 && self.residual[e] > 0.0 {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        (level[sink] >= 0).then_some(level)
    }

    /// Pushes one augmenting path through the level graph, returning its
    /// bottleneck or 0 when the phase is blocked.
    fn augment(&mut self, source: usize, sink: usize, level: &mut [i64], cursor: &mut [usize]) -> f64 {
        let mut path: Vec<usize> = Vec::new();
        let mut u = source;
        while u != sink {
            let mut advanced = false;
            while cursor[u] < self.head[u].len() {
                let e = self.head[u][cursor[u]];
                let v = self.to[e];
                if self.residual[e] > 0.0 && level[v] == level[u] + 1 {
                    path.push(e);
                    u = v;
                    advanced = true;
                    break;
                }
                cursor[u] += 1;
            }
            if !advanced {
                // Dead end: prune the node and retreat.
                level[u] = -1;
                match path.pop() {
                    None => return 0.0,
                    Some(e) => {
                        u = self.to[e ^ 1];
                        cursor[u] += 1;
                    }
                }
            }
        }
        let bottleneck = path
            .iter()
            .map(|&e| self.residual[e])
            .fold(f64::INFINITY, f64::min);
        for &e in &path {
            self.residual[e] -= bottleneck;
            self.residual[e ^ 1] += bottleneck;
        }
        bottleneck
    }

    pub fn max_flow(&mut self, source: usize, sink: usize) -> f64 {
        let mut total = 0.0;
        while let Some(mut level) = self.levels(source, sink) {
            let mut cursor = vec![0usize; self.head.len()];
            loop {
                let pushed = self.augment(source, sink, &mut level, &mut cursor);
                if pushed <= 0.0 {
                    break;
                }
                total += pushed;
            }
        }
        total
    }

    /// Nodes reachable from `source` through arcs with positive residual.
    pub fn source_side(&self, source: usize) -> Vec<bool> {
        let mut seen = vec![false; self.head.len()];
        seen[source] = true;
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.head[u] {
                let v = self.to[e];
                if !seen[v] && self.residual[e] > 0.0 {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_network() {
        // CLRS figure 26.1: max flow 23.
        let mut g = FlowGraph::new(6);
        for &(a, b, c) in &[
            (0, 1, 16.0),
            (0, 2, 13.0),
            (2, 1, 4.0),
            (1, 3, 12.0),
            (3, 2, 9.0),
            (2, 4, 14.0),
            (4, 3, 7.0),
            (3, 5, 20.0),
            (4, 5, 4.0),
        ] {
            g.add_edge(a, b, c, 0.0);
        }
        assert_eq!(g.max_flow(0, 5), 23.0);
        let side = g.source_side(0);
        assert!(side[0] && !side[5]);
    }

    #[test]
    fn disconnected_sink() {
        let mut g = FlowGraph::new(3);
        g.add_edge(0, 1, 5.0, 0.0);
        assert_eq!(g.max_flow(0, 2), 0.0);
        assert_eq!(g.source_side(0), vec![true, true, false]);
    }
}
