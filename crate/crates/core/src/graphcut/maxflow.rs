//! Dinic max-flow over a compact residual graph.

/// Residual capacities at or below this are treated as saturated.
pub const EPS: f64 = 1e-12;

pub struct FlowGraph {
    head: Vec<usize>,
    next: Vec<usize>,
    to: Vec<usize>,
    cap: Vec<f64>,
}

const NIL: usize = usize::MAX;

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        Self {
            head: vec![NIL; nodes],
            next: Vec::new(),
            to: Vec::new(),
            cap: Vec::new(),
        }
    }

    fn push_arc(&mut self, from: usize, to: usize, cap: f64) {
        self.to.push(to);
        self.cap.push(cap);
        self.next.push(self.head[from]);
        self.head[from] = self.to.len() - 1;
    }

    /// Arc pair `a -> b` with `forward` and `b -> a` with `backward`. The two
    /// arcs are each other's residual reverse (`e ^ 1`).
    pub fn add_edge(&mut self, a: usize, b: usize, forward: f64, backward: f64) {
        self.push_arc(a, b, forward);
        self.push_arc(b, a, backward);
    }

    fn levels(&self, s: usize, t: usize, level: &mut [i64]) -> bool {
        level.fill(-1);
        level[s] = 0;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            let mut e = self.head[v];
            while e != NIL {
                let w = self.to[e];
                if self.cap[e] > EPS && level[w] < 0 {
                    level[w] = level[v] + 1;
                    queue.push_back(w);
                }
                e = self.next[e];
            }
        }
        level[t] >= 0
    }

    /// Blocking flow on the current level graph, iterative DFS.
    fn blocking_flow(&mut self, s: usize, t: usize, level: &mut [i64], iter: &mut [usize]) -> f64 {
        let mut total = 0.0;
        let mut path: Vec<usize> = Vec::new();
        let mut v = s;
        loop {
            if v == t {
                let bottleneck = path.iter().map(|&e| self.cap[e]).fold(f64::INFINITY, f64::min);
                let mut retreat_to = None;
                for (i, &e) in path.iter().enumerate() {
                    self.cap[e] -= bottleneck;
                    self.cap[e ^ 1] += bottleneck;
                    if retreat_to.is_none() && self.cap[e] <= EPS {
                        retreat_to = Some(i);
                    }
                }
                total += bottleneck;
                // resume from the tail of the first saturated arc
                let i = retreat_to.unwrap_or(0);
                path.truncate(i);
                v = if i == 0 { s } else { self.to[path[i - 1]] };
                continue;
            }
            let mut advanced = false;
            while iter[v] != NIL {
                let e = iter[v];
                let w = self.to[e];
                if self.cap[e] > EPS && level[w] == level[v] + 1 {
                    path.push(e);
                    v = w;
                    advanced = true;
                    break;
                }
                iter[v] = self.next[e];
            }
            if advanced {
                continue;
            }
            if v == s {
                return total;
            }
            level[v] = -1;
            let e = path.pop().expect("non-source node has an incoming path arc");
            v = self.to[e ^ 1];
            iter[v] = self.next[iter[v]];
        }
    }

    /// Runs max-flow and returns its value. Residual capacities stay in the
    /// graph for [`FlowGraph::source_side`].
    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let n = self.head.len();
        let mut level = vec![-1i64; n];
        let mut iter = vec![NIL; n];
        let mut flow = 0.0;
        while self.levels(s, t, &mut level) {
            iter.copy_from_slice(&self.head);
            flow += self.blocking_flow(s, t, &mut level, &mut iter);
        }
        flow
    }

    /// Nodes reachable from `s` through unsaturated residual arcs.
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.head.len()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            let mut e = self.head[v];
            while e != NIL {
                let w = self.to[e];
                if self.cap[e] > EPS && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
                e = self.next[e];
            }
        }
        seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_six_node_network() {
        // CLRS figure 26.1, max flow 23
        let mut g = FlowGraph::new(6);
        for (a, b, c) in [
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
        assert!((g.max_flow(0, 5) - 23.0).abs() < 1e-12);
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

    #[test]
    fn long_chain_does_not_recurse() {
        let n = 200_000;
        let mut g = FlowGraph::new(n);
        for i in 0..n - 1 {
            g.add_edge(i, i + 1, 1.0 + (i % 3) as f64, 0.0);
        }
        assert_eq!(g.max_flow(0, n - 1), 1.0);
    }
}
