//! Maximum flow on small graphs with real-valued capacities.
//!
//! Dinic's algorithm: breadth-first level graphs plus blocking flows found by
//! depth-first search with iteration pointers. Capacities are `f64`; residual
//! arcs below `RESIDUAL_EPS` count as saturated, which keeps cut extraction
//! stable under floating-point cancellation.

/// Residual capacities below this are treated as zero.
pub const RESIDUAL_EPS: f64 = 1e-11;

#[derive(Clone, Debug)]
struct Arc {
    to: u32,
    rev: u32,
    cap: f64,
}

/// Flow network builder and solver.
pub struct Dinic {
    adj: Vec<Vec<Arc>>,
    level: Vec<i32>,
    iter: Vec<usize>,
}

impl Dinic {
    pub fn new(n: usize) -> Dinic {
        Dinic { adj: (0..n).map(|_| Vec::new()).collect(), level: vec![0; n], iter: vec![0; n] }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    /// Directed arc `u -> v` of the given capacity (must be non-negative).
    pub fn add_edge(&mut self, u: usize, v: usize, cap: f64) {
        debug_assert!(cap >= 0.0 && cap.is_finite());
        let rev_u = self.adj[v].len() as u32;
        let rev_v = self.adj[u].len() as u32;
        self.adj[u].push(Arc { to: v as u32, rev: rev_u, cap });
        self.adj[v].push(Arc { to: u as u32, rev: rev_v, cap: 0.0 });
    }

    /// Undirected edge: capacity available in both directions.
    pub fn add_undirected(&mut self, u: usize, v: usize, cap: f64) {
        debug_assert!(cap >= 0.0 && cap.is_finite());
        let rev_u = self.adj[v].len() as u32;
        let rev_v = self.adj[u].len() as u32;
        self.adj[u].push(Arc { to: v as u32, rev: rev_u, cap });
        self.adj[v].push(Arc { to: u as u32, rev: rev_v, cap });
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.iter_mut().for_each(|l| *l = -1);
        let mut queue = std::collections::VecDeque::new();
        self.level[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for arc in &self.adj[u] {
                if arc.cap > RESIDUAL_EPS && self.level[arc.to as usize] < 0 {
                    self.level[arc.to as usize] = self.level[u] + 1;
                    queue.push_back(arc.to as usize);
                }
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, u: usize, t: usize, pushed: f64) -> f64 {
        if u == t {
            return pushed;
        }
        while self.iter[u] < self.adj[u].len() {
            let i = self.iter[u];
            let (to, cap) = {
                let a = &self.adj[u][i];
                (a.to as usize, a.cap)
            };
            if cap > RESIDUAL_EPS && self.level[to] == self.level[u] + 1 {
                let got = self.dfs(to, t, pushed.min(cap));
                if got > RESIDUAL_EPS {
                    let rev = self.adj[u][i].rev as usize;
                    self.adj[u][i].cap -= got;
                    self.adj[to][rev].cap += got;
                    return got;
                }
            }
            self.iter[u] += 1;
        }
        0.0
    }

    /// Run to saturation and return the total flow value.
    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        assert_ne!(s, t);
        let mut flow = 0.0;
        while self.bfs(s, t) {
            self.iter.iter_mut().for_each(|i| *i = 0);
            loop {
                let f = self.dfs(s, t, f64::INFINITY);
                if f <= RESIDUAL_EPS {
                    break;
                }
                flow += f;
            }
        }
        flow
    }

    /// After `max_flow`, the set of nodes reachable from `s` in the residual
    /// graph: the unique inclusion-minimal source side of a minimum cut.
    pub fn min_cut_source_side(&self, s: usize) -> Vec<bool> {
        let n = self.adj.len();
        let mut seen = vec![false; n];
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(u) = stack.pop() {
            for arc in &self.adj[u] {
                if arc.cap > RESIDUAL_EPS && !seen[arc.to as usize] {
                    seen[arc.to as usize] = true;
                    stack.push(arc.to as usize);
                }
            }
        }
        seen
    }
}
