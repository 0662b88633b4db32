use std::collections::VecDeque;

const FREE: usize = usize::MAX;

/// Maximum bipartite matching on an `n x n` graph given by an edge predicate,
/// by Hopcroft-Karp phases. The matching persists between calls so a few
/// broken edges can be repaired without starting over.
#[derive(Clone, Debug)]
pub(crate) struct HopcroftKarp {
    n: usize,
    pub(crate) row_to_col: Vec<usize>,
    col_to_row: Vec<usize>,
    dist: Vec<usize>,
    queue: VecDeque<usize>,
}

impl HopcroftKarp {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            n,
            row_to_col: vec![FREE; n],
            col_to_row: vec![FREE; n],
            dist: vec![0; n],
            queue: VecDeque::with_capacity(n),
        }
    }

    pub(crate) fn unmatch_row(&mut self, i: usize) {
        let j = std::mem::replace(&mut self.row_to_col[i], FREE);
        if j != FREE {
            self.col_to_row[j] = FREE;
        }
    }

    #[cfg(test)]
    pub(crate) fn is_perfect(&self) -> bool {
        self.row_to_col.iter().all(|&j| j != FREE)
    }

    /// Augments the current matching to a maximum one; returns its size.
    pub(crate) fn augment(&mut self, edge: &impl Fn(usize, usize) -> bool) -> usize {
        while self.bfs(edge) {
            let mut found = false;
            for i in 0..self.n {
                if self.row_to_col[i] == FREE && self.dfs(i, edge) {
                    found = true;
                }
            }
            if !found {
                break;
            }
        }
        self.row_to_col.iter().filter(|&&j| j != FREE).count()
    }

    fn bfs(&mut self, edge: &impl Fn(usize, usize) -> bool) -> bool {
        self.queue.clear();
        for i in 0..self.n {
            if self.row_to_col[i] == FREE {
                self.dist[i] = 0;
                self.queue.push_back(i);
            } else {
                self.dist[i] = FREE;
            }
        }
        let mut reachable_free = false;
        while let Some(i) = self.queue.pop_front() {
            for j in 0..self.n {
                if !edge(i, j) {
                    continue;
                }
                let next = self.col_to_row[j];
                if next == FREE {
                    reachable_free = true;
                } else if self.dist[next] == FREE {
                    self.dist[next] = self.dist[i] + 1;
                    self.queue.push_back(next);
                }
            }
        }
        reachable_free
    }

    fn dfs(&mut self, i: usize, edge: &impl Fn(usize, usize) -> bool) -> bool {
        for j in 0..self.n {
            if !edge(i, j) {
                continue;
            }
            let next = self.col_to_row[j];
            if next == FREE || (self.dist[next] == self.dist[i] + 1 && self.dfs(next, edge)) {
                self.row_to_col[i] = j;
                self.col_to_row[j] = i;
                return true;
            }
        }
        self.dist[i] = FREE;
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_graph_is_perfect() {
        let mut hk = HopcroftKarp::new(6);
        assert_eq!(hk.augment(&|_, _| true), 6);
        assert!(hk.is_perfect());
    }

    #[test]
    fn hall_violation_limits_size() {
        // Rows 0..3 can only reach columns 0 and 1.
        let edge = |i: usize, j: usize| if i < 3 { j < 2 } else { true };
        let mut hk = HopcroftKarp::new(5);
        assert_eq!(hk.augment(&edge), 4);
        assert!(!hk.is_perfect());
    }

    #[test]
    fn repair_after_removing_an_edge() {
        let mut hk = HopcroftKarp::new(4);
        hk.augment(&|_, _| true);
        let j = hk.row_to_col[2];
        let removed = (2, j);
        hk.unmatch_row(2);
        let edge = |i: usize, k: usize| (i, k) != removed;
        assert_eq!(hk.augment(&edge), 4);
        assert_ne!(hk.row_to_col[2], j);
        let mut cols = hk.row_to_col.clone();
        cols.sort_unstable();
        assert_eq!(cols, vec![0, 1, 2, 3]);
    }
}
