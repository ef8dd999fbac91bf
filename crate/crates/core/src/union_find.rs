//! Disjoint-set forest with union by size and path halving.

#[derive(Clone, Debug)]
pub(crate) struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
    max_size: usize,
}

impl DisjointSet {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
            max_size: usize::from(n > 0),
        }
    }

    pub(crate) fn find(&mut self, mut node: usize) -> usize {
        while self.parent[node] != node {
            let grand = self.parent[self.parent[node]];
            self.parent[node] = grand;
            node = grand;
        }
        node
    }

    /// Returns `true` when the two nodes were in different components.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let mut a = self.find(a);
        let mut b = self.find(b);
        if a == b {
            return false;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
        self.max_size = self.max_size.max(self.size[a]);
        true
    }

    pub(crate) fn max_size(&self) -> usize {
        self.max_size
    }

    /// Component label of every node, numbered by first appearance.
    pub(crate) fn labels(&mut self) -> Vec<usize> {
        let n = self.parent.len();
        let mut root_label = vec![usize::MAX; n];
        let mut labels = Vec::with_capacity(n);
        let mut next = 0;
        for i in 0..n {
            let r = self.find(i);
            if root_label[r] == usize::MAX {
                root_label[r] = next;
                next += 1;
            }
            labels.push(root_label[r]);
        }
        labels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merges_and_tracks_sizes() {
        let mut ds = DisjointSet::new(5);
        assert!(ds.union(0, 3));
        assert!(ds.union(3, 4));
        assert!(!ds.union(0, 4));
        assert_eq!(ds.max_size(), 3);
        assert_eq!(ds.labels(), vec![0, 1, 2, 0, 0]);
    }
}
