use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partition of each parent class into sub-class pseudo-labels.
///
/// Pseudo-label ids are contiguous `0..P`, assigned parent by parent in
/// parent order, so parent `c`'s ids form one consecutive run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubClassMap {
    parent_pseudo: Vec<Vec<usize>>,
    sample_pseudo: Vec<usize>,
    pseudo_parent: Vec<usize>,
}

impl SubClassMap {
    /// One pseudo-label per parent: pseudo-label `c` is parent `c`.
    pub fn identity(parent_labels: &[usize], num_classes: usize) -> Result<Self> {
        let local = vec![0usize; parent_labels.len()];
        Self::from_local_assignments(parent_labels, &local, &vec![1; num_classes])
    }

    /// Builds the map from per-sample cluster indices local to each parent.
    /// `counts[c]` is the number of clusters of parent `c`; every local index
    /// of a sample of class `c` must be below `counts[c]`.
    pub fn from_local_assignments(
        parent_labels: &[usize],
        local: &[usize],
        counts: &[usize],
    ) -> Result<Self> {
        if parent_labels.len() != local.len() {
            return Err(Error::Dimension {
                expected: parent_labels.len(),
                got: local.len(),
            });
        }
        let mut parent_pseudo = Vec::with_capacity(counts.len());
        let mut pseudo_parent = Vec::new();
        for (c, &k) in counts.iter().enumerate() {
            if k == 0 {
                return Err(Error::param("counts", format!("class {c} has zero clusters")));
            }
            let start = pseudo_parent.len();
            parent_pseudo.push((start..start + k).collect());
            pseudo_parent.extend(std::iter::repeat_n(c, k));
        }
        let mut sample_pseudo = Vec::with_capacity(local.len());
        for (&p, &l) in parent_labels.iter().zip(local) {
            let ids: &Vec<usize> = parent_pseudo.get(p).ok_or(Error::Label {
                label: p,
                classes: counts.len(),
            })?;
            let id = *ids.get(l).ok_or(Error::Label {
                label: l,
                classes: ids.len(),
            })?;
            sample_pseudo.push(id);
        }
        Ok(Self {
            parent_pseudo,
            sample_pseudo,
            pseudo_parent,
        })
    }

    pub fn num_parents(&self) -> usize {
        self.parent_pseudo.len()
    }

    pub fn num_pseudo(&self) -> usize {
        self.pseudo_parent.len()
    }

    pub fn pseudo_ids(&self, parent: usize) -> &[usize] {
        &self.parent_pseudo[parent]
    }

    pub fn cluster_counts(&self) -> Vec<usize> {
        self.parent_pseudo.iter().map(Vec::len).collect()
    }

    pub fn sample_pseudo(&self) -> &[usize] {
        &self.sample_pseudo
    }

    pub fn parent_of(&self, pseudo: usize) -> usize {
        self.pseudo_parent[pseudo]
    }

    pub fn pseudo_to_parent(&self) -> &[usize] {
        &self.pseudo_parent
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_map() {
        let m = SubClassMap::identity(&[0, 1, 2, 1], 3).unwrap();
        assert_eq!(m.num_pseudo(), 3);
        assert_eq!(m.sample_pseudo(), &[0, 1, 2, 1]);
        assert_eq!(m.pseudo_to_parent(), &[0, 1, 2]);
    }

    #[test]
    fn contiguous_ids_per_parent() {
        let m = SubClassMap::from_local_assignments(&[0, 0, 1, 1, 2], &[0, 1, 0, 2, 0], &[2, 3, 1])
            .unwrap();
        assert_eq!(m.pseudo_ids(1), &[2, 3, 4]);
        assert_eq!(m.sample_pseudo(), &[0, 1, 2, 4, 5]);
        assert_eq!(m.parent_of(4), 1);
        assert_eq!(m.cluster_counts(), vec![2, 3, 1]);
    }

    #[test]
    fn rejects_bad_local_index() {
        assert!(SubClassMap::from_local_assignments(&[0], &[1], &[1]).is_err());
        assert!(SubClassMap::from_local_assignments(&[0], &[0], &[0]).is_err());
    }
}
