use std::collections::{BTreeMap, BTreeSet, HashMap};

/// Maps each DRAM row to the dirty L2 lines it holds.
#[derive(Clone, Debug, Default)]
pub struct DirtyBlockIndex {
    rows: BTreeMap<u64, BTreeSet<u64>>,
    row_of_line: HashMap<u64, u64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DbiDiscrepancy {
    /// Dirty in the cache but not indexed.
    Missing(u64),
    /// Indexed but not dirty in the cache.
    Stale(u64),
}

impl DirtyBlockIndex {
    pub fn mark(&mut self, line_addr: u64, row: u64) {
        if let Some(&old) = self.row_of_line.get(&line_addr) {
            debug_assert_eq!(old, row, "a line maps to one row");
            return;
        }
        self.row_of_line.insert(line_addr, row);
        self.rows.entry(row).or_default().insert(line_addr);
    }

    pub fn clear(&mut self, line_addr: u64) {
        let Some(row) = self.row_of_line.remove(&line_addr) else { return };
        let set = self.rows.get_mut(&row).expect("indexed row exists");
        set.remove(&line_addr);
        if set.is_empty() {
            self.rows.remove(&row);
        }
    }

    /// Removes the evicted line and returns the other dirty lines of its row,
    /// which are removed from the index as well. The caller cleans them.
    pub fn on_dirty_evict(&mut self, line_addr: u64) -> Vec<u64> {
        let Some(row) = self.row_of_line.remove(&line_addr) else { return Vec::new() };
        let set = self.rows.remove(&row).unwrap_or_default();
        let rinse: Vec<u64> = set.into_iter().filter(|&l| l != line_addr).collect();
        for l in &rinse {
            self.row_of_line.remove(l);
        }
        rinse
    }

    pub fn row_set(&self, row: u64) -> Option<&BTreeSet<u64>> {
        self.rows.get(&row)
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn len(&self) -> usize {
        self.row_of_line.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_of_line.is_empty()
    }

    /// Compares the index against the cache's dirty lines (sorted ascending).
    pub fn audit(&self, dirty_lines: &[u64]) -> Vec<DbiDiscrepancy> {
        let mut out = Vec::new();
        let dirty: BTreeSet<u64> = dirty_lines.iter().copied().collect();
        for &l in &dirty {
            if !self.row_of_line.contains_key(&l) {
                out.push(DbiDiscrepancy::Missing(l));
            }
        }
        let mut indexed: Vec<u64> = self.row_of_line.keys().copied().collect();
        indexed.sort_unstable();
        for l in indexed {
            if !dirty.contains(&l) {
                out.push(DbiDiscrepancy::Stale(l));
            }
        }
        out
    }
}
