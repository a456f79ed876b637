//! Global memory manager: hands out pool pages to compute nodes and keeps a
//! per-node record of contiguous CMem regions.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::wire::MacAddr;

pub const DEFAULT_PAGE_BYTES: u64 = 2 * 1024 * 1024;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum GmmError {
    #[error("pool exhausted: need {needed} pages, {free} free")]
    OutOfPoolMemory { needed: u64, free: u64 },
    #[error("{0} has no allocation to expand")]
    NoAllocation(MacAddr),
    #[error("{0} already has an allocation")]
    AlreadyAllocated(MacAddr),
    #[error("zero-byte request")]
    Empty,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Region {
    pub cmem_base: u64,
    pub length: u64,
    /// Pool page index backing each CMem page of the region, in order.
    pub mpmem_pages: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct Gmm {
    page_bytes: u64,
    pool_pages: u64,
    free: VecDeque<u64>,
    owner: Vec<Option<MacAddr>>,
    records: BTreeMap<MacAddr, Vec<Region>>,
}

impl Gmm {
    pub fn new(pool_bytes: u64, page_bytes: u64) -> Self {
        assert!(page_bytes.is_power_of_two());
        let pool_pages = pool_bytes / page_bytes;
        Self {
            page_bytes,
            pool_pages,
            free: (0..pool_pages).collect(),
            owner: vec![None; pool_pages as usize],
            records: BTreeMap::new(),
        }
    }

    pub fn page_bytes(&self) -> u64 {
        self.page_bytes
    }

    pub fn pool_pages(&self) -> u64 {
        self.pool_pages
    }

    pub fn free_pages(&self) -> u64 {
        self.free.len() as u64
    }

    pub fn owner_of(&self, page: u64) -> Option<MacAddr> {
        self.owner.get(page as usize).copied().flatten()
    }

    pub fn regions(&self, cn: MacAddr) -> &[Region] {
        self.records.get(&cn).map_or(&[], Vec::as_slice)
    }

    pub fn cn_ids(&self) -> impl Iterator<Item = &MacAddr> {
        self.records.keys()
    }

    fn take_pages(&mut self, cn: MacAddr, bytes: u64) -> Result<Vec<u64>, GmmError> {
        if bytes == 0 {
            return Err(GmmError::Empty);
        }
        let needed = bytes.div_ceil(self.page_bytes);
        if needed > self.free.len() as u64 {
            return Err(GmmError::OutOfPoolMemory {
                needed,
                free: self.free.len() as u64,
            });
        }
        let pages: Vec<u64> = self.free.drain(..needed as usize).collect();
        for p in &pages {
            debug_assert!(self.owner[*p as usize].is_none());
            self.owner[*p as usize] = Some(cn);
        }
        Ok(pages)
    }

    /// First allocation for a node; its CMem space starts at zero.
    pub fn alloc(&mut self, cn: MacAddr, bytes: u64) -> Result<Region, GmmError> {
        if self.records.contains_key(&cn) {
            return Err(GmmError::AlreadyAllocated(cn));
        }
        let pages = self.take_pages(cn, bytes)?;
        let region = Region {
            cmem_base: 0,
            length: pages.len() as u64 * self.page_bytes,
            mpmem_pages: pages,
        };
        self.records.insert(cn, vec![region.clone()]);
        Ok(region)
    }

    /// Appends a region after the node's existing CMem space. Earlier
    /// mappings are untouched.
    pub fn expand(&mut self, cn: MacAddr, bytes: u64) -> Result<Region, GmmError> {
        let end = match self.records.get(&cn) {
            Some(rs) => rs.last().map_or(0, |r| r.cmem_base + r.length),
            None => return Err(GmmError::NoAllocation(cn)),
        };
        let pages = self.take_pages(cn, bytes)?;
        let region = Region {
            cmem_base: end,
            length: pages.len() as u64 * self.page_bytes,
            mpmem_pages: pages,
        };
        self.records.get_mut(&cn).unwrap().push(region.clone());
        Ok(region)
    }

    /// Every (cn, cmem_page_addr, mpmem_page_addr) mapping, ordered.
    pub fn mappings(&self) -> Vec<(MacAddr, u64, u64)> {
        let mut out = Vec::new();
        for (cn, regions) in &self.records {
            for r in regions {
                for (i, p) in r.mpmem_pages.iter().enumerate() {
                    out.push((
                        *cn,
                        r.cmem_base + i as u64 * self.page_bytes,
                        p * self.page_bytes,
                    ));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    const MB: u64 = 1024 * 1024;
    const A: MacAddr = MacAddr([2, 0, 0, 0, 0, 0xA]);
    const B: MacAddr = MacAddr([2, 0, 0, 0, 0, 0xB]);

    #[test]
    fn alloc_maps_whole_pages() {
        let mut g = Gmm::new(64 * MB, DEFAULT_PAGE_BYTES);
        let r = g.alloc(A, 4 * MB).unwrap();
        assert_eq!(r.mpmem_pages.len(), 2);
        assert_eq!(r.cmem_base, 0);
        let r = g.alloc(B, 1).unwrap();
        assert_eq!(r.mpmem_pages.len(), 1);
    }

    #[test]
    fn nodes_get_disjoint_pages() {
        let mut g = Gmm::new(64 * MB, DEFAULT_PAGE_BYTES);
        let a: BTreeSet<_> = g.alloc(A, 10 * MB).unwrap().mpmem_pages.into_iter().collect();
        let b: BTreeSet<_> = g.alloc(B, 10 * MB).unwrap().mpmem_pages.into_iter().collect();
        assert!(a.is_disjoint(&b));
    }

    #[test]
    fn exhaustion() {
        let mut g = Gmm::new(8 * MB, DEFAULT_PAGE_BYTES);
        g.alloc(A, 8 * MB).unwrap();
        assert!(matches!(
            g.alloc(B, 1),
            Err(GmmError::OutOfPoolMemory { .. })
        ));
        assert!(matches!(
            g.expand(A, 1),
            Err(GmmError::OutOfPoolMemory { .. })
        ));
    }

    #[test]
    fn expand_appends_and_keeps_old_mappings() {
        let mut g = Gmm::new(64 * MB, DEFAULT_PAGE_BYTES);
        g.alloc(A, 2 * MB).unwrap();
        g.alloc(B, 2 * MB).unwrap();
        let before = g.mappings();
        let r = g.expand(A, 2 * MB).unwrap();
        assert_eq!(r.cmem_base, 2 * MB);
        assert_eq!(g.regions(A).len(), 2);
        let after = g.mappings();
        for m in &before {
            assert!(after.contains(m));
        }
        assert_eq!(g.expand(MacAddr([9; 6]), 1), Err(GmmError::NoAllocation(MacAddr([9; 6]))));
    }
}
