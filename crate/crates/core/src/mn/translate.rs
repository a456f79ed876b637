//! CMem to MPMem translation: a hashed page table with chaining, fronted by
//! a small fully associative LRU TLB.

use thiserror::Error;

use crate::mn::gmm::{Gmm, GmmError, Region};
use crate::sim::splitmix64;
use crate::wire::MacAddr;

pub const DEFAULT_TLB_ENTRIES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PageKey {
    pub cn: MacAddr,
    pub cmem_page: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TranslationEntry {
    pub key: PageKey,
    pub mpmem_page: u64,
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum TranslateError {
    #[error("no mapping for {cn} cmem {addr:#x}")]
    TranslationFault { cn: MacAddr, addr: u64 },
    #[error(transparent)]
    Gmm(#[from] GmmError),
}

fn key_hash(k: &PageKey) -> u64 {
    splitmix64(k.cn.to_u64() ^ splitmix64(k.cmem_page))
}

#[derive(Clone, Debug)]
pub struct PageTable {
    buckets: Vec<Vec<TranslationEntry>>,
    len: usize,
}

impl PageTable {
    pub fn new(buckets: usize) -> Self {
        let n = buckets.next_power_of_two().max(1);
        Self {
            buckets: vec![Vec::new(); n],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn bucket(&self, k: &PageKey) -> usize {
        (key_hash(k) as usize) & (self.buckets.len() - 1)
    }

    pub fn insert(&mut self, e: TranslationEntry) {
        let b = self.bucket(&e.key);
        let chain = &mut self.buckets[b];
        match chain.iter_mut().find(|x| x.key == e.key) {
            Some(x) => *x = e,
            None => {
                chain.push(e);
                self.len += 1;
            }
        }
    }

    pub fn lookup(&self, k: &PageKey) -> Option<u64> {
        self.buckets[self.bucket(k)]
            .iter()
            .find(|x| x.key == *k)
            .map(|x| x.mpmem_page)
    }

    pub fn longest_chain(&self) -> usize {
        self.buckets.iter().map(Vec::len).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
struct TlbSlot {
    entry: TranslationEntry,
    last_use: u64,
}

#[derive(Clone, Debug)]
pub struct Tlb {
    slots: Vec<TlbSlot>,
    capacity: usize,
    clock: u64,
}

impl Tlb {
    pub fn new(capacity: usize) -> Self {
        Self {
            slots: Vec::with_capacity(capacity),
            capacity,
            clock: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn lookup(&mut self, k: &PageKey) -> Option<u64> {
        self.clock += 1;
        let now = self.clock;
        self.slots.iter_mut().find(|s| s.entry.key == *k).map(|s| {
            s.last_use = now;
            s.entry.mpmem_page
        })
    }

    pub fn install(&mut self, entry: TranslationEntry) {
        self.clock += 1;
        let slot = TlbSlot {
            entry,
            last_use: self.clock,
        };
        if let Some(s) = self.slots.iter_mut().find(|s| s.entry.key == entry.key) {
            *s = slot;
        } else if self.slots.len() < self.capacity {
            self.slots.push(slot);
        } else if let Some(victim) = self.slots.iter_mut().min_by_key(|s| s.last_use) {
            *victim = slot;
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = &TranslationEntry> {
        self.slots.iter().map(|s| &s.entry)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Translation {
    pub mpmem_addr: u64,
    pub tlb_hit: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TranslateStats {
    pub lookups: u64,
    pub tlb_hits: u64,
    pub walks: u64,
    pub faults: u64,
    pub dual_path_mismatches: u64,
}

/// GMM plus page table plus TLB.
#[derive(Clone, Debug)]
pub struct Translator {
    gmm: Gmm,
    table: PageTable,
    tlb: Tlb,
    /// Walk the page table on every lookup and compare with the TLB.
    pub dual_path: bool,
    stats: TranslateStats,
}

impl Translator {
    pub fn new(gmm: Gmm, tlb_entries: usize) -> Self {
        let buckets = (gmm.pool_pages() as usize).max(16);
        Self {
            gmm,
            table: PageTable::new(buckets),
            tlb: Tlb::new(tlb_entries),
            dual_path: false,
            stats: TranslateStats::default(),
        }
    }

    pub fn gmm(&self) -> &Gmm {
        &self.gmm
    }

    pub fn table(&self) -> &PageTable {
        &self.table
    }

    pub fn tlb(&self) -> &Tlb {
        &self.tlb
    }

    pub fn stats(&self) -> TranslateStats {
        self.stats
    }

    fn install_region(&mut self, cn: MacAddr, r: &Region) {
        let pb = self.gmm.page_bytes();
        for (i, p) in r.mpmem_pages.iter().enumerate() {
            self.table.insert(TranslationEntry {
                key: PageKey {
                    cn,
                    cmem_page: (r.cmem_base / pb) + i as u64,
                },
                mpmem_page: *p,
            });
        }
    }

    pub fn alloc(&mut self, cn: MacAddr, bytes: u64) -> Result<Region, TranslateError> {
        let r = self.gmm.alloc(cn, bytes)?;
        self.install_region(cn, &r);
        Ok(r)
    }

    pub fn expand(&mut self, cn: MacAddr, bytes: u64) -> Result<Region, TranslateError> {
        let r = self.gmm.expand(cn, bytes)?;
        self.install_region(cn, &r);
        Ok(r)
    }

    pub fn translate(&mut self, cn: MacAddr, cmem_addr: u64) -> Result<Translation, TranslateError> {
        self.stats.lookups += 1;
        let pb = self.gmm.page_bytes();
        let key = PageKey {
            cn,
            cmem_page: cmem_addr / pb,
        };
        let offset = cmem_addr % pb;
        let fault = TranslateError::TranslationFault {
            cn,
            addr: cmem_addr,
        };
        if let Some(page) = self.tlb.lookup(&key) {
            self.stats.tlb_hits += 1;
            if self.dual_path && self.table.lookup(&key) != Some(page) {
                self.stats.dual_path_mismatches += 1;
            }
            return Ok(Translation {
                mpmem_addr: page * pb + offset,
                tlb_hit: true,
            });
        }
        self.stats.walks += 1;
        match self.table.lookup(&key) {
            Some(page) => {
                self.tlb.install(TranslationEntry {
                    key,
                    mpmem_page: page,
                });
                Ok(Translation {
                    mpmem_addr: page * pb + offset,
                    tlb_hit: false,
                })
            }
            None => {
                self.stats.faults += 1;
                Err(fault)
            }
        }
    }

    /// Page-table-only lookup, bypassing the TLB and its statistics.
    pub fn walk(&self, cn: MacAddr, cmem_addr: u64) -> Option<u64> {
        let pb = self.gmm.page_bytes();
        self.table
            .lookup(&PageKey {
                cn,
                cmem_page: cmem_addr / pb,
            })
            .map(|p| p * pb + cmem_addr % pb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mn::gmm::DEFAULT_PAGE_BYTES;

    const MB: u64 = 1024 * 1024;
    const A: MacAddr = MacAddr([2, 0, 0, 0, 0, 0xA]);
    const B: MacAddr = MacAddr([2, 0, 0, 0, 0, 0xB]);

    fn tr(pool_mb: u64, tlb: usize) -> Translator {
        Translator::new(Gmm::new(pool_mb * MB, DEFAULT_PAGE_BYTES), tlb)
    }

    #[test]
    fn second_access_hits_tlb() {
        let mut t = tr(64, 64);
        t.alloc(A, 4 * MB).unwrap();
        assert!(!t.translate(A, 0x40).unwrap().tlb_hit);
        let x = t.translate(A, 0x80).unwrap();
        assert!(x.tlb_hit);
        assert_eq!(x.mpmem_addr % DEFAULT_PAGE_BYTES, 0x80);
    }

    #[test]
    fn lru_adversary_always_misses() {
        let mut t = tr(256, 64);
        t.alloc(A, 65 * 2 * MB).unwrap();
        for _ in 0..3 {
            for p in 0..65u64 {
                t.translate(A, p * DEFAULT_PAGE_BYTES).unwrap();
            }
        }
        assert_eq!(t.stats().tlb_hits, 0);
        assert_eq!(t.stats().walks, 195);
    }

    #[test]
    fn unmapped_faults() {
        let mut t = tr(64, 64);
        assert_eq!(
            t.translate(A, 0),
            Err(TranslateError::TranslationFault { cn: A, addr: 0 })
        );
        t.alloc(A, 2 * MB).unwrap();
        assert!(t.translate(B, 0).is_err());
        assert!(t.translate(A, 2 * MB).is_err());
    }

    #[test]
    fn expand_for_one_node_leaves_the_other_alone() {
        let mut t = tr(64, 4);
        t.alloc(A, 4 * MB).unwrap();
        t.alloc(B, 4 * MB).unwrap();
        let before: Vec<_> = (0..2).map(|p| t.walk(B, p * DEFAULT_PAGE_BYTES)).collect();
        t.expand(A, 4 * MB).unwrap();
        let after: Vec<_> = (0..2).map(|p| t.walk(B, p * DEFAULT_PAGE_BYTES)).collect();
        assert_eq!(before, after);
        assert!(t.walk(A, 6 * MB).is_some());
    }

    #[test]
    fn colliding_buckets_still_resolve_exactly() {
        let mut pt = PageTable::new(1);
        for p in 0..50 {
            pt.insert(TranslationEntry {
                key: PageKey { cn: A, cmem_page: p },
                mpmem_page: 1000 + p,
            });
        }
        assert_eq!(pt.longest_chain(), 50);
        for p in 0..50 {
            assert_eq!(pt.lookup(&PageKey { cn: A, cmem_page: p }), Some(1000 + p));
        }
        assert_eq!(pt.lookup(&PageKey { cn: B, cmem_page: 0 }), None);
    }
}
