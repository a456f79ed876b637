//! Reference model for the cache: a flat map for values, write-back backing
//! memory and a brute-force recency list per set.

use std::collections::HashMap;

use cxlnet::cache::{Cache, CacheConfig, CacheOutcome, LineState, Op};
use cxlnet::wire::LineData;

/// Write-back memory behind a cache, driven the way the compute node drives
/// it, with every read checked against a plain map.
pub struct Harness {
    cache: Cache,
    backing: HashMap<u64, LineData>,
    flat: HashMap<u64, LineData>,
    /// Per set, addresses from most to least recently used.
    recency: HashMap<usize, Vec<u64>>,
}

impl Harness {
    pub fn new(cfg: CacheConfig) -> Self {
        Self {
            cache: Cache::new(cfg).unwrap(),
            backing: HashMap::new(),
            flat: HashMap::new(),
            recency: HashMap::new(),
        }
    }

    fn mem(&self, a: u64) -> LineData {
        self.backing.get(&a).copied().unwrap_or([0; 64])
    }

    fn touch(&mut self, a: u64) {
        let set = self.cache.set_index(a);
        let r = self.recency.entry(set).or_default();
        r.retain(|x| *x != a);
        r.insert(0, a);
    }

    fn forget(&mut self, a: u64) {
        let set = self.cache.set_index(a);
        self.recency.entry(set).or_default().retain(|x| *x != a);
    }

    /// The brute-force LRU victim when the set is full.
    fn expected_victim(&self, a: u64) -> Option<u64> {
        let set = self.cache.set_index(a);
        let r = self.recency.get(&set)?;
        (r.len() == self.cache.config().ways).then(|| *r.last().unwrap())
    }

    pub fn step(&mut self, op: Op, a: u64, d: LineData) {
        if !self.cache.contains(a) {
            let got = self.cache.peek_victim(a).map(|(v, _)| v);
            assert_eq!(got, self.expected_victim(a), "victim for {a:#x}");
        }
        match op {
            Op::Write => {
                self.flat.insert(a, d);
                match self.cache.access(Op::Write, a, Some(&d)).unwrap() {
                    CacheOutcome::WriteHit | CacheOutcome::WriteAllocNoRemote => {}
                    CacheOutcome::WriteReplace { evicted_addr, evicted_data } => {
                        if let Some(v) = evicted_data {
                            self.backing.insert(evicted_addr, v);
                        }
                        self.forget(evicted_addr);
                    }
                    o => panic!("write gave {o:?}"),
                }
                self.touch(a);
            }
            Op::Read => {
                let want = self.flat.get(&a).copied().unwrap_or([0; 64]);
                let got = match self.cache.access(Op::Read, a, None).unwrap() {
                    CacheOutcome::ReadHit(x) => x,
                    CacheOutcome::NeedFetch => self.fill(a),
                    CacheOutcome::NeedWritebackThenFetch { evicted_addr, evicted_data } => {
                        self.backing.insert(evicted_addr, evicted_data);
                        self.cache.invalidate(evicted_addr).unwrap();
                        self.forget(evicted_addr);
                        self.fill(a)
                    }
                    o => panic!("read gave {o:?}"),
                };
                assert_eq!(got, want, "read {a:#x}");
                self.touch(a);
            }
        }
    }

    fn fill(&mut self, a: u64) -> LineData {
        let d = self.mem(a);
        if let Some(ev) = self.cache.fill(a, &d).unwrap() {
            if let Some(v) = ev.data {
                self.backing.insert(ev.addr, v);
            }
            self.forget(ev.addr);
        }
        assert_eq!(self.cache.state_of(a), LineState::E);
        d
    }

    pub fn finish(mut self) {
        for (a, d) in self.cache.flush() {
            self.backing.insert(a, d);
        }
        for (a, d) in &self.flat {
            assert_eq!(self.backing.get(a), Some(d), "final {a:#x}");
        }
    }
}

