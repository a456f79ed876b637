//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed. Built with `harness = false`.

mod common;

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::cache_model::Harness;
use cxlnet::cache::{CacheConfig, Op};
use cxlnet::cn::Backend;
use cxlnet::config::ScenarioConfig;
use cxlnet::congctl::{CcParams, CongestionControl, PfcEffect, Phase};
use cxlnet::harness::experiments::{self as exp, CongestionRow};
use cxlnet::harness::run_scenario;
use cxlnet::mn::gmm::Gmm;
use cxlnet::mn::translate::{TranslateError, Translator};
use cxlnet::sim::{RngStream, SimTime};
use cxlnet::wire::{self, Body, Command, Frame, MacAddr, SeqNum, CRC_LEN};
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    ok: bool,
    detail: String,
}

fn check(cond: bool, what: impl Into<String>, fails: &mut Vec<String>) {
    if !cond {
        fails.push(what.into());
    }
}

fn outcome(fails: Vec<String>, detail: String) -> Outcome {
    if fails.is_empty() {
        Outcome { ok: true, detail }
    } else {
        Outcome {
            ok: false,
            detail: format!("{detail}; failed: {}", fails.join("; ")),
        }
    }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol * target
}

// ------------------------------------------------------------------ codec

fn c1_codec() -> Outcome {
    let mut fails = vec![];
    let mut runner = TestRunner::new_with_rng(
        Config {
            cases: 100_000,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    );
    let per_cmd: Vec<Cell<u64>> = (0..Command::ALL.len()).map(|_| Cell::new(0)).collect();
    let rt = runner.run(&common::frame(), |f| {
        let i = Command::ALL.iter().position(|c| *c == f.command()).unwrap();
        per_cmd[i].set(per_cmd[i].get() + 1);
        let bytes = wire::encode(&f).map_err(|e| proptest::test_runner::TestCaseError::fail(e.to_string()))?;
        proptest::prop_assert_eq!(bytes.len(), f.command().wire_len());
        let back = wire::decode(&bytes).map_err(|e| proptest::test_runner::TestCaseError::fail(e.to_string()))?;
        proptest::prop_assert_eq!(back, f);
        Ok(())
    });
    let counts: Vec<u64> = per_cmd.iter().map(Cell::get).collect();
    check(rt.is_ok(), format!("round trip: {rt:?}"), &mut fails);
    check(counts.iter().all(|n| *n > 0), "every variant exercised", &mut fails);

    let wr = Frame::new(
        MacAddr([2, 0, 0, 0, 0, 1]),
        MacAddr([2, 0, 0, 0, 0, 2]),
        Body::WriteReq {
            seq: SeqNum(7),
            awid: 3,
            address: 0x1000,
            data: [0xA5; 64],
        },
    );
    let wlen = wire::encode(&wr).unwrap().len() - CRC_LEN;
    check(wlen == 89, format!("WriteReq is {wlen} bytes"), &mut fails);

    // Half pure noise, half damaged valid frames.
    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    let valid: Vec<Vec<u8>> = {
        let mut r = TestRunner::new_with_rng(Config::default(), TestRng::deterministic_rng(RngAlgorithm::ChaCha));
        use proptest::strategy::{Strategy, ValueTree};
        (0..256)
            .map(|_| wire::encode(&common::frame().new_tree(&mut r).unwrap().current()).unwrap())
            .collect()
    };
    let mut crashes = 0u64;
    let mut accepted = 0u64;
    for i in 0..1_000_000u32 {
        let input = if i % 2 == 0 {
            let n = rng.gen_range(0..128);
            (0..n).map(|_| rng.gen()).collect::<Vec<u8>>()
        } else {
            let mut v = valid[rng.gen_range(0..valid.len())].clone();
            for _ in 0..rng.gen_range(1..4) {
                let p = rng.gen_range(0..v.len());
                v[p] = rng.gen();
            }
            if rng.gen_bool(0.3) {
                v.truncate(rng.gen_range(0..v.len()));
            }
            v
        };
        match catch_unwind(AssertUnwindSafe(|| wire::decode(&input))) {
            Err(_) => crashes += 1,
            Ok(Ok(_)) => accepted += 1,
            Ok(Err(_)) => {}
        }
    }
    check(crashes == 0, format!("{crashes} decoder panics"), &mut fails);
    outcome(
        fails,
        format!("100000 round trips {counts:?}, WriteReq {wlen} B, 1000000 fuzz inputs, {crashes} crashes, {accepted} accepted"),
    )
}

// ---------------------------------------------------------- rate control

fn c2_cc_traces() -> Outcome {
    let mut fails = vec![];
    let p = CcParams::default();
    let mut c = CongestionControl::new(p.clone(), SimTime::ZERO);
    let mut traj = vec![c.current_rate()];
    c.on_pfc(SimTime::ZERO);
    traj.push(c.current_rate());
    c.on_deadline(SimTime::from_ns(p.t1_ns));
    let mut t = SimTime::from_ns(p.t1_ns + p.t3_ns);
    for _ in 0..5 {
        check(c.on_deadline(t), format!("speedup at {t:?}"), &mut fails);
        traj.push(c.current_rate());
        t = t + p.t3_ns;
    }
    let want = [100_000_000, 50_000_000, 75_000_000, 87_500_000, 93_750_000, 96_875_000, 98_437_500];
    check(traj == want, format!("trajectory {traj:?}"), &mut fails);

    let mut d = CongestionControl::new(p.clone(), SimTime::ZERO);
    d.on_pfc(SimTime::ZERO);
    let snap = d.state().clone();
    let dup = d.on_pfc(SimTime::from_ns(p.t2_ns - 1));
    check(dup == PfcEffect::Duplicate && d.state() == &snap, "duplicate inside t2", &mut fails);
    check(d.on_pfc(SimTime::from_ns(p.t2_ns)) == PfcEffect::Applied, "PFC at t2 applies", &mut fails);

    let mut f = CongestionControl::new(p.clone(), SimTime::ZERO);
    f.on_pfc(SimTime::ZERO);
    f.on_deadline(SimTime::from_ns(p.t1_ns));
    f.on_deadline(SimTime::from_ns(p.t1_ns + p.t3_ns));
    let cr = f.current_rate();
    f.on_pfc(SimTime::from_ns(p.t1_ns + p.t3_ns + 1_000));
    let s = f.state();
    check(
        s.phase == Phase::FastRecoveryPfcResponse && s.tr == cr * 7 / 8 && s.cr == cr * 3 / 4,
        format!("fast-recovery PFC: cr {} tr {} from {cr}", s.cr, s.tr),
        &mut fails,
    );
    outcome(fails, format!("trajectory {:?} Gbps", traj.iter().map(|r| *r as f64 / 1e6).collect::<Vec<_>>()))
}

// ------------------------------------------------------ congestion loop

fn c3_congestion(base: &ScenarioConfig) -> Outcome {
    let mut fails = vec![];
    let sweep = exp::exp_congestion_sweep(base, &exp::SWEEP_THRESHOLDS);
    let init = exp::exp_initial_rate_sweep(base, &exp::INITIAL_RATES_GBPS);
    let fin = |r: &CongestionRow| r.final_stable_gbps.unwrap_or(f64::NAN);

    let top = sweep.iter().find(|r| r.threshold == 105).unwrap();
    check(top.pfc == 0, format!("threshold 105 sent {} PFC", top.pfc), &mut fails);
    check(fin(top) >= 99.9, format!("threshold 105 final {:.2}", fin(top)), &mut fails);
    let finals: Vec<f64> = sweep.iter().map(fin).collect();
    check(
        finals.windows(2).all(|w| w[1] >= w[0] - 1e-9),
        format!("sweep not monotone {finals:.2?}"),
        &mut fails,
    );
    let ifin: Vec<f64> = init.iter().map(fin).collect();
    let (lo, hi) = ifin.iter().fold((f64::MAX, f64::MIN), |(a, b), x| (a.min(*x), b.max(*x)));
    check((hi - lo) / lo <= 0.05, format!("initial-rate finals spread {ifin:.2?}"), &mut fails);
    check(lo >= 35.0 && hi <= 50.0, format!("initial-rate finals {ifin:.2?} outside 35..50"), &mut fails);
    let gaps: Vec<f64> = sweep.iter().chain(&init).filter(|r| r.pfc > 0).filter_map(CongestionRow::gap).collect();
    let gap = gaps.iter().sum::<f64>() / gaps.len().max(1) as f64;
    check(!gaps.is_empty() && gap <= 0.15, format!("mean first/final gap {gap:.3}"), &mut fails);
    outcome(
        fails,
        format!(
            "sweep finals {finals:.1?}, pfc@105 {}, initial-rate finals {ifin:.1?}, mean gap {:.1}%",
            top.pfc,
            gap * 100.0
        ),
    )
}

// -------------------------------------------------------------- latency

fn c4_latency(base: &ScenarioConfig) -> Outcome {
    let mut fails = vec![];
    let s = exp::exp_latency_breakdown(base);
    let (w, r) = (s.write.write.mean, s.read.read.mean);
    check(within(w, 1880.0, 0.15), format!("write mean {w:.0}"), &mut fails);
    check(within(r, 1180.0, 0.15), format!("read mean {r:.0}"), &mut fails);
    check(
        (s.network_fraction - 0.70).abs() <= 0.10,
        format!("network fraction {:.3}", s.network_fraction),
        &mut fails,
    );
    check(within(s.mixed_host_ns, 1970.0, 0.15), format!("mixed {:.0}", s.mixed_host_ns), &mut fails);
    check(within(s.all_hit_host_ns, 415.0, 0.15), format!("all-hit {:.0}", s.all_hit_host_ns), &mut fails);
    let mut n = 0;
    let mut bad = 0;
    for rep in [&s.write, &s.read, &s.all_hit] {
        for rec in &rep.out.records {
            n += 1;
            if rec.parts().iter().sum::<u64>() != rec.total() {
                bad += 1;
            }
        }
    }
    check(bad == 0, format!("{bad} records break a+..+f = total"), &mut fails);
    outcome(
        fails,
        format!(
            "write {w:.0} ns, read {r:.0} ns, network {:.1}%, mixed {:.0} ns, all-hit {:.0} ns, identity held on {n} records",
            s.network_fraction * 100.0,
            s.mixed_host_ns,
            s.all_hit_host_ns
        ),
    )
}

// ---------------------------------------------------------------- cache

fn c5_cache(base: &ScenarioConfig) -> Outcome {
    let mut fails = vec![];
    const SEEDS: u64 = 100;
    const OPS: u64 = 10_000;

    // Model level: flat map plus brute-force LRU on every miss.
    let mut model_ops = 0u64;
    for seed in 0..SEEDS {
        let mut rng = RngStream::new(seed, "acceptance-cache");
        let mut h = Harness::new(CacheConfig::default());
        for i in 0..OPS {
            let line = rng.below(2048);
            let op = if rng.chance(0.5) { Op::Read } else { Op::Write };
            h.step(op, line * 64, [(i ^ seed) as u8; 64]);
            model_ops += 1;
        }
        h.finish();
    }

    // System level: the same volume through the full compute node, checked
    // by replay against the final memory image.
    let mut sys_ops = 0u64;
    let mut diverged = 0;
    for seed in 0..SEEDS {
        let mut c = base.clone();
        c.seed = seed;
        c.cn.cache_enabled = true;
        c.cn.backend = if seed % 2 == 0 { Backend::Remote } else { Backend::Local };
        c.workload.request_count = OPS;
        c.workload.outstanding = 16;
        c.workload.footprint_bytes = 128 << 10;
        c.run.sample_interval_ns = 0;
        let r = run_scenario(&c).expect("valid");
        sys_ops += r.out.ops.len() as u64;
        if !r.verdict.passed() || !r.out.drained {
            diverged += 1;
        }
    }
    check(diverged == 0, format!("{diverged} system runs diverged"), &mut fails);
    check(sys_ops >= SEEDS * OPS, format!("only {sys_ops} system ops"), &mut fails);

    let study = exp::exp_cache_study(base);
    let (rr, lr) = (study.remote_ratio(), study.local_ratio());
    check(within(rr, 18.4, 0.10), format!("remote ratio {rr:.2}"), &mut fails);
    check(within(lr, 2.9, 0.10), format!("local ratio {lr:.2}"), &mut fails);
    outcome(
        fails,
        format!(
            "{model_ops} model ops and {sys_ops} system ops over {SEEDS} seeds, 0 divergences, LRU matched; ratios remote {rr:.2}x local {lr:.2}x"
        ),
    )
}

// ---------------------------------------------------------- reliability

fn c6_reliability(base: &ScenarioConfig) -> Outcome {
    let mut fails = vec![];
    let seeds: Vec<u64> = (1..=20).collect();
    let rows = exp::exp_reliability(base, &[(0.01, 0.01)], &seeds, 100_000);
    let mut strict = 0;
    let mut eligible = 0;
    for r in &rows {
        check(r.drained, format!("seed {} did not drain", r.seed), &mut fails);
        check(r.oracle_pass, format!("seed {} oracle", r.seed), &mut fails);
        check(r.double_completions == 0, format!("seed {} double completion", r.seed), &mut fails);
        check(
            r.selective_retx <= r.gbn_retx,
            format!("seed {} selective {} > gbn {}", r.seed, r.selective_retx, r.gbn_retx),
            &mut fails,
        );
        if r.losses >= 10 {
            eligible += 1;
            if r.selective_retx < r.gbn_retx {
                strict += 1;
            }
        }
    }
    check(
        eligible > 0 && strict * 10 >= eligible * 9,
        format!("strictly fewer on {strict}/{eligible}"),
        &mut fails,
    );
    let sel: u64 = rows.iter().map(|r| r.selective_retx).sum();
    let gbn: u64 = rows.iter().map(|r| r.gbn_retx).sum();
    outcome(
        fails,
        format!("20 seeds x 100000 requests at 1%+1%: retx selective {sel} vs go-back-n {gbn}, strictly fewer on {strict}/{eligible}"),
    )
}

// ---------------------------------------------------------- translation

fn c7_translation() -> Outcome {
    let mut fails = vec![];
    const PAGE: u64 = 4096;
    let mut rng = RngStream::new(77, "acceptance-translation");
    let mut t = Translator::new(Gmm::new(8192 * PAGE, PAGE), 64);
    t.dual_path = true;
    let nodes: Vec<MacAddr> = (1..=8u64).map(|i| MacAddr::from_u64(0x0200_0000_0000 | i)).collect();
    let mut end: BTreeMap<MacAddr, u64> = BTreeMap::new();
    let mut wrong = 0u64;
    let mut faults = 0u64;
    let mut lookups = 0u64;
    for i in 0..100_000u64 {
        let cn = nodes[rng.below(nodes.len() as u64) as usize];
        if i % 500 == 0 {
            let bytes = (1 + rng.below(16)) * PAGE;
            let r = if end.contains_key(&cn) { t.expand(cn, bytes) } else { t.alloc(cn, bytes) };
            if let Ok(r) = r {
                end.insert(cn, r.cmem_base + r.length);
            }
            continue;
        }
        let e = end.get(&cn).copied().unwrap_or(0);
        let addr = rng.below(e + PAGE);
        lookups += 1;
        match t.translate(cn, addr) {
            Ok(x) => {
                if addr >= e || t.walk(cn, addr) != Some(x.mpmem_addr) {
                    wrong += 1;
                }
            }
            Err(TranslateError::TranslationFault { .. }) if addr >= e => faults += 1,
            Err(_) => wrong += 1,
        }
    }
    let st = t.stats();
    check(st.dual_path_mismatches == 0, format!("{} TLB/table mismatches", st.dual_path_mismatches), &mut fails);
    check(wrong == 0, format!("{wrong} wrong translations"), &mut fails);
    check(faults > 0, "no unmapped access exercised", &mut fails);
    let maps = t.gmm().mappings();
    let pages: BTreeSet<u64> = maps.iter().map(|m| m.2).collect();
    check(pages.len() == maps.len(), "a pool page is mapped twice", &mut fails);
    let owners_ok = maps.iter().all(|(cn, _, m)| t.gmm().owner_of(m / PAGE) == Some(*cn));
    check(owners_ok, "owner record disagrees with mapping", &mut fails);
    outcome(
        fails,
        format!(
            "{lookups} lookups across {} nodes, {} TLB hits, {faults} faults, {} pages mapped once each",
            nodes.len(),
            st.tlb_hits,
            maps.len()
        ),
    )
}

// ---------------------------------------------------------- determinism

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn c8_determinism(base: &ScenarioConfig) -> Outcome {
    let mut fails = vec![];
    let mut c = exp::congestion_config(base);
    c.run.duration_ns = 300_000;
    c.mn.fifo.pfc_threshold = 50;
    c.cn.cache_enabled = true;
    c.workload.read_ratio = 0.5;
    c.faults.drop_probability = 0.005;
    c.faults.corrupt_probability = 0.005;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_scenario(&c).expect("valid").write_artifacts(d.path()).unwrap();
    }
    let (a, b) = (read_dir(dirs[0].path()), read_dir(dirs[1].path()));
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    check(a.keys().eq(b.keys()), "artifact sets differ", &mut fails);
    check(differing.is_empty(), format!("differing files {differing:?}"), &mut fails);
    let bytes: usize = a.values().map(Vec::len).sum();
    outcome(fails, format!("{} artifacts, {bytes} bytes, identical across two runs", a.len()))
}

fn main() {
    let base = ScenarioConfig::default();
    let criteria: Vec<(&str, Duration, Box<dyn Fn() -> Outcome>)> = vec![
        ("1 codec conformance", Duration::from_secs(30), Box::new(c1_codec)),
        ("2 congestion-control traces", Duration::from_secs(1), Box::new(c2_cc_traces)),
        ("3 congestion closed loop", Duration::from_secs(120), Box::new(|| c3_congestion(&base))),
        ("4 latency calibration", Duration::from_secs(60), Box::new(|| c4_latency(&base))),
        ("5 cache correctness and ratios", Duration::from_secs(120), Box::new(|| c5_cache(&base))),
        ("6 reliability", Duration::from_secs(180), Box::new(|| c6_reliability(&base))),
        ("7 translation and allocation", Duration::from_secs(30), Box::new(c7_translation)),
        ("8 determinism", Duration::from_secs(120), Box::new(|| c8_determinism(&base))),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, budget, f) in &criteria {
        if !filter.is_empty() && !filter.iter().any(|x| name.contains(x.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| Outcome {
            ok: false,
            detail: format!(
                "panicked: {}",
                e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
            ),
        });
        let el = t0.elapsed();
        let in_time = el <= *budget;
        let ok = r.ok && in_time;
        let time_note = if in_time { String::new() } else { format!(" over the {budget:?} budget") };
        println!(
            "{} criterion {name}: {} [{:.2} s{time_note}]",
            if ok { "PASS" } else { "FAIL" },
            r.detail,
            el.as_secs_f64()
        );
        if !ok {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
