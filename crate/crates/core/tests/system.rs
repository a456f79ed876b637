//! Whole-system runs: timing identities, fault recovery, oracle checks and
//! artifact round trips.

use cxlnet::cache::Op;
use cxlnet::cn::Backend;
use cxlnet::config::ScenarioConfig;
use cxlnet::endpoint::ArqMode;
use cxlnet::fabric::LossTrace;
use cxlnet::harness::oracle::{self, Verdict};
use cxlnet::harness::report::verify_dir;
use cxlnet::harness::{run_scenario, run_scenario_with};
use cxlnet::metrics::ServedBy;
use cxlnet::system::World;

fn small(seed: u64) -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    c.seed = seed;
    c.workload.request_count = 2_000;
    c.workload.outstanding = 16;
    c.workload.footprint_bytes = 256 << 10;
    c
}

#[test]
fn parts_sum_to_total_exactly() {
    let r = run_scenario(&small(1)).unwrap();
    assert!(r.out.drained);
    assert_eq!(r.out.records.len(), 2_000);
    for rec in &r.out.records {
        assert!(rec.is_ordered());
        assert_eq!(rec.parts().iter().sum::<u64>(), rec.total());
    }
    assert!(r.verdict.passed());
}

#[test]
fn unloaded_single_requests() {
    for (op, want) in [(Op::Write, 1059), (Op::Read, 1079)] {
        let mut c = small(3);
        c.cn.cache_enabled = false;
        c.workload.outstanding = 1;
        c.workload.request_count = 50;
        c.workload.read_ratio = if op == Op::Read { 1.0 } else { 0.0 };
        let r = run_scenario(&c).unwrap();
        // The first touch of a page also pays a table walk.
        let steady: Vec<u64> = r.out.records.iter().skip(10).map(|x| x.total()).collect();
        let mean = steady.iter().sum::<u64>() as f64 / steady.len() as f64;
        assert!((mean - want as f64).abs() < 30.0, "{op:?} {mean}");
    }
}

#[test]
fn identical_config_is_byte_identical() {
    let mut c = small(9);
    c.faults.drop_probability = 0.01;
    c.faults.corrupt_probability = 0.01;
    c.run.duration_ns = 0;
    let (a, ta) = run_scenario_with(&c, true).unwrap();
    let (b, tb) = run_scenario_with(&c, true).unwrap();
    assert_eq!(a.latency_csv(), b.latency_csv());
    assert_eq!(a.rate_csv(), b.rate_csv());
    assert_eq!(a.cc_trace_csv(), b.cc_trace_csv());
    assert_eq!(a.summary_csv(), b.summary_csv());
    assert_eq!(ta, tb);
    let mut d = c.clone();
    d.seed = 10;
    assert_ne!(run_scenario(&d).unwrap().latency_csv(), a.latency_csv());
}

#[test]
fn lossy_link_drains_and_verifies() {
    for mode in [ArqMode::Selective, ArqMode::GoBackN] {
        let mut c = small(4);
        c.arq.mode = mode;
        c.faults.drop_probability = 0.02;
        c.faults.corrupt_probability = 0.02;
        let r = run_scenario(&c).unwrap();
        assert!(r.out.drained, "{mode:?}");
        assert_eq!(r.out.cn.completed, 2_000);
        assert_eq!(r.out.cn.double_completions, 0);
        assert!(r.retx > 0);
        assert_eq!(r.verdict, Verdict::Pass, "{mode:?}");
    }
}

#[test]
fn cache_with_faults_verifies() {
    for backend in [Backend::Remote, Backend::Local] {
        let mut c = small(5);
        c.cn.cache_enabled = true;
        c.cn.backend = backend;
        c.workload.footprint_bytes = 128 << 10;
        c.faults.drop_probability = 0.01;
        c.faults.corrupt_probability = 0.01;
        let r = run_scenario(&c).unwrap();
        assert!(r.out.drained);
        let cs = r.out.cache.unwrap();
        assert!(cs.hits > 0 && cs.misses > 0 && cs.writebacks > 0);
        assert!(r.verdict.passed(), "{backend:?}: {}", r.verdict);
        let hits = r.out.records.iter().filter(|x| x.served_by == ServedBy::CacheHit).count();
        // Write misses without a victim also finish inside the cache.
        assert!(hits as u64 >= cs.hits);
    }
}

#[test]
fn loss_trace_drops_a_named_frame() {
    let mut c = small(6);
    c.workload.request_count = 200;
    let trace = LossTrace::parse("DROP 5\nCORRUPT 9 down\n").unwrap();
    let out = World::new(&c, trace).run();
    assert!(out.drained);
    assert_eq!(out.up.dropped, 1);
    assert_eq!(out.down.corrupted, 1);
    assert!(out.arq_total().total_retx() >= 2);
    assert!(oracle::verify(&out.ops, &out.image).passed());
}

#[test]
fn skipped_write_is_caught() {
    let mut c = small(8);
    c.cn.cache_enabled = true;
    let r = run_scenario(&c).unwrap();
    assert!(r.verdict.passed());
    let w = r.out.ops.iter().rev().find(|o| o.op == Op::Write).unwrap();
    let v = oracle::verify_with(&r.out.ops, &r.out.image, Some(w.req_id));
    assert!(!v.passed());
}

#[test]
fn artifacts_round_trip_through_verify() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(11);
    c.workload.request_count = 300;
    let r = run_scenario(&c).unwrap();
    r.write_artifacts(dir.path()).unwrap();
    for f in [
        "config.toml",
        "latency.csv",
        "rate.csv",
        "cc_trace.csv",
        "summary.csv",
        "translation.csv",
        "ops.log",
        "image.txt",
        "rate.svg",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(verify_dir(dir.path()).unwrap(), Verdict::Pass);
    let cfg = ScenarioConfig::load(&dir.path().join("config.toml")).unwrap();
    assert_eq!(cfg, c);
    let lat = std::fs::read_to_string(dir.path().join("latency.csv")).unwrap();
    assert_eq!(lat.lines().count(), 301);

    // Tamper with the image: the check must now fail.
    let p = dir.path().join("image.txt");
    let img = std::fs::read_to_string(&p).unwrap();
    let first = img.lines().next().unwrap().to_string();
    let (addr, data) = first.split_once(' ').unwrap();
    let flipped = if data.starts_with('0') { "1" } else { "0" };
    let bad = img.replacen(&first, &format!("{addr} {flipped}{}", &data[1..]), 1);
    std::fs::write(&p, bad).unwrap();
    assert!(!verify_dir(dir.path()).unwrap().passed());
}

#[test]
fn timed_run_drains_after_the_horizon() {
    let mut c = cxlnet::harness::experiments::congestion_config(&ScenarioConfig::default());
    c.run.duration_ns = 200_000;
    c.mn.fifo.pfc_threshold = 50;
    let r = run_scenario(&c).unwrap();
    assert!(r.out.drained);
    assert!(r.out.end_time.ns() >= 200_000);
    assert!(r.out.samples.iter().all(|s| s.time.ns() <= 200_000));
    assert_eq!(r.out.cn.completed, r.out.cn.issued);
    assert!(r.verdict.passed(), "{}", r.verdict);
}
