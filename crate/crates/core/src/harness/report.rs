//! Per-run report and its CSV artifacts.

use std::fs;
use std::io;
use std::path::Path;

use crate::cache::Op;
use crate::config::ScenarioConfig;
use crate::congctl::{kbps_to_gbps, RateSample};
use crate::harness::oracle::{self, Verdict};
use crate::harness::plot;
use crate::harness::stable::{self, StableParams};
use crate::metrics::{LatencyReport, Summary, LATENCY_CSV_HEADER, PART_NAMES};
use crate::system::{RunOutput, Sample};

#[derive(Clone, Debug)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub out: RunOutput,
    /// Over requests that crossed the link.
    pub latency: LatencyReport,
    pub write: Summary,
    pub read: Summary,
    /// Mean over every completed request, host path included.
    pub host_mean_ns: f64,
    pub first_stable_gbps: Option<f64>,
    pub final_stable_gbps: Option<f64>,
    pub pfc_count: u64,
    /// Frames actually retransmitted, both directions.
    pub retx: u64,
    /// Frames Go-Back-N would have resent for the same loss signals.
    pub retx_gbn_equivalent: u64,
    pub mean_up_gbps: f64,
    pub verdict: Verdict,
}

/// Sender rate in Gbps at each sample.
pub fn rate_trace(samples: &[Sample]) -> Vec<f64> {
    samples.iter().map(|s| kbps_to_gbps(s.cr_kbps)).collect()
}

impl RunReport {
    pub fn build(config: ScenarioConfig, out: RunOutput) -> Self {
        let latency = LatencyReport::of(out.remote_records(None));
        let totals = |op| out.remote_records(Some(op)).map(|r| r.total()).collect::<Vec<_>>();
        let write = Summary::of(&totals(Op::Write));
        let read = Summary::of(&totals(Op::Read));
        let host_mean_ns = if out.records.is_empty() {
            0.0
        } else {
            out.records.iter().map(|r| r.total() as f64).sum::<f64>() / out.records.len() as f64
                + config.cn.host_path_ns as f64
        };
        let rates = rate_trace(&out.samples);
        let from = out.cn.first_pfc_at.map_or(0, |t| {
            out.samples.iter().position(|s| s.time >= t).unwrap_or(out.samples.len())
        });
        let p = StableParams::default();
        let first = stable::first_stable(&rates, from, p).map(|w| w.mean);
        let last = stable::final_stable(&rates, p).map(|w| w.mean);
        let mean_up_gbps = if out.samples.is_empty() {
            0.0
        } else {
            out.samples.iter().map(|s| s.up_gbps).sum::<f64>() / out.samples.len() as f64
        };
        let arq = out.arq_total();
        let verdict = oracle::verify(&out.ops, &out.image);
        Self {
            latency,
            write,
            read,
            host_mean_ns,
            first_stable_gbps: first,
            final_stable_gbps: last,
            pfc_count: out.fifo.pfc_sent,
            retx: arq.total_retx(),
            retx_gbn_equivalent: arq.gbn_equivalent + arq.rto_retx + arq.fast_retx,
            mean_up_gbps,
            verdict,
            config,
            out,
        }
    }

    pub fn latency_csv(&self) -> String {
        let mut s = format!("{LATENCY_CSV_HEADER}\n");
        for r in &self.out.records {
            s.push_str(&r.csv_row(self.config.cn.host_path_ns));
            s.push('\n');
        }
        s
    }

    pub fn rate_csv(&self) -> String {
        let mut s = format!("{}\n", Sample::CSV_HEADER);
        for x in &self.out.samples {
            s.push_str(&x.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn cc_trace_csv(&self) -> String {
        let mut s = format!("{}\n", RateSample::CSV_HEADER);
        for x in &self.out.rate_log {
            s.push_str(&x.csv_row());
            s.push('\n');
        }
        s
    }

    fn opt(v: Option<f64>) -> String {
        v.map_or_else(|| "none".into(), |x| format!("{x:.3}"))
    }

    pub fn summary_csv(&self) -> String {
        let o = &self.out;
        let mut rows: Vec<(String, String)> = vec![
            ("end_time_ns".into(), o.end_time.ns().to_string()),
            ("drained".into(), o.drained.to_string()),
            ("events".into(), o.events.to_string()),
            ("issued".into(), o.cn.issued.to_string()),
            ("completed".into(), o.cn.completed.to_string()),
            ("write_mean_ns".into(), format!("{:.1}", self.write.mean)),
            ("read_mean_ns".into(), format!("{:.1}", self.read.mean)),
            ("host_mean_ns".into(), format!("{:.1}", self.host_mean_ns)),
            ("network_fraction".into(), format!("{:.4}", self.latency.network_fraction)),
        ];
        for (i, n) in PART_NAMES.iter().enumerate() {
            rows.push((format!("part_{n}_mean_ns"), format!("{:.1}", self.latency.parts[i].mean)));
        }
        if let Some(c) = o.cache {
            rows.push(("cache_hits".into(), c.hits.to_string()));
            rows.push(("cache_misses".into(), c.misses.to_string()));
            rows.push(("cache_writebacks".into(), c.writebacks.to_string()));
        }
        rows.extend([
            ("pfc_sent".into(), self.pfc_count.to_string()),
            ("pfc_applied".into(), o.cn.pfc_applied.to_string()),
            ("pfc_duplicates".into(), o.cn.pfc_duplicates.to_string()),
            ("fifo_peak".into(), o.fifo.peak.to_string()),
            ("fifo_overruns".into(), o.fifo.overruns.to_string()),
            ("first_stable_gbps".into(), Self::opt(self.first_stable_gbps)),
            ("final_stable_gbps".into(), Self::opt(self.final_stable_gbps)),
            ("mean_up_gbps".into(), format!("{:.3}", self.mean_up_gbps)),
            ("retx".into(), self.retx.to_string()),
            ("retx_gbn_equivalent".into(), self.retx_gbn_equivalent.to_string()),
            ("frames_dropped".into(), (o.up.dropped + o.down.dropped).to_string()),
            ("frames_corrupted".into(), (o.up.corrupted + o.down.corrupted).to_string()),
            ("double_completions".into(), o.cn.double_completions.to_string()),
            ("tlb_hits".into(), o.translate.tlb_hits.to_string()),
            ("tlb_walks".into(), o.translate.walks.to_string()),
            ("dram_accesses".into(), o.dram_accesses.to_string()),
            ("oracle".into(), self.verdict.to_string()),
        ]);
        let mut s = String::from("key,value\n");
        for (k, v) in rows {
            s.push_str(&format!("{k},{v}\n"));
        }
        s
    }

    /// Writes every artifact into `dir`, creating it if needed.
    pub fn write_artifacts(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.toml"), self.config.to_toml())?;
        fs::write(dir.join("latency.csv"), self.latency_csv())?;
        fs::write(dir.join("rate.csv"), self.rate_csv())?;
        fs::write(dir.join("cc_trace.csv"), self.cc_trace_csv())?;
        fs::write(dir.join("summary.csv"), self.summary_csv())?;
        fs::write(dir.join("translation.csv"), &self.out.translation_csv)?;
        fs::write(dir.join("ops.log"), oracle::format_ops(&self.out.ops))?;
        fs::write(dir.join("image.txt"), oracle::format_image(&self.out.image))?;
        if !self.out.samples.is_empty() {
            let t: Vec<f64> = self.out.samples.iter().map(|s| s.time.us_f64()).collect();
            let svg = plot::line_chart(
                "sender rate and link throughput",
                "time (us)",
                "Gbps",
                &[
                    ("cr", &t, &rate_trace(&self.out.samples)),
                    (
                        "up link",
                        &t,
                        &self.out.samples.iter().map(|s| s.up_gbps).collect::<Vec<_>>(),
                    ),
                ],
            );
            fs::write(dir.join("rate.svg"), svg)?;
        }
        Ok(())
    }
}

/// Re-checks a run directory written by `write_artifacts`.
pub fn verify_dir(dir: &Path) -> Result<Verdict, String> {
    let read = |n: &str| fs::read_to_string(dir.join(n)).map_err(|e| format!("{n}: {e}"));
    let ops = oracle::parse_ops(&read("ops.log")?).map_err(|e| format!("ops.log {e}"))?;
    let img = oracle::parse_image(&read("image.txt")?).map_err(|e| format!("image.txt {e}"))?;
    Ok(oracle::verify(&ops, &img))
}
