use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use cxlnet::config::{ConfigError, ScenarioConfig};
use cxlnet::harness::experiments as exp;
use cxlnet::harness::oracle::Verdict;
use cxlnet::harness::plot;
use cxlnet::harness::report::verify_dir;
use cxlnet::harness::vary::{parse_vary, with_overrides};
use cxlnet::harness::{run_scenario_with, RunReport};

/// Discrete-event model of CXL memory traffic carried over Ethernet.
#[derive(Parser)]
#[command(name = "cxlnet", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Override a config key, e.g. `--set mn.fifo.pfc_threshold=50`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run a scenario once per value (cartesian product over several --vary).
    Sweep {
        config: PathBuf,
        #[arg(long, required = true, value_name = "KEY=V1,V2,...")]
        vary: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Re-check the oracle on a run directory.
    Verify { run_dir: PathBuf },
    /// Run a canned experiment against a base config (defaults if omitted).
    Exp {
        name: ExpName,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Seeds for the reliability experiment.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Requests per reliability run.
        #[arg(long, default_value_t = 100_000)]
        requests: u64,
    },
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Write the event dispatch log (trace.log in the CSV dir, else stderr).
    #[arg(long)]
    trace: bool,
    /// Directory for CSV and SVG output.
    #[arg(long)]
    csv_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExpName {
    Latency,
    Congestion,
    InitialRate,
    Naive,
    Cache,
    Reliability,
    All,
}

enum Failure {
    Config(String),
    Oracle(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(e.to_string())
    }
}

fn kv(s: &str) -> Result<(String, String), Failure> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Failure::Config(format!("{s}: expected KEY=VALUE")))
}

fn load(path: &Path, overrides: &[(String, String)], seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = with_overrides(&text, overrides)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_summary(r: &RunReport) {
    let o = &r.out;
    println!(
        "completed {}/{} requests in {:.3} us, drained {}",
        o.cn.completed,
        o.cn.issued,
        o.end_time.us_f64(),
        o.drained
    );
    if r.write.count > 0 {
        println!("write mean {:.1} ns over {}", r.write.mean, r.write.count);
    }
    if r.read.count > 0 {
        println!("read mean {:.1} ns over {}", r.read.mean, r.read.count);
    }
    println!("host mean {:.1} ns", r.host_mean_ns);
    if let Some(f) = r.final_stable_gbps {
        println!("final stable rate {f:.2} Gbps, pfc {}", r.pfc_count);
    }
    if r.retx > 0 {
        println!("retransmissions {} (go-back-n equivalent {})", r.retx, r.retx_gbn_equivalent);
    }
    println!("oracle {}", r.verdict);
}

fn run_one(cfg: &ScenarioConfig, common: &Common, dir: Option<&Path>) -> Result<RunReport, Failure> {
    let (rep, trace) = run_scenario_with(cfg, common.trace)?;
    if let Some(d) = dir {
        rep.write_artifacts(d)?;
        if let Some(t) = &trace {
            fs::write(d.join("trace.log"), t)?;
        }
    } else if let Some(t) = &trace {
        eprint!("{t}");
    }
    Ok(rep)
}

fn oracle_status(reps: &[&RunReport]) -> Result<(), Failure> {
    match reps.iter().find(|r| !r.verdict.passed()) {
        Some(r) => Err(Failure::Oracle(r.verdict.to_string())),
        None => Ok(()),
    }
}

fn cmd_run(config: &Path, common: &Common, set: &[String]) -> Result<(), Failure> {
    let ov = set.iter().map(|s| kv(s)).collect::<Result<Vec<_>, _>>()?;
    let cfg = load(config, &ov, common.seed)?;
    let rep = run_one(&cfg, common, common.csv_dir.as_deref())?;
    print_summary(&rep);
    if let Some(d) = &common.csv_dir {
        println!("artifacts in {}", d.display());
    }
    oracle_status(&[&rep])
}

fn cmd_sweep(config: &Path, vary: &[String], common: &Common) -> Result<(), Failure> {
    let axes = vary.iter().map(|v| parse_vary(v)).collect::<Result<Vec<_>, _>>()?;
    let mut points: Vec<Vec<(String, String)>> = vec![vec![]];
    for (k, vals) in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                vals.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((k.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    // Validate every point before spending time on any run.
    let cfgs = points
        .iter()
        .map(|p| load(config, p, common.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let keys: Vec<&str> = axes.iter().map(|(k, _)| k.as_str()).collect();
    let mut table = format!(
        "{},write_mean_ns,read_mean_ns,host_mean_ns,first_stable_gbps,final_stable_gbps,pfc,retx,oracle\n",
        keys.join(",")
    );
    let mut reps = Vec::new();
    for (p, cfg) in points.iter().zip(&cfgs) {
        let label: Vec<String> = p.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let dir = common.csv_dir.as_ref().map(|d| d.join(label.join("_")));
        let rep = run_one(cfg, common, dir.as_deref())?;
        let o = |v: Option<f64>| v.map_or_else(|| "none".into(), |x| format!("{x:.3}"));
        let vals: Vec<&str> = p.iter().map(|(_, v)| v.as_str()).collect();
        table.push_str(&format!(
            "{},{:.1},{:.1},{:.1},{},{},{},{},{}\n",
            vals.join(","),
            rep.write.mean,
            rep.read.mean,
            rep.host_mean_ns,
            o(rep.first_stable_gbps),
            o(rep.final_stable_gbps),
            rep.pfc_count,
            rep.retx,
            if rep.verdict.passed() { "pass" } else { "fail" }
        ));
        println!("{}: {}", label.join(" "), rep.verdict);
        reps.push(rep);
    }
    print!("{table}");
    if let Some(d) = &common.csv_dir {
        fs::create_dir_all(d)?;
        fs::write(d.join("sweep.csv"), &table)?;
    }
    oracle_status(&reps.iter().collect::<Vec<_>>())
}

fn cmd_verify(dir: &Path) -> Result<(), Failure> {
    match verify_dir(dir).map_err(Failure::Config)? {
        Verdict::Pass => {
            println!("pass");
            Ok(())
        }
        v => Err(Failure::Oracle(v.to_string())),
    }
}

fn emit(dir: Option<&Path>, name: &str, body: &str) -> Result<(), Failure> {
    match dir {
        Some(d) => {
            fs::create_dir_all(d)?;
            fs::write(d.join(name), body)?;
            println!("wrote {}", d.join(name).display());
        }
        None if name.ends_with(".csv") => print!("# {name}\n{body}"),
        None => {}
    }
    Ok(())
}

fn exp_latency(base: &ScenarioConfig, dir: Option<&Path>) -> Result<Vec<Verdict>, Failure> {
    let s = exp::exp_latency_breakdown(base);
    emit(dir, "latency_breakdown.csv", &s.csv())?;
    emit(dir, "latency_summary.csv", &s.summary_csv())?;
    let labels: Vec<String> = ["a", "b", "c", "d", "e", "f"].iter().map(|s| s.to_string()).collect();
    let w: Vec<f64> = s.write.latency.parts.iter().map(|p| p.mean).collect();
    let r: Vec<f64> = s.read.latency.parts.iter().map(|p| p.mean).collect();
    emit(
        dir,
        "latency_parts.svg",
        &plot::bar_chart("mean latency per path part", "ns", &labels, &[("write", &w), ("read", &r)]),
    )?;
    Ok(vec![s.write.verdict, s.read.verdict, s.all_hit.verdict])
}

fn exp_congestion(base: &ScenarioConfig, dir: Option<&Path>) -> Result<(), Failure> {
    let rows = exp::exp_congestion_sweep(base, &exp::SWEEP_THRESHOLDS);
    emit(dir, "congestion_sweep.csv", &exp::rows_csv(&rows))?;
    let x: Vec<f64> = rows.iter().map(|r| r.threshold as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.final_stable_gbps.unwrap_or(0.0)).collect();
    let f: Vec<f64> = rows.iter().map(|r| r.first_stable_gbps.unwrap_or(0.0)).collect();
    emit(
        dir,
        "congestion_sweep.svg",
        &plot::line_chart(
            "stable rate against PFC threshold",
            "threshold (entries)",
            "Gbps",
            &[("final", &x, &y), ("first", &x, &f)],
        ),
    )
}

fn exp_initial(base: &ScenarioConfig, dir: Option<&Path>) -> Result<(), Failure> {
    let rows = exp::exp_initial_rate_sweep(base, &exp::INITIAL_RATES_GBPS);
    emit(dir, "initial_rate.csv", &exp::rows_csv(&rows))?;
    let labels: Vec<String> = rows.iter().map(|r| format!("{:.0}", r.initial_gbps)).collect();
    let first: Vec<f64> = rows.iter().map(|r| r.first_stable_gbps.unwrap_or(0.0)).collect();
    let last: Vec<f64> = rows.iter().map(|r| r.final_stable_gbps.unwrap_or(0.0)).collect();
    emit(
        dir,
        "initial_rate.svg",
        &plot::bar_chart(
            "stable rate by initial rate",
            "Gbps",
            &labels,
            &[("first", &first), ("final", &last)],
        ),
    )
}

fn exp_naive(base: &ScenarioConfig, dir: Option<&Path>) -> Result<Vec<Verdict>, Failure> {
    let naive = exp::exp_naive_baseline(base);
    let mut cc = exp::congestion_config(base);
    cc.mn.fifo.pfc_threshold = exp::RATE_SWEEP_THRESHOLD;
    let (ctl, _) = run_scenario_with(&cc, false)?;
    let mut s = String::from("sender,mean_up_gbps,idle_fraction,pfc,fifo_peak\n");
    for (name, r) in [("rate_control", &ctl), ("pause_only", &naive)] {
        s.push_str(&format!(
            "{name},{:.3},{:.4},{},{}\n",
            r.mean_up_gbps,
            exp::idle_fraction(r),
            r.pfc_count,
            r.out.fifo.peak
        ));
    }
    emit(dir, "naive_baseline.csv", &s)?;
    let t: Vec<f64> = naive.out.samples.iter().map(|x| x.time.us_f64()).collect();
    let up = |r: &RunReport| r.out.samples.iter().map(|x| x.up_gbps).collect::<Vec<_>>();
    let t2: Vec<f64> = ctl.out.samples.iter().map(|x| x.time.us_f64()).collect();
    emit(
        dir,
        "naive_baseline.svg",
        &plot::line_chart(
            "up-link throughput",
            "time (us)",
            "Gbps",
            &[("pause only", &t, &up(&naive)), ("rate control", &t2, &up(&ctl))],
        ),
    )?;
    Ok(vec![naive.verdict, ctl.verdict])
}

fn exp_cache(base: &ScenarioConfig, dir: Option<&Path>) -> Result<(), Failure> {
    let s = exp::exp_cache_study(base);
    emit(dir, "cache_study.csv", &s.csv())?;
    let labels: Vec<String> = s
        .cases
        .iter()
        .map(|c| format!("{} {:?}", c.case, c.backend).to_lowercase())
        .collect();
    let v: Vec<f64> = s.cases.iter().map(|c| c.latency_ns as f64).collect();
    emit(dir, "cache_study.svg", &plot::bar_chart("cache access latency", "ns", &labels, &[("latency", &v)]))?;
    println!(
        "read miss / read hit: remote {:.2}x, local {:.2}x",
        s.remote_ratio(),
        s.local_ratio()
    );
    Ok(())
}

fn exp_reliability(base: &ScenarioConfig, dir: Option<&Path>, seeds: u64, requests: u64) -> Result<bool, Failure> {
    let seeds: Vec<u64> = (1..=seeds).collect();
    let rows = exp::exp_reliability(base, &[(0.001, 0.001), (0.01, 0.01)], &seeds, requests);
    emit(dir, "reliability.csv", &exp::reliability_csv(&rows))?;
    Ok(rows.iter().all(|r| r.oracle_pass && r.drained))
}

fn cmd_exp(name: ExpName, config: Option<&Path>, common: &Common, seeds: u64, requests: u64) -> Result<(), Failure> {
    let mut base = match config {
        Some(p) => load(p, &[], None)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = common.seed {
        base.seed = s;
    }
    let dir = common.csv_dir.as_deref();
    let all = matches!(name, ExpName::All);
    let mut verdicts = vec![];
    let mut ok = true;
    if all || matches!(name, ExpName::Latency) {
        verdicts.extend(exp_latency(&base, dir)?);
    }
    if all || matches!(name, ExpName::Congestion) {
        exp_congestion(&base, dir)?;
    }
    if all || matches!(name, ExpName::InitialRate) {
        exp_initial(&base, dir)?;
    }
    if all || matches!(name, ExpName::Naive) {
        verdicts.extend(exp_naive(&base, dir)?);
    }
    if all || matches!(name, ExpName::Cache) {
        exp_cache(&base, dir)?;
    }
    if all || matches!(name, ExpName::Reliability) {
        ok &= exp_reliability(&base, dir, seeds, requests)?;
    }
    if let Some(v) = verdicts.iter().find(|v| !v.passed()) {
        return Err(Failure::Oracle(v.to_string()));
    }
    if !ok {
        return Err(Failure::Oracle("a reliability run failed".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Run { config, common, set } => cmd_run(config, common, set),
        Cmd::Sweep { config, vary, common } => cmd_sweep(config, vary, common),
        Cmd::Verify { run_dir } => cmd_verify(run_dir),
        Cmd::Exp {
            name,
            config,
            common,
            seeds,
            requests,
        } => cmd_exp(*name, config.as_deref(), common, *seeds, *requests),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Oracle(m)) => {
            eprintln!("oracle: {m}");
            ExitCode::from(2)
        }
    }
}
