//! Scenario runner, experiment drivers, replay oracle and artifact output.

pub mod experiments;
pub mod oracle;
pub mod plot;
pub mod report;
pub mod stable;
pub mod vary;

use crate::config::{ConfigError, ScenarioConfig};
use crate::fabric::LossTrace;
use crate::system::World;

pub use report::RunReport;

pub fn load_trace(cfg: &ScenarioConfig) -> Result<LossTrace, ConfigError> {
    let Some(path) = &cfg.run.loss_trace_file else {
        return Ok(LossTrace::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.clone(),
        source: e,
    })?;
    LossTrace::parse(&text).map_err(|e| ConfigError::Invalid {
        key: "run.loss_trace_file".into(),
        msg: e.to_string(),
    })
}

/// Validates, runs and reports one scenario. With `event_trace` the
/// dispatch log is returned as well.
pub fn run_scenario_with(
    cfg: &ScenarioConfig,
    event_trace: bool,
) -> Result<(RunReport, Option<String>), ConfigError> {
    cfg.validate()?;
    let mut w = World::new(cfg, load_trace(cfg)?);
    if event_trace {
        w.enable_trace();
    }
    let (out, trace) = w.run_traced();
    Ok((RunReport::build(cfg.clone(), out), trace))
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunReport, ConfigError> {
    run_scenario_with(cfg, false).map(|(r, _)| r)
}
