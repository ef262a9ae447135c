//! Scenario configuration, the slot-by-slot simulation loop, baseline
//! comparisons, cluster-size sweeps and report output.

mod config;
mod report;
mod run;
mod scenario;

pub use config::{BatteryConfig, ForecastSource, ScenarioConfig, TraceConfig};
pub use report::{
    emit_report, read_decisions, render_savings, render_text, sibling, summary, ReportFormat,
    COST_HEADER,
};
pub use run::{
    compare, compare_configs, run_on, run_scenario, sweep_bs_group, Metric, RunReport, Savings,
    SavingsTable, SlotRow, SweepPoint,
};
pub use scenario::{predictor_bank, training_traces, PredictorBank, Scenario};
