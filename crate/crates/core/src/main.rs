use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use green_edge::controller::Algorithm;
use green_edge::forecast::{evaluate, fit, SeasonalNaive};
use green_edge::harness::{
    compare_configs, emit_report, render_savings, render_text, run_scenario, sweep_bs_group,
    ForecastSource, Metric, ReportFormat, ScenarioConfig,
};
use green_edge::traces::{
    bundled_clusters, load_cluster_csv, normalize, synthesize_profile, synthesize_solar,
    synthesize_wind,
};
use green_edge::{Error, Result};

#[derive(Parser)]
#[command(
    name = "green-edge",
    version,
    about = "Energy management simulator for a green-powered edge cluster"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// scenario file of `key = value` lines; defaults apply when omitted
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// override one key, e.g. `--set n_bs=24`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::load(p)?,
            None => ScenarioConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its report.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        /// output path; the text summary goes to stdout when omitted
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Hourly and mean savings of one configuration against another.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        /// reference configuration; the same scenario under max-provision by default
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// overrides applied to the reference only
        #[arg(long = "set-baseline", value_name = "KEY=VALUE")]
        baseline_overrides: Vec<String>,
        #[arg(long, default_value = "mec")]
        metric: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Savings against max-provision for a range of cluster sizes.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// comma-separated sizes
        #[arg(long, default_value = "5,10,15,20,25,30,35,40,45,50")]
        sizes: String,
        #[arg(long, default_value = "comm")]
        metric: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Held-out RMSE per horizon step of the configured forecaster.
    ForecastEval {
        #[command(flatten)]
        config: ConfigArgs,
        /// length of each evaluation trace
        #[arg(long, default_value_t = 14)]
        days: usize,
    },
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            format,
        } => {
            let cfg = config.load()?;
            let format: ReportFormat = format.parse()?;
            let report = run_scenario(&cfg)?;
            match out {
                Some(p) => emit_report(&report, &p, format)?,
                None => print!("{}", render_text(&report)),
            }
            Ok(())
        }
        Command::Compare {
            config,
            baseline,
            baseline_overrides,
            metric,
            out,
        } => {
            let cfg = config.load()?;
            let mut base = match baseline {
                Some(p) => ScenarioConfig::load(p)?,
                None => ScenarioConfig {
                    algorithm: Algorithm::MaxProvision,
                    ..cfg.clone()
                },
            };
            for o in &baseline_overrides {
                base.apply_override(o)?;
            }
            base.validate()?;
            let table = compare_configs(&cfg, &base, metric.parse()?)?;
            write_or_print(out.as_ref(), &render_savings(&table))
        }
        Command::Sweep {
            config,
            sizes,
            metric,
            out,
        } => {
            let cfg = config.load()?;
            let sizes: Vec<usize> = sizes
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad group size `{s}`")))
                })
                .collect::<Result<_>>()?;
            let metric: Metric = metric.parse()?;
            let points = sweep_bs_group(&cfg, &sizes, metric)?;
            let mut text = String::from("n_bs,savings_pct,algorithm_total_j,baseline_total_j\n");
            for p in points {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    p.n_bs, p.savings, p.algorithm_total, p.baseline_total
                ));
            }
            write_or_print(out.as_ref(), &text)
        }
        Command::ForecastEval { config, days } => {
            let cfg = config.load()?;
            let clusters = match &cfg.traces.clusters_file {
                Some(p) => load_cluster_csv(p)?,
                None => bundled_clusters(),
            };
            let mut series = Vec::new();
            for (i, c) in clusters.iter().enumerate() {
                let raw = synthesize_profile(c, days, 900 + i as u64, cfg.traces.traffic_noise)?;
                series.push((format!("traffic-cluster{}", c.cluster_id), normalize(&raw)?));
            }
            series.push((
                "solar".into(),
                synthesize_solar(days, 990, cfg.traces.harvest_noise)?,
            ));
            series.push((
                "wind".into(),
                synthesize_wind(days, 991, cfg.traces.harvest_noise)?,
            ));
            print!("series");
            for k in 1..=cfg.predictor.horizon {
                print!(",rmse_t{k}");
            }
            println!();
            for (name, trace) in &series {
                let table = match cfg.forecaster {
                    ForecastSource::Lstm => {
                        let model = fit(trace, &cfg.predictor)?;
                        evaluate(&model, trace, cfg.predictor.train_fraction)?
                    }
                    _ => {
                        let p = SeasonalNaive::new(
                            48,
                            cfg.predictor.window.max(48),
                            cfg.predictor.horizon,
                        )?;
                        evaluate(&p, trace, cfg.predictor.train_fraction)?
                    }
                };
                let cells: Vec<String> = table.iter().map(|v| format!("{v:.5}")).collect();
                println!("{name},{}", cells.join(","));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Infeasible(_) | Error::Constraint { .. } => 2,
                Error::Config(_) | Error::Parse { .. } => 3,
                _ => 1,
            })
        }
    }
}
