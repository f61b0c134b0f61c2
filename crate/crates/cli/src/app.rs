use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::ConfigMap;
use crate::error::{CliError, CliResult};
use crate::{with_threads, THREADS_ENV};

#[derive(Parser, Debug)]
#[command(name = "linescope", version, about = "Full-batch loss along SGD update lines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train and record a trajectory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Print the resolved configuration and exit without writing.
        #[arg(long)]
        dry_run: bool,
    },
    /// Scan the full-batch loss along the recorded update lines.
    Scan {
        trajectory: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Scan several mini-batch gradient lines through one trajectory point.
    Fan {
        trajectory: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Shape distances, polynomial fits and step-size proportionality.
    Analyze {
        #[arg(required = true)]
        archives: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score update-step strategies against the optimal step of each line.
    Strategies {
        archive: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Virtual batch sizes: slope ratios and strategy improvements.
    Batchsize {
        archive: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the whole pipeline from a configuration.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Configuration file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides the environment default.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    grid_lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    grid_hi: Option<f64>,
    #[arg(long)]
    grid_res: Option<f64>,
    /// Shape window `lo,hi`.
    #[arg(long, allow_hyphen_values = true)]
    window: Option<String>,
    /// Comma-separated SGD learning rates.
    #[arg(long)]
    lrs: Option<String>,
    #[arg(long)]
    mu: Option<f64>,
    /// Moving-average kernel size.
    #[arg(long)]
    kernel: Option<usize>,
    /// Steps keeping per-sample losses: list, `every:N` or `all`.
    #[arg(long)]
    per_sample: Option<String>,
    /// Score improvements by interpolating the scanned curve.
    #[arg(long)]
    interpolate: bool,
    /// Batch shrinking rule: signed or magnitude.
    #[arg(long)]
    shrink_rule: Option<String>,
    /// Any configuration key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    /// Config file, then `--set`, then dedicated flags.
    fn overrides(&self) -> CliResult<ConfigMap> {
        let mut conf = match &self.config {
            Some(p) => ConfigMap::load(p)?,
            None => ConfigMap::default(),
        };
        for pair in &self.set {
            conf.set_pair(pair)?;
        }
        let pairs: [(&str, Option<String>); 12] = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("threads", self.threads.map(|v| v.to_string())),
            ("scan.stride", self.stride.map(|v| v.to_string())),
            ("scan.grid_lo", self.grid_lo.map(|v| v.to_string())),
            ("scan.grid_hi", self.grid_hi.map(|v| v.to_string())),
            ("scan.grid_res", self.grid_res.map(|v| v.to_string())),
            ("analysis.window", self.window.clone()),
            ("strategies.lrs", self.lrs.clone()),
            ("strategies.mu", self.mu.map(|v| v.to_string())),
            ("strategies.kernel", self.kernel.map(|v| v.to_string())),
            ("scan.per_sample", self.per_sample.clone()),
            ("batch.shrink_rule", self.shrink_rule.clone()),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                conf.set(k, &v)?;
            }
        }
        if self.interpolate {
            conf.set("strategies.interpolate", "true")?;
        }
        Ok(conf)
    }

    fn out(&self) -> CliResult<PathBuf> {
        self.out.clone().ok_or_else(|| CliError::Config("missing --out <dir>".into()))
    }

    /// `--threads`, else the `threads` key, else the environment, else 0.
    fn threads(&self, conf: &ConfigMap) -> CliResult<usize> {
        if let Some(n) = self.threads {
            return Ok(n);
        }
        if let Some(n) = conf.get::<usize>("threads")? {
            return Ok(n);
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("invalid {THREADS_ENV} value `{v}`"))),
            Err(_) => Ok(0),
        }
    }
}

fn execute(command: Command) -> CliResult<String> {
    let common = match &command {
        Command::Train { common, .. }
        | Command::Scan { common, .. }
        | Command::Fan { common, .. }
        | Command::Analyze { common, .. }
        | Command::Strategies { common, .. }
        | Command::Batchsize { common, .. }
        | Command::Report { common } => common,
    };
    let conf = common.overrides()?;
    if let Command::Train { dry_run: true, .. } = command {
        return commands::dry_run(&conf);
    }
    let out = common.out()?;
    let threads = common.threads(&conf)?;
    with_threads(threads, || -> CliResult<String> {
        Ok(match &command {
            Command::Train { .. } => {
                let s = commands::cmd_train(&conf, &out)?;
                format!(
                    "trained {} steps into {} (config {}, final loss {})\n",
                    s.steps,
                    s.out.display(),
                    s.config_hash,
                    s.final_loss
                )
            }
            Command::Scan { trajectory, .. } | Command::Fan { trajectory, .. } => {
                let s = if matches!(command, Command::Scan { .. }) {
                    commands::cmd_scan(&conf, trajectory, &out)?
                } else {
                    commands::cmd_fan(&conf, trajectory, &out)?
                };
                format!(
                    "scanned {} lines on {} grid points into {} ({} with per-sample losses, {} invalid)\n",
                    s.steps.len(),
                    s.grid_count,
                    s.out.display(),
                    s.per_sample,
                    s.invalid.len()
                )
            }
            Command::Analyze { archives, .. } => {
                let s = commands::cmd_analyze(&conf, archives, &out)?;
                format!("analyzed {} lines into {} ({} files)\n", s.lines, s.out.display(), s.artifacts.len())
            }
            Command::Strategies { archive, .. } => {
                let s = commands::cmd_strategies(&conf, archive, &out)?;
                let mut text = String::new();
                for st in &s.strategies {
                    text.push_str(&format!(
                        "{:<18} mean |distance| {:.6}  mean overshoot {:+.6}  total improvement {:.6}\n",
                        st.label, st.mean_abs_distance, st.mean_overshoot, st.total_improvement
                    ));
                }
                text
            }
            Command::Batchsize { archive, .. } => {
                let s = commands::cmd_batchsize(&conf, archive, &out)?;
                let mut text = String::new();
                for r in &s.ratios {
                    let show = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
                    text.push_str(&format!(
                        "factor {:<6} mean ratio {}  median {} (expected {})\n",
                        r.factor,
                        show(r.mean_ratio),
                        show(r.median_ratio),
                        r.expected
                    ));
                }
                text
            }
            Command::Report { .. } => {
                let r = commands::cmd_report(&conf, &out)?;
                format!("report with {} files written to {}\n", r.files.len(), out.display())
            }
        })
    })?
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
