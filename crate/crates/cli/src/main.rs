use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use origami_reservoir::config::{OutageSection, RunConfig, SweepKind};
use origami_reservoir::tasks::PatternTask;
use origami_reservoir::{Error, Result};
use origami_reservoir_cli::{exit_code, replay, run, Command};

/// Start of an outage requested with `--outage`, seconds into the closed loop.
const OUTAGE_START: f64 = 20.0;

#[derive(Parser)]
#[command(name = "origami-rc", version, about = "Miura-ori physical reservoir computing")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Drive the input creases with the emulation input and record angles.
    Simulate(Common),
    /// Train readouts for the three emulation targets.
    Emulate(Common),
    /// Train a feedback readout to generate a limit cycle.
    Pattern {
        #[command(flatten)]
        common: Common,
        /// vdp_lc, quad_lc or lissajous.
        #[arg(long)]
        task: Option<PatternTask>,
        /// Outage length (s) for the recovery test.
        #[arg(long)]
        outage: Option<f64>,
        /// Random designs to search for the feedback roles.
        #[arg(long)]
        search: Option<usize>,
    },
    /// Train an input-modulated limit cycle.
    Modulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        search: Option<usize>,
    },
    /// Parametric or random-design study.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// feedback, mass, stiffness, imperfection, geometry or fraction.
        #[arg(long)]
        kind: Option<SweepKind>,
        #[arg(long)]
        n: Option<usize>,
        /// Folding angles (degrees) for the geometry landscape.
        #[arg(long, value_delimiter = ',')]
        thetas: Option<Vec<f64>>,
        #[arg(long)]
        task: Option<PatternTask>,
    },
    /// Train and run the crawling gait.
    Crawl {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_anchors: bool,
    },
    /// Re-run the command recorded in a manifest.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Duration (s) of the command's main run.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Defaults to runs/<command>-seed<seed>.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(dt) = self.dt {
            c.sim.dt = dt;
        }
        if let Some(j) = self.jobs {
            c.jobs = j;
        }
        Ok(c)
    }

    fn out_dir(&self, cmd: Command, c: &RunConfig) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", cmd.name(), c.seed)))
    }
}

fn execute(cli: Cli) -> Result<PathBuf> {
    let (cmd, common, config) = match cli.command {
        Cmd::Replay { manifest, out_dir } => {
            let dir = out_dir.unwrap_or_else(|| manifest.parent().map(|p| p.join("replay")).unwrap_or_else(|| "replay".into()));
            replay(&manifest, &dir)?;
            return Ok(dir);
        }
        Cmd::Simulate(common) => {
            let mut c = common.load()?;
            if let Some(d) = common.duration {
                c.simulate.duration = d;
            }
            (Command::Simulate, common, c)
        }
        Cmd::Emulate(common) => {
            let mut c = common.load()?;
            if let Some(d) = common.duration {
                c.emulate.duration = d;
            }
            (Command::Emulate, common, c)
        }
        Cmd::Pattern { common, task, outage, search } => {
            let mut c = common.load()?;
            if let Some(d) = common.duration {
                c.pattern.duration = d;
            }
            if let Some(t) = task {
                c.pattern.task = t;
            }
            if let Some(length) = outage {
                c.pattern.outage = Some(OutageSection { start: OUTAGE_START, length });
            }
            if let Some(n) = search {
                c.pattern.search = n;
            }
            (Command::Pattern, common, c)
        }
        Cmd::Modulate { common, search } => {
            let mut c = common.load()?;
            if let Some(d) = common.duration {
                c.modulate.duration = d;
            }
            if let Some(n) = search {
                c.modulate.search = n;
            }
            (Command::Modulate, common, c)
        }
        Cmd::Sweep { common, kind, n, thetas, task } => {
            let mut c = common.load()?;
            if let Some(d) = common.duration {
                c.pattern.duration = d;
            }
            if let Some(k) = kind {
                c.sweep.kind = k;
            }
            if let Some(n) = n {
                c.sweep.n = n;
            }
            if let Some(t) = thetas {
                c.sweep.thetas_deg = t;
            }
            if let Some(t) = task {
                c.pattern.task = t;
            }
            (Command::Sweep, common, c)
        }
        Cmd::Crawl { common, no_anchors } => {
            let mut c = common.load()?;
            if let Some(d) = common.duration {
                c.crawl.duration = d;
            }
            if no_anchors {
                c.crawl.anchors_enabled = false;
            }
            (Command::Crawl, common, c)
        }
    };
    config.validate()?;
    let dir = common.out_dir(cmd, &config);
    run(cmd, &config, &dir)?;
    Ok(dir)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            report(&e);
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

fn report(e: &Error) {
    eprintln!("error: {e}");
}
