//! Command implementations behind the `steer` binary.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use steering_core::adversary::{max_cheat_value, CheatResult, OptimizerConfig};
use steering_core::analyzer::AnalyzerModel;
use steering_core::evaluator::{format_report, steering_value_with_errors, CountTally, SteeringResult};
use steering_core::model::{LhsEnsemble, NoiseModel};
use steering_core::protocol::{
    read_trials_jsonl, run_session_with, tally_trials, Strategy, TimingConfig,
    TrialRecord, TrialSink,
};
use steering_core::setting::{PerSetting, Setting};
use steering_core::spacetime::{audit, EventLog, LoopholeReport, SpacetimeEvent};
use steering_core::tomography::{
    mub_deviation, purity, read_counts_csv, reconstruct_analyzer, ProbeSet, TomographyConfig,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "steer", version, about = "Simulate, evaluate and certify EPR-steering sessions")]
pub struct Cli {
    /// Session configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for written outputs; overrides the configuration.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Seed override for simulations and resampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Only print errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a session and write events, trials, tally and manifest.
    Simulate(SimulateArgs),
    /// Compute the steering value of a tally CSV or trials JSONL file.
    Evaluate(EvaluateArgs),
    /// Audit an event log against the light-cone conditions.
    Verify(VerifyArgs),
    /// Maximize the local-hidden-state score against an analyzer.
    Adversary(AdversaryArgs),
    /// Reconstruct Bob's analyzer from probe counts.
    Tomography(TomographyArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Configuration file; alternative to --config.
    pub config: Option<PathBuf>,
    /// Override the configured number of trials.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Skip events.jsonl and trials.jsonl; write only the tally and manifest.
    #[arg(long)]
    pub tally_only: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// `tally.csv` or `trials.jsonl`.
    pub input: PathBuf,
    /// Poisson resamples for the error estimate.
    #[arg(long, default_value_t = steering_core::evaluator::DEFAULT_RESAMPLES)]
    pub resamples: usize,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// `events.jsonl`.
    pub events: PathBuf,
}

#[derive(Debug, Args)]
pub struct AdversaryArgs {
    /// Analyzer JSON with `plus`/`minus` effects per setting.
    #[arg(required_unless_present = "ideal", conflicts_with = "ideal")]
    pub analyzer: Option<PathBuf>,
    /// Use ideal projective analyzers.
    #[arg(long)]
    pub ideal: bool,
    /// Coarse grid spacing in degrees.
    #[arg(long, default_value_t = 1.0)]
    pub grid_step: f64,
}

#[derive(Debug, Args)]
pub struct TomographyArgs {
    /// Counts CSV with header `setting,probe_label,outcome,count`.
    pub counts: PathBuf,
}

/// Failure with its exit code: 2 for bad input, 3 for I/O.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

fn core_err(context: &Path, e: steering_core::Error) -> CliError {
    match e {
        steering_core::Error::Io(io) => CliError::Io(format!("{}: {io}", context.display())),
        other => CliError::Input(format!("{}: {other}", context.display())),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    serde_json::from_reader(open(path)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Gives a finished temporary file the usual permissions and moves it into place.
fn persist(tmp: tempfile::NamedTempFile, path: &Path) -> Result<(), CliError> {
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        let _ = tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644));
    }
    tmp.persist(path)
        .map(|_| ())
        .map_err(|e| CliError::Io(format!("{}: {}", path.display(), e.error)))
}

/// Writes through a temporary file in the same directory and renames it.
fn write_atomic(
    path: &Path,
    f: impl FnOnce(&mut dyn Write) -> Result<(), steering_core::Error>,
) -> Result<(), CliError> {
    let io = |e: &dyn fmt::Display| CliError::Io(format!("{}: {e}", path.display()));
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| io(&e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io(&e))?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        f(&mut w).map_err(|e| io(&e))?;
        w.flush().map_err(|e| io(&e))?;
    }
    persist(tmp, path)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategyConfig {
    Honest,
    Lhs {
        /// LHS ensemble JSON.
        ensemble: PathBuf,
        /// Bob's analyzer JSON; ideal analyzers when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        analyzer: Option<PathBuf>,
    },
}

/// One self-contained session description. Relative paths are resolved
/// against the directory of the configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default)]
    pub timing: TimingConfig,
    pub noise: NoiseModel,
    pub strategy: StrategyConfig,
    pub n_trials: u64,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl SessionConfig {
    /// Parses, resolves relative paths and checks referenced files exist.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut cfg: SessionConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        if let StrategyConfig::Lhs { ensemble, analyzer } = &mut cfg.strategy {
            resolve(ensemble);
            if let Some(a) = analyzer {
                resolve(a);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: steering_core::Error| CliError::Input(e.to_string());
        self.timing.validate().map_err(bad)?;
        self.noise.validate().map_err(bad)?;
        if self.n_trials == 0 {
            return Err(CliError::Input("n_trials must be at least 1".into()));
        }
        if let StrategyConfig::Lhs { ensemble, analyzer } = &self.strategy {
            for p in std::iter::once(ensemble).chain(analyzer) {
                if !p.exists() {
                    return Err(CliError::Input(format!("{} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn strategy(&self) -> Result<Strategy, CliError> {
        Ok(match &self.strategy {
            StrategyConfig::Honest => Strategy::Honest,
            StrategyConfig::Lhs { ensemble, analyzer } => Strategy::Lhs {
                ensemble: read_json::<LhsEnsemble>(ensemble)?,
                analyzer: match analyzer {
                    Some(p) => read_json::<AnalyzerModel>(p)?,
                    None => AnalyzerModel::ideal(),
                },
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: SessionConfig,
    pub outputs: Vec<String>,
}

/// What a command reports back to `main`.
#[derive(Debug, PartialEq, Eq)]
pub enum Verdict {
    Success,
    /// The computation ran but the scientific check came out negative.
    Negative,
}

impl Verdict {
    pub fn exit_code(&self) -> u8 {
        match self {
            Verdict::Success => 0,
            Verdict::Negative => 1,
        }
    }
}

struct Ctx {
    config: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
    quiet: bool,
}

impl Ctx {
    fn say(&self, text: impl fmt::Display) {
        if !self.quiet {
            println!("{text}");
        }
    }

    fn session(&self) -> Result<Option<SessionConfig>, CliError> {
        self.config.as_deref().map(SessionConfig::load).transpose()
    }

    /// `--output-dir`, else the configured directory, else `fallback`.
    fn out_dir(&self, fallback: &Path) -> Result<PathBuf, CliError> {
        if let Some(d) = &self.output_dir {
            return Ok(d.clone());
        }
        Ok(self
            .session()?
            .map(|c| c.output_dir)
            .unwrap_or_else(|| fallback.to_path_buf()))
    }
}

pub fn run(cli: Cli) -> Result<Verdict, CliError> {
    let ctx = Ctx {
        config: cli.config,
        output_dir: cli.output_dir,
        seed: cli.seed,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Verify(a) => verify(&ctx, a),
        Command::Adversary(a) => adversary(&ctx, a),
        Command::Tomography(a) => tomography(&ctx, a),
    }
}

/// Streams events and trials to their files while the session runs.
struct FileSink<'a> {
    events: &'a mut dyn Write,
    trials: &'a mut dyn Write,
    written: usize,
    error: Option<std::io::Error>,
}

impl TrialSink for FileSink<'_> {
    fn accept(&mut self, record: &TrialRecord, events: &[SpacetimeEvent]) {
        if self.error.is_some() {
            return;
        }
        let mut go = || -> std::io::Result<()> {
            for e in events {
                serde_json::to_writer(&mut *self.events, e)?;
                self.events.write_all(b"\n")?;
            }
            let mut r = record.clone();
            r.events = [self.written, self.written + events.len()];
            serde_json::to_writer(&mut *self.trials, &r)?;
            self.trials.write_all(b"\n")
        };
        match go() {
            Ok(()) => self.written += events.len(),
            Err(e) => self.error = Some(e),
        }
    }
}

fn simulate(ctx: &Ctx, args: SimulateArgs) -> Result<Verdict, CliError> {
    let path = args
        .config
        .or_else(|| ctx.config.clone())
        .ok_or_else(|| CliError::Input("simulate needs a configuration file".into()))?;
    let mut cfg = SessionConfig::load(&path)?;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.trials {
        cfg.n_trials = n;
    }
    if let Some(d) = &ctx.output_dir {
        cfg.output_dir = d.clone();
    }
    cfg.validate()?;
    let strategy = cfg.strategy()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;

    let io = |p: &Path, e: &dyn fmt::Display| CliError::Io(format!("{}: {e}", p.display()));
    let run = |sink: &mut dyn TrialSink| {
        run_session_with(&cfg.timing, &cfg.noise, &strategy, cfg.n_trials, cfg.seed, sink)
            .map_err(|e| CliError::Input(e.to_string()))
    };
    let mut outputs = vec!["tally.csv", "manifest.json"];
    let tally = if args.tally_only {
        run(&mut ())?
    } else {
        let events_path = dir.join("events.jsonl");
        let trials_path = dir.join("trials.jsonl");
        let mut events_tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| io(&dir, &e))?;
        let mut trials_tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| io(&dir, &e))?;
        let tally = {
            let mut ew = std::io::BufWriter::new(events_tmp.as_file_mut());
            let mut tw = std::io::BufWriter::new(trials_tmp.as_file_mut());
            let mut sink = FileSink {
                events: &mut ew,
                trials: &mut tw,
                written: 0,
                error: None,
            };
            let tally = run(&mut sink)?;
            if let Some(e) = sink.error {
                return Err(io(&dir, &e));
            }
            ew.flush().map_err(|e| io(&events_path, &e))?;
            tw.flush().map_err(|e| io(&trials_path, &e))?;
            tally
        };
        persist(events_tmp, &events_path)?;
        persist(trials_tmp, &trials_path)?;
        outputs.splice(0..0, ["events.jsonl", "trials.jsonl"]);
        tally
    };
    write_atomic(&dir.join("tally.csv"), |w| tally.write_csv(w))?;
    let manifest = Manifest {
        command: "simulate".into(),
        version: VERSION.into(),
        seed: cfg.seed,
        config: cfg.clone(),
        outputs: outputs.into_iter().map(String::from).collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    ctx.say(format!(
        "simulated {} trials (seed {}), {} tallied events, outputs in {}",
        cfg.n_trials,
        cfg.seed,
        tally.grand_total(),
        dir.display()
    ));
    Ok(Verdict::Success)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvaluationOutput {
    pub input: PathBuf,
    pub resamples: usize,
    pub seed: u64,
    pub result: SteeringResult,
    pub efficiency: PerSetting<f64>,
    pub visibility: PerSetting<f64>,
    pub violation: bool,
}

fn load_tally(path: &Path) -> Result<CountTally, CliError> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        let trials = read_trials_jsonl(open(path)?).map_err(|e| core_err(path, e))?;
        Ok(tally_trials(&trials))
    } else {
        CountTally::read_csv(open(path)?).map_err(|e| core_err(path, e))
    }
}

fn evaluate(ctx: &Ctx, args: EvaluateArgs) -> Result<Verdict, CliError> {
    let tally = load_tally(&args.input)?;
    let seed = ctx.seed.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let result = steering_value_with_errors(&tally, args.resamples, &mut rng)
        .map_err(|e| core_err(&args.input, e))?;
    let sigma = result.sigma_s.unwrap_or(0.0);
    let violation = result.s - 3.0 * sigma > 1.0;
    ctx.say(format_report(&tally, &result).trim_end());
    if violation {
        ctx.say(format!(
            "VIOLATION: S exceeds the local bound 1 by {:.1} standard deviations",
            (result.s - 1.0) / sigma.max(f64::MIN_POSITIVE)
        ));
    } else if result.s <= 1.0 {
        ctx.say("no violation: S <= 1");
    } else {
        ctx.say("S > 1 but within 3 standard deviations of the bound");
    }
    let fallback = args.input.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out = ctx.out_dir(&fallback)?.join("evaluation.json");
    write_json(
        &out,
        &EvaluationOutput {
            input: args.input.clone(),
            resamples: args.resamples,
            seed,
            efficiency: PerSetting::from_fn(|s| tally.efficiency(s)),
            visibility: PerSetting::from_fn(|s| tally.visibility(s)),
            violation,
            result: result.clone(),
        },
    )?;
    Ok(if result.s <= 1.0 { Verdict::Negative } else { Verdict::Success })
}

fn verify(ctx: &Ctx, args: VerifyArgs) -> Result<Verdict, CliError> {
    let log = EventLog::read_jsonl(open(&args.events)?).map_err(|e| core_err(&args.events, e))?;
    if log.is_empty() {
        return Err(CliError::Input(format!("{} contains no events", args.events.display())));
    }
    let timing = ctx.session()?.map(|c| c.timing).unwrap_or_default();
    let report: LoopholeReport = audit(&log, &timing).map_err(|e| core_err(&args.events, e))?;
    ctx.say(&report);
    if let Some(dir) = &ctx.output_dir {
        write_json(&dir.join("audit.json"), &report)?;
    }
    Ok(if report.passed { Verdict::Success } else { Verdict::Negative })
}

fn adversary(ctx: &Ctx, args: AdversaryArgs) -> Result<Verdict, CliError> {
    let analyzer = match &args.analyzer {
        Some(p) => read_json::<AnalyzerModel>(p)?,
        None => AnalyzerModel::ideal(),
    };
    let cfg = OptimizerConfig {
        grid_step_deg: args.grid_step,
        ..OptimizerConfig::default()
    };
    let r: CheatResult = max_cheat_value(&analyzer, &cfg).map_err(|e| CliError::Input(e.to_string()))?;
    let c = &r.certificate;
    ctx.say(format!("s_max      {:.6}", r.s_max));
    ctx.say(format!(
        "argmax     ({:.6}, {:.6}, {:.6})",
        r.argmax_bloch[0], r.argmax_bloch[1], r.argmax_bloch[2]
    ));
    ctx.say(format!(
        "certificate grid best {:.6} over {} points, Lipschitz {:.4}, radius {:.5} rad, upper bound {:.6}, gap {:.2e} ({})",
        c.grid_best,
        c.grid_points,
        c.lipschitz,
        c.covering_radius,
        c.upper_bound,
        c.gap,
        if c.certified { "certified" } else { "NOT certified" }
    ));
    if !r.converged {
        ctx.say("warning: refinement stopped at its evaluation budget");
    }
    if let Some(dir) = &ctx.output_dir {
        write_json(&dir.join("adversary.json"), &r)?;
    }
    Ok(Verdict::Success)
}

fn tomography(ctx: &Ctx, args: TomographyArgs) -> Result<Verdict, CliError> {
    let probes = ProbeSet::standard();
    let counts = read_counts_csv(&probes, open(&args.counts)?).map_err(|e| core_err(&args.counts, e))?;
    let rec = reconstruct_analyzer(&counts, &probes, &TomographyConfig::default())
        .map_err(|e| core_err(&args.counts, e))?;
    let dev = mub_deviation(&rec.analyzer).map_err(|e| core_err(&args.counts, e))?;
    ctx.say(format!("MUB deviation {dev:.4}"));
    for s in Setting::TABLE_ORDER {
        let e = rec.analyzer.effects(s);
        ctx.say(format!(
            "{:<10} purity E+ {:.4}  E- {:.4}{}",
            s.basis_label(),
            purity(&e.plus),
            purity(&e.minus),
            if rec.fits[s].converged { "" } else { "  (not converged)" }
        ));
    }
    let fallback = args.counts.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out = ctx.out_dir(&fallback)?.join("analyzer.json");
    write_json(&out, &rec.analyzer)?;
    ctx.say(format!("wrote {}", out.display()));
    Ok(Verdict::Success)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_unknown_fields() {
        let json = r#"{"noise":{"eta_alice":0.383,"eta_bob":1.0,"visibility":{"X":0.9541,"Y":0.9505,"Z":0.9623}},
            "strategy":{"kind":"honest"},"n_trials":10,"seed":1,"output_dir":"out"}"#;
        let cfg: SessionConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.timing, TimingConfig::default());
        assert_eq!(cfg.noise, NoiseModel::reported());
        let bad = json.replace("\"seed\":1", "\"seed\":1,\"sede\":2");
        assert!(serde_json::from_str::<SessionConfig>(&bad).is_err());
        let no_seed = json.replace("\"seed\":1,", "");
        assert!(serde_json::from_str::<SessionConfig>(&no_seed).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Input(String::new()).exit_code(), 2);
        assert_eq!(CliError::Io(String::new()).exit_code(), 3);
        assert_eq!(Verdict::Negative.exit_code(), 1);
    }
}
