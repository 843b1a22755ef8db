//! Clocked simulation of an experimental session.
//!
//! Each trial starts with a clock tick. The QRNG next to Bob picks a setting,
//! Bob's analyzer switches, the setting travels to Alice who switches her own
//! analyzer and measures, and both detections are gated for coincidence.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::analyzer::AnalyzerModel;
use crate::error::{Error, Result};
use crate::evaluator::CountTally;
use crate::model::{HonestSampler, LhsEnsemble, LhsSampler, NoiseModel};
use crate::par;
use crate::setting::{Outcome, Setting};
use crate::spacetime::{trusted_window, EventLabel, EventLog, SpacetimeEvent, TrustedWindow, C_M_PER_NS};

/// Durations in ns, distance in m, speeds as fractions of c.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub clock_rate_hz: f64,
    pub qrng_ready: f64,
    pub setting_transmission: f64,
    pub splitter_and_cables: f64,
    pub eom_switch: f64,
    pub alice_extra_delay: f64,
    pub detector_registration: f64,
    pub acceptance_window: f64,
    pub buffer: f64,
    pub distance: f64,
    pub fiber_speed: f64,
    pub coax_speed: f64,
    /// Length of Alice's photon delay fiber in m.
    pub alice_fiber_length: f64,
    /// Full width of the coincidence gate.
    pub coincidence_window: f64,
    /// Standard deviation of Gaussian detector jitter, per detector.
    pub jitter_sigma: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            clock_rate_hz: 787e3,
            qrng_ready: 90.0,
            setting_transmission: 205.0,
            splitter_and_cables: 48.0,
            eom_switch: 22.0,
            alice_extra_delay: 20.0,
            detector_registration: 10.0,
            acceptance_window: 20.0,
            buffer: 25.0,
            distance: 48.0,
            fiber_speed: 0.66,
            coax_speed: 0.66,
            alice_fiber_length: 80.0,
            coincidence_window: 3.0,
            jitter_sigma: 0.0,
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<()> {
        let durations = [
            ("qrng_ready", self.qrng_ready),
            ("setting_transmission", self.setting_transmission),
            ("splitter_and_cables", self.splitter_and_cables),
            ("eom_switch", self.eom_switch),
            ("alice_extra_delay", self.alice_extra_delay),
            ("detector_registration", self.detector_registration),
            ("acceptance_window", self.acceptance_window),
            ("buffer", self.buffer),
            ("alice_fiber_length", self.alice_fiber_length),
            ("jitter_sigma", self.jitter_sigma),
        ];
        for (name, v) in durations {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Configuration(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        for (name, v) in [("fiber_speed", self.fiber_speed), ("coax_speed", self.coax_speed)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Configuration(format!("{name} must lie in (0, 1], got {v}")));
            }
        }
        if !(self.distance > 0.0 && self.distance.is_finite()) {
            return Err(Error::Configuration(format!("distance must be > 0, got {}", self.distance)));
        }
        if !(self.clock_rate_hz > 0.0 && self.clock_rate_hz.is_finite()) {
            return Err(Error::Configuration("clock rate must be > 0".into()));
        }
        if !(self.coincidence_window > 0.0) {
            return Err(Error::Configuration("coincidence window must be > 0".into()));
        }
        Ok(())
    }

    pub fn period_ns(&self) -> f64 {
        1e9 / self.clock_rate_hz
    }

    pub fn alice_knows_setting(&self) -> f64 {
        self.qrng_ready + self.setting_transmission
    }

    pub fn alice_measurement(&self) -> f64 {
        self.alice_knows_setting() + self.splitter_and_cables + self.eom_switch + self.alice_extra_delay
    }

    pub fn alice_report(&self) -> f64 {
        self.alice_measurement() + self.detector_registration
    }

    pub fn bob_analyzer_ready(&self) -> f64 {
        self.qrng_ready + self.splitter_and_cables + self.eom_switch
    }

    /// Photon flight time through Alice's delay fiber.
    pub fn alice_fiber_delay(&self) -> f64 {
        self.alice_fiber_length / (self.fiber_speed * C_M_PER_NS)
    }
}

/// How outcomes are produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Quantum pairs with the configured noise.
    Honest,
    /// Alice cheats with a local-hidden-state ensemble against Bob's analyzer.
    Lhs {
        ensemble: LhsEnsemble,
        analyzer: AnalyzerModel,
    },
}

/// Maps two QRNG bits to a setting; `None` for the discarded pair `11`.
pub fn qrng_choice(bit1: bool, bit0: bool) -> Option<Setting> {
    match (bit1, bit0) {
        (false, false) => Some(Setting::X),
        (false, true) => Some(Setting::Y),
        (true, false) => Some(Setting::Z),
        (true, true) => None,
    }
}

/// True iff the offset-corrected time difference lies within half the window.
pub fn coincidence_gate(t_alice: f64, t_bob: f64, nominal_offset: f64, window: f64) -> bool {
    (t_alice - t_bob - nominal_offset).abs() <= 0.5 * window
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    /// `None` for discarded trials.
    pub setting: Option<Setting>,
    pub alice_outcome: Option<Outcome>,
    pub bob_outcome: Option<Outcome>,
    pub coincident: bool,
    /// Half-open index range of this trial's events in the session log.
    pub events: [usize; 2],
}

impl TrialRecord {
    pub fn is_discarded(&self) -> bool {
        self.setting.is_none()
    }
}

enum Sampler {
    Honest(HonestSampler),
    Lhs(LhsSampler),
}

/// Precomputed per-session state shared by all trials.
pub struct TrialEngine {
    timing: TimingConfig,
    eta_alice: f64,
    eta_bob: f64,
    window: TrustedWindow,
    sampler: Sampler,
    jitter: Option<Normal<f64>>,
}

pub const EVENTS_PER_TRIAL: usize = 10;

impl TrialEngine {
    pub fn new(timing: &TimingConfig, noise: &NoiseModel, strategy: &Strategy) -> Result<Self> {
        noise.validate()?;
        let window = trusted_window(timing)?;
        let sampler = match strategy {
            Strategy::Honest => Sampler::Honest(HonestSampler::new(noise)),
            Strategy::Lhs { ensemble, analyzer } => Sampler::Lhs(LhsSampler::new(ensemble, analyzer)),
        };
        let jitter = (timing.jitter_sigma > 0.0)
            .then(|| Normal::new(0.0, timing.jitter_sigma).expect("finite sigma"));
        Ok(TrialEngine {
            timing: timing.clone(),
            eta_alice: noise.eta_alice,
            eta_bob: noise.eta_bob,
            window,
            sampler,
            jitter,
        })
    }

    pub fn trusted_window(&self) -> &TrustedWindow {
        &self.window
    }

    fn events(&self, trial_id: u64) -> [SpacetimeEvent; EVENTS_PER_TRIAL] {
        let t = &self.timing;
        let t0 = trial_id as f64 * t.period_ns();
        let d = t.distance;
        let times = [
            (EventLabel::PairEmission, 0.0, 0.0),
            (EventLabel::QrngChoiceStart, d, 0.0),
            (EventLabel::QrngChoiceReady, d, t.qrng_ready),
            (EventLabel::SettingSent, d, t.qrng_ready),
            (EventLabel::AliceKnowsSetting, 0.0, t.alice_knows_setting()),
            (EventLabel::AliceMeasurement, 0.0, t.alice_measurement()),
            (EventLabel::AliceReport, 0.0, t.alice_report()),
            (EventLabel::BobMeasurementStart, d, self.window.acceptance.0),
            (EventLabel::BobMeasurementEnd, d, self.window.acceptance.1),
            (EventLabel::BobRegistration, d, self.window.registration_end_ns),
        ];
        times.map(|(label, x_m, t_rel)| SpacetimeEvent {
            trial_id,
            label,
            x_m,
            t_ns: t0 + t_rel,
        })
    }

    fn outcomes<R: Rng + ?Sized>(&self, s: Setting, rng: &mut R) -> (Outcome, Outcome) {
        if rng.gen::<f64>() < self.eta_bob {
            match &self.sampler {
                Sampler::Honest(h) => h.sample(s, rng),
                Sampler::Lhs(l) => l.sample(s, rng),
            }
        } else {
            let alice = if rng.gen::<f64>() < self.eta_alice {
                if rng.gen::<bool>() {
                    Outcome::Plus
                } else {
                    Outcome::Minus
                }
            } else {
                Outcome::Inconclusive
            };
            (alice, Outcome::Inconclusive)
        }
    }

    /// Runs one trial and returns its record and events. The record's event
    /// range is `[0, EVENTS_PER_TRIAL)`.
    pub fn run_trial<R: Rng + ?Sized>(
        &self,
        trial_id: u64,
        rng: &mut R,
    ) -> (TrialRecord, [SpacetimeEvent; EVENTS_PER_TRIAL]) {
        let events = self.events(trial_id);
        let setting = qrng_choice(rng.gen(), rng.gen());
        let mut record = TrialRecord {
            trial_id,
            setting,
            alice_outcome: None,
            bob_outcome: None,
            coincident: false,
            events: [0, EVENTS_PER_TRIAL],
        };
        if let Some(s) = setting {
            let (alice, bob) = self.outcomes(s, rng);
            let gated = alice.is_conclusive() && bob.is_conclusive() && {
                let t_alice = self.timing.alice_measurement();
                let t_bob = 0.5 * (self.window.acceptance.0 + self.window.acceptance.1);
                let (ja, jb) = match &self.jitter {
                    Some(n) => (n.sample(rng), n.sample(rng)),
                    None => (0.0, 0.0),
                };
                coincidence_gate(t_alice + ja, t_bob + jb, t_alice - t_bob, self.timing.coincidence_window)
            };
            record.alice_outcome = Some(alice);
            record.bob_outcome = Some(bob);
            record.coincident = gated;
        }
        (record, events)
    }
}

/// Adds a trial to a tally. Bob-heralded trials without a coincidence count
/// as Alice-inconclusive.
pub fn tally_trial(tally: &mut CountTally, rec: &TrialRecord) {
    if let (Some(s), Some(a), Some(b)) = (rec.setting, rec.alice_outcome, rec.bob_outcome) {
        let a = if b.is_conclusive() && !rec.coincident {
            Outcome::Inconclusive
        } else {
            a
        };
        tally.record(s, a, b);
    }
}

/// Receives each trial as it is produced.
pub trait TrialSink {
    fn accept(&mut self, record: &TrialRecord, events: &[SpacetimeEvent]);
}

impl TrialSink for () {
    fn accept(&mut self, _: &TrialRecord, _: &[SpacetimeEvent]) {}
}

/// Keeps every record and event.
#[derive(Debug, Default)]
pub struct Recorder {
    pub log: EventLog,
    pub trials: Vec<TrialRecord>,
}

impl TrialSink for Recorder {
    fn accept(&mut self, record: &TrialRecord, events: &[SpacetimeEvent]) {
        let start = self.log.len();
        self.log.events.extend_from_slice(events);
        let mut r = record.clone();
        r.events = [start, start + events.len()];
        self.trials.push(r);
    }
}

/// Runs `n_trials` trials from `seed`, feeding each to `sink`, and returns
/// the tally.
pub fn run_session_with<S: TrialSink + ?Sized>(
    timing: &TimingConfig,
    noise: &NoiseModel,
    strategy: &Strategy,
    n_trials: u64,
    seed: u64,
    sink: &mut S,
) -> Result<CountTally> {
    if n_trials == 0 {
        return Err(Error::InvalidArgument("a session needs at least one trial".into()));
    }
    let engine = TrialEngine::new(timing, noise, strategy)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = CountTally::new();
    for id in 0..n_trials {
        let (rec, events) = engine.run_trial(id, &mut rng);
        tally_trial(&mut tally, &rec);
        sink.accept(&rec, &events);
    }
    Ok(tally)
}

/// Full session output: event log, tally and trial records.
pub fn run_session(
    timing: &TimingConfig,
    noise: &NoiseModel,
    strategy: &Strategy,
    n_trials: u64,
    seed: u64,
) -> Result<(EventLog, CountTally, Vec<TrialRecord>)> {
    let mut rec = Recorder::default();
    let tally = run_session_with(timing, noise, strategy, n_trials, seed, &mut rec)?;
    Ok((rec.log, tally, rec.trials))
}

/// Tallies of independent sessions, one per seed, in seed order.
pub fn run_sessions(
    timing: &TimingConfig,
    noise: &NoiseModel,
    strategy: &Strategy,
    n_trials: u64,
    seeds: &[u64],
) -> Result<Vec<CountTally>> {
    par::map_slice(seeds, |&seed| {
        run_session_with(timing, noise, strategy, n_trials, seed, &mut ())
    })
    .into_iter()
    .collect()
}

pub fn write_trials_jsonl<W: Write>(trials: &[TrialRecord], mut w: W) -> Result<()> {
    for t in trials {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_trials_jsonl<R: BufRead>(r: R) -> Result<Vec<TrialRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TrialRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if t.coincident
            && !(t.alice_outcome.is_some_and(|o| o.is_conclusive())
                && t.bob_outcome.is_some_and(|o| o.is_conclusive()))
        {
            return Err(Error::parse(i + 1, "coincident trial with an inconclusive outcome"));
        }
        out.push(t);
    }
    Ok(out)
}

/// Rebuilds the tally of a session from its trial records.
pub fn tally_trials(trials: &[TrialRecord]) -> CountTally {
    let mut tally = CountTally::new();
    for t in trials {
        tally_trial(&mut tally, t);
    }
    tally
}
