//! Lab-frame light-cone audit of a session's event log.
//!
//! Geometry is one-dimensional: Alice sits at `x = 0`, Bob and the QRNG at
//! `x = distance`. Hypothetical influences always travel at `c`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::TimingConfig;

/// Speed of light in m/ns.
pub const C_M_PER_NS: f64 = 0.299_792_458;

/// Classification tolerance in ns.
pub const INTERVAL_TOLERANCE_NS: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventLabel {
    PairEmission,
    QrngChoiceStart,
    QrngChoiceReady,
    SettingSent,
    AliceKnowsSetting,
    AliceMeasurement,
    AliceReport,
    BobMeasurementStart,
    BobMeasurementEnd,
    BobRegistration,
}

impl EventLabel {
    pub const ALL: [EventLabel; 10] = [
        EventLabel::PairEmission,
        EventLabel::QrngChoiceStart,
        EventLabel::QrngChoiceReady,
        EventLabel::SettingSent,
        EventLabel::AliceKnowsSetting,
        EventLabel::AliceMeasurement,
        EventLabel::AliceReport,
        EventLabel::BobMeasurementStart,
        EventLabel::BobMeasurementEnd,
        EventLabel::BobRegistration,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpacetimeEvent {
    pub trial_id: u64,
    pub label: EventLabel,
    pub x_m: f64,
    pub t_ns: f64,
}

/// Append-only list of events in emission order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub events: Vec<SpacetimeEvent>,
}

impl EventLog {
    pub fn new() -> Self {
        EventLog::default()
    }

    pub fn push(&mut self, e: SpacetimeEvent) {
        self.events.push(e);
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events grouped by trial, keyed by label.
    fn by_trial(&self) -> BTreeMap<u64, BTreeMap<EventLabel, SpacetimeEvent>> {
        let mut out: BTreeMap<u64, BTreeMap<EventLabel, SpacetimeEvent>> = BTreeMap::new();
        for e in &self.events {
            out.entry(e.trial_id).or_default().insert(e.label, *e);
        }
        out
    }

    /// One JSON object per line: `{trial_id, label, x_m, t_ns}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut log = EventLog::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: SpacetimeEvent = serde_json::from_str(&line)
                .map_err(|err| Error::parse(i + 1, err.to_string()))?;
            if !e.t_ns.is_finite() || !e.x_m.is_finite() {
                return Err(Error::parse(i + 1, "non-finite coordinate"));
            }
            log.push(e);
        }
        Ok(log)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    SpaceLike,
    LightLike,
    TimeLike,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalClass {
    pub kind: IntervalKind,
    /// `|Δx|/c − |Δt|` in ns.
    pub margin_ns: f64,
}

fn classify(margin_ns: f64) -> IntervalKind {
    if margin_ns > INTERVAL_TOLERANCE_NS {
        IntervalKind::SpaceLike
    } else if margin_ns >= -INTERVAL_TOLERANCE_NS {
        IntervalKind::LightLike
    } else {
        IntervalKind::TimeLike
    }
}

pub fn interval(e1: &SpacetimeEvent, e2: &SpacetimeEvent) -> IntervalClass {
    let margin_ns = (e1.x_m - e2.x_m).abs() / C_M_PER_NS - (e1.t_ns - e2.t_ns).abs();
    IntervalClass {
        kind: classify(margin_ns),
        margin_ns,
    }
}

/// Worst-case slack of one condition over all audited trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub passed: bool,
    /// Smallest margin in ns; positive means space-like with room to spare.
    pub margin_ns: f64,
    pub worst_trial: Option<u64>,
}

impl ConditionReport {
    fn from_margins(margins: impl IntoIterator<Item = (u64, f64)>) -> Self {
        let mut worst = (None, f64::INFINITY);
        for (id, m) in margins {
            if m < worst.1 || worst.0.is_none() {
                worst = (Some(id), m);
            }
        }
        ConditionReport {
            passed: classify(worst.1) == IntervalKind::SpaceLike,
            margin_ns: worst.1,
            worst_trial: worst.0,
        }
    }
}

/// Margin of a source event against every instant of a span `[t0, t1]` at
/// distance `dx`: the worst instant is the endpoint farthest in time.
pub fn span_margin(dx_m: f64, t_source: f64, t0: f64, t1: f64) -> f64 {
    dx_m.abs() / C_M_PER_NS - (t0 - t_source).abs().max((t1 - t_source).abs())
}

/// Slack between the end of Bob's window and the earliest arrival of a
/// light-speed signal leaving Alice when she learns the setting. An infinite
/// `t_know` (setting never sent) gives infinite slack.
pub fn setting_independence_margin(dx_m: f64, t_know: f64, bob_end: f64) -> f64 {
    if t_know == f64::INFINITY {
        return f64::INFINITY;
    }
    t_know + dx_m.abs() / C_M_PER_NS - bob_end
}

fn require(
    trial: u64,
    events: &BTreeMap<EventLabel, SpacetimeEvent>,
    label: EventLabel,
) -> Result<SpacetimeEvent> {
    events.get(&label).copied().ok_or_else(|| {
        Error::MalformedLog(format!("trial {trial} has no {label:?} event"))
    })
}

fn check<F>(log: &EventLog, margin: F) -> Result<ConditionReport>
where
    F: Fn(u64, &BTreeMap<EventLabel, SpacetimeEvent>) -> Result<f64>,
{
    let trials = log.by_trial();
    if trials.is_empty() {
        return Err(Error::MalformedLog("event log is empty".into()));
    }
    let mut margins = Vec::with_capacity(trials.len());
    for (id, events) in &trials {
        margins.push((*id, margin(*id, events)?));
    }
    Ok(ConditionReport::from_margins(margins))
}

/// Pair emission against the whole QRNG choice span.
pub fn check_freedom_of_choice(log: &EventLog) -> Result<ConditionReport> {
    check(log, |id, ev| {
        let emit = require(id, ev, EventLabel::PairEmission)?;
        let start = require(id, ev, EventLabel::QrngChoiceStart)?;
        let ready = require(id, ev, EventLabel::QrngChoiceReady)?;
        Ok(span_margin(start.x_m - emit.x_m, emit.t_ns, start.t_ns, ready.t_ns)
            .min(span_margin(ready.x_m - emit.x_m, emit.t_ns, start.t_ns, ready.t_ns)))
    })
}

/// Bob's window, registration included, must close before any signal from
/// Alice's knowledge of the setting could reach him.
pub fn check_setting_independence(log: &EventLog) -> Result<ConditionReport> {
    check(log, |id, ev| {
        let know = require(id, ev, EventLabel::AliceKnowsSetting)?;
        let end = require(id, ev, EventLabel::BobRegistration)?;
        Ok(setting_independence_margin(end.x_m - know.x_m, know.t_ns, end.t_ns))
    })
}

/// Alice's report against every instant of Bob's window.
pub fn check_outcome_independence(log: &EventLog) -> Result<ConditionReport> {
    check(log, |id, ev| {
        let report = require(id, ev, EventLabel::AliceReport)?;
        let start = require(id, ev, EventLabel::BobMeasurementStart)?;
        let end = require(id, ev, EventLabel::BobRegistration)?;
        Ok(span_margin(start.x_m - report.x_m, report.t_ns, start.t_ns, end.t_ns))
    })
}

/// Trusted window for Bob's measurement and the acceptance window placed in it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrustedWindow {
    pub start_ns: f64,
    pub end_ns: f64,
    /// `[start, end]` of Bob's acceptance window, relative to trial start.
    pub acceptance: (f64, f64),
    /// End of Bob's detection including registration.
    pub registration_end_ns: f64,
}

impl TrustedWindow {
    pub fn length(&self) -> f64 {
        self.end_ns - self.start_ns
    }
}

/// Computes the window in which Bob can measure while both independence
/// conditions hold, and centers the acceptance window in it after removing
/// the buffers and the registration time.
pub fn trusted_window(timing: &TimingConfig) -> Result<TrustedWindow> {
    timing.validate()?;
    let light = timing.distance / C_M_PER_NS;
    let t_know = timing.alice_knows_setting();
    let t_report = timing.alice_report();
    let ready = timing.bob_analyzer_ready();
    let start = ready.max(t_report - light);
    let end = (t_know + light).min(t_report + light);
    let lo = start + timing.buffer;
    let hi = end - timing.buffer - timing.detector_registration;
    if hi - lo < timing.acceptance_window {
        return Err(Error::Configuration(format!(
            "acceptance window {} ns does not fit in trusted window [{start:.3}, {end:.3}] ns \
             with {} ns buffers and {} ns registration",
            timing.acceptance_window, timing.buffer, timing.detector_registration
        )));
    }
    let center = 0.5 * (lo + hi);
    let acceptance = (
        center - 0.5 * timing.acceptance_window,
        center + 0.5 * timing.acceptance_window,
    );
    Ok(TrustedWindow {
        start_ns: start,
        end_ns: end,
        acceptance,
        registration_end_ns: acceptance.1 + timing.detector_registration,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopholeReport {
    pub freedom_of_choice: ConditionReport,
    pub setting_independence: ConditionReport,
    pub outcome_independence: ConditionReport,
    /// Trusted window of the configured timing.
    pub trusted_window: (f64, f64),
    /// Envelope of Bob's logged windows, start to registration, relative to
    /// each trial's start.
    pub acceptance_window: (f64, f64),
    pub acceptance_within_trusted: bool,
    pub trials: usize,
    pub passed: bool,
}

/// Audits every trial of `log` against the three conditions.
///
/// Trial starts are recovered from the pair emission, so the acceptance
/// envelope is comparable with the per-trial trusted window.
pub fn audit(log: &EventLog, timing: &TimingConfig) -> Result<LoopholeReport> {
    let window = trusted_window(timing)?;
    let freedom_of_choice = check_freedom_of_choice(log)?;
    let setting_independence = check_setting_independence(log)?;
    let outcome_independence = check_outcome_independence(log)?;

    let trials = log.by_trial();
    let mut env = (f64::INFINITY, f64::NEG_INFINITY);
    for (id, ev) in &trials {
        let t0 = require(*id, ev, EventLabel::PairEmission)?.t_ns;
        env.0 = env.0.min(require(*id, ev, EventLabel::BobMeasurementStart)?.t_ns - t0);
        env.1 = env.1.max(require(*id, ev, EventLabel::BobRegistration)?.t_ns - t0);
    }
    let tol = INTERVAL_TOLERANCE_NS;
    let within = env.0 >= window.start_ns - tol && env.1 <= window.end_ns + tol;
    let passed = freedom_of_choice.passed
        && setting_independence.passed
        && outcome_independence.passed
        && within;
    Ok(LoopholeReport {
        freedom_of_choice,
        setting_independence,
        outcome_independence,
        trusted_window: (window.start_ns, window.end_ns),
        acceptance_window: env,
        acceptance_within_trusted: within,
        trials: trials.len(),
        passed,
    })
}

impl fmt::Display for LoopholeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let line = |f: &mut fmt::Formatter<'_>, name: &str, c: &ConditionReport| {
            writeln!(
                f,
                "{name:<22} {}  worst margin {:>9.3} ns",
                if c.passed { "PASS" } else { "FAIL" },
                c.margin_ns
            )
        };
        writeln!(f, "Spacetime audit over {} trials", self.trials)?;
        line(f, "freedom of choice", &self.freedom_of_choice)?;
        line(f, "setting independence", &self.setting_independence)?;
        line(f, "outcome independence", &self.outcome_independence)?;
        writeln!(
            f,
            "trusted window         [{:.2}, {:.2}] ns ({:.2} ns)",
            self.trusted_window.0,
            self.trusted_window.1,
            self.trusted_window.1 - self.trusted_window.0
        )?;
        writeln!(
            f,
            "Bob window             [{:.2}, {:.2}] ns {}",
            self.acceptance_window.0,
            self.acceptance_window.1,
            if self.acceptance_within_trusted { "inside" } else { "OUTSIDE" }
        )?;
        write!(f, "overall                {}", if self.passed { "PASS" } else { "FAIL" })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ev(label: EventLabel, x_m: f64, t_ns: f64) -> SpacetimeEvent {
        SpacetimeEvent {
            trial_id: 0,
            label,
            x_m,
            t_ns,
        }
    }

    fn light(d: f64) -> f64 {
        d / C_M_PER_NS
    }

    #[test]
    fn interval_examples() {
        let a = ev(EventLabel::PairEmission, 0.0, 0.0);
        let i = interval(&a, &ev(EventLabel::QrngChoiceStart, 48.0, 0.0));
        assert_eq!(i.kind, IntervalKind::SpaceLike);
        assert_abs_diff_eq!(i.margin_ns, 160.1108, epsilon = 1e-4);
        let i = interval(&a, &ev(EventLabel::QrngChoiceStart, 48.0, light(48.0)));
        assert_eq!(i.kind, IntervalKind::LightLike);
        let i = interval(&a, &ev(EventLabel::AliceReport, 0.0, 10.0));
        assert_eq!(i.kind, IntervalKind::TimeLike);
        assert_abs_diff_eq!(i.margin_ns, -10.0);
    }

    #[test]
    fn interval_is_symmetric_and_translation_invariant() {
        let pts = [(0.0, 0.0), (48.0, 90.0), (0.0, 385.0), (48.0, 500.0), (13.0, -7.5)];
        for &(x1, t1) in &pts {
            for &(x2, t2) in &pts {
                let a = ev(EventLabel::PairEmission, x1, t1);
                let b = ev(EventLabel::BobRegistration, x2, t2);
                assert_eq!(interval(&a, &b), interval(&b, &a));
                let s = |e: SpacetimeEvent| ev(e.label, e.x_m + 1234.5, e.t_ns - 98765.25);
                let shifted = interval(&s(a), &s(b));
                assert_eq!(shifted.kind, interval(&a, &b).kind);
                assert_abs_diff_eq!(shifted.margin_ns, interval(&a, &b).margin_ns, epsilon = 1e-9);
            }
        }
    }

    fn log_of(events: &[SpacetimeEvent]) -> EventLog {
        EventLog {
            events: events.to_vec(),
        }
    }

    #[test]
    fn freedom_of_choice_examples() {
        let mk = |d: f64, ready: f64| {
            log_of(&[
                ev(EventLabel::PairEmission, 0.0, 0.0),
                ev(EventLabel::QrngChoiceStart, d, 0.0),
                ev(EventLabel::QrngChoiceReady, d, ready),
            ])
        };
        let r = check_freedom_of_choice(&mk(48.0, 90.0)).unwrap();
        assert!(r.passed);
        assert_abs_diff_eq!(r.margin_ns, light(48.0) - 90.0, epsilon = 1e-12);
        assert!(!check_freedom_of_choice(&mk(48.0, 200.0)).unwrap().passed);
        let r = check_freedom_of_choice(&mk(96.0, 90.0)).unwrap();
        assert!(r.passed);
        assert_abs_diff_eq!(r.margin_ns, 230.2, epsilon = 0.05);
        let missing = log_of(&[ev(EventLabel::PairEmission, 0.0, 0.0)]);
        assert!(matches!(check_freedom_of_choice(&missing), Err(Error::MalformedLog(_))));
    }

    #[test]
    fn setting_independence_examples() {
        let mk = |end: f64| {
            log_of(&[
                ev(EventLabel::AliceKnowsSetting, 0.0, 295.0),
                ev(EventLabel::BobRegistration, 48.0, end),
            ])
        };
        let r = check_setting_independence(&mk(430.0)).unwrap();
        assert!(r.passed);
        assert_abs_diff_eq!(r.margin_ns, 295.0 + light(48.0) - 430.0, epsilon = 1e-12);
        assert!(!check_setting_independence(&mk(460.0)).unwrap().passed);
        assert_eq!(setting_independence_margin(48.0, f64::INFINITY, 1e9), f64::INFINITY);
    }

    #[test]
    fn outcome_independence_examples() {
        let mk = |t_report: f64, s: f64, e: f64| {
            log_of(&[
                ev(EventLabel::AliceReport, 0.0, t_report),
                ev(EventLabel::BobMeasurementStart, 48.0, s),
                ev(EventLabel::BobRegistration, 48.0, e),
            ])
        };
        let r = check_outcome_independence(&mk(385.0, 380.0, 400.0)).unwrap();
        assert!(r.passed);
        assert_abs_diff_eq!(r.margin_ns, light(48.0) - 15.0, epsilon = 1e-12);
        assert!(!check_outcome_independence(&mk(385.0, 500.0, 560.0)).unwrap().passed);
        let r = check_outcome_independence(&mk(400.0, 400.0, 400.0)).unwrap();
        assert_abs_diff_eq!(r.margin_ns, light(48.0), epsilon = 1e-12);
    }

    #[test]
    fn trusted_window_defaults() {
        let t = TimingConfig::default();
        let w = trusted_window(&t).unwrap();
        assert!(w.length() >= 75.0);
        assert!(w.acceptance.0 >= w.start_ns + t.buffer);
        assert!(w.registration_end_ns <= w.end_ns - t.buffer + 1e-9);
        assert_abs_diff_eq!(w.acceptance.1 - w.acceptance.0, 20.0, epsilon = 1e-12);

        let bad = TimingConfig {
            acceptance_window: 200.0,
            ..t.clone()
        };
        assert!(matches!(trusted_window(&bad), Err(Error::Configuration(_))));

        let far = TimingConfig {
            distance: 96.0,
            ..t
        };
        assert!(trusted_window(&far).unwrap().length() > w.length());
    }

    #[test]
    fn jsonl_round_trip() {
        let log = log_of(&[
            ev(EventLabel::PairEmission, 0.0, 0.0),
            ev(EventLabel::BobRegistration, 48.0, 365.5),
        ]);
        let mut buf = Vec::new();
        log.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(r#"{"trial_id":0,"label":"pair_emission","x_m":0.0,"t_ns":0.0}"#));
        assert_eq!(EventLog::read_jsonl(&buf[..]).unwrap(), log);
        let err = EventLog::read_jsonl(&b"{}\n"[..]).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }
}
