//! Steering value `S = T_X + T_Y + T_Z` from tallied counts, with Poisson
//! Monte-Carlo and run-to-run standard errors.
//!
//! `T_s = Σ_a P(a|s)·⟨B_s⟩²|a`, where the sum runs over Alice's three outcomes
//! including the inconclusive one, and both the probability and the
//! conditional mean are taken over Bob-conclusive events.

use std::fmt::Write as _;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::JointDistribution;
use crate::par;
use crate::setting::{Outcome, PerSetting, Setting};

/// Default number of Poisson replicas for [`mc_error`].
pub const DEFAULT_RESAMPLES: usize = 1000;

/// Counts indexed by setting, Alice's ternary outcome and Bob's conclusive
/// outcome, plus Bob's own inconclusive events kept for diagnostics.
///
/// Counts are stored as `f64` so an exact probability table can be evaluated
/// as an infinite-count tally; sampled tallies always hold whole numbers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CountTally {
    /// `counts[s][alice.index()][bob.index()]`.
    pub counts: PerSetting<[[f64; 2]; 3]>,
    pub bob_inconclusive: PerSetting<f64>,
}

impl CountTally {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tally whose cells are the exact probabilities of three distributions,
    /// each setting weighted equally.
    pub fn from_distributions(dists: &PerSetting<JointDistribution>) -> Self {
        CountTally {
            counts: dists.map(|_, d| d.p),
            bob_inconclusive: PerSetting::splat(0.0),
        }
    }

    pub fn record(&mut self, s: Setting, alice: Outcome, bob: Outcome) {
        match bob {
            Outcome::Inconclusive => self.bob_inconclusive[s] += 1.0,
            b => self.counts[s][alice.index()][b.index()] += 1.0,
        }
    }

    pub fn get(&self, s: Setting, alice: Outcome, bob: Outcome) -> f64 {
        self.counts[s][alice.index()][bob.index()]
    }

    pub fn set(&mut self, s: Setting, alice: Outcome, bob: Outcome, count: f64) {
        self.counts[s][alice.index()][bob.index()] = count;
    }

    /// Bob-conclusive events in setting `s`.
    pub fn total(&self, s: Setting) -> f64 {
        self.counts[s].iter().flatten().sum()
    }

    pub fn grand_total(&self) -> f64 {
        Setting::ALL.iter().map(|&s| self.total(s)).sum()
    }

    pub fn merge(&mut self, other: &CountTally) {
        for s in Setting::ALL {
            for a in 0..3 {
                for b in 0..2 {
                    self.counts[s][a][b] += other.counts[s][a][b];
                }
            }
            self.bob_inconclusive[s] += other.bob_inconclusive[s];
        }
    }

    pub fn scaled(&self, k: f64) -> CountTally {
        CountTally {
            counts: self.counts.map(|_, t| t.map(|row| row.map(|c| c * k))),
            bob_inconclusive: self.bob_inconclusive.map(|_, c| c * k),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |c: f64| c.is_finite() && c >= 0.0;
        for s in Setting::ALL {
            if !self.counts[s].iter().flatten().all(|&c| ok(c)) || !ok(self.bob_inconclusive[s]) {
                return Err(Error::InvalidArgument(format!(
                    "tally for setting {s} has a negative or non-finite count"
                )));
            }
        }
        Ok(())
    }

    /// Fraction of Bob-conclusive events where Alice was conclusive.
    pub fn efficiency(&self, s: Setting) -> f64 {
        let total = self.total(s);
        if total == 0.0 {
            return 0.0;
        }
        let conclusive: f64 = Outcome::CONCLUSIVE
            .iter()
            .map(|a| self.counts[s][a.index()].iter().sum::<f64>())
            .sum();
        conclusive / total
    }

    /// `−⟨ab⟩` over events where both parties were conclusive.
    pub fn visibility(&self, s: Setting) -> f64 {
        let mut corr = 0.0;
        let mut n = 0.0;
        for a in Outcome::CONCLUSIVE {
            for b in Outcome::CONCLUSIVE {
                let c = self.get(s, a, b);
                corr += a.sign() * b.sign() * c;
                n += c;
            }
        }
        if n == 0.0 {
            0.0
        } else {
            -corr / n
        }
    }

    /// Writes `setting,alice_outcome,bob_outcome,count` rows. Bob's own
    /// inconclusive events appear with `bob_outcome = 0` and `alice_outcome = *`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["setting", "alice_outcome", "bob_outcome", "count"])
            .map_err(csv_io)?;
        for s in Setting::ALL {
            for a in Outcome::ALL {
                for b in Outcome::CONCLUSIVE {
                    out.write_record([
                        s.name().to_string(),
                        a.to_string(),
                        b.to_string(),
                        self.get(s, a, b).to_string(),
                    ])
                    .map_err(csv_io)?;
                }
            }
            out.write_record([
                s.name().to_string(),
                "*".to_string(),
                "0".to_string(),
                self.bob_inconclusive[s].to_string(),
            ])
            .map_err(csv_io)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Parses the CSV written by [`write_csv`](Self::write_csv). Repeated rows
    /// for the same cell are summed.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = reader.headers().map_err(|e| Error::parse(1, e.to_string()))?.clone();
        let expected = ["setting", "alice_outcome", "bob_outcome", "count"];
        if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::parse(1, format!("expected header {}", expected.join(","))));
        }
        let mut tally = CountTally::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                Error::parse(line, e.to_string())
            })?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            let bad = |m: String| Error::parse(line, m);
            let s: Setting = rec[0].parse().map_err(|e: Error| bad(e.to_string()))?;
            let b: Outcome = rec[2].parse().map_err(|e: Error| bad(e.to_string()))?;
            let count: f64 = rec[3]
                .parse()
                .map_err(|_| bad(format!("count {:?} is not a number", &rec[3])))?;
            if !(count.is_finite() && count >= 0.0) {
                return Err(bad(format!("count {count} must be nonnegative")));
            }
            if b == Outcome::Inconclusive {
                tally.bob_inconclusive[s] += count;
            } else {
                let a: Outcome = rec[1].parse().map_err(|e: Error| bad(e.to_string()))?;
                tally.counts[s][a.index()][b.index()] += count;
            }
        }
        Ok(tally)
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Correlations, steering value and (optionally) their standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteeringResult {
    pub t: PerSetting<f64>,
    pub s: f64,
    pub sigma_s: Option<f64>,
    pub sigma_t: Option<PerSetting<f64>>,
}

impl SteeringResult {
    /// Standard deviations above the local bound of 1, if errors are attached.
    pub fn violation_sigmas(&self) -> Option<f64> {
        self.sigma_s.map(|sig| (self.s - 1.0) / sig)
    }
}

/// `⟨B⟩` over the subensemble where Alice reported `a`; 0 if it is empty.
pub fn conditional_mean(tally: &CountTally, s: Setting, a: Outcome) -> f64 {
    mean_of(&tally.counts[s][a.index()])
}

fn mean_of(row: &[f64; 2]) -> f64 {
    let den = row[0] + row[1];
    if den == 0.0 {
        0.0
    } else {
        (row[0] - row[1]) / den
    }
}

fn t_of(cells: &[[f64; 2]; 3]) -> Option<f64> {
    let total: f64 = cells.iter().flatten().sum();
    if total == 0.0 {
        return None;
    }
    Some(
        cells
            .iter()
            .map(|row| (row[0] + row[1]) / total * mean_of(row).powi(2))
            .sum(),
    )
}

/// `T_s = Σ_a P(a|s)·⟨B_s⟩²|a`.
pub fn correlation_t(tally: &CountTally, s: Setting) -> Result<f64> {
    t_of(&tally.counts[s]).ok_or_else(|| {
        Error::InsufficientData(format!("no Bob-conclusive events for setting {s}"))
    })
}

/// Sums the three correlations. Errors are left unset.
pub fn steering_value(tally: &CountTally) -> Result<SteeringResult> {
    tally.validate()?;
    let t = PerSetting {
        x: correlation_t(tally, Setting::X)?,
        y: correlation_t(tally, Setting::Y)?,
        z: correlation_t(tally, Setting::Z)?,
    };
    Ok(SteeringResult {
        s: t.x + t.y + t.z,
        t,
        sigma_s: None,
        sigma_t: None,
    })
}

/// [`steering_value`] with Poisson Monte-Carlo errors attached.
pub fn steering_value_with_errors<R: Rng + ?Sized>(
    tally: &CountTally,
    n_resamples: usize,
    rng: &mut R,
) -> Result<SteeringResult> {
    let mut result = steering_value(tally)?;
    let err = mc_error(tally, n_resamples, rng)?;
    result.sigma_s = Some(err.sigma_s);
    result.sigma_t = Some(err.sigma_t);
    Ok(result)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McError {
    pub sigma_s: f64,
    pub sigma_t: PerSetting<f64>,
}

/// Independent random stream for replica `index`, derived from `base`.
pub(crate) fn replica_rng(base: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index as u64);
    rng
}

pub(crate) fn poisson_resample<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).map(|d| d.sample(rng)).unwrap_or(mean)
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Resamples every cell as an independent Poisson variate with the observed
/// count as its mean and returns the spread of S and of each T across
/// replicas. Settings left empty by a replica contribute T = 0.
pub fn mc_error<R: Rng + ?Sized>(
    tally: &CountTally,
    n_resamples: usize,
    rng: &mut R,
) -> Result<McError> {
    if n_resamples < 100 {
        return Err(Error::InvalidArgument(format!(
            "mc_error needs at least 100 resamples, got {n_resamples}"
        )));
    }
    tally.validate()?;
    let base: u64 = rng.gen();
    let replicas: Vec<[f64; 3]> = par::map_indexed(n_resamples, |i| {
        let mut r = replica_rng(base, i);
        Setting::ALL.map(|s| {
            let cells = tally.counts[s].map(|row| row.map(|c| poisson_resample(c, &mut r)));
            t_of(&cells).unwrap_or(0.0)
        })
    });
    let column = |k: usize| replicas.iter().map(|t| t[k]).collect::<Vec<_>>();
    let s_values: Vec<f64> = replicas.iter().map(|t| t.iter().sum()).collect();
    Ok(McError {
        sigma_s: std_dev(&s_values),
        sigma_t: PerSetting {
            x: std_dev(&column(0)),
            y: std_dev(&column(1)),
            z: std_dev(&column(2)),
        },
    })
}

/// Standard deviation of the mean over per-run steering values.
pub fn runs_error(per_run_s: &[f64]) -> Result<f64> {
    if per_run_s.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "runs_error needs at least 2 runs, got {}",
            per_run_s.len()
        )));
    }
    Ok(std_dev(per_run_s) / (per_run_s.len() as f64).sqrt())
}

/// Plain-text report with one column per basis in H/V, ±45°, R/L order.
pub fn format_report(tally: &CountTally, result: &SteeringResult) -> String {
    let mut out = String::new();
    let cols = Setting::TABLE_ORDER;
    let _ = write!(out, "{:<26}", "");
    for s in cols {
        let _ = write!(out, "{:>18}", s.basis_label());
    }
    out.push('\n');
    let row = |out: &mut String, label: &str, f: &dyn Fn(Setting) -> String| {
        let _ = write!(out, "{label:<26}");
        for s in cols {
            let _ = write!(out, "{:>18}", f(s));
        }
        out.push('\n');
    };
    row(&mut out, "Alice's arm efficiency", &|s| {
        format!("{:.2}%", 100.0 * tally.efficiency(s))
    });
    row(&mut out, "Visibility", &|s| format!("{:.2}%", 100.0 * tally.visibility(s)));
    row(&mut out, "T_i", &|s| match &result.sigma_t {
        Some(sig) => format!("{:.4} ± {:.4}", result.t[s], sig[s]),
        None => format!("{:.4}", result.t[s]),
    });
    let _ = match result.sigma_s {
        Some(sig) => writeln!(out, "{:<26}{:>18}", "Steering value S", format!("{:.4} ± {:.4}", result.s, sig)),
        None => writeln!(out, "{:<26}{:>18}", "Steering value S", format!("{:.4}", result.s)),
    };
    out
}
