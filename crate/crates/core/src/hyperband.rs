//! Hyperband with successive halving over discrete search spaces.
//!
//! Bracket `s` starts `n = ⌈(s_max+1)·η^s / (s+1)⌉` configurations at
//! `R·η^{-s}` epochs and keeps the best `⌊n_i/η⌋` after every round, with
//! survivors trained further to `R·η^{i-s}` epochs. Lower objective is
//! better. Trials run sequentially; every finished round is appended to a
//! line-delimited JSON ledger so an interrupted search can resume.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// One hyperparameter: an explicit choice list or an inclusive stepped range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Dimension {
    Choice { choice: Vec<Value> },
    Range { min: f64, max: f64, step: f64 },
}

impl Dimension {
    /// All grid values.
    pub fn values(&self) -> Result<Vec<Value>> {
        match self {
            Dimension::Choice { choice } => {
                if choice.is_empty() {
                    return Err(Error::Config("empty choice dimension".into()));
                }
                Ok(choice.clone())
            }
            &Dimension::Range { min, max, step } => {
                if !(step > 0.0) || !(max >= min) || !min.is_finite() || !max.is_finite() {
                    return Err(Error::Config(format!("invalid range min={min} max={max} step={step}")));
                }
                let count = ((max - min) / step + 1e-9).floor() as usize + 1;
                let integral = [min, max, step].iter().all(|v| v.fract() == 0.0);
                Ok((0..count)
                    .map(|i| {
                        let v = min + i as f64 * step;
                        if integral {
                            Value::from(v as i64)
                        } else {
                            // strip representation noise such as 0.30000000000000004
                            Value::from((v * 1e9).round() / 1e9)
                        }
                    })
                    .collect())
            }
        }
    }
}

/// Named dimensions, sampled in name order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchSpace {
    pub dimensions: BTreeMap<String, Dimension>,
}

pub type TrialConfig = BTreeMap<String, Value>;

impl SearchSpace {
    pub fn from_json(text: &str) -> Result<Self> {
        let space: SearchSpace = serde_json::from_str(text).map_err(|e| Error::Config(format!("search space: {e}")))?;
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.is_empty() {
            return Err(Error::Config("search space has no dimensions".into()));
        }
        for (name, d) in &self.dimensions {
            d.values()
                .map_err(|e| Error::Config(format!("dimension {name}: {e}")))?;
        }
        Ok(())
    }

    /// Uniform draw from every dimension's grid.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<TrialConfig> {
        self.dimensions
            .iter()
            .map(|(name, d)| {
                let v = d.values()?;
                Ok((name.clone(), v[rng.gen_range(0..v.len())].clone()))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub n: usize,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bracket {
    pub s: usize,
    pub rounds: Vec<Round>,
}

impl Bracket {
    /// Epochs consumed when survivors resume from their previous round.
    pub fn epoch_budget(&self) -> usize {
        let mut prev = 0;
        self.rounds
            .iter()
            .map(|r| {
                let used = r.n * (r.epochs - prev);
                prev = r.epochs;
                used
            })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BracketPlan {
    pub max_epochs: usize,
    pub eta: usize,
    pub s_max: usize,
    /// Most exploratory bracket first.
    pub brackets: Vec<Bracket>,
}

pub fn plan_brackets(max_epochs: usize, eta: usize) -> Result<BracketPlan> {
    if eta < 2 || max_epochs < eta {
        return Err(Error::Config(format!(
            "hyperband needs R >= eta >= 2, got R={max_epochs} eta={eta}"
        )));
    }
    let mut s_max = 0;
    while eta.pow(s_max as u32 + 1) <= max_epochs {
        s_max += 1;
    }
    let brackets = (0..=s_max)
        .rev()
        .map(|s| {
            let pow = eta.pow(s as u32);
            let mut n = ((s_max + 1) * pow).div_ceil(s + 1);
            let rounds = (0..=s)
                .map(|i| {
                    let r = Round {
                        n,
                        epochs: (max_epochs / eta.pow((s - i) as u32)).max(1),
                    };
                    n /= eta;
                    r
                })
                .collect();
            Bracket { s, rounds }
        })
        .collect();
    Ok(BracketPlan {
        max_epochs,
        eta,
        s_max,
        brackets,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub id: usize,
    pub bracket: usize,
    pub config: TrialConfig,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub objective: f64,
    /// Epochs actually trained by this call.
    pub epochs_trained: usize,
}

/// Trains trials on behalf of the tuner.
pub trait TrialRunner {
    /// Brings `trial` to `epochs` total epochs (resuming if it was trained
    /// before) and returns the validation objective.
    fn run(&mut self, trial: &TrialSpec, epochs: usize) -> Result<TrialOutcome>;

    /// Called once a trial is eliminated, so cached state can be dropped.
    fn release(&mut self, _trial: &TrialSpec) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialStatus {
    Ok,
    Failed,
}

/// One ledger line: a trial's result after one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRecord {
    pub trial: usize,
    pub bracket: usize,
    pub round: usize,
    pub config: TrialConfig,
    pub seed: u64,
    pub epochs: usize,
    pub epochs_trained: usize,
    pub objective: Option<f64>,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub bracket: usize,
    pub config: TrialConfig,
    pub seed: u64,
    pub epochs_used: usize,
    pub objective: Option<f64>,
    pub status: TrialStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperbandReport {
    pub plan: BracketPlan,
    /// Best first; failed trials last.
    pub ranking: Vec<TrialResult>,
    /// Epochs consumed per bracket, in plan order.
    pub bracket_epochs: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Hyperband {
    pub space: SearchSpace,
    pub max_epochs: usize,
    pub eta: usize,
    pub seed: u64,
    pub ledger: Option<PathBuf>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn read_ledger(path: &Path) -> Result<HashMap<(usize, usize), TrialRecord>> {
    let mut out = HashMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrialRecord =
            serde_json::from_str(&line).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))?;
        out.insert((rec.trial, rec.round), rec);
    }
    Ok(out)
}

impl Hyperband {
    pub fn run(&self, runner: &mut dyn TrialRunner) -> Result<HyperbandReport> {
        self.space.validate()?;
        let plan = plan_brackets(self.max_epochs, self.eta)?;
        let done = match &self.ledger {
            Some(p) => read_ledger(p)?,
            None => HashMap::new(),
        };
        if !done.is_empty() {
            log::info!("resuming from {} ledger records", done.len());
        }
        let mut ledger = match &self.ledger {
            Some(p) => Some(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| Error::io(p, e))?,
            ),
            None => None,
        };
        let mut sampler = stream_rng(self.seed, 0);
        let mut next_id = 0;
        let mut results: Vec<TrialResult> = Vec::new();
        let mut tie_keys: HashMap<usize, u64> = HashMap::new();
        let mut bracket_epochs = Vec::with_capacity(plan.brackets.len());
        for (bi, bracket) in plan.brackets.iter().enumerate() {
            let mut alive: Vec<TrialSpec> = (0..bracket.rounds[0].n)
                .map(|_| {
                    let id = next_id;
                    next_id += 1;
                    let mut keys = stream_rng(self.seed, 1 + id as u64);
                    tie_keys.insert(id, keys.gen());
                    Ok(TrialSpec {
                        id,
                        bracket: bi,
                        config: self.space.sample(&mut sampler)?,
                        seed: keys.gen(),
                    })
                })
                .collect::<Result<_>>()?;
            let mut used = 0;
            for (ri, round) in bracket.rounds.iter().enumerate() {
                let mut scored = Vec::with_capacity(alive.len());
                for trial in &alive {
                    let rec = match done.get(&(trial.id, ri)) {
                        Some(rec) => {
                            if rec.config != trial.config || rec.seed != trial.seed {
                                return Err(Error::Config(format!(
                                    "ledger record for trial {} does not match this search (different seed or space?)",
                                    trial.id
                                )));
                            }
                            rec.clone()
                        }
                        None => {
                            let rec = self.run_trial(runner, trial, ri, round.epochs);
                            if let Some(f) = ledger.as_mut() {
                                let path = self.ledger.as_deref().expect("ledger path");
                                let line = serde_json::to_string(&rec)?;
                                writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
                                f.flush().map_err(|e| Error::io(path, e))?;
                            }
                            rec
                        }
                    };
                    used += rec.epochs_trained;
                    scored.push((trial.clone(), rec));
                }
                scored.sort_by(|(ta, ra), (tb, rb)| {
                    rank_key(ra.objective)
                        .total_cmp(&rank_key(rb.objective))
                        .then(tie_keys[&ta.id].cmp(&tie_keys[&tb.id]))
                });
                let keep = if ri + 1 < bracket.rounds.len() {
                    bracket.rounds[ri + 1].n
                } else {
                    0
                };
                for (i, (trial, rec)) in scored.iter().enumerate() {
                    if i >= keep || rec.status == TrialStatus::Failed {
                        results.push(TrialResult {
                            trial: trial.id,
                            bracket: bi,
                            config: trial.config.clone(),
                            seed: trial.seed,
                            epochs_used: rec.epochs,
                            objective: rec.objective,
                            status: rec.status,
                        });
                        runner.release(trial);
                    }
                }
                alive = scored
                    .into_iter()
                    .take(keep)
                    .filter(|(_, r)| r.status == TrialStatus::Ok)
                    .map(|(t, _)| t)
                    .collect();
            }
            log::info!("bracket s={} consumed {used} epochs", bracket.s);
            bracket_epochs.push(used);
        }
        results.sort_by(|a, b| {
            rank_key(a.objective)
                .total_cmp(&rank_key(b.objective))
                .then(tie_keys[&a.trial].cmp(&tie_keys[&b.trial]))
        });
        Ok(HyperbandReport {
            plan,
            ranking: results,
            bracket_epochs,
        })
    }

    fn run_trial(&self, runner: &mut dyn TrialRunner, trial: &TrialSpec, round: usize, epochs: usize) -> TrialRecord {
        let outcome = runner.run(trial, epochs);
        let (objective, epochs_trained, status, error) = match outcome {
            Ok(o) if o.objective.is_finite() => (Some(o.objective), o.epochs_trained, TrialStatus::Ok, None),
            Ok(o) => (
                None,
                o.epochs_trained,
                TrialStatus::Failed,
                Some(format!("non-finite objective {}", o.objective)),
            ),
            Err(e) => {
                log::warn!("trial {} failed: {e}", trial.id);
                (None, 0, TrialStatus::Failed, Some(e.to_string()))
            }
        };
        TrialRecord {
            trial: trial.id,
            bracket: trial.bracket,
            round,
            config: trial.config.clone(),
            seed: trial.seed,
            epochs,
            epochs_trained,
            objective,
            status,
            error,
        }
    }
}

fn rank_key(objective: Option<f64>) -> f64 {
    objective.unwrap_or(f64::INFINITY)
}
