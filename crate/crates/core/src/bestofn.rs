//! Best-of-N selection and oracle-judged win rates.
//!
//! For every evaluation prompt, a seeded sampler stands in for the base
//! policy: it draws candidate responses and one independent baseline
//! response. The reward model picks the best of the first `n` candidates and
//! the oracle judges the pick against the baseline.
//!
//! Prompt `p` uses three disjoint ChaCha8 streams of `candidate_seed`
//! (prompt, candidates, baseline), so results do not depend on evaluation
//! order and the baseline draw does not change with `n_values`. Candidate
//! sets for different `n` are prefixes of the same candidate stream.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{normal_vector, Oracle};
use crate::error::{Error, Result};
use crate::model::{FeatureVector, RewardNet};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BonConfig {
    pub n_values: Vec<usize>,
    pub n_prompts: usize,
    pub candidate_seed: u64,
    pub tie_epsilon: f64,
    /// Standard deviation of sampled response features.
    pub candidate_scale: f64,
}

impl Default for BonConfig {
    fn default() -> Self {
        Self {
            n_values: vec![2, 4, 8, 16, 32, 64, 128, 256],
            n_prompts: 1000,
            candidate_seed: 0,
            tie_epsilon: 0.0,
            candidate_scale: 1.0,
        }
    }
}

impl BonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_values.is_empty() || self.n_values.contains(&0) {
            return Err(Error::InvalidConfig(
                "n_values must be non-empty with every n >= 1".into(),
            ));
        }
        if self.n_prompts == 0 {
            return Err(Error::InvalidConfig("n_prompts must be >= 1".into()));
        }
        if !(self.tie_epsilon.is_finite() && self.tie_epsilon >= 0.0) {
            return Err(Error::InvalidConfig(
                "tie_epsilon must be finite and >= 0".into(),
            ));
        }
        if !(self.candidate_scale.is_finite() && self.candidate_scale > 0.0) {
            return Err(Error::InvalidConfig(
                "candidate_scale must be finite and > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonRecord {
    pub n: usize,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    /// `(wins + ties / 2) / n_prompts`
    pub win_rate: f64,
}

/// Index of the highest-scoring candidate; ties go to the lowest index.
pub fn select_best(
    net: &RewardNet,
    prompt: &FeatureVector,
    candidates: &[FeatureVector],
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::InvalidData("no candidates to select from".into()));
    }
    let scores = candidates
        .iter()
        .map(|c| net.forward(prompt, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmax_prefix(&scores, scores.len()))
}

fn argmax_prefix(scores: &[f64], n: usize) -> usize {
    let mut best = 0;
    for (i, &s) in scores[..n].iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

const STREAM_PROMPT: u64 = 0;
const STREAM_CANDIDATES: u64 = 1;
const STREAM_BASELINE: u64 = 2;

pub fn evaluate_bon(net: &RewardNet, oracle: &Oracle, cfg: &BonConfig) -> Result<Vec<BonRecord>> {
    cfg.validate()?;
    let truth = oracle.net();
    if net.d_prompt() != truth.d_prompt() {
        return Err(Error::Shape {
            context: "reward model vs oracle prompt dimension",
            expected: truth.d_prompt(),
            got: net.d_prompt(),
        });
    }
    if net.d_response() != truth.d_response() {
        return Err(Error::Shape {
            context: "reward model vs oracle response dimension",
            expected: truth.d_response(),
            got: net.d_response(),
        });
    }
    let max_n = *cfg.n_values.iter().max().unwrap();
    let mut records: Vec<BonRecord> = cfg
        .n_values
        .iter()
        .map(|&n| BonRecord {
            n,
            wins: 0,
            ties: 0,
            losses: 0,
            win_rate: 0.0,
        })
        .collect();

    for p in 0..cfg.n_prompts as u64 {
        let stream = |kind| stream_rng(cfg.candidate_seed, 3 * p + kind);
        let prompt = normal_vector(&mut stream(STREAM_PROMPT), truth.d_prompt(), 1.0);
        let mut cand_rng = stream(STREAM_CANDIDATES);
        let candidates: Vec<FeatureVector> = (0..max_n)
            .map(|_| normal_vector(&mut cand_rng, truth.d_response(), cfg.candidate_scale))
            .collect();
        let baseline = normal_vector(
            &mut stream(STREAM_BASELINE),
            truth.d_response(),
            cfg.candidate_scale,
        );

        let scores = candidates
            .iter()
            .map(|c| net.forward(&prompt, c))
            .collect::<Result<Vec<_>>>()?;
        let baseline_truth = truth.forward(&prompt, &baseline)?;
        for rec in &mut records {
            let pick = argmax_prefix(&scores, rec.n);
            let diff = truth.forward(&prompt, &candidates[pick])? - baseline_truth;
            if diff.abs() <= cfg.tie_epsilon {
                rec.ties += 1;
            } else if diff > 0.0 {
                rec.wins += 1;
            } else {
                rec.losses += 1;
            }
        }
    }
    for rec in &mut records {
        rec.win_rate = (rec.wins as f64 + 0.5 * rec.ties as f64) / cfg.n_prompts as f64;
    }
    Ok(records)
}

/// CSV with columns `n,wins,ties,losses,win_rate`.
pub fn write_bon_csv(path: &Path, records: &[BonRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "n,wins,ties,losses,win_rate").map_err(io)?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.n, r.wins, r.ties, r.losses, r.win_rate
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
