//! Preference data: synthetic generation against a ground-truth oracle,
//! a hashing-trick text featurizer, and JSONL ingestion/export.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::sigmoid;
use crate::model::{init_net, Activation, FeatureVector, RewardNet};
use crate::rng::stream_rng;

/// Tokens beyond this count are ignored by [`featurize_text`].
pub const MAX_TOKENS: usize = 2048;

pub const FNV_OFFSET_BASIS: u64 = 14_695_981_039_346_656_037;
pub const FNV_PRIME: u64 = 1_099_511_628_211;

/// Graded strength of a preference, weakest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MarginCategory {
    NegligiblyBetter = 0,
    SlightlyBetter = 1,
    MoreEffective = 2,
    DistinctlySuperior = 3,
}

impl MarginCategory {
    pub const ALL: [MarginCategory; 4] = [
        MarginCategory::NegligiblyBetter,
        MarginCategory::SlightlyBetter,
        MarginCategory::MoreEffective,
        MarginCategory::DistinctlySuperior,
    ];

    pub fn value(self) -> u8 {
        self as u8
    }

    pub fn from_value(v: i64) -> Option<Self> {
        usize::try_from(v)
            .ok()
            .and_then(|i| Self::ALL.get(i).copied())
    }

    /// Margin score used by the fixed-margin objective: `value · margin_unit`.
    pub fn margin(self, margin_unit: f64) -> f64 {
        f64::from(self.value()) * margin_unit
    }
}

/// One comparison: a prompt with a chosen and a rejected response.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceExample {
    pub prompt: FeatureVector,
    pub chosen: FeatureVector,
    pub rejected: FeatureVector,
    pub margin_category: Option<MarginCategory>,
    /// `r*(x, y_c) − r*(x, y_r)` under the generating oracle, when known.
    pub true_margin: Option<f64>,
}

impl PreferenceExample {
    pub fn new(
        prompt: FeatureVector,
        chosen: FeatureVector,
        rejected: FeatureVector,
    ) -> Result<Self> {
        if chosen.len() != rejected.len() {
            return Err(Error::Shape {
                context: "chosen vs rejected features",
                expected: chosen.len(),
                got: rejected.len(),
            });
        }
        Ok(Self {
            prompt,
            chosen,
            rejected,
            margin_category: None,
            true_margin: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Label the truly better response, then flip with probability `noise_rate`.
    #[default]
    DeterministicFlip,
    /// Label response `a` as chosen with probability `σ(Δ*)`.
    BradleyTerrySample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub d_prompt: usize,
    pub d_response: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub noise_rate: f64,
    pub label_mode: LabelMode,
    pub seed: u64,
    pub oracle_hidden: Vec<usize>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            d_prompt: 16,
            d_response: 16,
            n_train: 2000,
            n_test: 1000,
            noise_rate: 0.274,
            label_mode: LabelMode::DeterministicFlip,
            seed: 0,
            oracle_hidden: Vec::new(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_prompt == 0 || self.d_response == 0 {
            return Err(Error::InvalidConfig(
                "feature dimensions must be >= 1".into(),
            ));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::InvalidConfig(
                "n_train and n_test must be >= 1".into(),
            ));
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "noise_rate must lie in [0, 0.5), got {}",
                self.noise_rate
            )));
        }
        if self.oracle_hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "oracle hidden widths must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Fixed ground-truth reward function. Never trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Oracle(RewardNet);

impl Oracle {
    pub fn new(net: RewardNet) -> Self {
        Self(net)
    }

    pub fn net(&self) -> &RewardNet {
        &self.0
    }

    pub fn reward(&self, prompt: &FeatureVector, response: &FeatureVector) -> Result<f64> {
        self.0.forward(prompt, response)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train: Vec<PreferenceExample>,
    pub test: Vec<PreferenceExample>,
    pub oracle: Oracle,
}

const STREAM_ORACLE: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_TEST: u64 = 2;

pub(crate) fn normal_vector<R: Rng>(rng: &mut R, dim: usize, scale: f64) -> FeatureVector {
    let values = (0..dim)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    FeatureVector::new(values).expect("normal draws are finite")
}

fn generate_split(
    cfg: &SyntheticConfig,
    oracle: &Oracle,
    n: usize,
    stream: u64,
    noise_rate: f64,
    mode: LabelMode,
) -> Vec<PreferenceExample> {
    let mut rng = stream_rng(cfg.seed, stream);
    (0..n)
        .map(|_| {
            let prompt = normal_vector(&mut rng, cfg.d_prompt, 1.0);
            let a = normal_vector(&mut rng, cfg.d_response, 1.0);
            let b = normal_vector(&mut rng, cfg.d_response, 1.0);
            let u: f64 = rng.random();
            let net = oracle.net();
            let truth = net.forward(&prompt, &a).unwrap() - net.forward(&prompt, &b).unwrap();
            let a_wins = match mode {
                LabelMode::DeterministicFlip => (truth >= 0.0) != (u < noise_rate),
                LabelMode::BradleyTerrySample => u < sigmoid(truth),
            };
            let (chosen, rejected, true_margin) = if a_wins {
                (a, b, truth)
            } else {
                (b, a, -truth)
            };
            PreferenceExample {
                prompt,
                chosen,
                rejected,
                margin_category: None,
                true_margin: Some(true_margin),
            }
        })
        .collect()
}

/// Assigns categories by `|Δ*|` quartile of `train`, and applies the same
/// cut points to `test`.
fn assign_categories(train: &mut [PreferenceExample], test: &mut [PreferenceExample]) {
    let abs = |e: &PreferenceExample| e.true_margin.unwrap_or(0.0).abs();
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.sort_by(|&i, &j| abs(&train[i]).total_cmp(&abs(&train[j])).then(i.cmp(&j)));
    let n = train.len();
    let mut cuts = [f64::INFINITY; 3];
    for (rank, &i) in order.iter().enumerate() {
        let q = (4 * rank / n).min(3);
        train[i].margin_category = Some(MarginCategory::ALL[q]);
        if q > 0 && cuts[q - 1].is_infinite() {
            cuts[q - 1] = abs(&train[i]);
        }
    }
    for e in test {
        let a = abs(e);
        let q = cuts.iter().filter(|&&c| c <= a).count();
        e.margin_category = Some(MarginCategory::ALL[q]);
    }
}

/// Draws an oracle and noisy train / noise-free test preference splits.
///
/// Prompts and the two candidate responses are standard normal. Each split
/// uses its own ChaCha8 stream of `cfg.seed`, so the datasets and oracle are
/// a pure function of the config.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let oracle_seed = stream_rng(cfg.seed, STREAM_ORACLE).next_u64();
    let oracle = Oracle(init_net(
        cfg.d_prompt,
        cfg.d_response,
        &cfg.oracle_hidden,
        Activation::Tanh,
        oracle_seed,
    )?);
    let mut train = generate_split(
        cfg,
        &oracle,
        cfg.n_train,
        STREAM_TRAIN,
        cfg.noise_rate,
        cfg.label_mode,
    );
    let mut test = generate_split(
        cfg,
        &oracle,
        cfg.n_test,
        STREAM_TEST,
        0.0,
        LabelMode::DeterministicFlip,
    );
    assign_categories(&mut train, &mut test);
    Ok(SyntheticData {
        train,
        test,
        oracle,
    })
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Hashing-trick bag of words, L2-normalized.
///
/// Lowercases, splits on whitespace, keeps the first [`MAX_TOKENS`] tokens and
/// counts each into bucket `fnv1a64(token) mod dim`. Empty text maps to the
/// zero vector.
///
/// # Panics
///
/// Panics if `dim` is zero.
pub fn featurize_text(s: &str, dim: usize) -> FeatureVector {
    assert!(dim >= 1, "feature dimension must be >= 1");
    let mut counts = vec![0.0; dim];
    let lower = s.to_lowercase();
    for token in lower.split_whitespace().take(MAX_TOKENS) {
        counts[(fnv1a64(token.as_bytes()) % dim as u64) as usize] += 1.0;
    }
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        for c in &mut counts {
            *c /= norm;
        }
    }
    FeatureVector::new(counts).expect("counts are finite")
}

/// A JSONL field: raw text to featurize, or an explicit feature vector.
#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum Field {
    Text(String),
    Vector(Vec<f64>),
}

#[derive(Debug, Deserialize)]
struct InRecord {
    prompt: Field,
    chosen: Field,
    rejected: Field,
    #[serde(default)]
    margin_category: Option<i64>,
    #[serde(default)]
    true_margin: Option<f64>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    prompt: &'a [f64],
    chosen: &'a [f64],
    rejected: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    margin_category: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    true_margin: Option<f64>,
}

/// Loads pairwise preferences, featurizing every text field at `dim`.
pub fn load_jsonl(path: &Path, dim: usize) -> Result<Vec<PreferenceExample>> {
    load_jsonl_dims(path, dim, dim)
}

/// Loads pairwise preferences with separate prompt and response dimensions.
///
/// Each non-blank line is an object with `prompt`, `chosen` and `rejected`
/// (strings, or numeric arrays of the matching dimension) and an optional
/// integer `margin_category` in `0..=3`. Line order is preserved.
pub fn load_jsonl_dims(
    path: &Path,
    d_prompt: usize,
    d_response: usize,
) -> Result<Vec<PreferenceExample>> {
    if d_prompt == 0 || d_response == 0 {
        return Err(Error::InvalidConfig(
            "feature dimensions must be >= 1".into(),
        ));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let invalid = |message: String| Error::Validation {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let rec: InRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let to_features = |field: Field, dim: usize, name: &str| -> Result<FeatureVector> {
            match field {
                Field::Text(s) => Ok(featurize_text(&s, dim)),
                Field::Vector(v) if v.len() == dim => {
                    FeatureVector::new(v).map_err(|e| invalid(format!("{name}: {e}")))
                }
                Field::Vector(v) => Err(invalid(format!(
                    "{name} has {} features, expected {dim}",
                    v.len()
                ))),
            }
        };
        let margin_category = rec
            .margin_category
            .map(|c| {
                MarginCategory::from_value(c)
                    .ok_or_else(|| invalid(format!("margin_category {c} outside 0..=3")))
            })
            .transpose()?;
        let mut example = PreferenceExample::new(
            to_features(rec.prompt, d_prompt, "prompt")?,
            to_features(rec.chosen, d_response, "chosen")?,
            to_features(rec.rejected, d_response, "rejected")?,
        )?;
        example.margin_category = margin_category;
        example.true_margin = rec.true_margin;
        out.push(example);
    }
    Ok(out)
}

/// Writes examples as JSONL with numeric feature arrays (and the audit
/// `true_margin` field when known).
pub fn write_jsonl(path: &Path, examples: &[PreferenceExample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in examples {
        let rec = OutRecord {
            prompt: e.prompt.as_slice(),
            chosen: e.chosen.as_slice(),
            rejected: e.rejected.as_slice(),
            margin_category: e.margin_category.map(MarginCategory::value),
            true_margin: e.true_margin,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
