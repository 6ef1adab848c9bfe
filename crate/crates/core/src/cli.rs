//! Config-driven experiment commands: `gen → train → eval → analyze → bon`.
//!
//! Every command resolves its configuration the same way: start from the
//! named preset, deep-merge the JSON config file over it, then apply
//! `--seed` / `--out`. The resolved config is validated and written next to
//! the outputs as `config.<command>.json`.
//!
//! Files in the output directory:
//!
//! | file                   | written by |
//! |------------------------|------------|
//! | `train.jsonl`, `test.jsonl`, `oracle.json` | `gen` |
//! | `model.json`, `history.csv`, `metrics.json` | `train` |
//! | `eval_metrics.json`    | `eval`     |
//! | `stats.json`, `hist.csv` | `analyze` |
//! | `bon.csv`              | `bon`      |

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analytics::{
    accuracy_of_margins, compute_margins, default_histogram, histogram, margin_stats, MarginStats,
    DEFAULT_BINS,
};
use crate::bestofn::{evaluate_bon, write_bon_csv, BonConfig};
use crate::data::{
    gen_synthetic, load_jsonl_dims, write_jsonl, Oracle, PreferenceExample, SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::model::{init_net, Activation, RewardNet};
use crate::training::{train_with_test, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Small-MLP defaults that the test suite exercises.
    Desk,
    /// Large-model hyperparameters (lr 9e-6, batch 128, one epoch), kept for reference.
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_widths: vec![64],
            activation: Activation::Tanh,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub bins: usize,
    /// Histogram range; `mean ± 4·std` of the margins when either end is unset.
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            lo: None,
            hi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub out_dir: PathBuf,
    pub synthetic: SyntheticConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub bon: BonConfig,
    pub analysis: AnalysisConfig,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let train = match preset {
            Preset::Desk => TrainConfig::desk(),
            Preset::Paper => TrainConfig::paper(),
        };
        Self {
            preset,
            out_dir: PathBuf::from("runs").join(match preset {
                Preset::Desk => "desk",
                Preset::Paper => "paper",
            }),
            synthetic: SyntheticConfig::default(),
            model: ModelConfig::default(),
            train,
            bon: BonConfig {
                n_prompts: 10_000,
                ..BonConfig::default()
            },
            analysis: AnalysisConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.train.validate()?;
        self.bon.validate()?;
        if self.model.hidden_widths.contains(&0) {
            return Err(Error::InvalidConfig(
                "model hidden widths must be >= 1".into(),
            ));
        }
        if self.analysis.bins == 0 {
            return Err(Error::InvalidConfig("analysis.bins must be >= 1".into()));
        }
        Ok(())
    }

    /// Sets every seed in the experiment.
    pub fn set_seed(&mut self, seed: u64) {
        self.synthetic.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self.bon.candidate_seed = seed;
    }

    pub fn train_path(&self) -> PathBuf {
        self.out_dir.join("train.jsonl")
    }

    pub fn test_path(&self) -> PathBuf {
        self.out_dir.join("test.jsonl")
    }

    pub fn oracle_path(&self) -> PathBuf {
        self.out_dir.join("oracle.json")
    }

    pub fn model_path(&self) -> PathBuf {
        self.out_dir.join("model.json")
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Resolves preset, config file and overrides into a validated config.
pub fn resolve_config(
    config: Option<&Path>,
    preset: Option<Preset>,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<ExperimentConfig> {
    let file: Value = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?
        }
        None => Value::Object(Default::default()),
    };
    let preset = match preset {
        Some(p) => p,
        None => match file.get("preset") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::InvalidConfig(format!("preset: {e}")))?,
            None => Preset::Desk,
        },
    };
    let mut merged = serde_json::to_value(ExperimentConfig::preset(preset))?;
    merge(&mut merged, file);
    merged["preset"] = serde_json::to_value(preset)?;
    let mut cfg: ExperimentConfig =
        serde_json::from_value(merged).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    if let Some(seed) = seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = out {
        cfg.out_dir = out.to_path_buf();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a checkpoint: binary when the extension is `.bin`, JSON otherwise.
pub fn load_checkpoint(path: &Path) -> Result<RewardNet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "bin") {
        RewardNet::from_bytes(&bytes)
    } else {
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

pub fn save_checkpoint(path: &Path, net: &RewardNet) -> Result<()> {
    let bytes = if path.extension().is_some_and(|e| e == "bin") {
        net.to_bytes()
    } else {
        let mut b = serde_json::to_vec(net)?;
        b.push(b'\n');
        b
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn prepare_out_dir(cfg: &ExperimentConfig, command: &str, args: Value) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let record = serde_json::json!({ "command": command, "args": args, "config": cfg });
    write_json(&cfg.out_dir.join(format!("config.{command}.json")), &record)
}

fn load_split(cfg: &ExperimentConfig, path: &Path) -> Result<Vec<PreferenceExample>> {
    load_jsonl_dims(path, cfg.synthetic.d_prompt, cfg.synthetic.d_response)
}

#[derive(Debug, Clone, Serialize)]
pub struct GenSummary {
    pub n_train: usize,
    pub n_test: usize,
    pub train_flip_fraction: f64,
    pub train_category_counts: [usize; 4],
}

pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<GenSummary> {
    prepare_out_dir(cfg, "gen", Value::Null)?;
    let data = gen_synthetic(&cfg.synthetic)?;
    write_jsonl(&cfg.train_path(), &data.train)?;
    write_jsonl(&cfg.test_path(), &data.test)?;
    save_checkpoint(&cfg.oracle_path(), data.oracle.net())?;
    let flipped = data
        .train
        .iter()
        .filter(|e| e.true_margin.is_some_and(|m| m < 0.0))
        .count();
    let mut counts = [0; 4];
    for e in &data.train {
        if let Some(c) = e.margin_category {
            counts[c.value() as usize] += 1;
        }
    }
    Ok(GenSummary {
        n_train: data.train.len(),
        n_test: data.test.len(),
        train_flip_fraction: flipped as f64 / data.train.len() as f64,
        train_category_counts: counts,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub loss: String,
    pub steps: usize,
    pub final_batch_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub test_margin_stats: Option<MarginStats>,
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainMetrics> {
    prepare_out_dir(cfg, "train", Value::Null)?;
    let train = load_split(cfg, &cfg.train_path())?;
    let test = load_split(cfg, &cfg.test_path())?;
    let net = init_net(
        cfg.synthetic.d_prompt,
        cfg.synthetic.d_response,
        &cfg.model.hidden_widths,
        cfg.model.activation,
        cfg.model.seed,
    )?;
    let (net, history) = train_with_test(&train, Some(&test), net, &cfg.train)?;
    save_checkpoint(&cfg.model_path(), &net)?;
    history.write_csv(&cfg.out_dir.join("history.csv"))?;
    let metrics = TrainMetrics {
        loss: cfg.train.loss.kind.to_string(),
        steps: history.steps.len(),
        final_batch_loss: history.steps.last().map_or(f64::NAN, |s| s.loss),
        train_accuracy: history.final_train_accuracy,
        test_accuracy: history.final_test_accuracy.unwrap_or(f64::NAN),
        test_margin_stats: margin_stats(&compute_margins(&net, &test)?).ok(),
    };
    write_json(&cfg.out_dir.join("metrics.json"), &metrics)?;
    Ok(metrics)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n: usize,
    pub accuracy: f64,
    pub ties: usize,
    pub tie_rule: String,
    pub margin_stats: Option<MarginStats>,
    pub margin_stats_error: Option<String>,
}

pub const TIE_RULE: &str = "pairs with margin exactly 0 count as incorrect";

pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<EvalMetrics> {
    prepare_out_dir(cfg, "eval", serde_json::json!({ "checkpoint": checkpoint }))?;
    let net = load_checkpoint(checkpoint)?;
    let test = load_split(cfg, &cfg.test_path())?;
    let margins = compute_margins(&net, &test)?;
    let stats = margin_stats(&margins);
    let metrics = EvalMetrics {
        n: margins.len(),
        accuracy: accuracy_of_margins(&margins),
        ties: margins.iter().filter(|&&m| m == 0.0).count(),
        tie_rule: TIE_RULE.to_string(),
        margin_stats_error: stats.as_ref().err().map(ToString::to_string),
        margin_stats: stats.ok(),
    };
    write_json(&cfg.out_dir.join("eval_metrics.json"), &metrics)?;
    Ok(metrics)
}

pub fn cmd_analyze(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    dataset: &Path,
    bins: Option<usize>,
) -> Result<MarginStats> {
    prepare_out_dir(
        cfg,
        "analyze",
        serde_json::json!({ "checkpoint": checkpoint, "dataset": dataset, "bins": bins }),
    )?;
    let net = load_checkpoint(checkpoint)?;
    let examples = load_split(cfg, dataset)?;
    let margins = compute_margins(&net, &examples)?;
    let stats = margin_stats(&margins)?;
    let bins = bins.unwrap_or(cfg.analysis.bins);
    let hist = match (cfg.analysis.lo, cfg.analysis.hi) {
        (Some(lo), Some(hi)) => histogram(&margins, bins, lo, hi)?,
        _ if bins == DEFAULT_BINS => default_histogram(&margins, &stats)?,
        _ => histogram(
            &margins,
            bins,
            stats.mean - 4.0 * stats.std,
            stats.mean + 4.0 * stats.std,
        )?,
    };
    write_json(&cfg.out_dir.join("stats.json"), &stats)?;
    hist.write_csv(&cfg.out_dir.join("hist.csv"))?;
    Ok(stats)
}

pub fn cmd_bon(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    oracle: &Path,
) -> Result<Vec<crate::bestofn::BonRecord>> {
    prepare_out_dir(
        cfg,
        "bon",
        serde_json::json!({ "checkpoint": checkpoint, "oracle": oracle }),
    )?;
    let net = load_checkpoint(checkpoint)?;
    let oracle = Oracle::new(load_checkpoint(oracle)?);
    let records = evaluate_bon(&net, &oracle, &cfg.bon)?;
    write_bon_csv(&cfg.out_dir.join("bon.csv"), &records)?;
    Ok(records)
}

#[derive(Debug, Parser)]
#[command(
    name = "margin-rm",
    version,
    about = "Margin-aware reward model experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON experiment config, merged over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Overrides every seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        resolve_config(
            self.config.as_deref(),
            self.preset,
            self.seed,
            self.out.as_deref(),
        )
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train/test splits and the oracle checkpoint.
    Gen(Common),
    /// Train a reward model on the generated splits.
    Train(Common),
    /// Test-set accuracy and margin statistics of a checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/model.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Margin statistics and histogram CSV.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<out>/test.jsonl`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Best-of-N win rates judged by the oracle.
    Bon {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<out>/oracle.json`.
        #[arg(long)]
        oracle: Option<PathBuf>,
    },
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(common) => {
            let cfg = common.resolve()?;
            print_json(&cmd_gen(&cfg)?)
        }
        Command::Train(common) => {
            let cfg = common.resolve()?;
            print_json(&cmd_train(&cfg)?)
        }
        Command::Eval { common, checkpoint } => {
            let cfg = common.resolve()?;
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.model_path());
            print_json(&cmd_eval(&cfg, &checkpoint)?)
        }
        Command::Analyze {
            common,
            checkpoint,
            dataset,
            bins,
        } => {
            let cfg = common.resolve()?;
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.model_path());
            let dataset = dataset.unwrap_or_else(|| cfg.test_path());
            print_json(&cmd_analyze(&cfg, &checkpoint, &dataset, bins)?)
        }
        Command::Bon {
            common,
            checkpoint,
            oracle,
        } => {
            let cfg = common.resolve()?;
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.model_path());
            let oracle = oracle.unwrap_or_else(|| cfg.oracle_path());
            let records = cmd_bon(&cfg, &checkpoint, &oracle)?;
            println!("n,wins,ties,losses,win_rate");
            for r in records {
                println!(
                    "{},{},{},{},{:.4}",
                    r.n, r.wins, r.ties, r.losses, r.win_rate
                );
            }
            Ok(())
        }
    }
}

/// Process entry point; returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
