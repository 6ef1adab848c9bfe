//! Pairwise ranking objectives over per-pair reward margins.
//!
//! Every objective is a batch mean of `softplus(-z_i) = -ln σ(z_i)` where
//! `z_i` is the margin `Δ_i = r(x, y_c) − r(x, y_r)` shifted by a target:
//!
//! | kind                | `z_i`                                        |
//! |---------------------|----------------------------------------------|
//! | `Plain`             | `Δ_i`                                        |
//! | `FixedMargin`       | `Δ_i − m_i`                                  |
//! | `BatchAdaptive`     | `Δ_i − μ_B`                                  |
//! | `ThresholdFiltered` | `Δ_i − μ_B` if `Δ_i − μ_B < 0`, else `Δ_i`   |
//!
//! `μ_B` is the mean margin of the batch, computed from the raw margins before
//! any branch selection. Per-pair terms are summed left to right so results
//! are bitwise reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Plain,
    FixedMargin,
    BatchAdaptive,
    ThresholdFiltered,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Plain => "plain",
            LossKind::FixedMargin => "fixed_margin",
            LossKind::BatchAdaptive => "batch_adaptive",
            LossKind::ThresholdFiltered => "threshold_filtered",
        })
    }
}

/// Which objective is active, plus its knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossVariant {
    pub kind: LossKind,
    /// Margin per category step (`FixedMargin` only).
    pub margin_unit: f64,
    /// Treat `μ_B` as a constant when differentiating.
    pub stop_gradient_mu: bool,
}

impl Default for LossVariant {
    fn default() -> Self {
        Self {
            kind: LossKind::Plain,
            margin_unit: 1.0,
            stop_gradient_mu: true,
        }
    }
}

impl LossVariant {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin_unit.is_finite() && self.margin_unit >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "margin_unit must be finite and >= 0, got {}",
                self.margin_unit
            )));
        }
        Ok(())
    }
}

/// Which term a pair contributed to the batch loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    #[serde(rename = "margin_branch")]
    Margin,
    #[serde(rename = "plain_branch")]
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLossReport {
    pub loss: f64,
    pub mu_b: f64,
    pub per_pair_deltas: Vec<f64>,
    pub branch_flags: Vec<Branch>,
}

impl BatchLossReport {
    /// Fraction of pairs that took the margin branch.
    pub fn margin_branch_fraction(&self) -> f64 {
        let n = self
            .branch_flags
            .iter()
            .filter(|b| **b == Branch::Margin)
            .count();
        n as f64 / self.branch_flags.len() as f64
    }
}

/// Logistic function, evaluated without overflow for any finite input.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-ln σ(z) = ln(1 + e^{-z})`, stable for large `|z|`.
pub fn neg_log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `d/dz [-ln σ(z)] = σ(z) − 1`.
fn neg_log_sigmoid_grad(z: f64) -> f64 {
    -sigmoid(-z)
}

/// Bradley-Terry probability that the chosen response is preferred: `σ(Δ)`.
pub fn preference_prob(delta: f64) -> Result<f64> {
    if !delta.is_finite() {
        return Err(Error::Domain(format!("margin must be finite, got {delta}")));
    }
    Ok(sigmoid(delta))
}

fn check_batch(deltas: &[f64]) -> Result<()> {
    if deltas.is_empty() {
        return Err(Error::InvalidBatch("batch is empty".into()));
    }
    if let Some(i) = deltas.iter().position(|d| !d.is_finite()) {
        return Err(Error::Domain(format!("margin {i} is not finite")));
    }
    Ok(())
}

fn check_margins(deltas: &[f64], margins: &[f64]) -> Result<()> {
    if deltas.len() != margins.len() {
        return Err(Error::Shape {
            context: "margins vs batch",
            expected: deltas.len(),
            got: margins.len(),
        });
    }
    if let Some(i) = margins.iter().position(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "margin score {i} must be finite and >= 0, got {}",
            margins[i]
        )));
    }
    Ok(())
}

fn mean_unchecked(deltas: &[f64]) -> f64 {
    // Shifted by the first element: exact for constant batches.
    let first = deltas[0];
    let spread: f64 = deltas.iter().map(|d| d - first).sum();
    first + spread / deltas.len() as f64
}

/// Mean margin of the batch, `μ_B`.
pub fn batch_mean_margin(deltas: &[f64]) -> Result<f64> {
    check_batch(deltas)?;
    Ok(mean_unchecked(deltas))
}

/// Shift applied to each margin, and the branch it belongs to.
fn shifts<'a>(
    kind: LossKind,
    deltas: &'a [f64],
    margins: Option<&'a [f64]>,
    mu: f64,
) -> impl Iterator<Item = (f64, Branch)> + 'a {
    deltas.iter().enumerate().map(move |(i, &d)| match kind {
        LossKind::Plain => (0.0, Branch::Plain),
        LossKind::FixedMargin => (margins.map_or(0.0, |m| m[i]), Branch::Margin),
        LossKind::BatchAdaptive => (mu, Branch::Margin),
        LossKind::ThresholdFiltered => {
            if d - mu < 0.0 {
                (mu, Branch::Margin)
            } else {
                (0.0, Branch::Plain)
            }
        }
    })
}

fn report(kind: LossKind, deltas: &[f64], margins: Option<&[f64]>) -> BatchLossReport {
    let mu = mean_unchecked(deltas);
    let mut sum = 0.0;
    let mut branch_flags = Vec::with_capacity(deltas.len());
    for (&d, (shift, branch)) in deltas.iter().zip(shifts(kind, deltas, margins, mu)) {
        sum += neg_log_sigmoid(d - shift);
        branch_flags.push(branch);
    }
    BatchLossReport {
        loss: sum / deltas.len() as f64,
        mu_b: mu,
        per_pair_deltas: deltas.to_vec(),
        branch_flags,
    }
}

/// Mean of `-ln σ(Δ_i)`.
pub fn plain_loss(deltas: &[f64]) -> Result<BatchLossReport> {
    check_batch(deltas)?;
    Ok(report(LossKind::Plain, deltas, None))
}

/// Mean of `-ln σ(Δ_i − m_i)` with non-negative per-pair margin scores.
pub fn fixed_margin_loss(deltas: &[f64], margins: &[f64]) -> Result<BatchLossReport> {
    check_batch(deltas)?;
    check_margins(deltas, margins)?;
    Ok(report(LossKind::FixedMargin, deltas, Some(margins)))
}

fn expect_kind(cfg: &LossVariant, kind: LossKind) -> Result<()> {
    cfg.validate()?;
    if cfg.kind != kind {
        return Err(Error::InvalidConfig(format!(
            "expected loss kind {kind}, got {}",
            cfg.kind
        )));
    }
    Ok(())
}

/// Mean of `-ln σ(Δ_i − μ_B)`.
pub fn batch_adaptive_loss(deltas: &[f64], cfg: &LossVariant) -> Result<BatchLossReport> {
    expect_kind(cfg, LossKind::BatchAdaptive)?;
    check_batch(deltas)?;
    Ok(report(LossKind::BatchAdaptive, deltas, None))
}

/// Pairs below the batch mean get the `μ_B` target; the rest keep the plain term.
pub fn threshold_filtered_loss(deltas: &[f64], cfg: &LossVariant) -> Result<BatchLossReport> {
    expect_kind(cfg, LossKind::ThresholdFiltered)?;
    check_batch(deltas)?;
    Ok(report(LossKind::ThresholdFiltered, deltas, None))
}

/// Dispatches to the objective named by `cfg.kind`.
///
/// `margins` must be present for `FixedMargin` and is ignored otherwise.
pub fn evaluate(
    cfg: &LossVariant,
    deltas: &[f64],
    margins: Option<&[f64]>,
) -> Result<BatchLossReport> {
    cfg.validate()?;
    match cfg.kind {
        LossKind::Plain => plain_loss(deltas),
        LossKind::FixedMargin => fixed_margin_loss(deltas, require_margins(margins)?),
        LossKind::BatchAdaptive => batch_adaptive_loss(deltas, cfg),
        LossKind::ThresholdFiltered => threshold_filtered_loss(deltas, cfg),
    }
}

fn require_margins(margins: Option<&[f64]>) -> Result<&[f64]> {
    margins.ok_or_else(|| Error::InvalidData("fixed-margin loss needs per-pair margins".into()))
}

/// `∂loss/∂Δ_i` for every pair.
///
/// With `stop_gradient_mu` unset, the dependence of `μ_B` on every margin
/// (`∂μ_B/∂Δ_j = 1/B`) is included; branch selection is treated as locally
/// constant.
pub fn loss_delta_gradient(
    deltas: &[f64],
    margins: Option<&[f64]>,
    cfg: &LossVariant,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_batch(deltas)?;
    if cfg.kind == LossKind::FixedMargin {
        check_margins(deltas, require_margins(margins)?)?;
    }
    let b = deltas.len() as f64;
    let mu = mean_unchecked(deltas);
    let mut grads = Vec::with_capacity(deltas.len());
    let mut through_mu = 0.0;
    for (&d, (shift, branch)) in deltas.iter().zip(shifts(cfg.kind, deltas, margins, mu)) {
        let g = neg_log_sigmoid_grad(d - shift) / b;
        let uses_mu = matches!(
            cfg.kind,
            LossKind::BatchAdaptive | LossKind::ThresholdFiltered
        ) && branch == Branch::Margin;
        if uses_mu {
            through_mu += g;
        }
        grads.push(g);
    }
    if !cfg.stop_gradient_mu && through_mu != 0.0 {
        let correction = through_mu / b;
        for g in &mut grads {
            *g -= correction;
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn cfg(kind: LossKind, stop: bool) -> LossVariant {
        LossVariant {
            kind,
            margin_unit: 1.0,
            stop_gradient_mu: stop,
        }
    }

    // Reference values below were evaluated with 30-digit mpmath.

    #[test]
    fn preference_prob_fixtures() {
        assert_eq!(preference_prob(0.0).unwrap(), 0.5);
        assert!((preference_prob(30.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((preference_prob(1.0).unwrap() - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!(preference_prob(f64::NAN).is_err());
        assert!(preference_prob(f64::INFINITY).is_err());
    }

    #[test]
    fn plain_fixtures() {
        assert!((plain_loss(&[0.0]).unwrap().loss - LN2).abs() < 1e-15);
        assert!((plain_loss(&[0.0, 0.0]).unwrap().loss - LN2).abs() < 1e-15);
        assert!((plain_loss(&[3.0]).unwrap().loss - 0.048_587_351_573_742_06).abs() < 1e-15);
        assert!(matches!(plain_loss(&[]), Err(Error::InvalidBatch(_))));
    }

    #[test]
    fn fixed_margin_fixtures() {
        assert!((fixed_margin_loss(&[1.0], &[1.0]).unwrap().loss - LN2).abs() < 1e-15);
        assert!((fixed_margin_loss(&[0.0], &[0.0]).unwrap().loss - LN2).abs() < 1e-15);
        let l = fixed_margin_loss(&[0.0], &[1.0]).unwrap().loss;
        assert!((l - 1.313_261_687_518_222_8).abs() < 1e-14);
        assert!(matches!(
            fixed_margin_loss(&[0.0, 1.0], &[1.0]),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            fixed_margin_loss(&[0.0], &[-1.0]),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn batch_mean_fixtures() {
        assert_eq!(batch_mean_margin(&[1.0, 3.0]).unwrap(), 2.0);
        assert_eq!(batch_mean_margin(&[0.0]).unwrap(), 0.0);
        assert_eq!(batch_mean_margin(&[-1.0, 2.0, 5.0]).unwrap(), 2.0);
        assert!(batch_mean_margin(&[]).is_err());
    }

    #[test]
    fn batch_adaptive_fixtures() {
        let c = cfg(LossKind::BatchAdaptive, true);
        let r = batch_adaptive_loss(&[2.0, 2.0], &c).unwrap();
        assert_eq!(r.mu_b, 2.0);
        assert!((r.loss - LN2).abs() < 1e-15);
        let r = batch_adaptive_loss(&[1.0, 3.0], &c).unwrap();
        assert!((r.loss - 0.813_261_687_518_222_8).abs() < 1e-14);
        assert!(r.branch_flags.iter().all(|b| *b == Branch::Margin));
        assert!((batch_adaptive_loss(&[5.0], &c).unwrap().loss - LN2).abs() < 1e-15);
        assert!(batch_adaptive_loss(&[], &c).is_err());
        assert!(batch_adaptive_loss(&[1.0], &cfg(LossKind::Plain, true)).is_err());
    }

    #[test]
    fn threshold_fixtures() {
        let c = cfg(LossKind::ThresholdFiltered, true);
        let r = threshold_filtered_loss(&[1.0, 3.0], &c).unwrap();
        assert_eq!(r.mu_b, 2.0);
        assert_eq!(r.branch_flags, vec![Branch::Margin, Branch::Plain]);
        assert!((r.loss - 0.680_924_519_545_982_4).abs() < 1e-14);
        let r = threshold_filtered_loss(&[5.0], &c).unwrap();
        assert_eq!(r.branch_flags, vec![Branch::Plain]);
        assert!((r.loss - 0.006_715_348_489_118_069).abs() < 1e-15);
        assert!(threshold_filtered_loss(&[], &c).is_err());
    }

    #[test]
    fn gradient_fixtures() {
        let g = loss_delta_gradient(&[0.0], None, &cfg(LossKind::Plain, true)).unwrap();
        assert_eq!(g, vec![-0.5]);
        let g =
            loss_delta_gradient(&[2.0], Some(&[2.0]), &cfg(LossKind::FixedMargin, true)).unwrap();
        assert_eq!(g, vec![-0.5]);
        let g = loss_delta_gradient(&[1.0, 3.0], None, &cfg(LossKind::ThresholdFiltered, true))
            .unwrap();
        assert!((g[0] + 0.365_529_289_315_002_44).abs() < 1e-15);
        assert!((g[1] + 0.023_712_936_588_783_39).abs() < 1e-15);
        assert!(loss_delta_gradient(&[1.0], None, &cfg(LossKind::FixedMargin, true)).is_err());
    }

    #[test]
    fn bad_margin_unit_rejected() {
        let mut c = cfg(LossKind::BatchAdaptive, true);
        c.margin_unit = -0.5;
        assert!(batch_adaptive_loss(&[1.0], &c).is_err());
    }

    #[test]
    fn report_serializes_branch_names() {
        let c = cfg(LossKind::ThresholdFiltered, true);
        let r = threshold_filtered_loss(&[1.0, 3.0], &c).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["branch_flags"][0], "margin_branch");
        assert_eq!(json["branch_flags"][1], "plain_branch");
        assert_eq!(json["mu_b"], 2.0);
    }

    /// Loss recomputed directly from the formulas, with `μ_B` and the branch
    /// selection optionally frozen.
    fn oracle_loss(
        kind: LossKind,
        deltas: &[f64],
        margins: &[f64],
        frozen_mu: Option<f64>,
        frozen_branch: &[bool],
    ) -> f64 {
        let n = deltas.len() as f64;
        let mu = frozen_mu.unwrap_or_else(|| deltas.iter().sum::<f64>() / n);
        let term = |z: f64| (1.0 + (-z).exp()).ln();
        deltas
            .iter()
            .enumerate()
            .map(|(i, &d)| match kind {
                LossKind::Plain => term(d),
                LossKind::FixedMargin => term(d - margins[i]),
                LossKind::BatchAdaptive => term(d - mu),
                LossKind::ThresholdFiltered => {
                    if frozen_branch[i] {
                        term(d - mu)
                    } else {
                        term(d)
                    }
                }
            })
            .sum::<f64>()
            / n
    }

    fn deltas_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-4.0f64..4.0, 1..12)
    }

    proptest! {
        #[test]
        fn zero_margins_reduce_to_plain(deltas in deltas_strategy()) {
            let zeros = vec![0.0; deltas.len()];
            let a = fixed_margin_loss(&deltas, &zeros).unwrap().loss;
            let b = plain_loss(&deltas).unwrap().loss;
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }

        #[test]
        fn homogeneous_threshold_equals_plain(c in -20.0f64..20.0, n in 1usize..40) {
            let deltas = vec![c; n];
            let t = threshold_filtered_loss(&deltas, &cfg(LossKind::ThresholdFiltered, true)).unwrap();
            let p = plain_loss(&deltas).unwrap();
            prop_assert_eq!(t.loss.to_bits(), p.loss.to_bits());
            prop_assert!(t.branch_flags.iter().all(|b| *b == Branch::Plain));
        }

        #[test]
        fn margin_monotone(deltas in deltas_strategy(), bump in 0.0f64..3.0, idx in 0usize..12) {
            let margins: Vec<f64> = deltas.iter().map(|d| d.abs() * 0.3).collect();
            let mut bigger = margins.clone();
            let i = idx % deltas.len();
            bigger[i] += bump;
            let a = fixed_margin_loss(&deltas, &margins).unwrap().loss;
            let b = fixed_margin_loss(&deltas, &bigger).unwrap().loss;
            prop_assert!(b >= a);
        }

        #[test]
        fn losses_positive(deltas in deltas_strategy()) {
            for kind in [LossKind::Plain, LossKind::BatchAdaptive, LossKind::ThresholdFiltered] {
                let l = evaluate(&cfg(kind, true), &deltas, None).unwrap().loss;
                prop_assert!(l > 0.0 && l.is_finite());
            }
        }

        #[test]
        fn threshold_dominates_plain_when_mean_nonnegative(deltas in deltas_strategy()) {
            let t = threshold_filtered_loss(&deltas, &cfg(LossKind::ThresholdFiltered, true)).unwrap();
            prop_assume!(t.mu_b >= 0.0);
            let p = plain_loss(&deltas).unwrap();
            prop_assert!(t.loss >= p.loss);
        }

        #[test]
        fn branch_accounting(deltas in deltas_strategy()) {
            let t = threshold_filtered_loss(&deltas, &cfg(LossKind::ThresholdFiltered, true)).unwrap();
            for (d, b) in deltas.iter().zip(&t.branch_flags) {
                prop_assert_eq!(*b == Branch::Margin, *d < t.mu_b);
            }
        }

        #[test]
        fn mean_is_arithmetic_mean(deltas in deltas_strategy()) {
            let mu = batch_mean_margin(&deltas).unwrap();
            let naive = deltas.iter().sum::<f64>() / deltas.len() as f64;
            prop_assert!((mu - naive).abs() <= 1e-12);
        }

        #[test]
        fn gradient_matches_finite_differences(
            deltas in deltas_strategy(),
            stop in any::<bool>(),
            kind_idx in 0usize..4,
        ) {
            let kind = [LossKind::Plain, LossKind::FixedMargin, LossKind::BatchAdaptive, LossKind::ThresholdFiltered][kind_idx];
            let margins: Vec<f64> = deltas.iter().enumerate().map(|(i, _)| (i % 4) as f64).collect();
            let c = cfg(kind, stop);
            let grads = loss_delta_gradient(&deltas, Some(&margins), &c).unwrap();
            let mu0 = deltas.iter().sum::<f64>() / deltas.len() as f64;
            // Stay away from the branch boundary, where the loss has a kink.
            prop_assume!(deltas.iter().all(|d| (d - mu0).abs() > 1e-4));
            let branch: Vec<bool> = deltas.iter().map(|d| d - mu0 < 0.0).collect();
            let frozen = if stop { Some(mu0) } else { None };
            let h = 1e-5;
            for i in 0..deltas.len() {
                let mut up = deltas.clone();
                up[i] += h;
                let mut down = deltas.clone();
                down[i] -= h;
                let numeric = (oracle_loss(kind, &up, &margins, frozen, &branch)
                    - oracle_loss(kind, &down, &margins, frozen, &branch)) / (2.0 * h);
                let err = (grads[i] - numeric).abs() / numeric.abs().max(1.0);
                prop_assert!(err < 1e-8, "pair {}: analytic {} numeric {}", i, grads[i], numeric);
            }
        }
    }

    #[test]
    fn plain_loss_vanishes_for_large_margins() {
        let l = plain_loss(&[40.0, 50.0]).unwrap().loss;
        assert!(l > 0.0 && l < 1e-16);
    }
}
