//! Label-smoothed token cross-entropy, its sequence mean, the multi-task sum
//! and the analytic gradient with a finite-difference checker.
//!
//! Smoothing spreads `epsilon` uniformly over all `V` classes, target
//! included: `q_v = (1 - epsilon) * [v == target] + epsilon / V`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smoothing used for large-scale pretraining.
pub const PRETRAIN_EPSILON: f64 = 0.2;
/// Smoothing used when finetuning on the seen split.
pub const FINETUNE_EPSILON: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("target {target} out of range for vocabulary of {vocab}")]
    IndexOutOfRange { target: usize, vocab: usize },
    #[error("epsilon {0} outside [0, 1)")]
    InvalidEpsilon(f64),
    #[error("{targets} targets for {rows} logit rows")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("logits must be K x V with K >= 1, V >= 2 and finite entries")]
    InvalidShape,
}

/// Row-major `K x V` score table, one row per target position.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLogits {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TokenLogits {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LossError> {
        if rows == 0 || cols < 2 || data.len() != rows * cols || data.iter().any(|x| !x.is_finite())
        {
            return Err(LossError::InvalidShape);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LossError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(LossError::InvalidShape);
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Numerically stable `log(sum(exp(row)))`.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|x| x - lse).collect()
}

fn check(v: usize, target: usize, epsilon: f64) -> Result<(), LossError> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(LossError::InvalidEpsilon(epsilon));
    }
    if target >= v {
        return Err(LossError::IndexOutOfRange { target, vocab: v });
    }
    Ok(())
}

#[inline]
fn smoothed_target(v: usize, target: usize, epsilon: f64, idx: usize) -> f64 {
    let base = epsilon / v as f64;
    if idx == target {
        (1.0 - epsilon) + base
    } else {
        base
    }
}

/// Row max and `ln sum exp(row - max)`.
fn centered_lse(row: &[f64]) -> (f64, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (max, row.iter().map(|x| (x - max).exp()).sum::<f64>().ln())
}

/// `-sum_v q_v log softmax(row)_v`, evaluated as
/// `ln S - (1 - epsilon) (x_t - m) - epsilon / V * sum_v (x_v - m)` on the
/// max-centered row.
pub fn label_smoothed_ce(row: &[f64], target: usize, epsilon: f64) -> Result<f64, LossError> {
    check(row.len(), target, epsilon)?;
    let (max, ln_s) = centered_lse(row);
    let spread: f64 = row.iter().map(|x| x - max).sum();
    let mix = (1.0 - epsilon) * (row[target] - max) + (epsilon / row.len() as f64) * spread;
    Ok(ln_s - mix)
}

/// Plain (unsmoothed) cross-entropy with the same arithmetic.
pub fn cross_entropy(row: &[f64], target: usize) -> Result<f64, LossError> {
    check(row.len(), target, 0.0)?;
    let (max, ln_s) = centered_lse(row);
    Ok(ln_s - (row[target] - max))
}

fn check_targets(logits: &TokenLogits, targets: &[usize]) -> Result<(), LossError> {
    if targets.len() != logits.rows() {
        return Err(LossError::LengthMismatch {
            rows: logits.rows(),
            targets: targets.len(),
        });
    }
    Ok(())
}

/// Mean of the per-token smoothed losses over the `K` target positions.
pub fn sequence_loss(
    logits: &TokenLogits,
    targets: &[usize],
    epsilon: f64,
) -> Result<f64, LossError> {
    check_targets(logits, targets)?;
    let mut total = 0.0;
    for (k, &t) in targets.iter().enumerate() {
        total += label_smoothed_ce(logits.row(k), t, epsilon)?;
    }
    Ok(total / logits.rows() as f64)
}

/// Gradient of [`sequence_loss`] w.r.t. every logit: `(softmax(row) - q) / K`.
pub fn sequence_loss_grad(
    logits: &TokenLogits,
    targets: &[usize],
    epsilon: f64,
) -> Result<TokenLogits, LossError> {
    check_targets(logits, targets)?;
    let k_len = logits.rows() as f64;
    let v = logits.cols();
    let mut grad = Vec::with_capacity(logits.as_slice().len());
    for (k, &t) in targets.iter().enumerate() {
        check(v, t, epsilon)?;
        let lp = log_softmax(logits.row(k));
        for (i, l) in lp.iter().enumerate() {
            grad.push((l.exp() - smoothed_target(v, t, epsilon, i)) / k_len);
        }
    }
    Ok(TokenLogits {
        rows: logits.rows(),
        cols: v,
        data: grad,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub entity: f64,
    pub rationale: f64,
    pub qa: f64,
    pub total: f64,
}

/// Unweighted sum of the three task losses.
pub fn multitask_loss(entity: f64, rationale: f64, qa: f64) -> LossBreakdown {
    LossBreakdown {
        entity,
        rationale,
        qa,
        total: entity + rationale + qa,
    }
}

/// Relative error with a floor on the denominator so entries whose true
/// gradient is ~0 are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Max relative error between the analytic gradient and central finite
/// differences of [`sequence_loss`] with the given step.
pub fn grad_check(
    logits: &TokenLogits,
    targets: &[usize],
    epsilon: f64,
    step: f64,
) -> Result<f64, LossError> {
    let analytic = sequence_loss_grad(logits, targets, epsilon)?;
    let k_len = logits.rows() as f64;
    let v = logits.cols();
    let mut worst = 0.0f64;
    // A logit only affects its own row's term of the mean, so difference that
    // term alone; the other rows would add rounding noise and nothing else.
    for (k, &t) in targets.iter().enumerate() {
        let mut row = logits.row(k).to_vec();
        for i in 0..v {
            let orig = row[i];
            let (hi, lo) = (orig + step, orig - step);
            row[i] = hi;
            let up = label_smoothed_ce(&row, t, epsilon)?;
            row[i] = lo;
            let down = label_smoothed_ce(&row, t, epsilon)?;
            row[i] = orig;
            // Divide by the step actually taken after rounding.
            let numeric = (up - down) / (hi - lo) / k_len;
            worst = worst.max(relative_error(analytic.data[k * v + i], numeric));
        }
    }
    Ok(worst)
}

/// Logits uniform in `[-scale, scale]` and uniform targets.
pub fn random_instance<R: rand::Rng>(
    rng: &mut R,
    k: usize,
    v: usize,
    scale: f64,
) -> (TokenLogits, Vec<usize>) {
    let data = (0..k * v).map(|_| rng.gen_range(-scale..=scale)).collect();
    let targets = (0..k).map(|_| rng.gen_range(0..v)).collect();
    (
        TokenLogits {
            rows: k,
            cols: v,
            data,
        },
        targets,
    )
}

/// Worst [`grad_check`] error over `instances` seeded random `k` x `v`
/// problems.
pub fn random_grad_check(
    seed: u64,
    instances: usize,
    k: usize,
    v: usize,
    epsilon: f64,
    step: f64,
) -> Result<f64, LossError> {
    use rand::SeedableRng;
    if k == 0 || v == 0 {
        return Err(LossError::InvalidShape);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let (logits, targets) = random_instance(&mut rng, k, v, 3.0);
        worst = worst.max(grad_check(&logits, &targets, epsilon, step)?);
    }
    Ok(worst)
}
