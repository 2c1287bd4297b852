//! In-process vertical federated logistic regression.
//!
//! Each batch step follows the message schedule of the protocol:
//!
//! 1. every party computes its partial score `z_m = X_m theta_m` (the active
//!    party adds the bias) and passive parties send theirs to the active party;
//! 2. the active party sums the scores in party order, applies the sigmoid and
//!    the mean binary cross-entropy, and sends `dL/dz = (y_hat - y) / |batch|`
//!    back to every passive party;
//! 3. every party updates its own weights with `X_m^T dL/dz`.
//!
//! Parties never see each other's features or the labels. The model is linear
//! in the concatenated features, so the result matches centralized SGD on the
//! unsplit data step for step.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::party::{check_alignment, PartyDataset};

const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub rounds: usize,
    pub batch_size: usize,
    /// Drives batch shuffling only; weights always start at zero.
    pub seed: u64,
    pub shuffle_each_round: bool,
    /// L2 penalty on weights (not the bias).
    pub l2: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            rounds: 200,
            batch_size: 64,
            seed: 0,
            shuffle_each_round: true,
            l2: 0.0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive"));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive"));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::Config("l2 must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartyWeights {
    pub party_id: String,
    pub weights: Vec<f64>,
}

/// Local weight vectors in party order (active first) plus the active bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FederatedModel {
    pub parties: Vec<PartyWeights>,
    pub bias: f64,
}

impl FederatedModel {
    pub fn weights(&self, party_id: &str) -> Option<&[f64]> {
        self.position(party_id)
            .map(|i| self.parties[i].weights.as_slice())
    }

    fn position(&self, party_id: &str) -> Option<usize> {
        self.parties.iter().position(|p| p.party_id == party_id)
    }

    /// Concatenated weights in party order followed by the bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat: Vec<f64> = self
            .parties
            .iter()
            .flat_map(|p| p.weights.iter().copied())
            .collect();
        flat.push(self.bias);
        flat
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    PartialScore,
    Gradient,
}

/// One transfer between parties; `sender`/`receiver` index `RoundTrace::parties`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub round: u32,
    pub batch: u32,
    pub sender: u16,
    pub receiver: u16,
    pub kind: PayloadKind,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    /// Participants; index 0 is the active party.
    pub parties: Vec<String>,
    /// Sample-weighted mean batch loss of each round.
    pub round_losses: Vec<f64>,
    pub messages: Vec<Message>,
}

pub fn init_models(parties: &[&PartyDataset], _seed: u64) -> FederatedModel {
    FederatedModel {
        parties: parties
            .iter()
            .map(|p| PartyWeights {
                party_id: p.party_id.clone(),
                weights: vec![0.0; p.width()],
            })
            .collect(),
        bias: 0.0,
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

fn score_rows(party: &PartyDataset, weights: &[f64], bias: f64, rows: &[usize]) -> Vec<f64> {
    rows.iter()
        .map(|&r| {
            party
                .features
                .row(r)
                .iter()
                .zip(weights)
                .fold(bias, |acc, (x, w)| acc + x * w)
        })
        .collect()
}

/// `z = X[rows] theta` for this party; the active party adds the bias.
pub fn partial_score(
    party: &PartyDataset,
    model: &FederatedModel,
    rows: &[usize],
) -> Result<Vec<f64>> {
    let weights = model
        .weights(&party.party_id)
        .ok_or_else(|| Error::Party(party.party_id.clone(), "not part of the model"))?;
    if weights.len() != party.width() {
        return Err(Error::Party(
            party.party_id.clone(),
            "weight width mismatch",
        ));
    }
    if rows.iter().any(|&r| r >= party.rows()) {
        return Err(Error::Party(
            party.party_id.clone(),
            "batch row out of range",
        ));
    }
    let bias = if party.is_active() { model.bias } else { 0.0 };
    Ok(score_rows(party, weights, bias, rows))
}

/// Sums partial scores, returning mean cross-entropy and `dL/dz`.
pub fn aggregate_and_grad(partial_scores: &[Vec<f64>], labels: &[f64]) -> (f64, Vec<f64>) {
    let b = labels.len();
    let mut total = vec![0.0; b];
    for scores in partial_scores {
        for (t, s) in total.iter_mut().zip(scores) {
            *t += s;
        }
    }
    let mut loss = 0.0;
    let grad = total
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let p = sigmoid(z);
            let clamped = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            loss -= y * libm::log(clamped) + (1.0 - y) * libm::log(1.0 - clamped);
            (p - y) / b as f64
        })
        .collect();
    (loss / b as f64, grad)
}

fn apply_update(
    party: &PartyDataset,
    weights: &mut [f64],
    bias: Option<&mut f64>,
    grad_z: &[f64],
    rows: &[usize],
    learning_rate: f64,
    l2: f64,
) {
    let mut step = vec![0.0; weights.len()];
    for (&r, g) in rows.iter().zip(grad_z) {
        for (s, x) in step.iter_mut().zip(party.features.row(r)) {
            *s += x * g;
        }
    }
    for (w, s) in weights.iter_mut().zip(step) {
        *w -= learning_rate * (s + l2 * *w);
    }
    if let Some(bias) = bias {
        *bias -= learning_rate * grad_z.iter().sum::<f64>();
    }
}

/// `theta -= lr * (X[rows]^T grad_z + l2 * theta)`; the active party also
/// moves the bias by `lr * sum(grad_z)`.
pub fn local_update(
    party: &PartyDataset,
    model: &mut FederatedModel,
    grad_z: &[f64],
    rows: &[usize],
    learning_rate: f64,
    l2: f64,
) -> Result<()> {
    let i = model
        .position(&party.party_id)
        .ok_or_else(|| Error::Party(party.party_id.clone(), "not part of the model"))?;
    if grad_z.len() != rows.len() || model.parties[i].weights.len() != party.width() {
        return Err(Error::Party(
            party.party_id.clone(),
            "shape mismatch in update",
        ));
    }
    let FederatedModel { parties, bias } = model;
    let bias = party.is_active().then_some(bias);
    apply_update(
        party,
        &mut parties[i].weights,
        bias,
        grad_z,
        rows,
        learning_rate,
        l2,
    );
    Ok(())
}

pub fn train(
    active: &PartyDataset,
    passives: &[&PartyDataset],
    config: &TrainingConfig,
) -> Result<(FederatedModel, RoundTrace)> {
    train_observed(active, passives, config, |_| {})
}

/// [`train`], calling `on_step` with the model after every batch step.
pub fn train_observed(
    active: &PartyDataset,
    passives: &[&PartyDataset],
    config: &TrainingConfig,
    mut on_step: impl FnMut(&FederatedModel),
) -> Result<(FederatedModel, RoundTrace)> {
    config.validate()?;
    if !active.is_active() {
        return Err(Error::Party(
            active.party_id.clone(),
            "expected the active party",
        ));
    }
    if let Some(p) = passives.iter().find(|p| p.is_active()) {
        return Err(Error::Party(p.party_id.clone(), "expected a passive party"));
    }
    check_alignment(core::iter::once(active).chain(passives.iter().copied()))?;
    let n = active.rows();
    if n == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    let labels = active.labels.as_deref().unwrap_or_default();

    let mut parties = Vec::with_capacity(passives.len() + 1);
    parties.push(active);
    parties.extend_from_slice(passives);
    let mut model = init_models(&parties, config.seed);
    let mut trace = RoundTrace {
        parties: parties.iter().map(|p| p.party_id.clone()).collect(),
        round_losses: Vec::with_capacity(config.rounds),
        messages: Vec::new(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut scores = vec![Vec::new(); parties.len()];
    let mut batch_labels = Vec::with_capacity(config.batch_size);

    for round in 0..config.rounds {
        if config.shuffle_each_round {
            order.shuffle(&mut rng);
        }
        let mut round_loss = 0.0;
        for (batch, rows) in order.chunks(config.batch_size).enumerate() {
            for (m, party) in parties.iter().enumerate() {
                let bias = if m == 0 { model.bias } else { 0.0 };
                scores[m] = score_rows(party, &model.parties[m].weights, bias, rows);
                if m != 0 {
                    trace.messages.push(Message {
                        round: round as u32,
                        batch: batch as u32,
                        sender: m as u16,
                        receiver: 0,
                        kind: PayloadKind::PartialScore,
                    });
                }
            }
            batch_labels.clear();
            batch_labels.extend(rows.iter().map(|&r| labels[r]));
            let (loss, grad) = aggregate_and_grad(&scores, &batch_labels);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { round, batch });
            }
            round_loss += loss * rows.len() as f64;
            for m in 1..parties.len() {
                trace.messages.push(Message {
                    round: round as u32,
                    batch: batch as u32,
                    sender: 0,
                    receiver: m as u16,
                    kind: PayloadKind::Gradient,
                });
            }
            let FederatedModel {
                parties: weights,
                bias,
            } = &mut model;
            for (m, party) in parties.iter().enumerate() {
                let bias = (m == 0).then_some(&mut *bias);
                apply_update(
                    party,
                    &mut weights[m].weights,
                    bias,
                    &grad,
                    rows,
                    config.learning_rate,
                    config.l2,
                );
            }
            if model.flatten().iter().any(|w| !w.is_finite()) {
                return Err(Error::NonFiniteLoss { round, batch });
            }
            on_step(&model);
        }
        trace.round_losses.push(round_loss / n as f64);
    }
    Ok((model, trace))
}

/// Confusion counts for the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[f64], labels: &[f64]) -> Self {
        let mut c = Self::default();
        for (&p, &y) in predicted.iter().zip(labels) {
            match (p == 1.0, y == 1.0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    /// F1 of class 1. No positives predicted or present counts as perfect.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            return if self.fp == 0 && self.fn_ == 0 {
                1.0
            } else {
                0.0
            };
        }
        let precision = self.tp as f64 / (self.tp + self.fp) as f64;
        let recall = self.tp as f64 / (self.tp + self.fn_) as f64;
        2.0 * precision * recall / (precision + recall)
    }
}

/// Predicts class 1 where `sigmoid(sum z) >= 0.5` and scores F1 against the
/// active party's labels. `parties` must include every party in the model.
pub fn evaluate_f1(model: &FederatedModel, parties: &[&PartyDataset]) -> Result<f64> {
    check_alignment(parties.iter().copied())?;
    let active = parties.iter().find(|p| p.is_active()).ok_or(Error::Party(
        String::new(),
        "no active party to evaluate against",
    ))?;
    let labels = active.labels.as_deref().unwrap_or_default();
    let rows: Vec<usize> = (0..active.rows()).collect();

    let mut total = vec![0.0; rows.len()];
    for weights in &model.parties {
        let party = parties
            .iter()
            .find(|p| p.party_id == weights.party_id)
            .ok_or_else(|| Error::Party(weights.party_id.clone(), "missing from evaluation set"))?;
        for (t, z) in total.iter_mut().zip(partial_score(party, model, &rows)?) {
            *t += z;
        }
    }
    let predicted: Vec<f64> = total
        .iter()
        .map(|&z| if sigmoid(z) >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    Ok(Confusion::from_predictions(&predicted, labels).f1())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::party::{FeatureColumn, Matrix, Role};
    use alloc::format;
    use alloc::string::ToString;

    fn party(id: &str, role: Role, rows: &[Vec<f64>], labels: Option<Vec<f64>>) -> PartyDataset {
        let x = Matrix::from_rows(rows).unwrap();
        let columns = (0..x.cols())
            .map(|c| FeatureColumn {
                name: format!("{id}.{c}"),
                source: format!("{id}.{c}"),
                continuous: true,
            })
            .collect();
        let idx = (0..x.rows()).collect();
        PartyDataset::new(id.to_string(), role, x, columns, labels, idx).unwrap()
    }

    fn toy() -> (PartyDataset, PartyDataset) {
        // Separable: label = 1 iff a + b > 0.
        let a = party(
            "a",
            Role::Active,
            &[vec![1.0], vec![-1.0], vec![0.5], vec![-0.5]],
            Some(vec![1.0, 0.0, 1.0, 0.0]),
        );
        let b = party(
            "b",
            Role::Passive,
            &[vec![1.0], vec![-1.0], vec![1.0], vec![-1.0]],
            None,
        );
        (a, b)
    }

    #[test]
    fn zero_init_matches_widths() {
        let (a, b) = toy();
        let empty = party("c", Role::Passive, &[vec![], vec![], vec![], vec![]], None);
        let m = init_models(&[&a, &b, &empty], 3);
        assert_eq!(m.weights("a"), Some(&[0.0][..]));
        assert_eq!(m.weights("c"), Some(&[][..]));
        assert_eq!(m, init_models(&[&a, &b, &empty], 3));
        assert_eq!(partial_score(&empty, &m, &[0, 1]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn partial_score_examples() {
        let p = party("p", Role::Passive, &[vec![3.0]], None);
        let mut m = init_models(&[&p], 0);
        assert_eq!(partial_score(&p, &m, &[0]).unwrap(), vec![0.0]);
        m.parties[0].weights = vec![2.0];
        assert_eq!(partial_score(&p, &m, &[0]).unwrap(), vec![6.0]);
        assert!(partial_score(&p, &m, &[1]).is_err());
    }

    #[test]
    fn aggregate_at_zero_is_log_two() {
        let (loss, grad) = aggregate_and_grad(&[vec![1.0, -2.0], vec![-1.0, 2.0]], &[1.0, 0.0]);
        assert!((loss - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(grad, vec![-0.25, 0.25]);
    }

    #[test]
    fn aggregate_saturates() {
        let (loss, grad) = aggregate_and_grad(&[vec![800.0]], &[1.0]);
        assert!(loss < 1e-11);
        assert_eq!(grad, vec![0.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let z = [vec![0.3, -1.2, 2.0], vec![-0.4, 0.1, 0.5]];
        let y = [1.0, 0.0, 1.0];
        let (_, grad) = aggregate_and_grad(&z, &y);
        let h = 1e-6;
        for k in 0..3 {
            let mut plus = z.clone();
            let mut minus = z.clone();
            plus[1][k] += h;
            minus[1][k] -= h;
            let fd =
                (aggregate_and_grad(&plus, &y).0 - aggregate_and_grad(&minus, &y).0) / (2.0 * h);
            assert!(
                ((fd - grad[k]) / grad[k]).abs() < 1e-5,
                "{fd} vs {}",
                grad[k]
            );
        }
    }

    #[test]
    fn local_update_examples() {
        let p = party("p", Role::Passive, &[vec![1.0, 0.0]], None);
        let mut m = init_models(&[&p], 0);
        local_update(&p, &mut m, &[0.0], &[0], 0.1, 0.0).unwrap();
        assert_eq!(m.weights("p"), Some(&[0.0, 0.0][..]));
        local_update(&p, &mut m, &[0.5], &[0], 0.1, 0.0).unwrap();
        assert_eq!(m.weights("p"), Some(&[-0.05, 0.0][..]));
    }

    #[test]
    fn separable_toy_trains_to_perfect_f1() {
        let (a, b) = toy();
        let config = TrainingConfig {
            rounds: 100,
            batch_size: 4,
            ..TrainingConfig::default()
        };
        let (model, trace) = train(&a, &[&b], &config).unwrap();
        assert!(trace.round_losses.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(evaluate_f1(&model, &[&a, &b]).unwrap(), 1.0);
        let (again, _) = train(&a, &[&b], &config).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn trace_has_one_score_and_one_gradient_per_passive_step() {
        let (a, b) = toy();
        let config = TrainingConfig {
            rounds: 3,
            batch_size: 2,
            ..TrainingConfig::default()
        };
        let (_, trace) = train(&a, &[&b], &config).unwrap();
        // 3 rounds x 2 batches x (1 score + 1 gradient)
        assert_eq!(trace.messages.len(), 12);
        assert!(trace
            .messages
            .iter()
            .all(|m| (m.kind == PayloadKind::PartialScore) == (m.receiver == 0)));
    }

    #[test]
    fn training_without_passives_is_local() {
        let (a, _) = toy();
        let (model, trace) = train(&a, &[], &TrainingConfig::default()).unwrap();
        assert_eq!(model.parties.len(), 1);
        assert!(trace.messages.is_empty());
    }

    #[test]
    fn divergent_training_aborts() {
        let a = party(
            "a",
            Role::Active,
            &[vec![1e300], vec![-1e300]],
            Some(vec![1.0, 0.0]),
        );
        let config = TrainingConfig {
            learning_rate: 1e10,
            ..TrainingConfig::default()
        };
        assert!(matches!(
            train(&a, &[], &config),
            Err(Error::NonFiniteLoss { .. })
        ));
    }

    #[test]
    fn f1_conventions() {
        let y = [1.0, 0.0, 1.0, 0.0];
        assert_eq!(Confusion::from_predictions(&y, &y).f1(), 1.0);
        assert_eq!(
            Confusion::from_predictions(&[0.0, 1.0, 0.0, 1.0], &y).f1(),
            0.0
        );
        let c = Confusion::from_predictions(&[1.0, 1.0, 0.0], &[1.0, 0.0, 1.0]);
        assert_eq!((c.tp, c.fp, c.fn_), (1, 1, 1));
        assert_eq!(c.f1(), 0.5);
        assert_eq!(
            Confusion::from_predictions(&[0.0, 0.0], &[0.0, 0.0]).f1(),
            1.0
        );
    }
}
