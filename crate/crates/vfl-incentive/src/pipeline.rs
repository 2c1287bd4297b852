//! Coalition training runs turned into estates, claims and payouts.
//!
//! Coalitions are bitmasks over the passive parties in partition order; the
//! active party is always present. Mask 0 is the active party's local model.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vfl_incentive_core::coalitional::shapley_exact;
use vfl_incentive_core::vflsim::{evaluate_f1, train};
use vfl_incentive_core::{
    CoalitionalGame, NormalizationLog, PartyDataset, PayoutVector, RoundTrace, Rule, TrainingConfig,
};

use crate::config::{DatasetSource, ExperimentConfig, Variant};
use crate::data::{
    duplicate_party, generate_synthetic, load_csv, preprocess, randomize_party, standardize,
    train_test_split, vertical_partition, SyntheticParams,
};
use crate::error::{Error, Result, Stage, StageExt};
use crate::report::{AllocationReport, CoalitionScore, RowCounts, ScoreSummary};

/// Distance from 0 beyond which a randomized party's claim is called out.
pub const DUMMY_CLAIM_WARNING: f64 = 3.0;

/// F1 scores keyed by coalition mask; mask 0 is the baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoalitionScores {
    pub players: Vec<String>,
    pub baseline: f64,
    pub by_coalition: BTreeMap<usize, f64>,
}

impl CoalitionScores {
    pub fn grand_mask(&self) -> usize {
        (1usize << self.players.len()) - 1
    }

    fn get(&self, mask: usize) -> Result<f64> {
        self.by_coalition
            .get(&mask)
            .copied()
            .ok_or_else(|| Error::data(format!("missing score for coalition mask {mask:#b}")))
    }
}

/// `(F1(grand) - F1(baseline)) * 100`, negative when federating hurts.
pub fn compute_estate(scores: &CoalitionScores) -> Result<f64> {
    Ok((scores.get(scores.grand_mask())? - scores.baseline) * 100.0)
}

/// `(F1(active + i) - F1(baseline)) * 100` for each passive party.
pub fn compute_claims(scores: &CoalitionScores) -> Result<Vec<f64>> {
    (0..scores.players.len())
        .map(|i| Ok((scores.get(1 << i)? - scores.baseline) * 100.0))
        .collect()
}

/// Game with `v(S) = (F1(active + S) - baseline) * 100` and `v(empty) = 0`.
pub fn characteristic_from_scores(scores: &CoalitionScores) -> Result<CoalitionalGame> {
    let n = scores.players.len();
    let mut values = vec![0.0; 1 << n];
    for (mask, v) in values.iter_mut().enumerate().skip(1) {
        *v = (scores.get(mask)? - scores.baseline) * 100.0;
    }
    Ok(CoalitionalGame::new(n, values)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Allocation {
    pub payout: PayoutVector,
    pub log: NormalizationLog,
    /// False when the raw estate was negative.
    pub federation_beneficial: bool,
}

pub fn allocate(estate: f64, claims: &[f64], parties: &[String], rule: Rule) -> Result<Allocation> {
    let (payout, log) = vfl_incentive_core::allocate(estate, claims, parties, rule)?;
    Ok(Allocation {
        payout,
        log,
        federation_beneficial: estate >= 0.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSplit {
    pub budget: f64,
    pub shares: Vec<f64>,
    /// Budget left over because part of the estate went unpaid.
    pub residual: f64,
}

/// `share_i = budget * payout_i / estate`.
pub fn budget_split(payouts: &[f64], estate: f64, budget: f64) -> Result<BudgetSplit> {
    if !(estate.is_finite() && estate > 0.0) {
        return Err(Error::data(format!(
            "budget split needs a positive estate, got {estate}"
        )));
    }
    if !(budget.is_finite() && budget >= 0.0) {
        return Err(Error::data(format!(
            "budget must be non-negative, got {budget}"
        )));
    }
    let shares: Vec<f64> = payouts.iter().map(|p| budget * p / estate).collect();
    let residual = (budget - shares.iter().sum::<f64>()).max(0.0);
    Ok(BudgetSplit {
        budget,
        shares,
        residual,
    })
}

/// Trains and scores coalitions on demand, caching F1 by mask.
///
/// `train` and `test` hold the active party first, then the passive parties
/// in mask-bit order.
pub struct CoalitionTrainer<'a> {
    train: &'a [PartyDataset],
    test: &'a [PartyDataset],
    config: TrainingConfig,
    cache: Mutex<BTreeMap<usize, f64>>,
    trained: AtomicUsize,
    grand_trace: Mutex<Option<RoundTrace>>,
}

impl<'a> CoalitionTrainer<'a> {
    pub fn new(
        train: &'a [PartyDataset],
        test: &'a [PartyDataset],
        config: TrainingConfig,
    ) -> Result<Self> {
        if train.is_empty() || train.len() != test.len() || !train[0].is_active() {
            return Err(Error::data(
                "trainer needs the active party first in both splits",
            ));
        }
        if train.len() - 1 > vfl_incentive_core::coalitional::MAX_PLAYERS {
            return Err(Error::data("too many passive parties"));
        }
        Ok(Self {
            train,
            test,
            config,
            cache: Mutex::new(BTreeMap::new()),
            trained: AtomicUsize::new(0),
            grand_trace: Mutex::new(None),
        })
    }

    pub fn passive_count(&self) -> usize {
        self.train.len() - 1
    }

    /// Number of models trained so far; cache hits do not count.
    pub fn models_trained(&self) -> usize {
        self.trained.load(Ordering::SeqCst)
    }

    /// Trains every mask not yet cached, in parallel.
    pub fn ensure(&self, masks: &[usize]) -> Result<()> {
        let mut todo: Vec<usize> = {
            let cache = self.cache.lock().expect("cache lock");
            masks
                .iter()
                .copied()
                .filter(|m| !cache.contains_key(m))
                .collect()
        };
        todo.sort_unstable();
        todo.dedup();
        let grand = (1usize << self.passive_count()) - 1;
        if let Some(&bad) = todo.iter().find(|&&m| m > grand) {
            return Err(Error::data(format!(
                "coalition mask {bad:#b} names unknown parties"
            )));
        }
        let results: Vec<(usize, f64)> = todo
            .par_iter()
            .map(|&mask| self.train_one(mask, mask == grand).map(|f1| (mask, f1)))
            .collect::<Result<_>>()?;
        self.cache.lock().expect("cache lock").extend(results);
        Ok(())
    }

    fn members(&self, split: &'a [PartyDataset], mask: usize) -> Vec<&'a PartyDataset> {
        split[1..]
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, p)| p)
            .collect()
    }

    fn train_one(&self, mask: usize, keep_trace: bool) -> Result<f64> {
        let passives = self.members(self.train, mask);
        let (model, trace) = train(&self.train[0], &passives, &self.config)?;
        self.trained.fetch_add(1, Ordering::SeqCst);
        if keep_trace {
            *self.grand_trace.lock().expect("trace lock") = Some(trace);
        }
        let mut eval = vec![&self.test[0]];
        eval.extend(self.members(self.test, mask));
        Ok(evaluate_f1(&model, &eval)?)
    }

    pub fn scores(&self) -> Result<CoalitionScores> {
        let by_coalition = self.cache.lock().expect("cache lock").clone();
        let baseline = *by_coalition
            .get(&0)
            .ok_or_else(|| Error::data("baseline coalition not trained"))?;
        Ok(CoalitionScores {
            players: self.train[1..].iter().map(|p| p.party_id.clone()).collect(),
            baseline,
            by_coalition,
        })
    }

    pub fn take_grand_trace(&self) -> Option<RoundTrace> {
        self.grand_trace.lock().expect("trace lock").take()
    }
}

/// Masks for the payout path: baseline, every singleton and the grand coalition.
pub fn payout_masks(n: usize) -> Vec<usize> {
    let mut masks = vec![0];
    masks.extend((0..n).map(|i| 1 << i));
    masks.push((1 << n) - 1);
    masks
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent seed for one randomness consumer.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

const STREAM_SYNTHETIC: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_DUMMY: u64 = 3;
const STREAM_TRAINING: u64 = 4;

pub fn run_experiment(config: &ExperimentConfig) -> Result<AllocationReport> {
    run_experiment_traced(config).map(|(report, _)| report)
}

/// Runs an experiment and also returns the grand coalition's training trace.
pub fn run_experiment_traced(
    config: &ExperimentConfig,
) -> Result<(AllocationReport, Option<RoundTrace>)> {
    config.validate().stage(Stage::Config)?;
    let seed = config.seed;
    let mut notes = Vec::new();

    let table = match &config.dataset {
        DatasetSource::Csv { path } => load_csv(path, &config.partition.label),
        DatasetSource::Synthetic(params) => generate_synthetic(&SyntheticParams {
            seed: derive_seed(seed, STREAM_SYNTHETIC),
            ..params.clone()
        }),
    }
    .stage(Stage::Load)?;
    let encoded = preprocess(&table).stage(Stage::Preprocess)?;
    let mut parties = vertical_partition(&encoded, &config.partition).stage(Stage::Partition)?;

    // Active party first, passives keep their partition order.
    let active_pos = parties
        .iter()
        .position(|p| p.is_active())
        .expect("partition has an active party");
    let active = parties.remove(active_pos);
    parties.insert(0, active);
    apply_variant(
        &mut parties,
        &config.variant,
        derive_seed(seed, STREAM_DUMMY),
    )
    .stage(Stage::Variant)?;

    let (mut train_set, mut test_set) = train_test_split(
        &parties,
        config.split_ratio,
        derive_seed(seed, STREAM_SPLIT),
    )
    .stage(Stage::Split)?;
    standardize(&mut train_set, &mut test_set).stage(Stage::Split)?;
    notes.push("continuous columns standardized with training-split statistics".to_string());

    let training = TrainingConfig {
        seed: derive_seed(seed, STREAM_TRAINING),
        ..config.training.clone()
    };
    let trainer =
        CoalitionTrainer::new(&train_set, &test_set, training.clone()).stage(Stage::Train)?;
    let n = trainer.passive_count();
    let masks: Vec<usize> = if config.shapley {
        (0..1 << n).collect()
    } else {
        payout_masks(n)
    };
    trainer.ensure(&masks).stage(Stage::Train)?;
    let scores = trainer.scores().stage(Stage::Train)?;

    let estate = compute_estate(&scores).stage(Stage::Allocate)?;
    let claims = compute_claims(&scores).stage(Stage::Allocate)?;
    let allocation =
        allocate(estate, &claims, &scores.players, config.rule).stage(Stage::Allocate)?;
    if !allocation.federation_beneficial {
        notes.push(format!(
            "federation not beneficial: grand coalition F1 below baseline (estate {estate:.4})"
        ));
    }

    let shapley = if config.shapley {
        let game = characteristic_from_scores(&scores).stage(Stage::Shapley)?;
        Some(shapley_exact(&game))
    } else {
        None
    };

    if let Variant::Dummy { party } = &config.variant {
        let i = scores
            .players
            .iter()
            .position(|p| p == party)
            .expect("validated dummy party");
        if claims[i].abs() > DUMMY_CLAIM_WARNING {
            notes.push(format!(
                "randomized party {party} has claim {:.2}, beyond the expected +/-{DUMMY_CLAIM_WARNING}",
                claims[i]
            ));
        }
    }

    let clamped_estate = estate.max(0.0);
    let payouts = allocation.payout.payouts.clone();
    let budget = match config.budget {
        Some(b) if clamped_estate > 0.0 => {
            Some(budget_split(&payouts, clamped_estate, b).stage(Stage::Allocate)?)
        }
        Some(b) => {
            notes.push("estate is zero; the whole budget is left unallocated".into());
            Some(BudgetSplit {
                budget: b,
                shares: vec![0.0; n],
                residual: b,
            })
        }
        None => None,
    };
    let payout_percent = payouts
        .iter()
        .map(|p| {
            if clamped_estate > 0.0 {
                100.0 * p / clamped_estate
            } else {
                0.0
            }
        })
        .collect();

    let coalitions = scores
        .by_coalition
        .iter()
        .map(|(&mask, &f1)| CoalitionScore {
            mask,
            parties: (0..n)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| scores.players[i].clone())
                .collect(),
            f1,
        })
        .collect();
    let report = AllocationReport {
        description: config.description.clone(),
        dataset: config.dataset_name(),
        variant: config.variant.clone(),
        rule: config.rule,
        active: train_set[0].party_id.clone(),
        parties: scores.players.clone(),
        rows: RowCounts {
            input: encoded.log.rows_in,
            missing_dropped: encoded.log.missing_dropped,
            duplicates_dropped: encoded.log.duplicates_dropped,
            train: train_set[0].rows(),
            test: test_set[0].rows(),
        },
        scores: ScoreSummary {
            baseline: scores.baseline,
            grand: scores.by_coalition[&scores.grand_mask()],
            coalitions,
        },
        estate,
        clamped_estate,
        claims,
        payouts,
        payout_percent,
        surplus_paid: allocation.payout.surplus_paid,
        undistributed: allocation.payout.undistributed,
        normalization: allocation.log,
        federation_beneficial: allocation.federation_beneficial,
        shapley,
        budget,
        models_trained: trainer.models_trained(),
        training: config.training.clone(),
        split_ratio: config.split_ratio,
        seed,
        notes,
    };
    Ok((report, trainer.take_grand_trace()))
}

/// Applies a dummy or symmetry variant in place. `parties[0]` is the active party.
pub fn apply_variant(parties: &mut [PartyDataset], variant: &Variant, seed: u64) -> Result<()> {
    let find = |parties: &[PartyDataset], id: &str| {
        parties
            .iter()
            .position(|p| p.party_id == id && !p.is_active())
            .ok_or_else(|| Error::data(format!("no passive party `{id}`")))
    };
    match variant {
        Variant::Plain => {}
        Variant::Dummy { party } => {
            let i = find(parties, party)?;
            parties[i] = randomize_party(&parties[i], seed)?;
        }
        Variant::Symmetry { source, target } => {
            let s = find(parties, source)?;
            let t = find(parties, target)?;
            let others: Vec<PartyDataset> = parties
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != t)
                .map(|(_, p)| p.clone())
                .collect();
            parties[t] = duplicate_party(&parties[s], target, &others)?;
        }
    }
    Ok(())
}
