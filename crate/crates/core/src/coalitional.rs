//! Transferable-utility games over a small player set.
//!
//! A game is a dense table of `2^n` coalition values. Bit `i` of a coalition
//! mask is the player at index `i`, so mask `0` is the empty coalition and
//! `(1 << n) - 1` the grand coalition.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::bankruptcy::BankruptcyProblem;
use crate::error::{Error, Result};

/// Largest game the dense table (and exact Shapley) accepts.
pub const MAX_PLAYERS: usize = 24;
/// Largest game [`nucleolus_bruteforce`] accepts.
pub const ORACLE_MAX_PLAYERS: usize = 4;

/// Per-entry tolerance for leximin comparisons.
pub const LEXIMIN_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoalitionalGame {
    n: usize,
    values: Vec<f64>,
}

impl CoalitionalGame {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        check_size(n)?;
        let expected = 1usize << n;
        if values.len() != expected {
            return Err(Error::GameTableSize {
                expected,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if values[0] != 0.0 {
            return Err(Error::EmptyCoalitionValue(values[0]));
        }
        Ok(Self { n, values })
    }

    /// Tabulates `value(mask)` for every coalition.
    pub fn from_fn(n: usize, mut value: impl FnMut(usize) -> f64) -> Result<Self> {
        check_size(n)?;
        let values = (0..1usize << n).map(&mut value).collect();
        Self::new(n, values)
    }

    pub fn players(&self) -> usize {
        self.n
    }

    pub fn value(&self, mask: usize) -> f64 {
        self.values[mask]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grand_mask(&self) -> usize {
        (1 << self.n) - 1
    }

    pub fn grand_value(&self) -> f64 {
        self.values[self.grand_mask()]
    }
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::NoCreditors);
    }
    if n > MAX_PLAYERS {
        return Err(Error::GameTooLarge(n));
    }
    Ok(())
}

/// Shapley value by subset enumeration, `O(n 2^n)`.
///
/// Each player's weighted marginal contributions are summed in ascending value
/// order, so the result does not depend on enumeration order and players with
/// identical contribution profiles get bit-identical values.
pub fn shapley_exact(game: &CoalitionalGame) -> Vec<f64> {
    let n = game.n;
    // weight[s] = s! (n - s - 1)! / n! = 1 / (n * C(n - 1, s))
    let mut weights = Vec::with_capacity(n);
    let mut binom = 1.0;
    for s in 0..n {
        weights.push(1.0 / (n as f64 * binom));
        binom = binom * (n - 1 - s) as f64 / (s + 1) as f64;
    }

    let mut terms = Vec::with_capacity(1 << (n - 1));
    (0..n)
        .map(|i| {
            let bit = 1usize << i;
            terms.clear();
            for mask in 0..1usize << n {
                if mask & bit == 0 {
                    let gain = game.values[mask | bit] - game.values[mask];
                    terms.push(weights[mask.count_ones() as usize] * gain);
                }
            }
            terms.sort_unstable_by(f64::total_cmp);
            terms.iter().sum()
        })
        .collect()
}

/// The bankruptcy game `v(S) = max(0, E - sum of claims outside S)`.
pub fn bankruptcy_game(problem: &BankruptcyProblem) -> Result<CoalitionalGame> {
    let n = problem.len();
    check_size(n)?;
    let claims = problem.claims();
    let estate = problem.estate();
    let full = (1usize << n) - 1;
    CoalitionalGame::from_fn(n, |mask| {
        let outside = full & !mask;
        let owed: f64 = (0..n)
            .filter(|i| outside & (1 << i) != 0)
            .map(|i| claims[i])
            .sum();
        (estate - owed).max(0.0)
    })
}

/// Excesses `v(S) - x(S)` of all proper nonempty coalitions, largest first.
#[derive(Clone, Debug, PartialEq)]
pub struct ExcessVector(Vec<f64>);

impl ExcessVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

fn check_efficient(game: &CoalitionalGame, allocation: &[f64]) -> Result<()> {
    if allocation.len() != game.n {
        return Err(Error::AllocationLength {
            expected: game.n,
            got: allocation.len(),
        });
    }
    if allocation.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let sum: f64 = allocation.iter().sum();
    let grand = game.grand_value();
    if (sum - grand).abs() > 1e-6 * grand.abs().max(1.0) {
        return Err(Error::Inefficient { sum, grand });
    }
    Ok(())
}

/// Fills `out` with unsorted excesses for masks `1..2^n - 1`.
fn raw_excesses(
    game: &CoalitionalGame,
    allocation: &[f64],
    sums: &mut Vec<f64>,
    out: &mut Vec<f64>,
) {
    let full = game.grand_mask();
    sums.clear();
    sums.resize(full + 1, 0.0);
    out.clear();
    for mask in 1..full {
        let low = mask.trailing_zeros() as usize;
        sums[mask] = sums[mask & (mask - 1)] + allocation[low];
        out.push(game.values[mask] - sums[mask]);
    }
}

fn sort_descending(values: &mut [f64]) {
    values.sort_unstable_by(|a, b| b.total_cmp(a));
}

pub fn excess_vector(game: &CoalitionalGame, allocation: &[f64]) -> Result<ExcessVector> {
    check_efficient(game, allocation)?;
    let mut sums = Vec::new();
    let mut out = Vec::new();
    raw_excesses(game, allocation, &mut sums, &mut out);
    sort_descending(&mut out);
    Ok(ExcessVector(out))
}

fn compare_sorted(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > LEXIMIN_TOL {
            return if x < y {
                Ordering::Less
            } else {
                Ordering::Greater
            };
        }
    }
    Ordering::Equal
}

/// Lexicographic comparison of descending excess vectors; `Less` means `a` is
/// preferred by the nucleolus.
pub fn leximin_compare(a: &ExcessVector, b: &ExcessVector) -> Result<Ordering> {
    if a.len() != b.len() {
        return Err(Error::ExcessLength(a.len(), b.len()));
    }
    Ok(compare_sorted(&a.0, &b.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NucleolusReport {
    pub dominated: bool,
    pub witness: Option<Vec<f64>>,
    pub samples: usize,
}

const PERTURBATION_STEPS: [f64; 3] = [1e-1, 1e-2, 1e-3];

/// Searches for an efficient allocation whose excess vector is leximin-smaller
/// than the candidate's.
///
/// Even-numbered trials draw a flat Dirichlet point scaled to `v(N)`; odd ones
/// move the candidate along a random zero-sum direction by 10%, 1% or 0.1% of
/// `|v(N)|`. Finding nothing is evidence, not proof.
pub fn nucleolus_check(
    game: &CoalitionalGame,
    candidate: &[f64],
    trials: usize,
    seed: u64,
) -> Result<NucleolusReport> {
    check_efficient(game, candidate)?;
    let n = game.n;
    if n < 2 {
        return Ok(NucleolusReport {
            dominated: false,
            witness: None,
            samples: 0,
        });
    }

    let mut sums = Vec::new();
    let mut reference = Vec::new();
    raw_excesses(game, candidate, &mut sums, &mut reference);
    sort_descending(&mut reference);

    let grand = game.grand_value();
    let scale = if grand.abs() > 0.0 { grand.abs() } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut point = vec![0.0; n];
    let mut excess = Vec::new();

    for trial in 0..trials {
        if trial % 2 == 0 {
            let mut total = 0.0;
            for x in point.iter_mut() {
                *x = rng.sample::<f64, _>(Exp1);
                total += *x;
            }
            for x in point.iter_mut() {
                *x *= grand / total;
            }
        } else {
            let mut mean = 0.0;
            for x in point.iter_mut() {
                *x = rng.random_range(-1.0..1.0);
                mean += *x;
            }
            mean /= n as f64;
            let mut peak: f64 = 0.0;
            for x in point.iter_mut() {
                *x -= mean;
                peak = peak.max(x.abs());
            }
            if peak == 0.0 {
                continue;
            }
            let step = PERTURBATION_STEPS[(trial / 2) % PERTURBATION_STEPS.len()] * scale / peak;
            for (x, c) in point.iter_mut().zip(candidate) {
                *x = c + step * *x;
            }
        }

        raw_excesses(game, &point, &mut sums, &mut excess);
        sort_descending(&mut excess);
        if compare_sorted(&excess, &reference) == Ordering::Less {
            return Ok(NucleolusReport {
                dominated: true,
                witness: Some(point),
                samples: trial + 1,
            });
        }
    }
    Ok(NucleolusReport {
        dominated: false,
        witness: None,
        samples: trials,
    })
}

/// Grid oracle for the nucleolus of games with at most four players.
///
/// First pass: the leximin-minimal point of the grid `v(N) * k / resolution`
/// with `sum(k) = resolution`. Second pass: the leximin-minimal point of a
/// zero-sum grid ten times finer, spanning two coarse steps around the first
/// answer. The coarse pass alone can land slightly more than one step away
/// from the nucleolus when several coalitions bind; the second pass brings the
/// error well inside `|v(N)| / resolution` per coordinate, provided the
/// nucleolus lies in the scaled simplex.
///
/// Ties keep the first point in enumeration order, so the zero game returns
/// the origin.
pub fn nucleolus_bruteforce(game: &CoalitionalGame, resolution: usize) -> Result<Vec<f64>> {
    let n = game.n;
    if n > ORACLE_MAX_PLAYERS {
        return Err(Error::OracleTooLarge(n));
    }
    if resolution == 0 {
        return Err(Error::InvalidProblem("grid resolution must be positive"));
    }
    let grand = game.grand_value();
    if n == 1 {
        return Ok(vec![grand]);
    }
    let step = grand / resolution as f64;

    let mut search = LeximinSearch::new(game);
    let mut counts = vec![0usize; n];
    counts[n - 1] = resolution;
    loop {
        search.offer(counts.iter().map(|&k| step * k as f64));
        if !next_composition(&mut counts) {
            break;
        }
    }
    let coarse = search.into_best();

    let fine = step / REFINE_DIVISIONS as f64;
    let reach = 2 * REFINE_DIVISIONS as i64;
    let mut search = LeximinSearch::new(game);
    let mut offsets = vec![-reach; n - 1];
    loop {
        let last = -offsets.iter().sum::<i64>();
        if last.abs() <= reach {
            let shift = offsets.iter().copied().chain(core::iter::once(last));
            search.offer(coarse.iter().zip(shift).map(|(c, j)| c + fine * j as f64));
        }
        if !next_offset(&mut offsets, reach) {
            break;
        }
    }
    Ok(search.into_best())
}

const REFINE_DIVISIONS: usize = 10;

/// Running leximin minimum over offered points.
struct LeximinSearch<'a> {
    game: &'a CoalitionalGame,
    point: Vec<f64>,
    sums: Vec<f64>,
    excess: Vec<f64>,
    best: Option<(Vec<f64>, Vec<f64>)>,
}

impl<'a> LeximinSearch<'a> {
    fn new(game: &'a CoalitionalGame) -> Self {
        Self {
            game,
            point: Vec::with_capacity(game.n),
            sums: Vec::new(),
            excess: Vec::new(),
            best: None,
        }
    }

    fn offer(&mut self, point: impl Iterator<Item = f64>) {
        self.point.clear();
        self.point.extend(point);
        raw_excesses(self.game, &self.point, &mut self.sums, &mut self.excess);
        let worst = self
            .excess
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let better = match &self.best {
            None => true,
            Some((_, best)) if worst > best[0] + LEXIMIN_TOL => false,
            Some((_, best)) => {
                sort_descending(&mut self.excess);
                compare_sorted(&self.excess, best) == Ordering::Less
            }
        };
        if better {
            sort_descending(&mut self.excess);
            self.best = Some((self.point.clone(), self.excess.clone()));
        }
    }

    fn into_best(self) -> Vec<f64> {
        self.best.map(|(p, _)| p).unwrap_or_default()
    }
}

/// Odometer over `[-reach, reach]^len`.
fn next_offset(offsets: &mut [i64], reach: i64) -> bool {
    for o in offsets.iter_mut().rev() {
        if *o < reach {
            *o += 1;
            return true;
        }
        *o = -reach;
    }
    false
}

/// Advances `counts` to the next composition of the same total in
/// lexicographic order; the last slot absorbs the remainder.
fn next_composition(counts: &mut [usize]) -> bool {
    let n = counts.len();
    let last = counts[n - 1];
    if last == 0 {
        // Carry: find the rightmost position before the last that can be reset.
        let mut i = n - 2;
        loop {
            if counts[i] > 0 {
                let moved = counts[i];
                counts[i] = 0;
                if i == 0 {
                    counts[n - 1] = moved;
                    return false;
                }
                counts[i - 1] += 1;
                counts[n - 1] = moved - 1;
                return true;
            }
            if i == 0 {
                return false;
            }
            i -= 1;
        }
    }
    counts[n - 2] += 1;
    counts[n - 1] = last - 1;
    true
}
