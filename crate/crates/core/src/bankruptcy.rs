//! Claims problems and division rules.
//!
//! A problem is an estate `E >= 0` and claims `d_i >= 0` with `E <= sum(d)`.
//! Rules never require sorted claims: they work on a sorted view internally and
//! report payouts in creditor order.
//!
//! CEA and CEL are both driven by [`solve_level`], which inverts the
//! piecewise-linear map `lambda -> sum(min(lambda, cap_i))` exactly by scanning
//! the sorted breakpoints.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Division rule tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Proportional,
    Cea,
    Cel,
    Talmud,
}

impl Rule {
    pub const ALL: [Rule; 4] = [Rule::Proportional, Rule::Cea, Rule::Cel, Rule::Talmud];

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Proportional => "proportional",
            Rule::Cea => "cea",
            Rule::Cel => "cel",
            Rule::Talmud => "talmud",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "proportional" | "prop" => Ok(Rule::Proportional),
            "cea" => Ok(Rule::Cea),
            "cel" => Ok(Rule::Cel),
            "talmud" => Ok(Rule::Talmud),
            _ => Err(Error::InvalidProblem("unknown rule")),
        }
    }
}

/// A canonical claims problem: `0 <= estate <= sum(claims)`, all claims `>= 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankruptcyProblem {
    creditors: Vec<String>,
    estate: f64,
    claims: Vec<f64>,
}

impl BankruptcyProblem {
    pub fn new(creditors: Vec<String>, estate: f64, claims: Vec<f64>) -> Result<Self> {
        if creditors.is_empty() {
            return Err(Error::NoCreditors);
        }
        if creditors.len() != claims.len() {
            return Err(Error::LengthMismatch {
                creditors: creditors.len(),
                claims: claims.len(),
            });
        }
        if !estate.is_finite() || claims.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite);
        }
        for (i, id) in creditors.iter().enumerate() {
            if creditors[..i].contains(id) {
                return Err(Error::DuplicateCreditor(id.clone()));
            }
        }
        if estate < 0.0 {
            return Err(Error::InvalidProblem("negative estate"));
        }
        if claims.iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidProblem("negative claim"));
        }
        let total: f64 = claims.iter().sum();
        // Rounding noise from callers that compute the estate is absorbed.
        if estate > total + 1e-12 * total.max(1.0) {
            return Err(Error::InvalidProblem("estate exceeds total claims"));
        }
        Ok(Self {
            creditors,
            estate: estate.min(total),
            claims,
        })
    }

    /// Builds a problem with creditors named `1..=n`.
    pub fn from_claims(estate: f64, claims: &[f64]) -> Result<Self> {
        let creditors = (1..=claims.len()).map(|i| i.to_string()).collect();
        Self::new(creditors, estate, claims.to_vec())
    }

    pub fn creditors(&self) -> &[String] {
        &self.creditors
    }

    pub fn estate(&self) -> f64 {
        self.estate
    }

    pub fn claims(&self) -> &[f64] {
        &self.claims
    }

    pub fn len(&self) -> usize {
        self.claims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }

    pub fn total_claims(&self) -> f64 {
        self.claims.iter().sum()
    }
}

/// Adjustments made while turning raw inputs into a canonical problem.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalizationLog {
    /// Creditors whose raw claim was `<= 0`.
    pub clamped_claims: Vec<String>,
    /// Raw estate when it was negative and clamped to 0.
    pub clamped_estate: Option<f64>,
    /// Raw estate in excess of total (clamped) claims.
    pub surplus: f64,
}

impl NormalizationLog {
    pub fn is_empty(&self) -> bool {
        self.clamped_claims.is_empty() && self.clamped_estate.is_none() && self.surplus == 0.0
    }
}

/// Turns raw (possibly degenerate) inputs into a canonical problem.
///
/// Claims `<= 0` become 0, a negative estate becomes 0, and an estate above the
/// total claim is cut down to it with the excess recorded as `surplus`.
pub fn normalize_problem(
    raw_estate: f64,
    raw_claims: &[f64],
    creditors: &[String],
) -> Result<(BankruptcyProblem, NormalizationLog)> {
    if creditors.is_empty() {
        return Err(Error::NoCreditors);
    }
    if raw_claims.len() != creditors.len() {
        return Err(Error::LengthMismatch {
            creditors: creditors.len(),
            claims: raw_claims.len(),
        });
    }
    if !raw_estate.is_finite() || raw_claims.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite);
    }

    let mut log = NormalizationLog::default();
    let claims: Vec<f64> = raw_claims
        .iter()
        .zip(creditors)
        .map(|(&c, id)| {
            if c <= 0.0 {
                log.clamped_claims.push(id.clone());
                0.0
            } else {
                c
            }
        })
        .collect();

    let mut estate = raw_estate;
    if estate < 0.0 {
        log.clamped_estate = Some(raw_estate);
        estate = 0.0;
    }
    let total: f64 = claims.iter().sum();
    if estate > total {
        log.surplus = estate - total;
        estate = total;
    }
    let problem = BankruptcyProblem::new(creditors.to_vec(), estate, claims)?;
    Ok((problem, log))
}

/// Payouts produced by a rule, in creditor order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayoutVector {
    pub creditors: Vec<String>,
    pub payouts: Vec<f64>,
    pub rule: Rule,
    /// Canonical estate the rule divided.
    pub estate: f64,
    /// Amount paid beyond the claims when the raw estate exceeded them.
    pub surplus_paid: f64,
    /// Raw estate nobody could receive (surplus with every claim at 0).
    pub undistributed: f64,
    pub clamped_claims: Vec<String>,
}

impl PayoutVector {
    fn canonical(problem: &BankruptcyProblem, rule: Rule, payouts: Vec<f64>) -> Self {
        Self {
            creditors: problem.creditors.clone(),
            payouts,
            rule,
            estate: problem.estate,
            surplus_paid: 0.0,
            undistributed: 0.0,
            clamped_claims: Vec::new(),
        }
    }

    pub fn total(&self) -> f64 {
        self.payouts.iter().sum()
    }
}

/// Returns `lambda` with `sum(min(lambda, cap_i)) == target`.
///
/// Exact up to floating-point rounding: between consecutive sorted caps the
/// filled amount is affine in `lambda`, so the level is read off the first
/// segment that can hold the target.
pub fn solve_level(caps: &[f64], target: f64) -> Result<f64> {
    if caps.iter().any(|c| !c.is_finite()) || !target.is_finite() {
        return Err(Error::NonFinite);
    }
    if caps.iter().any(|&c| c < 0.0) {
        return Err(Error::InvalidProblem("negative cap"));
    }
    let total: f64 = caps.iter().sum();
    if target < 0.0 || target > total + 1e-12 * total.max(1.0) {
        return Err(Error::TargetOutOfRange { target, total });
    }
    let mut sorted = caps.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    Ok(level_sorted(&sorted, target))
}

fn level_sorted(sorted: &[f64], target: f64) -> f64 {
    let n = sorted.len();
    let mut filled = 0.0;
    for (k, &cap) in sorted.iter().enumerate() {
        let level = (target - filled) / (n - k) as f64;
        if level <= cap {
            return level.max(0.0);
        }
        filled += cap;
    }
    sorted.last().copied().unwrap_or(0.0)
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    sorted
}

fn proportional_awards(estate: f64, claims: &[f64]) -> Vec<f64> {
    let total: f64 = claims.iter().sum();
    if total <= 0.0 {
        return alloc::vec![0.0; claims.len()];
    }
    claims.iter().map(|&d| estate * d / total).collect()
}

fn cea_awards(estate: f64, claims: &[f64]) -> Vec<f64> {
    let level = level_sorted(&sorted_copy(claims), estate);
    claims.iter().map(|&d| d.min(level)).collect()
}

fn cel_awards(estate: f64, claims: &[f64]) -> Vec<f64> {
    let total: f64 = claims.iter().sum();
    let loss = (total - estate).max(0.0);
    let level = level_sorted(&sorted_copy(claims), loss);
    claims.iter().map(|&d| d - d.min(level)).collect()
}

fn talmud_awards(estate: f64, claims: &[f64]) -> Vec<f64> {
    let halves: Vec<f64> = claims.iter().map(|&d| d / 2.0).collect();
    let half_total: f64 = halves.iter().sum();
    if estate <= half_total {
        cea_awards(estate, &halves)
    } else {
        let rest = cel_awards(estate - half_total, &halves);
        halves.iter().zip(rest).map(|(h, r)| h + r).collect()
    }
}

pub fn divide_proportional(problem: &BankruptcyProblem) -> PayoutVector {
    let payouts = proportional_awards(problem.estate, &problem.claims);
    PayoutVector::canonical(problem, Rule::Proportional, payouts)
}

pub fn divide_cea(problem: &BankruptcyProblem) -> PayoutVector {
    let payouts = cea_awards(problem.estate, &problem.claims);
    PayoutVector::canonical(problem, Rule::Cea, payouts)
}

pub fn divide_cel(problem: &BankruptcyProblem) -> PayoutVector {
    let payouts = cel_awards(problem.estate, &problem.claims);
    PayoutVector::canonical(problem, Rule::Cel, payouts)
}

/// Talmud rule via half claims: CEA on `d/2` while the estate is at most
/// `sum(d)/2`, otherwise `d/2` plus CEL of the remainder on `d/2`.
pub fn divide_talmud(problem: &BankruptcyProblem) -> PayoutVector {
    let payouts = talmud_awards(problem.estate, &problem.claims);
    if cfg!(debug_assertions) {
        let stepwise = talmud_sequential(problem);
        let tol = 1e-9 * problem.total_claims().max(1.0);
        debug_assert!(
            payouts
                .iter()
                .zip(&stepwise)
                .all(|(a, b)| (a - b).abs() <= tol),
            "talmud decomposition {payouts:?} disagrees with stepwise division {stepwise:?}"
        );
    }
    PayoutVector::canonical(problem, Rule::Talmud, payouts)
}

/// Talmud rule computed the long way round.
///
/// Creditors are ordered by claim. The estate is first spread equally until the
/// lowest creditor holds half its claim, that creditor drops out, and so on.
/// Anything left is then paid from the top down: the creditors with the
/// largest remaining loss are topped up until their loss matches the next one.
pub fn talmud_sequential(problem: &BankruptcyProblem) -> Vec<f64> {
    let claims = &problem.claims;
    let n = claims.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| claims[a].total_cmp(&claims[b]));

    let mut payouts = alloc::vec![0.0; n];
    let mut left = problem.estate;

    // Equal shares until everyone holds half a claim.
    let mut common = 0.0;
    let mut retired = 0;
    while retired < n && left > 0.0 {
        let half = claims[order[retired]] / 2.0;
        let active = (n - retired) as f64;
        let cost = (half - common) * active;
        if cost <= left {
            left -= cost;
            common = half;
            payouts[order[retired]] = half;
            retired += 1;
        } else {
            common += left / active;
            left = 0.0;
        }
    }
    for &i in &order[retired..] {
        payouts[i] = common;
    }
    if retired < n || left <= 0.0 {
        return payouts;
    }

    // Everyone is at half; top up the largest losses.
    order.reverse();
    let loss = |i: usize| claims[i] / 2.0;
    let mut level = loss(order[0]);
    let mut group = 0;
    while group < n && loss(order[group]) >= level {
        group += 1;
    }
    while left > 0.0 && level > 0.0 {
        let next = if group < n { loss(order[group]) } else { 0.0 };
        let cost = (level - next) * group as f64;
        if cost <= left {
            left -= cost;
            level = next;
            while group < n && loss(order[group]) >= level {
                group += 1;
            }
        } else {
            level -= left / group as f64;
            left = 0.0;
        }
    }
    for &i in &order[..group] {
        payouts[i] = claims[i] - level;
    }
    payouts
}

pub fn divide(problem: &BankruptcyProblem, rule: Rule) -> PayoutVector {
    match rule {
        Rule::Proportional => divide_proportional(problem),
        Rule::Cea => divide_cea(problem),
        Rule::Cel => divide_cel(problem),
        Rule::Talmud => divide_talmud(problem),
    }
}

/// Normalizes raw inputs, divides with `rule`, then hands out any surplus.
///
/// Surplus over the total claim is split equally among creditors with a
/// positive claim. With no positive claim it stays undistributed.
pub fn allocate(
    raw_estate: f64,
    raw_claims: &[f64],
    creditors: &[String],
    rule: Rule,
) -> Result<(PayoutVector, NormalizationLog)> {
    let (problem, log) = normalize_problem(raw_estate, raw_claims, creditors)?;
    let mut payout = divide(&problem, rule);
    payout.clamped_claims = log.clamped_claims.clone();
    if log.surplus > 0.0 {
        let eligible = problem.claims.iter().filter(|&&d| d > 0.0).count();
        if eligible == 0 {
            payout.undistributed = log.surplus;
        } else {
            let share = log.surplus / eligible as f64;
            for (p, &d) in payout.payouts.iter_mut().zip(&problem.claims) {
                if d > 0.0 {
                    *p += share;
                }
            }
            payout.surplus_paid = log.surplus;
        }
    }
    Ok((payout, log))
}
