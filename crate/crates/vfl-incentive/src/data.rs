//! Dataset ingestion and preparation for vertical federation experiments.
//!
//! The flow is `load_csv` (or `generate_synthetic`) → `preprocess` →
//! `vertical_partition` → optional `randomize_party` / `duplicate_party` →
//! `train_test_split` → `standardize`. Standardization is kept apart from
//! `preprocess` because its statistics come from the training rows only.

use std::collections::{BTreeSet, HashSet};
use std::io::Read;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use vfl_incentive_core::party::check_alignment;
use vfl_incentive_core::{FeatureColumn, Matrix, PartyDataset, Role};

use crate::error::{Error, Result};

/// Cell values treated as missing (after trimming).
pub const MISSING_MARKERS: [&str; 2] = ["?", ""];

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Cat(String),
    Missing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Label,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

/// A typed, rectangular table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: Vec<Column>, rows: Vec<Vec<Cell>>) -> Result<Self> {
        if let Some(i) = rows.iter().position(|r| r.len() != columns.len()) {
            return Err(Error::data(format!(
                "row {} has {} cells, expected {}",
                i + 1,
                rows[i].len(),
                columns.len()
            )));
        }
        let labels = columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Label)
            .count();
        if labels > 1 {
            return Err(Error::data("more than one label column"));
        }
        Ok(Self { columns, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn label_index(&self) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.kind == ColumnKind::Label)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
}

pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Table> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, label_column)
}

/// Parses comma-separated text with a header row. A column whose non-missing
/// cells all parse as numbers is numeric, anything else is categorical.
pub fn read_csv(reader: impl Read, label_column: &str) -> Result<Table> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::data("missing header row"));
    }
    let label = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::data(format!("label column `{label_column}` not found")))?;

    let mut raw: Vec<Vec<String>> = Vec::new();
    for record in csv.records() {
        raw.push(record?.iter().map(str::to_string).collect());
    }

    let numeric: Vec<bool> = (0..header.len())
        .map(|c| {
            raw.iter()
                .map(|r| r[c].as_str())
                .filter(|s| !MISSING_MARKERS.contains(s))
                .all(|s| s.parse::<f64>().is_ok_and(f64::is_finite))
        })
        .collect();
    let columns = header
        .iter()
        .enumerate()
        .map(|(c, name)| Column {
            name: name.clone(),
            kind: if c == label {
                ColumnKind::Label
            } else if numeric[c] {
                ColumnKind::Numeric
            } else {
                ColumnKind::Categorical
            },
        })
        .collect();
    let rows = raw
        .into_iter()
        .map(|r| {
            r.into_iter()
                .enumerate()
                .map(|(c, s)| {
                    if MISSING_MARKERS.contains(&s.as_str()) {
                        Cell::Missing
                    } else if numeric[c] {
                        Cell::Num(s.parse().expect("checked numeric"))
                    } else {
                        Cell::Cat(s)
                    }
                })
                .collect()
        })
        .collect();
    Table::new(columns, rows)
}

/// Row bookkeeping from `preprocess`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningLog {
    pub rows_in: usize,
    pub missing_dropped: usize,
    pub duplicates_dropped: usize,
    pub rows_out: usize,
    /// Raw label value mapped to class 1.
    pub positive_label: String,
}

/// Fully numeric table: encoded features plus 0/1 labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTable {
    pub columns: Vec<FeatureColumn>,
    pub features: Matrix,
    pub labels: Vec<f64>,
    pub label: String,
    pub log: CleaningLog,
}

#[derive(Hash, PartialEq, Eq)]
enum CellKey<'a> {
    Num(u64),
    Cat(&'a str),
}

/// Drops rows with missing cells and exact duplicates, one-hot encodes
/// categorical columns as `<col>=<token>` and maps the label to 0/1.
///
/// Numeric labels must take at most two values (the larger becomes 1).
/// Categorical labels map `yes`/`true`/`1`/`positive` to 1 when present,
/// otherwise the lexicographically last token.
pub fn preprocess(table: &Table) -> Result<EncodedTable> {
    let label = table
        .label_index()
        .ok_or_else(|| Error::data("table has no label column"))?;
    let mut log = CleaningLog {
        rows_in: table.n_rows(),
        ..CleaningLog::default()
    };

    let mut seen = HashSet::new();
    let mut kept: Vec<&Vec<Cell>> = Vec::new();
    for row in &table.rows {
        if row.contains(&Cell::Missing) {
            log.missing_dropped += 1;
            continue;
        }
        let key: Vec<CellKey> = row
            .iter()
            .map(|c| match c {
                Cell::Num(x) => CellKey::Num((x + 0.0).to_bits()),
                Cell::Cat(s) => CellKey::Cat(s),
                Cell::Missing => unreachable!(),
            })
            .collect();
        if seen.insert(key) {
            kept.push(row);
        } else {
            log.duplicates_dropped += 1;
        }
    }
    log.rows_out = kept.len();
    if kept.is_empty() {
        return Err(Error::data("table is empty after cleaning"));
    }

    let (labels, positive) = encode_labels(&kept, label, &table.columns[label].name)?;
    log.positive_label = positive;

    let mut columns = Vec::new();
    let mut blocks: Vec<Vec<f64>> = Vec::new();
    for (c, column) in table.columns.iter().enumerate() {
        match column.kind {
            ColumnKind::Label => {}
            ColumnKind::Numeric => {
                columns.push(FeatureColumn {
                    name: column.name.clone(),
                    source: column.name.clone(),
                    continuous: true,
                });
                blocks.push(kept.iter().map(|r| cell_number(&r[c])).collect());
            }
            ColumnKind::Categorical => {
                let tokens: BTreeSet<&str> = kept.iter().map(|r| cell_token(&r[c])).collect();
                for token in tokens {
                    columns.push(FeatureColumn {
                        name: format!("{}={}", column.name, token),
                        source: column.name.clone(),
                        continuous: false,
                    });
                    blocks.push(
                        kept.iter()
                            .map(|r| if cell_token(&r[c]) == token { 1.0 } else { 0.0 })
                            .collect(),
                    );
                }
            }
        }
    }

    let n = kept.len();
    let mut features = Matrix::zeros(n, columns.len());
    for (j, block) in blocks.iter().enumerate() {
        for (i, &x) in block.iter().enumerate() {
            features.set(i, j, x);
        }
    }
    Ok(EncodedTable {
        columns,
        features,
        labels,
        label: table.columns[label].name.clone(),
        log,
    })
}

fn cell_number(cell: &Cell) -> f64 {
    match cell {
        Cell::Num(x) => *x,
        _ => unreachable!("numeric column holds a non-number"),
    }
}

fn cell_token(cell: &Cell) -> &str {
    match cell {
        Cell::Cat(s) => s,
        _ => unreachable!("categorical column holds a non-token"),
    }
}

fn encode_labels(rows: &[&Vec<Cell>], label: usize, name: &str) -> Result<(Vec<f64>, String)> {
    let non_binary = || Error::data(format!("label column `{name}` is not binary"));
    let numbers: Option<Vec<f64>> = rows
        .iter()
        .map(|r| match &r[label] {
            Cell::Num(x) => Some(*x),
            _ => None,
        })
        .collect();
    if let Some(values) = numbers {
        let mut distinct: Vec<f64> = values.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let positive = match distinct.as_slice() {
            [x] if *x == 0.0 || *x == 1.0 => 1.0,
            [_, hi] => *hi,
            _ => return Err(non_binary()),
        };
        let labels = values
            .iter()
            .map(|&v| f64::from(u8::from(v == positive)))
            .collect();
        return Ok((labels, positive.to_string()));
    }

    let tokens: Vec<String> = rows
        .iter()
        .map(|r| match &r[label] {
            Cell::Num(x) => x.to_string(),
            Cell::Cat(s) => s.clone(),
            Cell::Missing => unreachable!(),
        })
        .collect();
    let distinct: BTreeSet<&str> = tokens.iter().map(String::as_str).collect();
    if distinct.len() > 2 {
        return Err(non_binary());
    }
    let positive = distinct
        .iter()
        .find(|t| ["yes", "true", "1", "positive"].contains(&t.to_ascii_lowercase().as_str()))
        .or_else(|| distinct.iter().next_back())
        .map(|t| t.to_string())
        .ok_or_else(non_binary)?;
    let labels = tokens
        .iter()
        .map(|t| f64::from(u8::from(*t == positive)))
        .collect();
    Ok((labels, positive))
}

/// Which raw columns each party holds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub label: String,
    pub active: String,
    pub parties: Vec<PartySpec>,
    /// Raw columns deliberately left out of the federation.
    #[serde(default)]
    pub drop: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartySpec {
    pub id: String,
    pub columns: Vec<String>,
}

impl PartitionSpec {
    pub fn passive_ids(&self) -> Vec<String> {
        self.parties
            .iter()
            .filter(|p| p.id != self.active)
            .map(|p| p.id.clone())
            .collect()
    }
}

/// Splits an encoded table by raw column ownership. One-hot columns follow
/// their source column; the active party also receives the labels.
pub fn vertical_partition(table: &EncodedTable, spec: &PartitionSpec) -> Result<Vec<PartyDataset>> {
    if spec.label != table.label {
        return Err(Error::data(format!(
            "partition label `{}` does not match table label `{}`",
            spec.label, table.label
        )));
    }
    if spec.parties.iter().filter(|p| p.id == spec.active).count() != 1 {
        return Err(Error::data(format!(
            "active party `{}` must appear exactly once",
            spec.active
        )));
    }
    let mut ids = HashSet::new();
    for party in &spec.parties {
        if !ids.insert(party.id.as_str()) {
            return Err(Error::data(format!("party `{}` listed twice", party.id)));
        }
    }

    let sources: BTreeSet<&str> = table.columns.iter().map(|c| c.source.as_str()).collect();
    let mut assigned: BTreeSet<&str> = BTreeSet::new();
    let listed = spec
        .parties
        .iter()
        .flat_map(|p| p.columns.iter())
        .chain(spec.drop.iter());
    for column in listed {
        if column == &spec.label {
            return Err(Error::data(format!(
                "label column `{column}` cannot be assigned"
            )));
        }
        if !sources.contains(column.as_str()) {
            return Err(Error::data(format!(
                "unknown column `{column}` in partition"
            )));
        }
        if !assigned.insert(column) {
            return Err(Error::data(format!(
                "column `{column}` assigned more than once"
            )));
        }
    }
    if let Some(missing) = sources.iter().find(|s| !assigned.contains(*s)) {
        return Err(Error::data(format!(
            "column `{missing}` is not assigned to any party"
        )));
    }

    let n = table.features.rows();
    let row_index: Vec<usize> = (0..n).collect();
    spec.parties
        .iter()
        .map(|party| {
            let picked: Vec<usize> = table
                .columns
                .iter()
                .enumerate()
                .filter(|(_, c)| party.columns.contains(&c.source))
                .map(|(j, _)| j)
                .collect();
            let mut features = Matrix::zeros(n, picked.len());
            for i in 0..n {
                for (k, &j) in picked.iter().enumerate() {
                    features.set(i, k, table.features.get(i, j));
                }
            }
            let columns = picked.iter().map(|&j| table.columns[j].clone()).collect();
            let active = party.id == spec.active;
            Ok(PartyDataset::new(
                party.id.clone(),
                if active { Role::Active } else { Role::Passive },
                features,
                columns,
                active.then(|| table.labels.clone()),
                row_index.clone(),
            )?)
        })
        .collect()
}

/// One seeded row permutation applied to every party; the first
/// `floor(ratio * n)` rows train, the rest test.
pub fn train_test_split(
    parties: &[PartyDataset],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<PartyDataset>, Vec<PartyDataset>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::data(format!("split ratio {ratio} outside (0, 1)")));
    }
    check_alignment(parties)?;
    let n = parties.first().map_or(0, PartyDataset::rows);
    if n < 2 {
        return Err(Error::data("need at least two rows to split"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * n as f64 + 1e-9).floor() as usize).clamp(1, n - 1);
    let (train, test) = order.split_at(n_train);
    Ok((
        parties.iter().map(|p| p.select_rows(train)).collect(),
        parties.iter().map(|p| p.select_rows(test)).collect(),
    ))
}

/// Per-column statistics used by `standardize`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub party_id: String,
    pub column: String,
    pub mean: f64,
    pub std: f64,
}

/// Scales continuous columns to zero mean and unit (population) variance using
/// training statistics; constant columns become all zeros in both splits.
pub fn standardize(
    train: &mut [PartyDataset],
    test: &mut [PartyDataset],
) -> Result<Vec<ColumnScale>> {
    if train.len() != test.len() {
        return Err(Error::data("train and test hold different parties"));
    }
    let mut scales = Vec::new();
    for (tr, te) in train.iter_mut().zip(test.iter_mut()) {
        if tr.party_id != te.party_id || tr.width() != te.width() {
            return Err(Error::data(format!(
                "party `{}` differs between splits",
                tr.party_id
            )));
        }
        let n = tr.rows() as f64;
        for j in 0..tr.width() {
            if !tr.columns[j].continuous {
                continue;
            }
            let values = tr.features.column(j);
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            let constant = std <= 1e-12 * mean.abs().max(1.0);
            for m in [&mut tr.features, &mut te.features] {
                for i in 0..m.rows() {
                    let x = m.get(i, j);
                    m.set(i, j, if constant { 0.0 } else { (x - mean) / std });
                }
            }
            scales.push(ColumnScale {
                party_id: tr.party_id.clone(),
                column: tr.columns[j].name.clone(),
                mean,
                std: if constant { 0.0 } else { std },
            });
        }
    }
    Ok(scales)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub n_samples: usize,
    pub n_features: usize,
    /// Defaults to half of `n_features`.
    pub n_informative: Option<usize>,
    pub noise_sigma: f64,
    /// Distance between the two class means.
    pub class_separation: f64,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            n_features: 20,
            n_informative: None,
            noise_sigma: 0.5,
            class_separation: 2.0,
            seed: 0,
        }
    }
}

pub const SYNTHETIC_LABEL: &str = "target";

/// Balanced two-class data: the first `n_informative` features are drawn from
/// unit-variance Gaussian clusters whose means sit `class_separation` apart
/// along a random direction, the rest are standard Gaussian noise, and every
/// feature then gets `N(0, noise_sigma^2)` noise. Columns are `feature_1` ..
/// `feature_n` plus the `target` label.
pub fn generate_synthetic(params: &SyntheticParams) -> Result<Table> {
    let informative = params.n_informative.unwrap_or(params.n_features / 2);
    if params.n_features == 0 {
        return Err(Error::Usage("need at least one feature".into()));
    }
    if informative > params.n_features {
        return Err(Error::Usage(format!(
            "{informative} informative features but only {} features",
            params.n_features
        )));
    }
    if params.n_samples < 2 {
        return Err(Error::Usage("need at least two samples".into()));
    }
    if !(params.noise_sigma.is_finite() && params.noise_sigma >= 0.0) {
        return Err(Error::Usage("noise sigma must be non-negative".into()));
    }
    if !(params.class_separation.is_finite() && params.class_separation >= 0.0) {
        return Err(Error::Usage("class separation must be non-negative".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut direction: Vec<f64> = (0..informative)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        direction.iter_mut().for_each(|x| *x /= norm);
    }

    let n = params.n_samples;
    let mut labels: Vec<f64> = (0..n).map(|i| if i < n / 2 { 1.0 } else { 0.0 }).collect();
    labels.shuffle(&mut rng);

    let half = params.class_separation / 2.0;
    let rows = labels
        .iter()
        .map(|&y| {
            let sign = if y == 1.0 { 1.0 } else { -1.0 };
            let mut row: Vec<Cell> = (0..params.n_features)
                .map(|j| {
                    let mut x: f64 = rng.sample(StandardNormal);
                    if j < informative {
                        x += sign * half * direction[j];
                    }
                    let noise: f64 = rng.sample(StandardNormal);
                    Cell::Num(x + params.noise_sigma * noise)
                })
                .collect();
            row.push(Cell::Num(y));
            row
        })
        .collect();

    let mut columns: Vec<Column> = (1..=params.n_features)
        .map(|j| Column {
            name: format!("feature_{j}"),
            kind: ColumnKind::Numeric,
        })
        .collect();
    columns.push(Column {
        name: SYNTHETIC_LABEL.into(),
        kind: ColumnKind::Label,
    });
    Table::new(columns, rows)
}

/// Writes a table as CSV with a header row; missing cells are written as `?`.
pub fn write_csv(table: &Table, writer: impl std::io::Write) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(table.columns.iter().map(|c| c.name.as_str()))?;
    for row in &table.rows {
        csv.write_record(row.iter().map(|cell| match cell {
            Cell::Num(x) => x.to_string(),
            Cell::Cat(s) => s.clone(),
            Cell::Missing => "?".to_string(),
        }))?;
    }
    csv.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

/// Replaces a passive party's features with independent standard Gaussians.
pub fn randomize_party(party: &PartyDataset, seed: u64) -> Result<PartyDataset> {
    if party.is_active() {
        return Err(Error::data("cannot randomize active party"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = party.features.clone();
    for x in features.data_mut() {
        *x = rng.sample(StandardNormal);
    }
    let columns = party
        .columns
        .iter()
        .map(|c| FeatureColumn {
            continuous: true,
            ..c.clone()
        })
        .collect();
    Ok(PartyDataset::new(
        party.party_id.clone(),
        party.role,
        features,
        columns,
        None,
        party.row_index.clone(),
    )?)
}

/// Copies a passive party's features under a new, unused identifier.
pub fn duplicate_party(
    source: &PartyDataset,
    new_id: &str,
    federation: &[PartyDataset],
) -> Result<PartyDataset> {
    if source.is_active() {
        return Err(Error::data("cannot duplicate the active party"));
    }
    if federation.iter().any(|p| p.party_id == new_id) {
        return Err(Error::data(format!("party `{new_id}` already exists")));
    }
    let mut copy = source.clone();
    copy.party_id = new_id.to_string();
    Ok(copy)
}
