//! Weighted binary datasets and family views.
//!
//! A [`Dataset`] is an immutable table of complete 0/1 assignments to named
//! variables, each row carrying a positive integer multiplicity. Learning
//! operations work through a [`FamilyView`], which designates one column as
//! the child and the rest (or an explicit subset) as parents.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Header cell that marks the optional multiplicity column in CSV files.
pub const WEIGHT_COLUMN: &str = "#weight";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot access {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("empty file: {0}")]
    Empty(String),
    #[error("duplicate column name {0:?} in header")]
    DuplicateColumn(String),
    #[error("unknown child column {0:?}")]
    UnknownChild(String),
    #[error("row {row}, column {column:?}: expected 0 or 1, got {value:?}")]
    NonBinaryCell {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column {column:?}: bad weight {value:?} (positive integer required)")]
    BadWeight {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row} has {got} cells, expected {expected}")]
    RaggedRow {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("divisor {k} leaves an empty context over cardinalities 0..={n}")]
    EmptyContext { n: usize, k: usize },
    #[error("invalid generator argument: {0}")]
    BadArgument(String),
}

/// Immutable weighted table of complete 0/1 records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    variables: Vec<String>,
    records: Vec<Vec<u8>>,
    weights: Vec<u64>,
}

impl Dataset {
    /// Builds a dataset, checking record shape, binary cells and weights.
    pub fn new(
        variables: Vec<String>,
        records: Vec<Vec<u8>>,
        weights: Vec<u64>,
    ) -> Result<Self, DataError> {
        let mut seen = std::collections::HashSet::new();
        for v in &variables {
            if !seen.insert(v.clone()) {
                return Err(DataError::DuplicateColumn(v.clone()));
            }
        }
        for (i, rec) in records.iter().enumerate() {
            if rec.len() != variables.len() {
                return Err(DataError::RaggedRow {
                    row: i + 1,
                    got: rec.len(),
                    expected: variables.len(),
                });
            }
            for (j, &cell) in rec.iter().enumerate() {
                if cell > 1 {
                    return Err(DataError::NonBinaryCell {
                        row: i + 1,
                        column: variables[j].clone(),
                        value: cell.to_string(),
                    });
                }
            }
        }
        if weights.len() != records.len() || weights.iter().any(|&w| w == 0) {
            return Err(DataError::BadArgument(
                "one positive weight per record required".into(),
            ));
        }
        Ok(Dataset {
            variables,
            records,
            weights,
        })
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    pub fn record(&self, i: usize) -> &[u8] {
        &self.records[i]
    }

    pub fn weight(&self, i: usize) -> u64 {
        self.weights[i]
    }

    pub fn total_weight(&self) -> u64 {
        self.weights.iter().sum()
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    /// Writes the dataset as CSV. The `#weight` column is emitted only when
    /// some record has multiplicity other than one.
    pub fn save_csv(&self, path: &Path) -> Result<(), DataError> {
        let with_weights = self.weights.iter().any(|&w| w != 1);
        let mut out = String::new();
        let mut header: Vec<&str> = self.variables.iter().map(|s| s.as_str()).collect();
        if with_weights {
            header.push(WEIGHT_COLUMN);
        }
        writeln!(out, "{}", header.join(",")).unwrap();
        for (rec, &w) in self.records.iter().zip(&self.weights) {
            let mut cells: Vec<String> = rec.iter().map(|c| c.to_string()).collect();
            if with_weights {
                cells.push(w.to_string());
            }
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
        std::fs::write(path, out).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Parses a CSV file: header row of unique names, body cells 0/1,
    /// optional `#weight` column of positive integers.
    pub fn load_csv(path: &Path) -> Result<Arc<Dataset>, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines
            .next()
            .ok_or_else(|| DataError::Empty(path.display().to_string()))?;
        let header: Vec<String> = header_line
            .trim_end_matches('\r')
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let weight_col = header.iter().position(|h| h == WEIGHT_COLUMN);
        let variables: Vec<String> = header
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != weight_col)
            .map(|(_, h)| h.clone())
            .collect();
        let mut records = Vec::new();
        let mut weights = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let row = lineno + 1;
            let cells: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
            if cells.len() != header.len() {
                return Err(DataError::RaggedRow {
                    row,
                    got: cells.len(),
                    expected: header.len(),
                });
            }
            let mut rec = Vec::with_capacity(variables.len());
            let mut w = 1u64;
            for (i, cell) in cells.iter().enumerate() {
                let cell = cell.trim();
                if Some(i) == weight_col {
                    w = cell.parse::<u64>().ok().filter(|&w| w > 0).ok_or_else(|| {
                        DataError::BadWeight {
                            row,
                            column: WEIGHT_COLUMN.into(),
                            value: cell.into(),
                        }
                    })?;
                } else {
                    rec.push(match cell {
                        "0" => 0,
                        "1" => 1,
                        other => {
                            return Err(DataError::NonBinaryCell {
                                row,
                                column: header[i].clone(),
                                value: other.into(),
                            })
                        }
                    });
                }
            }
            records.push(rec);
            weights.push(w);
        }
        Ok(Arc::new(Dataset::new(variables, records, weights)?))
    }
}

/// A partial instantiation: variable index to value.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Query(pub BTreeMap<usize, u8>);

impl Query {
    pub fn empty() -> Self {
        Query(BTreeMap::new())
    }

    pub fn set(mut self, var: usize, value: u8) -> Self {
        self.0.insert(var, value);
        self
    }
}

/// A dataset viewed as one family: a designated child column and an ordered
/// set of parent columns.
#[derive(Debug, Clone)]
pub struct FamilyView {
    dataset: Arc<Dataset>,
    child: usize,
    parents: Vec<usize>,
}

impl FamilyView {
    pub fn new(dataset: Arc<Dataset>, child: usize, parents: Vec<usize>) -> Self {
        assert!(child < dataset.variables().len());
        assert!(!parents.contains(&child), "child must not be a parent");
        FamilyView {
            dataset,
            child,
            parents,
        }
    }

    /// View with the named column as the child and every other column, in
    /// header order, as parents.
    pub fn with_child(dataset: Arc<Dataset>, child: &str) -> Result<Self, DataError> {
        let child_idx = dataset
            .var_index(child)
            .ok_or_else(|| DataError::UnknownChild(child.to_string()))?;
        let parents = (0..dataset.variables().len())
            .filter(|&i| i != child_idx)
            .collect();
        Ok(FamilyView::new(dataset, child_idx, parents))
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn child(&self) -> usize {
        self.child
    }

    pub fn child_name(&self) -> &str {
        &self.dataset.variables()[self.child]
    }

    pub fn parents(&self) -> &[usize] {
        &self.parents
    }

    pub fn parent_names(&self) -> Vec<String> {
        self.parents
            .iter()
            .map(|&i| self.dataset.variables()[i].clone())
            .collect()
    }

    pub fn num_parents(&self) -> usize {
        self.parents.len()
    }

    /// Parent bits of record `i`, in parent order.
    pub fn parent_bits(&self, i: usize) -> Vec<u8> {
        let rec = self.dataset.record(i);
        self.parents.iter().map(|&p| rec[p]).collect()
    }

    pub fn child_bit(&self, i: usize) -> u8 {
        self.dataset.record(i)[self.child]
    }

    pub fn weight(&self, i: usize) -> u64 {
        self.dataset.weight(i)
    }

    pub fn num_records(&self) -> usize {
        self.dataset.num_records()
    }

    pub fn total_weight(&self) -> u64 {
        self.dataset.total_weight()
    }

    /// Sum of weights of records consistent with the partial instantiation.
    /// The empty query counts the whole dataset.
    pub fn count(&self, q: &Query) -> u64 {
        debug_assert!(q
            .0
            .keys()
            .all(|&v| v == self.child || self.parents.contains(&v)));
        (0..self.dataset.num_records())
            .filter(|&i| {
                let rec = self.dataset.record(i);
                q.0.iter().all(|(&v, &val)| rec[v] == val)
            })
            .map(|i| self.dataset.weight(i))
            .sum()
    }
}

/// Samples a family whose child depends only on the cardinality of its
/// parents. A fair coin picks one of the two contexts (fraction of 1-parents
/// at most `1/k` versus above), a cardinality is drawn uniformly from the
/// context's feasible set, a parent vector of that cardinality is drawn
/// uniformly, and the child is Bernoulli(0.05) in the low context and
/// Bernoulli(0.95) otherwise.
pub fn gen_cardinality(
    n: usize,
    k: usize,
    count: usize,
    seed: u64,
) -> Result<FamilyView, DataError> {
    if n < 1 || k < 1 || count < 1 {
        return Err(DataError::BadArgument(
            "n, k and count must all be at least 1".into(),
        ));
    }
    // c/n <= 1/k  <=>  c*k <= n
    let low: Vec<usize> = (0..=n).filter(|&c| c * k <= n).collect();
    let high: Vec<usize> = (0..=n).filter(|&c| c * k > n).collect();
    if low.is_empty() || high.is_empty() {
        return Err(DataError::EmptyContext { n, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let in_low = rng.gen_bool(0.5);
        let cards = if in_low { &low } else { &high };
        let c = cards[rng.gen_range(0..cards.len())];
        let mut rec = vec![0u8; n + 1];
        for idx in sample(&mut rng, n, c) {
            rec[idx] = 1;
        }
        let p1 = if in_low { 0.05 } else { 0.95 };
        rec[n] = u8::from(rng.gen_bool(p1));
        records.push(rec);
    }
    let mut variables: Vec<String> = (1..=n).map(|i| format!("U{i}")).collect();
    variables.push("X".into());
    let weights = vec![1u64; count];
    let dataset = Arc::new(Dataset::new(variables, records, weights)?);
    FamilyView::with_child(dataset, "X")
}

/// The five-record dataset used throughout the learning tests.
#[cfg(test)]
pub(crate) fn toy_dataset() -> Arc<Dataset> {
    Arc::new(
        Dataset::new(
            vec!["U1".into(), "U2".into(), "X".into()],
            vec![
                vec![0, 0, 1],
                vec![1, 0, 0],
                vec![1, 1, 0],
                vec![0, 1, 1],
                vec![1, 1, 1],
            ],
            vec![1; 5],
        )
        .unwrap(),
    )
}
