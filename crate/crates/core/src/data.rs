//! Tables, CSV ingestion, train/test splitting and training batches.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{fit_schema, FeatureSchema, DEFAULT_BINS};
use crate::error::{CgmError, Result};
use crate::rng::{substream, Stream};
use crate::value::{Column, Kind, Value};

pub const DEFAULT_MISSING_MARKERS: &[&str] = &["", "NA"];

/// Column-typed table; missing cells are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    header: Vec<String>,
    columns: Vec<Column>,
}

impl Table {
    pub fn new(header: Vec<String>, columns: Vec<Column>) -> Result<Self> {
        if header.len() != columns.len() {
            return Err(CgmError::contract("header and column count differ"));
        }
        let mut seen = HashSet::new();
        for h in &header {
            if !seen.insert(h) {
                return Err(CgmError::Schema(format!("duplicate column {h:?}")));
            }
        }
        if let Some(first) = columns.first() {
            if columns.iter().any(|c| c.len() != first.len()) {
                return Err(CgmError::contract("columns have unequal lengths"));
            }
        }
        Ok(Table { header, columns })
    }

    pub fn empty(header: Vec<String>, kinds: &[Kind]) -> Result<Self> {
        Table::new(header, kinds.iter().map(|&k| Column::empty(k)).collect())
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.index_of(name).map(|i| &self.columns[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn kinds(&self) -> Vec<Kind> {
        self.columns.iter().map(Column::kind).collect()
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> Vec<Value> {
        self.columns.iter().map(|c| c.get(i)).collect()
    }

    pub fn push_row(&mut self, row: Vec<Value>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(CgmError::contract(format!(
                "row has {} values, table has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        for (i, (c, v)) in self.columns.iter().zip(&row).enumerate() {
            let ok = matches!(
                (c.kind(), v),
                (_, Value::Missing) | (Kind::Categorical, Value::Cat(_)) | (Kind::Numerical, Value::Num(_))
            );
            if !ok {
                return Err(CgmError::Schema(format!(
                    "value {v:?} does not fit column {:?}",
                    self.header[i]
                )));
            }
        }
        for (c, v) in self.columns.iter_mut().zip(row) {
            c.push(v).expect("kind checked");
        }
        Ok(())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Table {
        Table {
            header: self.header.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
        }
    }

    /// Append the rows of `other`, which must share the header and kinds.
    pub fn extend(&mut self, other: &Table) -> Result<()> {
        if other.header != self.header || other.kinds() != self.kinds() {
            return Err(CgmError::SchemaMismatch(column_diff(&self.header, &other.header)));
        }
        for i in 0..other.n_rows() {
            self.push_row(other.row(i))?;
        }
        Ok(())
    }

    /// Fit one schema per column on this table.
    pub fn fit_schemas(&self, hints: Option<&SchemaHints>) -> Result<Vec<FeatureSchema>> {
        self.header
            .iter()
            .zip(&self.columns)
            .map(|(name, col)| {
                let bins = hints
                    .and_then(|h| h.get(name))
                    .and_then(|h| h.bins)
                    .unwrap_or(DEFAULT_BINS);
                fit_schema(name, col, bins)
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(&self.header).map_err(csv_err)?;
        for i in 0..self.n_rows() {
            let rec: Vec<String> = self.row(i).iter().map(Value::to_string).collect();
            wtr.write_record(&rec).map_err(csv_err)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Human-readable difference between two column lists.
pub fn column_diff(expected: &[String], found: &[String]) -> String {
    let missing: Vec<&String> = expected.iter().filter(|c| !found.contains(c)).collect();
    let extra: Vec<&String> = found.iter().filter(|c| !expected.contains(c)).collect();
    if missing.is_empty() && extra.is_empty() {
        format!("column order or types differ: expected {expected:?}, found {found:?}")
    } else {
        format!("missing columns {missing:?}, unexpected columns {extra:?}")
    }
}

fn csv_err(e: csv::Error) -> CgmError {
    let line = e.position().map_or(0, |p| p.line());
    CgmError::Csv {
        line,
        msg: e.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnHint {
    pub kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
}

/// Schema hints: `{column: {kind, bins?}}`.
pub type SchemaHints = BTreeMap<String, ColumnHint>;

pub fn load_hints(path: &Path) -> Result<SchemaHints> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub missing_markers: Vec<String>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            missing_markers: DEFAULT_MISSING_MARKERS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Parse an RFC-4180 CSV with a header row. Columns are typed by `hints`
/// when given, otherwise numerical iff every present cell parses as a
/// finite number.
pub fn read_csv<R: Read>(r: R, hints: Option<&SchemaHints>, opts: &CsvOptions) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h) {
            return Err(CgmError::Csv {
                line: 1,
                msg: format!("duplicate header {h:?}"),
            });
        }
    }
    if let Some(h) = hints {
        if let Some(unknown) = h.keys().find(|k| !header.contains(k)) {
            return Err(CgmError::UnknownColumn(unknown.clone()));
        }
    }
    let mut raw: Vec<Vec<Option<String>>> = vec![Vec::new(); header.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        for (col, cell) in raw.iter_mut().zip(rec.iter()) {
            let missing = opts.missing_markers.iter().any(|m| m == cell);
            col.push(if missing { None } else { Some(cell.to_string()) });
        }
    }
    let mut columns = Vec::with_capacity(header.len());
    for (name, cells) in header.iter().zip(raw) {
        let hinted = hints.and_then(|h| h.get(name)).map(|h| h.kind);
        let parsed: Option<Vec<Option<f64>>> = cells
            .iter()
            .map(|c| match c {
                None => Some(None),
                Some(s) => s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).map(Some),
            })
            .collect();
        let col = match (hinted, parsed) {
            (Some(Kind::Categorical), _) => Column::Categorical(cells),
            (Some(Kind::Numerical), Some(nums)) | (None, Some(nums)) => Column::Numerical(nums),
            (Some(Kind::Numerical), None) => {
                return Err(CgmError::Schema(format!(
                    "column {name:?} is hinted numerical but has non-numeric cells"
                )))
            }
            (None, None) => Column::Categorical(cells),
        };
        columns.push(col);
    }
    Table::new(header, columns)
}

pub fn load_csv(path: &Path, hints: Option<&SchemaHints>) -> Result<Table> {
    let f = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(f), hints, &CsvOptions::default())
}

/// A table together with the schemas fitted for it.
#[derive(Clone, Debug, PartialEq)]
pub struct TableDataset {
    pub table: Table,
    pub schemas: Vec<FeatureSchema>,
}

impl TableDataset {
    pub fn fit(table: Table, hints: Option<&SchemaHints>) -> Result<Self> {
        let schemas = table.fit_schemas(hints)?;
        Ok(TableDataset { table, schemas })
    }

    /// Attach schemas fitted elsewhere (e.g. on a training split).
    pub fn with_schemas(table: Table, schemas: Vec<FeatureSchema>) -> Result<Self> {
        let names: Vec<String> = schemas.iter().map(|s| s.name.clone()).collect();
        if names != table.header() {
            return Err(CgmError::SchemaMismatch(column_diff(&names, table.header())));
        }
        Ok(TableDataset { table, schemas })
    }

    pub fn n_rows(&self) -> usize {
        self.table.n_rows()
    }

    /// Class index of every present cell, row-major.
    pub fn encode(&self) -> Result<Vec<Vec<Option<usize>>>> {
        (0..self.n_rows())
            .map(|i| encode_row(&self.schemas, &self.table.row(i)))
            .collect()
    }
}

pub fn encode_row(schemas: &[FeatureSchema], row: &[Value]) -> Result<Vec<Option<usize>>> {
    schemas
        .iter()
        .zip(row)
        .map(|(s, v)| match v {
            Value::Missing => Ok(None),
            v => s.class_of(v).map(Some),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub stratify_column: Option<String>,
}

/// Seeded train/test split. Schemas are fitted on the training rows only
/// and attached unchanged to the test rows. Every group keeps at least one
/// training row.
pub fn split(
    table: &Table,
    spec: &SplitSpec,
    hints: Option<&SchemaHints>,
) -> Result<(TableDataset, TableDataset)> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(CgmError::contract(format!(
            "test_fraction {} outside (0, 1)",
            spec.test_fraction
        )));
    }
    let mut rng = substream(spec.seed, Stream::Split, 0, 0);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let groups: Vec<Vec<usize>> = match &spec.stratify_column {
        None => vec![(0..table.n_rows()).collect()],
        Some(name) => {
            let col = table
                .column(name)
                .ok_or_else(|| CgmError::UnknownColumn(name.clone()))?;
            let mut by: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for i in 0..table.n_rows() {
                by.entry(col.get(i).to_string()).or_default().push(i);
            }
            by.into_values().collect()
        }
    };
    for mut g in groups {
        g.shuffle(&mut rng);
        let n_test = ((g.len() as f64 * spec.test_fraction).round() as usize).min(g.len().saturating_sub(1));
        test.extend_from_slice(&g[..n_test]);
        train.extend_from_slice(&g[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let train = TableDataset::fit(table.select_rows(&train), hints)?;
    let test = TableDataset::with_schemas(table.select_rows(&test), train.schemas.clone())?;
    Ok((train, test))
}

/// One training example in the order the model will see it.
#[derive(Clone, Debug, PartialEq)]
pub struct PermutedExample {
    pub row: usize,
    /// Feature indices of the present features, in permuted order.
    pub order: Vec<usize>,
    /// Target class of each entry of `order`.
    pub classes: Vec<usize>,
    /// `false` where the feature is dropped from the conditioning context
    /// (it is still predicted).
    pub keys: Vec<bool>,
}

impl PermutedExample {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Draw a uniformly random order of the present features of `row`, and
/// independently drop each from the context with probability `drop_prob`.
pub fn permute_example<R: Rng + ?Sized>(
    row_index: usize,
    row: &[Option<usize>],
    drop_prob: f64,
    rng: &mut R,
) -> PermutedExample {
    let mut order: Vec<usize> = (0..row.len()).filter(|&k| row[k].is_some()).collect();
    order.shuffle(rng);
    let classes = order.iter().map(|&k| row[k].unwrap()).collect();
    let keys = order
        .iter()
        .map(|_| drop_prob <= 0.0 || rng.random::<f64>() >= drop_prob)
        .collect();
    PermutedExample {
        row: row_index,
        order,
        classes,
        keys,
    }
}

/// All batches of one epoch. Rows are shuffled, grouped by their number of
/// present features so every batch has a single sequence length, and each
/// row appears exactly once. Rows with no present feature are skipped.
pub fn batches(
    rows: &[Vec<Option<usize>>],
    batch_size: usize,
    seed: u64,
    epoch: u64,
    drop_prob: f64,
) -> Vec<Vec<PermutedExample>> {
    assert!(batch_size > 0, "batch size must be positive");
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    let mut rng = substream(seed, Stream::EpochShuffle, epoch, 0);
    idx.shuffle(&mut rng);
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in idx {
        let present = rows[i].iter().filter(|c| c.is_some()).count();
        if present == 0 {
            log::warn!("row {i} has no present features; skipped");
            continue;
        }
        groups.entry(present).or_default().push(i);
    }
    let mut out: Vec<Vec<PermutedExample>> = Vec::new();
    for members in groups.values() {
        for chunk in members.chunks(batch_size) {
            out.push(
                chunk
                    .iter()
                    .map(|&i| {
                        let mut prng = substream(seed, Stream::Permutation, epoch, i as u64);
                        permute_example(i, &rows[i], drop_prob, &mut prng)
                    })
                    .collect(),
            );
        }
    }
    out.shuffle(&mut rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, hints: Option<&SchemaHints>) -> Result<Table> {
        read_csv(text.as_bytes(), hints, &CsvOptions::default())
    }

    #[test]
    fn infers_types() {
        let t = parse("a,b\n1,x\n2,y\n", None).unwrap();
        assert_eq!(t.kinds(), vec![Kind::Numerical, Kind::Categorical]);
        assert_eq!(t.row(1), vec![Value::Num(2.0), Value::Cat("y".into())]);
    }

    #[test]
    fn empty_cell_is_missing() {
        let t = parse("a,b\n1,\nNA,y\n", None).unwrap();
        assert_eq!(t.row(0)[1], Value::Missing);
        assert_eq!(t.row(1)[0], Value::Missing);
        assert_eq!(t.kinds(), vec![Kind::Numerical, Kind::Categorical]);
    }

    #[test]
    fn hint_keeps_categorical() {
        let mut hints = SchemaHints::new();
        hints.insert("a".into(), ColumnHint { kind: Kind::Categorical, bins: None });
        let t = parse("a\n1\n2\n", Some(&hints)).unwrap();
        assert_eq!(t.row(0)[0], Value::Cat("1".into()));
    }

    #[test]
    fn ragged_and_duplicate_rows_report_lines() {
        let err = parse("a,b\n1,2\n3\n", None).unwrap_err();
        assert!(matches!(err, CgmError::Csv { line: 3, .. }), "{err:?}");
        let err = parse("a,a\n1,2\n", None).unwrap_err();
        assert!(matches!(err, CgmError::Csv { line: 1, .. }), "{err:?}");
    }

    fn numbered(n: usize) -> Table {
        let col = Column::Numerical((0..n).map(|i| Some(i as f64)).collect());
        Table::new(vec!["v".into()], vec![col]).unwrap()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let t = numbered(100);
        let spec = SplitSpec { test_fraction: 0.3, seed: 4, stratify_column: None };
        let (tr, te) = split(&t, &spec, None).unwrap();
        assert_eq!((tr.n_rows(), te.n_rows()), (70, 30));
        let (tr2, te2) = split(&t, &spec, None).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(te, te2);
        let mut all = Vec::new();
        for d in [&tr, &te] {
            for i in 0..d.n_rows() {
                if let Value::Num(v) = d.table.row(i)[0] {
                    all.push(v);
                }
            }
        }
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..100).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(te.schemas, tr.schemas);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let spec = SplitSpec { test_fraction: 1.0, seed: 0, stratify_column: None };
        assert!(split(&numbered(10), &spec, None).is_err());
    }

    #[test]
    fn batch_sizes_cover_rows() {
        let rows: Vec<Vec<Option<usize>>> = (0..130).map(|i| vec![Some(i % 2), Some(0)]).collect();
        let b = batches(&rows, 128, 1, 0, 0.0);
        let mut sizes: Vec<usize> = b.iter().map(Vec::len).collect();
        sizes.sort();
        assert_eq!(sizes, vec![2, 128]);
    }

    #[test]
    fn epochs_reshuffle_same_rows() {
        let rows: Vec<Vec<Option<usize>>> = (0..50).map(|i| vec![Some(i), Some(i), Some(i)]).collect();
        let e0 = batches(&rows, 8, 3, 0, 0.0);
        let e1 = batches(&rows, 8, 3, 1, 0.0);
        let ids = |b: &Vec<Vec<PermutedExample>>| {
            let mut v: Vec<usize> = b.iter().flatten().map(|e| e.row).collect();
            v.sort();
            v
        };
        assert_eq!(ids(&e0), (0..50).collect::<Vec<_>>());
        assert_eq!(ids(&e0), ids(&e1));
        let orders = |b: &Vec<Vec<PermutedExample>>| {
            let mut v: Vec<(usize, Vec<usize>)> = b.iter().flatten().map(|e| (e.row, e.order.clone())).collect();
            v.sort();
            v
        };
        assert_ne!(orders(&e0), orders(&e1));
    }

    #[test]
    fn missing_values_shorten_sequences() {
        let rows = vec![vec![Some(0), None, Some(1)], vec![Some(0), Some(1), Some(1)], vec![None, None, None]];
        let b = batches(&rows, 4, 0, 0, 0.0);
        let ex: Vec<&PermutedExample> = b.iter().flatten().collect();
        assert_eq!(ex.len(), 2, "all-missing row skipped");
        for e in ex {
            let present = rows[e.row].iter().filter(|c| c.is_some()).count();
            assert_eq!(e.len(), present);
            for (k, c) in e.order.iter().zip(&e.classes) {
                assert_eq!(rows[e.row][*k], Some(*c));
            }
        }
    }
}
