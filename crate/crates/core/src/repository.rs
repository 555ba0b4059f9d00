//! Tabular repository: typed columnar tables loaded from delimited files.
//!
//! Files may lack a header row, contain ragged rows (short rows are padded
//! with nulls) and duplicated rows (kept as-is). Every parseable `*.csv` /
//! `*.tsv` file under the source directory becomes one [`Table`] whose id is
//! its path relative to that directory.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Fraction of non-null cells that must parse as reals for a numeric column.
pub const NUMERIC_FRACTION: f64 = 0.95;
/// Categorical columns have at most `max(CATEGORICAL_MIN_BOUND, 5% of non-null)` distinct values.
pub const CATEGORICAL_MIN_BOUND: usize = 20;
pub const CATEGORICAL_FRACTION: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    Numeric,
    Categorical,
    Text,
}

/// Cell storage. Categorical and text columns share the string representation.
#[derive(Clone, Debug, PartialEq)]
pub enum ColumnValues {
    Numeric(Vec<Option<f64>>),
    Strings(Vec<Option<String>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    /// `None` models a missing header value.
    pub name: Option<String>,
    dtype: DType,
    values: ColumnValues,
    distinct_count: usize,
}

pub(crate) fn parse_real(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn is_null_cell(s: &str) -> bool {
    s.trim().is_empty()
}

/// Infers the column type from raw cells (`None` = missing).
pub fn infer_dtype<S: AsRef<str>>(cells: &[Option<S>]) -> DType {
    let non_null: Vec<&str> = cells
        .iter()
        .filter_map(|c| c.as_ref().map(|s| s.as_ref()))
        .filter(|s| !is_null_cell(s))
        .collect();
    if non_null.is_empty() {
        return DType::Text;
    }
    let numeric = non_null.iter().filter(|s| parse_real(s).is_some()).count();
    if numeric as f64 >= NUMERIC_FRACTION * non_null.len() as f64 {
        return DType::Numeric;
    }
    let distinct: HashSet<&str> = non_null.iter().copied().collect();
    let bound = CATEGORICAL_MIN_BOUND.max((CATEGORICAL_FRACTION * non_null.len() as f64) as usize);
    if distinct.len() <= bound {
        DType::Categorical
    } else {
        DType::Text
    }
}

impl Column {
    /// Builds a column from raw text cells, inferring its dtype. Empty cells
    /// become nulls; in a numeric column, cells that fail to parse do too.
    pub fn from_raw<S: AsRef<str>>(name: Option<String>, cells: &[Option<S>]) -> Self {
        let dtype = infer_dtype(cells);
        match dtype {
            DType::Numeric => Column::numeric(
                name,
                cells
                    .iter()
                    .map(|c| c.as_ref().and_then(|s| parse_real(s.as_ref())))
                    .collect(),
            ),
            _ => Column::strings(
                name,
                dtype,
                cells
                    .iter()
                    .map(|c| {
                        c.as_ref()
                            .map(|s| s.as_ref().trim())
                            .filter(|s| !s.is_empty())
                            .map(str::to_string)
                    })
                    .collect(),
            ),
        }
    }

    pub fn numeric(name: Option<String>, values: Vec<Option<f64>>) -> Self {
        let values: Vec<Option<f64>> = values
            .into_iter()
            .map(|v| v.filter(|x| x.is_finite()))
            .collect();
        let distinct = values
            .iter()
            .flatten()
            .map(|v| v.to_bits())
            .collect::<HashSet<_>>()
            .len();
        Column {
            name,
            dtype: DType::Numeric,
            values: ColumnValues::Numeric(values),
            distinct_count: distinct,
        }
    }

    /// Builds a categorical or text column. `DType::Numeric` is rejected by
    /// re-inferring from the strings.
    pub fn strings(name: Option<String>, dtype: DType, values: Vec<Option<String>>) -> Self {
        if dtype == DType::Numeric {
            return Column::from_raw(name, &values);
        }
        let distinct = values
            .iter()
            .flatten()
            .map(String::as_str)
            .collect::<HashSet<_>>()
            .len();
        Column {
            name,
            dtype,
            values: ColumnValues::Strings(values),
            distinct_count: distinct,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn values(&self) -> &ColumnValues {
        &self.values
    }

    pub fn distinct_count(&self) -> usize {
        self.distinct_count
    }

    pub fn len(&self) -> usize {
        match &self.values {
            ColumnValues::Numeric(v) => v.len(),
            ColumnValues::Strings(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_null(&self, row: usize) -> bool {
        match &self.values {
            ColumnValues::Numeric(v) => v[row].is_none(),
            ColumnValues::Strings(v) => v[row].is_none(),
        }
    }

    pub fn null_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_null(i)).count()
    }

    pub fn as_numeric(&self) -> Option<&[Option<f64>]> {
        match &self.values {
            ColumnValues::Numeric(v) => Some(v),
            ColumnValues::Strings(_) => None,
        }
    }

    pub fn as_strings(&self) -> Option<&[Option<String>]> {
        match &self.values {
            ColumnValues::Strings(v) => Some(v),
            ColumnValues::Numeric(_) => None,
        }
    }

    /// Textual rendering of one cell, as it would be serialized.
    pub fn cell_text(&self, row: usize) -> Option<String> {
        match &self.values {
            ColumnValues::Numeric(v) => v[row].map(format_real),
            ColumnValues::Strings(v) => v[row].clone(),
        }
    }

    /// Lowercased, trimmed cell text used for join-key matching.
    pub fn normalized_key(&self, row: usize) -> Option<String> {
        self.cell_text(row).map(|s| s.trim().to_lowercase())
    }

    /// True when every non-null value is an integer; such numeric columns
    /// behave like identifiers and may serve as join keys.
    pub fn is_integral(&self) -> bool {
        match &self.values {
            ColumnValues::Numeric(v) => v.iter().flatten().all(|x| x.fract() == 0.0),
            ColumnValues::Strings(_) => false,
        }
    }

    /// Returns a copy restricted to `rows` (in the given order).
    pub fn take(&self, rows: &[usize]) -> Column {
        match &self.values {
            ColumnValues::Numeric(v) => {
                Column::numeric(self.name.clone(), rows.iter().map(|&r| v[r]).collect())
            }
            ColumnValues::Strings(v) => Column::strings(
                self.name.clone(),
                self.dtype,
                rows.iter().map(|&r| v[r].clone()).collect(),
            ),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }
}

pub(crate) fn format_real(v: f64) -> String {
    format!("{v}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub id: String,
    columns: Vec<Column>,
    row_count: usize,
}

impl Table {
    pub fn new(id: impl Into<String>, columns: Vec<Column>) -> Result<Self> {
        let id = id.into();
        let row_count = columns.first().map_or(0, Column::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != row_count) {
            return Err(Error::InvalidConfig(format!(
                "table {id}: column {:?} has {} rows, expected {row_count}",
                bad.name,
                bad.len()
            )));
        }
        Ok(Table {
            id,
            columns,
            row_count,
        })
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, index: usize) -> Option<&Column> {
        self.columns.get(index)
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// Header name, or the positional name `c{index}` when the header is missing.
    pub fn column_name(&self, index: usize) -> String {
        self.columns[index]
            .name
            .clone()
            .unwrap_or_else(|| format!("c{index}"))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        (0..self.columns.len()).find(|&i| self.column_name(i) == name)
    }

    pub fn column_by_name(&self, name: &str) -> Option<&Column> {
        self.column_index(name).map(|i| &self.columns[i])
    }

    /// Appends a column; its length must match the row count.
    pub fn push_column(&mut self, column: Column) -> Result<()> {
        if !self.columns.is_empty() && column.len() != self.row_count {
            return Err(Error::InvalidConfig(format!(
                "appended column has {} rows, table {} has {}",
                column.len(),
                self.id,
                self.row_count
            )));
        }
        if self.columns.is_empty() {
            self.row_count = column.len();
        }
        self.columns.push(column);
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
        let header: Vec<String> = (0..self.width()).map(|i| self.column_name(i)).collect();
        wtr.write_record(&header).expect("in-memory write");
        for row in 0..self.row_count {
            let record: Vec<String> = self
                .columns
                .iter()
                .map(|c| c.cell_text(row).unwrap_or_default())
                .collect();
            wtr.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Stable digest over the id, column names, dtypes and cells.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.id.as_bytes());
        hasher.update([0]);
        for (i, col) in self.columns.iter().enumerate() {
            hasher.update(self.column_name(i).as_bytes());
            hasher.update([0, col.dtype as u8]);
            for r in 0..self.row_count {
                match col.cell_text(r) {
                    Some(s) => {
                        hasher.update([1]);
                        hasher.update(s.as_bytes());
                    }
                    None => hasher.update([2]),
                }
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Parses delimited text into a table, detecting the delimiter and header.
pub fn parse_table(id: &str, text: &str) -> std::result::Result<Table, String> {
    let first_line = text.lines().next().unwrap_or_default();
    let delimiter = if first_line.matches('\t').count() > first_line.matches(',').count() {
        b'\t'
    } else {
        b','
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .delimiter(delimiter)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| e.to_string())?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    // a single empty field is how csv reports a blank line
    rows.retain(|r| !(r.len() == 1 && r[0].trim().is_empty()));
    if rows.is_empty() {
        return Err("no rows".into());
    }
    let width = rows.iter().map(Vec::len).max().unwrap_or(0);
    if width == 0 {
        return Err("no columns".into());
    }

    let header = if is_header_row(&rows[0]) {
        Some(rows.remove(0))
    } else {
        None
    };
    let columns = (0..width)
        .map(|j| {
            let name = header
                .as_ref()
                .and_then(|h| h.get(j))
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty());
            let cells: Vec<Option<&str>> = rows
                .iter()
                .map(|r| r.get(j).map(String::as_str).filter(|s| !is_null_cell(s)))
                .collect();
            Column::from_raw(name, &cells)
        })
        .collect();
    Table::new(id, columns).map_err(|e| e.to_string())
}

/// A row is a header when its non-empty cells are all non-numeric and distinct.
fn is_header_row(row: &[String]) -> bool {
    let cells: Vec<&str> = row
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .collect();
    if cells.is_empty() || cells.iter().any(|s| parse_real(s).is_some()) {
        return false;
    }
    cells.iter().collect::<HashSet<_>>().len() == cells.len()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoadOptions {
    pub recursive: bool,
    pub extensions: Vec<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            recursive: true,
            extensions: vec!["csv".into(), "tsv".into()],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct Repository {
    pub tables: BTreeMap<String, Table>,
    pub source_dir: PathBuf,
    pub skipped: Vec<SkippedFile>,
}

impl Repository {
    pub fn from_tables(source_dir: impl Into<PathBuf>, tables: Vec<Table>) -> Self {
        Repository {
            tables: tables.into_iter().map(|t| (t.id.clone(), t)).collect(),
            source_dir: source_dir.into(),
            skipped: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Table> {
        self.tables.get(id)
    }

    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for table in self.tables.values() {
            hasher.update(table.content_hash().as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    /// Writes every table back under `dir`, preserving relative ids.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        for table in self.tables.values() {
            table.write_csv(&dir.join(&table.id))?;
        }
        Ok(())
    }
}

fn collect_files(dir: &Path, options: &LoadOptions, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            if options.recursive {
                collect_files(&path, options, out)?;
            }
        } else if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| options.extensions.iter().any(|x| x.eq_ignore_ascii_case(e)))
        {
            out.push(path);
        }
    }
    Ok(())
}

fn relative_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Loads every delimited file under `dir`. Unparseable files are skipped and
/// listed in [`Repository::skipped`]; read failures abort the load.
pub fn load_repository(dir: &Path, options: &LoadOptions) -> Result<Repository> {
    let mut files = Vec::new();
    collect_files(dir, options, &mut files)?;
    files.sort();

    let parsed: Vec<(String, Result<std::result::Result<Table, String>>)> = files
        .par_iter()
        .map(|path| {
            let id = relative_id(dir, path);
            let outcome = fs::read(path)
                .map_err(|e| Error::io(path, e))
                .map(|bytes| match String::from_utf8(bytes) {
                    Ok(text) => parse_table(&id, &text),
                    Err(_) => Err("not valid utf-8".to_string()),
                });
            (id, outcome)
        })
        .collect();

    let mut tables = BTreeMap::new();
    let mut skipped = Vec::new();
    for (id, outcome) in parsed {
        match outcome? {
            Ok(table) => {
                tables.insert(id, table);
            }
            Err(reason) => {
                log::warn!("skipping {id}: {reason}");
                skipped.push(SkippedFile { path: id, reason });
            }
        }
    }
    if tables.is_empty() {
        return Err(Error::EmptyRepository(dir.to_path_buf()));
    }
    Ok(Repository {
        tables,
        source_dir: dir.to_path_buf(),
        skipped,
    })
}

/// Loads a single delimited file as a table whose id is its file name.
pub fn load_table(path: &Path) -> Result<Table> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        message: "not valid utf-8".into(),
    })?;
    let id = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into());
    parse_table(&id, &text).map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        message,
    })
}

/// One-line human summary of a table, used in run logs.
pub fn describe(table: &Table) -> String {
    let mut s = format!("{} ({} rows):", table.id, table.row_count());
    for i in 0..table.width() {
        let c = &table.columns()[i];
        let _ = write!(s, " {}[{:?}]", table.column_name(i), c.dtype());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        let p = dir.join(name);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, body).unwrap();
    }

    #[test]
    fn loads_three_files() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "a.csv", "x,y\n1,2\n3,4\n");
        write(dir.path(), "b.csv", "k,v\nq,1\nr,2\n");
        write(dir.path(), "sub/c.tsv", "k\tv\nq\t1\n");
        let repo = load_repository(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(repo.len(), 3);
        assert!(repo.get("sub/c.tsv").is_some());
        assert_eq!(repo.get("sub/c.tsv").unwrap().width(), 2);
    }

    #[test]
    fn numeric_first_row_means_no_header() {
        let t = parse_table("t", "1,2,3\n4,5,6\n").unwrap();
        assert_eq!(t.row_count(), 2);
        let names: Vec<String> = (0..3).map(|i| t.column_name(i)).collect();
        assert_eq!(names, ["c0", "c1", "c2"]);
        assert!(t.columns().iter().all(|c| c.name.is_none()));
    }

    #[test]
    fn empty_numeric_cell_is_null_and_row_kept() {
        let t = parse_table("t", "a,b\n1,x\n,y\n3,z\n").unwrap();
        assert_eq!(t.row_count(), 3);
        let a = t.column_by_name("a").unwrap();
        assert_eq!(a.dtype(), DType::Numeric);
        assert_eq!(a.as_numeric().unwrap(), &[Some(1.0), None, Some(3.0)]);
        assert_eq!(a.null_count(), 1);
    }

    #[test]
    fn dtype_rules() {
        let mut cells: Vec<Option<String>> = vec![Some("1.5".into()), Some("2".into()), Some("x".into())];
        cells.extend((0..100).map(|i| Some(i.to_string())));
        assert_eq!(infer_dtype(&cells), DType::Numeric);

        let cat = [Some("a"), Some("b"), Some("a"), Some("b")];
        assert_eq!(infer_dtype(&cat), DType::Categorical);

        let text: Vec<Option<String>> = (0..1000).map(|i| Some(format!("free text {i}"))).collect();
        assert_eq!(infer_dtype(&text), DType::Text);

        let nulls: [Option<&str>; 3] = [None, None, Some("  ")];
        assert_eq!(infer_dtype(&nulls), DType::Text);
    }

    #[test]
    fn ragged_rows_are_padded() {
        let t = parse_table("t", "a,b,c\n1,2\n3,4,5\n").unwrap();
        assert_eq!(t.width(), 3);
        assert!(t.column(2).unwrap().is_null(0));
    }

    #[test]
    fn missing_header_cell_has_no_name() {
        let t = parse_table("t", "a,,c\n1,2,3\n").unwrap();
        assert_eq!(t.column(1).unwrap().name, None);
        assert_eq!(t.column_name(1), "c1");
    }

    #[test]
    fn tab_delimiter_is_sniffed() {
        let t = parse_table("t", "a\tb\n1\t2\n").unwrap();
        assert_eq!(t.width(), 2);
    }

    #[test]
    fn unparseable_files_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "good.csv", "a\n1\n");
        fs::write(dir.path().join("bad.csv"), [0xff, 0xfe, 0x00, 0x41]).unwrap();
        write(dir.path(), "empty.csv", "");
        let repo = load_repository(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(repo.len(), 1);
        assert_eq!(repo.skipped.len(), 2);
    }

    #[test]
    fn empty_repository_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "notes.txt", "hello");
        assert!(matches!(
            load_repository(dir.path(), &LoadOptions::default()),
            Err(Error::EmptyRepository(_))
        ));
    }

    #[test]
    fn duplicate_rows_are_retained() {
        let t = parse_table("t", "a,b\n1,x\n1,x\n").unwrap();
        assert_eq!(t.row_count(), 2);
        assert_eq!(t.column(0).unwrap().distinct_count(), 1);
    }

    #[test]
    fn loads_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..6 {
            write(dir.path(), &format!("t{i}.csv"), &format!("k,v\na,{i}\nb,{}\n", i * 2));
        }
        let a = load_repository(dir.path(), &LoadOptions::default()).unwrap();
        let b = load_repository(dir.path(), &LoadOptions::default()).unwrap();
        assert_eq!(a.tables, b.tables);
        assert_eq!(a.content_hash(), b.content_hash());
    }
}
