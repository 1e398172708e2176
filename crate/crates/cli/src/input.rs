//! CSV ingestion. Header `x1,...,xK,y`; data rows are integers.

use std::io::Read;

use anyhow::{anyhow, bail, Context, Result};

use metatree::DataBatch;

/// Feature rows, with `y` when the file has a `y` column.
#[derive(Debug, Clone)]
pub struct Table {
    pub feature_count: usize,
    pub xs: Vec<Vec<u32>>,
    pub ys: Option<Vec<u32>>,
}

impl Table {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Validated batch; `y` is required.
    pub fn into_batch(self, arity: u32) -> Result<DataBatch> {
        let ys = self.ys.ok_or_else(|| anyhow!("the CSV has no y column"))?;
        let mut batch = DataBatch::new(arity, self.feature_count);
        for (x, y) in self.xs.iter().zip(ys) {
            batch.push(x, y)?;
        }
        Ok(batch)
    }
}

fn check_header(header: &csv::StringRecord, require_y: bool) -> Result<(usize, bool)> {
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let has_y = names.last() == Some(&"y");
    if require_y && !has_y {
        bail!("header must end with a y column, found {:?}", names.join(","));
    }
    let features = &names[..names.len() - usize::from(has_y)];
    for (i, name) in features.iter().enumerate() {
        if *name != format!("x{}", i + 1) {
            bail!("header column {} is {name:?}, expected \"x{}\"", i + 1, i + 1);
        }
    }
    if features.is_empty() {
        bail!("header has no feature columns");
    }
    Ok((features.len(), has_y))
}

fn parse_cell(value: &str, row: usize, column: &str) -> Result<i64> {
    value
        .trim()
        .parse()
        .map_err(|_| anyhow!("row {row}, column {column}: {value:?} is not an integer"))
}

/// Reads a CSV. With `zero_based`, feature values are shifted up by one so
/// that `{0..M-1}` maps onto `{1..M}`. Rows are numbered from 1.
pub fn read_table<R: Read>(reader: R, require_y: bool, zero_based: bool) -> Result<Table> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = csv.headers().context("reading the CSV header")?.clone();
    let (k, has_y) = check_header(&header, require_y)?;
    let width = k + usize::from(has_y);
    let shift = i64::from(zero_based);

    let mut xs = Vec::new();
    let mut ys = has_y.then(Vec::new);
    for (i, record) in csv.records().enumerate() {
        let row = i + 1;
        let record = record.with_context(|| format!("row {row}: malformed CSV record"))?;
        if record.len() != width {
            bail!("row {row}: expected {width} columns, found {}", record.len());
        }
        let mut x = Vec::with_capacity(k);
        for column in 0..k {
            let value = parse_cell(&record[column], row, &format!("x{}", column + 1))? + shift;
            let value = u32::try_from(value)
                .map_err(|_| anyhow!("row {row}, column x{}: value {value} is out of range", column + 1))?;
            x.push(value);
        }
        xs.push(x);
        if let Some(ys) = ys.as_mut() {
            let y = parse_cell(&record[k], row, "y")?;
            let y = u32::try_from(y).map_err(|_| anyhow!("row {row}, column y: value {y} is out of range"))?;
            ys.push(y);
        }
    }
    Ok(Table {
        feature_count: k,
        xs,
        ys,
    })
}

pub fn read_table_file(path: &std::path::Path, require_y: bool, zero_based: bool) -> Result<Table> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_table(file, require_y, zero_based).with_context(|| format!("in {}", path.display()))
}
