use crate::error::{Error, Result};

/// Validated `(x, y)` rows. `x` entries are 1-based categories in `1..=arity`;
/// `y` is checked against the leaf family when the batch is fitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataBatch {
    arity: u32,
    feature_count: usize,
    // row-major, feature_count values per row
    xs: Vec<u32>,
    ys: Vec<u32>,
}

impl DataBatch {
    pub fn new(arity: u32, feature_count: usize) -> Self {
        Self {
            arity,
            feature_count,
            xs: Vec::new(),
            ys: Vec::new(),
        }
    }

    pub fn from_rows<X: AsRef<[u32]>>(
        arity: u32,
        feature_count: usize,
        rows: impl IntoIterator<Item = (X, u32)>,
    ) -> Result<Self> {
        let mut batch = Self::new(arity, feature_count);
        for (x, y) in rows {
            batch.push(x.as_ref(), y)?;
        }
        Ok(batch)
    }

    pub fn push(&mut self, x: &[u32], y: u32) -> Result<()> {
        let row = self.ys.len() + 1;
        check_x(x, self.arity, self.feature_count, row)?;
        self.xs.extend_from_slice(x);
        self.ys.push(y);
        Ok(())
    }

    pub fn arity(&self) -> u32 {
        self.arity
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn x(&self, row: usize) -> &[u32] {
        &self.xs[row * self.feature_count..(row + 1) * self.feature_count]
    }

    pub fn y(&self, row: usize) -> u32 {
        self.ys[row]
    }

    pub fn ys(&self) -> &[u32] {
        &self.ys
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = (&[u32], u32)> + '_ {
        (0..self.len()).map(move |i| (self.x(i), self.ys[i]))
    }

    /// A new batch holding the rows at `order`, in that order.
    pub fn select(&self, order: &[usize]) -> Self {
        let mut out = Self::new(self.arity, self.feature_count);
        for &i in order {
            out.xs.extend_from_slice(self.x(i));
            out.ys.push(self.ys[i]);
        }
        out
    }

    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            arity: self.arity,
            feature_count: self.feature_count,
            xs: self.xs[..n * self.feature_count].to_vec(),
            ys: self.ys[..n].to_vec(),
        }
    }
}

pub(crate) fn check_x(x: &[u32], arity: u32, feature_count: usize, row: usize) -> Result<()> {
    if x.len() != feature_count {
        return Err(Error::FeatureCount {
            row,
            expected: feature_count,
            found: x.len(),
        });
    }
    if let Some((column, &value)) = x.iter().enumerate().find(|(_, &v)| v < 1 || v > arity) {
        return Err(Error::FeatureValue {
            row,
            column: column + 1,
            value: i64::from(value),
            arity,
        });
    }
    Ok(())
}
