use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Cat(String),
    Num(f64),
    Missing,
}

impl Value {
    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Cat(s) => f.write_str(s),
            // `Display` for f64 is the shortest string that round-trips.
            Value::Num(v) => write!(f, "{v}"),
            Value::Missing => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Categorical,
    Numerical,
}

/// Values of one column; `None` marks a missing cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    Categorical(Vec<Option<String>>),
    Numerical(Vec<Option<f64>>),
}

impl Column {
    pub fn empty(kind: Kind) -> Self {
        match kind {
            Kind::Categorical => Column::Categorical(Vec::new()),
            Kind::Numerical => Column::Numerical(Vec::new()),
        }
    }

    pub fn kind(&self) -> Kind {
        match self {
            Column::Categorical(_) => Kind::Categorical,
            Column::Numerical(_) => Kind::Numerical,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Categorical(v) => v.len(),
            Column::Numerical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Value {
        match self {
            Column::Categorical(v) => v[i].clone().map_or(Value::Missing, Value::Cat),
            Column::Numerical(v) => v[i].map_or(Value::Missing, Value::Num),
        }
    }

    pub fn is_present(&self, i: usize) -> bool {
        match self {
            Column::Categorical(v) => v[i].is_some(),
            Column::Numerical(v) => v[i].is_some(),
        }
    }

    pub fn present_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_present(i)).count()
    }

    /// Append a value; kind mismatches are reported as `Err(value)`.
    pub fn push(&mut self, v: Value) -> Result<(), Value> {
        match (self, v) {
            (Column::Categorical(c), Value::Cat(s)) => c.push(Some(s)),
            (Column::Categorical(c), Value::Missing) => c.push(None),
            (Column::Numerical(c), Value::Num(x)) => c.push(Some(x)),
            (Column::Numerical(c), Value::Missing) => c.push(None),
            (_, v) => return Err(v),
        }
        Ok(())
    }

    pub fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Categorical(v) => Column::Categorical(rows.iter().map(|&i| v[i].clone()).collect()),
            Column::Numerical(v) => Column::Numerical(rows.iter().map(|&i| v[i]).collect()),
        }
    }
}
