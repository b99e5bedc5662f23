use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `B[i][j]`: test accuracy on domain `i` after training through domain
/// `j`. Only `j >= i` is ever populated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccuracyMatrix {
    entries: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(domains: usize) -> Self {
        AccuracyMatrix {
            entries: vec![vec![None; domains]; domains],
        }
    }

    /// Builds from rows of the upper triangle: `rows[i]` holds
    /// `B[i][i..]`.
    pub fn from_upper(rows: &[Vec<f64>]) -> Result<Self> {
        let t = rows.len();
        let mut b = AccuracyMatrix::new(t);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != t - i {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {}",
                    row.len(),
                    t - i
                )));
            }
            for (off, &v) in row.iter().enumerate() {
                b.set(i, i + off, v)?;
            }
        }
        Ok(b)
    }

    pub fn domains(&self) -> usize {
        self.entries.len()
    }

    pub fn set(&mut self, i: usize, j: usize, accuracy: f64) -> Result<()> {
        if j < i || j >= self.domains() {
            return Err(Error::Shape(format!(
                "B[{i}][{j}] is outside the upper triangle"
            )));
        }
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::Shape(format!("accuracy {accuracy} outside [0, 1]")));
        }
        self.entries[i][j] = Some(accuracy);
        Ok(())
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries.get(i)?.get(j).copied().flatten()
    }

    fn require(&self, i: usize, j: usize) -> Result<f64> {
        self.get(i, j)
            .ok_or_else(|| Error::Undefined(format!("B[{i}][{j}] was never measured")))
    }

    /// Backward transfer of every domain but the last:
    /// `BWT_i = mean_{j > i} (B[i][j] - B[i][i])`.
    pub fn backward_transfer(&self) -> Result<Vec<f64>> {
        let t = self.domains();
        if t < 2 {
            return Err(Error::Undefined(
                "forgetting needs at least two domains".into(),
            ));
        }
        (0..t - 1)
            .map(|i| {
                let diag = self.require(i, i)?;
                let mut sum = 0.0;
                for j in i + 1..t {
                    sum += self.require(i, j)? - diag;
                }
                Ok(sum / (t - 1 - i) as f64)
            })
            .collect()
    }
}

/// `A_T`: mean accuracy over all domains after the last one.
pub fn average_accuracy(b: &AccuracyMatrix) -> Result<f64> {
    let t = b.domains();
    if t == 0 {
        return Err(Error::Undefined("empty accuracy matrix".into()));
    }
    let mut sum = 0.0;
    for i in 0..t {
        sum += b.require(i, t - 1)?;
    }
    Ok(sum / t as f64)
}

/// `F_T`: mean backward transfer; negative values mean forgetting.
pub fn forgetting(b: &AccuracyMatrix) -> Result<f64> {
    let bwt = b.backward_transfer()?;
    Ok(bwt.iter().sum::<f64>() / bwt.len() as f64)
}
