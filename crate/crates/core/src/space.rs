use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box used for gridding and truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl SpaceSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let s = Self { lower, upper };
        s.validate("space")?;
        Ok(s)
    }

    /// `[-half, half]^dim`.
    pub fn symmetric(dim: usize, half: f64) -> Self {
        Self {
            lower: vec![-half; dim],
            upper: vec![half; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self, label: &str) -> Result<()> {
        if self.lower.is_empty() {
            return Err(Error::InvalidSpec(format!("{label}: dimension must be at least 1")));
        }
        if self.lower.len() != self.upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "{label}: {} lower bounds vs {} upper bounds",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (i, (l, u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::InvalidSpec(format!(
                    "{label}: coordinate {i} needs finite lower < upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(SpaceSpec::new(vec![], vec![]).is_err());
        assert!(SpaceSpec::new(vec![1.0], vec![1.0]).is_err());
        assert!(SpaceSpec::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(SpaceSpec::new(vec![f64::NEG_INFINITY], vec![0.0]).is_err());
        assert!(SpaceSpec::new(vec![-1.0], vec![1.0]).is_ok());
    }

    #[test]
    fn containment() {
        let s = SpaceSpec::symmetric(2, 1.0);
        assert!(s.contains(&[1.0, -1.0]));
        assert!(!s.contains(&[1.1, 0.0]));
    }
}
