use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hard cap on the number of low-fidelity models for exhaustive enumeration.
pub const MAX_LOW_FIDELITY_MODELS: usize = 12;

/// A nonempty set of low-fidelity model indices (1-based), kept sorted.
///
/// The derived ordering is lexicographic on the sorted index list, which is
/// the documented tie-break order for model selection.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Subset(Vec<usize>);

impl Subset {
    pub fn new(mut indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidSubset("subset must be nonempty".into()));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSubset(format!("duplicate index in {indices:?}")));
        }
        if indices[0] == 0 {
            return Err(Error::InvalidSubset(
                "index 0 is the high-fidelity model".into(),
            ));
        }
        Ok(Subset(indices))
    }

    pub fn from_mask(mask: u32) -> Result<Self> {
        Subset::new((0..32).filter(|b| mask & (1 << b) != 0).map(|b| b + 1).collect())
    }

    pub fn mask(&self) -> u32 {
        self.0.iter().fold(0, |m, &i| m | (1 << (i - 1)))
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks every index lies in `1..=n`.
    pub fn check_within(&self, n: usize) -> Result<()> {
        match self.0.last() {
            Some(&max) if max <= n => Ok(()),
            _ => Err(Error::InvalidSubset(format!(
                "{self} is not a subset of {{1..{n}}}"
            ))),
        }
    }

    /// All `2^n - 1` nonempty subsets of `{1..n}` in lexicographic order.
    pub fn all_nonempty(n: usize) -> Result<Vec<Subset>> {
        if n == 0 || n > MAX_LOW_FIDELITY_MODELS {
            return Err(Error::InvalidConfig(format!(
                "number of low-fidelity models must be in 1..={MAX_LOW_FIDELITY_MODELS}, got {n}"
            )));
        }
        let mut all: Vec<Subset> = (1u32..(1 << n))
            .map(|mask| Subset::from_mask(mask).expect("nonzero mask"))
            .collect();
        all.sort();
        Ok(all)
    }
}

impl TryFrom<Vec<usize>> for Subset {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Subset::new(v)
    }
}

impl From<Subset> for Vec<usize> {
    fn from(s: Subset) -> Self {
        s.0
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_covers_all_nonempty_subsets() {
        let all = Subset::all_nonempty(3).unwrap();
        assert_eq!(all.len(), 7);
        assert_eq!(all[0].to_string(), "{1}");
        assert_eq!(all[1].to_string(), "{1,2}");
        assert_eq!(all[6].to_string(), "{3}");
        assert!(Subset::all_nonempty(13).is_err());
    }

    #[test]
    fn rejects_bad_indices() {
        assert!(Subset::new(vec![]).is_err());
        assert!(Subset::new(vec![0, 1]).is_err());
        assert!(Subset::new(vec![2, 2]).is_err());
        assert!(Subset::new(vec![3]).unwrap().check_within(2).is_err());
    }

    #[test]
    fn mask_round_trip() {
        let s = Subset::new(vec![3, 1]).unwrap();
        assert_eq!(s.indices(), &[1, 3]);
        assert_eq!(Subset::from_mask(s.mask()).unwrap(), s);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "[1,3]");
    }
}
