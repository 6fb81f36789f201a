use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::IngestError;

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Disjoint train/validation/test index lists covering every input record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index list by name: `train`, `validation` (or `val`), `test`.
    pub fn part(&self, name: &str) -> Option<&[usize]> {
        match name {
            "train" => Some(&self.train),
            "validation" | "val" => Some(&self.validation),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Shuffles with a seeded generator and cuts by `ratios`.
///
/// With `strata`, each stratum is cut separately; strata with fewer than
/// three records go wholly to train. Sizes are `round(n * ratio)` for the
/// validation and test parts, train takes the rest.
pub fn split_dataset<S: AsRef<str>>(
    n: usize,
    strata: Option<&[S]>,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DatasetSplit, IngestError> {
    if n == 0 {
        return Err(IngestError::Split("no records to split".into()));
    }
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(IngestError::Split(format!("ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
    };
    let groups: Vec<Vec<usize>> = match strata {
        Some(keys) => {
            if keys.len() != n {
                return Err(IngestError::Split(format!("{} strata keys for {n} records", keys.len())));
            }
            let mut by: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, k) in keys.iter().enumerate() {
                by.entry(k.as_ref()).or_default().push(i);
            }
            by.into_values().collect()
        }
        None => vec![(0..n).collect()],
    };
    for mut group in groups {
        group.shuffle(&mut rng);
        let m = group.len();
        if strata.is_some() && m < 3 {
            split.train.extend(group);
            continue;
        }
        let n_val = (m as f64 * b).round() as usize;
        let n_test = ((m as f64 * c).round() as usize).min(m - n_val);
        let n_train = m - n_val - n_test;
        split.train.extend_from_slice(&group[..n_train]);
        split.validation.extend_from_slice(&group[n_train..n_train + n_val]);
        split.test.extend_from_slice(&group[n_train + n_val..]);
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn ten_records() {
        let s = split_dataset::<&str>(10, None, DEFAULT_RATIOS, 7).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        assert_eq!(s, split_dataset::<&str>(10, None, DEFAULT_RATIOS, 7).unwrap());
    }

    #[test]
    fn stratified_counts() {
        let keys: Vec<&str> = (0..100).map(|i| if i % 2 == 0 { "a" } else { "b" }).collect();
        let s = split_dataset(100, Some(&keys), DEFAULT_RATIOS, 3).unwrap();
        for k in ["a", "b"] {
            let count = |part: &[usize]| part.iter().filter(|&&i| keys[i] == k).count();
            assert_eq!((count(&s.train), count(&s.validation), count(&s.test)), (40, 5, 5));
        }
    }

    #[test]
    fn tiny_strata_go_to_train() {
        let keys = ["a", "a", "b", "c", "c", "c", "c", "c", "c", "c", "c", "c", "c"];
        let s = split_dataset(keys.len(), Some(&keys[..]), DEFAULT_RATIOS, 1).unwrap();
        for i in 0..3 {
            assert!(s.train.contains(&i));
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(split_dataset::<&str>(0, None, DEFAULT_RATIOS, 0).is_err());
        assert!(split_dataset::<&str>(5, None, (0.5, 0.5, 0.5), 0).is_err());
        assert!(split_dataset(3, Some(&["a"][..]), DEFAULT_RATIOS, 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn partitions_exactly(n in 1usize..300, k in 1usize..6, seed: u64, stratify: bool) {
            let keys: Vec<String> = (0..n).map(|i| format!("{}", (i * 7 + i / 3) % k)).collect();
            let s = split_dataset(n, stratify.then_some(&keys[..]), DEFAULT_RATIOS, seed).unwrap();
            let all: HashSet<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
            proptest::prop_assert_eq!(s.len(), n);
            proptest::prop_assert_eq!(all.len(), n);
            proptest::prop_assert!(all.iter().all(|&i| i < n));
            if stratify {
                for key in keys.iter().collect::<HashSet<_>>() {
                    let m = keys.iter().filter(|x| *x == key).count();
                    if m < 3 { continue; }
                    let count = |p: &[usize]| p.iter().filter(|&&i| &keys[i] == key).count() as f64;
                    proptest::prop_assert!((count(&s.train) - 0.8 * m as f64).abs() <= 1.0);
                    proptest::prop_assert!((count(&s.validation) - 0.1 * m as f64).abs() <= 1.0);
                    proptest::prop_assert!((count(&s.test) - 0.1 * m as f64).abs() <= 1.0);
                }
            }
        }
    }
}
