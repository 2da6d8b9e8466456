use rand::seq::SliceRandom;

use super::HarnessError;
use crate::seed;

/// Stratified train/validation split of item indices by label.
///
/// Each label's stratum sends `round(n · val_fraction)` members to validation after a
/// seeded shuffle. Both returned index lists are sorted.
pub fn split_indices(labels: &[u8], val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), HarnessError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        if val_fraction == 0.0 || val_fraction == 1.0 {
            return Err(HarnessError::TooFewItems(format!(
                "validation fraction {val_fraction} leaves a split empty"
            )));
        }
        return Err(HarnessError::Usage(format!("validation fraction {val_fraction} outside (0, 1)")));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for label in [0u8, 1] {
        let mut stratum: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        let n_val = (stratum.len() as f64 * val_fraction).round() as usize;
        if n_val == 0 || n_val == stratum.len() {
            return Err(HarnessError::TooFewItems(format!(
                "label {label} has {} items; a {val_fraction} split leaves one side empty",
                stratum.len()
            )));
        }
        stratum.shuffle(&mut seed::rng(seed, "split", u64::from(label)));
        val.extend_from_slice(&stratum[..n_val]);
        train.extend_from_slice(&stratum[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Item-level wrapper around [`split_indices`].
pub fn split<T: Clone>(
    items: &[T],
    label: impl Fn(&T) -> u8,
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), HarnessError> {
    let labels: Vec<u8> = items.iter().map(label).collect();
    let (train, val) = split_indices(&labels, val_fraction, seed)?;
    Ok((
        train.into_iter().map(|i| items[i].clone()).collect(),
        val.into_iter().map(|i| items[i].clone()).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn five_and_five() {
        let labels = [0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        let (train, val) = split_indices(&labels, 0.4, 7).unwrap();
        assert_eq!((train.len(), val.len()), (6, 4));
        assert_eq!(val.iter().filter(|&&i| labels[i] == 1).count(), 2);
        assert_eq!(split_indices(&labels, 0.4, 7).unwrap(), (train, val));
    }

    #[test]
    fn empty_strata_are_rejected() {
        let labels = [0, 1, 0, 1];
        assert!(matches!(split_indices(&labels, 0.0, 1), Err(HarnessError::TooFewItems(_))));
        assert!(matches!(split_indices(&[0, 0, 0], 0.5, 1), Err(HarnessError::TooFewItems(_))));
        assert!(matches!(split_indices(&[0, 1], 0.4, 1), Err(HarnessError::TooFewItems(_))));
        assert!(matches!(split_indices(&labels, 1.5, 1), Err(HarnessError::Usage(_))));
    }

    #[test]
    fn item_split_keeps_values() {
        let items: Vec<(char, u8)> = "abcdefgh".chars().zip([0, 0, 0, 0, 1, 1, 1, 1]).collect();
        let (train, val) = split(&items, |x| x.1, 0.5, 3).unwrap();
        assert_eq!(train.len() + val.len(), 8);
        assert_eq!(val.iter().filter(|x| x.1 == 0).count(), 2);
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_exhaustive_stratified(
            labels in prop::collection::vec(0u8..2, 4..200),
            frac in 0.05f64..0.95,
            seed in any::<u64>(),
        ) {
            if let Ok((train, val)) = split_indices(&labels, frac, seed) {
                let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
                for label in [0u8, 1] {
                    let n = labels.iter().filter(|&&l| l == label).count();
                    let in_val = val.iter().filter(|&&i| labels[i] == label).count();
                    prop_assert_eq!(in_val, (n as f64 * frac).round() as usize);
                }
            }
        }
    }
}
