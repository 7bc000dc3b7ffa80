use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded `k`-fold partition. Returns `(train, test)` per fold; test folds
/// differ in size by at most one and together contain every id once. Train
/// ids keep their input order.
pub fn kfold_split<T: Clone>(ids: &[T], k: usize, seed: u64) -> Result<Vec<(Vec<T>, Vec<T>)>> {
    if k < 2 {
        return Err(Error::invalid(format!("k-fold split needs k >= 2, got {k}")));
    }
    if k > ids.len() {
        return Err(Error::invalid(format!("cannot split {} ids into {k} folds", ids.len())));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (ids.len() / k, ids.len() % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut test_idx: Vec<usize> = order[start..start + len].to_vec();
        test_idx.sort_unstable();
        start += len;
        let train = (0..ids.len())
            .filter(|i| test_idx.binary_search(i).is_err())
            .map(|i| ids[i].clone())
            .collect();
        let test = test_idx.iter().map(|&i| ids[i].clone()).collect();
        folds.push((train, test));
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_five_into_five() {
        let ids: Vec<usize> = (0..35).collect();
        let folds = kfold_split(&ids, 5, 3).unwrap();
        assert!(folds.iter().all(|(tr, te)| te.len() == 7 && tr.len() == 28));
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.1.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, ids);
        assert_eq!(folds, kfold_split(&ids, 5, 3).unwrap());
    }

    #[test]
    fn bad_k() {
        assert!(kfold_split(&[1, 2, 3], 1, 0).is_err());
        assert!(kfold_split(&[1, 2, 3], 4, 0).is_err());
    }
}
