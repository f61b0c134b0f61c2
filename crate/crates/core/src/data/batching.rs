use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub shuffle_seed: u64,
}

pub(crate) fn fisher_yates<T>(items: &mut [T], rng: &mut impl Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Batches of epoch `epoch`: a seeded permutation of `0..n` cut into
/// consecutive chunks, the last of which may be short.
///
/// The permutation is keyed by `(shuffle_seed, epoch)` only.
pub fn epoch_batches(n: usize, plan: &BatchPlan, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if plan.batch_size == 0 || plan.batch_size > n {
        return Err(Error::spec(format!(
            "batch size {} must be in 1..={n}",
            plan.batch_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.shuffle_seed);
    rng.set_stream(epoch);
    let mut perm: Vec<usize> = (0..n).collect();
    fisher_yates(&mut perm, &mut rng);
    Ok(perm.chunks(plan.batch_size).map(|c| c.to_vec()).collect())
}

/// Endless sequence of `(epoch, batch)` pairs following a [`BatchPlan`].
#[derive(Clone, Debug)]
pub struct BatchStream {
    n: usize,
    plan: BatchPlan,
    epoch: u64,
    current: std::vec::IntoIter<Vec<usize>>,
}

impl BatchStream {
    pub fn new(n: usize, plan: BatchPlan) -> Result<Self> {
        let first = epoch_batches(n, &plan, 0)?;
        Ok(BatchStream {
            n,
            plan,
            epoch: 0,
            current: first.into_iter(),
        })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

impl Iterator for BatchStream {
    type Item = (u64, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(b) = self.current.next() {
            return Some((self.epoch, b));
        }
        self.epoch += 1;
        self.current = epoch_batches(self.n, &self.plan, self.epoch)
            .expect("plan validated at construction")
            .into_iter();
        self.current.next().map(|b| (self.epoch, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn partition_sizes() {
        let plan = BatchPlan { batch_size: 3, shuffle_seed: 1 };
        let b = epoch_batches(10, &plan, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
    }

    #[test]
    fn epochs_differ_but_reproduce() {
        let plan = BatchPlan { batch_size: 4, shuffle_seed: 42 };
        let e0 = epoch_batches(20, &plan, 0).unwrap();
        let e1 = epoch_batches(20, &plan, 1).unwrap();
        assert_ne!(e0, e1);
        assert_eq!(e1, epoch_batches(20, &plan, 1).unwrap());
    }

    #[test]
    fn stream_rolls_over_epochs() {
        let plan = BatchPlan { batch_size: 4, shuffle_seed: 7 };
        let items: Vec<_> = BatchStream::new(10, plan).unwrap().take(6).collect();
        assert_eq!(items.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(items[3].1, epoch_batches(10, &plan, 1).unwrap()[0]);
    }

    #[test]
    fn rejects_oversized_batch() {
        let plan = BatchPlan { batch_size: 11, shuffle_seed: 0 };
        assert!(epoch_batches(10, &plan, 0).is_err());
    }

    proptest! {
        #[test]
        fn epoch_is_a_partition(n in 1usize..300, bs in 1usize..64, seed: u64, epoch in 0u64..5) {
            prop_assume!(bs <= n);
            let plan = BatchPlan { batch_size: bs, shuffle_seed: seed };
            let mut all: Vec<usize> = epoch_batches(n, &plan, epoch).unwrap().concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
