use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{bail, Result};
use crate::rng;

/// Seeded shuffle of `0..n`; the first `floor(2n/3)` indices go to the
/// retraining pool, the rest to the fuzzing pool.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, &[0x5917]));
    let cgt = idx.split_off(2 * n / 3);
    (idx, cgt)
}

/// Fails unless every id in `needed` appears in `available`.
pub fn check_pairing<'a>(
    needed: impl IntoIterator<Item = &'a str>,
    available: &BTreeSet<String>,
) -> Result<()> {
    let missing: Vec<&str> = needed.into_iter().filter(|id| !available.contains(*id)).collect();
    if let Some(first) = missing.first() {
        bail!(
            IncompletePairing,
            "{} id(s) lack an adversarial counterpart, first {first:?}",
            missing.len()
        );
    }
    Ok(())
}
