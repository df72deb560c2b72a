use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Manifest, Split, SplitSpec, ZoneCombo};
use crate::error::{Error, Result};

/// Largest-remainder (Hamilton) apportionment of `total` seats by `weights`.
/// Ties in the remainder go to the earlier stratum.
pub fn apportion(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut seats: Vec<usize> = weights.iter().map(|w| total * w / sum).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // stable sort keeps index order among equal remainders
    order.sort_by_key(|&i| std::cmp::Reverse((total * weights[i]) % sum));
    let missing = total - seats.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        seats[i] += 1;
    }
    seats
}

/// Train fraction as an exact ratio over 10^6.
fn fraction_ppm(train_fraction: f64) -> Result<u64> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Usage(format!(
            "train fraction must lie in [0, 1], got {train_fraction}"
        )));
    }
    Ok((train_fraction * 1e6).round() as u64)
}

/// Stratified train/test split by zone combination.
///
/// Each stratum first gets `floor(f * n)` training samples; the strata with
/// the largest fractional parts are then topped up one at a time until the
/// global training count equals `round(f * total)`. Within a stratum the
/// ids are shuffled with a seed derived from `seed` and the stratum.
pub fn stratified_split(manifest: &Manifest, train_fraction: f64, seed: u64) -> Result<SplitSpec> {
    if manifest.is_empty() {
        return Err(Error::Dataset("cannot split an empty manifest".into()));
    }
    const DEN: u64 = 1_000_000;
    let ppm = fraction_ppm(train_fraction)?;
    let mut strata: Vec<Vec<&str>> = vec![Vec::new(); ZoneCombo::ALL.len()];
    for e in &manifest.entries {
        strata[e.combo.index()].push(e.id.as_str());
    }
    let total = manifest.len() as u64;
    let target = ((2 * total * ppm + DEN) / (2 * DEN)) as usize;
    let mut train: Vec<usize> = strata
        .iter()
        .map(|s| (s.len() as u64 * ppm / DEN) as usize)
        .collect();
    let mut order: Vec<usize> = (0..strata.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((strata[i].len() as u64 * ppm) % DEN));
    let mut missing = target.saturating_sub(train.iter().sum());
    for &i in &order {
        if missing == 0 {
            break;
        }
        if train[i] < strata[i].len() {
            train[i] += 1;
            missing -= 1;
        }
    }

    let mut assignment = Vec::with_capacity(manifest.len());
    for (k, ids) in strata.iter_mut().enumerate() {
        ids.sort_unstable();
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x1000_0001).wrapping_add(k as u64));
        ids.shuffle(&mut rng);
        for (j, id) in ids.iter().enumerate() {
            let s = if j < train[k] {
                Split::Train
            } else {
                Split::Test
            };
            assignment.push((id.to_string(), s));
        }
    }
    assignment.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(SplitSpec {
        seed,
        train_fraction,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ManifestEntry;

    fn manifest(counts: [usize; 4]) -> Manifest {
        let mut entries = Vec::new();
        for (combo, n) in ZoneCombo::ALL.iter().zip(counts) {
            for _ in 0..n {
                entries.push(ManifestEntry {
                    id: format!("s{:04}", entries.len()),
                    combo: *combo,
                    split: None,
                });
            }
        }
        Manifest { entries }
    }

    fn test_counts(m: &Manifest, spec: &SplitSpec) -> [usize; 4] {
        let mut out = [0; 4];
        for e in &m.entries {
            if spec.get(&e.id) == Some(Split::Test) {
                out[e.combo.index()] += 1;
            }
        }
        out
    }

    #[test]
    fn reference_totals() {
        assert_eq!(
            apportion(205, &ZoneCombo::REFERENCE_COUNTS),
            vec![73, 68, 23, 41]
        );
        assert_eq!(
            apportion(41, &ZoneCombo::REFERENCE_COUNTS),
            vec![15, 14, 4, 8]
        );
        assert_eq!(apportion(4, &ZoneCombo::REFERENCE_COUNTS), vec![1, 1, 1, 1]);
    }

    #[test]
    fn reference_split_is_174_31() {
        let m = manifest([73, 68, 23, 41]);
        let spec = stratified_split(&m, 0.85, 0).unwrap();
        assert_eq!(spec.count(Split::Train), 174);
        assert_eq!(spec.count(Split::Test), 31);
        assert_eq!(test_counts(&m, &spec), [11, 10, 4, 6]);
    }

    #[test]
    fn full_training_fraction() {
        let m = manifest([3, 2, 2, 1]);
        let spec = stratified_split(&m, 1.0, 9).unwrap();
        assert_eq!(spec.count(Split::Test), 0);
        assert_eq!(spec.count(Split::Train), 8);
    }

    #[test]
    fn empty_manifest_is_an_error() {
        assert!(stratified_split(&Manifest::default(), 0.85, 0).is_err());
        assert!(stratified_split(&manifest([1, 1, 1, 1]), 1.5, 0).is_err());
    }

    #[test]
    fn seed_changes_membership_not_counts() {
        let m = manifest([73, 68, 23, 41]);
        let a = stratified_split(&m, 0.85, 1).unwrap();
        let b = stratified_split(&m, 0.85, 2).unwrap();
        assert_ne!(a.assignment, b.assignment);
        assert_eq!(test_counts(&m, &a), test_counts(&m, &b));
        assert_eq!(a, stratified_split(&m, 0.85, 1).unwrap());
    }
}
