use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::PromptError;
use crate::apportion::largest_remainder;
use crate::dataset::{AcuityLevel, Dataset, TriageRecord};
use crate::seeds::keyed_seed;

/// Largest-remainder quotas over the levels. When there are at least as many
/// shots as populated levels, every populated level gets one or more seats;
/// missing seats are taken from the level holding the most.
fn level_quotas(populations: &[usize], shots: usize) -> Vec<usize> {
    let mut quotas = largest_remainder(populations, shots);
    let populated = populations.iter().filter(|&&p| p > 0).count();
    if shots >= populated {
        while let Some(starved) = (0..quotas.len()).find(|&i| populations[i] > 0 && quotas[i] == 0) {
            let donor = (0..quotas.len()).max_by(|&a, &b| quotas[a].cmp(&quotas[b]).then(b.cmp(&a))).expect("non-empty");
            quotas[donor] -= 1;
            quotas[starved] += 1;
        }
    }
    quotas
}

/// Acuity-stratified random demonstration records: quotas over the five
/// levels by largest remainder, then a seeded draw within each level.
pub fn select_demos_random(train: &Dataset, shots: usize, seed: u64) -> Result<Vec<&TriageRecord>, PromptError> {
    select_demos_random_excluding(train, shots, seed, None)
}

/// As [`select_demos_random`], never returning the record with id `exclude`.
pub fn select_demos_random_excluding<'a>(
    train: &'a Dataset,
    shots: usize,
    seed: u64,
    exclude: Option<&str>,
) -> Result<Vec<&'a TriageRecord>, PromptError> {
    let mut by_level: Vec<Vec<&TriageRecord>> = vec![Vec::new(); AcuityLevel::COUNT];
    for r in &train.records {
        if Some(r.id.as_str()) == exclude {
            continue;
        }
        if let Some(l) = r.label {
            by_level[l.index()].push(r);
        }
    }
    let available: usize = by_level.iter().map(Vec::len).sum();
    if shots > available {
        return Err(PromptError::ShotsExceedTrain { shots, available });
    }
    let quotas = level_quotas(&by_level.iter().map(Vec::len).collect::<Vec<_>>(), shots);
    let mut out = Vec::with_capacity(shots);
    for (level, (mut pool, quota)) in by_level.into_iter().zip(quotas).enumerate() {
        pool.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = ChaCha8Rng::seed_from_u64(keyed_seed(seed, &format!("demos/level/{}", level + 1)));
        let (chosen, _) = pool.partial_shuffle(&mut rng, quota);
        out.extend_from_slice(chosen);
    }
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(keyed_seed(seed, "demos/order")));
    Ok(out)
}
