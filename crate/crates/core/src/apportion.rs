//! Largest-remainder (Hamilton) apportionment.

/// Splits `total` seats across strata proportionally to `populations`.
///
/// Every stratum first receives the floor of its exact share; the leftover
/// seats go to the largest fractional remainders. Equal remainders are
/// resolved in favour of the earlier stratum, so callers must pass strata in
/// their tie-break order. Arithmetic is exact (integer cross-multiplication).
///
/// Returns all zeros when the population is empty.
pub fn largest_remainder(populations: &[usize], total: usize) -> Vec<usize> {
    let pop_sum: usize = populations.iter().sum();
    if pop_sum == 0 {
        return vec![0; populations.len()];
    }
    let pop_sum = pop_sum as u128;
    let mut quotas = Vec::with_capacity(populations.len());
    let mut remainders = Vec::with_capacity(populations.len());
    for (idx, &p) in populations.iter().enumerate() {
        let scaled = p as u128 * total as u128;
        quotas.push((scaled / pop_sum) as usize);
        remainders.push((scaled % pop_sum, idx));
    }
    let assigned: usize = quotas.iter().sum();
    let mut leftover = total.saturating_sub(assigned);
    // larger remainder first, then lower index
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, idx) in &remainders {
        if leftover == 0 {
            break;
        }
        quotas[idx] += 1;
        leftover -= 1;
    }
    quotas
}
