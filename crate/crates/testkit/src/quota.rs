//! Exact stratified quota oracle using rational arithmetic on decimal rates.

use std::collections::BTreeMap;

/// Rate given as a decimal string, e.g. "0.3", turned into `num / den`.
pub fn parse_rate(s: &str) -> (u128, u128) {
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    let den = 10u128.pow(frac.len() as u32);
    let num = int.parse::<u128>().unwrap() * den + if frac.is_empty() { 0 } else { frac.parse::<u128>().unwrap() };
    (num, den)
}

/// floor(rate * n_c) per category, then `round_half_up(rate * N) - sum`
/// extra slots to the largest fractional parts, ties to the smaller id.
/// Categories whose quota is zero are raised to one.
pub fn quotas(counts: &BTreeMap<u64, usize>, rate: &str) -> BTreeMap<u64, usize> {
    let (num, den) = parse_rate(rate);
    let total_n: u128 = counts.values().map(|&n| n as u128).sum();
    let target = (2 * num * total_n + den) / (2 * den);
    let mut q: BTreeMap<u64, usize> = counts
        .iter()
        .map(|(&c, &n)| (c, (num * n as u128 / den) as usize))
        .collect();
    let assigned: u128 = q.values().map(|&v| v as u128).sum();
    let mut rem: Vec<(u128, u64)> = counts
        .iter()
        .map(|(&c, &n)| ((num * n as u128) % den, c))
        .filter(|&(r, _)| r > 0)
        .collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in rem.iter().take((target - assigned) as usize) {
        *q.get_mut(&c).unwrap() += 1;
    }
    for (c, v) in q.iter_mut() {
        if *v == 0 && counts[c] > 0 {
            *v = 1;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_example() {
        let counts = BTreeMap::from([(1, 20), (2, 10), (3, 5)]);
        let q = quotas(&counts, "0.5");
        // 17.5 rounds to 18; the single fractional slot goes to category 3
        assert_eq!(q, BTreeMap::from([(1, 10), (2, 5), (3, 3)]));
    }
}
