use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng;

fn check_fractions(fractions: &[f64]) -> Result<()> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::Fractions(format!("{fractions:?} must all be positive")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Fractions(format!("{fractions:?} sum to {total}, not 1")));
    }
    Ok(())
}

/// Splits `n` items into parts whose sizes differ from `n * f` by less than one
/// (largest-remainder rounding, ties to the earlier part).
fn apportion(n: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| libm::floor(*q) as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.partial_cmp(&ra)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Per-class part sizes: every class gets `floor(n_c * f)` per part plus at
/// most one extra item, and the extras are placed so that part totals match
/// `apportion(n, fractions)` exactly.
fn apportion_by_class(sizes: &[usize], fractions: &[f64]) -> Vec<Vec<usize>> {
    let n: usize = sizes.iter().sum();
    let mut counts: Vec<Vec<usize>> = sizes
        .iter()
        .map(|&m| fractions.iter().map(|f| libm::floor(f * m as f64) as usize).collect())
        .collect();
    let target = apportion(n, fractions);
    let mut demand: Vec<usize> = (0..fractions.len())
        .map(|j| target[j] - counts.iter().map(|c| c[j]).sum::<usize>())
        .collect();
    // Classes with the most leftover items choose first, each taking parts
    // with the largest unmet demand.
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    let leftover = |c: usize, counts: &[Vec<usize>]| sizes[c] - counts[c].iter().sum::<usize>();
    order.sort_by_key(|&c| (core::cmp::Reverse(leftover(c, &counts)), c));
    for c in order {
        let extra = leftover(c, &counts);
        let mut parts: Vec<usize> = (0..fractions.len()).collect();
        parts.sort_by_key(|&j| (core::cmp::Reverse(demand[j]), j));
        for &j in parts.iter().take(extra) {
            counts[c][j] += 1;
            demand[j] = demand[j].saturating_sub(1);
        }
    }
    counts
}

/// Part index for every item such that each label is spread over the parts
/// in proportion to `fractions` (off by less than one per label and part),
/// with part sizes as close to `n * f` as a plain split would give.
pub fn stratified_assign(labels: &[usize], fractions: &[f64], seed: u64) -> Result<Vec<usize>> {
    check_fractions(fractions)?;
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < fractions.len() {
            return Err(Error::Stratification {
                class,
                count: members.len(),
                parts: fractions.len(),
            });
        }
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let counts = apportion_by_class(&sizes, fractions);
    let mut part = vec![0usize; labels.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        let mut r = rng::stream(&[seed, class as u64, 0x5717]);
        rng::shuffle(members, &mut r);
        let mut it = members.iter();
        for (p, &c) in counts[class].iter().enumerate() {
            for &i in it.by_ref().take(c) {
                part[i] = p;
            }
        }
    }
    Ok(part)
}

fn gather(dataset: &Dataset, part: &[usize], parts: usize) -> Vec<Dataset> {
    let mut idx: Vec<Vec<usize>> = vec![Vec::new(); parts];
    for (i, &p) in part.iter().enumerate() {
        idx[p].push(i);
    }
    idx.iter().map(|ix| dataset.subset(ix)).collect()
}

/// Stratified split of a classification dataset. Documents keep their
/// original relative order inside each part.
pub fn stratified_split(dataset: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    let labels = dataset
        .class_labels()
        .ok_or(Error::TaskMismatch("stratified split needs class labels"))?;
    let part = stratified_assign(&labels, fractions, seed)?;
    Ok(gather(dataset, &part, fractions.len()))
}

/// Seeded unstratified split, used for regression data.
pub fn random_split(dataset: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    check_fractions(fractions)?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    rng::shuffle(&mut order, &mut rng::stream(&[seed, 0xA11]));
    let counts = apportion(dataset.len(), fractions);
    let mut part = vec![0usize; dataset.len()];
    let mut it = order.iter();
    for (p, &c) in counts.iter().enumerate() {
        for &i in it.by_ref().take(c) {
            part[i] = p;
        }
    }
    Ok(gather(dataset, &part, fractions.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{Document, Label, Task};

    fn balanced(n: usize, classes: usize) -> Dataset {
        let docs = (0..n)
            .map(|i| Document::new(vec![i as u32 + 2; 4], Label::Class(i % classes), 0))
            .collect();
        Dataset::new(Task::Classification { classes }, docs).unwrap()
    }

    #[test]
    fn exact_proportions_when_divisible() {
        let ds = balanced(100, 4);
        let parts = stratified_split(&ds, &[0.8, 0.2], 3).unwrap();
        assert_eq!(parts[0].len(), 80);
        assert_eq!(parts[1].len(), 20);
        for c in 0..4 {
            let n0 = parts[0].docs.iter().filter(|d| d.label == Label::Class(c)).count();
            let n1 = parts[1].docs.iter().filter(|d| d.label == Label::Class(c)).count();
            assert_eq!((n0, n1), (20, 5));
        }
    }

    #[test]
    fn part_totals_match_the_fractions_across_classes() {
        let ds = balanced(3000, 6);
        let parts = stratified_split(&ds, &[4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0], 1).unwrap();
        assert_eq!([parts[0].len(), parts[1].len(), parts[2].len()], [2000, 500, 500]);
        for p in &parts {
            for c in 0..6 {
                let n = p.docs.iter().filter(|d| d.label == Label::Class(c)).count() as f64;
                assert!((n - p.len() as f64 / 6.0).abs() < 1.0);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let ds = balanced(60, 3);
        assert_eq!(
            stratified_split(&ds, &[0.5, 0.5], 11).unwrap(),
            stratified_split(&ds, &[0.5, 0.5], 11).unwrap()
        );
        assert_ne!(
            stratified_split(&ds, &[0.5, 0.5], 11).unwrap(),
            stratified_split(&ds, &[0.5, 0.5], 12).unwrap()
        );
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let ds = balanced(10, 2);
        assert!(matches!(
            stratified_split(&ds, &[0.5, 0.4], 0),
            Err(Error::Fractions(_))
        ));
        assert!(matches!(
            stratified_split(&ds, &[1.2, -0.2], 0),
            Err(Error::Fractions(_))
        ));
    }

    #[test]
    fn small_class_is_a_stratification_error() {
        let ds = balanced(2, 2);
        assert!(matches!(
            stratified_split(&ds, &[0.5, 0.3, 0.2], 0),
            Err(Error::Stratification { .. })
        ));
    }

    #[test]
    fn apportion_rounds_within_one() {
        for n in [1usize, 7, 13, 101] {
            let f = [0.7, 0.2, 0.1];
            let c = apportion(n, &f);
            assert_eq!(c.iter().sum::<usize>(), n);
            for (ci, fi) in c.iter().zip(f) {
                assert!((*ci as f64 - fi * n as f64).abs() < 1.0);
            }
        }
    }
}
