//! Partition comparison: variation of information, adjusted Rand index,
//! segmentation accuracy and scene accuracy, plus summary statistics.
//!
//! A [`Partition`] labels every one of the `N` template slots of a scene.
//! Label 0 is the missing set `V_0`; label `k + 1` is object `k`. The missing
//! set is an ordinary block for every metric.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::assignment;
use crate::error::{GcmError, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Partition {
    labels: Vec<usize>,
}

impl Partition {
    pub fn new(labels: Vec<usize>) -> Self {
        Partition { labels }
    }

    /// Builds a partition from explicit blocks; unlisted elements go to `V_0`.
    /// `blocks[i]` becomes label `i + 1`.
    pub fn from_blocks(n: usize, blocks: &[Vec<usize>]) -> Self {
        let mut labels = vec![0; n];
        for (i, block) in blocks.iter().enumerate() {
            for &e in block {
                labels[e] = i + 1;
            }
        }
        Partition { labels }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Non-empty blocks keyed by label, in ascending label order.
    pub fn blocks(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (e, &l) in self.labels.iter().enumerate() {
            out.entry(l).or_default().push(e);
        }
        out
    }

    /// Elements of the missing set `V_0`.
    pub fn missing(&self) -> Vec<usize> {
        (0..self.len()).filter(|&e| self.labels[e] == 0).collect()
    }
}

fn check_universe(a: &Partition, b: &Partition) -> Result<()> {
    if a.len() != b.len() {
        return Err(GcmError::UniverseMismatch(a.len(), b.len()));
    }
    Ok(())
}

/// Contingency table between the non-empty blocks of `a` (rows) and `b`.
fn contingency(a: &Partition, b: &Partition) -> Vec<Vec<usize>> {
    let ra: BTreeMap<usize, usize> = a.blocks().keys().enumerate().map(|(i, &l)| (l, i)).collect();
    let rb: BTreeMap<usize, usize> = b.blocks().keys().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut table = vec![vec![0; rb.len()]; ra.len()];
    for (la, lb) in a.labels.iter().zip(&b.labels) {
        table[ra[la]][rb[lb]] += 1;
    }
    table
}

pub fn variation_of_information(a: &Partition, b: &Partition) -> Result<f64> {
    check_universe(a, b)?;
    let n = a.len() as f64;
    if a.is_empty() {
        return Ok(0.0);
    }
    let table = contingency(a, b);
    let p: Vec<f64> = table.iter().map(|row| row.iter().sum::<usize>() as f64 / n).collect();
    let q: Vec<f64> = (0..table[0].len())
        .map(|j| table.iter().map(|row| row[j]).sum::<usize>() as f64 / n)
        .collect();
    let mut vi = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let r = c as f64 / n;
            vi -= r * ((r / p[i]).ln() + (r / q[j]).ln());
        }
    }
    Ok(vi.max(0.0))
}

fn choose2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Hubert–Arabie adjusted Rand index. Returns 1 when the chance-corrected
/// denominator vanishes, which only happens when both partitions are the
/// single block or both are all singletons.
pub fn adjusted_rand_index(a: &Partition, b: &Partition) -> Result<f64> {
    check_universe(a, b)?;
    if a.len() < 2 {
        return Err(GcmError::TooFewElements(a.len()));
    }
    let table = contingency(a, b);
    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let sa: f64 = table.iter().map(|row| choose2(row.iter().sum())).sum();
    let sb: f64 = (0..table[0].len())
        .map(|j| choose2(table.iter().map(|row| row[j]).sum()))
        .sum();
    let total = choose2(a.len());
    let expected = sa * sb / total;
    let max_index = 0.5 * (sa + sb);
    let denom = max_index - expected;
    if denom.abs() < 1e-12 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}

/// Maximum-weight one-to-one matching of blocks, weighted by overlap size,
/// divided by `N`.
pub fn segmentation_accuracy(a: &Partition, b: &Partition) -> Result<f64> {
    check_universe(a, b)?;
    if a.is_empty() {
        return Ok(1.0);
    }
    let table = contingency(a, b);
    let size = table.len().max(table[0].len());
    let mut cost = vec![0.0; size * size];
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            cost[i * size + j] = -(c as f64);
        }
    }
    let (_, total) = assignment::solve(&cost, size);
    Ok(-total / a.len() as f64)
}

/// True iff `V_0` agrees exactly and the object blocks agree as unordered sets.
pub fn scene_accuracy(a: &Partition, b: &Partition) -> Result<bool> {
    check_universe(a, b)?;
    if a.missing() != b.missing() {
        return Ok(false);
    }
    let objects = |p: &Partition| {
        let mut blocks: Vec<Vec<usize>> = p
            .blocks()
            .into_iter()
            .filter(|(l, _)| *l != 0)
            .map(|(_, v)| v)
            .collect();
        blocks.sort();
        blocks
    };
    Ok(objects(a) == objects(b))
}

/// All four metrics for one scene.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub sa: f64,
    pub ari: f64,
    pub vi: f64,
    pub scene_acc: f64,
}

impl SceneMetrics {
    pub fn compute(truth: &Partition, pred: &Partition) -> Result<Self> {
        Ok(SceneMetrics {
            sa: segmentation_accuracy(truth, pred)?,
            ari: adjusted_rand_index(truth, pred)?,
            vi: variation_of_information(truth, pred)?,
            scene_acc: if scene_accuracy(truth, pred)? { 1.0 } else { 0.0 },
        })
    }

    pub const NAMES: [&'static str; 4] = ["SA", "ARI", "VI", "SceneAcc"];

    pub fn values(&self) -> [f64; 4] {
        [self.sa, self.ari, self.vi, self.scene_acc]
    }
}

/// Mean, sample standard deviation and count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            std: f64::NAN,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, std, n }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub mean_diff: f64,
    pub t: f64,
    pub df: usize,
    /// Two-sided p-value.
    pub p_value: f64,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(GcmError::DimensionMismatch(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(GcmError::TooFewElements(a.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = summarize(&diffs);
    let df = s.n - 1;
    let se = s.std / (s.n as f64).sqrt();
    if se == 0.0 {
        let p_value = if s.mean == 0.0 { 1.0 } else { 0.0 };
        let t = if s.mean == 0.0 { 0.0 } else { s.mean.signum() * f64::INFINITY };
        return Ok(PairedTTest {
            mean_diff: s.mean,
            t,
            df,
            p_value,
        });
    }
    let t = s.mean / se;
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("df ≥ 1");
    let p_value = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(PairedTTest {
        mean_diff: s.mean,
        t,
        df,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(labels: &[usize]) -> Partition {
        Partition::new(labels.to_vec())
    }

    #[test]
    fn vi_examples() {
        let a = part(&[1, 1, 2, 2]);
        let b = part(&[1, 2, 1, 2]);
        assert_eq!(variation_of_information(&a, &a).unwrap(), 0.0);
        let vi = variation_of_information(&a, &b).unwrap();
        assert!((vi - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(variation_of_information(&a, &part(&[0, 0])).is_err());
    }

    #[test]
    fn ari_examples() {
        let a = part(&[0, 1, 1, 2, 2, 2]);
        assert!((adjusted_rand_index(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(adjusted_rand_index(&part(&[3, 3, 3]), &part(&[0, 0, 0])).unwrap(), 1.0);
        assert!(adjusted_rand_index(&part(&[0]), &part(&[0])).is_err());
        // one cluster against all singletons: ARI 0
        assert_eq!(adjusted_rand_index(&part(&[1, 1, 1, 1]), &part(&[0, 1, 2, 3])).unwrap(), 0.0);
    }

    #[test]
    fn sa_and_scene_accuracy() {
        let a = part(&[0, 1, 1, 2, 2]);
        let swapped = part(&[0, 2, 2, 1, 1]);
        assert_eq!(segmentation_accuracy(&a, &swapped).unwrap(), 1.0);
        assert!(scene_accuracy(&a, &swapped).unwrap());
        let moved = part(&[0, 1, 2, 2, 2]);
        assert!(!scene_accuracy(&a, &moved).unwrap());
        assert!((segmentation_accuracy(&a, &moved).unwrap() - 0.8).abs() < 1e-12);
        // relabelling V_0 is not allowed for scene accuracy
        assert!(!scene_accuracy(&part(&[0, 1]), &part(&[1, 0])).unwrap());
    }

    #[test]
    fn t_test_against_reference() {
        // differences 1,2,3,4,5: mean 3, sd sqrt(2.5), t = 3/(sqrt(2.5)/sqrt 5) ≈ 4.2426
        let a = [2.0, 4.0, 6.0, 8.0, 10.0];
        let b = [1.0, 2.0, 3.0, 4.0, 5.0];
        let t = paired_t_test(&a, &b).unwrap();
        assert!((t.t - 18f64.sqrt()).abs() < 1e-12);
        assert_eq!(t.df, 4);
        assert!(t.p_value > 0.01 && t.p_value < 0.02);
    }
}
