//! Brute-force metric oracles shared by the property and acceptance suites.
#![allow(dead_code)]

use std::collections::BTreeMap;

pub fn oracle_vi(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut pa: BTreeMap<usize, f64> = BTreeMap::new();
    let mut pb: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_default() += 1.0 / n;
        *pa.entry(x).or_default() += 1.0 / n;
        *pb.entry(y).or_default() += 1.0 / n;
    }
    joint
        .iter()
        .map(|(&(x, y), &r)| -r * ((r / pa[&x]).ln() + (r / pb[&y]).ln()))
        .sum()
}

pub fn oracle_ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut in_a, mut in_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            in_a += f64::from(u8::from(sa));
            in_b += f64::from(u8::from(sb));
            both += f64::from(u8::from(sa && sb));
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let expected = in_a * in_b / pairs;
    let max = 0.5 * (in_a + in_b);
    if (max - expected).abs() < 1e-12 {
        1.0
    } else {
        (both - expected) / (max - expected)
    }
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

pub fn oracle_sa(a: &[usize], b: &[usize]) -> f64 {
    let ka: Vec<usize> = a.iter().copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let kb: Vec<usize> = b.iter().copied().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let size = ka.len().max(kb.len());
    let mut best = 0usize;
    for perm in permutations(size) {
        let mut w = 0;
        for (i, &bi) in perm.iter().enumerate() {
            if i < ka.len() && bi < kb.len() {
                w += a.iter().zip(b).filter(|(x, y)| **x == ka[i] && **y == kb[bi]).count();
            }
        }
        best = best.max(w);
    }
    best as f64 / a.len() as f64
}

pub fn oracle_scene_acc(a: &[usize], b: &[usize]) -> bool {
    let block = |l: &[usize], k: usize| -> Vec<usize> { (0..l.len()).filter(|&i| l[i] == k).collect() };
    if block(a, 0) != block(b, 0) {
        return false;
    }
    let mut oa: Vec<Vec<usize>> = (1..=3).map(|k| block(a, k)).filter(|v| !v.is_empty()).collect();
    let mut ob: Vec<Vec<usize>> = (1..=3).map(|k| block(b, k)).filter(|v| !v.is_empty()).collect();
    oa.sort();
    ob.sort();
    oa == ob
}
