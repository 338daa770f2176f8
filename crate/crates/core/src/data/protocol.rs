use std::collections::{BTreeMap, HashSet};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub same: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VerificationProtocol {
    pub pairs: Vec<Pair>,
}

/// Probes with one gallery entry each (`gallery[i]` matches `probes[i]`) and
/// distractors from identities disjoint from every probe.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IdentificationProtocol {
    pub probes: Vec<usize>,
    pub gallery: Vec<usize>,
    pub distractors: Vec<usize>,
}

/// FNV-1a over a stream of integers.
fn fingerprint(values: impl Iterator<Item = u64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

impl VerificationProtocol {
    pub fn fingerprint(&self) -> u64 {
        fingerprint(
            self.pairs
                .iter()
                .flat_map(|p| [p.a as u64, p.b as u64, u64::from(p.same)]),
        )
    }

    pub fn positives(&self) -> usize {
        self.pairs.iter().filter(|p| p.same).count()
    }
}

impl IdentificationProtocol {
    pub fn fingerprint(&self) -> u64 {
        let sep = [u64::MAX];
        fingerprint(
            self.probes
                .iter()
                .chain(&self.gallery)
                .map(|&i| i as u64)
                .chain(sep)
                .chain(self.distractors.iter().map(|&i| i as u64)),
        )
    }
}

fn eval_by_class(ds: &Dataset) -> BTreeMap<usize, Vec<usize>> {
    let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in ds.eval_indices() {
        map.entry(ds.labels[i]).or_default().push(i);
    }
    map
}

/// Samples `n_pos` same-class and `n_neg` cross-class pairs of evaluation
/// samples, each without replacement.
pub fn build_verification_pairs(ds: &Dataset, n_pos: usize, n_neg: usize, seed: u64) -> Result<VerificationProtocol> {
    let mut rng = stream_rng(seed, streams::PROTOCOL);
    let by_class = eval_by_class(ds);
    let mut positives = Vec::new();
    for members in by_class.values() {
        for (k, &a) in members.iter().enumerate() {
            for &b in &members[k + 1..] {
                positives.push((a, b));
            }
        }
    }
    if n_pos > positives.len() {
        return Err(Error::InsufficientSamples(format!(
            "{n_pos} positive pairs requested, {} available",
            positives.len()
        )));
    }
    let eval: Vec<usize> = by_class.values().flatten().copied().collect();
    let total_pairs = eval.len() * eval.len().saturating_sub(1) / 2;
    let negative_total = total_pairs - positives.len();
    if n_neg > negative_total {
        return Err(Error::InsufficientSamples(format!(
            "{n_neg} negative pairs requested, {negative_total} available"
        )));
    }
    let mut pairs: Vec<Pair> = index::sample(&mut rng, positives.len(), n_pos)
        .into_iter()
        .map(|k| Pair {
            a: positives[k].0,
            b: positives[k].1,
            same: true,
        })
        .collect();
    if n_neg * 2 > negative_total {
        let mut all = Vec::with_capacity(negative_total);
        for (k, &a) in eval.iter().enumerate() {
            for &b in &eval[k + 1..] {
                if ds.labels[a] != ds.labels[b] {
                    all.push((a.min(b), a.max(b)));
                }
            }
        }
        for k in index::sample(&mut rng, all.len(), n_neg) {
            pairs.push(Pair {
                a: all[k].0,
                b: all[k].1,
                same: false,
            });
        }
    } else {
        let mut seen = HashSet::with_capacity(n_neg);
        while seen.len() < n_neg {
            let a = eval[rng.random_range(0..eval.len())];
            let b = eval[rng.random_range(0..eval.len())];
            if ds.labels[a] == ds.labels[b] {
                continue;
            }
            let key = (a.min(b), a.max(b));
            if seen.insert(key) {
                pairs.push(Pair {
                    a: key.0,
                    b: key.1,
                    same: false,
                });
            }
        }
    }
    Ok(VerificationProtocol { pairs })
}

/// Picks `n_probe_ids` identities, splitting two of their evaluation samples
/// into probe and gallery, then draws distractors from the other identities.
pub fn build_identification(
    ds: &Dataset,
    n_probe_ids: usize,
    n_distractors: usize,
    seed: u64,
) -> Result<IdentificationProtocol> {
    let mut rng = stream_rng(seed, streams::IDENTIFICATION);
    let by_class = eval_by_class(ds);
    let mut eligible: Vec<usize> = by_class
        .iter()
        .filter(|(_, m)| m.len() >= 2)
        .map(|(&c, _)| c)
        .collect();
    if n_probe_ids > eligible.len() {
        return Err(Error::InsufficientSamples(format!(
            "{n_probe_ids} probe identities requested, {} have two evaluation samples",
            eligible.len()
        )));
    }
    eligible.shuffle(&mut rng);
    let chosen: HashSet<usize> = eligible[..n_probe_ids].iter().copied().collect();
    let mut probes = Vec::with_capacity(n_probe_ids);
    let mut gallery = Vec::with_capacity(n_probe_ids);
    for c in &eligible[..n_probe_ids] {
        let members = &by_class[c];
        let pick = index::sample(&mut rng, members.len(), 2);
        probes.push(members[pick.index(0)]);
        gallery.push(members[pick.index(1)]);
    }
    let pool: Vec<usize> = by_class
        .iter()
        .filter(|(c, _)| !chosen.contains(c))
        .flat_map(|(_, m)| m.iter().copied())
        .collect();
    if n_distractors > pool.len() {
        return Err(Error::InsufficientSamples(format!(
            "{n_distractors} distractors requested, {} available from non-probe identities",
            pool.len()
        )));
    }
    let mut distractors: Vec<usize> = index::sample(&mut rng, pool.len(), n_distractors)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    distractors.sort_unstable();
    Ok(IdentificationProtocol {
        probes,
        gallery,
        distractors,
    })
}
