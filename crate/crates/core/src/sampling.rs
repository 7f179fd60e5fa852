//! Batch construction over the training split.
//!
//! Every batch holds `k` styles (two by default) with `B/k` sentences each.
//! The three modes differ only in which sentences may be drawn:
//!
//! * random: uniform with replacement, forever;
//! * pairwise: a cross-style sentence pair is contrasted at most once per run;
//! * corpus: a sentence is used at most once per epoch.
//!
//! When no admissible batch remains, [`Sampler::next_batch`] returns `None`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Split, StyleCorpus};
use crate::error::{config, Error, Result};

/// Upper bound on search nodes spent looking for one pairwise batch per
/// style group before that group is treated as exhausted.
pub const PAIRWISE_SEARCH_BUDGET: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SamplerMode {
    #[serde(rename = "random")]
    RandomReplacement,
    #[serde(rename = "pairwise")]
    PairwiseNoReplacement,
    #[serde(rename = "corpus")]
    CorpusNoReplacement,
}

impl SamplerMode {
    pub const ALL: [SamplerMode; 3] =
        [SamplerMode::RandomReplacement, SamplerMode::PairwiseNoReplacement, SamplerMode::CorpusNoReplacement];

    pub fn as_str(self) -> &'static str {
        match self {
            SamplerMode::RandomReplacement => "random",
            SamplerMode::PairwiseNoReplacement => "pairwise",
            SamplerMode::CorpusNoReplacement => "corpus",
        }
    }
}

impl fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SamplerMode::RandomReplacement),
            "pairwise" => Ok(SamplerMode::PairwiseNoReplacement),
            "corpus" => Ok(SamplerMode::CorpusNoReplacement),
            other => Err(config(format!("unknown sampler mode {other:?}"))),
        }
    }
}

/// Sentence ids grouped by style, in the order of `batch_styles`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub sentence_ids: Vec<usize>,
    pub styles: Vec<usize>,
    /// The distinct styles in this batch, ascending.
    pub batch_styles: Vec<usize>,
}

impl Batch {
    /// `(s, s̄)` for a two-style batch.
    pub fn style_pair(&self) -> Option<(usize, usize)> {
        match self.batch_styles[..] {
            [a, b] => Some((a, b)),
            _ => None,
        }
    }

    /// Every unordered cross-style pair of sentence ids in the batch,
    /// keyed by its style pair.
    pub fn cross_pairs(&self) -> Vec<((usize, usize), (usize, usize))> {
        let mut out = Vec::new();
        for i in 0..self.sentence_ids.len() {
            for j in i + 1..self.sentence_ids.len() {
                if self.styles[i] != self.styles[j] {
                    out.push(pair_key((self.styles[i], self.sentence_ids[i]), (self.styles[j], self.sentence_ids[j])));
                }
            }
        }
        out
    }
}

fn pair_key(a: (usize, usize), b: (usize, usize)) -> ((usize, usize), (usize, usize)) {
    let (a, b) = if a.0 <= b.0 { (a, b) } else { (b, a) };
    ((a.0, b.0), (a.1, b.1))
}

/// Sampler state: one per training run.
#[derive(Debug, Clone)]
pub struct Sampler {
    mode: SamplerMode,
    batch_size: usize,
    per_style: usize,
    pools: Vec<Vec<usize>>,
    groups: Vec<Vec<usize>>,
    rng: ChaCha8Rng,
    seen_pairs: HashMap<(usize, usize), HashSet<(usize, usize)>>,
    used: HashSet<usize>,
    epoch: usize,
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

impl Sampler {
    /// Draws from the training split of `corpus`.
    pub fn new(
        mode: SamplerMode,
        corpus: &StyleCorpus,
        batch_size: usize,
        seed: u64,
        styles_per_batch: usize,
    ) -> Result<Self> {
        Self::from_pools(mode, corpus.ids_by_style(Split::Train), batch_size, seed, styles_per_batch)
    }

    /// `pools[s]` lists the sentence ids of style `s`; ids must be unique.
    pub fn from_pools(
        mode: SamplerMode,
        pools: Vec<Vec<usize>>,
        batch_size: usize,
        seed: u64,
        styles_per_batch: usize,
    ) -> Result<Self> {
        let k = styles_per_batch;
        if k < 2 {
            return Err(config("a batch needs at least two styles"));
        }
        if pools.len() < k {
            return Err(config(format!("{k} styles per batch but the corpus has {}", pools.len())));
        }
        if !batch_size.is_multiple_of(k) || batch_size / k < 2 {
            return Err(config(format!(
                "batch size {batch_size} must be a multiple of {k} with at least 2 sentences per style"
            )));
        }
        let per_style = batch_size / k;
        if let Some((s, p)) = pools.iter().enumerate().find(|(_, p)| p.len() < per_style) {
            return Err(config(format!(
                "style {s} has {} training sentences, fewer than the {per_style} a batch needs",
                p.len()
            )));
        }
        let groups = combinations(pools.len(), k);
        Ok(Self {
            mode,
            batch_size,
            per_style,
            pools,
            groups,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seen_pairs: HashMap::new(),
            used: HashSet::new(),
            epoch: 0,
        })
    }

    pub fn mode(&self) -> SamplerMode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Cross-style pairs already contrasted, per style pair (pairwise mode).
    pub fn seen_pairs(&self) -> &HashMap<(usize, usize), HashSet<(usize, usize)>> {
        &self.seen_pairs
    }

    /// Ids drawn so far in this epoch (corpus mode).
    pub fn used_sentences(&self) -> &HashSet<usize> {
        &self.used
    }

    /// Total number of sentences across all pools.
    pub fn pool_size(&self) -> usize {
        self.pools.iter().map(Vec::len).sum()
    }

    /// Starts a new epoch. Corpus mode forgets which sentences were used;
    /// pairwise novelty is kept for the whole run.
    pub fn epoch_reset(&mut self) {
        self.used.clear();
        self.epoch += 1;
    }

    /// The next batch, or `None` when no admissible batch is left.
    pub fn next_batch(&mut self) -> Option<Batch> {
        match self.mode {
            SamplerMode::RandomReplacement => Some(self.random_batch()),
            SamplerMode::CorpusNoReplacement => self.corpus_batch(),
            SamplerMode::PairwiseNoReplacement => self.pairwise_batch(),
        }
    }

    fn assemble(&self, group: &[usize], chosen: Vec<Vec<usize>>) -> Batch {
        let mut sentence_ids = Vec::with_capacity(self.batch_size);
        let mut styles = Vec::with_capacity(self.batch_size);
        for (&s, ids) in group.iter().zip(chosen) {
            styles.extend(std::iter::repeat_n(s, ids.len()));
            sentence_ids.extend(ids);
        }
        Batch { sentence_ids, styles, batch_styles: group.to_vec() }
    }

    fn random_batch(&mut self) -> Batch {
        let group = self.groups.choose(&mut self.rng).expect("at least one group").clone();
        let chosen = group
            .iter()
            .map(|&s| {
                let pool = &self.pools[s];
                (0..self.per_style).map(|_| pool[self.rng.random_range(0..pool.len())]).collect()
            })
            .collect();
        self.assemble(&group, chosen)
    }

    fn corpus_batch(&mut self) -> Option<Batch> {
        let admissible: Vec<Vec<usize>> = self
            .groups
            .iter()
            .filter(|g| {
                g.iter().all(|&s| self.pools[s].iter().filter(|id| !self.used.contains(id)).count() >= self.per_style)
            })
            .cloned()
            .collect();
        let group = admissible.choose(&mut self.rng)?.clone();
        let mut chosen = Vec::with_capacity(group.len());
        for &s in &group {
            let free: Vec<usize> = self.pools[s].iter().copied().filter(|id| !self.used.contains(id)).collect();
            let pick: Vec<usize> = free.choose_multiple(&mut self.rng, self.per_style).copied().collect();
            self.used.extend(&pick);
            chosen.push(pick);
        }
        Some(self.assemble(&group, chosen))
    }

    fn pairwise_batch(&mut self) -> Option<Batch> {
        let mut order = self.groups.clone();
        order.shuffle(&mut self.rng);
        for group in order {
            let mut candidates: Vec<Vec<usize>> = group.iter().map(|&s| self.pools[s].clone()).collect();
            for c in &mut candidates {
                c.shuffle(&mut self.rng);
            }
            let mut search = PairSearch {
                group: &group,
                per_style: self.per_style,
                seen: &self.seen_pairs,
                budget: PAIRWISE_SEARCH_BUDGET,
            };
            let mut chosen = vec![Vec::new(); group.len()];
            if search.run(0, 0, &candidates, &mut chosen) {
                let batch = self.assemble(&group, chosen);
                for (key, pair) in batch.cross_pairs() {
                    self.seen_pairs.entry(key).or_default().insert(pair);
                }
                return Some(batch);
            }
        }
        None
    }
}

/// Depth-first search for one sentence set per style such that no
/// cross-style pair among them has been seen before. Each level carries the
/// candidates of every later style that are still compatible with all
/// choices made so far.
struct PairSearch<'a> {
    group: &'a [usize],
    per_style: usize,
    seen: &'a HashMap<(usize, usize), HashSet<(usize, usize)>>,
    budget: usize,
}

impl PairSearch<'_> {
    fn is_seen(&self, a: (usize, usize), b: (usize, usize)) -> bool {
        let (key, pair) = pair_key(a, b);
        self.seen.get(&key).is_some_and(|set| set.contains(&pair))
    }

    fn run(&mut self, slot: usize, start: usize, lists: &[Vec<usize>], chosen: &mut Vec<Vec<usize>>) -> bool {
        if slot == self.group.len() {
            return true;
        }
        if chosen[slot].len() == self.per_style {
            return self.run(slot + 1, 0, lists, chosen);
        }
        let need = self.per_style - chosen[slot].len();
        let pool = &lists[slot];
        for pos in start..pool.len() {
            if pool.len() - pos < need || self.budget == 0 {
                break;
            }
            self.budget -= 1;
            let id = pool[pos];
            let s = self.group[slot];
            let mut next = lists.to_vec();
            let mut feasible = true;
            for (&t, list) in self.group.iter().zip(next.iter_mut()).skip(slot + 1) {
                list.retain(|&o| !self.is_seen((s, id), (t, o)));
                if list.len() < self.per_style {
                    feasible = false;
                    break;
                }
            }
            if !feasible {
                continue;
            }
            chosen[slot].push(id);
            if self.run(slot, pos + 1, &next, chosen) {
                return true;
            }
            chosen[slot].pop();
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pools(sizes: &[usize]) -> Vec<Vec<usize>> {
        let mut next = 0;
        sizes
            .iter()
            .map(|&n| {
                let p = (next..next + n).collect();
                next += n;
                p
            })
            .collect()
    }

    fn check_invariants(b: &Batch, size: usize, k: usize) {
        assert_eq!(b.sentence_ids.len(), size);
        assert_eq!(b.styles.len(), size);
        assert_eq!(b.batch_styles.len(), k);
        for &s in &b.batch_styles {
            assert_eq!(b.styles.iter().filter(|&&x| x == s).count(), size / k);
        }
    }

    #[test]
    fn half_and_half_in_every_mode() {
        for mode in SamplerMode::ALL {
            let mut s = Sampler::from_pools(mode, pools(&[8, 8]), 8, 1, 2).unwrap();
            let b = s.next_batch().unwrap();
            check_invariants(&b, 8, 2);
            assert_eq!(b.style_pair(), Some((0, 1)));
            assert!(b.sentence_ids[..4].iter().all(|&id| id < 8));
            assert!(b.sentence_ids[4..].iter().all(|&id| id >= 8));
        }
    }

    #[test]
    fn pairwise_two_by_two_exhausts_on_second_call() {
        let mut s = Sampler::from_pools(SamplerMode::PairwiseNoReplacement, pools(&[2, 2]), 4, 0, 2).unwrap();
        let b = s.next_batch().unwrap();
        assert_eq!(b.cross_pairs().len(), 4);
        assert_eq!(s.seen_pairs()[&(0, 1)].len(), 4);
        assert!(s.next_batch().is_none());
        s.epoch_reset();
        assert!(s.next_batch().is_none());
        assert_eq!(s.epoch(), 1);
    }

    #[test]
    fn corpus_mode_two_batches_per_epoch() {
        let mut s = Sampler::from_pools(SamplerMode::CorpusNoReplacement, pools(&[4, 4]), 4, 3, 2).unwrap();
        for epoch in 0..3 {
            let mut ids: Vec<usize> = Vec::new();
            while let Some(b) = s.next_batch() {
                ids.extend(b.sentence_ids);
            }
            ids.sort_unstable();
            assert_eq!(ids, (0..8).collect::<Vec<_>>());
            assert_eq!(s.epoch(), epoch);
            s.epoch_reset();
        }
    }

    #[test]
    fn random_mode_is_uniform_per_sentence() {
        let mut s = Sampler::from_pools(SamplerMode::RandomReplacement, pools(&[10, 10]), 4, 9, 2).unwrap();
        let mut counts = vec![0usize; 20];
        let draws = 10_000;
        for _ in 0..draws {
            for id in s.next_batch().unwrap().sentence_ids {
                counts[id] += 1;
            }
        }
        // Each batch contains 2 draws per style, each a uniform pick from 10.
        let n = (draws * 2) as f64;
        let p = 0.1;
        let mean = n * p;
        let sd = (n * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 5.0 * sd, "count {c} vs mean {mean}");
        }
    }

    #[test]
    fn pairwise_never_repeats_a_cross_pair() {
        let mut s = Sampler::from_pools(SamplerMode::PairwiseNoReplacement, pools(&[20, 20]), 4, 5, 2).unwrap();
        let mut all = HashSet::new();
        let mut batches = 0;
        while let Some(b) = s.next_batch() {
            check_invariants(&b, 4, 2);
            for p in b.cross_pairs() {
                assert!(all.insert(p), "pair {p:?} repeated");
            }
            batches += 1;
            if batches % 10 == 0 {
                s.epoch_reset();
            }
        }
        assert!(batches >= 90, "only {batches} batches");
        let recorded: usize = s.seen_pairs().values().map(HashSet::len).sum();
        assert_eq!(recorded, all.len());
    }

    #[test]
    fn three_styles_per_batch() {
        for mode in SamplerMode::ALL {
            let mut s = Sampler::from_pools(mode, pools(&[12, 12, 12, 12]), 6, 2, 3).unwrap();
            for _ in 0..5 {
                let b = s.next_batch().unwrap();
                check_invariants(&b, 6, 3);
                assert_eq!(b.style_pair(), None);
            }
        }
    }

    #[test]
    fn configuration_errors() {
        let e = |size, k, sizes: &[usize]| {
            Sampler::from_pools(SamplerMode::RandomReplacement, pools(sizes), size, 0, k).unwrap_err()
        };
        assert!(matches!(e(2, 2, &[8, 8]), Error::Config(_)));
        assert!(matches!(e(5, 2, &[8, 8]), Error::Config(_)));
        assert!(matches!(e(4, 2, &[8]), Error::Config(_)));
        assert!(matches!(e(8, 2, &[8, 3]), Error::Config(_)));
        assert!(matches!(e(8, 1, &[8, 8]), Error::Config(_)));
    }

    #[test]
    fn ten_thousand_draws_per_mode() {
        for mode in SamplerMode::ALL {
            let mut s = Sampler::from_pools(mode, pools(&[100, 100, 60]), 4, 17, 2).unwrap();
            let mut drawn = 0;
            let mut epoch_ids = HashSet::new();
            let mut pairs = HashSet::new();
            while drawn < 10_000 {
                let Some(b) = s.next_batch() else {
                    if mode != SamplerMode::CorpusNoReplacement {
                        break;
                    }
                    s.epoch_reset();
                    epoch_ids.clear();
                    continue;
                };
                check_invariants(&b, 4, 2);
                if mode == SamplerMode::CorpusNoReplacement {
                    assert!(b.sentence_ids.iter().all(|&id| epoch_ids.insert(id)));
                }
                if mode == SamplerMode::PairwiseNoReplacement {
                    assert!(b.cross_pairs().into_iter().all(|p| pairs.insert(p)));
                }
                drawn += 1;
            }
            if mode != SamplerMode::PairwiseNoReplacement {
                assert_eq!(drawn, 10_000);
            } else {
                assert!(drawn > 4_000, "pairwise stopped after {drawn}");
            }
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        for mode in SamplerMode::ALL {
            let run = || {
                let mut s = Sampler::from_pools(mode, pools(&[7, 9, 8]), 4, 42, 2).unwrap();
                (0..15).map_while(|_| s.next_batch()).collect::<Vec<_>>()
            };
            assert_eq!(run(), run());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn emitted_batches_respect_contracts(
            sizes in prop::collection::vec(2usize..12, 2..5),
            half in 2usize..4,
            seed in any::<u64>(),
        ) {
            prop_assume!(sizes.iter().all(|&n| n >= half));
            let size = 2 * half;
            for mode in SamplerMode::ALL {
                let mut s = Sampler::from_pools(mode, pools(&sizes), size, seed, 2).unwrap();
                let mut epoch_ids = HashSet::new();
                let mut pairs = HashSet::new();
                for _ in 0..200 {
                    let Some(b) = s.next_batch() else {
                        if mode == SamplerMode::CorpusNoReplacement && s.epoch() < 3 {
                            s.epoch_reset();
                            epoch_ids.clear();
                            continue;
                        }
                        break;
                    };
                    check_invariants(&b, size, 2);
                    let (a, c) = b.style_pair().unwrap();
                    prop_assert!(a < c);
                    if mode == SamplerMode::CorpusNoReplacement {
                        for &id in &b.sentence_ids {
                            prop_assert!(epoch_ids.insert(id));
                        }
                    }
                    if mode == SamplerMode::PairwiseNoReplacement {
                        for p in b.cross_pairs() {
                            prop_assert!(pairs.insert(p));
                        }
                    }
                }
            }
        }
    }
}
