//! Repetitive action loops.
//!
//! A loop is a contiguous action pattern of length at least three that occurs
//! at least twice in one trial. The loop cover of a trial is the set of
//! pairwise-disjoint pattern occurrences with maximum total length, subject
//! to every selected pattern contributing at least two occurrences. It is
//! formulated as a binary ILP and solved exactly by branch and bound.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lockbox::JointId;
use crate::runner::TrialRecord;

pub const MIN_LOOP_LEN: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LoopError {
    #[error("no usable (non-aborted) trials for condition {0}")]
    EmptyGroup(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pattern {
    pub tokens: Vec<JointId>,
}

impl Pattern {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub pattern: Pattern,
    /// Start offsets of every occurrence, overlapping ones included.
    pub occurrences: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccurrenceInterval {
    pub pattern: Pattern,
    pub start: usize,
    /// Inclusive.
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopCover {
    pub selected: Vec<OccurrenceInterval>,
    pub coverage: usize,
    pub coverage_fraction: f64,
}

/// Every distinct pattern of length `3..=len/2` occurring at least twice,
/// ordered by first occurrence, then length.
pub fn enumerate_candidates(seq: &[JointId]) -> Vec<Candidate> {
    let mut found: BTreeMap<&[JointId], Vec<usize>> = BTreeMap::new();
    for len in MIN_LOOP_LEN..=seq.len() / 2 {
        for start in 0..=seq.len() - len {
            found.entry(&seq[start..start + len]).or_default().push(start);
        }
    }
    let mut out: Vec<Candidate> = found
        .into_iter()
        .filter(|(_, occ)| occ.len() >= 2)
        .map(|(tokens, occurrences)| Candidate {
            pattern: Pattern {
                tokens: tokens.to_vec(),
            },
            occurrences,
        })
        .collect();
    out.sort_by_key(|c| (c.occurrences[0], c.pattern.len()));
    out
}

/// Binary variable `x_o`: occurrence `o` is in the cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccurrenceVar {
    /// Index of the owning pattern variable `y_q`.
    pub pattern: usize,
    pub start: usize,
    pub len: usize,
}

impl OccurrenceVar {
    pub fn end(&self) -> usize {
        self.start + self.len - 1
    }
}

/// maximize  sum_o len(o) x_o
/// s.t.      sum_{o covers t} x_o <= 1          for every position t
///           x_o <= y_q                         for every o in occ(q)
///           sum_{o in occ(q)} x_o >= 2 y_q     for every pattern q
///           x, y binary
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlpInstance {
    pub seq_len: usize,
    /// `x` variables, sorted by (start, len).
    pub occurrences: Vec<OccurrenceVar>,
    /// `y` variables.
    pub patterns: Vec<Pattern>,
    /// Per position: the `x` indices covering it.
    pub position_constraints: Vec<Vec<usize>>,
    /// `(x, y)` pairs of `x <= y`.
    pub link_constraints: Vec<(usize, usize)>,
    /// `(y, xs)`: `sum xs >= 2 y`.
    pub multiplicity_constraints: Vec<(usize, Vec<usize>)>,
}

impl IlpInstance {
    pub fn num_variables(&self) -> usize {
        self.occurrences.len() + self.patterns.len()
    }

    pub fn objective(&self, x: &[bool]) -> usize {
        self.occurrences
            .iter()
            .zip(x)
            .filter(|(_, &on)| on)
            .map(|(o, _)| o.len)
            .sum()
    }

    pub fn is_feasible(&self, x: &[bool], y: &[bool]) -> bool {
        if x.len() != self.occurrences.len() || y.len() != self.patterns.len() {
            return false;
        }
        let positions = self
            .position_constraints
            .iter()
            .all(|xs| xs.iter().filter(|&&o| x[o]).count() <= 1);
        let links = self.link_constraints.iter().all(|&(o, q)| !x[o] || y[q]);
        let multiplicity = self
            .multiplicity_constraints
            .iter()
            .all(|(q, xs)| xs.iter().filter(|&&o| x[o]).count() >= 2 * usize::from(y[*q]));
        positions && links && multiplicity
    }
}

pub fn build_ilp(candidates: &[Candidate], seq_len: usize) -> IlpInstance {
    let patterns: Vec<Pattern> = candidates.iter().map(|c| c.pattern.clone()).collect();
    let mut occurrences: Vec<OccurrenceVar> = candidates
        .iter()
        .enumerate()
        .flat_map(|(q, c)| {
            c.occurrences.iter().map(move |&start| OccurrenceVar {
                pattern: q,
                start,
                len: c.pattern.len(),
            })
        })
        .collect();
    occurrences.sort_by_key(|o| (o.start, o.len));
    let mut position_constraints = vec![Vec::new(); seq_len];
    let mut multiplicity: Vec<Vec<usize>> = vec![Vec::new(); patterns.len()];
    let mut link_constraints = Vec::with_capacity(occurrences.len());
    for (i, o) in occurrences.iter().enumerate() {
        for slot in &mut position_constraints[o.start..=o.end()] {
            slot.push(i);
        }
        link_constraints.push((i, o.pattern));
        multiplicity[o.pattern].push(i);
    }
    IlpInstance {
        seq_len,
        occurrences,
        patterns,
        position_constraints,
        link_constraints,
        multiplicity_constraints: multiplicity.into_iter().enumerate().collect(),
    }
}

struct Search<'a> {
    inst: &'a IlpInstance,
    by_pattern: Vec<Vec<usize>>,
    chosen: Vec<usize>,
    counts: Vec<usize>,
    value: usize,
    best: usize,
    best_set: Vec<usize>,
}

impl Search<'_> {
    /// Positions still coverable by occurrences `from..` starting after
    /// `frontier` (the last covered position, if any).
    fn reachable(&self, from: usize, frontier: Option<usize>) -> usize {
        let mut total = 0;
        let mut reach: Option<usize> = frontier;
        for o in &self.inst.occurrences[from..] {
            if frontier.is_some_and(|f| o.start <= f) {
                continue;
            }
            let lo = match reach {
                Some(r) if r >= o.start => r + 1,
                _ => o.start,
            };
            if o.end() >= lo {
                total += o.end() + 1 - lo;
                reach = Some(o.end());
            }
        }
        total
    }

    fn stranded(&self, from: usize, frontier: Option<usize>) -> bool {
        self.counts.iter().enumerate().any(|(q, &c)| {
            c == 1
                && !self.by_pattern[q]
                    .iter()
                    .any(|&o| o >= from && !frontier.is_some_and(|f| self.inst.occurrences[o].start <= f))
        })
    }

    fn dfs(&mut self, i: usize, frontier: Option<usize>) {
        if self.stranded(i, frontier) {
            return;
        }
        if self.value > self.best && self.counts.iter().all(|&c| c != 1) {
            self.best = self.value;
            self.best_set = self.chosen.clone();
        }
        if i == self.inst.occurrences.len() || self.value + self.reachable(i, frontier) <= self.best {
            return;
        }
        let o = self.inst.occurrences[i];
        if !frontier.is_some_and(|f| o.start <= f) {
            self.chosen.push(i);
            self.counts[o.pattern] += 1;
            self.value += o.len;
            self.dfs(i + 1, Some(o.end()));
            self.value -= o.len;
            self.counts[o.pattern] -= 1;
            self.chosen.pop();
        }
        self.dfs(i + 1, frontier);
    }
}

/// Exact optimum of `inst`. Among equal-coverage optima the one with the
/// lexicographically smallest set of `x` indices is returned.
pub fn solve_ilp(inst: &IlpInstance) -> Vec<usize> {
    let mut by_pattern = vec![Vec::new(); inst.patterns.len()];
    for (i, o) in inst.occurrences.iter().enumerate() {
        by_pattern[o.pattern].push(i);
    }
    let mut search = Search {
        inst,
        by_pattern,
        chosen: Vec::new(),
        counts: vec![0; inst.patterns.len()],
        value: 0,
        best: 0,
        best_set: Vec::new(),
    };
    search.dfs(0, None);
    search.best_set
}

pub fn solve_cover(inst: &IlpInstance) -> LoopCover {
    let chosen = solve_ilp(inst);
    let selected: Vec<OccurrenceInterval> = chosen
        .iter()
        .map(|&i| {
            let o = inst.occurrences[i];
            OccurrenceInterval {
                pattern: inst.patterns[o.pattern].clone(),
                start: o.start,
                end: o.end(),
            }
        })
        .collect();
    let coverage = selected.iter().map(|s| s.end + 1 - s.start).sum();
    LoopCover {
        coverage_fraction: if inst.seq_len == 0 {
            0.0
        } else {
            coverage as f64 / inst.seq_len as f64
        },
        coverage,
        selected,
    }
}

pub fn loop_cover(seq: &[JointId]) -> LoopCover {
    solve_cover(&build_ilp(&enumerate_candidates(seq), seq.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopStats {
    pub n_trials: usize,
    pub loop_probability: f64,
    pub mean_coverage_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionLoops {
    pub repetition: usize,
    #[serde(flatten)]
    pub stats: LoopStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionLoops {
    pub flip_p: f64,
    #[serde(flatten)]
    pub stats: LoopStats,
    pub per_repetition: Vec<RepetitionLoops>,
}

fn loop_stats(covers: &[&LoopCover]) -> LoopStats {
    let n = covers.len();
    LoopStats {
        n_trials: n,
        loop_probability: covers.iter().filter(|c| c.coverage > 0).count() as f64 / n as f64,
        mean_coverage_fraction: covers.iter().map(|c| c.coverage_fraction).sum::<f64>() / n as f64,
    }
}

/// Loop statistics per flip condition (grouped by grid index, in grid
/// order). Aborted trials are skipped.
pub fn loop_metrics(records: &[TrialRecord]) -> Result<Vec<ConditionLoops>, LoopError> {
    let mut groups: BTreeMap<usize, (f64, Vec<&TrialRecord>)> = BTreeMap::new();
    for r in records {
        groups.entry(r.grid_index).or_insert((r.flip_p, Vec::new())).1.push(r);
    }
    groups
        .into_values()
        .map(|(flip_p, recs)| {
            let usable: Vec<(usize, LoopCover)> = recs
                .iter()
                .filter(|r| !r.aborted)
                .map(|r| (r.repetition, loop_cover(&r.actions())))
                .collect();
            if usable.is_empty() {
                return Err(LoopError::EmptyGroup(format!("flip_p = {flip_p}")));
            }
            let mut reps: BTreeMap<usize, Vec<&LoopCover>> = BTreeMap::new();
            for (rep, cover) in &usable {
                reps.entry(*rep).or_default().push(cover);
            }
            let all: Vec<&LoopCover> = usable.iter().map(|(_, c)| c).collect();
            Ok(ConditionLoops {
                flip_p,
                stats: loop_stats(&all),
                per_repetition: reps
                    .into_iter()
                    .map(|(repetition, covers)| RepetitionLoops {
                        repetition,
                        stats: loop_stats(&covers),
                    })
                    .collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(s: &str) -> Vec<JointId> {
        s.bytes().map(|b| JointId((b - b'A') as usize)).collect()
    }

    #[test]
    fn enumerates_abcabc() {
        let c = enumerate_candidates(&seq("ABCABC"));
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].pattern.tokens, seq("ABC"));
        assert_eq!(c[0].occurrences, vec![0, 3]);
    }

    #[test]
    fn enumerates_overlapping() {
        let c = enumerate_candidates(&seq("ABABAB"));
        assert_eq!(c.len(), 2);
        assert_eq!(
            (c[0].pattern.tokens.clone(), c[0].occurrences.clone()),
            (seq("ABA"), vec![0, 2])
        );
        assert_eq!(
            (c[1].pattern.tokens.clone(), c[1].occurrences.clone()),
            (seq("BAB"), vec![1, 3])
        );
        assert!(enumerate_candidates(&seq("ABCD")).is_empty());
    }

    #[test]
    fn empty_instance() {
        let inst = build_ilp(&[], 0);
        assert_eq!(inst.num_variables(), 0);
        let cover = solve_cover(&inst);
        assert_eq!(cover.coverage, 0);
        assert_eq!(cover.coverage_fraction, 0.0);
    }

    #[test]
    fn two_disjoint_occurrences() {
        let inst = build_ilp(&enumerate_candidates(&seq("ABCABC")), 6);
        assert_eq!(inst.occurrences.len(), 2);
        assert_eq!(inst.patterns.len(), 1);
        assert_eq!(inst.position_constraints.len(), 6);
        assert_eq!(inst.multiplicity_constraints, vec![(0, vec![0, 1])]);
        let cover = solve_cover(&inst);
        assert_eq!(cover.coverage, 6);
        assert_eq!(cover.coverage_fraction, 1.0);
        assert!(inst.is_feasible(&[true, true], &[true]));
        assert!(!inst.is_feasible(&[true, false], &[true]));
        assert!(!inst.is_feasible(&[true, true], &[false]));
    }

    #[test]
    fn only_overlapping_occurrences_give_nothing() {
        // AAAA: AAA at 0 and 1, overlapping
        let cand = enumerate_candidates(&seq("AAAA"));
        assert!(cand.is_empty(), "len 4 caps patterns at 2");
        let cand = vec![Candidate {
            pattern: Pattern { tokens: seq("AAA") },
            occurrences: vec![0, 1],
        }];
        assert_eq!(solve_cover(&build_ilp(&cand, 4)).coverage, 0);
    }

    #[test]
    fn interleaved_example() {
        let cover = loop_cover(&seq("XABCYABCZ"));
        assert_eq!(cover.coverage, 6);
        assert!((cover.coverage_fraction - 6.0 / 9.0).abs() < 1e-15);
        assert_eq!(loop_cover(&seq("ABAB")).coverage, 0);
    }

    #[test]
    fn cover_is_valid() {
        let s = seq("ABCABCABCDABD");
        let cover = loop_cover(&s);
        for (i, a) in cover.selected.iter().enumerate() {
            assert_eq!(&s[a.start..=a.end], &a.pattern.tokens[..]);
            for b in &cover.selected[i + 1..] {
                assert!(a.end < b.start || b.end < a.start);
            }
            let same = cover.selected.iter().filter(|b| b.pattern == a.pattern).count();
            assert!(same >= 2);
        }
        // three ABC copies; nothing in the DABD tail repeats at length >= 3
        assert_eq!(cover.coverage, 9);
    }

    #[test]
    fn tie_break_is_lexicographic() {
        // ABCABCABC: any two of the three ABC copies, or ABCABC... patterns
        // of len 4 (ABCA, BCAB, CABC) only overlap; optimum 6 or 9?
        // Three ABC copies give 9 (all disjoint).
        let cover = loop_cover(&seq("ABCABCABC"));
        assert_eq!(cover.coverage, 9);
        let starts: Vec<_> = cover.selected.iter().map(|s| s.start).collect();
        assert_eq!(starts, vec![0, 3, 6]);
        // AAAAAA: AAA at 0 and 3
        let cover = loop_cover(&seq("AAAAAAA"));
        let starts: Vec<_> = cover.selected.iter().map(|s| s.start).collect();
        assert_eq!(starts, vec![0, 3]);
    }
}
