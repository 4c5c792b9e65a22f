//! Re-segmentation of an unsegmented hypothesis stream against reference
//! sentences by minimizing the summed token-level edit distance.
//!
//! The dynamic program walks the references in order. For reference `n` it
//! runs a Levenshtein pass over the whole hypothesis whose first row is the
//! best cost of aligning references `1..n-1` to each hypothesis prefix, so a
//! segment may start at any column. Each cell tracks the column its segment
//! started at; after reference `n` those start columns are the only thing
//! kept, which makes the backtrace a chain of lookups.
//!
//! Ties inside a cell prefer match or substitution, then deletion of a
//! reference token, then insertion of a hypothesis token. In the first row,
//! continuing the current segment is preferred over starting it later, so
//! segments start at the earliest column among equal-cost choices.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Segmentation, TokenStream};
use crate::error::{Error, Result};

/// Largest hypothesis accepted by [`resegment_bruteforce`].
pub const BRUTEFORCE_MAX_HYP: usize = 14;
/// Largest reference count accepted by [`resegment_bruteforce`].
pub const BRUTEFORCE_MAX_REFS: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResegmentConfig {
    /// Compare tokens exactly instead of after lowercasing.
    pub case_sensitive: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentResult {
    /// Boundaries over the hypothesis; segments may be empty.
    pub segmentation: Segmentation,
    pub total_cost: usize,
    pub per_segment_cost: Vec<usize>,
}

/// Maps tokens to dense ids so the inner loops compare integers.
struct Interner {
    ids: HashMap<String, u32>,
    case_sensitive: bool,
}

impl Interner {
    fn new(cfg: ResegmentConfig) -> Self {
        Self {
            ids: HashMap::new(),
            case_sensitive: cfg.case_sensitive,
        }
    }

    fn intern(&mut self, stream: &TokenStream) -> Vec<u32> {
        stream
            .iter()
            .map(|tok| {
                let key = if self.case_sensitive {
                    tok.to_string()
                } else {
                    tok.to_lowercase()
                };
                let next = self.ids.len() as u32;
                *self.ids.entry(key).or_insert(next)
            })
            .collect()
    }
}

fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let next = (diag + usize::from(x != y))
                .min(row[j] + 1)
                .min(row[j + 1] + 1);
            diag = row[j + 1];
            row[j + 1] = next;
        }
    }
    row[b.len()]
}

/// Unit-cost token Levenshtein distance with exact token comparison.
pub fn edit_distance(a: &TokenStream, b: &TokenStream) -> usize {
    edit_distance_with(
        a,
        b,
        ResegmentConfig {
            case_sensitive: true,
        },
    )
}

pub fn edit_distance_with(a: &TokenStream, b: &TokenStream, cfg: ResegmentConfig) -> usize {
    let mut interner = Interner::new(cfg);
    let a = interner.intern(a);
    let b = interner.intern(b);
    levenshtein(&a, &b)
}

fn check_refs(refs: &[TokenStream]) -> Result<()> {
    if refs.is_empty() {
        return Err(Error::validation(
            "re-segmentation needs at least one reference",
        ));
    }
    if let Some(n) = refs.iter().position(TokenStream::is_empty) {
        return Err(Error::validation(format!(
            "reference sentence {} is empty",
            n + 1
        )));
    }
    Ok(())
}

fn finish(hyp: &[u32], refs: &[Vec<u32>], boundaries: Vec<usize>) -> Result<AlignmentResult> {
    let segmentation = Segmentation::permissive(boundaries, hyp.len())?;
    let per_segment_cost: Vec<usize> = segmentation
        .ranges()
        .zip(refs)
        .map(|(r, reference)| levenshtein(&hyp[r], reference))
        .collect();
    Ok(AlignmentResult {
        segmentation,
        total_cost: per_segment_cost.iter().sum(),
        per_segment_cost,
    })
}

#[derive(Clone, Copy)]
struct Cell {
    cost: u32,
    start: u32,
}

/// Splits `hyp` into `refs.len()` contiguous, possibly empty segments with
/// minimal total edit distance to the references.
///
/// Runs in `O(|hyp| * sum |ref|)` time. Working rows are `O(|hyp|)`; the
/// backtrace keeps one `u32` start column per reference and hypothesis
/// position.
pub fn resegment(
    hyp: &TokenStream,
    refs: &[TokenStream],
    cfg: ResegmentConfig,
) -> Result<AlignmentResult> {
    check_refs(refs)?;
    let mut interner = Interner::new(cfg);
    let hyp_ids = interner.intern(hyp);
    let ref_ids: Vec<Vec<u32>> = refs.iter().map(|r| interner.intern(r)).collect();
    let width = hyp_ids.len() + 1;

    const INF: u32 = u32::MAX / 2;
    // best cost of aligning the references seen so far to each hypothesis prefix
    let mut best: Vec<u32> = vec![INF; width];
    best[0] = 0;
    let mut starts: Vec<Vec<u32>> = Vec::with_capacity(refs.len());
    let mut prev = vec![
        Cell {
            cost: INF,
            start: 0
        };
        width
    ];
    let mut cur = prev.clone();

    for reference in &ref_ids {
        // row 0: no reference token consumed yet
        for h in 0..width {
            let begin = Cell {
                cost: best[h],
                start: h as u32,
            };
            prev[h] = if h == 0 {
                begin
            } else {
                let extend = Cell {
                    cost: prev[h - 1].cost + 1,
                    start: prev[h - 1].start,
                };
                if extend.cost <= begin.cost {
                    extend
                } else {
                    begin
                }
            };
        }
        for &tok in reference {
            cur[0] = Cell {
                cost: prev[0].cost + 1,
                start: prev[0].start,
            };
            for h in 1..width {
                let sub = prev[h - 1].cost + u32::from(hyp_ids[h - 1] != tok);
                let del = prev[h].cost + 1;
                let ins = cur[h - 1].cost + 1;
                cur[h] = if sub <= del && sub <= ins {
                    Cell {
                        cost: sub,
                        start: prev[h - 1].start,
                    }
                } else if del <= ins {
                    Cell {
                        cost: del,
                        start: prev[h].start,
                    }
                } else {
                    Cell {
                        cost: ins,
                        start: cur[h - 1].start,
                    }
                };
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        for (b, cell) in best.iter_mut().zip(&prev) {
            *b = cell.cost;
        }
        starts.push(prev.iter().map(|c| c.start).collect());
    }

    let mut boundaries = vec![0; refs.len()];
    let mut end = hyp_ids.len();
    for n in (0..refs.len()).rev() {
        boundaries[n] = end;
        end = starts[n][end] as usize;
    }
    debug_assert_eq!(end, 0);
    let result = finish(&hyp_ids, &ref_ids, boundaries)?;
    debug_assert_eq!(result.total_cost as u32, best[hyp_ids.len()]);
    Ok(result)
}

/// Exhaustive search over every boundary placement; returns the
/// lexicographically smallest boundary vector among the minima.
pub fn resegment_bruteforce(
    hyp: &TokenStream,
    refs: &[TokenStream],
    cfg: ResegmentConfig,
) -> Result<AlignmentResult> {
    check_refs(refs)?;
    if hyp.len() > BRUTEFORCE_MAX_HYP || refs.len() > BRUTEFORCE_MAX_REFS {
        return Err(Error::validation(format!(
            "brute force limited to |hyp| <= {BRUTEFORCE_MAX_HYP} and <= {BRUTEFORCE_MAX_REFS} references"
        )));
    }
    let mut interner = Interner::new(cfg);
    let hyp_ids = interner.intern(hyp);
    let ref_ids: Vec<Vec<u32>> = refs.iter().map(|r| interner.intern(r)).collect();

    let mut best: Option<(usize, Vec<usize>)> = None;
    let mut cuts = vec![0usize; refs.len() - 1];
    loop {
        let mut boundaries = cuts.clone();
        boundaries.push(hyp_ids.len());
        let mut start = 0;
        let cost: usize = boundaries
            .iter()
            .zip(&ref_ids)
            .map(|(&end, r)| {
                let c = levenshtein(&hyp_ids[start..end], r);
                start = end;
                c
            })
            .sum();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, boundaries));
        }
        // next non-decreasing cut vector in lexicographic order
        let Some(pos) = cuts.iter().rposition(|&c| c < hyp_ids.len()) else {
            break;
        };
        cuts[pos] += 1;
        let v = cuts[pos];
        for c in &mut cuts[pos + 1..] {
            *c = v;
        }
    }
    let (_, boundaries) = best.expect("at least one placement");
    finish(&hyp_ids, &ref_ids, boundaries)
}
