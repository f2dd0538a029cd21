//! Dependency patterns for the ten discourse markers.
//!
//! Intra-sentence patterns (the marker's clause is Arg2, the matrix clause
//! Arg1; the label order follows linear order in the text):
//!
//! - `although / because / before / after / as / so`: the marker bears
//!   `mark` and attaches to a clause head with `advcl`.
//! - `then`: `advmod` on a `parataxis` clause head.
//! - `and`: `cc` on a `conj` clause head.
//! - `still`: `advmod` on a `dep` clause head.
//!
//! Next-sentence pattern: a marker attached directly to the sentence root
//! (`advmod`, `mark`, or `cc`) has only one argument inside its sentence, so
//! the previous adjacent sentence is heuristically labeled Arg1. This covers
//! `also` and sentence-initial uses of the other markers.

use super::{is_punct, ParsedSentence, MARKERS};

/// How a candidate splits text into two arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateKind {
    /// Split inside the sentence: EDU1 = tokens before `split`, EDU2 = rest.
    /// `arg2_first` records whether the marker's clause is the earlier one.
    Intra { split: usize, arg2_first: bool },
    /// Whole sentence is Arg2; previous sentence is Arg1.
    Inter,
}

/// One pattern match inside a sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub marker: String,
    /// Sentence-local token index of the marker.
    pub marker_pos: usize,
    pub kind: CandidateKind,
    /// `|len(arg1) - len(arg2)|`; smaller divides the sentence more evenly.
    pub evenness: usize,
}

impl Candidate {
    /// Label string `{marker}_{first}_{second}` by linear argument order.
    pub fn label(&self) -> String {
        let arg2_first = match self.kind {
            CandidateKind::Intra { arg2_first, .. } => arg2_first,
            CandidateKind::Inter => false, // previous sentence (Arg1) comes first
        };
        if arg2_first {
            format!("{}_arg2_arg1", self.marker)
        } else {
            format!("{}_arg1_arg2", self.marker)
        }
    }
}

fn marker_index(word: &str) -> Option<usize> {
    let lower = word.to_lowercase();
    MARKERS.iter().position(|&m| m == lower)
}

/// The clause-head deprel expected for each marker's intra-sentence pattern,
/// given the marker's own deprel.
fn intra_pattern(marker: &str, marker_rel: &str, clause_rel: &str) -> bool {
    match marker {
        "although" | "because" | "before" | "after" | "as" | "so" => {
            marker_rel == "mark" && clause_rel == "advcl"
        }
        "then" => marker_rel == "advmod" && clause_rel == "parataxis",
        "and" => marker_rel == "cc" && clause_rel == "conj",
        "still" => marker_rel == "advmod" && clause_rel == "dep",
        _ => false,
    }
}

/// Find every pattern match in `sent`. `prev_sent` enables the
/// next-sentence pattern; candidates needing it are dropped when there is
/// no previous sentence.
pub fn match_patterns(sent: &ParsedSentence, prev_sent: Option<&ParsedSentence>) -> Vec<Candidate> {
    let n = sent.len();
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let root = sent.root();
    for i in 0..n {
        let Some(_) = marker_index(&sent.words[i]) else { continue };
        let marker = sent.words[i].to_lowercase();
        let rel = sent.deprels[i].as_str();
        if let Some(h2) = sent.head_of(i) {
            if h2 != root && intra_pattern(&marker, rel, sent.deprels[h2].as_str()) && sent.head_of(h2).is_some()
            {
                if let Some(c) = intra_candidate(sent, &marker, i, h2) {
                    out.push(c);
                    continue;
                }
            }
            // Marker attached straight to the root: its clause is the whole
            // sentence, so only one argument lives here.
            if h2 == root && matches!(rel, "advmod" | "mark" | "cc") {
                if let Some(prev) = prev_sent {
                    out.push(Candidate {
                        marker,
                        marker_pos: i,
                        kind: CandidateKind::Inter,
                        evenness: prev.len().abs_diff(n),
                    });
                }
            }
        }
    }
    out
}

/// Build the intra-sentence candidate for a marker at `i` whose clause head
/// is `h2`. Returns `None` for degenerate splits (empty side).
fn intra_candidate(sent: &ParsedSentence, marker: &str, i: usize, h2: usize) -> Option<Candidate> {
    let n = sent.len();
    let clause = sent.subtree(h2); // includes the marker itself
    let lo = clause.iter().copied().min()?.min(i);
    let hi = clause.iter().copied().max()?.max(i);
    let arg2_first = lo == 0;
    let mut split = if arg2_first { hi + 1 } else { lo };
    // Boundary punctuation belongs to the preceding span.
    while split < n && is_punct(&sent.words[split]) {
        split += 1;
    }
    if split == 0 || split >= n {
        return None;
    }
    let evenness = split.abs_diff(n - split);
    Some(Candidate { marker: marker.to_string(), marker_pos: i, kind: CandidateKind::Intra { split, arg2_first }, evenness })
}

/// Keep the candidate that divides the text most evenly; ties break toward
/// the leftmost marker.
pub fn select_candidate(candidates: &[Candidate]) -> Option<&Candidate> {
    candidates.iter().min_by_key(|c| (c.evenness, c.marker_pos))
}
