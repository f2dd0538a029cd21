//! Explicit discourse relation extraction.
//!
//! A passage is a list of dependency-parsed sentences. Each sentence is
//! scanned for one of ten unambiguous discourse markers attached through a
//! known dependency pattern; the best match (most even split) divides the
//! sentence into two elementary discourse units (EDUs). Sentences without a
//! match stay whole, and adjacent EDUs without an identified relation are
//! labeled `unknown`. A marker whose clause covers its whole sentence links
//! to the previous sentence instead (the next-sentence pattern).

mod conllu;
mod patterns;

pub use conllu::{parse_conllu, parse_conllu_docs, to_conllu};
pub use patterns::{match_patterns, select_candidate, Candidate, CandidateKind};

use serde::{Deserialize, Serialize};

use crate::error::{DvtError, Result};

/// The ten unambiguous discourse markers, grouped into four high-level
/// relation categories.
pub const MARKERS: [&str; 10] =
    ["although", "so", "because", "before", "after", "as", "then", "and", "also", "still"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Concession,
    Causal,
    Temporal,
    Conjunction,
}

impl Category {
    pub const ALL: [Category; 4] =
        [Category::Concession, Category::Causal, Category::Temporal, Category::Conjunction];

    pub fn index(self) -> usize {
        match self {
            Category::Concession => 0,
            Category::Causal => 1,
            Category::Temporal => 2,
            Category::Conjunction => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Concession => "Concession",
            Category::Causal => "Causal",
            Category::Temporal => "Temporal",
            Category::Conjunction => "Conjunction",
        }
    }
}

/// Category of a marker, or `None` for words outside the marker set.
pub fn marker_category(marker: &str) -> Option<Category> {
    match marker {
        "although" => Some(Category::Concession),
        "because" | "so" => Some(Category::Causal),
        "before" | "after" | "as" | "then" => Some(Category::Temporal),
        "and" | "also" | "still" => Some(Category::Conjunction),
        _ => None,
    }
}

/// Discourse label strings: every marker in both argument orders, plus
/// `unknown`. Index of a label in this list is its class id for the
/// bi-affine head.
pub fn label_vocabulary() -> Vec<String> {
    let mut v = Vec::with_capacity(21);
    for m in MARKERS {
        v.push(format!("{m}_arg1_arg2"));
        v.push(format!("{m}_arg2_arg1"));
    }
    v.push("unknown".to_string());
    v
}

/// Class id of a label. Unrecognized labels map to the `unknown` id.
pub fn label_id(label: &str) -> usize {
    static_label_id(label).unwrap_or(20)
}

fn static_label_id(label: &str) -> Option<usize> {
    if label == "unknown" {
        return Some(20);
    }
    let (marker, order) = label.split_once('_')?;
    let mi = MARKERS.iter().position(|&m| m == marker)?;
    match order {
        "arg1_arg2" => Some(mi * 2),
        "arg2_arg1" => Some(mi * 2 + 1),
        _ => None,
    }
}

/// One dependency-parsed sentence: words plus 1-based head indices
/// (0 = root) and dependency relation labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedSentence {
    pub words: Vec<String>,
    pub heads: Vec<usize>,
    pub deprels: Vec<String>,
}

impl ParsedSentence {
    pub fn new(words: Vec<String>, heads: Vec<usize>, deprels: Vec<String>) -> Result<Self> {
        let n = words.len();
        if heads.len() != n || deprels.len() != n {
            return Err(DvtError::Data(format!(
                "sentence fields disagree: {} words, {} heads, {} deprels",
                n,
                heads.len(),
                deprels.len()
            )));
        }
        let roots = heads.iter().filter(|&&h| h == 0).count();
        if n > 0 && roots != 1 {
            return Err(DvtError::Data(format!("sentence must have exactly one root, found {roots}")));
        }
        if let Some(&bad) = heads.iter().find(|&&h| h > n) {
            return Err(DvtError::Data(format!("head index {bad} out of range for {n} tokens")));
        }
        Ok(ParsedSentence { words, heads, deprels })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// 0-based index of the root token.
    pub fn root(&self) -> usize {
        self.heads.iter().position(|&h| h == 0).expect("validated on construction")
    }

    /// 0-based head of token `i`, or `None` for the root.
    pub fn head_of(&self, i: usize) -> Option<usize> {
        match self.heads[i] {
            0 => None,
            h => Some(h - 1),
        }
    }

    /// Token indices of the subtree rooted at `i` (including `i`).
    pub fn subtree(&self, i: usize) -> Vec<usize> {
        let n = self.len();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for t in 0..n {
            if let Some(h) = self.head_of(t) {
                children[h].push(t);
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![i];
        let mut out = Vec::new();
        while let Some(t) = stack.pop() {
            if seen[t] {
                continue;
            }
            seen[t] = true;
            out.push(t);
            stack.extend(children[t].iter().copied());
        }
        out.sort_unstable();
        out
    }
}

/// Token is pure punctuation (no alphanumeric characters).
pub fn is_punct(word: &str) -> bool {
    !word.is_empty() && word.chars().all(|c| !c.is_alphanumeric())
}

/// Discourse annotation of one passage: EDU spans as 0-based inclusive
/// global token offsets, and one label per adjacent pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscourseAnnotation {
    pub edus: Vec<(usize, usize)>,
    pub labels: Vec<String>,
}

impl DiscourseAnnotation {
    pub fn num_edus(&self) -> usize {
        self.edus.len()
    }

    /// Spans are sorted, non-overlapping, contiguous from `start`, and
    /// `|labels| = |edus| - 1`.
    pub fn validate(&self, total_tokens: usize) -> Result<()> {
        if self.edus.is_empty() {
            return Err(DvtError::Data("annotation needs at least one EDU".into()));
        }
        if self.labels.len() + 1 != self.edus.len() {
            return Err(DvtError::Data(format!(
                "{} labels for {} EDUs",
                self.labels.len(),
                self.edus.len()
            )));
        }
        let mut expected = self.edus[0].0;
        for &(s, e) in &self.edus {
            if s != expected || e < s {
                return Err(DvtError::Data(format!("EDU span ({s},{e}) breaks coverage at {expected}")));
            }
            expected = e + 1;
        }
        if expected > total_tokens {
            return Err(DvtError::Data(format!(
                "EDU spans reach {expected} but the passage has {total_tokens} tokens"
            )));
        }
        Ok(())
    }
}

/// Split every sentence by its selected relation and label adjacent EDUs.
/// Token offsets are global over the concatenated passage.
pub fn extract_annotations(passage: &[ParsedSentence]) -> DiscourseAnnotation {
    let mut edus: Vec<(usize, usize)> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut offset = 0usize;
    let mut prev: Option<&ParsedSentence> = None;
    for sent in passage {
        if sent.is_empty() {
            continue;
        }
        let len = sent.len();
        let cands = match_patterns(sent, prev);
        let selected = select_candidate(&cands);
        let mut boundary = "unknown".to_string();
        match selected {
            Some(c) => match c.kind {
                CandidateKind::Intra { split, .. } => {
                    if !edus.is_empty() {
                        labels.push(boundary);
                    }
                    edus.push((offset, offset + split - 1));
                    labels.push(c.label());
                    edus.push((offset + split, offset + len - 1));
                }
                CandidateKind::Inter => {
                    boundary = c.label();
                    if !edus.is_empty() {
                        labels.push(boundary);
                    }
                    edus.push((offset, offset + len - 1));
                }
            },
            None => {
                if !edus.is_empty() {
                    labels.push(boundary);
                }
                edus.push((offset, offset + len - 1));
            }
        }
        offset += len;
        prev = Some(sent);
    }
    DiscourseAnnotation { edus, labels }
}

/// Normalized distribution over the four relation categories from a stream
/// of labels. `unknown` labels are excluded; with no explicit relation at
/// all this is an error.
pub fn relation_distribution<'a, I>(labels: I) -> Result<[f64; 4]>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts = [0usize; 4];
    for label in labels {
        let marker = label.split('_').next().unwrap_or("");
        if let Some(cat) = marker_category(marker) {
            counts[cat.index()] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(DvtError::Eval("no explicit relations found".into()));
    }
    let mut out = [0.0; 4];
    for (o, &c) in out.iter_mut().zip(&counts) {
        *o = c as f64 / total as f64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_vocab_has_21_classes() {
        let v = label_vocabulary();
        assert_eq!(v.len(), 21);
        assert_eq!(v[20], "unknown");
        assert_eq!(label_id("although_arg2_arg1"), 1);
        assert_eq!(label_id("and_arg1_arg2"), 14);
        assert_eq!(label_id("unknown"), 20);
        assert_eq!(label_id("junk"), 20);
    }

    #[test]
    fn every_marker_has_one_category() {
        for m in MARKERS {
            assert!(marker_category(m).is_some(), "{m} lacks a category");
        }
        assert_eq!(marker_category("and"), Some(Category::Conjunction));
        assert_eq!(marker_category("walrus"), None);
    }

    #[test]
    fn distribution_counts_categories() {
        // all "and" labels -> all mass on Conjunction
        let labels = vec!["and_arg1_arg2", "and_arg2_arg1", "unknown"];
        let d = relation_distribution(labels.iter().copied()).unwrap();
        assert_eq!(d, [0.0, 0.0, 0.0, 1.0]);

        // one although + one then -> half Concession half Temporal
        let labels = vec!["although_arg2_arg1", "then_arg1_arg2"];
        let d = relation_distribution(labels.iter().copied()).unwrap();
        assert_eq!(d, [0.5, 0.0, 0.5, 0.0]);

        // only unknown -> error
        let labels = vec!["unknown"];
        assert!(relation_distribution(labels.iter().copied()).is_err());
    }

    #[test]
    fn distribution_sums_to_one() {
        let labels =
            vec!["so_arg1_arg2", "before_arg1_arg2", "also_arg1_arg2", "because_arg2_arg1", "still_arg1_arg2"];
        let d = relation_distribution(labels.iter().copied()).unwrap();
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn two_plain_sentences_one_unknown_label() {
        let plain = |words: &[&str]| {
            let n = words.len();
            // word 0 is the root; everything else attaches to it
            let heads = (0..n).map(|i| if i == 0 { 0 } else { 1 }).collect();
            let deprels =
                (0..n).map(|i| if i == 0 { "root".to_string() } else { "dep".to_string() }).collect();
            ParsedSentence::new(words.iter().map(|s| s.to_string()).collect(), heads, deprels).unwrap()
        };
        // NB: "dep" deprel on a non-marker word does not trigger patterns
        let passage = vec![plain(&["birds", "fly"]), plain(&["fish", "swim"])];
        let ann = extract_annotations(&passage);
        assert_eq!(ann.edus, vec![(0, 1), (2, 3)]);
        assert_eq!(ann.labels, vec!["unknown".to_string()]);
        ann.validate(4).unwrap();
        // idempotence
        assert_eq!(extract_annotations(&passage), ann);
    }
}
