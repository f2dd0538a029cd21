//! Dataset ingestion: vocabulary, whitespace tokenization, JSONL loading,
//! and length normalization to the CNN block size.

pub mod synth;

use serde::Deserialize;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::discourse::DiscourseAnnotation;
use crate::error::{DvtError, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Word-level vocabulary with dense, stable ids. The four specials always
/// occupy ids 0..=3.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Vocabulary from an explicit ordered word list (specials prepended).
    pub fn from_tokens<I: IntoIterator<Item = String>>(words: I) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for w in words {
            if !tokens.contains(&w) {
                tokens.push(w);
            }
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    /// Encode whitespace-separated words; unknown words map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|w| self.id(w).unwrap_or(UNK)).collect()
    }

    /// Inverse of [`Vocab::encode`] up to whitespace normalization and unk
    /// substitution. Specials render literally.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", self.token(id).unwrap_or("<unk>"));
        }
        out
    }

    /// Plain text format: one token per line, line number = id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut body = String::new();
        for t in &self.tokens {
            body.push_str(t);
            body.push('\n');
        }
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        if tokens.len() < 4 || tokens[..4] != SPECIALS.map(String::from) {
            return Err(DvtError::Data(format!(
                "vocab file {} must start with the four specials {:?}",
                path.display(),
                SPECIALS
            )));
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Vocab { tokens, index })
    }
}

/// Frequency-ordered vocabulary from raw texts: descending count, ties
/// lexicographic. `max_size` caps the total size including specials.
pub fn build_vocab(texts: &[String], max_size: usize, min_freq: usize) -> Result<Vocab> {
    if max_size < 4 {
        return Err(DvtError::Config(format!("max_size {max_size} cannot fit the 4 specials")));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in texts {
        for w in t.split_whitespace() {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    let mut items: Vec<(&str, usize)> =
        counts.into_iter().filter(|&(_, c)| c >= min_freq.max(1)).collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    items.truncate(max_size - 4);
    Ok(Vocab::from_tokens(items.into_iter().map(|(w, _)| w.to_string())))
}

/// Pad a sequence up to the next multiple of `block`. The mask is true on
/// pad positions.
pub fn pad_to_block(ids: &[usize], block: usize) -> Result<(Vec<usize>, Vec<bool>)> {
    if block == 0 {
        return Err(DvtError::Config("block size must be positive".into()));
    }
    let target = ids.len().div_ceil(block) * block;
    let mut out = ids.to_vec();
    let mut mask = vec![false; ids.len()];
    out.resize(target, PAD);
    mask.resize(target, true);
    Ok((out, mask))
}

/// One training example.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptStoryPair {
    pub prompt_ids: Vec<usize>,
    /// Padded to a multiple of the CNN block.
    pub story_ids: Vec<usize>,
    /// True exactly on pad positions of `story_ids`.
    pub story_mask: Vec<bool>,
    pub annotation: Option<DiscourseAnnotation>,
}

impl PromptStoryPair {
    pub fn num_content_tokens(&self) -> usize {
        self.story_mask.iter().filter(|&&p| !p).count()
    }
}

#[derive(Deserialize)]
struct RawRecord {
    prompt: Option<String>,
    story: Option<String>,
    #[serde(default)]
    annotation: Option<DiscourseAnnotation>,
}

/// Assemble a pair from token ids: truncate the story to `max_tgt`, pad to
/// the block, truncate the prompt to `max_src`, and clip annotation spans to
/// the truncated story.
pub fn make_pair(
    mut prompt_ids: Vec<usize>,
    mut story_ids: Vec<usize>,
    annotation: Option<DiscourseAnnotation>,
    block: usize,
    max_src: usize,
    max_tgt: usize,
) -> Result<PromptStoryPair> {
    prompt_ids.truncate(max_src);
    story_ids.truncate(max_tgt);
    let content_len = story_ids.len();
    let (story_ids, story_mask) = pad_to_block(&story_ids, block)?;
    let annotation = annotation.and_then(|ann| {
        let mut edus: Vec<(usize, usize)> = ann
            .edus
            .iter()
            .copied()
            .take_while(|&(s, _)| s < content_len)
            .map(|(s, e)| (s, e.min(content_len.saturating_sub(1))))
            .collect();
        edus.retain(|&(s, e)| s <= e);
        if edus.is_empty() {
            return None;
        }
        let labels = ann.labels.into_iter().take(edus.len() - 1).collect();
        Some(DiscourseAnnotation { edus, labels })
    });
    Ok(PromptStoryPair { prompt_ids, story_ids, story_mask, annotation })
}

/// Load a JSONL dataset: one object per line with fields `prompt`, `story`,
/// and optional `annotation`. Stories are truncated to `max_tgt` tokens and
/// padded to a multiple of `block`.
pub fn load_jsonl(
    path: &Path,
    vocab: &Vocab,
    block: usize,
    max_src: usize,
    max_tgt: usize,
) -> Result<Vec<PromptStoryPair>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line)
            .map_err(|e| DvtError::Data(format!("line {lineno}: malformed JSON: {e}")))?;
        let prompt = raw
            .prompt
            .ok_or_else(|| DvtError::Data(format!("line {lineno}: missing field \"prompt\"")))?;
        let story = raw
            .story
            .ok_or_else(|| DvtError::Data(format!("line {lineno}: missing field \"story\"")))?;
        let pair = make_pair(
            vocab.encode(&prompt),
            vocab.encode(&story),
            raw.annotation,
            block,
            max_src,
            max_tgt,
        )?;
        out.push(pair);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn empty_corpus_gives_specials_only() {
        let v = build_vocab(&[], 100, 1).unwrap();
        assert_eq!(v.len(), 4);
        for (i, s) in SPECIALS.iter().enumerate() {
            assert_eq!(v.token(i), Some(*s));
        }
    }

    #[test]
    fn vocab_ordering_by_frequency_then_lexicographic() {
        let v = build_vocab(&["a b a".to_string()], 100, 1).unwrap();
        assert_eq!(v.len(), 6);
        assert!(v.id("a").unwrap() < v.id("b").unwrap());
        // min_freq 3 filters everything
        let v = build_vocab(&["a b a".to_string()], 100, 3).unwrap();
        assert_eq!(v.len(), 4);
        // max_size < 4 is rejected
        assert!(build_vocab(&[], 3, 1).is_err());
    }

    #[test]
    fn encode_decode_round_trip() {
        let v = build_vocab(&["a b".to_string()], 100, 1).unwrap();
        assert_eq!(v.encode(""), Vec::<usize>::new());
        assert_eq!(v.decode(&[]), "");
        let ids = v.encode("a b");
        assert_eq!(ids, vec![v.id("a").unwrap(), v.id("b").unwrap()]);
        assert_eq!(v.decode(&ids), "a b");
        // unknown word maps to unk and renders as <unk>
        let ids = v.encode("a q");
        assert_eq!(ids[1], UNK);
        assert_eq!(v.decode(&ids), "a <unk>");
    }

    #[test]
    fn vocab_save_load_stable_ids() {
        let v = build_vocab(&["x y z y".to_string()], 100, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let v2 = Vocab::load(&path).unwrap();
        assert_eq!(v, v2);
    }

    #[test]
    fn pad_to_block_cases() {
        let (ids, mask) = pad_to_block(&[1; 16], 8).unwrap();
        assert_eq!(ids.len(), 16);
        assert!(mask.iter().all(|&m| !m));
        let (ids, mask) = pad_to_block(&[1; 13], 8).unwrap();
        assert_eq!(ids.len(), 16);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 3);
        assert_eq!(&ids[13..], &[PAD; 3]);
        let (ids, _) = pad_to_block(&[], 8).unwrap();
        assert!(ids.is_empty());
        assert!(pad_to_block(&[1], 0).is_err());
    }

    fn write_jsonl(lines: &[&str]) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        (dir, path)
    }

    #[test]
    fn load_jsonl_pads_and_truncates() {
        let v = build_vocab(&["w".to_string()], 600, 1).unwrap();
        let (_d, path) = write_jsonl(&[]);
        assert!(load_jsonl(&path, &v, 8, 16, 512).unwrap().is_empty());

        // 13-token story, block 8 -> 16 with 3 pads
        let story13 = vec!["w"; 13].join(" ");
        let (_d, path) = write_jsonl(&[&format!(r#"{{"prompt": "w", "story": "{story13}"}}"#)]);
        let pairs = load_jsonl(&path, &v, 8, 16, 512).unwrap();
        assert_eq!(pairs[0].story_ids.len(), 16);
        assert_eq!(pairs[0].story_mask.iter().filter(|&&m| m).count(), 3);

        // 600-token story truncates to 512
        let story600 = vec!["w"; 600].join(" ");
        let (_d, path) = write_jsonl(&[&format!(r#"{{"prompt": "w", "story": "{story600}"}}"#)]);
        let pairs = load_jsonl(&path, &v, 8, 16, 512).unwrap();
        assert_eq!(pairs[0].story_ids.len(), 512);
        assert!(pairs[0].story_mask.iter().all(|&m| !m));
    }

    #[test]
    fn load_jsonl_reports_bad_lines() {
        let v = build_vocab(&[], 100, 1).unwrap();
        let (_d, path) = write_jsonl(&["{not json"]);
        let err = load_jsonl(&path, &v, 8, 16, 512).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");

        let (_d, path) = write_jsonl(&[r#"{"prompt": "p"}"#]);
        let err = load_jsonl(&path, &v, 8, 16, 512).unwrap_err();
        assert!(err.to_string().contains("story"), "{err}");
    }

    #[test]
    fn annotation_clipped_to_truncated_story() {
        let v = build_vocab(&["w".to_string()], 100, 1).unwrap();
        let ann = r#"{"edus": [[0, 5], [6, 11]], "labels": ["and_arg1_arg2"]}"#;
        let story = vec!["w"; 12].join(" ");
        let (_d, path) =
            write_jsonl(&[&format!(r#"{{"prompt": "w", "story": "{story}", "annotation": {ann}}}"#)]);
        // truncate to 8 tokens: second EDU clips to (6,7)
        let pairs = load_jsonl(&path, &v, 4, 16, 8).unwrap();
        let ann = pairs[0].annotation.as_ref().unwrap();
        assert_eq!(ann.edus, vec![(0, 5), (6, 7)]);
        assert_eq!(ann.labels, vec!["and_arg1_arg2".to_string()]);
    }
}
