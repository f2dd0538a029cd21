//! CoNLL-U reader: 10 tab-separated columns, blank line between sentences,
//! `#` comment lines. Multi-word-token ranges (`1-2`) and empty nodes
//! (`1.1`) are skipped. Only FORM, HEAD, and DEPREL are kept.

use crate::error::{DvtError, Result};

use super::ParsedSentence;

/// Parse one passage of CoNLL-U text into sentences.
pub fn parse_conllu(text: &str) -> Result<Vec<ParsedSentence>> {
    let mut sentences = Vec::new();
    let mut words: Vec<String> = Vec::new();
    let mut heads: Vec<usize> = Vec::new();
    let mut deprels: Vec<String> = Vec::new();
    let mut flush = |words: &mut Vec<String>, heads: &mut Vec<usize>, deprels: &mut Vec<String>| -> Result<()> {
        if !words.is_empty() {
            sentences.push(ParsedSentence::new(
                std::mem::take(words),
                std::mem::take(heads),
                std::mem::take(deprels),
            )?);
        }
        Ok(())
    };
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut words, &mut heads, &mut deprels)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 8 {
            return Err(DvtError::Data(format!(
                "line {lineno}: expected 10 tab-separated columns, found {}",
                cols.len()
            )));
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue; // multi-word token range or empty node
        }
        let head: usize = cols[6].parse().map_err(|_| {
            DvtError::Data(format!("line {lineno}: non-integer head {:?}", cols[6]))
        })?;
        words.push(cols[1].to_string());
        heads.push(head);
        deprels.push(cols[7].to_string());
    }
    flush(&mut words, &mut heads, &mut deprels)?;
    Ok(sentences)
}

/// Parse a file that may hold several passages separated by `# newdoc`
/// comment lines. Without any marker the whole input is one passage.
pub fn parse_conllu_docs(text: &str) -> Result<Vec<Vec<ParsedSentence>>> {
    let mut docs: Vec<Vec<ParsedSentence>> = Vec::new();
    let mut current = String::new();
    let mut saw_any = false;
    for line in text.lines() {
        if line.trim_start().starts_with("# newdoc") {
            if saw_any {
                docs.push(parse_conllu(&current)?);
            }
            current.clear();
            saw_any = true;
            continue;
        }
        saw_any = true;
        current.push_str(line);
        current.push('\n');
    }
    if saw_any {
        docs.push(parse_conllu(&current)?);
    }
    docs.retain(|d| !d.is_empty());
    Ok(docs)
}

/// Render sentences back to minimal CoNLL-U (FORM/HEAD/DEPREL filled,
/// underscore elsewhere). Used by the synthetic corpus generator.
pub fn to_conllu(sentences: &[ParsedSentence]) -> String {
    let mut out = String::new();
    for sent in sentences {
        for i in 0..sent.len() {
            out.push_str(&format!(
                "{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_\n",
                i + 1,
                sent.words[i],
                sent.heads[i],
                sent.deprels[i]
            ));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_parses_to_nothing() {
        assert!(parse_conllu("").unwrap().is_empty());
        assert!(parse_conllu("\n\n").unwrap().is_empty());
    }

    #[test]
    fn three_token_sentence_maps_fields() {
        let text = "1\ta\t_\t_\t_\t_\t2\tmark\t_\t_\n\
                    2\tb\t_\t_\t_\t_\t0\troot\t_\t_\n\
                    3\tc\t_\t_\t_\t_\t2\tadvmod\t_\t_\n";
        let sents = parse_conllu(text).unwrap();
        assert_eq!(sents.len(), 1);
        assert_eq!(sents[0].heads, vec![2, 0, 2]);
        assert_eq!(sents[0].deprels, vec!["mark", "root", "advmod"]);
        assert_eq!(sents[0].words, vec!["a", "b", "c"]);
    }

    #[test]
    fn two_blocks_two_sentences() {
        let text = "1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n\n1\tb\t_\t_\t_\t_\t0\troot\t_\t_\n";
        let sents = parse_conllu(text).unwrap();
        assert_eq!(sents.len(), 2);
    }

    #[test]
    fn bad_head_reports_line_number() {
        let text = "1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n2\tb\t_\t_\t_\t_\tx\tdep\t_\t_\n";
        let err = parse_conllu(text).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn ranges_and_empty_nodes_skipped() {
        let text = "1-2\tcannot\t_\t_\t_\t_\t_\t_\t_\t_\n\
                    1\tcan\t_\t_\t_\t_\t0\troot\t_\t_\n\
                    2\tnot\t_\t_\t_\t_\t1\tadvmod\t_\t_\n\
                    2.1\tghost\t_\t_\t_\t_\t1\tdep\t_\t_\n";
        let sents = parse_conllu(text).unwrap();
        assert_eq!(sents[0].words, vec!["can", "not"]);
    }

    #[test]
    fn newdoc_splits_passages() {
        let text = "# newdoc id = a\n1\ta\t_\t_\t_\t_\t0\troot\t_\t_\n\n# newdoc id = b\n1\tb\t_\t_\t_\t_\t0\troot\t_\t_\n";
        let docs = parse_conllu_docs(text).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0][0].words, vec!["a"]);
        assert_eq!(docs[1][0].words, vec!["b"]);
    }

    #[test]
    fn conllu_round_trip() {
        let sent = ParsedSentence::new(
            vec!["a".into(), "b".into()],
            vec![2, 0],
            vec!["mark".into(), "root".into()],
        )
        .unwrap();
        let text = to_conllu(&[sent.clone()]);
        let back = parse_conllu(&text).unwrap();
        assert_eq!(back, vec![sent]);
    }
}
