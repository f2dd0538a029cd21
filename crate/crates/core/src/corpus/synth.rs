//! Synthetic corpus with gold discourse annotations.
//!
//! Stories are sequences of templated clauses joined by discourse markers
//! drawn from a configurable mix. The generator also emits dependency parses
//! that match the extraction patterns exactly, so the annotator can be
//! validated against gold labels without an external parser, and the
//! discourse loss can be trained on known structure.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_pair, PromptStoryPair, Vocab};
use crate::discourse::{DiscourseAnnotation, ParsedSentence, MARKERS};
use crate::error::{DvtError, Result};
use crate::rng::{derive, stream};

/// Generator settings. Generation is a pure function of the spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_docs: usize,
    /// Cap on the vocabulary size (specials included). At least 30.
    pub vocab_size: usize,
    /// Probability of each marker; must sum to 1.
    pub marker_mix: Vec<(String, f64)>,
    /// Min/max story length in tokens.
    pub length_range: (usize, usize),
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            n_docs: 500,
            vocab_size: 300,
            marker_mix: vec![
                ("and".into(), 0.35),
                ("then".into(), 0.15),
                ("also".into(), 0.10),
                ("so".into(), 0.08),
                ("because".into(), 0.07),
                ("after".into(), 0.07),
                ("before".into(), 0.05),
                ("as".into(), 0.05),
                ("although".into(), 0.04),
                ("still".into(), 0.04),
            ],
            length_range: (16, 48),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.marker_mix.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(DvtError::Config(format!("marker_mix sums to {sum}, expected 1")));
        }
        for (m, p) in &self.marker_mix {
            if !MARKERS.contains(&m.as_str()) {
                return Err(DvtError::Config(format!("unknown marker {m:?} in marker_mix")));
            }
            if *p < 0.0 {
                return Err(DvtError::Config(format!("negative probability for marker {m:?}")));
            }
        }
        if self.vocab_size < 30 {
            return Err(DvtError::Config(format!("vocab_size {} too small (minimum 30)", self.vocab_size)));
        }
        let (lo, hi) = self.length_range;
        if lo < 6 || hi < lo {
            return Err(DvtError::Config(format!("bad length_range ({lo}, {hi})")));
        }
        Ok(())
    }
}

/// One generated document.
#[derive(Debug, Clone)]
pub struct SynthDoc {
    pub prompt: String,
    pub story: String,
    pub annotation: DiscourseAnnotation,
    pub parses: Vec<ParsedSentence>,
}

/// Generated corpus plus the fixed vocabulary covering it.
pub struct SynthCorpus {
    pub docs: Vec<SynthDoc>,
    pub vocab: Vocab,
}

impl SynthCorpus {
    /// Convert to training pairs (encode, truncate, pad to `block`).
    pub fn pairs(&self, block: usize, max_src: usize, max_tgt: usize) -> Result<Vec<PromptStoryPair>> {
        self.docs
            .iter()
            .map(|d| {
                make_pair(
                    self.vocab.encode(&d.prompt),
                    self.vocab.encode(&d.story),
                    Some(d.annotation.clone()),
                    block,
                    max_src,
                    max_tgt,
                )
            })
            .collect()
    }
}

const NOUNS: &[&str] = &[
    "knight", "tower", "river", "forest", "dragon", "castle", "village", "miller", "garden",
    "harbor", "mountain", "valley", "wizard", "lantern", "bridge", "meadow", "falcon", "hunter",
    "temple", "market", "sailor", "anchor", "island", "desert", "canyon", "glacier", "comet",
    "archer", "shield", "sword", "banner", "crown", "throne", "scroll", "candle", "mirror",
    "statue", "fountain", "orchard", "stable", "wagon", "compass", "chest", "coin", "jewel",
    "amulet", "cloak", "helmet", "armor", "quiver", "arrow", "spear", "drum", "flute", "harp",
    "bell", "gate", "wall", "moat", "cellar", "attic", "chimney", "hearth", "loom", "spindle",
    "basket", "barrel", "rope", "net", "oar", "mast", "sail", "deck", "cabin", "cliff", "cave",
    "spring", "brook", "pond", "marsh", "reed", "willow", "oak", "pine", "cedar", "fern", "moss",
    "stone", "boulder", "pebble", "trail", "path", "road", "field", "barn", "fence", "plow",
    "mill", "oven", "loaf", "cheese", "apple", "pear", "plum", "berry", "honey", "salt", "lamp",
    "tent", "flag", "boat", "cart", "well", "tree", "bird",
];

const VERBS: &[&str] = &[
    "guards", "crosses", "builds", "burns", "carries", "catches", "chases", "cleans", "climbs",
    "counts", "covers", "crafts", "digs", "draws", "drops", "fears", "fills", "finds", "fixes",
    "follows", "forges", "gathers", "gives", "grabs", "greets", "grinds", "guides", "hauls",
    "heals", "hides", "holds", "hunts", "joins", "keeps", "leads", "lifts", "lights", "loads",
    "locks", "makes", "marks", "mends", "moves", "names", "opens", "paints", "patrols", "plants",
    "pulls", "pushes", "raises", "reads", "repairs", "rides", "rows", "sails", "saves", "seeks",
    "sells", "sends", "shapes", "signals", "sings", "spins", "splits", "stacks", "steers",
    "stores", "studies", "sweeps", "takes", "tends", "tests", "ties", "tows", "tracks", "trades",
    "trains", "trims", "visits", "warms", "washes", "watches", "waters", "weaves", "welcomes",
    "wraps",
];

/// Sentence-boundary token used in prompts so that prompts determine
/// stories unambiguously.
const PROMPT_STOP: &str = "stop";

struct Pools {
    nouns: Vec<&'static str>,
    verbs: Vec<&'static str>,
}

fn word_pools(vocab_size: usize) -> Pools {
    // fixed words: 4 specials + "the" + "," + "." + stop + 10 markers
    let budget = vocab_size.saturating_sub(18);
    let n_nouns = (budget * 2 / 3).clamp(3, NOUNS.len());
    let n_verbs = (budget - n_nouns.min(budget)).clamp(3, VERBS.len());
    Pools { nouns: NOUNS[..n_nouns].to_vec(), verbs: VERBS[..n_verbs].to_vec() }
}

/// Relation contributed by one generated sentence.
enum UnitRelation {
    /// Plain sentence, single EDU.
    None,
    /// Sentence splits into two EDUs at `split` with `label` between them.
    Intra { label: String, split: usize },
    /// Whole sentence is one EDU linked to the previous one with `label`.
    Inter { label: String },
}

struct Unit {
    sent: ParsedSentence,
    relation: UnitRelation,
    /// Content words (nouns, verbs, markers) in order, for the prompt.
    content: Vec<String>,
}

/// Token-triple builder for a sentence: (word, 1-based head, deprel).
struct SentBuilder {
    rows: Vec<(String, usize, String)>,
}

impl SentBuilder {
    fn new() -> Self {
        SentBuilder { rows: Vec::new() }
    }

    fn push(&mut self, word: &str, head: usize, rel: &str) -> usize {
        self.rows.push((word.to_string(), head, rel.to_string()));
        self.rows.len() - 1
    }

    /// "the N V the N" with the verb's head and deprel supplied later via
    /// the returned verb index (0-based).
    fn clause(&mut self, rng: &mut ChaCha8Rng, pools: &Pools, content: &mut Vec<String>) -> usize {
        let n1 = pools.nouns[rng.random_range(0..pools.nouns.len())];
        let v = pools.verbs[rng.random_range(0..pools.verbs.len())];
        let n2 = pools.nouns[rng.random_range(0..pools.nouns.len())];
        let base = self.rows.len();
        let verb_idx = base + 2;
        self.push("the", base + 2, "det"); // -> n1
        self.push(n1, verb_idx + 1, "nsubj");
        self.push(v, 0, "root"); // head fixed up by the caller
        self.push("the", base + 5, "det"); // -> n2
        self.push(n2, verb_idx + 1, "obj");
        content.push(n1.to_string());
        content.push(v.to_string());
        content.push(n2.to_string());
        verb_idx
    }

    fn set_head(&mut self, idx: usize, head_idx_0: usize, rel: &str) {
        self.rows[idx].1 = head_idx_0 + 1;
        self.rows[idx].2 = rel.to_string();
    }

    fn build(self) -> ParsedSentence {
        let words = self.rows.iter().map(|r| r.0.clone()).collect();
        let heads = self.rows.iter().map(|r| r.1).collect();
        let deprels = self.rows.iter().map(|r| r.2.clone()).collect();
        ParsedSentence::new(words, heads, deprels).expect("generator builds valid trees")
    }
}

fn plain_unit(rng: &mut ChaCha8Rng, pools: &Pools) -> Unit {
    let mut b = SentBuilder::new();
    let mut content = Vec::new();
    let v = b.clause(rng, pools, &mut content);
    b.push(".", v + 1, "punct");
    Unit { sent: b.build(), relation: UnitRelation::None, content }
}

/// "m C2 , C1 ." for the mark+advcl family; the marker-initial clause is
/// Arg2, so the label order is arg2_arg1.
fn marker_initial_unit(rng: &mut ChaCha8Rng, pools: &Pools, marker: &str) -> Unit {
    let mut b = SentBuilder::new();
    let mut content = vec![marker.to_string()];
    let m = b.push(marker, 0, "mark");
    let v2 = b.clause(rng, pools, &mut content);
    let comma = b.push(",", 0, "punct");
    let v1 = b.clause(rng, pools, &mut content);
    b.push(".", v1 + 1, "punct");
    b.set_head(m, v2, "mark");
    b.set_head(v2, v1, "advcl");
    b.set_head(comma, v1, "punct");
    // split lands after the comma (punctuation stays with the first span)
    let split = comma + 1;
    Unit {
        sent: b.build(),
        relation: UnitRelation::Intra { label: format!("{marker}_arg2_arg1"), split },
        content,
    }
}

/// "C1 [,] m C2 ." for the mark+advcl family with the marker clause second.
fn marker_medial_unit(rng: &mut ChaCha8Rng, pools: &Pools, marker: &str, comma: bool) -> Unit {
    let mut b = SentBuilder::new();
    let mut content = Vec::new();
    let v1 = b.clause(rng, pools, &mut content);
    if comma {
        b.push(",", v1 + 1, "punct");
    }
    let m = b.push(marker, 0, "mark");
    content.push(marker.to_string());
    let v2 = b.clause(rng, pools, &mut content);
    b.push(".", v1 + 1, "punct");
    b.set_head(m, v2, "mark");
    b.set_head(v2, v1, "advcl");
    Unit {
        sent: b.build(),
        relation: UnitRelation::Intra { label: format!("{marker}_arg1_arg2"), split: m },
        content,
    }
}

/// "C1 , then V2 the N ." (parataxis + advmod).
fn then_parataxis_unit(rng: &mut ChaCha8Rng, pools: &Pools) -> Unit {
    let mut b = SentBuilder::new();
    let mut content = Vec::new();
    let v1 = b.clause(rng, pools, &mut content);
    b.push(",", v1 + 1, "punct");
    let m = b.push("then", 0, "advmod");
    content.push("then".to_string());
    let verb = pools.verbs[rng.random_range(0..pools.verbs.len())];
    let noun = pools.nouns[rng.random_range(0..pools.nouns.len())];
    let v2 = b.push(verb, v1 + 1, "parataxis");
    b.push("the", v2 + 2, "det");
    b.push(noun, v2 + 1, "obj");
    b.push(".", v1 + 1, "punct");
    b.set_head(m, v2, "advmod");
    content.push(verb.to_string());
    content.push(noun.to_string());
    Unit {
        sent: b.build(),
        relation: UnitRelation::Intra { label: "then_arg1_arg2".into(), split: m },
        content,
    }
}

/// "C1 m V2 the N ." with conj+cc ("and") or dep+advmod ("still").
fn second_conjunct_unit(rng: &mut ChaCha8Rng, pools: &Pools, marker: &str) -> Unit {
    let (m_rel, v_rel) = if marker == "and" { ("cc", "conj") } else { ("advmod", "dep") };
    let mut b = SentBuilder::new();
    let mut content = Vec::new();
    let v1 = b.clause(rng, pools, &mut content);
    let m = b.push(marker, 0, m_rel);
    content.push(marker.to_string());
    let verb = pools.verbs[rng.random_range(0..pools.verbs.len())];
    let noun = pools.nouns[rng.random_range(0..pools.nouns.len())];
    let v2 = b.push(verb, v1 + 1, v_rel);
    b.push("the", v2 + 2, "det");
    b.push(noun, v2 + 1, "obj");
    b.push(".", v1 + 1, "punct");
    b.set_head(m, v2, m_rel);
    content.push(verb.to_string());
    content.push(noun.to_string());
    Unit {
        sent: b.build(),
        relation: UnitRelation::Intra { label: format!("{marker}_arg1_arg2"), split: m },
        content,
    }
}

/// Sentence-level marker linking back to the previous sentence:
/// "then C ." or "the N also V the N .".
fn inter_unit(rng: &mut ChaCha8Rng, pools: &Pools, marker: &str) -> Unit {
    let mut b = SentBuilder::new();
    let mut content = Vec::new();
    if marker == "also" {
        let n1 = pools.nouns[rng.random_range(0..pools.nouns.len())];
        let v = pools.verbs[rng.random_range(0..pools.verbs.len())];
        let n2 = pools.nouns[rng.random_range(0..pools.nouns.len())];
        let base = b.rows.len();
        b.push("the", base + 2, "det");
        b.push(n1, base + 4, "nsubj");
        let m = b.push("also", 0, "advmod");
        let vi = b.push(v, 0, "root");
        b.push("the", vi + 2, "det");
        b.push(n2, vi + 1, "obj");
        b.push(".", vi + 1, "punct");
        b.set_head(m, vi, "advmod");
        content.extend([n1.to_string(), "also".to_string(), v.to_string(), n2.to_string()]);
    } else {
        let m = b.push(marker, 0, "advmod");
        content.push(marker.to_string());
        let v = b.clause(rng, pools, &mut content);
        b.push(".", v + 1, "punct");
        b.set_head(m, v, "advmod");
    }
    Unit {
        sent: b.build(),
        relation: UnitRelation::Inter { label: format!("{marker}_arg1_arg2") },
        content,
    }
}

fn draw_marker(rng: &mut ChaCha8Rng, mix: &[(String, f64)]) -> String {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (m, p) in mix {
        acc += p;
        if x < acc {
            return m.clone();
        }
    }
    mix.last().map(|(m, _)| m.clone()).unwrap_or_else(|| "and".into())
}

const PLAIN_PROB: f64 = 0.25;

fn gen_unit(rng: &mut ChaCha8Rng, pools: &Pools, spec: &SynthSpec, is_first: bool) -> Unit {
    if rng.random::<f64>() < PLAIN_PROB {
        return plain_unit(rng, pools);
    }
    let marker = draw_marker(rng, &spec.marker_mix);
    match marker.as_str() {
        "and" | "still" => second_conjunct_unit(rng, pools, &marker),
        "then" => {
            if !is_first && rng.random::<f64>() < 0.5 {
                inter_unit(rng, pools, "then")
            } else {
                then_parataxis_unit(rng, pools)
            }
        }
        "also" => {
            if is_first {
                plain_unit(rng, pools)
            } else {
                inter_unit(rng, pools, "also")
            }
        }
        "so" => marker_medial_unit(rng, pools, "so", true),
        m => {
            if rng.random::<f64>() < 0.5 {
                marker_initial_unit(rng, pools, m)
            } else {
                marker_medial_unit(rng, pools, m, m == "although")
            }
        }
    }
}

fn gen_doc(rng: &mut ChaCha8Rng, pools: &Pools, spec: &SynthSpec) -> SynthDoc {
    let (lo, hi) = spec.length_range;
    let target = rng.random_range(lo..=hi);
    let mut units: Vec<Unit> = Vec::new();
    let mut total = 0usize;
    loop {
        let unit = gen_unit(rng, pools, spec, units.is_empty());
        let len = unit.sent.len();
        if total + len > hi {
            if total >= lo {
                break;
            }
            // does not fit and the story is still short: try a plain one
            let fallback = plain_unit(rng, pools);
            if total + fallback.sent.len() > hi {
                break;
            }
            total += fallback.sent.len();
            units.push(fallback);
            continue;
        }
        total += len;
        units.push(unit);
        if total >= target {
            break;
        }
    }

    let mut edus = Vec::new();
    let mut labels = Vec::new();
    let mut words: Vec<String> = Vec::new();
    let mut prompt_words: Vec<String> = Vec::new();
    let mut offset = 0usize;
    for unit in &units {
        let len = unit.sent.len();
        match &unit.relation {
            UnitRelation::Intra { label, split } => {
                if !edus.is_empty() {
                    labels.push("unknown".to_string());
                }
                edus.push((offset, offset + split - 1));
                labels.push(label.clone());
                edus.push((offset + split, offset + len - 1));
            }
            UnitRelation::Inter { label } => {
                if !edus.is_empty() {
                    labels.push(label.clone());
                }
                edus.push((offset, offset + len - 1));
            }
            UnitRelation::None => {
                if !edus.is_empty() {
                    labels.push("unknown".to_string());
                }
                edus.push((offset, offset + len - 1));
            }
        }
        offset += len;
        words.extend(unit.sent.words.iter().cloned());
        prompt_words.extend(unit.content.iter().cloned());
        prompt_words.push(PROMPT_STOP.to_string());
    }

    SynthDoc {
        prompt: prompt_words.join(" "),
        story: words.join(" "),
        annotation: DiscourseAnnotation { edus, labels },
        parses: units.into_iter().map(|u| u.sent).collect(),
    }
}

/// Generate a corpus. Deterministic given the spec; each document draws
/// from its own derived stream, so doc `i` is stable under changes to
/// `n_docs`.
pub fn synth_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let pools = word_pools(spec.vocab_size);
    let mut words: Vec<String> = vec!["the".into(), ",".into(), ".".into(), PROMPT_STOP.into()];
    words.extend(MARKERS.iter().map(|m| m.to_string()));
    words.extend(pools.nouns.iter().map(|n| n.to_string()));
    words.extend(pools.verbs.iter().map(|v| v.to_string()));
    let vocab = Vocab::from_tokens(words);
    let docs = (0..spec.n_docs)
        .map(|i| {
            let mut rng = derive(spec.seed, &[stream::SYNTH, i as u64]);
            gen_doc(&mut rng, &pools, spec)
        })
        .collect();
    Ok(SynthCorpus { docs, vocab })
}
