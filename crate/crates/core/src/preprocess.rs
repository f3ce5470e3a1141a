//! Tokenization, sentence splitting and abbreviation expansion.
//!
//! Two expansion strategies run in a fixed order. Local context first: an
//! acronym-looking token on one side of a pair is replaced by a contiguous
//! run of words on the other side whose initials spell it ("CXR" for
//! "Chest X-Ray"). The gazetteer runs second, and only on tokens local
//! context left alone.
//!
//! Rewritten text keeps the original spacing outside the replaced tokens.

use std::collections::{HashMap, HashSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::{Gazetteer, LabeledSentencePair, Side};

/// A token with half-open Unicode scalar offsets into its source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn is_punctuation(&self) -> bool {
        self.text.chars().all(is_punct)
    }

    /// Tokens that take part in acronym windows.
    pub fn is_word(&self) -> bool {
        self.text.chars().next().is_some_and(char::is_alphabetic)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenizedSentence {
    pub tokens: Vec<Token>,
}

impl TokenizedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }
}

pub(crate) fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'
                | '\u{2019}'
                | '\u{201C}'
                | '\u{201D}'
                | '\u{2013}'
                | '\u{2014}'
                | '\u{2026}'
                | '\u{00AB}'
                | '\u{00BB}'
                | '\u{00B7}'
                | '\u{00BF}'
                | '\u{00A1}'
        )
}

/// Splits on whitespace, then splits every punctuation character (hyphens
/// included) into its own token.
pub fn tokenize(text: &str) -> TokenizedSentence {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut current_start = 0;

    let flush = |current: &mut String, start: usize, end: usize, tokens: &mut Vec<Token>| {
        if !current.is_empty() {
            tokens.push(Token {
                text: std::mem::take(current),
                start,
                end,
            });
        }
    };

    for (idx, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            flush(&mut current, current_start, idx, &mut tokens);
        } else if is_punct(c) {
            flush(&mut current, current_start, idx, &mut tokens);
            tokens.push(Token {
                text: c.to_string(),
                start: idx,
                end: idx + 1,
            });
        } else {
            if current.is_empty() {
                current_start = idx;
            }
            current.push(c);
        }
    }
    let end = text.chars().count();
    flush(&mut current, current_start, end, &mut tokens);
    TokenizedSentence { tokens }
}

/// Splits after `.`, `!` or `?` when followed by whitespace or the end of the
/// text. Delimiters stay with their sentence; blank sentences are dropped.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        let boundary = matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|next| next.is_whitespace());
        if boundary {
            let sentence = current.trim();
            if !sentence.is_empty() {
                sentences.push(sentence.to_string());
            }
            current.clear();
        }
    }
    let rest = current.trim();
    if !rest.is_empty() {
        sentences.push(rest.to_string());
    }
    sentences
}

/// Renders tokens as text: single spaces, no space before closing
/// punctuation, and hyphens glued to neighbours they touched in the source.
pub fn detokenize(tokens: &[Token]) -> String {
    let mut out = String::new();
    for (i, token) in tokens.iter().enumerate() {
        if i > 0 {
            let prev = &tokens[i - 1];
            let closing = matches!(token.text.as_str(), "." | "," | ";" | ":" | "?" | "!");
            let attached = prev.end == token.start;
            let hyphen_join = attached && (token.text == "-" || prev.text == "-");
            if !closing && !hyphen_join {
                out.push(' ');
            }
        }
        out.push_str(&token.text);
    }
    out
}

/// A potential acronym built from the initials of a run of words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbbrevCandidate {
    pub acronym: String,
    /// Token index range in the source sentence, from the first word to the
    /// last word of the window (punctuation inside the window included).
    pub word_span: Range<usize>,
}

/// Enumerates every window of `min_len..=max_len` consecutive words.
///
/// Punctuation tokens are transparent; any other non-word token (a number,
/// say) ends the run of words.
///
/// # Panics
///
/// If `min_len < 2` or `min_len > max_len`.
pub fn gen_candidates(sentence: &TokenizedSentence, min_len: usize, max_len: usize) -> Vec<AbbrevCandidate> {
    assert!(
        2 <= min_len && min_len <= max_len,
        "candidate window bounds must satisfy 2 <= min_len <= max_len"
    );
    let mut runs: Vec<Vec<usize>> = vec![Vec::new()];
    for (idx, token) in sentence.tokens.iter().enumerate() {
        if token.is_word() {
            runs.last_mut().unwrap().push(idx);
        } else if !token.is_punctuation() {
            runs.push(Vec::new());
        }
    }

    let mut candidates = Vec::new();
    for run in &runs {
        for start in 0..run.len() {
            for len in min_len..=max_len {
                let Some(window) = run.get(start..start + len) else {
                    break;
                };
                let acronym = window.iter().map(|&i| initial(&sentence.tokens[i].text)).collect();
                candidates.push(AbbrevCandidate {
                    acronym,
                    word_span: window[0]..window[len - 1] + 1,
                });
            }
        }
    }
    candidates
}

fn initial(word: &str) -> char {
    word.chars()
        .next()
        .and_then(|c| c.to_uppercase().next())
        .unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionStrategy {
    LocalContext,
    Gazetteer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionTrace {
    pub pair_id: String,
    pub side: Side,
    pub replaced_token: String,
    pub replacement: String,
    pub strategy: ExpansionStrategy,
}

/// Position of a token in the original tokenization of one side of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenPosition {
    pub side: Side,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpandConfig {
    pub min_len: usize,
    pub max_len: usize,
    pub local_context: bool,
    pub gazetteer: bool,
}

impl Default for ExpandConfig {
    fn default() -> Self {
        ExpandConfig {
            min_len: 2,
            max_len: 6,
            local_context: true,
            gazetteer: true,
        }
    }
}

impl ExpandConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_len < 2 || self.min_len > self.max_len {
            return Err(format!(
                "invalid candidate window bounds {}..={}: need 2 <= min_len <= max_len",
                self.min_len, self.max_len
            ));
        }
        Ok(())
    }
}

struct Replacement {
    position: TokenPosition,
    rendered: String,
    trace: ExpansionTrace,
}

struct PairTokens {
    a: TokenizedSentence,
    b: TokenizedSentence,
}

impl PairTokens {
    fn new(pair: &LabeledSentencePair) -> Self {
        PairTokens {
            a: tokenize(&pair.text_a),
            b: tokenize(&pair.text_b),
        }
    }

    fn side(&self, side: Side) -> &TokenizedSentence {
        match side {
            Side::A => &self.a,
            Side::B => &self.b,
        }
    }
}

/// A token that could be an acronym: not an ordinary lowercase word.
fn looks_like_acronym(token: &str) -> bool {
    let chars: Vec<char> = token.chars().collect();
    let internal_period = chars.len() > 2 && chars[1..chars.len() - 1].contains(&'.');
    chars.iter().any(|c| c.is_uppercase()) || internal_period
}

fn local_context_replacements(
    pair: &LabeledSentencePair,
    tokens: &PairTokens,
    min_len: usize,
    max_len: usize,
) -> Vec<Replacement> {
    let mut out = Vec::new();
    for side in [Side::A, Side::B] {
        let source = tokens.side(side.other());
        // leftmost, then longest span, per acronym
        let mut best: HashMap<&str, &AbbrevCandidate> = HashMap::new();
        let candidates = gen_candidates(source, min_len, max_len);
        for cand in &candidates {
            best.entry(cand.acronym.as_str())
                .and_modify(|cur| {
                    let key = |c: &AbbrevCandidate| (c.word_span.start, usize::MAX - c.word_span.len());
                    if key(cand) < key(cur) {
                        *cur = cand;
                    }
                })
                .or_insert(cand);
        }
        if best.is_empty() {
            continue;
        }
        for (index, token) in tokens.side(side).tokens.iter().enumerate() {
            if !looks_like_acronym(&token.text) {
                continue;
            }
            let key: String = token
                .text
                .chars()
                .filter(|&c| c != '.')
                .collect::<String>()
                .to_uppercase();
            if key.chars().count() < min_len {
                continue;
            }
            let Some(cand) = best.get(key.as_str()) else {
                continue;
            };
            let words = &source.tokens[cand.word_span.clone()];
            let joined = words.iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ");
            out.push(Replacement {
                position: TokenPosition { side, index },
                rendered: detokenize(words),
                trace: ExpansionTrace {
                    pair_id: pair.id.clone(),
                    side,
                    replaced_token: token.text.clone(),
                    replacement: joined,
                    strategy: ExpansionStrategy::LocalContext,
                },
            });
        }
    }
    out
}

fn gazetteer_replacements(
    pair: &LabeledSentencePair,
    tokens: &PairTokens,
    gz: &Gazetteer,
    already_replaced: &HashSet<TokenPosition>,
) -> Vec<Replacement> {
    let mut out = Vec::new();
    if gz.is_empty() {
        return out;
    }
    for side in [Side::A, Side::B] {
        for (index, token) in tokens.side(side).tokens.iter().enumerate() {
            let position = TokenPosition { side, index };
            if already_replaced.contains(&position) || !looks_like_acronym(&token.text) {
                continue;
            }
            if let Some(expansion) = gz.lookup(&token.text) {
                out.push(Replacement {
                    position,
                    rendered: expansion.to_string(),
                    trace: ExpansionTrace {
                        pair_id: pair.id.clone(),
                        side,
                        replaced_token: token.text.clone(),
                        replacement: expansion.to_string(),
                        strategy: ExpansionStrategy::Gazetteer,
                    },
                });
            }
        }
    }
    out
}

/// Splices replacements into the original texts, token by token.
fn apply(pair: &LabeledSentencePair, tokens: &PairTokens, replacements: &[Replacement]) -> LabeledSentencePair {
    let mut out = pair.clone();
    for side in [Side::A, Side::B] {
        let by_index: HashMap<usize, &str> = replacements
            .iter()
            .filter(|r| r.position.side == side)
            .map(|r| (r.position.index, r.rendered.as_str()))
            .collect();
        if by_index.is_empty() {
            continue;
        }
        let chars: Vec<char> = pair.text(side).chars().collect();
        let mut text = String::with_capacity(pair.text(side).len());
        let mut cursor = 0;
        for (index, token) in tokens.side(side).tokens.iter().enumerate() {
            if let Some(rendered) = by_index.get(&index) {
                text.extend(&chars[cursor..token.start]);
                text.push_str(rendered);
                cursor = token.end;
            }
        }
        text.extend(&chars[cursor..]);
        *out.text_mut(side) = text;
    }
    out
}

fn sorted_traces(mut replacements: Vec<Replacement>) -> Vec<ExpansionTrace> {
    replacements.sort_by_key(|r| r.position);
    replacements.into_iter().map(|r| r.trace).collect()
}

/// Replaces acronym tokens on each side with the matching run of words from
/// the other side.
pub fn expand_local_context(
    pair: &LabeledSentencePair,
    min_len: usize,
    max_len: usize,
) -> (LabeledSentencePair, Vec<ExpansionTrace>) {
    let tokens = PairTokens::new(pair);
    let replacements = local_context_replacements(pair, &tokens, min_len, max_len);
    (apply(pair, &tokens, &replacements), sorted_traces(replacements))
}

/// Replaces tokens found in the gazetteer by their first listed expansion,
/// skipping `already_replaced` positions.
pub fn expand_gazetteer(
    pair: &LabeledSentencePair,
    gz: &Gazetteer,
    already_replaced: &HashSet<TokenPosition>,
) -> (LabeledSentencePair, Vec<ExpansionTrace>) {
    let tokens = PairTokens::new(pair);
    let replacements = gazetteer_replacements(pair, &tokens, gz, already_replaced);
    (apply(pair, &tokens, &replacements), sorted_traces(replacements))
}

/// Local context first, then the gazetteer on the tokens it did not touch.
/// Traces list local-context replacements before gazetteer ones.
pub fn expand(
    pair: &LabeledSentencePair,
    gz: &Gazetteer,
    config: &ExpandConfig,
) -> (LabeledSentencePair, Vec<ExpansionTrace>) {
    let tokens = PairTokens::new(pair);
    let local = if config.local_context {
        local_context_replacements(pair, &tokens, config.min_len, config.max_len)
    } else {
        Vec::new()
    };
    let taken: HashSet<TokenPosition> = local.iter().map(|r| r.position).collect();
    let from_gazetteer = if config.gazetteer {
        gazetteer_replacements(pair, &tokens, gz, &taken)
    } else {
        Vec::new()
    };

    let local_count = local.len();
    let mut all = local;
    all.extend(from_gazetteer);
    let expanded = apply(pair, &tokens, &all);
    let gazetteer = all.split_off(local_count);
    let mut traces = sorted_traces(all);
    traces.extend(sorted_traces(gazetteer));
    (expanded, traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_gazetteer, Provenance};
    use proptest::prelude::*;

    fn pair(a: &str, b: &str) -> LabeledSentencePair {
        LabeledSentencePair {
            id: "p1".into(),
            group_id: Some("g1".into()),
            text_a: a.into(),
            text_b: b.into(),
            label: None,
            provenance: Provenance::Original,
        }
    }

    #[test]
    fn tokenize_examples() {
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("Chest X-Ray showed infiltrates").texts(),
            ["Chest", "X", "-", "Ray", "showed", "infiltrates"]
        );
        assert_eq!(tokenize("sepsis.").texts(), ["sepsis", "."]);
        let t = tokenize("  Größe  über.");
        assert_eq!((t.tokens[0].start, t.tokens[0].end), (2, 7));
        assert_eq!((t.tokens[2].start, t.tokens[2].end), (13, 14));
    }

    #[test]
    fn sentence_examples() {
        assert_eq!(split_sentences("A. B? C"), ["A.", "B?", "C"]);
        assert_eq!(split_sentences("What is uveitis?"), ["What is uveitis?"]);
        assert_eq!(split_sentences("e.g. test"), ["e.g.", "test"]);
        assert!(split_sentences("  ").is_empty());
    }

    #[test]
    fn detokenize_rejoins_hyphen_and_closing_punct() {
        let t = tokenize("Chest X-Ray showed infiltrates , really .");
        assert_eq!(detokenize(&t.tokens), "Chest X-Ray showed infiltrates, really.");
        let spaced = tokenize("well - known");
        assert_eq!(detokenize(&spaced.tokens), "well - known");
    }

    fn acronyms(text: &str, min: usize, max: usize) -> HashSet<String> {
        gen_candidates(&tokenize(text), min, max)
            .into_iter()
            .map(|c| c.acronym)
            .collect()
    }

    #[test]
    fn candidates_chest_xray() {
        let got = acronyms("Chest X-Ray showed infiltrates", 2, 6);
        let expected: HashSet<String> = ["CX", "XR", "RS", "SI", "CXR", "XRS", "RSI", "CXRS", "XRSI", "CXRSI"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn candidates_trivial() {
        assert!(gen_candidates(&tokenize("single"), 2, 6).is_empty());
        let c = gen_candidates(&tokenize("a b"), 2, 6);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].acronym, "AB");
        assert_eq!(c[0].word_span, 0..2);
    }

    #[test]
    fn numbers_break_windows() {
        let got = acronyms("blood 5 pressure high", 2, 6);
        assert!(got.contains("PH"));
        assert!(!got.contains("BP"));
    }

    #[test]
    #[should_panic]
    fn candidate_bounds_checked() {
        gen_candidates(&tokenize("a b c"), 1, 3);
    }

    #[test]
    fn local_context_cxr() {
        let p = pair(
            "Her CXR was clear and it did not appear she had an infection.",
            "Chest X-Ray showed infiltrates.",
        );
        let (out, traces) = expand_local_context(&p, 2, 6);
        assert_eq!(
            out.text_a,
            "Her Chest X-Ray was clear and it did not appear she had an infection."
        );
        assert_eq!(out.text_b, p.text_b);
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].replaced_token, "CXR");
        assert_eq!(traces[0].replacement, "Chest X - Ray");
        assert_eq!(traces[0].strategy, ExpansionStrategy::LocalContext);
        assert_eq!(traces[0].side, Side::A);
    }

    #[test]
    fn local_context_no_acronym_is_identity() {
        let p = pair("the patient was fine", "no acute distress here");
        let (out, traces) = expand_local_context(&p, 2, 6);
        assert_eq!(out, p);
        assert!(traces.is_empty());
    }

    #[test]
    fn local_context_replaces_each_occurrence() {
        let p = pair("CXR today and CXR tomorrow", "Chest X-Ray ordered");
        let (out, traces) = expand_local_context(&p, 2, 6);
        assert_eq!(out.text_a, "Chest X-Ray today and Chest X-Ray tomorrow");
        assert_eq!(traces.len(), 2);
    }

    #[test]
    fn lowercase_words_are_not_acronyms() {
        // "was" would spell W-A-S from the hypothesis words
        let p = pair("it was fine", "Wide Anterior Scar noted");
        let (out, traces) = expand_local_context(&p, 2, 6);
        assert_eq!(out, p);
        assert!(traces.is_empty());
    }

    #[test]
    fn local_context_is_idempotent_on_output() {
        let p = pair(
            "Her CXR was clear and it did not appear she had an infection.",
            "Chest X-Ray showed infiltrates.",
        );
        let (once, _) = expand_local_context(&p, 2, 6);
        let (twice, traces) = expand_local_context(&once, 2, 6);
        assert_eq!(once, twice);
        assert!(traces.is_empty());
    }

    #[test]
    fn gazetteer_micu() {
        let gz = parse_gazetteer("MICU\tMedical Intensive Care Unit\n").unwrap();
        let p = pair(
            "On arrival to the MICU , patient is hemodynamically stable .",
            "The patient is stable .",
        );
        let (out, traces) = expand_gazetteer(&p, &gz, &HashSet::new());
        assert_eq!(
            out.text_a,
            "On arrival to the Medical Intensive Care Unit , patient is hemodynamically stable ."
        );
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].strategy, ExpansionStrategy::Gazetteer);
    }

    #[test]
    fn gazetteer_empty_and_first_entry() {
        let p = pair("Seen by PT today", "therapy given");
        let (out, traces) = expand_gazetteer(&p, &Gazetteer::new(), &HashSet::new());
        assert_eq!(out, p);
        assert!(traces.is_empty());

        let gz = parse_gazetteer("PT\tPhysical Therapy\nPT\tPatient\n").unwrap();
        let (out, _) = expand_gazetteer(&p, &gz, &HashSet::new());
        assert_eq!(out.text_a, "Seen by Physical Therapy today");
    }

    #[test]
    fn gazetteer_respects_already_replaced() {
        let gz = parse_gazetteer("PT\tPhysical Therapy\n").unwrap();
        let p = pair("Seen by PT today", "therapy given");
        let skip: HashSet<_> = [TokenPosition {
            side: Side::A,
            index: 2,
        }]
        .into();
        let (out, traces) = expand_gazetteer(&p, &gz, &skip);
        assert_eq!(out, p);
        assert!(traces.is_empty());
    }

    #[test]
    fn expand_prefers_local_context() {
        let gz = parse_gazetteer("CXR\tchest radiograph\n").unwrap();
        let p = pair(
            "Her CXR was clear and it did not appear she had an infection.",
            "Chest X-Ray showed infiltrates.",
        );
        let (out, traces) = expand(&p, &gz, &ExpandConfig::default());
        assert_eq!(
            out.text_a,
            "Her Chest X-Ray was clear and it did not appear she had an infection."
        );
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].strategy, ExpansionStrategy::LocalContext);
    }

    #[test]
    fn expand_falls_back_to_gazetteer() {
        let gz = parse_gazetteer("CXR\tchest radiograph\n").unwrap();
        let p = pair("Her CXR was clear.", "Lungs are clear.");
        let (out, traces) = expand(&p, &gz, &ExpandConfig::default());
        assert_eq!(out.text_a, "Her chest radiograph was clear.");
        assert_eq!(traces[0].strategy, ExpansionStrategy::Gazetteer);
    }

    #[test]
    fn expand_no_match_is_identity() {
        let gz = parse_gazetteer("MICU\tMedical Intensive Care Unit\n").unwrap();
        let p = pair("Patient is well.", "Patient is stable.");
        let (out, traces) = expand(&p, &gz, &ExpandConfig::default());
        assert_eq!(out, p);
        assert!(traces.is_empty());
    }

    #[test]
    fn expand_strategies_can_be_disabled() {
        let gz = parse_gazetteer("CXR\tchest radiograph\n").unwrap();
        let p = pair("Her CXR was clear.", "Chest X-Ray showed infiltrates.");
        let only_gz = ExpandConfig {
            local_context: false,
            ..ExpandConfig::default()
        };
        let (out, _) = expand(&p, &gz, &only_gz);
        assert_eq!(out.text_a, "Her chest radiograph was clear.");
    }

    proptest! {
        #[test]
        fn tokenize_round_trips(text in "[a-zA-Z0-9 .,;!?\\-éü\t]{0,60}") {
            let sentence = tokenize(&text);
            let chars: Vec<char> = text.chars().collect();
            let mut rebuilt = String::new();
            let mut cursor = 0;
            for tok in &sentence.tokens {
                prop_assert!(tok.start >= cursor && tok.start < tok.end);
                let gap: String = chars[cursor..tok.start].iter().collect();
                prop_assert!(gap.chars().all(char::is_whitespace));
                rebuilt.push_str(&gap);
                let slice: String = chars[tok.start..tok.end].iter().collect();
                prop_assert_eq!(&slice, &tok.text);
                rebuilt.push_str(&slice);
                cursor = tok.end;
            }
            rebuilt.extend(&chars[cursor..]);
            prop_assert_eq!(rebuilt, text);
        }

        #[test]
        fn candidate_acronyms_spell_initials(text in "[a-zA-Z]{1,6}( [a-zA-Z]{1,6}| -| ,){0,10}") {
            let sentence = tokenize(&text);
            for cand in gen_candidates(&sentence, 2, 6) {
                let words: Vec<&Token> = sentence.tokens[cand.word_span.clone()]
                    .iter()
                    .filter(|t| t.is_word())
                    .collect();
                prop_assert_eq!(cand.acronym.chars().count(), words.len());
                let spelled: String = words.iter().map(|t| initial(&t.text)).collect();
                prop_assert_eq!(&cand.acronym, &spelled);
            }
        }

        #[test]
        fn expand_keeps_identity_and_traces_are_real(
            a in "[A-Za-z]{1,5}( [A-Za-z]{1,5}){0,8}",
            b in "[A-Za-z]{1,5}( [A-Za-z]{1,5}){0,8}",
        ) {
            let gz = parse_gazetteer("AB\talpha beta\nCD\tcee dee\n").unwrap();
            let mut p = pair(&a, &b);
            p.label = Some(crate::corpus::Label::Neutral);
            let (out, traces) = expand(&p, &gz, &ExpandConfig::default());
            prop_assert_eq!(&out.id, &p.id);
            prop_assert_eq!(&out.group_id, &p.group_id);
            prop_assert_eq!(out.label, p.label);
            for trace in traces {
                let original = tokenize(p.text(trace.side));
                prop_assert!(original.tokens.iter().any(|t| t.text == trace.replaced_token));
            }
        }
    }
}
