//! Europarl-style corpus ingestion.
//!
//! Raw proceedings files are one sentence per line, with structure given by
//! marker lines: `<CHAPTER id>`, `<SPEAKER id ...>` and `<P>`. Parsing keeps
//! that structure, [`strip_markup`] flattens it to paragraphs, and
//! [`Document::from_raw`] tokenizes and lowercases the content.

use std::fmt::Write as _;

use thiserror::Error;

use crate::Sentence;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IngestError {
    #[error("invalid UTF-8 at byte offset {offset}")]
    Decode { offset: usize },
}

/// Characters split off as standalone tokens.
pub const PUNCTUATION: &[char] = &[
    '.', ',', ';', ':', '!', '?', '"', '\'', '(', ')', '[', ']', '-', '—', '…', '«', '»',
];

fn splits_off(c: char) -> bool {
    PUNCTUATION.contains(&c)
}

/// True for a character in the tokenizer's set or any ASCII punctuation.
pub fn is_punctuation_char(c: char) -> bool {
    PUNCTUATION.contains(&c) || c.is_ascii_punctuation()
}

/// True for a non-empty token made only of punctuation characters.
pub fn is_punctuation_token(token: &str) -> bool {
    !token.is_empty() && token.chars().all(is_punctuation_char)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawDocument {
    pub file_id: String,
    pub chapters: Vec<Chapter>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Chapter {
    /// Everything after `<CHAPTER` up to the closing `>`; `None` when implicit.
    pub id: Option<String>,
    pub turns: Vec<SpeakerTurn>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpeakerTurn {
    /// Attribute text of the `<SPEAKER ...>` line; `None` when implicit.
    pub attributes: Option<String>,
    pub paragraphs: Vec<Vec<String>>,
}

impl RawDocument {
    pub fn paragraph_count(&self) -> usize {
        self.chapters
            .iter()
            .flat_map(|c| &c.turns)
            .map(|t| t.paragraphs.len())
            .sum()
    }

    pub fn content_line_count(&self) -> usize {
        self.chapters
            .iter()
            .flat_map(|c| &c.turns)
            .flat_map(|t| &t.paragraphs)
            .map(Vec::len)
            .sum()
    }
}

enum Markup<'a> {
    Chapter(&'a str),
    Speaker(&'a str),
    Paragraph,
    Other,
}

fn classify(line: &str) -> Option<Markup<'_>> {
    let inner = |prefix: &str| {
        line[prefix.len()..]
            .trim_end()
            .trim_end_matches('>')
            .trim()
    };
    if line.starts_with("<CHAPTER") {
        Some(Markup::Chapter(inner("<CHAPTER")))
    } else if line.starts_with("<SPEAKER") {
        Some(Markup::Speaker(inner("<SPEAKER")))
    } else if line.starts_with("<P>") {
        Some(Markup::Paragraph)
    } else if line.starts_with('<') && line.trim_end().ends_with('>') {
        Some(Markup::Other)
    } else {
        None
    }
}

/// Decodes `bytes` as UTF-8 and parses it; invalid input is a hard error.
pub fn parse_europarl_bytes(file_id: &str, bytes: &[u8]) -> Result<RawDocument, IngestError> {
    let text = std::str::from_utf8(bytes).map_err(|e| IngestError::Decode {
        offset: e.valid_up_to(),
    })?;
    Ok(parse_europarl(file_id, text))
}

/// Parses Europarl raw format. Content appearing before any structure is
/// accepted under an implicit chapter, speaker turn and paragraph.
pub fn parse_europarl(file_id: &str, raw: &str) -> RawDocument {
    let mut doc = RawDocument {
        file_id: file_id.to_string(),
        chapters: Vec::new(),
    };
    // A paragraph is opened lazily by the first content line after a marker,
    // so consecutive markers never leave empty paragraphs behind.
    let mut paragraph_open = false;

    for line in raw.lines() {
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        match classify(line) {
            Some(Markup::Chapter(id)) => {
                doc.chapters.push(Chapter {
                    id: Some(id.to_string()),
                    turns: Vec::new(),
                });
                paragraph_open = false;
            }
            Some(Markup::Speaker(attrs)) => {
                if doc.chapters.is_empty() {
                    doc.chapters.push(Chapter::default());
                }
                let chapter = doc.chapters.last_mut().expect("chapter");
                chapter.turns.push(SpeakerTurn {
                    attributes: Some(attrs.to_string()),
                    paragraphs: Vec::new(),
                });
                paragraph_open = false;
            }
            Some(Markup::Paragraph) => paragraph_open = false,
            Some(Markup::Other) => {}
            None => {
                if doc.chapters.is_empty() {
                    doc.chapters.push(Chapter::default());
                }
                let chapter = doc.chapters.last_mut().expect("chapter");
                if chapter.turns.is_empty() {
                    chapter.turns.push(SpeakerTurn::default());
                }
                let turn = chapter.turns.last_mut().expect("turn");
                if !paragraph_open || turn.paragraphs.is_empty() {
                    turn.paragraphs.push(Vec::new());
                    paragraph_open = true;
                }
                turn.paragraphs
                    .last_mut()
                    .expect("paragraph")
                    .push(line.to_string());
            }
        }
    }
    doc
}

/// Removes inline `<...>` tags from a content line.
fn remove_inline_tags(line: &str) -> String {
    let mut out = String::with_capacity(line.len());
    let mut rest = line;
    while let Some(start) = rest.find('<') {
        match rest[start..].find('>') {
            Some(len) => {
                out.push_str(&rest[..start]);
                out.push(' ');
                rest = &rest[start + len + 1..];
            }
            None => break,
        }
    }
    out.push_str(rest);
    out
}

/// Flattens chapters and speaker turns, returning content paragraphs in
/// document order. The number of lines is preserved.
pub fn strip_markup(doc: &RawDocument) -> Vec<Vec<String>> {
    doc.chapters
        .iter()
        .flat_map(|c| &c.turns)
        .flat_map(|t| &t.paragraphs)
        .map(|p| p.iter().map(|l| remove_inline_tags(l)).collect())
        .collect()
}

/// Splits a line into word and punctuation tokens.
///
/// Every punctuation character becomes its own token, except apostrophes and
/// hyphens with a letter on both sides (`aujourd'hui`, `well-known`).
pub fn tokenize(sentence: &str) -> Vec<String> {
    let chars: Vec<char> = sentence.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if splits_off(c) {
            let joiner = matches!(c, '\'' | '-')
                && i > 0
                && chars[i - 1].is_alphabetic()
                && chars.get(i + 1).is_some_and(|n| n.is_alphabetic());
            if joiner {
                current.push(c);
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(c.to_string());
            }
        } else {
            current.push(c);
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Unicode lowercase mapping, token by token.
pub fn normalize_case(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| t.to_lowercase()).collect()
}

/// Tokenize then lowercase one line.
pub fn normalize_line(line: &str) -> Sentence {
    normalize_case(&tokenize(line))
}

/// A tokenized, lowercased document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub file_id: String,
    pub language: String,
    pub paragraphs: Vec<Vec<Sentence>>,
}

impl Document {
    /// Strips markup, tokenizes and lowercases. Lines that yield no tokens are
    /// dropped, as are paragraphs left empty.
    pub fn from_raw(raw: &RawDocument, language: &str) -> Self {
        let paragraphs = strip_markup(raw)
            .iter()
            .map(|p| {
                p.iter()
                    .map(|l| normalize_line(l))
                    .filter(|s| !s.is_empty())
                    .collect::<Vec<_>>()
            })
            .filter(|p| !p.is_empty())
            .collect();
        Document {
            file_id: raw.file_id.clone(),
            language: language.to_string(),
            paragraphs,
        }
    }

    pub fn sentence_count(&self) -> usize {
        self.paragraphs.iter().map(Vec::len).sum()
    }

    /// One sentence per line, tokens space-separated, a blank line between
    /// paragraphs.
    pub fn to_tokenized_text(&self) -> String {
        let mut out = String::new();
        for (i, paragraph) in self.paragraphs.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            for sentence in paragraph {
                let _ = writeln!(out, "{}", sentence.join(" "));
            }
        }
        out
    }

    /// Reads the format written by [`Document::to_tokenized_text`].
    pub fn from_tokenized_text(file_id: &str, language: &str, text: &str) -> Self {
        let mut paragraphs = Vec::new();
        let mut current: Vec<Sentence> = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                if !current.is_empty() {
                    paragraphs.push(std::mem::take(&mut current));
                }
            } else {
                current.push(line.split_whitespace().map(str::to_string).collect());
            }
        }
        if !current.is_empty() {
            paragraphs.push(current);
        }
        Document {
            file_id: file_id.to_string(),
            language: language.to_string(),
            paragraphs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParagraphPair {
    pub file_id: String,
    pub pair_index: usize,
    pub src_paragraph: Vec<Sentence>,
    pub tgt_paragraph: Vec<Sentence>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Pairing {
    pub pairs: Vec<ParagraphPair>,
    pub warnings: Vec<String>,
    /// Set when paragraph counts differed and each side was collapsed.
    pub collapsed: bool,
}

/// Pairs paragraphs positionally. When the paragraph counts differ, each
/// document is collapsed into one paragraph and a single pair is produced.
pub fn pair_documents(src: &Document, tgt: &Document) -> Pairing {
    let mut pairing = Pairing::default();
    if src.file_id != tgt.file_id {
        pairing.warnings.push(format!(
            "pairing documents with different ids: {} / {}",
            src.file_id, tgt.file_id
        ));
    }
    if src.paragraphs.is_empty() || tgt.paragraphs.is_empty() {
        pairing.warnings.push(format!(
            "{}: empty document ({} has {} paragraphs, {} has {})",
            src.file_id,
            src.language,
            src.paragraphs.len(),
            tgt.language,
            tgt.paragraphs.len()
        ));
        return pairing;
    }
    if src.paragraphs.len() == tgt.paragraphs.len() {
        pairing.pairs = src
            .paragraphs
            .iter()
            .zip(&tgt.paragraphs)
            .enumerate()
            .map(|(i, (s, t))| ParagraphPair {
                file_id: src.file_id.clone(),
                pair_index: i,
                src_paragraph: s.clone(),
                tgt_paragraph: t.clone(),
            })
            .collect();
    } else {
        pairing.collapsed = true;
        pairing.pairs.push(ParagraphPair {
            file_id: src.file_id.clone(),
            pair_index: 0,
            src_paragraph: src.paragraphs.concat(),
            tgt_paragraph: tgt.paragraphs.concat(),
        });
    }
    pairing
}
