//! Lexicon-driven extraction of chemistry-bearing phrases from captions.
//!
//! A caption is split into word tokens. Stopwords, bare numbers and any
//! punctuation between tokens break it into runs; each run that contains at
//! least one chemical token (a lexicon keyword or a word with a chemical
//! suffix) becomes a phrase.

use std::collections::HashSet;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

const LEXICON: &str = include_str!("../data/lexicon.txt");
const STOPLIST: &str = include_str!("../data/stoplist.txt");

/// Suffixes match only words at least this many characters longer than the suffix.
const MIN_STEM: usize = 3;
const MIN_PHRASE_CHARS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChemicalPhrase {
    pub text: String,
    /// Byte offsets into the caption.
    pub span: (usize, usize),
    pub source_id: String,
}

#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    keywords: HashSet<String>,
    suffixes: Vec<String>,
}

impl Lexicon {
    /// Parses one entry per line; `-suffix` entries are suffixes, `#` starts a comment line.
    pub fn parse(text: &str) -> Lexicon {
        let mut lex = Lexicon::default();
        for entry in entries(text) {
            lex.insert(&entry);
        }
        lex
    }

    pub fn insert(&mut self, entry: &str) {
        let entry = entry.trim().to_lowercase();
        match entry.strip_prefix('-') {
            Some(suffix) if !suffix.is_empty() => {
                if !self.suffixes.iter().any(|s| s == suffix) {
                    self.suffixes.push(suffix.to_string());
                }
            }
            _ if !entry.is_empty() => {
                self.keywords.insert(entry);
            }
            _ => {}
        }
    }

    /// Keyword or suffix match on the word or, for plurals, on the word without its final `s`.
    pub fn is_chemical(&self, word: &str) -> bool {
        self.matches(word) || word.strip_suffix('s').is_some_and(|w| self.matches(w))
    }

    fn matches(&self, word: &str) -> bool {
        if self.keywords.contains(word) {
            return true;
        }
        let chars = word.chars().count();
        self.suffixes
            .iter()
            .any(|s| word.ends_with(s.as_str()) && chars >= s.chars().count() + MIN_STEM)
    }
}

fn entries(text: &str) -> impl Iterator<Item = String> + '_ {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
}

#[derive(Debug, Clone)]
pub struct PhraseExtractor {
    lexicon: Lexicon,
    stopwords: HashSet<String>,
}

fn token_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+(?:[-,'′][\p{L}\p{N}]+)*").expect("valid token regex"))
}

impl Default for PhraseExtractor {
    fn default() -> Self {
        PhraseExtractor::new(Lexicon::parse(LEXICON), STOPLIST)
    }
}

impl PhraseExtractor {
    pub fn new(lexicon: Lexicon, stoplist: &str) -> Self {
        PhraseExtractor {
            lexicon,
            stopwords: entries(stoplist).collect(),
        }
    }

    pub fn from_files(lexicon: &Path, stoplist: &Path) -> std::io::Result<Self> {
        Ok(PhraseExtractor::new(
            Lexicon::parse(&std::fs::read_to_string(lexicon)?),
            &std::fs::read_to_string(stoplist)?,
        ))
    }

    pub fn lexicon_mut(&mut self) -> &mut Lexicon {
        &mut self.lexicon
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.stopwords.contains(word)
    }

    fn breaks_chunk(&self, word: &str) -> bool {
        self.stopwords.contains(word) || word.chars().all(|c| c.is_numeric())
    }

    pub fn extract(&self, caption: &str, source_id: &str) -> Vec<ChemicalPhrase> {
        let mut phrases = Vec::new();
        // (start, end, has chemical token) of the run being built
        let mut run: Option<(usize, usize, bool)> = None;
        let mut flush = |run: &mut Option<(usize, usize, bool)>| {
            if let Some((start, end, true)) = run.take() {
                let text = caption[start..end].to_lowercase();
                if text.chars().count() >= MIN_PHRASE_CHARS && !self.stopwords.contains(&text) {
                    phrases.push(ChemicalPhrase {
                        text,
                        span: (start, end),
                        source_id: source_id.to_string(),
                    });
                }
            }
        };
        for token in token_pattern().find_iter(caption) {
            let word = token.as_str().to_lowercase();
            if let Some((_, end, _)) = run {
                if !caption[end..token.start()].chars().all(char::is_whitespace) {
                    flush(&mut run);
                }
            }
            if self.breaks_chunk(&word) {
                flush(&mut run);
                continue;
            }
            let chemical = self.lexicon.is_chemical(&word);
            run = Some(match run {
                Some((start, _, seen)) => (start, token.end(), seen || chemical),
                None => (token.start(), token.end(), chemical),
            });
        }
        flush(&mut run);
        phrases
    }
}

/// Extracts phrases with the bundled lexicon and stoplist.
pub fn extract_phrases(caption: &str) -> Vec<ChemicalPhrase> {
    static DEFAULT: OnceLock<PhraseExtractor> = OnceLock::new();
    DEFAULT.get_or_init(PhraseExtractor::default).extract(caption, "")
}
