use std::collections::HashMap;
use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use super::schema::{DefaultValue, ItemType, KeywordSchema, RecordCount, Registry};

/// Largest number of items one record may expand to.
pub const MAX_RECORD_ITEMS: usize = 2_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Location {
    pub file: Arc<str>,
    pub line: usize,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.file, self.line)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Int(i64),
    Real(f64),
    Str(String),
    /// Defaulted with no schema default.
    Default,
}

impl Item {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Item::Int(v) => Some(*v as f64),
            Item::Real(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Item::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Item::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_default(&self) -> bool {
        matches!(self, Item::Default)
    }
}

/// One slash-terminated record. Equality ignores the location.
#[derive(Debug, Clone)]
pub struct Record {
    pub items: Vec<Item>,
    pub location: Location,
}

impl PartialEq for Record {
    fn eq(&self, other: &Self) -> bool {
        self.items == other.items
    }
}

/// Equality ignores the location.
#[derive(Debug, Clone)]
pub struct Keyword {
    pub name: String,
    pub records: Vec<Record>,
    pub location: Location,
}

impl PartialEq for Keyword {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.records == other.records
    }
}

/// Ordered keyword container produced by the first parsing stage.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Deck {
    pub keywords: Vec<Keyword>,
}

impl Deck {
    pub fn iter(&self) -> impl Iterator<Item = &Keyword> {
        self.keywords.iter()
    }

    pub fn find(&self, name: &str) -> Option<&Keyword> {
        self.keywords.iter().find(|k| k.name == name)
    }

    /// Deck text that parses back to an identical deck.
    pub fn pretty(&self, registry: &Registry) -> String {
        let mut out = String::new();
        for kw in &self.keywords {
            out.push_str(&kw.name);
            out.push('\n');
            for rec in &kw.records {
                for (i, chunk) in rec.items.chunks(8).enumerate() {
                    out.push_str(if i == 0 { "  " } else { "\n  " });
                    let words: Vec<String> = chunk.iter().map(format_item).collect();
                    out.push_str(&words.join(" "));
                }
                out.push_str(if rec.items.is_empty() { "  /\n" } else { " /\n" });
            }
            if registry.get(&kw.name).is_some_and(|s| s.records == RecordCount::List) {
                out.push_str("/\n");
            }
            out.push('\n');
        }
        out
    }
}

fn format_item(item: &Item) -> String {
    match item {
        Item::Int(v) => v.to_string(),
        Item::Real(v) => format!("{v:?}"),
        Item::Str(s) => format!("'{s}'"),
        Item::Default => "1*".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeckErrorKind {
    #[error("cannot read '{path}': {message}")]
    Io { path: String, message: String },
    #[error("unknown keyword {0}")]
    UnknownKeyword(String),
    #[error("expected a keyword, found '{0}'")]
    ExpectedKeyword(String),
    #[error("record of {0} is not terminated by '/'")]
    UnterminatedRecord(String),
    #[error("unterminated quoted string")]
    UnterminatedQuote,
    #[error("INCLUDE cycle through '{0}'")]
    IncludeCycle(String),
    #[error("{keyword} item {item}: expected {expected}, found '{found}'")]
    TypeMismatch {
        keyword: String,
        item: String,
        expected: &'static str,
        found: String,
    },
    #[error("{keyword}: more than {expected} items in record")]
    TooManyItems { keyword: String, expected: usize },
    #[error("invalid repeat count in '{0}'")]
    BadRepeat(String),
    #[error("INCLUDE needs a file name")]
    MissingIncludePath,
}

/// A stage-1 diagnostic with its position.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{location}: {kind}")]
pub struct DeckError {
    pub location: Location,
    pub kind: DeckErrorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Warning {
    pub location: Location,
    pub message: String,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: warning: {}", self.location, self.message)
    }
}

/// Source of INCLUDE files.
pub trait IncludeResolver {
    /// Path of `target` named inside the file `including`.
    fn resolve(&self, including: &str, target: &str) -> String {
        let base = Path::new(including).parent().unwrap_or(Path::new(""));
        normalize(&base.join(target)).to_string_lossy().into_owned()
    }

    fn read(&self, path: &str) -> std::io::Result<String>;
}

/// Lexical path normalisation, used for cycle detection.
fn normalize(p: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FileResolver;

impl IncludeResolver for FileResolver {
    fn read(&self, path: &str) -> std::io::Result<String> {
        std::fs::read_to_string(path)
    }
}

/// In-memory files keyed by path.
#[derive(Debug, Clone, Default)]
pub struct MemoryResolver {
    pub files: HashMap<String, String>,
}

impl MemoryResolver {
    pub fn with(mut self, path: &str, text: &str) -> Self {
        self.files.insert(path.to_string(), text.to_string());
        self
    }
}

impl IncludeResolver for MemoryResolver {
    fn read(&self, path: &str) -> std::io::Result<String> {
        self.files
            .get(path)
            .cloned()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Skip unknown keywords with a warning instead of failing.
    pub lenient: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedDeck {
    pub deck: Deck,
    pub warnings: Vec<Warning>,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Quoted(String),
    /// `n*'text'`
    RepeatQuoted(usize, String),
    Slash,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    line_start: bool,
}

fn tokenize(text: &str, file: &Arc<str>) -> Result<Vec<Token>, DeckError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        let mut first = true;
        let err = |kind| DeckError {
            location: Location {
                file: file.clone(),
                line: line_no,
            },
            kind,
        };
        let read_quoted = |i: &mut usize| -> Result<String, DeckError> {
            let start = *i + 1;
            let end = (start..chars.len())
                .find(|&k| chars[k] == '\'')
                .ok_or_else(|| err(DeckErrorKind::UnterminatedQuote))?;
            *i = end + 1;
            Ok(chars[start..end].iter().collect())
        };
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c == '-' && chars.get(i + 1) == Some(&'-') {
                break;
            }
            let tok = if c == '\'' {
                Tok::Quoted(read_quoted(&mut i)?)
            } else if c == '/' {
                // anything after the terminator is commentary
                out.push(Token {
                    tok: Tok::Slash,
                    line: line_no,
                    line_start: first,
                });
                break;
            } else {
                let start = i;
                while i < chars.len()
                    && !chars[i].is_whitespace()
                    && chars[i] != '/'
                    && chars[i] != '\''
                    && !(chars[i] == '-' && chars.get(i + 1) == Some(&'-'))
                {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                if i < chars.len() && chars[i] == '\'' && word.ends_with('*') {
                    let count = parse_count(&word[..word.len() - 1]).ok_or_else(|| err(DeckErrorKind::BadRepeat(word.clone())))?;
                    Tok::RepeatQuoted(count, read_quoted(&mut i)?)
                } else {
                    Tok::Word(word)
                }
            };
            out.push(Token {
                tok,
                line: line_no,
                line_start: first,
            });
            first = false;
        }
    }
    Ok(out)
}

fn parse_count(s: &str) -> Option<usize> {
    if s.is_empty() {
        return Some(1);
    }
    if !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse::<usize>().ok().filter(|&n| n > 0 && n <= MAX_RECORD_ITEMS)
}

fn parse_real(s: &str) -> Option<f64> {
    let t = s.replace(['D', 'd'], "E");
    let starts_ok = t.starts_with(|c: char| c.is_ascii_digit() || c == '.' || c == '-' || c == '+');
    t.parse::<f64>().ok().filter(|v| v.is_finite() && starts_ok)
}

/// An item before typing.
enum Raw {
    Text(String, bool),
    Default,
}

struct Stage1<'a> {
    registry: &'a Registry,
    resolver: &'a dyn IncludeResolver,
    options: ParseOptions,
    warnings: Vec<Warning>,
    include_stack: Vec<String>,
}

fn looks_like_keyword(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
        && s.len() <= 8
        && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

impl Stage1<'_> {
    fn is_boundary(&self, t: &Token) -> bool {
        matches!(&t.tok, Tok::Word(w) if t.line_start && self.registry.contains(w))
    }

    /// Parses one file into `out`; returns true when END was reached.
    fn parse_text(&mut self, file: &str, text: &str, out: &mut Vec<Keyword>) -> Result<bool, DeckError> {
        let file: Arc<str> = Arc::from(file);
        let tokens = tokenize(text, &file)?;
        let loc = |line| Location {
            file: file.clone(),
            line,
        };
        let mut i = 0;
        while i < tokens.len() {
            let t = &tokens[i];
            let name = match &t.tok {
                Tok::Word(w) if looks_like_keyword(w) => w.clone(),
                Tok::Word(w) | Tok::Quoted(w) | Tok::RepeatQuoted(_, w) => {
                    return Err(DeckError {
                        location: loc(t.line),
                        kind: DeckErrorKind::ExpectedKeyword(w.clone()),
                    })
                }
                Tok::Slash => {
                    return Err(DeckError {
                        location: loc(t.line),
                        kind: DeckErrorKind::ExpectedKeyword("/".into()),
                    })
                }
            };
            let kw_loc = loc(t.line);
            i += 1;
            let Some(schema) = self.registry.get(&name) else {
                if !self.options.lenient {
                    return Err(DeckError {
                        location: kw_loc,
                        kind: DeckErrorKind::UnknownKeyword(name),
                    });
                }
                self.warnings.push(Warning {
                    location: kw_loc,
                    message: format!("skipping unknown keyword {name}"),
                });
                while i < tokens.len() && !self.is_boundary(&tokens[i]) {
                    i += 1;
                }
                continue;
            };
            let mut records = Vec::new();
            match schema.records {
                RecordCount::None => {}
                RecordCount::One => records.push(self.read_record(&tokens, &mut i, schema, &kw_loc)?),
                RecordCount::List => loop {
                    let rec = self.read_record(&tokens, &mut i, schema, &kw_loc)?;
                    if rec.items.is_empty() {
                        break;
                    }
                    records.push(rec);
                },
            }
            match name.as_str() {
                "END" => return Ok(true),
                "INCLUDE" => {
                    let target = records
                        .first()
                        .and_then(|r| r.items.first())
                        .and_then(Item::as_str)
                        .ok_or_else(|| DeckError {
                            location: kw_loc.clone(),
                            kind: DeckErrorKind::MissingIncludePath,
                        })?;
                    let path = self.resolver.resolve(&file, target);
                    if self.include_stack.contains(&path) {
                        return Err(DeckError {
                            location: kw_loc,
                            kind: DeckErrorKind::IncludeCycle(path),
                        });
                    }
                    let text = self.resolver.read(&path).map_err(|e| DeckError {
                        location: kw_loc.clone(),
                        kind: DeckErrorKind::Io {
                            path: path.clone(),
                            message: e.to_string(),
                        },
                    })?;
                    self.include_stack.push(path.clone());
                    let ended = self.parse_text(&path, &text, out)?;
                    self.include_stack.pop();
                    if ended {
                        return Ok(true);
                    }
                }
                _ => out.push(Keyword {
                    name,
                    records,
                    location: kw_loc,
                }),
            }
        }
        Ok(false)
    }

    fn read_record(
        &self,
        tokens: &[Token],
        i: &mut usize,
        schema: &KeywordSchema,
        kw_loc: &Location,
    ) -> Result<Record, DeckError> {
        let unterminated = || DeckError {
            location: kw_loc.clone(),
            kind: DeckErrorKind::UnterminatedRecord(schema.name.clone()),
        };
        let start_line = tokens.get(*i).map_or(kw_loc.line, |t| t.line);
        let location = Location {
            file: kw_loc.file.clone(),
            line: start_line,
        };
        let err = |kind| DeckError {
            location: location.clone(),
            kind,
        };
        let mut raw: Vec<Raw> = Vec::new();
        let push = |raw: &mut Vec<Raw>, n: usize, make: &dyn Fn() -> Raw| -> Result<(), DeckError> {
            if raw.len() + n > MAX_RECORD_ITEMS {
                return Err(err(DeckErrorKind::TooManyItems {
                    keyword: schema.name.clone(),
                    expected: MAX_RECORD_ITEMS,
                }));
            }
            raw.extend((0..n).map(|_| make()));
            Ok(())
        };
        loop {
            let Some(t) = tokens.get(*i) else {
                return Err(unterminated());
            };
            if self.is_boundary(t) {
                return Err(unterminated());
            }
            *i += 1;
            match &t.tok {
                Tok::Slash => break,
                Tok::Quoted(s) => push(&mut raw, 1, &|| Raw::Text(s.clone(), true))?,
                Tok::RepeatQuoted(n, s) => push(&mut raw, *n, &|| Raw::Text(s.clone(), true))?,
                Tok::Word(w) => match w.split_once('*') {
                    Some((count, value)) if count.is_empty() || count.bytes().all(|b| b.is_ascii_digit()) => {
                        let n = parse_count(count).ok_or_else(|| err(DeckErrorKind::BadRepeat(w.clone())))?;
                        if value.is_empty() {
                            push(&mut raw, n, &|| Raw::Default)?;
                        } else {
                            push(&mut raw, n, &|| Raw::Text(value.to_string(), false))?;
                        }
                    }
                    _ => push(&mut raw, 1, &|| Raw::Text(w.clone(), false))?,
                },
            }
        }
        if raw.is_empty() && schema.records == RecordCount::List {
            return Ok(Record { items: vec![], location });
        }

        let fixed = schema.items.len();
        if raw.len() > fixed && schema.data.is_none() {
            return Err(err(DeckErrorKind::TooManyItems {
                keyword: schema.name.clone(),
                expected: fixed,
            }));
        }
        let n = raw.len().max(fixed);
        let mut items = Vec::with_capacity(n);
        for k in 0..n {
            let (kind, item_name, default) = if k < fixed {
                let it = &schema.items[k];
                (it.kind, it.name.clone(), it.default.as_ref())
            } else {
                let d = schema.data.as_ref().expect("checked above");
                (d.kind, format!("{}", k + 1), None)
            };
            let item = match raw.get(k) {
                Some(Raw::Text(text, quoted)) => {
                    let mismatch = |expected| {
                        err(DeckErrorKind::TypeMismatch {
                            keyword: schema.name.clone(),
                            item: item_name.clone(),
                            expected,
                            found: text.clone(),
                        })
                    };
                    match kind {
                        ItemType::String => Item::Str(text.clone()),
                        ItemType::Int if !quoted => Item::Int(text.parse().map_err(|_| mismatch("an integer"))?),
                        ItemType::Real if !quoted => Item::Real(parse_real(text).ok_or_else(|| mismatch("a number"))?),
                        ItemType::Int => return Err(mismatch("an integer")),
                        ItemType::Real => return Err(mismatch("a number")),
                    }
                }
                Some(Raw::Default) | None => match (default, kind) {
                    (Some(DefaultValue::Number(v)), ItemType::Int) => Item::Int(*v as i64),
                    (Some(DefaultValue::Number(v)), _) => Item::Real(*v),
                    (Some(DefaultValue::Text(s)), _) => Item::Str(s.clone()),
                    (None, _) => Item::Default,
                },
            };
            items.push(item);
        }
        Ok(Record { items, location })
    }
}

/// Parses deck text named `file`, resolving INCLUDE through `resolver`.
pub fn parse_str(
    text: &str,
    file: &str,
    registry: &Registry,
    resolver: &dyn IncludeResolver,
    options: ParseOptions,
) -> Result<ParsedDeck, DeckError> {
    let mut stage = Stage1 {
        registry,
        resolver,
        options,
        warnings: Vec::new(),
        include_stack: vec![file.to_string()],
    };
    let mut keywords = Vec::new();
    stage.parse_text(file, text, &mut keywords)?;
    Ok(ParsedDeck {
        deck: Deck { keywords },
        warnings: stage.warnings,
    })
}

pub fn parse_file(path: &Path, registry: &Registry, options: ParseOptions) -> Result<ParsedDeck, DeckError> {
    let name = normalize(path).to_string_lossy().into_owned();
    let text = std::fs::read_to_string(path).map_err(|e| DeckError {
        location: Location {
            file: Arc::from(name.as_str()),
            line: 0,
        },
        kind: DeckErrorKind::Io {
            path: name.clone(),
            message: e.to_string(),
        },
    })?;
    parse_str(&text, &name, registry, &FileResolver, options)
}
