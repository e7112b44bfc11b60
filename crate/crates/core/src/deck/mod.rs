//! Reading simulation input decks.
//!
//! Parsing happens in two stages: [`parse_str`] turns text into a [`Deck`]
//! of typed keyword records, and [`build_case`] folds a deck into a
//! [`SimCase`] in SI units.

pub mod case;
pub mod parser;
pub mod schema;

pub use case::{build_case, CaseError, SimCase};
pub use parser::{
    parse_file, parse_str, Deck, DeckError, DeckErrorKind, FileResolver, IncludeResolver, Item, Keyword, Location,
    MemoryResolver, ParseOptions, ParsedDeck, Record, Warning,
};
pub use schema::{Registry, SchemaError};
