use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

use crate::units::Dimension;

include!(concat!(env!("OUT_DIR"), "/bundled_keywords.rs"));

#[derive(Debug, Error, PartialEq)]
pub enum SchemaError {
    #[error("keyword {0} registered twice")]
    Duplicate(String),
    #[error("schema '{source_name}': {message}")]
    Malformed { source_name: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemType {
    Int,
    Real,
    String,
}

/// How many slash-terminated records follow the keyword name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordCount {
    None,
    One,
    /// Records until an empty record.
    List,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum DefaultValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemSchema {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ItemType,
    #[serde(default)]
    pub default: Option<DefaultValue>,
    #[serde(default, deserialize_with = "dimension")]
    pub dimension: Option<Dimension>,
}

/// Variable-length tail of a record, e.g. the values of a grid array or
/// the rows of a table. Real columns cycle through `columns`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSchema {
    #[serde(rename = "type")]
    pub kind: ItemType,
    #[serde(default, deserialize_with = "dimensions")]
    pub columns: Vec<Dimension>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordSchema {
    pub name: String,
    /// Sections the keyword may appear in; `*` means any.
    pub sections: Vec<String>,
    pub records: RecordCount,
    #[serde(default)]
    pub section: bool,
    #[serde(default)]
    pub items: Vec<ItemSchema>,
    #[serde(default)]
    pub data: Option<DataSchema>,
}

impl KeywordSchema {
    pub fn allowed_in(&self, section: &str) -> bool {
        self.sections.iter().any(|s| s == "*" || s == section)
    }
}

fn dimension<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<Dimension>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    s.map(|s| s.parse().map_err(serde::de::Error::custom)).transpose()
}

fn dimensions<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<Dimension>, D::Error> {
    let v: Vec<String> = Vec::deserialize(d)?;
    v.iter()
        .map(|s| s.parse().map_err(serde::de::Error::custom))
        .collect()
}

fn is_keyword_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase())
        && s.len() <= 8
        && chars.all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

/// Keyword name to schema.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    schemas: BTreeMap<String, KeywordSchema>,
}

impl Registry {
    /// Registry of every keyword shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_documents(BUNDLED.iter().copied()).expect("bundled keyword schemas are valid")
    }

    /// Builds a registry from `(source name, JSON)` documents.
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, SchemaError> {
        let mut reg = Self::default();
        for (source, text) in docs {
            let schema: KeywordSchema = serde_json::from_str(text).map_err(|e| SchemaError::Malformed {
                source_name: source.to_string(),
                message: e.to_string(),
            })?;
            reg.register(schema, source)?;
        }
        Ok(reg)
    }

    pub fn register(&mut self, schema: KeywordSchema, source: &str) -> Result<(), SchemaError> {
        let malformed = |message: String| SchemaError::Malformed {
            source_name: source.to_string(),
            message,
        };
        if !is_keyword_name(&schema.name) {
            return Err(malformed(format!("invalid keyword name '{}'", schema.name)));
        }
        if schema.records == RecordCount::None && (!schema.items.is_empty() || schema.data.is_some()) {
            return Err(malformed("a keyword without records cannot declare items".into()));
        }
        if schema.records != RecordCount::None && schema.items.is_empty() && schema.data.is_none() {
            return Err(malformed("records declared but no items or data".into()));
        }
        for item in &schema.items {
            match (&item.default, item.kind) {
                (Some(DefaultValue::Text(_)), ItemType::String) | (Some(DefaultValue::Number(_)), ItemType::Real) | (None, _) => {}
                (Some(DefaultValue::Number(v)), ItemType::Int) if v.fract() == 0.0 => {}
                _ => return Err(malformed(format!("default of item {} does not match its type", item.name))),
            }
        }
        if self.schemas.contains_key(&schema.name) {
            return Err(SchemaError::Duplicate(schema.name));
        }
        self.schemas.insert(schema.name.clone(), schema);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&KeywordSchema> {
        self.schemas.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.schemas.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.schemas.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.schemas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schemas.is_empty()
    }
}
