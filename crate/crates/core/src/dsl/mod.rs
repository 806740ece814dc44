//! The `.wdl` schema language: parser and canonical printer.

mod lexer;
mod parser;
mod printer;

use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::schema::WarehouseSchema;

pub use printer::{print_expr, print_schema};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DslError {
    #[error("{line}:{col}: syntax error: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("{line}:{col}: unresolved name `{name}`")]
    UnresolvedName { line: usize, col: usize, name: String },
    #[error("{line}:{col}: duplicate declaration of `{name}`")]
    DuplicateDeclaration { line: usize, col: usize, name: String },
}

impl DslError {
    pub(crate) fn syntax(line: usize, col: usize, message: impl fmt::Display) -> Self {
        DslError::Syntax { line, col, message: message.to_string() }
    }

    pub fn position(&self) -> (usize, usize) {
        match self {
            DslError::Syntax { line, col, .. }
            | DslError::UnresolvedName { line, col, .. }
            | DslError::DuplicateDeclaration { line, col, .. } => (*line, *col),
        }
    }
}

/// Parse a schema document; every referenced name must be declared.
pub fn parse_schema(text: &str) -> Result<WarehouseSchema, DslError> {
    let tokens = lexer::tokenize(text)?;
    parser::Parser::new(tokens).document()
}

/// Parse a standalone mapping expression (names are not resolved).
pub fn parse_mapping(text: &str) -> Result<crate::algebra::MappingExpr, DslError> {
    let tokens = lexer::tokenize(text)?;
    parser::Parser::new(tokens).standalone_expr()
}

/// Parse a standalone predicate.
pub fn parse_predicate(text: &str) -> Result<crate::predicate::Dnf, DslError> {
    let tokens = lexer::tokenize(text)?;
    parser::Parser::new(tokens).standalone_pred()
}

/// Hex sha256 of the canonical print of a schema.
pub fn schema_hash(schema: &WarehouseSchema) -> String {
    let digest = Sha256::digest(print_schema(schema).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
