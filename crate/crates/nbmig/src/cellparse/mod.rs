//! Cell-language parsing and static usage extraction.
//!
//! Notebook cells are written in a small imperative language (assignments,
//! expressions, `def`, `return`, `import`, `if`/`else`, `for`, calls with
//! keyword arguments, list displays, arithmetic and comparisons). This
//! module lexes and parses a cell into an AST, extracts the names a cell
//! reads and writes without executing it, and provides a toy interpreter
//! used to cross-check the static analysis.
//!
//! The published grammar lives in `docs/grammar.ebnf`.

pub mod ast;
pub mod interp;
mod lexer;
mod parser;
mod usage;

pub use ast::{
    BinOpKind, CellAst, CmpOpKind, Expr, FunctionDef, Keyword, Literal, Name, NameCtx, Param,
    Span, Stmt,
};
pub use interp::{run_cell, InterpOptions, Namespace, RunOutcome, Value};
pub use parser::parse_cell;
pub use usage::{extract_usage, KwValue, NameUsage};

/// Parse failure with a 1-based source position, what was found, and the
/// set of token classes that would have been accepted there.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    pub line: u32,
    pub col: u32,
    pub found: String,
    pub expected: Vec<String>,
}

impl std::fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "syntax error at line {}, column {}: expected ", self.line, self.col)?;
        match self.expected.len() {
            0 => write!(f, "something else")?,
            1 => write!(f, "{}", self.expected[0])?,
            n => {
                for (i, e) in self.expected.iter().enumerate() {
                    if i == 0 {
                        write!(f, "{e}")?;
                    } else if i + 1 == n {
                        write!(f, " or {e}")?;
                    } else {
                        write!(f, ", {e}")?;
                    }
                }
            }
        }
        write!(f, ", found {}", self.found)
    }
}

impl std::error::Error for SyntaxError {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn syntax_error_display_lists_alternatives() {
        let err = SyntaxError {
            line: 3,
            col: 7,
            found: "';'".to_string(),
            expected: vec!["a name".to_string(), "a literal".to_string(), "'('".to_string()],
        };
        assert_eq!(
            err.to_string(),
            "syntax error at line 3, column 7: expected a name, a literal or '(', found ';'"
        );
        let single = SyntaxError {
            line: 1,
            col: 2,
            found: "end of input".to_string(),
            expected: vec!["')'".to_string()],
        };
        assert_eq!(
            single.to_string(),
            "syntax error at line 1, column 2: expected ')', found end of input"
        );
    }
}
