//! Hand-written lexer: logical lines, INDENT/DEDENT tokens, implicit line
//! joining inside parentheses and brackets, `#` comments.
//!
//! Indentation width counts spaces as 1 and tabs as a jump to the next
//! multiple of 8. Comment-only and blank lines produce no tokens at all.

use super::SyntaxError;

#[derive(Debug, Clone, PartialEq)]
pub enum TokKind {
    Name(String),
    Int(i64),
    Float(f64),
    Str(String),
    Def,
    Return,
    Import,
    If,
    Else,
    For,
    In,
    True,
    False,
    NoneLit,
    Assign,
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Semi,
    Dot,
    Newline,
    Indent,
    Dedent,
    Eof,
}

impl TokKind {
    /// Human name used in expected-token sets and "found" reports.
    pub fn describe(&self) -> String {
        match self {
            TokKind::Name(n) => format!("name {n:?}"),
            TokKind::Int(v) => format!("integer {v}"),
            TokKind::Float(v) => format!("float {v}"),
            TokKind::Str(_) => "string literal".to_string(),
            TokKind::Def => "'def'".to_string(),
            TokKind::Return => "'return'".to_string(),
            TokKind::Import => "'import'".to_string(),
            TokKind::If => "'if'".to_string(),
            TokKind::Else => "'else'".to_string(),
            TokKind::For => "'for'".to_string(),
            TokKind::In => "'in'".to_string(),
            TokKind::True => "'True'".to_string(),
            TokKind::False => "'False'".to_string(),
            TokKind::NoneLit => "'None'".to_string(),
            TokKind::Assign => "'='".to_string(),
            TokKind::Eq => "'=='".to_string(),
            TokKind::Ne => "'!='".to_string(),
            TokKind::Lt => "'<'".to_string(),
            TokKind::Gt => "'>'".to_string(),
            TokKind::Le => "'<='".to_string(),
            TokKind::Ge => "'>='".to_string(),
            TokKind::Plus => "'+'".to_string(),
            TokKind::Minus => "'-'".to_string(),
            TokKind::Star => "'*'".to_string(),
            TokKind::Slash => "'/'".to_string(),
            TokKind::Percent => "'%'".to_string(),
            TokKind::LParen => "'('".to_string(),
            TokKind::RParen => "')'".to_string(),
            TokKind::LBracket => "'['".to_string(),
            TokKind::RBracket => "']'".to_string(),
            TokKind::Comma => "','".to_string(),
            TokKind::Colon => "':'".to_string(),
            TokKind::Semi => "';'".to_string(),
            TokKind::Dot => "'.'".to_string(),
            TokKind::Newline => "end of line".to_string(),
            TokKind::Indent => "indented block".to_string(),
            TokKind::Dedent => "end of block".to_string(),
            TokKind::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokKind,
    pub line: u32,
    pub col: u32,
    pub end_col: u32,
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: u32,
    col: u32,
    tokens: Vec<Token>,
    indents: Vec<u32>,
    /// Open parenthesis/bracket depth; newlines inside are plain whitespace.
    depth: u32,
    line_has_tokens: bool,
}

pub fn lex(source: &str) -> Result<Vec<Token>, SyntaxError> {
    let mut lexer = Lexer {
        chars: source.chars().collect(),
        pos: 0,
        line: 1,
        col: 1,
        tokens: Vec::new(),
        indents: vec![0],
        depth: 0,
        line_has_tokens: false,
    };
    lexer.run()?;
    Ok(lexer.tokens)
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

impl Lexer {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<char> {
        self.chars.get(self.pos + 1).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn push(&mut self, kind: TokKind, line: u32, col: u32, end_col: u32) {
        self.tokens.push(Token {
            kind,
            line,
            col,
            end_col,
        });
    }

    fn error(&self, found: impl Into<String>, expected: &[&str]) -> SyntaxError {
        SyntaxError {
            line: self.line,
            col: self.col,
            found: found.into(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Consume leading whitespace of a fresh logical line and emit
    /// INDENT/DEDENT tokens. Returns false when the line turned out blank
    /// (or comment-only) and the caller should start over.
    fn handle_indentation(&mut self) -> Result<bool, SyntaxError> {
        let mut width: u32 = 0;
        loop {
            match self.peek() {
                Some(' ') => {
                    width += 1;
                    self.bump();
                }
                Some('\t') => {
                    width = width - width % 8 + 8;
                    self.bump();
                }
                _ => break,
            }
        }
        match self.peek() {
            None => return Ok(false),
            Some('\n') => {
                self.bump();
                return Ok(false);
            }
            Some('\r') => {
                self.bump();
                return Ok(false);
            }
            Some('#') => {
                while let Some(c) = self.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
                if self.peek().is_some() {
                    self.bump();
                }
                return Ok(false);
            }
            Some(_) => {}
        }
        let current = *self.indents.last().unwrap();
        if width > current {
            self.indents.push(width);
            self.push(TokKind::Indent, self.line, 1, self.col);
        } else {
            while width < *self.indents.last().unwrap() {
                self.indents.pop();
                self.push(TokKind::Dedent, self.line, 1, self.col);
            }
            if width != *self.indents.last().unwrap() {
                return Err(self.error(
                    format!("indentation of width {width}"),
                    &["an indentation level matching an enclosing block"],
                ));
            }
        }
        Ok(true)
    }

    fn run(&mut self) -> Result<(), SyntaxError> {
        let mut at_line_start = true;
        loop {
            if at_line_start && self.depth == 0 {
                if self.pos >= self.chars.len() {
                    break;
                }
                if !self.handle_indentation()? {
                    continue;
                }
                at_line_start = false;
            }
            let Some(c) = self.peek() else {
                break;
            };
            match c {
                '\n' => {
                    let (nl_line, nl_col) = (self.line, self.col);
                    self.bump();
                    if self.depth == 0 {
                        if self.line_has_tokens {
                            self.push(TokKind::Newline, nl_line, nl_col, nl_col);
                            self.line_has_tokens = false;
                        }
                        at_line_start = true;
                    }
                }
                ' ' | '\t' | '\r' => {
                    self.bump();
                }
                '#' => {
                    while let Some(c) = self.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => {
                    self.lex_token()?;
                    self.line_has_tokens = true;
                }
            }
        }
        if self.line_has_tokens {
            self.push(TokKind::Newline, self.line, self.col, self.col);
        }
        while self.indents.len() > 1 {
            self.indents.pop();
            self.push(TokKind::Dedent, self.line, self.col, self.col);
        }
        self.push(TokKind::Eof, self.line, self.col, self.col);
        Ok(())
    }

    fn lex_token(&mut self) -> Result<(), SyntaxError> {
        let line = self.line;
        let col = self.col;
        let c = self.peek().expect("caller checked");
        if is_ident_start(c) {
            let mut ident = String::new();
            while let Some(c) = self.peek() {
                if !is_ident_continue(c) {
                    break;
                }
                ident.push(c);
                self.bump();
            }
            let kind = match ident.as_str() {
                "def" => TokKind::Def,
                "return" => TokKind::Return,
                "import" => TokKind::Import,
                "if" => TokKind::If,
                "else" => TokKind::Else,
                "for" => TokKind::For,
                "in" => TokKind::In,
                "True" => TokKind::True,
                "False" => TokKind::False,
                "None" => TokKind::NoneLit,
                _ => TokKind::Name(ident),
            };
            self.push(kind, line, col, self.col);
            return Ok(());
        }
        if c.is_ascii_digit() {
            return self.lex_number(line, col);
        }
        if c == '\'' || c == '"' {
            return self.lex_string(line, col);
        }
        self.bump();
        let two = |lexer: &mut Lexer, kind: TokKind| {
            lexer.bump();
            lexer.push(kind, line, col, lexer.col);
        };
        match c {
            '=' if self.peek() == Some('=') => two(self, TokKind::Eq),
            '=' => self.push(TokKind::Assign, line, col, self.col),
            '!' if self.peek() == Some('=') => two(self, TokKind::Ne),
            '!' => return Err(self.error("'!'", &["'!='"])),
            '<' if self.peek() == Some('=') => two(self, TokKind::Le),
            '<' => self.push(TokKind::Lt, line, col, self.col),
            '>' if self.peek() == Some('=') => two(self, TokKind::Ge),
            '>' => self.push(TokKind::Gt, line, col, self.col),
            '+' => self.push(TokKind::Plus, line, col, self.col),
            '-' => self.push(TokKind::Minus, line, col, self.col),
            '*' => self.push(TokKind::Star, line, col, self.col),
            '/' => self.push(TokKind::Slash, line, col, self.col),
            '%' => self.push(TokKind::Percent, line, col, self.col),
            '(' => {
                self.depth += 1;
                self.push(TokKind::LParen, line, col, self.col);
            }
            ')' => {
                self.depth = self.depth.saturating_sub(1);
                self.push(TokKind::RParen, line, col, self.col);
            }
            '[' => {
                self.depth += 1;
                self.push(TokKind::LBracket, line, col, self.col);
            }
            ']' => {
                self.depth = self.depth.saturating_sub(1);
                self.push(TokKind::RBracket, line, col, self.col);
            }
            ',' => self.push(TokKind::Comma, line, col, self.col),
            ':' => self.push(TokKind::Colon, line, col, self.col),
            ';' => self.push(TokKind::Semi, line, col, self.col),
            '.' => self.push(TokKind::Dot, line, col, self.col),
            other => {
                return Err(SyntaxError {
                    line,
                    col,
                    found: format!("{other:?}"),
                    expected: vec!["a token of the cell language".to_string()],
                })
            }
        }
        Ok(())
    }

    fn lex_number(&mut self, line: u32, col: u32) -> Result<(), SyntaxError> {
        let mut text = String::new();
        while let Some(c) = self.peek() {
            if !c.is_ascii_digit() {
                break;
            }
            text.push(c);
            self.bump();
        }
        let is_float =
            self.peek() == Some('.') && self.peek2().map(|c| c.is_ascii_digit()).unwrap_or(false);
        if is_float {
            text.push('.');
            self.bump();
            while let Some(c) = self.peek() {
                if !c.is_ascii_digit() {
                    break;
                }
                text.push(c);
                self.bump();
            }
            let value: f64 = text.parse().expect("digits with one dot");
            self.push(TokKind::Float(value), line, col, self.col);
        } else {
            let value: i64 = text.parse().map_err(|_| SyntaxError {
                line,
                col,
                found: format!("integer literal {text}"),
                expected: vec!["an integer within the 64-bit signed range".to_string()],
            })?;
            self.push(TokKind::Int(value), line, col, self.col);
        }
        Ok(())
    }

    fn lex_string(&mut self, line: u32, col: u32) -> Result<(), SyntaxError> {
        let quote = self.bump().expect("caller checked");
        let mut value = String::new();
        loop {
            match self.peek() {
                None | Some('\n') => {
                    return Err(self.error("end of line", &["closing string quote"]));
                }
                Some('\\') => {
                    self.bump();
                    let escaped = match self.peek() {
                        Some('n') => '\n',
                        Some('t') => '\t',
                        Some('\\') => '\\',
                        Some('\'') => '\'',
                        Some('"') => '"',
                        _ => {
                            return Err(self.error(
                                "escape sequence",
                                &["one of \\n, \\t, \\\\, \\', \\\""],
                            ))
                        }
                    };
                    value.push(escaped);
                    self.bump();
                }
                Some(c) if c == quote => {
                    self.bump();
                    break;
                }
                Some(c) => {
                    value.push(c);
                    self.bump();
                }
            }
        }
        self.push(TokKind::Str(value), line, col, self.col);
        Ok(())
    }
}
