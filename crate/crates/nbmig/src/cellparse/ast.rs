//! AST node types for the cell language.
//!
//! Every node carries a [`Span`] with 1-based line and column positions.
//! Name nodes are tagged with their context (load vs store) at parse time.

use serde::Serialize;

/// Half-open source region from (line, col) to (end_line, end_col).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Span {
    pub line: u32,
    pub col: u32,
    pub end_line: u32,
    pub end_col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32, end_line: u32, end_col: u32) -> Self {
        Span {
            line,
            col,
            end_line,
            end_col,
        }
    }

    /// Smallest span covering both inputs.
    pub fn merge(self, other: Span) -> Span {
        let (line, col) = if (self.line, self.col) <= (other.line, other.col) {
            (self.line, self.col)
        } else {
            (other.line, other.col)
        };
        let (end_line, end_col) =
            if (self.end_line, self.end_col) >= (other.end_line, other.end_col) {
                (self.end_line, self.end_col)
            } else {
                (other.end_line, other.end_col)
            };
        Span::new(line, col, end_line, end_col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NameCtx {
    Load,
    Store,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Name {
    pub id: String,
    pub ctx: NameCtx,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum Literal {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BinOpKind {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

impl BinOpKind {
    pub fn symbol(&self) -> &'static str {
        match self {
            BinOpKind::Add => "+",
            BinOpKind::Sub => "-",
            BinOpKind::Mul => "*",
            BinOpKind::Div => "/",
            BinOpKind::Mod => "%",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CmpOpKind {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

impl CmpOpKind {
    pub fn symbol(&self) -> &'static str {
        match self {
            CmpOpKind::Eq => "==",
            CmpOpKind::Ne => "!=",
            CmpOpKind::Lt => "<",
            CmpOpKind::Gt => ">",
            CmpOpKind::Le => "<=",
            CmpOpKind::Ge => ">=",
        }
    }
}

/// Keyword argument in a call: `name=value`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Keyword {
    pub name: String,
    pub value: Expr,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Expr {
    Name(Name),
    Literal {
        value: Literal,
        span: Span,
    },
    /// `[a, b, c]`
    ListDisplay {
        elements: Vec<Expr>,
        span: Span,
    },
    BinOp {
        left: Box<Expr>,
        op: BinOpKind,
        right: Box<Expr>,
        span: Span,
    },
    /// Non-associative single comparison, e.g. `a < b`.
    Compare {
        left: Box<Expr>,
        op: CmpOpKind,
        right: Box<Expr>,
        span: Span,
    },
    Call {
        func: Box<Expr>,
        args: Vec<Expr>,
        kwargs: Vec<Keyword>,
        span: Span,
    },
    Attribute {
        value: Box<Expr>,
        attr: String,
        span: Span,
    },
}

impl Expr {
    pub fn span(&self) -> Span {
        match self {
            Expr::Name(n) => n.span,
            Expr::Literal { span, .. }
            | Expr::ListDisplay { span, .. }
            | Expr::BinOp { span, .. }
            | Expr::Compare { span, .. }
            | Expr::Call { span, .. }
            | Expr::Attribute { span, .. } => *span,
        }
    }

    /// Dotted path for a name or attribute chain rooted at a name
    /// (`m.run` → "m.run"); None for anything else.
    pub fn dotted_path(&self) -> Option<String> {
        match self {
            Expr::Name(n) => Some(n.id.clone()),
            Expr::Attribute { value, attr, .. } => {
                value.dotted_path().map(|base| format!("{base}.{attr}"))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Param {
    pub name: String,
    pub default: Option<Expr>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionDef {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum Stmt {
    Assign {
        target: Name,
        value: Expr,
        span: Span,
    },
    ExprStatement {
        value: Expr,
        span: Span,
    },
    FunctionDef(FunctionDef),
    Return {
        value: Option<Expr>,
        span: Span,
    },
    Import {
        module: String,
        span: Span,
    },
    If {
        test: Expr,
        body: Vec<Stmt>,
        orelse: Vec<Stmt>,
        span: Span,
    },
    For {
        target: Name,
        iter: Expr,
        body: Vec<Stmt>,
        span: Span,
    },
}

impl Stmt {
    pub fn span(&self) -> Span {
        match self {
            Stmt::Assign { span, .. }
            | Stmt::ExprStatement { span, .. }
            | Stmt::Return { span, .. }
            | Stmt::Import { span, .. }
            | Stmt::If { span, .. }
            | Stmt::For { span, .. } => *span,
            Stmt::FunctionDef(def) => def.span,
        }
    }
}

/// Parsed cell: an ordered list of top-level statements.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CellAst {
    pub statements: Vec<Stmt>,
}
