//! Static extraction of the names a cell reads, writes, imports, and calls.
//!
//! The walk is a single straight-line pass with shadowing: a load counts
//! only if nothing earlier in the cell bound that name. Bindings made
//! inside `if`/`else` or `for` bodies are visible within the body but
//! discarded afterwards, because the body may not run; that direction of
//! error over-reports external reads, which is the safe direction for
//! deciding what state a migration must carry.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::ast::{CellAst, Expr, FunctionDef, Literal, Stmt};

/// Keyword-argument value as far as it can be read off the AST.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum KwValue {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    None,
    /// A bare or dotted name; the value is only known at run time.
    Symbol(String),
}

/// Names a cell touches, split by how the cell uses them.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NameUsage {
    /// Names read from the surrounding namespace (not bound earlier in the
    /// cell). Includes free names of functions defined in the cell.
    pub loads: BTreeSet<String>,
    /// Names the cell binds in the surrounding namespace, including inside
    /// branch and loop bodies. Function-local assignments are excluded.
    pub stores: BTreeSet<String>,
    /// Dotted call targets evaluated at the top level of the cell,
    /// e.g. `f` or `model.fit`.
    pub called: BTreeSet<String>,
    /// Keyword arguments per called target; the latest call in the cell
    /// wins per keyword. Values that are neither literals nor names are
    /// omitted.
    pub kwargs: BTreeMap<String, BTreeMap<String, KwValue>>,
    /// Modules imported anywhere in the cell, including inside function
    /// bodies (the import runs when the function does).
    pub imports: BTreeSet<String>,
    /// Functions defined at the top level of the cell, by name.
    pub defined_functions: BTreeMap<String, FunctionDef>,
}

pub fn extract_usage(cell: &CellAst) -> NameUsage {
    let mut collector = Collector {
        usage: NameUsage::default(),
    };
    let mut bound = BTreeSet::new();
    collector.visit_stmts(&cell.statements, &mut bound, false);
    collector.usage
}

struct Collector {
    usage: NameUsage,
}

impl Collector {
    fn load(&mut self, name: &str, bound: &BTreeSet<String>) {
        if !bound.contains(name) {
            self.usage.loads.insert(name.to_string());
        }
    }

    fn visit_stmts(&mut self, stmts: &[Stmt], bound: &mut BTreeSet<String>, in_function: bool) {
        for stmt in stmts {
            self.visit_stmt(stmt, bound, in_function);
        }
    }

    fn visit_stmt(&mut self, stmt: &Stmt, bound: &mut BTreeSet<String>, in_function: bool) {
        match stmt {
            Stmt::Assign { target, value, .. } => {
                self.visit_expr(value, bound, in_function);
                if !in_function {
                    self.usage.stores.insert(target.id.clone());
                }
                bound.insert(target.id.clone());
            }
            Stmt::ExprStatement { value, .. } => self.visit_expr(value, bound, in_function),
            Stmt::Return { value, .. } => {
                if let Some(v) = value {
                    self.visit_expr(v, bound, in_function);
                }
            }
            Stmt::Import { module, .. } => {
                self.usage.imports.insert(module.clone());
                bound.insert(module.clone());
            }
            Stmt::If { test, body, orelse, .. } => {
                self.visit_expr(test, bound, in_function);
                // Each branch sees the bindings made before the `if`; its
                // own bindings do not survive the construct.
                let mut branch = bound.clone();
                self.visit_stmts(body, &mut branch, in_function);
                let mut branch = bound.clone();
                self.visit_stmts(orelse, &mut branch, in_function);
            }
            Stmt::For { target, iter, body, .. } => {
                self.visit_expr(iter, bound, in_function);
                if !in_function {
                    self.usage.stores.insert(target.id.clone());
                }
                let mut loop_bound = bound.clone();
                loop_bound.insert(target.id.clone());
                self.visit_stmts(body, &mut loop_bound, in_function);
            }
            Stmt::FunctionDef(def) => {
                // Defaults evaluate at definition time in the enclosing
                // scope; the body's free names are reads of that scope too.
                let mut inner = bound.clone();
                for param in &def.params {
                    if let Some(default) = &param.default {
                        self.visit_expr(default, bound, in_function);
                    }
                    inner.insert(param.name.clone());
                }
                self.visit_stmts(&def.body, &mut inner, true);
                if !in_function {
                    self.usage
                        .defined_functions
                        .insert(def.name.clone(), def.clone());
                }
                bound.insert(def.name.clone());
            }
        }
    }

    fn visit_expr(&mut self, expr: &Expr, bound: &BTreeSet<String>, in_function: bool) {
        match expr {
            Expr::Name(name) => self.load(&name.id, bound),
            Expr::Literal { .. } => {}
            Expr::ListDisplay { elements, .. } => {
                for e in elements {
                    self.visit_expr(e, bound, in_function);
                }
            }
            Expr::BinOp { left, right, .. } | Expr::Compare { left, right, .. } => {
                self.visit_expr(left, bound, in_function);
                self.visit_expr(right, bound, in_function);
            }
            Expr::Attribute { value, .. } => self.visit_expr(value, bound, in_function),
            Expr::Call { func, args, kwargs, .. } => {
                if !in_function {
                    if let Some(path) = func.dotted_path() {
                        self.usage.called.insert(path.clone());
                        if !kwargs.is_empty() {
                            let entry = self.usage.kwargs.entry(path).or_default();
                            for kw in kwargs {
                                if let Some(v) = kw_value(&kw.value) {
                                    entry.insert(kw.name.clone(), v);
                                }
                            }
                        }
                    }
                }
                self.visit_expr(func, bound, in_function);
                for arg in args {
                    self.visit_expr(arg, bound, in_function);
                }
                for kw in kwargs {
                    self.visit_expr(&kw.value, bound, in_function);
                }
            }
        }
    }
}

fn kw_value(expr: &Expr) -> Option<KwValue> {
    match expr {
        Expr::Literal { value, .. } => Some(match value {
            Literal::Int(v) => KwValue::Int(*v),
            Literal::Float(v) => KwValue::Float(*v),
            Literal::Str(s) => KwValue::Str(s.clone()),
            Literal::Bool(b) => KwValue::Bool(*b),
            Literal::None => KwValue::None,
        }),
        _ => expr.dotted_path().map(KwValue::Symbol),
    }
}
