//! A toy interpreter for the cell language.
//!
//! Its purpose is to cross-check the static usage extraction, so the only
//! failure it tracks is resolving a name that is bound nowhere. Every
//! other questionable operation (calling an integer, attribute access,
//! mixed-type arithmetic, division by zero) absorbs into [`Value::Opaque`]
//! rather than failing. Opaque stands in for any runtime object the
//! analysis cannot see inside: its attributes and call results are Opaque,
//! iterating it yields a single Opaque element, and its truthiness is a
//! knob so both sides of a branch can be exercised.

use std::collections::BTreeMap;

use super::ast::{BinOpKind, CellAst, CmpOpKind, Expr, FunctionDef, Literal, Stmt};

pub type Namespace = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    None,
    List(Vec<Value>),
    Func {
        def: FunctionDef,
        /// Defaults evaluated at definition time, aligned with the params.
        defaults: Vec<Option<Value>>,
        /// Snapshot of the enclosing non-global bindings at definition time.
        captured: Namespace,
    },
    Opaque,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterpOptions {
    /// Truth value an Opaque takes in `if` tests.
    pub opaque_truthy: bool,
    /// Calls nested deeper than this return Opaque instead of executing,
    /// which keeps accidental recursion finite.
    pub max_call_depth: usize,
    /// Total statement/expression budget. Nested loops multiplied by
    /// nested calls can make a short cell astronomically expensive even
    /// under the depth cap; when the budget runs out the run stops early
    /// and counts as completed with the namespace built so far.
    pub max_steps: u64,
}

impl Default for InterpOptions {
    fn default() -> Self {
        InterpOptions {
            opaque_truthy: true,
            max_call_depth: 32,
            max_steps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    /// The cell ran to the end (or hit a top-level `return`).
    Completed(Namespace),
    /// A name was read that no scope binds. This is the one tracked failure.
    UndefinedName { name: String },
}

pub fn run_cell(cell: &CellAst, namespace: Namespace, opts: &InterpOptions) -> RunOutcome {
    let mut interp = Interp {
        globals: namespace,
        opts: *opts,
        depth: 0,
        fuel: opts.max_steps,
    };
    let mut frame = Frame { scope: None };
    match interp.exec_stmts(&cell.statements, &mut frame) {
        Ok(_) => RunOutcome::Completed(interp.globals),
        Err(Stop::Undef(name)) => RunOutcome::UndefinedName { name },
        // Budget exhaustion is a truncated but successful run; every
        // binding made so far is one the unbounded run would also make.
        Err(Stop::Exhausted) => RunOutcome::Completed(interp.globals),
    }
}

enum Stop {
    Undef(String),
    Exhausted,
}

enum Flow {
    Normal,
    Returned(Value),
}

/// Execution frame. `None` scope means statements bind the globals;
/// inside a function, loads fall back locals, then captured, then globals.
struct Frame {
    scope: Option<(Namespace, Namespace)>,
}

struct Interp {
    globals: Namespace,
    opts: InterpOptions,
    depth: usize,
    fuel: u64,
}

impl Interp {
    fn burn(&mut self) -> Result<(), Stop> {
        if self.fuel == 0 {
            return Err(Stop::Exhausted);
        }
        self.fuel -= 1;
        Ok(())
    }

    fn exec_stmts(&mut self, stmts: &[Stmt], frame: &mut Frame) -> Result<Flow, Stop> {
        for stmt in stmts {
            if let Flow::Returned(v) = self.exec_stmt(stmt, frame)? {
                return Ok(Flow::Returned(v));
            }
        }
        Ok(Flow::Normal)
    }

    fn exec_stmt(&mut self, stmt: &Stmt, frame: &mut Frame) -> Result<Flow, Stop> {
        self.burn()?;
        match stmt {
            Stmt::Assign { target, value, .. } => {
                let v = self.eval(value, frame)?;
                self.bind(frame, &target.id, v);
                Ok(Flow::Normal)
            }
            Stmt::ExprStatement { value, .. } => {
                self.eval(value, frame)?;
                Ok(Flow::Normal)
            }
            Stmt::Return { value, .. } => {
                let v = match value {
                    Some(e) => self.eval(e, frame)?,
                    None => Value::None,
                };
                Ok(Flow::Returned(v))
            }
            Stmt::Import { module, .. } => {
                self.bind(frame, module, Value::Opaque);
                Ok(Flow::Normal)
            }
            Stmt::If { test, body, orelse, .. } => {
                let t = self.eval(test, frame)?;
                if self.truthy(&t) {
                    self.exec_stmts(body, frame)
                } else {
                    self.exec_stmts(orelse, frame)
                }
            }
            Stmt::For { target, iter, body, .. } => {
                let it = self.eval(iter, frame)?;
                let elements = match it {
                    Value::List(items) => items,
                    // Anything else is treated as an opaque iterable that
                    // yields exactly one opaque element.
                    _ => vec![Value::Opaque],
                };
                for element in elements {
                    self.bind(frame, &target.id, element);
                    if let Flow::Returned(v) = self.exec_stmts(body, frame)? {
                        return Ok(Flow::Returned(v));
                    }
                }
                Ok(Flow::Normal)
            }
            Stmt::FunctionDef(def) => {
                let mut defaults = Vec::with_capacity(def.params.len());
                for param in &def.params {
                    defaults.push(match &param.default {
                        Some(e) => Some(self.eval(e, frame)?),
                        None => None,
                    });
                }
                let captured = match &frame.scope {
                    Some((locals, outer_captured)) => {
                        let mut snap = outer_captured.clone();
                        snap.extend(locals.clone());
                        snap
                    }
                    None => Namespace::new(),
                };
                let func = Value::Func {
                    def: def.clone(),
                    defaults,
                    captured,
                };
                self.bind(frame, &def.name, func);
                Ok(Flow::Normal)
            }
        }
    }

    fn bind(&mut self, frame: &mut Frame, name: &str, value: Value) {
        match &mut frame.scope {
            Some((locals, _)) => {
                locals.insert(name.to_string(), value);
            }
            None => {
                self.globals.insert(name.to_string(), value);
            }
        }
    }

    fn lookup(&self, frame: &Frame, name: &str) -> Result<Value, Stop> {
        if let Some((locals, captured)) = &frame.scope {
            if let Some(v) = locals.get(name) {
                return Ok(v.clone());
            }
            if let Some(v) = captured.get(name) {
                return Ok(v.clone());
            }
        }
        self.globals
            .get(name)
            .cloned()
            .ok_or_else(|| Stop::Undef(name.to_string()))
    }

    fn truthy(&self, value: &Value) -> bool {
        match value {
            Value::Bool(b) => *b,
            Value::Int(v) => *v != 0,
            Value::Float(v) => *v != 0.0,
            Value::Str(s) => !s.is_empty(),
            Value::None => false,
            Value::List(items) => !items.is_empty(),
            Value::Func { .. } => true,
            Value::Opaque => self.opts.opaque_truthy,
        }
    }

    fn eval(&mut self, expr: &Expr, frame: &mut Frame) -> Result<Value, Stop> {
        self.burn()?;
        match expr {
            Expr::Name(name) => self.lookup(frame, &name.id),
            Expr::Literal { value, .. } => Ok(match value {
                Literal::Int(v) => Value::Int(*v),
                Literal::Float(v) => Value::Float(*v),
                Literal::Str(s) => Value::Str(s.clone()),
                Literal::Bool(b) => Value::Bool(*b),
                Literal::None => Value::None,
            }),
            Expr::ListDisplay { elements, .. } => {
                let mut items = Vec::with_capacity(elements.len());
                for e in elements {
                    items.push(self.eval(e, frame)?);
                }
                Ok(Value::List(items))
            }
            Expr::BinOp { left, op, right, .. } => {
                let l = self.eval(left, frame)?;
                let r = self.eval(right, frame)?;
                Ok(binop(&l, *op, &r))
            }
            Expr::Compare { left, op, right, .. } => {
                let l = self.eval(left, frame)?;
                let r = self.eval(right, frame)?;
                Ok(compare(&l, *op, &r))
            }
            Expr::Attribute { value, .. } => {
                self.eval(value, frame)?;
                Ok(Value::Opaque)
            }
            Expr::Call { func, args, kwargs, .. } => {
                let callee = self.eval(func, frame)?;
                let mut positional = Vec::with_capacity(args.len());
                for a in args {
                    positional.push(self.eval(a, frame)?);
                }
                let mut by_name = BTreeMap::new();
                for kw in kwargs {
                    let v = self.eval(&kw.value, frame)?;
                    by_name.insert(kw.name.clone(), v);
                }
                match callee {
                    Value::Func { def, defaults, captured } => {
                        self.call_function(&def, &defaults, captured, positional, by_name)
                    }
                    // Calling anything else absorbs.
                    _ => Ok(Value::Opaque),
                }
            }
        }
    }

    fn call_function(
        &mut self,
        def: &FunctionDef,
        defaults: &[Option<Value>],
        captured: Namespace,
        positional: Vec<Value>,
        mut by_name: BTreeMap<String, Value>,
    ) -> Result<Value, Stop> {
        if self.depth >= self.opts.max_call_depth {
            return Ok(Value::Opaque);
        }
        let mut locals = Namespace::new();
        let mut positional = positional.into_iter();
        for (i, param) in def.params.iter().enumerate() {
            let value = positional
                .next()
                .or_else(|| by_name.remove(&param.name))
                .or_else(|| defaults.get(i).cloned().flatten())
                // Arity mismatches are not the interpreter's concern.
                .unwrap_or(Value::Opaque);
            locals.insert(param.name.clone(), value);
        }
        let mut frame = Frame {
            scope: Some((locals, captured)),
        };
        self.depth += 1;
        let flow = self.exec_stmts(&def.body, &mut frame);
        self.depth -= 1;
        match flow? {
            Flow::Returned(v) => Ok(v),
            Flow::Normal => Ok(Value::None),
        }
    }
}

fn binop(l: &Value, op: BinOpKind, r: &Value) -> Value {
    use BinOpKind::*;
    use Value::*;
    match (l, op, r) {
        (Int(a), Add, Int(b)) => a.checked_add(*b).map(Int).unwrap_or(Opaque),
        (Int(a), Sub, Int(b)) => a.checked_sub(*b).map(Int).unwrap_or(Opaque),
        (Int(a), Mul, Int(b)) => a.checked_mul(*b).map(Int).unwrap_or(Opaque),
        // Division always produces a float, as in the notebook runtime.
        (Int(a), Div, Int(b)) if *b != 0 => Float(*a as f64 / *b as f64),
        (Int(a), Mod, Int(b)) if *b != 0 => a.checked_rem(*b).map(Int).unwrap_or(Opaque),
        (Float(a), Add, Float(b)) => Float(a + b),
        (Float(a), Sub, Float(b)) => Float(a - b),
        (Float(a), Mul, Float(b)) => Float(a * b),
        (Float(a), Div, Float(b)) if *b != 0.0 => Float(a / b),
        (Float(a), Mod, Float(b)) if *b != 0.0 => Float(a % b),
        (Int(a), _, Float(_)) => binop(&Float(*a as f64), op, r),
        (Float(_), _, Int(b)) => binop(l, op, &Float(*b as f64)),
        (Str(a), Add, Str(b)) => Str(format!("{a}{b}")),
        (List(a), Add, List(b)) => {
            let mut out = a.clone();
            out.extend(b.iter().cloned());
            List(out)
        }
        _ => Opaque,
    }
}

fn compare(l: &Value, op: CmpOpKind, r: &Value) -> Value {
    use Value::*;
    let ordering = match (l, r) {
        (Int(a), Int(b)) => a.partial_cmp(b),
        (Float(a), Float(b)) => a.partial_cmp(b),
        (Int(a), Float(b)) => (*a as f64).partial_cmp(b),
        (Float(a), Int(b)) => a.partial_cmp(&(*b as f64)),
        (Str(a), Str(b)) => a.partial_cmp(b),
        (Bool(a), Bool(b)) => a.partial_cmp(b),
        (None, None) => Some(std::cmp::Ordering::Equal),
        _ => return Opaque,
    };
    let Some(ordering) = ordering else {
        return Opaque; // NaN comparisons absorb
    };
    use CmpOpKind::*;
    Bool(match op {
        Eq => ordering.is_eq(),
        Ne => !ordering.is_eq(),
        Lt => ordering.is_lt(),
        Gt => ordering.is_gt(),
        Le => ordering.is_le(),
        Ge => ordering.is_ge(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::parse_cell;
    use super::*;

    fn run(src: &str, ns: Namespace) -> RunOutcome {
        run_cell(&parse_cell(src).unwrap(), ns, &InterpOptions::default())
    }

    /// Nested loops times nested calls grow as 8^depth; the step budget
    /// must cut this off instead of running for hours.
    #[test]
    fn step_budget_bounds_exponential_programs() {
        let mut src = String::from("def f0():\n    return 1\n");
        for level in 1..=8 {
            src.push_str(&format!(
                "def f{level}():\n    for i in [1, 2, 3, 4, 5, 6, 7, 8]:\n        x = f{}()\n    return 1\n",
                level - 1
            ));
        }
        src.push_str("y = f8()\n");
        let started = std::time::Instant::now();
        let outcome = run(&src, Namespace::new());
        assert!(matches!(outcome, RunOutcome::Completed(_)));
        assert!(
            started.elapsed() < std::time::Duration::from_secs(5),
            "budget failed to bound execution"
        );
    }

    fn completed(src: &str, ns: Namespace) -> Namespace {
        match run(src, ns) {
            RunOutcome::Completed(ns) => ns,
            other => panic!("expected completion, got {other:?}"),
        }
    }

    fn ns(pairs: &[(&str, Value)]) -> Namespace {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    #[test]
    fn straight_line_arithmetic() {
        let out = completed("x = 2\ny = x * 3 + 1\nz = 7 / 2\n", Namespace::new());
        assert_eq!(out["y"], Value::Int(7));
        assert_eq!(out["z"], Value::Float(3.5));
    }

    #[test]
    fn undefined_name_is_the_tracked_failure() {
        assert_eq!(
            run("y = x + 1\n", Namespace::new()),
            RunOutcome::UndefinedName { name: "x".to_string() }
        );
    }

    #[test]
    fn opaque_absorbs_attribute_call_and_arithmetic() {
        let out = completed("r = d.mean() + 5\n", ns(&[("d", Value::Opaque)]));
        assert_eq!(out["r"], Value::Opaque);
    }

    #[test]
    fn opaque_iteration_yields_one_element() {
        let out = completed(
            "n = 0\nfor v in data:\n    n = n + 1\n",
            ns(&[("data", Value::Opaque)]),
        );
        assert_eq!(out["n"], Value::Int(1));
    }

    #[test]
    fn list_iteration_and_concat() {
        let out = completed(
            "total = 0\nfor i in [1, 2] + [3]:\n    total = total + i\n",
            Namespace::new(),
        );
        assert_eq!(out["total"], Value::Int(6));
    }

    #[test]
    fn opaque_truthiness_is_a_knob() {
        let cell = parse_cell("if flag:\n    y = 1\nelse:\n    y = 2\n").unwrap();
        let seed = ns(&[("flag", Value::Opaque)]);
        let truthy = InterpOptions { opaque_truthy: true, ..Default::default() };
        let falsy = InterpOptions { opaque_truthy: false, ..Default::default() };
        let RunOutcome::Completed(a) = run_cell(&cell, seed.clone(), &truthy) else {
            panic!()
        };
        let RunOutcome::Completed(b) = run_cell(&cell, seed, &falsy) else {
            panic!()
        };
        assert_eq!(a["y"], Value::Int(1));
        assert_eq!(b["y"], Value::Int(2));
    }

    #[test]
    fn function_defaults_and_keyword_arguments() {
        let out = completed(
            "def f(a, b=10):\n    return a + b\nr = f(1)\ns = f(1, b=2)\n",
            Namespace::new(),
        );
        assert_eq!(out["r"], Value::Int(11));
        assert_eq!(out["s"], Value::Int(3));
    }

    #[test]
    fn inner_functions_capture_a_snapshot() {
        let out = completed(
            "def outer(a):\n    def inner():\n        return a + 1\n    return inner()\nr = outer(4)\n",
            Namespace::new(),
        );
        assert_eq!(out["r"], Value::Int(5));
    }

    #[test]
    fn function_body_falls_off_the_end_to_none() {
        let out = completed("def f():\n    x = 1\nr = f()\n", Namespace::new());
        assert_eq!(out["r"], Value::None);
    }

    #[test]
    fn top_level_return_stops_the_cell() {
        let out = completed("x = 1\nreturn x\ny = 2\n", Namespace::new());
        assert!(out.contains_key("x"));
        assert!(!out.contains_key("y"));
    }

    #[test]
    fn runaway_recursion_is_capped_to_opaque() {
        let out = completed("def f():\n    return f()\nr = f()\n", Namespace::new());
        assert_eq!(out["r"], Value::Opaque);
    }

    #[test]
    fn calling_a_non_callable_absorbs() {
        let out = completed("r = 5(1)\ns = 'ab' + 3\n", Namespace::new());
        assert_eq!(out["r"], Value::Opaque);
        assert_eq!(out["s"], Value::Opaque);
    }

    #[test]
    fn string_comparison_and_concat() {
        let out = completed(
            "a = 'x' + 'y'\nb = a == 'xy'\nc = 1 < 2\n",
            Namespace::new(),
        );
        assert_eq!(out["a"], Value::Str("xy".to_string()));
        assert_eq!(out["b"], Value::Bool(true));
        assert_eq!(out["c"], Value::Bool(true));
    }
}
