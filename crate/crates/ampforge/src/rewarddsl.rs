//! Reward expression language: a tiny arithmetic DSL over the scoring
//! signals `sa`, `sb`, `sc`, used to combine them into a single scalar
//! fitness in `[0, 1]`.
//!
//! The pipeline is parse → validate → evaluate. Validation proves, by
//! interval arithmetic over the declared signal ranges (each signal lies
//! in `[0, 1]`), that an expression can never divide by zero, never takes
//! `log1p` below its domain, stays finite, and always produces a value in
//! `[0, 1]`. Only a [`ValidatedExpr`] can be evaluated, so reward
//! computation is total: no panics, no NaNs, no out-of-range fitness.

mod interval;
mod parser;

use interval::{stable_sigmoid, Interval};
pub use parser::parse;

/// A scoring signal the reward expression may reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Signal {
    /// Predicted activity score.
    Sa,
    /// Peptide-likeness score.
    Sb,
    /// Review meta score.
    Sc,
}

impl Signal {
    pub fn name(&self) -> &'static str {
        match self {
            Signal::Sa => "sa",
            Signal::Sb => "sb",
            Signal::Sc => "sc",
        }
    }
}

impl std::fmt::Display for Signal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Binary arithmetic operators, all left-associative; `*` and `/` bind
/// tighter than `+` and `-`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Reward expression AST.
///
/// `WeightedSum` is surface sugar: a top-level chain `w1*s1 + w2*s2 + ...`
/// (every addend a number times a signal, at least two addends) parses to
/// this dedicated node. It evaluates and validates exactly like the
/// equivalent left-associative `Binary` chain.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Signal(Signal),
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Clip {
        x: Box<Expr>,
        lo: Box<Expr>,
        hi: Box<Expr>,
    },
    Exp(Box<Expr>),
    Log1p(Box<Expr>),
    Sigmoid(Box<Expr>),
    Pow {
        base: Box<Expr>,
        exp: u32,
    },
    WeightedSum(Vec<(f64, Signal)>),
}

// The derived drop would recurse once per tree level, so a degenerate
// hand-built chain (the parser caps its own depth) could exhaust the
// stack before validation ever sees it. Drain children onto an explicit
// worklist instead; each node then drops shallowly.
impl Drop for Expr {
    fn drop(&mut self) {
        fn take_children(e: &mut Expr, out: &mut Vec<Expr>) {
            let mut grab =
                |b: &mut Box<Expr>| out.push(std::mem::replace(&mut **b, Expr::Num(0.0)));
            match e {
                Expr::Num(_) | Expr::Signal(_) | Expr::WeightedSum(_) => {}
                Expr::Binary { lhs, rhs, .. } => {
                    grab(lhs);
                    grab(rhs);
                }
                Expr::Min(a, b) | Expr::Max(a, b) => {
                    grab(a);
                    grab(b);
                }
                Expr::Clip { x, lo, hi } => {
                    grab(x);
                    grab(lo);
                    grab(hi);
                }
                Expr::Exp(x) | Expr::Log1p(x) | Expr::Sigmoid(x) => grab(x),
                Expr::Pow { base, .. } => grab(base),
            }
        }
        let mut stack = Vec::new();
        take_children(self, &mut stack);
        while let Some(mut e) = stack.pop() {
            take_children(&mut e, &mut stack);
        }
    }
}

/// Errors produced while turning source text into an AST. Positions are
/// byte offsets into the input.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at byte {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("`{name}` expects {expected} argument(s), got {got} (at byte {pos})")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
        pos: usize,
    },
}

/// Maximum expression depth (root-to-leaf node count) the validator
/// accepts. Weighted sums count as their expanded binary-chain shape.
pub const MAX_DEPTH: usize = 12;
/// Maximum total node count the validator accepts, counted the same way.
pub const MAX_NODES: usize = 128;

/// Which signals an expression is allowed to reference. Ablated runs
/// shrink this set; everything else about validation stays the same.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalSet {
    pub sa: bool,
    pub sb: bool,
    pub sc: bool,
}

impl SignalSet {
    pub const ALL: SignalSet = SignalSet {
        sa: true,
        sb: true,
        sc: true,
    };

    pub fn allows(&self, s: Signal) -> bool {
        match s {
            Signal::Sa => self.sa,
            Signal::Sb => self.sb,
            Signal::Sc => self.sc,
        }
    }
}

impl Default for SignalSet {
    fn default() -> Self {
        SignalSet::ALL
    }
}

/// The validation rule a [`Violation`] was raised under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// References a signal outside the allowed set.
    UnavailableSignal,
    /// Exceeds the depth or node-count limit.
    SizeLimit,
    /// Some divisor's proven range contains zero.
    DivisionByZero,
    /// Some `log1p` argument's proven range reaches below zero.
    Log1pDomain,
    /// The proven output range is not contained in `[0, 1]`, or some
    /// intermediate value range is not finite.
    OutputRange,
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Rule::UnavailableSignal => "unavailable-signal",
            Rule::SizeLimit => "size-limit",
            Rule::DivisionByZero => "division-by-zero",
            Rule::Log1pDomain => "log1p-domain",
            Rule::OutputRange => "output-range",
        })
    }
}

/// One reason an expression was rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub rule: Rule,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.rule, self.detail)
    }
}

/// Outcome of validating an expression.
///
/// `range` is the proven output enclosure over the declared input box
/// (every allowed signal in `[0, 1]`). It is `None` when a domain problem
/// (division by zero, `log1p` domain, non-finite arithmetic) made the
/// enclosure meaningless, and `Some` otherwise — including for
/// expressions rejected only for range containment or signal access, so
/// the report can state *how far* outside `[0, 1]` an expression reaches.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub range: Option<(f64, f64)>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.ok() {
            write!(f, "valid")?;
            if let Some((lo, hi)) = self.range {
                write!(f, " (range [{lo}, {hi}])")?;
            }
            Ok(())
        } else {
            let items: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
            f.write_str(&items.join("; "))
        }
    }
}

/// Collapses a top-level `Num*Signal` addition chain (two or more
/// addends) into [`Expr::WeightedSum`]. [`parse`] applies this
/// automatically; call it on hand-built ASTs before comparing against
/// parsed ones.
pub fn normalize(expr: Expr) -> Expr {
    fn collect<'e>(e: &'e Expr, terms: &mut Vec<&'e Expr>) {
        match e {
            Expr::Binary {
                op: BinOp::Add,
                lhs,
                rhs,
            } => {
                collect(lhs, terms);
                collect(rhs, terms);
            }
            other => terms.push(other),
        }
    }
    let mut raw = Vec::new();
    collect(&expr, &mut raw);
    if raw.len() < 2 {
        return expr;
    }
    let mut weighted = Vec::with_capacity(raw.len());
    for t in &raw {
        match t {
            Expr::Binary {
                op: BinOp::Mul,
                lhs,
                rhs,
            } => match (lhs.as_ref(), rhs.as_ref()) {
                (Expr::Num(w), Expr::Signal(s)) => weighted.push((*w, *s)),
                _ => return expr,
            },
            _ => return expr,
        }
    }
    Expr::WeightedSum(weighted)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary {
            op: BinOp::Add | BinOp::Sub,
            ..
        }
        | Expr::WeightedSum(_) => 1,
        Expr::Binary {
            op: BinOp::Mul | BinOp::Div,
            ..
        } => 2,
        _ => 3,
    }
}

fn write_expr(e: &Expr, out: &mut String) {
    use std::fmt::Write;
    match e {
        Expr::Num(v) => {
            let _ = write!(out, "{v}");
        }
        Expr::Signal(s) => out.push_str(s.name()),
        Expr::Binary { op, lhs, rhs } => {
            let prec = precedence(e);
            write_child(lhs, prec, false, out);
            out.push_str(match op {
                BinOp::Add => " + ",
                BinOp::Sub => " - ",
                BinOp::Mul => "*",
                BinOp::Div => "/",
            });
            write_child(rhs, prec, true, out);
        }
        Expr::Min(a, b) => write_call("min", &[a, b], out),
        Expr::Max(a, b) => write_call("max", &[a, b], out),
        Expr::Clip { x, lo, hi } => write_call("clip", &[x, lo, hi], out),
        Expr::Exp(x) => write_call("exp", &[x], out),
        Expr::Log1p(x) => write_call("log1p", &[x], out),
        Expr::Sigmoid(x) => write_call("sigmoid", &[x], out),
        Expr::Pow { base, exp } => {
            let _ = write!(out, "pow(");
            write_expr(base, out);
            let _ = write!(out, ", {exp})");
        }
        Expr::WeightedSum(terms) => {
            debug_assert!(!terms.is_empty(), "serializing an empty weighted sum");
            if terms.is_empty() {
                out.push('0');
                return;
            }
            for (i, (w, s)) in terms.iter().enumerate() {
                if i > 0 {
                    out.push_str(" + ");
                }
                let _ = write!(out, "{w}*{}", s.name());
            }
        }
    }
}

fn write_child(child: &Expr, parent_prec: u8, is_right: bool, out: &mut String) {
    let cp = precedence(child);
    // Parenthesize when the child binds looser, or equally tight on the
    // right of a left-associative operator — this is the minimal set that
    // re-parses to the identical tree.
    let parens = cp < parent_prec || (is_right && cp == parent_prec);
    if parens {
        out.push('(');
    }
    write_expr(child, out);
    if parens {
        out.push(')');
    }
}

fn write_call(name: &str, args: &[&Expr], out: &mut String) {
    out.push_str(name);
    out.push('(');
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_expr(a, out);
    }
    out.push(')');
}

/// Renders an AST back to source text. `parse(&serialize(e))`
/// reconstructs `e` exactly for any parser-produced or
/// [`normalize`]-normalized tree: `*` and `/` print tight, `+` and `-`
/// spaced, and parentheses appear only where the grammar requires them.
pub fn serialize(expr: &Expr) -> String {
    let mut out = String::new();
    write_expr(expr, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Iterative size measurement (no recursion, so arbitrarily deep
/// hand-built trees cannot overflow the stack). Weighted sums count as
/// their expanded chain: `k` addends contribute `4k - 1` nodes and reach
/// depth `k + 1`.
fn measure(expr: &Expr) -> (usize, usize) {
    let mut nodes = 0usize;
    let mut max_depth = 0usize;
    let mut stack: Vec<(&Expr, usize)> = vec![(expr, 1)];
    while let Some((e, d)) = stack.pop() {
        match e {
            Expr::Num(_) | Expr::Signal(_) => {
                nodes += 1;
                max_depth = max_depth.max(d);
            }
            Expr::Binary { lhs, rhs, .. } => {
                nodes += 1;
                stack.push((lhs, d + 1));
                stack.push((rhs, d + 1));
            }
            Expr::Min(a, b) | Expr::Max(a, b) => {
                nodes += 1;
                stack.push((a, d + 1));
                stack.push((b, d + 1));
            }
            Expr::Clip { x, lo, hi } => {
                nodes += 1;
                stack.push((x, d + 1));
                stack.push((lo, d + 1));
                stack.push((hi, d + 1));
            }
            Expr::Exp(x) | Expr::Log1p(x) | Expr::Sigmoid(x) => {
                nodes += 1;
                stack.push((x, d + 1));
            }
            Expr::Pow { base, .. } => {
                nodes += 1;
                stack.push((base, d + 1));
            }
            Expr::WeightedSum(terms) => {
                let k = terms.len();
                if k == 0 {
                    nodes += 1;
                    max_depth = max_depth.max(d);
                } else {
                    nodes += 4 * k - 1;
                    max_depth = max_depth.max(d + k);
                }
            }
        }
    }
    (nodes, max_depth)
}

struct Walker {
    allowed: SignalSet,
    violations: Vec<Violation>,
    /// Set once a domain problem makes the running enclosure meaningless.
    range_unsound: bool,
    nonfinite_reported: bool,
}

impl Walker {
    fn signal_interval(&mut self, s: Signal) -> Interval {
        if !self.allowed.allows(s) {
            self.violations.push(Violation {
                rule: Rule::UnavailableSignal,
                detail: format!("signal `{s}` is not available in this context"),
            });
        }
        Interval::new(0.0, 1.0)
    }

    /// Replaces a non-finite enclosure with a finite stand-in so the walk
    /// can continue reporting other problems.
    fn check_finite(&mut self, i: Interval) -> Interval {
        if i.is_finite() {
            return i;
        }
        if !self.nonfinite_reported {
            self.nonfinite_reported = true;
            self.range_unsound = true;
            self.violations.push(Violation {
                rule: Rule::OutputRange,
                detail: "arithmetic can overflow to a non-finite value".into(),
            });
        }
        if i.lo.is_nan() || i.hi.is_nan() {
            Interval::point(0.0)
        } else {
            Interval::new(
                i.lo.clamp(-f64::MAX, f64::MAX),
                i.hi.clamp(-f64::MAX, f64::MAX),
            )
        }
    }

    fn walk(&mut self, e: &Expr) -> Interval {
        let raw = match e {
            Expr::Num(v) => {
                if v.is_finite() {
                    Interval::point(*v)
                } else {
                    self.range_unsound = true;
                    self.violations.push(Violation {
                        rule: Rule::OutputRange,
                        detail: format!("non-finite literal {v}"),
                    });
                    Interval::point(0.0)
                }
            }
            Expr::Signal(s) => self.signal_interval(*s),
            Expr::Binary { op, lhs, rhs } => {
                let a = self.walk(lhs);
                let b = self.walk(rhs);
                match op {
                    BinOp::Add => a.add(b),
                    BinOp::Sub => a.sub(b),
                    BinOp::Mul => a.mul(b),
                    BinOp::Div => {
                        if b.contains_zero() {
                            self.range_unsound = true;
                            self.violations.push(Violation {
                                rule: Rule::DivisionByZero,
                                detail: format!(
                                    "divisor can take values in [{}, {}], which includes zero",
                                    b.lo, b.hi
                                ),
                            });
                            Interval::point(0.0)
                        } else {
                            a.div(b)
                        }
                    }
                }
            }
            Expr::Min(a, b) => {
                let (a, b) = (self.walk(a), self.walk(b));
                a.min(b)
            }
            Expr::Max(a, b) => {
                let (a, b) = (self.walk(a), self.walk(b));
                a.max(b)
            }
            Expr::Clip { x, lo, hi } => {
                let x = self.walk(x);
                let lo = self.walk(lo);
                let hi = self.walk(hi);
                x.max(lo).min(hi)
            }
            Expr::Exp(x) => {
                let x = self.walk(x);
                x.exp()
            }
            Expr::Log1p(x) => {
                let x = self.walk(x);
                if x.lo < 0.0 {
                    self.range_unsound = true;
                    self.violations.push(Violation {
                        rule: Rule::Log1pDomain,
                        detail: format!(
                            "log1p argument can take values in [{}, {}], below zero",
                            x.lo, x.hi
                        ),
                    });
                    if x.hi >= 0.0 {
                        Interval::new(0.0, x.hi).log1p()
                    } else {
                        Interval::point(0.0)
                    }
                } else {
                    x.log1p()
                }
            }
            Expr::Sigmoid(x) => {
                let x = self.walk(x);
                x.sigmoid()
            }
            Expr::Pow { base, exp } => {
                let b = self.walk(base);
                b.powi(*exp)
            }
            Expr::WeightedSum(terms) => terms
                .iter()
                .map(|&(w, s)| {
                    let w = if w.is_finite() {
                        Interval::point(w)
                    } else {
                        self.range_unsound = true;
                        self.violations.push(Violation {
                            rule: Rule::OutputRange,
                            detail: format!("non-finite weight {w}"),
                        });
                        Interval::point(0.0)
                    };
                    let s = self.signal_interval(s);
                    w.mul(s)
                })
                .reduce(Interval::add)
                .unwrap_or(Interval::point(0.0)),
        };
        self.check_finite(raw)
    }
}

/// Validates `expr` with every signal available.
pub fn validate(expr: &Expr) -> ValidationReport {
    validate_with(expr, SignalSet::ALL)
}

/// Validates `expr` against the rule set, with signal references
/// restricted to `allowed`. Never panics, whatever the tree shape.
pub fn validate_with(expr: &Expr, allowed: SignalSet) -> ValidationReport {
    let (nodes, depth) = measure(expr);
    let mut violations = Vec::new();
    if depth > MAX_DEPTH {
        violations.push(Violation {
            rule: Rule::SizeLimit,
            detail: format!("depth {depth} exceeds the limit of {MAX_DEPTH}"),
        });
    }
    if nodes > MAX_NODES {
        violations.push(Violation {
            rule: Rule::SizeLimit,
            detail: format!("{nodes} nodes exceed the limit of {MAX_NODES}"),
        });
    }
    if !violations.is_empty() {
        // Oversized trees skip the semantic walk: its recursion depth is
        // only bounded for trees that pass the size check.
        return ValidationReport {
            violations,
            range: None,
        };
    }

    let mut walker = Walker {
        allowed,
        violations,
        range_unsound: false,
        nonfinite_reported: false,
    };
    let range = walker.walk(expr);
    let mut violations = walker.violations;
    let range = if walker.range_unsound {
        None
    } else {
        if range.lo < 0.0 || range.hi > 1.0 {
            violations.push(Violation {
                rule: Rule::OutputRange,
                detail: format!(
                    "proven value range [{}, {}] is not contained in [0, 1]",
                    range.lo, range.hi
                ),
            });
        }
        Some((range.lo, range.hi))
    };
    ValidationReport { violations, range }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Signal values for one evaluation. `sb` is optional because ablated
/// runs never produce it; validation against the matching [`SignalSet`]
/// guarantees the expression will not ask for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalContext {
    pub sa: f64,
    pub sb: Option<f64>,
    pub sc: f64,
}

impl EvalContext {
    pub fn new(sa: f64, sb: Option<f64>, sc: f64) -> Self {
        EvalContext { sa, sb, sc }
    }

    fn get(&self, s: Signal) -> f64 {
        match s {
            Signal::Sa => self.sa,
            Signal::Sb => self
                .sb
                .expect("expression references `sb` but the context has none"),
            Signal::Sc => self.sc,
        }
    }
}

fn eval(e: &Expr, ctx: &EvalContext) -> f64 {
    match e {
        Expr::Num(v) => *v,
        Expr::Signal(s) => ctx.get(*s),
        Expr::Binary { op, lhs, rhs } => {
            let a = eval(lhs, ctx);
            let b = eval(rhs, ctx);
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => a / b,
            }
        }
        Expr::Min(a, b) => eval(a, ctx).min(eval(b, ctx)),
        Expr::Max(a, b) => eval(a, ctx).max(eval(b, ctx)),
        Expr::Clip { x, lo, hi } => eval(x, ctx).max(eval(lo, ctx)).min(eval(hi, ctx)),
        Expr::Exp(x) => eval(x, ctx).exp(),
        Expr::Log1p(x) => eval(x, ctx).ln_1p(),
        Expr::Sigmoid(x) => stable_sigmoid(eval(x, ctx)),
        Expr::Pow { base, exp } => eval(base, ctx).powi(*exp as i32),
        Expr::WeightedSum(terms) => terms
            .iter()
            .map(|&(w, s)| w * ctx.get(s))
            .reduce(|a, b| a + b)
            .unwrap_or(0.0),
    }
}

/// An expression that passed validation, ready for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedExpr {
    expr: Expr,
    range: (f64, f64),
    signals: SignalSet,
}

impl ValidatedExpr {
    /// Validates with every signal available.
    pub fn new(expr: Expr) -> Result<Self, ValidationReport> {
        Self::with_signals(expr, SignalSet::ALL)
    }

    /// Validates against a restricted signal set.
    pub fn with_signals(expr: Expr, allowed: SignalSet) -> Result<Self, ValidationReport> {
        let report = validate_with(&expr, allowed);
        match (report.ok(), report.range) {
            (true, Some(range)) => Ok(ValidatedExpr {
                expr,
                range,
                signals: allowed,
            }),
            _ => Err(report),
        }
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    /// The proven output enclosure, always within `[0, 1]`.
    pub fn proven_range(&self) -> (f64, f64) {
        self.range
    }

    pub fn source(&self) -> String {
        serialize(&self.expr)
    }

    /// Evaluates the expression. Inputs must lie in `[0, 1]` (and `sb`
    /// must be present whenever it was in the validated signal set) —
    /// the range guarantee covers exactly that input box.
    pub fn evaluate(&self, ctx: &EvalContext) -> f64 {
        debug_assert!((0.0..=1.0).contains(&ctx.sa), "sa out of range: {}", ctx.sa);
        debug_assert!((0.0..=1.0).contains(&ctx.sc), "sc out of range: {}", ctx.sc);
        if let Some(sb) = ctx.sb {
            debug_assert!((0.0..=1.0).contains(&sb), "sb out of range: {sb}");
        }
        eval(&self.expr, ctx)
    }
}

/// Everything that can go wrong between source text and a usable reward
/// function.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompileError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("expression rejected: {0}")]
    Invalid(ValidationReport),
}

/// Parses and validates in one step.
pub fn compile(src: &str, allowed: SignalSet) -> Result<ValidatedExpr, CompileError> {
    let expr = parse(src)?;
    ValidatedExpr::with_signals(expr, allowed).map_err(CompileError::Invalid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig(s: Signal) -> Box<Expr> {
        Box::new(Expr::Signal(s))
    }

    fn ctx(sa: f64, sb: f64, sc: f64) -> EvalContext {
        EvalContext::new(sa, Some(sb), sc)
    }

    #[test]
    fn canonical_blend_parses_validates_and_evaluates() {
        let v = compile("0.5*sa + 0.3*sb + 0.2*sc", SignalSet::ALL).unwrap();
        assert_eq!(
            v.expr(),
            &Expr::WeightedSum(vec![
                (0.5, Signal::Sa),
                (0.3, Signal::Sb),
                (0.2, Signal::Sc)
            ])
        );
        let got = v.evaluate(&ctx(0.943, 0.797, 0.5));
        assert!((got - 0.8106).abs() < 1e-9, "got {got}");
        let (lo, hi) = v.proven_range();
        assert_eq!(lo, 0.0);
        assert!((hi - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_sum_matches_desugared_chain_bitwise() {
        let sugar = parse("0.5*sa + 0.3*sb + 0.2*sc").unwrap();
        assert!(matches!(sugar, Expr::WeightedSum(_)));
        let term = |w: f64, s: Signal| {
            Box::new(Expr::Binary {
                op: BinOp::Mul,
                lhs: Box::new(Expr::Num(w)),
                rhs: sig(s),
            })
        };
        let chain = Expr::Binary {
            op: BinOp::Add,
            lhs: Box::new(Expr::Binary {
                op: BinOp::Add,
                lhs: term(0.5, Signal::Sa),
                rhs: term(0.3, Signal::Sb),
            }),
            rhs: term(0.2, Signal::Sc),
        };
        let c = ctx(0.12345, 0.6789, 0.55);
        assert_eq!(eval(&sugar, &c), eval(&chain, &c));
        assert_eq!(validate(&sugar).range, validate(&chain).range);
        let (n_sugar, d_sugar) = measure(&sugar);
        let (n_chain, d_chain) = measure(&chain);
        assert_eq!((n_sugar, d_sugar), (n_chain, d_chain));
        assert_eq!((n_sugar, d_sugar), (11, 4));
    }

    #[test]
    fn serializer_prints_canonical_text() {
        for (src, want) in [
            ("0.5*sa + 0.3*sb + 0.2*sc", "0.5*sa + 0.3*sb + 0.2*sc"),
            ("sa*(sb + sc)", "sa*(sb + sc)"),
            ("(sa + sb)*sc", "(sa + sb)*sc"),
            ("sa - (sb - sc)", "sa - (sb - sc)"),
            ("(sa - sb) - sc", "sa - sb - sc"),
            ("sa/(sb*sc)", "sa/(sb*sc)"),
            ("(sa/sb)*sc", "sa/sb*sc"),
            ("clip(sa - sb, 0, 1)", "clip(sa - sb, 0, 1)"),
            ("min(sa, max(sb, sc))", "min(sa, max(sb, sc))"),
            ("pow(sa, 2)", "pow(sa, 2)"),
            ("  sigmoid( sa )  ", "sigmoid(sa)"),
        ] {
            assert_eq!(serialize(&parse(src).unwrap()), want, "source: {src}");
        }
    }

    #[test]
    fn sum_without_containment_is_rejected_with_its_range() {
        let report = validate(&parse("sa + sb").unwrap());
        assert!(!report.ok());
        assert!(report.has(Rule::OutputRange));
        assert_eq!(report.range, Some((0.0, 2.0)));
    }

    #[test]
    fn zero_crossing_divisor_is_rejected() {
        let report = validate(&parse("sa / (sb - sb)").unwrap());
        assert!(report.has(Rule::DivisionByZero));
        assert_eq!(report.range, None);

        // A divisor bounded away from zero is fine.
        let report = validate(&parse("sa / (1 + sb)").unwrap());
        assert!(report.ok(), "{report}");
        assert_eq!(report.range, Some((0.0, 1.0)));
    }

    #[test]
    fn log1p_below_domain_is_rejected() {
        let report = validate(&parse("log1p(sa - sb)").unwrap());
        assert!(report.has(Rule::Log1pDomain));

        // ln(1 + x) / ln(2) maps [0, 1] onto [0, 1] exactly.
        let report = validate(&parse("log1p(sa) / log1p(1)").unwrap());
        assert!(report.ok(), "{report}");
        assert_eq!(report.range, Some((0.0, 1.0)));
    }

    #[test]
    fn overflow_is_caught_before_evaluation() {
        let report = validate(&parse("exp(sa*1000)").unwrap());
        assert!(report.has(Rule::OutputRange));
        assert_eq!(report.range, None);
    }

    #[test]
    fn ablated_signals_are_refused() {
        let no_sb = SignalSet {
            sa: true,
            sb: false,
            sc: true,
        };
        let report = validate_with(&parse("0.5*sa + 0.5*sb").unwrap(), no_sb);
        assert!(report.has(Rule::UnavailableSignal));
        assert!(compile("0.6*sa + 0.4*sc", no_sb).is_ok());
    }

    #[test]
    fn size_limits_reject_oversized_trees() {
        // min(sa, min(sa, ...)) nested to depth 13.
        let mut e = Expr::Signal(Signal::Sa);
        for _ in 0..12 {
            e = Expr::Min(sig(Signal::Sa), Box::new(e));
        }
        let report = validate(&e);
        assert!(report.has(Rule::SizeLimit), "{report}");
        assert_eq!(report.range, None);

        // A wide, shallow tree that exceeds the node budget: a balanced
        // tree of min() 8 levels tall has 255 nodes but depth well within
        // bounds, so only the node count trips.
        fn balanced(levels: usize) -> Expr {
            if levels == 0 {
                Expr::Signal(Signal::Sa)
            } else {
                Expr::Min(Box::new(balanced(levels - 1)), Box::new(balanced(levels - 1)))
            }
        }
        let wide = balanced(7);
        let (nodes, depth) = measure(&wide);
        assert!(nodes > MAX_NODES && depth <= MAX_DEPTH, "{nodes} {depth}");
        let report = validate(&wide);
        assert!(report.has(Rule::SizeLimit));
    }

    #[test]
    fn measure_is_safe_on_pathologically_deep_trees() {
        let mut e = Expr::Signal(Signal::Sa);
        for _ in 0..200_000 {
            e = Expr::Exp(Box::new(e));
        }
        let report = validate(&e);
        assert!(report.has(Rule::SizeLimit));
    }

    #[test]
    fn clip_with_inverted_bounds_follows_min_max_order() {
        // clip(x, lo, hi) is min(max(x, lo), hi), so hi wins when the
        // bounds cross.
        let v = ValidatedExpr::new(parse("clip(sa, 0.8, 0.2)").unwrap()).unwrap();
        assert_eq!(v.evaluate(&ctx(0.5, 0.0, 0.0)), 0.2);
        assert_eq!(v.proven_range(), (0.2, 0.2));
    }

    #[test]
    fn pow_zero_is_constant_one() {
        let report = validate(&parse("pow(sa, 0)").unwrap());
        assert!(report.ok());
        assert_eq!(report.range, Some((1.0, 1.0)));
    }

    #[test]
    fn compile_error_is_reportable_text() {
        let err = compile("sa +", SignalSet::ALL).unwrap_err();
        assert!(err.to_string().contains("syntax error"));
        let err = compile("sa + sb", SignalSet::ALL).unwrap_err();
        let text = err.to_string();
        assert!(text.contains("not contained in [0, 1]"), "{text}");
    }

    // -- property tests ----------------------------------------------------

    fn arb_signal() -> impl Strategy<Value = Signal> {
        prop_oneof![Just(Signal::Sa), Just(Signal::Sb), Just(Signal::Sc)]
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (0.0f64..100.0).prop_map(Expr::Num),
            arb_signal().prop_map(Expr::Signal),
        ];
        leaf.prop_recursive(4, 48, 3, |inner| {
            prop_oneof![
                (
                    prop_oneof![
                        Just(BinOp::Add),
                        Just(BinOp::Sub),
                        Just(BinOp::Mul),
                        Just(BinOp::Div)
                    ],
                    inner.clone(),
                    inner.clone()
                )
                    .prop_map(|(op, a, b)| Expr::Binary {
                        op,
                        lhs: Box::new(a),
                        rhs: Box::new(b)
                    }),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Expr::Min(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Expr::Max(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone(), inner.clone()).prop_map(|(x, lo, hi)| {
                    Expr::Clip {
                        x: Box::new(x),
                        lo: Box::new(lo),
                        hi: Box::new(hi),
                    }
                }),
                inner.clone().prop_map(|x| Expr::Exp(Box::new(x))),
                inner.clone().prop_map(|x| Expr::Log1p(Box::new(x))),
                inner.clone().prop_map(|x| Expr::Sigmoid(Box::new(x))),
                (inner, 0u32..5).prop_map(|(b, exp)| Expr::Pow {
                    base: Box::new(b),
                    exp
                }),
            ]
        })
    }

    proptest! {
        /// Serialization round-trips: the canonical text of a normalized
        /// tree parses back to the identical tree.
        #[test]
        fn prop_serialize_parse_roundtrip(e in arb_expr()) {
            let n = normalize(e);
            let text = serialize(&n);
            let back = parse(&text);
            prop_assert_eq!(back.as_ref(), Ok(&n), "text: {}", text);
        }

        /// Whenever validation can prove a range (no domain violations),
        /// point evaluation over in-range inputs lands inside it — even
        /// for expressions rejected on other grounds.
        #[test]
        fn prop_eval_lands_in_proven_range(
            e in arb_expr(),
            sa in 0.0f64..=1.0,
            sb in 0.0f64..=1.0,
            sc in 0.0f64..=1.0,
        ) {
            let n = normalize(e);
            let report = validate(&n);
            prop_assume!(report.range.is_some());
            let (lo, hi) = report.range.unwrap();
            let got = eval(&n, &ctx(sa, sb, sc));
            prop_assert!(
                lo <= got && got <= hi,
                "value {} escapes proven range [{}, {}] for `{}`",
                got, lo, hi, serialize(&n)
            );
        }

        /// Validation itself is total and panic-free on arbitrary trees.
        #[test]
        fn prop_validate_never_panics(e in arb_expr()) {
            let _ = validate(&normalize(e));
        }
    }
}
