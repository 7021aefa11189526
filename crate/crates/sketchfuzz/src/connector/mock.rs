//! Fault-injectable mock engine. Implements a tiny SQL subset (CREATE
//! TABLE/VIEW, INSERT, SELECT with WHERE, COUNT/SUM projections) with
//! three-valued logic, plus a catalog of configurable wrong-result, crash,
//! and hang behaviors used by the oracle and crash-detection tests.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::{Connector, ExecOutcome, ExecStatus, Liveness, NULL_MARKER};
use crate::error::ConnectorError;

/// The shipped fault catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockFault {
    /// Fault-free reference behavior.
    None,
    /// The row filter mis-evaluates `IS NULL` over a NULL value as FALSE,
    /// so rows belonging to the NULL partition are dropped.
    NullDrop,
    /// The row filter compares integers at 32-bit width when either operand
    /// reaches the 32-bit boundary; the projection path compares correctly.
    BoundaryInt,
    /// An `IN` whose operands involve a CAST poisons the whole row filter to
    /// FALSE, so every partitioning query comes back empty.
    InCast,
    /// Filters whose top-level node is NOT lose their first matching row.
    NotDrop,
    /// CREATE TABLE options with a value at or above 2^31-1 overflow an
    /// internal 32-bit check and kill the engine process.
    WithCrash,
    /// Predicates multiplying two column references take the slow path and
    /// never come back; the engine stays unresponsive until restarted.
    Hang,
}

impl MockFault {
    pub fn parse(s: &str) -> Option<MockFault> {
        Some(match s {
            "" | "none" => MockFault::None,
            "null-drop" => MockFault::NullDrop,
            "boundary-int" => MockFault::BoundaryInt,
            "in-cast" => MockFault::InCast,
            "not-drop" => MockFault::NotDrop,
            "with-crash" => MockFault::WithCrash,
            "hang" => MockFault::Hang,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            MockFault::None => "none",
            MockFault::NullDrop => "null-drop",
            MockFault::BoundaryInt => "boundary-int",
            MockFault::InCast => "in-cast",
            MockFault::NotDrop => "not-drop",
            MockFault::WithCrash => "with-crash",
            MockFault::Hang => "hang",
        }
    }

    /// All injectable faults (excludes the fault-free mode).
    pub const CATALOG: [MockFault; 6] = [
        MockFault::NullDrop,
        MockFault::BoundaryInt,
        MockFault::InCast,
        MockFault::NotDrop,
        MockFault::WithCrash,
        MockFault::Hang,
    ];
}

// ---------------------------------------------------------------------------
// values
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Val {
    Null,
    Int(i64),
    Text(String),
}

impl Val {
    fn truthy(&self) -> Option<bool> {
        match self {
            Val::Null => None,
            Val::Int(i) => Some(*i != 0),
            Val::Text(s) => Some(leading_int(s) != 0),
        }
    }

    fn render(&self) -> String {
        match self {
            Val::Null => NULL_MARKER.to_string(),
            Val::Int(i) => i.to_string(),
            Val::Text(s) => s.clone(),
        }
    }
}

fn leading_int(s: &str) -> i64 {
    let t = s.trim_start();
    let mut end = 0;
    let bytes = t.as_bytes();
    if !bytes.is_empty() && (bytes[0] == b'-' || bytes[0] == b'+') {
        end = 1;
    }
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    t[..end].parse().unwrap_or(0)
}

fn numeric(v: &Val) -> Option<i64> {
    match v {
        Val::Null => None,
        Val::Int(i) => Some(*i),
        Val::Text(s) => Some(leading_int(s)),
    }
}

/// NULL incomparable; integers order before text.
fn compare(a: &Val, b: &Val) -> Option<std::cmp::Ordering> {
    use std::cmp::Ordering;
    match (a, b) {
        (Val::Null, _) | (_, Val::Null) => None,
        (Val::Int(x), Val::Int(y)) => Some(x.cmp(y)),
        (Val::Text(x), Val::Text(y)) => Some(x.cmp(y)),
        (Val::Int(_), Val::Text(_)) => Some(Ordering::Less),
        (Val::Text(_), Val::Int(_)) => Some(Ordering::Greater),
    }
}

// ---------------------------------------------------------------------------
// SQL AST
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Lit(Val),
    Col(Option<String>, String),
    Cmp(CmpOp, Box<Expr>, Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Not(Box<Expr>),
    IsNull(Box<Expr>, bool),
    Arith(ArithOp, Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    In(Box<Expr>, Vec<Expr>, bool),
    Cast(Box<Expr>, String),
    Case(Box<Expr>, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ArithOp {
    Add,
    Sub,
    Mul,
}

impl Expr {
    fn contains_cast(&self) -> bool {
        match self {
            Expr::Cast(..) => true,
            Expr::Lit(_) | Expr::Col(..) => false,
            Expr::Cmp(_, a, b) | Expr::And(a, b) | Expr::Or(a, b) | Expr::Arith(_, a, b) => {
                a.contains_cast() || b.contains_cast()
            }
            Expr::Not(a) | Expr::IsNull(a, _) | Expr::Neg(a) => a.contains_cast(),
            Expr::In(n, list, _) => n.contains_cast() || list.iter().any(|e| e.contains_cast()),
            Expr::Case(c, t, e) => c.contains_cast() || t.contains_cast() || e.contains_cast(),
            Expr::Call(_, args) => args.iter().any(|e| e.contains_cast()),
        }
    }

    fn has_col_times_col(&self) -> bool {
        match self {
            Expr::Arith(ArithOp::Mul, a, b)
                if matches!(**a, Expr::Col(..)) && matches!(**b, Expr::Col(..)) =>
            {
                true
            }
            Expr::Lit(_) | Expr::Col(..) => false,
            Expr::Cmp(_, a, b) | Expr::And(a, b) | Expr::Or(a, b) | Expr::Arith(_, a, b) => {
                a.has_col_times_col() || b.has_col_times_col()
            }
            Expr::Not(a) | Expr::IsNull(a, _) | Expr::Neg(a) | Expr::Cast(a, _) => {
                a.has_col_times_col()
            }
            Expr::In(n, list, _) => {
                n.has_col_times_col() || list.iter().any(|e| e.has_col_times_col())
            }
            Expr::Case(c, t, e) => {
                c.has_col_times_col() || t.has_col_times_col() || e.has_col_times_col()
            }
            Expr::Call(_, args) => args.iter().any(|e| e.has_col_times_col()),
        }
    }
}

#[derive(Debug, Clone)]
enum Projection {
    Star,
    CountStar,
    Sum(Expr),
    Exprs(Vec<Expr>),
}

#[derive(Debug, Clone)]
struct SelectQuery {
    projection: Projection,
    from: Vec<String>,
    filter: Option<Expr>,
}

#[derive(Debug)]
enum Stmt {
    CreateTable {
        name: String,
        if_not_exists: bool,
        columns: Vec<ColumnDef>,
        options: Vec<(String, Val)>,
    },
    CreateView {
        name: String,
        query: SelectQuery,
    },
    Insert {
        table: String,
        columns: Option<Vec<String>>,
        rows: Vec<Vec<Expr>>,
    },
    Select(SelectQuery),
    Analyze,
}

#[derive(Debug, Clone)]
struct ColumnDef {
    name: String,
    not_null: bool,
}

// ---------------------------------------------------------------------------
// tokenizer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(String),
    Str(String),
    Punct(&'static str),
}

fn tokenize(sql: &str) -> Result<Vec<Tok>, String> {
    let mut toks = Vec::new();
    let b = sql.as_bytes();
    let mut i = 0;
    while i < b.len() {
        let c = b[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            toks.push(Tok::Ident(sql[start..i].to_string()));
        } else if c.is_ascii_digit() {
            let start = i;
            while i < b.len() && (b[i] as char).is_ascii_digit() {
                i += 1;
            }
            toks.push(Tok::Num(sql[start..i].to_string()));
        } else if c == '\'' {
            let mut s = String::new();
            i += 1;
            loop {
                if i >= b.len() {
                    return Err("unterminated string literal".into());
                }
                if b[i] == b'\'' {
                    if i + 1 < b.len() && b[i + 1] == b'\'' {
                        s.push('\'');
                        i += 2;
                    } else {
                        i += 1;
                        break;
                    }
                } else {
                    s.push(b[i] as char);
                    i += 1;
                }
            }
            toks.push(Tok::Str(s));
        } else {
            let two = if i + 1 < b.len() { &sql[i..i + 2] } else { "" };
            let p: &'static str = match two {
                "<=" => "<=",
                ">=" => ">=",
                "<>" => "<>",
                "!=" => "<>",
                _ => match c {
                    '(' => "(",
                    ')' => ")",
                    ',' => ",",
                    ';' => ";",
                    '*' => "*",
                    '=' => "=",
                    '<' => "<",
                    '>' => ">",
                    '+' => "+",
                    '-' => "-",
                    '.' => ".",
                    _ => return Err(format!("unexpected character '{c}'")),
                },
            };
            i += p.len();
            toks.push(Tok::Punct(p));
        }
    }
    Ok(toks)
}

// ---------------------------------------------------------------------------
// parser
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn new(sql: &str) -> Result<Self, String> {
        Ok(Parser { toks: tokenize(sql)?, pos: 0 })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if let Some(Tok::Ident(s)) = self.peek() {
            if s.eq_ignore_ascii_case(kw) {
                self.pos += 1;
                return true;
            }
        }
        false
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), String> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(format!("expected keyword {kw}"))
        }
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if let Some(Tok::Punct(q)) = self.peek() {
            if *q == p {
                self.pos += 1;
                return true;
            }
        }
        false
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), String> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            Err(format!("expected '{p}'"))
        }
    }

    fn ident(&mut self) -> Result<String, String> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(s),
            other => Err(format!("expected identifier, found {other:?}")),
        }
    }

    fn statement(&mut self) -> Result<Stmt, String> {
        if self.eat_kw("CREATE") {
            if self.eat_kw("TABLE") {
                return self.create_table();
            }
            if self.eat_kw("VIEW") {
                return self.create_view();
            }
            return Err("expected TABLE or VIEW after CREATE".into());
        }
        if self.eat_kw("INSERT") {
            return self.insert();
        }
        if self.eat_kw("SELECT") {
            return Ok(Stmt::Select(self.select_body()?));
        }
        if self.eat_kw("ANALYZE") {
            return Ok(Stmt::Analyze);
        }
        Err("unsupported statement".into())
    }

    fn create_table(&mut self) -> Result<Stmt, String> {
        let mut if_not_exists = false;
        if self.eat_kw("IF") {
            self.expect_kw("NOT")?;
            self.expect_kw("EXISTS")?;
            if_not_exists = true;
        }
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut columns = Vec::new();
        loop {
            // Table-level constraints are accepted and ignored.
            if let Some(Tok::Ident(s)) = self.peek() {
                let up = s.to_uppercase();
                if up == "PRIMARY" || up == "UNIQUE" || up == "CHECK" || up == "CONSTRAINT" {
                    self.skip_constraint_item()?;
                    if self.eat_punct(",") {
                        continue;
                    }
                    break;
                }
            }
            let col = self.ident()?;
            let _type_name = self.ident()?;
            if self.eat_punct("(") {
                // Type parameters like VARCHAR(10).
                while !self.eat_punct(")") {
                    if self.next().is_none() {
                        return Err("unterminated type parameters".into());
                    }
                }
            }
            let mut not_null = false;
            loop {
                if self.eat_kw("NOT") {
                    self.expect_kw("NULL")?;
                    not_null = true;
                } else if self.eat_kw("PRIMARY") {
                    self.expect_kw("KEY")?;
                } else if self.eat_kw("UNIQUE") {
                } else if self.eat_kw("DEFAULT") {
                    let _ = self.expr()?;
                } else if self.eat_kw("CHECK") {
                    self.expect_punct("(")?;
                    let _ = self.expr()?;
                    self.expect_punct(")")?;
                } else {
                    break;
                }
            }
            columns.push(ColumnDef { name: col, not_null });
            if self.eat_punct(",") {
                continue;
            }
            break;
        }
        self.expect_punct(")")?;
        let mut options = Vec::new();
        if self.eat_kw("WITH") {
            self.expect_punct("(")?;
            loop {
                let key = self.ident()?;
                self.expect_punct("=")?;
                let e = self.expr()?;
                let v = eval_const(&e)?;
                options.push((key, v));
                if self.eat_punct(",") {
                    continue;
                }
                break;
            }
            self.expect_punct(")")?;
        }
        self.end()?;
        if columns.is_empty() {
            return Err("table needs at least one column".into());
        }
        Ok(Stmt::CreateTable { name, if_not_exists, columns, options })
    }

    fn skip_constraint_item(&mut self) -> Result<(), String> {
        // Consume tokens until the comma or closing paren at depth 0.
        let mut depth = 0usize;
        loop {
            match self.peek() {
                Some(Tok::Punct("(")) => {
                    depth += 1;
                    self.pos += 1;
                }
                Some(Tok::Punct(")")) => {
                    if depth == 0 {
                        return Ok(());
                    }
                    depth -= 1;
                    self.pos += 1;
                }
                Some(Tok::Punct(",")) if depth == 0 => return Ok(()),
                Some(_) => {
                    self.pos += 1;
                }
                None => return Err("unterminated constraint".into()),
            }
        }
    }

    fn create_view(&mut self) -> Result<Stmt, String> {
        let name = self.ident()?;
        self.expect_kw("AS")?;
        self.expect_kw("SELECT")?;
        let query = self.select_body()?;
        self.end()?;
        Ok(Stmt::CreateView { name, query })
    }

    fn insert(&mut self) -> Result<Stmt, String> {
        self.expect_kw("INTO")?;
        let table = self.ident()?;
        let mut columns = None;
        if self.eat_punct("(") {
            let mut cols = Vec::new();
            loop {
                cols.push(self.ident()?);
                if self.eat_punct(",") {
                    continue;
                }
                break;
            }
            self.expect_punct(")")?;
            columns = Some(cols);
        }
        self.expect_kw("VALUES")?;
        let mut rows = Vec::new();
        loop {
            self.expect_punct("(")?;
            let mut vals = Vec::new();
            loop {
                vals.push(self.expr()?);
                if self.eat_punct(",") {
                    continue;
                }
                break;
            }
            self.expect_punct(")")?;
            rows.push(vals);
            if self.eat_punct(",") {
                continue;
            }
            break;
        }
        self.end()?;
        Ok(Stmt::Insert { table, columns, rows })
    }

    fn select_body(&mut self) -> Result<SelectQuery, String> {
        let projection = if self.eat_punct("*") {
            Projection::Star
        } else if self.eat_kw("COUNT") {
            self.expect_punct("(")?;
            self.expect_punct("*")?;
            self.expect_punct(")")?;
            Projection::CountStar
        } else if self.eat_kw("SUM") {
            self.expect_punct("(")?;
            let e = self.expr()?;
            self.expect_punct(")")?;
            Projection::Sum(e)
        } else {
            let mut list = vec![self.expr()?];
            while self.eat_punct(",") {
                list.push(self.expr()?);
            }
            Projection::Exprs(list)
        };
        let mut from = Vec::new();
        if self.eat_kw("FROM") {
            from.push(self.ident()?);
            while self.eat_punct(",") {
                from.push(self.ident()?);
            }
        }
        let filter = if self.eat_kw("WHERE") { Some(self.expr()?) } else { None };
        self.end()?;
        Ok(SelectQuery { projection, from, filter })
    }

    fn end(&mut self) -> Result<(), String> {
        self.eat_punct(";");
        if let Some(t) = self.peek() {
            return Err(format!("trailing input near {t:?}"));
        }
        Ok(())
    }

    // expression precedence: OR < AND < NOT < comparison < additive < multiplicative < unary
    fn expr(&mut self) -> Result<Expr, String> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, String> {
        let mut e = self.and_expr()?;
        while self.eat_kw("OR") {
            let r = self.and_expr()?;
            e = Expr::Or(Box::new(e), Box::new(r));
        }
        Ok(e)
    }

    fn and_expr(&mut self) -> Result<Expr, String> {
        let mut e = self.not_expr()?;
        while self.eat_kw("AND") {
            let r = self.not_expr()?;
            e = Expr::And(Box::new(e), Box::new(r));
        }
        Ok(e)
    }

    fn not_expr(&mut self) -> Result<Expr, String> {
        if self.eat_kw("NOT") {
            let e = self.not_expr()?;
            return Ok(Expr::Not(Box::new(e)));
        }
        self.cmp_expr()
    }

    fn cmp_expr(&mut self) -> Result<Expr, String> {
        let mut e = self.add_expr()?;
        loop {
            if self.eat_kw("IS") {
                let negated = self.eat_kw("NOT");
                self.expect_kw("NULL")?;
                e = Expr::IsNull(Box::new(e), negated);
                continue;
            }
            if let Some(Tok::Ident(s)) = self.peek() {
                if s.eq_ignore_ascii_case("NOT") {
                    // NOT IN
                    let save = self.pos;
                    self.pos += 1;
                    if self.eat_kw("IN") {
                        let list = self.in_list()?;
                        e = Expr::In(Box::new(e), list, true);
                        continue;
                    }
                    self.pos = save;
                }
            }
            if self.eat_kw("IN") {
                let list = self.in_list()?;
                e = Expr::In(Box::new(e), list, false);
                continue;
            }
            let op = match self.peek() {
                Some(Tok::Punct("=")) => Some(CmpOp::Eq),
                Some(Tok::Punct("<>")) => Some(CmpOp::Ne),
                Some(Tok::Punct("<")) => Some(CmpOp::Lt),
                Some(Tok::Punct("<=")) => Some(CmpOp::Le),
                Some(Tok::Punct(">")) => Some(CmpOp::Gt),
                Some(Tok::Punct(">=")) => Some(CmpOp::Ge),
                _ => None,
            };
            match op {
                Some(op) => {
                    self.pos += 1;
                    let r = self.add_expr()?;
                    e = Expr::Cmp(op, Box::new(e), Box::new(r));
                }
                None => return Ok(e),
            }
        }
    }

    fn in_list(&mut self) -> Result<Vec<Expr>, String> {
        self.expect_punct("(")?;
        let mut list = vec![self.expr()?];
        while self.eat_punct(",") {
            list.push(self.expr()?);
        }
        self.expect_punct(")")?;
        Ok(list)
    }

    fn add_expr(&mut self) -> Result<Expr, String> {
        let mut e = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Punct("+")) => Some(ArithOp::Add),
                Some(Tok::Punct("-")) => Some(ArithOp::Sub),
                _ => None,
            };
            match op {
                Some(op) => {
                    self.pos += 1;
                    let r = self.mul_expr()?;
                    e = Expr::Arith(op, Box::new(e), Box::new(r));
                }
                None => return Ok(e),
            }
        }
    }

    fn mul_expr(&mut self) -> Result<Expr, String> {
        let mut e = self.unary()?;
        while self.eat_punct("*") {
            let r = self.unary()?;
            e = Expr::Arith(ArithOp::Mul, Box::new(e), Box::new(r));
        }
        Ok(e)
    }

    fn unary(&mut self) -> Result<Expr, String> {
        if self.eat_punct("-") {
            // Fold a directly following integer literal so i64::MIN parses.
            if let Some(Tok::Num(n)) = self.peek().cloned() {
                self.pos += 1;
                let v: i128 = n.parse().map_err(|_| "bad integer literal".to_string())?;
                let neg = -v;
                let as64 =
                    i64::try_from(neg).map_err(|_| "integer literal out of range".to_string())?;
                return Ok(Expr::Lit(Val::Int(as64)));
            }
            let e = self.unary()?;
            return Ok(Expr::Neg(Box::new(e)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, String> {
        if self.eat_punct("(") {
            let e = self.expr()?;
            self.expect_punct(")")?;
            return Ok(e);
        }
        match self.next() {
            Some(Tok::Num(n)) => {
                let v: i128 = n.parse().map_err(|_| "bad integer literal".to_string())?;
                let as64 =
                    i64::try_from(v).map_err(|_| "integer literal out of range".to_string())?;
                Ok(Expr::Lit(Val::Int(as64)))
            }
            Some(Tok::Str(s)) => Ok(Expr::Lit(Val::Text(s))),
            Some(Tok::Ident(id)) => {
                let up = id.to_uppercase();
                match up.as_str() {
                    "NULL" => return Ok(Expr::Lit(Val::Null)),
                    "TRUE" => return Ok(Expr::Lit(Val::Int(1))),
                    "FALSE" => return Ok(Expr::Lit(Val::Int(0))),
                    "CAST" => {
                        self.expect_punct("(")?;
                        let e = self.expr()?;
                        self.expect_kw("AS")?;
                        let ty = self.ident()?;
                        self.expect_punct(")")?;
                        return Ok(Expr::Cast(Box::new(e), ty.to_uppercase()));
                    }
                    "CASE" => {
                        self.expect_kw("WHEN")?;
                        let c = self.expr()?;
                        self.expect_kw("THEN")?;
                        let t = self.expr()?;
                        self.expect_kw("ELSE")?;
                        let e = self.expr()?;
                        self.expect_kw("END")?;
                        return Ok(Expr::Case(Box::new(c), Box::new(t), Box::new(e)));
                    }
                    _ => {}
                }
                if self.eat_punct(".") {
                    let col = self.ident()?;
                    return Ok(Expr::Col(Some(id), col));
                }
                if self.eat_punct("(") {
                    let mut args = Vec::new();
                    if !self.eat_punct(")") {
                        loop {
                            args.push(self.expr()?);
                            if self.eat_punct(",") {
                                continue;
                            }
                            break;
                        }
                        self.expect_punct(")")?;
                    }
                    return Ok(Expr::Call(up, args));
                }
                Ok(Expr::Col(None, id))
            }
            other => Err(format!("unexpected token {other:?}")),
        }
    }
}

fn eval_const(e: &Expr) -> Result<Val, String> {
    match e {
        Expr::Lit(v) => Ok(v.clone()),
        Expr::Neg(inner) => match eval_const(inner)? {
            Val::Int(i) => i
                .checked_neg()
                .map(Val::Int)
                .ok_or_else(|| "integer literal out of range".to_string()),
            _ => Err("expected constant integer".into()),
        },
        _ => Err("expected constant".into()),
    }
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EvalPath {
    /// WHERE-clause row filter; fault hooks live here.
    Filter,
    /// Projection expressions (including SUM/CASE); always correct.
    Projection,
}

struct RowCtx<'a> {
    columns: &'a [(Option<String>, String)],
    row: &'a [Val],
}

impl RowCtx<'_> {
    fn resolve(&self, table: &Option<String>, name: &str) -> Result<Val, String> {
        for (i, (tbl, col)) in self.columns.iter().enumerate() {
            if !col.eq_ignore_ascii_case(name) {
                continue;
            }
            if let Some(want) = table {
                match tbl {
                    Some(have) if have.eq_ignore_ascii_case(want) => return Ok(self.row[i].clone()),
                    _ => continue,
                }
            }
            return Ok(self.row[i].clone());
        }
        Err(format!("no such column: {name}"))
    }
}

struct EvalCtx {
    fault: MockFault,
    path: EvalPath,
    poisoned: bool,
}

fn eval(e: &Expr, row: &RowCtx<'_>, ctx: &mut EvalCtx) -> Result<Val, String> {
    match e {
        Expr::Lit(v) => Ok(v.clone()),
        Expr::Col(t, n) => row.resolve(t, n),
        Expr::Neg(inner) => {
            let v = eval(inner, row, ctx)?;
            match numeric(&v) {
                None => Ok(Val::Null),
                Some(i) => i.checked_neg().map(Val::Int).ok_or_else(|| "integer overflow".into()),
            }
        }
        Expr::Arith(op, a, b) => {
            let x = eval(a, row, ctx)?;
            let y = eval(b, row, ctx)?;
            let (x, y) = match (numeric(&x), numeric(&y)) {
                (Some(x), Some(y)) => (x, y),
                _ => return Ok(Val::Null),
            };
            let r = match op {
                ArithOp::Add => x.checked_add(y),
                ArithOp::Sub => x.checked_sub(y),
                ArithOp::Mul => x.checked_mul(y),
            };
            r.map(Val::Int).ok_or_else(|| "integer overflow".into())
        }
        Expr::Cmp(op, a, b) => {
            let x = eval(a, row, ctx)?;
            let y = eval(b, row, ctx)?;
            let ord = if ctx.fault == MockFault::BoundaryInt
                && ctx.path == EvalPath::Filter
                && at_boundary(&x, &y)
            {
                compare(&truncate32(&x), &truncate32(&y))
            } else {
                compare(&x, &y)
            };
            Ok(match ord {
                None => Val::Null,
                Some(o) => {
                    let b = match op {
                        CmpOp::Eq => o == std::cmp::Ordering::Equal,
                        CmpOp::Ne => o != std::cmp::Ordering::Equal,
                        CmpOp::Lt => o == std::cmp::Ordering::Less,
                        CmpOp::Le => o != std::cmp::Ordering::Greater,
                        CmpOp::Gt => o == std::cmp::Ordering::Greater,
                        CmpOp::Ge => o != std::cmp::Ordering::Less,
                    };
                    Val::Int(b as i64)
                }
            })
        }
        Expr::And(a, b) => {
            let x = eval(a, row, ctx)?.truthy();
            let y = eval(b, row, ctx)?.truthy();
            Ok(match (x, y) {
                (Some(false), _) | (_, Some(false)) => Val::Int(0),
                (Some(true), Some(true)) => Val::Int(1),
                _ => Val::Null,
            })
        }
        Expr::Or(a, b) => {
            let x = eval(a, row, ctx)?.truthy();
            let y = eval(b, row, ctx)?.truthy();
            Ok(match (x, y) {
                (Some(true), _) | (_, Some(true)) => Val::Int(1),
                (Some(false), Some(false)) => Val::Int(0),
                _ => Val::Null,
            })
        }
        Expr::Not(a) => {
            let v = eval(a, row, ctx)?.truthy();
            Ok(match v {
                None => Val::Null,
                Some(b) => Val::Int(!b as i64),
            })
        }
        Expr::IsNull(a, negated) => {
            let v = eval(a, row, ctx)?;
            let mut is_null = v == Val::Null;
            if is_null
                && !negated
                && ctx.fault == MockFault::NullDrop
                && ctx.path == EvalPath::Filter
            {
                // Wrong NULL handling: the filter treats IS NULL over a NULL
                // value as FALSE.
                is_null = false;
            }
            let b = if *negated { !is_null } else { is_null };
            Ok(Val::Int(b as i64))
        }
        Expr::In(needle, list, negated) => {
            if ctx.fault == MockFault::InCast
                && ctx.path == EvalPath::Filter
                && (needle.contains_cast() || list.iter().any(|e| e.contains_cast()))
            {
                ctx.poisoned = true;
                return Ok(Val::Int(0));
            }
            let n = eval(needle, row, ctx)?;
            let mut saw_null = false;
            let mut found = false;
            for item in list {
                let v = eval(item, row, ctx)?;
                if v == Val::Null {
                    saw_null = true;
                } else if compare(&n, &v) == Some(std::cmp::Ordering::Equal) {
                    found = true;
                }
            }
            let tern = if n == Val::Null {
                None
            } else if found {
                Some(true)
            } else if saw_null {
                None
            } else {
                Some(false)
            };
            Ok(match (tern, negated) {
                (None, _) => Val::Null,
                (Some(b), false) => Val::Int(b as i64),
                (Some(b), true) => Val::Int(!b as i64),
            })
        }
        Expr::Cast(inner, ty) => {
            let v = eval(inner, row, ctx)?;
            if v == Val::Null {
                return Ok(Val::Null);
            }
            if ty.contains("INT") || ty == "BOOLEAN" {
                Ok(Val::Int(numeric(&v).unwrap_or(0)))
            } else {
                Ok(Val::Text(v.render()))
            }
        }
        Expr::Case(c, t, e) => {
            let cond = eval(c, row, ctx)?.truthy();
            if cond == Some(true) {
                eval(t, row, ctx)
            } else {
                eval(e, row, ctx)
            }
        }
        Expr::Call(name, args) => {
            match name.as_str() {
                "ABS" if args.len() == 1 => {
                    let v = eval(&args[0], row, ctx)?;
                    match numeric(&v) {
                        None => Ok(Val::Null),
                        Some(i) => i
                            .checked_abs()
                            .map(Val::Int)
                            .ok_or_else(|| "integer overflow".into()),
                    }
                }
                "LENGTH" if args.len() == 1 => {
                    let v = eval(&args[0], row, ctx)?;
                    Ok(match v {
                        Val::Null => Val::Null,
                        Val::Int(i) => Val::Int(i.to_string().len() as i64),
                        Val::Text(s) => Val::Int(s.chars().count() as i64),
                    })
                }
                _ => Err(format!("no such function: {name}")),
            }
        }
    }
}

fn at_boundary(a: &Val, b: &Val) -> bool {
    let lim = i32::MAX as u64;
    let check = |v: &Val| matches!(v, Val::Int(i) if i.unsigned_abs() >= lim);
    check(a) || check(b)
}

fn truncate32(v: &Val) -> Val {
    match v {
        Val::Int(i) => Val::Int(*i as i32 as i64),
        other => other.clone(),
    }
}

// ---------------------------------------------------------------------------
// engine state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Table {
    columns: Vec<ColumnDef>,
    rows: Vec<Vec<Val>>,
}

#[derive(Default)]
struct EngineState {
    tables: Vec<(String, Table)>,
    views: Vec<(String, SelectQuery)>,
    alive: bool,
    hung: bool,
}

impl EngineState {
    fn fresh() -> Self {
        EngineState { tables: Vec::new(), views: Vec::new(), alive: true, hung: false }
    }

    fn table(&self, name: &str) -> Option<&Table> {
        self.tables
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, t)| t)
    }

    fn view(&self, name: &str) -> Option<&SelectQuery> {
        self.views
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, q)| q)
    }
}

/// In-process mock engine. All connections opened from one `MockConnector`
/// clone share engine state, mirroring one server process.
pub struct MockConnector {
    state: Arc<Mutex<EngineState>>,
    fault: MockFault,
    timeout: Duration,
}

impl MockConnector {
    pub fn open(fault: MockFault, timeout: Duration) -> Self {
        MockConnector {
            state: Arc::new(Mutex::new(EngineState::fresh())),
            fault,
            timeout,
        }
    }

    /// A second connection to the same engine process.
    pub fn share(&self) -> Self {
        MockConnector {
            state: Arc::clone(&self.state),
            fault: self.fault,
            timeout: self.timeout,
        }
    }

    pub fn fault(&self) -> MockFault {
        self.fault
    }

    /// Kills the engine process (test hook).
    pub fn kill(&self) {
        self.state.lock().unwrap().alive = false;
    }

    fn hang_sleep(&self) {
        let dur = (self.timeout + Duration::from_millis(30)).min(Duration::from_secs(2));
        std::thread::sleep(dur);
    }

    fn run(&self, sql: &str) -> Result<Option<Vec<Vec<String>>>, RunError> {
        let stmt = Parser::new(sql)
            .and_then(|mut p| p.statement())
            .map_err(RunError::Sql)?;
        let mut state = self.state.lock().unwrap();
        match stmt {
            Stmt::Analyze => Ok(None),
            Stmt::CreateTable { name, if_not_exists, columns, options } => {
                if state.table(&name).is_some() || state.view(&name).is_some() {
                    if if_not_exists {
                        return Ok(None);
                    }
                    return Err(RunError::Sql(format!("table {name} already exists")));
                }
                if self.fault == MockFault::WithCrash {
                    for (_, v) in &options {
                        if matches!(v, Val::Int(i) if *i >= i32::MAX as i64) {
                            // 32-bit overflow while validating the option
                            // value takes the whole process down.
                            state.alive = false;
                            return Err(RunError::Crashed);
                        }
                    }
                }
                let mut seen: Vec<String> = Vec::new();
                for c in &columns {
                    let up = c.name.to_uppercase();
                    if seen.contains(&up) {
                        return Err(RunError::Sql(format!("duplicate column {}", c.name)));
                    }
                    seen.push(up);
                }
                state.tables.push((name, Table { columns, rows: Vec::new() }));
                Ok(None)
            }
            Stmt::CreateView { name, query } => {
                if state.table(&name).is_some() || state.view(&name).is_some() {
                    return Err(RunError::Sql(format!("relation {name} already exists")));
                }
                for t in &query.from {
                    if state.table(t).is_none() && state.view(t).is_none() {
                        return Err(RunError::Sql(format!("no such table: {t}")));
                    }
                }
                state.views.push((name, query));
                Ok(None)
            }
            Stmt::Insert { table, columns, rows } => {
                let tdef = state
                    .table(&table)
                    .ok_or_else(|| RunError::Sql(format!("no such table: {table}")))?
                    .clone();
                let target_cols: Vec<String> = match &columns {
                    Some(cols) => cols.clone(),
                    None => tdef.columns.iter().map(|c| c.name.clone()).collect(),
                };
                for c in &target_cols {
                    if !tdef.columns.iter().any(|d| d.name.eq_ignore_ascii_case(c)) {
                        return Err(RunError::Sql(format!("no such column: {c}")));
                    }
                }
                let mut new_rows = Vec::new();
                for tuple in &rows {
                    if tuple.len() != target_cols.len() {
                        return Err(RunError::Sql("value count mismatch".into()));
                    }
                    let mut row = vec![Val::Null; tdef.columns.len()];
                    for (expr, cname) in tuple.iter().zip(&target_cols) {
                        let empty = RowCtx { columns: &[], row: &[] };
                        let mut ctx = EvalCtx {
                            fault: self.fault,
                            path: EvalPath::Projection,
                            poisoned: false,
                        };
                        let v = eval(expr, &empty, &mut ctx).map_err(RunError::Sql)?;
                        let idx = tdef
                            .columns
                            .iter()
                            .position(|d| d.name.eq_ignore_ascii_case(cname))
                            .unwrap();
                        row[idx] = v;
                    }
                    for (i, def) in tdef.columns.iter().enumerate() {
                        if def.not_null && row[i] == Val::Null {
                            return Err(RunError::Sql(format!(
                                "NOT NULL constraint failed: {}",
                                def.name
                            )));
                        }
                    }
                    new_rows.push(row);
                }
                if let Some((_, t)) =
                    state.tables.iter_mut().find(|(n, _)| n.eq_ignore_ascii_case(&table))
                {
                    t.rows.extend(new_rows);
                }
                Ok(None)
            }
            Stmt::Select(q) => {
                if self.fault == MockFault::Hang {
                    if let Some(p) = &q.filter {
                        if p.has_col_times_col() {
                            state.hung = true;
                            return Err(RunError::Hung);
                        }
                    }
                }
                let rows = run_select(&q, &state, self.fault).map_err(RunError::Sql)?;
                Ok(Some(rows))
            }
        }
    }
}

enum RunError {
    Sql(String),
    Crashed,
    Hung,
}

type Relation = (Vec<(Option<String>, String)>, Vec<Vec<Val>>);

fn materialize(name: &str, state: &EngineState, fault: MockFault) -> Result<Relation, String> {
    if let Some(t) = state.table(name) {
        let cols = t
            .columns
            .iter()
            .map(|c| (Some(name.to_string()), c.name.clone()))
            .collect();
        return Ok((cols, t.rows.clone()));
    }
    if let Some(q) = state.view(name) {
        let rendered = run_select_vals(q, state, fault)?;
        let cols = rendered
            .0
            .into_iter()
            .map(|c| (Some(name.to_string()), c))
            .collect();
        return Ok((cols, rendered.1));
    }
    Err(format!("no such table: {name}"))
}

/// Name resolution and function lookup happen before any row is touched,
/// the way a real engine rejects a bad query at prepare time.
fn check_expr(e: &Expr, columns: &[(Option<String>, String)]) -> Result<(), String> {
    match e {
        Expr::Lit(_) => Ok(()),
        Expr::Col(table, name) => {
            let found = columns.iter().any(|(tbl, col)| {
                col.eq_ignore_ascii_case(name)
                    && match table {
                        None => true,
                        Some(want) => {
                            matches!(tbl, Some(have) if have.eq_ignore_ascii_case(want))
                        }
                    }
            });
            if found {
                Ok(())
            } else {
                Err(format!("no such column: {name}"))
            }
        }
        Expr::Cmp(_, a, b) | Expr::And(a, b) | Expr::Or(a, b) | Expr::Arith(_, a, b) => {
            check_expr(a, columns)?;
            check_expr(b, columns)
        }
        Expr::Not(a) | Expr::IsNull(a, _) | Expr::Neg(a) | Expr::Cast(a, _) => {
            check_expr(a, columns)
        }
        Expr::In(n, list, _) => {
            check_expr(n, columns)?;
            list.iter().try_for_each(|e| check_expr(e, columns))
        }
        Expr::Case(c, t, e) => {
            check_expr(c, columns)?;
            check_expr(t, columns)?;
            check_expr(e, columns)
        }
        Expr::Call(name, args) => {
            if !matches!(name.as_str(), "ABS" | "LENGTH") {
                return Err(format!("no such function: {name}"));
            }
            if args.len() != 1 {
                return Err(format!("wrong argument count for {name}"));
            }
            args.iter().try_for_each(|e| check_expr(e, columns))
        }
    }
}

/// Runs a select, returning (column names, value rows).
fn run_select_vals(
    q: &SelectQuery,
    state: &EngineState,
    fault: MockFault,
) -> Result<(Vec<String>, Vec<Vec<Val>>), String> {
    // Build the source relation (cartesian product for comma joins).
    let mut columns: Vec<(Option<String>, String)> = Vec::new();
    let mut rows: Vec<Vec<Val>> = vec![Vec::new()];
    for name in &q.from {
        let (cols, trows) = materialize(name, state, fault)?;
        let mut next = Vec::new();
        for base in &rows {
            for tr in &trows {
                let mut r = base.clone();
                r.extend(tr.iter().cloned());
                next.push(r);
            }
        }
        columns.extend(cols);
        rows = next;
    }
    if q.from.is_empty() {
        rows = vec![Vec::new()];
    }

    if let Some(p) = &q.filter {
        check_expr(p, &columns)?;
    }
    match &q.projection {
        Projection::Sum(e) => check_expr(e, &columns)?,
        Projection::Exprs(list) => {
            list.iter().try_for_each(|e| check_expr(e, &columns))?;
        }
        Projection::Star | Projection::CountStar => {}
    }

    // Filter path (fault hooks active).
    let filtered: Vec<Vec<Val>> = match &q.filter {
        None => rows,
        Some(p) => {
            let mut keep = Vec::new();
            for r in &rows {
                let rowctx = RowCtx { columns: &columns, row: r };
                let mut ctx = EvalCtx { fault, path: EvalPath::Filter, poisoned: false };
                let v = eval(p, &rowctx, &mut ctx)?;
                if ctx.poisoned {
                    continue;
                }
                if v.truthy() == Some(true) {
                    keep.push(r.clone());
                }
            }
            if fault == MockFault::NotDrop
                && matches!(p, Expr::Not(_))
                && !keep.is_empty()
            {
                keep.remove(0);
            }
            keep
        }
    };

    // Projection path (always correct).
    match &q.projection {
        Projection::Star => {
            let names = columns.iter().map(|(_, c)| c.clone()).collect();
            Ok((names, filtered))
        }
        Projection::CountStar => Ok((
            vec!["count".into()],
            vec![vec![Val::Int(filtered.len() as i64)]],
        )),
        Projection::Sum(e) => {
            let mut acc: Option<i64> = None;
            for r in &filtered {
                let rowctx = RowCtx { columns: &columns, row: r };
                let mut ctx = EvalCtx { fault, path: EvalPath::Projection, poisoned: false };
                let v = eval(e, &rowctx, &mut ctx)?;
                if let Some(n) = numeric(&v) {
                    acc = Some(
                        acc.unwrap_or(0)
                            .checked_add(n)
                            .ok_or_else(|| "integer overflow".to_string())?,
                    );
                }
            }
            let v = acc.map(Val::Int).unwrap_or(Val::Null);
            Ok((vec!["sum".into()], vec![vec![v]]))
        }
        Projection::Exprs(list) => {
            let mut out = Vec::new();
            for r in &filtered {
                let rowctx = RowCtx { columns: &columns, row: r };
                let mut cells = Vec::with_capacity(list.len());
                for e in list {
                    let mut ctx =
                        EvalCtx { fault, path: EvalPath::Projection, poisoned: false };
                    cells.push(eval(e, &rowctx, &mut ctx)?);
                }
                out.push(cells);
            }
            let names = (0..list.len()).map(|i| format!("c{i}")).collect();
            Ok((names, out))
        }
    }
}

fn run_select(
    q: &SelectQuery,
    state: &EngineState,
    fault: MockFault,
) -> Result<Vec<Vec<String>>, String> {
    let (_, rows) = run_select_vals(q, state, fault)?;
    Ok(rows
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.render()).collect())
        .collect())
}

impl Connector for MockConnector {
    fn execute(&mut self, stmt: &str) -> ExecOutcome {
        let start = Instant::now();
        {
            let state = self.state.lock().unwrap();
            if !state.alive {
                return ExecOutcome::error(
                    ExecStatus::ConnectionLost,
                    "connection refused: engine process is down",
                    start.elapsed(),
                );
            }
            if state.hung {
                drop(state);
                self.hang_sleep();
                return ExecOutcome::error(
                    ExecStatus::Timeout,
                    "statement timed out (engine unresponsive)",
                    start.elapsed().max(self.timeout),
                );
            }
        }
        match self.run(stmt) {
            Ok(Some(rows)) => ExecOutcome::ok_rows(rows, start.elapsed()),
            Ok(None) => ExecOutcome::ok_dml(start.elapsed()),
            Err(RunError::Sql(msg)) => {
                ExecOutcome::error(ExecStatus::SqlError, msg, start.elapsed())
            }
            Err(RunError::Crashed) => ExecOutcome::error(
                ExecStatus::ConnectionLost,
                "connection lost: engine process died",
                start.elapsed(),
            ),
            Err(RunError::Hung) => {
                self.hang_sleep();
                ExecOutcome::error(
                    ExecStatus::Timeout,
                    "statement timed out",
                    start.elapsed().max(self.timeout),
                )
            }
        }
    }

    fn reset_database(&mut self) -> Result<(), ConnectorError> {
        let mut state = self.state.lock().unwrap();
        if !state.alive {
            return Err(ConnectorError::Unavailable("engine process is down".into()));
        }
        state.tables.clear();
        state.views.clear();
        Ok(())
    }

    fn probe_alive(&mut self) -> Liveness {
        let state = self.state.lock().unwrap();
        if !state.alive {
            return Liveness::Dead;
        }
        if state.hung {
            drop(state);
            // The probe query itself runs into the timeout.
            std::thread::sleep(self.timeout.min(Duration::from_millis(500)));
            return Liveness::Unresponsive;
        }
        Liveness::Alive
    }

    fn restart(&mut self) -> Result<(), ConnectorError> {
        let mut state = self.state.lock().unwrap();
        *state = EngineState::fresh();
        Ok(())
    }

    fn engine_version(&self) -> String {
        format!("mock 1.0 (fault={})", self.fault.name())
    }
}

/// Summary string for fault lists in help text.
pub fn fault_names() -> Vec<&'static str> {
    let mut v = vec!["none"];
    v.extend(MockFault::CATALOG.iter().map(|f| f.name()));
    v
}

// Keep HashMap import useful for future state extensions.
#[allow(unused)]
type _Unused = HashMap<String, ()>;
