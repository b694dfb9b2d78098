//! Lexer and recursive-descent parser for `.ct` source text.

use super::ast::{AccessSize, BinOp, Expr, FnDef, Program, Stmt};
use super::word::Word;
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: expected {expected}, found {found}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub expected: String,
    pub found: String,
}

const KEYWORDS: &[&str] = &[
    "fn", "skip", "load", "load1", "store", "store1", "stackalloc", "as", "random", "input", "output", "if", "else",
    "while", "lts",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Num(Word),
    Sym(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Num(n) => write!(f, "`{n}`"),
            Tok::Sym(s) => write!(f, "`{s}`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

// Longest symbols first so `<<` wins over `<`.
const SYMBOLS: &[&str] = &[
    "->", "<<", ">>", "==", "!=", "(", ")", "{", "}", ",", ";", "=", "+", "-", "*", "/", "%", "&", "|", "^", "<",
];

fn lex(src: &str) -> Result<Vec<Spanned>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, column, expected: &str, found: String| ParseError {
        line,
        column,
        expected: expected.to_string(),
        found,
    };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start;
            toks.push(Spanned { tok: Tok::Ident(chars[start..i].iter().collect()), line: start_line, column: start_col });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            col += i - start;
            let parsed = if let Some(hex) = text.strip_prefix("0x").or_else(|| text.strip_prefix("0X")) {
                u32::from_str_radix(hex, 16)
            } else {
                text.parse::<u32>()
            };
            let n = parsed.map_err(|_| err(start_line, start_col, "a 32-bit literal", format!("`{text}`")))?;
            toks.push(Spanned { tok: Tok::Num(n), line: start_line, column: start_col });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(sym) => {
                i += sym.len();
                col += sym.len();
                toks.push(Spanned { tok: Tok::Sym(sym), line: start_line, column: start_col });
            }
            None => return Err(err(start_line, start_col, "a token", format!("`{c}`"))),
        }
    }
    toks.push(Spanned { tok: Tok::Eof, line, column: col });
    Ok(toks)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, expected: &str) -> PResult<T> {
        let s = &self.toks[self.pos];
        Err(ParseError { line: s.line, column: s.column, expected: expected.to_string(), found: s.tok.to_string() })
    }

    fn is_sym(&self, sym: &str) -> bool {
        matches!(self.peek(), Tok::Sym(s) if *s == sym)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn expect_sym(&mut self, sym: &str) -> PResult<()> {
        if self.is_sym(sym) {
            self.bump();
            Ok(())
        } else {
            self.error(&format!("`{sym}`"))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            self.error(&format!("`{kw}`"))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek() {
            Tok::Ident(s) if !is_keyword(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => self.error(what),
        }
    }

    fn number(&mut self, what: &str) -> PResult<Word> {
        match self.peek() {
            Tok::Num(n) => {
                let n = *n;
                self.bump();
                Ok(n)
            }
            _ => self.error(what),
        }
    }

    fn program(&mut self) -> PResult<Program> {
        let mut fns = Vec::new();
        while *self.peek() != Tok::Eof {
            fns.push(self.function()?);
        }
        if fns.is_empty() {
            return self.error("a function definition");
        }
        Ok(Program::new(fns))
    }

    fn name_list(&mut self, what: &str) -> PResult<Vec<String>> {
        self.expect_sym("(")?;
        let mut names = Vec::new();
        if self.is_sym(")") {
            self.bump();
            return Ok(names);
        }
        loop {
            names.push(self.ident(what)?);
            if self.is_sym(",") {
                self.bump();
            } else if self.is_sym(")") {
                self.bump();
                return Ok(names);
            } else {
                return self.error("`,` or `)`");
            }
        }
    }

    fn function(&mut self) -> PResult<FnDef> {
        self.expect_kw("fn")?;
        let name = self.ident("a function name")?;
        let params = self.name_list("a parameter name or `)`")?;
        let returns = if self.is_sym("->") {
            self.bump();
            self.name_list("a return name or `)`")?
        } else {
            Vec::new()
        };
        let body = self.block()?;
        Ok(FnDef { name, params, returns, body })
    }

    fn block(&mut self) -> PResult<Stmt> {
        self.expect_sym("{")?;
        let mut stmts = Vec::new();
        while !self.is_sym("}") {
            if *self.peek() == Tok::Eof {
                return self.error("`}`");
            }
            stmts.push(self.stmt()?);
        }
        self.bump();
        Ok(Stmt::seq(stmts))
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let Tok::Ident(head) = self.peek().clone() else {
            return self.error("a statement");
        };
        match head.as_str() {
            "skip" => {
                self.bump();
                self.expect_sym(";")?;
                Ok(Stmt::Skip)
            }
            "store" | "store1" => {
                self.bump();
                let size = if head == "store" { AccessSize::Word } else { AccessSize::Byte };
                self.expect_sym("(")?;
                let addr = self.expr()?;
                self.expect_sym(",")?;
                let val = self.expr()?;
                self.expect_sym(")")?;
                self.expect_sym(";")?;
                Ok(Stmt::Store(addr, val, size))
            }
            "stackalloc" => {
                self.bump();
                let size = self.number("an allocation size")?;
                self.expect_kw("as")?;
                let var = self.ident("a variable name")?;
                let body = self.block()?;
                Ok(Stmt::StackAlloc { size, var, body: Box::new(body) })
            }
            "random" => {
                self.bump();
                self.expect_kw("as")?;
                let var = self.ident("a variable name")?;
                self.expect_sym(";")?;
                Ok(Stmt::Random(var))
            }
            "output" => {
                self.bump();
                self.expect_sym("(")?;
                let e = self.expr()?;
                self.expect_sym(")")?;
                self.expect_sym(";")?;
                Ok(Stmt::Output(e))
            }
            "if" => self.if_stmt(),
            "while" => {
                self.bump();
                self.expect_sym("(")?;
                let c = self.expr()?;
                self.expect_sym(")")?;
                let body = self.block()?;
                Ok(Stmt::While(c, Box::new(body)))
            }
            _ if is_keyword(&head) => self.error("a statement"),
            _ => {
                if matches!(self.peek_at(1), Tok::Sym("(")) {
                    let func = self.ident("a function name")?;
                    let args = self.args()?;
                    self.expect_sym(";")?;
                    return Ok(Stmt::Call { results: Vec::new(), func, args });
                }
                let mut targets = vec![self.ident("a variable name")?];
                while self.is_sym(",") {
                    self.bump();
                    targets.push(self.ident("a variable name")?);
                }
                self.expect_sym("=")?;
                let s = self.rhs(targets)?;
                self.expect_sym(";")?;
                Ok(s)
            }
        }
    }

    fn if_stmt(&mut self) -> PResult<Stmt> {
        self.expect_kw("if")?;
        self.expect_sym("(")?;
        let c = self.expr()?;
        self.expect_sym(")")?;
        let then = self.block()?;
        let els = if self.is_kw("else") {
            self.bump();
            if self.is_kw("if") {
                self.if_stmt()?
            } else {
                self.block()?
            }
        } else {
            Stmt::Skip
        };
        Ok(Stmt::If(c, Box::new(then), Box::new(els)))
    }

    fn rhs(&mut self, targets: Vec<String>) -> PResult<Stmt> {
        let single = |p: &Self, targets: &Vec<String>| -> PResult<String> {
            if targets.len() == 1 {
                Ok(targets[0].clone())
            } else {
                p.error("a function call (only calls assign several results)")
            }
        };
        if let Tok::Ident(head) = self.peek().clone() {
            match head.as_str() {
                "input" => {
                    let x = single(self, &targets)?;
                    self.bump();
                    self.expect_sym("(")?;
                    self.expect_sym(")")?;
                    return Ok(Stmt::Input(x));
                }
                "load" | "load1" => {
                    let x = single(self, &targets)?;
                    self.bump();
                    let size = if head == "load" { AccessSize::Word } else { AccessSize::Byte };
                    self.expect_sym("(")?;
                    let a = self.expr()?;
                    self.expect_sym(")")?;
                    return Ok(Stmt::Load(x, a, size));
                }
                _ if !is_keyword(&head) && matches!(self.peek_at(1), Tok::Sym("(")) => {
                    self.bump();
                    let args = self.args()?;
                    return Ok(Stmt::Call { results: targets, func: head, args });
                }
                _ => {}
            }
        }
        let x = single(self, &targets)?;
        Ok(Stmt::Assign(x, self.expr()?))
    }

    fn args(&mut self) -> PResult<Vec<Expr>> {
        self.expect_sym("(")?;
        let mut args = Vec::new();
        if self.is_sym(")") {
            self.bump();
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            if self.is_sym(",") {
                self.bump();
            } else if self.is_sym(")") {
                self.bump();
                return Ok(args);
            } else {
                return self.error("`,` or `)`");
            }
        }
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.binary(0)
    }

    fn binary(&mut self, min_level: u8) -> PResult<Expr> {
        let mut lhs = self.primary()?;
        loop {
            let Some((op, level)) = self.infix() else { break };
            if level < min_level {
                break;
            }
            self.bump();
            let rhs = self.binary(level + 1)?;
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn infix(&self) -> Option<(BinOp, u8)> {
        let Tok::Sym(s) = self.peek() else { return None };
        Some(match *s {
            "|" => (BinOp::Or, 1),
            "^" => (BinOp::Xor, 2),
            "&" => (BinOp::And, 3),
            "==" => (BinOp::Eq, 4),
            "!=" => (BinOp::Ne, 4),
            "<" => (BinOp::Ltu, 5),
            "<<" => (BinOp::Shl, 6),
            ">>" => (BinOp::Shr, 6),
            "+" => (BinOp::Add, 7),
            "-" => (BinOp::Sub, 7),
            "*" => (BinOp::Mul, 8),
            "/" => (BinOp::Divu, 8),
            "%" => (BinOp::Remu, 8),
            _ => return None,
        })
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Num(n) => {
                self.bump();
                Ok(Expr::Lit(n))
            }
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Ident(s) if s == "lts" => {
                self.bump();
                self.expect_sym("(")?;
                let a = self.expr()?;
                self.expect_sym(",")?;
                let b = self.expr()?;
                self.expect_sym(")")?;
                Ok(Expr::bin(BinOp::Lts, a, b))
            }
            Tok::Ident(s) if !is_keyword(&s) => {
                self.bump();
                Ok(Expr::Var(s))
            }
            _ => self.error("an expression"),
        }
    }
}

/// Parses a whole program.
pub fn parse(text: &str) -> Result<Program, ParseError> {
    let toks = lex(text)?;
    Parser { toks, pos: 0 }.program()
}

/// Parses a single expression (used by tests and the CLI).
pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::Eof {
        return p.error("end of expression");
    }
    Ok(e)
}
