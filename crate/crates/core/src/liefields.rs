//! Exact polynomial vector fields, Lie brackets, and the structural checks
//! (nilpotency, constant brackets, Hörmander rank) on families of fields.
//!
//! All symbolic work uses arbitrary-precision rationals; floats appear only
//! when a field is evaluated at a point.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::signature::Word;

/// Pivot tolerance of the rank computation.
pub const RANK_TOL: f64 = 1e-10;

/// Multivariate polynomial with rational coefficients in `m` variables.
/// Terms are keyed by exponent multi-index; zero coefficients are never stored.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Polynomial {
    vars: usize,
    terms: BTreeMap<Vec<u32>, BigRational>,
}

impl Polynomial {
    pub fn zero(vars: usize) -> Self {
        Self {
            vars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(vars: usize, c: BigRational) -> Self {
        let mut p = Self::zero(vars);
        p.add_term(vec![0; vars], c);
        p
    }

    pub fn from_int(vars: usize, c: i64) -> Self {
        Self::constant(vars, BigRational::from_integer(BigInt::from(c)))
    }

    /// The coordinate `x_{k+1}` (0-based `k`).
    pub fn var(vars: usize, k: usize) -> Self {
        let mut e = vec![0; vars];
        e[k] = 1;
        let mut p = Self::zero(vars);
        p.add_term(e, BigRational::one());
        p
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &BigRational)> {
        self.terms.iter()
    }

    fn add_term(&mut self, exps: Vec<u32>, c: BigRational) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(exps) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                *o.get_mut() += c;
                if o.get().is_zero() {
                    o.remove();
                }
            }
        }
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        let mut out = Self::zero(self.vars);
        for (e, v) in &self.terms {
            out.add_term(e.clone(), v * c);
        }
        out
    }

    /// `∂/∂x_{k+1}`.
    pub fn derivative(&self, k: usize) -> Self {
        let mut out = Self::zero(self.vars);
        for (e, v) in &self.terms {
            if e[k] == 0 {
                continue;
            }
            let mut e2 = e.clone();
            e2[k] -= 1;
            out.add_term(e2, v * BigRational::from_integer(BigInt::from(e[k])));
        }
        out
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut out = Self::from_int(self.vars, 1);
        for _ in 0..k {
            out = &out * self;
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(e, c)| {
                let mono: f64 = e.iter().zip(x).map(|(&p, &xi)| xi.powi(p as i32)).product();
                c.to_f64().unwrap_or(f64::NAN) * mono
            })
            .sum()
    }

    /// Float copy of the terms, for fast evaluation.
    pub fn to_float(&self) -> Vec<(f64, Vec<u32>)> {
        self.terms
            .iter()
            .map(|(e, c)| (c.to_f64().unwrap_or(f64::NAN), e.clone()))
            .collect()
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (e, v) in &rhs.terms {
            out.add_term(e.clone(), v.clone());
        }
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (e, v) in &rhs.terms {
            out.add_term(e.clone(), -v.clone());
        }
        out
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(&-BigRational::one())
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero(self.vars);
        for (e1, v1) in &self.terms {
            for (e2, v2) in &rhs.terms {
                let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.add_term(e, v1 * v2);
            }
        }
        out
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, c) in self.terms.iter().rev() {
            let neg = c.is_negative();
            let abs = c.abs();
            if first {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, "{}", if neg { " - " } else { " + " })?;
            }
            first = false;
            let mono: Vec<String> = e
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0)
                .map(|(k, &p)| {
                    if p == 1 {
                        format!("x{}", k + 1)
                    } else {
                        format!("x{}^{}", k + 1, p)
                    }
                })
                .collect();
            if mono.is_empty() {
                write!(f, "{abs}")?;
            } else if abs.is_one() {
                write!(f, "{}", mono.join("*"))?;
            } else {
                write!(f, "{abs}*{}", mono.join("*"))?;
            }
        }
        Ok(())
    }
}

/// Vector field on ℝ^m with polynomial components.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PolyVectorField {
    comps: Vec<Polynomial>,
}

impl PolyVectorField {
    pub fn new(comps: Vec<Polynomial>) -> Result<Self> {
        let m = comps.len();
        if m == 0 {
            return domain("vector field needs at least one component");
        }
        if comps.iter().any(|p| p.vars() != m) {
            return domain(format!("every component must be a polynomial in {m} variables"));
        }
        Ok(Self { comps })
    }

    pub fn zero(m: usize) -> Self {
        Self {
            comps: vec![Polynomial::zero(m); m],
        }
    }

    /// Parse one component per string, e.g. `["1", "0", "2*x2"]`.
    pub fn parse(components: &[&str]) -> Result<Self> {
        let m = components.len();
        let comps = components
            .iter()
            .enumerate()
            .map(|(i, s)| parse_polynomial(s, m).map_err(|e| relabel(e, i + 1)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(comps)
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.comps
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(Polynomial::is_zero)
    }

    pub fn degree(&self) -> u32 {
        self.comps.iter().map(Polynomial::degree).max().unwrap_or(0)
    }

    pub fn is_constant(&self) -> bool {
        self.comps.iter().all(|p| p.degree() == 0)
    }

    pub fn scale(&self, c: &BigRational) -> Self {
        Self {
            comps: self.comps.iter().map(|p| p.scale(c)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        check_dims(self, other)?;
        Ok(Self {
            comps: self.comps.iter().zip(&other.comps).map(|(a, b)| a + b).collect(),
        })
    }

    /// `V·∇W`: component `i` is `V^l ∂_l W^i`.
    fn directional(&self, w: &Self) -> Self {
        let m = self.dim();
        let comps = (0..m)
            .map(|i| {
                (0..m).fold(Polynomial::zero(m), |acc, l| {
                    &acc + &(&self.comps[l] * &w.comps[i].derivative(l))
                })
            })
            .collect();
        Self { comps }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.comps.iter().map(|p| p.eval(x)).collect()
    }

    /// Float copy for repeated evaluation.
    pub fn compile(&self) -> FloatField {
        FloatField::from_exact(self)
    }

    /// One component per line, in the field-file syntax.
    pub fn canonical_text(&self) -> String {
        self.comps.iter().map(|p| p.to_string()).collect::<Vec<_>>().join("\n")
    }
}

impl fmt::Display for PolyVectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.comps.iter().map(|p| p.to_string()).collect();
        write!(f, "({})", parts.join(", "))
    }
}

fn relabel(e: Error, component: usize) -> Error {
    match e {
        Error::Parse { msg, .. } => Error::Parse {
            line: component,
            msg,
        },
        other => other,
    }
}

fn check_dims(v: &PolyVectorField, w: &PolyVectorField) -> Result<()> {
    if v.dim() != w.dim() {
        return domain(format!(
            "vector fields live in different dimensions ({} vs {})",
            v.dim(),
            w.dim()
        ));
    }
    Ok(())
}

/// Lie bracket `[V,W]^i = V^l ∂_l W^i - W^l ∂_l V^i`.
pub fn bracket(v: &PolyVectorField, w: &PolyVectorField) -> Result<PolyVectorField> {
    check_dims(v, w)?;
    let a = v.directional(w);
    let b = w.directional(v);
    Ok(PolyVectorField {
        comps: a.comps.iter().zip(&b.comps).map(|(x, y)| x - y).collect(),
    })
}

fn check_family(fields: &[PolyVectorField]) -> Result<usize> {
    let first = fields
        .first()
        .ok_or_else(|| Error::Domain("empty family of vector fields".into()))?;
    let m = first.dim();
    if fields.iter().any(|f| f.dim() != m) {
        return domain("vector fields in a family must share their dimension");
    }
    Ok(m)
}

/// Left-nested bracket `[V_{i1} ⋯ V_{ik}] = [[V_{i1} ⋯ V_{i(k-1)}], V_{ik}]`.
pub fn iterated_bracket(fields: &[PolyVectorField], word: &Word) -> Result<PolyVectorField> {
    check_family(fields)?;
    let letters = word.letters();
    if letters.is_empty() {
        return domain("bracket word must be non-empty");
    }
    if let Some(&bad) = letters.iter().find(|&&l| l >= fields.len()) {
        return domain(format!(
            "letter {} is out of range for {} fields",
            bad + 1,
            fields.len()
        ));
    }
    let mut acc = fields[letters[0]].clone();
    for &l in &letters[1..] {
        acc = bracket(&acc, &fields[l])?;
    }
    Ok(acc)
}

/// Every left-nested bracket of each length `1..=max_len`, in lexicographic
/// word order. Entry `k-1` holds the `d^k` brackets of length `k`.
pub fn bracket_levels(fields: &[PolyVectorField], max_len: usize) -> Result<Vec<Vec<PolyVectorField>>> {
    check_family(fields)?;
    let d = fields.len();
    let mut levels: Vec<Vec<PolyVectorField>> = Vec::with_capacity(max_len);
    if max_len == 0 {
        return Ok(levels);
    }
    levels.push(fields.to_vec());
    for _ in 1..max_len {
        let prev = levels.last().unwrap();
        let mut cur = Vec::with_capacity(prev.len() * d);
        for p in prev {
            for f in fields {
                cur.push(if p.is_zero() {
                    PolyVectorField::zero(p.dim())
                } else {
                    bracket(p, f)?
                });
            }
        }
        levels.push(cur);
    }
    Ok(levels)
}

/// Result of a nilpotency check; `witness` is a word whose bracket is non-zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NilpotencyReport {
    pub nilpotent: bool,
    pub witness: Option<Vec<usize>>,
}

/// True iff every left-nested bracket of length `n` vanishes.
pub fn is_nilpotent(fields: &[PolyVectorField], n: usize) -> Result<(bool, Option<Word>)> {
    if n < 2 {
        return domain("nilpotency order must be at least 2");
    }
    let levels = bracket_levels(fields, n)?;
    let d = fields.len();
    let witness = levels[n - 1]
        .iter()
        .position(|f| !f.is_zero())
        .map(|i| Word::from_index(i, n, d));
    Ok((witness.is_none(), witness))
}

/// True iff every bracket of length `2..=up_to` has constant components.
pub fn constant_brackets(fields: &[PolyVectorField], up_to: usize) -> Result<bool> {
    if up_to < 2 {
        return domain("constant-bracket check needs up_to >= 2");
    }
    let levels = bracket_levels(fields, up_to)?;
    Ok(levels[1..].iter().all(|lvl| lvl.iter().all(PolyVectorField::is_constant)))
}

/// Rank of the brackets of length `<= up_to` evaluated at `x`.
pub fn hormander_rank(fields: &[PolyVectorField], x: &[f64], up_to: usize) -> Result<usize> {
    if up_to < 1 {
        return domain("Hörmander rank needs up_to >= 1");
    }
    let m = check_family(fields)?;
    if x.len() != m {
        return domain(format!("point has dimension {}, fields live in {m}", x.len()));
    }
    let rows: Vec<Vec<f64>> = bracket_levels(fields, up_to)?
        .iter()
        .flatten()
        .map(|f| f.eval(x))
        .collect();
    Ok(matrix_rank(rows, m, RANK_TOL))
}

/// Row-echelon rank with partial pivoting.
pub fn matrix_rank(mut rows: Vec<Vec<f64>>, cols: usize, tol: f64) -> usize {
    let mut rank = 0;
    for c in 0..cols {
        let pivot = (rank..rows.len())
            .max_by(|&a, &b| rows[a][c].abs().total_cmp(&rows[b][c].abs()));
        let Some(p) = pivot else { break };
        if rows[p][c].abs() <= tol {
            continue;
        }
        rows.swap(rank, p);
        for r in rank + 1..rows.len() {
            let f = rows[r][c] / rows[rank][c];
            if f != 0.0 {
                for k in c..cols {
                    rows[r][k] -= f * rows[rank][k];
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Float polynomial vector field with cached monomials, used in ODE loops.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatField {
    dim: usize,
    comps: Vec<Vec<(f64, Vec<u32>)>>,
}

impl FloatField {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            comps: vec![Vec::new(); dim],
        }
    }

    pub fn from_exact(f: &PolyVectorField) -> Self {
        Self {
            dim: f.dim(),
            comps: f.components().iter().map(Polynomial::to_float).collect(),
        }
    }

    /// `Σ c_k F_k`, merging equal monomials.
    pub fn linear_combination<'a>(
        dim: usize,
        parts: impl IntoIterator<Item = (f64, &'a FloatField)>,
    ) -> Self {
        let mut acc: Vec<BTreeMap<Vec<u32>, f64>> = vec![BTreeMap::new(); dim];
        for (c, f) in parts {
            if c == 0.0 {
                continue;
            }
            for (i, comp) in f.comps.iter().enumerate() {
                for (coef, e) in comp {
                    *acc[i].entry(e.clone()).or_insert(0.0) += c * coef;
                }
            }
        }
        Self {
            dim,
            comps: acc
                .into_iter()
                .map(|m| m.into_iter().filter(|(_, v)| *v != 0.0).map(|(e, v)| (v, e)).collect())
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(Vec::is_empty)
    }

    pub fn degree(&self) -> u32 {
        self.comps
            .iter()
            .flatten()
            .map(|(_, e)| e.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, comp) in out.iter_mut().zip(&self.comps) {
            *o = comp
                .iter()
                .map(|(c, e)| c * e.iter().zip(x).map(|(&p, &xi)| ipow(xi, p)).product::<f64>())
                .sum();
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }

    /// Jacobian `∇F`, row-major: entry `(i, l)` is `∂_l F^i`.
    pub fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        let m = self.dim;
        out.iter_mut().for_each(|v| *v = 0.0);
        for (i, comp) in self.comps.iter().enumerate() {
            for (c, e) in comp {
                for l in 0..m {
                    if e[l] == 0 {
                        continue;
                    }
                    let mut term = c * e[l] as f64;
                    for (k, (&p, &xk)) in e.iter().zip(x).enumerate() {
                        term *= if k == l { ipow(xk, p - 1) } else { ipow(xk, p) };
                    }
                    out[i * m + l] += term;
                }
            }
        }
    }

    pub fn jacobian(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.jacobian_into(x, &mut out);
        out
    }
}

fn ipow(x: f64, p: u32) -> f64 {
    match p {
        0 => 1.0,
        1 => x,
        2 => x * x,
        _ => x.powi(p as i32),
    }
}

// ---------------------------------------------------------------------------
// Polynomial parser: sums of products of numbers, x1..xm, powers and parens.

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    vars: usize,
}

fn parse_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parse {
        line: 0,
        msg: msg.into(),
    })
}

/// Parse a polynomial such as `-4`, `2*x2`, `x1^2 - 3/2*x1*x3 + (x2 + 1)^2`.
pub fn parse_polynomial(text: &str, vars: usize) -> Result<Polynomial> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        vars,
    };
    let out = p.expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return parse_err(format!("unexpected {:?} in {text:?}", p.src[p.pos] as char));
    }
    Ok(out)
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Polynomial> {
        let mut acc = match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                -&self.term()?
            }
            Some(b'+') => {
                self.pos += 1;
                self.term()?
            }
            _ => self.term()?,
        };
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    acc = &acc + &self.term()?;
                }
                Some(b'-') => {
                    self.pos += 1;
                    acc = &acc - &self.term()?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Polynomial> {
        let mut acc = self.power()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    acc = &acc * &self.power()?;
                }
                Some(b'/') => {
                    self.pos += 1;
                    let d = self.power()?;
                    if d.degree() != 0 || d.is_zero() {
                        return parse_err("division is only allowed by non-zero constants");
                    }
                    let c = d.terms().next().map(|(_, c)| c.clone()).unwrap();
                    acc = acc.scale(&c.recip());
                }
                _ => return Ok(acc),
            }
        }
    }

    fn power(&mut self) -> Result<Polynomial> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.skip_ws();
            let k = self.integer()?;
            let k: u32 = k
                .to_u32()
                .ok_or_else(|| Error::Parse { line: 0, msg: "exponent too large".into() })?;
            return Ok(base.pow(k));
        }
        Ok(base)
    }

    fn integer(&mut self) -> Result<BigInt> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return parse_err("expected an integer");
        }
        let s = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        Ok(s.parse::<BigInt>().unwrap())
    }

    fn atom(&mut self) -> Result<Polynomial> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                if self.peek() != Some(b')') {
                    return parse_err("missing closing parenthesis");
                }
                self.pos += 1;
                Ok(e)
            }
            Some(b'-') => {
                self.pos += 1;
                Ok(-&self.power()?)
            }
            Some(b'x') => {
                self.pos += 1;
                let k = self.integer()?;
                let k = k.to_usize().unwrap_or(0);
                if k == 0 || k > self.vars {
                    return parse_err(format!("variable x{k} outside x1..x{}", self.vars));
                }
                Ok(Polynomial::var(self.vars, k - 1))
            }
            Some(c) if c.is_ascii_digit() => {
                let int = self.integer()?;
                let mut value = BigRational::from_integer(int);
                if self.src.get(self.pos) == Some(&b'.') {
                    self.pos += 1;
                    let start = self.pos;
                    let frac = self.integer()?;
                    let digits = (self.pos - start) as u32;
                    let den = BigInt::from(10).pow(digits);
                    value += BigRational::new(frac, den);
                }
                Ok(Polynomial::constant(self.vars, value))
            }
            Some(c) => parse_err(format!("unexpected character {:?}", c as char)),
            None => parse_err("unexpected end of expression"),
        }
    }
}

/// Parse a field file: an `m d` header, then `d` blocks of `m` polynomial
/// lines. Blank lines and `#` comments are ignored.
pub fn parse_field_file(text: &str) -> Result<Vec<PolyVectorField>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 0,
        msg: "missing `m d` header".into(),
    })?;
    let nums: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Parse {
            line: hline,
            msg: format!("bad header {header:?}"),
        })?;
    let [m, d] = nums[..] else {
        return Err(Error::Parse {
            line: hline,
            msg: "header must be `m d`".into(),
        });
    };
    if m == 0 || d == 0 {
        return Err(Error::Parse {
            line: hline,
            msg: "m and d must be positive".into(),
        });
    }
    let mut fields = Vec::with_capacity(d);
    for _ in 0..d {
        let mut comps = Vec::with_capacity(m);
        for _ in 0..m {
            let (ln, l) = lines.next().ok_or(Error::Parse {
                line: 0,
                msg: format!("expected {d} blocks of {m} component lines"),
            })?;
            let p = parse_polynomial(l, m).map_err(|e| match e {
                Error::Parse { msg, .. } => Error::Parse { line: ln, msg },
                other => other,
            })?;
            comps.push(p);
        }
        fields.push(PolyVectorField::new(comps)?);
    }
    if let Some((ln, _)) = lines.next() {
        return Err(Error::Parse {
            line: ln,
            msg: "trailing content after the last field".into(),
        });
    }
    Ok(fields)
}

/// SHA-256 of the canonical field-file text, hex encoded.
pub fn fields_hash(fields: &[PolyVectorField]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(write_field_file(fields).as_bytes()))
}

/// Serialize fields in the field-file format.
pub fn write_field_file(fields: &[PolyVectorField]) -> String {
    let m = fields.first().map_or(0, PolyVectorField::dim);
    let mut out = format!("{m} {}\n", fields.len());
    for (k, f) in fields.iter().enumerate() {
        out.push_str(&format!("# V{}\n", k + 1));
        for p in f.components() {
            out.push_str(&p.to_string());
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn yamato() -> Vec<PolyVectorField> {
        vec![
            PolyVectorField::zero(3),
            PolyVectorField::parse(&["1", "0", "2*x2"]).unwrap(),
            PolyVectorField::parse(&["0", "1", "-2*x1"]).unwrap(),
        ]
    }

    #[test]
    fn parser_handles_common_syntax() {
        let p = parse_polynomial("x1^2 - 3/2*x1*x3 + (x2 + 1)^2", 3).unwrap();
        let x = [0.5, -1.0, 2.0];
        let want = 0.25 - 1.5 * 0.5 * 2.0 + 0.0;
        assert!((p.eval(&x) - want).abs() < 1e-15);
        assert!(parse_polynomial("x4", 3).is_err());
        assert!(parse_polynomial("2*", 3).is_err());
        assert!(parse_polynomial("x1/x2", 3).is_err());
        assert_eq!(parse_polynomial("0.25*x1", 1).unwrap().eval(&[2.0]), 0.5);
        let round = parse_polynomial(&p.to_string(), 3).unwrap();
        assert_eq!(round, p);
    }

    #[test]
    fn bracket_examples() {
        let y = yamato();
        assert!(bracket(&y[1], &y[1]).unwrap().is_zero());
        let b = bracket(&y[1], &y[2]).unwrap();
        assert_eq!(b, PolyVectorField::parse(&["0", "0", "-4"]).unwrap());
        assert!(bracket(&b, &y[1]).unwrap().is_zero());
        assert!(bracket(&y[1], &PolyVectorField::zero(2)).is_err());
    }

    #[test]
    fn iterated_bracket_examples() {
        let y = yamato();
        assert_eq!(iterated_bracket(&y, &Word::new(vec![1])).unwrap(), y[1]);
        let w = iterated_bracket(&y, &Word::new(vec![1, 2])).unwrap();
        assert_eq!(w.eval(&[0.0; 3]), vec![0.0, 0.0, -4.0]);
        assert!(iterated_bracket(&y, &Word::new(vec![1, 2, 1])).unwrap().is_zero());
        assert!(iterated_bracket(&y, &Word::new(vec![3])).is_err());
    }

    #[test]
    fn nilpotency_examples() {
        let y = yamato();
        assert_eq!(is_nilpotent(&y, 3).unwrap(), (true, None));
        let (ok, w) = is_nilpotent(&y, 2).unwrap();
        assert!(!ok);
        assert_eq!(w.unwrap().one_based(), vec![2, 3]);
        let single = vec![PolyVectorField::parse(&["x1^2", "x2"]).unwrap()];
        assert!(is_nilpotent(&single, 2).unwrap().0);
        assert!(is_nilpotent(&y, 1).is_err());
    }

    #[test]
    fn constant_bracket_examples() {
        assert!(constant_brackets(&yamato(), 3).unwrap());
        let a = vec![
            PolyVectorField::parse(&["x2", "0"]).unwrap(),
            PolyVectorField::parse(&["0", "1"]).unwrap(),
        ];
        assert_eq!(
            bracket(&a[0], &a[1]).unwrap(),
            PolyVectorField::parse(&["-1", "0"]).unwrap()
        );
        assert!(constant_brackets(&a, 3).unwrap());
        let b = vec![
            PolyVectorField::parse(&["x2^2", "0"]).unwrap(),
            PolyVectorField::parse(&["0", "1"]).unwrap(),
        ];
        assert!(!constant_brackets(&b, 3).unwrap());
    }

    #[test]
    fn hormander_examples() {
        let y = yamato();
        assert_eq!(hormander_rank(&y, &[0.0; 3], 2).unwrap(), 3);
        assert_eq!(hormander_rank(&y, &[0.0; 3], 1).unwrap(), 2);
        assert_eq!(hormander_rank(&[PolyVectorField::zero(3)], &[1.0; 3], 3).unwrap(), 0);
        let e = vec![
            PolyVectorField::parse(&["1", "0"]).unwrap(),
            PolyVectorField::parse(&["0", "1"]).unwrap(),
        ];
        assert_eq!(hormander_rank(&e, &[0.3, 0.1], 1).unwrap(), 2);
    }

    #[test]
    fn field_file_round_trip() {
        let text = "# Yamato\n3 3\n0\n0\n0\n1\n0\n2*x2   # A2\n0\n1\n-2*x1\n";
        let f = parse_field_file(text).unwrap();
        assert_eq!(f, yamato());
        assert_eq!(parse_field_file(&write_field_file(&f)).unwrap(), f);
        assert!(matches!(
            parse_field_file("3 1\n0\n0\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            parse_field_file("1 1\nx1 +\n"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn float_field_matches_exact() {
        let f = PolyVectorField::parse(&["x1^2*x2 - 3", "x2^3 + x1", "1/3*x1*x2"]).unwrap();
        let ff = f.compile();
        let x = [0.7, -1.3, 0.2];
        let (a, b) = (f.eval(&x), ff.eval(&x));
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-14);
        }
        // Jacobian against central differences.
        let j = ff.jacobian(&x);
        let eps = 1e-6;
        for l in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[l] += eps;
            xm[l] -= eps;
            let (fp, fm) = (ff.eval(&xp), ff.eval(&xm));
            for i in 0..3 {
                assert!((j[i * 3 + l] - (fp[i] - fm[i]) / (2.0 * eps)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rank_of_dependent_rows() {
        let rows = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![0.0, 0.0]];
        assert_eq!(matrix_rank(rows, 2, 1e-10), 1);
    }
}
