//! Ensemble readers and writers.
//!
//! Two formats are accepted. The canonical one is a JSON document
//!
//! ```text
//! {"ne": 2, "nr": 1,
//!  "nu": [{"coef": 1, "b": [0, 1], "d": [2, 0]}, {"coef": "1/3", "b": [1, 0], "d": [0, 3]}],
//!  "mu": [{"coef": 1, "d": [2, 1]}]}
//! ```
//!
//! The other is a polynomial pair such as `nu = r1*x1^2 + 1/3*r0*x2^3 ; mu = x1^2*x2`.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CheckNodeTerm, Coefficient, EnsembleError, EnsembleSpec, VariableNodeTerm};

/// Parses either the JSON document or the polynomial text form.
pub fn parse_ensemble(text: &str) -> Result<EnsembleSpec, EnsembleError> {
    if text.trim_start().starts_with('{') {
        parse_json(text)
    } else {
        parse_text(text)
    }
}

#[derive(Serialize, Deserialize)]
struct JsonDoc {
    ne: usize,
    nr: usize,
    nu: Vec<JsonVn>,
    mu: Vec<JsonCn>,
}

#[derive(Serialize, Deserialize)]
struct JsonVn {
    coef: Value,
    b: Vec<u32>,
    d: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct JsonCn {
    coef: Value,
    d: Vec<u32>,
}

fn parse_json(text: &str) -> Result<EnsembleSpec, EnsembleError> {
    let doc: JsonDoc =
        serde_json::from_str(text).map_err(|e| EnsembleError::Document(e.to_string()))?;
    let coef = |v: &Value| -> Result<Coefficient, EnsembleError> {
        match v {
            Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Ok(Coefficient::Exact(Ratio::from_integer(i128::from(i))))
                } else if let Some(u) = n.as_u64() {
                    Ok(Coefficient::Exact(Ratio::from_integer(i128::from(u))))
                } else {
                    Ok(Coefficient::Real(n.as_f64().unwrap_or(f64::NAN)))
                }
            }
            Value::String(s) => parse_coefficient(s.trim())
                .ok_or_else(|| EnsembleError::Document(format!("bad coefficient {s:?}"))),
            other => Err(EnsembleError::Document(format!("bad coefficient {other}"))),
        }
    };
    // `r` indices start at 0 and `x` indices at 1.
    let index_check = |len: usize, limit: usize, var: char| {
        if len > limit {
            let first = usize::from(var == 'x');
            Err(EnsembleError::UnknownVariable {
                name: format!("{var}{}", len - 1 + first),
                pos: 0,
            })
        } else {
            Ok(())
        }
    };
    let mut vnodes = Vec::with_capacity(doc.nu.len());
    for t in &doc.nu {
        index_check(t.b.len(), doc.nr + 1, 'r')?;
        index_check(t.d.len(), doc.ne, 'x')?;
        vnodes.push(VariableNodeTerm {
            coefficient: coef(&t.coef)?,
            b: pad(&t.b, doc.nr + 1),
            d: pad(&t.d, doc.ne),
        });
    }
    let mut cnodes = Vec::with_capacity(doc.mu.len());
    for t in &doc.mu {
        index_check(t.d.len(), doc.ne, 'x')?;
        cnodes.push(CheckNodeTerm {
            coefficient: coef(&t.coef)?,
            d: pad(&t.d, doc.ne),
        });
    }
    EnsembleSpec::new(doc.ne, doc.nr, vnodes, cnodes)
}

fn pad(v: &[u32], len: usize) -> Vec<u32> {
    let mut out = v.to_vec();
    out.resize(len, 0);
    out
}

/// `p/q`, integers and plain integers are exact; anything else that parses as
/// a float is real.
fn parse_coefficient(s: &str) -> Option<Coefficient> {
    if let Some((p, q)) = s.split_once('/') {
        let p: i128 = p.trim().parse().ok()?;
        let q: i128 = q.trim().parse().ok()?;
        if q == 0 {
            return None;
        }
        return Some(Coefficient::Exact(Ratio::new(p, q)));
    }
    if s.bytes().all(|c| c.is_ascii_digit()) && !s.is_empty() {
        return Some(Coefficient::Exact(Ratio::from_integer(s.parse().ok()?)));
    }
    s.parse::<f64>().ok().map(Coefficient::Real)
}

pub fn to_json(spec: &EnsembleSpec) -> String {
    let coef = |c: &Coefficient| match c {
        Coefficient::Exact(r) if *r.denom() == 1 => match i64::try_from(*r.numer()) {
            Ok(i) => Value::from(i),
            Err(_) => Value::String(c.to_string()),
        },
        Coefficient::Exact(_) => Value::String(c.to_string()),
        Coefficient::Real(v) => Value::from(*v),
    };
    let doc = JsonDoc {
        ne: spec.ne(),
        nr: spec.nr(),
        nu: spec
            .vnodes()
            .iter()
            .map(|t| JsonVn {
                coef: coef(&t.coefficient),
                b: t.b.clone(),
                d: t.d.clone(),
            })
            .collect(),
        mu: spec
            .cnodes()
            .iter()
            .map(|t| JsonCn {
                coef: coef(&t.coefficient),
                d: t.d.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("ensemble document serializes")
}

pub fn to_polynomial_text(spec: &EnsembleSpec) -> String {
    fn factors(out: &mut Vec<String>, var: char, exps: &[u32], first_index: usize) {
        for (k, &e) in exps.iter().enumerate() {
            match e {
                0 => {}
                1 => out.push(format!("{var}{}", k + first_index)),
                _ => out.push(format!("{var}{}^{e}", k + first_index)),
            }
        }
    }
    fn term(coef: &Coefficient, b: Option<&[u32]>, d: &[u32]) -> String {
        let mut parts = Vec::new();
        let unit = matches!(coef, Coefficient::Exact(r) if *r == Ratio::from_integer(1));
        if !unit {
            parts.push(coef.to_string());
        }
        if let Some(b) = b {
            factors(&mut parts, 'r', b, 0);
        }
        factors(&mut parts, 'x', d, 1);
        parts.join("*")
    }
    let nu: Vec<String> = spec
        .vnodes()
        .iter()
        .map(|t| term(&t.coefficient, Some(&t.b), &t.d))
        .collect();
    let mu: Vec<String> = spec
        .cnodes()
        .iter()
        .map(|t| term(&t.coefficient, None, &t.d))
        .collect();
    format!("nu = {} ; mu = {}", nu.join(" + "), mu.join(" + "))
}

// ---------------------------------------------------------------------------
// polynomial text

struct RawTerm {
    coef: Coefficient,
    r: Vec<(usize, u32)>,
    x: Vec<(usize, u32)>,
    pos: usize,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), EnsembleError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(format!("expected '{}'", c as char)))
        }
    }

    fn error(&self, msg: impl Into<String>) -> EnsembleError {
        EnsembleError::Syntax {
            pos: self.pos,
            msg: msg.into(),
        }
    }

    fn ident(&mut self) -> Option<&'a str> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphabetic() {
            self.pos += 1;
        }
        (self.pos > start).then(|| std::str::from_utf8(&self.src[start..self.pos]).unwrap())
    }

    fn digits(&mut self) -> Option<&'a str> {
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        (self.pos > start).then(|| std::str::from_utf8(&self.src[start..self.pos]).unwrap())
    }

    /// Decimal number with optional fraction and exponent, or `p/q`.
    fn coefficient(&mut self) -> Result<Coefficient, EnsembleError> {
        self.skip_ws();
        let start = self.pos;
        self.digits();
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            self.digits();
        }
        if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.src.len() && matches!(self.src[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            if self.digits().is_none() {
                self.pos = save;
            }
        }
        let mut text = std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .to_string();
        if self.peek() == Some(b'/') {
            self.pos += 1;
            self.skip_ws();
            let q = self
                .digits()
                .ok_or_else(|| self.error("expected denominator"))?;
            text = format!("{text}/{q}");
        }
        parse_coefficient(&text).ok_or(EnsembleError::Syntax {
            pos: start,
            msg: format!("bad coefficient {text:?}"),
        })
    }
}

fn parse_text(text: &str) -> Result<EnsembleSpec, EnsembleError> {
    let mut lx = Lexer {
        src: text.as_bytes(),
        pos: 0,
    };
    let mut nu: Option<Vec<RawTerm>> = None;
    let mut mu: Option<Vec<RawTerm>> = None;
    loop {
        if lx.peek().is_none() {
            break;
        }
        let name_pos = lx.pos;
        let name = lx
            .ident()
            .ok_or_else(|| lx.error("expected 'nu' or 'mu'"))?;
        let slot = match name {
            "nu" => &mut nu,
            "mu" => &mut mu,
            _ => {
                return Err(EnsembleError::Syntax {
                    pos: name_pos,
                    msg: format!("expected 'nu' or 'mu', found {name:?}"),
                })
            }
        };
        if slot.is_some() {
            return Err(EnsembleError::Syntax {
                pos: name_pos,
                msg: format!("{name} defined twice"),
            });
        }
        lx.expect(b'=')?;
        let is_check = name == "mu";
        let mut terms = vec![parse_term(&mut lx, is_check)?];
        while lx.eat(b'+') {
            terms.push(parse_term(&mut lx, is_check)?);
        }
        *slot = Some(terms);
        match lx.peek() {
            None => break,
            Some(b';') => {
                lx.pos += 1;
            }
            Some(c) => return Err(lx.error(format!("unexpected '{}'", c as char))),
        }
    }
    let nu = nu.ok_or_else(|| lx.error("missing 'nu = ...'"))?;
    let mu = mu.ok_or_else(|| lx.error("missing 'mu = ...'"))?;

    let ne = nu
        .iter()
        .chain(&mu)
        .flat_map(|t| t.x.iter().map(|&(k, _)| k))
        .max()
        .unwrap_or(0);
    let nr = nu
        .iter()
        .flat_map(|t| t.r.iter().map(|&(k, _)| k))
        .max()
        .unwrap_or(0);
    let mut vnodes = Vec::new();
    for t in nu {
        let mut b = vec![0u32; nr + 1];
        for (k, e) in t.r {
            b[k] += e;
        }
        let d = edge_vector(&t.x, ne);
        vnodes.push((
            t.pos,
            VariableNodeTerm {
                coefficient: t.coef,
                b,
                d,
            },
        ));
    }
    let mut cnodes = Vec::new();
    for t in mu {
        cnodes.push((
            t.pos,
            CheckNodeTerm {
                coefficient: t.coef,
                d: edge_vector(&t.x, ne),
            },
        ));
    }
    // Report duplicates against the source position of the repeated term.
    for (k, (pos, t)) in vnodes.iter().enumerate() {
        if vnodes[..k].iter().any(|(_, o)| o.b == t.b && o.d == t.d) {
            return Err(EnsembleError::DuplicateTerm(format!(
                "{} at position {pos}",
                super::term_label(Some(&t.b), &t.d)
            )));
        }
    }
    for (k, (pos, t)) in cnodes.iter().enumerate() {
        if cnodes[..k].iter().any(|(_, o)| o.d == t.d) {
            return Err(EnsembleError::DuplicateTerm(format!(
                "{} at position {pos}",
                super::term_label(None, &t.d)
            )));
        }
    }
    EnsembleSpec::new(
        ne,
        nr,
        vnodes.into_iter().map(|(_, t)| t).collect(),
        cnodes.into_iter().map(|(_, t)| t).collect(),
    )
}

fn edge_vector(x: &[(usize, u32)], ne: usize) -> Vec<u32> {
    let mut d = vec![0u32; ne];
    for &(k, e) in x {
        d[k - 1] += e;
    }
    d
}

fn parse_term(lx: &mut Lexer<'_>, is_check: bool) -> Result<RawTerm, EnsembleError> {
    let pos = {
        lx.skip_ws();
        lx.pos
    };
    let mut term = RawTerm {
        coef: Coefficient::Exact(Ratio::from_integer(1)),
        r: Vec::new(),
        x: Vec::new(),
        pos,
    };
    let mut first = true;
    loop {
        match lx.peek() {
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                if !first {
                    return Err(lx.error("coefficient must be the first factor of a term"));
                }
                term.coef = lx.coefficient()?;
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let var_pos = lx.pos;
                let var = lx.src[lx.pos];
                lx.pos += 1;
                let index = lx
                    .digits()
                    .ok_or_else(|| lx.error("expected variable index"))?
                    .parse::<usize>()
                    .map_err(|_| lx.error("variable index out of range"))?;
                let name = format!("{}{index}", var as char);
                let exp = if lx.eat(b'^') {
                    lx.skip_ws();
                    lx.digits()
                        .ok_or_else(|| lx.error("expected exponent"))?
                        .parse::<u32>()
                        .map_err(|_| lx.error("exponent out of range"))?
                } else {
                    1
                };
                match var {
                    b'x' if index >= 1 => term.x.push((index, exp)),
                    b'r' if !is_check => term.r.push((index, exp)),
                    b'x' | b'r' => {
                        return Err(EnsembleError::UnknownVariable { name, pos: var_pos })
                    }
                    _ => {
                        return Err(EnsembleError::Syntax {
                            pos: var_pos,
                            msg: format!("unknown variable {name}"),
                        })
                    }
                }
            }
            _ => return Err(lx.error("expected a coefficient or variable")),
        }
        first = false;
        if !lx.eat(b'*') {
            break;
        }
    }
    Ok(term)
}
