//! Multi-edge-type ensemble descriptions.
//!
//! An ensemble is a pair of generating functions: `nu(r, x)` on the variable
//! side, with one term per variable-node type `(b, d)`, and `mu(x)` on the
//! check side, with one term per check-node type `d`. Coefficients are node
//! counts relative to the transmitted block length `N`.
//!
//! Edge types are stored 0-based internally (`x1` is index 0). Channel types
//! keep their natural indexing, so index 0 is the punctured channel.

mod parse;

use std::fmt;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use thiserror::Error;

use crate::evolution::ErasureVector;

pub use parse::{parse_ensemble, to_json, to_polynomial_text};

/// Largest degree a node may have on any single edge type.
pub const MAX_DEGREE: u32 = 64;

/// Relative tolerance of the socket-balance check when any coefficient is real.
pub const BALANCE_RTOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown variable {name} at position {pos}")]
    UnknownVariable { name: String, pos: usize },
    #[error("socket balance violated: {}", format_mismatches(.0))]
    SocketBalance(Vec<SocketMismatch>),
    #[error("duplicate term {0}")]
    DuplicateTerm(String),
    #[error(
        "degree {degree} on edge type {edge_type} exceeds the supported maximum of {MAX_DEGREE}"
    )]
    DegreeOverflow { edge_type: usize, degree: u32 },
    #[error("coefficient must be positive, got {0}")]
    BadCoefficient(String),
    #[error("{side} term {term} has no edges")]
    NoEdges { side: &'static str, term: String },
    #[error("edge type {0} has no sockets")]
    UnusedEdgeType(usize),
    #[error("{what}: expected length {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("malformed ensemble document: {0}")]
    Document(String),
}

/// Per-edge-type socket totals (relative to `N`) that failed to agree.
#[derive(Debug, Clone, PartialEq)]
pub struct SocketMismatch {
    /// 1-based edge type, as written in ensemble files.
    pub edge_type: usize,
    pub vn_side: f64,
    pub cn_side: f64,
}

fn format_mismatches(m: &[SocketMismatch]) -> String {
    m.iter()
        .map(|s| {
            format!(
                "edge type {} (VN side {}, CN side {})",
                s.edge_type, s.vn_side, s.cn_side
            )
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// A node-type fraction. `p/q` and integer literals stay exact.
#[derive(Debug, Clone, Copy)]
pub enum Coefficient {
    Exact(Ratio<i128>),
    Real(f64),
}

impl Coefficient {
    pub fn value(&self) -> f64 {
        match self {
            Coefficient::Exact(r) => r.to_f64().unwrap_or(f64::NAN),
            Coefficient::Real(v) => *v,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, Coefficient::Exact(_))
    }

    fn is_positive(&self) -> bool {
        match self {
            Coefficient::Exact(r) => *r > Ratio::zero(),
            Coefficient::Real(v) => v.is_finite() && *v > 0.0,
        }
    }
}

impl PartialEq for Coefficient {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Coefficient::Exact(a), Coefficient::Exact(b)) => a == b,
            (Coefficient::Real(a), Coefficient::Real(b)) => a.to_bits() == b.to_bits(),
            _ => false,
        }
    }
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Exact(r) if *r.denom() == 1 => write!(f, "{}", r.numer()),
            Coefficient::Exact(r) => write!(f, "{}/{}", r.numer(), r.denom()),
            // Debug keeps a decimal point so the value reparses as real.
            Coefficient::Real(v) => write!(f, "{v:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableNodeTerm {
    pub coefficient: Coefficient,
    /// Channel exponents, length `nr + 1`.
    pub b: Vec<u32>,
    /// Edge exponents, length `ne`.
    pub d: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckNodeTerm {
    pub coefficient: Coefficient,
    pub d: Vec<u32>,
}

/// A validated ensemble `(nu, mu)` in canonical term order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    ne: usize,
    nr: usize,
    vnodes: Vec<VariableNodeTerm>,
    cnodes: Vec<CheckNodeTerm>,
    vn_coef: Vec<f64>,
    cn_coef: Vec<f64>,
    edge_frac: Vec<f64>,
}

impl EnsembleSpec {
    /// Validates and canonicalizes an ensemble.
    pub fn new(
        ne: usize,
        nr: usize,
        mut vnodes: Vec<VariableNodeTerm>,
        mut cnodes: Vec<CheckNodeTerm>,
    ) -> Result<Self, EnsembleError> {
        if ne == 0 {
            return Err(EnsembleError::Document(
                "at least one edge type is required".into(),
            ));
        }
        for t in &vnodes {
            check_len("VN channel exponents", nr + 1, t.b.len())?;
            check_len("VN edge exponents", ne, t.d.len())?;
            check_term(&t.coefficient, &t.d, "VN", || term_label(Some(&t.b), &t.d))?;
        }
        for t in &cnodes {
            check_len("CN edge exponents", ne, t.d.len())?;
            check_term(&t.coefficient, &t.d, "CN", || term_label(None, &t.d))?;
        }

        vnodes.sort_by(|a, b| a.b.cmp(&b.b).then_with(|| a.d.cmp(&b.d)));
        cnodes.sort_by(|a, b| a.d.cmp(&b.d));
        for w in vnodes.windows(2) {
            if w[0].b == w[1].b && w[0].d == w[1].d {
                return Err(EnsembleError::DuplicateTerm(term_label(
                    Some(&w[0].b),
                    &w[0].d,
                )));
            }
        }
        for w in cnodes.windows(2) {
            if w[0].d == w[1].d {
                return Err(EnsembleError::DuplicateTerm(term_label(None, &w[0].d)));
            }
        }

        check_socket_balance(ne, &vnodes, &cnodes)?;

        let vn_coef: Vec<f64> = vnodes.iter().map(|t| t.coefficient.value()).collect();
        let cn_coef: Vec<f64> = cnodes.iter().map(|t| t.coefficient.value()).collect();
        let mut edge_frac = vec![0.0; ne];
        for (t, c) in vnodes.iter().zip(&vn_coef) {
            for (i, &di) in t.d.iter().enumerate() {
                edge_frac[i] += c * f64::from(di);
            }
        }
        if let Some(i) = edge_frac.iter().position(|&e| e <= 0.0) {
            return Err(EnsembleError::UnusedEdgeType(i + 1));
        }

        Ok(Self {
            ne,
            nr,
            vnodes,
            cnodes,
            vn_coef,
            cn_coef,
            edge_frac,
        })
    }

    pub fn ne(&self) -> usize {
        self.ne
    }

    pub fn nr(&self) -> usize {
        self.nr
    }

    pub fn vnodes(&self) -> &[VariableNodeTerm] {
        &self.vnodes
    }

    pub fn cnodes(&self) -> &[CheckNodeTerm] {
        &self.cnodes
    }

    pub(crate) fn vn_coef(&self) -> &[f64] {
        &self.vn_coef
    }

    pub(crate) fn cn_coef(&self) -> &[f64] {
        &self.cn_coef
    }

    /// `E_i / N` for every edge type.
    pub fn edge_fractions_per_node(&self) -> &[f64] {
        &self.edge_frac
    }

    /// Average variable-node degree `E / N`.
    pub fn dv_avg(&self) -> f64 {
        self.edge_frac.iter().sum()
    }

    fn check_eps(&self, eps: &ErasureVector) -> Result<(), EnsembleError> {
        check_len("erasure vector", self.nr + 1, eps.len())
    }

    fn check_x(&self, x: &[f64]) -> Result<(), EnsembleError> {
        check_len("edge variable vector", self.ne, x.len())
    }

    /// `nu(eps, x)`: total fraction of variable nodes.
    pub fn nu_total(&self, eps: &ErasureVector, x: &[f64]) -> Result<f64, EnsembleError> {
        self.check_eps(eps)?;
        self.check_x(x)?;
        Ok(self.nu_total_unchecked(eps.as_slice(), x))
    }

    pub(crate) fn nu_total_unchecked(&self, eps: &[f64], x: &[f64]) -> f64 {
        self.vnodes
            .iter()
            .zip(&self.vn_coef)
            .map(|(t, c)| c * monomial(eps, &t.b) * monomial(x, &t.d))
            .sum()
    }

    /// Gradient of `nu(eps, x)` with respect to `x`.
    pub(crate) fn nu_grad_unchecked(&self, eps: &[f64], x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.ne];
        for (t, c) in self.vnodes.iter().zip(&self.vn_coef) {
            let w = c * monomial(eps, &t.b);
            for (i, gi) in g.iter_mut().enumerate() {
                if t.d[i] > 0 {
                    *gi += w * f64::from(t.d[i]) * monomial_except(x, &t.d, i, 1);
                }
            }
        }
        g
    }

    /// Hessian of `nu(eps, x)` with respect to `x`, `h[i][j] = d2 nu / dx_i dx_j`.
    pub(crate) fn nu_hessian_unchecked(&self, eps: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        hessian(
            self.ne,
            self.vnodes
                .iter()
                .zip(&self.vn_coef)
                .map(|(t, c)| (c * monomial(eps, &t.b), t.d.as_slice())),
            x,
        )
    }

    /// Gradient of `mu(y)`.
    pub(crate) fn mu_grad_unchecked(&self, y: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.ne];
        for (t, c) in self.cnodes.iter().zip(&self.cn_coef) {
            for (i, gi) in g.iter_mut().enumerate() {
                if t.d[i] > 0 {
                    *gi += c * f64::from(t.d[i]) * monomial_except(y, &t.d, i, 1);
                }
            }
        }
        g
    }

    pub(crate) fn mu_hessian_unchecked(&self, y: &[f64]) -> Vec<Vec<f64>> {
        hessian(
            self.ne,
            self.cnodes
                .iter()
                .zip(&self.cn_coef)
                .map(|(t, c)| (*c, t.d.as_slice())),
            y,
        )
    }

    pub(crate) fn lambda_unchecked(&self, eps: &[f64], x: &[f64]) -> Vec<f64> {
        let mut g = self.nu_grad_unchecked(eps, x);
        for (gi, e) in g.iter_mut().zip(&self.edge_frac) {
            *gi /= e;
        }
        g
    }

    pub(crate) fn rho_unchecked(&self, y: &[f64]) -> Vec<f64> {
        let mut g = self.mu_grad_unchecked(y);
        for (gi, e) in g.iter_mut().zip(&self.edge_frac) {
            *gi /= e;
        }
        g
    }

    /// `jac[j][i] = d lambda_j / d x_i`.
    pub fn lambda_jacobian(
        &self,
        eps: &ErasureVector,
        x: &[f64],
    ) -> Result<Vec<Vec<f64>>, EnsembleError> {
        self.check_eps(eps)?;
        self.check_x(x)?;
        Ok(self.lambda_jacobian_unchecked(eps.as_slice(), x))
    }

    pub(crate) fn lambda_jacobian_unchecked(&self, eps: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let mut h = self.nu_hessian_unchecked(eps, x);
        for (row, e) in h.iter_mut().zip(&self.edge_frac) {
            row.iter_mut().for_each(|v| *v /= e);
        }
        h
    }

    /// `jac[j][k] = d rho_j / d y_k`.
    pub(crate) fn rho_jacobian_unchecked(&self, y: &[f64]) -> Vec<Vec<f64>> {
        let mut h = self.mu_hessian_unchecked(y);
        for (row, e) in h.iter_mut().zip(&self.edge_frac) {
            row.iter_mut().for_each(|v| *v /= e);
        }
        h
    }

    /// Terms of `nu` whose channel vector touches a non-punctured channel.
    pub fn is_transmitted(&self, term: usize) -> bool {
        self.vnodes[term].b.iter().skip(1).any(|&b| b > 0)
    }
}

/// Quantities derived from an ensemble without reference to a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedQuantities {
    /// `E_i / N` per edge type.
    pub edge_frac_per_type: Vec<f64>,
    /// `E / N`.
    pub dv_avg: f64,
    /// Informational design rate: (transmitted VN fraction - CN fraction) per transmitted bit.
    pub rate_summary: f64,
}

pub fn derived(spec: &EnsembleSpec) -> DerivedQuantities {
    let transmitted: f64 = (0..spec.vnodes.len())
        .filter(|&t| spec.is_transmitted(t))
        .map(|t| spec.vn_coef[t])
        .sum();
    let vn_total: f64 = spec.vn_coef.iter().sum();
    let cn_total: f64 = spec.cn_coef.iter().sum();
    let rate_summary = if transmitted > 0.0 {
        (vn_total - cn_total) / transmitted
    } else {
        f64::NAN
    };
    DerivedQuantities {
        edge_frac_per_type: spec.edge_frac.clone(),
        dv_avg: spec.dv_avg(),
        rate_summary,
    }
}

/// Edge-perspective variable profile `lambda(eps, x)`.
pub fn eval_lambda(
    spec: &EnsembleSpec,
    eps: &ErasureVector,
    x: &[f64],
) -> Result<Vec<f64>, EnsembleError> {
    spec.check_eps(eps)?;
    spec.check_x(x)?;
    Ok(spec.lambda_unchecked(eps.as_slice(), x))
}

/// Edge-perspective check profile `rho(x)`.
pub fn eval_rho(spec: &EnsembleSpec, x: &[f64]) -> Result<Vec<f64>, EnsembleError> {
    spec.check_x(x)?;
    Ok(spec.rho_unchecked(x))
}

/// `prod_k base_k ^ exps_k`, with `0^0 = 1`.
pub(crate) fn monomial(base: &[f64], exps: &[u32]) -> f64 {
    base.iter()
        .zip(exps)
        .filter(|(_, &e)| e > 0)
        .map(|(v, &e)| v.powi(e as i32))
        .product()
}

/// Monomial with the exponent at `skip` lowered by `by`.
fn monomial_except(base: &[f64], exps: &[u32], skip: usize, by: u32) -> f64 {
    base.iter()
        .zip(exps)
        .enumerate()
        .map(|(k, (v, &e))| {
            let e = if k == skip { e - by } else { e };
            if e == 0 {
                1.0
            } else {
                v.powi(e as i32)
            }
        })
        .product()
}

fn hessian<'a>(
    n: usize,
    terms: impl Iterator<Item = (f64, &'a [u32])>,
    x: &[f64],
) -> Vec<Vec<f64>> {
    let mut h = vec![vec![0.0; n]; n];
    let mut lowered = vec![0u32; n];
    for (w, d) in terms {
        for i in 0..n {
            if d[i] == 0 {
                continue;
            }
            for j in 0..n {
                if d[j] == 0 || (i == j && d[i] < 2) {
                    continue;
                }
                lowered.copy_from_slice(d);
                lowered[i] -= 1;
                let fi = f64::from(d[i]);
                let fj = f64::from(lowered[j]);
                lowered[j] -= 1;
                h[i][j] += w * fi * fj * monomial(x, &lowered);
            }
        }
    }
    h
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), EnsembleError> {
    if expected == got {
        Ok(())
    } else {
        Err(EnsembleError::Dimension {
            what,
            expected,
            got,
        })
    }
}

fn check_term(
    coef: &Coefficient,
    d: &[u32],
    side: &'static str,
    label: impl Fn() -> String,
) -> Result<(), EnsembleError> {
    if !coef.is_positive() {
        return Err(EnsembleError::BadCoefficient(coef.to_string()));
    }
    if d.iter().all(|&v| v == 0) {
        return Err(EnsembleError::NoEdges {
            side,
            term: label(),
        });
    }
    if let Some((i, &deg)) = d.iter().enumerate().find(|(_, &v)| v > MAX_DEGREE) {
        return Err(EnsembleError::DegreeOverflow {
            edge_type: i + 1,
            degree: deg,
        });
    }
    Ok(())
}

pub(crate) fn term_label(b: Option<&[u32]>, d: &[u32]) -> String {
    let join = |v: &[u32]| v.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
    match b {
        Some(b) => format!("(b=({}), d=({}))", join(b), join(d)),
        None => format!("(d=({}))", join(d)),
    }
}

fn check_socket_balance(
    ne: usize,
    vnodes: &[VariableNodeTerm],
    cnodes: &[CheckNodeTerm],
) -> Result<(), EnsembleError> {
    let all_exact = vnodes.iter().all(|t| t.coefficient.is_exact())
        && cnodes.iter().all(|t| t.coefficient.is_exact());
    let mut mismatches = Vec::new();
    for i in 0..ne {
        let vn: f64 = vnodes
            .iter()
            .map(|t| t.coefficient.value() * f64::from(t.d[i]))
            .sum();
        let cn: f64 = cnodes
            .iter()
            .map(|t| t.coefficient.value() * f64::from(t.d[i]))
            .sum();
        let balanced = if all_exact {
            let exact = |c: &Coefficient| match c {
                Coefficient::Exact(r) => *r,
                Coefficient::Real(_) => unreachable!(),
            };
            let vs: Ratio<i128> = vnodes
                .iter()
                .map(|t| exact(&t.coefficient) * i128::from(t.d[i]))
                .fold(Ratio::zero(), |a, b| a + b);
            let cs: Ratio<i128> = cnodes
                .iter()
                .map(|t| exact(&t.coefficient) * i128::from(t.d[i]))
                .fold(Ratio::zero(), |a, b| a + b);
            vs == cs
        } else {
            (vn - cn).abs() <= BALANCE_RTOL * vn.abs().max(cn.abs())
        };
        if !balanced {
            mismatches.push(SocketMismatch {
                edge_type: i + 1,
                vn_side: vn,
                cn_side: cn,
            });
        }
    }
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(EnsembleError::SocketBalance(mismatches))
    }
}
