//! Closed-form mean trajectory of the peeling decoder.
//!
//! The decoder state is parameterized by a point `x` in `[0, 1]^ne` rather
//! than by time. Along any schedule the node fractions are
//!
//! * variable nodes: `nu_{b,d}(eps, x) = nu_{b,d} eps^b x^d`
//! * check nodes of degree two or more:
//!   `mu_d(eps, x) = sum_{D >= d} mu_D C(D, d) lambda^d (1 - lambda)^(D - d)`
//! * degree-one check nodes of type `i`:
//!   `mu_{e_i}(eps, x) = nu_{x_i}(eps, x) [x_i - 1 + rho_i(1 - lambda(eps, x))]`
//!
//! with `lambda = lambda(eps, x)`. Time enters only through the path `x(t)`,
//! which is owned by [`crate::pathsim`].

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::ensemble::{monomial, EnsembleError, EnsembleSpec, MAX_DEGREE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolutionError {
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("invalid erasure vector: {0}")]
    BadErasure(String),
    #[error("schedule selects edge type {edge_type} which has no remaining edges")]
    ExhaustedTypeSelected { edge_type: usize },
    #[error("schedule weights are not a probability vector: {0:?}")]
    NotPmf(Vec<f64>),
}

/// Per-channel erasure probabilities `(1, eps_1, ..., eps_nr)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErasureVector(Vec<f64>);

impl ErasureVector {
    pub fn new(eps: Vec<f64>) -> Result<Self, EvolutionError> {
        if eps.first() != Some(&1.0) {
            return Err(EvolutionError::BadErasure(
                "the punctured channel (index 0) must erase with probability 1".into(),
            ));
        }
        if let Some(v) = eps.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(EvolutionError::BadErasure(format!("{v} is not in [0, 1]")));
        }
        Ok(Self(eps))
    }

    /// Every non-punctured channel erases with probability `eps`.
    pub fn uniform(nr: usize, eps: f64) -> Result<Self, EvolutionError> {
        let mut v = vec![eps; nr + 1];
        v[0] = 1.0;
        Self::new(v)
    }

    pub fn ones(nr: usize) -> Self {
        Self(vec![1.0; nr + 1])
    }

    /// `(1, eps * dir_1, ..., eps * dir_nr)`.
    pub fn along(direction: &[f64], eps: f64) -> Result<Self, EvolutionError> {
        let mut v = Vec::with_capacity(direction.len() + 1);
        v.push(1.0);
        v.extend(direction.iter().map(|d| d * eps));
        Self::new(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * f64::from(n - j) / f64::from(j + 1))
}

/// Every residual check type reachable from the original check terms by
/// deleting edges, with the vector binomials `C(D, d)`.
#[derive(Debug, Clone)]
pub struct CheckSubTypeTable {
    ne: usize,
    subtypes: Vec<Vec<u32>>,
    degree: Vec<u32>,
    lookup: HashMap<Vec<u32>, usize>,
    per_term: Vec<Vec<(usize, f64)>>,
    term_subtype: Vec<usize>,
    removed: Vec<Vec<Option<usize>>>,
    added: Vec<Vec<Option<usize>>>,
    unit: Vec<Option<usize>>,
}

impl CheckSubTypeTable {
    pub fn build(spec: &EnsembleSpec) -> Result<Self, EnsembleError> {
        let ne = spec.ne();
        let mut all: Vec<Vec<u32>> = Vec::new();
        let mut per_term_vecs: Vec<Vec<(Vec<u32>, f64)>> = Vec::new();
        for term in spec.cnodes() {
            if let Some((i, &deg)) = term.d.iter().enumerate().find(|(_, &v)| v > MAX_DEGREE) {
                return Err(EnsembleError::DegreeOverflow {
                    edge_type: i + 1,
                    degree: deg,
                });
            }
            let mut entries = Vec::new();
            let mut d = vec![0u32; ne];
            loop {
                let c: f64 = term
                    .d
                    .iter()
                    .zip(&d)
                    .map(|(&big, &small)| binomial(big, small))
                    .product();
                entries.push((d.clone(), c));
                // mixed-radix increment
                let mut k = 0;
                while k < ne {
                    if d[k] < term.d[k] {
                        d[k] += 1;
                        break;
                    }
                    d[k] = 0;
                    k += 1;
                }
                if k == ne {
                    break;
                }
            }
            all.extend(entries.iter().map(|(d, _)| d.clone()));
            per_term_vecs.push(entries);
        }
        all.sort();
        all.dedup();
        let lookup: HashMap<Vec<u32>, usize> = all
            .iter()
            .enumerate()
            .map(|(k, d)| (d.clone(), k))
            .collect();
        let per_term = per_term_vecs
            .into_iter()
            .map(|entries| entries.into_iter().map(|(d, c)| (lookup[&d], c)).collect())
            .collect();
        let term_subtype = spec.cnodes().iter().map(|t| lookup[&t.d]).collect();
        let shifted = |d: &[u32], j: usize, up: bool| -> Option<usize> {
            let mut v = d.to_vec();
            if up {
                v[j] += 1;
            } else {
                v[j] = v[j].checked_sub(1)?;
            }
            lookup.get(&v).copied()
        };
        let removed = all
            .iter()
            .map(|d| (0..ne).map(|j| shifted(d, j, false)).collect())
            .collect();
        let added = all
            .iter()
            .map(|d| (0..ne).map(|j| shifted(d, j, true)).collect())
            .collect();
        let unit = (0..ne)
            .map(|i| {
                let mut v = vec![0u32; ne];
                v[i] = 1;
                lookup.get(&v).copied()
            })
            .collect();
        let degree = all.iter().map(|d| d.iter().sum()).collect();
        Ok(Self {
            ne,
            subtypes: all,
            degree,
            lookup,
            per_term,
            term_subtype,
            removed,
            added,
            unit,
        })
    }

    pub fn len(&self) -> usize {
        self.subtypes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtypes.is_empty()
    }

    pub fn subtype(&self, k: usize) -> &[u32] {
        &self.subtypes[k]
    }

    pub fn subtypes(&self) -> &[Vec<u32>] {
        &self.subtypes
    }

    pub fn degree(&self, k: usize) -> u32 {
        self.degree[k]
    }

    pub fn index_of(&self, d: &[u32]) -> Option<usize> {
        self.lookup.get(d).copied()
    }

    /// `(subtype index, C(D, d))` for every `d <= D` of check term `term`.
    pub fn term_entries(&self, term: usize) -> &[(usize, f64)] {
        &self.per_term[term]
    }

    /// Subtype index of the full-degree check term `term`.
    pub fn term_subtype(&self, term: usize) -> usize {
        self.term_subtype[term]
    }

    /// Index of `d - e_j`, if that is a valid subtype.
    pub fn removed(&self, k: usize, j: usize) -> Option<usize> {
        self.removed[k][j]
    }

    /// Index of `d + e_j`, if that is a valid subtype.
    pub fn added(&self, k: usize, j: usize) -> Option<usize> {
        self.added[k][j]
    }

    /// Subtype index of the unit vector `e_i`.
    pub fn unit(&self, i: usize) -> Option<usize> {
        self.unit[i]
    }

    /// The single edge type of a degree-one subtype.
    pub fn unit_type(&self, k: usize) -> Option<usize> {
        if self.degree[k] == 1 {
            self.subtypes[k].iter().position(|&v| v == 1)
        } else {
            None
        }
    }

    pub fn ne(&self) -> usize {
        self.ne
    }
}

/// Node and edge fractions of a (possibly empirical) decoder state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFractions {
    /// Per variable-node term, relative to `N`.
    pub nu: Vec<f64>,
    /// Per check subtype (table order, including degree one), relative to `N`.
    pub mu: Vec<f64>,
    /// Remaining edges per type, relative to `E`.
    pub e: Vec<f64>,
}

/// Time derivatives of the node fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRates {
    /// `d nu_{b,d} / dt` per variable-node term.
    pub dnu: Vec<f64>,
    /// `d mu_d / dt` per check subtype in table order; degree-zero entries are 0.
    pub dmu: Vec<f64>,
}

/// One point of the mean trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionPoint {
    pub t: f64,
    pub x: Vec<f64>,
    /// `sum_i x_i E_i / E`.
    pub xbar: f64,
    /// Per variable-node term, in canonical order.
    pub nu_fracs: Vec<f64>,
    /// Check subtypes of degree two or more.
    pub mu_fracs: BTreeMap<Vec<u32>, f64>,
    pub mu1: Vec<f64>,
    pub e: Vec<f64>,
    pub gamma: Vec<f64>,
    pub nu_total: f64,
}

/// Closed-form evaluator bound to one ensemble.
#[derive(Debug, Clone)]
pub struct Evolution {
    spec: EnsembleSpec,
    table: CheckSubTypeTable,
    /// `E_i / E`
    edge_share: Vec<f64>,
}

impl Evolution {
    pub fn new(spec: &EnsembleSpec) -> Result<Self, EvolutionError> {
        let table = CheckSubTypeTable::build(spec)?;
        let dv = spec.dv_avg();
        let edge_share = spec
            .edge_fractions_per_node()
            .iter()
            .map(|e| e / dv)
            .collect();
        Ok(Self {
            spec: spec.clone(),
            table,
            edge_share,
        })
    }

    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    pub fn table(&self) -> &CheckSubTypeTable {
        &self.table
    }

    /// `E_i / E` per edge type.
    pub fn edge_share(&self) -> &[f64] {
        &self.edge_share
    }

    pub fn dv_avg(&self) -> f64 {
        self.spec.dv_avg()
    }

    fn check(&self, eps: &ErasureVector, x: &[f64]) -> Result<(), EvolutionError> {
        let dim = |what, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(EvolutionError::Ensemble(EnsembleError::Dimension {
                    what,
                    expected,
                    got,
                }))
            }
        };
        dim("erasure vector", self.spec.nr() + 1, eps.len())?;
        dim("edge variable vector", self.spec.ne(), x.len())
    }

    fn check_gamma(&self, gamma: &[f64]) -> Result<(), EvolutionError> {
        if gamma.len() != self.spec.ne() {
            return Err(EnsembleError::Dimension {
                what: "schedule pmf",
                expected: self.spec.ne(),
                got: gamma.len(),
            }
            .into());
        }
        let sum: f64 = gamma.iter().sum();
        if gamma.iter().any(|g| !(*g >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(EvolutionError::NotPmf(gamma.to_vec()));
        }
        Ok(())
    }

    /// `lambda(eps, x)`.
    pub fn lambda(&self, eps: &ErasureVector, x: &[f64]) -> Result<Vec<f64>, EvolutionError> {
        self.check(eps, x)?;
        Ok(self.spec.lambda_unchecked(eps.as_slice(), x))
    }

    /// `nu_{b,d}(eps, x)` per variable-node term, in canonical term order.
    pub fn nu_closed_form(
        &self,
        eps: &ErasureVector,
        x: &[f64],
    ) -> Result<Vec<f64>, EvolutionError> {
        self.check(eps, x)?;
        Ok(self.nu_terms(eps.as_slice(), x))
    }

    pub(crate) fn nu_terms(&self, eps: &[f64], x: &[f64]) -> Vec<f64> {
        self.spec
            .vnodes()
            .iter()
            .zip(self.spec.vn_coef())
            .map(|(t, c)| c * monomial(eps, &t.b) * monomial(x, &t.d))
            .collect()
    }

    /// Residual variable-node fraction `nu(eps, x)`.
    pub fn nu_total(&self, eps: &ErasureVector, x: &[f64]) -> Result<f64, EvolutionError> {
        self.check(eps, x)?;
        Ok(self.spec.nu_total_unchecked(eps.as_slice(), x))
    }

    /// `mu_d(eps, x)` for every residual check subtype of degree two or more.
    pub fn mu_closed_form(
        &self,
        eps: &ErasureVector,
        x: &[f64],
    ) -> Result<BTreeMap<Vec<u32>, f64>, EvolutionError> {
        self.check(eps, x)?;
        let lambda = self.spec.lambda_unchecked(eps.as_slice(), x);
        let all = self.mu_subtypes(&lambda);
        Ok(self.higher_degree_map(&all))
    }

    pub(crate) fn higher_degree_map(&self, all: &[f64]) -> BTreeMap<Vec<u32>, f64> {
        all.iter()
            .enumerate()
            .filter(|(k, _)| self.table.degree(*k) >= 2)
            .map(|(k, v)| (self.table.subtype(k).to_vec(), *v))
            .collect()
    }

    /// Binomial-thinning formula evaluated for every subtype in table order.
    /// Only entries of degree two or more are check-node fractions.
    pub(crate) fn mu_subtypes(&self, lambda: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.table.len()];
        let one_minus: Vec<f64> = lambda.iter().map(|l| 1.0 - l).collect();
        for (term, (t, c)) in self
            .spec
            .cnodes()
            .iter()
            .zip(self.spec.cn_coef())
            .enumerate()
        {
            for &(k, binom) in self.table.term_entries(term) {
                let d = self.table.subtype(k);
                let mut v = c * binom;
                for i in 0..d.len() {
                    if d[i] > 0 {
                        v *= lambda[i].powi(d[i] as i32);
                    }
                    let rest = t.d[i] - d[i];
                    if rest > 0 {
                        v *= one_minus[i].powi(rest as i32);
                    }
                }
                out[k] += v;
            }
        }
        out
    }

    /// Degree-one check fractions from the product formula.
    pub fn mu1_closed_form(
        &self,
        eps: &ErasureVector,
        x: &[f64],
    ) -> Result<Vec<f64>, EvolutionError> {
        self.check(eps, x)?;
        Ok(self.supply(eps.as_slice(), x))
    }

    pub(crate) fn supply(&self, eps: &[f64], x: &[f64]) -> Vec<f64> {
        let grad = self.spec.nu_grad_unchecked(eps, x);
        let lambda = self.spec.lambda_unchecked(eps, x);
        let y: Vec<f64> = lambda.iter().map(|l| 1.0 - l).collect();
        let rho = self.spec.rho_unchecked(&y);
        (0..self.spec.ne())
            .map(|i| grad[i] * (x[i] - 1.0 + rho[i]))
            .collect()
    }

    /// Degree-one check fractions by edge counting: all remaining type-`i`
    /// edges minus those attached to checks of degree two or more.
    pub fn mu1_by_counting(
        &self,
        eps: &ErasureVector,
        x: &[f64],
    ) -> Result<Vec<f64>, EvolutionError> {
        self.check(eps, x)?;
        let lambda = self.spec.lambda_unchecked(eps.as_slice(), x);
        let mu = self.mu_subtypes(&lambda);
        let dv = self.dv_avg();
        let e = self.edges(&lambda, x);
        Ok((0..self.spec.ne())
            .map(|i| {
                let attached: f64 = mu
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| self.table.degree(*k) >= 2)
                    .map(|(k, m)| f64::from(self.table.subtype(k)[i]) * m)
                    .sum();
                dv * e[i] - attached
            })
            .collect())
    }

    /// Remaining edge fractions `e_i(eps, x) = (E_i/E) x_i lambda_i(eps, x)`.
    pub fn edge_fractions(
        &self,
        eps: &ErasureVector,
        x: &[f64],
    ) -> Result<Vec<f64>, EvolutionError> {
        self.check(eps, x)?;
        let lambda = self.spec.lambda_unchecked(eps.as_slice(), x);
        Ok(self.edges(&lambda, x))
    }

    pub(crate) fn edges(&self, lambda: &[f64], x: &[f64]) -> Vec<f64> {
        self.edge_share
            .iter()
            .zip(x)
            .zip(lambda)
            .map(|((s, xi), l)| s * xi * l)
            .collect()
    }

    /// Expected number of type-`j` edges deleted per iteration, including the
    /// edge of the peeled check, from the node-type sum.
    pub fn expected_edges_deleted(
        &self,
        eps: &ErasureVector,
        x: &[f64],
        gamma: &[f64],
    ) -> Result<Vec<f64>, EvolutionError> {
        self.check(eps, x)?;
        self.check_gamma(gamma)?;
        let lambda = self.spec.lambda_unchecked(eps.as_slice(), x);
        let e = self.edges(&lambda, x);
        let nu = self.nu_terms(eps.as_slice(), x);
        let removal = self.removal_weights(&nu, &e, gamma)?;
        Ok(self.deleted_from_weights(&nu, &removal))
    }

    /// `sum_i d_i gamma_i / e_i` for every variable-node term.
    fn removal_weights(
        &self,
        nu: &[f64],
        e: &[f64],
        gamma: &[f64],
    ) -> Result<Vec<f64>, EvolutionError> {
        if let Some(i) = (0..gamma.len()).find(|&i| gamma[i] > 0.0 && !(e[i] > 0.0)) {
            return Err(EvolutionError::ExhaustedTypeSelected { edge_type: i + 1 });
        }
        Ok(self
            .spec
            .vnodes()
            .iter()
            .zip(nu)
            .map(|(t, _)| {
                (0..gamma.len())
                    .filter(|&i| gamma[i] > 0.0 && t.d[i] > 0)
                    .map(|i| f64::from(t.d[i]) * gamma[i] / e[i])
                    .sum()
            })
            .collect())
    }

    fn deleted_from_weights(&self, nu: &[f64], removal: &[f64]) -> Vec<f64> {
        let dv = self.dv_avg();
        (0..self.spec.ne())
            .map(|j| {
                self.spec
                    .vnodes()
                    .iter()
                    .zip(nu.iter().zip(removal))
                    .map(|(t, (n, w))| f64::from(t.d[j]) * n * w)
                    .sum::<f64>()
                    / dv
            })
            .collect()
    }

    /// `lambda'_j = sum_i (dx_i/dt) d lambda_j / d x_i`.
    pub fn lambda_prime(
        &self,
        eps: &ErasureVector,
        x: &[f64],
        dxdt: &[f64],
    ) -> Result<Vec<f64>, EvolutionError> {
        self.check(eps, x)?;
        let jac = self.spec.lambda_jacobian_unchecked(eps.as_slice(), x);
        Ok(jac
            .iter()
            .map(|row| row.iter().zip(dxdt).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Expected "other" (non-peeled) edges of each type deleted per iteration,
    /// in the path form `-(E_j/E) x_j lambda'_j`.
    pub fn other_edges_deleted(
        &self,
        eps: &ErasureVector,
        x: &[f64],
        dxdt: &[f64],
    ) -> Result<Vec<f64>, EvolutionError> {
        let lp = self.lambda_prime(eps, x, dxdt)?;
        Ok((0..lp.len())
            .map(|j| -self.edge_share[j] * x[j] * lp[j])
            .collect())
    }

    /// `dx_i/dt = -x_i gamma_i / e_i`; types with `gamma_i = 0` do not move.
    pub fn path_velocity(
        &self,
        eps: &ErasureVector,
        x: &[f64],
        gamma: &[f64],
    ) -> Result<Vec<f64>, EvolutionError> {
        self.check(eps, x)?;
        let lambda = self.spec.lambda_unchecked(eps.as_slice(), x);
        let e = self.edges(&lambda, x);
        self.velocity(x, &e, gamma)
    }

    pub(crate) fn velocity(
        &self,
        x: &[f64],
        e: &[f64],
        gamma: &[f64],
    ) -> Result<Vec<f64>, EvolutionError> {
        (0..x.len())
            .map(|i| {
                if gamma[i] == 0.0 {
                    Ok(0.0)
                } else if e[i] > 0.0 {
                    Ok(-x[i] * gamma[i] / e[i])
                } else {
                    Err(EvolutionError::ExhaustedTypeSelected { edge_type: i + 1 })
                }
            })
            .collect()
    }

    /// Node-fraction rates of the mean process from an arbitrary state.
    pub fn rates_from_state(
        &self,
        state: &StateFractions,
        gamma: &[f64],
    ) -> Result<TransitionRates, EvolutionError> {
        self.check_gamma(gamma)?;
        let removal = self.removal_weights(&state.nu, &state.e, gamma)?;
        let dnu: Vec<f64> = state.nu.iter().zip(&removal).map(|(n, w)| -n * w).collect();
        let deleted = self.deleted_from_weights(&state.nu, &removal);
        let dv = self.dv_avg();
        let ne = self.spec.ne();
        // (a_j - gamma_j) / e_j, zero for exhausted types
        let flow: Vec<f64> = (0..ne)
            .map(|j| {
                if state.e[j] > 0.0 {
                    (deleted[j] - gamma[j]) / state.e[j]
                } else {
                    0.0
                }
            })
            .collect();
        let mut dmu = vec![0.0; self.table.len()];
        for (k, slot) in dmu.iter_mut().enumerate() {
            if self.table.degree(k) == 0 {
                continue;
            }
            let d = self.table.subtype(k);
            let mut rate = 0.0;
            for j in 0..ne {
                let above = self
                    .table
                    .added(k, j)
                    .map_or(0.0, |up| f64::from(d[j] + 1) * state.mu[up]);
                rate += (above - f64::from(d[j]) * state.mu[k]) * flow[j];
            }
            if let Some(i) = self.table.unit_type(k) {
                rate -= dv * gamma[i];
            }
            *slot = rate;
        }
        Ok(TransitionRates { dnu, dmu })
    }

    /// Closed-form state at `x`: all subtypes, degree one from the product formula.
    pub fn state_at(
        &self,
        eps: &ErasureVector,
        x: &[f64],
    ) -> Result<StateFractions, EvolutionError> {
        self.check(eps, x)?;
        let lambda = self.spec.lambda_unchecked(eps.as_slice(), x);
        let mut mu = self.mu_subtypes(&lambda);
        let supply = self.supply(eps.as_slice(), x);
        for (k, m) in mu.iter_mut().enumerate() {
            match self.table.degree(k) {
                0 => *m = 0.0,
                1 => *m = supply[self.table.unit_type(k).unwrap()],
                _ => {}
            }
        }
        Ok(StateFractions {
            nu: self.nu_terms(eps.as_slice(), x),
            mu,
            e: self.edges(&lambda, x),
        })
    }

    /// Node-fraction rates at the closed-form state for schedule `gamma`.
    pub fn transition_rates(
        &self,
        eps: &ErasureVector,
        x: &[f64],
        gamma: &[f64],
    ) -> Result<TransitionRates, EvolutionError> {
        let state = self.state_at(eps, x)?;
        self.rates_from_state(&state, gamma)
    }

    /// `d mu_d / dt` written in terms of `lambda` and `lambda'`, for subtypes of
    /// degree two or more (table order; other entries are 0).
    pub fn check_rates_along_path(
        &self,
        eps: &ErasureVector,
        x: &[f64],
        dxdt: &[f64],
    ) -> Result<Vec<f64>, EvolutionError> {
        let lp = self.lambda_prime(eps, x, dxdt)?;
        let lambda = self.spec.lambda_unchecked(eps.as_slice(), x);
        let mu = self.mu_subtypes(&lambda);
        let mut out = vec![0.0; self.table.len()];
        for (k, slot) in out.iter_mut().enumerate() {
            if self.table.degree(k) < 2 {
                continue;
            }
            let d = self.table.subtype(k);
            *slot = (0..self.spec.ne())
                .filter(|&j| lambda[j] != 0.0)
                .map(|j| {
                    let above = self
                        .table
                        .added(k, j)
                        .map_or(0.0, |up| f64::from(d[j] + 1) * mu[up]);
                    (f64::from(d[j]) * mu[k] - above) * lp[j] / lambda[j]
                })
                .sum();
        }
        Ok(out)
    }

    /// `jac[i][j] = d mu_{e_i}(eps, x) / d x_j`.
    pub fn supply_jacobian(
        &self,
        eps: &ErasureVector,
        x: &[f64],
    ) -> Result<Vec<Vec<f64>>, EvolutionError> {
        self.check(eps, x)?;
        Ok(self.supply_jacobian_unchecked(eps.as_slice(), x))
    }

    pub(crate) fn supply_jacobian_unchecked(&self, eps: &[f64], x: &[f64]) -> Vec<Vec<f64>> {
        let ne = self.spec.ne();
        let grad = self.spec.nu_grad_unchecked(eps, x);
        let hess = self.spec.nu_hessian_unchecked(eps, x);
        let lambda = self.spec.lambda_unchecked(eps, x);
        let lam_jac = self.spec.lambda_jacobian_unchecked(eps, x);
        let y: Vec<f64> = lambda.iter().map(|l| 1.0 - l).collect();
        let rho = self.spec.rho_unchecked(&y);
        let rho_jac = self.spec.rho_jacobian_unchecked(&y);
        let mut jac = vec![vec![0.0; ne]; ne];
        for i in 0..ne {
            let bracket = x[i] - 1.0 + rho[i];
            for j in 0..ne {
                let chain: f64 = (0..ne).map(|k| rho_jac[i][k] * lam_jac[k][j]).sum();
                let delta = if i == j { 1.0 } else { 0.0 };
                jac[i][j] = hess[i][j] * bracket + grad[i] * (delta - chain);
            }
        }
        jac
    }

    /// Full snapshot of the closed-form state.
    pub fn point(
        &self,
        t: f64,
        eps: &ErasureVector,
        x: &[f64],
        gamma: Vec<f64>,
    ) -> Result<EvolutionPoint, EvolutionError> {
        self.check(eps, x)?;
        let lambda = self.spec.lambda_unchecked(eps.as_slice(), x);
        let nu_fracs = self.nu_terms(eps.as_slice(), x);
        Ok(EvolutionPoint {
            t,
            x: x.to_vec(),
            xbar: x.iter().zip(&self.edge_share).map(|(a, b)| a * b).sum(),
            nu_total: nu_fracs.iter().sum(),
            mu_fracs: self.higher_degree_map(&self.mu_subtypes(&lambda)),
            mu1: self.supply(eps.as_slice(), x),
            e: self.edges(&lambda, x),
            nu_fracs,
            gamma,
        })
    }
}
