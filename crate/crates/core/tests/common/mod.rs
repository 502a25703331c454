//! Test ensembles and independently coded reference computations.
#![allow(dead_code)]

use metpeel::ensemble::{parse_ensemble, EnsembleSpec};

/// A variable-node term `coef * r^b * x^d`.
#[derive(Debug, Clone)]
pub struct VnTerm {
    pub coef: f64,
    pub b: Vec<u32>,
    pub d: Vec<u32>,
}

/// A check-node term `coef * x^d`.
#[derive(Debug, Clone)]
pub struct CnTerm {
    pub coef: f64,
    pub d: Vec<u32>,
}

/// An ensemble kept as plain term lists, next to the text handed to the library.
#[derive(Debug, Clone)]
pub struct TestEnsemble {
    pub name: &'static str,
    pub text: &'static str,
    pub vn: Vec<VnTerm>,
    pub cn: Vec<CnTerm>,
}

impl TestEnsemble {
    pub fn spec(&self) -> EnsembleSpec {
        parse_ensemble(self.text).unwrap()
    }

    pub fn ne(&self) -> usize {
        self.cn[0].d.len()
    }

    pub fn nr(&self) -> usize {
        self.vn[0].b.len() - 1
    }
}

fn vn(coef: f64, b: &[u32], d: &[u32]) -> VnTerm {
    VnTerm {
        coef,
        b: b.to_vec(),
        d: d.to_vec(),
    }
}

fn cn(coef: f64, d: &[u32]) -> CnTerm {
    CnTerm {
        coef,
        d: d.to_vec(),
    }
}

pub const RA_TEXT: &str = "nu = r1*x1^2 + 1/3*r0*x2^3 ; mu = x1^2*x2";
pub const REG36_TEXT: &str = "nu = r1*x1^3 ; mu = 0.5*x1^6";
pub const IDENTITY_TEXT: &str = "nu = r1*x1 ; mu = x1";

pub fn ra() -> TestEnsemble {
    TestEnsemble {
        name: "RA",
        text: RA_TEXT,
        vn: vec![vn(1.0, &[0, 1], &[2, 0]), vn(1.0 / 3.0, &[1, 0], &[0, 3])],
        cn: vec![cn(1.0, &[2, 1])],
    }
}

pub fn regular36() -> TestEnsemble {
    TestEnsemble {
        name: "(3,6)",
        text: REG36_TEXT,
        vn: vec![vn(1.0, &[0, 1], &[3])],
        cn: vec![cn(0.5, &[6])],
    }
}

/// Three edge types, one punctured variable type.
pub fn three_type() -> TestEnsemble {
    TestEnsemble {
        name: "3-type",
        text: "nu = 0.5*r1*x1^2*x2 + 0.5*r1*x1*x3^2 + 0.25*r0*x2^2*x3^2 ; \
               mu = 0.5*x1^3 + 0.25*x2^4 + 0.25*x3^6",
        vn: vec![
            vn(0.5, &[0, 1], &[2, 1, 0]),
            vn(0.5, &[0, 1], &[1, 0, 2]),
            vn(0.25, &[1, 0], &[0, 2, 2]),
        ],
        cn: vec![
            cn(0.5, &[3, 0, 0]),
            cn(0.25, &[0, 4, 0]),
            cn(0.25, &[0, 0, 6]),
        ],
    }
}

/// Two transmitted channels over two edge types.
pub fn two_channel() -> TestEnsemble {
    TestEnsemble {
        name: "2-channel",
        text: "nu = 0.5*r1*x1^3 + 0.5*r2*x1^2*x2 ; mu = 0.25*x1^4*x2 + 0.25*x1^6*x2",
        vn: vec![vn(0.5, &[0, 1, 0], &[3, 0]), vn(0.5, &[0, 0, 1], &[2, 1])],
        cn: vec![cn(0.25, &[4, 1]), cn(0.25, &[6, 1])],
    }
}

pub fn all() -> Vec<TestEnsemble> {
    vec![ra(), regular36(), three_type(), two_channel()]
}

fn pow(a: f64, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, _| acc * a)
}

fn choose(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// `nu_{b,d}(eps, 1) = coef * prod eps_k^{b_k}` per term.
pub fn nu_initial(ens: &TestEnsemble, eps: &[f64]) -> Vec<f64> {
    ens.vn
        .iter()
        .map(|t| {
            t.coef
                * t.b
                    .iter()
                    .zip(eps)
                    .map(|(&b, &e)| pow(e, b))
                    .product::<f64>()
        })
        .collect()
}

/// Retention probability per edge type at `x = 1`.
pub fn lambda_initial(ens: &TestEnsemble, eps: &[f64]) -> Vec<f64> {
    let nu = nu_initial(ens, eps);
    (0..ens.ne())
        .map(|i| {
            let kept: f64 = ens
                .vn
                .iter()
                .zip(&nu)
                .map(|(t, n)| f64::from(t.d[i]) * n)
                .sum();
            let all: f64 = ens.vn.iter().map(|t| f64::from(t.d[i]) * t.coef).sum();
            kept / all
        })
        .collect()
}

/// Every `d <= D` with its fraction, by enumerating each check term's thinning.
pub fn mu_initial(ens: &TestEnsemble, eps: &[f64]) -> Vec<(Vec<u32>, f64)> {
    let lam = lambda_initial(ens, eps);
    let mut out: Vec<(Vec<u32>, f64)> = Vec::new();
    for t in &ens.cn {
        let mut d = vec![0u32; t.d.len()];
        loop {
            let mut p = t.coef;
            for i in 0..d.len() {
                p *= choose(t.d[i], d[i]) * pow(lam[i], d[i]) * pow(1.0 - lam[i], t.d[i] - d[i]);
            }
            match out.iter_mut().find(|(v, _)| *v == d) {
                Some((_, v)) => *v += p,
                None => out.push((d.clone(), p)),
            }
            let mut k = 0;
            while k < d.len() && d[k] == t.d[k] {
                d[k] = 0;
                k += 1;
            }
            if k == d.len() {
                break;
            }
            d[k] += 1;
        }
    }
    out
}

/// `sup { eps : x - 1 + (1 - eps x^2)^5 > 0 for x in (0, 1] }` by bisection.
pub fn scalar_de_threshold_36(tol: f64) -> f64 {
    let f = |eps: f64, x: f64| x - 1.0 + (1.0 - eps * x * x).powi(5);
    let ok = |eps: f64| {
        let n = 20_000;
        let mut best = (f64::INFINITY, 0.0);
        for k in 1..=n {
            let x = k as f64 / n as f64;
            let v = f(eps, x);
            if v < best.0 {
                best = (v, x);
            }
        }
        // refine the minimum by golden-section search around the grid point
        let (mut a, mut b) = (
            (best.1 - 1.0 / n as f64).max(1e-12),
            (best.1 + 1.0 / n as f64).min(1.0),
        );
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(eps, c) < f(eps, d) {
                b = d;
            } else {
                a = c;
            }
        }
        f(eps, 0.5 * (a + b)).min(best.0) > 0.0
    };
    let (mut lo, mut hi) = (0.3, 0.5);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Full erasure vector `(1, eps * dir)`.
pub fn erasure_along(ens: &TestEnsemble, dir: &[f64], eps: f64) -> Vec<f64> {
    let mut v = vec![1.0];
    v.extend((0..ens.nr()).map(|k| dir.get(k).copied().unwrap_or(1.0) * eps));
    v
}
