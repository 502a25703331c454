use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PathError;
use crate::evolution::{ErasureVector, Evolution};

pub const DEFAULT_TAU_POS: f64 = 1e-9;

/// Rule for choosing the edge type of the next degree-one check to peel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Proportional to the remaining degree-one checks of each type.
    Natural,
    /// Proportional to the remaining edges of each available type.
    ProportionalToEdges,
    /// First available type in the given order (0-based); unlisted types
    /// follow in index order.
    FixedPriority(Vec<usize>),
    /// Uniform over the available types.
    UniformOverAvailable,
    /// Proportional to fixed weights, restricted to available types.
    CustomWeights(Vec<f64>),
    /// A fixed pmf that ignores availability. Not a reasonable schedule.
    FixedPmf(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    /// Degree-one supply at or below `tau_pos * nu(eps, 1)` counts as empty.
    pub tau_pos: f64,
}

impl Schedule {
    pub fn new(kind: ScheduleKind) -> Self {
        Self {
            kind,
            tau_pos: DEFAULT_TAU_POS,
        }
    }

    pub fn natural() -> Self {
        Self::new(ScheduleKind::Natural)
    }

    pub fn uniform() -> Self {
        Self::new(ScheduleKind::UniformOverAvailable)
    }

    pub fn proportional() -> Self {
        Self::new(ScheduleKind::ProportionalToEdges)
    }

    /// Priority order given with 1-based edge types.
    pub fn priority(order: &[usize]) -> Self {
        Self::new(ScheduleKind::FixedPriority(
            order.iter().map(|i| i.saturating_sub(1)).collect(),
        ))
    }

    pub fn weights(w: Vec<f64>) -> Self {
        Self::new(ScheduleKind::CustomWeights(w))
    }

    /// A fixed pmf over edge types that may select empty types.
    pub fn unreasonable_fixed(pmf: Vec<f64>) -> Self {
        Self::new(ScheduleKind::FixedPmf(pmf))
    }

    pub fn with_tau_pos(mut self, tau_pos: f64) -> Self {
        self.tau_pos = tau_pos;
        self
    }

    pub fn is_reasonable(&self) -> bool {
        !matches!(self.kind, ScheduleKind::FixedPmf(_))
    }

    /// Parses `natural`, `uniform`, `proportional`, `priority:2,1`,
    /// `weights:1,3` or `fixed:1,0`. Edge types are 1-based.
    pub fn parse(text: &str, ne: usize, allow_unreasonable: bool) -> Result<Self, PathError> {
        let bad = |msg: String| PathError::BadSchedule(msg);
        let (head, tail) = match text.split_once(':') {
            Some((h, t)) => (h.trim(), Some(t)),
            None => (text.trim(), None),
        };
        let floats = |t: Option<&str>| -> Result<Vec<f64>, PathError> {
            t.ok_or_else(|| bad(format!("`{head}` needs a comma-separated list")))?
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| bad(format!("`{}` is not a number", v.trim())))
                })
                .collect()
        };
        let kind = match (head, tail) {
            ("natural", None) => ScheduleKind::Natural,
            ("uniform", None) => ScheduleKind::UniformOverAvailable,
            ("proportional", None) => ScheduleKind::ProportionalToEdges,
            ("priority", Some(t)) => {
                let order = t
                    .split(',')
                    .map(|v| match v.trim().parse::<usize>() {
                        Ok(i) if i >= 1 => Ok(i - 1),
                        _ => Err(bad(format!("`{}` is not an edge type", v.trim()))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                ScheduleKind::FixedPriority(order)
            }
            ("weights", t) => ScheduleKind::CustomWeights(floats(t)?),
            ("fixed", t) => {
                if !allow_unreasonable {
                    return Err(bad(
                        "fixed pmf schedules are unreasonable and need --allow-unreasonable".into(),
                    ));
                }
                ScheduleKind::FixedPmf(floats(t)?)
            }
            _ => return Err(bad(format!("unknown schedule `{text}`"))),
        };
        let s = Self::new(kind);
        s.validate(ne)?;
        Ok(s)
    }

    pub fn validate(&self, ne: usize) -> Result<(), PathError> {
        let bad = |msg: String| Err(PathError::BadSchedule(msg));
        if !(self.tau_pos >= 0.0) {
            return bad(format!("tau_pos must be nonnegative, got {}", self.tau_pos));
        }
        match &self.kind {
            ScheduleKind::FixedPriority(order) => {
                let mut seen = vec![false; ne];
                for &i in order {
                    if i >= ne {
                        return bad(format!("edge type {} does not exist", i + 1));
                    }
                    if std::mem::replace(&mut seen[i], true) {
                        return bad(format!("edge type {} listed twice", i + 1));
                    }
                }
            }
            ScheduleKind::CustomWeights(w) | ScheduleKind::FixedPmf(w) => {
                if w.len() != ne {
                    return bad(format!("expected {ne} weights, got {}", w.len()));
                }
                if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return bad("weights must be finite and nonnegative".into());
                }
                if w.iter().sum::<f64>() <= 0.0 {
                    return bad("weights must not all be zero".into());
                }
                if let ScheduleKind::FixedPmf(p) = &self.kind {
                    if (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                        return bad("a fixed pmf must sum to 1".into());
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Full priority ranking (0-based), highest first.
    pub(crate) fn ranking(&self, ne: usize) -> Vec<usize> {
        match &self.kind {
            ScheduleKind::FixedPriority(order) => {
                let mut r = order.clone();
                r.extend((0..ne).filter(|i| !order.contains(i)));
                r
            }
            _ => (0..ne).collect(),
        }
    }

    /// Schedule pmf restricted to the types in `avail`, given per-type
    /// degree-one supply and edge counts. Returns `None` when nothing is
    /// available. For a fixed pmf the availability mask is ignored.
    pub fn pmf_over(&self, avail: &[bool], supply: &[f64], edges: &[f64]) -> Option<Vec<f64>> {
        let ne = avail.len();
        let mut w = vec![0.0; ne];
        match &self.kind {
            ScheduleKind::FixedPmf(p) => return Some(p.clone()),
            ScheduleKind::Natural => {
                for i in 0..ne {
                    if avail[i] {
                        w[i] = supply[i].max(0.0);
                    }
                }
            }
            ScheduleKind::ProportionalToEdges => {
                for i in 0..ne {
                    if avail[i] {
                        w[i] = edges[i].max(0.0);
                    }
                }
            }
            ScheduleKind::UniformOverAvailable => {
                for i in 0..ne {
                    if avail[i] {
                        w[i] = 1.0;
                    }
                }
            }
            ScheduleKind::CustomWeights(cw) => {
                for i in 0..ne {
                    if avail[i] {
                        w[i] = cw[i];
                    }
                }
            }
            ScheduleKind::FixedPriority(_) => {
                let top = self.ranking(ne).into_iter().find(|&i| avail[i])?;
                w[top] = 1.0;
            }
        }
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            Some(w.into_iter().map(|v| v / total).collect())
        } else {
            None
        }
    }

    /// Draws the edge type to peel from integer degree-one and edge counts.
    /// `None` means no degree-one check is available. A fixed pmf may return
    /// a type with no degree-one check.
    pub fn pick_type<R: Rng + ?Sized>(
        &self,
        deg1: &[usize],
        edges: &[usize],
        rng: &mut R,
    ) -> Option<usize> {
        let avail: Vec<bool> = deg1.iter().map(|&c| c > 0).collect();
        if let ScheduleKind::FixedPriority(_) = self.kind {
            return self.ranking(deg1.len()).into_iter().find(|&i| avail[i]);
        }
        if !avail.iter().any(|&a| a) && self.is_reasonable() {
            return None;
        }
        let supply: Vec<f64> = deg1.iter().map(|&c| c as f64).collect();
        let e: Vec<f64> = edges.iter().map(|&c| c as f64).collect();
        let pmf = self.pmf_over(&avail, &supply, &e)?;
        let mut u: f64 = rng.gen();
        let mut last = None;
        for (i, p) in pmf.iter().enumerate() {
            if *p > 0.0 {
                last = Some(i);
                if u < *p {
                    return Some(i);
                }
                u -= p;
            }
        }
        last
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        match &self.kind {
            ScheduleKind::Natural => write!(f, "natural"),
            ScheduleKind::ProportionalToEdges => write!(f, "proportional"),
            ScheduleKind::UniformOverAvailable => write!(f, "uniform"),
            ScheduleKind::FixedPriority(o) => {
                let o: Vec<String> = o.iter().map(|i| (i + 1).to_string()).collect();
                write!(f, "priority:{}", o.join(","))
            }
            ScheduleKind::CustomWeights(w) => write!(f, "weights:{}", list(w)),
            ScheduleKind::FixedPmf(p) => write!(f, "fixed:{}", list(p)),
        }
    }
}

/// Natural-schedule pmf at `(eps, x)`: degree-one supply per type,
/// clamped at zero and normalized.
pub fn natural_gamma(
    evo: &Evolution,
    eps: &ErasureVector,
    x: &[f64],
    tau_pos: f64,
) -> Result<Vec<f64>, PathError> {
    let supply = evo.mu1_closed_form(eps, x)?;
    let total: f64 = supply.iter().map(|s| s.max(0.0)).sum();
    if total <= tau_pos {
        return Err(PathError::Indeterminate { total });
    }
    Ok(supply.iter().map(|s| s.max(0.0) / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::parse_ensemble;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parse_round_trips_through_display() {
        for text in [
            "natural",
            "uniform",
            "proportional",
            "priority:2,1",
            "weights:1,3",
        ] {
            let s = Schedule::parse(text, 2, false).unwrap();
            assert_eq!(s.to_string(), text);
        }
        let s = Schedule::parse("fixed:1,0", 2, true).unwrap();
        assert!(!s.is_reasonable());
        assert_eq!(s.to_string(), "fixed:1,0");
    }

    #[test]
    fn parse_rejects_bad_input() {
        assert!(Schedule::parse("fixed:1,0", 2, false).is_err());
        assert!(Schedule::parse("priority:3", 2, false).is_err());
        assert!(Schedule::parse("priority:1,1", 2, false).is_err());
        assert!(Schedule::parse("priority:0", 2, false).is_err());
        assert!(Schedule::parse("weights:1", 2, false).is_err());
        assert!(Schedule::parse("weights:0,0", 2, false).is_err());
        assert!(Schedule::parse("fixed:0.5,0.4", 2, true).is_err());
        assert!(Schedule::parse("greedy", 2, false).is_err());
    }

    #[test]
    fn natural_gamma_examples() {
        let evo =
            Evolution::new(&parse_ensemble("nu = r1*x1^2 + 1/3*r0*x2^3 ; mu = x1^2*x2").unwrap())
                .unwrap();
        let eps = ErasureVector::uniform(1, 0.6175).unwrap();
        assert_eq!(
            natural_gamma(&evo, &eps, &[1.0, 1.0], 1e-9).unwrap(),
            vec![0.0, 1.0]
        );

        let reg = Evolution::new(&parse_ensemble("nu = r1*x1^3 ; mu = 0.5*x1^6").unwrap()).unwrap();
        let eps = ErasureVector::uniform(1, 0.3).unwrap();
        assert_eq!(natural_gamma(&reg, &eps, &[1.0], 1e-9).unwrap(), vec![1.0]);
        let eps = ErasureVector::uniform(1, 1.0).unwrap();
        assert!(matches!(
            natural_gamma(&reg, &eps, &[1.0], 1e-9),
            Err(PathError::Indeterminate { .. })
        ));

        // two copies of the (3,6) ensemble on separate edge types
        let sym = Evolution::new(
            &parse_ensemble("nu = 0.5*r1*x1^3 + 0.5*r1*x2^3 ; mu = 0.25*x1^6 + 0.25*x2^6").unwrap(),
        )
        .unwrap();
        let eps = ErasureVector::uniform(1, 0.3).unwrap();
        let g = natural_gamma(&sym, &eps, &[0.8, 0.8], 1e-9).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pmf_restricts_to_available_types() {
        let avail = [false, true, true];
        let supply = [0.0, 0.2, 0.6];
        let edges = [0.1, 0.1, 0.3];
        let close = |g: Vec<f64>, want: [f64; 3]| {
            assert!(
                g.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15),
                "{g:?}"
            );
        };
        close(
            Schedule::natural()
                .pmf_over(&avail, &supply, &edges)
                .unwrap(),
            [0.0, 0.25, 0.75],
        );
        let g = Schedule::uniform()
            .pmf_over(&avail, &supply, &edges)
            .unwrap();
        assert_eq!(g, vec![0.0, 0.5, 0.5]);
        let g = Schedule::proportional()
            .pmf_over(&avail, &supply, &edges)
            .unwrap();
        close(g, [0.0, 0.25, 0.75]);
        let g = Schedule::priority(&[1, 3])
            .pmf_over(&avail, &supply, &edges)
            .unwrap();
        assert_eq!(g, vec![0.0, 0.0, 1.0]);
        assert!(Schedule::uniform()
            .pmf_over(&[false; 3], &supply, &edges)
            .is_none());
    }

    #[test]
    fn pick_type_respects_availability() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let i = Schedule::uniform()
                .pick_type(&[0, 3, 1], &[5, 5, 5], &mut rng)
                .unwrap();
            assert_ne!(i, 0);
        }
        assert_eq!(
            Schedule::priority(&[2, 1]).pick_type(&[4, 1], &[1, 1], &mut rng),
            Some(1)
        );
        assert_eq!(
            Schedule::priority(&[2, 1]).pick_type(&[4, 0], &[1, 1], &mut rng),
            Some(0)
        );
        assert_eq!(
            Schedule::natural().pick_type(&[0, 0], &[1, 1], &mut rng),
            None
        );
        let fixed = Schedule::unreasonable_fixed(vec![1.0, 0.0]);
        assert_eq!(fixed.pick_type(&[0, 5], &[1, 1], &mut rng), Some(0));
    }
}
