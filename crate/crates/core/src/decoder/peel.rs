use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::graph::{GraphSampler, SampledGraph};
use super::DecoderError;
use crate::evolution::{ErasureVector, StateFractions};
use crate::pathsim::Schedule;

/// Snapshots per trajectory unless configured otherwise.
pub const DEFAULT_RESOLUTION: usize = 512;

const NONE: u32 = u32::MAX;

/// Integer decoder counts after `iteration` peels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub iteration: u64,
    /// `iteration / E`
    pub t: f64,
    /// Erased, unresolved variable nodes per term.
    pub nu: Vec<u64>,
    /// Residual check nodes per sub-type, in table order.
    pub mu: Vec<u64>,
    /// Residual edges per type.
    pub edges: Vec<u64>,
}

impl Snapshot {
    /// Counts relative to `N` (nodes) and `E` (edges).
    pub fn fractions(&self, n: usize, e: usize) -> StateFractions {
        let n = n as f64;
        let e = e as f64;
        StateFractions {
            nu: self.nu.iter().map(|&c| c as f64 / n).collect(),
            mu: self.mu.iter().map(|&c| c as f64 / n).collect(),
            e: self.edges.iter().map(|&c| c as f64 / e).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    Peeled {
        edge_type: usize,
        cn: usize,
        vn: usize,
    },
    /// No variable nodes remain.
    Finished,
    /// Variable nodes remain but the schedule has nothing to select.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecodeOutcome {
    pub success: bool,
    pub iterations: u64,
    /// Unresolved variable nodes; empty on success.
    pub residual: Vec<usize>,
    /// Snapshots at iterations `0, k, 2k, ...` up to the last iteration.
    pub trajectory: Vec<Snapshot>,
    /// The terminal state, also valid for every later grid point.
    pub terminal: Snapshot,
    /// Iterations between snapshots.
    pub snapshot_every: u64,
}

/// Residual Tanner graph during peeling.
#[derive(Debug, Clone)]
pub struct DecoderState<'g> {
    graph: &'g SampledGraph,
    alive: Vec<bool>,
    residual_vns: usize,
    cn_sub: Vec<u32>,
    m_counts: Vec<u64>,
    n_counts: Vec<u64>,
    vn_side: Vec<u64>,
    cn_side: Vec<u64>,
    deg1: Vec<Vec<u32>>,
    pos: Vec<u32>,
    iteration: u64,
    sizes: Vec<usize>,
    edge_scratch: Vec<usize>,
}

/// Erases each variable node independently with probability
/// `prod_k eps_k^{b_k}` and strips the known nodes' edges.
pub fn apply_channel<'g>(
    graph: &'g SampledGraph,
    eps: &ErasureVector,
    seed: u64,
) -> Result<DecoderState<'g>, DecoderError> {
    let nr = graph.types.vn_b.first().map_or(0, Vec::len);
    if eps.len() != nr {
        return Err(DecoderError::BadState(format!(
            "erasure vector has {} entries, ensemble has {nr} channels",
            eps.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = eps.as_slice();
    let alive: Vec<bool> = (0..graph.num_vns())
        .map(|v| {
            let p: f64 = graph
                .vn_channel(v)
                .iter()
                .zip(eps)
                .map(|(&b, &e)| e.powi(b as i32))
                .product();
            rng.gen::<f64>() < p
        })
        .collect();
    Ok(DecoderState::new(graph, alive))
}

impl<'g> DecoderState<'g> {
    fn new(graph: &'g SampledGraph, alive: Vec<bool>) -> Self {
        let table = graph.table();
        let ne = graph.ne();
        let mut cn_sub: Vec<u32> = (0..graph.num_cns())
            .map(|c| graph.cn_subtype(c) as u32)
            .collect();
        let mut n_counts = vec![0u64; graph.types.vn_d.len()];
        let mut vn_side = vec![0u64; ne];
        let mut residual_vns = 0;
        for (v, &live) in alive.iter().enumerate() {
            if live {
                residual_vns += 1;
                let t = graph.vn_term(v);
                n_counts[t] += 1;
                for (i, &d) in graph.types.vn_d[t].iter().enumerate() {
                    vn_side[i] += u64::from(d);
                }
            } else {
                for (j, c) in graph.vn_neighbors(v) {
                    cn_sub[c] = table
                        .removed(cn_sub[c] as usize, j)
                        .expect("check node lost more edges than it has")
                        as u32;
                }
            }
        }
        let mut m_counts = vec![0u64; table.len()];
        let mut cn_side = vec![0u64; ne];
        let mut deg1 = vec![Vec::new(); ne];
        let mut pos = vec![NONE; graph.num_cns()];
        for (c, &k) in cn_sub.iter().enumerate() {
            let k = k as usize;
            m_counts[k] += 1;
            for (i, &d) in table.subtype(k).iter().enumerate() {
                cn_side[i] += u64::from(d);
            }
            if let Some(i) = table.unit_type(k) {
                pos[c] = deg1[i].len() as u32;
                deg1[i].push(c as u32);
            }
        }
        Self {
            graph,
            alive,
            residual_vns,
            cn_sub,
            m_counts,
            n_counts,
            vn_side,
            cn_side,
            deg1,
            pos,
            iteration: 0,
            sizes: vec![0; ne],
            edge_scratch: vec![0; ne],
        }
    }

    pub fn graph(&self) -> &SampledGraph {
        self.graph
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn residual_vns(&self) -> usize {
        self.residual_vns
    }

    pub fn is_resolved(&self, v: usize) -> bool {
        !self.alive[v]
    }

    /// Degree-one check nodes per edge type.
    pub fn deg1_counts(&self) -> Vec<usize> {
        self.deg1.iter().map(Vec::len).collect()
    }

    /// Residual edges per type, counted from the variable-node side.
    pub fn edge_counts(&self) -> &[u64] {
        &self.vn_side
    }

    /// Residual edges per type, counted from the check-node side.
    pub fn check_side_edge_counts(&self) -> &[u64] {
        &self.cn_side
    }

    pub fn is_balanced(&self) -> bool {
        self.vn_side == self.cn_side
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            iteration: self.iteration,
            t: self.iteration as f64 / self.graph.num_edges().max(1) as f64,
            nu: self.n_counts.clone(),
            mu: self.m_counts.clone(),
            edges: self.vn_side.clone(),
        }
    }

    pub fn residual(&self) -> Vec<usize> {
        (0..self.alive.len()).filter(|&v| self.alive[v]).collect()
    }

    fn unlink(&mut self, c: usize, i: usize) {
        let p = self.pos[c] as usize;
        let list = &mut self.deg1[i];
        let last = *list.last().unwrap();
        list.swap_remove(p);
        if last as usize != c {
            self.pos[last as usize] = p as u32;
        }
        self.pos[c] = NONE;
    }

    fn link(&mut self, c: usize, i: usize) {
        self.pos[c] = self.deg1[i].len() as u32;
        self.deg1[i].push(c as u32);
    }

    fn remove_vn(&mut self, v: usize) {
        let graph = self.graph;
        let table = graph.table();
        self.alive[v] = false;
        self.residual_vns -= 1;
        let t = graph.vn_term(v);
        self.n_counts[t] -= 1;
        for (i, &d) in graph.types.vn_d[t].iter().enumerate() {
            self.vn_side[i] -= u64::from(d);
        }
        for e in graph.vn_edge_range(v) {
            let j = graph.edge_type[e] as usize;
            let c = graph.edge_cn[e] as usize;
            let old = self.cn_sub[c] as usize;
            let new = table
                .removed(old, j)
                .expect("check node lost more edges than it has");
            if let Some(i) = table.unit_type(old) {
                self.unlink(c, i);
            }
            if let Some(i) = table.unit_type(new) {
                self.link(c, i);
            }
            self.m_counts[old] -= 1;
            self.m_counts[new] += 1;
            self.cn_side[j] -= 1;
            self.cn_sub[c] = new as u32;
        }
    }

    /// One peel: pick an edge type from the schedule, then a uniformly random
    /// degree-one check node of that type, and resolve its variable node.
    pub fn step<R: Rng + ?Sized>(&mut self, schedule: &Schedule, rng: &mut R) -> StepEvent {
        if self.residual_vns == 0 {
            return StepEvent::Finished;
        }
        for (s, l) in self.sizes.iter_mut().zip(&self.deg1) {
            *s = l.len();
        }
        for (s, &c) in self.edge_scratch.iter_mut().zip(&self.vn_side) {
            *s = c as usize;
        }
        let Some(i) = schedule.pick_type(&self.sizes, &self.edge_scratch, rng) else {
            return StepEvent::Stalled;
        };
        if self.deg1[i].is_empty() {
            return StepEvent::Stalled;
        }
        let c = self.deg1[i][rng.gen_range(0..self.deg1[i].len())] as usize;
        let graph = self.graph;
        let vn = graph
            .cn_edge_ids(c)
            .iter()
            .map(|&e| graph.edge_vn[e as usize] as usize)
            .find(|&v| self.alive[v])
            .expect("degree-one check node has no residual neighbor");
        self.remove_vn(vn);
        self.iteration += 1;
        debug_assert!(
            self.is_balanced(),
            "edge counts diverged at {}",
            self.iteration
        );
        StepEvent::Peeled {
            edge_type: i,
            cn: c,
            vn,
        }
    }

    /// Peels until success or a stall, recording `resolution` evenly spaced
    /// snapshots over `E` iterations.
    pub fn run<R: Rng + ?Sized>(
        mut self,
        schedule: &Schedule,
        rng: &mut R,
        resolution: usize,
    ) -> DecodeOutcome {
        let e = self.graph.num_edges() as u64;
        let every = e.div_ceil(resolution.max(1) as u64).max(1);
        let mut trajectory = vec![self.checked_snapshot()];
        let success = loop {
            match self.step(schedule, rng) {
                StepEvent::Peeled { .. } => {
                    if self.iteration.is_multiple_of(every) {
                        trajectory.push(self.checked_snapshot());
                    }
                }
                StepEvent::Finished => break true,
                StepEvent::Stalled => break false,
            }
        };
        DecodeOutcome {
            success,
            iterations: self.iteration,
            residual: self.residual(),
            trajectory,
            terminal: self.checked_snapshot(),
            snapshot_every: every,
        }
    }

    fn checked_snapshot(&self) -> Snapshot {
        assert!(
            self.is_balanced(),
            "edge counts diverged at iteration {}: {:?} vs {:?}",
            self.iteration,
            self.vn_side,
            self.cn_side
        );
        self.snapshot()
    }
}

/// Runs the decoder to completion with the default snapshot resolution.
pub fn peel<R: Rng + ?Sized>(
    state: DecoderState<'_>,
    schedule: &Schedule,
    rng: &mut R,
) -> DecodeOutcome {
    state.run(schedule, rng, DEFAULT_RESOLUTION)
}

/// Change in node counts over one peel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepDelta {
    pub dnu: Vec<i64>,
    pub dmu: Vec<i64>,
}

/// Samples a fresh residual graph with the counts of `snapshot`, all
/// variable nodes erased, and peels once. `None` if no peel is possible.
pub fn replay_one_step(
    graph: &SampledGraph,
    snapshot: &Snapshot,
    schedule: &Schedule,
    seed: u64,
) -> Result<Option<StepDelta>, DecoderError> {
    let sampler = GraphSampler::from_counts(
        graph.types.clone(),
        graph.n(),
        snapshot.nu.iter().map(|&c| c as usize).collect(),
        snapshot.mu.iter().map(|&c| c as usize).collect(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let residual = sampler.sample(rng.gen());
    let mut state = DecoderState::new(&residual, vec![true; residual.num_vns()]);
    let before = state.snapshot();
    match state.step(schedule, &mut rng) {
        StepEvent::Peeled { .. } => {}
        _ => return Ok(None),
    }
    let after = state.snapshot();
    let diff = |a: &[u64], b: &[u64]| {
        a.iter()
            .zip(b)
            .map(|(&x, &y)| y as i64 - x as i64)
            .collect()
    };
    // the residual graph omits degree-zero checks
    let mut dmu: Vec<i64> = diff(&before.mu, &after.mu);
    for (k, d) in dmu.iter_mut().enumerate() {
        if graph.table().degree(k) == 0 {
            *d = 0;
        }
    }
    Ok(Some(StepDelta {
        dnu: diff(&before.nu, &after.nu),
        dmu,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{check_stopping_set, sample_graph};
    use crate::ensemble::parse_ensemble;

    const RA: &str = "nu = r1*x1^2 + 1/3*r0*x2^3 ; mu = x1^2*x2";

    fn erasure(nr: usize, eps1: f64) -> ErasureVector {
        let mut v = vec![1.0; nr];
        if nr > 1 {
            v[1] = eps1;
        }
        ErasureVector::new(v).unwrap()
    }

    #[test]
    fn identity_ensemble_takes_n_iterations() {
        let spec = parse_ensemble("nu = r1*x1 ; mu = x1").unwrap();
        let g = sample_graph(&spec, 50, 3).unwrap();
        let state = apply_channel(&g, &erasure(2, 1.0), 1).unwrap();
        assert_eq!(state.residual_vns(), 50);
        let out = peel(
            state,
            &Schedule::natural(),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert!(out.success);
        assert_eq!(out.iterations, 50);
        assert!(out.residual.is_empty());
    }

    #[test]
    fn nothing_erased_succeeds_immediately() {
        let spec = parse_ensemble("nu = r1*x1^3 ; mu = 0.5*x1^6").unwrap();
        let g = sample_graph(&spec, 100, 3).unwrap();
        let state = apply_channel(&g, &erasure(2, 0.0), 1).unwrap();
        assert_eq!(state.residual_vns(), 0);
        assert!(state.edge_counts().iter().all(|&c| c == 0));
        let out = peel(
            state,
            &Schedule::natural(),
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert!(out.success);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn full_erasure_keeps_full_degree_checks() {
        let spec = parse_ensemble(RA).unwrap();
        let g = sample_graph(&spec, 300, 3).unwrap();
        let state = apply_channel(&g, &erasure(2, 1.0), 1).unwrap();
        let full = g.table().index_of(&[2, 1]).unwrap();
        let snap = state.snapshot();
        for (k, &m) in snap.mu.iter().enumerate() {
            assert_eq!(m, if k == full { 300 } else { 0 });
        }
        assert_eq!(state.deg1_counts(), vec![0, 0]);
    }

    #[test]
    fn two_node_chain_peels_in_order() {
        // VN1 (degree 2) to CN1 and CN2, VN2 (degree 1) to CN2
        let spec = parse_ensemble("nu = 0.5*r1*x1^2 + 0.5*r1*x1 ; mu = 0.5*x1 + 0.5*x1^2").unwrap();
        let sampler = GraphSampler::new(&spec, 2).unwrap();
        let table = sampler.table();
        let (k1, k2) = (table.index_of(&[1]).unwrap(), table.index_of(&[2]).unwrap());
        // check sockets in node order: CNs are laid out by sub-type index
        let (cn1, cn2) = if k1 < k2 { (0, 1) } else { (1, 0) };
        let sockets_of = |cn: usize| -> Vec<usize> {
            let first = if k1 < k2 { [0, 1, 1] } else { [0, 0, 1] };
            (0..3).filter(|&s| first[s] == cn).collect()
        };
        let s1 = sockets_of(cn1)[0];
        let s2 = sockets_of(cn2);
        // variable nodes are laid out by term; find where the degree-2 node sits
        let (a, b, perm) = if spec.vnodes()[0].d[0] == 2 {
            (0, 1, vec![s1, s2[0], s2[1]])
        } else {
            (1, 0, vec![s2[0], s1, s2[1]])
        };
        let g = sampler.with_permutations(&[perm]).unwrap();
        let mut state = apply_channel(&g, &erasure(2, 1.0), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = Schedule::natural();
        assert_eq!(
            state.step(&s, &mut rng),
            StepEvent::Peeled {
                edge_type: 0,
                cn: cn1,
                vn: a
            }
        );
        assert_eq!(
            state.step(&s, &mut rng),
            StepEvent::Peeled {
                edge_type: 0,
                cn: cn2,
                vn: b
            }
        );
        assert_eq!(state.step(&s, &mut rng), StepEvent::Finished);
    }

    #[test]
    fn failures_leave_stopping_sets() {
        let spec = parse_ensemble(RA).unwrap();
        let mut failures = 0;
        for seed in 0..20 {
            let g = sample_graph(&spec, 2000, seed).unwrap();
            let state = apply_channel(&g, &erasure(2, 0.75), seed).unwrap();
            let out = peel(
                state,
                &Schedule::natural(),
                &mut ChaCha8Rng::seed_from_u64(seed),
            );
            if !out.success {
                failures += 1;
                assert!(check_stopping_set(&g, &out.residual));
                assert_eq!(
                    out.residual.len() as u64,
                    out.terminal.nu.iter().sum::<u64>()
                );
            }
        }
        assert!(failures > 15);
    }

    #[test]
    fn snapshots_are_evenly_spaced() {
        let spec = parse_ensemble(RA).unwrap();
        let g = sample_graph(&spec, 3000, 1).unwrap();
        let state = apply_channel(&g, &erasure(2, 0.5), 1).unwrap();
        let initial: u64 = state.snapshot().nu.iter().sum();
        let out = state.run(&Schedule::natural(), &mut ChaCha8Rng::seed_from_u64(1), 64);
        assert!(out.success);
        let e = g.num_edges() as u64;
        assert_eq!(out.snapshot_every, e.div_ceil(64));
        for (k, s) in out.trajectory.iter().enumerate() {
            assert_eq!(s.iteration, k as u64 * out.snapshot_every);
            // one variable node per iteration
            assert_eq!(s.nu.iter().sum::<u64>(), initial - s.iteration);
        }
    }

    #[test]
    fn priority_schedule_follows_ranking() {
        let spec = parse_ensemble(RA).unwrap();
        let g = sample_graph(&spec, 2000, 5).unwrap();
        let mut state = apply_channel(&g, &erasure(2, 0.4), 5).unwrap();
        let s = Schedule::priority(&[2, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        loop {
            let avail = state.deg1_counts();
            match state.step(&s, &mut rng) {
                StepEvent::Peeled { edge_type, .. } => {
                    assert_eq!(edge_type, if avail[1] > 0 { 1 } else { 0 });
                }
                _ => break,
            }
        }
    }

    #[test]
    fn replay_removes_one_variable_node() {
        let spec = parse_ensemble(RA).unwrap();
        let g = sample_graph(&spec, 2000, 2).unwrap();
        let state = apply_channel(&g, &erasure(2, 0.55), 2).unwrap();
        let out = state.run(&Schedule::natural(), &mut ChaCha8Rng::seed_from_u64(2), 16);
        let snap = &out.trajectory[3];
        let d = replay_one_step(&g, snap, &Schedule::natural(), 9)
            .unwrap()
            .unwrap();
        assert_eq!(d.dnu.iter().sum::<i64>(), -1);
        let again = replay_one_step(&g, snap, &Schedule::natural(), 9)
            .unwrap()
            .unwrap();
        assert_eq!(d, again);
    }
}
