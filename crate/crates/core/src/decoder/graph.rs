use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DecoderError;
use crate::ensemble::{term_label, EnsembleSpec};
use crate::evolution::CheckSubTypeTable;

/// Node types shared by every graph sampled from one ensemble.
#[derive(Debug)]
pub(crate) struct NodeTypes {
    pub ne: usize,
    pub vn_b: Vec<Vec<u32>>,
    pub vn_d: Vec<Vec<u32>>,
    pub table: CheckSubTypeTable,
}

impl NodeTypes {
    pub fn new(spec: &EnsembleSpec) -> Result<Self, DecoderError> {
        Ok(Self {
            ne: spec.ne(),
            vn_b: spec.vnodes().iter().map(|t| t.b.clone()).collect(),
            vn_d: spec.vnodes().iter().map(|t| t.d.clone()).collect(),
            table: CheckSubTypeTable::build(spec)?,
        })
    }
}

/// Integer node counts per term for a block length `N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeCounts {
    pub vn: Vec<usize>,
    pub cn: Vec<usize>,
    /// Terms that round to zero nodes.
    pub warnings: Vec<String>,
}

fn largest_remainder(coef: &[f64], n: usize) -> Vec<i64> {
    let raw: Vec<f64> = coef.iter().map(|c| c * n as f64).collect();
    let total = raw.iter().sum::<f64>().round() as i64;
    let mut counts: Vec<i64> = raw.iter().map(|r| r.floor() as i64).collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let missing = total - counts.iter().sum::<i64>();
    for &i in order.iter().cycle().take(missing.max(0) as usize) {
        counts[i] += 1;
    }
    counts
}

/// Socket deficit (VN side minus CN side) per edge type.
fn deficits(vn_d: &[Vec<u32>], cn_d: &[Vec<u32>], vn: &[i64], cn: &[i64], ne: usize) -> Vec<i64> {
    let mut out = vec![0i64; ne];
    for (d, &c) in vn_d.iter().zip(vn) {
        for i in 0..ne {
            out[i] += i64::from(d[i]) * c;
        }
    }
    for (d, &c) in cn_d.iter().zip(cn) {
        for i in 0..ne {
            out[i] -= i64::from(d[i]) * c;
        }
    }
    out
}

const MAX_ADJUSTMENTS: usize = 4;

/// Rounds `N * coefficient` per term (largest remainder per side), then finds
/// the fewest +-1 changes (at most four) that balance every edge type,
/// preferring changes to the most populous terms.
pub fn node_counts(spec: &EnsembleSpec, n: usize) -> Result<NodeCounts, DecoderError> {
    let ne = spec.ne();
    let vn_d: Vec<Vec<u32>> = spec.vnodes().iter().map(|t| t.d.clone()).collect();
    let cn_d: Vec<Vec<u32>> = spec.cnodes().iter().map(|t| t.d.clone()).collect();
    let mut vn = largest_remainder(spec.vn_coef(), n);
    let mut cn = largest_remainder(spec.cn_coef(), n);
    let start = deficits(&vn_d, &cn_d, &vn, &cn, ne);

    if start.iter().any(|&d| d != 0) {
        // moves: (side, term, sign); side 0 = VN, 1 = CN
        let mut moves = Vec::new();
        for side in 0..2 {
            let len = if side == 0 { vn.len() } else { cn.len() };
            for t in 0..len {
                for sign in [-1i64, 1] {
                    moves.push((side, t, sign));
                }
            }
        }
        let effect: Vec<Vec<i64>> = moves
            .iter()
            .map(|&(side, t, sign)| {
                let d = if side == 0 { &vn_d[t] } else { &cn_d[t] };
                let s = if side == 0 { sign } else { -sign };
                d.iter().map(|&v| s * i64::from(v)).collect()
            })
            .collect();
        let weight = |m: usize| {
            let (side, t, _) = moves[m];
            if side == 0 {
                vn[t]
            } else {
                cn[t]
            }
        };
        let mut best: Option<(i64, Vec<usize>)> = None;
        for depth in 1..=MAX_ADJUSTMENTS {
            let mut combo = Vec::with_capacity(depth);
            search(
                &moves,
                &effect,
                &start,
                depth,
                0,
                &mut combo,
                &mut |c: &[usize]| {
                    let mut v = vn.clone();
                    let mut w = cn.clone();
                    for &m in c {
                        let (side, t, sign) = moves[m];
                        let slot = if side == 0 { &mut v[t] } else { &mut w[t] };
                        *slot += sign;
                    }
                    // no negative counts, and no term removed by the adjustment
                    let ok = |new: &[i64], old: &[i64]| {
                        new.iter()
                            .zip(old)
                            .all(|(a, b)| *a >= 0 && (*a > 0 || *b == 0))
                    };
                    if !ok(&v, &vn) || !ok(&w, &cn) {
                        return;
                    }
                    let score: i64 = c.iter().map(|&m| weight(m)).sum();
                    if best.as_ref().is_none_or(|(s, _)| score > *s) {
                        best = Some((score, c.to_vec()));
                    }
                },
            );
            if best.is_some() {
                break;
            }
        }
        let Some((_, combo)) = best else {
            return Err(DecoderError::Unbalanceable { deficits: start });
        };
        for m in combo {
            let (side, t, sign) = moves[m];
            if side == 0 {
                vn[t] += sign;
            } else {
                cn[t] += sign;
            }
        }
    }

    let mut warnings = Vec::new();
    for (t, (c, term)) in vn.iter().zip(spec.vnodes()).enumerate() {
        if *c == 0 {
            warnings.push(format!(
                "variable-node term {} ({}) has no nodes at N = {n}",
                t + 1,
                term_label(Some(&term.b), &term.d)
            ));
        }
    }
    for (t, (c, term)) in cn.iter().zip(spec.cnodes()).enumerate() {
        if *c == 0 {
            warnings.push(format!(
                "check-node term {} ({}) has no nodes at N = {n}",
                t + 1,
                term_label(None, &term.d)
            ));
        }
    }
    if vn.iter().all(|&c| c == 0) {
        return Err(DecoderError::TooSmall { n });
    }
    Ok(NodeCounts {
        vn: vn.into_iter().map(|c| c as usize).collect(),
        cn: cn.into_iter().map(|c| c as usize).collect(),
        warnings,
    })
}

/// Enumerates nondecreasing move sequences of length `depth` whose summed
/// effect cancels `target`, skipping sequences containing a move and its
/// inverse.
fn search(
    moves: &[(usize, usize, i64)],
    effect: &[Vec<i64>],
    target: &[i64],
    depth: usize,
    from: usize,
    combo: &mut Vec<usize>,
    visit: &mut dyn FnMut(&[usize]),
) {
    if combo.len() == depth {
        let mut d = target.to_vec();
        for &m in combo.iter() {
            for (x, e) in d.iter_mut().zip(&effect[m]) {
                *x += e;
            }
        }
        if d.iter().all(|&x| x == 0) {
            visit(combo);
        }
        return;
    }
    for m in from..moves.len() {
        let (side, t, sign) = moves[m];
        if combo
            .iter()
            .any(|&c| moves[c].0 == side && moves[c].1 == t && moves[c].2 == -sign)
        {
            continue;
        }
        combo.push(m);
        search(moves, effect, target, depth, m, combo, visit);
        combo.pop();
    }
}

/// Samples graphs with fixed node counts from the configuration model.
#[derive(Debug, Clone)]
pub struct GraphSampler {
    types: Arc<NodeTypes>,
    n: usize,
    vn_counts: Vec<usize>,
    /// Check-node counts per check sub-type (table order).
    cn_counts: Vec<usize>,
    warnings: Vec<String>,
}

impl GraphSampler {
    pub fn new(spec: &EnsembleSpec, n: usize) -> Result<Self, DecoderError> {
        let counts = node_counts(spec, n)?;
        let types = Arc::new(NodeTypes::new(spec)?);
        let mut cn_counts = vec![0; types.table.len()];
        for (term, &c) in counts.cn.iter().enumerate() {
            cn_counts[types.table.term_subtype(term)] += c;
        }
        Ok(Self {
            types,
            n,
            vn_counts: counts.vn,
            cn_counts,
            warnings: counts.warnings,
        })
    }

    /// A sampler for residual graphs with the given counts of variable
    /// nodes per term and check nodes per sub-type.
    pub(crate) fn from_counts(
        types: Arc<NodeTypes>,
        n: usize,
        vn_counts: Vec<usize>,
        cn_counts: Vec<usize>,
    ) -> Result<Self, DecoderError> {
        let ne = types.ne;
        let mut balance = vec![0i64; ne];
        for (d, &c) in types.vn_d.iter().zip(&vn_counts) {
            for i in 0..ne {
                balance[i] += i64::from(d[i]) * c as i64;
            }
        }
        for (k, &c) in cn_counts.iter().enumerate() {
            let d = types.table.subtype(k);
            for i in 0..ne {
                balance[i] -= i64::from(d[i]) * c as i64;
            }
        }
        if balance.iter().any(|&b| b != 0) {
            return Err(DecoderError::BadState(format!(
                "socket counts differ per edge type: {balance:?}"
            )));
        }
        Ok(Self {
            types,
            n,
            vn_counts,
            cn_counts,
            warnings: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn vn_counts(&self) -> &[usize] {
        &self.vn_counts
    }

    /// Check-node counts per check sub-type.
    pub fn cn_counts(&self) -> &[usize] {
        &self.cn_counts
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn table(&self) -> &CheckSubTypeTable {
        &self.types.table
    }

    pub fn num_edges(&self) -> usize {
        self.types
            .vn_d
            .iter()
            .zip(&self.vn_counts)
            .map(|(d, &c)| d.iter().sum::<u32>() as usize * c)
            .sum()
    }

    fn layout(&self) -> Layout {
        let ne = self.types.ne;
        let table = &self.types.table;
        let nv: usize = self.vn_counts.iter().sum();
        let mut vn_term = Vec::with_capacity(nv);
        let mut vn_start = Vec::with_capacity(nv + 1);
        let mut edge_type = Vec::new();
        let mut vn_sockets: Vec<Vec<u32>> = vec![Vec::new(); ne];
        vn_start.push(0u32);
        for (t, &count) in self.vn_counts.iter().enumerate() {
            let d = &self.types.vn_d[t];
            for _ in 0..count {
                vn_term.push(t as u32);
                for (i, &di) in d.iter().enumerate() {
                    for _ in 0..di {
                        vn_sockets[i].push(edge_type.len() as u32);
                        edge_type.push(i as u32);
                    }
                }
                vn_start.push(edge_type.len() as u32);
            }
        }
        let mut cn_sub = Vec::new();
        let mut cn_sockets: Vec<Vec<u32>> = vec![Vec::new(); ne];
        for (k, &count) in self.cn_counts.iter().enumerate() {
            if table.degree(k) == 0 {
                continue;
            }
            let d = table.subtype(k);
            for _ in 0..count {
                let c = cn_sub.len() as u32;
                cn_sub.push(k as u32);
                for (i, &di) in d.iter().enumerate() {
                    for _ in 0..di {
                        cn_sockets[i].push(c);
                    }
                }
            }
        }
        Layout {
            vn_term,
            vn_start,
            edge_type,
            vn_sockets,
            cn_sub,
            cn_sockets,
        }
    }

    /// Draws an independent uniform socket permutation per edge type.
    pub fn sample(&self, seed: u64) -> SampledGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layout = self.layout();
        for sockets in &mut layout.cn_sockets {
            sockets.shuffle(&mut rng);
        }
        self.assemble(layout, seed)
    }

    /// Wires explicitly: the `s`-th variable-node socket of type `i` (in node
    /// order) connects to check socket `perms[i][s]` (in node order).
    pub fn with_permutations(&self, perms: &[Vec<usize>]) -> Result<SampledGraph, DecoderError> {
        let mut layout = self.layout();
        if perms.len() != self.types.ne {
            return Err(DecoderError::BadState(format!(
                "expected {} permutations, got {}",
                self.types.ne,
                perms.len()
            )));
        }
        for (i, p) in perms.iter().enumerate() {
            let len = layout.cn_sockets[i].len();
            let mut seen = vec![false; len];
            if p.len() != len
                || !p
                    .iter()
                    .all(|&s| s < len && !std::mem::replace(&mut seen[s], true))
            {
                return Err(DecoderError::BadState(format!(
                    "edge type {} needs a permutation of {len} sockets",
                    i + 1
                )));
            }
            let canonical = std::mem::take(&mut layout.cn_sockets[i]);
            layout.cn_sockets[i] = p.iter().map(|&s| canonical[s]).collect();
        }
        Ok(self.assemble(layout, 0))
    }

    fn assemble(&self, layout: Layout, seed: u64) -> SampledGraph {
        let Layout {
            vn_term,
            vn_start,
            edge_type,
            vn_sockets,
            cn_sub,
            cn_sockets,
        } = layout;
        let edge_vn: Vec<u32> = (0..vn_term.len())
            .flat_map(|v| (vn_start[v]..vn_start[v + 1]).map(move |_| v as u32))
            .collect();
        let mut edge_cn = vec![0u32; edge_type.len()];
        for (vs, cs) in vn_sockets.iter().zip(&cn_sockets) {
            debug_assert_eq!(vs.len(), cs.len());
            for (&edge, &c) in vs.iter().zip(cs) {
                edge_cn[edge as usize] = c;
            }
        }
        let nc = cn_sub.len();
        let mut cn_start = vec![0u32; nc + 1];
        for &c in &edge_cn {
            cn_start[c as usize + 1] += 1;
        }
        for c in 0..nc {
            cn_start[c + 1] += cn_start[c];
        }
        let mut fill = cn_start.clone();
        let mut cn_edges = vec![0u32; edge_cn.len()];
        for (edge, &c) in edge_cn.iter().enumerate() {
            cn_edges[fill[c as usize] as usize] = edge as u32;
            fill[c as usize] += 1;
        }
        SampledGraph {
            types: Arc::clone(&self.types),
            n: self.n,
            seed,
            vn_term,
            vn_start,
            edge_type,
            edge_vn,
            edge_cn,
            cn_sub,
            cn_start,
            cn_edges,
        }
    }
}

struct Layout {
    vn_term: Vec<u32>,
    vn_start: Vec<u32>,
    edge_type: Vec<u32>,
    vn_sockets: Vec<Vec<u32>>,
    cn_sub: Vec<u32>,
    cn_sockets: Vec<Vec<u32>>,
}

/// A Tanner graph drawn from the configuration model. Edges are numbered
/// by variable-node socket; every edge knows its type and both endpoints.
#[derive(Debug, Clone)]
pub struct SampledGraph {
    pub(crate) types: Arc<NodeTypes>,
    n: usize,
    seed: u64,
    vn_term: Vec<u32>,
    vn_start: Vec<u32>,
    pub(crate) edge_type: Vec<u32>,
    pub(crate) edge_vn: Vec<u32>,
    pub(crate) edge_cn: Vec<u32>,
    cn_sub: Vec<u32>,
    cn_start: Vec<u32>,
    cn_edges: Vec<u32>,
}

impl SampledGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ne(&self) -> usize {
        self.types.ne
    }

    pub fn num_vns(&self) -> usize {
        self.vn_term.len()
    }

    pub fn num_cns(&self) -> usize {
        self.cn_sub.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_type.len()
    }

    /// Variable-node term index of node `v`.
    pub fn vn_term(&self, v: usize) -> usize {
        self.vn_term[v] as usize
    }

    /// Channel exponents `b` of node `v`.
    pub fn vn_channel(&self, v: usize) -> &[u32] {
        &self.types.vn_b[self.vn_term[v] as usize]
    }

    /// Check sub-type index (table order) of node `c` before any erasure.
    pub fn cn_subtype(&self, c: usize) -> usize {
        self.cn_sub[c] as usize
    }

    pub fn table(&self) -> &CheckSubTypeTable {
        &self.types.table
    }

    pub(crate) fn vn_edge_range(&self, v: usize) -> std::ops::Range<usize> {
        self.vn_start[v] as usize..self.vn_start[v + 1] as usize
    }

    pub(crate) fn cn_edge_ids(&self, c: usize) -> &[u32] {
        &self.cn_edges[self.cn_start[c] as usize..self.cn_start[c + 1] as usize]
    }

    /// `(edge type, check node)` for every edge of variable node `v`.
    pub fn vn_neighbors(&self, v: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.vn_edge_range(v)
            .map(|e| (self.edge_type[e] as usize, self.edge_cn[e] as usize))
    }

    /// `(edge type, variable node)` for every edge of check node `c`.
    pub fn cn_neighbors(&self, c: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cn_edge_ids(c).iter().map(|&e| {
            (
                self.edge_type[e as usize] as usize,
                self.edge_vn[e as usize] as usize,
            )
        })
    }

    /// Number of edges of each type.
    pub fn edges_per_type(&self) -> Vec<usize> {
        let mut out = vec![0; self.ne()];
        for &t in &self.edge_type {
            out[t as usize] += 1;
        }
        out
    }
}

/// True iff every check node adjacent to `vn_set` has at least two edges
/// into it.
pub fn check_stopping_set(graph: &SampledGraph, vn_set: &[usize]) -> bool {
    let mut hits = vec![0u32; graph.num_cns()];
    for &v in vn_set {
        for (_, c) in graph.vn_neighbors(v) {
            hits[c] += 1;
        }
    }
    hits.iter().all(|&h| h != 1)
}

/// Samples one graph from `spec` with block length `n`.
pub fn sample_graph(
    spec: &EnsembleSpec,
    n: usize,
    seed: u64,
) -> Result<SampledGraph, DecoderError> {
    Ok(GraphSampler::new(spec, n)?.sample(seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::parse_ensemble;

    const RA: &str = "nu = r1*x1^2 + 1/3*r0*x2^3 ; mu = x1^2*x2";

    #[test]
    fn ra_counts_at_small_n() {
        let spec = parse_ensemble(RA).unwrap();
        let c = node_counts(&spec, 3).unwrap();
        assert_eq!(c.vn, vec![3, 1]);
        assert_eq!(c.cn, vec![3]);
        let g = sample_graph(&spec, 3, 1).unwrap();
        assert_eq!(g.num_vns(), 4);
        assert_eq!(g.num_cns(), 3);
        assert_eq!(g.edges_per_type(), vec![6, 3]);
    }

    #[test]
    fn ra_counts_need_rebalancing_at_large_n() {
        let spec = parse_ensemble(RA).unwrap();
        let c = node_counts(&spec, 100_000).unwrap();
        // 33333 accumulator nodes offer 99999 type-2 sockets
        assert_eq!(c.vn, vec![99_999, 33_333]);
        assert_eq!(c.cn, vec![99_999]);
    }

    #[test]
    fn rebalancing_touches_both_sides() {
        // 2N variable sockets against 3 * round(2N/3) check sockets
        let spec = parse_ensemble("nu = r1*x1^2 ; mu = 2/3*x1^3").unwrap();
        let c = node_counts(&spec, 4).unwrap();
        assert_eq!(2 * c.vn[0], 3 * c.cn[0]);
    }

    #[test]
    fn deficit_error_lists_types() {
        let spec = parse_ensemble("nu = r1*x1^11 ; mu = 11/13*x1^13").unwrap();
        match node_counts(&spec, 1) {
            Err(DecoderError::Unbalanceable { deficits }) => assert_eq!(deficits, vec![-2]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identity_graph_is_a_matching() {
        let spec = parse_ensemble("nu = r1*x1 ; mu = x1").unwrap();
        let g = sample_graph(&spec, 5, 9).unwrap();
        assert_eq!(g.num_vns(), 5);
        let mut seen = [false; 5];
        for v in 0..5 {
            let n: Vec<_> = g.vn_neighbors(v).collect();
            assert_eq!(n.len(), 1);
            assert!(!std::mem::replace(&mut seen[n[0].1], true));
        }
    }

    #[test]
    fn adjacency_is_consistent() {
        let spec = parse_ensemble(RA).unwrap();
        let g = sample_graph(&spec, 300, 4).unwrap();
        let mut from_vn = Vec::new();
        for v in 0..g.num_vns() {
            from_vn.extend(g.vn_neighbors(v).map(|(t, c)| (v, t, c)));
        }
        let mut from_cn = Vec::new();
        for c in 0..g.num_cns() {
            from_cn.extend(g.cn_neighbors(c).map(|(t, v)| (v, t, c)));
        }
        from_vn.sort();
        from_cn.sort();
        assert_eq!(from_vn, from_cn);
        for c in 0..g.num_cns() {
            let mut per_type = [0u32; 2];
            for (t, _) in g.cn_neighbors(c) {
                per_type[t] += 1;
            }
            assert_eq!(per_type, [2, 1]);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = parse_ensemble(RA).unwrap();
        let a = sample_graph(&spec, 1000, 42).unwrap();
        let b = sample_graph(&spec, 1000, 42).unwrap();
        let c = sample_graph(&spec, 1000, 43).unwrap();
        assert_eq!(a.edge_cn, b.edge_cn);
        assert_ne!(a.edge_cn, c.edge_cn);
    }

    #[test]
    fn stopping_set_examples() {
        let spec = parse_ensemble("nu = r1*x1 ; mu = x1").unwrap();
        let g = sample_graph(&spec, 3, 0).unwrap();
        assert!(check_stopping_set(&g, &[]));
        assert!(!check_stopping_set(&g, &[0]));
        let spec = parse_ensemble("nu = r1*x1^2 ; mu = x1^2").unwrap();
        let g = sample_graph(&spec, 4, 0).unwrap();
        // all nodes of a 2-regular graph form a stopping set
        assert!(check_stopping_set(&g, &[0, 1, 2, 3]));
    }

    #[test]
    fn tiny_n_warns_about_dropped_terms() {
        let spec = parse_ensemble("nu = 0.99*r1*x1^2 + 0.01*r1*x1^4 ; mu = 1.01*x1^2").unwrap();
        let c = node_counts(&spec, 10).unwrap();
        assert_eq!(c.vn[1], 0);
        assert_eq!(c.warnings.len(), 1);
    }
}
