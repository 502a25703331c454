mod common;

use common::*;
use metpeel::decoder::{
    apply_channel, check_stopping_set, node_counts, peel, sample_graph, GraphSampler, StepEvent,
};
use metpeel::evolution::{ErasureVector, Evolution};
use metpeel::pathsim::Schedule;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn socket_counts_balance_and_track_the_ensemble() {
    for ens in all() {
        let spec = ens.spec();
        for n in [10, 97, 1000, 12_345] {
            let g = sample_graph(&spec, n, 1).unwrap();
            let per_type = g.edges_per_type();
            let mut cn_side = vec![0usize; spec.ne()];
            for c in 0..g.num_cns() {
                for (t, _) in g.cn_neighbors(c) {
                    cn_side[t] += 1;
                }
            }
            assert_eq!(per_type, cn_side, "{} at N = {n}", ens.name);
            for (i, &count) in per_type.iter().enumerate() {
                let nominal = n as f64 * spec.edge_fractions_per_node()[i];
                // rounding plus at most four single-node adjustments
                assert!(
                    (count as f64 - nominal).abs() <= 30.0,
                    "{} type {i}: {count} vs {nominal}",
                    ens.name
                );
            }
        }
    }
}

#[test]
fn node_counts_round_each_term() {
    let spec = three_type().spec();
    let c = node_counts(&spec, 1000).unwrap();
    let mut vn = c.vn.clone();
    vn.sort();
    assert_eq!(vn, vec![250, 500, 500]);
    let mut cn = c.cn.clone();
    cn.sort();
    assert_eq!(cn, vec![250, 250, 500]);
    assert!(c.warnings.is_empty());
}

#[test]
fn full_outcome_is_reproducible() {
    let spec = ra().spec();
    let e = ErasureVector::new(vec![1.0, 0.6]).unwrap();
    let run = |sg, sc, ss| {
        let g = sample_graph(&spec, 5000, sg).unwrap();
        let out = peel(
            apply_channel(&g, &e, sc).unwrap(),
            &Schedule::uniform(),
            &mut rng(ss),
        );
        (out.success, out.iterations, out.residual, out.trajectory)
    };
    assert_eq!(run(1, 2, 3), run(1, 2, 3));
    assert_ne!(run(1, 2, 3).3, run(1, 2, 4).3);
    assert_ne!(run(1, 2, 3).3, run(1, 5, 3).3);
}

#[test]
fn initial_check_fractions_match_thinning() {
    let ens = ra();
    let spec = ens.spec();
    let evo = Evolution::new(&spec).unwrap();
    let e = ErasureVector::new(vec![1.0, 0.6175]).unwrap();
    let g = sample_graph(&spec, 100_000, 11).unwrap();
    let state = apply_channel(&g, &e, 12).unwrap();
    let snap = state.snapshot();
    let m_total = g.num_cns() as f64;
    let table = g.table();
    let mut all_fracs = evo.mu_closed_form(&e, &[1.0, 1.0]).unwrap();
    for (i, v) in evo
        .mu1_closed_form(&e, &[1.0, 1.0])
        .unwrap()
        .into_iter()
        .enumerate()
    {
        let mut d = vec![0u32; 2];
        d[i] = 1;
        all_fracs.insert(d, v);
    }
    for (d, frac) in all_fracs {
        let k = table.index_of(&d).unwrap();
        // fraction among check nodes: the ensemble has one check per N
        let p = frac / (m_total / g.n() as f64);
        let observed = snap.mu[k] as f64 / m_total;
        let bound = 3.0 * (p * (1.0 - p) / m_total).sqrt() + 1e-12;
        assert!(
            (observed - p).abs() <= bound,
            "{d:?}: {observed} vs {p} (bound {bound})"
        );
    }
}

#[test]
fn each_iteration_resolves_one_node_and_keeps_balance() {
    let spec = three_type().spec();
    let g = sample_graph(&spec, 3000, 4).unwrap();
    let mut state = apply_channel(&g, &ErasureVector::new(vec![1.0, 0.5]).unwrap(), 4).unwrap();
    let start = state.residual_vns();
    let mut r = rng(4);
    loop {
        let before = state.residual_vns();
        match state.step(&Schedule::natural(), &mut r) {
            StepEvent::Peeled { vn, .. } => {
                assert!(state.is_resolved(vn));
                assert_eq!(state.residual_vns(), before - 1);
                assert_eq!(state.edge_counts(), state.check_side_edge_counts());
            }
            _ => break,
        }
    }
    assert_eq!(
        state.residual_vns() as u64,
        start as u64 - state.iteration()
    );
}

#[test]
fn above_threshold_fails_into_stopping_sets() {
    let spec = ra().spec();
    let e = ErasureVector::new(vec![1.0, 0.70]).unwrap();
    let mut failures = 0;
    for seed in 0..100 {
        let g = sample_graph(&spec, 10_000, seed).unwrap();
        let out = peel(
            apply_channel(&g, &e, seed).unwrap(),
            &Schedule::natural(),
            &mut rng(seed),
        );
        if !out.success {
            failures += 1;
            assert!(check_stopping_set(&g, &out.residual));
            assert!(!out.residual.is_empty());
        }
    }
    assert!(failures >= 99, "{failures}");
}

#[test]
fn fully_erased_regular_code_cannot_decode() {
    let spec = regular36().spec();
    let g = sample_graph(&spec, 2000, 0).unwrap();
    let out = peel(
        apply_channel(&g, &ErasureVector::ones(1), 0).unwrap(),
        &Schedule::natural(),
        &mut rng(0),
    );
    assert!(!out.success);
    assert_eq!(out.iterations, 0);
    assert_eq!(out.residual.len(), 2000);
}

/// The accumulator edges form a random 2-regular graph, so every fully
/// erased cycle of degree-2 nodes is a stopping set. Cycles of length k
/// number about Poisson(1/(2k)), giving P(no erased cycle) = sqrt(1 - eps).
#[test]
fn ra_below_threshold_fails_only_on_accumulator_cycles() {
    let spec = ra().spec();
    let eps = 0.5;
    let e = ErasureVector::new(vec![1.0, eps]).unwrap();
    let trials = 400;
    let mut failures = 0;
    for seed in 0..trials {
        let g = sample_graph(&spec, 20_000, seed).unwrap();
        let out = peel(
            apply_channel(&g, &e, seed).unwrap(),
            &Schedule::natural(),
            &mut rng(seed),
        );
        if !out.success {
            failures += 1;
            assert!(out.residual.iter().all(|&v| g.vn_channel(v) == [0, 1]));
            assert!(out.residual.len() < 100);
        }
    }
    let p = 1.0 - (1.0f64 - eps).sqrt();
    let expected = trials as f64 * p;
    let sd = (trials as f64 * p * (1.0 - p)).sqrt();
    assert!(
        (failures as f64 - expected).abs() < 4.0 * sd,
        "{failures} vs {expected}"
    );
}

#[test]
fn every_schedule_decodes_well_below_threshold() {
    let spec = regular36().spec();
    let e = ErasureVector::new(vec![1.0, 0.35]).unwrap();
    for s in [
        Schedule::natural(),
        Schedule::uniform(),
        Schedule::proportional(),
        Schedule::priority(&[1]),
    ] {
        for seed in 0..5 {
            let g = sample_graph(&spec, 20_000, seed).unwrap();
            let out = peel(apply_channel(&g, &e, seed).unwrap(), &s, &mut rng(seed));
            assert!(out.success, "{s} seed {seed}");
        }
    }
}

#[test]
fn samplers_are_reusable_across_seeds() {
    let spec = two_channel().spec();
    let sampler = GraphSampler::new(&spec, 4000).unwrap();
    let a = sampler.sample(9);
    let b = sample_graph(&spec, 4000, 9).unwrap();
    let adj = |g: &metpeel::decoder::SampledGraph| -> Vec<Vec<(usize, usize)>> {
        (0..g.num_vns())
            .map(|v| g.vn_neighbors(v).collect())
            .collect()
    };
    assert_eq!(adj(&a), adj(&b));
    let e = ErasureVector::new(vec![1.0, 0.3, 0.6]).unwrap();
    let state = apply_channel(&a, &e, 1).unwrap();
    // channel-2 nodes are erased more often than channel-1 nodes
    let snap = state.snapshot();
    let spec_terms = spec.vnodes();
    let frac = |k: usize| snap.nu[k] as f64 / sampler.vn_counts()[k] as f64;
    let (c1, c2) = if spec_terms[0].b[1] == 1 {
        (0, 1)
    } else {
        (1, 0)
    };
    assert!((frac(c1) - 0.3).abs() < 0.05);
    assert!((frac(c2) - 0.6).abs() < 0.05);
}
