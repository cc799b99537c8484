mod common;

use common::oracles::{ens_nll, first_wrong_greedy_step};
use common::{candidates, loop_ensemble_nll, random_pool, rng};
use nes::metrics::{nll, LabelVector, PredictionMatrix};
use nes::selection::*;
use proptest::prelude::*;
use rand::Rng;

/// Same members summed in a different order may differ by rounding.
const ORDER_SLACK: f64 = 1e-12;

fn ids(sel: &EnsembleSelection) -> Vec<usize> {
    sel.member_ids().iter().map(|id| id.0).collect()
}

fn m2(rows: &[[f64; 2]]) -> PredictionMatrix {
    PredictionMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn assert_greedy_steps(pool: &[PredictionMatrix], y: &LabelVector, sel: &[usize], with_replacement: bool) {
    assert_eq!(first_wrong_greedy_step(pool, y, sel, with_replacement), None, "{sel:?}");
}

/// Enumerates all size-`m` subsets in an order different from the library's.
fn brute_force_best(pool: &[PredictionMatrix], y: &LabelVector, m: usize) -> f64 {
    let k = pool.len();
    let mut best = f64::INFINITY;
    for mask in (0u32..1 << k).rev() {
        if mask.count_ones() as usize != m {
            continue;
        }
        let subset: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
        let members: Vec<&PredictionMatrix> = subset.iter().map(|&i| &pool[i]).collect();
        best = best.min(loop_ensemble_nll(&members, y));
    }
    best
}

#[test]
fn greedy_steps_match_enumeration() {
    let mut r = rng(1);
    for _ in 0..300 {
        let k = r.random_range(1..=12);
        let m = r.random_range(1..=k.min(4));
        let (n, c) = (r.random_range(5..40), r.random_range(2..6));
        let (pool, y) = random_pool(&mut r, k, n, c);
        let cands = candidates(&pool);
        let sel = forward_select(&cands, &y, m, false).unwrap();
        assert_eq!(sel.len(), m);
        let s = ids(&sel);
        assert_greedy_steps(&pool, &y, &s, false);
        let mut uniq = s.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), m);
        let ex = exhaustive_select(&cands, &y, m).unwrap();
        assert!(ens_nll(&pool, &s, &y) >= ens_nll(&pool, &ids(&ex), &y) - ORDER_SLACK);
        let wr = forward_select(&cands, &y, m + 2, true).unwrap();
        assert_greedy_steps(&pool, &y, &ids(&wr), true);
    }
}

#[test]
fn first_pick_is_best_single_member() {
    let mut r = rng(2);
    for _ in 0..100 {
        let (pool, y) = random_pool(&mut r, 8, 30, 4);
        let sel = forward_select(&candidates(&pool), &y, 1, false).unwrap();
        let best = (0..8).min_by(|&a, &b| nll(&pool[a], &y).unwrap().total_cmp(&nll(&pool[b], &y).unwrap())).unwrap();
        assert_eq!(ids(&sel), vec![best]);
    }
}

#[test]
fn full_pool_and_errors() {
    let mut r = rng(3);
    let (pool, y) = random_pool(&mut r, 4, 20, 3);
    let cands = candidates(&pool);
    let mut all = ids(&forward_select(&cands, &y, 4, false).unwrap());
    all.sort();
    assert_eq!(all, vec![0, 1, 2, 3]);
    assert!(matches!(forward_select(&cands, &y, 5, false), Err(nes::error::Error::PoolTooSmall { .. })));
    assert!(forward_select(&[], &y, 1, true).is_err());
    assert!(top_m(&cands, &y, 5).is_err());
    assert!(stacking_select(&cands, &y, 5, false).is_err());
    assert!(forward_select_diverse(&cands, &y, 2, -1.0).is_err());
    assert!(quick_and_greedy(&[], &y, 2).is_err());
    let mut ex = ids(&exhaustive_select(&cands, &y, 4).unwrap());
    ex.sort();
    assert_eq!(ex, vec![0, 1, 2, 3]);
}

#[test]
fn exhaustive_matches_independent_enumeration() {
    let mut r = rng(4);
    for _ in 0..100 {
        let (pool, y) = random_pool(&mut r, 6, 25, 3);
        let sel = exhaustive_select(&candidates(&pool), &y, 2).unwrap();
        let got = ens_nll(&pool, &ids(&sel), &y);
        assert!((got - brute_force_best(&pool, &y, 2)).abs() < 1e-12);
    }
}

#[test]
fn exhaustive_guard() {
    let mut r = rng(5);
    let (pool, y) = random_pool(&mut r, 30, 4, 2);
    assert!(matches!(exhaustive_select(&candidates(&pool), &y, 15), Err(nes::error::Error::GuardExceeded { .. })));
}

#[test]
fn relabeling_permutes_selection() {
    let mut r = rng(6);
    for _ in 0..50 {
        let (pool, y) = random_pool(&mut r, 9, 30, 4);
        let base = ids(&forward_select(&candidates(&pool), &y, 3, false).unwrap());
        // reverse the ids: member k becomes id 8 - k
        let cands: Vec<Candidate<'_>> = pool.iter().enumerate().map(|(i, m)| (LearnerId(8 - i), m)).collect();
        let relabeled = ids(&forward_select(&cands, &y, 3, false).unwrap());
        assert_eq!(relabeled, base.iter().map(|k| 8 - k).collect::<Vec<_>>());
    }
}

#[test]
fn ties_go_to_smallest_id() {
    let a = m2(&[[0.7, 0.3], [0.4, 0.6]]);
    let y = LabelVector::new(vec![0, 1]);
    let cands = [(LearnerId(5), &a), (LearnerId(2), &a), (LearnerId(9), &a)];
    assert_eq!(ids(&forward_select(&cands, &y, 2, false).unwrap()), vec![2, 5]);
    assert_eq!(ids(&forward_select(&cands, &y, 3, true).unwrap()), vec![2, 2, 2]);
}

#[test]
fn top_m_matches_sort() {
    let a = m2(&[[(-0.3f64).exp(), 1.0 - (-0.3f64).exp()]]);
    let b = m2(&[[(-0.1f64).exp(), 1.0 - (-0.1f64).exp()]]);
    let c = m2(&[[(-0.2f64).exp(), 1.0 - (-0.2f64).exp()]]);
    let y = LabelVector::new(vec![0]);
    let pool = [a, b, c];
    assert_eq!(ids(&top_m(&candidates(&pool), &y, 2).unwrap()), vec![1, 2]);
    let mut r = rng(7);
    for _ in 0..100 {
        let (pool, y) = random_pool(&mut r, 10, 20, 3);
        let mut order: Vec<usize> = (0..10).collect();
        order.sort_by(|&a, &b| nll(&pool[a], &y).unwrap().total_cmp(&nll(&pool[b], &y).unwrap()));
        assert_eq!(ids(&top_m(&candidates(&pool), &y, 4).unwrap()), order[..4].to_vec());
        let all = ids(&top_m(&candidates(&pool), &y, 10).unwrap());
        assert_eq!(all, order);
    }
}

#[test]
fn quick_and_greedy_examples() {
    let a = m2(&[[0.7, 0.3], [0.4, 0.6]]);
    let y = LabelVector::new(vec![0, 1]);
    let clones = [a.clone(), a.clone(), a];
    assert_eq!(quick_and_greedy(&candidates(&clones), &y, 3).unwrap().len(), 1);
    // each member is confidently right on one point and wrong on the other
    let p = m2(&[[0.99, 0.01], [0.6, 0.4]]);
    let q = m2(&[[0.4, 0.6], [0.01, 0.99]]);
    let pair = [p, q];
    let sel = quick_and_greedy(&candidates(&pair), &y, 2).unwrap();
    assert_eq!(sel.len(), 2);
    assert!(ens_nll(&pair, &[0, 1], &y) < nll(&pair[0], &y).unwrap().min(nll(&pair[1], &y).unwrap()));
}

#[test]
fn quick_and_greedy_prefixes_strictly_improve() {
    let mut r = rng(8);
    for _ in 0..200 {
        let (pool, y) = random_pool(&mut r, 10, 30, 3);
        let s = ids(&quick_and_greedy(&candidates(&pool), &y, 5).unwrap());
        assert!(!s.is_empty() && s.len() <= 5);
        for t in 1..s.len() {
            assert!(ens_nll(&pool, &s[..=t], &y) < ens_nll(&pool, &s[..t], &y));
        }
    }
}

#[test]
fn diverse_reduces_to_forward() {
    let mut r = rng(9);
    for _ in 0..200 {
        let k = r.random_range(2..12);
        let (pool, y) = random_pool(&mut r, k, 20, 4);
        let cands = candidates(&pool);
        let m = r.random_range(1..=k);
        assert_eq!(forward_select_diverse(&cands, &y, m, 0.0).unwrap(), forward_select(&cands, &y, m, false).unwrap());
    }
    // clones have zero diversity, so any strength leaves the choice alone
    let (pool, y) = random_pool(&mut r, 1, 20, 4);
    let clones: Vec<_> = (0..5).map(|_| pool[0].clone()).collect();
    let cands = candidates(&clones);
    assert_eq!(forward_select_diverse(&cands, &y, 3, 5.0).unwrap(), forward_select(&cands, &y, 3, false).unwrap());
}

#[test]
fn diversity_promotes_the_odd_member() {
    // four near-clones that are good, one weak member predicting differently
    let mut rows_good = Vec::new();
    let mut rows_odd = Vec::new();
    let mut labels = Vec::new();
    for i in 0..20 {
        let y = i % 2;
        labels.push(y);
        let mut g = [0.2, 0.2];
        g[y] = 0.8;
        rows_good.push(g);
        let mut o = [0.5, 0.5];
        o[1 - y] = 0.55;
        o[y] = 0.45;
        rows_odd.push(o);
    }
    let y = LabelVector::new(labels);
    let good = m2(&rows_good);
    let mut pool: Vec<PredictionMatrix> = (0..4).map(|_| good.clone()).collect();
    pool.push(m2(&rows_odd));
    let cands = candidates(&pool);
    let plain = ids(&forward_select_diverse(&cands, &y, 3, 0.0).unwrap());
    let diverse = ids(&forward_select_diverse(&cands, &y, 3, 1.0).unwrap());
    let pos = |s: &[usize]| s.iter().position(|&k| k == 4).unwrap_or(usize::MAX);
    assert!(pos(&diverse) < pos(&plain), "{diverse:?} vs {plain:?}");
}

#[test]
fn stacking_examples() {
    let mut r = rng(10);
    let (pool, y) = random_pool(&mut r, 1, 20, 3);
    let sel = stacking_select(&candidates(&pool), &y, 1, true).unwrap();
    assert_eq!(sel.weights(), Some(&[1.0][..]));

    let n = 30;
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let perfect: Vec<Vec<f64>> =
        labels.iter().map(|&y| (0..3).map(|j| if j == y { 0.98 } else { 0.01 }).collect()).collect();
    let flat = vec![vec![1.0 / 3.0; 3]; n];
    let y = LabelVector::new(labels);
    let mut pool = vec![PredictionMatrix::from_rows(&flat).unwrap(), PredictionMatrix::from_rows(&perfect).unwrap()];
    pool.extend((0..3).map(|_| PredictionMatrix::from_rows(&flat).unwrap()));
    let fit =
        stacking_fit(&candidates(&pool), &y, &StackingOptions { keep_trace: true, ..Default::default() }).unwrap();
    let top = (0..fit.weights.len()).max_by(|&a, &b| fit.weights[a].total_cmp(&fit.weights[b])).unwrap();
    assert_eq!(fit.ids[top], LearnerId(1));
    assert!(nll(&pool[1], &y).unwrap() < nll(&pool[0], &y).unwrap());
    for w in &fit.trace {
        assert!(w.iter().all(|&v| v >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    }
    let sel = stacking_select(&candidates(&pool), &y, 2, false).unwrap();
    assert_eq!(sel.member_ids()[0], LearnerId(1));
    assert!(sel.weights().is_none());
}

#[test]
fn bma_examples() {
    let y = LabelVector::new(vec![0, 1, 0, 1, 0]);
    // accuracies 0.6 and 0.4
    let a = m2(&[[0.9, 0.1], [0.1, 0.9], [0.9, 0.1], [0.9, 0.1], [0.1, 0.9]]);
    let b = m2(&[[0.1, 0.9], [0.9, 0.1], [0.1, 0.9], [0.1, 0.9], [0.9, 0.1]]);
    let pool = [a, b];
    let cands = candidates(&pool);
    let sel = EnsembleSelection::uniform(vec![LearnerId(0), LearnerId(1)]).unwrap();
    let w = bma_reweight(&sel, &cands, &y, BmaScheme::Accuracy).unwrap();
    let w = w.weights().unwrap();
    assert!((w[0] - 0.6).abs() < 1e-12 && (w[1] - 0.4).abs() < 1e-12);

    let clones = [pool[0].clone(), pool[0].clone(), pool[0].clone()];
    let sel3 = EnsembleSelection::uniform(vec![LearnerId(0), LearnerId(1), LearnerId(2)]).unwrap();
    for scheme in [BmaScheme::Accuracy, BmaScheme::Likelihood] {
        let w = bma_reweight(&sel3, &candidates(&clones), &y, scheme).unwrap();
        assert!(w.weights().unwrap().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        assert_eq!(w.member_ids(), sel3.member_ids());
    }

    // members whose NLLs differ by < 0.01 on N <= 10 points
    let p = m2(&[[0.70, 0.30], [0.30, 0.70], [0.60, 0.40]]);
    let q = m2(&[[0.71, 0.29], [0.30, 0.70], [0.60, 0.40]]);
    let y3 = LabelVector::new(vec![0, 1, 0]);
    let pair = [p, q];
    let (l0, l1) = (nll(&pair[0], &y3).unwrap(), nll(&pair[1], &y3).unwrap());
    assert!((l0 - l1).abs() < 0.01);
    let sel2 = EnsembleSelection::uniform(vec![LearnerId(0), LearnerId(1)]).unwrap();
    let w = bma_reweight(&sel2, &candidates(&pair), &y3, BmaScheme::Likelihood).unwrap();
    let w = w.weights().unwrap();
    let e0 = (-3.0 * l0).exp();
    let e1 = (-3.0 * l1).exp();
    assert!((w[0] - e0 / (e0 + e1)).abs() < 1e-12);
    assert!(w.iter().all(|v| (v - 0.5).abs() < 0.05));

    // zero accuracy everywhere falls back to uniform
    let wrong = m2(&[[0.1, 0.9], [0.9, 0.1]]);
    let pair = [wrong.clone(), wrong];
    let w = bma_reweight(&sel2, &candidates(&pair), &LabelVector::new(vec![0, 1]), BmaScheme::Accuracy).unwrap();
    assert_eq!(w.weights().unwrap(), &[0.5, 0.5]);
}

#[test]
fn selection_invariants_are_enforced() {
    assert!(EnsembleSelection::uniform(vec![]).is_err());
    assert!(EnsembleSelection::new(vec![LearnerId(1), LearnerId(1)], None, false).is_err());
    assert!(EnsembleSelection::new(vec![LearnerId(1), LearnerId(1)], None, true).is_ok());
    assert!(EnsembleSelection::new(vec![LearnerId(0), LearnerId(1)], Some(vec![0.7, 0.2]), false).is_err());
    assert!(EnsembleSelection::new(vec![LearnerId(0), LearnerId(1)], Some(vec![1.1, -0.1]), false).is_err());
    assert!(EnsembleSelection::new(vec![LearnerId(0)], Some(vec![0.5, 0.5]), false).is_err());
}

fn pool_strategy() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 1usize..10, 1usize..5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_variant_yields_valid_selections((seed, k, m) in pool_strategy()) {
        let mut r = rng(seed);
        let (pool, y) = random_pool(&mut r, k, 12, 3);
        let cands = candidates(&pool);
        let m = m.min(k);
        let outputs = [
            forward_select(&cands, &y, m, false).unwrap(),
            forward_select(&cands, &y, m, true).unwrap(),
            top_m(&cands, &y, m).unwrap(),
            quick_and_greedy(&cands, &y, m).unwrap(),
            stacking_select(&cands, &y, m, true).unwrap(),
            forward_select_diverse(&cands, &y, m, 0.5).unwrap(),
        ];
        for sel in &outputs {
            prop_assert!(!sel.is_empty() && sel.len() <= m);
            prop_assert!(sel.member_ids().iter().all(|id| id.0 < k));
            if !sel.with_replacement() {
                let mut s = ids(sel);
                s.sort();
                s.dedup();
                prop_assert_eq!(s.len(), sel.len());
            }
            if let Some(w) = sel.weights() {
                prop_assert!(w.iter().all(|&v| v >= 0.0));
                prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-8);
            }
        }
        prop_assert_eq!(outputs[0].len(), m);
        prop_assert_eq!(outputs[1].len(), m);
    }

    #[test]
    fn forward_never_beats_exhaustive((seed, k, m) in pool_strategy()) {
        let mut r = rng(seed);
        let (pool, y) = random_pool(&mut r, k, 12, 3);
        let cands = candidates(&pool);
        let m = m.min(k);
        let f = forward_select(&cands, &y, m, false).unwrap();
        let e = exhaustive_select(&cands, &y, m).unwrap();
        prop_assert!(ens_nll(&pool, &ids(&f), &y) >= ens_nll(&pool, &ids(&e), &y) - ORDER_SLACK);
    }
}
