use ndarray::Array2;
use nes::metrics::{ensemble_average, nll, AveragingMode, LabelVector, PredictionMatrix};
use nes::space::{CellOp, CellSpace, CellSpaceSpec, Genome, SearchSpace};
use nes::trainer::{Network, Regularizer};
use rand::Rng;

use super::random_matrix;

/// Matrices with a mix of sharp, flat and exactly tied rows.
pub fn varied_matrix(r: &mut impl Rng, n: usize, c: usize) -> PredictionMatrix {
    let sharpness = [0.0, 0.5, 3.0, 40.0][r.random_range(0..4)];
    if r.random_bool(0.2) {
        // quantised rows produce argmax ties and shared confidences
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let w: Vec<f64> = (0..c).map(|_| f64::from(r.random_range(0..3u8))).collect();
                let s: f64 = w.iter().sum();
                if s == 0.0 {
                    vec![1.0 / c as f64; c]
                } else {
                    w.iter().map(|v| v / s).collect()
                }
            })
            .collect();
        return PredictionMatrix::from_rows(&rows).unwrap();
    }
    random_matrix(r, n, c, sharpness)
}

pub fn oracle_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for j in 1..row.len() {
        if row[j] > row[best] {
            best = j;
        }
    }
    best
}

pub fn oracle_nll_single(p: &PredictionMatrix, y: &LabelVector) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        s += -(p.row(i)[y.as_slice()[i]].max(1e-12)).ln();
    }
    s / y.len() as f64
}

pub fn oracle_error(p: &PredictionMatrix, y: &LabelVector) -> f64 {
    let mut wrong = 0;
    for i in 0..y.len() {
        if oracle_argmax(p.row(i)) != y.as_slice()[i] {
            wrong += 1;
        }
    }
    wrong as f64 / y.len() as f64
}

pub fn oracle_ece(p: &PredictionMatrix, y: &LabelVector, bins: usize) -> f64 {
    let n = y.len();
    let mut total = 0.0;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let (mut cnt, mut acc, mut conf) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let row = p.row(i);
            let k = oracle_argmax(row);
            let c = row[k];
            let inside = if b == 0 { c <= hi } else { c > lo && c <= hi };
            if inside {
                cnt += 1.0;
                conf += c;
                if k == y.as_slice()[i] {
                    acc += 1.0;
                }
            }
        }
        if cnt > 0.0 {
            total += cnt / n as f64 * (acc / cnt - conf / cnt).abs();
        }
    }
    total
}

pub fn oracle_oracle_nll(ms: &[&PredictionMatrix], y: &LabelVector) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        let mut best = f64::INFINITY;
        for p in ms {
            best = best.min(-(p.row(i)[y.as_slice()[i]].max(1e-12)).ln());
        }
        s += best;
    }
    s / y.len() as f64
}

pub fn oracle_disagreement(ms: &[&PredictionMatrix], y: &LabelVector) -> f64 {
    let n = y.len();
    let (mut d, mut pairs) = (0.0, 0.0);
    for a in 0..ms.len() {
        for b in 0..ms.len() {
            if a < b {
                let mut differ = 0.0;
                for i in 0..n {
                    if oracle_argmax(ms[a].row(i)) != oracle_argmax(ms[b].row(i)) {
                        differ += 1.0;
                    }
                }
                d += differ / n as f64;
                pairs += 1.0;
            }
        }
    }
    let err: f64 = ms.iter().map(|p| oracle_error(p, y)).sum::<f64>() / ms.len() as f64;
    let d = d / pairs;
    if err == 0.0 {
        if d > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        d / err
    }
}

/// Uniform-average NLL of `pool[ids]` through the library's averaging.
pub fn ens_nll(pool: &[PredictionMatrix], ids: &[usize], y: &LabelVector) -> f64 {
    let members: Vec<&PredictionMatrix> = ids.iter().map(|&i| &pool[i]).collect();
    nll(&ensemble_average(&members, None, AveragingMode::Probability).unwrap(), y).unwrap()
}

/// Replays a forward selection against enumeration of every remaining
/// candidate; returns the first step that is not the single-step minimum.
pub fn first_wrong_greedy_step(
    pool: &[PredictionMatrix],
    y: &LabelVector,
    sel: &[usize],
    with_replacement: bool,
) -> Option<usize> {
    for t in 0..sel.len() {
        let prefix = &sel[..t];
        let mut best: Option<(usize, f64)> = None;
        for k in 0..pool.len() {
            if !with_replacement && prefix.contains(&k) {
                continue;
            }
            let mut trial = prefix.to_vec();
            trial.push(k);
            let v = ens_nll(pool, &trial, y);
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((k, v));
            }
        }
        if best.map(|b| b.0) != Some(sel[t]) {
            return Some(t);
        }
    }
    None
}

/// Cell genome whose every edge uses operation `op`.
pub fn uniform_genome(nodes: usize, op: usize, rng: &mut impl Rng) -> Genome {
    let space = CellSpace::new(CellSpaceSpec {
        num_intermediate_nodes: nodes,
        op_set: vec![CellOp::Identity],
        ..Default::default()
    })
    .unwrap();
    let Genome::Cell(mut cells) = space.sample_genome(rng) else { unreachable!() };
    cells.iter_mut().flatten().for_each(|e| e.op = op);
    Genome::Cell(cells)
}

/// Largest relative error between the analytic and central-difference gradient.
pub fn gradient_error(net: &Network, params: &[f64], x: &Array2<f64>, y: &[usize], reg: &Regularizer) -> f64 {
    let (_, grad) = net.loss_and_grad(params, x.view(), y, reg).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut p = params.to_vec();
        p[i] += h;
        let up = net.loss_and_grad(&p, x.view(), y, reg).unwrap().0;
        p[i] -= 2.0 * h;
        let down = net.loss_and_grad(&p, x.view(), y, reg).unwrap().0;
        let fd = (up - down) / (2.0 * h);
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

fn central_difference(
    net: &Network,
    params: &[f64],
    i: usize,
    h: f64,
    x: &Array2<f64>,
    y: &[usize],
    reg: &Regularizer,
) -> f64 {
    let mut p = params.to_vec();
    p[i] += h;
    let up = net.loss_and_grad(&p, x.view(), y, reg).unwrap().0;
    p[i] -= 2.0 * h;
    let down = net.loss_and_grad(&p, x.view(), y, reg).unwrap().0;
    (up - down) / (2.0 * h)
}

/// Whether the loss is smooth across every finite-difference stencil: a
/// ReLU pre-activation within `h` of zero makes the two step sizes disagree.
pub fn stencil_is_smooth(net: &Network, params: &[f64], x: &Array2<f64>, y: &[usize], reg: &Regularizer) -> bool {
    (0..params.len()).all(|i| {
        let a = central_difference(net, params, i, 1e-5, x, y, reg);
        let b = central_difference(net, params, i, 1e-6, x, y, reg);
        (a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-3)
    })
}

/// Draws initial parameters (plus jitter) until every stencil is smooth;
/// returns them with the number of rejected draws.
pub fn smooth_params(
    net: &Network,
    rng: &mut impl Rng,
    jitter: f64,
    x: &Array2<f64>,
    y: &[usize],
    reg: &Regularizer,
) -> (Vec<f64>, usize) {
    for rejected in 0.. {
        let mut params = net.init_params(rng);
        if jitter > 0.0 {
            params.iter_mut().for_each(|p| *p += jitter * (rng.random::<f64>() - 0.5));
        }
        if stencil_is_smooth(net, &params, x, y, reg) {
            return (params, rejected);
        }
    }
    unreachable!()
}
