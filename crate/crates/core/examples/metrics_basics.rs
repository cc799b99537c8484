// Ensemble metrics on a hand-made three-member ensemble.
//
//     cargo run --example metrics_basics

use nes::metrics::{ensemble_average, loss_chain_check, nll, AveragingMode, EvalReport, LabelVector, PredictionMatrix};

fn main() {
    let labels = LabelVector::new(vec![0, 1, 2, 1]);
    // each member is confident on a different subset of points
    let members = [
        PredictionMatrix::from_rows(&[
            vec![0.90, 0.05, 0.05],
            vec![0.30, 0.40, 0.30],
            vec![0.40, 0.30, 0.30],
            vec![0.20, 0.70, 0.10],
        ]),
        PredictionMatrix::from_rows(&[
            vec![0.40, 0.30, 0.30],
            vec![0.05, 0.90, 0.05],
            vec![0.30, 0.30, 0.40],
            vec![0.50, 0.40, 0.10],
        ]),
        PredictionMatrix::from_rows(&[
            vec![0.30, 0.40, 0.30],
            vec![0.30, 0.30, 0.40],
            vec![0.05, 0.05, 0.90],
            vec![0.10, 0.60, 0.30],
        ]),
    ]
    .map(|m| m.expect("rows sum to one"));
    let refs: Vec<&PredictionMatrix> = members.iter().collect();

    for (i, m) in members.iter().enumerate() {
        println!("member {i}: nll {:.4}", nll(m, &labels).unwrap());
    }
    let avg = ensemble_average(&refs, None, AveragingMode::Probability).unwrap();
    println!("uniform ensemble nll {:.4}", nll(&avg, &labels).unwrap());

    let report = EvalReport::compute(&refs, None, &labels).unwrap();
    println!("{report:#?}");

    let chain = loss_chain_check(&refs, &labels).unwrap();
    println!(
        "oracle {:.4} <= ensemble {:.4} <= average member {:.4}: {}",
        chain.oracle_nll, chain.ensemble_nll, chain.avg_bsl_nll, chain.holds
    );
    assert!(chain.holds);
}
