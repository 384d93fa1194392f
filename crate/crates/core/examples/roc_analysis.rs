//! ROC curve, AUC, the Sp+Se-maximizing cut-off and a results table for a
//! set of scores from two overlapping Gaussians.
//!
//!     cargo run --example roc_analysis

use cxr_ensemble::metrics::{
    auc, choose_cutoff, confusion_at, fixed, interpret, report, roc_curve, roc_table, sp_se_acc,
    ResultRow, ScoredSample,
};
use cxr_ensemble::rng;
use rand_distr::{Distribution, Normal};

fn main() -> cxr_ensemble::Result<()> {
    let mut r = rng::seeded(5);
    let neg = Normal::new(0.35f64, 0.15).unwrap();
    let pos = Normal::new(0.65f64, 0.15).unwrap();
    let samples: Vec<ScoredSample> = (0..200)
        .map(|i| {
            let label = (i % 2) as u8;
            let d = if label == 1 { pos } else { neg };
            ScoredSample::new(d.sample(&mut r).clamp(0.0, 1.0), label)
        })
        .collect();

    let curve = roc_curve(&samples)?;
    let area = auc(&curve);
    let cut = choose_cutoff(&curve, &samples)?;
    let stats = sp_se_acc(&confusion_at(&samples, cut.threshold)?)?;
    println!("{} ROC points, AUC {} ({})", curve.points.len(), fixed(area, 3), interpret(area)?);
    println!(
        "cut-off {:.4}: Sp {:.2}% Se {:.2}% Acc {:.2}%",
        cut.threshold,
        stats.sp,
        stats.se,
        stats.acc
    );
    println!("\nfirst rows of the ROC table:");
    for line in roc_table(&curve).lines().take(5) {
        println!("  {line}");
    }

    let row = ResultRow::new("Scores", area, stats.sp, stats.se);
    println!("\n{}", report(&[row])?.render_text());
    Ok(())
}
