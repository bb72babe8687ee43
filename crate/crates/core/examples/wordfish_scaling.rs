//! Wordfish on counts simulated from the model itself: recovered positions,
//! the identification constraints, and bootstrap intervals.

use prominence::scaling::{bootstrap_ci, fit_wordfish, WordfishConfig};
use prominence::vbow::{DocumentMeta, DocumentTermMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

fn main() -> prominence::Result<()> {
    let (n, m) = (8usize, 120usize);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let truth: Vec<f64> = (0..n).map(|i| -1.4 + 2.8 * i as f64 / (n - 1) as f64).collect();
    let psi: Vec<f64> = (0..m).map(|_| 1.2 + 0.5 * normal.sample(&mut rng)).collect();
    let beta: Vec<f64> = (0..m).map(|_| 0.7 * normal.sample(&mut rng)).collect();
    let rows: Vec<Vec<f64>> = truth
        .iter()
        .map(|w| {
            (0..m)
                .map(|j| Poisson::new((psi[j] + beta[j] * w).exp()).expect("positive rate").sample(&mut rng))
                .collect()
        })
        .collect();
    let docs = (0..n).map(|i| DocumentMeta::new(format!("doc{i}"))).collect();
    let dtm = DocumentTermMatrix::from_rows(docs, &rows)?;

    let config = WordfishConfig { orientation: (0, n - 1), ..Default::default() };
    let fit = fit_wordfish(&dtm, &config)?;
    println!(
        "converged: {} after {} iterations, log-likelihood {:.3}",
        fit.converged,
        fit.iterations,
        fit.log_likelihood()
    );
    let mean = fit.omega.iter().sum::<f64>() / n as f64;
    let sd = (fit.omega.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    println!("mean omega {mean:.2e}, sd omega {sd:.6}, alpha_0 {}", fit.alpha[0]);

    let intervals = bootstrap_ci(&dtm, &fit, 200, 9, &config)?;
    println!("{:>5} {:>7} {:>7} {:>16}", "doc", "truth", "omega", "95% interval");
    for i in 0..n {
        println!(
            "{:>5} {:>7.2} {:>7.2}   [{:>5.2}, {:>5.2}]",
            fit.documents[i], truth[i], fit.omega[i], intervals[i].lo, intervals[i].hi
        );
    }
    Ok(())
}
