//! A reduced `check-prop` run: analytic color and error spreads against
//! Monte Carlo at three noise levels, plus the competitive-weight check.

use mixdepth::validation::{check_propagation, PropCheckConfig};

fn main() -> mixdepth::Result<()> {
    let cfg = PropCheckConfig {
        cases: 30,
        samples: 20_000,
        weight_pairs: 10,
        weight_draws: 100_000,
        ..Default::default()
    };
    let report = check_propagation(&cfg)?;
    for s in &report.sigmas {
        println!(
            "sigma {:<6} color max {:.2}% ({} channels), error max {:.2}% ({} cases), pass {}",
            s.sigma,
            100.0 * s.color.max_rel,
            s.color.cases,
            100.0 * s.error.max_rel,
            s.error.cases,
            s.pass
        );
    }
    println!(
        "affine z {:.2} / {:.2}, pass {}",
        report.affine.max_mean_z, report.affine.max_std_z, report.affine.pass
    );
    println!(
        "weights max z {:.2}, pass {}",
        report.weights.max_z, report.weights.pass
    );
    println!("overall {}", if report.pass { "PASS" } else { "FAIL" });
    Ok(())
}
