//! Finite-difference checks of every analytic derivative stage.

use mixdepth::gradcheck::{check_bilinear, check_photometric, check_reproject};

fn main() -> mixdepth::Result<()> {
    for s in [
        check_reproject(100, 0)?,
        check_bilinear(100, 1)?,
        check_photometric(100, 2)?,
    ] {
        println!(
            "{:<16} max rel err {:.2e} (tol {:.0e}) over {} points, {} skipped: {}",
            s.stage,
            s.max_rel,
            s.tolerance,
            s.checked,
            s.skipped,
            if s.pass { "ok" } else { "FAIL" }
        );
    }
    Ok(())
}
