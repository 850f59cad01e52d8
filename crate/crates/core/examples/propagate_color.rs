//! Push one disparity hypothesis through the warp: analytic color
//! distribution against Monte Carlo, then error distributions and the
//! competitive weight between two hypotheses.

use mixdepth::loss::{competitive_weights, photometric_error, Patch3, PhotometricConfig};
use mixdepth::synth::{render, SceneSpec};
use mixdepth::{mc_color_oracle, propagate_color, GaussianRV, PixelCoord};

fn main() -> mixdepth::Result<()> {
    let spec = SceneSpec::default_box();
    let scene = render(&spec)?;
    let src = &scene.source.color;
    let conv = &spec.convention;
    let (x, y) = (40usize, 64usize);
    let p = PixelCoord::new(x as f64, y as f64);
    let d_true = conv.depth_to_disparity(spec.background.depth);

    println!("pixel ({x}, {y}), true disparity {d_true:.4}");
    println!(
        "{:>7} {:>10} {:>10} {:>10}",
        "sigma", "analytic", "mc", "rel.dev"
    );
    for sigma in [0.001, 0.01, 0.05] {
        let rv = GaussianRV::new(d_true, sigma * sigma)?;
        let a = propagate_color(rv, p, &spec.rig, conv, src)?;
        let m = mc_color_oracle(rv, p, &spec.rig, conv, src, 100_000, 7)?;
        let (sa, sm) = (a.var[0].sqrt(), m.var[0].sqrt());
        println!(
            "{sigma:>7} {sa:>10.5} {sm:>10.5} {:>9.2}%",
            100.0 * (sa / sm - 1.0).abs()
        );
    }

    let cfg = PhotometricConfig::default();
    let target = Patch3::from_image(&scene.target.color, x, y);
    let context = Patch3::from_image(src, x, y);
    let good = GaussianRV::new(d_true, 1e-4)?;
    let bad = GaussianRV::new(conv.depth_to_disparity(spec.objects[0].depth), 1e-4)?;
    let err = |rv| -> mixdepth::Result<_> {
        photometric_error(
            &propagate_color(rv, p, &spec.rig, conv, src)?,
            &context,
            &target,
            &cfg,
        )
    };
    let (e1, e2) = (err(good)?, err(bad)?);
    let w = competitive_weights(&e1, &e2)?;
    println!("error at true disparity {:.4} +- {:.4}", e1.mu, e1.std());
    println!("error at box disparity  {:.4} +- {:.4}", e2.mu, e2.std());
    println!("w1 = {:.4}, w2 = {:.4}", w.get(0), w.get(1));
    Ok(())
}
