//! Fit the mixture model and the single-Gaussian baseline on a small box
//! scene and compare edge sharpness and floaters.
//!
//! `cargo run --release --example fit_mixture`

use mixdepth::diagnostics::{crop, edge_localization, floater_count};
use mixdepth::metrics::{edge_entropy, CannyConfig};
use mixdepth::run::{depth_from_disparity, parse_scene};
use mixdepth::synth::render;
use mixdepth::trainer::{TrainConfig, TrainScene, Trainer};

fn main() -> mixdepth::Result<()> {
    let spec = parse_scene(include_str!("../configs/small_box.json"))?;
    let scene = TrainScene::from_rendered(&render(&spec)?)?;
    let obj = &spec.objects[0];

    for (name, baseline) in [("mixture", false), ("baseline", true)] {
        let cfg = TrainConfig {
            baseline,
            ..TrainConfig::box_scene()
        };
        let fit = Trainer::new(&scene, cfg)?
            .fit(|rec, _| {
                if rec.step % 200 == 0 {
                    println!("  {name} step {:>4} loss {:.5}", rec.step, rec.total);
                }
            })
            .map_err(|f| f.error)?;
        let table = fit.table.decode();
        let sel = table.selected_disparity()?;
        let depth = crop(&depth_from_disparity(&sel, &spec)?, 4)?;
        let entropy = edge_entropy(&depth, &CannyConfig::default())?.mean;
        let loc = edge_localization(&sel, obj, 4);
        let floaters = floater_count(&depth, obj.depth, spec.background.depth, 0.1)?;
        println!(
            "{name}: edge entropy {entropy:?}, {:.0}% of edge rows within 1 px, {floaters} floaters",
            100.0 * loc.fraction()
        );
    }
    Ok(())
}
