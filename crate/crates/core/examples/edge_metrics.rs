//! Edge entropy, edge completeness and the full metrics report on a
//! hand-made step edge and a blurred copy of it.

use mixdepth::metrics::{edge_completeness, edge_entropy, evaluate, CannyConfig, MetricsConfig};
use mixdepth::{CameraRig, ImageGrid};

fn step(width: usize, height: usize, col: usize) -> ImageGrid {
    ImageGrid::from_fn(width, height, |x, _| if x < col { 4.0 } else { 12.0 }).unwrap()
}

fn main() -> mixdepth::Result<()> {
    let canny = CannyConfig::default();
    let gt = step(64, 48, 30);
    let blurred = gt.box_blur3().box_blur3();
    let shifted = step(64, 48, 32);

    for (name, d) in [("sharp", &gt), ("blurred", &blurred)] {
        let e = edge_entropy(d, &canny)?;
        println!(
            "{name:>8}: edge entropy {:?} over {} edge pixels",
            e.mean,
            e.scores.len()
        );
    }
    println!(
        "2 px shift: edge completeness {:?}",
        edge_completeness(&shifted, &gt, &canny)?
    );

    let rig = CameraRig::rectified(60.0, 60.0, 31.5, 23.5, 0.1)?;
    let report = evaluate(&blurred, &gt, &rig, &MetricsConfig::default())?;
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}
