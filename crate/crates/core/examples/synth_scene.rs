//! Render the default box scene and write it the way `mixdepth synth` does.
//!
//! `cargo run --example synth_scene -- out_dir`

use std::path::PathBuf;

use mixdepth::io::{write_pfm, write_pnm};
use mixdepth::synth::{render, SceneSpec};

fn main() -> mixdepth::Result<()> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "box_scene".into()),
    );
    std::fs::create_dir_all(&out)?;

    let spec = SceneSpec::default_box();
    let scene = render(&spec)?;
    write_pnm(out.join("target.ppm"), &scene.target.color)?;
    write_pnm(out.join("source.ppm"), &scene.source.color)?;
    write_pfm(out.join("target_depth.pfm"), &scene.target.depth)?;

    let fg = scene.target.surface.iter().filter(|&&s| s != 0).count();
    let conv = &spec.convention;
    println!(
        "{}x{} scene written to {}",
        spec.width,
        spec.height,
        out.display()
    );
    println!("{fg} box pixels in the target view");
    for (name, depth) in [
        ("background", spec.background.depth),
        ("box", spec.objects[0].depth),
    ] {
        let d = conv.depth_to_disparity(depth);
        println!(
            "{name}: depth {depth}, disparity {d:.4}, horizontal shift {:.2} px",
            spec.rig.fx * spec.rig.translation[0] / depth
        );
    }
    Ok(())
}
