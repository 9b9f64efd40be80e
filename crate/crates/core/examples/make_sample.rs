//! Writes the bundled sample scene: a curved strip seen by a perspective
//! camera, its rendering, a degraded content texture and a run config.
//!
//! Usage: `make_sample <dir> [side]`

use std::fs;
use std::path::PathBuf;

use uvrefine::io::{save_rgb, save_texture};
use uvrefine::scene::synthetic_problem;

fn main() -> uvrefine::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "assets/sample".into()));
    let side: usize = args.next().map(|s| s.parse().expect("side")).unwrap_or(256);
    fs::create_dir_all(&dir).map_err(|e| uvrefine::Error::Config(e.to_string()))?;

    let problem = synthetic_problem(side, side, 7)?;
    let write = |name: &str, text: String| fs::write(dir.join(name), text).map_err(|e| uvrefine::Error::Config(e.to_string()));
    write("mesh.obj", problem.scene.mesh.to_obj())?;
    write("pose.json", problem.scene.pose.to_json())?;
    save_rgb(&problem.input_image, &dir.join("input.png"))?;
    save_texture(&problem.content, &dir.join("content.png"))?;
    save_texture(&problem.ground_truth, &dir.join("ground_truth.png"))?;
    write(
        "config.toml",
        format!(
            "seed = 1\n\
             resolution = {side}\n\
             paths.input_image = \"input.png\"\n\
             paths.mesh = \"mesh.obj\"\n\
             paths.pose = \"pose.json\"\n\
             paths.content_texture = \"content.png\"\n\
             paths.output_dir = \"out\"\n\
             schedule.scales = [{}, {side}]\n\
             schedule.iterations = 50\n\
             weights.seed = 1\n\
             weights.width_divisor = 8\n",
            side / 2
        ),
    )?;
    println!("wrote sample scene to {}", dir.display());
    Ok(())
}
