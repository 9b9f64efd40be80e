//! Runs the synthetic refinement problem and prints UV-space scores.
//!
//! Usage: `synthetic [side] [iterations] [stages] [normalize 0|1] [terms c,s,r,u] [learning_rate]`

use std::time::Instant;

use uvrefine::features::FeatureNet;
use uvrefine::geometry::{sample_style_image, uv_coverage_mask, StyleParams};
use uvrefine::metrics::psnr;
use uvrefine::refine::{default_boundary_margin, refine_texture, LossTerms, RefineOptions, RefineProblem, StageSchedule};
use uvrefine::scene::synthetic_problem;
use uvrefine::Mask;

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> T {
    args.get(i).and_then(|a| a.parse().ok()).unwrap_or(default)
}

fn main() -> uvrefine::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let side: usize = arg(&args, 0, 256);
    let terms: String = arg(&args, 4, "c,s,r".to_string());

    let problem = synthetic_problem(side, side, 7)?;
    let style = sample_style_image(
        &problem.input_image,
        &problem.scene.mesh,
        &problem.scene.pose,
        side,
        &StyleParams::default_for(side),
    )?
    .texture;
    let options = RefineOptions {
        schedule: StageSchedule {
            num_stages: arg(&args, 2, 5),
            scales: vec![side / 2, side],
            iterations: arg(&args, 1, 50),
            learning_rate: arg(&args, 5, 0.3),
            ..Default::default()
        },
        normalize_render_loss: arg::<u8>(&args, 3, 1) == 1,
        boundary_margin: default_boundary_margin(side),
        seed: 1,
        terms: LossTerms {
            content: terms.contains('c'),
            style: terms.contains('s'),
            render: terms.contains('r'),
            uv_reconstruction: terms.contains('u'),
        },
        ..Default::default()
    };
    let problem_ref = RefineProblem {
        mesh: &problem.scene.mesh,
        pose: &problem.scene.pose,
        input_image: &problem.input_image,
        style: &style,
    };
    let start = Instant::now();
    let (out, report) = refine_texture(&FeatureNet::seeded(1, 8), problem_ref, &problem.content, options)?;
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    for s in &report.stages {
        println!("stage {} render {:.2} -> {:.2}", s.stage, s.initial_render_loss, s.final_render_loss);
    }

    let coverage = uv_coverage_mask(&problem.scene.mesh, side)?;
    let visible = style.validity();
    let hidden = Mask::from_fn(side, side, |x, y| coverage.get(x, y) && !visible.get(x, y));
    let truth = problem.ground_truth.pixels();
    for (name, m) in [("coverage", &coverage), ("visible", visible), ("hidden", &hidden)] {
        println!(
            "{name}: content {:.3} dB refined {:.3} dB",
            psnr(problem.content.pixels(), truth, Some(m))?,
            psnr(out.pixels(), truth, Some(m))?
        );
    }
    Ok(())
}
