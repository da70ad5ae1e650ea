//! Generates a small synthetic dataset and evaluates it with and without
//! post-processing.
//!
//!     cargo run --example evaluate_synthetic [out_dir]

use riverseg::formats::report::render_table;
use riverseg::pipeline::{cmd_evaluate, PipelineStep, RunConfig};
use riverseg::synth::{generate, SynthSpec, TEST_SPLIT, TRAIN_SPLIT};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| tmp.path().to_path_buf());
    let manifest = generate(&SynthSpec::default(), &out)?;
    println!("dataset in {}", out.display());

    let mut cfg = RunConfig::new(&manifest, TEST_SPLIT);
    let base = cmd_evaluate(&cfg)?;
    println!("\nraw predictions\n{}", render_table(&base.report));

    cfg.run = "aoi+barrier".into();
    cfg.pipeline = vec![
        PipelineStep::Aoi {
            split: TRAIN_SPLIT.into(),
            min_inside_fraction: 0.5,
            connectivity: Default::default(),
        },
        PipelineStep::Barrier,
    ];
    cfg.output.csv = Some(out.join("report.csv"));
    let filtered = cmd_evaluate(&cfg)?;
    println!("\nwith filters\n{}", render_table(&filtered.report));
    println!("csv: {}", out.join("report.csv").display());
    Ok(())
}
