//! Trains the RGB pixel forest on a synthetic train split and scores it on
//! the test split.

use riverseg::forest::ForestConfig;
use riverseg::formats::{read_manifest, report::render_table};
use riverseg::pipeline::{cmd_evaluate, cmd_rf_predict, cmd_rf_train, RunConfig};
use riverseg::synth::{generate, SynthSpec, TEST_SPLIT, TRAIN_SPLIT};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let manifest = read_manifest(generate(&SynthSpec::default(), tmp.path())?, true)?;

    let cfg = ForestConfig { n_trees: 20, ..Default::default() };
    let forest = cmd_rf_train(&manifest, TRAIN_SPLIT, &cfg, tmp.path().join("forest.json"))?;
    println!("trained {} trees over classes {:?}", forest.trees.len(), forest.classes);

    let predicted = cmd_rf_predict(&forest, &manifest, TEST_SPLIT, tmp.path().join("rf"), 20)?;
    let mut run = RunConfig::new(predicted, TEST_SPLIT);
    run.run = "forest".into();
    println!("{}", render_table(&cmd_evaluate(&run)?.report));
    Ok(())
}
