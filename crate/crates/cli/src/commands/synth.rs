use std::path::Path;

use mscanet_core::data::{synth_generate, write_dataset};
use mscanet_core::{Error, Result};

use crate::config::{DataConfig, ExperimentConfig};

pub fn run(config_path: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config_path)?;
    let DataConfig::Synth { synth, .. } = &cfg.data else {
        return Err(Error::Config(
            "synth command needs a `data.synth` section in the config".into(),
        ));
    };
    let samples = synth_generate(synth)?;
    write_dataset(&cfg.output_dir, &samples, synth)?;
    println!(
        "wrote {} samples ({}x{}) to {}",
        samples.len(),
        synth.height,
        synth.width,
        cfg.output_dir.display()
    );
    Ok(())
}
