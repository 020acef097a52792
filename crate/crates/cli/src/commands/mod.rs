pub mod ablate;
pub mod eval;
pub mod roc;
pub mod synth;
pub mod train;

use mscanet_core::data::{load_dataset, SegmentationSample};
use mscanet_core::{Error, Result};
use std::path::Path;

/// Load every sample of a dataset directory in stable (sorted) order.
pub fn load_all_sorted(root: &Path) -> Result<Vec<SegmentationSample>> {
    if !root.exists() {
        return Err(Error::Load(format!(
            "dataset path does not exist: {}",
            root.display()
        )));
    }
    let (_, mut all) = load_dataset(root, 0.0, 0)?;
    all.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(all)
}
