use std::path::Path;

use mscanet_core::checkpoint::load_checkpoint;
use mscanet_core::metrics::{self, Mask};
use mscanet_core::train::{predict_masks, write_report};
use mscanet_core::Result;

use super::load_all_sorted;
use crate::overlay::write_overlay;

#[allow(clippy::too_many_arguments)]
pub fn run(
    ckpt: &Path,
    data: &Path,
    threshold: f64,
    dist_px: f64,
    out: &Path,
    overlays: bool,
    oracle: bool,
) -> Result<()> {
    let samples = load_all_sorted(data)?;
    std::fs::create_dir_all(out)?;

    let pairs: Vec<(Mask, Mask)> = if oracle {
        // debug path: ground truth fed as its own prediction
        samples
            .iter()
            .map(|s| (s.mask.clone(), s.mask.clone()))
            .collect()
    } else {
        let (model, _) = load_checkpoint(ckpt)?;
        predict_masks(&model, &samples, threshold)?
    };

    let report = metrics::report(&pairs, threshold, dist_px)?;
    write_report(&report, &out.join("report.json"))?;
    println!("{}", report.format_line());

    if overlays {
        let dir = out.join("overlays");
        std::fs::create_dir_all(&dir)?;
        for (s, (pred, _)) in samples.iter().zip(&pairs) {
            write_overlay(s, pred, &dir.join(format!("{}.png", s.id.replace('.', "_"))))?;
        }
        println!("overlays in {}", dir.display());
    }
    Ok(())
}
