use std::io::Write;
use std::path::Path;

use mscanet_core::checkpoint::load_checkpoint;
use mscanet_core::metrics::roc_curve;
use mscanet_core::train::predict_prob;
use mscanet_core::{Error, Result};

use super::load_all_sorted;
use crate::plot::render_roc;

pub fn run(ckpt: &Path, data: &Path, steps: usize, dist_px: f64, out: &Path) -> Result<()> {
    if steps < 2 {
        return Err(Error::Argument(format!(
            "roc needs at least 2 threshold steps, got {steps}"
        )));
    }
    let samples = load_all_sorted(data)?;
    let (model, _) = load_checkpoint(ckpt)?;

    let mut probs = Vec::with_capacity(samples.len());
    for s in &samples {
        probs.push(predict_prob(&model, s)?);
    }
    let gts: Vec<_> = samples.iter().map(|s| s.mask.clone()).collect();
    let thresholds: Vec<f64> = (1..=steps)
        .map(|i| i as f64 / (steps + 1) as f64)
        .collect();
    let points = roc_curve(&probs, &gts, &thresholds, dist_px)?;

    std::fs::create_dir_all(out)?;
    let csv_path = out.join("roc.csv");
    let mut csv = std::fs::File::create(&csv_path)?;
    writeln!(csv, "threshold,fa,pd")?;
    for p in &points {
        writeln!(csv, "{},{},{}", p.threshold, p.fa, p.pd)?;
    }
    let png_path = out.join("roc.png");
    render_roc(&points, &png_path)?;

    let last = points.last().unwrap();
    let first = points.first().unwrap();
    println!(
        "{} thresholds swept: fa {:.3e} -> {:.3e}, pd {:.4} -> {:.4}",
        points.len(),
        first.fa,
        last.fa,
        first.pd,
        last.pd
    );
    println!("wrote {} and {}", csv_path.display(), png_path.display());
    Ok(())
}
