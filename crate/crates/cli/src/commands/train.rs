use std::path::Path;

use mscanet_core::checkpoint::load_checkpoint;
use mscanet_core::data::write_split_lists;
use mscanet_core::network::build_mscanet;
use mscanet_core::train::{evaluate, train, EpochStats};
use mscanet_core::{Error, Result};

use crate::config::ExperimentConfig;

pub fn run(config_path: &Path, resume: Option<&Path>) -> Result<()> {
    let cfg = ExperimentConfig::load(config_path)?;
    let (train_set, test_set) = cfg.load_split()?;
    if train_set.is_empty() {
        return Err(Error::Config(
            "training split is empty; raise data.split_ratio".into(),
        ));
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    write_split_lists(&cfg.output_dir, &train_set, &test_set)?;

    let (mut model, start_epoch) = match resume {
        Some(ckpt) => {
            let (model, meta) = load_checkpoint(ckpt)?;
            if meta.epoch >= cfg.training.epochs {
                return Err(Error::Config(format!(
                    "checkpoint already at epoch {}, config trains {}",
                    meta.epoch, cfg.training.epochs
                )));
            }
            println!("resuming from {} at epoch {}", ckpt.display(), meta.epoch);
            (model, meta.epoch)
        }
        None => (build_mscanet(&cfg.network, cfg.training.seed)?, 0),
    };

    println!(
        "training {} parameters on {} samples ({} held out) for {} epochs",
        model.count_parameters(),
        train_set.len(),
        test_set.len(),
        cfg.training.epochs
    );
    let every = (cfg.training.epochs / 10).max(1);
    let mut cb = |s: EpochStats| {
        if s.epoch % every == 0 || s.epoch + 1 == cfg.training.epochs {
            println!(
                "epoch {:>5}  lr {:.3e}  loss {:.6e}",
                s.epoch, s.lr, s.mean_loss
            );
        }
    };
    let eval_set = (!test_set.is_empty()).then_some(test_set.as_slice());
    let outcome = train(
        &mut model,
        &train_set,
        &cfg.training,
        &cfg.output_dir,
        eval_set,
        start_epoch,
        Some(&mut cb),
    )?;

    println!("final checkpoint: {}", outcome.final_dir.display());
    if let Some((best_dir, miou)) = &outcome.best {
        println!("best checkpoint:  {} (test mIoU {miou:.4})", best_dir.display());
    }
    if let Some(eval_set) = eval_set {
        let report = evaluate(&model, eval_set, cfg.metrics.threshold, cfg.metrics.dist_px)?;
        println!("test  {}", report.format_line());
    }
    Ok(())
}
