use std::io::Write;
use std::path::Path;

use serde::Serialize;

use mscanet_core::checkpoint::load_checkpoint;
use mscanet_core::data::SegmentationSample;
use mscanet_core::metrics::MetricReport;
use mscanet_core::network::build_mscanet;
use mscanet_core::train::{evaluate, train};
use mscanet_core::{Error, Result};

use crate::config::ExperimentConfig;

/// Cumulative block order: baseline, +MSEDA, +MSEDA+PCBAM, +all three.
const ROWS: [(bool, bool, bool, &str); 4] = [
    (false, false, false, "baseline"),
    (true, false, false, "mseda"),
    (true, true, false, "mseda_pcbam"),
    (true, true, true, "mseda_pcbam_cab"),
];

#[derive(Serialize)]
struct AblationMeta {
    seed: u64,
    epochs: usize,
    batch_size: usize,
    threshold: f64,
    dist_px: f64,
    eval_on: &'static str,
    train_ids: Vec<String>,
    test_ids: Vec<String>,
    rows: Vec<String>,
}

struct Row {
    flags: (bool, bool, bool),
    name: &'static str,
    report: MetricReport,
}

pub fn run(config_path: &Path, parallel: bool) -> Result<()> {
    let cfg = ExperimentConfig::load(config_path)?;
    let (train_set, test_set) = cfg.load_split()?;
    if train_set.is_empty() {
        return Err(Error::Config(
            "training split is empty; raise data.split_ratio".into(),
        ));
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    // all four rows share this split and the seed
    let eval_on_test = !test_set.is_empty();

    let run_row = |index: usize| -> Result<Row> {
        let (mseda, pcbam, cab, name) = ROWS[index];
        let row_cfg = cfg.network.ablation_row(mseda, pcbam, cab);
        let mut model = build_mscanet(&row_cfg, cfg.training.seed)?;
        let out_dir = cfg.output_dir.join(format!("row{index}_{name}"));
        let eval_set: &[SegmentationSample] = if eval_on_test { &test_set } else { &train_set };
        let outcome = train(
            &mut model,
            &train_set,
            &cfg.training,
            &out_dir,
            Some(eval_set),
            0,
            None,
        )?;
        // report the best checkpoint by evaluation mIoU
        let best_model = match &outcome.best {
            Some((dir, _)) => load_checkpoint(dir)?.0,
            None => model,
        };
        let report = evaluate(
            &best_model,
            eval_set,
            cfg.metrics.threshold,
            cfg.metrics.dist_px,
        )?;
        println!("row {index} ({name}): {}", report.format_line());
        Ok(Row {
            flags: (mseda, pcbam, cab),
            name,
            report,
        })
    };

    let rows: Vec<Row> = if parallel {
        let results: Vec<Result<Row>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..ROWS.len())
                .map(|i| scope.spawn(move || run_row(i)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("ablation row thread panicked"))
                .collect()
        });
        results.into_iter().collect::<Result<Vec<_>>>()?
    } else {
        (0..ROWS.len()).map(run_row).collect::<Result<Vec<_>>>()?
    };

    write_outputs(&cfg, &train_set, &test_set, eval_on_test, &rows)?;
    Ok(())
}

fn write_outputs(
    cfg: &ExperimentConfig,
    train_set: &[SegmentationSample],
    test_set: &[SegmentationSample],
    eval_on_test: bool,
    rows: &[Row],
) -> Result<()> {
    let flag = |b: bool| if b { "on" } else { "off" };

    let csv_path = cfg.output_dir.join("ablation.csv");
    let mut csv = std::fs::File::create(&csv_path)?;
    writeln!(csv, "mseda,pcbam,cab,miou,niou,pd,fa_e6")?;
    for r in rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            flag(r.flags.0),
            flag(r.flags.1),
            flag(r.flags.2),
            r.report.miou,
            r.report.niou,
            r.report.pd,
            r.report.fa * 1e6
        )?;
    }

    let mut table = String::new();
    table.push_str("MSEDA  PCBAM  CAB    mIoU     nIoU     Pd       Fa(x1e-6)\n");
    for r in rows {
        table.push_str(&format!(
            "{:<6} {:<6} {:<6} {:<8.4} {:<8.4} {:<8.4} {:<10.2}\n",
            flag(r.flags.0),
            flag(r.flags.1),
            flag(r.flags.2),
            r.report.miou,
            r.report.niou,
            r.report.pd,
            r.report.fa * 1e6
        ));
    }
    std::fs::write(cfg.output_dir.join("ablation.txt"), &table)?;
    print!("{table}");

    let meta = AblationMeta {
        seed: cfg.training.seed,
        epochs: cfg.training.epochs,
        batch_size: cfg.training.batch_size,
        threshold: cfg.metrics.threshold,
        dist_px: cfg.metrics.dist_px,
        eval_on: if eval_on_test { "test" } else { "train" },
        train_ids: train_set.iter().map(|s| s.id.clone()).collect(),
        test_ids: test_set.iter().map(|s| s.id.clone()).collect(),
        rows: rows.iter().map(|r| r.name.to_string()).collect(),
    };
    std::fs::write(
        cfg.output_dir.join("ablation_meta.json"),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;
    println!("wrote {}", csv_path.display());
    Ok(())
}
