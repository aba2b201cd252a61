//! Cumulative ablation ladder: encoder-only discriminator, then the U-Net
//! decoder head, then CutMix with consistency regularization. All rows share
//! the seeds, data and every other setting of the base config.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::bail;
use serde::Serialize;
use unetgan_core::data::dataset_from_config;
use unetgan_core::trainer::{RunLayout, Trainer};
use unetgan_core::Config;

use crate::{resolve_config, AblateArgs};

pub const TABLE_FILE: &str = "ablation.md";
pub const JSON_FILE: &str = "ablation.json";

/// The three rows, each adding to the one before.
pub fn ablation_configs(base: &Config, iterations: usize) -> Vec<(&'static str, Config)> {
    let row = |decoder: bool, cutmix: bool| {
        let mut c = base.clone();
        c.loss.use_decoder_head = decoder;
        c.loss.use_cutmix = cutmix;
        c.loss.use_consistency = cutmix;
        c.train.total_iterations = iterations;
        c
    };
    vec![
        ("encoder-only discriminator", row(false, false)),
        ("+ u-net decoder head", row(true, false)),
        ("+ cutmix + consistency", row(true, true)),
    ]
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub config: String,
    pub proxy_fid: Option<f64>,
    pub is_proxy: Option<f64>,
    pub iterations: usize,
    /// `None` on success, otherwise the failure message.
    pub failure: Option<String>,
}

fn directory_name(i: usize, name: &str) -> String {
    let slug: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("{}_{}", i + 1, slug.trim_matches('_').replace("__", "_").replace("__", "_"))
}

/// Trains every row under `out/<row>/` and returns the table rows. A failed
/// row is recorded and the remaining rows still run.
pub fn run_ablation(base: &Config, iterations: usize, out: &Path) -> anyhow::Result<Vec<AblationRow>> {
    let data = dataset_from_config(base)?;
    let mut rows = Vec::new();
    for (i, (name, cfg)) in ablation_configs(base, iterations).into_iter().enumerate() {
        log::info!("ablation row {}: {name}", i + 1);
        let leg = || -> anyhow::Result<(f64, f64)> {
            let layout = RunLayout::create(&out.join(directory_name(i, name)))?;
            std::fs::write(layout.root.join("config.toml"), cfg.to_toml_string())?;
            let mut trainer = Trainer::new(cfg.clone(), &data)?;
            let mut state = trainer.init_state();
            let summary = trainer.run(&mut state, Some(&layout))?;
            let &(_, fid, is) = summary
                .evaluations
                .last()
                .ok_or_else(|| anyhow::anyhow!("run produced no evaluation"))?;
            Ok((fid, is))
        };
        let row = match leg() {
            Ok((fid, is)) => AblationRow {
                config: name.to_string(),
                proxy_fid: Some(fid),
                is_proxy: Some(is),
                iterations,
                failure: None,
            },
            Err(e) => {
                log::error!("ablation row {name} failed: {e:#}");
                AblationRow {
                    config: name.to_string(),
                    proxy_fid: None,
                    is_proxy: None,
                    iterations,
                    failure: Some(format!("{e:#}")),
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Markdown table with columns config, proxy-FID, IS-proxy, iterations.
pub fn render_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("| config | proxy-FID | IS-proxy | iterations |\n|---|---|---|---|\n");
    for r in rows {
        let num = |v: Option<f64>| v.map_or_else(|| "FAILED".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} |",
            r.config,
            num(r.proxy_fid),
            num(r.is_proxy),
            r.iterations
        );
    }
    s
}

pub fn cmd_ablate(a: &AblateArgs) -> anyhow::Result<()> {
    let base = resolve_config(&a.config)?;
    let iterations = a.iterations.unwrap_or(base.train.total_iterations);
    std::fs::create_dir_all(&a.out)?;
    let rows = run_ablation(&base, iterations, &a.out)?;
    let table = render_table(&rows);
    std::fs::write(a.out.join(TABLE_FILE), &table)?;
    std::fs::write(a.out.join(JSON_FILE), serde_json::to_string_pretty(&rows)?)?;
    print!("{table}");
    let failed = rows.iter().filter(|r| r.failure.is_some()).count();
    if failed > 0 {
        bail!("{failed} of {} ablation rows failed", rows.len());
    }
    Ok(())
}
