//! Static plot rendering: onset-latency distributions from session reports
//! and operating-point curves from sweep tables, as SVG plus CSV.

use std::path::{Path, PathBuf};

use anyhow::Result;
use plotters::prelude::*;

use relay_core::metrics::{SessionReport, TurnOutcome};
use relay_core::session::SweepTable;

pub fn latency_plot(report: &SessionReport, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let mut commit = Vec::new();
    let mut fallback = Vec::new();
    for turn in &report.turns {
        if let Some(latency) = turn.latency {
            match turn.outcome {
                TurnOutcome::Commit { .. } => commit.push(latency.total_ms),
                TurnOutcome::Fallback => fallback.push(latency.total_ms),
                TurnOutcome::Failed { .. } => {}
            }
        }
    }

    let csv_path = out_dir.join("onset_latency.csv");
    let mut csv = String::from("outcome,onset_ms\n");
    for v in &commit {
        csv.push_str(&format!("commit,{v}\n"));
    }
    for v in &fallback {
        csv.push_str(&format!("fallback,{v}\n"));
    }
    std::fs::write(&csv_path, csv)?;

    let svg_path = out_dir.join("onset_latency.svg");
    let all: Vec<f64> = commit.iter().chain(&fallback).copied().collect();
    let max_ms = all.iter().cloned().fold(100.0_f64, f64::max) * 1.1;
    let bins = 40usize;
    let bin_width = max_ms / bins as f64;
    let histogram = |samples: &[f64]| -> Vec<usize> {
        let mut counts = vec![0usize; bins];
        for &v in samples {
            let index = ((v / bin_width) as usize).min(bins - 1);
            counts[index] += 1;
        }
        counts
    };
    let commit_hist = histogram(&commit);
    let fallback_hist = histogram(&fallback);
    let max_count = commit_hist.iter().chain(&fallback_hist).copied().max().unwrap_or(1).max(1);

    {
        let root = SVGBackend::new(&svg_path, (900, 560)).into_drawing_area();
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Response-onset latency", ("sans-serif", 24))
            .margin(12)
            .x_label_area_size(44)
            .y_label_area_size(56)
            .build_cartesian_2d(0.0..max_ms, 0usize..(max_count + max_count / 5 + 1))?;
        chart
            .configure_mesh()
            .x_desc("onset (ms)")
            .y_desc("turns")
            .draw()?;
        for (hist, color, label) in
            [(&commit_hist, &GREEN, "commit"), (&fallback_hist, &RED, "fallback")]
        {
            chart
                .draw_series(hist.iter().enumerate().filter(|(_, &c)| c > 0).map(
                    |(i, &count)| {
                        let x0 = i as f64 * bin_width;
                        let x1 = x0 + bin_width * 0.9;
                        Rectangle::new([(x0, 0usize), (x1, count)], color.mix(0.55).filled())
                    },
                ))?
                .label(label)
                .legend(move |(x, y)| {
                    Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled())
                });
        }
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .background_style(WHITE.mix(0.8))
            .draw()?;
        root.present()?;
    }

    Ok((csv_path, svg_path))
}

pub fn sweep_plot(table: &SweepTable, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let csv_path = out_dir.join("threshold_sweep.csv");
    let mut csv =
        String::from("threshold,prefix_len,commits,fallback_rate,bad_commit_rate,good_commit_rate\n");
    for cell in &table.cells {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            cell.threshold,
            cell.prefix_len,
            cell.commits,
            cell.fallback_rate,
            cell.bad_commit_rate.map(|v| v.to_string()).unwrap_or_default(),
            cell.good_commit_rate.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    std::fs::write(&csv_path, csv)?;

    let svg_path = out_dir.join("threshold_sweep.svg");
    {
        let root = SVGBackend::new(&svg_path, (900, 560)).into_drawing_area();
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Gate operating points", ("sans-serif", 24))
            .margin(12)
            .x_label_area_size(44)
            .y_label_area_size(56)
            .build_cartesian_2d(0.0..1.0, 0.0..1.0)?;
        chart
            .configure_mesh()
            .x_desc("threshold")
            .y_desc("rate")
            .draw()?;

        let mut prefix_lens: Vec<usize> = table.cells.iter().map(|c| c.prefix_len).collect();
        prefix_lens.sort_unstable();
        prefix_lens.dedup();
        let palette = [&BLUE, &RED, &GREEN, &MAGENTA, &CYAN];
        for (i, &prefix_len) in prefix_lens.iter().enumerate() {
            let color = palette[i % palette.len()];
            let series: Vec<(f64, f64)> = table
                .cells
                .iter()
                .filter(|c| c.prefix_len == prefix_len)
                .map(|c| (c.threshold, c.fallback_rate))
                .collect();
            chart
                .draw_series(LineSeries::new(series, color))?
                .label(format!("fallback rate (prefix {prefix_len})"))
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 14, y)], color));
            let bad: Vec<(f64, f64)> = table
                .cells
                .iter()
                .filter(|c| c.prefix_len == prefix_len)
                .filter_map(|c| c.bad_commit_rate.map(|r| (c.threshold, r)))
                .collect();
            if !bad.is_empty() {
                chart
                    .draw_series(LineSeries::new(bad, color.mix(0.4)))?
                    .label(format!("bad-commit rate (prefix {prefix_len})"))
                    .legend(move |(x, y)| {
                        PathElement::new(vec![(x, y), (x + 14, y)], color.mix(0.4))
                    });
            }
        }
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .background_style(WHITE.mix(0.8))
            .draw()?;
        root.present()?;
    }

    Ok((csv_path, svg_path))
}
