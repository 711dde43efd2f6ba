use std::path::Path;

use anyhow::{bail, Context, Result};

use relay_core::config::ResolvedProfile;
use relay_core::data_synth::{build_corpus, CorpusConfig, CorpusManifest};
use relay_core::fast_path::{DraftTiming, StochasticSource, StochasticSourceConfig};
use relay_core::metrics::{score_events as score_event_lists, SessionReport};
use relay_core::session::{run_session, run_sweep, SweepTable};
use relay_core::timeline::{load_script, save_script, ControlToken, ConversationScript, Tick};
use relay_core::verifier::{
    build_kfold_dataset, load_dataset, load_weights, save_dataset, save_weights, threshold_sweep,
    train, FoldScopedSource, PrefixLabel, RuleLabelOracle, TrainConfig, VerifierConfig,
};

use crate::plotting;

/// Scripts for a run: an explicit directory wins, then the profile's
/// directory, then an in-memory corpus generated from the profile.
fn load_scripts(profile: &ResolvedProfile, dir_override: Option<&Path>) -> Result<Vec<ConversationScript>> {
    let dir = dir_override.or(profile.scripts_dir.as_deref());
    match dir {
        Some(dir) => {
            let mut paths: Vec<_> = std::fs::read_dir(dir)
                .with_context(|| format!("reading {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "script"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                bail!("no .script files in {}", dir.display());
            }
            paths
                .iter()
                .map(|p| load_script(p).with_context(|| format!("parsing {}", p.display())))
                .collect()
        }
        None => Ok(build_corpus(&profile.corpus)?.into_iter().map(|e| e.script).collect()),
    }
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn print_report_summary(report: &SessionReport) {
    let a = &report.aggregates;
    println!("turns: {} (commits {}, fallbacks {}, failures {})", a.turns, a.commits, a.fallbacks, a.failures);
    println!("fallback rate: {:.3}", a.fallback_rate);
    if let Some(p90) = a.p90_onset_ms {
        println!("p90 onset: {p90} ms");
    }
    if let Some(p90) = a.p90_commit_onset_ms {
        println!("p90 commit onset: {p90} ms");
    }
    if let Some(p90) = a.p90_fallback_onset_ms {
        println!("p90 fallback onset: {p90} ms");
    }
    if let Some(rate) = a.bad_commit_rate {
        println!("bad-commit rate: {rate:.3}");
    }
    if let Some(rate) = a.good_commit_rate {
        println!("good-commit rate: {rate:.3}");
    }
    if let Some(margin) = a.mean_relay_margin_ms {
        println!("mean relay margin: {margin:.1} ms");
    }
    if let Some(rate) = a.seamless_rate {
        println!("seamless rate: {rate:.3}");
    }
    if let Some(rate) = a.low_quality_rate {
        println!("low-quality rate (oracle scores <= 3): {rate:.3} over {} scored turns", a.quality_scored_turns);
    }
    for score in &report.event_scores.per_type {
        println!(
            "{:6} precision {:.3} recall {:.3} f1 {:.3} ({} predicted / {} reference)",
            score.token.label(),
            score.precision,
            score.recall,
            score.f1,
            score.predicted_count,
            score.reference_count
        );
    }
}

pub fn run(profile: &ResolvedProfile, scripts_dir: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let scripts = load_scripts(profile, scripts_dir)?;
    let report = run_session(&profile.session, &scripts)?;
    print_report_summary(&report);
    if let Some(path) = out {
        write_json(&report, path)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}

pub fn sweep(
    profile: &ResolvedProfile,
    scripts_dir: Option<&Path>,
    thresholds: &[f64],
    prefix_lens: &[usize],
    out: Option<&Path>,
) -> Result<()> {
    let scripts = load_scripts(profile, scripts_dir)?;
    let table = run_sweep(&profile.session, &scripts, thresholds, prefix_lens)?;
    println!(
        "{:>9} {:>7} {:>8} {:>9} {:>10} {:>10} {:>10}",
        "threshold", "prefix", "commits", "fallback", "bad-commit", "good-commit", "p90-onset"
    );
    for cell in &table.cells {
        println!(
            "{:>9.2} {:>7} {:>8} {:>9.3} {:>10} {:>11} {:>10}",
            cell.threshold,
            cell.prefix_len,
            cell.commits,
            cell.fallback_rate,
            cell.bad_commit_rate.map(|r| format!("{r:.3}")).unwrap_or_else(|| "-".into()),
            cell.good_commit_rate.map(|r| format!("{r:.3}")).unwrap_or_else(|| "-".into()),
            cell.p90_onset_ms.map(|v| format!("{v}")).unwrap_or_else(|| "-".into()),
        );
    }
    if let Some(path) = out {
        write_json(&table, path)?;
        println!("sweep written to {}", path.display());
    }
    Ok(())
}

pub fn gen_corpus(profile: &ResolvedProfile, out_dir: &Path, count: Option<usize>) -> Result<()> {
    let mut config: CorpusConfig = profile.corpus.clone();
    if let Some(count) = count {
        config.scripts = count;
    }
    let corpus = build_corpus(&config)?;
    std::fs::create_dir_all(out_dir)?;
    for entry in &corpus {
        let path = out_dir.join(format!("{}.script", entry.script.metadata.id));
        save_script(&entry.script, &path)?;
    }
    let manifest = CorpusManifest::describe(&config, &corpus);
    write_json(&manifest, &out_dir.join("manifest.json"))?;
    println!("{} scripts written to {}", corpus.len(), out_dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn train_verifier(
    profile: &ResolvedProfile,
    out: &Path,
    dataset_path: Option<&Path>,
    count: usize,
    folds: usize,
    epochs: usize,
    learning_rate: f64,
    save_dataset_path: Option<&Path>,
) -> Result<()> {
    let seed = profile.session.seed;
    let dataset = match dataset_path {
        Some(path) => load_dataset(path)?,
        None => {
            let corpus = build_corpus(&CorpusConfig {
                scripts: count,
                seed,
                ..profile.corpus.clone()
            })?;
            let scripts: Vec<ConversationScript> =
                corpus.into_iter().map(|e| e.script).collect();
            let hidden_dim = profile.session.hidden_dim;
            let mut factory = |fold: usize| FoldScopedSource {
                excluded_fold: fold,
                source: Box::new(StochasticSource::new(StochasticSourceConfig {
                    seed,
                    hidden_dim,
                    bad_rate: 0.054,
                    cluster_separation: 6.0,
                    timing: DraftTiming::PerWordMs(14.0),
                    excluded_fold: Some(fold),
                })),
            };
            build_kfold_dataset(
                &scripts,
                folds,
                &mut factory,
                &RuleLabelOracle::default(),
                profile.session.prefix_len,
            )?
        }
    };
    let (good, bad) = dataset.iter().fold((0, 0), |(g, b), e| match e.label {
        PrefixLabel::Good => (g + 1, b),
        PrefixLabel::Bad => (g, b + 1),
    });
    println!("dataset: {} examples ({} good, {} bad)", dataset.len(), good, bad);
    if let Some(path) = save_dataset_path {
        save_dataset(path, &dataset)?;
        println!("dataset written to {}", path.display());
    }

    let config = TrainConfig {
        model: VerifierConfig { hidden_dim: profile.session.hidden_dim, ..Default::default() },
        epochs,
        learning_rate,
        seed,
        ..Default::default()
    };
    let (model, report) = train(&dataset, &config)?;
    save_weights(&model, out)?;
    println!("weights written to {} ({} parameters)", out.display(), report.parameter_count);
    println!(
        "holdout: auroc {:.4}, bad-class average precision {:.4}, bad recall@0.5 {:.4} ({} bad of {})",
        report.auroc,
        report.average_precision_bad,
        report.bad_recall_at_half,
        report.holdout_bad_count,
        report.holdout_size
    );
    Ok(())
}

pub fn eval_verifier(weights: &Path, dataset: &Path, thresholds: &[f64]) -> Result<()> {
    let model = load_weights(weights)?;
    let dataset = load_dataset(dataset)?;
    let mut scored = Vec::with_capacity(dataset.len());
    for example in &dataset {
        scored.push((model.forward(&example.prefix)?, example.label));
    }
    println!("examples: {}", scored.len());
    println!("auroc: {:.4}", relay_core::verifier::auroc(&scored));
    println!(
        "bad-class average precision: {:.4}",
        relay_core::verifier::average_precision_bad(&scored)
    );
    println!("{:>9} {:>11} {:>12} {:>9}", "threshold", "bad-commit", "good-commit", "fallback");
    for row in threshold_sweep(&scored, thresholds) {
        println!(
            "{:>9.2} {:>10.1}% {:>11.1}% {:>8.1}%",
            row.threshold,
            row.bad_commit_rate * 100.0,
            row.good_commit_rate * 100.0,
            row.fallback_rate * 100.0
        );
    }
    Ok(())
}

fn parse_event_file(path: &Path) -> Result<Vec<(Tick, ControlToken)>> {
    let text = std::fs::read_to_string(path)?;
    let mut events = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (tick_s, token_s) = line
            .split_once('|')
            .with_context(|| format!("{}:{}: expected `tick | [TOKEN]`", path.display(), idx + 1))?;
        let tick: u64 = tick_s.trim().parse().with_context(|| {
            format!("{}:{}: bad tick {:?}", path.display(), idx + 1, tick_s.trim())
        })?;
        let token = ControlToken::from_label(token_s.trim()).with_context(|| {
            format!("{}:{}: unknown token {:?}", path.display(), idx + 1, token_s.trim())
        })?;
        events.push((Tick(tick), token));
    }
    Ok(events)
}

pub fn score_events(predicted: &Path, reference: &Path, tolerance: u64) -> Result<()> {
    let predicted = parse_event_file(predicted)?;
    let reference = parse_event_file(reference)?;
    let report = score_event_lists(&predicted, &reference, tolerance);
    println!("tolerance: +-{} frame(s)", report.tolerance_frames);
    for score in &report.per_type {
        println!(
            "{:7} precision {:.3} recall {:.3} f1 {:.3} (matched {} of {} predicted / {} reference)",
            score.token.label(),
            score.precision,
            score.recall,
            score.f1,
            score.matched,
            score.predicted_count,
            score.reference_count
        );
    }
    Ok(())
}

pub fn plot(report: Option<&Path>, sweep: Option<&Path>, out_dir: &Path) -> Result<()> {
    if report.is_none() && sweep.is_none() {
        bail!("plot needs --report and/or --sweep");
    }
    std::fs::create_dir_all(out_dir)?;
    if let Some(path) = report {
        let report: SessionReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let (csv, svg) = plotting::latency_plot(&report, out_dir)?;
        println!("latency distribution: {} / {}", csv.display(), svg.display());
    }
    if let Some(path) = sweep {
        let table: SweepTable = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let (csv, svg) = plotting::sweep_plot(&table, out_dir)?;
        println!("threshold sweep: {} / {}", csv.display(), svg.display());
    }
    Ok(())
}
