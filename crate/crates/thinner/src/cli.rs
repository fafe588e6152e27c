//! The command implementations behind the `thinner` binary.
//!
//! Each command is an ordinary function so it can be driven from tests (and
//! from other front ends) without spawning a process. All of them are
//! deterministic: the run configuration's master seed is fanned out to data
//! generation, the split, initialisation, training and pruning through
//! fixed domains, so re-running a command reproduces its outputs bit for
//! bit.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::data::{split, Dataset};
use crate::error::Result;
use crate::network::{evaluate, init_model, load_model, save_model, train, EpochStats, Model};
use crate::pruning::{
    prune_gradually_global, prune_layer_sequential, prune_layerwise_gradual, PruneReport, Scheme,
};
use crate::scoring::Metric;
use crate::seeds::{
    subseed, DOMAIN_DATA, DOMAIN_INIT, DOMAIN_PRUNE, DOMAIN_SPLIT, DOMAIN_TRAIN,
};

/// Command-line overrides layered on top of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub metric: Option<Metric>,
    pub scheme: Option<Scheme>,
    pub ratio: Option<f64>,
    pub target: Option<f64>,
    pub max_rounds: Option<usize>,
}

impl Overrides {
    fn apply(&self, config: &mut RunConfig) -> Result<()> {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(metric) = self.metric {
            config.metric = metric;
        }
        if let Some(scheme) = self.scheme {
            config.scheme = scheme;
        }
        if let Some(ratio) = self.ratio {
            config.pruning.ratio = ratio;
        }
        if let Some(target) = self.target {
            config.pruning.target_accuracy = target;
        }
        if let Some(max_rounds) = self.max_rounds {
            config.pruning.max_rounds = max_rounds;
        }
        // Overrides can push values out of range; re-check.
        config.validate()
    }
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let mut config = RunConfig::load(path)?;
    overrides.apply(&mut config)?;
    Ok(config)
}

/// Loads the dataset and splits it into train/validation. Both halves are a
/// pure function of the configuration, so `train` and a later `prune` see
/// the identical split.
fn load_split(config: &RunConfig) -> Result<(Dataset, Dataset)> {
    let data = config.dataset.load(subseed(config.seed, DOMAIN_DATA))?;
    split(
        &data,
        1.0 - config.val_fraction,
        subseed(config.seed, DOMAIN_SPLIT),
    )
}

fn write_train_log(stats: &[EpochStats], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,loss,accuracy\n");
    for s in stats {
        out.push_str(&format!("{},{},{}\n", s.epoch, s.mean_loss, s.train_accuracy));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Trains a fresh model per the configuration and writes `model.model` and
/// `train_log.csv` into the output directory.
pub fn cmd_train(config_path: &Path, overrides: &Overrides) -> Result<()> {
    let config = load_config(config_path, overrides)?;
    std::fs::create_dir_all(&config.out_dir)?;
    let (train_set, val_set) = load_split(&config)?;
    println!(
        "dataset: {} train / {} validation samples, {} classes",
        train_set.len(),
        val_set.len(),
        train_set.classes()
    );

    let model = init_model(
        &config.model.layers,
        config.model.input_shape,
        subseed(config.seed, DOMAIN_INIT),
    )?;
    println!(
        "model: {} layers, {} parameters, {} prunable neurons",
        model.layers().len(),
        model.param_count(),
        model.total_prunable()
    );

    let mut train_config = config.train.clone();
    train_config.seed = subseed(config.seed, DOMAIN_TRAIN);
    let (model, stats) = train(model, &train_set, &train_config)?;
    for s in &stats {
        println!(
            "epoch {}: loss {:.4}, train accuracy {:.4}",
            s.epoch, s.mean_loss, s.train_accuracy
        );
    }

    let accuracy = evaluate(&model, &val_set)?;
    let model_path = config.out_dir.join("model.model");
    save_model(&model, &model_path)?;
    write_train_log(&stats, &config.out_dir.join("train_log.csv"))?;
    println!("validation accuracy: {accuracy:.4}");
    println!("saved {}", model_path.display());
    Ok(())
}

fn run_scheme(
    scheme: Scheme,
    model: Model,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &RunConfig,
    artifacts_dir: PathBuf,
) -> Result<(Model, PruneReport)> {
    std::fs::create_dir_all(&artifacts_dir)?;
    let prune_config = config.pruning.to_prune_config(
        config.metric,
        subseed(config.seed, DOMAIN_PRUNE),
        Some(artifacts_dir),
    );
    match scheme {
        Scheme::Global => prune_gradually_global(model, train_set, val_set, &prune_config),
        Scheme::Layerwise => prune_layerwise_gradual(model, train_set, val_set, &prune_config),
        // The sequential baseline reads the ratio as a per-layer fraction.
        Scheme::Sequential => {
            prune_layer_sequential(model, train_set, val_set, config.pruning.ratio, &prune_config)
        }
    }
}

fn print_report(report: &PruneReport) {
    for r in &report.rounds {
        println!(
            "round {}: {} -> {} neurons, accuracy {:.4} -> {:.4} after fine-tuning",
            r.round, r.total_before, r.total_after, r.acc_before_finetune, r.acc_after_finetune
        );
    }
    let stop = report
        .stop_reason
        .map_or_else(|| "aborted".to_string(), |s| s.to_string());
    println!(
        "{}: {} -> {} neurons, accuracy {:.4} -> {:.4}, stopped by {}",
        report.scheme,
        report.initial_total,
        report.final_total(),
        report.initial_accuracy,
        report.final_accuracy(),
        stop
    );
}

/// Prunes a trained model per the configured scheme. Writes the thinned
/// model, per-round checkpoints and score dumps, and `report.csv` /
/// `report.json` into the output directory.
pub fn cmd_prune(config_path: &Path, model_path: &Path, overrides: &Overrides) -> Result<()> {
    let config = load_config(config_path, overrides)?;
    let model = load_model(model_path)?;
    let (train_set, val_set) = load_split(&config)?;
    let (pruned, report) = run_scheme(
        config.scheme,
        model,
        &train_set,
        &val_set,
        &config,
        config.out_dir.clone(),
    )?;
    let out_path = config.out_dir.join("pruned.model");
    save_model(&pruned, &out_path)?;
    print_report(&report);
    println!("saved {}", out_path.display());
    Ok(())
}

/// Evaluates a saved model on the *whole* configured dataset (no split —
/// this command measures a finished model, not a training run).
pub fn cmd_eval(config_path: &Path, model_path: &Path, seed: Option<u64>) -> Result<()> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let model = load_model(model_path)?;
    let data = config.dataset.load(subseed(config.seed, DOMAIN_DATA))?;
    let accuracy = evaluate(&model, &data)?;
    println!(
        "accuracy {:.4} on {} samples ({} parameters, {} prunable neurons)",
        accuracy,
        data.len(),
        model.param_count(),
        model.total_prunable()
    );
    Ok(())
}

/// Runs the global and layerwise schemes side by side from the same
/// starting model, data and seeds, and writes `comparison.csv` with one row
/// per round per scheme (round 0 is the unpruned model).
pub fn cmd_compare(config_path: &Path, model_path: &Path, overrides: &Overrides) -> Result<()> {
    let config = load_config(config_path, overrides)?;
    std::fs::create_dir_all(&config.out_dir)?;
    let model = load_model(model_path)?;
    let (train_set, val_set) = load_split(&config)?;

    let mut csv = String::from("round,scheme,total_neurons,accuracy\n");
    for scheme in [Scheme::Global, Scheme::Layerwise] {
        let (_, report) = run_scheme(
            scheme,
            model.clone(),
            &train_set,
            &val_set,
            &config,
            config.out_dir.join(scheme.to_string()),
        )?;
        csv.push_str(&format!(
            "0,{},{},{}\n",
            scheme, report.initial_total, report.initial_accuracy
        ));
        for r in &report.rounds {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                r.round, scheme, r.total_after, r.acc_after_finetune
            ));
        }
        print_report(&report);
    }
    let csv_path = config.out_dir.join("comparison.csv");
    std::fs::write(&csv_path, csv)?;
    println!("saved {}", csv_path.display());
    Ok(())
}

/// Prints a saved model's structure: every layer with its shape role, plus
/// prunable widths and the parameter count.
pub fn cmd_inspect(model_path: &Path) -> Result<()> {
    let model = load_model(model_path)?;
    let names = model.layer_display_names();
    let [c, h, w] = model.input_shape();
    println!("input: {c}x{h}x{w}");
    for (i, layer) in model.layers().iter().enumerate() {
        match layer.width() {
            Some(width) => {
                let tag = if model.prunable().contains(&i) {
                    "prunable"
                } else {
                    "fixed"
                };
                println!("  {} width {} ({}, {} parameters)", names[i], width, tag, layer.param_count());
            }
            None => println!("  {}", names[i]),
        }
    }
    println!(
        "total: {} prunable neurons, {} parameters",
        model.total_prunable(),
        model.param_count()
    );
    Ok(())
}
