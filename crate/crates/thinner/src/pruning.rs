//! Neuron selection, model surgery, and the prune/fine-tune loops.
//!
//! The main entry point is [`prune_gradually_global`]: while validation
//! accuracy stays at or above the target, score every prunable neuron on a
//! cross-layer scale, remove the globally least important fraction, and
//! fine-tune briefly. Layer floors guarantee no layer is ever emptied.
//! [`prune_layerwise_gradual`] removes the same fraction from each layer
//! instead, and [`prune_layer_sequential`] thins one layer per round in
//! order — both exist so the schemes can be compared on equal footing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{
    evaluate, save_model, train, write_atomic, Layer, LayerKind, Model, TrainConfig,
};
use crate::scoring::{dump_scores, score_model, Metric, NeuronId, ScoreEntry, ScoreTable};
use crate::seeds;

// --- configuration ----------------------------------------------------------

/// Settings for a pruning run. Deserialization falls back to
/// [`PruneConfig::default`] for any missing field, so `{}` is a valid
/// (if aimless) configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    /// Fraction of the *current* prunable total removed per round, in (0, 1).
    pub ratio: f64,
    /// Keep pruning while validation accuracy is at or above this.
    pub target_accuracy: f64,
    pub metric: Metric,
    /// Hard cap on rounds regardless of accuracy.
    pub max_rounds: usize,
    /// No layer is ever thinned below this width.
    pub min_neurons_per_layer: usize,
    /// Fine-tuning schedule applied after each removal. Its seed is
    /// overridden per round, derived from [`PruneConfig::seed`].
    pub finetune: TrainConfig,
    /// Response statistics use the first `min(stats_samples, n)` training
    /// samples, re-collected every round.
    pub stats_samples: usize,
    pub seed: u64,
    /// When set, every round writes a model checkpoint and score dump here,
    /// and the report files are kept up to date.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub artifacts_dir: Option<PathBuf>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            ratio: 0.05,
            target_accuracy: 0.0,
            metric: Metric::Aaws,
            max_rounds: 7,
            min_neurons_per_layer: 1,
            finetune: TrainConfig {
                learning_rate: 0.01,
                momentum: 0.9,
                batch_size: 32,
                epochs: 2,
                seed: 0,
            },
            stats_samples: 1024,
            seed: 0,
            artifacts_dir: None,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::Config(format!(
                "prune ratio must lie in (0, 1), got {}",
                self.ratio
            )));
        }
        if !(0.0..=1.0).contains(&self.target_accuracy) {
            return Err(Error::Config(format!(
                "target accuracy must lie in [0, 1], got {}",
                self.target_accuracy
            )));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be >= 1".into()));
        }
        if self.min_neurons_per_layer == 0 {
            return Err(Error::Config("min_neurons_per_layer must be >= 1".into()));
        }
        if self.stats_samples == 0 {
            return Err(Error::Config("stats_samples must be >= 1".into()));
        }
        self.finetune.validate()
    }
}

/// Which pruning scheme to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// One global ranking across all prunable layers.
    Global,
    /// The same fraction from every layer, each round.
    Layerwise,
    /// One layer per round, in network order.
    Sequential,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Global => "global",
            Scheme::Layerwise => "layerwise",
            Scheme::Sequential => "sequential",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Scheme::Global),
            "layerwise" => Ok(Scheme::Layerwise),
            "sequential" => Ok(Scheme::Sequential),
            other => Err(Error::Config(format!(
                "unknown scheme {other:?} (expected global, layerwise or sequential)"
            ))),
        }
    }
}

/// Why a pruning loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Validation accuracy fell below the target.
    TargetBreached,
    /// The round budget ran out (or every layer had its turn, for the
    /// sequential scheme).
    MaxRounds,
    /// Layer floors left nothing removable.
    LayerFloor,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::TargetBreached => "target_breached",
            StopReason::MaxRounds => "max_rounds",
            StopReason::LayerFloor => "layer_floor",
        })
    }
}

// --- report -----------------------------------------------------------------

/// A prunable layer as it looked before pruning started.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub name: String,
    pub initial_width: usize,
}

/// One pruning round. Per-layer vectors align with `PruneReport::layers`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    /// 1-based round number.
    pub round: usize,
    pub metric: Metric,
    pub total_before: usize,
    pub total_after: usize,
    pub removed_per_layer: Vec<usize>,
    pub widths_after: Vec<usize>,
    /// Validation accuracy right after removal, before fine-tuning.
    pub acc_before_finetune: f64,
    /// Validation accuracy after the round's fine-tuning.
    pub acc_after_finetune: f64,
    /// 0 when nothing was removed and fine-tuning was skipped.
    pub finetune_epochs: usize,
}

/// Full record of a pruning run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneReport {
    pub scheme: Scheme,
    pub metric: Metric,
    pub layers: Vec<LayerSummary>,
    pub initial_total: usize,
    pub initial_accuracy: f64,
    pub rounds: Vec<RoundRecord>,
    /// `None` only in a report flushed on an abnormal (error) exit.
    pub stop_reason: Option<StopReason>,
}

impl PruneReport {
    fn new(scheme: Scheme, metric: Metric, model: &Model, initial_accuracy: f64) -> PruneReport {
        let names = model.layer_display_names();
        PruneReport {
            scheme,
            metric,
            layers: model
                .prunable_widths()
                .into_iter()
                .map(|(layer, width)| LayerSummary {
                    layer,
                    name: names[layer].clone(),
                    initial_width: width,
                })
                .collect(),
            initial_total: model.total_prunable(),
            initial_accuracy,
            rounds: Vec::new(),
            stop_reason: None,
        }
    }

    fn push_round(
        &mut self,
        metric: Metric,
        total_before: usize,
        model_after: &Model,
        victims: &BTreeSet<NeuronId>,
        acc_before_finetune: f64,
        acc_after_finetune: f64,
        finetune_epochs: usize,
    ) {
        let widths: BTreeMap<usize, usize> = model_after.prunable_widths().into_iter().collect();
        self.rounds.push(RoundRecord {
            round: self.rounds.len() + 1,
            metric,
            total_before,
            total_after: model_after.total_prunable(),
            removed_per_layer: self
                .layers
                .iter()
                .map(|l| victims.iter().filter(|id| id.layer == l.layer).count())
                .collect(),
            widths_after: self.layers.iter().map(|l| widths[&l.layer]).collect(),
            acc_before_finetune,
            acc_after_finetune,
            finetune_epochs,
        });
    }

    /// Prunable neurons left after the last recorded round.
    pub fn final_total(&self) -> usize {
        self.rounds
            .last()
            .map_or(self.initial_total, |r| r.total_after)
    }

    /// Validation accuracy after the last recorded round.
    pub fn final_accuracy(&self) -> f64 {
        self.rounds
            .last()
            .map_or(self.initial_accuracy, |r| r.acc_after_finetune)
    }

    /// One CSV row per round:
    /// `round,scheme,metric,total_before,total_after,acc_before_ft,acc_after_ft,stop_reason`
    /// with the final stop reason repeated on every row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let stop = self
            .stop_reason
            .map_or_else(|| "aborted".to_string(), |s| s.to_string());
        let mut out = String::from(
            "round,scheme,metric,total_before,total_after,acc_before_ft,acc_after_ft,stop_reason\n",
        );
        for r in &self.rounds {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.round,
                self.scheme,
                r.metric,
                r.total_before,
                r.total_after,
                r.acc_before_finetune,
                r.acc_after_finetune,
                stop
            ));
        }
        write_atomic(path, out.as_bytes())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }
}

// --- schedules --------------------------------------------------------------

/// Pure arithmetic of the global schedule: starting from `total` neurons,
/// each round removes `max(1, floor(current * ratio))`. Returns one
/// `(removed, remaining)` pair per round (fewer if the pool empties).
pub fn global_removal_schedule(total: usize, ratio: f64, rounds: usize) -> Vec<(usize, usize)> {
    let mut current = total;
    let mut out = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        if current == 0 {
            break;
        }
        let removed = (((current as f64) * ratio).floor() as usize)
            .max(1)
            .min(current);
        current -= removed;
        out.push((removed, current));
    }
    out
}

/// Width of one layer under the per-layer proportional rule: each round
/// removes `floor(width * ratio)`, clamped so the width never drops below
/// `floor`. Returns the width after each round.
pub fn layerwise_width_schedule(width: usize, ratio: f64, rounds: usize, floor: usize) -> Vec<usize> {
    let mut w = width;
    let mut out = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let removed = (((w as f64) * ratio).floor() as usize).min(w.saturating_sub(floor));
        w -= removed;
        out.push(w);
    }
    out
}

// --- selection --------------------------------------------------------------

fn ranked(entries: &[ScoreEntry]) -> Vec<&ScoreEntry> {
    let mut order: Vec<&ScoreEntry> = entries.iter().collect();
    // Ascending modified score; ties fall back to (layer, index) so the
    // outcome never depends on sort internals.
    order.sort_by(|a, b| a.modified.total_cmp(&b.modified).then(a.id.cmp(&b.id)));
    order
}

/// Picks the `k` globally lowest-scored neurons (by modified score),
/// skipping any layer that is already down to `floor`. Greedy in score
/// order, which is optimal under per-layer capacity constraints.
pub fn select_global(
    table: &ScoreTable,
    k: usize,
    widths: &[(usize, usize)],
    floor: usize,
) -> Result<BTreeSet<NeuronId>> {
    let mut remaining: BTreeMap<usize, usize> = widths.iter().copied().collect();
    let capacity: usize = widths
        .iter()
        .map(|&(_, w)| w.saturating_sub(floor))
        .sum();
    if k > capacity {
        return Err(Error::InfeasibleSelection {
            requested: k,
            available: capacity,
        });
    }
    let mut picked = BTreeSet::new();
    for e in ranked(table.entries()) {
        if picked.len() == k {
            break;
        }
        let Some(left) = remaining.get_mut(&e.id.layer) else {
            return Err(Error::InvalidNeuron {
                layer: e.id.layer,
                index: e.id.index,
                reason: "scored layer missing from the width list",
            });
        };
        if *left > floor {
            *left -= 1;
            picked.insert(e.id);
        }
    }
    if picked.len() < k {
        return Err(Error::InfeasibleSelection {
            requested: k,
            available: picked.len(),
        });
    }
    Ok(picked)
}

/// Per-layer proportional pick: from each layer, the `floor(width * ratio)`
/// lowest-scored neurons, clamped to the layer floor. Never fails — layers
/// with nothing removable contribute nothing.
pub fn select_layerwise_proportional(
    table: &ScoreTable,
    ratio: f64,
    widths: &[(usize, usize)],
    floor: usize,
) -> BTreeSet<NeuronId> {
    let mut picked = BTreeSet::new();
    for &(layer, width) in widths {
        let want = ((width as f64) * ratio).floor() as usize;
        let count = want.min(width.saturating_sub(floor));
        picked.extend(lowest_in_layer(table, layer, count));
    }
    picked
}

/// The `count` lowest-scored neurons of one layer.
fn lowest_in_layer(table: &ScoreTable, layer: usize, count: usize) -> Vec<NeuronId> {
    let entries: Vec<ScoreEntry> = table.entries_for(layer).cloned().collect();
    ranked(&entries).into_iter().take(count).map(|e| e.id).collect()
}

// --- surgery ----------------------------------------------------------------

/// Victim indices per layer, validated against the model.
fn group_victims(
    model: &Model,
    victims: &BTreeSet<NeuronId>,
) -> Result<BTreeMap<usize, Vec<usize>>> {
    let mut grouped: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for id in victims {
        if !model.prunable().contains(&id.layer) {
            return Err(Error::InvalidNeuron {
                layer: id.layer,
                index: id.index,
                reason: "layer is not prunable",
            });
        }
        let width = self_width(model, id.layer);
        if id.index >= width {
            return Err(Error::InvalidNeuron {
                layer: id.layer,
                index: id.index,
                reason: "index exceeds the layer width",
            });
        }
        grouped.entry(id.layer).or_default().push(id.index);
    }
    Ok(grouped)
}

fn self_width(model: &Model, layer: usize) -> usize {
    model.layers()[layer]
        .width()
        .expect("prunable layers are parameterized")
}

fn next_parameterized(model: &Model, layer: usize) -> Option<usize> {
    model.layers()[layer + 1..]
        .iter()
        .position(Layer::is_parameterized)
        .map(|off| layer + 1 + off)
}

/// Spatial area (h*w) of the activation entering the Flatten layer between
/// a conv layer and the dense layer it feeds. This is the number of
/// consecutive dense input rows owned by each conv channel.
fn flatten_block(model: &Model, conv_layer: usize, dense_layer: usize) -> Result<usize> {
    let shapes = model.layer_shapes()?;
    for i in conv_layer + 1..dense_layer {
        if model.layers()[i].kind() == LayerKind::Flatten {
            let crate::network::Shape::Chw(_, h, w) = shapes[i - 1] else {
                return Err(Error::Unsupported(
                    "flatten fed by a non-spatial activation".into(),
                ));
            };
            return Ok(h * w);
        }
    }
    Err(Error::Unsupported(
        "conv layer feeds a dense layer with no flatten in between".into(),
    ))
}

/// Rebuilds the model with the victim neurons removed outright: their
/// output slices go away, and the consuming layer's matching input slices
/// go with them. Layer count, prunable indices and input shape stay as
/// they are; only widths shrink.
pub fn drop_neurons(model: &Model, victims: &BTreeSet<NeuronId>) -> Result<Model> {
    let grouped = group_victims(model, victims)?;
    let mut keep_out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (&layer, removed) in &grouped {
        let width = self_width(model, layer);
        if removed.len() >= width {
            return Err(Error::FloorViolation {
                layer,
                width,
                floor: 1,
                removing: removed.len(),
            });
        }
        let keep: Vec<usize> = (0..width).filter(|i| !removed.contains(i)).collect();
        keep_out.insert(layer, keep);
    }

    let mut new_layers = Vec::with_capacity(model.layers().len());
    for (i, layer) in model.layers().iter().enumerate() {
        let mut layer = layer.clone();
        if let Some(keep) = keep_out.get(&i) {
            layer = match layer {
                Layer::Conv2d {
                    filters,
                    bias,
                    stride,
                    padding,
                } => Layer::Conv2d {
                    filters: filters.take(0, keep)?,
                    bias: bias.take(0, keep)?,
                    stride,
                    padding,
                },
                Layer::Dense { weights, bias } => Layer::Dense {
                    weights: weights.take(1, keep)?,
                    bias: bias.take(0, keep)?,
                },
                _ => unreachable!("victims only target parameterized layers"),
            };
        }
        // If the feeding layer shrank, drop the matching input slices here.
        if layer.is_parameterized() {
            if let Some((prev, keep)) = model.layers()[..i]
                .iter()
                .rposition(Layer::is_parameterized)
                .and_then(|p| keep_out.get(&p).map(|k| (p, k)))
            {
                layer = match (model.layers()[prev].kind(), layer) {
                    (
                        LayerKind::Conv2d,
                        Layer::Conv2d {
                            filters,
                            bias,
                            stride,
                            padding,
                        },
                    ) => Layer::Conv2d {
                        filters: filters.take(1, keep)?,
                        bias,
                        stride,
                        padding,
                    },
                    (LayerKind::Conv2d, Layer::Dense { weights, bias }) => {
                        let block = flatten_block(model, prev, i)?;
                        let rows: Vec<usize> = keep
                            .iter()
                            .flat_map(|&ch| ch * block..(ch + 1) * block)
                            .collect();
                        Layer::Dense {
                            weights: weights.take(0, &rows)?,
                            bias,
                        }
                    }
                    (LayerKind::Dense, Layer::Dense { weights, bias }) => Layer::Dense {
                        weights: weights.take(0, keep)?,
                        bias,
                    },
                    (LayerKind::Dense, Layer::Conv2d { .. }) => {
                        return Err(Error::Unsupported(
                            "pruning a dense layer that feeds a conv layer".into(),
                        ))
                    }
                    _ => unreachable!("previous layer is parameterized"),
                };
            }
        }
        new_layers.push(layer);
    }
    Model::new(new_layers, model.prunable().to_vec(), model.input_shape())
}

/// Like [`drop_neurons`] but keeps all shapes: the victims' parameters and
/// the consuming layer's matching input weights are zeroed instead. The
/// masked model computes the same logits as the dropped one — the oracle
/// used to validate the surgery.
pub fn mask_neurons(model: &Model, victims: &BTreeSet<NeuronId>) -> Result<Model> {
    let grouped = group_victims(model, victims)?;
    let mut masked = model.clone();
    for (&layer_idx, removed) in &grouped {
        match &mut masked.layers_mut()[layer_idx] {
            Layer::Conv2d { filters, bias, .. } => {
                for &i in removed {
                    filters.fill_axis(0, i, 0.0);
                    bias.fill_axis(0, i, 0.0);
                }
            }
            Layer::Dense { weights, bias } => {
                for &i in removed {
                    weights.fill_axis(1, i, 0.0);
                    bias.fill_axis(0, i, 0.0);
                }
            }
            _ => unreachable!("victims only target parameterized layers"),
        }
        let Some(next) = next_parameterized(model, layer_idx) else {
            continue;
        };
        let feeder = model.layers()[layer_idx].kind();
        match (feeder, &mut masked.layers_mut()[next]) {
            (LayerKind::Conv2d, Layer::Conv2d { filters, .. }) => {
                for &i in removed {
                    filters.fill_axis(1, i, 0.0);
                }
            }
            (LayerKind::Conv2d, Layer::Dense { weights, .. }) => {
                let block = flatten_block(model, layer_idx, next)?;
                for &i in removed {
                    for row in i * block..(i + 1) * block {
                        weights.fill_axis(0, row, 0.0);
                    }
                }
            }
            (LayerKind::Dense, Layer::Dense { weights, .. }) => {
                for &i in removed {
                    weights.fill_axis(0, i, 0.0);
                }
            }
            (LayerKind::Dense, Layer::Conv2d { .. }) => {
                return Err(Error::Unsupported(
                    "pruning a dense layer that feeds a conv layer".into(),
                ))
            }
            _ => unreachable!("next layer is parameterized"),
        }
    }
    Ok(masked)
}

// --- prune loops ------------------------------------------------------------

/// Gradually-global pruning: repeat (score globally, remove the lowest
/// `ratio` of the current total, fine-tune) while validation accuracy
/// holds at or above `target_accuracy` and rounds remain.
pub fn prune_gradually_global(
    model: Model,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &PruneConfig,
) -> Result<(Model, PruneReport)> {
    run_gradual(model, train_set, val_set, config, Scheme::Global)
}

/// Same loop, but each round removes `floor(width * ratio)` from every
/// layer separately instead of using one global ranking.
pub fn prune_layerwise_gradual(
    model: Model,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &PruneConfig,
) -> Result<(Model, PruneReport)> {
    run_gradual(model, train_set, val_set, config, Scheme::Layerwise)
}

fn run_gradual(
    model: Model,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &PruneConfig,
    scheme: Scheme,
) -> Result<(Model, PruneReport)> {
    config.validate()?;
    let mut model = model;
    let mut accuracy = evaluate(&model, val_set)?;
    let mut report = PruneReport::new(scheme, config.metric, &model, accuracy);
    let outcome = gradual_rounds(
        &mut model,
        &mut accuracy,
        &mut report,
        train_set,
        val_set,
        config,
        scheme,
    );
    // Flush the report even on an abnormal exit, then assign blame.
    report.stop_reason = outcome.as_ref().ok().copied();
    flush_report(&report, config);
    outcome?;
    Ok((model, report))
}

fn flush_report(report: &PruneReport, config: &PruneConfig) {
    if let Some(dir) = &config.artifacts_dir {
        let _ = report.write_csv(&dir.join("report.csv"));
        let _ = report.write_json(&dir.join("report.json"));
    }
}

fn gradual_rounds(
    model: &mut Model,
    accuracy: &mut f64,
    report: &mut PruneReport,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &PruneConfig,
    scheme: Scheme,
) -> Result<StopReason> {
    loop {
        if *accuracy < config.target_accuracy {
            return Ok(StopReason::TargetBreached);
        }
        if report.rounds.len() >= config.max_rounds {
            return Ok(StopReason::MaxRounds);
        }
        let round = report.rounds.len() + 1;
        let stats = train_set.prefix(config.stats_samples)?;
        let table = score_model(model, config.metric, &stats)?;
        let widths = model.prunable_widths();
        let floor = config.min_neurons_per_layer;
        let victims = match scheme {
            Scheme::Global => {
                let total = model.total_prunable();
                let want = (((total as f64) * config.ratio).floor() as usize).max(1);
                let capacity: usize = widths
                    .iter()
                    .map(|&(_, w)| w.saturating_sub(floor))
                    .sum();
                if capacity == 0 {
                    return Ok(StopReason::LayerFloor);
                }
                select_global(&table, want.min(capacity), &widths, floor)?
            }
            Scheme::Layerwise => {
                let picked = select_layerwise_proportional(&table, config.ratio, &widths, floor);
                if picked.is_empty() {
                    return Ok(StopReason::LayerFloor);
                }
                picked
            }
            Scheme::Sequential => unreachable!("sequential runs its own loop"),
        };

        let total_before = model.total_prunable();
        let thinned = drop_neurons(model, &victims)?;
        let acc_before = evaluate(&thinned, val_set)?;
        let mut finetune = config.finetune.clone();
        finetune.seed = seeds::subseed(config.seed, round as u64);
        let (tuned, _) = train(thinned, train_set, &finetune)?;
        *model = tuned;
        *accuracy = evaluate(model, val_set)?;
        report.push_round(
            config.metric,
            total_before,
            model,
            &victims,
            acc_before,
            *accuracy,
            finetune.epochs,
        );
        write_round_artifacts(model, &table, round, config)?;
        flush_report(report, config);
    }
}

fn write_round_artifacts(
    model: &Model,
    table: &ScoreTable,
    round: usize,
    config: &PruneConfig,
) -> Result<()> {
    if let Some(dir) = &config.artifacts_dir {
        save_model(model, &dir.join(format!("round_{round}.model")))?;
        dump_scores(table, &dir.join(format!("scores_round_{round}.csv")))?;
    }
    Ok(())
}

/// Sequential baseline: visits each prunable layer once, in order, removes
/// `floor(width * per_layer_ratio)` of its lowest-scored neurons, and
/// fine-tunes. The accuracy target plays no part; the loop always runs one
/// round per layer (bounded by `max_rounds`). Rounds that remove nothing
/// are still logged, with fine-tuning skipped so the model is untouched.
pub fn prune_layer_sequential(
    model: Model,
    train_set: &Dataset,
    val_set: &Dataset,
    per_layer_ratio: f64,
    config: &PruneConfig,
) -> Result<(Model, PruneReport)> {
    config.validate()?;
    if !(per_layer_ratio > 0.0 && per_layer_ratio < 1.0) {
        return Err(Error::Config(format!(
            "per-layer ratio must lie in (0, 1), got {per_layer_ratio}"
        )));
    }
    let mut model = model;
    let mut accuracy = evaluate(&model, val_set)?;
    let mut report = PruneReport::new(Scheme::Sequential, config.metric, &model, accuracy);
    let outcome = sequential_rounds(
        &mut model,
        &mut accuracy,
        &mut report,
        train_set,
        val_set,
        per_layer_ratio,
        config,
    );
    report.stop_reason = outcome.as_ref().ok().copied();
    flush_report(&report, config);
    outcome?;
    Ok((model, report))
}

fn sequential_rounds(
    model: &mut Model,
    accuracy: &mut f64,
    report: &mut PruneReport,
    train_set: &Dataset,
    val_set: &Dataset,
    per_layer_ratio: f64,
    config: &PruneConfig,
) -> Result<StopReason> {
    let layer_order: Vec<usize> = model.prunable().to_vec();
    for &layer in &layer_order {
        if report.rounds.len() >= config.max_rounds {
            return Ok(StopReason::MaxRounds);
        }
        let round = report.rounds.len() + 1;
        let stats = train_set.prefix(config.stats_samples)?;
        let table = score_model(model, config.metric, &stats)?;
        let width = self_width(model, layer);
        let want = ((width as f64) * per_layer_ratio).floor() as usize;
        let count = want.min(width.saturating_sub(config.min_neurons_per_layer));
        let victims: BTreeSet<NeuronId> = lowest_in_layer(&table, layer, count).into_iter().collect();

        let total_before = model.total_prunable();
        let (acc_before, finetune_epochs) = if victims.is_empty() {
            (*accuracy, 0)
        } else {
            let thinned = drop_neurons(model, &victims)?;
            let acc_before = evaluate(&thinned, val_set)?;
            let mut finetune = config.finetune.clone();
            finetune.seed = seeds::subseed(config.seed, round as u64);
            let (tuned, _) = train(thinned, train_set, &finetune)?;
            *model = tuned;
            *accuracy = evaluate(model, val_set)?;
            (acc_before, finetune.epochs)
        };
        report.push_round(
            config.metric,
            total_before,
            model,
            &victims,
            acc_before,
            *accuracy,
            finetune_epochs,
        );
        write_round_artifacts(model, &table, round, config)?;
        flush_report(report, config);
    }
    Ok(StopReason::MaxRounds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::network::{init_model, LayerSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn conv_net(seed: u64) -> Model {
        init_model(
            &[
                LayerSpec::Conv2d {
                    out_channels: 4,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool2d { size: 2 },
                LayerSpec::Conv2d {
                    out_channels: 5,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 6 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 3 },
                LayerSpec::SoftmaxOutput,
            ],
            [1, 8, 8],
            seed,
        )
        .unwrap()
    }

    fn blob_data(n: usize, seed: u64) -> Dataset {
        generate_synthetic(
            &SyntheticSpec {
                task: "blobs".into(),
                classes: 3,
                shape: [1, 8, 8],
                noise: 0.08,
            },
            n,
            seed,
        )
        .unwrap()
    }

    fn ids(pairs: &[(usize, usize)]) -> BTreeSet<NeuronId> {
        pairs
            .iter()
            .map(|&(layer, index)| NeuronId { layer, index })
            .collect()
    }

    fn table_from(groups: &[(usize, &[f64])]) -> ScoreTable {
        ScoreTable::from_raw(
            Metric::Aaws,
            groups
                .iter()
                .map(|&(layer, raw)| (layer, format!("layer{layer}"), raw.to_vec()))
                .collect(),
        )
    }

    // --- selection -----------------------------------------------------

    #[test]
    fn global_selection_takes_the_lowest_across_layers() {
        // Means are 0.5 in both layers, so modified keeps the raw order.
        let table = table_from(&[(0, &[0.1, 0.9]), (3, &[0.2, 0.8])]);
        let picked = select_global(&table, 2, &[(0, 2), (3, 2)], 1).unwrap();
        assert_eq!(picked, ids(&[(0, 0), (3, 0)]));
    }

    #[test]
    fn global_selection_respects_the_layer_floor() {
        // Both lowest scores sit in layer 0, but its floor bites after one.
        let table = table_from(&[(0, &[0.1, 0.2, 5.0]), (3, &[1.0, 1.0, 1.0, 1.0])]);
        let picked = select_global(&table, 3, &[(0, 3), (3, 4)], 2).unwrap();
        assert_eq!(picked.iter().filter(|id| id.layer == 0).count(), 1);
        assert_eq!(picked.iter().filter(|id| id.layer == 3).count(), 2);
        assert!(picked.contains(&NeuronId { layer: 0, index: 0 }));
    }

    #[test]
    fn infeasible_request_is_an_error() {
        let table = table_from(&[(0, &[0.1, 0.2]), (3, &[0.3, 0.4])]);
        match select_global(&table, 3, &[(0, 2), (3, 2)], 1) {
            Err(Error::InfeasibleSelection {
                requested: 3,
                available: 2,
            }) => {}
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn ties_break_by_layer_then_index() {
        let table = table_from(&[(0, &[1.0, 1.0]), (3, &[1.0, 1.0])]);
        let picked = select_global(&table, 2, &[(0, 5), (3, 5)], 1).unwrap();
        assert_eq!(picked, ids(&[(0, 0), (0, 1)]));
    }

    #[test]
    fn greedy_selection_matches_brute_force_on_small_tables() {
        let mut rng = ChaCha20Rng::seed_from_u64(2024);
        for _ in 0..20 {
            let w0 = rng.random_range(1usize..5);
            let w1 = rng.random_range(1usize..5);
            let raw0: Vec<f64> = (0..w0).map(|_| rng.random_range(0.01..1.0)).collect();
            let raw1: Vec<f64> = (0..w1).map(|_| rng.random_range(0.01..1.0)).collect();
            let table = table_from(&[(0, &raw0), (2, &raw1)]);
            let widths = [(0, w0), (2, w1)];
            let floor = 1;
            let capacity = w0.saturating_sub(floor) + w1.saturating_sub(floor);
            for k in 1..=capacity {
                let picked = select_global(&table, k, &widths, floor).unwrap();
                let picked_sum: f64 = table
                    .entries()
                    .iter()
                    .filter(|e| picked.contains(&e.id))
                    .map(|e| e.modified)
                    .sum();
                // Brute force over all k-subsets honouring the floor.
                let n = table.len();
                let mut best = f64::INFINITY;
                for mask in 0u32..(1 << n) {
                    if mask.count_ones() as usize != k {
                        continue;
                    }
                    let chosen: Vec<&ScoreEntry> = table
                        .entries()
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask & (1 << i) != 0)
                        .map(|(_, e)| e)
                        .collect();
                    let c0 = chosen.iter().filter(|e| e.id.layer == 0).count();
                    let c1 = chosen.iter().filter(|e| e.id.layer == 2).count();
                    if w0 - c0 < floor || w1 - c1 < floor {
                        continue;
                    }
                    let sum: f64 = chosen.iter().map(|e| e.modified).sum();
                    best = best.min(sum);
                }
                assert!(
                    (picked_sum - best).abs() < 1e-9,
                    "k={k}: greedy {picked_sum} vs brute {best}"
                );
            }
        }
    }

    #[test]
    fn layerwise_proportional_counts_per_layer() {
        let raw0: Vec<f64> = (0..10).map(|i| i as f64 + 1.0).collect();
        let raw1: Vec<f64> = (0..5).map(|i| 10.0 - i as f64).collect();
        let table = table_from(&[(0, &raw0), (2, &raw1)]);
        let picked = select_layerwise_proportional(&table, 0.3, &[(0, 10), (2, 5)], 1);
        // floor(10*0.3) = 3 from layer 0, floor(5*0.3) = 1 from layer 2.
        assert_eq!(picked.iter().filter(|id| id.layer == 0).count(), 3);
        assert_eq!(picked.iter().filter(|id| id.layer == 2).count(), 1);
        // Lowest raw in layer 2 is the last index (descending scores).
        assert!(picked.contains(&NeuronId { layer: 2, index: 4 }));
    }

    #[test]
    fn layerwise_proportional_clamps_at_the_floor() {
        let table = table_from(&[(0, &[1.0, 2.0])]);
        // floor(2*0.9) = 1 wanted, but width 2 with floor 2 allows none.
        let picked = select_layerwise_proportional(&table, 0.9, &[(0, 2)], 2);
        assert!(picked.is_empty());
    }

    // --- schedules -----------------------------------------------------

    #[test]
    fn global_schedule_hand_case() {
        let sched = global_removal_schedule(100, 0.05, 3);
        assert_eq!(sched, vec![(5, 95), (4, 91), (4, 87)]);
        // Small pools still shed one neuron per round.
        let tiny = global_removal_schedule(10, 0.01, 2);
        assert_eq!(tiny, vec![(1, 9), (1, 8)]);
    }

    #[test]
    fn layerwise_schedule_hand_case() {
        assert_eq!(
            layerwise_width_schedule(64, 0.05, 3, 1),
            vec![61, 58, 56] // removes 3, 3, 2
        );
        // Floor clamps the very last removals.
        assert_eq!(layerwise_width_schedule(3, 0.5, 3, 2), vec![2, 2, 2]);
    }

    // --- surgery -------------------------------------------------------

    #[test]
    fn drop_shrinks_widths_and_keeps_structure() {
        let model = conv_net(7);
        let victims = ids(&[(0, 1), (0, 3), (3, 0), (6, 5)]);
        let thinned = drop_neurons(&model, &victims).unwrap();
        let widths: Vec<usize> = thinned.prunable_widths().iter().map(|&(_, w)| w).collect();
        assert_eq!(widths, vec![2, 4, 5]);
        assert_eq!(thinned.prunable(), model.prunable());
        assert_eq!(thinned.input_shape(), model.input_shape());
        assert_eq!(thinned.layers().len(), model.layers().len());
        // The final dense layer keeps its 3 outputs.
        assert_eq!(thinned.layers()[8].width(), Some(3));
    }

    #[test]
    fn drop_conv_keeps_surviving_filters_untouched() {
        let model = conv_net(3);
        let Layer::Conv2d { filters: before, .. } = &model.layers()[0] else { panic!() };
        let keep2 = before.take(0, &[0, 2, 3]).unwrap();
        let thinned = drop_neurons(&model, &ids(&[(0, 1)])).unwrap();
        let Layer::Conv2d { filters: after, .. } = &thinned.layers()[0] else { panic!() };
        assert_eq!(after, &keep2);
        // Next conv lost input channel 1.
        let Layer::Conv2d { filters: next, .. } = &thinned.layers()[3] else { panic!() };
        assert_eq!(next.shape(), &[5, 3, 3, 3]);
    }

    #[test]
    fn dropped_and_masked_models_agree_on_logits() {
        let model = conv_net(11);
        let data = blob_data(16, 4);
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..10 {
            // Random victim set touching all three prunable layers.
            let mut victims = BTreeSet::new();
            for &(layer, width) in &model.prunable_widths() {
                let count = rng.random_range(0..width); // leaves >= 1
                while victims.iter().filter(|id: &&NeuronId| id.layer == layer).count() < count {
                    victims.insert(NeuronId {
                        layer,
                        index: rng.random_range(0..width),
                    });
                }
            }
            if victims.is_empty() {
                continue;
            }
            let dropped = drop_neurons(&model, &victims).unwrap();
            let masked = mask_neurons(&model, &victims).unwrap();
            let (images, _) = data.batch(&(0..16).collect::<Vec<_>>()).unwrap();
            let a = dropped.forward(&images).unwrap();
            let b = masked.forward(&images).unwrap();
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn mask_preserves_all_shapes() {
        let model = conv_net(2);
        let masked = mask_neurons(&model, &ids(&[(0, 0), (6, 1)])).unwrap();
        for (a, b) in model.layers().iter().zip(masked.layers()) {
            assert_eq!(a.param_count(), b.param_count());
        }
        // Victim channel forward output is exactly zero everywhere.
        let Layer::Conv2d { filters, bias, .. } = &masked.layers()[0] else { panic!() };
        assert!(filters.data()[..filters.len() / 4].iter().all(|&v| v == 0.0));
        assert_eq!(bias.data()[0], 0.0);
    }

    #[test]
    fn invalid_victims_are_rejected() {
        let model = conv_net(1);
        // Layer 8 is the final dense layer — not prunable.
        assert!(matches!(
            drop_neurons(&model, &ids(&[(8, 0)])),
            Err(Error::InvalidNeuron { .. })
        ));
        // Index past the width.
        assert!(matches!(
            drop_neurons(&model, &ids(&[(0, 4)])),
            Err(Error::InvalidNeuron { .. })
        ));
        // Removing a whole layer.
        assert!(matches!(
            drop_neurons(&model, &ids(&[(0, 0), (0, 1), (0, 2), (0, 3)])),
            Err(Error::FloorViolation { .. })
        ));
    }

    #[test]
    fn dropping_nothing_is_identity() {
        let model = conv_net(9);
        let thinned = drop_neurons(&model, &BTreeSet::new()).unwrap();
        assert_eq!(thinned, model);
    }

    // --- loops ---------------------------------------------------------

    fn fast_config() -> PruneConfig {
        PruneConfig {
            ratio: 0.2,
            target_accuracy: 0.0,
            metric: Metric::Aaws,
            max_rounds: 3,
            min_neurons_per_layer: 1,
            finetune: TrainConfig {
                learning_rate: 0.05,
                momentum: 0.9,
                batch_size: 16,
                epochs: 1,
                seed: 0,
            },
            stats_samples: 64,
            seed: 42,
            artifacts_dir: None,
        }
    }

    #[test]
    fn gradual_global_runs_to_the_round_budget() {
        let model = conv_net(20);
        let train_set = blob_data(96, 1);
        let val_set = blob_data(32, 2);
        let (thinned, report) =
            prune_gradually_global(model, &train_set, &val_set, &fast_config()).unwrap();
        assert_eq!(report.stop_reason, Some(StopReason::MaxRounds));
        assert_eq!(report.rounds.len(), 3);
        // 15 neurons, ratio 0.2: rounds remove 3, 2, 2.
        let removed: Vec<usize> = report
            .rounds
            .iter()
            .map(|r| r.total_before - r.total_after)
            .collect();
        assert_eq!(removed, vec![3, 2, 2]);
        assert_eq!(report.final_total(), 8);
        assert_eq!(thinned.total_prunable(), 8);
        // Per-round bookkeeping adds up.
        for r in &report.rounds {
            assert_eq!(r.removed_per_layer.iter().sum::<usize>(), r.total_before - r.total_after);
            assert_eq!(r.widths_after.iter().sum::<usize>(), r.total_after);
        }
    }

    #[test]
    fn pruning_is_deterministic() {
        let train_set = blob_data(96, 1);
        let val_set = blob_data(32, 2);
        let (a, ra) =
            prune_gradually_global(conv_net(20), &train_set, &val_set, &fast_config()).unwrap();
        let (b, rb) =
            prune_gradually_global(conv_net(20), &train_set, &val_set, &fast_config()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn already_breached_target_stops_before_any_round() {
        let model = conv_net(20);
        let train_set = blob_data(48, 1);
        let val_set = blob_data(32, 2);
        let mut config = fast_config();
        config.target_accuracy = 1.0; // an untrained model cannot meet this
        let (out, report) =
            prune_gradually_global(model.clone(), &train_set, &val_set, &config).unwrap();
        assert_eq!(report.stop_reason, Some(StopReason::TargetBreached));
        assert!(report.rounds.is_empty());
        assert_eq!(out, model);
    }

    #[test]
    fn layer_floor_stops_the_loop_when_nothing_is_removable() {
        // Tiny layers: floors bite after a few rounds.
        let model = init_model(
            &[
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 2 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 2 },
                LayerSpec::Relu,
                LayerSpec::Dense { units: 2 },
                LayerSpec::SoftmaxOutput,
            ],
            [1, 4, 4],
            8,
        )
        .unwrap();
        let train_set = generate_synthetic(
            &SyntheticSpec {
                task: "blobs".into(),
                classes: 2,
                shape: [1, 4, 4],
                noise: 0.1,
            },
            32,
            3,
        )
        .unwrap();
        let mut config = fast_config();
        config.ratio = 0.5;
        config.max_rounds = 50;
        let (out, report) =
            prune_gradually_global(model, &train_set, &train_set, &config).unwrap();
        assert_eq!(report.stop_reason, Some(StopReason::LayerFloor));
        // Both prunable layers sit at the floor of 1.
        assert_eq!(out.prunable_widths().iter().map(|&(_, w)| w).sum::<usize>(), 2);
        assert!(report.rounds.len() < 50);
    }

    #[test]
    fn layerwise_scheme_follows_the_width_recurrence() {
        let model = conv_net(20);
        let train_set = blob_data(96, 1);
        let val_set = blob_data(32, 2);
        let mut config = fast_config();
        config.ratio = 0.25;
        let (_, report) =
            prune_layerwise_gradual(model, &train_set, &val_set, &config).unwrap();
        // Widths 4, 5, 6 under ratio 0.25 with floor 1.
        for (i, &start) in [4usize, 5, 6].iter().enumerate() {
            let expected = layerwise_width_schedule(start, 0.25, 3, 1);
            let got: Vec<usize> = report.rounds.iter().map(|r| r.widths_after[i]).collect();
            assert_eq!(got, expected, "layer {i}");
        }
    }

    #[test]
    fn sequential_visits_each_layer_once_and_logs_empty_rounds() {
        let model = conv_net(20);
        let train_set = blob_data(96, 1);
        let val_set = blob_data(32, 2);
        let mut config = fast_config();
        config.max_rounds = 10;
        // Ratio small enough that floor(width * ratio) == 0 for widths <= 6.
        let (out, report) =
            prune_layer_sequential(model.clone(), &train_set, &val_set, 0.05, &config).unwrap();
        assert_eq!(report.stop_reason, Some(StopReason::MaxRounds));
        assert_eq!(report.rounds.len(), 3); // one per prunable layer
        assert!(report.rounds.iter().all(|r| r.finetune_epochs == 0));
        assert_eq!(out, model); // nothing removed, nothing tuned
        // A real ratio removes from exactly one layer per round.
        let (_, report) =
            prune_layer_sequential(model, &train_set, &val_set, 0.4, &config).unwrap();
        for (i, r) in report.rounds.iter().enumerate() {
            let touched: Vec<usize> = r
                .removed_per_layer
                .iter()
                .enumerate()
                .filter(|(_, &c)| c > 0)
                .map(|(j, _)| j)
                .collect();
            assert_eq!(touched, vec![i], "round {} touched {touched:?}", r.round);
        }
    }

    #[test]
    fn report_csv_repeats_the_stop_reason_on_every_row() {
        let model = conv_net(20);
        let train_set = blob_data(96, 1);
        let val_set = blob_data(32, 2);
        let dir = tempfile::tempdir().unwrap();
        let mut config = fast_config();
        config.artifacts_dir = Some(dir.path().to_path_buf());
        let (_, report) = prune_gradually_global(model, &train_set, &val_set, &config).unwrap();
        let text = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "round,scheme,metric,total_before,total_after,acc_before_ft,acc_after_ft,stop_reason"
        );
        assert_eq!(lines.len(), 1 + report.rounds.len());
        for line in &lines[1..] {
            assert!(line.ends_with(",max_rounds"), "{line}");
            assert!(line.contains(",global,aaws,"), "{line}");
        }
        // Round artifacts landed too.
        assert!(dir.path().join("round_1.model").exists());
        assert!(dir.path().join("scores_round_1.csv").exists());
        assert!(dir.path().join("report.json").exists());
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let mut c = fast_config();
        c.ratio = 1.0;
        assert!(c.validate().is_err());
        c = fast_config();
        c.target_accuracy = 1.5;
        assert!(c.validate().is_err());
        c = fast_config();
        c.max_rounds = 0;
        assert!(c.validate().is_err());
        c = fast_config();
        c.min_neurons_per_layer = 0;
        assert!(c.validate().is_err());
    }
}
