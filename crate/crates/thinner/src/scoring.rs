//! Per-neuron importance scores on a scale that is comparable across layers.
//!
//! A "neuron" is an output channel of a conv layer or a unit of a dense
//! layer. Three raw metrics are available:
//!
//! * **mean** — mean response: the spatial mean of the neuron's output map
//!   (conv) or its raw pre-activation (dense), averaged over samples. Signed:
//!   strongly negative responses still count as activity.
//! * **std** — the population standard deviation of that response across
//!   samples. A neuron whose response never varies scores exactly zero.
//! * **aaws** — average absolute weight: for conv channels the mean `|w|`
//!   over the channel's own filter parameters (bias excluded); for dense
//!   units the mean `|w|` over the unit's outgoing weights into the next
//!   parameterized layer. Needs no data at all.
//!
//! Raw scores are then divided by their layer's mean, so every layer's
//! modified scores average to 1 and a single global ranking is meaningful.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::{write_atomic, Layer, Model};

/// A neuron, addressed by layer index and output index within the layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeuronId {
    pub layer: usize,
    pub index: usize,
}

/// Which raw importance metric to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Mean response over samples (signed).
    Mean,
    /// Population standard deviation of the response over samples.
    Std,
    /// Average absolute weight; data-independent.
    Aaws,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Mean => "mean",
            Metric::Std => "std",
            Metric::Aaws => "aaws",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Metric::Mean),
            "std" => Ok(Metric::Std),
            "aaws" => Ok(Metric::Aaws),
            other => Err(Error::Config(format!(
                "unknown metric {other:?} (expected mean, std or aaws)"
            ))),
        }
    }
}

// --- response statistics ----------------------------------------------------

/// Streaming per-neuron response statistics (Welford), collected over a
/// fixed sample set in dataset order.
#[derive(Debug, Clone)]
pub struct ResponseStats {
    samples: usize,
    layers: Vec<LayerResponses>,
}

#[derive(Debug, Clone)]
struct LayerResponses {
    layer: usize,
    name: String,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl ResponseStats {
    pub fn samples(&self) -> usize {
        self.samples
    }

    /// Mean response of one neuron (None if the id is unknown).
    pub fn mean_of(&self, id: NeuronId) -> Option<f64> {
        self.layers
            .iter()
            .find(|l| l.layer == id.layer)
            .and_then(|l| l.mean.get(id.index))
            .copied()
    }

    /// Population standard deviation of one neuron's response.
    pub fn std_of(&self, id: NeuronId) -> Option<f64> {
        self.layers
            .iter()
            .find(|l| l.layer == id.layer)
            .and_then(|l| l.m2.get(id.index))
            .map(|m2| (m2 / self.samples as f64).sqrt())
    }
}

/// Runs the samples through the model and accumulates each prunable
/// neuron's response: spatial mean of the output map for conv channels, raw
/// pre-activation for dense units.
pub fn collect_responses(model: &Model, samples: &Dataset) -> Result<ResponseStats> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let names = model.layer_display_names();
    let mut layers: Vec<LayerResponses> = model
        .prunable_widths()
        .into_iter()
        .map(|(layer, width)| LayerResponses {
            layer,
            name: names[layer].clone(),
            mean: vec![0.0; width],
            m2: vec![0.0; width],
        })
        .collect();

    let mut seen = 0usize;
    let all: Vec<usize> = (0..samples.len()).collect();
    for chunk in all.chunks(256) {
        let (images, _) = samples.batch(chunk)?;
        let (_, recorded) = model.forward_recording(&images)?;
        let batch = chunk.len();
        for (slot, (layer, out)) in layers.iter_mut().zip(&recorded) {
            debug_assert_eq!(slot.layer, *layer);
            let width = slot.mean.len();
            for bi in 0..batch {
                let n = (seen + bi + 1) as f64;
                match out.rank() {
                    4 => {
                        let area = out.shape()[2] * out.shape()[3];
                        for ch in 0..width {
                            let plane =
                                &out.data()[(bi * width + ch) * area..(bi * width + ch + 1) * area];
                            let response = plane.iter().sum::<f64>() / area as f64;
                            welford(&mut slot.mean[ch], &mut slot.m2[ch], response, n);
                        }
                    }
                    _ => {
                        let row = &out.data()[bi * width..(bi + 1) * width];
                        for (ch, &response) in row.iter().enumerate() {
                            welford(&mut slot.mean[ch], &mut slot.m2[ch], response, n);
                        }
                    }
                }
            }
        }
        seen += batch;
    }
    Ok(ResponseStats {
        samples: seen,
        layers,
    })
}

fn welford(mean: &mut f64, m2: &mut f64, x: f64, n: f64) {
    let delta = x - *mean;
    *mean += delta / n;
    *m2 += delta * (x - *mean);
}

// --- score tables -----------------------------------------------------------

/// One neuron's raw and layer-normalised score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEntry {
    pub id: NeuronId,
    pub raw: f64,
    /// Raw score divided by the layer's mean raw score.
    pub modified: f64,
}

/// Scores for every prunable neuron, grouped by layer in ascending
/// `(layer, index)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub metric: Metric,
    entries: Vec<ScoreEntry>,
    layer_names: Vec<(usize, String)>,
}

impl ScoreTable {
    /// Builds a table from per-layer raw scores, applying the per-layer
    /// normalisation. `groups` is `(layer index, display name, raw scores)`.
    pub fn from_raw(metric: Metric, groups: Vec<(usize, String, Vec<f64>)>) -> ScoreTable {
        let raw: Vec<Vec<f64>> = groups.iter().map(|(_, _, r)| r.clone()).collect();
        let modified = normalize_per_layer(&raw);
        let mut entries = Vec::new();
        for ((layer, _, raw), modified) in groups.iter().zip(&modified) {
            for (index, (&r, &m)) in raw.iter().zip(modified).enumerate() {
                entries.push(ScoreEntry {
                    id: NeuronId {
                        layer: *layer,
                        index,
                    },
                    raw: r,
                    modified: m,
                });
            }
        }
        ScoreTable {
            metric,
            entries,
            layer_names: groups.into_iter().map(|(l, n, _)| (l, n)).collect(),
        }
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries belonging to one layer.
    pub fn entries_for(&self, layer: usize) -> impl Iterator<Item = &ScoreEntry> {
        self.entries.iter().filter(move |e| e.id.layer == layer)
    }

    /// Layer indices covered by this table, with display names.
    pub fn layers(&self) -> &[(usize, String)] {
        &self.layer_names
    }

    fn name_of(&self, layer: usize) -> &str {
        self.layer_names
            .iter()
            .find(|(l, _)| *l == layer)
            .map(|(_, n)| n.as_str())
            .unwrap_or("?")
    }
}

/// Divides each layer's raw scores by the layer mean. A layer whose mean is
/// smaller than `1e-12` in magnitude would explode under division; its
/// modified scores are all set to 1 instead (every neuron equally
/// unimportant there).
pub fn normalize_per_layer(raw_by_layer: &[Vec<f64>]) -> Vec<Vec<f64>> {
    raw_by_layer
        .iter()
        .map(|raw| {
            let mean = raw.iter().sum::<f64>() / raw.len().max(1) as f64;
            if mean.abs() < 1e-12 {
                vec![1.0; raw.len()]
            } else {
                raw.iter().map(|&r| r / mean).collect()
            }
        })
        .collect()
}

/// Mean-response score table from collected statistics.
pub fn score_mean_response(stats: &ResponseStats) -> ScoreTable {
    ScoreTable::from_raw(
        Metric::Mean,
        stats
            .layers
            .iter()
            .map(|l| (l.layer, l.name.clone(), l.mean.clone()))
            .collect(),
    )
}

/// Response-deviation score table. Needs at least two samples — a standard
/// deviation of one observation says nothing.
pub fn score_std_response(stats: &ResponseStats) -> Result<ScoreTable> {
    if stats.samples < 2 {
        return Err(Error::InsufficientSamples {
            have: stats.samples,
            need: 2,
        });
    }
    let n = stats.samples as f64;
    Ok(ScoreTable::from_raw(
        Metric::Std,
        stats
            .layers
            .iter()
            .map(|l| {
                (
                    l.layer,
                    l.name.clone(),
                    l.m2.iter().map(|&m2| (m2 / n).sqrt()).collect(),
                )
            })
            .collect(),
    ))
}

/// Average-absolute-weight score table straight from the parameters.
///
/// Conv channels average over their own filter slab; dense units average
/// over their outgoing row in the next parameterized layer's weights.
pub fn score_aaws(model: &Model) -> Result<ScoreTable> {
    let names = model.layer_display_names();
    let mut groups = Vec::new();
    for &p in model.prunable() {
        let raw = match &model.layers()[p] {
            Layer::Conv2d { filters, .. } => {
                let co = filters.shape()[0];
                let per = filters.len() / co;
                (0..co)
                    .map(|i| {
                        filters.data()[i * per..(i + 1) * per]
                            .iter()
                            .map(|w| w.abs())
                            .sum::<f64>()
                            / per as f64
                    })
                    .collect::<Vec<f64>>()
            }
            Layer::Dense { weights, .. } => {
                let next = model.layers()[p + 1..]
                    .iter()
                    .find(|l| l.is_parameterized())
                    .expect("prunable layers always have a parameterized successor");
                let Layer::Dense { weights: next_w, .. } = next else {
                    return Err(Error::Unsupported(
                        "average absolute weight over a dense layer feeding a conv layer".into(),
                    ));
                };
                let n_out = next_w.shape()[1];
                (0..weights.shape()[1])
                    .map(|i| {
                        next_w.data()[i * n_out..(i + 1) * n_out]
                            .iter()
                            .map(|w| w.abs())
                            .sum::<f64>()
                            / n_out as f64
                    })
                    .collect::<Vec<f64>>()
            }
            _ => unreachable!("prunable layers are parameterized"),
        };
        groups.push((p, names[p].clone(), raw));
    }
    Ok(ScoreTable::from_raw(Metric::Aaws, groups))
}

/// Metric dispatch: response metrics run the samples through the model,
/// `aaws` ignores them.
pub fn score_model(model: &Model, metric: Metric, samples: &Dataset) -> Result<ScoreTable> {
    match metric {
        Metric::Aaws => score_aaws(model),
        Metric::Mean => Ok(score_mean_response(&collect_responses(model, samples)?)),
        Metric::Std => score_std_response(&collect_responses(model, samples)?),
    }
}

/// Writes the table as CSV: `layer_name,layer_index,neuron_index,raw,modified`.
pub fn dump_scores(table: &ScoreTable, path: &Path) -> Result<()> {
    let mut out = String::from("layer_name,layer_index,neuron_index,raw,modified\n");
    for e in &table.entries {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            table.name_of(e.id.layer),
            e.id.layer,
            e.id.index,
            e.raw,
            e.modified
        ));
    }
    write_atomic(path, out.as_bytes())
}
