//! Dataset ingestion, synthetic data, feature export and run reports.

mod export;
mod report;
mod synth;
mod tudataset;

pub use export::{export_features, ExportSummary};
pub use report::{RunReport, REPORT_HEADER};
pub use synth::synth_scales_dataset;
pub use tudataset::{parse_tudataset, parse_tudataset_with, write_tudataset, LabelKind};

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{lazy_diffusion, structural_features, Graph, GraphSignal};
use crate::heads::Targets;
use crate::scalar::Scalar;
use crate::train::{Sample, TrainingData};

#[derive(Debug, Clone, PartialEq)]
pub enum GraphLabels {
    /// Contiguous class ids with the original label text of each class.
    Classes { values: Vec<usize>, names: Vec<String> },
    Targets(Vec<f64>),
}

impl GraphLabels {
    pub fn len(&self) -> usize {
        match self {
            GraphLabels::Classes { values, .. } => values.len(),
            GraphLabels::Targets(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Label of graph `i` as written in the dataset.
    pub fn display(&self, i: usize) -> String {
        match self {
            GraphLabels::Classes { values, names } => names[values[i]].clone(),
            GraphLabels::Targets(v) => v[i].to_string(),
        }
    }

    pub fn to_targets<T: Scalar>(&self) -> Targets<T> {
        match self {
            GraphLabels::Classes { values, names } => Targets::Classes {
                labels: values.clone(),
                count: names.len(),
            },
            GraphLabels::Targets(v) => Targets::Values(v.iter().map(|&a| T::lit(a)).collect()),
        }
    }
}

/// Discrete per-node labels, remapped to contiguous ids.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLabels {
    pub values: Vec<Vec<usize>>,
    pub names: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DatasetBundle<T = f64> {
    pub name: String,
    pub graphs: Vec<Graph<T>>,
    pub labels: GraphLabels,
    pub node_labels: Option<NodeLabels>,
    /// Real-valued node channels.
    pub node_attributes: Option<Vec<GraphSignal<T>>>,
}

/// Which node channels make up the input signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeFeatureSpec {
    /// Eccentricity and clustering coefficient.
    pub structural: bool,
    /// One-hot node labels.
    pub node_labels: bool,
    pub attributes: bool,
}

impl Default for NodeFeatureSpec {
    fn default() -> Self {
        Self {
            structural: true,
            node_labels: false,
            attributes: false,
        }
    }
}

impl<T: Scalar> DatasetBundle<T> {
    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Node signals of every graph with the name of each channel.
    pub fn node_signals(&self, spec: NodeFeatureSpec) -> Result<(Vec<GraphSignal<T>>, Vec<String>)> {
        let mut names = Vec::new();
        if spec.structural {
            names.extend(["eccentricity".to_string(), "clustering".to_string()]);
        }
        if spec.node_labels {
            let nl = self
                .node_labels
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig(format!("{} has no node labels", self.name)))?;
            names.extend(nl.names.iter().map(|n| format!("label={n}")));
        }
        if spec.attributes {
            let attrs = self
                .node_attributes
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig(format!("{} has no node attributes", self.name)))?;
            let width = attrs.first().map_or(0, GraphSignal::channels);
            names.extend((0..width).map(|k| format!("attr{k}")));
        }
        if names.is_empty() {
            return Err(Error::InvalidConfig("no node channels selected".into()));
        }
        let signals = self
            .graphs
            .iter()
            .enumerate()
            .map(|(gi, g)| {
                let n = g.n();
                let mut parts: Vec<GraphSignal<T>> = Vec::new();
                if spec.structural {
                    parts.push(structural_features(g));
                }
                if let (true, Some(nl)) = (spec.node_labels, &self.node_labels) {
                    let k = nl.names.len();
                    let mut data = vec![T::zero(); n * k];
                    for (v, &l) in nl.values[gi].iter().enumerate() {
                        data[v * k + l] = T::one();
                    }
                    parts.push(GraphSignal::from_node_major(n, k, data)?);
                }
                if let (true, Some(attrs)) = (spec.attributes, &self.node_attributes) {
                    parts.push(attrs[gi].clone());
                }
                let mut out = parts.remove(0);
                for p in &parts {
                    out = out.hstack(p)?;
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((signals, names))
    }

    /// Diffusion operators and node signals ready for training.
    pub fn training_data(&self, spec: NodeFeatureSpec) -> Result<TrainingData<T>> {
        let (signals, _) = self.node_signals(spec)?;
        let samples = self
            .graphs
            .iter()
            .zip(signals)
            .map(|(g, signal)| {
                Ok(Sample {
                    op: Arc::new(lazy_diffusion(g)?),
                    signal,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        TrainingData::new(samples, self.labels.to_targets())
    }
}
