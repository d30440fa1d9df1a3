//! Feature table export.

use std::path::Path;

use super::{DatasetBundle, NodeFeatureSpec};
use crate::error::{Error, Result};
use crate::legs::SelectionParams;
use crate::scalar::Scalar;
use crate::scattering::ScatterConfig;
use crate::train::compute_features;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExportSummary {
    pub rows: usize,
    pub columns: usize,
}

/// Writes one CSV row per graph: id (1-based), label, then every feature.
/// Feature columns are named `<channel>|p=(…)|q=<k>`.
pub fn export_features<T: Scalar>(
    bundle: &DatasetBundle<T>,
    spec: NodeFeatureSpec,
    selection: &SelectionParams<T>,
    scatter: &ScatterConfig,
    out: impl AsRef<Path>,
) -> Result<ExportSummary> {
    let out = out.as_ref();
    let data = bundle.training_data(spec)?;
    let (_, channels) = bundle.node_signals(spec)?;
    let features = compute_features(&data.samples, selection, scatter)?;

    let mut header = vec!["graph_id".to_string(), "label".to_string()];
    header.extend(
        scatter
            .feature_index(channels.len())
            .iter()
            .map(|k| k.label(&channels[k.channel])),
    );
    let mut w = csv::Writer::from_path(out).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(out, io),
        other => Error::Report(format!("{other:?}")),
    })?;
    w.write_record(&header)?;
    for (i, row) in features.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string(), bundle.labels.display(i)];
        rec.extend(row.iter().map(|v| v.to_f64_lossy().to_string()));
        assert_eq!(rec.len(), header.len(), "feature row width differs from the header");
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(ExportSummary {
        rows: features.len(),
        columns: header.len(),
    })
}
