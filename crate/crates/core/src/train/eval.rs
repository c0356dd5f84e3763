use rayon::prelude::*;

use crate::dewarp::{rectify, Predictor};
use crate::error::{Error, Result};
use crate::grid::resize_grid;
use crate::metrics::MetricsReport;
use crate::synth::Dataset;

pub struct EvalSummary {
    /// `(sample name, report)` in index order.
    pub rows: Vec<(String, MetricsReport)>,
    pub mean: Option<MetricsReport>,
    /// Samples whose files could not be read.
    pub skipped: usize,
}

/// Rectifies each listed sample's warped image and scores it against the
/// flat page. With `original_resolution` the grid is upsampled to the flat
/// image's size; otherwise everything is compared at model resolution.
///
/// [`Predictor::identity`] gives the unrectified baseline under the same
/// protocol.
pub fn evaluate(predictor: &Predictor, dataset: &Dataset, indices: &[usize], original_resolution: bool) -> Result<EvalSummary> {
    let results: Vec<Option<(String, MetricsReport)>> = indices
        .par_iter()
        .map(|&k| -> Result<Option<(String, MetricsReport)>> {
            let sample = match dataset.load(k) {
                Ok(s) => s,
                Err(Error::Integrity { .. } | Error::Image(_) | Error::Io(_) | Error::Format { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let out = rectify(predictor, &sample.warped, original_resolution)?;
            let (w, h) = (out.image.width(), out.image.height());
            let flat = sample.flat.resize(w, h);
            let gt = if (sample.gt_grid.width(), sample.gt_grid.height()) == (w, h) {
                sample.gt_grid.clone()
            } else {
                resize_grid(&sample.gt_grid, h, w)?
            };
            let report = MetricsReport::compute(&out.image, &flat, Some((&out.grid, &gt)))?;
            Ok(Some((format!("{k:06}"), report)))
        })
        .collect::<Result<_>>()?;
    let skipped = results.iter().filter(|r| r.is_none()).count();
    let rows: Vec<_> = results.into_iter().flatten().collect();
    let reports: Vec<MetricsReport> = rows.iter().map(|(_, r)| r.clone()).collect();
    Ok(EvalSummary {
        mean: MetricsReport::mean(&reports),
        rows,
        skipped,
    })
}
