use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalogram::ScalogramImage;

/// Stack same-sized images into a `[B, H, W, C]` batch.
pub fn stack_images(images: &[&ScalogramImage]) -> Result<Tensor<f32>> {
    let first = images.first().ok_or_else(|| Error::ShapeMismatch("empty image batch".into()))?;
    let dims = (first.height, first.width, first.channels);
    let mut data = Vec::with_capacity(images.len() * first.pixels.len());
    for im in images {
        if (im.height, im.width, im.channels) != dims {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{}x{} in a batch of {}x{}x{}",
                im.height, im.width, im.channels, dims.0, dims.1, dims.2
            )));
        }
        data.extend_from_slice(&im.pixels);
    }
    Tensor::new(vec![images.len(), dims.0, dims.1, dims.2], data)
}

/// One row per sample: `id,label,e0,e1,...`.
pub fn embeddings_to_csv(ids: &[String], labels: &[String], rows: &[Vec<f64>]) -> Result<String> {
    if ids.len() != rows.len() || labels.len() != rows.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ids, {} labels, {} embeddings",
            ids.len(),
            labels.len(),
            rows.len()
        )));
    }
    let dim = rows.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    let fail = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(&header).map_err(fail)?;
    for ((id, label), row) in ids.iter().zip(labels).zip(rows) {
        if row.len() != dim {
            return Err(Error::ShapeMismatch(format!("embedding of width {} among width {dim}", row.len())));
        }
        let mut rec = vec![id.clone(), label.clone()];
        rec.extend(row.iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
