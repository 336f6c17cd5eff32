//! Cross-sample aggregation of per-layer metrics, and CSV/JSON output.
//!
//! Each sample contributes one value per layer; the series records the
//! per-layer mean and population standard deviation.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention_bias::BiasProfile;
use crate::error::{Error, Result};
use crate::tensor_io::DatasetTag;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerStat {
    pub layer: usize,
    pub mean: f64,
    pub std: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMetricSeries {
    pub metric_name: String,
    pub per_layer: Vec<LayerStat>,
    pub dataset_tag: DatasetTag,
    pub model_tag: String,
    /// Always `"population"`.
    pub std_kind: String,
}

impl LayerMetricSeries {
    pub fn means(&self) -> Vec<f64> {
        self.per_layer.iter().map(|s| s.mean).collect()
    }

    pub fn len(&self) -> usize {
        self.per_layer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_layer.is_empty()
    }

    /// A series from a single run; std is 0 and every count is 1.
    pub fn single(
        metric_name: impl Into<String>,
        values: &[f64],
        dataset_tag: DatasetTag,
        model_tag: impl Into<String>,
    ) -> Self {
        LayerMetricSeries {
            metric_name: metric_name.into(),
            per_layer: values
                .iter()
                .enumerate()
                .map(|(layer, &mean)| LayerStat { layer, mean, std: 0.0, sample_count: 1 })
                .collect(),
            dataset_tag,
            model_tag: model_tag.into(),
            std_kind: "population".into(),
        }
    }
}

/// Per-layer mean and population std over samples.
///
/// Samples are visited in key order, so the result does not depend on how
/// the map was filled.
pub fn aggregate(
    metric_name: impl Into<String>,
    per_sample: &BTreeMap<String, Vec<f64>>,
    dataset_tag: DatasetTag,
    model_tag: impl Into<String>,
) -> Result<LayerMetricSeries> {
    let mut samples = per_sample.iter();
    let (first_id, first) = samples.next().ok_or_else(|| Error::arg("no samples to aggregate"))?;
    let layers = first.len();
    if let Some((id, v)) = per_sample.iter().find(|(_, v)| v.len() != layers) {
        return Err(Error::arg(format!(
            "sample {id:?} has {} layers, sample {first_id:?} has {layers}",
            v.len()
        )));
    }
    let count = per_sample.len();
    let per_layer = (0..layers)
        .map(|layer| {
            let mean = per_sample.values().map(|v| v[layer]).sum::<f64>() / count as f64;
            let var = per_sample
                .values()
                .map(|v| (v[layer] - mean).powi(2))
                .sum::<f64>()
                / count as f64;
            LayerStat { layer, mean, std: var.sqrt(), sample_count: count }
        })
        .collect();
    Ok(LayerMetricSeries {
        metric_name: metric_name.into(),
        per_layer,
        dataset_tag,
        model_tag: model_tag.into(),
        std_kind: "population".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Something [`emit`] can write.
#[derive(Debug, Clone, Copy)]
pub enum Emittable<'a> {
    Series(&'a LayerMetricSeries),
    Profile(&'a BiasProfile),
}

impl<'a> From<&'a LayerMetricSeries> for Emittable<'a> {
    fn from(s: &'a LayerMetricSeries) -> Self {
        Emittable::Series(s)
    }
}

impl<'a> From<&'a BiasProfile> for Emittable<'a> {
    fn from(p: &'a BiasProfile) -> Self {
        Emittable::Profile(p)
    }
}

/// Writes a series (`layer,mean,std,n`) or a profile (`position,mass`).
///
/// CSV floats use Rust's shortest round-trip formatting, so reading them
/// back is lossless.
pub fn emit<'a>(item: impl Into<Emittable<'a>>, format: Format, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io_at(path, e))?;
    match (item.into(), format) {
        (Emittable::Series(s), Format::Csv) => {
            let mut w = csv::Writer::from_writer(file);
            w.write_record(["layer", "mean", "std", "n"])?;
            for st in &s.per_layer {
                w.write_record([
                    st.layer.to_string(),
                    st.mean.to_string(),
                    st.std.to_string(),
                    st.sample_count.to_string(),
                ])?;
            }
            w.flush()?;
        }
        (Emittable::Profile(p), Format::Csv) => {
            let mut w = csv::Writer::from_writer(file);
            w.write_record(["position", "mass"])?;
            for (position, mass) in p.positions.iter().zip(&p.per_position_mass) {
                w.write_record([position.to_string(), mass.to_string()])?;
            }
            w.flush()?;
        }
        (Emittable::Series(s), Format::Json) => write_json(file, s)?,
        (Emittable::Profile(p), Format::Json) => write_json(file, p)?,
    }
    Ok(())
}

fn write_json<T: Serialize>(file: File, value: &T) -> Result<()> {
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn csv_rows(path: &Path, file: File, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_reader(file);
    if r.headers()?.iter().ne(header.iter().copied()) {
        return Err(Error::arg(format!("{}: expected header {}", path.display(), header.join(","))));
    }
    Ok(r.records().collect::<std::result::Result<Vec<_>, _>>()?)
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::arg(format!("{}: bad field {i} in row {:?}", path.display(), rec)))
}

/// Reads a series written by [`emit`].
///
/// A CSV file carries no tags, so they are returned as `Other` and empty;
/// `metric_name` is taken from the file stem.
pub fn read_series(path: impl AsRef<Path>, format: Format) -> Result<LayerMetricSeries> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    match format {
        Format::Json => Ok(serde_json::from_reader(BufReader::new(file))?),
        Format::Csv => {
            let per_layer = csv_rows(path, file, &["layer", "mean", "std", "n"])?
                .iter()
                .map(|rec| {
                    Ok(LayerStat {
                        layer: field(path, rec, 0)?,
                        mean: field(path, rec, 1)?,
                        std: field(path, rec, 2)?,
                        sample_count: field(path, rec, 3)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LayerMetricSeries {
                metric_name: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                per_layer,
                dataset_tag: DatasetTag::Other,
                model_tag: String::new(),
                std_kind: "population".into(),
            })
        }
    }
}

/// Reads a profile written by [`emit`].
pub fn read_profile(path: impl AsRef<Path>, format: Format) -> Result<BiasProfile> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    match format {
        Format::Json => Ok(serde_json::from_reader(BufReader::new(file))?),
        Format::Csv => {
            let rows = csv_rows(path, file, &["position", "mass"])?;
            let mut p = BiasProfile::default();
            for rec in &rows {
                p.positions.push(field(path, rec, 0)?);
                p.per_position_mass.push(field(path, rec, 1)?);
            }
            Ok(p)
        }
    }
}
