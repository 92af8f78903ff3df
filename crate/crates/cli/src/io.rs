//! File formats: Gaussian sets and datasets as JSON, grid densities and
//! matrices as headerless CSV, series and predictions as CSV with headers,
//! fitted models as JSON.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use distgp_core::gp::{FitMethod, PredictionResult};
use distgp_core::kernel::{EmbeddedFeature, Embedding, KernelParams, Reference};
use distgp_core::measures::{disks_to_grid, DiskConfig, GaussianMeasure, GridDensity};
use distgp_core::ot::{AffineMap, TransportAssignment};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianItem {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl GaussianItem {
    pub fn from_measure(g: &GaussianMeasure) -> Self {
        Self {
            mean: g.mean().iter().copied().collect(),
            cov: g.cov().row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    pub fn to_measure(&self) -> Result<GaussianMeasure, CliError> {
        let d = self.mean.len();
        if self.cov.len() != d || self.cov.iter().any(|r| r.len() != d) {
            return Err(CliError::Format(format!("covariance must be {d}x{d}")));
        }
        let cov = DMatrix::from_fn(d, d, |i, j| self.cov[i][j]);
        Ok(GaussianMeasure::new(DVector::from_column_slice(&self.mean), cov)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSetFile {
    pub dim: usize,
    pub items: Vec<GaussianItem>,
}

pub fn gaussian_set_to_json(measures: &[GaussianMeasure]) -> Result<String, CliError> {
    let file = GaussianSetFile {
        dim: measures.first().map_or(0, |g| g.dim()),
        items: measures.iter().map(GaussianItem::from_measure).collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn gaussian_set_from_json(text: &str) -> Result<Vec<GaussianMeasure>, CliError> {
    let file: GaussianSetFile = serde_json::from_str(text)?;
    file.items
        .iter()
        .map(|item| {
            if item.mean.len() != file.dim {
                return Err(CliError::Format(format!(
                    "item of dimension {} in a set of dimension {}",
                    item.mean.len(),
                    file.dim
                )));
            }
            item.to_measure()
        })
        .collect()
}

pub fn read_gaussian_set(path: &Path) -> Result<Vec<GaussianMeasure>, CliError> {
    gaussian_set_from_json(&fs::read_to_string(path)?)
}

pub fn write_gaussian_set(path: &Path, measures: &[GaussianMeasure]) -> Result<(), CliError> {
    Ok(fs::write(path, gaussian_set_to_json(measures)?)?)
}

fn matrix_to_csv(rows: usize, cols: usize, at: impl Fn(usize, usize) -> f64) -> Result<String, CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for i in 0..rows {
        w.write_record((0..cols).map(|j| format!("{}", at(i, j))))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Format(e.to_string()))
}

fn matrix_from_csv(text: &str) -> Result<Vec<Vec<f64>>, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let rows: Vec<Vec<f64>> = r
        .records()
        .map(|rec| {
            let rec = rec?;
            rec.iter()
                .map(|s| s.parse::<f64>().map_err(|e| CliError::Format(format!("{s:?}: {e}"))))
                .collect()
        })
        .collect::<Result<_, CliError>>()?;
    if let Some(first) = rows.first() {
        if rows.iter().any(|r| r.len() != first.len()) {
            return Err(CliError::Format("ragged matrix".into()));
        }
    }
    Ok(rows)
}

/// `G` rows of `G` values; row `i` holds the cells with y-index `i`.
pub fn grid_to_csv(g: &GridDensity) -> Result<String, CliError> {
    let n = g.grid_size();
    matrix_to_csv(n, n, |i, j| g.weight(i, j))
}

pub fn grid_from_csv(text: &str) -> Result<GridDensity, CliError> {
    let rows = matrix_from_csv(text)?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Format("grid CSV must be square".into()));
    }
    Ok(GridDensity::new(n, rows.into_iter().flatten().collect())?)
}

pub fn read_grid(path: &Path) -> Result<GridDensity, CliError> {
    grid_from_csv(&fs::read_to_string(path)?)
}

pub fn write_grid(path: &Path, g: &GridDensity) -> Result<(), CliError> {
    Ok(fs::write(path, grid_to_csv(g)?)?)
}

/// All `*.csv` files of a directory, in file-name order.
pub fn read_grid_dir(dir: &Path) -> Result<Vec<GridDensity>, CliError> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.extension().is_some_and(|x| x == "csv"));
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Format(format!("no CSV grids in {}", dir.display())));
    }
    paths.iter().map(|p| read_grid(p)).collect()
}

pub fn matrix_csv(m: &DMatrix<f64>) -> Result<String, CliError> {
    matrix_to_csv(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>, CliError> {
    let rows = matrix_from_csv(&fs::read_to_string(path)?)?;
    let (n, m) = (rows.len(), rows.first().map_or(0, Vec::len));
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn write_series_csv(path: &Path, values: &[f64]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "value"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v}")])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_series_csv(path: &Path) -> Result<Vec<f64>, CliError> {
    #[derive(Deserialize)]
    struct Row {
        #[allow(dead_code)]
        index: usize,
        value: f64,
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<Row>()
        .map(|row| Ok(row?.value))
        .collect()
}

/// One regression input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputFile {
    Gaussian(GaussianItem),
    Grid { grid_size: usize, weights: Vec<f64> },
    Disks(DiskConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub input: InputFile,
    #[serde(default)]
    pub y: Option<f64>,
}

/// Inputs of a dataset, resolved to one representation.
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    Gaussian(Vec<GaussianMeasure>),
    Grid(Vec<GridDensity>),
}

impl Inputs {
    pub fn len(&self) -> usize {
        match self {
            Inputs::Gaussian(v) => v.len(),
            Inputs::Grid(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads a dataset; disk configurations are rasterized onto `grid_size`.
pub fn read_dataset(path: &Path, grid_size: usize) -> Result<(Inputs, Vec<Option<f64>>), CliError> {
    let items: Vec<DatasetItem> = serde_json::from_str(&fs::read_to_string(path)?)?;
    dataset_inputs(&items, grid_size)
}

pub fn dataset_inputs(items: &[DatasetItem], grid_size: usize) -> Result<(Inputs, Vec<Option<f64>>), CliError> {
    if items.is_empty() {
        return Err(CliError::Format("empty dataset".into()));
    }
    let y = items.iter().map(|i| i.y).collect();
    let inputs = if matches!(items[0].input, InputFile::Gaussian(_)) {
        let gs = items
            .iter()
            .map(|i| match &i.input {
                InputFile::Gaussian(g) => g.to_measure(),
                _ => Err(CliError::Format("dataset mixes Gaussian and grid inputs".into())),
            })
            .collect::<Result<_, _>>()?;
        Inputs::Gaussian(gs)
    } else {
        let gs = items
            .iter()
            .map(|i| match &i.input {
                InputFile::Grid { grid_size, weights } => Ok(GridDensity::new(*grid_size, weights.clone())?),
                InputFile::Disks(cfg) => Ok(disks_to_grid(cfg, grid_size)?),
                InputFile::Gaussian(_) => Err(CliError::Format("dataset mixes Gaussian and grid inputs".into())),
            })
            .collect::<Result<_, CliError>>()?;
        Inputs::Grid(gs)
    };
    Ok((inputs, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceFile {
    Gaussian(GaussianItem),
    Grid { grid_size: usize, weights: Vec<f64> },
}

impl ReferenceFile {
    pub fn from_reference(r: &Reference) -> Self {
        match r {
            Reference::Gaussian(g) => ReferenceFile::Gaussian(GaussianItem::from_measure(g)),
            Reference::Grid(g) => ReferenceFile::Grid {
                grid_size: g.grid_size(),
                weights: g.weights().to_vec(),
            },
        }
    }

    pub fn to_reference(&self) -> Result<Reference, CliError> {
        Ok(match self {
            ReferenceFile::Gaussian(g) => Reference::Gaussian(g.to_measure()?),
            ReferenceFile::Grid { grid_size, weights } => Reference::Grid(GridDensity::new(*grid_size, weights.clone())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFile {
    Gaussian(AffineMap),
    Grid(TransportAssignment),
}

/// A fitted model: parameters, reference, cached features and responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub theta: KernelParams,
    pub method: FitMethod,
    /// Entropic regularization used for grid features.
    pub lambda: f64,
    pub reference: ReferenceFile,
    pub features: Vec<FeatureFile>,
    pub y: Vec<f64>,
}

impl ModelFile {
    pub fn new(theta: KernelParams, method: FitMethod, lambda: f64, features: &[EmbeddedFeature], y: &[f64]) -> Result<Self, CliError> {
        let reference = features
            .first()
            .map(|f| ReferenceFile::from_reference(f.reference()))
            .ok_or_else(|| CliError::Format("model without features".into()))?;
        let features = features
            .iter()
            .map(|f| match f.embedding() {
                Embedding::Gaussian(m) => FeatureFile::Gaussian(m.clone()),
                Embedding::Grid(a) => FeatureFile::Grid(a.clone()),
            })
            .collect();
        Ok(Self {
            theta,
            method,
            lambda,
            reference,
            features,
            y: y.to_vec(),
        })
    }

    /// Rebuilds the shared reference and the features.
    pub fn load_features(&self) -> Result<(Arc<Reference>, Vec<EmbeddedFeature>), CliError> {
        let reference = Arc::new(self.reference.to_reference()?);
        let features = self
            .features
            .iter()
            .map(|f| match f {
                FeatureFile::Gaussian(m) => EmbeddedFeature::from_affine(m.clone(), Arc::clone(&reference)),
                FeatureFile::Grid(a) => EmbeddedFeature::from_assignment(a.clone(), Arc::clone(&reference)),
            })
            .collect::<Result<_, _>>()?;
        Ok((reference, features))
    }
}

pub fn write_predictions_csv(path: &Path, predictions: &[PredictionResult]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["mean", "variance", "lo", "hi"])?;
    for p in predictions {
        w.write_record([p.mean, p.variance, p.ci90.0, p.ci90.1].map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions_csv(path: &Path) -> Result<Vec<PredictionResult>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<(f64, f64, f64, f64)>()
        .map(|row| {
            let (mean, variance, lo, hi) = row?;
            Ok(PredictionResult {
                mean,
                variance,
                ci90: (lo, hi),
            })
        })
        .collect()
}
