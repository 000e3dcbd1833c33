//! Run-directory persistence: CSV matrices with one header row and JSON metadata.
//!
//! ```text
//! run/
//!   manifest.json            sizes, hyperparameters, per-chain diagnostics
//!   config.json              caller-supplied configuration echo
//!   data.csv                 data with the anchor columns first
//!   anchor.csv, anchor.json  anchor coordinates and residual variances
//!   samples/chain{c}/{group}/{m:06}.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{NiftyError, Result};
use crate::model::{
    DataMatrix, FactorAssignment, Hyperparameters, MonotoneSpline, NiftyState, PiecewiseLinear,
};
use crate::pretrain::{AnchorSet, AnchorSource};
use crate::sampler::{ChainDiagnostics, PosteriorChain, BLOCK_NAMES};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;
pub const SAMPLE_GROUPS: [&str; 6] = [
    "loadings",
    "splines",
    "latent_locations",
    "residual_variances",
    "local_scales",
    "global_scale",
];

fn io_err(path: &Path, source: std::io::Error) -> NiftyError {
    NiftyError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, message: impl std::fmt::Display) -> NiftyError {
    NiftyError::Parse {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn default_header(n: usize) -> Vec<String> {
    (1..=n).map(|c| format!("c{c}")).collect()
}

/// Write a matrix as CSV with one header row (`c1, c2, ..` unless given).
pub fn write_matrix<T: Scalar>(
    path: &Path,
    m: &DMatrix<T>,
    header: Option<&[String]>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    let header = match header {
        Some(h) if h.len() == m.ncols() => h.to_vec(),
        Some(h) => {
            return Err(NiftyError::Shape(format!(
                "{} header names for {} columns",
                h.len(),
                m.ncols()
            )))
        }
        None => default_header(m.ncols()),
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| parse_err(path, e))?;
    w.write_record(&header).map_err(|e| parse_err(path, e))?;
    for r in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|c| format!("{}", m[(r, c)].as_f64())))
            .map_err(|e| parse_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Read a CSV matrix written by [`write_matrix`] (or any numeric CSV with a header row).
pub fn read_matrix<T: Scalar>(path: &Path) -> Result<(DMatrix<T>, Vec<String>)> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let p = header.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, e))?;
        if rec.len() != p {
            return Err(parse_err(
                path,
                format!("row {} has {} fields, header has {p}", r + 1, rec.len()),
            ));
        }
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| {
                parse_err(path, format!("row {}: '{field}' is not a number", r + 1))
            })?;
            values.push(T::of(v));
        }
        rows += 1;
    }
    Ok((DMatrix::from_row_slice(rows, p, &values), header))
}

/// Read a data matrix, keeping the header as feature names.
pub fn read_data<T: Scalar>(path: &Path) -> Result<DataMatrix<T>> {
    let (m, header) = read_matrix(path)?;
    DataMatrix::new(m)?.with_feature_names(header)
}

pub fn write_data<T: Scalar>(path: &Path, data: &DataMatrix<T>) -> Result<()> {
    write_matrix(path, data.values(), data.feature_names())
}

pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn read_json<V: DeserializeOwned>(path: &Path) -> Result<V> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e))
}

/// Anchor metadata stored next to `anchor.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorMetadata {
    pub k: usize,
    pub residual_variances: Vec<f64>,
    pub source: AnchorSource,
    /// Free-form details of how the anchors were produced.
    #[serde(default)]
    pub details: serde_json::Value,
}

pub fn write_anchor<T: Scalar>(
    dir: &Path,
    stem: &str,
    anchor: &AnchorSet<T>,
    details: serde_json::Value,
) -> Result<()> {
    let header: Vec<String> = (1..=anchor.k()).map(|c| format!("anchor_{c}")).collect();
    write_matrix(
        &dir.join(format!("{stem}.csv")),
        &anchor.coordinates,
        Some(&header),
    )?;
    write_json(
        &dir.join(format!("{stem}.json")),
        &AnchorMetadata {
            k: anchor.k(),
            residual_variances: anchor
                .residual_variances
                .iter()
                .map(|v| v.as_f64())
                .collect(),
            source: anchor.source,
            details,
        },
    )
}

pub fn read_anchor<T: Scalar>(dir: &Path, stem: &str) -> Result<AnchorSet<T>> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    let (coords, _) = read_matrix::<T>(&csv_path)?;
    let meta: AnchorMetadata = read_json(&json_path)?;
    if meta.k != coords.ncols() {
        return Err(parse_err(
            &json_path,
            format!(
                "k = {} but {} has {} columns",
                meta.k,
                csv_path.display(),
                coords.ncols()
            ),
        ));
    }
    let variances =
        DVector::from_iterator(meta.k, meta.residual_variances.iter().map(|&v| T::of(v)));
    AnchorSet::new(coords, variances, meta.source)
}

/// Per-chain record of the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub index: usize,
    pub retained: usize,
    pub mala_acceptance_rate: f64,
    pub burn_in_acceptance_rate: f64,
    pub final_step: f64,
    pub block_seconds: Vec<f64>,
    pub log_posterior_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub n: usize,
    /// Total feature count including anchors.
    pub p: usize,
    pub h: usize,
    pub k: usize,
    pub pieces: usize,
    pub anchor_count: usize,
    /// 0-based location of every factor.
    pub k_of_h: Vec<usize>,
    pub hyperparameters: Hyperparameters,
    pub block_names: Vec<String>,
    pub sample_groups: Vec<String>,
    pub chains: Vec<ChainRecord>,
}

/// A run directory loaded back into memory.
#[derive(Debug, Clone)]
pub struct RunDirectory<T: Scalar> {
    pub manifest: RunManifest,
    pub config: serde_json::Value,
    pub data: DataMatrix<T>,
    pub chains: Vec<PosteriorChain<T>>,
}

fn sample_path(dir: &Path, chain: usize, group: &str, m: usize) -> PathBuf {
    dir.join("samples")
        .join(format!("chain{chain}"))
        .join(group)
        .join(format!("{m:06}.csv"))
}

fn spline_matrix<T: Scalar>(splines: &[MonotoneSpline<T>]) -> DMatrix<T> {
    let width = splines.first().map_or(1, |s| s.pieces() + 1);
    DMatrix::from_fn(splines.len(), width, |h, c| splines[h].coefficients()[c])
}

fn spline_header(pieces: usize) -> Vec<String> {
    std::iter::once("intercept".to_string())
        .chain((1..=pieces).map(|l| format!("slope_{l}")))
        .collect()
}

/// Persist chains (sharing data, anchors and assignment) into `dir`.
pub fn write_run<T: Scalar>(
    dir: &Path,
    data: &DataMatrix<T>,
    chains: &[PosteriorChain<T>],
    config: &serde_json::Value,
) -> Result<RunManifest> {
    let first_chain = chains.first().ok_or(NiftyError::EmptyChain)?;
    let first = first_chain.samples.first().ok_or(NiftyError::EmptyChain)?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_data(&dir.join("data.csv"), data)?;
    if let Some(anchor) = &first_chain.anchor {
        write_anchor(dir, "anchor", anchor, serde_json::Value::Null)?;
    }
    write_json(&dir.join("config.json"), config)?;

    let pieces = first.pieces();
    let spline_head = spline_header(pieces);
    let mut records = Vec::with_capacity(chains.len());
    for (c, chain) in chains.iter().enumerate() {
        for (m, s) in chain.samples.iter().enumerate() {
            write_matrix(&sample_path(dir, c, "loadings", m), &s.loadings, None)?;
            write_matrix(
                &sample_path(dir, c, "splines", m),
                &spline_matrix(&s.splines),
                Some(&spline_head),
            )?;
            write_matrix(
                &sample_path(dir, c, "latent_locations", m),
                &s.latent_locations,
                None,
            )?;
            let var = DMatrix::from_column_slice(s.p(), 1, s.residual_variances.as_slice());
            write_matrix(&sample_path(dir, c, "residual_variances", m), &var, None)?;
            write_matrix(
                &sample_path(dir, c, "local_scales", m),
                &s.local_scales,
                None,
            )?;
            write_matrix(
                &sample_path(dir, c, "global_scale", m),
                &DMatrix::from_element(1, 1, s.global_scale),
                None,
            )?;
        }
        let d = &chain.diagnostics;
        records.push(ChainRecord {
            index: c,
            retained: chain.samples.len(),
            mala_acceptance_rate: d.mala_acceptance_rate,
            burn_in_acceptance_rate: d.burn_in_acceptance_rate,
            final_step: d.final_step,
            block_seconds: d.block_seconds.clone(),
            log_posterior_trace: d.log_posterior_trace.clone(),
        });
    }
    let manifest = RunManifest {
        format_version: FORMAT_VERSION,
        n: first.n(),
        p: first.p(),
        h: first.h(),
        k: first.k(),
        pieces,
        anchor_count: first_chain.anchor_count,
        k_of_h: first.assignment.as_slice().to_vec(),
        hyperparameters: first_chain.config.clone(),
        block_names: BLOCK_NAMES.iter().map(|s| s.to_string()).collect(),
        sample_groups: SAMPLE_GROUPS.iter().map(|s| s.to_string()).collect(),
        chains: records,
    };
    // written last: its presence marks a complete run
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Artifacts a complete run directory must contain.
pub fn missing_artifacts(dir: &Path) -> Vec<String> {
    let mut missing = Vec::new();
    for name in ["manifest.json", "config.json", "data.csv"] {
        if !dir.join(name).is_file() {
            missing.push(name.to_string());
        }
    }
    if let Ok(manifest) = read_json::<RunManifest>(&dir.join("manifest.json")) {
        if manifest.anchor_count > 0 {
            for name in ["anchor.csv", "anchor.json"] {
                if !dir.join(name).is_file() {
                    missing.push(name.to_string());
                }
            }
        }
        for rec in &manifest.chains {
            for group in SAMPLE_GROUPS {
                for m in 0..rec.retained {
                    let p = sample_path(dir, rec.index, group, m);
                    if !p.is_file() {
                        missing.push(p.strip_prefix(dir).unwrap_or(&p).display().to_string());
                    }
                }
            }
        }
    }
    missing
}

fn expect_shape<T: Scalar>(
    path: &Path,
    m: DMatrix<T>,
    shape: (usize, usize),
) -> Result<DMatrix<T>> {
    if m.shape() != shape {
        return Err(parse_err(
            path,
            format!(
                "expected {}x{}, found {}x{}",
                shape.0,
                shape.1,
                m.nrows(),
                m.ncols()
            ),
        ));
    }
    Ok(m)
}

fn read_group<T: Scalar>(
    dir: &Path,
    chain: usize,
    group: &str,
    m: usize,
    shape: (usize, usize),
) -> Result<DMatrix<T>> {
    let path = sample_path(dir, chain, group, m);
    let (mat, _) = read_matrix(&path)?;
    expect_shape(&path, mat, shape)
}

/// Load a run directory; lists every missing artifact if it is incomplete.
pub fn read_run<T: Scalar>(dir: &Path) -> Result<RunDirectory<T>> {
    let missing = missing_artifacts(dir);
    if !missing.is_empty() {
        return Err(NiftyError::IncompleteRun {
            dir: dir.display().to_string(),
            missing,
        });
    }
    let manifest: RunManifest = read_json(&dir.join("manifest.json"))?;
    let config: serde_json::Value = read_json(&dir.join("config.json"))?;
    let data = read_data::<T>(&dir.join("data.csv"))?;
    let anchor = if manifest.anchor_count > 0 {
        Some(read_anchor::<T>(dir, "anchor")?)
    } else {
        None
    };
    let assignment = FactorAssignment::new(manifest.k_of_h.clone(), manifest.k)?;
    let (n, p, h, k, l) = (
        manifest.n,
        manifest.p,
        manifest.h,
        manifest.k,
        manifest.pieces,
    );

    let mut chains = Vec::with_capacity(manifest.chains.len());
    for rec in &manifest.chains {
        let mut samples = Vec::with_capacity(rec.retained);
        for m in 0..rec.retained {
            let spline_rows = read_group::<T>(dir, rec.index, "splines", m, (h, l + 1))?;
            let splines = (0..h)
                .map(|r| {
                    let coefs: Vec<T> = spline_rows.row(r).iter().copied().collect();
                    MonotoneSpline::try_from(PiecewiseLinear::from_coefficients(&coefs)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let state = NiftyState {
                loadings: read_group(dir, rec.index, "loadings", m, (p, h))?,
                splines,
                latent_locations: read_group(dir, rec.index, "latent_locations", m, (n, k))?,
                residual_variances: read_group::<T>(
                    dir,
                    rec.index,
                    "residual_variances",
                    m,
                    (p, 1),
                )?
                .column(0)
                .into_owned(),
                local_scales: read_group(dir, rec.index, "local_scales", m, (p, h))?,
                global_scale: read_group::<T>(dir, rec.index, "global_scale", m, (1, 1))?[(0, 0)],
                assignment: assignment.clone(),
            };
            state.validate()?;
            samples.push(state);
        }
        chains.push(PosteriorChain {
            samples,
            diagnostics: ChainDiagnostics {
                log_posterior_trace: rec.log_posterior_trace.clone(),
                mala_acceptance_rate: rec.mala_acceptance_rate,
                burn_in_acceptance_rate: rec.burn_in_acceptance_rate,
                block_seconds: rec.block_seconds.clone(),
                final_step: rec.final_step,
            },
            config: manifest.hyperparameters.clone(),
            anchor: anchor.clone(),
            anchor_count: manifest.anchor_count,
        });
    }
    Ok(RunDirectory {
        manifest,
        config,
        data,
        chains,
    })
}
