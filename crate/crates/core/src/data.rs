//! Labelled feature-vector datasets: a synthetic generator with known latent
//! modes per class, and CSV ingestion.
//!
//! CSV layout: a header `label[,mode],f0,...,f{D-1}` followed by one row per
//! sample. `label` is the class name; `mode` (optional) is the sample's
//! latent mode index within its class.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

/// Rejection-sampling attempts before the generator gives up on a geometry.
const MAX_PLACEMENT_RETRIES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Matrix,
    pub parent_labels: Vec<usize>,
    /// Latent mode of each sample within its class (synthetic data only).
    pub mode_ids: Option<Vec<usize>>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.parent_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            parent_labels: indices.iter().map(|&i| self.parent_labels[i]).collect(),
            mode_ids: self
                .mode_ids
                .as_ref()
                .map(|m| indices.iter().map(|&i| m[i]).collect()),
            class_names: self.class_names.clone(),
        }
    }

    /// Indices of the samples of each class.
    pub fn class_members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes()];
        for (i, &l) in self.parent_labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        if self.parent_labels.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: self.parent_labels.len(),
            });
        }
        if let Some(&bad) = self.parent_labels.iter().find(|&&l| l >= self.num_classes()) {
            return Err(Error::Label {
                label: bad,
                classes: self.num_classes(),
            });
        }
        if let Some(m) = &self.mode_ids {
            if m.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    got: m.len(),
                });
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["label".to_string()];
        if self.mode_ids.is_some() {
            header.push("mode".into());
        }
        header.extend((0..self.dim()).map(|j| format!("f{j}")));
        w.write_record(&header).map_err(csv_io)?;
        for i in 0..self.len() {
            let mut rec = vec![self.class_names[self.parent_labels[i]].clone()];
            if let Some(m) = &self.mode_ids {
                rec.push(m[i].to_string());
            }
            // `Display` for f64 prints the shortest string that round-trips exactly
            rec.extend(self.features.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    /// Parses the CSV layout described in the module docs. Class indices are
    /// assigned in order of first appearance.
    pub fn read_csv<R: Read>(input: R) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(input);
        let header = rdr.headers().map_err(|e| parse_err(1, e))?.clone();
        let cols: Vec<&str> = header.iter().map(str::trim).collect();
        if cols.first() != Some(&"label") {
            return Err(Error::Parse {
                line: 1,
                message: "first column must be `label`".into(),
            });
        }
        let has_mode = cols.get(1) == Some(&"mode");
        let feat_start = if has_mode { 2 } else { 1 };
        for (j, name) in cols[feat_start..].iter().enumerate() {
            if *name != format!("f{j}") {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("unknown header column `{name}`, expected `f{j}`"),
                });
            }
        }
        let dim = cols.len() - feat_start;
        if dim == 0 {
            return Err(Error::Parse {
                line: 1,
                message: "no feature columns".into(),
            });
        }

        let mut class_names: Vec<String> = Vec::new();
        let mut labels = Vec::new();
        let mut modes = Vec::new();
        let mut data = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                parse_err(line, e)
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != cols.len() {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {} columns, found {}", cols.len(), rec.len()),
                });
            }
            let name = rec[0].trim();
            let label = match class_names.iter().position(|c| c == name) {
                Some(i) => i,
                None => {
                    class_names.push(name.to_string());
                    class_names.len() - 1
                }
            };
            labels.push(label);
            if has_mode {
                let m = rec[1].trim().parse::<usize>().map_err(|_| Error::Parse {
                    line,
                    message: format!("mode `{}` is not a non-negative integer", &rec[1]),
                })?;
                modes.push(m);
            }
            for (j, field) in rec.iter().skip(feat_start).enumerate() {
                let v = field.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("feature f{j} value `{field}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        line,
                        message: format!("feature f{j} is not finite"),
                    });
                }
                data.push(v);
            }
        }
        let features = Matrix::from_vec(labels.len(), dim, data)?;
        Ok(Dataset {
            features,
            parent_labels: labels,
            mode_ids: has_mode.then_some(modes),
            class_names,
        })
    }

    pub fn load_csv(path: &Path) -> Result<Dataset> {
        let f = File::open(path).map_err(|e| Error::file(path, e))?;
        Dataset::read_csv(std::io::BufReader::new(f))
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn parse_err(line: u64, e: csv::Error) -> Error {
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub modes: usize,
    pub samples_per_mode: usize,
    /// Minimum distance between this class's mode centers, in units of `sigma`.
    pub separation: f64,
    /// Per-class override of the generator's `class_spread`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
}

/// Recipe for a synthetic dataset.
///
/// Class offsets are drawn from `N(0, (spread·σ)²)` inside the first
/// `subspace_dim` coordinates, where `spread` is the class's own value or
/// `class_spread`. Each class's mode centers sit on a sphere of
/// radius `separation·σ` around its offset (same subspace), pairwise at least
/// `separation·σ` apart. Samples are the mode center plus isotropic noise of
/// scale `σ` in all `dim` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub classes: Vec<ClassSpec>,
    pub dim: usize,
    pub sigma: f64,
    pub class_spread: f64,
    #[serde(default)]
    pub subspace_dim: Option<usize>,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::param("classes", "at least one class is required"));
        }
        if self.dim == 0 {
            return Err(Error::param("dim", "must be positive"));
        }
        if let Some(s) = self.subspace_dim {
            if s == 0 || s > self.dim {
                return Err(Error::param("subspace_dim", format!("must lie in 1..={}", self.dim)));
            }
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::param("sigma", "must be finite and >= 0"));
        }
        if !(self.class_spread >= 0.0) || !self.class_spread.is_finite() {
            return Err(Error::param("class_spread", "must be finite and >= 0"));
        }
        for (c, spec) in self.classes.iter().enumerate() {
            if spec.modes == 0 {
                return Err(Error::param(format!("classes[{c}].modes"), "must be at least 1"));
            }
            if spec.samples_per_mode == 0 {
                return Err(Error::param(format!("classes[{c}].samples_per_mode"), "must be at least 1"));
            }
            if !(spec.separation > 0.0) || !spec.separation.is_finite() {
                return Err(Error::param(
                    format!("classes[{c}].separation"),
                    format!("must be > 0, got {}", spec.separation),
                ));
            }
            if let Some(s) = spec.spread {
                if !(s >= 0.0) || !s.is_finite() {
                    return Err(Error::param(format!("classes[{c}].spread"), "must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes
            .iter()
            .enumerate()
            .map(|(i, c)| c.name.clone().unwrap_or_else(|| format!("class_{i}")))
            .collect()
    }

    pub fn total_samples(&self) -> usize {
        self.classes.iter().map(|c| c.modes * c.samples_per_mode).sum()
    }
}

/// Synthetic dataset plus the mode centers that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub dataset: Dataset,
    /// `centers[c][m]` is the center of mode `m` of class `c`.
    pub centers: Vec<Vec<Vec<f64>>>,
}

fn unit_vector(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    generate_with_centers(spec).map(|g| g.dataset)
}

pub fn generate_with_centers(spec: &GeneratorSpec) -> Result<Generated> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let sub = spec.subspace_dim.unwrap_or(spec.dim);
    let sigma = spec.sigma;

    let mut centers = Vec::with_capacity(spec.classes.len());
    for (c, class) in spec.classes.iter().enumerate() {
        let mut offset = vec![0.0; spec.dim];
        for v in offset.iter_mut().take(sub) {
            *v = class.spread.unwrap_or(spec.class_spread) * sigma * rng.next_gaussian();
        }
        let radius = class.separation * sigma;
        let min_dist_sq = radius * radius;
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_RETRIES {
            let dirs: Vec<Vec<f64>> = (0..class.modes).map(|_| unit_vector(sub, &mut rng)).collect();
            let modes: Vec<Vec<f64>> = dirs
                .iter()
                .map(|u| {
                    let mut m = offset.clone();
                    if class.modes > 1 {
                        for (k, x) in u.iter().enumerate() {
                            m[k] += radius * x;
                        }
                    }
                    m
                })
                .collect();
            let ok = (0..modes.len()).all(|a| {
                (a + 1..modes.len())
                    .all(|b| crate::numeric::sq_dist(&modes[a], &modes[b]) >= min_dist_sq * (1.0 - 1e-12))
            });
            if ok {
                placed = Some(modes);
                break;
            }
        }
        let modes = placed.ok_or_else(|| {
            Error::Generator(format!(
                "class {c}: cannot place {} modes {}σ apart in {sub} dimensions",
                class.modes, class.separation
            ))
        })?;
        centers.push(modes);
    }

    let n = spec.total_samples();
    let mut data = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    let mut modes = Vec::with_capacity(n);
    for (c, class) in spec.classes.iter().enumerate() {
        for (m, center) in centers[c].iter().enumerate() {
            for _ in 0..class.samples_per_mode {
                for &x in center {
                    data.push(if sigma > 0.0 { x + sigma * rng.next_gaussian() } else { x });
                }
                labels.push(c);
                modes.push(m);
            }
        }
    }
    Ok(Generated {
        dataset: Dataset {
            features: Matrix::from_vec(n, spec.dim, data)?,
            parent_labels: labels,
            mode_ids: Some(modes),
            class_names: spec.class_names(),
        },
        centers,
    })
}
