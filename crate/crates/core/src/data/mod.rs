//! Patient cohorts: the on-disk manifest format, a synthetic generator with
//! a planted prognostic signal, and cross-validation splits.

pub mod cmtm;
mod synthetic;

pub use cmtm::Matrix;
pub use synthetic::{generate_synthetic_cohort, generate_with_latent, SyntheticSpec};

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CmtaError, Result};
use crate::fsio::write_atomic;

/// One patient: `M` patch embeddings, `K` grouped genomic vectors and the
/// follow-up outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub patient_id: String,
    /// `M×F` patch embeddings.
    pub pathology: Matrix,
    /// One vector per genomic group.
    pub genomics: Vec<Vec<f64>>,
    pub time_months: f64,
    /// `true` when the event was not observed.
    pub censored: bool,
}

impl PatientRecord {
    pub fn validate(&self) -> Result<()> {
        let id = &self.patient_id;
        if id.is_empty() {
            return Err(CmtaError::Integrity("empty patient_id".into()));
        }
        if self.pathology.rows == 0 {
            return Err(CmtaError::Empty(format!("patient {id} has no patch embeddings")));
        }
        if self.genomics.is_empty() {
            return Err(CmtaError::Empty(format!("patient {id} has no genomic groups")));
        }
        if !(self.time_months.is_finite() && self.time_months > 0.0) {
            return Err(CmtaError::Integrity(format!("patient {id}: time {} is not positive", self.time_months)));
        }
        if self.pathology.data.iter().any(|v| !v.is_finite()) {
            return Err(CmtaError::Integrity(format!("patient {id}: non-finite patch embedding")));
        }
        for (k, g) in self.genomics.iter().enumerate() {
            if g.is_empty() {
                return Err(CmtaError::Empty(format!("patient {id}: genomic group {k} is empty")));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(CmtaError::Integrity(format!("patient {id}: non-finite value in genomic group {k}")));
            }
        }
        Ok(())
    }

    pub fn genomic_widths(&self) -> Vec<usize> {
        self.genomics.iter().map(Vec::len).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Provenance {
    Loaded { path: PathBuf },
    Synthetic { spec: SyntheticSpec },
    Subset { of: Box<Provenance> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    records: Vec<PatientRecord>,
    provenance: Provenance,
}

impl Cohort {
    /// Validates every record plus the cohort-level invariants: unique ids
    /// and one shared pathology width and genomic layout.
    pub fn new(records: Vec<PatientRecord>, provenance: Provenance) -> Result<Cohort> {
        let Some(first) = records.first() else {
            return Err(CmtaError::Empty("cohort has no patients".into()));
        };
        let widths = first.genomic_widths();
        let feat = first.pathology.cols;
        let mut seen = HashSet::new();
        for r in &records {
            r.validate()?;
            if !seen.insert(r.patient_id.as_str()) {
                return Err(CmtaError::Integrity(format!("duplicate patient_id {:?}", r.patient_id)));
            }
            if r.genomic_widths() != widths {
                return Err(CmtaError::Integrity(format!(
                    "patient {}: genomic widths {:?} differ from {:?}",
                    r.patient_id,
                    r.genomic_widths(),
                    widths
                )));
            }
            if r.pathology.cols != feat {
                return Err(CmtaError::Integrity(format!(
                    "patient {}: pathology width {} differs from {feat}",
                    r.patient_id, r.pathology.cols
                )));
            }
        }
        Ok(Cohort { records, provenance })
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn pathology_width(&self) -> usize {
        self.records[0].pathology.cols
    }

    pub fn genomic_widths(&self) -> Vec<usize> {
        self.records[0].genomic_widths()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time_months).collect()
    }

    pub fn censored(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.censored).collect()
    }

    /// Cohort restricted to the given record indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Cohort> {
        let records = indices
            .iter()
            .map(|&i| {
                self.records
                    .get(i)
                    .cloned()
                    .ok_or_else(|| CmtaError::contract(format!("record index {i} out of range for {}", self.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        Cohort::new(records, Provenance::Subset { of: Box::new(self.provenance.clone()) })
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub time_months: f64,
    pub censored: bool,
    /// Relative paths resolve against the manifest's directory.
    pub pathology_file: PathBuf,
    pub genomics_files: Vec<PathBuf>,
}

fn load_entry(entry: ManifestEntry, base: &Path) -> Result<PatientRecord> {
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let pathology = cmtm::read_matrix(&resolve(&entry.pathology_file))?;
    let genomics = entry
        .genomics_files
        .iter()
        .map(|f| {
            let path = resolve(f);
            let m = cmtm::read_matrix(&path)?;
            if m.rows != 1 {
                return Err(CmtaError::Integrity(format!(
                    "{}: genomic group must be a single row, got {}×{}",
                    path.display(),
                    m.rows,
                    m.cols
                )));
            }
            Ok(m.data)
        })
        .collect::<Result<Vec<_>>>()?;
    let record = PatientRecord {
        patient_id: entry.patient_id,
        pathology,
        genomics,
        time_months: entry.time_months,
        censored: entry.censored,
    };
    record.validate()?;
    Ok(record)
}

/// Reads a JSON-lines manifest and every matrix file it names.
pub fn load_cohort(manifest: &Path) -> Result<Cohort> {
    let text = std::fs::read_to_string(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    let mut offset = 0usize;
    for (lineno, line) in text.split_inclusive('\n').enumerate() {
        let body = line.trim();
        if !body.is_empty() {
            let entry: ManifestEntry = serde_json::from_str(body).map_err(|e| CmtaError::Format {
                path: manifest.display().to_string(),
                offset: offset as u64,
                reason: format!("line {}: {e}", lineno + 1),
            })?;
            entries.push(entry);
        }
        offset += line.len();
    }
    if entries.is_empty() {
        return Err(CmtaError::Empty(format!("manifest {} lists no patients", manifest.display())));
    }
    let records = entries
        .into_par_iter()
        .map(|e| load_entry(e, base))
        .collect::<Result<Vec<_>>>()?;
    Cohort::new(records, Provenance::Loaded { path: manifest.to_path_buf() })
}

/// Writes `dir/manifest.jsonl` plus one CMTM file per matrix and returns the
/// manifest path. Values are stored as `f32`.
pub fn save_cohort(cohort: &Cohort, dir: &Path) -> Result<PathBuf> {
    let matrices = dir.join("matrices");
    std::fs::create_dir_all(&matrices)?;
    let mut manifest = String::new();
    for (i, r) in cohort.records().iter().enumerate() {
        let path_file = PathBuf::from("matrices").join(format!("{i:05}_pathology.cmtm"));
        cmtm::write_matrix(&dir.join(&path_file), &r.pathology)?;
        let mut genomics_files = Vec::with_capacity(r.genomics.len());
        for (k, g) in r.genomics.iter().enumerate() {
            let f = PathBuf::from("matrices").join(format!("{i:05}_genomics_{k}.cmtm"));
            cmtm::write_matrix(&dir.join(&f), &Matrix::new(1, g.len(), g.clone())?)?;
            genomics_files.push(f);
        }
        let entry = ManifestEntry {
            patient_id: r.patient_id.clone(),
            time_months: r.time_months,
            censored: r.censored,
            pathology_file: path_file,
            genomics_files,
        };
        manifest.push_str(&serde_json::to_string(&entry).map_err(|e| CmtaError::contract(e.to_string()))?);
        manifest.push('\n');
    }
    let path = dir.join("manifest.jsonl");
    write_atomic(&path, manifest.as_bytes())?;
    Ok(path)
}

/// Record indices of one cross-validation fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded `k`-fold partition of `0..n`. The first `n mod k` test folds get
/// one extra member.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(CmtaError::contract(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(CmtaError::contract(format!("{k} folds requested for {n} patients")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let test = order[start..start + len].to_vec();
        let train = order[..start].iter().chain(&order[start + len..]).copied().collect();
        folds.push(Fold { train, test });
        start += len;
    }
    Ok(folds)
}
