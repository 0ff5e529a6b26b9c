//! Synthetic cohorts with a latent risk planted in both modalities.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Cohort, Matrix, PatientRecord, Provenance};
use crate::error::{CmtaError, Result};

/// Generator parameters. Every field has a default, so a spec file only
/// needs the fields it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub min_patches: usize,
    pub max_patches: usize,
    pub pathology_width: usize,
    pub genomic_widths: Vec<usize>,
    /// Genomic group whose mean carries the latent risk.
    pub signal_group: usize,
    /// Share of each bag's patches that carry the latent risk.
    pub signal_patch_fraction: f64,
    pub effect_size: f64,
    pub noise_scale: f64,
    /// Exact fraction of censored patients (rounded to a whole count).
    pub censor_rate: f64,
    /// Median-scale of event times for a patient with zero latent risk.
    pub baseline_months: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_patients: 64,
            min_patches: 4,
            max_patches: 16,
            pathology_width: 1024,
            genomic_widths: vec![64; 6],
            signal_group: 0,
            signal_patch_fraction: 0.25,
            effect_size: 2.0,
            noise_scale: 1.0,
            censor_rate: 0.3,
            baseline_months: 24.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CmtaError::Config(m));
        if self.n_patients == 0 {
            return fail("n_patients must be positive".into());
        }
        if self.min_patches == 0 || self.min_patches > self.max_patches {
            return fail(format!("patch range {}..={} is invalid", self.min_patches, self.max_patches));
        }
        if self.pathology_width == 0 || self.genomic_widths.is_empty() || self.genomic_widths.contains(&0) {
            return fail("feature widths must be positive and at least one genomic group is required".into());
        }
        if self.signal_group >= self.genomic_widths.len() {
            return fail(format!("signal_group {} out of range", self.signal_group));
        }
        if !(self.signal_patch_fraction > 0.0 && self.signal_patch_fraction <= 1.0) {
            return fail(format!("signal_patch_fraction {} not in (0, 1]", self.signal_patch_fraction));
        }
        if !(self.effect_size >= 0.0 && self.effect_size.is_finite()) {
            return fail(format!("effect_size {} must be finite and non-negative", self.effect_size));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return fail(format!("noise_scale {} must be finite and non-negative", self.noise_scale));
        }
        if !(0.0..1.0).contains(&self.censor_rate) {
            return fail(format!("censor_rate {} not in [0, 1)", self.censor_rate));
        }
        if !(self.baseline_months > 0.0 && self.baseline_months.is_finite()) {
            return fail("baseline_months must be positive".into());
        }
        Ok(())
    }

    /// Parses a TOML spec file body.
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SyntheticSpec = toml::from_str(text).map_err(|e| CmtaError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serialises")
    }
}

/// Values are rounded through `f32` so a save/load round trip is exact.
fn f32_exact(x: f64) -> f64 {
    f64::from(x as f32)
}

/// Generates a cohort and also returns each patient's latent risk `z`.
///
/// Event times are exponential with rate `exp(effect·z)`; the signal group
/// and a share of the patches are shifted by `effect·z`. Censoring draws
/// `Cᵢ = uᵢ·c` with `uᵢ ~ U(0,1)` and picks the scale `c` so that exactly
/// `round(rate·n)` patients are censored.
pub fn generate_with_latent(spec: &SyntheticSpec) -> Result<(Cohort, Vec<f64>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_patients;
    let noise = |rng: &mut ChaCha8Rng| spec.noise_scale * rng.sample::<f64, _>(StandardNormal);
    let mut latent = Vec::with_capacity(n);
    let mut records = Vec::with_capacity(n);
    let mut event_times = Vec::with_capacity(n);
    for i in 0..n {
        let z: f64 = rng.sample(StandardNormal);
        let shift = spec.effect_size * z;
        let m = rng.gen_range(spec.min_patches..=spec.max_patches);
        let signal = ((spec.signal_patch_fraction * m as f64).round() as usize).clamp(1, m);
        let mut rows: Vec<usize> = (0..m).collect();
        rows.shuffle(&mut rng);
        let mut is_signal = vec![false; m];
        rows[..signal].iter().for_each(|&r| is_signal[r] = true);
        let f = spec.pathology_width;
        let mut patches = Vec::with_capacity(m * f);
        for &s in &is_signal {
            for _ in 0..f {
                let v = noise(&mut rng) + if s { shift } else { 0.0 };
                patches.push(f32_exact(v));
            }
        }
        let genomics = spec
            .genomic_widths
            .iter()
            .enumerate()
            .map(|(k, &w)| {
                let offset = if k == spec.signal_group { shift } else { 0.0 };
                (0..w).map(|_| f32_exact(noise(&mut rng) + offset)).collect()
            })
            .collect();
        let e: f64 = Exp1.sample(&mut rng);
        event_times.push((spec.baseline_months * e / shift.exp()).max(f64::MIN_POSITIVE));
        latent.push(z);
        records.push(PatientRecord {
            patient_id: format!("SYN-{i:04}"),
            pathology: Matrix::new(m, f, patches)?,
            genomics,
            time_months: 0.0,
            censored: false,
        });
    }
    let u: Vec<f64> = (0..n).map(|_| rng.gen_range(f64::EPSILON..1.0)).collect();
    let target = ((spec.censor_rate * n as f64).round() as usize).min(n - 1);
    // Patient i is censored iff c < tᵢ/uᵢ; taking c at the target-th largest
    // threshold censors exactly `target` patients (ties aside).
    let mut thresholds: Vec<f64> = event_times.iter().zip(&u).map(|(t, u)| t / u).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    let scale = if target == 0 { f64::INFINITY } else { thresholds[target] };
    for ((r, &t), &u) in records.iter_mut().zip(&event_times).zip(&u) {
        let c = u * scale;
        r.censored = c < t;
        r.time_months = if r.censored { c } else { t };
    }
    let cohort = Cohort::new(records, Provenance::Synthetic { spec: spec.clone() })?;
    Ok((cohort, latent))
}

pub fn generate_synthetic_cohort(spec: &SyntheticSpec) -> Result<Cohort> {
    generate_with_latent(spec).map(|(c, _)| c)
}
