//! Concordance, Kaplan-Meier, logrank and risk stratification.
//!
//! Censor flags follow one convention throughout: `true` means the patient
//! was right-censored (no event observed).

use serde::{Deserialize, Serialize};

use crate::error::{CmtaError, Result};

fn check_lengths(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(CmtaError::dim(op, &[a], &[b]));
    }
    Ok(())
}

/// Harrell's concordance index.
///
/// A pair `(i, j)` is comparable when `t_i < t_j` and `i` had an event; it
/// scores 1 when `risk_i > risk_j`, ½ on a risk tie and 0 otherwise.
pub fn concordance_index(risks: &[f64], times: &[f64], censored: &[bool]) -> Result<f64> {
    check_lengths("concordance_index", risks.len(), times.len())?;
    check_lengths("concordance_index", risks.len(), censored.len())?;
    if risks.len() < 2 {
        return Err(CmtaError::UndefinedStatistic(format!(
            "concordance needs at least 2 patients, got {}",
            risks.len()
        )));
    }
    let mut score = 0.0;
    let mut pairs = 0usize;
    for i in 0..risks.len() {
        if censored[i] {
            continue;
        }
        for j in 0..risks.len() {
            if times[i] < times[j] {
                pairs += 1;
                if risks[i] > risks[j] {
                    score += 1.0;
                } else if risks[i] == risks[j] {
                    score += 0.5;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(CmtaError::UndefinedStatistic("no comparable pairs".into()));
    }
    Ok(score / pairs as f64)
}

/// Product-limit estimate evaluated at every distinct observed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub times: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    pub survival: Vec<f64>,
}

impl KmCurve {
    /// Step-function value at `t` (1 before the first time).
    pub fn survival_at(&self, t: f64) -> f64 {
        match self.times.iter().rposition(|&x| x <= t) {
            Some(i) => self.survival[i],
            None => 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

pub fn kaplan_meier(times: &[f64], censored: &[bool]) -> Result<KmCurve> {
    check_lengths("kaplan_meier", times.len(), censored.len())?;
    if times.is_empty() {
        return Err(CmtaError::Empty("Kaplan-Meier needs at least one subject".into()));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut curve = KmCurve {
        times: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
        survival: Vec::new(),
    };
    let mut s = 1.0;
    let mut remaining = times.len();
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut j = i;
        let mut deaths = 0;
        while j < order.len() && times[order[j]] == t {
            if !censored[order[j]] {
                deaths += 1;
            }
            j += 1;
        }
        if deaths > 0 {
            s *= 1.0 - deaths as f64 / remaining as f64;
        }
        curve.times.push(t);
        curve.at_risk.push(remaining);
        curve.events.push(deaths);
        curve.survival.push(s);
        remaining -= j - i;
        i = j;
    }
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogrankResult {
    pub chi_square: f64,
    pub p_value: f64,
    pub observed_a: f64,
    pub expected_a: f64,
    pub variance: f64,
}

/// Two-group logrank test with one degree of freedom.
pub fn logrank_test(times_a: &[f64], censored_a: &[bool], times_b: &[f64], censored_b: &[bool]) -> Result<LogrankResult> {
    check_lengths("logrank_test", times_a.len(), censored_a.len())?;
    check_lengths("logrank_test", times_b.len(), censored_b.len())?;
    if times_a.is_empty() || times_b.is_empty() {
        return Err(CmtaError::Empty("logrank needs two non-empty groups".into()));
    }
    let mut event_times: Vec<f64> = times_a
        .iter()
        .zip(censored_a)
        .chain(times_b.iter().zip(censored_b))
        .filter(|(_, &c)| !c)
        .map(|(&t, _)| t)
        .collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();

    let count = |ts: &[f64], cs: &[bool], t: f64| -> (f64, f64) {
        let at_risk = ts.iter().filter(|&&x| x >= t).count() as f64;
        let deaths = ts.iter().zip(cs).filter(|(&x, &c)| x == t && !c).count() as f64;
        (at_risk, deaths)
    };
    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    for &t in &event_times {
        let (ra, da) = count(times_a, censored_a, t);
        let (rb, db) = count(times_b, censored_b, t);
        let (r, d) = (ra + rb, da + db);
        observed += da;
        expected += d * ra / r;
        if r > 1.0 {
            variance += d * (ra / r) * (1.0 - ra / r) * (r - d) / (r - 1.0);
        }
    }
    if !(variance > 0.0) {
        return Err(CmtaError::UndefinedStatistic("logrank variance is zero".into()));
    }
    let chi_square = (observed - expected).powi(2) / variance;
    Ok(LogrankResult {
        chi_square,
        p_value: chi_square_sf_1df(chi_square),
        observed_a: observed,
        expected_a: expected,
        variance,
    })
}

/// Upper tail of χ²(1): `Q(1/2, x/2)`.
fn chi_square_sf_1df(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        statrs::function::gamma::gamma_ur(0.5, x / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskGroup {
    Low,
    High,
}

impl RiskGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskGroup::Low => "low",
            RiskGroup::High => "high",
        }
    }
}

/// Median split; risks equal to the median go to the low group.
pub fn stratify(risks: &[f64]) -> Result<Vec<RiskGroup>> {
    if risks.len() < 2 {
        return Err(CmtaError::contract(format!("stratify needs at least 2 risks, got {}", risks.len())));
    }
    let mut sorted = risks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(risks
        .iter()
        .map(|&r| if r <= median { RiskGroup::Low } else { RiskGroup::High })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cindex_perfect_and_reversed() {
        let t = [1.0, 2.0, 3.0];
        let c = [false; 3];
        assert_eq!(concordance_index(&[3.0, 2.0, 1.0], &t, &c).unwrap(), 1.0);
        assert_eq!(concordance_index(&[1.0, 2.0, 3.0], &t, &c).unwrap(), 0.0);
    }

    #[test]
    fn cindex_ties_and_censoring() {
        let v = concordance_index(&[2.0, 2.0, 1.0], &[1.0, 2.0, 3.0], &[false, false, true]).unwrap();
        assert!((v - 2.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn cindex_undefined() {
        assert!(matches!(
            concordance_index(&[1.0, 2.0], &[1.0, 2.0], &[true, true]),
            Err(CmtaError::UndefinedStatistic(_))
        ));
        assert!(matches!(concordance_index(&[1.0], &[1.0], &[false]), Err(CmtaError::UndefinedStatistic(_))));
    }

    #[test]
    fn km_all_censored() {
        let km = kaplan_meier(&[1.0, 2.0], &[true, true]).unwrap();
        assert_eq!(km.survival, vec![1.0, 1.0]);
    }

    #[test]
    fn km_all_events() {
        let km = kaplan_meier(&[1.0, 2.0, 3.0], &[false; 3]).unwrap();
        assert!((km.survival[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((km.survival[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.survival[2], 0.0);
        assert_eq!(km.at_risk, vec![3, 2, 1]);
    }

    #[test]
    fn km_middle_censored() {
        let km = kaplan_meier(&[1.0, 2.0, 3.0], &[false, true, false]).unwrap();
        assert!((km.survival_at(1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((km.survival_at(2.5) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(km.at_risk[2], 1);
        assert_eq!(km.survival_at(3.0), 0.0);
        assert_eq!(km.survival_at(0.5), 1.0);
    }

    #[test]
    fn logrank_identical_groups() {
        let t = [1.0, 2.0, 3.0];
        let c = [false, true, false];
        let r = logrank_test(&t, &c, &t, &c).unwrap();
        assert!(r.chi_square.abs() < 1e-15);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn logrank_separated_groups() {
        // hand trace: t=1 r=4 rA=2 → E=1/2, V=1/4; t=2 r=3 rA=1 → E=1/3, V=2/9
        let r = logrank_test(&[1.0, 2.0], &[false; 2], &[3.0, 4.0], &[false; 2]).unwrap();
        assert!((r.chi_square - 49.0 / 17.0).abs() < 1e-12);
        let swapped = logrank_test(&[3.0, 4.0], &[false; 2], &[1.0, 2.0], &[false; 2]).unwrap();
        assert!((swapped.chi_square - r.chi_square).abs() < 1e-12);
        assert!((swapped.p_value - r.p_value).abs() < 1e-12);
    }

    #[test]
    fn chi_square_tail_reference_points() {
        assert!((chi_square_sf_1df(3.841_458_820_694_124) - 0.05).abs() < 1e-10);
        assert!((chi_square_sf_1df(6.634_896_601_021_214) - 0.01).abs() < 1e-10);
    }

    #[test]
    fn logrank_no_events() {
        let r = logrank_test(&[1.0], &[true], &[2.0], &[true]);
        assert!(matches!(r, Err(CmtaError::UndefinedStatistic(_))));
    }

    #[test]
    fn stratify_examples() {
        use RiskGroup::*;
        assert_eq!(stratify(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![Low, Low, High, High]);
        assert_eq!(stratify(&[1.0, 1.0, 1.0]).unwrap(), vec![Low, Low, Low]);
        assert_eq!(stratify(&[5.0, 1.0, 3.0]).unwrap(), vec![High, Low, Low]);
    }
}
