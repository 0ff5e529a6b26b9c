//! Output artefacts: metrics JSON, loss logs, Kaplan-Meier CSV and SVG.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{CmtaError, Result};
use crate::fsio::write_atomic;
use crate::survival::{KmCurve, RiskGroup};
use crate::train::EpochLog;

/// Version of every JSON document the CLI writes.
pub const SCHEMA_VERSION: u32 = 1;

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CmtaError::contract(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn loss_log_csv(folds: &[(usize, &[EpochLog])]) -> String {
    let mut out = String::from("fold,epoch,total,sur,sim\n");
    for (fold, log) in folds {
        for e in log.iter() {
            let _ = writeln!(out, "{fold},{},{},{},{}", e.epoch, e.total, e.sur, e.sim);
        }
    }
    out
}

pub fn km_csv(curves: &[(RiskGroup, &KmCurve)]) -> String {
    let mut out = String::from("group,time,at_risk,events,survival\n");
    for (group, c) in curves {
        for i in 0..c.len() {
            let _ = writeln!(out, "{},{},{},{},{}", group.as_str(), c.times[i], c.at_risk[i], c.events[i], c.survival[i]);
        }
    }
    out
}

/// Step plot of the group curves with a p-value caption.
pub fn km_svg(curves: &[(RiskGroup, &KmCurve)], p_value: f64) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let t_max = curves
        .iter()
        .flat_map(|(_, c)| c.times.iter().copied())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let x = |t: f64| pad + (w - 2.0 * pad) * t / t_max;
    let y = |s: f64| h - pad - (h - 2.0 * pad) * s;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{pad} {top} V{base} H{right}" stroke="black" fill="none"/>"#,
        top = pad,
        base = h - pad,
        right = w - pad
    );
    for (frac, label) in [(0.0, "0"), (0.5, "0.5"), (1.0, "1")] {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{label}</text>"#, pad - 6.0, y(frac) + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">time (months), max {t_max:.1}</text>"#, w / 2.0, h - 15.0);
    for (group, c) in curves {
        let colour = match group {
            RiskGroup::Low => "#1f77b4",
            RiskGroup::High => "#d62728",
        };
        let mut d = format!("M{:.2} {:.2}", x(0.0), y(1.0));
        let mut s = 1.0;
        for i in 0..c.len() {
            let _ = write!(d, " H{:.2}", x(c.times[i]));
            if c.survival[i] != s {
                s = c.survival[i];
                let _ = write!(d, " V{:.2}", y(s));
            }
        }
        let _ = writeln!(svg, r#"<path d="{d}" stroke="{colour}" stroke-width="2" fill="none"/>"#);
        let ly = if *group == RiskGroup::Low { pad + 10.0 } else { pad + 28.0 };
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" font-size="13" fill="{colour}">{} risk (n={})</text>"#,
            w - pad - 130.0,
            group.as_str(),
            c.at_risk.first().copied().unwrap_or(0)
        );
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="13">logrank p = {p_value:.3e}</text>"#, pad + 10.0, h - pad - 10.0);
    svg.push_str("</svg>\n");
    svg
}
