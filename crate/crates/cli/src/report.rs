//! Report assembly and emission: JSON ledger, summary CSV, appendix table,
//! density curves and phonestheme tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use signform_core::infotheory::Systematicity;
use signform_core::phonesthemes::{AffixCandidate, Side};
use signform_core::stats::{self, Bandwidth, KdeCurve};

use crate::config::RunConfig;
use crate::error::{CliError, ErrorRecord, Result};
use crate::pipeline::LanguageSummary;

pub const REPORT_FORMAT: &str = "signform-report";
pub const REPORT_VERSION: u32 = 1;

pub const REPORT_CSV_HEADER: [&str; 8] =
    ["language", "H(W)", "MI(W;V)", "U(W|V)", "cohens_d", "MI(W;V|POS)", "U(W|V;POS)", "cohens_d_pos"];
pub const APPENDIX_HEADER: [&str; 4] = ["language", "H(W)", "U(W|V)", "U(W|V;POS)"];
pub const PHONESTHEME_HEADER: [&str; 5] = ["language", "phonestheme", "count", "examples", "p_value"];
pub const PHONESTHEME_DETAIL_HEADER: [&str; 9] =
    ["language", "side", "affix", "count", "avg_pmi", "p", "p_adjusted", "significant", "examples"];
pub const DENSITY_HEADER: [&str; 3] = ["quantity", "x", "density"];

/// Verdicts after Benjamini–Hochberg correction across the languages of the run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub mi: Option<bool>,
    pub mi_p_adjusted: Option<f64>,
    pub mi_given_pos: Option<bool>,
    pub mi_given_pos_p_adjusted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageEntry {
    #[serde(flatten)]
    pub summary: LanguageSummary,
    pub significance: Significance,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub languages: usize,
    pub mean_h_w: Option<f64>,
    pub mean_mi: Option<f64>,
    pub mean_uncertainty: Option<f64>,
    pub mean_cohens_d: Option<f64>,
    pub mean_mi_given_pos: Option<f64>,
    pub mean_uncertainty_given_pos: Option<f64>,
    pub mean_cohens_d_given_pos: Option<f64>,
    pub significant: usize,
    pub significant_given_pos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub languages: Vec<LanguageEntry>,
    pub failures: Vec<ErrorRecord>,
    pub aggregate: Aggregate,
    pub definitions: BTreeMap<String, String>,
}

fn definitions() -> BTreeMap<String, String> {
    [
        ("entropy", "cross-entropy of the test words in bits per phone, end-of-string included, micro-averaged over phones"),
        ("mi", "H(W) - H(W|V); the POS variant is H(W|POS) - H(W|V,POS)"),
        ("uncertainty", "MI(W;V) / H(W); the POS variant divides by H(W|POS)"),
        ("cohens_d", "mean of the per-word bit savings divided by their sample standard deviation (n - 1)"),
        ("p_value", "one-sided sign-flip permutation p, (r + 1) / (B + 1) with r the flips whose mean is at least the observed"),
        ("significance", "Benjamini-Hochberg at the configured alpha across the languages of the run, per column"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| stats::mean(&v))
}

/// BH over the languages where the column exists.
fn correct(systs: &[Option<&Systematicity>], alpha: f64) -> Result<Vec<(Option<bool>, Option<f64>)>> {
    let present: Vec<usize> = (0..systs.len()).filter(|&i| systs[i].is_some()).collect();
    let mut out = vec![(None, None); systs.len()];
    if present.is_empty() {
        return Ok(out);
    }
    let p: Vec<f64> = present.iter().map(|&i| systs[i].unwrap().permutation.p_value).collect();
    let bh = stats::bh_correct(&p, alpha)?;
    for (j, &i) in present.iter().enumerate() {
        out[i] = (Some(bh.rejected[j]), Some(bh.adjusted[j]));
    }
    Ok(out)
}

impl Report {
    pub fn build(config: &RunConfig, summaries: Vec<LanguageSummary>, failures: Vec<ErrorRecord>) -> Result<Self> {
        let mi: Vec<Option<&Systematicity>> = summaries.iter().map(|s| s.report.systematicity.as_ref()).collect();
        let pos: Vec<Option<&Systematicity>> = summaries.iter().map(|s| s.report.systematicity_given_pos.as_ref()).collect();
        let mi_bh = correct(&mi, config.alpha)?;
        let pos_bh = correct(&pos, config.alpha)?;
        let aggregate = Aggregate {
            languages: summaries.len(),
            mean_h_w: mean_of(summaries.iter().map(|s| Some(s.report.h_w.bits_per_phone))),
            mean_mi: mean_of(mi.iter().map(|s| s.map(|s| s.mi))),
            mean_uncertainty: mean_of(mi.iter().map(|s| s.map(|s| s.uncertainty))),
            mean_cohens_d: mean_of(mi.iter().map(|s| s.and_then(|s| s.cohens_d))),
            mean_mi_given_pos: mean_of(pos.iter().map(|s| s.map(|s| s.mi))),
            mean_uncertainty_given_pos: mean_of(pos.iter().map(|s| s.map(|s| s.uncertainty))),
            mean_cohens_d_given_pos: mean_of(pos.iter().map(|s| s.and_then(|s| s.cohens_d))),
            significant: mi_bh.iter().filter(|v| v.0 == Some(true)).count(),
            significant_given_pos: pos_bh.iter().filter(|v| v.0 == Some(true)).count(),
        };
        let languages = summaries
            .into_iter()
            .zip(mi_bh.into_iter().zip(pos_bh))
            .map(|(summary, ((m, mp), (p, pp)))| LanguageEntry {
                summary,
                significance: Significance { mi: m, mi_p_adjusted: mp, mi_given_pos: p, mi_given_pos_p_adjusted: pp },
            })
            .collect();
        Ok(Report {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            config: config.clone(),
            languages,
            failures,
            aggregate,
            definitions: definitions(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Report = serde_json::from_str(text)?;
        if r.format != REPORT_FORMAT || r.version != REPORT_VERSION {
            return Err(CliError::Config(format!("unsupported report {} v{}", r.format, r.version)));
        }
        Ok(r)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// One row per language, the seven quantities unrounded.
pub fn write_report_csv<W: Write>(report: &Report, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_CSV_HEADER)?;
    for e in &report.languages {
        let r = &e.summary.report;
        let s = r.systematicity.as_ref();
        let p = r.systematicity_given_pos.as_ref();
        w.write_record([
            r.language.clone(),
            r.h_w.bits_per_phone.to_string(),
            cell(s.map(|s| s.mi)),
            cell(s.map(|s| s.uncertainty)),
            cell(s.and_then(|s| s.cohens_d)),
            cell(p.map(|s| s.mi)),
            cell(p.map(|s| s.uncertainty)),
            cell(p.and_then(|s| s.cohens_d)),
        ])?;
    }
    w.flush().map_err(|e| CliError::Csv(e.into()))?;
    Ok(())
}

/// Percent with two decimals; `*` marks significance after correction.
pub fn percent_cell(u: Option<f64>, significant: Option<bool>) -> String {
    match u {
        Some(u) => format!("{:.2}%{}", 100.0 * u, if significant == Some(true) { "*" } else { "" }),
        None => String::new(),
    }
}

pub fn write_appendix<W: Write>(report: &Report, mut out: W) -> Result<()> {
    let io = |e| CliError::io(Path::new("appendix.tsv"), e);
    writeln!(out, "{}", APPENDIX_HEADER.join("\t")).map_err(io)?;
    for e in &report.languages {
        let r = &e.summary.report;
        writeln!(
            out,
            "{}\t{:.4}\t{}\t{}",
            r.language,
            r.h_w.bits_per_phone,
            percent_cell(r.systematicity.as_ref().map(|s| s.uncertainty), e.significance.mi),
            percent_cell(r.systematicity_given_pos.as_ref().map(|s| s.uncertainty), e.significance.mi_given_pos),
        )
        .map_err(io)?;
    }
    Ok(())
}

/// Density curves of the per-language MI and uncertainty coefficients;
/// quantities with fewer than two languages are left out.
pub fn density_curves(report: &Report) -> Result<Vec<(&'static str, KdeCurve)>> {
    let pick = |f: &dyn Fn(&LanguageEntry) -> Option<f64>| report.languages.iter().filter_map(f).collect::<Vec<f64>>();
    let series: [(&'static str, Vec<f64>); 4] = [
        ("mi", pick(&|e| e.summary.report.systematicity.as_ref().map(|s| s.mi))),
        ("mi_given_pos", pick(&|e| e.summary.report.systematicity_given_pos.as_ref().map(|s| s.mi))),
        ("uncertainty", pick(&|e| e.summary.report.systematicity.as_ref().map(|s| s.uncertainty))),
        ("uncertainty_given_pos", pick(&|e| e.summary.report.systematicity_given_pos.as_ref().map(|s| s.uncertainty))),
    ];
    let mut out = Vec::new();
    for (name, values) in series {
        if values.len() >= 2 {
            out.push((name, stats::kde(&values, Bandwidth::Auto)?));
        }
    }
    Ok(out)
}

pub fn write_density_csv<W: Write>(curves: &[(&str, KdeCurve)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DENSITY_HEADER)?;
    for (name, c) in curves {
        for (x, d) in c.xs.iter().zip(&c.density) {
            w.write_record([name.to_string(), x.to_string(), d.to_string()])?;
        }
    }
    w.flush().map_err(|e| CliError::Csv(e.into()))?;
    Ok(())
}

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 240.0;
const MARGIN: f64 = 40.0;

fn panel(svg: &mut String, x0: f64, title: &str, curves: &[(&str, &KdeCurve, &str)]) {
    let _ = writeln!(svg, r#"<g transform="translate({x0},0)">"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, MARGIN + PANEL_W / 2.0);
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#444"/>"##
    );
    if curves.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">insufficient data</text>"#,
            MARGIN + PANEL_W / 2.0,
            MARGIN + PANEL_H / 2.0
        );
        let _ = writeln!(svg, "</g>");
        return;
    }
    let lo = curves.iter().map(|c| c.1.xs[0]).fold(f64::INFINITY, f64::min);
    let hi = curves.iter().map(|c| *c.1.xs.last().unwrap()).fold(f64::NEG_INFINITY, f64::max);
    let top = curves.iter().flat_map(|c| c.1.density.iter().copied()).fold(0.0, f64::max).max(1e-12);
    let sx = |x: f64| MARGIN + (x - lo) / (hi - lo).max(1e-12) * PANEL_W;
    let sy = |y: f64| MARGIN + PANEL_H - y / top * PANEL_H;
    if lo < 0.0 && hi > 0.0 {
        let _ = writeln!(
            svg,
            r##"<line x1="{0:.2}" y1="{MARGIN}" x2="{0:.2}" y2="{1}" stroke="#bbb" stroke-dasharray="4 3"/>"##,
            sx(0.0),
            MARGIN + PANEL_H
        );
    }
    for (i, (label, c, colour)) in curves.iter().enumerate() {
        let step = (c.xs.len() / 400).max(1);
        let points: Vec<String> = (0..c.xs.len())
            .step_by(step)
            .map(|j| format!("{:.2},{:.2}", sx(c.xs[j]), sy(c.density[j])))
            .collect();
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, points.join(" "));
        let ly = MARGIN + 16.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" font-size="11" fill="{colour}">{label}</text>"#,
            MARGIN + PANEL_W - 120.0
        );
    }
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="{}" font-size="11">{lo:.3}</text>"#, MARGIN + PANEL_H + 16.0);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{hi:.3}</text>"#,
        MARGIN + PANEL_W,
        MARGIN + PANEL_H + 16.0
    );
    let _ = writeln!(svg, "</g>");
}

/// Two panels: MI and uncertainty coefficient densities, each with and
/// without POS control.
pub fn density_svg(curves: &[(&str, KdeCurve)]) -> String {
    let find = |n: &str| curves.iter().find(|c| c.0 == n).map(|c| &c.1);
    let series = |a: &'static str, b: &'static str, la: &'static str, lb: &'static str| {
        let mut v = Vec::new();
        if let Some(c) = find(a) {
            v.push((la, c, "#1f77b4"));
        }
        if let Some(c) = find(b) {
            v.push((lb, c, "#d62728"));
        }
        v
    };
    let width = 2.0 * (PANEL_W + 2.0 * MARGIN);
    let height = PANEL_H + 2.0 * MARGIN + 10.0;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    panel(&mut svg, 0.0, "MI (bits/phone)", &series("mi", "mi_given_pos", "MI(W;V)", "MI(W;V|POS)"));
    panel(
        &mut svg,
        PANEL_W + 2.0 * MARGIN,
        "Uncertainty coefficient",
        &series("uncertainty", "uncertainty_given_pos", "U(W|V)", "U(W|V;POS)"),
    );
    svg.push_str("</svg>\n");
    svg
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// `report.json`, `report.csv` and `appendix.tsv`; with `density`, also
/// `mi_density.csv` and `mi_density.svg`.
pub fn write_all(report: &Report, dir: &Path, density: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_file(&dir.join("report.json"), report.to_json()?.as_bytes())?;
    let mut csv = Vec::new();
    write_report_csv(report, &mut csv)?;
    write_file(&dir.join("report.csv"), &csv)?;
    let mut tsv = Vec::new();
    write_appendix(report, &mut tsv)?;
    write_file(&dir.join("appendix.tsv"), &tsv)?;
    if density {
        let curves = density_curves(report)?;
        let mut dcsv = Vec::new();
        write_density_csv(&curves, &mut dcsv)?;
        write_file(&dir.join("mi_density.csv"), &dcsv)?;
        write_file(&dir.join("mi_density.svg"), density_svg(&curves).as_bytes())?;
    }
    Ok(())
}

/// `gl-` for prefixes, `-ing` for suffixes.
pub fn affix_label(c: &AffixCandidate) -> String {
    match c.side {
        Side::Prefix => format!("{}-", c.affix),
        Side::Suffix => format!("-{}", c.affix),
    }
}

pub fn p_display(p: f64) -> String {
    if p < 1e-5 {
        "<0.00001".to_string()
    } else {
        format!("{p:.5}")
    }
}

/// Significant affixes only, ordered by adjusted p, with the adjusted p shown.
pub fn write_phonesthemes<W: Write>(rows: &[(String, Vec<AffixCandidate>)], mut out: W) -> Result<()> {
    let io = |e| CliError::io(Path::new("phonesthemes.tsv"), e);
    writeln!(out, "{}", PHONESTHEME_HEADER.join("\t")).map_err(io)?;
    for (lang, cands) in rows {
        for c in cands.iter().filter(|c| c.bh_significant) {
            writeln!(out, "{lang}\t{}\t{}\t{}\t{}", affix_label(c), c.count, c.example_lemmata.join(", "), p_display(c.p_adjusted))
                .map_err(io)?;
        }
    }
    Ok(())
}

/// Every tested candidate with unrounded statistics.
pub fn write_phonesthemes_detail<W: Write>(rows: &[(String, Vec<AffixCandidate>)], mut out: W) -> Result<()> {
    let io = |e| CliError::io(Path::new("phonesthemes_detail.tsv"), e);
    writeln!(out, "{}", PHONESTHEME_DETAIL_HEADER.join("\t")).map_err(io)?;
    for (lang, cands) in rows {
        for c in cands {
            writeln!(
                out,
                "{lang}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                c.side.name(),
                c.affix,
                c.count,
                c.avg_pmi,
                c.p_value,
                c.p_adjusted,
                c.bh_significant,
                c.example_lemmata.join(", ")
            )
            .map_err(io)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_rounding() {
        assert_eq!(percent_cell(Some(0.0324), Some(true)), "3.24%*");
        assert_eq!(percent_cell(Some(-0.0026), Some(false)), "-0.26%");
        assert_eq!(percent_cell(None, None), "");
        assert_eq!(p_display(0.00046), "0.00046");
        assert_eq!(p_display(5e-6), "<0.00001");
    }

    #[test]
    fn empty_density_svg_says_so() {
        let svg = density_svg(&[]);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("insufficient data").count(), 2);
    }
}
