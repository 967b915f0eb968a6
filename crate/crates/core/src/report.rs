//! File formats and rendered tables.
//!
//! The record file is CSV with a header row and these columns, in order:
//!
//! ```text
//! domain,prompt_id,step_index,depth,position_bin,token,p_draft,p_target,alpha,target_entropy
//! ```
//!
//! `token` is the vocabulary index. Floats are written in scientific notation
//! with 17 significant digits, so a write/read cycle is lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{
    depth_profile, position_effects, summarize, summarize_pooled, DepthProfile, DomainSummary,
    NodeRecord, PositionEffects,
};
use crate::model::TokenId;
use crate::runner::ExperimentReport;

pub const RECORD_COLUMNS: [&str; 10] = [
    "domain",
    "prompt_id",
    "step_index",
    "depth",
    "position_bin",
    "token",
    "p_draft",
    "p_target",
    "alpha",
    "target_entropy",
];

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("record file: {e}"))
}

pub fn write_records<W: Write>(records: &[NodeRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_COLUMNS).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.domain.clone(),
            r.prompt_id.to_string(),
            r.step_index.to_string(),
            r.depth.to_string(),
            r.position_bin.to_string(),
            r.token.to_string(),
            float(r.p_draft),
            float(r.p_target),
            float(r.alpha),
            float(r.target_entropy),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<record writer>", e))
}

pub fn records_to_csv(records: &[NodeRecord]) -> String {
    let mut buf = Vec::new();
    write_records(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is UTF-8")
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<NodeRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(RECORD_COLUMNS) {
        return Err(Error::Parse(format!(
            "record header {:?} does not match {:?}",
            header.iter().collect::<Vec<_>>(),
            RECORD_COLUMNS
        )));
    }
    rdr.records()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(csv_err)?;
            let line = i + 2;
            let field = |c: usize| row.get(c).unwrap_or_default();
            fn num<T: std::str::FromStr>(s: &str, col: &str, line: usize) -> Result<T> {
                s.parse()
                    .map_err(|_| Error::Parse(format!("line {line}: bad {col} {s:?}")))
            }
            let p = |c: usize| num::<f64>(field(c), RECORD_COLUMNS[c], line);
            let record = NodeRecord {
                domain: field(0).to_string(),
                prompt_id: num(field(1), "prompt_id", line)?,
                step_index: num(field(2), "step_index", line)?,
                depth: num(field(3), "depth", line)?,
                position_bin: num(field(4), "position_bin", line)?,
                token: TokenId(num(field(5), "token", line)?),
                p_draft: p(6)?,
                p_target: p(7)?,
                alpha: p(8)?,
                target_entropy: p(9)?,
            };
            if record.position_bin > 1 || record.depth == 0 {
                return Err(Error::Parse(format!("line {line}: depth or bin out of range")));
            }
            Ok(record)
        })
        .collect()
}

pub fn summary_json(summaries: &BTreeMap<String, DomainSummary>) -> String {
    serde_json::to_string_pretty(summaries).expect("summaries serialize")
}

pub fn parse_summary_json(text: &str) -> Result<BTreeMap<String, DomainSummary>> {
    serde_json::from_str(text).map_err(|e| Error::Parse(format!("summary: {e}")))
}

fn max_depth(summaries: &BTreeMap<String, DomainSummary>) -> usize {
    summaries
        .values()
        .filter_map(|s| s.per_depth_alpha.keys().next_back().copied())
        .max()
        .unwrap_or(0)
}

/// Node count, mean and spread of alpha, and mean entropy per domain, with a
/// pooled row.
pub fn render_summary_table(
    summaries: &BTreeMap<String, DomainSummary>,
    pooled: Option<&DomainSummary>,
) -> String {
    let mut out = String::from("Per-domain node statistics (alpha: acceptance, H: target entropy in nats)\n");
    let _ = writeln!(out, "{:<12}{:>10}{:>10}{:>10}{:>10}", "Domain", "Nodes", "mean a", "sd a", "mean H");
    let row = |out: &mut String, name: &str, s: &DomainSummary| {
        let _ = writeln!(
            out,
            "{:<12}{:>10}{:>10.4}{:>10.4}{:>10.4}",
            name, s.node_count, s.mean_alpha, s.std_alpha, s.mean_entropy
        );
    };
    for (d, s) in summaries {
        row(&mut out, d, s);
    }
    if let Some(p) = pooled {
        row(&mut out, "All", p);
    }
    out
}

/// Regime label for an expected accepted length.
pub fn speedup_regime(expected_len: f64) -> &'static str {
    if expected_len > 1.0 {
        "Positive"
    } else if expected_len >= 0.95 {
        "Marginal"
    } else {
        "Negative"
    }
}

/// Expected accepted length per domain, highest first.
pub fn render_expected_length_table(summaries: &BTreeMap<String, DomainSummary>) -> String {
    let mut out = String::from("Expected accepted length per target call\n");
    let _ = writeln!(out, "{:<12}{:>8}  Regime", "Domain", "E[L]");
    let mut rows: Vec<(&String, &DomainSummary)> = summaries.iter().collect();
    rows.sort_by(|a, b| b.1.expected_len.total_cmp(&a.1.expected_len).then(a.0.cmp(b.0)));
    for (d, s) in rows {
        let _ = writeln!(
            out,
            "{:<12}{:>8.3}  {}",
            d,
            s.expected_len,
            speedup_regime(s.expected_len)
        );
    }
    out
}

/// Probability that a chain of length d is fully accepted.
pub fn render_chain_table(summaries: &BTreeMap<String, DomainSummary>) -> String {
    let depth = max_depth(summaries);
    let mut out = String::from("Probability of a fully accepted chain of length d\n");
    let _ = write!(out, "{:<12}", "Domain");
    for d in 1..=depth {
        let _ = write!(out, "{:>8}", format!("d={d}"));
    }
    out.push('\n');
    let mut rows: Vec<(&String, &DomainSummary)> = summaries.iter().collect();
    rows.sort_by(|a, b| b.1.expected_len.total_cmp(&a.1.expected_len).then(a.0.cmp(b.0)));
    for (d, s) in rows {
        let _ = write!(out, "{d:<12}");
        for k in 1..=depth {
            match s.chain_prob.get(&k) {
                Some(p) => { let _ = write!(out, "{p:>8.3}"); }
                None => { let _ = write!(out, "{:>8}", "-"); }
            }
        }
        out.push('\n');
    }
    out
}

/// Mean alpha at each depth per domain, with the first-to-last depth change.
pub fn render_depth_table(profile: &DepthProfile) -> String {
    let depth = profile.cells.keys().map(|(_, d)| *d).max().unwrap_or(0);
    let mut out = String::from("Mean acceptance at each tree depth\n");
    let _ = write!(out, "{:<12}", "Domain");
    for d in 1..=depth {
        let _ = write!(out, "{d:>8}");
    }
    let _ = writeln!(out, "{:>10}", format!("D1->{}", depth.max(1)));
    let domains: Vec<&String> = {
        let mut v: Vec<&String> = profile.cells.keys().map(|(d, _)| d).collect();
        v.dedup();
        v
    };
    for dom in domains {
        let _ = write!(out, "{dom:<12}");
        for d in 1..=depth {
            match profile.cells.get(&(dom.clone(), d)) {
                Some(a) => { let _ = write!(out, "{a:>8.3}"); }
                None => { let _ = write!(out, "{:>8}", "-"); }
            }
        }
        match profile.delta.get(dom) {
            Some(x) => { let _ = writeln!(out, "{x:>+10.3}"); }
            None => { let _ = writeln!(out, "{:>10}", "-"); }
        }
    }
    out
}

/// Mean alpha per (depth, position bin) pooled over domains.
pub fn render_position_table(effects: &PositionEffects) -> String {
    let mut out = String::from("Mean acceptance by depth and position bin (0 = early, 1 = late)\n");
    let _ = writeln!(out, "{:<8}{:>10}{:>10}{:>10}", "Depth", "Early", "Late", "Delta");
    let mut depths: Vec<usize> = effects.cells.keys().map(|(d, _)| *d).collect();
    depths.dedup();
    let cell = |d: usize, b: u8| {
        effects
            .cells
            .get(&(d, b))
            .map_or_else(|| "-".to_string(), |a| format!("{a:.3}"))
    };
    for d in depths {
        let delta = effects
            .delta
            .get(&d)
            .map_or_else(|| "-".to_string(), |x| format!("{x:+.3}"));
        let _ = writeln!(out, "{:<8}{:>10}{:>10}{:>10}", d, cell(d, 0), cell(d, 1), delta);
    }
    out
}

/// Spearman correlation between target entropy and alpha per domain.
pub fn render_correlation_table(summaries: &BTreeMap<String, DomainSummary>) -> String {
    let mut out = String::from("Spearman rho between target entropy and acceptance\n");
    let _ = writeln!(out, "{:<12}{:>10}", "Domain", "rho(H,a)");
    for (d, s) in summaries {
        let rho = s
            .spearman_rho
            .map_or_else(|| "undefined".to_string(), |r| format!("{r:+.3}"));
        let _ = writeln!(out, "{d:<12}{rho:>10}");
    }
    out
}

/// All six tables computed from a record set.
pub fn render_tables(records: &[NodeRecord]) -> Result<String> {
    let summaries = summarize(records)?;
    let pooled = summarize_pooled(records)?;
    Ok([
        render_summary_table(&summaries, pooled.as_ref()),
        render_expected_length_table(&summaries),
        render_chain_table(&summaries),
        render_depth_table(&depth_profile(records)),
        render_position_table(&position_effects(records)),
        render_correlation_table(&summaries),
    ]
    .join("\n"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// `records.csv`
    Csv,
    /// `summary.json`, `run.json` and `prompts.jsonl`
    Json,
    /// `tables.txt`
    Tables,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Tables];
}

fn write_file(path: PathBuf, contents: &[u8]) -> Result<PathBuf> {
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes the requested report files into `dir`, creating it if needed, and
/// returns the paths written.
pub fn emit_report(report: &ExperimentReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for format in formats {
        match format {
            ReportFormat::Csv => {
                written.push(write_file(dir.join("records.csv"), records_to_csv(&report.records).as_bytes())?);
            }
            ReportFormat::Json => {
                written.push(write_file(dir.join("summary.json"), summary_json(&report.summaries).as_bytes())?);
                let run = serde_json::json!({
                    "metadata": report.metadata,
                    "config": report.config,
                    "pooled": report.pooled,
                });
                let run = serde_json::to_string_pretty(&run).expect("metadata serializes");
                written.push(write_file(dir.join("run.json"), run.as_bytes())?);
                let manifest: String = report.prompt_sets.iter().map(|p| p.manifest()).collect();
                written.push(write_file(dir.join("prompts.jsonl"), manifest.as_bytes())?);
            }
            ReportFormat::Tables => {
                written.push(write_file(dir.join("tables.txt"), render_tables(&report.records)?.as_bytes())?);
            }
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(domain: &str, depth: usize, alpha: f64, h: f64) -> NodeRecord {
        NodeRecord {
            domain: domain.into(),
            prompt_id: 3,
            step_index: 9,
            depth,
            position_bin: 0,
            token: TokenId(12),
            p_draft: 0.3,
            p_target: 0.1,
            alpha,
            target_entropy: h,
        }
    }

    #[test]
    fn empty_records_give_headers_only() {
        assert_eq!(records_to_csv(&[]), format!("{}\n", RECORD_COLUMNS.join(",")));
        let tables = render_tables(&[]).unwrap();
        assert!(tables.contains("Domain"));
        assert!(tables.contains("Depth"));
        assert!(read_records(records_to_csv(&[]).as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn csv_is_lossless() {
        let rs = vec![
            rec("a,b", 1, 1.0 / 3.0, std::f64::consts::LN_2),
            rec("c", 2, 0.1 + 0.2, 1e-300),
        ];
        let text = records_to_csv(&rs);
        assert!(text.contains("3.3333333333333331e-1"));
        assert_eq!(read_records(text.as_bytes()).unwrap(), rs);
    }

    #[test]
    fn bad_header_and_rows_rejected() {
        assert!(read_records("a,b\n1,2\n".as_bytes()).is_err());
        let mut text = records_to_csv(&[rec("x", 1, 0.5, 0.1)]);
        text = text.replace(",1,0,12,", ",1,7,12,");
        assert!(read_records(text.as_bytes()).is_err());
    }

    #[test]
    fn depth_table_layout() {
        let mut cells = BTreeMap::new();
        let mut delta = BTreeMap::new();
        for (dom, a) in [("chat", [0.567, 0.553, 0.588]), ("math", [0.510, 0.519, 0.525])] {
            for (i, v) in a.iter().enumerate() {
                cells.insert((dom.to_string(), i + 1), *v);
            }
            delta.insert(dom.to_string(), a[2] - a[0]);
        }
        let text = render_depth_table(&DepthProfile { cells, delta });
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1].split_whitespace().collect::<Vec<_>>(), ["Domain", "1", "2", "3", "D1->3"]);
        assert_eq!(
            lines[2].split_whitespace().collect::<Vec<_>>(),
            ["chat", "0.567", "0.553", "0.588", "+0.021"]
        );
        assert!(lines[3].ends_with("+0.015"));
    }

    #[test]
    fn regimes() {
        assert_eq!(speedup_regime(1.065), "Positive");
        assert_eq!(speedup_regime(0.975), "Marginal");
        assert_eq!(speedup_regime(0.914), "Negative");
    }
}
