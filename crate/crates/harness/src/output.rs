//! CSV traces, summaries and SVG line plots.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};
use crate::runner::{curves, labels, summarize, Curves, RunRecord, StepRow};

pub const TRACE_HEADER: [&str; 7] = [
    "t",
    "action",
    "reward",
    "instant_regret",
    "cumulative_regret",
    "dictionary_size",
    "step_wall_time_ns",
];

const ERROR_MARKER: &str = "# error: ";

pub fn trace_file_name(record: &RunRecord) -> String {
    format!("trace_{}_{}.csv", record.label, record.seed)
}

/// Writes one trace. A failed run ends with a `# error: ...` line after the
/// completed rounds.
pub fn write_trace(record: &RunRecord, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRACE_HEADER)?;
    for s in &record.steps {
        w.write_record([
            s.t.to_string(),
            s.action.to_string(),
            s.reward.to_string(),
            s.regret.to_string(),
            s.cumulative_regret.to_string(),
            s.dictionary_size.to_string(),
            s.wall_ns.to_string(),
        ])?;
    }
    w.flush()?;
    drop(w);
    if let Some(err) = &record.error {
        let mut f = fs::OpenOptions::new().append(true).open(path)?;
        writeln!(f, "{ERROR_MARKER}{}", err.replace('\n', " "))?;
    }
    Ok(())
}

/// Reads a trace back: the rows and the error marker, if any.
pub fn read_trace(path: &Path) -> Result<(Vec<StepRow>, Option<String>)> {
    let text = fs::read_to_string(path)?;
    let error = text
        .lines()
        .find_map(|l| l.strip_prefix(ERROR_MARKER))
        .map(str::to_string);
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().ne(TRACE_HEADER.iter().copied()) {
        return Err(HarnessError::Config(format!(
            "{}: unexpected trace header",
            path.display()
        )));
    }
    let bad = |what: &str| HarnessError::Config(format!("{}: bad {what}", path.display()));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| bad("row"));
        rows.push(StepRow {
            t: field(0)?.parse().map_err(|_| bad("t"))?,
            action: field(1)?.parse().map_err(|_| bad("action"))?,
            reward: field(2)?.parse().map_err(|_| bad("reward"))?,
            regret: field(3)?.parse().map_err(|_| bad("instant_regret"))?,
            cumulative_regret: field(4)?.parse().map_err(|_| bad("cumulative_regret"))?,
            dictionary_size: field(5)?.parse().map_err(|_| bad("dictionary_size"))?,
            wall_ns: field(6)?.parse().map_err(|_| bad("step_wall_time_ns"))?,
        });
    }
    Ok((rows, error))
}

pub fn write_summary(records: &[RunRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "label",
        "policy",
        "seeds",
        "failed",
        "status",
        "regret_mean",
        "regret_std",
        "wall_time_mean_s",
        "wall_time_std_s",
        "final_m_mean",
    ])?;
    for row in summarize(records) {
        w.write_record([
            row.label.clone(),
            row.policy.clone(),
            row.seeds.to_string(),
            row.failed.to_string(),
            row.status().to_string(),
            row.regret_mean.to_string(),
            row.regret_std.to_string(),
            row.wall_mean_s.to_string(),
            row.wall_std_s.to_string(),
            row.final_m_mean.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Anchors of a dumped dictionary: index, round of inclusion, sampling
/// probability, then the context and action coordinates.
pub fn write_dictionary(record: &RunRecord, path: &Path) -> Result<bool> {
    let Some(dump) = &record.dictionary else {
        return Ok(false);
    };
    let mut w = csv::Writer::from_path(path)?;
    let (p, q) = dump.anchors.first().map_or((0, 0), |a| a.dims());
    let mut header = vec!["index".to_string(), "inserted_at".into(), "prob".into()];
    header.extend((0..p).map(|i| format!("x{i}")));
    header.extend((0..q).map(|i| format!("a{i}")));
    w.write_record(&header)?;
    for (i, a) in dump.anchors.iter().enumerate() {
        let mut row = vec![
            i.to_string(),
            dump.inserted_at[i].to_string(),
            dump.probs[i].to_string(),
        ];
        row.extend(a.coords().map(|c| c.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(true)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const MAX_POINTS: usize = 400;

/// Minimal line plot: one shaded band and one polyline per series.
pub fn line_plot_svg(title: &str, y_label: &str, series: &[(String, Vec<f64>, Vec<f64>)]) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (70.0, 160.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let n = series.iter().map(|s| s.1.len()).max().unwrap_or(0).max(2);
    let y_max = series
        .iter()
        .flat_map(|(_, m, s)| m.iter().zip(s).map(|(a, b)| a + b))
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let px = |i: usize| left + pw * i as f64 / (n - 1) as f64;
    let py = |v: f64| top + ph * (1.0 - (v / y_max).clamp(0.0, 1.0));

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        left + pw / 2.0,
        escape(title)
    );
    svg += &format!(
        "<line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{left}\" y1=\"{top}\" x2=\"{left}\" y2=\"{}\" stroke=\"black\"/>\n",
        top + ph,
        left + pw,
        top + ph,
        top + ph
    );
    svg += &format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">t</text>\n\
         <text x=\"{left}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">1</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{}</text>\n\
         <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">0</text>\n\
         <text x=\"16\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">{}</text>\n",
        left + pw / 2.0,
        h - 12.0,
        top + ph + 16.0,
        left + pw,
        top + ph + 16.0,
        n,
        left - 6.0,
        top + 4.0,
        fmt_tick(y_max),
        left - 6.0,
        top + ph,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    );
    for (k, (name, mean, std)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let idx = sample_indices(mean.len());
        if !idx.is_empty() {
            let upper = idx.iter().map(|&i| format!("{:.2},{:.2}", px(i), py(mean[i] + std[i])));
            let lower = idx.iter().rev().map(|&i| format!("{:.2},{:.2}", px(i), py(mean[i] - std[i])));
            let band: Vec<String> = upper.chain(lower).collect();
            svg += &format!(
                "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>\n",
                band.join(" ")
            );
            let line: Vec<String> = idx.iter().map(|&i| format!("{:.2},{:.2}", px(i), py(mean[i]))).collect();
            svg += &format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
                line.join(" ")
            );
        }
        let ly = top + 16.0 * (k as f64 + 1.0);
        svg += &format!(
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"3\" fill=\"{color}\"/>\n\
             <text x=\"{}\" y=\"{}\" font-size=\"12\">{}</text>\n",
            left + pw + 12.0,
            ly - 4.0,
            left + pw + 30.0,
            ly,
            escape(name)
        );
    }
    svg += "</svg>\n";
    svg
}

fn sample_indices(len: usize) -> Vec<usize> {
    if len <= MAX_POINTS {
        return (0..len).collect();
    }
    let mut idx: Vec<usize> = (0..MAX_POINTS).map(|k| k * (len - 1) / (MAX_POINTS - 1)).collect();
    idx.dedup();
    idx
}

fn fmt_tick(v: f64) -> String {
    if v >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes every trace, `summary.csv`, `regret.svg`, `time.svg` and, for
/// records that carry one, `dictionary_<label>_<seed>.csv`.
pub fn emit_outputs(records: &[RunRecord], output_dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(HarnessError::Config("no records to write".into()));
    }
    fs::create_dir_all(output_dir)?;
    let mut paths = Vec::new();
    for r in records {
        let p = output_dir.join(trace_file_name(r));
        write_trace(r, &p)?;
        paths.push(p);
        let d = output_dir.join(format!("dictionary_{}_{}.csv", r.label, r.seed));
        if write_dictionary(r, &d)? {
            paths.push(d);
        }
    }
    let p = output_dir.join("summary.csv");
    write_summary(records, &p)?;
    paths.push(p);

    let all: Vec<(String, Curves)> = labels(records)
        .into_iter()
        .map(|l| {
            let c = curves(records, &l);
            (l, c)
        })
        .collect();
    let regret: Vec<_> = all
        .iter()
        .map(|(l, c)| (l.clone(), c.regret_mean.clone(), c.regret_std.clone()))
        .collect();
    let time: Vec<_> = all
        .iter()
        .map(|(l, c)| (l.clone(), c.time_mean.clone(), c.time_std.clone()))
        .collect();
    let p = output_dir.join("regret.svg");
    fs::write(&p, line_plot_svg("Cumulative regret", "regret", &regret))?;
    paths.push(p);
    let p = output_dir.join("time.svg");
    fs::write(&p, line_plot_svg("Cumulative running time", "seconds", &time))?;
    paths.push(p);
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: &str, seed: u64, n: usize, error: Option<&str>) -> RunRecord {
        let mut cum = 0.0;
        RunRecord {
            label: label.into(),
            policy: "ekucb".into(),
            seed,
            steps: (1..=n)
                .map(|t| {
                    let regret = 0.1 / t as f64 + seed as f64 * 1e-3;
                    cum += regret;
                    StepRow {
                        t,
                        action: t % 5,
                        reward: (t as f64).sin() / 3.0,
                        regret,
                        cumulative_regret: cum,
                        dictionary_size: t / 2,
                        wall_ns: 1000 + t as u64,
                    }
                })
                .collect(),
            error: error.map(str::to_string),
            dictionary: None,
        }
    }

    #[test]
    fn trace_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let r = record("x", 3, 50, None);
        let p = dir.path().join("t.csv");
        write_trace(&r, &p).unwrap();
        let (rows, err) = read_trace(&p).unwrap();
        assert_eq!(rows, r.steps);
        assert!(err.is_none());
    }

    #[test]
    fn error_marker_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = record("x", 0, 4, Some("t=5: numerical inconsistency"));
        let p = dir.path().join("t.csv");
        write_trace(&r, &p).unwrap();
        let (rows, err) = read_trace(&p).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(err.as_deref(), Some("t=5: numerical inconsistency"));
    }

    #[test]
    fn one_record_gives_three_parseable_files() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_outputs(&[record("only", 0, 20, None)], dir.path()).unwrap();
        assert_eq!(paths.len(), 4);
        for p in &paths {
            assert!(p.exists());
        }
        read_trace(&dir.path().join("trace_only_0.csv")).unwrap();
        let mut rdr = csv::Reader::from_path(dir.path().join("summary.csv")).unwrap();
        assert_eq!(rdr.records().count(), 1);
        let svg = fs::read_to_string(dir.path().join("regret.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn one_polyline_per_config() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            record("a", 0, 30, None),
            record("a", 1, 30, None),
            record("b", 0, 30, None),
            record("c", 0, 1000, None),
        ];
        emit_outputs(&records, dir.path()).unwrap();
        for f in ["regret.svg", "time.svg"] {
            let svg = fs::read_to_string(dir.path().join(f)).unwrap();
            assert_eq!(svg.matches("<polyline").count(), 3);
        }
    }

    #[test]
    fn failed_cells_are_marked_in_summary() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![record("a", 0, 10, None), record("a", 1, 3, Some("boom")), record("b", 0, 0, Some("boom"))];
        emit_outputs(&records, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(text.contains(",partial,"));
        assert!(text.contains(",failed,"));
    }

    #[test]
    fn empty_and_unwritable() {
        assert!(emit_outputs(&[], Path::new("/tmp")).is_err());
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        fs::write(&file, "x").unwrap();
        assert!(matches!(
            emit_outputs(&[record("a", 0, 2, None)], &file.join("sub")),
            Err(HarnessError::Io(_))
        ));
    }
}
