//! CSV and JSON report writers. Column schemas are documented in the
//! project README; numbers print through Rust's shortest-round-trip float
//! formatting, so identical values always serialize to identical bytes.

use std::io::Write;
use std::path::Path;

use wrangan_core::eval::{EpsStatsRow, EvalReport, GridRow, StrategyRow, VarianceRow};
use wrangan_core::invert::TraceRow;
use wrangan_core::train::LossRow;

use crate::synthetic::{LabelTable, ATTRIBUTES};

pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{}", header.join(","))?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn fnum(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{}", v)
    }
}

pub fn write_loss_log(path: &Path, rows: &[LossRow]) -> std::io::Result<()> {
    write_csv(
        path,
        &["iteration", "d_loss", "g_loss", "r1"],
        rows.iter().map(|r| {
            vec![r.iteration.to_string(), fnum(r.d_loss), fnum(r.g_loss), fnum(r.r1)]
        }),
    )
}

pub fn write_scalar_log(path: &Path, name: &str, values: &[f64]) -> std::io::Result<()> {
    write_csv(
        path,
        &["iteration", name],
        values.iter().enumerate().map(|(i, v)| vec![i.to_string(), fnum(*v)]),
    )
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> std::io::Result<()> {
    write_csv(
        path,
        &["iteration", "total", "l2", "perceptual", "reg"],
        rows.iter().map(|r| {
            vec![
                r.iteration.to_string(),
                fnum(r.total),
                fnum(r.l2),
                fnum(r.perceptual),
                fnum(r.reg),
            ]
        }),
    )
}

pub fn write_strategy_rows(path: &Path, rows: &[StrategyRow]) -> std::io::Result<()> {
    write_csv(
        path,
        &[
            "image_id",
            "strategy",
            "ok",
            "mse",
            "perceptual",
            "ms_ssim",
            "corruption_fid",
            "corruption_kid",
            "wall_seconds",
            "params_optimized",
        ],
        rows.iter().map(|r| {
            vec![
                r.image_id.to_string(),
                r.strategy.name().to_string(),
                r.ok.to_string(),
                fnum(r.mse),
                fnum(r.perceptual),
                fnum(r.ms_ssim),
                fnum(r.corruption_fid),
                fnum(r.corruption_kid),
                fnum(r.wall_seconds),
                r.params_optimized.to_string(),
            ]
        }),
    )
}

pub fn write_grid(path: &Path, rows: &[GridRow]) -> std::io::Result<()> {
    write_csv(
        path,
        &["n_layers", "alpha", "mean_mse", "images", "randomized_params"],
        rows.iter().map(|r| {
            vec![
                r.n_layers.to_string(),
                fnum(r.alpha),
                fnum(r.mean_mse),
                r.images.to_string(),
                r.randomized_params.to_string(),
            ]
        }),
    )
}

pub fn write_variance_hist(path: &Path, rows: &[VarianceRow]) -> std::io::Result<()> {
    let mut header: Vec<String> = vec!["layer".into(), "elements".into(), "fraction_small".into()];
    for i in 0..wrangan_core::eval::VARIANCE_BINS {
        header.push(format!("bin_{:02}", i));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    write_csv(
        path,
        &header_refs,
        rows.iter().map(|r| {
            let mut row = vec![
                r.layer.clone(),
                r.elements.to_string(),
                fnum(r.fraction_small),
            ];
            row.extend(r.bins.iter().map(|b| b.to_string()));
            row
        }),
    )
}

pub fn write_layer_influence(path: &Path, rows: &[(String, f64)]) -> std::io::Result<()> {
    write_csv(
        path,
        &["layer", "mse"],
        rows.iter().map(|(l, v)| vec![l.clone(), fnum(*v)]),
    )
}

pub fn write_epsilon_stats(path: &Path, rows: &[EpsStatsRow]) -> std::io::Result<()> {
    write_csv(
        path,
        &["layer", "mean", "variance", "ratio_to_prior"],
        rows.iter().map(|r| {
            vec![r.layer.clone(), fnum(r.mean), fnum(r.variance), fnum(r.ratio_to_prior)]
        }),
    )
}

pub fn write_labels(path: &Path, filenames: &[String], labels: &LabelTable) -> std::io::Result<()> {
    let mut header = vec!["image_id", "filename"];
    header.extend(ATTRIBUTES);
    write_csv(
        path,
        &header,
        labels.rows.iter().enumerate().map(|(i, row)| {
            let mut r = vec![i.to_string(), filenames[i].clone()];
            r.extend(row.iter().map(|b| b.to_string()));
            r
        }),
    )
}

pub fn read_labels(path: &Path) -> std::io::Result<LabelTable> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 2 + ATTRIBUTES.len() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("labels row {} has {} cells", i, cells.len()),
            ));
        }
        let mut row = [false; 3];
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = cells[2 + j].trim() == "true";
        }
        rows.push(row);
    }
    Ok(LabelTable { rows })
}

/// Eval report as a small JSON object with deterministic key order.
pub fn report_to_json(report: &EvalReport) -> String {
    let mut s = String::from("{\n");
    s.push_str(&format!("  \"seed\": {},\n", report.seed));
    s.push_str(&format!("  \"config_hash\": \"{}\",\n", report.config_hash));
    s.push_str("  \"values\": {\n");
    let mut sorted = report.values.clone();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for (i, (k, v)) in sorted.iter().enumerate() {
        let comma = if i + 1 < sorted.len() { "," } else { "" };
        s.push_str(&format!("    \"{}\": {}{}\n", k, fnum(*v), comma));
    }
    s.push_str("  }\n}\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(&path, &["a", "b"], vec![vec!["1".into(), "2.5".into()]]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "a,b\n1,2.5\n");
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let table = LabelTable {
            rows: vec![[true, false, true], [false, false, true]],
        };
        let names = vec!["img_000.png".to_string(), "img_001.png".to_string()];
        write_labels(&path, &names, &table).unwrap();
        let back = read_labels(&path).unwrap();
        assert_eq!(back.rows, table.rows);
    }

    #[test]
    fn json_report_is_sorted_and_parseable_shape() {
        let mut r = EvalReport::default();
        r.seed = 3;
        r.config_hash = "ff".into();
        r.push("zeta", 1.5);
        r.push("alpha", -0.25);
        let json = report_to_json(&r);
        let za = json.find("\"alpha\"").unwrap();
        let zz = json.find("\"zeta\"").unwrap();
        assert!(za < zz);
        assert!(json.contains("\"config_hash\": \"ff\""));
    }
}
