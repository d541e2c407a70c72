//! Report emission: accuracy curves, operator contribution bars, a
//! complexity-versus-accuracy scatter, and the persona-by-mechanism grid,
//! each written as an SVG/CSV pair regenerable bit-identically from the
//! tracking exports.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::pipeline::stages::{farm_dir, stage_dir};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn axis_frame(title: &str) -> String {
    format!(
        "<rect x=\"{m}\" y=\"{m}\" width=\"{w}\" height=\"{h}\" fill=\"none\" stroke=\"#333\"/>\n<text x=\"{cx:.1}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n",
        m = MARGIN,
        w = WIDTH - 2.0 * MARGIN,
        h = HEIGHT - 2.0 * MARGIN,
        cx = WIDTH / 2.0,
    )
}

fn svg_document(body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

fn scale(value: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    if (hi - lo).abs() < 1e-12 {
        (out_lo + out_hi) / 2.0
    } else {
        out_lo + (value - lo) / (hi - lo) * (out_hi - out_lo)
    }
}

fn svg_line_chart(title: &str, points: &[(f64, f64)]) -> String {
    let (x_lo, x_hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, _)| {
            (lo.min(*x), hi.max(*x))
        });
    let (y_lo, y_hi) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, y)| {
            (lo.min(*y), hi.max(*y))
        });
    let coords: Vec<String> = points
        .iter()
        .map(|(x, y)| {
            format!(
                "{:.2},{:.2}",
                scale(*x, x_lo, x_hi, MARGIN, WIDTH - MARGIN),
                scale(*y, y_lo, y_hi, HEIGHT - MARGIN, MARGIN),
            )
        })
        .collect();
    let body = format!(
        "{}<polyline points=\"{}\" fill=\"none\" stroke=\"#1a6faf\" stroke-width=\"2\"/>\n",
        axis_frame(title),
        coords.join(" ")
    );
    svg_document(&body)
}

fn svg_bars(title: &str, bars: &[(String, f64)]) -> String {
    let max = bars.iter().map(|(_, v)| v.abs()).fold(1e-12, f64::max);
    let slot = (WIDTH - 2.0 * MARGIN) / bars.len().max(1) as f64;
    let zero_y = HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) / 2.0;
    let mut body = axis_frame(title);
    for (i, (label, value)) in bars.iter().enumerate() {
        let x = MARGIN + i as f64 * slot + slot * 0.15;
        let height = (value.abs() / max) * (HEIGHT - 2.0 * MARGIN) / 2.0;
        let y = if *value >= 0.0 { zero_y - height } else { zero_y };
        body.push_str(&format!(
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"#4c9f70\"/>\n<text x=\"{tx:.2}\" y=\"{ty:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{label}</text>\n",
            w = slot * 0.7,
            h = height.max(0.5),
            tx = x + slot * 0.35,
            ty = HEIGHT - MARGIN + 14.0,
        ));
    }
    svg_document(&body)
}

fn svg_scatter(title: &str, points: &[(f64, f64)]) -> String {
    let (x_lo, x_hi) = points
        .iter()
        .fold((0.0f64, 1e-12f64), |(lo, hi), (x, _)| (lo.min(*x), hi.max(*x)));
    let (y_lo, y_hi) = points
        .iter()
        .fold((0.0f64, 1e-12f64), |(lo, hi), (_, y)| (lo.min(*y), hi.max(*y)));
    let mut body = axis_frame(title);
    for (x, y) in points {
        body.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"#b3561f\" fill-opacity=\"0.7\"/>\n",
            scale(*x, x_lo, x_hi, MARGIN, WIDTH - MARGIN),
            scale(*y, y_lo, y_hi, HEIGHT - MARGIN, MARGIN),
        ));
    }
    svg_document(&body)
}

fn svg_grid(title: &str, rows: &[String], cols: &[String], values: &[Vec<Option<f64>>]) -> String {
    let cell_w = (WIDTH - 2.0 * MARGIN) / cols.len().max(1) as f64;
    let cell_h = (HEIGHT - 2.0 * MARGIN) / rows.len().max(1) as f64;
    let mut body = axis_frame(title);
    for (r, row_label) in rows.iter().enumerate() {
        body.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{row_label}</text>\n",
            MARGIN - 6.0,
            MARGIN + r as f64 * cell_h + cell_h / 2.0 + 4.0,
        ));
        for (c, col_label) in cols.iter().enumerate() {
            if r == 0 {
                body.push_str(&format!(
                    "<text x=\"{:.2}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{col_label}</text>\n",
                    MARGIN + c as f64 * cell_w + cell_w / 2.0,
                    MARGIN - 8.0,
                ));
            }
            let (fill, text) = match values[r][c] {
                Some(v) => {
                    let clamped = v.clamp(0.0, 1.0);
                    let green = (clamped * 200.0) as u8 + 30;
                    (format!("rgb({},{green},80)", 230 - green / 2), format!("{v:.3}"))
                }
                None => ("rgb(220,220,220)".to_string(), "-".to_string()),
            };
            body.push_str(&format!(
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{cell_w:.2}\" height=\"{cell_h:.2}\" fill=\"{fill}\" stroke=\"#333\"/>\n<text x=\"{tx:.2}\" y=\"{ty:.2}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{text}</text>\n",
                x = MARGIN + c as f64 * cell_w,
                y = MARGIN + r as f64 * cell_h,
                tx = MARGIN + c as f64 * cell_w + cell_w / 2.0,
                ty = MARGIN + r as f64 * cell_h + cell_h / 2.0 + 4.0,
            ));
        }
    }
    svg_document(&body)
}

fn read_csv(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = vec![headers];
    for record in reader.records() {
        rows.push(record?.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

fn column(rows: &[Vec<String>], name: &str) -> Result<Vec<f64>> {
    let idx = rows[0]
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Parse {
            path: "tracking csv".into(),
            message: format!("missing column {name}"),
        })?;
    rows[1..]
        .iter()
        .map(|row| {
            row[idx].parse::<f64>().map_err(|e| Error::Parse {
                path: "tracking csv".into(),
                message: format!("bad number in {name}: {e}"),
            })
        })
        .collect()
}

fn write_pair(dir: &Path, name: &str, csv_text: &str, svg: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{name}.csv"));
    let svg_path = dir.join(format!("{name}.svg"));
    fs::write(&csv_path, csv_text)?;
    fs::write(&svg_path, svg)?;
    Ok((csv_path, svg_path))
}

/// Regenerates every report from the tracking CSVs under `run_dir`,
/// returning the emitted paths. Pure function of the tracking artifacts.
pub fn emit_reports(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let reports = run_dir.join("reports");
    let mut emitted = Vec::new();

    for stage in [2u32, 3u32] {
        let stage_root = stage_dir(run_dir, stage);
        if !stage_root.exists() {
            continue;
        }
        let mut farm_ids: Vec<u32> = fs::read_dir(&stage_root)?
            .filter_map(|e| {
                e.ok()?
                    .file_name()
                    .to_string_lossy()
                    .strip_prefix("farm_")?
                    .parse()
                    .ok()
            })
            .collect();
        farm_ids.sort_unstable();
        for farm_id in farm_ids {
            let tracking = farm_dir(run_dir, stage, farm_id).join("tracking");
            if !tracking.join("fitness.csv").exists() {
                continue;
            }
            let rows = read_csv(&tracking.join("fitness.csv"))?;
            let generations = column(&rows, "generation")?;
            let errors = column(&rows, "best_error")?;
            let fitness = column(&rows, "best_fitness")?;

            // Accuracy = 1 - error; both series ship in the CSV.
            let mut csv_text = String::from("generation,accuracy,error,fitness\n");
            let mut points = Vec::new();
            for i in 0..generations.len() {
                let accuracy = 1.0 - errors[i];
                csv_text.push_str(&format!(
                    "{},{},{},{}\n",
                    generations[i], accuracy, errors[i], fitness[i]
                ));
                points.push((generations[i], accuracy));
            }
            let name = format!("accuracy_stage{stage}_farm{farm_id}");
            let svg = svg_line_chart(&format!("Accuracy over generations (stage {stage}, farm {farm_id})"), &points);
            let (c, s) = write_pair(&reports, &name, &csv_text, &svg)?;
            emitted.extend([c, s]);

            let op_rows = read_csv(&tracking.join("operators.csv"))?;
            let mut csv_text = String::from("operator,applications,cumulative_fitness_delta\n");
            let mut bars = Vec::new();
            for row in &op_rows[1..] {
                csv_text.push_str(&format!("{},{},{}\n", row[0], row[1], row[2]));
                bars.push((row[0].clone(), row[2].parse::<f64>().unwrap_or(0.0)));
            }
            let name = format!("operators_stage{stage}_farm{farm_id}");
            let svg = svg_bars(&format!("Operator fitness deltas (stage {stage}, farm {farm_id})"), &bars);
            let (c, s) = write_pair(&reports, &name, &csv_text, &svg)?;
            emitted.extend([c, s]);

            let cx_path = tracking.join("complexity.csv");
            if cx_path.exists() {
                let cx_rows = read_csv(&cx_path)?;
                if cx_rows.len() > 1 {
                    let difficulty = column(&cx_rows, "difficulty")?;
                    let accuracy = column(&cx_rows, "accuracy")?;
                    let mut csv_text = String::from("difficulty,accuracy\n");
                    let mut points = Vec::new();
                    for i in 0..difficulty.len() {
                        csv_text.push_str(&format!("{},{}\n", difficulty[i], accuracy[i]));
                        points.push((difficulty[i], accuracy[i]));
                    }
                    let name = format!("complexity_stage{stage}_farm{farm_id}");
                    let svg = svg_scatter(
                        &format!("Accuracy vs Halstead difficulty (stage {stage}, farm {farm_id})"),
                        &points,
                    );
                    let (c, s) = write_pair(&reports, &name, &csv_text, &svg)?;
                    emitted.extend([c, s]);
                }
            }
        }
    }

    let matrix = stage_dir(run_dir, 4).join("persona_mechanism.csv");
    if matrix.exists() {
        let rows = read_csv(&matrix)?;
        let mut personas: Vec<String> = Vec::new();
        let mut mechanisms: Vec<String> = Vec::new();
        for row in &rows[1..] {
            if !personas.contains(&row[1]) {
                personas.push(row[1].clone());
            }
            if !mechanisms.contains(&row[2]) {
                mechanisms.push(row[2].clone());
            }
        }
        // Mean accuracy per cell across farms.
        let mut sums = vec![vec![(0.0, 0usize); mechanisms.len()]; personas.len()];
        for row in &rows[1..] {
            let p = personas.iter().position(|x| *x == row[1]).unwrap();
            let m = mechanisms.iter().position(|x| *x == row[2]).unwrap();
            let accuracy: f64 = row[6].parse().unwrap_or(0.0);
            sums[p][m].0 += accuracy;
            sums[p][m].1 += 1;
        }
        let values: Vec<Vec<Option<f64>>> = sums
            .iter()
            .map(|row| {
                row.iter()
                    .map(|(sum, n)| (*n > 0).then(|| sum / *n as f64))
                    .collect()
            })
            .collect();
        let mut csv_text = String::from("persona,mechanism,mean_accuracy\n");
        for (p, persona) in personas.iter().enumerate() {
            for (m, mechanism) in mechanisms.iter().enumerate() {
                if let Some(v) = values[p][m] {
                    csv_text.push_str(&format!("{persona},{mechanism},{v}\n"));
                }
            }
        }
        let svg = svg_grid("Mean nudge accuracy by persona and mechanism", &personas, &mechanisms, &values);
        let (c, s) = write_pair(&reports, "persona_mechanism", &csv_text, &svg)?;
        emitted.extend([c, s]);
    }

    Ok(emitted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn seed_tracking(run_dir: &Path) {
        let tracking = farm_dir(run_dir, 2, 1).join("tracking");
        fs::create_dir_all(&tracking).unwrap();
        fs::write(
            tracking.join("fitness.csv"),
            "generation,best_error,best_fitness,mean_fitness,best_accuracy\n0,0.5,1.9999,1.5,0.5\n1,0.25,3.9999,2.0,0.75\n",
        )
        .unwrap();
        fs::write(
            tracking.join("operators.csv"),
            "operator,applications,cumulative_fitness_delta\ncrossover,3,1.5\nmutate,5,2.5\n",
        )
        .unwrap();
        fs::write(
            tracking.join("complexity.csv"),
            "candidate_id,generation,error,fitness,accuracy,lloc,cyclomatic,halstead_n1,halstead_n2,difficulty,volume,maintainability_index\na,1,0.25,3.9,0.75,4,2,3,4,1.5,30.0,80.0\n",
        )
        .unwrap();
    }

    #[test]
    fn accuracy_equals_one_minus_error_pointwise() {
        let dir = TempDir::new().unwrap();
        seed_tracking(dir.path());
        emit_reports(dir.path()).unwrap();
        let text =
            fs::read_to_string(dir.path().join("reports/accuracy_stage2_farm1.csv")).unwrap();
        for line in text.lines().skip(1) {
            let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
            assert!((cols[1] - (1.0 - cols[2])).abs() < 1e-15);
        }
    }

    #[test]
    fn operator_bars_match_tracking_totals() {
        let dir = TempDir::new().unwrap();
        seed_tracking(dir.path());
        emit_reports(dir.path()).unwrap();
        let text =
            fs::read_to_string(dir.path().join("reports/operators_stage2_farm1.csv")).unwrap();
        let mut total_apps = 0u64;
        for line in text.lines().skip(1) {
            total_apps += line.split(',').nth(1).unwrap().parse::<u64>().unwrap();
        }
        assert_eq!(total_apps, 8);
    }

    #[test]
    fn reports_regenerate_bit_identically() {
        let dir = TempDir::new().unwrap();
        seed_tracking(dir.path());
        let first = emit_reports(dir.path()).unwrap();
        let snapshot: Vec<Vec<u8>> = first.iter().map(|p| fs::read(p).unwrap()).collect();
        let second = emit_reports(dir.path()).unwrap();
        assert_eq!(first, second);
        for (path, bytes) in second.iter().zip(snapshot.iter()) {
            assert_eq!(&fs::read(path).unwrap(), bytes, "{path:?} changed");
        }
    }

    #[test]
    fn persona_grid_from_matrix() {
        let dir = TempDir::new().unwrap();
        let stage4 = stage_dir(dir.path(), 4);
        fs::create_dir_all(&stage4).unwrap();
        fs::write(
            stage4.join("persona_mechanism.csv"),
            "farm,persona,mechanism,label,best_error,best_fitness,best_accuracy,refused\n1,social,behavioral,\"(P:social, N:behavioral)\",0.2,4.9,0.8,false\n1,social,economic,\"(P:social, N:economic)\",0.4,2.4,0.6,false\n",
        )
        .unwrap();
        emit_reports(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("reports/persona_mechanism.csv")).unwrap();
        assert!(text.contains("social,behavioral,0.8"));
        assert!(text.contains("social,economic,0.6"));
        assert!(dir.path().join("reports/persona_mechanism.svg").exists());
    }
}
