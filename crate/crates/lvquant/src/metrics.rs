//! Evaluation metrics and report rendering: per-index mean absolute error
//! in physical units, phase error rate, and the sectioned comparison table
//! (text + CSV) across regularization configurations.

/// Column order of the 11 regression indices everywhere in this crate.
pub const INDEX_NAMES: [&str; 11] = [
    "cavity_area",
    "myo_area",
    "dim1",
    "dim2",
    "dim3",
    "rwt_is",
    "rwt_i",
    "rwt_il",
    "rwt_al",
    "rwt_a",
    "rwt_as",
];

/// Pooled evaluation outcomes: one absolute-error row per evaluated frame,
/// plus phase decision counts.
#[derive(Debug, Clone, Default)]
pub struct ErrorPool {
    pub abs: Vec<[f64; 11]>,
    pub phase_wrong: usize,
    pub phase_total: usize,
}

impl ErrorPool {
    pub fn merge(&mut self, other: &ErrorPool) {
        self.abs.extend_from_slice(&other.abs);
        self.phase_wrong += other.phase_wrong;
        self.phase_total += other.phase_total;
    }

    pub fn summarize(&self) -> Summary {
        let n = self.abs.len().max(1) as f64;
        let mut mae = [0.0; 11];
        for row in &self.abs {
            for (m, v) in mae.iter_mut().zip(row) {
                *m += v;
            }
        }
        mae.iter_mut().for_each(|m| *m /= n);
        let mut std = [0.0; 11];
        for row in &self.abs {
            for i in 0..11 {
                let d = row[i] - mae[i];
                std[i] += d * d;
            }
        }
        std.iter_mut().for_each(|s| *s = (*s / n).sqrt());

        // Section averages pool every absolute error of the section, so the
        // mean equals the mean of the per-index MAEs and the ± is the std
        // of the pooled error population.
        let pool_stats = |cols: std::ops::Range<usize>| -> (f64, f64) {
            let k = cols.len() as f64;
            let mean = cols.clone().map(|c| mae[c]).sum::<f64>() / k;
            let mut var = 0.0;
            for row in &self.abs {
                for c in cols.clone() {
                    let d = row[c] - mean;
                    var += d * d;
                }
            }
            (mean, (var / (n * k)).sqrt())
        };
        Summary {
            mae,
            std,
            avg_area: pool_stats(0..2),
            avg_dim: pool_stats(2..5),
            avg_rwt: pool_stats(5..11),
            phase_error_pct: 100.0 * self.phase_wrong as f64 / self.phase_total.max(1) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Summary {
    pub mae: [f64; 11],
    pub std: [f64; 11],
    pub avg_area: (f64, f64),
    pub avg_dim: (f64, f64),
    pub avg_rwt: (f64, f64),
    pub phase_error_pct: f64,
}

/// Per-column mean |ŷ−y| and standard deviation of |ŷ−y| over pooled rows.
pub fn mae(preds: &[f64], labels: &[f64], n: usize, k: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(preds.len(), n * k, "prediction buffer size");
    assert_eq!(labels.len(), n * k, "label buffer size");
    let mut mean = vec![0.0; k];
    for r in 0..n {
        for c in 0..k {
            mean[c] += (preds[r * k + c] - labels[r * k + c]).abs();
        }
    }
    let nf = n.max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut std = vec![0.0; k];
    for r in 0..n {
        for c in 0..k {
            let d = (preds[r * k + c] - labels[r * k + c]).abs() - mean[c];
            std[c] += d * d;
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / nf).sqrt());
    (mean, std)
}

/// Percent of frames misclassified; Diastole is predicted iff
/// p(Diastole) ≥ 1/2, so the exact tie classifies Diastole.
pub fn phase_error_rate(p_diastole: &[f64], labels: &[u8]) -> f64 {
    assert_eq!(p_diastole.len(), labels.len());
    let wrong = p_diastole
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| {
            let pred: u8 = if p >= 0.5 { 0 } else { 1 };
            pred != y
        })
        .count();
    100.0 * wrong as f64 / labels.len().max(1) as f64
}

/// One configuration column of the comparison table.
#[derive(Debug, Clone)]
pub struct ConfigReport {
    pub label: String,
    pub summary: Summary,
}

fn fmt_pm(mean: f64, std: f64, decimals: usize) -> String {
    format!("{:.d$}±{:.d$}", mean, std, d = decimals)
}

/// Row layout shared by the text and CSV emitters so both carry identical
/// numbers: (section, row name, per-config formatted cells).
fn table_rows(reports: &[ConfigReport]) -> Vec<(String, String, Vec<String>)> {
    let mut rows = Vec::new();
    let mut push = |section: &str, row: &str, cells: Vec<String>| {
        rows.push((section.to_string(), row.to_string(), cells));
    };
    let rwt_rows: [(&str, usize); 6] = [
        ("IS", 5),
        ("I", 6),
        ("IL", 7),
        ("AL", 8),
        ("A", 9),
        ("AS", 10),
    ];
    for (name, col) in rwt_rows {
        push(
            "RWT (mm)",
            name,
            reports
                .iter()
                .map(|r| fmt_pm(r.summary.mae[col], r.summary.std[col], 2))
                .collect(),
        );
    }
    push(
        "RWT (mm)",
        "Average",
        reports
            .iter()
            .map(|r| fmt_pm(r.summary.avg_rwt.0, r.summary.avg_rwt.1, 2))
            .collect(),
    );
    for (name, col) in [("dim1", 2), ("dim2", 3), ("dim3", 4)] {
        push(
            "Dimension (mm)",
            name,
            reports
                .iter()
                .map(|r| fmt_pm(r.summary.mae[col], r.summary.std[col], 2))
                .collect(),
        );
    }
    push(
        "Dimension (mm)",
        "Average",
        reports
            .iter()
            .map(|r| fmt_pm(r.summary.avg_dim.0, r.summary.avg_dim.1, 2))
            .collect(),
    );
    for (name, col) in [("Cavity", 0), ("Myocardium", 1)] {
        push(
            "Area (mm2)",
            name,
            reports
                .iter()
                .map(|r| fmt_pm(r.summary.mae[col], r.summary.std[col], 0))
                .collect(),
        );
    }
    push(
        "Area (mm2)",
        "Average",
        reports
            .iter()
            .map(|r| fmt_pm(r.summary.avg_area.0, r.summary.avg_area.1, 0))
            .collect(),
    );
    push(
        "Phase (%)",
        "Error rate",
        reports
            .iter()
            .map(|r| format!("{:.1}", r.summary.phase_error_pct))
            .collect(),
    );
    rows
}

/// Aligned plain-text comparison table, one column per configuration.
pub fn render_text(reports: &[ConfigReport]) -> String {
    let rows = table_rows(reports);
    let name_w = 14usize;
    let col_w = reports
        .iter()
        .map(|r| r.label.len())
        .chain(rows.iter().flat_map(|(_, _, cells)| cells.iter().map(|c| c.len())))
        .max()
        .unwrap_or(8)
        .max(8)
        + 2;
    let mut out = String::new();
    out.push_str(&" ".repeat(name_w + 2));
    for r in reports {
        out.push_str(&format!("{:>w$}", r.label, w = col_w));
    }
    out.push('\n');
    let mut section = String::new();
    for (sec, row, cells) in &rows {
        if *sec != section {
            section = sec.clone();
            out.push_str(&format!("{}\n", sec));
        }
        out.push_str(&format!("  {:<w$}", row, w = name_w));
        for c in cells {
            out.push_str(&format!("{:>w$}", c, w = col_w));
        }
        out.push('\n');
    }
    out
}

/// Long-form CSV with exactly the numbers shown in the text table.
pub fn render_csv(reports: &[ConfigReport]) -> String {
    let rows = table_rows(reports);
    let mut out = String::from("section,row");
    for r in reports {
        out.push(',');
        out.push_str(&r.label);
    }
    out.push('\n');
    for (sec, row, cells) in &rows {
        out.push_str(&format!("{},{}", sec, row));
        for c in cells {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mae_hand_cases() {
        let labels = vec![0.0; 4];
        let (m, s) = mae(&labels, &labels, 4, 1);
        assert_eq!(m, vec![0.0]);
        assert_eq!(s, vec![0.0]);

        let preds = vec![1.0, -1.0, 3.0, -3.0];
        let (m, s) = mae(&preds, &labels, 4, 1);
        assert_eq!(m, vec![2.0]);
        assert_eq!(s, vec![1.0]); // |errors| = (1,1,3,3), std = 1
    }

    #[test]
    fn mae_matches_naive_oracle_on_random_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let n = 10;
        let k = 3;
        let preds: Vec<f64> = (0..n * k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let labels: Vec<f64> = (0..n * k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (m, s) = mae(&preds, &labels, n, k);
        for c in 0..k {
            // Spreadsheet-style: list the column's absolute errors, average,
            // then root-mean-square deviation from that average.
            let errs: Vec<f64> = (0..n)
                .map(|r| (preds[r * k + c] - labels[r * k + c]).abs())
                .collect();
            let mean = errs.iter().sum::<f64>() / n as f64;
            let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n as f64;
            assert!((m[c] - mean).abs() < 1e-12);
            assert!((s[c] - var.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn phase_error_hand_cases() {
        assert_eq!(phase_error_rate(&[0.9, 0.1], &[0, 1]), 0.0);
        // All-tie probabilities classify Diastole everywhere.
        let p = vec![0.5; 10];
        let labels: Vec<u8> = (0..10).map(|i| (i % 2) as u8).collect();
        assert_eq!(phase_error_rate(&p, &labels), 50.0);
        // 3 wrong of 20.
        let mut p = vec![0.9; 20];
        let mut labels = vec![0u8; 20];
        for i in 0..3 {
            labels[i] = 1;
        }
        assert_eq!(phase_error_rate(&p, &labels), 15.0);
        p[19] = 0.4; // now wrong on a Diastole frame too
        assert_eq!(phase_error_rate(&p, &labels), 20.0);
    }

    #[test]
    fn summary_averages_recompute_from_per_index_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let mut pool = ErrorPool::default();
        for _ in 0..40 {
            pool.abs.push(std::array::from_fn(|_| rng.random_range(0.0..3.0)));
        }
        pool.phase_wrong = 4;
        pool.phase_total = 40;
        let s = pool.summarize();
        let want_rwt = s.mae[5..11].iter().sum::<f64>() / 6.0;
        assert!((s.avg_rwt.0 - want_rwt).abs() < 1e-12);
        let want_dim = s.mae[2..5].iter().sum::<f64>() / 3.0;
        assert!((s.avg_dim.0 - want_dim).abs() < 1e-12);
        let want_area = (s.mae[0] + s.mae[1]) / 2.0;
        assert!((s.avg_area.0 - want_area).abs() < 1e-12);
        assert_eq!(s.phase_error_pct, 10.0);
    }

    fn paper_like_summary() -> Summary {
        Summary {
            mae: [181.0, 199.0, 2.62, 2.64, 2.77, 1.39, 1.40, 1.44, 1.42, 1.40, 1.41],
            std: [155.0, 98.0, 1.50, 1.60, 1.70, 0.70, 0.71, 0.73, 0.75, 0.70, 0.72],
            avg_area: (190.0, 128.0),
            avg_dim: (2.68, 1.64),
            avg_rwt: (1.41, 0.72),
            phase_error_pct: 10.4,
        }
    }

    #[test]
    fn report_renders_reference_row_formats() {
        let reports = [ConfigReport {
            label: "intra/inter".into(),
            summary: paper_like_summary(),
        }];
        let text = render_text(&reports);
        assert!(text.contains("1.41±0.72"), "{}", text);
        assert!(text.contains("2.68±1.64"), "{}", text);
        assert!(text.contains("190±128"), "{}", text);
        assert!(text.contains("10.4"), "{}", text);
        assert!(text.contains("RWT (mm)"));
        assert!(text.contains("Average"));
    }

    #[test]
    fn csv_and_text_carry_identical_numbers() {
        let reports = [
            ConfigReport {
                label: "N/N".into(),
                summary: paper_like_summary(),
            },
            ConfigReport {
                label: "intra/inter".into(),
                summary: paper_like_summary(),
            },
        ];
        let text = render_text(&reports);
        let csv = render_csv(&reports);
        assert_eq!(csv.lines().next().unwrap(), "section,row,N/N,intra/inter");
        // Every numeric cell in the CSV appears verbatim in the text table.
        for line in csv.lines().skip(1) {
            for cell in line.split(',').skip(2) {
                assert!(text.contains(cell), "cell {} missing from text", cell);
            }
        }
        assert_eq!(csv.lines().count(), 1 + 13); // header + 13 rows
    }
}
