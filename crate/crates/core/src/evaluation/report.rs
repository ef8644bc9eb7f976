use super::experiment::AblationRow;
use super::metrics::{Metrics, RecallCurve};
use crate::tensor::Real;

fn write(rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 fields")
}

fn num(v: impl Into<f64>) -> String {
    format!("{:.6}", v.into())
}

/// `config,<tag>...,mean,fps`; skipped folds are empty, failed cells say so in `mean`.
pub fn ablation_csv(rows: &[AblationRow], tags: &[String]) -> String {
    let mut out = vec![std::iter::once("config".to_string())
        .chain(tags.iter().cloned())
        .chain(["mean".to_string(), "fps".to_string()])
        .collect()];
    for row in rows {
        let mut r = vec![row.config.clone()];
        match &row.outcome {
            Ok(cell) => {
                let cv = &cell.cross_validation;
                r.extend(tags.iter().map(|t| cv.f1_of(t).map(num).unwrap_or_default()));
                r.push(num(cv.mean_f1));
                r.push(format!("{:.2}", cell.fps.mean));
            }
            Err(_) => {
                r.extend(tags.iter().map(|_| String::new()));
                r.push("failed".into());
                r.push(String::new());
            }
        }
        out.push(r);
    }
    write(out)
}

/// `config,N,recall`
pub fn recall_curve_csv(curves: &[(String, RecallCurve)]) -> String {
    let mut out = vec![vec!["config".to_string(), "N".to_string(), "recall".to_string()]];
    for (config, curve) in curves {
        for (n, r) in &curve.points {
            out.push(vec![config.clone(), n.to_string(), num(*r)]);
        }
    }
    write(out)
}

/// `fold,precision,recall,f1`, one row per sequence tag and a final `mean` row.
pub fn folds_csv<'a>(folds: impl IntoIterator<Item = &'a Metrics>) -> String {
    let mut out = vec![vec!["fold", "precision", "recall", "f1"].into_iter().map(String::from).collect()];
    let folds: Vec<&Metrics> = folds.into_iter().collect();
    for m in &folds {
        out.push(vec![m.tag.clone(), num(m.precision), num(m.recall), num(m.f1)]);
    }
    let mean = |f: fn(&Metrics) -> Real| folds.iter().map(|m| f(m)).sum::<Real>() / folds.len().max(1) as Real;
    out.push(vec![
        "mean".into(),
        num(mean(|m| m.precision)),
        num(mean(|m| m.recall)),
        num(mean(|m| m.f1)),
    ]);
    write(out)
}
