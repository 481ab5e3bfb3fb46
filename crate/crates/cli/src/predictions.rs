//! Prediction CSV: `id`, one score column per output, the predicted class
//! name. Embeddings go to a separate `id,e0,e1,…` file.

use std::io::{BufRead, Write};

use anyhow::{bail, Context, Result};
use rsift::classifier::Prediction;

pub fn score_columns(class_names: &[String]) -> Vec<String> {
    if class_names.len() == 2 {
        vec!["score".to_string()]
    } else {
        class_names.iter().map(|c| format!("score_{c}")).collect()
    }
}

pub fn write(out: &mut impl Write, ids: &[usize], predictions: &[Prediction], class_names: &[String]) -> Result<()> {
    write!(out, "id")?;
    for c in score_columns(class_names) {
        write!(out, ",{c}")?;
    }
    writeln!(out, ",label")?;
    for (id, p) in ids.iter().zip(predictions) {
        write!(out, "{id}")?;
        for s in &p.scores {
            write!(out, ",{s}")?;
        }
        writeln!(out, ",{}", class_names[p.label])?;
    }
    Ok(())
}

pub fn write_embeddings(out: &mut impl Write, ids: &[usize], predictions: &[Prediction]) -> Result<()> {
    write!(out, "id")?;
    let width = predictions.first().map_or(0, |p| p.embedding.len());
    for j in 0..width {
        write!(out, ",e{j}")?;
    }
    writeln!(out)?;
    for (id, p) in ids.iter().zip(predictions) {
        write!(out, "{id}")?;
        for v in &p.embedding {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub score_columns: Vec<String>,
    pub ids: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

pub fn read(input: impl BufRead) -> Result<PredictionTable> {
    let mut lines = input.lines();
    let header = lines.next().context("empty predictions file")??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "id" || cols[cols.len() - 1] != "label" {
        bail!("unexpected predictions header {header:?}");
    }
    let n_scores = cols.len() - 2;
    let mut table = PredictionTable {
        score_columns: cols[1..=n_scores].iter().map(|s| s.to_string()).collect(),
        ids: Vec::new(),
        scores: Vec::new(),
        labels: Vec::new(),
    };
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            bail!("bad predictions row {line:?}");
        }
        table.ids.push(f[0].parse().with_context(|| format!("bad id in {line:?}"))?);
        table.scores.push(
            f[1..=n_scores]
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .with_context(|| format!("bad score in {line:?}"))?,
        );
        table.labels.push(f[n_scores + 1].to_string());
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let names = vec!["implausible".to_string(), "plausible".to_string()];
        let preds = vec![
            Prediction { scores: vec![0.25], label: 0, embedding: vec![1.0, 0.0] },
            Prediction { scores: vec![0.5], label: 1, embedding: vec![0.5, 2.0] },
        ];
        let mut buf = Vec::new();
        write(&mut buf, &[3, 7], &preds, &names).unwrap();
        let t = read(&buf[..]).unwrap();
        assert_eq!(t.ids, vec![3, 7]);
        assert_eq!(t.scores, vec![vec![0.25], vec![0.5]]);
        assert_eq!(t.labels, vec!["implausible", "plausible"]);
        assert_eq!(t.score_columns, vec!["score"]);
    }
}
