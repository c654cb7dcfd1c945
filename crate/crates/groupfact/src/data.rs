//! Delimited-text ingestion of precomputed PSD feature files.
//!
//! Input is one plain-text file per subject, one row per time frame by
//! default, with an optional raw label column remapped to class ids. All
//! layout facts (delimiter, feature count, label position, orientation) live
//! in [`IngestSchema`]; nothing about the file format is hard-coded. Parsing
//! is locale-independent: decimal points only.

use crate::error::{Error, Result};
use crate::inference::Posterior;
use crate::model::GroupedDataset;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

/// Token separator within a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Delimiter {
    #[default]
    Whitespace,
    Comma,
}

/// Where the raw label sits in each row, if anywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LabelColumn {
    None,
    #[default]
    Last,
    First,
}

/// File-format description for one group of subject files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSchema {
    pub delimiter: Delimiter,
    /// Number of feature values per frame.
    pub feature_count: usize,
    pub label_column: LabelColumn,
    /// Raw label value -> class id in 1..=K. Keys are integral raw values.
    pub label_map: BTreeMap<i64, usize>,
    /// When set, rows are features and columns are frames.
    pub transpose: bool,
}

impl Default for IngestSchema {
    fn default() -> Self {
        IngestSchema {
            delimiter: Delimiter::default(),
            feature_count: 96,
            label_column: LabelColumn::default(),
            // raw task labels of the public motor-imagery feature files
            label_map: BTreeMap::from([(2, 1), (3, 2), (7, 3)]),
            transpose: false,
        }
    }
}

impl IngestSchema {
    pub fn validate(&self) -> Result<()> {
        if self.feature_count < 1 {
            return Err(Error::Config("feature_count must be >= 1".into()));
        }
        if self.label_column != LabelColumn::None {
            if self.label_map.is_empty() {
                return Err(Error::Config(
                    "label_map must be provided when a label column is declared".into(),
                ));
            }
            let k = self.label_map.len();
            let mut seen = vec![false; k];
            for (&raw, &class) in &self.label_map {
                if class < 1 || class > k || seen[class - 1] {
                    return Err(Error::Config(format!(
                        "label_map must be a bijection onto 1..={k}: raw {raw} -> {class}"
                    )));
                }
                seen[class - 1] = true;
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.label_map.len()
    }
}

/// Physical arrangement of the feature vector, used only for exports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureLayout {
    pub channels: usize,
    pub bins_per_channel: usize,
    pub channel_names: Option<Vec<String>>,
}

impl Default for FeatureLayout {
    fn default() -> Self {
        FeatureLayout { channels: 8, bins_per_channel: 12, channel_names: None }
    }
}

impl FeatureLayout {
    pub fn validate(&self, num_features: usize) -> Result<()> {
        if self.channels * self.bins_per_channel != num_features {
            return Err(Error::Config(format!(
                "layout {} x {} does not cover {} features",
                self.channels, self.bins_per_channel, num_features
            )));
        }
        if let Some(names) = &self.channel_names {
            if names.len() != self.channels {
                return Err(Error::Config(format!(
                    "{} channel names for {} channels",
                    names.len(),
                    self.channels
                )));
            }
        }
        Ok(())
    }

    pub fn channel_name(&self, ch: usize) -> String {
        match &self.channel_names {
            Some(names) => names[ch].clone(),
            None => format!("ch{}", ch + 1),
        }
    }
}

fn split_row<'a>(line: &'a str, delim: Delimiter) -> Vec<&'a str> {
    match delim {
        Delimiter::Whitespace => line.split_whitespace().collect(),
        Delimiter::Comma => line.split(',').map(str::trim).collect(),
    }
}

fn parse_cell(tok: &str, path: &str, row: usize, col: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| Error::Parse {
        path: path.into(),
        row,
        col,
        message: format!("not a number: {tok:?}"),
    })
}

fn map_label(raw: f64, schema: &IngestSchema, path: &str, row: usize, col: usize) -> Result<usize> {
    if !raw.is_finite() || raw.fract() != 0.0 {
        return Err(Error::Parse {
            path: path.into(),
            row,
            col,
            message: format!("label {raw} is not an integer"),
        });
    }
    schema.label_map.get(&(raw as i64)).copied().ok_or_else(|| Error::Parse {
        path: path.into(),
        row,
        col,
        message: format!("raw label {} not in label_map", raw as i64),
    })
}

/// Parses one subject file into an M x N feature matrix (columns are frames
/// in file order) and, when the schema declares a label column, the remapped
/// class ids.
pub fn load_subject(
    path: impl AsRef<Path>,
    schema: &IngestSchema,
) -> Result<(Array2<f64>, Option<Vec<usize>>)> {
    schema.validate()?;
    let path = path.as_ref();
    let pstr = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&pstr, e))?;
    let reader = std::io::BufReader::new(file);
    read_subject(reader, schema, &pstr)
}

/// Like [`load_subject`] but from any reader; `path` is for error messages.
pub fn read_subject(
    reader: impl BufRead,
    schema: &IngestSchema,
    path: &str,
) -> Result<(Array2<f64>, Option<Vec<usize>>)> {
    schema.validate()?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let has_label = schema.label_column != LabelColumn::None && !schema.transpose;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = i + 1;
        let toks = split_row(line, schema.delimiter);
        let expected_width = if schema.transpose {
            None // frame count unknown until the first row
        } else {
            Some(schema.feature_count + usize::from(has_label))
        };
        if let Some(w) = expected_width {
            if toks.len() != w {
                return Err(Error::Parse {
                    path: path.into(),
                    row,
                    col: toks.len(),
                    message: format!("expected {w} fields, got {}", toks.len()),
                });
            }
        }
        let (feature_toks, label_tok): (&[&str], Option<(&str, usize)>) = if has_label {
            match schema.label_column {
                LabelColumn::Last => (&toks[..toks.len() - 1], Some((toks[toks.len() - 1], toks.len()))),
                LabelColumn::First => (&toks[1..], Some((toks[0], 1))),
                LabelColumn::None => unreachable!(),
            }
        } else {
            (&toks[..], None)
        };
        let mut vals = Vec::with_capacity(feature_toks.len());
        for (j, tok) in feature_toks.iter().enumerate() {
            let col = if has_label && schema.label_column == LabelColumn::First { j + 2 } else { j + 1 };
            vals.push(parse_cell(tok, path, row, col)?);
        }
        if let Some((tok, col)) = label_tok {
            let raw = parse_cell(tok, path, row, col)?;
            labels.push(map_label(raw, schema, path, row, col)?);
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return Err(Error::Data { path: path.into(), message: "no frames".into() });
    }
    let matrix = if schema.transpose {
        // rows are features
        if rows.len() != schema.feature_count {
            return Err(Error::Data {
                path: path.into(),
                message: format!(
                    "expected {} feature rows (transpose), got {}",
                    schema.feature_count,
                    rows.len()
                ),
            });
        }
        let n = rows[0].len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n {
                return Err(Error::Parse {
                    path: path.into(),
                    row: i + 1,
                    col: r.len(),
                    message: format!("ragged row: expected {n} frames"),
                });
            }
        }
        Array2::from_shape_fn((schema.feature_count, n), |(m, fr)| rows[m][fr])
    } else {
        // rows are frames; transpose into M x N
        let n = rows.len();
        Array2::from_shape_fn((schema.feature_count, n), |(m, fr)| rows[fr][m])
    };
    for ((m, n), &v) in matrix.indexed_iter() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Data {
                path: path.into(),
                message: format!("feature ({}, {}) = {v} is negative or non-finite", m + 1, n + 1),
            });
        }
    }
    let labels = if has_label { Some(labels) } else { None };
    Ok((matrix, labels))
}

/// Loads one file per subject, in the given order, into a [`GroupedDataset`].
/// All subjects must share the schema's feature count; frame counts may vary.
pub fn load_group(paths: &[impl AsRef<Path>], schema: &IngestSchema) -> Result<GroupedDataset> {
    schema.validate()?;
    if paths.is_empty() {
        return Err(Error::Config("need at least one subject file".into()));
    }
    let mut features = Vec::with_capacity(paths.len());
    let mut labels = Vec::with_capacity(paths.len());
    for p in paths {
        let (x, y) = load_subject(p, schema)?;
        features.push(x);
        if let Some(y) = y {
            labels.push(y);
        }
    }
    let labels = if labels.len() == paths.len() {
        Some(labels)
    } else if labels.is_empty() {
        None
    } else {
        return Err(Error::Data {
            path: "<group>".into(),
            message: "some subject files have labels and some do not".into(),
        });
    };
    GroupedDataset::new(features, labels)
}

/// Writes one subject back to the schema's row-per-frame layout; output of
/// this function re-ingests to an identical matrix.
pub fn write_subject<W: Write>(
    x: &Array2<f64>,
    labels: Option<&[usize]>,
    schema: &IngestSchema,
    mut out: W,
) -> Result<()> {
    let werr = |e| Error::io("<subject file>", e);
    let sep = match schema.delimiter {
        Delimiter::Whitespace => " ",
        Delimiter::Comma => ",",
    };
    let inverse: BTreeMap<usize, i64> = schema.label_map.iter().map(|(&r, &c)| (c, r)).collect();
    for n in 0..x.ncols() {
        let mut fields: Vec<String> = x.column(n).iter().map(|v| format!("{v}")).collect();
        if let Some(y) = labels {
            let raw = inverse.get(&y[n]).copied().ok_or_else(|| Error::Config(format!(
                "class {} has no raw value in label_map",
                y[n]
            )))?;
            match schema.label_column {
                LabelColumn::Last => fields.push(raw.to_string()),
                LabelColumn::First => fields.insert(0, raw.to_string()),
                LabelColumn::None => {
                    return Err(Error::Config(
                        "cannot write labels with label_column = none".into(),
                    ))
                }
            }
        }
        writeln!(out, "{}", fields.join(sep)).map_err(werr)?;
    }
    Ok(())
}

/// Emits the posterior-mean bases as a long-format CSV for heatmap plotting:
/// header `basis,subject,channel,bin,value`, one row per coefficient.
/// Common columns come first (`common-k`, subject 0), then each subject's
/// individual bases (`individual-j`). Values round-trip bitwise.
pub fn export_bases<W: Write>(post: &Posterior, layout: &FeatureLayout, mut out: W) -> Result<()> {
    let m = post.num_features();
    layout.validate(m)?;
    let werr = |e| Error::io("<bases csv>", e);
    writeln!(out, "basis,subject,channel,bin,value").map_err(werr)?;
    let mut emit = |name: String, subject: usize, col: ndarray::ArrayView1<f64>| -> Result<()> {
        for (i, &v) in col.iter().enumerate() {
            let ch = i / layout.bins_per_channel;
            let bin = i % layout.bins_per_channel;
            writeln!(out, "{},{},{},{},{}", name, subject, layout.channel_name(ch), bin + 1, v)
                .map_err(werr)?;
        }
        Ok(())
    };
    let a_c = post.mean_common_basis();
    for k in 0..a_c.ncols() {
        emit(format!("common-{}", k + 1), 0, a_c.column(k))?;
    }
    for (l, grid) in post.q_ai.iter().enumerate() {
        for j in 0..grid.e_x.ncols() {
            emit(format!("individual-{}", j + 1), l + 1, grid.e_x.column(j))?;
        }
    }
    Ok(())
}
