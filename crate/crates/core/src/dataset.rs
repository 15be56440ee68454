//! CSV ingestion and export.
//!
//! Signal files carry one signal per row under the header
//! `dataset_id,subject_id,side,label,v0,v1,...` with `side` in {L, R} and
//! `label` in {0, 1}. Row width may differ across files but is fixed within
//! one file. Aligned files append a `parent_offset` column. Values are
//! plain decimal 64-bit reals; the shortest round-trip formatting keeps
//! save/load value-identical.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::Prediction;
use crate::infer::LatentRow;
use crate::meta::EpochTrace;
use crate::model::Variant;
use crate::pipeline::{AlignedSignal, ClassLabel, RawSignal, Side};

const BASE_HEADER: [&str; 4] = ["dataset_id", "subject_id", "side", "label"];

fn open_lines(path: &Path) -> Result<impl Iterator<Item = std::io::Result<String>>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(BufReader::new(file).lines())
}

fn parse_side(token: &str, line: usize) -> Result<Side> {
    Side::parse(token).ok_or(Error::BadEnum {
        line,
        field: "side",
        value: token.to_string(),
    })
}

fn parse_label(token: &str, line: usize) -> Result<ClassLabel> {
    match token {
        "0" => Ok(ClassLabel::Control),
        "1" => Ok(ClassLabel::Tinnitus),
        _ => Err(Error::BadEnum {
            line,
            field: "label",
            value: token.to_string(),
        }),
    }
}

fn parse_value(token: &str, line: usize) -> Result<f64> {
    let v: f64 = token.parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse `{token}` as a real"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite strength `{token}`"),
        });
    }
    Ok(v)
}

fn check_header(fields: &[&str], path: &Path, want_offset: bool) -> Result<usize> {
    let ok = fields.len() > BASE_HEADER.len()
        && fields[..4] == BASE_HEADER
        && (!want_offset || fields.last() == Some(&"parent_offset"));
    if !ok {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: "unexpected header for signal CSV".to_string(),
        });
    }
    let value_cols = fields.len() - BASE_HEADER.len() - usize::from(want_offset);
    if value_cols == 0 {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: "no value columns".to_string(),
        });
    }
    Ok(value_cols)
}

/// Load raw signals. Rejects non-finite strengths, unknown enum tokens, and
/// width changes mid-file, each with its 1-based line number.
pub fn load_dataset(path: &Path) -> Result<Vec<RawSignal>> {
    let mut lines = open_lines(path)?;
    let header = lines
        .next()
        .ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            message: "empty file".to_string(),
        })?
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let fields: Vec<&str> = header.trim_end().split(',').collect();
    let value_cols = check_header(&fields, path, false)?;

    let mut signals = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.trim_end().split(',').collect();
        if tokens.len() != value_cols + BASE_HEADER.len() {
            return Err(Error::InconsistentWidth {
                line: line_no,
                found: tokens.len(),
                expected: value_cols + BASE_HEADER.len(),
            });
        }
        let values = tokens[4..]
            .iter()
            .map(|t| parse_value(t, line_no))
            .collect::<Result<Vec<f64>>>()?;
        signals.push(RawSignal {
            dataset_id: tokens[0].to_string(),
            subject_id: tokens[1].to_string(),
            side: parse_side(tokens[2], line_no)?,
            class_label: parse_label(tokens[3], line_no)?,
            values,
        });
    }
    Ok(signals)
}

/// Save raw signals. All signals must share one width, since a file has a
/// fixed row width.
pub fn save_dataset(signals: &[RawSignal], path: &Path) -> Result<()> {
    let width = match signals.first() {
        Some(s) => s.values.len(),
        None => {
            return Err(Error::Format {
                path: path.display().to_string(),
                message: "refusing to write an empty dataset".to_string(),
            })
        }
    };
    if let Some(bad) = signals.iter().find(|s| s.values.len() != width) {
        return Err(Error::Format {
            path: path.display().to_string(),
            message: format!(
                "signal {} has {} values, file width is {width}",
                bad.subject_id,
                bad.values.len()
            ),
        });
    }
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    write!(w, "dataset_id,subject_id,side,label").map_err(io_err)?;
    for j in 0..width {
        write!(w, ",v{j}").map_err(io_err)?;
    }
    writeln!(w).map_err(io_err)?;
    for s in signals {
        write!(
            w,
            "{},{},{},{}",
            s.dataset_id,
            s.subject_id,
            s.side.as_str(),
            s.class_label.index()
        )
        .map_err(io_err)?;
        for v in &s.values {
            write!(w, ",{v}").map_err(io_err)?;
        }
        writeln!(w).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Load aligned signals (signal columns plus the trailing `parent_offset`).
/// Values must sit in [0, 1].
pub fn load_aligned(path: &Path) -> Result<Vec<AlignedSignal>> {
    let mut lines = open_lines(path)?;
    let header = lines
        .next()
        .ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            message: "empty file".to_string(),
        })?
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let fields: Vec<&str> = header.trim_end().split(',').collect();
    let value_cols = check_header(&fields, path, true)?;

    let mut signals = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.trim_end().split(',').collect();
        if tokens.len() != value_cols + BASE_HEADER.len() + 1 {
            return Err(Error::InconsistentWidth {
                line: line_no,
                found: tokens.len(),
                expected: value_cols + BASE_HEADER.len() + 1,
            });
        }
        let values = tokens[4..4 + value_cols]
            .iter()
            .map(|t| {
                let v = parse_value(t, line_no)?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("aligned value {v} outside [0, 1]"),
                    });
                }
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        let parent_offset = tokens[4 + value_cols].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("cannot parse parent_offset `{}`", tokens[4 + value_cols]),
        })?;
        signals.push(AlignedSignal {
            dataset_id: tokens[0].to_string(),
            subject_id: tokens[1].to_string(),
            side: parse_side(tokens[2], line_no)?,
            class_label: parse_label(tokens[3], line_no)?,
            values,
            parent_offset,
        });
    }
    Ok(signals)
}

/// Save aligned signals with their parent offsets.
pub fn save_aligned(signals: &[AlignedSignal], path: &Path) -> Result<()> {
    let width = match signals.first() {
        Some(s) => s.values.len(),
        None => {
            return Err(Error::Format {
                path: path.display().to_string(),
                message: "refusing to write an empty dataset".to_string(),
            })
        }
    };
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    write!(w, "dataset_id,subject_id,side,label").map_err(io_err)?;
    for j in 0..width {
        write!(w, ",v{j}").map_err(io_err)?;
    }
    writeln!(w, ",parent_offset").map_err(io_err)?;
    for s in signals {
        if s.values.len() != width {
            return Err(Error::Format {
                path: path.display().to_string(),
                message: format!("signal {} width differs from {width}", s.subject_id),
            });
        }
        write!(
            w,
            "{},{},{},{}",
            s.dataset_id,
            s.subject_id,
            s.side.as_str(),
            s.class_label.index()
        )
        .map_err(io_err)?;
        for v in &s.values {
            write!(w, ",{v}").map_err(io_err)?;
        }
        writeln!(w, ",{}", s.parent_offset).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Write per-signal predictions.
pub fn save_predictions(predictions: &[Prediction], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    writeln!(w, "subject_id,side,true_label,pred_label,score").map_err(io_err)?;
    for p in predictions {
        writeln!(
            w,
            "{},{},{},{},{}",
            p.subject_id,
            p.side.as_str(),
            p.true_label.index(),
            p.pred_label.index(),
            p.score
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Write latent rows as `subject_id,side,label,z0..z{latent_dim-1}`.
pub fn save_latents(rows: &[LatentRow], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    let dim = rows.first().map_or(0, |r| r.latent.len());
    write!(w, "subject_id,side,label").map_err(io_err)?;
    for j in 0..dim {
        write!(w, ",z{j}").map_err(io_err)?;
    }
    writeln!(w).map_err(io_err)?;
    for r in rows {
        write!(w, "{},{},{}", r.subject_id, r.side.as_str(), r.class_label.index()).map_err(io_err)?;
        for z in &r.latent {
            write!(w, ",{z}").map_err(io_err)?;
        }
        writeln!(w).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Write a training trace. The Siamese variant appends the contrastive and
/// subject-loss columns.
pub fn save_trace(trace: &[EpochTrace], variant: Variant, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path.display().to_string(), e);
    match variant {
        Variant::Ae => writeln!(
            w,
            "epoch,mean_support_loss,mean_query_loss,component_cls,component_rec,component_ear"
        )
        .map_err(io_err)?,
        Variant::Sae => writeln!(
            w,
            "epoch,mean_support_loss,mean_query_loss,component_cls,component_rec,component_ear,component_adv,component_sub"
        )
        .map_err(io_err)?,
    }
    for t in trace {
        write!(
            w,
            "{},{},{},{},{},{}",
            t.epoch,
            t.mean_support_loss,
            t.mean_query_loss,
            t.components.cls,
            t.components.rec,
            t.components.ear
        )
        .map_err(io_err)?;
        if variant == Variant::Sae {
            write!(w, ",{},{}", t.components.adv, t.components.sub).map_err(io_err)?;
        }
        writeln!(w).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}
