//! Corpus files are line-delimited JSON: one header line
//! `{"topology": {...}, "classes": [...], "seed": n}` followed by one line per
//! sequence `{"label": k, "frames": [[[x, y], ...], ...], "source": "..."}`.
//! Coordinates are written with 17 significant digits so a save/load cycle is exact.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, SkelError, SkeletonSequence, SkeletonTopology};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    topology: SkeletonTopology,
    classes: Vec<String>,
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceLine {
    label: usize,
    frames: Vec<Vec<[f64; 2]>>,
    source: String,
}

fn push_real(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String cannot fail");
}

fn sequence_line(seq: &SkeletonSequence) -> Result<String, SkelError> {
    let mut line = String::with_capacity(seq.len() * seq.joints() * 50 + 64);
    write!(line, "{{\"label\":{},\"frames\":[", seq.label).unwrap();
    for (t, frame) in seq.frames.iter().enumerate() {
        if t > 0 {
            line.push(',');
        }
        line.push('[');
        for (j, p) in frame.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push('[');
            push_real(&mut line, p[0]);
            line.push(',');
            push_real(&mut line, p[1]);
            line.push(']');
        }
        line.push(']');
    }
    let source = serde_json::to_string(&seq.source).map_err(|e| SkelError::Contract(e.to_string()))?;
    write!(line, "],\"source\":{source}}}").unwrap();
    Ok(line)
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut w: W) -> Result<(), SkelError> {
    corpus.validate()?;
    let header = Header {
        topology: corpus.topology.clone(),
        classes: corpus.class_names.clone(),
        seed: corpus.seed,
    };
    let header = serde_json::to_string(&header).map_err(|e| SkelError::Contract(e.to_string()))?;
    writeln!(w, "{header}")?;
    for seq in &corpus.sequences {
        writeln!(w, "{}", sequence_line(seq)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus<R: Read>(r: R) -> Result<Corpus, SkelError> {
    let mut lines = BufReader::new(r).lines();
    let header_text = lines.next().ok_or(SkelError::Parse {
        line: 1,
        message: "empty file: missing header".into(),
    })??;
    let header: Header = serde_json::from_str(&header_text).map_err(|e| SkelError::Parse {
        line: 1,
        message: format!("header: {e}"),
    })?;
    header.topology.validate().map_err(|e| SkelError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let joints = header.topology.joints();
    let classes = header.classes.len();

    let mut sequences = Vec::new();
    for (i, text) in lines.enumerate() {
        let line = i + 2;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let parsed: SequenceLine = serde_json::from_str(&text).map_err(|e| SkelError::Parse {
            line,
            message: e.to_string(),
        })?;
        if parsed.label >= classes {
            return Err(SkelError::Parse {
                line,
                message: format!("label {} out of range for {classes} classes", parsed.label),
            });
        }
        if parsed.frames.is_empty() || parsed.frames.iter().any(|f| f.len() != joints) {
            return Err(SkelError::Parse {
                line,
                message: format!("every frame must have {joints} joints"),
            });
        }
        sequences.push(SkeletonSequence {
            frames: parsed.frames,
            label: parsed.label,
            source: parsed.source,
        });
    }
    Ok(Corpus {
        topology: header.topology,
        sequences,
        class_names: header.classes,
        seed: header.seed,
    })
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), SkelError> {
    write_corpus(corpus, BufWriter::new(File::create(path)?))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, SkelError> {
    read_corpus(File::open(path)?)
}
