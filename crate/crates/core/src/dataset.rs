//! JSONL dataset format.
//!
//! One record per line:
//! `{"image": "images/00000.png", "html_tokens": [...], "cells": [{"bbox": [l,t,r,b] | null,
//! "content": "...", "is_empty": false, "rowspan": 1, "colspan": 1}, ...], "text_lines": [...]}`.
//! Image paths are relative to the directory holding the JSONL file.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::grid::{BBox, Cell, TableGrid};
use crate::postproc::TextLine;
use crate::tokens::{detokenize, tokenize, TokenSeq};

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const IMAGE_DIR: &str = "images";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub bbox: Option<[f32; 4]>,
    pub content: String,
    pub is_empty: bool,
    pub rowspan: u32,
    pub colspan: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub bbox: [f32; 4],
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub image: String,
    pub html_tokens: Vec<String>,
    pub cells: Vec<CellRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub text_lines: Vec<LineRecord>,
}

impl Record {
    pub fn from_grid(
        image: String,
        grid: &TableGrid,
        text_lines: &[TextLine],
        max_span: u32,
    ) -> Result<Self> {
        Ok(Self {
            image,
            html_tokens: tokenize(grid, max_span)?.to_strings(),
            cells: grid
                .cells()
                .map(|c| CellRecord {
                    bbox: c.content_bbox.map(BBox::to_array),
                    content: c.content.clone(),
                    is_empty: c.is_empty,
                    rowspan: c.rowspan,
                    colspan: c.colspan,
                })
                .collect(),
            text_lines: text_lines
                .iter()
                .map(|l| LineRecord {
                    bbox: l.bbox.to_array(),
                    text: l.text.clone(),
                })
                .collect(),
        })
    }

    /// Annotated grid; structure from the tokens, annotations from `cells`.
    pub fn grid(&self) -> std::result::Result<TableGrid, String> {
        let seq = TokenSeq::parse_strings(&self.html_tokens).map_err(|e| e.to_string())?;
        let decoded = detokenize(&seq);
        if decoded.is_repaired() {
            return Err(format!("malformed html_tokens: {:?}", decoded.repairs));
        }
        let structure = decoded.grid;
        if structure.n_cells() != self.cells.len() {
            return Err(format!(
                "html_tokens describe {} cells but {} cell records are present",
                structure.n_cells(),
                self.cells.len()
            ));
        }
        let mut records = self.cells.iter();
        let rows = structure
            .rows()
            .iter()
            .map(|row| {
                row.iter()
                    .map(|s| {
                        let r = records.next().expect("counts checked");
                        if (r.rowspan, r.colspan) != (s.rowspan, s.colspan) {
                            return Err("cell spans disagree with html_tokens".to_string());
                        }
                        if !s.is_spanning() && r.is_empty != s.is_empty {
                            return Err("cell emptiness disagrees with html_tokens".to_string());
                        }
                        Ok(Cell {
                            rowspan: r.rowspan,
                            colspan: r.colspan,
                            is_empty: r.is_empty,
                            content: r.content.clone(),
                            content_bbox: r.bbox.map(BBox::from_array),
                        })
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let grid = TableGrid::new(rows);
        grid.validate().map_err(|e| e.to_string())?;
        grid.validate_annotations().map_err(|e| e.to_string())?;
        Ok(grid)
    }

    pub fn lines(&self) -> Vec<TextLine> {
        self.text_lines
            .iter()
            .map(|l| TextLine {
                bbox: BBox::from_array(l.bbox),
                text: l.text.clone(),
            })
            .collect()
    }
}

fn jsonl_path(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "jsonl") {
        path.to_path_buf()
    } else {
        path.join(DATASET_FILE)
    }
}

/// Writes `samples` under `dir` (`dataset.jsonl` plus `images/NNNNN.png`) and
/// returns the JSONL path.
pub fn export_dataset(samples: &[Sample], dir: &Path, max_span: u32) -> Result<PathBuf> {
    fs::create_dir_all(dir.join(IMAGE_DIR))?;
    let path = dir.join(DATASET_FILE);
    let mut out = BufWriter::new(File::create(&path)?);
    for (i, s) in samples.iter().enumerate() {
        let rel = format!("{IMAGE_DIR}/{i:05}.png");
        s.image.save(dir.join(&rel))?;
        let record = Record::from_grid(rel, &s.grid, &s.text_lines, max_span)?;
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(path)
}

/// Reads all records; `path` is the JSONL file or the directory holding it.
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let path = jsonl_path(path);
    let reader = BufReader::new(File::open(&path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| Error::Dataset {
            path: path.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Loads records together with their images and validated grids.
pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    let jsonl = jsonl_path(path);
    let root = jsonl.parent().unwrap_or(Path::new(".")).to_path_buf();
    let records = read_records(&jsonl)?;
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let schema = |message: String| Error::Dataset {
                path: jsonl.clone(),
                line: i + 1,
                message,
            };
            let grid = r.grid().map_err(schema)?;
            let image = image::open(root.join(&r.image))
                .map_err(|e| schema(format!("{}: {e}", r.image)))?
                .to_rgb8();
            Ok(Sample {
                image,
                grid,
                text_lines: r.lines(),
            })
        })
        .collect()
}

/// Summary counts over a set of grids.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DatasetStats {
    pub tables: usize,
    pub cells: usize,
    pub empty_cells: usize,
    pub spanning_cells: usize,
    pub text_lines: usize,
    pub max_tokens: usize,
}

impl DatasetStats {
    pub fn from_samples(samples: &[Sample], max_span: u32) -> Result<Self> {
        let mut s = DatasetStats::default();
        for sample in samples {
            s.tables += 1;
            s.cells += sample.grid.n_cells();
            s.empty_cells += sample.grid.cells().filter(|c| c.is_empty).count();
            s.spanning_cells += sample.grid.cells().filter(|c| c.is_spanning()).count();
            s.text_lines += sample.text_lines.len();
            s.max_tokens = s.max_tokens.max(tokenize(&sample.grid, max_span)?.len());
        }
        Ok(s)
    }
}
