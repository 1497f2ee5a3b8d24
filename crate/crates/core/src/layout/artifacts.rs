use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::{read_grid, write_grid, DensityGrid};
use super::labels::LabelAnchor;
use super::lod::LodAssignment;
use crate::error::{Error, Result};
use crate::store::{read_f32_matrix, write_atomic, write_f32_matrix};

pub const POSITIONS_FILE: &str = "positions.bin";
pub const GRID_FILE: &str = "density.grid";
pub const ANCHORS_FILE: &str = "anchors.jsonl";
pub const LOD_FILE: &str = "lod.jsonl";

#[derive(Serialize, Deserialize)]
struct LodLine {
    min_zoom: f32,
    preview: bool,
}

/// Everything the layout step writes next to the corpus. Positions and LOD
/// rows follow embedding-matrix row order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutArtifacts {
    pub positions: Vec<[f32; 2]>,
    pub grid: DensityGrid,
    pub anchors: Vec<LabelAnchor>,
    pub lod: LodAssignment,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<()> {
    write_atomic(path, |w| {
        for r in rows {
            serde_json::to_writer(&mut *w, &r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: format!("{}: {e}", path.display()),
        })?);
    }
    Ok(out)
}

impl LayoutArtifacts {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let flat: Vec<f32> = self.positions.iter().flat_map(|p| [p[0], p[1]]).collect();
        write_f32_matrix(&dir.join(POSITIONS_FILE), 2, &flat)?;
        write_grid(&self.grid, &dir.join(GRID_FILE))?;
        write_jsonl(&dir.join(ANCHORS_FILE), self.anchors.iter())?;
        write_jsonl(
            &dir.join(LOD_FILE),
            self.lod.min_zoom.iter().zip(&self.lod.preview).map(|(&min_zoom, &preview)| LodLine { min_zoom, preview }),
        )?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let (dim, flat) = read_f32_matrix(&dir.join(POSITIONS_FILE))?;
        if dim != 2 {
            return Err(Error::Format(format!("positions file has dim {dim}, expected 2")));
        }
        let positions: Vec<[f32; 2]> = flat.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
        let grid = read_grid(&dir.join(GRID_FILE))?;
        let anchors: Vec<LabelAnchor> = read_jsonl(&dir.join(ANCHORS_FILE))?;
        let lines: Vec<LodLine> = read_jsonl(&dir.join(LOD_FILE))?;
        if lines.len() != positions.len() {
            return Err(Error::Format(format!(
                "{} LOD rows for {} positions",
                lines.len(),
                positions.len()
            )));
        }
        let lod = LodAssignment {
            min_zoom: lines.iter().map(|l| l.min_zoom).collect(),
            preview: lines.iter().map(|l| l.preview).collect(),
        };
        Ok(Self {
            positions,
            grid,
            anchors,
            lod,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::density_grid;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let positions = vec![[0.0, 1.0], [2.5, -3.0]];
        let a = LayoutArtifacts {
            grid: density_grid(&positions, 16).unwrap(),
            positions,
            anchors: vec![LabelAnchor {
                position: [1.0, 1.0],
                text: "red dragon".into(),
                rank: 1,
                min_zoom: 0.0,
                population: 2,
            }],
            lod: LodAssignment {
                min_zoom: vec![5.0, 8.0],
                preview: vec![false, true],
            },
        };
        a.write(dir.path()).unwrap();
        assert_eq!(LayoutArtifacts::read(dir.path()).unwrap(), a);
    }
}
