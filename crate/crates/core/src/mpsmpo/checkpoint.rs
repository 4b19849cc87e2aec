use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{Mps, MpsError, Result};
use crate::symtensor::{read_tensor, write_tensor, QNum};

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub mps: Mps,
    pub stage: usize,
}

fn io(e: impl std::fmt::Display) -> MpsError {
    MpsError::Io(e.to_string())
}

/// Writes `manifest.txt` and one `site_<i>.bin` per tensor into `dir`.
pub fn write_checkpoint(dir: &Path, mps: &Mps, stage: usize) -> Result<()> {
    fs::create_dir_all(dir).map_err(io)?;
    let center = mps.center.map(|c| c.to_string()).unwrap_or_else(|| "none".into());
    let manifest = format!(
        "length {}\nflux {} {}\ncenter {}\nstage {}\n",
        mps.len(),
        mps.flux.n,
        mps.flux.two_sz,
        center,
        stage
    );
    fs::write(dir.join("manifest.txt"), manifest).map_err(io)?;
    for (i, t) in mps.tensors.iter().enumerate() {
        let mut w = BufWriter::new(File::create(dir.join(format!("site_{i}.bin"))).map_err(io)?);
        write_tensor(t, &mut w)?;
    }
    Ok(())
}

pub fn read_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(dir.join("manifest.txt")).map_err(io)?;
    let mut length = None;
    let mut flux = None;
    let mut center = None;
    let mut stage = None;
    for line in text.lines() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = || MpsError::Io(format!("bad manifest line '{line}'"));
        match parts.as_slice() {
            ["length", n] => length = Some(n.parse::<usize>().map_err(|_| bad())?),
            ["flux", n, z] => {
                flux = Some(QNum::new(n.parse().map_err(|_| bad())?, z.parse().map_err(|_| bad())?))
            }
            ["center", "none"] => center = Some(None),
            ["center", c] => center = Some(Some(c.parse::<usize>().map_err(|_| bad())?)),
            ["stage", s] => stage = Some(s.parse::<usize>().map_err(|_| bad())?),
            [] => {}
            _ => return Err(bad()),
        }
    }
    let missing = |k: &str| MpsError::Io(format!("manifest lacks '{k}'"));
    let length = length.ok_or_else(|| missing("length"))?;
    let mut tensors = Vec::with_capacity(length);
    for i in 0..length {
        let mut r = BufReader::new(File::open(dir.join(format!("site_{i}.bin"))).map_err(io)?);
        tensors.push(read_tensor(&mut r)?);
    }
    Ok(Checkpoint {
        mps: Mps { tensors, center: center.ok_or_else(|| missing("center"))?, flux: flux.ok_or_else(|| missing("flux"))? },
        stage: stage.ok_or_else(|| missing("stage"))?,
    })
}
