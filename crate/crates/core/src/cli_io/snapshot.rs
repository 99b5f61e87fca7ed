//! Binary state snapshots.
//!
//! Layout: the magic bytes `MXS1`, then dim, M and the species count as
//! little-endian u64, the time as a little-endian f64, then the arrays
//! ρ, u₁..u_dim, θ, r₁..r_n as little-endian f64 in row-major grid order.

use crate::solver::MixtureState;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{self, Read, Write};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"MXS1";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("not a snapshot: bad magic bytes")]
    Magic,
    #[error("snapshot is truncated")]
    Truncated,
    #[error("snapshot dimensions do not fit: {0}")]
    Dimension(String),
    #[error("snapshot has trailing bytes after the last array")]
    TrailingData,
    #[error(transparent)]
    Io(io::Error),
}

impl From<io::Error> for SnapshotError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            SnapshotError::Truncated
        } else {
            SnapshotError::Io(e)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub dim: usize,
    pub modes: usize,
    pub state: MixtureState,
}

pub fn write_snapshot<W: Write>(mut out: W, modes: usize, state: &MixtureState) -> Result<(), SnapshotError> {
    let dim = state.velocity.len();
    let len = modes.checked_pow(dim as u32).unwrap_or(0);
    let arrays = std::iter::once(&state.rho)
        .chain(&state.velocity)
        .chain(std::iter::once(&state.theta))
        .chain(&state.entropy_vars);
    if arrays.clone().any(|a| a.len() != len) {
        return Err(SnapshotError::Dimension(format!("fields do not match a {dim}-dimensional grid with M = {modes}")));
    }
    out.write_all(MAGIC)?;
    out.write_u64::<LittleEndian>(dim as u64)?;
    out.write_u64::<LittleEndian>(modes as u64)?;
    out.write_u64::<LittleEndian>(state.entropy_vars.len() as u64)?;
    out.write_f64::<LittleEndian>(state.time)?;
    for array in arrays {
        for &v in array {
            out.write_f64::<LittleEndian>(v)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_array<R: Read>(input: &mut R, len: usize) -> Result<Vec<f64>, SnapshotError> {
    let mut values = vec![0.0; len];
    input.read_f64_into::<LittleEndian>(&mut values)?;
    Ok(values)
}

pub fn read_snapshot<R: Read>(mut input: R) -> Result<Snapshot, SnapshotError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SnapshotError::Magic);
    }
    let dim = input.read_u64::<LittleEndian>()?;
    let modes = input.read_u64::<LittleEndian>()?;
    let species = input.read_u64::<LittleEndian>()?;
    let time = input.read_f64::<LittleEndian>()?;
    if !(1..=3).contains(&dim) {
        return Err(SnapshotError::Dimension(format!("dim = {dim}")));
    }
    if species == 0 || species > 1024 {
        return Err(SnapshotError::Dimension(format!("{species} species")));
    }
    let len = usize::try_from(modes)
        .ok()
        .filter(|m| *m >= 2 && m % 2 == 0)
        .and_then(|m| m.checked_pow(dim as u32))
        .filter(|l| *l <= 1 << 30)
        .ok_or_else(|| SnapshotError::Dimension(format!("M = {modes}")))?;
    let rho = read_array(&mut input, len)?;
    let velocity = (0..dim).map(|_| read_array(&mut input, len)).collect::<Result<_, _>>()?;
    let theta = read_array(&mut input, len)?;
    let entropy_vars = (0..species).map(|_| read_array(&mut input, len)).collect::<Result<_, _>>()?;
    let mut extra = [0u8; 1];
    if input.read(&mut extra)? != 0 {
        return Err(SnapshotError::TrailingData);
    }
    Ok(Snapshot {
        dim: dim as usize,
        modes: modes as usize,
        state: MixtureState { rho, velocity, theta, entropy_vars, time },
    })
}
