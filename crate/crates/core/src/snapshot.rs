//! SHLAB1 field snapshots.
//!
//! A snapshot is one ASCII header line `SHLAB1 <kind> <nx> <ny> <ncomp>\n` followed by
//! `nx * ny * ncomp` little-endian `f64` values, row-major over cells with components
//! interleaved per cell. `kind` is one of `scalar` (1 component), `vector` (2) or
//! `symtraceless` (2, stored as `p, s`).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, SymTracelessField, TorusGrid, VectorField};

pub const MAGIC: &str = "SHLAB1";

#[derive(Debug, Clone, PartialEq)]
pub enum Snapshot {
    Scalar(ScalarField),
    Vector(VectorField),
    SymTraceless(SymTracelessField),
}

impl Snapshot {
    pub fn kind(&self) -> &'static str {
        match self {
            Snapshot::Scalar(_) => "scalar",
            Snapshot::Vector(_) => "vector",
            Snapshot::SymTraceless(_) => "symtraceless",
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        match self {
            Snapshot::Scalar(f) => f.grid(),
            Snapshot::Vector(f) => f.grid(),
            Snapshot::SymTraceless(f) => f.grid(),
        }
    }

    fn components(&self) -> Vec<&[f64]> {
        match self {
            Snapshot::Scalar(f) => vec![f.values()],
            Snapshot::Vector(f) => vec![f.x(), f.y()],
            Snapshot::SymTraceless(f) => vec![f.p(), f.s()],
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let g = self.grid();
        let comps = self.components();
        let header = format!(
            "{MAGIC} {} {} {} {}\n",
            self.kind(),
            g.nx(),
            g.ny(),
            comps.len()
        );
        let mut out = Vec::with_capacity(header.len() + 8 * g.len() * comps.len());
        out.extend_from_slice(header.as_bytes());
        for k in 0..g.len() {
            for c in &comps {
                out.extend_from_slice(&c[k].to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("missing header line".into()))?;
        let header = std::str::from_utf8(&bytes[..newline])
            .map_err(|_| Error::Format("header is not ASCII".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 5 || parts[0] != MAGIC {
            return Err(Error::Format(format!("bad header `{header}`")));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad header field `{s}`")))
        };
        let (nx, ny, ncomp) = (num(parts[2])?, num(parts[3])?, num(parts[4])?);
        let expected = match parts[1] {
            "scalar" => 1,
            "vector" | "symtraceless" => 2,
            other => return Err(Error::Format(format!("unknown kind `{other}`"))),
        };
        if ncomp != expected {
            return Err(Error::Format(format!(
                "kind `{}` needs {expected} components, header says {ncomp}",
                parts[1]
            )));
        }
        let grid = TorusGrid::new(nx, ny)
            .map_err(|e| Error::Format(format!("bad grid in header: {e}")))?;
        let payload = &bytes[newline + 1..];
        let want = 8 * grid.len() * ncomp;
        if payload.len() != want {
            return Err(Error::Format(format!(
                "payload has {} bytes, header implies {want}",
                payload.len()
            )));
        }
        let mut comps = vec![Vec::with_capacity(grid.len()); ncomp];
        for (n, chunk) in payload.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            comps[n % ncomp].push(v);
        }
        let bad = |e: Error| Error::Format(e.to_string());
        let mut it = comps.into_iter();
        Ok(match parts[1] {
            "scalar" => Snapshot::Scalar(ScalarField::new(grid, it.next().unwrap()).map_err(bad)?),
            "vector" => Snapshot::Vector(
                VectorField::new(grid, it.next().unwrap(), it.next().unwrap()).map_err(bad)?,
            ),
            _ => Snapshot::SymTraceless(
                SymTracelessField::new(grid, it.next().unwrap(), it.next().unwrap())
                    .map_err(bad)?,
            ),
        })
    }
}

impl From<ScalarField> for Snapshot {
    fn from(f: ScalarField) -> Self {
        Snapshot::Scalar(f)
    }
}

impl From<VectorField> for Snapshot {
    fn from(f: VectorField) -> Self {
        Snapshot::Vector(f)
    }
}

impl From<SymTracelessField> for Snapshot {
    fn from(f: SymTracelessField) -> Self {
        Snapshot::SymTraceless(f)
    }
}

pub fn write_snapshot(field: &Snapshot, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, field.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<Snapshot> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Snapshot::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn header_layout() {
        let g = TorusGrid::new(4, 6).unwrap();
        let f = VectorField::from_fn(g, |[x, y]| [x, -y]);
        let bytes = Snapshot::from(f.clone()).to_bytes();
        assert!(bytes.starts_with(b"SHLAB1 vector 4 6 2\n"));
        let off = b"SHLAB1 vector 4 6 2\n".len();
        // First cell, x then y.
        assert_eq!(&bytes[off..off + 8], &f.x()[0].to_le_bytes());
        assert_eq!(&bytes[off + 8..off + 16], &f.y()[0].to_le_bytes());
        assert_eq!(bytes.len(), off + 4 * 6 * 2 * 8);
    }

    #[test]
    fn component_count_mismatch_is_rejected() {
        let g = TorusGrid::square(4).unwrap();
        let mut bytes = b"SHLAB1 vector 4 4 2\n".to_vec();
        bytes.extend(
            ScalarField::constant(g, 1.0)
                .values()
                .iter()
                .flat_map(|v| v.to_le_bytes()),
        );
        assert!(matches!(
            Snapshot::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
        let mut bytes = b"SHLAB1 scalar 4 4 2\n".to_vec();
        bytes.extend(std::iter::repeat_n(0u8, 16 * 16));
        assert!(matches!(
            Snapshot::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn empty_and_truncated_inputs_are_rejected() {
        assert!(matches!(Snapshot::from_bytes(b""), Err(Error::Format(_))));
        assert!(matches!(
            Snapshot::from_bytes(b"SHLAB2 scalar 4 4 1\n"),
            Err(Error::Format(_))
        ));
        let g = TorusGrid::square(4).unwrap();
        let mut bytes = Snapshot::from(ScalarField::constant(g, 1.0)).to_bytes();
        bytes.pop();
        assert!(matches!(
            Snapshot::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.shlab");
        let g = TorusGrid::square(16).unwrap();
        let f = ScalarField::from_fn(g, |[x, y]| (x * 7.3).sin() * y.exp() / 3.0);
        write_snapshot(&f.clone().into(), &path).unwrap();
        let back = read_snapshot(&path).unwrap();
        match back {
            Snapshot::Scalar(b) => {
                for (a, b) in f.values().iter().zip(b.values()) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
            _ => panic!("wrong kind"),
        }
        assert!(matches!(
            read_snapshot(dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            half in 2usize..6,
            seed in prop::collection::vec(-1e12f64..1e12, 1..8),
            kind in 0usize..3,
        ) {
            let g = TorusGrid::square(2 * half).unwrap();
            let vals = |off: usize| -> Vec<f64> {
                (0..g.len()).map(|k| seed[(k + off) % seed.len()] * (k as f64 + 0.25)).collect()
            };
            let snap = match kind {
                0 => Snapshot::Scalar(ScalarField::new(g, vals(0)).unwrap()),
                1 => Snapshot::Vector(VectorField::new(g, vals(0), vals(1)).unwrap()),
                _ => Snapshot::SymTraceless(SymTracelessField::new(g, vals(2), vals(3)).unwrap()),
            };
            let back = Snapshot::from_bytes(&snap.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), snap.to_bytes());
            prop_assert_eq!(back, snap);
        }
    }
}
