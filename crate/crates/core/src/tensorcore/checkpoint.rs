//! `FSCK1` parameter checkpoints.
//!
//! Layout: the five magic bytes `FSCK1`, then one record per parameter until
//! end of file: `u32` name length, name bytes (UTF-8), `u32` rank, `rank`
//! `u32` dimensions, and the little-endian `f32` payload. The architecture
//! descriptor is stored as JSON in a sibling `<checkpoint>.arch.json`.

use std::path::Path;

use super::network::{ArchDescriptor, Network};
use super::Tensor;
use crate::error::{Error, Result};
use crate::io::{self, ByteReader};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"FSCK1";

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn write_params<'a>(records: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_params(bytes: &[u8]) -> Result<Vec<ParamRecord>> {
    let mut r = ByteReader::new(bytes, "checkpoint");
    r.expect_magic(CHECKPOINT_MAGIC)?;
    let mut out = Vec::new();
    while !r.is_empty() {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("checkpoint: parameter name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        if rank > 4 {
            return Err(Error::Format(format!("checkpoint: `{name}` has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let data = r.f32s(shape.iter().product())?;
        out.push(ParamRecord { name, shape, data });
    }
    Ok(out)
}

impl Network {
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        write_params(self.params().iter().map(|p| (p.name.as_str(), &p.value)))
    }

    /// Writes parameters to `path` and the descriptor to `path.arch.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(
            &io::with_suffix(path, ".arch.json"),
            self.descriptor().to_text().as_bytes(),
        )?;
        io::write_atomic(path, &self.checkpoint_bytes())
    }

    /// Rebuilds a network from its descriptor and loads its parameters.
    pub fn restore(path: &Path) -> Result<Network> {
        let desc = ArchDescriptor::from_text(&io::read_to_string(&io::with_suffix(
            path,
            ".arch.json",
        ))?)?;
        let records = read_params(&io::read(path)?)?;
        let mut net = Network::from_descriptor(&desc, 0)?;
        net.assign(records)?;
        Ok(net)
    }

    /// Loads a checkpoint into this network; the stored descriptor must
    /// describe exactly this architecture.
    pub fn load_into(&mut self, path: &Path) -> Result<()> {
        let desc = ArchDescriptor::from_text(&io::read_to_string(&io::with_suffix(
            path,
            ".arch.json",
        ))?)?;
        if desc != self.descriptor() {
            return Err(Error::Format(format!(
                "{}: architecture descriptor mismatch",
                path.display()
            )));
        }
        let records = read_params(&io::read(path)?)?;
        self.assign(records)
    }

    /// Replaces every parameter value; validates everything first.
    pub fn assign(&mut self, records: Vec<ParamRecord>) -> Result<()> {
        if records.len() != self.params().len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, network has {}",
                records.len(),
                self.params().len()
            )));
        }
        for (r, p) in records.iter().zip(self.params()) {
            if r.name != p.name || r.shape != p.value.shape() {
                return Err(Error::Format(format!(
                    "checkpoint parameter `{}` {:?} does not match `{}` {:?}",
                    r.name,
                    r.shape,
                    p.name,
                    p.value.shape()
                )));
            }
        }
        for (r, p) in records.into_iter().zip(self.params_mut()) {
            p.value = Tensor::new(r.shape, r.data)?;
        }
        self.clear_cache();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::{LayerSpec, NetworkBuilder};

    fn small(seed: u64) -> Network {
        let mut b = NetworkBuilder::new(1, 6, 6);
        let x = b.input();
        let c = b.conv("c", x, 3, 3, 1, 1).unwrap();
        let p = b.unary("p", c, LayerSpec::Prelu { init_slope: 0.25 }).unwrap();
        b.dense("d", p, 2).unwrap();
        b.build(seed)
    }

    #[test]
    fn bytes_round_trip_bit_exact() {
        let net = small(3);
        let bytes = net.checkpoint_bytes();
        let recs = read_params(&bytes).unwrap();
        let again = write_params(recs.iter().map(|r| r.name.as_str()).zip(
            net.params().iter().map(|p| &p.value),
        ));
        assert_eq!(bytes, again);
        for (r, p) in recs.iter().zip(net.params()) {
            assert_eq!(r.data, p.value.data());
        }
    }

    #[test]
    fn corrupted_magic_is_rejected_without_partial_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.fsck");
        small(1).save(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        let mut target = small(2);
        let before = target.params()[0].value.clone();
        assert!(matches!(target.load_into(&path), Err(Error::Format(_))));
        assert_eq!(target.params()[0].value, before);
        assert!(matches!(Network::restore(&path), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_architecture_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.fsck");
        small(1).save(&path).unwrap();
        let mut b = NetworkBuilder::new(1, 6, 6);
        let x = b.input();
        b.conv("c", x, 4, 3, 1, 1).unwrap();
        let mut other = b.build(0);
        let err = other.load_into(&path).unwrap_err();
        assert!(err.to_string().contains("descriptor mismatch"));
    }

    #[test]
    fn truncated_payload_is_format_error() {
        let bytes = small(1).checkpoint_bytes();
        assert!(matches!(
            read_params(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
    }
}
