//! Binary parameter checkpoints.
//!
//! Little-endian layout: magic `"EVSD"`, format version `u32`, layer-width
//! count `u32`, the widths themselves (`u32` each, input through output),
//! the activation tag (`u8`), then the flat parameter values as IEEE-754
//! `f64`. The same bytes travel over the worker wire as the parameter
//! broadcast, so encoding must stay bit-exact.

use std::fs;
use std::path::Path;

use super::{Activation, MlpPolicy, MlpSpec, NnError, ParameterVector};

const MAGIC: &[u8; 4] = b"EVSD";
const FORMAT_VERSION: u32 = 1;

/// Serialize a policy — spec plus flat parameters — to checkpoint bytes.
pub fn policy_to_bytes(policy: &MlpPolicy) -> Vec<u8> {
    let spec = policy.spec();
    let dims = spec.layer_dims();
    let flat = policy.to_flat();
    let mut out = Vec::with_capacity(4 + 4 + 4 + dims.len() * 4 + 1 + flat.len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for dim in dims {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.push(spec.activation.tag());
    for value in flat.iter() {
        out.extend_from_slice(&value.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::Decode(format!(
                "truncated checkpoint: needed {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decode checkpoint bytes back into a policy. Rejects bad magic, unknown
/// versions, malformed specs, truncation, trailing bytes, and non-finite
/// parameter values.
pub fn policy_from_bytes(bytes: &[u8]) -> Result<MlpPolicy, NnError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(NnError::Decode(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(NnError::Decode(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let n_dims = r.u32()? as usize;
    if n_dims < 2 {
        return Err(NnError::Decode(format!(
            "need at least input and output widths, got {n_dims} dims"
        )));
    }
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(r.u32()? as usize);
    }
    let activation = Activation::from_tag(r.u8()?)
        .ok_or_else(|| NnError::Decode("unknown activation tag".into()))?;
    let spec = MlpSpec::new(
        dims[0],
        dims[1..n_dims - 1].to_vec(),
        dims[n_dims - 1],
        activation,
    )
    .map_err(|e| NnError::Decode(e.to_string()))?;

    let d = spec.param_count();
    let mut values = Vec::with_capacity(d);
    for i in 0..d {
        let v = r.f64()?;
        if !v.is_finite() {
            return Err(NnError::Decode(format!(
                "non-finite parameter at flat index {i}"
            )));
        }
        values.push(v);
    }
    if r.pos != bytes.len() {
        return Err(NnError::Decode(format!(
            "{} trailing bytes after parameters",
            bytes.len() - r.pos
        )));
    }
    MlpPolicy::from_flat(spec, &ParameterVector::new(values))
}

pub fn save_checkpoint(policy: &MlpPolicy, path: &Path) -> Result<(), NnError> {
    fs::write(path, policy_to_bytes(policy))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpPolicy, NnError> {
    policy_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_policy() -> MlpPolicy {
        let spec = MlpSpec::new(3, vec![4, 4], 2, Activation::Tanh).unwrap();
        MlpPolicy::init(spec, 2024).unwrap()
    }

    #[test]
    fn byte_round_trip_is_bit_exact() {
        let policy = sample_policy();
        let bytes = policy_to_bytes(&policy);
        let restored = policy_from_bytes(&bytes).unwrap();
        assert_eq!(restored.spec(), policy.spec());
        // Compare raw bits, not float equality, to catch -0.0 / NaN drift.
        let a: Vec<u64> = policy.to_flat().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = restored.to_flat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn header_layout_is_pinned() {
        let spec = MlpSpec::new(1, vec![], 1, Activation::ReLU).unwrap();
        let policy = MlpPolicy::from_flat(spec, &vec![1.5, -0.25].into()).unwrap();
        let bytes = policy_to_bytes(&policy);
        let mut expected = Vec::new();
        expected.extend_from_slice(b"EVSD");
        expected.extend_from_slice(&1u32.to_le_bytes()); // version
        expected.extend_from_slice(&2u32.to_le_bytes()); // two widths
        expected.extend_from_slice(&1u32.to_le_bytes()); // input
        expected.extend_from_slice(&1u32.to_le_bytes()); // output
        expected.push(1); // relu tag
        expected.extend_from_slice(&1.5f64.to_le_bytes());
        expected.extend_from_slice(&(-0.25f64).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.bin");
        let policy = sample_policy();
        save_checkpoint(&policy, &path).unwrap();
        let restored = load_checkpoint(&path).unwrap();
        assert_eq!(restored.to_flat(), policy.to_flat());
    }

    #[test]
    fn rejects_corrupted_inputs() {
        let policy = sample_policy();
        let good = policy_to_bytes(&policy);

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            policy_from_bytes(&bad_magic),
            Err(NnError::Decode(msg)) if msg.contains("magic")
        ));

        let mut bad_version = good.clone();
        bad_version[4..8].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(
            policy_from_bytes(&bad_version),
            Err(NnError::Decode(msg)) if msg.contains("version")
        ));

        let truncated = &good[..good.len() - 3];
        assert!(matches!(
            policy_from_bytes(truncated),
            Err(NnError::Decode(msg)) if msg.contains("truncated")
        ));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(
            policy_from_bytes(&trailing),
            Err(NnError::Decode(msg)) if msg.contains("trailing")
        ));

        let mut non_finite = good.clone();
        let tail = non_finite.len() - 8;
        non_finite[tail..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(
            policy_from_bytes(&non_finite),
            Err(NnError::Decode(msg)) if msg.contains("non-finite")
        ));
    }
}
