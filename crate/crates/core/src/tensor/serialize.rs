//! Little-endian binary tensor container.
//!
//! Layout of one tensor record:
//!
//! | bytes        | content                                  |
//! |--------------|------------------------------------------|
//! | 4            | magic `b"TNSR"`                          |
//! | 1            | dtype code (`1` = f32, `2` = f64)        |
//! | 1            | rank `r` (1..=255)                       |
//! | 8·r          | dims, each `u64` little-endian           |
//! | size·Πdims   | elements, little-endian IEEE-754         |
//!
//! Records are self-delimiting, so checkpoints simply concatenate them.

use super::{numel, DType, Scalar, Tensor};
use crate::error::{Error, Result};
use std::io::{Read, Write};

pub const MAGIC: &[u8; 4] = b"TNSR";

pub fn encode<S: Scalar>(t: &Tensor<S>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 8 * t.rank() + S::DTYPE.size() * t.len());
    out.extend_from_slice(MAGIC);
    out.push(S::DTYPE as u8);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        x.write_le(&mut out);
    }
    out
}

pub fn write_tensor<S: Scalar, W: Write>(w: &mut W, t: &Tensor<S>) -> std::io::Result<()> {
    w.write_all(&encode(t))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated tensor record ({what}): {e}")))
}

/// Reads one record. The stored dtype must equal `S`.
pub fn read_tensor<S: Scalar, R: Read>(r: &mut R) -> Result<Tensor<S>> {
    let mut head = [0u8; 6];
    read_exact(r, &mut head, "header")?;
    if &head[..4] != MAGIC {
        return Err(Error::Format(format!("bad tensor magic {:?}", &head[..4])));
    }
    let dtype = DType::from_code(head[4])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", head[4])))?;
    if dtype != S::DTYPE {
        return Err(Error::Format(format!(
            "tensor stored as {} but {} was requested",
            dtype.name(),
            S::DTYPE.name()
        )));
    }
    let rank = head[5] as usize;
    if rank == 0 {
        return Err(Error::Format("tensor record with rank 0".into()));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        read_exact(r, &mut b, "dims")?;
        dims.push(u64::from_le_bytes(b) as usize);
    }
    let count = numel(&dims);
    let width = dtype.size();
    let mut raw = vec![0u8; count * width];
    read_exact(r, &mut raw, "payload")?;
    let data = raw.chunks_exact(width).map(S::read_le).collect();
    Tensor::new(dims, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn decode<S: Scalar>(mut bytes: &[u8]) -> Result<Tensor<S>> {
    read_tensor(&mut bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f32>::from_f64(vec![1, 2], &[1.0, -2.0]).unwrap();
        let bytes = encode(&t);
        assert_eq!(&bytes[..4], b"TNSR");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 2);
        assert_eq!(&bytes[6..14], &1u64.to_le_bytes());
        assert_eq!(&bytes[14..22], &2u64.to_le_bytes());
        assert_eq!(&bytes[22..26], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 6 + 16 + 8);
    }

    #[test]
    fn rejects_wrong_dtype_and_truncation() {
        let t = Tensor::<f64>::ones(vec![3]);
        let bytes = encode(&t);
        assert!(decode::<f32>(&bytes).is_err());
        assert!(decode::<f64>(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode::<f64>(&bad).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(dims in proptest::collection::vec(1usize..5, 1..4),
                                  seed in any::<u64>()) {
            let n = numel(&dims);
            let mut rng = crate::rng::Rng::new(seed);
            let data: Vec<f32> = (0..n).map(|_| f32::from_bits(rng.next_u64() as u32 & 0x7f7f_ffff)).collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = decode::<f32>(&encode(&t)).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            let same = back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
