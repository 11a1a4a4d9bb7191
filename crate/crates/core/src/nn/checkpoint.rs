//! Checkpoint file format.
//!
//! ```text
//! SDSRA-CKPT v1
//! l0.weight 64 3
//! l0.bias 64
//! ...
//! <blank line>
//! <little-endian f64 payload, descriptor order>
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{ArrayDesc, ParamVector};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "SDSRA-CKPT v1";

pub fn write_params<W: Write>(params: &ParamVector, sink: &mut W) -> Result<()> {
    let mut header = String::new();
    header.push_str(CHECKPOINT_MAGIC);
    header.push('\n');
    for desc in params.layout() {
        if desc.name.is_empty() || desc.name.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!(
                "array name {:?} is not a single token",
                desc.name
            )));
        }
        header.push_str(&desc.name);
        for d in &desc.shape {
            header.push(' ');
            header.push_str(&d.to_string());
        }
        header.push('\n');
    }
    header.push('\n');
    sink.write_all(header.as_bytes())?;
    let mut payload = Vec::with_capacity(8 * params.len());
    for v in params.values() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    sink.write_all(&payload)?;
    Ok(())
}

/// Reads a checkpoint with whatever descriptor table it carries.
pub fn read_params<R: Read>(source: &mut R) -> Result<ParamVector> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;

    let mut pos = 0;
    let mut next_line = |bytes: &[u8]| -> Result<String> {
        let rel = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let line = std::str::from_utf8(&bytes[pos..pos + rel])
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?
            .to_owned();
        pos += rel + 1;
        Ok(line)
    };

    let magic = next_line(&bytes)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("unexpected header {magic:?}")));
    }
    let mut layout = Vec::new();
    loop {
        let line = next_line(&bytes)?;
        if line.is_empty() {
            break;
        }
        let mut tokens = line.split(' ');
        let name = tokens.next().unwrap_or_default().to_owned();
        let shape = tokens
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::Checkpoint(format!("bad dimension {t:?} for array {name}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if name.is_empty() || shape.is_empty() {
            return Err(Error::Checkpoint(format!("malformed descriptor line {line:?}")));
        }
        layout.push(ArrayDesc::new(name, shape));
    }

    let expected = layout
        .iter()
        .try_fold(0usize, |acc, d| {
            d.shape
                .iter()
                .try_fold(1usize, |n, &s| n.checked_mul(s))
                .and_then(|n| acc.checked_add(n))
        })
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Checkpoint("descriptor sizes overflow".into()))?;
    let payload = &bytes[pos..];
    if payload.len() != expected {
        return Err(Error::Checkpoint(format!(
            "payload holds {} bytes but descriptors require {expected}",
            payload.len()
        )));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    ParamVector::from_parts(values, layout).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_params(params: &ParamVector, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params(params, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint and checks that it carries exactly `expected`.
pub fn load_params<R: Read>(source: &mut R, expected: &[ArrayDesc]) -> Result<ParamVector> {
    let params = read_params(source)?;
    if params.layout() != expected {
        return Err(Error::Checkpoint(format!(
            "layout mismatch: file has {}, expected {}",
            describe(params.layout()),
            describe(expected)
        )));
    }
    Ok(params)
}

fn describe(layout: &[ArrayDesc]) -> String {
    layout
        .iter()
        .map(|d| format!("{}{:?}", d.name, d.shape))
        .collect::<Vec<_>>()
        .join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mlp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> Mlp {
        Mlp::new(&[3, 8, 2], &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let net = net();
        let mut buf = Vec::new();
        write_params(net.params(), &mut buf).unwrap();
        assert!(buf.starts_with(b"SDSRA-CKPT v1\nl0.weight 8 3\nl0.bias 8\n"));
        let back = load_params(&mut buf.as_slice(), net.params().layout()).unwrap();
        let a: Vec<u64> = net.params().values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_widths_is_version_error() {
        let mut buf = Vec::new();
        write_params(net().params(), &mut buf).unwrap();
        let other = Mlp::zeros(&[3, 9, 2]).unwrap();
        let err = load_params(&mut buf.as_slice(), other.params().layout()).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
    }

    #[test]
    fn corrupted_length_field_rejected() {
        let mut buf = Vec::new();
        write_params(net().params(), &mut buf).unwrap();
        let text = String::from_utf8_lossy(&buf[..30]).into_owned();
        assert!(text.contains("l0.weight 8 3"));
        let mut corrupt = buf.clone();
        // "8 3" -> "9 3"
        let at = corrupt.windows(3).position(|w| w == b"8 3").unwrap();
        corrupt[at] = b'9';
        assert!(matches!(
            read_params(&mut corrupt.as_slice()),
            Err(Error::Checkpoint(_))
        ));

        let mut truncated = buf.clone();
        truncated.truncate(buf.len() - 4);
        assert!(matches!(
            read_params(&mut truncated.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn bad_magic_rejected() {
        let mut buf = Vec::new();
        write_params(net().params(), &mut buf).unwrap();
        buf[12] = b'2';
        assert!(matches!(read_params(&mut buf.as_slice()), Err(Error::Checkpoint(_))));
    }
}
