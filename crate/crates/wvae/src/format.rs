//! Shared on-disk scheme for coefficient dumps and checkpoints: one UTF-8
//! JSON header line terminated by `\n`, then the payload as little-endian
//! IEEE-754 doubles. Bit-exact across platforms.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn write_block<W: Write, H: Serialize>(out: &mut W, header: &H, payload: &[f64]) -> Result<()> {
    let line = serde_json::to_string(header)
        .map_err(|e| Error::Format(format!("header encode failed: {e}")))?;
    out.write_all(line.as_bytes())?;
    out.write_all(b"\n")?;
    let mut bytes = Vec::with_capacity(payload.len() * 8);
    for v in payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

pub fn read_block<R: BufRead, H: DeserializeOwned>(input: &mut R) -> Result<(H, Vec<f64>)> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    if !line.ends_with('\n') {
        return Err(Error::Format("missing header line terminator".into()));
    }
    let header: H = serde_json::from_str(line.trim_end_matches('\n'))
        .map_err(|e| Error::Format(format!("bad header: {e}")))?;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "payload length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    let payload = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Hdr {
        magic: String,
        n: usize,
    }

    #[test]
    fn block_round_trip_is_bit_exact() {
        let header = Hdr {
            magic: "TST1".into(),
            n: 3,
        };
        let payload = vec![1.5, -0.0, f64::MIN_POSITIVE];
        let mut buf = Vec::new();
        write_block(&mut buf, &header, &payload).unwrap();
        let (h2, p2): (Hdr, Vec<f64>) = read_block(&mut buf.as_slice()).unwrap();
        assert_eq!(h2, header);
        assert_eq!(p2.len(), payload.len());
        for (a, b) in p2.iter().zip(&payload) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn ragged_payload_rejected() {
        let header = Hdr {
            magic: "TST1".into(),
            n: 1,
        };
        let mut buf = Vec::new();
        write_block(&mut buf, &header, &[1.0]).unwrap();
        buf.pop();
        let got: Result<(Hdr, Vec<f64>)> = read_block(&mut buf.as_slice());
        assert!(matches!(got, Err(Error::Format(_))));
    }
}
