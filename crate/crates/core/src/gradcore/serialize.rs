//! Tensor records: a JSON header line `{"name","dtype","shape"}` followed
//! by the row-major elements as little-endian `f32`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use super::{GradError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RecordHeader {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
}

fn io_err(e: std::io::Error) -> GradError {
    GradError::Format(e.to_string())
}

pub fn write_tensor<W: Write, T: Real>(out: &mut W, name: &str, t: &Tensor<T>) -> Result<()> {
    let header = RecordHeader {
        name: name.to_string(),
        dtype: "f32".into(),
        shape: t.shape().to_vec(),
    };
    let line = serde_json::to_string(&header).map_err(|e| GradError::Format(e.to_string()))?;
    out.write_all(line.as_bytes()).map_err(io_err)?;
    out.write_all(b"\n").map_err(io_err)?;
    let mut bytes = Vec::with_capacity(t.len() * 4);
    for v in t.data() {
        bytes.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    out.write_all(&bytes).map_err(io_err)
}

/// Read the next record, or `None` at a clean end of stream.
pub fn read_tensor<R: BufRead>(input: &mut R) -> Result<Option<(String, Tensor<f32>)>> {
    let mut line = Vec::new();
    let n = input.read_until(b'\n', &mut line).map_err(io_err)?;
    if n == 0 {
        return Ok(None);
    }
    if line.last() != Some(&b'\n') {
        return Err(GradError::Format("truncated record header".into()));
    }
    let header: RecordHeader =
        serde_json::from_slice(&line[..line.len() - 1]).map_err(|e| GradError::Format(format!("bad header: {e}")))?;
    if header.dtype != "f32" {
        return Err(GradError::Format(format!("unsupported dtype `{}`", header.dtype)));
    }
    if header.shape.is_empty() || header.shape.len() > 4 {
        return Err(GradError::Format(format!("bad shape {:?} for `{}`", header.shape, header.name)));
    }
    let count: usize = header.shape.iter().product();
    let mut bytes = vec![0u8; count * 4];
    input
        .read_exact(&mut bytes)
        .map_err(|_| GradError::Format(format!("truncated payload for `{}`", header.name)))?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Some((header.name, Tensor::from_vec(&header.shape, data)?)))
}

pub fn read_all<R: BufRead>(input: &mut R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut out = Vec::new();
    while let Some(rec) = read_tensor(input)? {
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_json_line() {
        let t = Tensor::from_vec(&[2, 1], vec![1.0f32, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, "w", &t).unwrap();
        let nl = buf.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(&buf[..nl], br#"{"name":"w","dtype":"f32","shape":[2,1]}"#);
        assert_eq!(&buf[nl + 1..nl + 5], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), nl + 1 + 8);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let t = Tensor::from_vec(&[3], vec![1.0f32, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, "x", &t).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(matches!(read_tensor(&mut &buf[..]), Err(GradError::Format(_))));
        assert!(read_tensor(&mut &b"{not json}\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn records_round_trip(values in proptest::collection::vec(-1e6f32..1e6, 1..40)) {
            let t = Tensor::from_vec(&[values.len()], values).unwrap();
            let mut buf = Vec::new();
            write_tensor(&mut buf, "a", &t).unwrap();
            write_tensor(&mut buf, "b", &t).unwrap();
            let recs = read_all(&mut &buf[..]).unwrap();
            prop_assert_eq!(recs.len(), 2);
            prop_assert_eq!(&recs[1].0, "b");
            prop_assert_eq!(&recs[0].1, &t);
        }
    }
}
