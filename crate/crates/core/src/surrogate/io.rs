//! Binary network format, all integers `u64` and all reals `f64`,
//! little-endian:
//!
//! ```text
//! magic  b"DNNRTO\x00\x01"
//! L      number of affine layers
//! w_0 … w_L   layer widths, input first
//! per layer: W (w_{k+1} × w_k, row-major), then b (w_{k+1})
//! epochs, final_loss
//! ```

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::mlp::{Layer, MlpSurrogate};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"DNNRTO\x00\x01";
const MAX_WIDTH: u64 = 1 << 24;

pub fn write_network<W: Write>(net: &MlpSurrogate, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    let widths = net.widths();
    out.write_all(&((widths.len() - 1) as u64).to_le_bytes())?;
    for w in &widths {
        out.write_all(&(*w as u64).to_le_bytes())?;
    }
    for l in net.layers() {
        for i in 0..l.weights.nrows() {
            for j in 0..l.weights.ncols() {
                out.write_all(&l.weights[(i, j)].to_le_bytes())?;
            }
        }
        for b in l.bias.iter() {
            out.write_all(&b.to_le_bytes())?;
        }
    }
    out.write_all(&(net.epochs as u64).to_le_bytes())?;
    out.write_all(&net.final_loss.to_le_bytes())?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_network<R: Read>(mut input: R, origin: &str) -> Result<MlpSurrogate> {
    let bad = |reason: String| Error::Format {
        path: origin.to_string(),
        reason,
    };
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .map_err(|e| bad(format!("header: {e}")))?;
    if &magic != MAGIC {
        return Err(bad("not a network file".into()));
    }
    let truncated = |e: std::io::Error| bad(format!("truncated: {e}"));
    let count = read_u64(&mut input).map_err(truncated)?;
    if count == 0 || count > 1024 {
        return Err(bad(format!("implausible layer count {count}")));
    }
    let mut widths = Vec::with_capacity(count as usize + 1);
    for _ in 0..=count {
        let w = read_u64(&mut input).map_err(truncated)?;
        if w == 0 || w > MAX_WIDTH {
            return Err(bad(format!("implausible width {w}")));
        }
        widths.push(w as usize);
    }
    let mut layers = Vec::with_capacity(count as usize);
    for w in widths.windows(2) {
        let (cols, rows) = (w[0], w[1]);
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(read_f64(&mut input).map_err(truncated)?);
        }
        let mut bias = Vec::with_capacity(rows);
        for _ in 0..rows {
            bias.push(read_f64(&mut input).map_err(truncated)?);
        }
        layers.push(Layer {
            weights: DMatrix::from_row_slice(rows, cols, &data),
            bias: DVector::from_vec(bias),
        });
    }
    let epochs = read_u64(&mut input).map_err(truncated)?;
    let final_loss = read_f64(&mut input).map_err(truncated)?;
    let mut net = MlpSurrogate::from_layers(layers).map_err(|e| bad(e.to_string()))?;
    net.epochs = epochs as usize;
    net.final_loss = final_loss;
    Ok(net)
}

pub fn save_network(net: &MlpSurrogate, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_network(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<MlpSurrogate> {
    let f = std::fs::File::open(path)?;
    read_network(std::io::BufReader::new(f), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::MlpArchitecture;

    #[test]
    fn bytes_survive_a_round_trip() {
        let mut net = MlpSurrogate::init(&MlpArchitecture::new(3, 4, 2, 5).unwrap(), 3).unwrap();
        net.epochs = 17;
        net.final_loss = 0.25;
        let mut buf = Vec::new();
        write_network(&net, &mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 8 * 5 + 8 * (3 * 5 + 5 + 5 * 5 + 5 + 5 * 4 + 4) + 16);
        let back = read_network(buf.as_slice(), "mem").unwrap();
        assert_eq!(back.layers(), net.layers());
        assert_eq!(back.epochs, 17);
    }

    #[test]
    fn corrupt_input_is_a_format_error() {
        assert!(matches!(read_network(&b"garbage!"[..], "x"), Err(Error::Format { .. })));
        let net = MlpSurrogate::init(&MlpArchitecture::new(1, 1, 1, 1).unwrap(), 0).unwrap();
        let mut buf = Vec::new();
        write_network(&net, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_network(buf.as_slice(), "x"), Err(Error::Format { .. })));
    }
}
