//! Plain-text checkpoints for encoders and style memories.
//!
//! Every value is written with 17 significant digits, which round-trips an
//! `f64` exactly, so a dump read back is bitwise equal to what was written.
//!
//! Memory layout:
//!
//! ```text
//! style_memory v1
//! rows 20
//! dim 32
//! momentum 2.0000000000000001e-1
//! policy renormalize
//! counts 0 0 ...
//! <one prototype row per line, space separated>
//! ```

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::memory::{RenormPolicy, StyleMemory};
use crate::nn::{Activation, EncoderParams, Layer};
use crate::tensor::Tensor;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Hash over the exact bit patterns and shapes of a list of tensors.
pub fn digest_tensors<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> String {
    let mut hasher = Sha256::new();
    for t in tensors {
        for &d in t.shape() {
            hasher.update((d as u64).to_le_bytes());
        }
        for v in t.values() {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    hasher
        .finalize()
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn join_row(values: &[f64]) -> String {
    values.iter().map(|&v| fmt_f64(v)).collect::<Vec<_>>().join(" ")
}

fn malformed(what: &'static str, message: impl Into<String>) -> Error {
    Error::Format {
        what,
        message: message.into(),
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    what: &'static str,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, what: &'static str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            what,
        }
    }

    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .by_ref()
            .find(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| malformed(self.what, "unexpected end of input"))
    }

    /// Reads `key value...` and returns the value part.
    fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (n, line) = self.next_line()?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok((n, rest.trim())),
            _ if line == key => Ok((n, "")),
            _ => Err(malformed(self.what, format!("line {n}: expected `{key}`, found {line:?}"))),
        }
    }

    fn parse<T: std::str::FromStr>(&self, n: usize, s: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        s.parse()
            .map_err(|e| malformed(self.what, format!("line {n}: {s:?}: {e}")))
    }

    fn row(&mut self, width: usize) -> Result<Vec<f64>> {
        let (n, line) = self.next_line()?;
        let values = line
            .split_whitespace()
            .map(|tok| self.parse::<f64>(n, tok))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != width {
            return Err(malformed(
                self.what,
                format!("line {n}: expected {width} values, found {}", values.len()),
            ));
        }
        Ok(values)
    }
}

pub fn memory_to_text(memory: &StyleMemory) -> Result<String> {
    let protos = memory.prototypes()?;
    let mut out = String::new();
    let _ = writeln!(out, "style_memory v1");
    let _ = writeln!(out, "rows {}", protos.rows());
    let _ = writeln!(out, "dim {}", protos.cols());
    let _ = writeln!(out, "momentum {}", fmt_f64(memory.momentum()));
    let _ = writeln!(out, "policy {}", memory.policy().as_str());
    let counts: Vec<String> = memory.update_count().iter().map(u64::to_string).collect();
    let _ = writeln!(out, "counts {}", counts.join(" "));
    for row in protos.iter_rows() {
        let _ = writeln!(out, "{}", join_row(row));
    }
    Ok(out)
}

pub fn memory_from_text(text: &str) -> Result<StyleMemory> {
    const WHAT: &str = "memory checkpoint";
    let mut lines = Lines::new(text, WHAT);
    let (n, header) = lines.next_line()?;
    if header != "style_memory v1" {
        return Err(malformed(WHAT, format!("line {n}: unknown header {header:?}")));
    }
    let (n, v) = lines.field("rows")?;
    let rows: usize = lines.parse(n, v)?;
    let (n, v) = lines.field("dim")?;
    let dim: usize = lines.parse(n, v)?;
    let (n, v) = lines.field("momentum")?;
    let momentum: f64 = lines.parse(n, v)?;
    let (n, v) = lines.field("policy")?;
    let policy = match v {
        "renormalize" => RenormPolicy::Renormalize,
        "paper_literal" => RenormPolicy::PaperLiteral,
        other => return Err(malformed(WHAT, format!("line {n}: unknown policy {other:?}"))),
    };
    let (n, v) = lines.field("counts")?;
    let counts = v
        .split_whitespace()
        .map(|t| lines.parse::<u64>(n, t))
        .collect::<Result<Vec<_>>>()?;
    let mut values = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        values.extend(lines.row(dim)?);
    }
    StyleMemory::from_prototypes(Tensor::matrix(rows, dim, values)?, momentum, policy, counts)
}

pub fn encoder_to_text(encoder: &EncoderParams) -> String {
    let mut out = String::new();
    let act = match encoder.activation {
        Activation::Tanh => "tanh",
        Activation::Relu => "relu",
        Activation::Identity => "identity",
    };
    let _ = writeln!(out, "encoder v1");
    let _ = writeln!(out, "activation {act}");
    let _ = writeln!(out, "layers {}", encoder.layers.len());
    for layer in &encoder.layers {
        let _ = writeln!(out, "layer {} {}", layer.d_out(), layer.d_in());
        for row in layer.weight.iter_rows() {
            let _ = writeln!(out, "{}", join_row(row));
        }
        let _ = writeln!(out, "{}", join_row(layer.bias.values()));
    }
    out
}

pub fn encoder_from_text(text: &str) -> Result<EncoderParams> {
    const WHAT: &str = "encoder checkpoint";
    let mut lines = Lines::new(text, WHAT);
    let (n, header) = lines.next_line()?;
    if header != "encoder v1" {
        return Err(malformed(WHAT, format!("line {n}: unknown header {header:?}")));
    }
    let (n, v) = lines.field("activation")?;
    let activation = match v {
        "tanh" => Activation::Tanh,
        "relu" => Activation::Relu,
        "identity" => Activation::Identity,
        other => return Err(malformed(WHAT, format!("line {n}: unknown activation {other:?}"))),
    };
    let (n, v) = lines.field("layers")?;
    let count: usize = lines.parse(n, v)?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, v) = lines.field("layer")?;
        let dims: Vec<usize> = v
            .split_whitespace()
            .map(|t| lines.parse(n, t))
            .collect::<Result<_>>()?;
        let [d_out, d_in] = dims[..] else {
            return Err(malformed(WHAT, format!("line {n}: expected `layer d_out d_in`")));
        };
        let mut w = Vec::with_capacity(d_out * d_in);
        for _ in 0..d_out {
            w.extend(lines.row(d_in)?);
        }
        let b = lines.row(d_out)?;
        layers.push(Layer::new(Tensor::matrix(d_out, d_in, w)?, Tensor::vector(b))?);
    }
    EncoderParams::new(layers, activation)
}

/// Writes `contents` to a sibling temp file and renames it into place, so
/// readers never observe a half-written file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn memory_text_round_trip_is_bit_exact() {
        let protos = Tensor::from_rows(&[[0.1 + 0.2, -1.0 / 3.0], [std::f64::consts::PI, 1e-300]]).unwrap();
        let mem = StyleMemory::from_prototypes(protos, 0.2, RenormPolicy::PaperLiteral, vec![3, 0]).unwrap();
        let text = memory_to_text(&mem).unwrap();
        let back = memory_from_text(&text).unwrap();
        assert_eq!(back, mem);
        assert_eq!(memory_to_text(&back).unwrap(), text);
    }

    #[test]
    fn encoder_text_round_trip_is_bit_exact() {
        let enc = EncoderParams::init(&[5, 7, 3], Activation::Relu, &mut rng_from_seed(11)).unwrap();
        let back = encoder_from_text(&encoder_to_text(&enc)).unwrap();
        assert_eq!(back, enc);
        assert_eq!(back.checksum(), enc.checksum());
    }

    #[test]
    fn truncated_memory_is_rejected() {
        let mem = StyleMemory::from_prototypes(Tensor::zeros(&[2, 2]), 0.2, RenormPolicy::Renormalize, vec![0, 0]).unwrap();
        let text = memory_to_text(&mem).unwrap();
        let cut: String = text.lines().take(7).collect::<Vec<_>>().join("\n");
        assert!(matches!(memory_from_text(&cut), Err(Error::Format { .. })));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
