//! Field dumps and tabular output.
//!
//! A dump is a raw file of little-endian `f64` lattice values in row-major
//! order, next to a `key = value` text header at `<path>.hdr`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{GridSpec, GENERATOR_ID};
use crate::hermite::{Method, SampleField};
use crate::params::ModelParams;

const FORMAT_TAG: &str = "f64-le row-major";

/// Metadata stored beside a binary field dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    /// Lattice points per axis (resolution plus one).
    pub shape: Vec<usize>,
    pub q: u32,
    pub hurst: Vec<f64>,
    pub seed: u64,
    pub method: Method,
    pub generator: String,
}

impl DumpHeader {
    pub fn for_field(field: &SampleField) -> Self {
        Self {
            shape: field.lattice_shape(),
            q: field.params.q(),
            hurst: field.params.hurst().as_slice().to_vec(),
            seed: field.seed,
            method: field.method,
            generator: GENERATOR_ID.to_string(),
        }
    }

    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>| v.join(",");
        let method = match self.method {
            Method::HermiteRank => "hermite_rank",
            Method::DirectKernel => "direct_kernel",
        };
        format!(
            "format = {FORMAT_TAG}\nshape = {}\nq = {}\nhurst = {}\nseed = {}\nmethod = {method}\ngenerator = {}\n",
            join(self.shape.iter().map(|s| s.to_string()).collect()),
            self.q,
            join(self.hurst.iter().map(|h| format!("{h:?}")).collect()),
            self.seed,
            self.generator,
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut shape = None;
        let mut q = None;
        let mut hurst = None;
        let mut seed = None;
        let mut method = None;
        let mut generator = None;
        let bad = |what: &str| Error::Format(format!("bad {what} in header"));
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("expected `key = value`, got `{line}`")))?;
            let value = value.trim();
            match key.trim() {
                "format" if value != FORMAT_TAG => {
                    return Err(Error::Format(format!("unsupported data format `{value}`")));
                }
                "format" => {}
                "shape" => {
                    shape = Some(
                        value
                            .split(',')
                            .map(|s| s.trim().parse::<usize>().map_err(|_| bad("shape")))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "q" => q = Some(value.parse::<u32>().map_err(|_| bad("q"))?),
                "hurst" => {
                    hurst = Some(
                        value
                            .split(',')
                            .map(|s| s.trim().parse::<f64>().map_err(|_| bad("hurst")))
                            .collect::<Result<Vec<_>>>()?,
                    )
                }
                "seed" => seed = Some(value.parse::<u64>().map_err(|_| bad("seed"))?),
                "method" => {
                    method = Some(match value {
                        "hermite_rank" => Method::HermiteRank,
                        "direct_kernel" => Method::DirectKernel,
                        _ => return Err(bad("method")),
                    })
                }
                "generator" => generator = Some(value.to_string()),
                other => return Err(Error::Format(format!("unknown header key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Format(format!("header lacks `{k}`"));
        Ok(Self {
            shape: shape.ok_or_else(|| missing("shape"))?,
            q: q.ok_or_else(|| missing("q"))?,
            hurst: hurst.ok_or_else(|| missing("hurst"))?,
            seed: seed.ok_or_else(|| missing("seed"))?,
            method: method.unwrap_or_default(),
            generator: generator.unwrap_or_default(),
        })
    }
}

/// `<path>.<ext>` without replacing an existing extension.
pub fn companion_path(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Writes the values of `field` to `path` and its header to `<path>.hdr`.
pub fn write_field(path: &Path, field: &SampleField) -> Result<DumpHeader> {
    let header = DumpHeader::for_field(field);
    let mut bytes = Vec::with_capacity(8 * field.values.len());
    for v in &field.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    fs::write(companion_path(path, "hdr"), header.to_text())?;
    Ok(header)
}

/// Reads a dump written by [`write_field`].
pub fn read_field(path: &Path) -> Result<SampleField> {
    let header = DumpHeader::parse(&fs::read_to_string(companion_path(path, "hdr"))?)?;
    let bytes = fs::read(path)?;
    let cells: usize = header.shape.iter().product();
    if bytes.len() != 8 * cells {
        return Err(Error::Format(format!(
            "{} bytes for a lattice of {cells} values",
            bytes.len()
        )));
    }
    if header.shape.len() != header.hurst.len() {
        return Err(Error::Format("shape and hurst differ in dimension".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of eight")))
        .collect();
    let params = ModelParams::from_slice(header.q, &header.hurst)?;
    let resolutions = header
        .shape
        .iter()
        .map(|&s| s.checked_sub(1).ok_or_else(|| Error::Format("zero-length axis".into())))
        .collect::<Result<Vec<_>>>()?;
    let grid = GridSpec::with_cap(resolutions, usize::MAX)?;
    Ok(SampleField {
        params,
        grid,
        values,
        method: header.method,
        seed: header.seed,
    })
}

/// Writes `value` as pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Shortest round-trip decimal form; scientific notation for very large or
/// small magnitudes.
pub fn format_float(x: f64) -> String {
    if x == 0.0 || !x.is_finite() || (1e-4..1e9).contains(&x.abs()) {
        format!("{x:?}")
    } else {
        format!("{x:e}")
    }
}

/// A header row followed by data rows, rendered as CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::simulate_hermite_rank;

    #[test]
    fn dump_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = ModelParams::from_slice(2, &[0.7, 0.6]).unwrap();
        let field = simulate_hermite_rank(&p, &GridSpec::new(vec![16, 8]).unwrap(), 11).unwrap();
        let path = dir.path().join("field.bin");
        let header = write_field(&path, &field).unwrap();
        assert_eq!(header.shape, vec![17, 9]);
        assert_eq!(fs::metadata(&path).unwrap().len(), 8 * 17 * 9);
        let back = read_field(&path).unwrap();
        assert_eq!(back.values, field.values);
        assert_eq!(back.params, field.params);
        assert_eq!(back.grid, field.grid);
        assert_eq!(back.seed, 11);
    }

    #[test]
    fn header_text_round_trip() {
        let h = DumpHeader {
            shape: vec![5, 3],
            q: 3,
            hurst: vec![0.7, 0.65],
            seed: u64::MAX,
            method: Method::DirectKernel,
            generator: GENERATOR_ID.into(),
        };
        assert_eq!(DumpHeader::parse(&h.to_text()).unwrap(), h);
        assert!(DumpHeader::parse("format = text\n").is_err());
        assert!(DumpHeader::parse("shape = 3\n").is_err());
        assert!(DumpHeader::parse("colour = blue\n").is_err());
    }

    #[test]
    fn truncated_dump_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = ModelParams::from_slice(1, &[0.7]).unwrap();
        let field = simulate_hermite_rank(&p, &GridSpec::new(vec![8]).unwrap(), 1).unwrap();
        let path = dir.path().join("f.bin");
        write_field(&path, &field).unwrap();
        fs::write(&path, [0u8; 16]).unwrap();
        assert!(matches!(read_field(&path), Err(Error::Format(_))));
    }

    #[test]
    fn csv_layout() {
        let mut t = Table::new(["N", "V_N"]);
        t.push(vec!["16".into(), format_float(-0.25)]);
        t.push(vec!["32".into(), format_float(1.5e-7)]);
        assert_eq!(t.to_csv().unwrap(), "N,V_N\n16,-0.25\n32,1.5e-7\n");
        assert_eq!(format_float(0.0), "0.0");
        assert_eq!(format_float(123.0), "123.0");
        assert_eq!(format_float(f64::NAN), "NaN");
        for x in [1e-300, 0.1, 7.25e12] {
            assert_eq!(format_float(x).parse::<f64>().unwrap(), x);
        }
    }
}
