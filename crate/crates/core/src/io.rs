//! Portable array serialization, mask files, PGM export, metric CSV rows.
//!
//! The array container is a single compact JSON header line followed by a
//! raw little-endian payload, so files stay greppable while the bulk data
//! round-trips bit-exactly.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::{CoilStack, ComplexGrid, Domain, RealGrid};
use crate::mask::{MaskPattern, SamplingMask};

/// Write bytes via a temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// One JSON header line + raw blob.
pub(crate) fn write_json_blob(path: &Path, header: &impl Serialize, blob: &[u8]) -> Result<()> {
    let mut bytes = serde_json::to_vec(header)
        .map_err(|e| CoreError::InvalidInput(format!("header serialization failed: {e}")))?;
    bytes.push(b'\n');
    bytes.extend_from_slice(blob);
    atomic_write(path, &bytes)
}

pub(crate) fn read_json_blob(path: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| {
        CoreError::Malformed {
            path: path.display().to_string(),
            detail: "missing header line".into(),
        }
    })?;
    let blob = bytes.split_off(newline + 1);
    bytes.pop(); // the newline
    Ok((bytes, blob))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArrayHeader {
    dims: [usize; 3],
    dtype: String,
    domain: Domain,
    endianness: String,
}

/// In-memory form of the array file: complex64 payload (f32 re/im pairs),
/// row-major within a coil, coil-major overall.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayFile {
    pub dims: [usize; 3],
    pub domain: Domain,
    /// Interleaved (re, im) float32 values, length 2 * coils * h * w.
    pub data: Vec<f32>,
}

impl ArrayFile {
    pub fn from_stack(stack: &CoilStack) -> Self {
        let (h, w) = stack.grid_shape();
        let mut data = Vec::with_capacity(2 * stack.num_coils() * h * w);
        for coil in stack.coils() {
            for v in coil.array().iter() {
                data.push(v.re as f32);
                data.push(v.im as f32);
            }
        }
        Self {
            dims: [stack.num_coils(), h, w],
            domain: stack.domain(),
            data,
        }
    }

    pub fn to_stack(&self) -> Result<CoilStack> {
        let [coils, h, w] = self.dims;
        let mut out = Vec::with_capacity(coils);
        for c in 0..coils {
            let base = 2 * c * h * w;
            let grid = Array2::from_shape_fn((h, w), |(i, j)| {
                let idx = base + 2 * (i * w + j);
                Complex64::new(self.data[idx] as f64, self.data[idx + 1] as f64)
            });
            out.push(ComplexGrid::from_array(grid));
        }
        CoilStack::new(out, self.domain)
    }
}

/// Write an array file; payload is bit-exact little-endian float32.
pub fn write_array(path: &Path, array: &ArrayFile) -> Result<()> {
    let header = ArrayHeader {
        dims: array.dims,
        dtype: "c64".into(),
        domain: array.domain,
        endianness: "little".into(),
    };
    let expected = 2 * array.dims.iter().product::<usize>();
    if array.data.len() != expected {
        return Err(CoreError::InvalidInput(format!(
            "payload length {} inconsistent with dims {:?}",
            array.data.len(),
            array.dims
        )));
    }
    let mut blob = Vec::with_capacity(4 * array.data.len());
    for v in &array.data {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    write_json_blob(path, &header, &blob)
}

pub fn read_array(path: &Path) -> Result<ArrayFile> {
    let (header_bytes, blob) = read_json_blob(path)?;
    let header: ArrayHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| CoreError::Malformed {
            path: path.display().to_string(),
            detail: format!("bad header JSON: {e}"),
        })?;
    if header.dtype != "c64" {
        return Err(CoreError::Malformed {
            path: path.display().to_string(),
            detail: format!("unsupported dtype '{}', expected c64", header.dtype),
        });
    }
    if header.endianness != "little" {
        return Err(CoreError::Malformed {
            path: path.display().to_string(),
            detail: format!("unsupported endianness '{}'", header.endianness),
        });
    }
    let expected_bytes = 8 * header.dims.iter().product::<usize>();
    if blob.len() != expected_bytes {
        return Err(CoreError::Malformed {
            path: path.display().to_string(),
            detail: format!(
                "payload is {} bytes, dims {:?} require {}",
                blob.len(),
                header.dims,
                expected_bytes
            ),
        });
    }
    let data = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(ArrayFile {
        dims: header.dims,
        domain: header.domain,
        data,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskFile {
    pattern: MaskPattern,
    accel: f64,
    calib: usize,
    seed: u64,
    dims: [usize; 2],
    /// One string of '0'/'1' per row.
    omega: Vec<String>,
}

pub fn write_mask(path: &Path, mask: &SamplingMask) -> Result<()> {
    let (h, w) = mask.shape();
    let omega = (0..h)
        .map(|i| {
            (0..w)
                .map(|j| if mask.omega[(i, j)] { '1' } else { '0' })
                .collect()
        })
        .collect();
    let file = MaskFile {
        pattern: mask.pattern,
        accel: mask.accel,
        calib: mask.calib,
        seed: mask.seed,
        dims: [h, w],
        omega,
    };
    let json = serde_json::to_vec_pretty(&file)
        .map_err(|e| CoreError::InvalidInput(format!("mask serialization failed: {e}")))?;
    atomic_write(path, &json)
}

pub fn read_mask(path: &Path) -> Result<SamplingMask> {
    let bytes = fs::read(path)?;
    let file: MaskFile = serde_json::from_slice(&bytes).map_err(|e| CoreError::Malformed {
        path: path.display().to_string(),
        detail: format!("bad mask JSON: {e}"),
    })?;
    let [h, w] = file.dims;
    if file.omega.len() != h || file.omega.iter().any(|r| r.len() != w) {
        return Err(CoreError::Malformed {
            path: path.display().to_string(),
            detail: "omega rows inconsistent with dims".into(),
        });
    }
    let mut omega = Array2::from_elem((h, w), false);
    for (i, row) in file.omega.iter().enumerate() {
        for (j, ch) in row.chars().enumerate() {
            omega[(i, j)] = match ch {
                '1' => true,
                '0' => false,
                other => {
                    return Err(CoreError::Malformed {
                        path: path.display().to_string(),
                        detail: format!("invalid omega character '{other}'"),
                    })
                }
            };
        }
    }
    Ok(SamplingMask {
        omega,
        pattern: file.pattern,
        accel: file.accel,
        calib: file.calib,
        seed: file.seed,
    })
}

/// 8-bit binary PGM, min-max normalized. For visual inspection only;
/// metrics are always computed on float data.
pub fn write_pgm(path: &Path, image: &RealGrid) -> Result<()> {
    let (h, w) = image.dim();
    let lo = image.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = image.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = if hi > lo { hi - lo } else { 1.0 };
    let mut bytes = Vec::with_capacity(32 + h * w);
    bytes.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    for v in image.iter() {
        bytes.push((255.0 * (v - lo) / range).round().clamp(0.0, 255.0) as u8);
    }
    atomic_write(path, &bytes)
}

/// One row of the metric table schema
/// `image_id,pattern,R,method,psnr_db,ssim,mse`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub image_id: String,
    pub pattern: String,
    pub accel: f64,
    pub method: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub mse: f64,
}

pub const METRICS_CSV_HEADER: &str = "image_id,pattern,R,method,psnr_db,ssim,mse";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6},{:.6e}",
            self.image_id, self.pattern, self.accel, self.method, self.psnr_db, self.ssim, self.mse
        )
    }
}

/// Create or append to a metrics CSV, writing the header on creation.
pub fn append_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let existed = path.exists();
    let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut out = BufWriter::new(file);
    if !existed {
        writeln!(out, "{METRICS_CSV_HEADER}")?;
    }
    for row in rows {
        writeln!(out, "{}", row.to_csv())?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::make_mask;
    use crate::phantom::{make_phantom, PhantomConfig};

    #[test]
    fn array_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stack.caf");
        let stack = make_phantom(&PhantomConfig::new((32, 32)).with_coils(2), 3).unwrap();
        let array = ArrayFile::from_stack(&stack);
        write_array(&path, &array).unwrap();
        let back = read_array(&path).unwrap();
        assert_eq!(array, back);
        // A second write of the re-read data produces identical bytes.
        let path2 = dir.path().join("stack2.caf");
        write_array(&path2, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
        assert_eq!(back.dims, [2, 32, 32]);
    }

    #[test]
    fn inconsistent_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.caf");
        let header = ArrayHeader {
            dims: [1, 4, 4],
            dtype: "c64".into(),
            domain: Domain::Image,
            endianness: "little".into(),
        };
        // Payload too short for the declared dims.
        write_json_blob(&path, &header, &[0u8; 16]).unwrap();
        assert!(matches!(read_array(&path), Err(CoreError::Malformed { .. })));
    }

    #[test]
    fn big_endian_declaration_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("be.caf");
        let header = ArrayHeader {
            dims: [1, 1, 1],
            dtype: "c64".into(),
            domain: Domain::KSpace,
            endianness: "big".into(),
        };
        write_json_blob(&path, &header, &[0u8; 8]).unwrap();
        let err = read_array(&path).unwrap_err();
        assert!(err.to_string().contains("endianness"));
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f64.caf");
        let header = ArrayHeader {
            dims: [1, 1, 1],
            dtype: "f64".into(),
            domain: Domain::KSpace,
            endianness: "little".into(),
        };
        write_json_blob(&path, &header, &[0u8; 8]).unwrap();
        assert!(read_array(&path).is_err());
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.json");
        let mask = make_mask(MaskPattern::Random2D, (32, 32), 4.0, 4, 5).unwrap();
        write_mask(&path, &mask).unwrap();
        let back = read_mask(&path).unwrap();
        assert_eq!(mask, back);
    }

    #[test]
    fn pgm_has_valid_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = RealGrid::from_shape_fn((8, 6), |(i, j)| (i + j) as f64);
        write_pgm(&path, &img).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n6 8\n255\n"));
        assert_eq!(bytes.len(), b"P5\n6 8\n255\n".len() + 48);
    }

    #[test]
    fn metrics_csv_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let row = MetricsRow {
            image_id: "p0".into(),
            pattern: "random2d".into(),
            accel: 4.0,
            method: "serial".into(),
            psnr_db: 31.25,
            ssim: 0.91,
            mse: 2.5e-4,
        };
        append_metrics(&path, &[row.clone()]).unwrap();
        append_metrics(&path, &[row]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRICS_CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("p0,random2d,4,serial,31.25"));
    }
}
