use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// `n` observations `(X_i, Y_i)`: row `i` of `design` is `X_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    pub seed: u64,
    pub fingerprint: String,
}

impl Dataset {
    pub fn new(
        design: DMatrix<f64>,
        response: DVector<f64>,
        seed: u64,
        fingerprint: String,
    ) -> Result<Self> {
        if design.nrows() == 0 {
            return Err(Error::Dimension("dataset needs at least one row".into()));
        }
        if design.nrows() != response.len() {
            return Err(Error::Dimension(format!(
                "design has {} rows but response has {}",
                design.nrows(),
                response.len()
            )));
        }
        if design.iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericalBreakdown(
                "dataset has non-finite entries".into(),
            ));
        }
        Ok(Self {
            design,
            response,
            seed,
            fingerprint,
        })
    }

    /// Build from raw rows, mostly for tests and small hand-made examples.
    pub fn from_rows(rows: &[Vec<f64>], response: &[f64]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("rows have inconsistent width".into()));
        }
        let design = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(
            design,
            DVector::from_column_slice(response),
            0,
            "manual".into(),
        )
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn d(&self) -> usize {
        self.design.ncols()
    }

    /// Residuals `⟨w, X_i⟩ - Y_i`.
    pub fn residuals(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.design * w - &self.response
    }

    /// Write as CSV with header `x1,…,xd,y`, shortest round-trip floats.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header: Vec<String> = (1..=self.d()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.d() + 1);
        for i in 0..self.n() {
            record.clear();
            record.extend(self.design.row(i).iter().map(|v| v.to_string()));
            record.push(self.response[i].to_string());
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(input);
        let header = r.headers().map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        let width = header.len();
        if width < 2 {
            return Err(Error::Parse {
                line: 1,
                message: "header needs at least one covariate column and y".into(),
            });
        }
        for (j, name) in header.iter().enumerate() {
            let expected = if j + 1 == width {
                "y".to_string()
            } else {
                format!("x{}", j + 1)
            };
            if name.trim() != expected {
                return Err(Error::Parse {
                    line: 1,
                    message: format!(
                        "malformed header: column {} is {name:?}, expected {expected:?}",
                        j + 1
                    ),
                });
            }
        }
        let d = width - 1;
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            if rec.len() != width {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {width} fields, found {}", rec.len()),
                });
            }
            for field in rec.iter() {
                let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("non-numeric cell {field:?}"),
                })?;
                values.push(v);
            }
        }
        let n = values.len() / width;
        if n == 0 {
            return Err(Error::Parse {
                line: 2,
                message: "no data rows".into(),
            });
        }
        let design = DMatrix::from_fn(n, d, |i, j| values[i * width + j]);
        let response = DVector::from_fn(n, |i, _| values[i * width + d]);
        let digest = Sha256::digest(
            values
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect::<Vec<u8>>(),
        );
        let fingerprint = digest[..16].iter().map(|b| format!("{b:02x}")).collect();
        Self::new(design, response, 0, fingerprint)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::output::write_atomic(path.as_ref(), |f| self.write_csv(BufWriter::new(f)))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let f = File::open(path.as_ref())?;
        Self::read_csv(BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{DistributionSpec, NoiseFamily};

    #[test]
    fn round_trip_preserves_every_bit() {
        let spec = DistributionSpec::gaussian_identity(
            3,
            vec![0.3, -1.0, 2.5],
            NoiseFamily::StudentT {
                dof: 2.5,
                scale: 0.7,
            },
        );
        let ds = spec.sample(200, 9).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,x3,y\n"));
        assert!(!text.contains('\r'));
        let back = Dataset::read_csv(&buf[..]).unwrap();
        assert_eq!(back.design, ds.design);
        assert_eq!(back.response, ds.response);
    }

    #[test]
    fn parses_small_file() {
        let ds = Dataset::read_csv("x1,x2,y\n1,2,3\n4.5,-6,7e-3\n".as_bytes()).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.d(), 2);
        assert_eq!(ds.design[(1, 0)], 4.5);
        assert_eq!(ds.response[1], 7e-3);
    }

    #[test]
    fn reports_bad_row_width_with_line_number() {
        let err = Dataset::read_csv("x1,x2,y\n1,2,3\n1,2\n".as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn reports_non_numeric_and_header_errors() {
        let err = Dataset::read_csv("x1,y\n1,abc\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = Dataset::read_csv("a,b,y\n1,2,3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(Dataset::from_rows(&[], &[]).is_err());
        assert!(Dataset::from_rows(&[vec![1.0], vec![1.0, 2.0]], &[1.0, 2.0]).is_err());
        assert!(Dataset::from_rows(&[vec![f64::NAN]], &[1.0]).is_err());
    }
}
