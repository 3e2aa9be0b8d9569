use std::io::{BufRead, Write};

use crate::error::{Error, Result};

use super::sparse::{CooBuilder, CsrMatrix};

/// Read a Matrix Market `coordinate` file (real, integer or pattern;
/// general or symmetric).
pub fn read_matrix_market<R: BufRead>(reader: R) -> Result<CsrMatrix> {
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let header = header?.to_lowercase();
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() < 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(Error::Parse {
            line: 1,
            msg: "missing %%MatrixMarket matrix header".into(),
        });
    }
    if tokens[2] != "coordinate" {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unsupported format '{}'", tokens[2]),
        });
    }
    let pattern = match tokens[3] {
        "real" | "integer" | "double" => false,
        "pattern" => true,
        other => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unsupported field '{other}'"),
            })
        }
    };
    let symmetric = match tokens[4] {
        "general" => false,
        "symmetric" => true,
        other => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("unsupported symmetry '{other}'"),
            })
        }
    };

    let mut builder: Option<CooBuilder> = None;
    let mut expected = 0usize;
    let mut seen = 0usize;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('%') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        let num = |k: usize| -> Result<usize> {
            parts
                .get(k)
                .and_then(|s| s.parse().ok())
                .ok_or(Error::Parse {
                    line: lineno,
                    msg: format!("expected integer in column {}", k + 1),
                })
        };
        match builder.as_mut() {
            None => {
                let (r, c) = (num(0)?, num(1)?);
                expected = num(2)?;
                builder = Some(CooBuilder::with_capacity(r, c, expected * 2));
            }
            Some(b) => {
                let (i, j) = (num(0)?, num(1)?);
                if i == 0 || j == 0 {
                    return Err(Error::Parse {
                        line: lineno,
                        msg: "indices are 1-based".into(),
                    });
                }
                let v = if pattern {
                    1.0
                } else {
                    parts
                        .get(2)
                        .and_then(|s| s.parse::<f64>().ok())
                        .ok_or(Error::Parse {
                            line: lineno,
                            msg: "missing value".into(),
                        })?
                };
                b.try_push(i - 1, j - 1, v).map_err(|e| Error::Parse {
                    line: lineno,
                    msg: e.to_string(),
                })?;
                if symmetric && i != j {
                    b.try_push(j - 1, i - 1, v).map_err(|e| Error::Parse {
                        line: lineno,
                        msg: e.to_string(),
                    })?;
                }
                seen += 1;
            }
        }
    }
    let b = builder.ok_or(Error::Parse {
        line: 0,
        msg: "missing size line".into(),
    })?;
    if seen != expected {
        return Err(Error::Parse {
            line: 0,
            msg: format!("expected {expected} entries, found {seen}"),
        });
    }
    Ok(b.build())
}

/// Write a general real coordinate file.
pub fn write_matrix_market<W: Write>(m: &CsrMatrix, mut w: W) -> Result<()> {
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", m.rows(), m.cols(), m.nnz())?;
    for (i, j, v) in m.triplets() {
        writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_symmetric() {
        let src = "%%MatrixMarket matrix coordinate real symmetric\n% comment\n3 3 4\n1 1 2.0\n2 1 -1\n2 2 2\n3 3 5e-1\n";
        let m = read_matrix_market(src.as_bytes()).unwrap();
        assert_eq!(m.get(0, 1), -1.0);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(2, 2), 0.5);
        assert_eq!(m.nnz(), 5);
    }

    #[test]
    fn round_trip() {
        let m = CsrMatrix::from_dense(2, 3, &[1.0, 0.0, 2.5, 0.0, -3.0, 0.0]);
        let mut buf = Vec::new();
        write_matrix_market(&m, &mut buf).unwrap();
        assert_eq!(read_matrix_market(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_matrix_market("hello\n".as_bytes()).is_err());
        let short = "%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1\n";
        assert!(read_matrix_market(short.as_bytes()).is_err());
        let oob = "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1\n";
        assert!(read_matrix_market(oob.as_bytes()).is_err());
    }
}
