//! Plain-text matrix and polyhedron files.
//!
//! Matrix: header line `rows cols`, then one line per row.
//! Polyhedron: header line `n k`, then the `k` rows of `F`, then one line
//! holding `g`. Numbers carry 17 significant digits so values survive a
//! write/read cycle bit for bit.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};

use super::Polyhedron;
use crate::error::{Error, Result};

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn join_row<'a>(it: impl Iterator<Item = &'a f64>) -> String {
    let mut s = String::new();
    for (i, x) in it.enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{}", fmt17(*x));
    }
    s
}

pub fn write_matrix<W: Write>(mut w: W, m: &DMatrix<f64>) -> Result<()> {
    writeln!(w, "{} {}", m.nrows(), m.ncols())?;
    for r in m.row_iter() {
        writeln!(w, "{}", join_row(r.iter()))?;
    }
    Ok(())
}

pub fn write_polyhedron<W: Write>(mut w: W, p: &Polyhedron) -> Result<()> {
    writeln!(w, "{} {}", p.dim(), p.n_rows())?;
    for r in p.f.row_iter() {
        writeln!(w, "{}", join_row(r.iter()))?;
    }
    writeln!(w, "{}", join_row(p.g.iter()))?;
    Ok(())
}

fn numbers<R: BufRead>(r: R) -> Result<Vec<Vec<f64>>> {
    let mut lines = Vec::new();
    for line in r.lines() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let row = t
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("`{tok}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        lines.push(row);
    }
    Ok(lines)
}

fn header(lines: &[Vec<f64>]) -> Result<(usize, usize)> {
    let h = lines
        .first()
        .ok_or_else(|| Error::Parse("empty file".into()))?;
    if h.len() != 2 || h.iter().any(|x| *x < 0.0 || x.fract() != 0.0) {
        return Err(Error::Parse(
            "header must hold two nonnegative integers".into(),
        ));
    }
    Ok((h[0] as usize, h[1] as usize))
}

pub fn read_matrix<R: BufRead>(r: R) -> Result<DMatrix<f64>> {
    let lines = numbers(r)?;
    let (rows, cols) = header(&lines)?;
    if lines.len() != rows + 1 {
        return Err(Error::Parse(format!(
            "expected {rows} rows, found {}",
            lines.len() - 1
        )));
    }
    let mut m = DMatrix::zeros(rows, cols);
    for (i, row) in lines[1..].iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Parse(format!(
                "row {i} has {} entries, expected {cols}",
                row.len()
            )));
        }
        for (j, x) in row.iter().enumerate() {
            m[(i, j)] = *x;
        }
    }
    Ok(m)
}

pub fn read_polyhedron<R: BufRead>(r: R) -> Result<Polyhedron> {
    let lines = numbers(r)?;
    let (n, k) = header(&lines)?;
    if k == 0 && lines.len() == 1 {
        return Polyhedron::new(DMatrix::zeros(0, n), DVector::zeros(0));
    }
    if lines.len() != k + 2 {
        return Err(Error::Parse(format!(
            "expected {k} rows of F plus g, found {} lines",
            lines.len() - 1
        )));
    }
    let mut f = DMatrix::zeros(k, n);
    for (i, row) in lines[1..=k].iter().enumerate() {
        if row.len() != n {
            return Err(Error::Parse(format!(
                "row {i} of F has {} entries, expected {n}",
                row.len()
            )));
        }
        for (j, x) in row.iter().enumerate() {
            f[(i, j)] = *x;
        }
    }
    let gl = &lines[k + 1];
    if gl.len() != k {
        return Err(Error::Parse(format!(
            "g has {} entries, expected {k}",
            gl.len()
        )));
    }
    Polyhedron::new(f, DVector::from_column_slice(gl))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn polyhedron_round_trip_is_bit_exact(
            k in 0usize..6,
            n in 1usize..5,
            seed in proptest::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 36),
        ) {
            let f = DMatrix::from_fn(k, n, |i, j| seed[(i * n + j) % seed.len()]);
            let g = DVector::from_fn(k, |i, _| seed[(i + 17) % seed.len()]);
            let p = Polyhedron::new(f, g).unwrap();
            let mut buf = Vec::new();
            write_polyhedron(&mut buf, &p).unwrap();
            let back = read_polyhedron(buf.as_slice()).unwrap();
            prop_assert_eq!(back.f.shape(), p.f.shape());
            for (a, b) in back.f.iter().zip(p.f.iter()).chain(back.g.iter().zip(p.g.iter())) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn matrix_round_trip() {
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -2.5e-300, 3.0, 1.0 / 3.0, 7.0, -0.0]);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("2 3\n"));
        assert_eq!(read_matrix(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(read_matrix("2 2\n1 2\n".as_bytes()).is_err());
        assert!(read_polyhedron("1 1\n1\n".as_bytes()).is_err());
        assert!(read_polyhedron("1 1\n1\nx\n".as_bytes()).is_err());
    }
}
