//! Plain CSV formats: dense matrices, long-format couplings, potentials and
//! permutation mixtures. Floats are written with 17 significant digits.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use crate::bvn::PermutationMixture;
use crate::error::{Error, Result};
use crate::experiments::write_table;
use crate::ot::{Coupling, DualPotentials, SquareMatrix};

use crate::experiments::num;

/// 17 significant digits in scientific notation; non-finite values as `NaN`/`inf`.
pub fn format_float(v: f64) -> String {
    num(v)
}

fn parse_f64(field: &str, row: usize, col: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::invalid(format!("row {row}, column {col}: `{field}` is not a finite number")))
}

fn parse_index(field: &str, name: &str, row: usize) -> Result<usize> {
    field.trim().parse::<usize>().map_err(|_| Error::invalid(format!("row {row}: `{field}` is not a valid {name}")))
}

/// Dense square matrix, one CSV row per matrix row. A first row with no numeric field is
/// treated as a header.
pub fn read_matrix_csv<R: Read>(reader: R) -> Result<SquareMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if k == 0 && rec.iter().all(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        rows.push(rec.iter().enumerate().map(|(j, f)| parse_f64(f, k + 1, j + 1)).collect::<Result<_>>()?);
    }
    if rows.is_empty() {
        return Err(Error::invalid("matrix CSV has no data rows"));
    }
    if rows.len() != rows[0].len() {
        return Err(Error::invalid(format!("matrix is {} x {}, expected square", rows.len(), rows[0].len())));
    }
    SquareMatrix::from_rows(&rows)
}

pub fn read_matrix_file(path: &Path) -> Result<SquareMatrix> {
    read_matrix_csv(std::fs::File::open(path)?)
}

/// Header `c0,...,c{n-1}` followed by the rows.
pub fn write_matrix_csv(path: &Path, m: &SquareMatrix) -> Result<()> {
    let header: Vec<String> = (0..m.n()).map(|j| format!("c{j}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(path, &header, m.rows().map(|r| r.iter().map(|&v| format_float(v)).collect()))
}

/// Long format `x_index,w_index,mass`, every cell listed.
pub fn write_coupling_csv(path: &Path, pi: &Coupling) -> Result<()> {
    let n = pi.n();
    write_table(
        path,
        &["x_index", "w_index", "mass"],
        (0..n * n).map(|k| vec![(k / n).to_string(), (k % n).to_string(), format_float(pi.get(k / n, k % n))]),
    )
}

/// Reads a long-format coupling. Extra columns are allowed; `filter` keeps
/// only rows whose named columns parse to the given values. Cells not listed
/// carry zero mass. The result must satisfy the coupling invariants.
pub fn read_coupling_csv<R: Read>(reader: R, filter: &[(&str, f64)]) -> Result<Coupling> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("coupling CSV lacks a `{name}` column")))
    };
    let (ci, cj, cm) = (col("x_index")?, col("w_index")?, col("mass")?);
    let filters = filter.iter().map(|&(name, v)| Ok((col(name)?, v))).collect::<Result<Vec<_>>>()?;
    let mut cells: HashMap<(usize, usize), f64> = HashMap::new();
    let mut n = 0;
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 2;
        let keep = filters.iter().all(|&(c, v)| rec.get(c).and_then(|f| f.parse::<f64>().ok()) == Some(v));
        if !keep {
            continue;
        }
        let field = |c: usize| rec.get(c).unwrap_or_default();
        let i = parse_index(field(ci), "x_index", row)?;
        let j = parse_index(field(cj), "w_index", row)?;
        let m = parse_f64(field(cm), row, cm + 1)?;
        if cells.insert((i, j), m).is_some() {
            return Err(Error::invalid(format!("row {row}: cell ({i}, {j}) listed twice")));
        }
        n = n.max(i + 1).max(j + 1);
    }
    if cells.is_empty() {
        return Err(Error::invalid("coupling CSV has no matching rows"));
    }
    let mut data = vec![0.0; n * n];
    for ((i, j), m) in cells {
        data[i * n + j] = m;
    }
    Coupling::new(SquareMatrix::new(n, data)?)
}

pub fn read_coupling_file(path: &Path, filter: &[(&str, f64)]) -> Result<Coupling> {
    read_coupling_csv(std::fs::File::open(path)?, filter)
}

/// `index,f,g`.
pub fn write_potentials_csv(path: &Path, pot: &DualPotentials) -> Result<()> {
    write_table(
        path,
        &["index", "f", "g"],
        pot.f.iter().zip(&pot.g).enumerate().map(|(k, (f, g))| vec![k.to_string(), format_float(*f), format_float(*g)]),
    )
}

/// `component,weight,x_index,w_index`, one row per matched pair.
pub fn write_mixture_csv(path: &Path, mix: &PermutationMixture) -> Result<()> {
    write_table(
        path,
        &["component", "weight", "x_index", "w_index"],
        mix.components.iter().enumerate().flat_map(|(k, (w, sigma))| {
            sigma
                .iter()
                .enumerate()
                .map(move |(i, &j)| vec![k.to_string(), format_float(*w), i.to_string(), j.to_string()])
        }),
    )
}

/// Standalone SVG of the coupling: row `i` top to bottom, column `j` left to
/// right, white at zero mass through dark blue at the largest cell.
pub fn heatmap_svg(pi: &Coupling, cell_px: usize) -> String {
    use std::fmt::Write;
    let n = pi.n();
    let side = n * cell_px;
    let peak = pi.mass().max();
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{side}\" height=\"{side}\" viewBox=\"0 0 {side} {side}\" shape-rendering=\"crispEdges\">\n"
    );
    for i in 0..n {
        for j in 0..n {
            let t = if peak > 0.0 { (pi.get(i, j) / peak).clamp(0.0, 1.0) } else { 0.0 };
            let (r, g, b) = ramp(t);
            let _ = writeln!(
                out,
                "<rect x=\"{}\" y=\"{}\" width=\"{cell_px}\" height=\"{cell_px}\" fill=\"#{r:02x}{g:02x}{b:02x}\"/>",
                j * cell_px,
                i * cell_px
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Linear white to navy; every channel is nonincreasing in `t`.
fn ramp(t: f64) -> (u8, u8, u8) {
    let mix = |hi: f64, lo: f64| (hi + (lo - hi) * t).round() as u8;
    (mix(255.0, 8.0), mix(255.0, 29.0), mix(255.0, 88.0))
}
