//! Readers and writers for the on-disk formats.
//!
//! Dense tables are UTF-8 CSV with a header row, `,` separator and no quoting.
//! Floats are written with Rust's shortest round-trip representation, so a
//! write followed by a read reproduces every value bit-for-bit.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::data::{CellAnnotations, CountMatrix, PatchFeatureSet, SplitPlan};
use crate::error::{CpnnError, Result};

fn parse_err(path: &Path, row: usize, column: usize, message: impl Into<String>) -> CpnnError {
    CpnnError::Parse {
        path: path.to_path_buf(),
        row,
        column,
        message: message.into(),
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| CpnnError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::None)
        .from_reader(file))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CpnnError::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| CpnnError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(BufWriter::new(file)))
}

fn csv_error(path: &Path, e: csv::Error) -> CpnnError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CpnnError::io(path, io),
        other => CpnnError::data(format!("{}: {other:?}", path.display())),
    }
}

/// A header row plus data rows, each checked to match the header width.
struct Table {
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv_reader(path)?;
    let mut records = reader.records();
    let header: Vec<String> = match records.next() {
        Some(r) => r
            .map_err(|e| csv_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect(),
        None => return Err(parse_err(path, 1, 1, "missing header row")),
    };
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                line,
                rec.len().min(header.len()) + 1,
                format!(
                    "ragged row: {} fields, header has {}",
                    rec.len(),
                    header.len()
                ),
            ));
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { header, rows })
}

fn parse_count(path: &Path, line: usize, col: usize, cell: &str) -> Result<u64> {
    match cell.trim().parse::<i64>() {
        Ok(v) if v < 0 => Err(parse_err(path, line, col, format!("negative value {v}"))),
        Ok(v) => Ok(v as u64),
        Err(_) => Err(parse_err(
            path,
            line,
            col,
            format!("malformed count `{cell}`"),
        )),
    }
}

fn parse_float(path: &Path, line: usize, col: usize, cell: &str, what: &str) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, col, format!("malformed number `{cell}`")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, col, format!("non-finite {what}")));
    }
    Ok(v)
}

/// `id,<gene_1>,...,<gene_G>` followed by one row of integer counts per sample.
pub fn read_dense_counts(path: impl AsRef<Path>) -> Result<CountMatrix> {
    let path = path.as_ref();
    let table = read_table(path)?;
    if table.header.len() < 2 {
        return Err(parse_err(
            path,
            1,
            1,
            "header needs an id column and at least one gene",
        ));
    }
    if table.rows.is_empty() {
        return Err(CpnnError::data(format!("{}: no data rows", path.display())));
    }
    let genes: Vec<String> = table.header[1..].to_vec();
    let mut values = Array2::zeros((table.rows.len(), genes.len()));
    let mut row_ids = Vec::with_capacity(table.rows.len());
    for (r, (line, cells)) in table.rows.iter().enumerate() {
        row_ids.push(cells[0].clone());
        for (g, cell) in cells[1..].iter().enumerate() {
            values[[r, g]] = parse_count(path, *line, g + 2, cell)?;
        }
    }
    CountMatrix::new(values, row_ids, genes)
}

pub fn write_dense_counts(path: impl AsRef<Path>, m: &CountMatrix) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    let mut header = vec!["id".to_string()];
    header.extend(m.gene_ids().iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (id, row) in m.row_ids().iter().zip(m.values().rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CpnnError::io(path, e))
}

/// One id per line, blank lines ignored.
pub fn read_id_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CpnnError::io(path, e))?;
    let mut ids = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CpnnError::io(path, e))?;
        let id = line.trim_end_matches('\r');
        if !id.is_empty() {
            ids.push(id.to_string());
        }
    }
    Ok(ids)
}

fn write_id_lines(path: &Path, ids: &[String]) -> Result<()> {
    let file = File::create(path).map_err(|e| CpnnError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for id in ids {
        writeln!(w, "{id}").map_err(|e| CpnnError::io(path, e))?;
    }
    w.flush().map_err(|e| CpnnError::io(path, e))
}

/// Matrix Market coordinate integer file plus row/gene id sidecars.
pub fn read_sparse_counts(
    matrix_path: impl AsRef<Path>,
    row_ids_path: impl AsRef<Path>,
    gene_ids_path: impl AsRef<Path>,
) -> Result<CountMatrix> {
    let path = matrix_path.as_ref();
    let row_ids = read_id_lines(row_ids_path.as_ref())?;
    let gene_ids = read_id_lines(gene_ids_path.as_ref())?;
    let file = File::open(path).map_err(|e| CpnnError::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let (_, banner) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, 1, "empty Matrix Market file"))?;
    let banner = banner.map_err(|e| CpnnError::io(path, e))?;
    let tokens: Vec<String> = banner.split_whitespace().map(str::to_lowercase).collect();
    if tokens.len() < 5
        || tokens[0] != "%%matrixmarket"
        || tokens[1] != "matrix"
        || tokens[2] != "coordinate"
    {
        return Err(parse_err(
            path,
            1,
            1,
            "expected `%%MatrixMarket matrix coordinate ...` banner",
        ));
    }
    if tokens[3] != "integer" || tokens[4] != "general" {
        return Err(parse_err(
            path,
            1,
            1,
            "only `integer general` Matrix Market files are supported",
        ));
    }

    let mut size: Option<(usize, usize, usize)> = None;
    let mut values: Option<Array2<u64>> = None;
    let mut seen = 0usize;
    for (i, line) in lines {
        let line_no = i + 1;
        let line = line.map_err(|e| CpnnError::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(
                path,
                line_no,
                1,
                format!("expected 3 fields, found {}", fields.len()),
            ));
        }
        let int = |col: usize| -> Result<usize> {
            fields[col].parse::<usize>().map_err(|_| {
                parse_err(
                    path,
                    line_no,
                    col + 1,
                    format!("malformed integer `{}`", fields[col]),
                )
            })
        };
        match size {
            None => {
                let (nr, nc, nnz) = (int(0)?, int(1)?, int(2)?);
                if nr != row_ids.len() || nc != gene_ids.len() {
                    return Err(CpnnError::data(format!(
                        "{}: header declares {nr}x{nc} but id files list {} rows and {} genes",
                        path.display(),
                        row_ids.len(),
                        gene_ids.len()
                    )));
                }
                size = Some((nr, nc, nnz));
                values = Some(Array2::zeros((nr, nc)));
            }
            Some((nr, nc, _)) => {
                let (r, c) = (int(0)?, int(1)?);
                if r == 0 || r > nr || c == 0 || c > nc {
                    return Err(parse_err(
                        path,
                        line_no,
                        1,
                        format!("coordinate ({r},{c}) out of range"),
                    ));
                }
                let v = parse_count(path, line_no, 3, fields[2])?;
                let cell = &mut values.as_mut().expect("allocated with size line")[[r - 1, c - 1]];
                if seen_entry(cell) {
                    return Err(parse_err(
                        path,
                        line_no,
                        1,
                        format!("duplicate entry ({r},{c})"),
                    ));
                }
                *cell = v | STORED;
                seen += 1;
            }
        }
    }
    let (_, _, nnz) = size.ok_or_else(|| parse_err(path, 2, 1, "missing size line"))?;
    if seen != nnz {
        return Err(CpnnError::data(format!(
            "{}: header declares {nnz} entries, found {seen}",
            path.display()
        )));
    }
    let mut values = values.expect("allocated with size line");
    values.mapv_inplace(|v| v & !STORED);
    CountMatrix::new(values, row_ids, gene_ids)
}

// Duplicate detection borrows the top bit of each cell while parsing; counts
// never approach 2^63.
const STORED: u64 = 1 << 63;

fn seen_entry(cell: &u64) -> bool {
    cell & STORED != 0
}

pub fn write_sparse_counts(
    matrix_path: impl AsRef<Path>,
    row_ids_path: impl AsRef<Path>,
    gene_ids_path: impl AsRef<Path>,
    m: &CountMatrix,
) -> Result<()> {
    let path = matrix_path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CpnnError::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| CpnnError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let nnz = m.values().iter().filter(|&&v| v > 0).count();
    let io = |e| CpnnError::io(path, e);
    writeln!(w, "%%MatrixMarket matrix coordinate integer general").map_err(io)?;
    writeln!(w, "{} {} {}", m.n_rows(), m.n_genes(), nnz).map_err(io)?;
    for ((r, c), &v) in m.values().indexed_iter() {
        if v > 0 {
            writeln!(w, "{} {} {}", r + 1, c + 1, v).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    write_id_lines(row_ids_path.as_ref(), m.row_ids())?;
    write_id_lines(gene_ids_path.as_ref(), m.gene_ids())
}

/// `patch_id,f_0,...,f_{D-1}`; the slide id is the file stem.
pub fn read_feature_set(path: impl AsRef<Path>) -> Result<PatchFeatureSet> {
    let path = path.as_ref();
    let slide_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CpnnError::data(format!("{}: cannot derive slide id", path.display())))?
        .to_string();
    let table = read_table(path)?;
    if table.header.len() < 2 {
        return Err(parse_err(
            path,
            1,
            1,
            "header needs a patch id column and at least one feature",
        ));
    }
    if table.rows.is_empty() {
        return Err(CpnnError::data(format!("{}: no data rows", path.display())));
    }
    let dim = table.header.len() - 1;
    let mut features = Array2::zeros((table.rows.len(), dim));
    let mut patch_ids = Vec::with_capacity(table.rows.len());
    for (r, (line, cells)) in table.rows.iter().enumerate() {
        patch_ids.push(cells[0].clone());
        for (j, cell) in cells[1..].iter().enumerate() {
            features[[r, j]] = parse_float(path, *line, j + 2, cell, "feature")?;
        }
    }
    PatchFeatureSet::new(slide_id, features, patch_ids)
}

pub fn write_feature_set(path: impl AsRef<Path>, f: &PatchFeatureSet) -> Result<()> {
    let path = path.as_ref();
    let cols: Vec<String> = (0..f.dim()).map(|j| format!("f_{j}")).collect();
    write_float_table(path, "patch_id", f.patch_ids(), &cols, f.features())
}

fn csv_files(dir: &Path, what: &str) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CpnnError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CpnnError::data(format!(
            "{}: no {what} files",
            dir.display()
        )));
    }
    Ok(paths)
}

/// Every `*.csv` in `dir`, ordered by slide id.
pub fn read_feature_dir(dir: impl AsRef<Path>) -> Result<Vec<PatchFeatureSet>> {
    let dir = dir.as_ref();
    let paths = csv_files(dir, "feature")?;
    let sets = paths
        .iter()
        .map(read_feature_set)
        .collect::<Result<Vec<_>>>()?;
    let dim = sets[0].dim();
    if let Some(bad) = sets.iter().find(|s| s.dim() != dim) {
        return Err(CpnnError::shape(format!(
            "slide `{}` has feature dim {} but `{}` has {dim}",
            bad.slide_id(),
            bad.dim(),
            sets[0].slide_id()
        )));
    }
    Ok(sets)
}

pub fn write_feature_dir(dir: impl AsRef<Path>, sets: &[PatchFeatureSet]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| CpnnError::io(dir, e))?;
    for s in sets {
        write_feature_set(dir.join(format!("{}.csv", s.slide_id())), s)?;
    }
    Ok(())
}

/// Per-slide spot count tables (`read_dense_counts` format), keyed by file stem
/// and ordered by slide id.
pub fn read_count_dir(dir: impl AsRef<Path>) -> Result<Vec<(String, CountMatrix)>> {
    let dir = dir.as_ref();
    csv_files(dir, "count")?
        .iter()
        .map(|p| {
            let id = p.file_stem().and_then(|s| s.to_str()).ok_or_else(|| {
                CpnnError::data(format!("{}: cannot derive slide id", p.display()))
            })?;
            Ok((id.to_string(), read_dense_counts(p)?))
        })
        .collect()
}

/// Labelled real-valued table: `<key>,<col_1>,...` then `row_id,v_1,...`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatTable {
    pub key: String,
    pub row_ids: Vec<String>,
    pub columns: Vec<String>,
    pub values: Array2<f64>,
}

pub fn read_float_table(path: impl AsRef<Path>) -> Result<FloatTable> {
    let path = path.as_ref();
    let table = read_table(path)?;
    if table.header.len() < 2 {
        return Err(parse_err(
            path,
            1,
            1,
            "header needs an id column and at least one value column",
        ));
    }
    if table.rows.is_empty() {
        return Err(CpnnError::data(format!("{}: no data rows", path.display())));
    }
    let columns = table.header[1..].to_vec();
    let mut values = Array2::zeros((table.rows.len(), columns.len()));
    let mut row_ids = Vec::new();
    for (r, (line, cells)) in table.rows.iter().enumerate() {
        row_ids.push(cells[0].clone());
        for (j, cell) in cells[1..].iter().enumerate() {
            values[[r, j]] = parse_float(path, *line, j + 2, cell, "value")?;
        }
    }
    Ok(FloatTable {
        key: table.header[0].clone(),
        row_ids,
        columns,
        values,
    })
}

pub fn write_float_table(
    path: impl AsRef<Path>,
    key: &str,
    row_ids: &[String],
    columns: &[String],
    values: &Array2<f64>,
) -> Result<()> {
    let path = path.as_ref();
    if values.dim() != (row_ids.len(), columns.len()) {
        return Err(CpnnError::shape(format!(
            "table is {:?} but has {} row ids and {} columns",
            values.dim(),
            row_ids.len(),
            columns.len()
        )));
    }
    let mut w = csv_writer(path)?;
    let mut header = vec![key.to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (id, row) in row_ids.iter().zip(values.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CpnnError::io(path, e))
}

/// `slide_id,fold[,patient]`. The fold count is one more than the largest index.
pub fn read_splits(path: impl AsRef<Path>, validation_path: Option<&Path>) -> Result<SplitPlan> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let has_patient = match table.header.as_slice() {
        [a, b] if a == "slide_id" && b == "fold" => false,
        [a, b, c] if a == "slide_id" && b == "fold" && c == "patient" => true,
        _ => {
            return Err(parse_err(
                path,
                1,
                1,
                "expected header `slide_id,fold[,patient]`",
            ))
        }
    };
    if table.rows.is_empty() {
        return Err(CpnnError::data(format!("{}: no data rows", path.display())));
    }
    let mut slides = Vec::new();
    let mut folds = Vec::new();
    let mut patients = Vec::new();
    for (line, cells) in &table.rows {
        slides.push(cells[0].clone());
        folds.push(
            cells[1]
                .trim()
                .parse::<usize>()
                .map_err(|_| parse_err(path, *line, 2, format!("malformed fold `{}`", cells[1])))?,
        );
        if has_patient {
            patients.push(cells[2].clone());
        }
    }
    let n_folds = folds.iter().max().map_or(0, |m| m + 1);
    let validation = match validation_path {
        Some(v) => read_validation_ids(v)?,
        None => Vec::new(),
    };
    SplitPlan::new(
        slides,
        folds,
        n_folds,
        validation,
        has_patient.then_some(patients),
    )
}

pub fn write_splits(path: impl AsRef<Path>, plan: &SplitPlan) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    let with_patient = plan.patients().is_some();
    let header: &[&str] = if with_patient {
        &["slide_id", "fold", "patient"]
    } else {
        &["slide_id", "fold"]
    };
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for (i, (s, f)) in plan
        .slide_ids()
        .iter()
        .zip(plan.fold_assignments())
        .enumerate()
    {
        let mut rec = vec![s.clone(), f.to_string()];
        if let Some(p) = plan.patients() {
            rec.push(p[i].clone());
        }
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CpnnError::io(path, e))
}

/// Single-column CSV with header `slide_id`.
pub fn read_validation_ids(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let table = read_table(path)?;
    if table.header != ["slide_id"] {
        return Err(parse_err(path, 1, 1, "expected header `slide_id`"));
    }
    Ok(table
        .rows
        .into_iter()
        .map(|(_, mut c)| c.swap_remove(0))
        .collect())
}

/// `cell_id,cell_type,batch`. Returns the cell ids in file order.
pub fn read_annotations(path: impl AsRef<Path>) -> Result<(Vec<String>, CellAnnotations)> {
    let path = path.as_ref();
    let table = read_table(path)?;
    if table.header != ["cell_id", "cell_type", "batch"] {
        return Err(parse_err(
            path,
            1,
            1,
            "expected header `cell_id,cell_type,batch`",
        ));
    }
    let mut ids = Vec::new();
    let mut types = Vec::new();
    let mut batches = Vec::new();
    for (_, cells) in table.rows {
        let mut it = cells.into_iter();
        ids.push(it.next().unwrap_or_default());
        types.push(it.next().unwrap_or_default());
        batches.push(it.next().unwrap_or_default());
    }
    Ok((ids, CellAnnotations::from_labels(&types, &batches)?))
}

pub fn write_annotations(
    path: impl AsRef<Path>,
    cell_ids: &[String],
    ann: &CellAnnotations,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    w.write_record(["cell_id", "cell_type", "batch"])
        .map_err(|e| csv_error(path, e))?;
    for ((id, &c), &d) in cell_ids.iter().zip(ann.cell_type()).zip(ann.batch()) {
        w.write_record([
            id.as_str(),
            &ann.cell_type_names()[c],
            &ann.batch_names()[d],
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CpnnError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use tempfile::tempdir;

    fn write(path: &Path, body: &str) {
        fs::write(path, body).unwrap();
    }

    #[test]
    fn dense_counts_read() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write(&p, "id,g1,g2\ns1,3,0\ns2,1,7\n");
        let m = read_dense_counts(&p).unwrap();
        assert_eq!(m.values(), &array![[3, 0], [1, 7]]);
        assert_eq!(m.row_ids(), ["s1", "s2"]);
    }

    #[test]
    fn count_dir_uses_file_stems() {
        let dir = tempdir().unwrap();
        write(&dir.path().join("b.csv"), "id,g1\np0,2\n");
        write(&dir.path().join("a.csv"), "id,g1\np0,5\np1,1\n");
        write(&dir.path().join("notes.txt"), "ignored");
        let got = read_count_dir(dir.path()).unwrap();
        assert_eq!(
            got.iter().map(|(id, _)| id.as_str()).collect::<Vec<_>>(),
            ["a", "b"]
        );
        assert_eq!(got[0].1.n_rows(), 2);
    }

    #[test]
    fn dense_counts_errors() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("c.csv");
        write(&p, "id,g1,g2\n");
        assert!(read_dense_counts(&p)
            .unwrap_err()
            .to_string()
            .contains("no data rows"));
        write(&p, "id,g1,g1\ns1,1,2\n");
        assert!(read_dense_counts(&p)
            .unwrap_err()
            .to_string()
            .contains("`g1`"));
        write(&p, "id,g1,g2\ns1,1,x\n");
        let msg = read_dense_counts(&p).unwrap_err().to_string();
        assert!(msg.contains("row 2, column 3"), "{msg}");
        write(&p, "id,g1\ns1,-4\n");
        assert!(read_dense_counts(&p)
            .unwrap_err()
            .to_string()
            .contains("negative"));
        write(&p, "id,g1\ns1,1\ns1,2\n");
        assert!(read_dense_counts(&p).is_err());
    }

    #[test]
    fn sparse_counts_read() {
        let dir = tempdir().unwrap();
        let (m, r, g) = (
            dir.path().join("m.mtx"),
            dir.path().join("r.txt"),
            dir.path().join("g.txt"),
        );
        write(
            &m,
            "%%MatrixMarket matrix coordinate integer general\n% comment\n3 2 1\n1 1 5\n",
        );
        write(&r, "c1\nc2\nc3\n");
        write(&g, "A\nB\n");
        let cm = read_sparse_counts(&m, &r, &g).unwrap();
        assert_eq!(cm.values(), &array![[5, 0], [0, 0], [0, 0]]);

        write(
            &m,
            "%%MatrixMarket matrix coordinate integer general\n2 2 1\n1 1 5\n",
        );
        assert!(read_sparse_counts(&m, &r, &g).is_err());

        write(
            &m,
            "%%MatrixMarket matrix coordinate integer general\n3 2 2\n1 1 5\n1 1 6\n",
        );
        assert!(read_sparse_counts(&m, &r, &g)
            .unwrap_err()
            .to_string()
            .contains("duplicate entry"));

        write(
            &m,
            "%%MatrixMarket matrix coordinate integer general\n3 2 1\n4 1 5\n",
        );
        assert!(read_sparse_counts(&m, &r, &g)
            .unwrap_err()
            .to_string()
            .contains("out of range"));
    }

    #[test]
    fn feature_set_read() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("slideA.csv");
        write(&p, "patch_id,f_0,f_1,f_2\np0,0,0,0\n");
        let f = read_feature_set(&p).unwrap();
        assert_eq!(f.slide_id(), "slideA");
        assert_eq!((f.n_patches(), f.dim()), (1, 3));
        assert!(f.features().iter().all(|&v| v == 0.0));

        write(&p, "patch_id,f_0,f_1\np0,1,2\np1,3,4\n");
        let f = read_feature_set(&p).unwrap();
        assert_eq!((f.n_patches(), f.dim()), (2, 2));

        write(&p, "patch_id,f_0\np0,nan\n");
        assert!(read_feature_set(&p)
            .unwrap_err()
            .to_string()
            .contains("non-finite feature"));

        write(&p, "patch_id,f_0,f_1\np0,1\n");
        assert!(read_feature_set(&p)
            .unwrap_err()
            .to_string()
            .contains("ragged"));
    }

    #[test]
    fn splits_roundtrip_with_patients() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("splits.csv");
        write(&p, "slide_id,fold,patient\na,0,p1\nb,1,p2\nc,1,p2\n");
        let v = dir.path().join("val.csv");
        write(&v, "slide_id\nb\n");
        let plan = read_splits(&p, Some(&v)).unwrap();
        assert_eq!(plan.n_folds(), 2);
        assert_eq!(plan.validation_ids(), ["b"]);
        let out = dir.path().join("out.csv");
        write_splits(&out, &plan).unwrap();
        assert_eq!(
            fs::read_to_string(&out).unwrap(),
            fs::read_to_string(&p).unwrap()
        );
    }
}
