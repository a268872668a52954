//! Sparse matrices in CSR form, Matrix Market I/O and synthetic test matrices.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels::{norm2, DenseBlock};

/// Compressed sparse row matrix.
///
/// Column indices are strictly increasing within each row and there are no
/// duplicate entries.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrixCsr {
    m: usize,
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrixCsr {
    /// Assembles from coordinate triplets `(row, col, value)`; duplicates are summed.
    pub fn from_triplets(m: usize, n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::EmptyMatrix);
        }
        for &(i, j, _) in triplets {
            if i >= m {
                return Err(Error::dim("SparseMatrixCsr row index", m, i));
            }
            if j >= n {
                return Err(Error::dim("SparseMatrixCsr column index", n, j));
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        // stable sort keeps file order among duplicates, so summation order is fixed
        sorted.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; m + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..m {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self {
            m,
            n,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Converts a dense block, keeping only nonzero entries.
    pub fn from_dense(a: &DenseBlock) -> Result<Self> {
        let mut t = Vec::new();
        for j in 0..a.cols() {
            for (i, &v) in a.col(j).iter().enumerate() {
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(a.rows(), a.cols(), &t)
    }

    pub fn diagonal(d: &[f64]) -> Result<Self> {
        let t: Vec<_> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(d.len(), d.len(), &t)
    }

    pub fn nrows(&self) -> usize {
        self.m
    }

    pub fn ncols(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Iterates over `(row, col, value)` in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.m).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.col_idx[k], self.values[k]))
        })
    }

    pub fn to_dense(&self) -> DenseBlock {
        let mut d = DenseBlock::zeros(self.m, self.n);
        for (i, j, v) in self.triplets() {
            d.set(i, j, v);
        }
        d
    }

    pub fn transpose(&self) -> SparseMatrixCsr {
        let t: Vec<_> = self.triplets().map(|(i, j, v)| (j, i, v)).collect();
        Self::from_triplets(self.n, self.m, &t).expect("transpose of a valid matrix")
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.values)
    }

    /// `‖A(:, j)‖²` for every column.
    pub fn column_norms_sq(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for (_, j, v) in self.triplets() {
            d[j] += v * v;
        }
        d
    }

    /// `‖A(i, :)‖²` for every row.
    pub fn row_norms_sq(&self) -> Vec<f64> {
        (0..self.m)
            .map(|i| self.values[self.row_ptr[i]..self.row_ptr[i + 1]].iter().map(|v| v * v).sum())
            .collect()
    }

    /// Block product on raw column-major storage with leading dimensions.
    ///
    /// Computes `y = A x` (or `y = Aᵀ x` when `transpose`) for `block_size`
    /// columns. Row sums run in ascending column order and the transposed
    /// scatter in ascending row order, so results are reproducible bit for bit.
    pub fn apply_raw(&self, x: &[f64], ldx: usize, y: &mut [f64], ldy: usize, block_size: usize, transpose: bool) {
        let (in_len, out_len) = if transpose { (self.m, self.n) } else { (self.n, self.m) };
        for b in 0..block_size {
            let xb = &x[b * ldx..b * ldx + in_len];
            let yb = &mut y[b * ldy..b * ldy + out_len];
            if transpose {
                yb.fill(0.0);
                for (i, &xi) in xb.iter().enumerate() {
                    for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                        yb[self.col_idx[k]] += self.values[k] * xi;
                    }
                }
            } else {
                for (i, yi) in yb.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                        acc += self.values[k] * xb[self.col_idx[k]];
                    }
                    *yi = acc;
                }
            }
        }
    }
}

/// `A·X`, or `Aᵀ·X` when `transpose` is set.
pub fn spmv_block(a: &SparseMatrixCsr, x: &DenseBlock, transpose: bool) -> Result<DenseBlock> {
    let (in_len, out_len) = if transpose { (a.m, a.n) } else { (a.n, a.m) };
    if x.rows() != in_len {
        return Err(Error::dim("spmv_block", in_len, x.rows()));
    }
    let mut y = DenseBlock::zeros(out_len, x.cols());
    a.apply_raw(x.as_slice(), in_len, y.as_mut_slice(), out_len, x.cols(), transpose);
    Ok(y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum MmFormat {
    Coordinate,
    Array,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum MmSymmetry {
    General,
    Symmetric,
}

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

/// Reads a Matrix Market file (`coordinate real|integer general|symmetric`
/// or `array real|integer general`). Symmetric storage is expanded.
pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<SparseMatrixCsr> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_matrix_market(BufReader::new(file), &path.display().to_string())
}

/// Parses Matrix Market text from any reader; `name` is used in error messages.
pub fn parse_matrix_market<R: Read>(reader: R, name: &str) -> Result<SparseMatrixCsr> {
    let reader = BufReader::new(reader);
    let mut lines = reader.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (lineno, header) = match lines.next() {
        Some((n, Ok(l))) => (n, l),
        Some((n, Err(e))) => return Err(parse_err(name, n, e.to_string())),
        None => return Err(parse_err(name, 1, "empty file")),
    };
    let tokens: Vec<String> = header.split_whitespace().map(|t| t.to_ascii_lowercase()).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(name, lineno, "missing '%%MatrixMarket matrix' header"));
    }
    let format = match tokens[2].as_str() {
        "coordinate" => MmFormat::Coordinate,
        "array" => MmFormat::Array,
        other => return Err(Error::Unsupported(format!("format '{other}'"))),
    };
    match tokens[3].as_str() {
        "real" | "double" | "integer" => {}
        other => return Err(Error::Unsupported(format!("field '{other}'"))),
    }
    let symmetry = match tokens[4].as_str() {
        "general" => MmSymmetry::General,
        "symmetric" if format == MmFormat::Coordinate => MmSymmetry::Symmetric,
        other => return Err(Error::Unsupported(format!("{} storage with symmetry '{other}'", tokens[2]))),
    };

    let mut data_lines = lines.filter_map(|(n, l)| match l {
        Ok(l) => {
            let t = l.trim();
            if t.is_empty() || t.starts_with('%') {
                None
            } else {
                Some(Ok((n, t.to_string())))
            }
        }
        Err(e) => Some(Err(parse_err(name, n, e.to_string()))),
    });

    let (size_line, size) = data_lines
        .next()
        .ok_or_else(|| parse_err(name, lineno + 1, "missing size line"))??;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(name, size_line, format!("bad size line: {e}")))?;
    let expected_fields = if format == MmFormat::Coordinate { 3 } else { 2 };
    if dims.len() != expected_fields {
        return Err(parse_err(
            name,
            size_line,
            format!("size line needs {expected_fields} integers"),
        ));
    }
    let (m, n) = (dims[0], dims[1]);
    if m == 0 || n == 0 {
        return Err(Error::EmptyMatrix);
    }
    if symmetry == MmSymmetry::Symmetric && m != n {
        return Err(parse_err(name, size_line, "symmetric matrix must be square"));
    }
    let total = m
        .checked_mul(n)
        .ok_or_else(|| parse_err(name, size_line, "matrix dimensions overflow"))?;

    let parse_value = |line: usize, t: &str| -> Result<f64> {
        t.parse::<f64>()
            .map_err(|e| parse_err(name, line, format!("bad value '{t}': {e}")))
    };

    let mut triplets = Vec::new();
    match format {
        MmFormat::Coordinate => {
            let nnz = dims[2];
            for k in 0..nnz {
                let (ln, text) = data_lines
                    .next()
                    .ok_or_else(|| parse_err(name, size_line, format!("expected {nnz} entries, found {k}")))??;
                let f: Vec<&str> = text.split_whitespace().collect();
                if f.len() == 2 {
                    return Err(Error::Unsupported("pattern matrices".into()));
                }
                if f.len() != 3 {
                    return Err(parse_err(name, ln, "entry needs 'row col value'"));
                }
                let i: usize = f[0]
                    .parse()
                    .map_err(|e| parse_err(name, ln, format!("bad row index: {e}")))?;
                let j: usize = f[1]
                    .parse()
                    .map_err(|e| parse_err(name, ln, format!("bad column index: {e}")))?;
                if i == 0 || i > m || j == 0 || j > n {
                    return Err(parse_err(name, ln, format!("index ({i}, {j}) outside {m}x{n}")));
                }
                let v = parse_value(ln, f[2])?;
                triplets.push((i - 1, j - 1, v));
                if symmetry == MmSymmetry::Symmetric && i != j {
                    triplets.push((j - 1, i - 1, v));
                }
            }
        }
        MmFormat::Array => {
            for k in 0..total {
                let (ln, text) = data_lines
                    .next()
                    .ok_or_else(|| parse_err(name, size_line, format!("expected {total} values, found {k}")))??;
                let v = parse_value(ln, text.split_whitespace().next().unwrap_or(""))?;
                if v != 0.0 {
                    triplets.push((k % m, k / m, v));
                }
            }
        }
    }
    if let Some(extra) = data_lines.next() {
        let (ln, _) = extra?;
        return Err(parse_err(name, ln, "unexpected data after the last entry"));
    }
    SparseMatrixCsr::from_triplets(m, n, &triplets)
}

/// Writes `coordinate real general` with 17 significant digits.
pub fn write_matrix_market(path: impl AsRef<Path>, a: &SparseMatrixCsr) -> Result<()> {
    let mut s = String::with_capacity(32 * a.nnz() + 64);
    s.push_str("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(s, "{} {} {}", a.m, a.n, a.nnz());
    for (i, j, v) in a.triplets() {
        let _ = writeln!(s, "{} {} {:.16e}", i + 1, j + 1, v);
    }
    write_text(path.as_ref(), &s)
}

/// Writes a dense block as `array real general`, with optional `%` comment lines.
pub fn write_matrix_market_array(path: impl AsRef<Path>, a: &DenseBlock, comments: &[&str]) -> Result<()> {
    let mut s = String::with_capacity(24 * a.rows() * a.cols() + 64);
    s.push_str("%%MatrixMarket matrix array real general\n");
    for c in comments {
        let _ = writeln!(s, "% {c}");
    }
    let _ = writeln!(s, "{} {}", a.rows(), a.cols());
    for v in a.as_slice() {
        let _ = writeln!(s, "{v:.16e}");
    }
    write_text(path.as_ref(), &s)
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Prescribed singular values for [`synth_matrix`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumSpec {
    pub sigma: Vec<f64>,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
}

impl SpectrumSpec {
    /// `min(m, n)` values spaced geometrically from `1` down to `1/kappa`.
    pub fn geometric(m: usize, n: usize, kappa: f64, seed: u64) -> Self {
        let p = m.min(n);
        let sigma = if p == 1 {
            vec![1.0]
        } else {
            (0..p)
                .map(|i| kappa.powf(-(i as f64) / (p - 1) as f64))
                .collect()
        };
        Self { sigma, m, n, seed }
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return Err(Error::EmptyMatrix);
        }
        let p = self.m.min(self.n);
        if self.sigma.len() != p {
            return Err(Error::dim("SpectrumSpec::sigma", p, self.sigma.len()));
        }
        if self.sigma.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidConfig("singular values must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// Number of Householder reflectors applied on each side.
const SYNTH_REFLECTORS: usize = 20;

fn sparse_unit_vector(len: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, f64)> {
    let support = len.min((len / 5).max(4));
    let mut idx: Vec<usize> = rand::seq::index::sample(rng, len, support).into_vec();
    idx.sort_unstable();
    let mut w: Vec<(usize, f64)> = idx.into_iter().map(|i| (i, rng.sample(StandardNormal))).collect();
    let nrm = w.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
    for (_, v) in w.iter_mut() {
        *v /= nrm;
    }
    w
}

/// `A ← (I − 2wwᵀ)·A`.
fn reflect_rows(a: &mut DenseBlock, w: &[(usize, f64)]) {
    for j in 0..a.cols() {
        let col = a.col_mut(j);
        let c: f64 = w.iter().map(|&(i, wi)| wi * col[i]).sum();
        if c != 0.0 {
            for &(i, wi) in w {
                col[i] -= 2.0 * c * wi;
            }
        }
    }
}

/// `A ← A·(I − 2wwᵀ)`.
fn reflect_cols(a: &mut DenseBlock, w: &[(usize, f64)]) {
    let mut c = vec![0.0; a.rows()];
    for &(l, wl) in w {
        for (ci, ai) in c.iter_mut().zip(a.col(l)) {
            *ci += wl * ai;
        }
    }
    for &(l, wl) in w {
        let col = a.col_mut(l);
        for (ai, ci) in col.iter_mut().zip(&c) {
            *ai -= 2.0 * wl * ci;
        }
    }
}

/// Builds `U·diag(σ)·Vᵀ` with `U`, `V` products of seeded sparse Householder
/// reflectors, stored as CSR (exact zeros dropped).
pub fn synth_matrix(spec: &SpectrumSpec) -> Result<SparseMatrixCsr> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut a = DenseBlock::zeros(spec.m, spec.n);
    for (i, &s) in spec.sigma.iter().enumerate() {
        a.set(i, i, s);
    }
    for _ in 0..SYNTH_REFLECTORS {
        let wu = sparse_unit_vector(spec.m, &mut rng);
        reflect_rows(&mut a, &wu);
        let wv = sparse_unit_vector(spec.n, &mut rng);
        reflect_cols(&mut a, &wv);
    }
    SparseMatrixCsr::from_dense(&a)
}

/// Seeded random sparse matrix with standard normal entries at roughly the
/// given density; every row and column gets at least one entry.
pub fn random_sparse(m: usize, n: usize, density: f64, seed: u64) -> Result<SparseMatrixCsr> {
    if m == 0 || n == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Vec::new();
    for j in 0..n {
        for i in 0..m {
            if rng.random::<f64>() < density {
                t.push((i, j, rng.sample(StandardNormal)));
            }
        }
    }
    for j in 0..n {
        let i = rng.random_range(0..m);
        t.push((i, j, rng.sample(StandardNormal)));
    }
    for i in 0..m {
        let j = rng.random_range(0..n);
        t.push((i, j, rng.sample(StandardNormal)));
    }
    SparseMatrixCsr::from_triplets(m, n, &t)
}

/// Column-scaled near-identity: `A = (I + E)·D` with `D` log-uniform in
/// `[1, max_scale]` and `E` sparse with small entries, so `AᵀA` is strongly
/// diagonally dominant with a widely spread diagonal.
pub fn synth_diagonally_dominant(m: usize, n: usize, max_scale: f64, density: f64, seed: u64) -> Result<SparseMatrixCsr> {
    if m == 0 || n == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales: Vec<f64> = (0..n).map(|_| max_scale.powf(rng.random::<f64>())).collect();
    let per_col = (density * m as f64).max(1.0);
    let amp = 0.3 / per_col.sqrt();
    let mut t = Vec::new();
    for (j, &d) in scales.iter().enumerate() {
        if j < m {
            t.push((j, j, d));
        }
        for i in 0..m {
            if i != j && rng.random::<f64>() < density {
                let e: f64 = rng.sample(StandardNormal);
                t.push((i, j, amp * e * d));
            }
        }
    }
    SparseMatrixCsr::from_triplets(m, n, &t)
}
