//! Compressive measurement operators and the affine projection.
//!
//! Two operator kinds share one interface:
//!
//! * dense Gaussian: i.i.d. N(0,1) entries with rows orthonormalized by
//!   Gram-Schmidt (with a re-orthogonalization pass), stored explicitly;
//! * subsampled Walsh-Hadamard: a random subset of rows of the
//!   `1/sqrt(n)`-normalized natural-ordered Hadamard matrix, applied
//!   matrix-free through the fast transform in O(n log n).
//!
//! Both kinds satisfy `phi phi' = I`, which reduces the projection onto
//! `{x : phi x = y}` to `x - phi'(phi x - y)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid2D;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    DenseGaussian,
    Fwht,
}

impl OperatorKind {
    fn name(self) -> &'static str {
        match self {
            OperatorKind::DenseGaussian => "gaussian",
            OperatorKind::Fwht => "fwht",
        }
    }
}

/// A linear map from `n`-pixel images to `m` measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementOperator {
    kind: OperatorKind,
    n: usize,
    m: usize,
    seed: u64,
    row_orthonormal: bool,
    /// Dense m x n matrix, row-major (dense kind only).
    dense: Option<Vec<f64>>,
    /// Selected Hadamard rows, ascending (fwht kind only).
    rows: Option<Vec<usize>>,
}

/// Measurement vector together with the noise level used to synthesize it.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub values: Vec<f64>,
    pub sigma: f64,
    /// Image shape the measurements came from, so recovery knows what to
    /// reconstruct.
    pub rows: usize,
    pub cols: usize,
}

impl MeasurementOperator {
    /// Dense i.i.d. Gaussian operator with orthonormalized rows.
    pub fn gaussian(n: usize, m: usize, seed: u64) -> Result<Self> {
        if m == 0 || m > n {
            return Err(Error::InvalidArg(format!(
                "need 1 <= m <= n, got m={m}, n={n}"
            )));
        }
        let mut rng = SeededRng::new(seed);
        let mut matrix = vec![0.0; m * n];
        rng.fill_gaussian(&mut matrix);

        // Modified Gram-Schmidt plus one re-orthogonalization pass; random
        // Gaussian rows are almost surely independent.
        for i in 0..m {
            for _pass in 0..2 {
                for j in 0..i {
                    let dot = row_dot(&matrix, n, i, j);
                    let (head, tail) = matrix.split_at_mut(i * n);
                    let row_j = &head[j * n..(j + 1) * n];
                    let row_i = &mut tail[..n];
                    for k in 0..n {
                        row_i[k] -= dot * row_j[k];
                    }
                }
            }
            let norm = row_dot(&matrix, n, i, i).sqrt();
            if norm < 1e-12 {
                return Err(Error::InvalidArg(format!(
                    "sensing rows are numerically dependent at row {i}"
                )));
            }
            for v in &mut matrix[i * n..(i + 1) * n] {
                *v /= norm;
            }
        }
        Ok(MeasurementOperator {
            kind: OperatorKind::DenseGaussian,
            n,
            m,
            seed,
            row_orthonormal: true,
            dense: Some(matrix),
            rows: None,
        })
    }

    /// Subsampled fast Walsh-Hadamard operator; `n` must be a power of two.
    pub fn fwht(n: usize, m: usize, seed: u64) -> Result<Self> {
        if !n.is_power_of_two() {
            return Err(Error::InvalidArg(format!(
                "fwht operator needs a power-of-two signal length, got {n}"
            )));
        }
        if m == 0 || m > n {
            return Err(Error::InvalidArg(format!(
                "need 1 <= m <= n, got m={m}, n={n}"
            )));
        }
        let mut rng = SeededRng::new(seed);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..m {
            let j = i + rng.gen_index(n - i);
            idx.swap(i, j);
        }
        let mut rows: Vec<usize> = idx[..m].to_vec();
        rows.sort_unstable();
        Ok(MeasurementOperator {
            kind: OperatorKind::Fwht,
            n,
            m,
            seed,
            row_orthonormal: true,
            dense: None,
            rows: Some(rows),
        })
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn signal_len(&self) -> usize {
        self.n
    }

    pub fn measurement_len(&self) -> usize {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_row_orthonormal(&self) -> bool {
        self.row_orthonormal
    }

    pub fn measurement_rate(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    /// `phi x`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::shape("operator forward", format!("{}", self.n), format!("{}", x.len())));
        }
        match self.kind {
            OperatorKind::DenseGaussian => {
                let mat = self.dense.as_ref().expect("dense payload");
                let mut y = vec![0.0; self.m];
                for (i, out) in y.iter_mut().enumerate() {
                    let row = &mat[i * self.n..(i + 1) * self.n];
                    let mut acc = 0.0;
                    for k in 0..self.n {
                        acc += row[k] * x[k];
                    }
                    *out = acc;
                }
                Ok(y)
            }
            OperatorKind::Fwht => {
                let mut buf = x.to_vec();
                fwht_in_place(&mut buf)?;
                let scale = 1.0 / (self.n as f64).sqrt();
                let rows = self.rows.as_ref().expect("fwht rows");
                Ok(rows.iter().map(|&r| buf[r] * scale).collect())
            }
        }
    }

    /// `phi' y`.
    pub fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.m {
            return Err(Error::shape("operator adjoint", format!("{}", self.m), format!("{}", y.len())));
        }
        match self.kind {
            OperatorKind::DenseGaussian => {
                let mat = self.dense.as_ref().expect("dense payload");
                let mut x = vec![0.0; self.n];
                for i in 0..self.m {
                    let row = &mat[i * self.n..(i + 1) * self.n];
                    let yi = y[i];
                    if yi != 0.0 {
                        for k in 0..self.n {
                            x[k] += yi * row[k];
                        }
                    }
                }
                Ok(x)
            }
            OperatorKind::Fwht => {
                // The normalized Hadamard matrix is symmetric, so the adjoint
                // is scatter followed by the same transform.
                let mut buf = vec![0.0; self.n];
                let rows = self.rows.as_ref().expect("fwht rows");
                for (i, &r) in rows.iter().enumerate() {
                    buf[r] = y[i];
                }
                fwht_in_place(&mut buf)?;
                let scale = 1.0 / (self.n as f64).sqrt();
                for v in &mut buf {
                    *v *= scale;
                }
                Ok(buf)
            }
        }
    }

    /// `y = phi vec(x) + sigma * noise`, raster flattening.
    pub fn measure(&self, image: &Grid2D, sigma: f64, rng: &mut SeededRng) -> Result<Measurements> {
        if image.len() != self.n {
            return Err(Error::shape(
                "measure",
                format!("{} pixels", self.n),
                format!("{}x{}", image.rows(), image.cols()),
            ));
        }
        if sigma < 0.0 {
            return Err(Error::InvalidArg("noise std must be nonnegative".into()));
        }
        let mut values = self.forward(image.data())?;
        if sigma > 0.0 {
            for v in &mut values {
                *v += sigma * rng.next_gaussian();
            }
        }
        Ok(Measurements {
            values,
            sigma,
            rows: image.rows(),
            cols: image.cols(),
        })
    }

    /// Euclidean projection of `x` onto `{z : phi z = y}`, valid because the
    /// rows are orthonormal: `x - phi'(phi x - y)`.
    pub fn project_affine(&self, x: &Grid2D, y: &Measurements) -> Result<Grid2D> {
        if !self.row_orthonormal {
            return Err(Error::NotOrthonormal);
        }
        if x.len() != self.n {
            return Err(Error::shape(
                "project_affine",
                format!("{} pixels", self.n),
                format!("{}x{}", x.rows(), x.cols()),
            ));
        }
        if y.values.len() != self.m {
            return Err(Error::shape(
                "project_affine measurements",
                format!("{}", self.m),
                format!("{}", y.values.len()),
            ));
        }
        let mut residual = self.forward(x.data())?;
        for (r, yv) in residual.iter_mut().zip(&y.values) {
            *r -= yv;
        }
        let correction = self.adjoint(&residual)?;
        let mut out = x.clone();
        for (o, c) in out.data_mut().iter_mut().zip(&correction) {
            *o -= c;
        }
        Ok(out)
    }

    /// Largest deviation of `phi phi'` from the identity; a direct check of
    /// row orthonormality.
    pub fn orthonormality_defect(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        let mut probe = vec![0.0; self.m];
        for i in 0..self.m {
            probe.iter_mut().for_each(|v| *v = 0.0);
            probe[i] = 1.0;
            let col = self.forward(&self.adjoint(&probe)?)?;
            for (j, v) in col.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - want).abs());
            }
        }
        Ok(worst)
    }

    // ------------------------------------------------------------------
    // Descriptor file: a short self-describing text header, then (dense
    // kind only) the raw row-major f64 payload.

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header = String::new();
        header.push_str("RIDEOP 1\n");
        header.push_str(&format!("kind {}\n", self.kind.name()));
        header.push_str(&format!("n {}\n", self.n));
        header.push_str(&format!("m {}\n", self.m));
        header.push_str(&format!("seed {}\n", self.seed));
        header.push_str(&format!("orthonormal {}\n", self.row_orthonormal as u8));
        if let Some(rows) = &self.rows {
            let list: Vec<String> = rows.iter().map(|r| r.to_string()).collect();
            header.push_str(&format!("rows {}\n", list.join(",")));
        }
        if let Some(dense) = &self.dense {
            header.push_str(&format!("data {}\n", dense.len() * 8));
        }
        header.push_str("end\n");
        let mut bytes = header.into_bytes();
        if let Some(dense) = &self.dense {
            bytes.reserve(dense.len() * 8);
            for v in dense {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let fail = |detail: String| Error::Format {
            path: path.to_path_buf(),
            detail,
        };
        let (header, payload) = split_header(&bytes)
            .ok_or_else(|| fail("missing 'end' line in operator header".into()))?;
        let header = std::str::from_utf8(header)
            .map_err(|_| fail("operator header is not UTF-8".into()))?;

        let mut kind = None;
        let mut n = None;
        let mut m = None;
        let mut seed = None;
        let mut orthonormal = None;
        let mut rows: Option<Vec<usize>> = None;
        let mut data_len: Option<usize> = None;

        let mut lines = header.lines();
        match lines.next() {
            Some("RIDEOP 1") => {}
            Some(other) => {
                if let Some(v) = other.strip_prefix("RIDEOP ") {
                    if let Ok(found) = v.trim().parse::<u32>() {
                        return Err(Error::Version {
                            path: path.to_path_buf(),
                            found,
                            supported: 1,
                        });
                    }
                }
                return Err(fail(format!("bad operator magic line '{other}'")));
            }
            None => return Err(fail("empty operator file".into())),
        }
        for line in lines {
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| fail(format!("malformed header line '{line}'")))?;
            match key {
                "kind" => {
                    kind = Some(match value {
                        "gaussian" => OperatorKind::DenseGaussian,
                        "fwht" => OperatorKind::Fwht,
                        other => return Err(fail(format!("unknown operator kind '{other}'"))),
                    })
                }
                "n" => n = Some(parse_usize(value, "n", path)?),
                "m" => m = Some(parse_usize(value, "m", path)?),
                "seed" => {
                    seed = Some(value.parse::<u64>().map_err(|_| fail(format!("bad seed '{value}'")))?)
                }
                "orthonormal" => orthonormal = Some(value == "1"),
                "rows" => {
                    let mut list = Vec::new();
                    for part in value.split(',') {
                        list.push(parse_usize(part, "rows", path)?);
                    }
                    rows = Some(list);
                }
                "data" => data_len = Some(parse_usize(value, "data", path)?),
                other => return Err(fail(format!("unknown header key '{other}'"))),
            }
        }
        let kind = kind.ok_or_else(|| fail("missing kind".into()))?;
        let n = n.ok_or_else(|| fail("missing n".into()))?;
        let m = m.ok_or_else(|| fail("missing m".into()))?;
        let seed = seed.ok_or_else(|| fail("missing seed".into()))?;
        let row_orthonormal = orthonormal.unwrap_or(false);

        match kind {
            OperatorKind::Fwht => {
                let rows = rows.ok_or_else(|| fail("fwht operator needs a rows line".into()))?;
                if rows.len() != m || rows.iter().any(|&r| r >= n) {
                    return Err(fail("rows line inconsistent with n/m".into()));
                }
                if !n.is_power_of_two() {
                    return Err(fail(format!("fwht signal length {n} is not a power of two")));
                }
                Ok(MeasurementOperator {
                    kind,
                    n,
                    m,
                    seed,
                    row_orthonormal,
                    dense: None,
                    rows: Some(rows),
                })
            }
            OperatorKind::DenseGaussian => {
                let expect = m * n * 8;
                if data_len != Some(expect) {
                    return Err(fail(format!(
                        "dense payload length {:?} does not match m*n*8 = {expect}",
                        data_len
                    )));
                }
                if payload.len() != expect {
                    return Err(fail(format!(
                        "dense payload truncated: {} of {expect} bytes",
                        payload.len()
                    )));
                }
                let mut dense = Vec::with_capacity(m * n);
                for chunk in payload.chunks_exact(8) {
                    dense.push(f64::from_le_bytes(chunk.try_into().unwrap()));
                }
                if dense.iter().any(|v| !v.is_finite()) {
                    return Err(fail("non-finite entry in dense payload".into()));
                }
                Ok(MeasurementOperator {
                    kind,
                    n,
                    m,
                    seed,
                    row_orthonormal,
                    dense: Some(dense),
                    rows: None,
                })
            }
        }
    }
}

impl Measurements {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = format!(
            "RIDEY 1\nm {}\nrows {}\ncols {}\nsigma {}\nend\n",
            self.values.len(),
            self.rows,
            self.cols,
            self.sigma
        )
        .into_bytes();
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let fail = |detail: String| Error::Format {
            path: path.to_path_buf(),
            detail,
        };
        let (header, payload) =
            split_header(&bytes).ok_or_else(|| fail("missing 'end' line".into()))?;
        let header = std::str::from_utf8(header).map_err(|_| fail("header is not UTF-8".into()))?;
        let mut m = None;
        let mut rows = None;
        let mut cols = None;
        let mut sigma = None;
        let mut lines = header.lines();
        if lines.next() != Some("RIDEY 1") {
            return Err(fail("bad measurements magic line".into()));
        }
        for line in lines {
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| fail(format!("malformed header line '{line}'")))?;
            match key {
                "m" => m = Some(parse_usize(value, "m", path)?),
                "rows" => rows = Some(parse_usize(value, "rows", path)?),
                "cols" => cols = Some(parse_usize(value, "cols", path)?),
                "sigma" => {
                    sigma =
                        Some(value.parse::<f64>().map_err(|_| fail(format!("bad sigma '{value}'")))?)
                }
                other => return Err(fail(format!("unknown header key '{other}'"))),
            }
        }
        let m = m.ok_or_else(|| fail("missing m".into()))?;
        let rows = rows.ok_or_else(|| fail("missing rows".into()))?;
        let cols = cols.ok_or_else(|| fail("missing cols".into()))?;
        let sigma = sigma.ok_or_else(|| fail("missing sigma".into()))?;
        if payload.len() != m * 8 {
            return Err(fail(format!(
                "payload truncated: {} of {} bytes",
                payload.len(),
                m * 8
            )));
        }
        let values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(fail("non-finite measurement value".into()));
        }
        Ok(Measurements {
            values,
            sigma,
            rows,
            cols,
        })
    }
}

fn split_header(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let marker = b"end\n";
    let mut pos = 0;
    while pos + marker.len() <= bytes.len() {
        if &bytes[pos..pos + marker.len()] == marker
            && (pos == 0 || bytes[pos - 1] == b'\n')
        {
            return Some((&bytes[..pos], &bytes[pos + marker.len()..]));
        }
        pos += 1;
    }
    None
}

fn parse_usize(value: &str, key: &str, path: &Path) -> Result<usize> {
    value.trim().parse::<usize>().map_err(|_| Error::Format {
        path: path.to_path_buf(),
        detail: format!("bad integer for '{key}': '{value}'"),
    })
}

fn row_dot(matrix: &[f64], n: usize, i: usize, j: usize) -> f64 {
    let a = &matrix[i * n..(i + 1) * n];
    let b = &matrix[j * n..(j + 1) * n];
    let mut acc = 0.0;
    for k in 0..n {
        acc += a[k] * b[k];
    }
    acc
}

/// In-place Walsh-Hadamard transform in natural (Sylvester) order,
/// unnormalized: applying it twice scales by the length.
pub fn fwht_in_place(data: &mut [f64]) -> Result<()> {
    let n = data.len();
    if !n.is_power_of_two() {
        return Err(Error::InvalidArg(format!(
            "fwht length must be a power of two, got {n}"
        )));
    }
    let mut half = 1;
    while half < n {
        for start in (0..n).step_by(half * 2) {
            for j in start..start + half {
                let a = data[j];
                let b = data[j + half];
                data[j] = a + b;
                data[j + half] = a - b;
            }
        }
        half *= 2;
    }
    Ok(())
}
