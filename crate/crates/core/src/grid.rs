//! Node values on the box `[-R, R]^n` extended by a fallback profile.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fracop::TestFunctionProfile;

/// `m^n` node values on a uniform grid over `[-R, R]^n` (first axis slowest).
///
/// Inside the box, `evaluate(x) = φ(x) + I[u − φ](x)` where `I` is
/// multilinear interpolation of the node corrections; outside it is `φ(x)`.
/// When boundary nodes carry `φ` the extension is continuous across the
/// faces, and a grid sampled from `φ` reproduces `φ` exactly.
#[derive(Clone, Debug)]
pub struct GridFunction {
    n: usize,
    m: usize,
    radius: f64,
    values: Vec<f64>,
    correction: Vec<f64>,
    fallback: TestFunctionProfile,
}

/// Header written alongside the CSV and binary bodies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub n: usize,
    #[serde(rename = "R")]
    pub radius: f64,
    pub m: usize,
    pub s: f64,
    pub k: usize,
    pub phi_name: String,
}

impl GridFunction {
    pub fn new(n: usize, m: usize, radius: f64, values: Vec<f64>, fallback: TestFunctionProfile) -> Result<Self> {
        if n == 0 || m < 3 || !(radius > 0.0) {
            return Err(Error::InvalidInput(format!(
                "grid needs n >= 1, m >= 3, R > 0 (got n={n}, m={m}, R={radius})"
            )));
        }
        let total = m.checked_pow(n as u32).ok_or_else(|| Error::InvalidInput("grid too large".into()))?;
        if values.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("grid values must be finite".into()));
        }
        let mut g = Self {
            n,
            m,
            radius,
            values,
            correction: Vec::new(),
            fallback,
        };
        g.correction = (0..total).map(|i| g.values[i] - g.fallback.eval(&g.node(i))).collect();
        Ok(g)
    }

    /// Samples `phi` at the nodes.
    pub fn from_profile(n: usize, m: usize, radius: f64, phi: &TestFunctionProfile) -> Result<Self> {
        Self::from_fn(n, m, radius, phi.clone(), |x| phi.eval(x))
    }

    pub fn from_fn(
        n: usize,
        m: usize,
        radius: f64,
        fallback: TestFunctionProfile,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        let total = m.checked_pow(n as u32).ok_or_else(|| Error::InvalidInput("grid too large".into()))?;
        let h = 2.0 * radius / (m as f64 - 1.0);
        let values = (0..total)
            .map(|i| {
                let x: Vec<f64> = multi_index(i, n, m).iter().map(|&j| -radius + j as f64 * h).collect();
                f(&x)
            })
            .collect();
        Self::new(n, m, radius, values, fallback)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn points_per_axis(&self) -> usize {
        self.m
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.radius / (self.m as f64 - 1.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Node values minus the fallback at the nodes.
    pub fn correction(&self) -> &[f64] {
        &self.correction
    }

    pub fn fallback(&self) -> &TestFunctionProfile {
        &self.fallback
    }

    /// Same grid with new node values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.n, self.m, self.radius, values, self.fallback.clone())
    }

    pub fn multi_index(&self, i: usize) -> Vec<usize> {
        multi_index(i, self.n, self.m)
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &j| acc * self.m + j)
    }

    pub fn node(&self, i: usize) -> Vec<f64> {
        let h = self.spacing();
        self.multi_index(i).iter().map(|&j| -self.radius + j as f64 * h).collect()
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.multi_index(i).iter().any(|&j| j == 0 || j == self.m - 1)
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_boundary(i)).collect()
    }

    /// Calls `visit(node, weight)` for the multilinear interpolation corners
    /// of `x`. Returns false (visiting nothing) outside the box.
    pub fn for_each_corner(&self, x: &[f64], mut visit: impl FnMut(usize, f64)) -> bool {
        let h = self.spacing();
        let mut base = [0usize; 8];
        let mut frac = [0f64; 8];
        assert!(self.n <= 8, "interpolation supports n <= 8");
        for d in 0..self.n {
            let t = (x[d] + self.radius) / h;
            if !(t >= 0.0 && t <= (self.m - 1) as f64) {
                return false;
            }
            let j = (t.floor() as usize).min(self.m - 2);
            base[d] = j;
            frac[d] = t - j as f64;
        }
        for corner in 0..(1usize << self.n) {
            let mut w = 1.0;
            let mut idx = 0;
            for d in 0..self.n {
                let bit = (corner >> d) & 1;
                w *= if bit == 1 { frac[d] } else { 1.0 - frac[d] };
                idx = idx * self.m + base[d] + bit;
            }
            if w != 0.0 {
                visit(idx, w);
            }
        }
        true
    }

    /// `φ(x) + I[u − φ](x)` inside the box, `φ(x)` outside.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut c = 0.0;
        self.for_each_corner(x, |i, w| c += w * self.correction[i]);
        self.fallback.eval(x) + c
    }

    /// Writes `<stem>.json` (header), `<stem>.csv` (coordinates, value) and
    /// `<stem>.bin` (little-endian f64 values, row-major node order).
    pub fn save(&self, stem: &Path, s: f64, k: usize) -> Result<Vec<PathBuf>> {
        let header = GridHeader {
            n: self.n,
            radius: self.radius,
            m: self.m,
            s,
            k,
            phi_name: self.fallback.name().to_string(),
        };
        let json_path = stem.with_extension("json");
        fs::write(&json_path, crate::report::to_json_string(&header)?)?;
        let csv_path = stem.with_extension("csv");
        let mut csv = String::new();
        for d in 0..self.n {
            csv.push_str(&format!("x{d},"));
        }
        csv.push_str("value\n");
        for i in 0..self.len() {
            for c in self.node(i) {
                csv.push_str(&crate::report::fmt_f64(c));
                csv.push(',');
            }
            csv.push_str(&crate::report::fmt_f64(self.values[i]));
            csv.push('\n');
        }
        fs::write(&csv_path, csv)?;
        let bin_path = stem.with_extension("bin");
        let mut f = fs::File::create(&bin_path)?;
        for v in &self.values {
            f.write_all(&v.to_le_bytes())?;
        }
        Ok(vec![json_path, csv_path, bin_path])
    }

    /// Reads a grid back from its header and binary body.
    pub fn load(stem: &Path, fallback: TestFunctionProfile) -> Result<(Self, GridHeader)> {
        let header: GridHeader = serde_json::from_str(&fs::read_to_string(stem.with_extension("json"))?)?;
        let bytes = fs::read(stem.with_extension("bin"))?;
        if bytes.len() % 8 != 0 {
            return Err(Error::InvalidInput("binary grid body is not a whole number of f64".into()));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let g = Self::new(header.n, header.m, header.radius, values, fallback)?;
        Ok((g, header))
    }
}

fn multi_index(mut i: usize, n: usize, m: usize) -> Vec<usize> {
    let mut idx = vec![0; n];
    for d in (0..n).rev() {
        idx[d] = i % m;
        i /= m;
    }
    idx
}
