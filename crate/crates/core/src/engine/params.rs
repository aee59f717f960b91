use std::io::{Read, Write};

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Matrix;

const MAGIC: &[u8; 8] = b"MEGANCK1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable matrices, in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform initialised `rows×cols` matrix.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let m = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit));
        self.add(name, m)
    }

    pub fn add_normal(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let dist = Normal::new(0.0, std).expect("finite std");
        let m = Array2::from_shape_fn((rows, cols), |_| dist.sample(rng));
        self.add(name, m)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Zero matrices shaped like every parameter; used as gradient buffers.
    pub fn zeros_like(&self) -> Vec<Matrix> {
        self.values.iter().map(|v| Array2::zeros(v.dim())).collect()
    }

    pub fn total_size(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// One `name rows cols` line per parameter.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        for (n, v) in self.names.iter().zip(&self.values) {
            out.push_str(&format!("{n} {} {}\n", v.nrows(), v.ncols()));
        }
        out
    }

    /// Flat little-endian binary: magic, count, then per matrix the name
    /// length, name bytes, rows, cols and row-major `f64` data.
    pub fn write_binary(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for (n, v) in self.names.iter().zip(&self.values) {
            w.write_all(&(n.len() as u64).to_le_bytes())?;
            w.write_all(n.as_bytes())?;
            w.write_all(&(v.nrows() as u64).to_le_bytes())?;
            w.write_all(&(v.ncols() as u64).to_le_bytes())?;
            for x in v.iter() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Self, String> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != MAGIC {
            return Err("not a parameter checkpoint (bad magic)".into());
        }
        let count = read_u64(r)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = read_u64(r)? as usize;
            if len > 4096 {
                return Err(format!("implausible parameter name length {len}"));
            }
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|e| e.to_string())?;
            let name = String::from_utf8(name).map_err(|e| e.to_string())?;
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf).map_err(|e| e.to_string())?;
                data.push(f64::from_le_bytes(buf));
            }
            let m = Array2::from_shape_vec((rows, cols), data).map_err(|e| e.to_string())?;
            store.add(name, m);
        }
        Ok(store)
    }
}

fn read_u64(r: &mut impl Read) -> Result<u64, String> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|e| e.to_string())?;
    Ok(u64::from_le_bytes(buf))
}
