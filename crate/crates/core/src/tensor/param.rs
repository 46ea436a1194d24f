use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Index;
use std::path::Path;

use ndarray::Array2;

use super::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};

/// A trainable matrix with an additive gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffTensor {
    pub value: Array2<f64>,
    pub grad: Option<Array2<f64>>,
    pub requires_grad: bool,
}

impl DiffTensor {
    pub fn new(value: Array2<f64>) -> Self {
        Self {
            value,
            grad: None,
            requires_grad: true,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }

    /// Adds `grad` into the accumulator.
    pub fn accumulate_grad(&mut self, grad: &Array2<f64>) -> Result<()> {
        if grad.dim() != self.value.dim() {
            return Err(Error::Dimension {
                op: "accumulate_grad",
                left: self.value.dim(),
                right: grad.dim(),
            });
        }
        match &mut self.grad {
            Some(acc) => *acc += grad,
            None => self.grad = Some(grad.clone()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(0.0);
        }
    }
}

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    params: Vec<DiffTensor>,
}

/// Tape handles for every parameter of a store, for one step.
#[derive(Debug, Clone)]
pub struct Binding(Vec<Var>);

impl Binding {
    /// Binding over existing tape handles, in [`ParamStore`] id order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for Binding {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        self.names.push(name.into());
        self.params.push(DiffTensor::new(value));
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &DiffTensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut DiffTensor {
        &mut self.params[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DiffTensor)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut DiffTensor> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        Binding(
            self.params
                .iter()
                .map(|p| tape.leaf(p.value.clone(), p.requires_grad))
                .collect(),
        )
    }

    /// Adds the gradients of a backward pass into each parameter.
    pub fn accumulate(&mut self, grads: &Gradients, binding: &Binding) -> Result<()> {
        for (param, &var) in self.params.iter_mut().zip(&binding.0) {
            if let Some(g) = grads.get(var) {
                param.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(DiffTensor::zero_grad);
    }

    /// Writes the `name rows cols` + row-major values checkpoint format.
    pub fn save(&self, path: impl AsRef<Path>, header: &str) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut body = || -> std::io::Result<()> {
            for line in header.lines() {
                writeln!(out, "# {line}")?;
            }
            for (name, p) in self.iter() {
                let (rows, cols) = p.shape();
                writeln!(out, "{name} {rows} {cols}")?;
                for row in p.value.rows() {
                    let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    writeln!(out, "{}", cells.join(" "))?;
                }
            }
            out.flush()
        };
        body().map_err(|e| Error::io(path, e))
    }

    /// Replaces values from a checkpoint; every stored name must exist in
    /// the checkpoint with the same shape.
    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let entries = read_checkpoint(path.as_ref())?;
        for (i, name) in self.names.iter().enumerate() {
            let Some((_, value)) = entries.iter().find(|(n, _)| n == name) else {
                return Err(Error::contract(format!("checkpoint lacks parameter {name}")));
            };
            if value.dim() != self.params[i].shape() {
                return Err(Error::Dimension {
                    op: "checkpoint load",
                    left: self.params[i].shape(),
                    right: value.dim(),
                });
            }
            self.params[i].value = value.clone();
        }
        Ok(())
    }
}

/// Parses a named-matrix checkpoint into `(name, matrix)` pairs.
pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Array2<f64>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty() || s.starts_with('#')));
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut entries = Vec::new();
    while let Some((line_no, header)) = lines.next() {
        let header = header.map_err(|e| Error::io(path, e))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [name, rows, cols] = fields[..] else {
            return Err(parse_err(line_no, format!("expected `name rows cols`, got {header:?}")));
        };
        let rows: usize = rows.parse().map_err(|_| parse_err(line_no, "bad row count".into()))?;
        let cols: usize = cols.parse().map_err(|_| parse_err(line_no, "bad column count".into()))?;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let Some((row_no, row)) = lines.next() else {
                return Err(parse_err(line_no, format!("{name}: truncated matrix")));
            };
            let row = row.map_err(|e| Error::io(path, e))?;
            let before = values.len();
            for cell in row.split_whitespace() {
                values.push(
                    cell.parse::<f64>()
                        .map_err(|_| parse_err(row_no, format!("not a number: {cell:?}")))?,
                );
            }
            if values.len() - before != cols {
                return Err(parse_err(row_no, format!("expected {cols} values")));
            }
        }
        let matrix = Array2::from_shape_vec((rows, cols), values).expect("counted");
        entries.push((name.to_string(), matrix));
    }
    Ok(entries)
}
