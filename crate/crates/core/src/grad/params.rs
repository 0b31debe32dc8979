//! Flat parameter store with named matrix segments.
//!
//! Text format (version 1):
//!
//! ```text
//! params v1
//! segments <count>
//! <name> <rows> <cols>        (one line per segment, in storage order)
//! values <total>
//! <value>                     (one per line, row-major, segment order)
//! ```
//!
//! Values are written with Rust's shortest round-trip formatting, so a
//! save/load cycle is bit-exact.

use std::io::{BufRead, Write};

use ndarray::ArrayView2;
use thiserror::Error;

use super::{GradError, Gradients, Graph, Matrix, NodeId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    segments: Vec<Segment>,
}

#[derive(Debug, Error)]
pub enum ParamFormatError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl ParamVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment; `values` are row-major.
    pub fn push(&mut self, name: &str, rows: usize, cols: usize, values: Vec<f64>) {
        assert_eq!(values.len(), rows * cols, "segment `{name}` size");
        assert!(self.segment(name).is_none(), "duplicate segment `{name}`");
        let offset = self.values.len();
        self.values.extend(values);
        self.segments.push(Segment {
            name: name.to_string(),
            rows,
            cols,
            offset,
        });
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

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn view(&self, name: &str) -> Result<ArrayView2<'_, f64>, GradError> {
        let seg = self
            .segment(name)
            .ok_or_else(|| GradError::UnknownSegment(name.to_string()))?;
        let slice = &self.values[seg.offset..seg.offset + seg.len()];
        Ok(ArrayView2::from_shape((seg.rows, seg.cols), slice).expect("segment bounds"))
    }

    pub fn view_mut(&mut self, name: &str) -> Result<ndarray::ArrayViewMut2<'_, f64>, GradError> {
        let seg = self
            .segment(name)
            .cloned()
            .ok_or_else(|| GradError::UnknownSegment(name.to_string()))?;
        let slice = &mut self.values[seg.offset..seg.offset + seg.len()];
        Ok(ndarray::ArrayViewMut2::from_shape((seg.rows, seg.cols), slice).expect("segment bounds"))
    }

    /// True when the segment table tiles `values` with no gap or overlap.
    pub fn is_tiled(&self) -> bool {
        let mut next = 0;
        for s in &self.segments {
            if s.offset != next {
                return false;
            }
            next += s.len();
        }
        next == self.values.len()
    }

    /// Same segment names and shapes.
    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.segments == other.segments
    }

    /// Registers every segment as a differentiable leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        let nodes = self
            .segments
            .iter()
            .map(|s| {
                let m = self.view(&s.name).expect("own segment").to_owned();
                (s.name.clone(), graph.leaf(m))
            })
            .collect();
        BoundParams {
            nodes,
            total: self.values.len(),
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "params v1")?;
        writeln!(w, "segments {}", self.segments.len())?;
        for s in &self.segments {
            writeln!(w, "{} {} {}", s.name, s.rows, s.cols)?;
        }
        writeln!(w, "values {}", self.values.len())?;
        for v in &self.values {
            writeln!(w, "{v:?}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, ParamFormatError> {
        let mut lines = r.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String), ParamFormatError> {
            match lines.next() {
                Some((i, l)) => Ok((i + 1, l?)),
                None => Err(ParamFormatError::Parse {
                    line: 0,
                    msg: format!("unexpected end of input, expected {what}"),
                }),
            }
        };
        let bad = |line: usize, msg: String| ParamFormatError::Parse { line, msg };

        let (ln, header) = next("header")?;
        if header.trim() != "params v1" {
            return Err(bad(ln, format!("unsupported header `{header}`")));
        }
        let (ln, l) = next("segment count")?;
        let count: usize = l
            .strip_prefix("segments ")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| bad(ln, format!("expected `segments <n>`, got `{l}`")))?;
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let (ln, l) = next("segment")?;
            let parts: Vec<&str> = l.split_whitespace().collect();
            let parsed = match parts.as_slice() {
                [name, r, c] => r.parse::<usize>().ok().zip(c.parse::<usize>().ok()).map(|(r, c)| (name.to_string(), r, c)),
                _ => None,
            };
            shapes.push(parsed.ok_or_else(|| bad(ln, format!("malformed segment line `{l}`")))?);
        }
        let (ln, l) = next("value count")?;
        let total: usize = l
            .strip_prefix("values ")
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| bad(ln, format!("expected `values <n>`, got `{l}`")))?;
        let declared: usize = shapes.iter().map(|(_, r, c)| r * c).sum();
        if declared != total {
            return Err(bad(ln, format!("segments cover {declared} values, header says {total}")));
        }
        let mut values = Vec::with_capacity(total);
        for _ in 0..total {
            let (ln, l) = next("value")?;
            values.push(l.trim().parse::<f64>().map_err(|e| bad(ln, format!("{e}: `{l}`")))?);
        }
        let mut out = ParamVector::new();
        let mut it = values.into_iter();
        for (name, r, c) in shapes {
            out.push(&name, r, c, it.by_ref().take(r * c).collect());
        }
        Ok(out)
    }
}

/// Leaf nodes of a [`ParamVector`] bound into one graph.
#[derive(Debug, Clone)]
pub struct BoundParams {
    nodes: Vec<(String, NodeId)>,
    total: usize,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<NodeId, GradError> {
        self.nodes
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| GradError::UnknownSegment(name.to_string()))
    }

    /// Gradient laid out like the bound [`ParamVector`].
    pub fn flat_gradient(&self, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total);
        for (_, id) in &self.nodes {
            let g: Matrix = grads.wrt(*id);
            out.extend(g.iter().copied());
        }
        out
    }
}
