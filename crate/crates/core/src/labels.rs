use crate::error::{Error, Result};
use crate::tensor::DenseArray;

/// Frame-level multi-hot labels: `frames × classes` over {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelGrid {
    frames: usize,
    classes: usize,
    bits: Vec<u8>,
}

impl LabelGrid {
    pub fn new(frames: usize, classes: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != frames * classes {
            return Err(Error::Dimension {
                op: "LabelGrid::new",
                lhs: vec![frames, classes],
                rhs: vec![bits.len()],
            });
        }
        if let Some(b) = bits.iter().find(|b| **b > 1) {
            return Err(Error::Contract(format!("label entry {b} is not 0 or 1")));
        }
        Ok(Self {
            frames,
            classes,
            bits,
        })
    }

    pub fn zeros(frames: usize, classes: usize) -> Self {
        Self {
            frames,
            classes,
            bits: vec![0; frames * classes],
        }
    }

    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let classes = rows.first().map_or(0, |r| r.as_ref().len());
        let mut bits = Vec::with_capacity(rows.len() * classes);
        for r in rows {
            if r.as_ref().len() != classes {
                return Err(Error::Contract("ragged label rows".into()));
            }
            bits.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), classes, bits)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, t: usize, c: usize) -> bool {
        self.bits[t * self.classes + c] == 1
    }

    pub fn set(&mut self, t: usize, c: usize, on: bool) {
        self.bits[t * self.classes + c] = on as u8;
    }

    pub fn row(&self, t: usize) -> &[u8] {
        &self.bits[t * self.classes..(t + 1) * self.classes]
    }

    /// Number of classes active at frame `t`.
    pub fn row_count(&self, t: usize) -> usize {
        self.row(t).iter().filter(|b| **b == 1).count()
    }

    /// Inner product of the label rows at frames `a` and `b`.
    pub fn row_dot(&self, a: usize, b: usize) -> usize {
        self.row(a)
            .iter()
            .zip(self.row(b))
            .filter(|(x, y)| **x == 1 && **y == 1)
            .count()
    }

    /// Frames with class `c` active.
    pub fn column_count(&self, c: usize) -> usize {
        (0..self.frames).filter(|&t| self.get(t, c)).count()
    }

    /// Classes with at least one active frame.
    pub fn active_classes(&self) -> usize {
        (0..self.classes).filter(|&c| self.column_count(c) > 0).count()
    }

    /// Column-wise OR: the clip-level (weak) labels.
    pub fn weak(&self) -> Vec<u8> {
        (0..self.classes)
            .map(|c| (self.column_count(c) > 0) as u8)
            .collect()
    }

    pub fn is_overlapping(&self, t: usize) -> bool {
        self.row_count(t) >= 2
    }

    pub fn to_array(&self) -> DenseArray {
        DenseArray::new(
            vec![self.frames, self.classes],
            self.bits.iter().map(|&b| b as f64).collect(),
        )
        .expect("shape matches")
    }
}
