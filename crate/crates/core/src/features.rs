//! Assembled per-essay feature matrices: a dense block (numeric, language
//! model, topics) plus a sparse block (clusters, POS, bag-of-words), with a
//! family-offset index and a layout fingerprint for compatibility checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::ContentHasher;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Dense,
    Sparse,
}

/// One feature family's slot in the matrix. `offset` is relative to the
/// start of the family's region (dense or sparse).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyBlock {
    pub family: String,
    pub kind: BlockKind,
    pub offset: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub blocks: Vec<FamilyBlock>,
    pub dense_width: usize,
    pub sparse_width: usize,
}

impl FeatureLayout {
    /// Lay families out in the given order; dense families tile the dense
    /// region, sparse families the sparse region.
    pub fn new(families: &[(&str, BlockKind, usize)]) -> FeatureLayout {
        let mut blocks = Vec::with_capacity(families.len());
        let mut dense_width = 0;
        let mut sparse_width = 0;
        for &(family, kind, width) in families {
            let offset = match kind {
                BlockKind::Dense => {
                    let o = dense_width;
                    dense_width += width;
                    o
                }
                BlockKind::Sparse => {
                    let o = sparse_width;
                    sparse_width += width;
                    o
                }
            };
            blocks.push(FamilyBlock {
                family: family.to_string(),
                kind,
                offset,
                width,
            });
        }
        FeatureLayout {
            blocks,
            dense_width,
            sparse_width,
        }
    }

    pub fn width(&self) -> usize {
        self.dense_width + self.sparse_width
    }

    pub fn block(&self, family: &str) -> Option<&FamilyBlock> {
        self.blocks.iter().find(|b| b.family == family)
    }

    /// Global feature-id range of a family. Dense features occupy
    /// [0, dense_width); sparse features follow at dense_width + offset.
    pub fn global_range(&self, family: &str) -> Option<std::ops::Range<usize>> {
        self.block(family).map(|b| match b.kind {
            BlockKind::Dense => b.offset..b.offset + b.width,
            BlockKind::Sparse => {
                let start = self.dense_width + b.offset;
                start..start + b.width
            }
        })
    }

    /// Hash of the layout identity: family names, kinds, and widths in
    /// order. Any layout change, and only a layout change, changes it.
    pub fn fingerprint(&self) -> u64 {
        let mut hasher = ContentHasher::new();
        hasher.update_str("feature-layout");
        for block in &self.blocks {
            hasher.update_str(&block.family);
            hasher.update_str(match block.kind {
                BlockKind::Dense => "dense",
                BlockKind::Sparse => "sparse",
            });
            hasher.update_u64(block.width as u64);
        }
        hasher.finish()
    }
}

/// Row-major feature matrix with the dense block stored contiguously and the
/// sparse block as per-row (column, value) pairs. Sparse columns are
/// region-relative; values must be finite and nonzero (zero entries are
/// represented by omission).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub layout: FeatureLayout,
    dense: Vec<f64>,
    sparse_rows: Vec<Vec<(u32, f64)>>,
}

impl FeatureMatrix {
    pub fn new(layout: FeatureLayout) -> FeatureMatrix {
        FeatureMatrix {
            layout,
            dense: Vec::new(),
            sparse_rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, dense: &[f64], sparse: Vec<(u32, f64)>) -> Result<()> {
        if dense.len() != self.layout.dense_width {
            return Err(Error::Data(format!(
                "dense row width {} does not match layout width {}",
                dense.len(),
                self.layout.dense_width
            )));
        }
        if dense.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("dense feature value is not finite".into()));
        }
        for (i, &(col, value)) in sparse.iter().enumerate() {
            if col as usize >= self.layout.sparse_width {
                return Err(Error::Data(format!(
                    "sparse column {col} outside width {}",
                    self.layout.sparse_width
                )));
            }
            if !value.is_finite() || value == 0.0 {
                return Err(Error::Data(format!(
                    "sparse value {value} at column {col} must be finite and nonzero"
                )));
            }
            if i > 0 && sparse[i - 1].0 >= col {
                return Err(Error::Data("sparse columns must strictly increase".into()));
            }
        }
        self.dense.extend_from_slice(dense);
        self.sparse_rows.push(sparse);
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.sparse_rows.len()
    }

    pub fn width(&self) -> usize {
        self.layout.width()
    }

    pub fn dense_width(&self) -> usize {
        self.layout.dense_width
    }

    pub fn sparse_width(&self) -> usize {
        self.layout.sparse_width
    }

    pub fn dense_row(&self, row: usize) -> &[f64] {
        let w = self.layout.dense_width;
        &self.dense[row * w..(row + 1) * w]
    }

    pub fn sparse_row(&self, row: usize) -> &[(u32, f64)] {
        &self.sparse_rows[row]
    }

    /// Value at a global feature id (dense first, then sparse).
    pub fn value(&self, row: usize, feature: usize) -> f64 {
        if feature < self.layout.dense_width {
            self.dense_row(row)[feature]
        } else {
            let col = (feature - self.layout.dense_width) as u32;
            self.sparse_rows[row]
                .binary_search_by_key(&col, |&(c, _)| c)
                .map(|i| self.sparse_rows[row][i].1)
                .unwrap_or(0.0)
        }
    }

    pub fn fingerprint(&self) -> u64 {
        self.layout.fingerprint()
    }
}
