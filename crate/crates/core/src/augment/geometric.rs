use serde::{Deserialize, Serialize};

use super::AugmentError;
use crate::grid::Raster;

/// The dihedral symmetries of a square, as exact index permutations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GeometricTransform {
    Identity,
    HorizontalFlip,
    VerticalFlip,
    /// Transpose.
    MainDiagonalFlip,
    /// Transpose, then reverse both axes.
    AntiDiagonalFlip,
    /// Counter-clockwise quarter turn.
    Rotate90,
    /// Clockwise quarter turn.
    Rotate270,
}

impl GeometricTransform {
    pub const ALL: [GeometricTransform; 7] = [
        GeometricTransform::Identity,
        GeometricTransform::HorizontalFlip,
        GeometricTransform::VerticalFlip,
        GeometricTransform::MainDiagonalFlip,
        GeometricTransform::AntiDiagonalFlip,
        GeometricTransform::Rotate90,
        GeometricTransform::Rotate270,
    ];

    /// The six non-identity members used by the TTA catalog.
    pub const NON_IDENTITY: [GeometricTransform; 6] = [
        GeometricTransform::HorizontalFlip,
        GeometricTransform::VerticalFlip,
        GeometricTransform::MainDiagonalFlip,
        GeometricTransform::AntiDiagonalFlip,
        GeometricTransform::Rotate90,
        GeometricTransform::Rotate270,
    ];

    pub fn inverse(self) -> GeometricTransform {
        match self {
            GeometricTransform::Rotate90 => GeometricTransform::Rotate270,
            GeometricTransform::Rotate270 => GeometricTransform::Rotate90,
            other => other,
        }
    }

    pub fn is_identity(self) -> bool {
        self == GeometricTransform::Identity
    }

    /// Whether the transform is only defined on square grids.
    pub fn requires_square(self) -> bool {
        !matches!(
            self,
            GeometricTransform::Identity
                | GeometricTransform::HorizontalFlip
                | GeometricTransform::VerticalFlip
        )
    }

    fn check(self, height: usize, width: usize) -> Result<(), AugmentError> {
        if self.requires_square() && height != width {
            return Err(AugmentError::NonSquare {
                transform: self,
                height,
                width,
            });
        }
        Ok(())
    }

    /// Hands `visit` the map from output `(row, col)` to the flat input index.
    fn with_source<V: SourceVisitor>(self, height: usize, width: usize, visit: V) -> V::Output {
        let (h, w, n) = (height, width, height);
        match self {
            GeometricTransform::Identity => visit.visit(|r, c| r * w + c),
            GeometricTransform::HorizontalFlip => visit.visit(|r, c| r * w + (w - 1 - c)),
            GeometricTransform::VerticalFlip => visit.visit(|r, c| (h - 1 - r) * w + c),
            GeometricTransform::MainDiagonalFlip => visit.visit(|r, c| c * n + r),
            GeometricTransform::AntiDiagonalFlip => {
                visit.visit(|r, c| (n - 1 - c) * n + (n - 1 - r))
            }
            GeometricTransform::Rotate90 => visit.visit(|r, c| c * n + (n - 1 - r)),
            GeometricTransform::Rotate270 => visit.visit(|r, c| (n - 1 - c) * n + r),
        }
    }

    /// For each output pixel, the flat index of the input pixel it copies.
    pub fn permutation(self, height: usize, width: usize) -> Result<Vec<usize>, AugmentError> {
        self.check(height, width)?;
        Ok(self.with_source(height, width, IndexTable { height, width }))
    }

    pub fn apply<R: Raster>(self, grid: &R) -> Result<R, AugmentError> {
        let (height, width) = (grid.height(), grid.width());
        self.check(height, width)?;
        Ok(self.with_source(height, width, Gather(grid)))
    }
}

trait SourceVisitor {
    type Output;
    fn visit(self, source: impl Fn(usize, usize) -> usize) -> Self::Output;
}

struct IndexTable {
    height: usize,
    width: usize,
}

impl SourceVisitor for IndexTable {
    type Output = Vec<usize>;
    fn visit(self, source: impl Fn(usize, usize) -> usize) -> Vec<usize> {
        let mut index = Vec::with_capacity(self.height * self.width);
        for row in 0..self.height {
            index.extend((0..self.width).map(|col| source(row, col)));
        }
        index
    }
}

struct Gather<'a, R>(&'a R);

impl<R: Raster> SourceVisitor for Gather<'_, R> {
    type Output = R;
    fn visit(self, source: impl Fn(usize, usize) -> usize) -> R {
        self.0.permuted(source)
    }
}

pub fn apply_geometric<R: Raster>(g: GeometricTransform, grid: &R) -> Result<R, AugmentError> {
    g.apply(grid)
}

pub fn invert_geometric(g: GeometricTransform) -> GeometricTransform {
    g.inverse()
}
