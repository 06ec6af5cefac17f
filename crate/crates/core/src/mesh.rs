//! Nested Cartesian mesh hierarchies on the unit square.
//!
//! Level ℓ has `n₁·2^(ℓ-1)` elements per side with `H_ℓ = 2^(-ℓ+1) H₁`.
//! Domains with a square scatterer removed are represented by masking
//! inactive elements instead of remeshing, so all index arithmetic stays
//! dyadic.

use std::collections::VecDeque;

use crate::error::{Error, Result};

/// Kind of boundary condition imposed on a boundary segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
    Robin,
}

impl std::str::FromStr for BoundaryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dirichlet" | "d" => Ok(Self::Dirichlet),
            "neumann" | "n" => Ok(Self::Neumann),
            "robin" | "r" => Ok(Self::Robin),
            other => Err(Error::InvalidArgument(format!("unknown boundary kind '{other}'"))),
        }
    }
}

/// Boundary condition per side of the unit square, plus the condition on the
/// boundary of a removed scatterer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryLayout {
    pub bottom: BoundaryKind,
    pub right: BoundaryKind,
    pub top: BoundaryKind,
    pub left: BoundaryKind,
    pub hole: BoundaryKind,
}

impl BoundaryLayout {
    pub fn uniform(kind: BoundaryKind) -> Self {
        Self {
            bottom: kind,
            right: kind,
            top: kind,
            left: kind,
            hole: BoundaryKind::Dirichlet,
        }
    }

    pub fn all_robin() -> Self {
        Self::uniform(BoundaryKind::Robin)
    }

    pub fn all_dirichlet() -> Self {
        Self::uniform(BoundaryKind::Dirichlet)
    }

    pub fn has_robin(&self) -> bool {
        [self.bottom, self.right, self.top, self.left, self.hole].contains(&BoundaryKind::Robin)
    }
}

impl Default for BoundaryLayout {
    fn default() -> Self {
        Self::all_robin()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Geometry {
    UnitSquare,
    /// Unit square minus the closed box `[lo, hi]`.
    SquareWithHole { lo: [f64; 2], hi: [f64; 2] },
}

/// An element `T ∈ T_ℓ`, addressed by level and grid indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElementId {
    pub level: usize,
    pub ix: usize,
    pub iy: usize,
}

impl ElementId {
    pub fn new(level: usize, ix: usize, iy: usize) -> Self {
        Self { level, ix, iy }
    }
}

/// `N^m_ℓ(T)`: the elements reached from `T` by `m` rounds of closure-touching
/// neighbourhood growth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub level: usize,
    /// Row-major (by `iy`, then `ix`).
    pub elements: Vec<ElementId>,
    /// Inclusive index box `(ix0, iy0, ix1, iy1)`.
    pub bbox: (usize, usize, usize, usize),
}

impl Patch {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn contains(&self, e: ElementId) -> bool {
        e.level == self.level && self.elements.binary_search_by_key(&(e.iy, e.ix), |p| (p.iy, p.ix)).is_ok()
    }
}

/// Converts a mesh size `2^-k` into the number of cells per unit length.
pub fn dyadic_cells(size: f64) -> Result<usize> {
    if !(size.is_finite() && size > 0.0 && size <= 1.0) {
        return Err(Error::NonDyadic(size));
    }
    let n = (1.0 / size).round();
    if n < 1.0 || n > (1u64 << 30) as f64 || (n as u64).count_ones() != 1 || (1.0 / n - size).abs() > 0.0 {
        return Err(Error::NonDyadic(size));
    }
    Ok(n as usize)
}

#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    coarse_cells: usize,
    levels: usize,
    fine_cells: usize,
    geometry: Geometry,
    boundary: BoundaryLayout,
    fine_active: Vec<bool>,
    active: Vec<Vec<bool>>,
    active_index: Vec<Vec<Option<usize>>>,
    active_list: Vec<Vec<ElementId>>,
}

impl MeshHierarchy {
    /// Builds `L` nested meshes of mesh size `H_1 · 2^(1-ℓ)` above a fine mesh
    /// of size `h_fine`.
    pub fn build(
        h1: f64,
        levels: usize,
        h_fine: f64,
        geometry: Geometry,
        boundary: BoundaryLayout,
    ) -> Result<Self> {
        let coarse_cells = dyadic_cells(h1)?;
        let fine_cells = dyadic_cells(h_fine)?;
        if levels == 0 {
            return Err(Error::InvalidArgument("number of levels must be at least 1".into()));
        }
        let finest = coarse_cells << (levels - 1);
        if fine_cells < finest {
            return Err(Error::FineMeshTooCoarse {
                h: h_fine,
                coarse: 1.0 / finest as f64,
            });
        }
        let boundary = match geometry {
            // the scatterer boundary is sound-soft
            Geometry::SquareWithHole { .. } => BoundaryLayout {
                hole: BoundaryKind::Dirichlet,
                ..boundary
            },
            Geometry::UnitSquare => boundary,
        };

        let mut fine_active = vec![true; fine_cells * fine_cells];
        if let Geometry::SquareWithHole { lo, hi } = geometry {
            let aligned = |x: f64| {
                let s = x * coarse_cells as f64;
                (s - s.round()).abs() < 1e-12 && (0.0..=1.0).contains(&x)
            };
            if !(lo.iter().chain(&hi).all(|&x| aligned(x)) && lo[0] < hi[0] && lo[1] < hi[1]) {
                return Err(Error::HoleNotAligned { lo, hi });
            }
            let to_fine = |x: f64| (x * fine_cells as f64).round() as usize;
            for iy in to_fine(lo[1])..to_fine(hi[1]) {
                for ix in to_fine(lo[0])..to_fine(hi[0]) {
                    fine_active[iy * fine_cells + ix] = false;
                }
            }
        }

        let mut active = Vec::with_capacity(levels);
        let mut active_index = Vec::with_capacity(levels);
        let mut active_list = Vec::with_capacity(levels);
        for l in 1..=levels {
            let n = coarse_cells << (l - 1);
            let r = fine_cells / n;
            let mut mask = vec![false; n * n];
            for iy in 0..n {
                for ix in 0..n {
                    mask[iy * n + ix] = (iy * r..(iy + 1) * r)
                        .all(|fy| (ix * r..(ix + 1) * r).all(|fx| fine_active[fy * fine_cells + fx]));
                }
            }
            let mut index = vec![None; n * n];
            let mut list = Vec::new();
            for iy in 0..n {
                for ix in 0..n {
                    if mask[iy * n + ix] {
                        index[iy * n + ix] = Some(list.len());
                        list.push(ElementId::new(l, ix, iy));
                    }
                }
            }
            active.push(mask);
            active_index.push(index);
            active_list.push(list);
        }

        Ok(Self {
            coarse_cells,
            levels,
            fine_cells,
            geometry,
            boundary,
            fine_active,
            active,
            active_index,
            active_list,
        })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn boundary(&self) -> BoundaryLayout {
        self.boundary
    }

    /// Elements per side on level ℓ.
    pub fn cells_per_side(&self, level: usize) -> usize {
        self.coarse_cells << (level - 1)
    }

    /// `H_ℓ`.
    pub fn mesh_size(&self, level: usize) -> f64 {
        1.0 / self.cells_per_side(level) as f64
    }

    pub fn fine_cells_per_side(&self) -> usize {
        self.fine_cells
    }

    pub fn fine_mesh_size(&self) -> f64 {
        1.0 / self.fine_cells as f64
    }

    /// Fine cells per element side on level ℓ.
    pub fn refinement_ratio(&self, level: usize) -> usize {
        self.fine_cells / self.cells_per_side(level)
    }

    pub fn check_level(&self, level: usize) -> Result<()> {
        if level == 0 || level > self.levels {
            return Err(Error::LevelOutOfRange {
                level,
                levels: self.levels,
            });
        }
        Ok(())
    }

    pub fn in_grid(&self, e: ElementId) -> bool {
        e.level >= 1 && e.level <= self.levels && {
            let n = self.cells_per_side(e.level);
            e.ix < n && e.iy < n
        }
    }

    pub fn is_active(&self, e: ElementId) -> bool {
        self.in_grid(e) && self.active[e.level - 1][e.iy * self.cells_per_side(e.level) + e.ix]
    }

    pub fn is_fine_cell_active(&self, cx: usize, cy: usize) -> bool {
        cx < self.fine_cells && cy < self.fine_cells && self.fine_active[cy * self.fine_cells + cx]
    }

    /// Active elements of level ℓ in row-major order.
    pub fn active_elements(&self, level: usize) -> &[ElementId] {
        &self.active_list[level - 1]
    }

    pub fn num_active(&self, level: usize) -> usize {
        self.active_list[level - 1].len()
    }

    /// Position of `e` among the active elements of its level.
    pub fn active_index(&self, e: ElementId) -> Option<usize> {
        if !self.in_grid(e) {
            return None;
        }
        self.active_index[e.level - 1][e.iy * self.cells_per_side(e.level) + e.ix]
    }

    fn require_active(&self, e: ElementId) -> Result<()> {
        if !self.in_grid(e) {
            return Err(Error::OutOfGrid(e));
        }
        if !self.is_active(e) {
            return Err(Error::InactiveElement(e));
        }
        Ok(())
    }

    /// Lower-left corner of `e`.
    pub fn element_corner(&self, e: ElementId) -> Result<(f64, f64)> {
        self.require_active(e)?;
        let h = self.mesh_size(e.level);
        Ok((e.ix as f64 * h, e.iy as f64 * h))
    }

    /// Element of level `level` containing fine cell `(cx, cy)`.
    pub fn containing_element(&self, cx: usize, cy: usize, level: usize) -> ElementId {
        let r = self.refinement_ratio(level);
        ElementId::new(level, cx / r, cy / r)
    }

    /// Ancestor of `e` on a coarser level.
    pub fn ancestor(&self, e: ElementId, level: usize) -> ElementId {
        assert!(level <= e.level);
        let shift = e.level - level;
        ElementId::new(level, e.ix >> shift, e.iy >> shift)
    }

    pub fn children(&self, e: ElementId) -> [ElementId; 4] {
        let l = e.level + 1;
        let (x, y) = (2 * e.ix, 2 * e.iy);
        [
            ElementId::new(l, x, y),
            ElementId::new(l, x + 1, y),
            ElementId::new(l, x, y + 1),
            ElementId::new(l, x + 1, y + 1),
        ]
    }

    /// Fine cell index range `(cx0..cx1, cy0..cy1)` covered by `e`.
    pub fn fine_cells_of(&self, e: ElementId) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let r = self.refinement_ratio(e.level);
        (e.ix * r..(e.ix + 1) * r, e.iy * r..(e.iy + 1) * r)
    }

    /// Active elements touching `e` (sharing at least a vertex), including `e`.
    fn touching(&self, e: ElementId) -> impl Iterator<Item = ElementId> + '_ {
        let n = self.cells_per_side(e.level) as isize;
        (-1isize..=1).flat_map(move |dy| {
            (-1isize..=1).filter_map(move |dx| {
                let (x, y) = (e.ix as isize + dx, e.iy as isize + dy);
                if x < 0 || y < 0 || x >= n || y >= n {
                    return None;
                }
                let t = ElementId::new(e.level, x as usize, y as usize);
                self.is_active(t).then_some(t)
            })
        })
    }

    /// `N^m_ℓ(T)` restricted to active elements.
    pub fn patch(&self, e: ElementId, m: usize) -> Result<Patch> {
        self.require_active(e)?;
        let n = self.cells_per_side(e.level);
        let mut depth = vec![usize::MAX; n * n];
        depth[e.iy * n + e.ix] = 0;
        let mut queue = VecDeque::from([e]);
        while let Some(t) = queue.pop_front() {
            let d = depth[t.iy * n + t.ix];
            if d == m {
                continue;
            }
            for s in self.touching(t) {
                let k = s.iy * n + s.ix;
                if depth[k] == usize::MAX {
                    depth[k] = d + 1;
                    queue.push_back(s);
                }
            }
        }
        Ok(self.patch_from_mask(e.level, |ix, iy| depth[iy * n + ix] != usize::MAX))
    }

    /// All active elements of a level, viewed as a patch (the `m = ∞` case).
    pub fn full_patch(&self, level: usize) -> Patch {
        self.patch_from_mask(level, |_, _| true)
    }

    fn patch_from_mask(&self, level: usize, member: impl Fn(usize, usize) -> bool) -> Patch {
        let elements: Vec<ElementId> = self
            .active_elements(level)
            .iter()
            .copied()
            .filter(|t| member(t.ix, t.iy))
            .collect();
        let bbox = elements.iter().fold((usize::MAX, usize::MAX, 0, 0), |b, t| {
            (b.0.min(t.ix), b.1.min(t.iy), b.2.max(t.ix), b.3.max(t.iy))
        });
        Patch {
            level,
            elements,
            bbox,
        }
    }

    /// Whether a fine node `(nx, ny)` lies in the closure of the domain.
    pub fn node_in_domain(&self, nx: usize, ny: usize) -> bool {
        self.adjacent_fine_cells(nx, ny).any(|(cx, cy)| self.is_fine_cell_active(cx, cy))
    }

    /// Fine cells (inside the unit square) having `(nx, ny)` as a corner.
    pub fn adjacent_fine_cells(&self, nx: usize, ny: usize) -> impl Iterator<Item = (usize, usize)> {
        let n = self.fine_cells;
        [(0usize, 0usize), (1, 0), (0, 1), (1, 1)]
            .into_iter()
            .filter_map(move |(dx, dy)| {
                let (cx, cy) = (nx as isize - dx as isize, ny as isize - dy as isize);
                (cx >= 0 && cy >= 0 && (cx as usize) < n && (cy as usize) < n).then_some((cx as usize, cy as usize))
            })
    }

    /// Boundary condition on the edge separating active fine cell `(cx, cy)`
    /// from its neighbour in direction `side` (0 bottom, 1 right, 2 top,
    /// 3 left), or `None` when the neighbour is active.
    pub fn fine_edge_kind(&self, cx: usize, cy: usize, side: usize) -> Option<BoundaryKind> {
        let n = self.fine_cells as isize;
        let (dx, dy) = [(0, -1), (1, 0), (0, 1), (-1, 0)][side];
        let (x, y) = (cx as isize + dx, cy as isize + dy);
        if x < 0 || y < 0 || x >= n || y >= n {
            let b = self.boundary;
            return Some([b.bottom, b.right, b.top, b.left][side]);
        }
        if self.fine_active[(y as usize) * self.fine_cells + x as usize] {
            None
        } else {
            Some(self.boundary.hole)
        }
    }
}
