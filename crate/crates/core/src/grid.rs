//! Rectangular lattices over interval, rectangle and disk domains.
//!
//! Nodes live on a uniform lattice including the bounding box edges. The
//! inside mask marks strict domain membership; boundary nodes carry analytic
//! outward unit normals taken from the domain description rather than from
//! the lattice, so the observed boundary portion is free of staircase
//! artifacts.

use crate::error::{Error, Result};

pub type Point = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Domain {
    Interval { a: f64, b: f64 },
    Rectangle { lo: [f64; 2], hi: [f64; 2] },
    Disk { center: [f64; 2], radius: f64 },
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            _ => 2,
        }
    }

    /// Strict interior membership.
    pub fn contains(&self, p: Point) -> bool {
        match *self {
            Domain::Interval { a, b } => p[0] > a && p[0] < b,
            Domain::Rectangle { lo, hi } => {
                p[0] > lo[0] && p[0] < hi[0] && p[1] > lo[1] && p[1] < hi[1]
            }
            Domain::Disk { center, radius } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                dx * dx + dy * dy < radius * radius
            }
        }
    }

    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        match *self {
            Domain::Interval { a, b } => ([a, 0.0], [b, 0.0]),
            Domain::Rectangle { lo, hi } => (lo, hi),
            Domain::Disk { center, radius } => (
                [center[0] - radius, center[1] - radius],
                [center[0] + radius, center[1] + radius],
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundaryNode {
    pub pos: Point,
    pub normal: Point,
}

#[derive(Debug, Clone)]
pub struct Grid {
    pub dim: usize,
    pub domain: Domain,
    /// Nodes per axis; `shape[1] == 1` in one dimension.
    pub shape: [usize; 2],
    pub spacing: [f64; 2],
    pub origin: [f64; 2],
    pub inside: Vec<bool>,
    pub boundary: Vec<BoundaryNode>,
}

impl Grid {
    pub fn interval(a: f64, b: f64, n: usize) -> Grid {
        assert!(n >= 3 && b > a);
        let h = (b - a) / (n - 1) as f64;
        let inside = (0..n).map(|i| i > 0 && i < n - 1).collect();
        let boundary = vec![
            BoundaryNode { pos: [a, 0.0], normal: [-1.0, 0.0] },
            BoundaryNode { pos: [b, 0.0], normal: [1.0, 0.0] },
        ];
        Grid {
            dim: 1,
            domain: Domain::Interval { a, b },
            shape: [n, 1],
            spacing: [h, 1.0],
            origin: [a, 0.0],
            inside,
            boundary,
        }
    }

    pub fn rectangle(lo: [f64; 2], hi: [f64; 2], shape: [usize; 2]) -> Grid {
        assert!(shape[0] >= 3 && shape[1] >= 3);
        let h = [
            (hi[0] - lo[0]) / (shape[0] - 1) as f64,
            (hi[1] - lo[1]) / (shape[1] - 1) as f64,
        ];
        let mut inside = vec![false; shape[0] * shape[1]];
        let mut boundary = Vec::new();
        for iy in 0..shape[1] {
            for ix in 0..shape[0] {
                let edge_x = ix == 0 || ix == shape[0] - 1;
                let edge_y = iy == 0 || iy == shape[1] - 1;
                let pos = [lo[0] + ix as f64 * h[0], lo[1] + iy as f64 * h[1]];
                if !edge_x && !edge_y {
                    inside[iy * shape[0] + ix] = true;
                } else if edge_x ^ edge_y {
                    // corners are skipped: no unique outward normal there
                    let normal = if edge_x {
                        [if ix == 0 { -1.0 } else { 1.0 }, 0.0]
                    } else {
                        [0.0, if iy == 0 { -1.0 } else { 1.0 }]
                    };
                    boundary.push(BoundaryNode { pos, normal });
                }
            }
        }
        Grid {
            dim: 2,
            domain: Domain::Rectangle { lo, hi },
            shape,
            spacing: h,
            origin: lo,
            inside,
            boundary,
        }
    }

    /// Lattice over the bounding square; boundary nodes are uniform circle
    /// samples with radial normals, spaced comparably to the lattice.
    pub fn disk(center: [f64; 2], radius: f64, n: usize) -> Grid {
        assert!(n >= 3 && radius > 0.0);
        let lo = [center[0] - radius, center[1] - radius];
        let h = 2.0 * radius / (n - 1) as f64;
        let domain = Domain::Disk { center, radius };
        let mut inside = vec![false; n * n];
        for iy in 0..n {
            for ix in 0..n {
                let pos = [lo[0] + ix as f64 * h, lo[1] + iy as f64 * h];
                inside[iy * n + ix] = domain.contains(pos);
            }
        }
        let m = ((2.0 * std::f64::consts::PI * radius / h).ceil() as usize).max(16);
        let boundary = (0..m)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / m as f64;
                let normal = [th.cos(), th.sin()];
                BoundaryNode {
                    pos: [center[0] + radius * normal[0], center[1] + radius * normal[1]],
                    normal,
                }
            })
            .collect();
        Grid {
            dim: 2,
            domain,
            shape: [n, n],
            spacing: [h, h],
            origin: lo,
            inside,
            boundary,
        }
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    #[inline]
    pub fn node_pos(&self, idx: usize) -> Point {
        let ix = idx % self.shape[0];
        let iy = idx / self.shape[0];
        [
            self.origin[0] + ix as f64 * self.spacing[0],
            self.origin[1] + iy as f64 * self.spacing[1],
        ]
    }

    /// Product of cell sizes over the active axes.
    pub fn cell_volume(&self) -> f64 {
        if self.dim == 1 {
            self.spacing[0]
        } else {
            self.spacing[0] * self.spacing[1]
        }
    }

    pub fn min_spacing(&self) -> f64 {
        if self.dim == 1 {
            self.spacing[0]
        } else {
            self.spacing[0].min(self.spacing[1])
        }
    }

    pub fn inside_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.inside.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn n_inside(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    /// Structural invariants: positive spacings, unit normals, every boundary
    /// node within one cell of an inside node.
    pub fn validate(&self) -> Result<()> {
        for axis in 0..self.dim {
            if !(self.spacing[axis] > 0.0) {
                return Err(Error::InvalidSpacing { axis, spacing: self.spacing[axis] });
            }
        }
        let reach = self.spacing[0].max(self.spacing[1.min(self.dim - 1)]) * (1.0 + 1e-9);
        for bn in &self.boundary {
            let len = (bn.normal[0] * bn.normal[0] + bn.normal[1] * bn.normal[1]).sqrt();
            assert!(
                (len - 1.0).abs() <= 1e-12,
                "boundary normal not unit: |nu| = {len}"
            );
            let adjacent = self.inside_indices().any(|i| {
                let p = self.node_pos(i);
                let dx = (p[0] - bn.pos[0]).abs();
                let dy = (p[1] - bn.pos[1]).abs();
                dx <= reach && dy <= reach
            });
            assert!(adjacent, "boundary node at {:?} has no inside neighbor", bn.pos);
        }
        Ok(())
    }
}

/// Boolean mask over lattice nodes (true only at inside nodes).
pub type SpatialMask = Vec<bool>;

pub fn mask_count(mask: &SpatialMask) -> usize {
    mask.iter().filter(|&&b| b).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_grid_basics() {
        let g = Grid::interval(0.0, 1.0, 5);
        assert_eq!(g.n_nodes(), 5);
        assert_eq!(g.n_inside(), 3);
        assert_eq!(g.boundary.len(), 2);
        assert!((g.spacing[0] - 0.25).abs() < 1e-15);
        g.validate().unwrap();
    }

    #[test]
    fn rectangle_skips_corners() {
        let g = Grid::rectangle([0.0, 0.0], [1.0, 1.0], [5, 4]);
        // 2*(5-2) + 2*(4-2) edge nodes, corners dropped
        assert_eq!(g.boundary.len(), 2 * 3 + 2 * 2);
        assert_eq!(g.n_inside(), 3 * 2);
        g.validate().unwrap();
    }

    #[test]
    fn disk_inside_and_normals() {
        let g = Grid::disk([0.0, 0.0], 1.0, 21);
        assert!(g.n_inside() > 0);
        assert!(g.inside[(10) * 21 + 10]); // center node
        assert!(!g.inside[0]); // bounding-box corner
        g.validate().unwrap();
        for bn in &g.boundary {
            let r = (bn.pos[0] * bn.pos[0] + bn.pos[1] * bn.pos[1]).sqrt();
            assert!((r - 1.0).abs() < 1e-12);
        }
    }
}
