//! Discrete space-time regions: boolean indicators over a product of time
//! axes and the spatial lattice, with quadrature weights for measures.
//!
//! Layout: `mask[((it * ns + is) * n_nodes) + node]` with the s-axis absent
//! for (t, x) regions. Regions are built by materializing a predicate, so the
//! same defining inequality can be sampled on a reporting grid (cell
//! midpoints) or on a solver grid (trapezoid nodes).

use crate::error::{Error, Result};
use crate::grid::{Grid, Point};
use std::io::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub coords: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Axis {
    /// n cell midpoints over (lo, hi), midpoint-rule weights.
    pub fn cells(lo: f64, hi: f64, n: usize) -> Axis {
        let h = (hi - lo) / n as f64;
        Axis {
            coords: (0..n).map(|i| lo + (i as f64 + 0.5) * h).collect(),
            weights: vec![h; n],
        }
    }

    /// n nodes over [lo, hi] including the ends, trapezoid weights.
    pub fn nodes(lo: f64, hi: f64, n: usize) -> Axis {
        assert!(n >= 2);
        let h = (hi - lo) / (n - 1) as f64;
        let mut weights = vec![h; n];
        weights[0] = 0.5 * h;
        weights[n - 1] = 0.5 * h;
        Axis {
            coords: (0..n).map(|i| lo + i as f64 * h).collect(),
            weights,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpaceTimeRegion {
    /// [t] or [t, s].
    pub taxes: Vec<Axis>,
    pub n_nodes: usize,
    pub spatial_dim: usize,
    /// Cell volume attached to each lattice node.
    pub node_weight: f64,
    pub mask: Vec<bool>,
    measure: f64,
}

impl SpaceTimeRegion {
    /// Evaluate `pred(t_like, node_index, node_pos)` at every product point.
    /// `t_like` is `[t]` or `[t, s]`.
    pub fn materialize<F>(taxes: Vec<Axis>, g: &Grid, pred: F) -> SpaceTimeRegion
    where
        F: Fn(&[f64], usize, Point) -> bool + Sync,
    {
        let n_nodes = g.n_nodes();
        let positions: Vec<Point> = (0..n_nodes).map(|i| g.node_pos(i)).collect();
        let inside = &g.inside;
        let nt = taxes[0].coords.len();
        let ns = taxes.get(1).map_or(1, |a| a.coords.len());
        let mut mask = vec![false; nt * ns * n_nodes];
        for it in 0..nt {
            let t = taxes[0].coords[it];
            for is in 0..ns {
                let base = (it * ns + is) * n_nodes;
                let tbuf = if taxes.len() == 2 {
                    [t, taxes[1].coords[is]]
                } else {
                    [t, 0.0]
                };
                let tl = &tbuf[..taxes.len()];
                for node in 0..n_nodes {
                    if inside[node] {
                        mask[base + node] = pred(tl, node, positions[node]);
                    }
                }
            }
        }
        let mut r = SpaceTimeRegion {
            taxes,
            n_nodes,
            spatial_dim: g.dim,
            node_weight: g.cell_volume(),
            mask,
            measure: 0.0,
        };
        r.measure = r.compute_measure();
        r
    }

    pub fn empty_like(&self) -> SpaceTimeRegion {
        let mut r = self.clone();
        r.mask.iter_mut().for_each(|b| *b = false);
        r.measure = 0.0;
        r
    }

    fn compute_measure(&self) -> f64 {
        let nt = self.taxes[0].coords.len();
        let ns = self.taxes.get(1).map_or(1, |a| a.coords.len());
        let mut total = 0.0;
        for it in 0..nt {
            let wt = self.taxes[0].weights[it];
            for is in 0..ns {
                let ws = self.taxes.get(1).map_or(1.0, |a| a.weights[is]);
                let base = (it * ns + is) * self.n_nodes;
                let count = self.mask[base..base + self.n_nodes]
                    .iter()
                    .filter(|&&b| b)
                    .count();
                total += wt * ws * count as f64 * self.node_weight;
            }
        }
        total
    }

    pub fn measure(&self) -> f64 {
        self.measure
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    fn check_compatible(&self, other: &SpaceTimeRegion) -> Result<()> {
        if self.n_nodes != other.n_nodes
            || self.taxes.len() != other.taxes.len()
            || self
                .taxes
                .iter()
                .zip(&other.taxes)
                .any(|(a, b)| a.coords != b.coords)
        {
            return Err(Error::GridMismatch(
                "regions live on different product grids".into(),
            ));
        }
        Ok(())
    }

    pub fn union(&self, other: &SpaceTimeRegion) -> Result<SpaceTimeRegion> {
        self.check_compatible(other)?;
        let mut r = self.clone();
        for (a, &b) in r.mask.iter_mut().zip(&other.mask) {
            *a |= b;
        }
        r.measure = r.compute_measure();
        Ok(r)
    }

    pub fn intersect(&self, other: &SpaceTimeRegion) -> Result<SpaceTimeRegion> {
        self.check_compatible(other)?;
        let mut r = self.clone();
        for (a, &b) in r.mask.iter_mut().zip(&other.mask) {
            *a &= b;
        }
        r.measure = r.compute_measure();
        Ok(r)
    }

    /// Node-exact containment; on failure reports the first offending flat index.
    pub fn subset_of(&self, other: &SpaceTimeRegion) -> Result<std::result::Result<(), usize>> {
        self.check_compatible(other)?;
        for (i, (&a, &b)) in self.mask.iter().zip(&other.mask).enumerate() {
            if a && !b {
                return Ok(Err(i));
            }
        }
        Ok(Ok(()))
    }

    pub fn is_subset_of(&self, other: &SpaceTimeRegion) -> bool {
        matches!(self.subset_of(other), Ok(Ok(())))
    }

    /// Dilate by one step along every axis (time axes and lattice axes).
    pub fn dilate(&self, grid_shape: [usize; 2]) -> SpaceTimeRegion {
        let nt = self.taxes[0].coords.len();
        let ns = self.taxes.get(1).map_or(1, |a| a.coords.len());
        let (nx, ny) = (grid_shape[0], grid_shape[1]);
        let idx = |it: usize, is: usize, node: usize| (it * ns + is) * self.n_nodes + node;
        let mut out = self.mask.clone();
        for it in 0..nt {
            for is in 0..ns {
                for node in 0..self.n_nodes {
                    if self.mask[idx(it, is, node)] {
                        continue;
                    }
                    let (ix, iy) = (node % nx, node / nx);
                    let mut near = false;
                    let mut probe = |jt: isize, js: isize, jx: isize, jy: isize| {
                        if jt >= 0
                            && (jt as usize) < nt
                            && js >= 0
                            && (js as usize) < ns
                            && jx >= 0
                            && (jx as usize) < nx
                            && jy >= 0
                            && (jy as usize) < ny
                        {
                            near |= self.mask
                                [idx(jt as usize, js as usize, jy as usize * nx + jx as usize)];
                        }
                    };
                    let (it_, is_, ix_, iy_) =
                        (it as isize, is as isize, ix as isize, iy as isize);
                    probe(it_ - 1, is_, ix_, iy_);
                    probe(it_ + 1, is_, ix_, iy_);
                    if ns > 1 {
                        probe(it_, is_ - 1, ix_, iy_);
                        probe(it_, is_ + 1, ix_, iy_);
                    }
                    probe(it_, is_, ix_ - 1, iy_);
                    probe(it_, is_, ix_ + 1, iy_);
                    if ny > 1 {
                        probe(it_, is_, ix_, iy_ - 1);
                        probe(it_, is_, ix_, iy_ + 1);
                    }
                    out[idx(it, is, node)] = near;
                }
            }
        }
        let mut r = self.clone();
        r.mask = out;
        r.measure = r.compute_measure();
        r
    }

    /// Binary portable graymap for (t, x) regions over a one-dimensional
    /// lattice: rows = time, columns = x, 255 inside the region.
    pub fn write_pgm<W: Write>(&self, mut w: W, grid_shape: [usize; 2]) -> Result<()> {
        assert!(self.taxes.len() == 1 && self.spatial_dim == 1);
        let nt = self.taxes[0].coords.len();
        let nx = grid_shape[0];
        let t = &self.taxes[0].coords;
        writeln!(w, "P5")?;
        writeln!(
            w,
            "# t:[{:.6},{:.6}] nt:{} x-nodes:{} node-weight:{:.6e}",
            t[0],
            t[nt - 1],
            nt,
            nx,
            self.node_weight
        )?;
        writeln!(w, "{} {}", nx, nt)?;
        writeln!(w, "255")?;
        let mut row = vec![0u8; nx];
        for it in 0..nt {
            let base = it * self.n_nodes;
            for (ix, px) in row.iter_mut().enumerate() {
                *px = if self.mask[base + ix] { 255 } else { 0 };
            }
            w.write_all(&row)?;
        }
        Ok(())
    }

    /// Active nodes as CSV rows `t[,s],x[,y]`.
    pub fn write_csv<W: Write>(&self, mut w: W, g: &Grid) -> Result<()> {
        let two_t = self.taxes.len() == 2;
        let head = match (two_t, self.spatial_dim) {
            (false, 1) => "t,x",
            (false, _) => "t,x,y",
            (true, 1) => "t,s,x",
            (true, _) => "t,s,x,y",
        };
        writeln!(w, "# region nodes schema v1")?;
        writeln!(w, "{head}")?;
        let nt = self.taxes[0].coords.len();
        let ns = self.taxes.get(1).map_or(1, |a| a.coords.len());
        for it in 0..nt {
            for is in 0..ns {
                let base = (it * ns + is) * self.n_nodes;
                for node in 0..self.n_nodes {
                    if !self.mask[base + node] {
                        continue;
                    }
                    let p = g.node_pos(node);
                    let t = self.taxes[0].coords[it];
                    match (two_t, self.spatial_dim) {
                        (false, 1) => writeln!(w, "{:.16e},{:.16e}", t, p[0])?,
                        (false, _) => writeln!(w, "{:.16e},{:.16e},{:.16e}", t, p[0], p[1])?,
                        (true, 1) => writeln!(
                            w,
                            "{:.16e},{:.16e},{:.16e}",
                            t, self.taxes[1].coords[is], p[0]
                        )?,
                        (true, _) => writeln!(
                            w,
                            "{:.16e},{:.16e},{:.16e},{:.16e}",
                            t, self.taxes[1].coords[is], p[0], p[1]
                        )?,
                    }
                }
            }
        }
        Ok(())
    }
}
