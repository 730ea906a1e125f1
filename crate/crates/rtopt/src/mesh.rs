//! Structured quadrilateral / hexahedral grids and the fields living on them.
//!
//! Node numbering is row-major lexicographic with x fastest:
//! `node(i, j, k) = (k * (ny + 1) + j) * (nx + 1) + i`, and the same rule
//! (without the `+ 1`) for elements. Element corner ordering is
//! counter-clockwise in 2D and the usual hexahedron ordering (bottom face
//! counter-clockwise, then top face) in 3D. 2D problems carry an implicit
//! unit thickness, so element "volumes" are areas.

use crate::{Error, Result};

/// Geometric tolerance used when matching grid coordinates against region
/// bounds, relative to the largest domain extent.
const REGION_TOL: f64 = 1e-9;

/// Which boundary plane of the box a region is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Low,
    High,
}

/// Axis-aligned region of the domain: optionally pinned to one boundary
/// face of the box, optionally restricted by a bounding box.
///
/// With `face: None` the region selects every node inside the box (used for
/// point loads and volumetric tags); with a face it selects boundary nodes
/// and whole boundary faces lying on that plane inside the box.
#[derive(Debug, Clone)]
pub struct Region {
    pub face: Option<(usize, Side)>,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Region {
    pub fn everywhere() -> Self {
        Region {
            face: None,
            min: [f64::NEG_INFINITY; 3],
            max: [f64::INFINITY; 3],
        }
    }

    pub fn on_face(axis: usize, side: Side) -> Self {
        Region {
            face: Some((axis, side)),
            ..Region::everywhere()
        }
    }

    pub fn boxed(min: [f64; 3], max: [f64; 3]) -> Self {
        Region { face: None, min, max }
    }

    pub fn on_face_boxed(axis: usize, side: Side, min: [f64; 3], max: [f64; 3]) -> Self {
        Region {
            face: Some((axis, side)),
            min,
            max,
        }
    }

    fn contains(&self, x: [f64; 3], tol: f64) -> bool {
        (0..3).all(|a| x[a] >= self.min[a] - tol && x[a] <= self.max[a] + tol)
    }
}

/// Named node/face set used to attach boundary conditions and loads.
#[derive(Debug, Clone)]
pub struct RegionSpec {
    pub name: String,
    pub region: Region,
}

/// One tagged boundary face: the owning element, the face nodes and the
/// face measure (edge length in 2D, area in 3D).
#[derive(Debug, Clone)]
pub struct BoundaryFace {
    pub element: usize,
    pub nodes: Vec<usize>,
    pub measure: f64,
}

/// Resolved boundary tag: node indices plus any whole boundary faces whose
/// nodes all belong to the tag.
#[derive(Debug, Clone, Default)]
pub struct BoundaryTag {
    pub nodes: Vec<usize>,
    pub faces: Vec<BoundaryFace>,
}

impl BoundaryTag {
    /// Tributary measure per node: each face contributes an equal share of
    /// its measure to each of its nodes (consistent lumping of a constant
    /// traction on multilinear faces).
    pub fn tributary(&self, n_nodes_total: usize) -> Vec<f64> {
        let mut trib = vec![0.0; n_nodes_total];
        for f in &self.faces {
            let share = f.measure / f.nodes.len() as f64;
            for &n in &f.nodes {
                trib[n] += share;
            }
        }
        trib
    }
}

/// Uniform structured grid in 2 or 3 dimensions.
#[derive(Debug, Clone)]
pub struct StructuredGrid {
    ndim: usize,
    /// Elements per axis; `dims[2] == 1` in 2D.
    dims: [usize; 3],
    /// Physical extents per axis; `lengths[2] == 1` (unit thickness) in 2D.
    lengths: [f64; 3],
    /// Element edge lengths per axis; `h[2] == 1` in 2D.
    h: [f64; 3],
    tags: Vec<(String, BoundaryTag)>,
}

impl StructuredGrid {
    pub fn ndim(&self) -> usize {
        self.ndim
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn lengths(&self) -> [f64; 3] {
        self.lengths
    }

    pub fn h(&self) -> [f64; 3] {
        self.h
    }

    /// Node counts per axis (`dims + 1`, with the third axis 1 in 2D).
    pub fn node_dims(&self) -> [usize; 3] {
        let mut nd = [1; 3];
        for a in 0..self.ndim {
            nd[a] = self.dims[a] + 1;
        }
        nd
    }

    pub fn n_elements(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn n_nodes(&self) -> usize {
        let nd = self.node_dims();
        nd[0] * nd[1] * nd[2]
    }

    /// Measure of one element (area in 2D, volume in 3D).
    pub fn element_volume(&self) -> f64 {
        self.h[0] * self.h[1] * self.h[2]
    }

    /// Measure of the whole design domain.
    pub fn domain_volume(&self) -> f64 {
        self.element_volume() * self.n_elements() as f64
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        let nd = self.node_dims();
        (k * nd[1] + j) * nd[0] + i
    }

    pub fn element_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn element_coords(&self, e: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [e % nx, (e / nx) % ny, e / (nx * ny)]
    }

    pub fn node_coords(&self, n: usize) -> [usize; 3] {
        let nd = self.node_dims();
        [n % nd[0], (n / nd[0]) % nd[1], n / (nd[0] * nd[1])]
    }

    pub fn node_position(&self, n: usize) -> [f64; 3] {
        let c = self.node_coords(n);
        let mut x = [0.0; 3];
        for a in 0..self.ndim {
            x[a] = c[a] as f64 * self.h[a];
        }
        x
    }

    /// Corner nodes of an element: CCW quad in 2D, hexahedron ordering
    /// (bottom face CCW, then top face CCW) in 3D.
    pub fn element_nodes(&self, e: usize) -> Vec<usize> {
        let [i, j, k] = self.element_coords(e);
        if self.ndim == 2 {
            vec![
                self.node_index(i, j, 0),
                self.node_index(i + 1, j, 0),
                self.node_index(i + 1, j + 1, 0),
                self.node_index(i, j + 1, 0),
            ]
        } else {
            vec![
                self.node_index(i, j, k),
                self.node_index(i + 1, j, k),
                self.node_index(i + 1, j + 1, k),
                self.node_index(i, j + 1, k),
                self.node_index(i, j, k + 1),
                self.node_index(i + 1, j, k + 1),
                self.node_index(i + 1, j + 1, k + 1),
                self.node_index(i, j + 1, k + 1),
            ]
        }
    }

    pub fn nodes_per_element(&self) -> usize {
        if self.ndim == 2 {
            4
        } else {
            8
        }
    }

    /// Face-adjacent element neighbors (up to 4 in 2D, 6 in 3D).
    pub fn element_neighbors(&self, e: usize) -> Vec<usize> {
        let [i, j, k] = self.element_coords(e);
        let mut out = Vec::with_capacity(2 * self.ndim);
        if i > 0 {
            out.push(self.element_index(i - 1, j, k));
        }
        if i + 1 < self.dims[0] {
            out.push(self.element_index(i + 1, j, k));
        }
        if j > 0 {
            out.push(self.element_index(i, j - 1, k));
        }
        if j + 1 < self.dims[1] {
            out.push(self.element_index(i, j + 1, k));
        }
        if self.ndim == 3 {
            if k > 0 {
                out.push(self.element_index(i, j, k - 1));
            }
            if k + 1 < self.dims[2] {
                out.push(self.element_index(i, j, k + 1));
            }
        }
        out
    }

    pub fn tag(&self, name: &str) -> Option<&BoundaryTag> {
        self.tags
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn tag_names(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(|(n, _)| n.as_str())
    }

    fn geom_tol(&self) -> f64 {
        REGION_TOL * self.lengths.iter().cloned().fold(0.0, f64::max)
    }

    /// Resolve a region into a boundary tag on this grid.
    pub fn resolve_region(&self, region: &Region) -> BoundaryTag {
        let tol = self.geom_tol();
        let mut node_set = vec![false; self.n_nodes()];
        for n in 0..self.n_nodes() {
            let x = self.node_position(n);
            if !region.contains(x, tol) {
                continue;
            }
            if let Some((axis, side)) = region.face {
                let target = match side {
                    Side::Low => 0.0,
                    Side::High => self.lengths[axis],
                };
                if (x[axis] - target).abs() > tol {
                    continue;
                }
            }
            node_set[n] = true;
        }
        let nodes: Vec<usize> = (0..self.n_nodes()).filter(|&n| node_set[n]).collect();
        let mut faces = Vec::new();
        if let Some((axis, side)) = region.face {
            if axis < self.ndim {
                for e in 0..self.n_elements() {
                    let c = self.element_coords(e);
                    let on_boundary = match side {
                        Side::Low => c[axis] == 0,
                        Side::High => c[axis] + 1 == self.dims[axis],
                    };
                    if !on_boundary {
                        continue;
                    }
                    let face_nodes: Vec<usize> = self
                        .element_nodes(e)
                        .into_iter()
                        .filter(|&n| {
                            let x = self.node_position(n);
                            let target = match side {
                                Side::Low => 0.0,
                                Side::High => self.lengths[axis],
                            };
                            (x[axis] - target).abs() <= tol
                        })
                        .collect();
                    if !face_nodes.iter().all(|&n| node_set[n]) {
                        continue;
                    }
                    let measure: f64 = (0..self.ndim)
                        .filter(|&a| a != axis)
                        .map(|a| self.h[a])
                        .product();
                    faces.push(BoundaryFace {
                        element: e,
                        nodes: face_nodes,
                        measure,
                    });
                }
            }
        }
        BoundaryTag { nodes, faces }
    }
}

/// Build a grid and resolve the named boundary regions into tags.
pub fn build_grid(
    dims: &[usize],
    lengths: &[f64],
    boundary_specs: &[RegionSpec],
) -> Result<StructuredGrid> {
    let ndim = dims.len();
    if ndim != 2 && ndim != 3 {
        return Err(Error::InvalidGrid(format!(
            "expected 2 or 3 dimensions, got {ndim}"
        )));
    }
    if lengths.len() != ndim {
        return Err(Error::InvalidGrid(format!(
            "dims has {ndim} axes but lengths has {}",
            lengths.len()
        )));
    }
    let mut d = [1usize; 3];
    let mut l = [1.0f64; 3];
    let mut h = [1.0f64; 3];
    for a in 0..ndim {
        if dims[a] == 0 {
            return Err(Error::InvalidGrid(format!("dims[{a}] must be >= 1")));
        }
        if !(lengths[a] > 0.0) || !lengths[a].is_finite() {
            return Err(Error::InvalidGrid(format!(
                "lengths[{a}] must be positive and finite, got {}",
                lengths[a]
            )));
        }
        d[a] = dims[a];
        l[a] = lengths[a];
        h[a] = lengths[a] / dims[a] as f64;
    }
    let mut grid = StructuredGrid {
        ndim,
        dims: d,
        lengths: l,
        h,
        tags: Vec::new(),
    };
    let mut tags = Vec::with_capacity(boundary_specs.len());
    for spec in boundary_specs {
        if tags.iter().any(|(n, _): &(String, BoundaryTag)| *n == spec.name) {
            return Err(Error::InvalidGrid(format!(
                "duplicate boundary tag '{}'",
                spec.name
            )));
        }
        tags.push((spec.name.clone(), grid.resolve_region(&spec.region)));
    }
    grid.tags = tags;
    Ok(grid)
}

/// Where the values of a scalar field live.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldLocation {
    Nodal,
    Element,
}

/// Nodal or per-element scalar field on a structured grid.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub location: FieldLocation,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn nodal(grid: &StructuredGrid, values: Vec<f64>) -> Result<Self> {
        Self::checked(grid, FieldLocation::Nodal, values)
    }

    pub fn element(grid: &StructuredGrid, values: Vec<f64>) -> Result<Self> {
        Self::checked(grid, FieldLocation::Element, values)
    }

    pub fn constant(grid: &StructuredGrid, location: FieldLocation, value: f64) -> Self {
        let n = match location {
            FieldLocation::Nodal => grid.n_nodes(),
            FieldLocation::Element => grid.n_elements(),
        };
        ScalarField {
            location,
            values: vec![value; n],
        }
    }

    fn checked(grid: &StructuredGrid, location: FieldLocation, values: Vec<f64>) -> Result<Self> {
        let expect = match location {
            FieldLocation::Nodal => grid.n_nodes(),
            FieldLocation::Element => grid.n_elements(),
        };
        if values.len() != expect {
            return Err(Error::InvalidField(format!(
                "field has {} values, expected {expect}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite value {v}")));
        }
        Ok(ScalarField { location, values })
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Per-node average of the adjacent element values. On a uniform grid the
/// volume weights are equal, so this is the arithmetic mean over the 1, 2,
/// 4 or 8 elements touching the node.
pub fn element_to_nodal(grid: &StructuredGrid, f: &ScalarField) -> Result<ScalarField> {
    if f.location != FieldLocation::Element {
        return Err(Error::InvalidField(
            "element_to_nodal expects an element field".into(),
        ));
    }
    let mut sums = vec![0.0; grid.n_nodes()];
    let mut counts = vec![0u32; grid.n_nodes()];
    for e in 0..grid.n_elements() {
        let v = f.values[e];
        for n in grid.element_nodes(e) {
            sums[n] += v;
            counts[n] += 1;
        }
    }
    for (s, c) in sums.iter_mut().zip(&counts) {
        *s /= *c as f64;
    }
    ScalarField::nodal(grid, sums)
}

/// Per-element mean of the element's corner node values; equals the value
/// at the element centroid for multilinear interpolation.
pub fn nodal_to_element(grid: &StructuredGrid, f: &ScalarField) -> Result<ScalarField> {
    if f.location != FieldLocation::Nodal {
        return Err(Error::InvalidField(
            "nodal_to_element expects a nodal field".into(),
        ));
    }
    let nen = grid.nodes_per_element() as f64;
    let values = (0..grid.n_elements())
        .map(|e| grid.element_nodes(e).iter().map(|&n| f.values[n]).sum::<f64>() / nen)
        .collect();
    ScalarField::element(grid, values)
}

/// Two-valued design field: `chi[e]` is exactly `1` (hard phase) or `beta`
/// (soft phase).
#[derive(Debug, Clone)]
pub struct DesignField {
    chi: Vec<f64>,
    beta: f64,
}

impl DesignField {
    /// All-hard design.
    pub fn full_hard(grid: &StructuredGrid, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::InvalidField(format!(
                "relaxation factor beta must lie in (0,1), got {beta}"
            )));
        }
        Ok(DesignField {
            chi: vec![1.0; grid.n_elements()],
            beta,
        })
    }

    pub fn from_hard_mask(grid: &StructuredGrid, beta: f64, hard: &[bool]) -> Result<Self> {
        let mut d = Self::full_hard(grid, beta)?;
        if hard.len() != d.chi.len() {
            return Err(Error::InvalidField("mask length mismatch".into()));
        }
        for (e, &is_hard) in hard.iter().enumerate() {
            if !is_hard {
                d.chi[e] = beta;
            }
        }
        Ok(d)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn chi(&self) -> &[f64] {
        &self.chi
    }

    pub fn is_hard(&self, e: usize) -> bool {
        self.chi[e] == 1.0
    }

    pub fn set_hard(&mut self, e: usize) {
        self.chi[e] = 1.0;
    }

    pub fn set_soft(&mut self, e: usize) {
        self.chi[e] = self.beta;
    }

    pub fn n_hard(&self) -> usize {
        self.chi.iter().filter(|&&c| c == 1.0).count()
    }

    /// `L2(Omega)` distance between two designs:
    /// `(sum_e (chi_a[e] - chi_b[e])^2 |Omega_e|)^(1/2)`.
    pub fn l2_distance(&self, other: &DesignField, grid: &StructuredGrid) -> f64 {
        let ve = grid.element_volume();
        let s: f64 = self
            .chi
            .iter()
            .zip(&other.chi)
            .map(|(a, b)| (a - b) * (a - b) * ve)
            .sum();
        s.sqrt()
    }

    /// Bit-pattern hash of the chi array (used for determinism checks).
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &c in &self.chi {
            h ^= c.to_bits();
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2(nx: usize, ny: usize, lx: f64, ly: f64) -> StructuredGrid {
        build_grid(&[nx, ny], &[lx, ly], &[]).unwrap()
    }

    #[test]
    fn smallest_grid() {
        let g = grid2(1, 1, 1.0, 1.0);
        assert_eq!(g.n_elements(), 1);
        assert_eq!(g.n_nodes(), 4);
    }

    #[test]
    fn paper_scale_3d_grid() {
        let g = build_grid(&[120, 60, 30], &[2.0, 1.0, 0.5], &[]).unwrap();
        assert_eq!(g.n_elements(), 216_000);
        for a in 0..3 {
            assert!((g.h()[a] - 1.0 / 60.0).abs() < 1e-15);
        }
    }

    #[test]
    fn golden_node_numbering_2x2() {
        let g = grid2(2, 2, 1.0, 1.0);
        assert_eq!(g.element_nodes(0), vec![0, 1, 4, 3]);
        assert_eq!(g.element_nodes(3), vec![4, 5, 8, 7]);
    }

    #[test]
    fn zero_dimension_is_error() {
        assert!(build_grid(&[0, 4], &[1.0, 1.0], &[]).is_err());
        assert!(build_grid(&[4, 4], &[1.0, -1.0], &[]).is_err());
    }

    #[test]
    fn element_to_nodal_constant_and_symmetry() {
        let g = grid2(2, 1, 2.0, 1.0);
        let c = ScalarField::constant(&g, FieldLocation::Element, 3.25);
        let n = element_to_nodal(&g, &c).unwrap();
        assert!(n.values.iter().all(|&v| v == 3.25));

        let f = ScalarField::element(&g, vec![0.0, 1.0]).unwrap();
        let n = element_to_nodal(&g, &f).unwrap();
        // Shared-edge nodes are node column i = 1.
        assert_eq!(n.values[1], 0.5);
        assert_eq!(n.values[4], 0.5);
        assert_eq!(n.values[0], 0.0);
        assert_eq!(n.values[2], 1.0);
    }

    #[test]
    fn element_to_nodal_center_average() {
        let g = grid2(2, 2, 1.0, 1.0);
        let f = ScalarField::element(&g, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let n = element_to_nodal(&g, &f).unwrap();
        // Center node (1,1) has index 4 and touches all four elements.
        assert_eq!(n.values[4], 2.5);
    }

    #[test]
    fn nodal_to_element_basics() {
        let g = grid2(1, 1, 1.0, 1.0);
        let c = ScalarField::constant(&g, FieldLocation::Nodal, -2.0);
        assert!(nodal_to_element(&g, &c).unwrap().values.iter().all(|&v| v == -2.0));
        // CCW corners: (0,0), (1,0), (1,1), (0,1); a field linear in y.
        let f = ScalarField::nodal(&g, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(nodal_to_element(&g, &f).unwrap().values[0], 0.5);
    }

    #[test]
    fn linear_field_roundtrip_interior() {
        let g = grid2(6, 4, 3.0, 2.0);
        let hx = g.h()[0];
        let vals: Vec<f64> = (0..g.n_elements())
            .map(|e| (g.element_coords(e)[0] as f64 + 0.5) * hx)
            .collect();
        let f = ScalarField::element(&g, vals.clone()).unwrap();
        let back = nodal_to_element(&g, &element_to_nodal(&g, &f).unwrap()).unwrap();
        for e in 0..g.n_elements() {
            let [i, j, _] = g.element_coords(e);
            if i > 0 && i < 5 && j > 0 && j < 3 {
                assert!((back.values[e] - vals[e]).abs() < 1e-13, "element {e}");
            }
        }
    }

    #[test]
    fn volumes_sum_to_domain() {
        let g = build_grid(&[7, 3, 2], &[1.4, 0.9, 0.31], &[]).unwrap();
        let total: f64 = (0..g.n_elements()).map(|_| g.element_volume()).sum();
        assert!((total - 1.4 * 0.9 * 0.31).abs() < 1e-12 * g.domain_volume());
        assert!((g.domain_volume() - total).abs() < 1e-12 * total);
    }

    #[test]
    fn boundary_tags_resolve_and_stay_disjoint() {
        let g = build_grid(
            &[4, 2],
            &[2.0, 1.0],
            &[
                RegionSpec {
                    name: "clamp".into(),
                    region: Region::on_face(0, Side::Low),
                },
                RegionSpec {
                    name: "tip".into(),
                    region: Region::on_face_boxed(
                        0,
                        Side::High,
                        [0.0, 0.0, f64::NEG_INFINITY],
                        [2.0, 0.5, f64::INFINITY],
                    ),
                },
            ],
        )
        .unwrap();
        let clamp = g.tag("clamp").unwrap();
        assert_eq!(clamp.nodes.len(), 3);
        assert_eq!(clamp.faces.len(), 2);
        let tip = g.tag("tip").unwrap();
        assert_eq!(tip.nodes.len(), 2);
        assert_eq!(tip.faces.len(), 1);
        assert!((tip.faces[0].measure - 0.5).abs() < 1e-15);
        assert!(clamp.nodes.iter().all(|n| !tip.nodes.contains(n)));
        // Tributary lumping: interior boundary node gets a full face share.
        let trib = clamp.tributary(g.n_nodes());
        assert!((trib[clamp.nodes[1]] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn design_field_two_valued() {
        let g = grid2(3, 3, 1.0, 1.0);
        let beta = 0.063_095_734_448_019_32_f64;
        let mut d = DesignField::full_hard(&g, beta).unwrap();
        d.set_soft(4);
        assert!(d.chi().iter().all(|&c| c == 1.0 || c == beta));
        assert_eq!(d.n_hard(), 8);
        let d2 = d.clone();
        assert_eq!(d.l2_distance(&d2, &g), 0.0);
        assert_eq!(d.content_hash(), d2.content_hash());
    }
}
