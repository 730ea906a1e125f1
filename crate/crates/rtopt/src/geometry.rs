//! Iso-level geometry extraction on structured grids.
//!
//! Each hexahedral cell is tessellated into 6 pyramids (one per face, apex
//! at the cell center) and each pyramid into 4 tetrahedra by inserting a
//! face-center node; center and face values are interpolated as corner
//! means, which equals the multilinear value there. Each tetrahedron is
//! processed with the ambiguity-free 4-case sign table, yielding sub-cell
//! phase volumes and interface patches. The 2D analog splits each quad into
//! 4 triangles around the cell center.
//!
//! Tie-break: a nodal value of exactly zero (after iso shift) counts as
//! positive, i.e. hard phase.
//!
//! The per-tetrahedron volume assignment is written so that negating the
//! field swaps the plus/minus volumes bit-exactly: the partial volume is
//! always computed on a side chosen by vertex index (not by sign), and edge
//! interpolation parameters are invariant under negation.

use rayon::prelude::*;

use crate::mesh::{FieldLocation, ScalarField, StructuredGrid};
use crate::{Error, Result};

/// Sub-element phase volumes of an interface-cut element.
#[derive(Debug, Clone, Copy)]
pub struct CutElementData {
    pub element: usize,
    pub vol_plus: f64,
    pub vol_minus: f64,
}

/// Phase classification of one element from its corner values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemPhase {
    Hard,
    Soft,
    Cut,
}

/// Global topology measures and the interface mesh at one design state.
#[derive(Debug, Clone)]
pub struct TopologySnapshot {
    pub vol_plus: f64,
    pub vol_minus: f64,
    /// Interface measure: triangle area in 3D, segment length in 2D.
    pub interface_measure: f64,
    /// Interface triangles (3D), wound so the right-hand normal points
    /// toward the hard phase.
    pub triangles: Vec<[[f64; 3]; 3]>,
    /// Interface segments (2D), oriented so the +90 degree rotation of the
    /// segment direction points toward the hard phase.
    pub segments: Vec<[[f64; 3]; 2]>,
    pub phases: Vec<ElemPhase>,
}

/// Classification result: per-element phases, cut-element volume data and
/// the aggregated snapshot.
#[derive(Debug, Clone)]
pub struct Classification {
    pub cuts: Vec<Option<CutElementData>>,
    pub snapshot: TopologySnapshot,
}

impl Classification {
    pub fn phases(&self) -> &[ElemPhase] {
        &self.snapshot.phases
    }
}

/// One tetrahedron of the cell tessellation with its corner values.
#[derive(Debug, Clone, Copy)]
pub struct TetCell {
    pub x: [[f64; 3]; 4],
    pub psi: [f64; 4],
}

/// One triangle of the 2D cell tessellation with its corner values.
#[derive(Debug, Clone, Copy)]
pub struct TriCell {
    pub x: [[f64; 3]; 3],
    pub psi: [f64; 3],
}

/// Hexahedron corner offsets in the element node ordering (bottom face CCW,
/// then top face CCW).
const HEX_CORNERS: [[f64; 3]; 8] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 1.0],
    [1.0, 1.0, 1.0],
    [0.0, 1.0, 1.0],
];

/// Face corner cycles (perimeter order).
const HEX_FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1], // z low
    [4, 5, 6, 7], // z high
    [0, 1, 5, 4], // y low
    [3, 7, 6, 2], // y high
    [0, 4, 7, 3], // x low
    [1, 2, 6, 5], // x high
];

const QUAD_CORNERS: [[f64; 3]; 4] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
];

/// Tessellate a hexahedral cell into its 24 tetrahedra.
pub fn tessellate_hex(corner_psi: &[f64; 8], origin: [f64; 3], h: [f64; 3]) -> Vec<TetCell> {
    let corner =
        |c: [f64; 3]| -> [f64; 3] { [origin[0] + c[0] * h[0], origin[1] + c[1] * h[1], origin[2] + c[2] * h[2]] };
    let psi_c = corner_psi.iter().sum::<f64>() / 8.0;
    let center = corner([0.5, 0.5, 0.5]);
    let mut tets = Vec::with_capacity(24);
    for face in &HEX_FACES {
        let psi_f = face.iter().map(|&v| corner_psi[v]).sum::<f64>() / 4.0;
        let mut fc = [0.0; 3];
        for a in 0..3 {
            fc[a] = face
                .iter()
                .map(|&v| corner(HEX_CORNERS[v])[a])
                .sum::<f64>()
                / 4.0;
        }
        for e in 0..4 {
            let va = face[e];
            let vb = face[(e + 1) % 4];
            tets.push(TetCell {
                x: [center, fc, corner(HEX_CORNERS[va]), corner(HEX_CORNERS[vb])],
                psi: [psi_c, psi_f, corner_psi[va], corner_psi[vb]],
            });
        }
    }
    tets
}

/// Tessellate a quadrilateral cell into its 4 triangles.
pub fn tessellate_quad(corner_psi: &[f64; 4], origin: [f64; 3], h: [f64; 3]) -> Vec<TriCell> {
    let corner =
        |c: [f64; 3]| -> [f64; 3] { [origin[0] + c[0] * h[0], origin[1] + c[1] * h[1], 0.0] };
    let psi_c = corner_psi.iter().sum::<f64>() / 4.0;
    let center = corner([0.5, 0.5, 0.0]);
    (0..4)
        .map(|e| {
            let va = e;
            let vb = (e + 1) % 4;
            TriCell {
                x: [center, corner(QUAD_CORNERS[va]), corner(QUAD_CORNERS[vb])],
                psi: [psi_c, corner_psi[va], corner_psi[vb]],
            }
        })
        .collect()
}

#[inline]
fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Unsigned tetrahedron volume.
pub fn tet_volume(x: &[[f64; 3]; 4]) -> f64 {
    let a = sub3(x[1], x[0]);
    let b = sub3(x[2], x[0]);
    let c = sub3(x[3], x[0]);
    (dot3(a, cross3(b, c)) / 6.0).abs()
}

fn tri_area(x: &[[f64; 3]; 3]) -> f64 {
    let n = cross3(sub3(x[1], x[0]), sub3(x[2], x[0]));
    0.5 * dot3(n, n).sqrt()
}

/// Edge interpolation parameter of the zero crossing between values `pa`
/// and `pb` of opposite sign, clamped to [0, 1]. Invariant under negation
/// of both values.
#[inline]
fn edge_t(pa: f64, pb: f64) -> f64 {
    let t = pa / (pa - pb);
    t.clamp(0.0, 1.0)
}

#[inline]
fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + t * (b[0] - a[0]),
        a[1] + t * (b[1] - a[1]),
        a[2] + t * (b[2] - a[2]),
    ]
}

struct MarchOut {
    plus: f64,
    minus: f64,
    tris: Vec<[[f64; 3]; 3]>,
    segs: Vec<[[f64; 3]; 2]>,
}

/// March one tetrahedron. `psi >= 0` counts as the plus (hard) side.
fn march_tet(tet: &TetCell, collect: bool, out: &mut MarchOut) {
    let pos: Vec<bool> = tet.psi.iter().map(|&p| p >= 0.0).collect();
    let npos = pos.iter().filter(|&&p| p).count();
    let v = tet_volume(&tet.x);
    match npos {
        4 => out.plus += v,
        0 => out.minus += v,
        1 | 3 => {
            // Isolated vertex: the single vertex whose sign differs.
            let want = npos == 1;
            let a = (0..4).find(|&i| pos[i] == want).unwrap();
            let others: Vec<usize> = (0..4).filter(|&i| i != a).collect();
            let mut w = v;
            let mut pts = [[0.0; 3]; 3];
            for (idx, &b) in others.iter().enumerate() {
                let t = edge_t(tet.psi[a], tet.psi[b]);
                w *= t;
                pts[idx] = lerp3(tet.x[a], tet.x[b], t);
            }
            if npos == 1 {
                out.plus += w;
                out.minus += v - w;
            } else {
                out.minus += w;
                out.plus += v - w;
            }
            if collect {
                // Normal toward the plus side: toward `a` when `a` is
                // positive, away from it otherwise.
                push_tri(&mut out.tris, pts, tet.x[a], npos == 1);
            }
        }
        2 => {
            // Canonical side: the pair containing vertex 0.
            let u0 = 0usize;
            let u1 = (1..4).find(|&i| pos[i] == pos[0]).unwrap();
            let vs: Vec<usize> = (1..4).filter(|&i| pos[i] != pos[0]).collect();
            let (v0, v1) = (vs[0], vs[1]);
            let t00 = edge_t(tet.psi[u0], tet.psi[v0]);
            let t01 = edge_t(tet.psi[u0], tet.psi[v1]);
            let t10 = edge_t(tet.psi[u1], tet.psi[v0]);
            let t11 = edge_t(tet.psi[u1], tet.psi[v1]);
            let p00 = lerp3(tet.x[u0], tet.x[v0], t00);
            let p01 = lerp3(tet.x[u0], tet.x[v1], t01);
            let p10 = lerp3(tet.x[u1], tet.x[v0], t10);
            let p11 = lerp3(tet.x[u1], tet.x[v1], t11);
            // Wedge containing the canonical side, split into three
            // tetrahedra of the prism (u0, p00, p01) - (u1, p10, p11).
            let w = tet_volume(&[tet.x[u0], p00, p01, tet.x[u1]])
                + tet_volume(&[p00, p01, tet.x[u1], p10])
                + tet_volume(&[p01, tet.x[u1], p10, p11]);
            if pos[0] {
                out.plus += w;
                out.minus += v - w;
            } else {
                out.minus += w;
                out.plus += v - w;
            }
            if collect {
                push_tri(&mut out.tris, [p00, p01, p10], tet.x[u0], pos[0]);
                push_tri(&mut out.tris, [p01, p11, p10], tet.x[u0], pos[0]);
            }
        }
        _ => unreachable!(),
    }
}

/// Push an interface triangle wound so its normal points toward the plus
/// side; `toward` is a point on the plus side iff `toward_is_plus`.
fn push_tri(
    tris: &mut Vec<[[f64; 3]; 3]>,
    pts: [[f64; 3]; 3],
    toward: [f64; 3],
    toward_is_plus: bool,
) {
    let n = cross3(sub3(pts[1], pts[0]), sub3(pts[2], pts[0]));
    if dot3(n, n) == 0.0 {
        return;
    }
    let s = dot3(n, sub3(toward, pts[0]));
    let ok = if toward_is_plus { s >= 0.0 } else { s <= 0.0 };
    if ok {
        tris.push(pts);
    } else {
        tris.push([pts[0], pts[2], pts[1]]);
    }
}

/// March one triangle of the 2D tessellation.
fn march_tri(tri: &TriCell, collect: bool, out: &mut MarchOut) {
    let pos: Vec<bool> = tri.psi.iter().map(|&p| p >= 0.0).collect();
    let npos = pos.iter().filter(|&&p| p).count();
    let n = cross3(sub3(tri.x[1], tri.x[0]), sub3(tri.x[2], tri.x[0]));
    let area = 0.5 * n[2].abs();
    match npos {
        3 => out.plus += area,
        0 => out.minus += area,
        _ => {
            // Isolated vertex: single positive (npos == 1) or single
            // negative (npos == 2).
            let want = npos == 1;
            let a = (0..3).find(|&i| pos[i] == want).unwrap();
            let others: Vec<usize> = (0..3).filter(|&i| i != a).collect();
            let ta = edge_t(tri.psi[a], tri.psi[others[0]]);
            let tb = edge_t(tri.psi[a], tri.psi[others[1]]);
            let w = area * ta * tb;
            let pa = lerp3(tri.x[a], tri.x[others[0]], ta);
            let pb = lerp3(tri.x[a], tri.x[others[1]], tb);
            if npos == 1 {
                out.plus += w;
                out.minus += area - w;
            } else {
                out.minus += w;
                out.plus += area - w;
            }
            if collect {
                // Orient so that rotating the segment direction by +90
                // degrees points toward the plus side.
                let d = sub3(pb, pa);
                let toward = sub3(tri.x[a], pa);
                let cross_z = d[0] * toward[1] - d[1] * toward[0];
                let plus_left = if npos == 1 { cross_z >= 0.0 } else { cross_z <= 0.0 };
                if plus_left {
                    out.segs.push([pa, pb]);
                } else {
                    out.segs.push([pb, pa]);
                }
            }
        }
    }
}

struct CellResult {
    phase: ElemPhase,
    plus: f64,
    minus: f64,
    tris: Vec<[[f64; 3]; 3]>,
    segs: Vec<[[f64; 3]; 2]>,
}

fn process_cell(grid: &StructuredGrid, psi: &[f64], iso: f64, e: usize, collect: bool) -> CellResult {
    let nodes = grid.element_nodes(e);
    let ve = grid.element_volume();
    let mut vals = [0.0f64; 8];
    let mut all_pos = true;
    let mut all_neg = true;
    for (idx, &n) in nodes.iter().enumerate() {
        let v = psi[n] - iso;
        vals[idx] = v;
        if v >= 0.0 {
            all_neg = false;
        } else {
            all_pos = false;
        }
    }
    if all_pos {
        return CellResult {
            phase: ElemPhase::Hard,
            plus: ve,
            minus: 0.0,
            tris: Vec::new(),
            segs: Vec::new(),
        };
    }
    if all_neg {
        return CellResult {
            phase: ElemPhase::Soft,
            plus: 0.0,
            minus: ve,
            tris: Vec::new(),
            segs: Vec::new(),
        };
    }
    let [i, j, k] = grid.element_coords(e);
    let h = grid.h();
    let origin = [i as f64 * h[0], j as f64 * h[1], k as f64 * h[2]];
    let mut out = MarchOut {
        plus: 0.0,
        minus: 0.0,
        tris: Vec::new(),
        segs: Vec::new(),
    };
    if grid.ndim() == 2 {
        let corners: [f64; 4] = vals[..4].try_into().unwrap();
        for tri in tessellate_quad(&corners, origin, h) {
            march_tri(&tri, collect, &mut out);
        }
    } else {
        for tet in tessellate_hex(&vals, origin, h) {
            march_tet(&tet, collect, &mut out);
        }
    }
    CellResult {
        phase: ElemPhase::Cut,
        plus: out.plus,
        minus: out.minus,
        tris: out.tris,
        segs: out.segs,
    }
}

fn classify_impl(
    grid: &StructuredGrid,
    psi: &ScalarField,
    iso: f64,
    collect: bool,
) -> Result<Classification> {
    if psi.location != FieldLocation::Nodal {
        return Err(Error::InvalidField(
            "classification expects a nodal field".into(),
        ));
    }
    if psi.values.len() != grid.n_nodes() {
        return Err(Error::InvalidField("field does not match grid".into()));
    }
    let results: Vec<CellResult> = (0..grid.n_elements())
        .into_par_iter()
        .map(|e| process_cell(grid, &psi.values, iso, e, collect))
        .collect();
    let mut cuts = vec![None; grid.n_elements()];
    let mut phases = Vec::with_capacity(grid.n_elements());
    let mut vol_plus = 0.0;
    let mut vol_minus = 0.0;
    let mut triangles = Vec::new();
    let mut segments = Vec::new();
    let mut interface = 0.0;
    for (e, r) in results.into_iter().enumerate() {
        vol_plus += r.plus;
        vol_minus += r.minus;
        phases.push(r.phase);
        if r.phase == ElemPhase::Cut {
            cuts[e] = Some(CutElementData {
                element: e,
                vol_plus: r.plus,
                vol_minus: r.minus,
            });
        }
        if collect {
            for t in r.tris {
                interface += tri_area(&t);
                triangles.push(t);
            }
            for s in r.segs {
                let d = sub3(s[1], s[0]);
                interface += dot3(d, d).sqrt();
                segments.push(s);
            }
        }
    }
    Ok(Classification {
        cuts,
        snapshot: TopologySnapshot {
            vol_plus,
            vol_minus,
            interface_measure: interface,
            triangles,
            segments,
            phases,
        },
    })
}

/// Full classification with interface extraction.
pub fn classify_and_measure(
    grid: &StructuredGrid,
    psi: &ScalarField,
    iso: f64,
) -> Result<Classification> {
    classify_impl(grid, psi, iso, true)
}

/// Volume-only classification (identical volume arithmetic, no interface
/// collection); used inside the bisection loop.
pub fn classify_volumes(
    grid: &StructuredGrid,
    psi: &ScalarField,
    iso: f64,
) -> Result<Classification> {
    classify_impl(grid, psi, iso, false)
}

/// Indexed triangle/line mesh of the interface, ready for file export.
#[derive(Debug, Clone, Default)]
pub struct IsosurfaceMesh {
    pub points: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
    pub lines: Vec<[usize; 2]>,
    /// Per-triangle unit normals pointing toward the hard phase (empty for
    /// 2D meshes).
    pub normals: Vec<[f64; 3]>,
}

/// Flatten a snapshot's interface into an exportable mesh.
pub fn export_isosurface(snapshot: &TopologySnapshot) -> IsosurfaceMesh {
    let mut mesh = IsosurfaceMesh::default();
    for t in &snapshot.triangles {
        let base = mesh.points.len();
        mesh.points.extend_from_slice(t);
        mesh.triangles.push([base, base + 1, base + 2]);
        let n = cross3(sub3(t[1], t[0]), sub3(t[2], t[0]));
        let len = dot3(n, n).sqrt();
        mesh.normals.push(if len > 0.0 {
            [n[0] / len, n[1] / len, n[2] / len]
        } else {
            [0.0, 0.0, 0.0]
        });
    }
    for s in &snapshot.segments {
        let base = mesh.points.len();
        mesh.points.extend_from_slice(s);
        mesh.lines.push([base, base + 1]);
    }
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;

    #[test]
    fn tessellation_carries_constants() {
        let tets = tessellate_hex(&[3.5; 8], [0.0; 3], [1.0; 3]);
        assert_eq!(tets.len(), 24);
        for t in &tets {
            assert!(t.psi.iter().all(|&p| p == 3.5));
        }
        let tris = tessellate_quad(&[-1.25; 4], [0.0; 3], [1.0; 3]);
        assert_eq!(tris.len(), 4);
        for t in &tris {
            assert!(t.psi.iter().all(|&p| p == -1.25));
        }
    }

    #[test]
    fn tessellation_exact_for_linear_fields() {
        // psi = x on a shifted cell: center and face values must be exact.
        let origin = [2.0, -1.0, 0.5];
        let h = [0.5, 0.25, 0.125];
        let corner_psi: Vec<f64> = HEX_CORNERS
            .iter()
            .map(|c| origin[0] + c[0] * h[0])
            .collect();
        let tets = tessellate_hex(&corner_psi.clone().try_into().unwrap(), origin, h);
        for t in &tets {
            for v in 0..4 {
                assert!((t.psi[v] - t.x[v][0]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn tessellation_volume_partition() {
        let h = [0.31, 0.17, 0.53];
        let tets = tessellate_hex(&[1.0; 8], [0.2, 0.4, 0.8], h);
        let total: f64 = tets.iter().map(|t| tet_volume(&t.x)).sum();
        let cell = h[0] * h[1] * h[2];
        assert!((total - cell).abs() < 1e-12 * cell);
    }

    fn nodal_from_fn(grid: &StructuredGrid, f: impl Fn([f64; 3]) -> f64) -> ScalarField {
        let vals = (0..grid.n_nodes())
            .map(|n| f(grid.node_position(n)))
            .collect();
        ScalarField::nodal(grid, vals).unwrap()
    }

    #[test]
    fn uniform_positive_field() {
        let grid = build_grid(&[4, 3, 2], &[1.0, 1.0, 1.0], &[]).unwrap();
        let psi = ScalarField::constant(&grid, FieldLocation::Nodal, 1.0);
        let c = classify_and_measure(&grid, &psi, 0.0).unwrap();
        assert!((c.snapshot.vol_plus - grid.domain_volume()).abs() < 1e-14);
        assert_eq!(c.snapshot.vol_minus, 0.0);
        assert_eq!(c.snapshot.interface_measure, 0.0);
        assert!(c.snapshot.triangles.is_empty());
        assert!(c.cuts.iter().all(|c| c.is_none()));
    }

    #[test]
    fn plane_cut_is_exact() {
        let grid = build_grid(&[10, 8, 6], &[2.0, 1.0, 1.5], &[]).unwrap();
        // Plane not aligned with the mesh: psi = x - 0.937.
        let psi = nodal_from_fn(&grid, |x| x[0] - 0.937);
        let c = classify_and_measure(&grid, &psi, 0.0).unwrap();
        let expect_minus = 0.937 * 1.0 * 1.5;
        let v = grid.domain_volume();
        assert!((c.snapshot.vol_minus - expect_minus).abs() < 1e-12 * v);
        assert!((c.snapshot.vol_plus + c.snapshot.vol_minus - v).abs() < 1e-12 * v);
        // Interface is the full cross-section.
        assert!((c.snapshot.interface_measure - 1.5).abs() < 1e-10);
        // All normals parallel to +x (toward the hard side).
        let mesh = export_isosurface(&c.snapshot);
        for n in &mesh.normals {
            assert!((n[0] - 1.0).abs() < 1e-10, "normal {n:?}");
        }
    }

    #[test]
    fn plane_cut_is_exact_2d() {
        let grid = build_grid(&[9, 7], &[1.0, 1.0], &[]).unwrap();
        let psi = nodal_from_fn(&grid, |x| 0.412 - x[1]);
        let c = classify_and_measure(&grid, &psi, 0.0).unwrap();
        assert!((c.snapshot.vol_plus - 0.412).abs() < 1e-12);
        assert!((c.snapshot.interface_measure - 1.0).abs() < 1e-10);
    }

    #[test]
    fn sphere_volume_and_normals() {
        let r0 = 0.3;
        let center = [0.5, 0.5, 0.5];
        let build = |n: usize| {
            let grid = build_grid(&[n, n, n], &[1.0, 1.0, 1.0], &[]).unwrap();
            let psi = nodal_from_fn(&grid, |x| {
                let d: f64 = (0..3).map(|a| (x[a] - center[a]).powi(2)).sum();
                r0 * r0 - d
            });
            classify_and_measure(&grid, &psi, 0.0).unwrap()
        };
        let exact = 4.0 / 3.0 * std::f64::consts::PI * r0.powi(3);
        // h = r0 / 10 -> n = 1 / (r0/10) ~ 34.
        let c1 = build(34);
        let err1 = (c1.snapshot.vol_plus - exact).abs() / exact;
        assert!(err1 < 0.01, "error {err1}");
        let c2 = build(68);
        let err2 = (c2.snapshot.vol_plus - exact).abs() / exact;
        let order = (err1 / err2).log2();
        assert!(order >= 1.8, "observed order {order}");
        // Normals near radial at h = r0/20.
        for (t, n) in c2.snapshot.triangles.iter().zip(
            export_isosurface(&c2.snapshot).normals.iter(),
        ) {
            let a = tri_area(t);
            if a < 1e-6 * (1.0f64 / 68.0).powi(2) {
                continue;
            }
            let mut cen = [0.0; 3];
            for v in t {
                for k in 0..3 {
                    cen[k] += v[k] / 3.0;
                }
            }
            let mut radial = sub3(center, cen);
            let len = dot3(radial, radial).sqrt();
            for r in radial.iter_mut() {
                *r /= len;
            }
            let cosang = dot3(*n, radial);
            assert!(cosang > (5.0f64).to_radians().cos(), "cos angle {cosang}");
        }
    }

    #[test]
    fn empty_interface_empty_mesh() {
        let grid = build_grid(&[2, 2], &[1.0, 1.0], &[]).unwrap();
        let psi = ScalarField::constant(&grid, FieldLocation::Nodal, -1.0);
        let c = classify_and_measure(&grid, &psi, 0.0).unwrap();
        let mesh = export_isosurface(&c.snapshot);
        assert!(mesh.points.is_empty());
        assert!(mesh.lines.is_empty());
    }

    fn lcg_field(grid: &StructuredGrid, seed: u64) -> ScalarField {
        let mut state = seed;
        let vals = (0..grid.n_nodes())
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
            })
            .collect();
        ScalarField::nodal(grid, vals).unwrap()
    }

    #[test]
    fn random_fields_partition_domain() {
        let grid3 = build_grid(&[5, 4, 3], &[1.0, 0.8, 0.6], &[]).unwrap();
        let grid2 = build_grid(&[7, 5], &[1.3, 0.9], &[]).unwrap();
        for seed in 0..50u64 {
            let c3 = classify_and_measure(&grid3, &lcg_field(&grid3, seed + 1), 0.0).unwrap();
            let v3 = grid3.domain_volume();
            assert!(
                (c3.snapshot.vol_plus + c3.snapshot.vol_minus - v3).abs() <= 1e-10 * v3,
                "3d seed {seed}"
            );
            let c2 = classify_and_measure(&grid2, &lcg_field(&grid2, seed + 101), 0.0).unwrap();
            let v2 = grid2.domain_volume();
            assert!(
                (c2.snapshot.vol_plus + c2.snapshot.vol_minus - v2).abs() <= 1e-10 * v2,
                "2d seed {seed}"
            );
            // Per-cut-element partition.
            for cut in c3.cuts.iter().flatten() {
                let ve = grid3.element_volume();
                assert!((cut.vol_plus + cut.vol_minus - ve).abs() <= 1e-12 * ve);
                assert!(cut.vol_plus >= 0.0 && cut.vol_minus >= 0.0);
            }
        }
    }

    #[test]
    fn negation_swaps_volumes_bitwise() {
        let grid = build_grid(&[4, 3, 3], &[1.0, 1.0, 1.0], &[]).unwrap();
        for seed in 0..20u64 {
            let psi = lcg_field(&grid, 777 + seed);
            // Generic field: no exact zeros (probability zero with LCG).
            let neg = ScalarField::nodal(&grid, psi.values.iter().map(|v| -v).collect()).unwrap();
            let c = classify_and_measure(&grid, &psi, 0.0).unwrap();
            let cn = classify_and_measure(&grid, &neg, 0.0).unwrap();
            assert_eq!(c.snapshot.vol_plus.to_bits(), cn.snapshot.vol_minus.to_bits());
            assert_eq!(c.snapshot.vol_minus.to_bits(), cn.snapshot.vol_plus.to_bits());
        }
    }

    #[test]
    fn mirror_symmetry_of_volumes() {
        let grid = build_grid(&[6, 4, 4], &[1.2, 1.0, 1.0], &[]).unwrap();
        let nd = grid.node_dims();
        for seed in 0..10u64 {
            let psi = lcg_field(&grid, 31 + seed);
            let mut mirrored = vec![0.0; grid.n_nodes()];
            for n in 0..grid.n_nodes() {
                let c = grid.node_coords(n);
                let m = grid.node_index(nd[0] - 1 - c[0], c[1], c[2]);
                mirrored[m] = psi.values[n];
            }
            let pm = ScalarField::nodal(&grid, mirrored).unwrap();
            let a = classify_and_measure(&grid, &psi, 0.0).unwrap();
            let b = classify_and_measure(&grid, &pm, 0.0).unwrap();
            let v = grid.domain_volume();
            assert!((a.snapshot.vol_plus - b.snapshot.vol_plus).abs() <= 1e-12 * v);
            assert!(
                (a.snapshot.interface_measure - b.snapshot.interface_measure).abs()
                    <= 1e-10 * (1.0 + a.snapshot.interface_measure)
            );
        }
    }

    #[test]
    fn ambiguous_saddle_is_continuous() {
        // Checkerboard corner signs (the classical MC ambiguous case): a
        // small perturbation must not jump the volume by more than one
        // tetrahedron.
        let grid = build_grid(&[1, 1, 1], &[1.0, 1.0, 1.0], &[]).unwrap();
        let saddle = [1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0, 1.0];
        let base = ScalarField::nodal(&grid, saddle.to_vec()).unwrap();
        let c0 = classify_and_measure(&grid, &base, 0.0).unwrap();
        let tet_vol = grid.element_volume() / 24.0;
        for bit in 0..8 {
            let mut vals = saddle.to_vec();
            vals[bit] += 1e-9;
            let c1 =
                classify_and_measure(&grid, &ScalarField::nodal(&grid, vals).unwrap(), 0.0)
                    .unwrap();
            let dv = (c1.snapshot.vol_plus - c0.snapshot.vol_plus).abs();
            assert!(dv <= tet_vol, "jump {dv} > tet volume {tet_vol}");
        }
    }

    #[test]
    fn classify_volumes_matches_full_classification() {
        let grid = build_grid(&[5, 5], &[1.0, 1.0], &[]).unwrap();
        let psi = lcg_field(&grid, 5);
        let full = classify_and_measure(&grid, &psi, 0.123).unwrap();
        let fast = classify_volumes(&grid, &psi, 0.123).unwrap();
        assert_eq!(full.snapshot.vol_plus.to_bits(), fast.snapshot.vol_plus.to_bits());
        assert_eq!(full.snapshot.vol_minus.to_bits(), fast.snapshot.vol_minus.to_bits());
        assert!(fast.snapshot.triangles.is_empty() && fast.snapshot.segments.is_empty());
    }
}
