//! Conforming tetrahedral meshes, boundary tagging and vertex patches.
//!
//! Every tetrahedron stores its vertices sorted by global index. Local edges
//! are `(0,1),(0,2),(0,3),(1,2),(1,3),(2,3)` and local face `k` is the face
//! opposite local vertex `k`, so edge and face orientations induced by the
//! local ordering coincide with the global ones.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{cross, dist, norm, scale, sub, add, TetGeometry, Vec3};

pub const LOCAL_EDGES: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];
pub const LOCAL_FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaceKind {
    Interior,
    Boundary(BoundaryTag),
}

/// How boundary faces receive their tag.
pub enum BoundarySpec {
    /// Use the explicit list (from a mesh file or the caller). Every boundary
    /// face must be listed.
    FromList(Vec<([usize; 3], BoundaryTag)>),
    Uniform(BoundaryTag),
    /// Called with the face centroid and the outward unit normal.
    ByPredicate(Box<dyn Fn(Vec3, Vec3) -> BoundaryTag + Send + Sync>),
}

impl Default for BoundarySpec {
    fn default() -> Self {
        BoundarySpec::Uniform(BoundaryTag::Dirichlet)
    }
}

impl std::fmt::Debug for BoundarySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundarySpec::FromList(l) => write!(f, "FromList({} faces)", l.len()),
            BoundarySpec::Uniform(t) => write!(f, "Uniform({t:?})"),
            BoundarySpec::ByPredicate(_) => write!(f, "ByPredicate"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TetMesh {
    pub vertices: Vec<Vec3>,
    /// Sorted vertex indices.
    pub tets: Vec<[usize; 4]>,
    pub edges: Vec<[usize; 2]>,
    pub faces: Vec<[usize; 3]>,
    pub tet_edges: Vec<[usize; 6]>,
    pub tet_faces: Vec<[usize; 4]>,
    /// Owner tet and optional neighbour for every face.
    pub face_tets: Vec<(usize, Option<usize>)>,
    pub face_kind: Vec<FaceKind>,
    pub vertex_tets: Vec<Vec<usize>>,
    pub on_boundary: Vec<bool>,
    pub h_tet: Vec<f64>,
    /// Shape regularity max h_K / ρ_K with ρ_K the inscribed-ball diameter.
    pub kappa: f64,
    nominal_h: Option<f64>,
    edge_index: HashMap<[usize; 2], usize>,
    face_index: HashMap<[usize; 3], usize>,
}

fn sorted3(mut f: [usize; 3]) -> [usize; 3] {
    f.sort_unstable();
    f
}

impl TetMesh {
    pub fn new(vertices: Vec<Vec3>, tets: Vec<[usize; 4]>, boundary: &BoundarySpec) -> Result<Self> {
        let nv = vertices.len();
        let mut sorted_tets = Vec::with_capacity(tets.len());
        for (k, t) in tets.iter().enumerate() {
            let mut s = *t;
            s.sort_unstable();
            if s.iter().any(|&v| v >= nv) {
                return Err(Error::Mesh(format!("tet {k} references a vertex out of range")));
            }
            if s[0] == s[1] || s[1] == s[2] || s[2] == s[3] {
                return Err(Error::Mesh(format!("degenerate element {k}: repeated vertex indices")));
            }
            sorted_tets.push(s);
        }

        let mut h_tet = Vec::with_capacity(sorted_tets.len());
        let mut kappa: f64 = 0.0;
        for (k, t) in sorted_tets.iter().enumerate() {
            let p = [vertices[t[0]], vertices[t[1]], vertices[t[2]], vertices[t[3]]];
            let mut h: f64 = 0.0;
            for e in LOCAL_EDGES {
                h = h.max(dist(p[e[0]], p[e[1]]));
            }
            let vol = TetGeometry::new(&p).volume();
            if !(vol >= 1e-14 * h * h * h) {
                return Err(Error::Mesh(format!("degenerate element {k}: volume {vol:.3e}")));
            }
            let area: f64 = LOCAL_FACES
                .iter()
                .map(|f| 0.5 * norm(cross(sub(p[f[1]], p[f[0]]), sub(p[f[2]], p[f[0]]))))
                .sum();
            let rho = 6.0 * vol / area;
            kappa = kappa.max(h / rho);
            h_tet.push(h);
        }

        let mut edge_index = HashMap::new();
        let mut edges = Vec::new();
        let mut face_index: HashMap<[usize; 3], usize> = HashMap::new();
        let mut faces = Vec::new();
        let mut face_tets: Vec<(usize, Option<usize>)> = Vec::new();
        let mut tet_edges = Vec::with_capacity(sorted_tets.len());
        let mut tet_faces = Vec::with_capacity(sorted_tets.len());
        let mut vertex_tets = vec![Vec::new(); nv];
        for (k, t) in sorted_tets.iter().enumerate() {
            for &v in t {
                vertex_tets[v].push(k);
            }
            let mut te = [0; 6];
            for (l, e) in LOCAL_EDGES.iter().enumerate() {
                let key = [t[e[0]], t[e[1]]];
                te[l] = *edge_index.entry(key).or_insert_with(|| {
                    edges.push(key);
                    edges.len() - 1
                });
            }
            let mut tf = [0; 4];
            for (l, f) in LOCAL_FACES.iter().enumerate() {
                let key = [t[f[0]], t[f[1]], t[f[2]]];
                let id = match face_index.get(&key) {
                    Some(&id) => {
                        let entry = &mut face_tets[id];
                        if entry.1.is_some() {
                            return Err(Error::Mesh(format!(
                                "non-manifold/bad boundary: face {key:?} shared by more than two tets"
                            )));
                        }
                        entry.1 = Some(k);
                        id
                    }
                    None => {
                        faces.push(key);
                        face_tets.push((k, None));
                        face_index.insert(key, faces.len() - 1);
                        faces.len() - 1
                    }
                };
                tf[l] = id;
            }
            tet_edges.push(te);
            tet_faces.push(tf);
        }

        let mut mesh = TetMesh {
            vertices,
            tets: sorted_tets,
            edges,
            faces,
            tet_edges,
            tet_faces,
            face_tets,
            face_kind: Vec::new(),
            vertex_tets,
            on_boundary: vec![false; nv],
            h_tet,
            kappa,
            nominal_h: None,
            edge_index,
            face_index,
        };
        mesh.apply_boundary(boundary)?;
        Ok(mesh)
    }

    fn apply_boundary(&mut self, spec: &BoundarySpec) -> Result<()> {
        let mut kind: Vec<Option<FaceKind>> = self
            .face_tets
            .iter()
            .map(|(_, n)| if n.is_some() { Some(FaceKind::Interior) } else { None })
            .collect();
        match spec {
            BoundarySpec::Uniform(tag) => {
                for k in kind.iter_mut().filter(|k| k.is_none()) {
                    *k = Some(FaceKind::Boundary(*tag));
                }
            }
            BoundarySpec::ByPredicate(f) => {
                for (i, k) in kind.iter_mut().enumerate() {
                    if k.is_none() {
                        let (c, n) = self.face_centroid_normal(i);
                        *k = Some(FaceKind::Boundary(f(c, n)));
                    }
                }
            }
            BoundarySpec::FromList(list) => {
                for (f, tag) in list {
                    let key = sorted3(*f);
                    let id = self.face_index.get(&key).copied().ok_or_else(|| {
                        Error::Mesh(format!("non-manifold/bad boundary: listed face {key:?} is not a mesh face"))
                    })?;
                    match kind[id] {
                        Some(FaceKind::Interior) => {
                            return Err(Error::Mesh(format!(
                                "non-manifold/bad boundary: interior face {key:?} listed as boundary"
                            )))
                        }
                        Some(FaceKind::Boundary(t)) if t != *tag => {
                            return Err(Error::Mesh(format!("conflicting tags for boundary face {key:?}")))
                        }
                        _ => kind[id] = Some(FaceKind::Boundary(*tag)),
                    }
                }
                if let Some(id) = kind.iter().position(|k| k.is_none()) {
                    return Err(Error::Mesh(format!("untagged boundary face {:?}", self.faces[id])));
                }
            }
        }
        self.face_kind = kind.into_iter().map(|k| k.unwrap()).collect();
        for (i, k) in self.face_kind.iter().enumerate() {
            if matches!(k, FaceKind::Boundary(_)) {
                for &v in &self.faces[i] {
                    self.on_boundary[v] = true;
                }
            }
        }
        Ok(())
    }

    /// Re-tag the boundary faces.
    pub fn with_boundary(mut self, spec: &BoundarySpec) -> Result<Self> {
        self.on_boundary.iter_mut().for_each(|b| *b = false);
        self.apply_boundary(spec)?;
        Ok(self)
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn tet_points(&self, k: usize) -> [Vec3; 4] {
        let t = self.tets[k];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]], self.vertices[t[3]]]
    }

    pub fn geometry(&self, k: usize) -> TetGeometry {
        TetGeometry::new(&self.tet_points(k))
    }

    pub fn edge_id(&self, a: usize, b: usize) -> Option<usize> {
        let key = if a < b { [a, b] } else { [b, a] };
        self.edge_index.get(&key).copied()
    }

    pub fn face_id(&self, f: [usize; 3]) -> Option<usize> {
        self.face_index.get(&sorted3(f)).copied()
    }

    pub fn is_boundary_face(&self, f: usize) -> bool {
        matches!(self.face_kind[f], FaceKind::Boundary(_))
    }

    pub fn face_tag(&self, f: usize) -> Option<BoundaryTag> {
        match self.face_kind[f] {
            FaceKind::Boundary(t) => Some(t),
            FaceKind::Interior => None,
        }
    }

    /// Outward (with respect to tet `k`) unit normal of local face `l`.
    pub fn outward_normal(&self, k: usize, l: usize) -> Vec3 {
        let p = self.tet_points(k);
        let f = LOCAL_FACES[l];
        let mut n = cross(sub(p[f[1]], p[f[0]]), sub(p[f[2]], p[f[0]]));
        let len = norm(n);
        n = scale(1.0 / len, n);
        let inward = sub(p[l], p[f[0]]);
        if crate::geometry::dot(n, inward) > 0.0 {
            n = scale(-1.0, n);
        }
        n
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        let v = &self.vertices;
        0.5 * norm(cross(sub(v[b], v[a]), sub(v[c], v[a])))
    }

    fn face_centroid_normal(&self, f: usize) -> (Vec3, Vec3) {
        let [a, b, c] = self.faces[f];
        let v = &self.vertices;
        let cen = scale(1.0 / 3.0, add(add(v[a], v[b]), v[c]));
        let (k, _) = self.face_tets[f];
        let l = self.tet_faces[k].iter().position(|&x| x == f).unwrap();
        (cen, self.outward_normal(k, l))
    }

    /// Mesh size reported to experiments: the nominal value of a structured
    /// mesh when set, otherwise the largest element diameter.
    pub fn mesh_size(&self) -> f64 {
        self.nominal_h.unwrap_or_else(|| self.h_tet.iter().cloned().fold(0.0, f64::max))
    }

    pub fn set_nominal_h(&mut self, h: f64) {
        self.nominal_h = Some(h);
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.num_tets()).map(|k| self.geometry(k).volume()).sum()
    }

    /// Faces tagged with `tag`, as a mask over all faces.
    pub fn faces_tagged(&self, tag: BoundaryTag) -> Vec<bool> {
        self.face_kind.iter().map(|k| *k == FaceKind::Boundary(tag)).collect()
    }

    pub fn boundary_faces(&self) -> Vec<bool> {
        self.face_kind.iter().map(|k| matches!(k, FaceKind::Boundary(_))).collect()
    }
}

/// Union of axis-aligned cells of a regular lattice, each cell split into
/// 6 pyramids over its faces and each pyramid into 4 tetrahedra through the
/// face center.
pub fn build_cell_mesh(
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    include: impl Fn(usize, usize, usize) -> bool,
    boundary: &BoundarySpec,
) -> Result<TetMesh> {
    // doubled lattice coordinates so face and cell centers are integral
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut vid = |key: [usize; 3], vertices: &mut Vec<Vec3>| -> usize {
        *index.entry(key).or_insert_with(|| {
            vertices.push([
                origin[0] + 0.5 * cell * key[0] as f64,
                origin[1] + 0.5 * cell * key[1] as f64,
                origin[2] + 0.5 * cell * key[2] as f64,
            ]);
            vertices.len() - 1
        })
    };
    let mut tets = Vec::new();
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                if !include(i, j, k) {
                    continue;
                }
                let b = [2 * i, 2 * j, 2 * k];
                let cc = vid([b[0] + 1, b[1] + 1, b[2] + 1], &mut vertices);
                for axis in 0..3 {
                    let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
                    for side in 0..2 {
                        let mut fc = b;
                        fc[axis] += 2 * side;
                        fc[u] += 1;
                        fc[w] += 1;
                        let fcv = vid(fc, &mut vertices);
                        let ring = [(0, 0), (2, 0), (2, 2), (0, 2)];
                        let corners: Vec<usize> = ring
                            .iter()
                            .map(|&(du, dw)| {
                                let mut c = b;
                                c[axis] += 2 * side;
                                c[u] += du;
                                c[w] += dw;
                                vid(c, &mut vertices)
                            })
                            .collect();
                        for r in 0..4 {
                            tets.push([corners[r], corners[(r + 1) % 4], fcv, cc]);
                        }
                    }
                }
            }
        }
    }
    TetMesh::new(vertices, tets, boundary)
}

/// Unit cube split into `N^3` cubes of 24 tetrahedra each, Dirichlet on the
/// whole boundary.
pub fn build_structured_cube_mesh(n: usize) -> Result<TetMesh> {
    build_structured_cube_mesh_with(n, &BoundarySpec::default())
}

pub fn build_structured_cube_mesh_with(n: usize, boundary: &BoundarySpec) -> Result<TetMesh> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let mut m = build_cell_mesh([0.0; 3], 1.0 / n as f64, [n, n, n], |_, _, _| true, boundary)?;
    m.set_nominal_h(3f64.sqrt() / (2.0 * n as f64));
    Ok(m)
}

/// `(-1,1)^2 \ [0,1)x(-1,0]` extruded over `z in (0,1)`, with `n` cells per unit length.
pub fn build_lshape_mesh(n: usize, boundary: &BoundarySpec) -> Result<TetMesh> {
    if n == 0 {
        return Err(Error::InvalidArgument("N must be at least 1".into()));
    }
    let mut m = build_cell_mesh(
        [-1.0, -1.0, 0.0],
        1.0 / n as f64,
        [2 * n, 2 * n, n],
        |i, j, _| !(i >= n && j < n),
        boundary,
    )?;
    m.set_nominal_h(3f64.sqrt() / (2.0 * n as f64));
    Ok(m)
}

pub fn parse_mesh(text: &str, boundary: Option<&BoundarySpec>) -> Result<TetMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let perr = |line: usize, msg: &str| Error::Parse { line, msg: msg.to_string() };
    let (ln, header) = lines.next().ok_or_else(|| perr(1, "empty file"))?;
    if header.split_whitespace().collect::<Vec<_>>() != ["tetmesh", "1"] {
        return Err(perr(ln, "expected header 'tetmesh 1'"));
    }
    fn section<'a>(
        lines: &mut impl Iterator<Item = (usize, &'a str)>,
        name: &str,
    ) -> Result<(usize, usize)> {
        let (ln, l) = lines.next().ok_or_else(|| Error::Parse { line: 0, msg: format!("missing '{name}' section") })?;
        let parts: Vec<_> = l.split_whitespace().collect();
        if parts.len() != 2 || parts[0] != name {
            return Err(Error::Parse { line: ln, msg: format!("expected '{name} <count>'") });
        }
        let n = parts[1].parse().map_err(|_| Error::Parse { line: ln, msg: "bad count".into() })?;
        Ok((ln, n))
    }
    let (_, nv) = section(&mut lines, "vertices")?;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| perr(0, "unexpected end of file in vertices"))?;
        let v: Vec<f64> = l
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| perr(ln, "bad coordinate"))?;
        if v.len() != 3 {
            return Err(perr(ln, "expected 3 coordinates"));
        }
        vertices.push([v[0], v[1], v[2]]);
    }
    let (_, nt) = section(&mut lines, "tets")?;
    let mut tets = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (ln, l) = lines.next().ok_or_else(|| perr(0, "unexpected end of file in tets"))?;
        let v: Vec<usize> = l
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| perr(ln, "bad vertex index"))?;
        if v.len() != 4 {
            return Err(perr(ln, "expected 4 vertex indices"));
        }
        if v.iter().any(|&i| i >= nv) {
            return Err(perr(ln, "vertex index out of range"));
        }
        tets.push([v[0], v[1], v[2], v[3]]);
    }
    let mut listed = Vec::new();
    if let Some((ln, l)) = lines.next() {
        let parts: Vec<_> = l.split_whitespace().collect();
        if parts.len() != 2 || parts[0] != "boundary" {
            return Err(perr(ln, "expected 'boundary <count>'"));
        }
        let nb: usize = parts[1].parse().map_err(|_| perr(ln, "bad count"))?;
        for _ in 0..nb {
            let (ln, l) = lines.next().ok_or_else(|| perr(0, "unexpected end of file in boundary"))?;
            let parts: Vec<_> = l.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(perr(ln, "expected 'v0 v1 v2 D|N'"));
            }
            let mut f = [0usize; 3];
            for i in 0..3 {
                f[i] = parts[i].parse().map_err(|_| perr(ln, "bad vertex index"))?;
            }
            let tag = match parts[3] {
                "D" => BoundaryTag::Dirichlet,
                "N" => BoundaryTag::Neumann,
                _ => return Err(perr(ln, "boundary tag must be D or N")),
            };
            listed.push((f, tag));
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(perr(ln, "trailing content"));
    }
    match boundary {
        Some(spec) => TetMesh::new(vertices, tets, spec),
        None => TetMesh::new(vertices, tets, &BoundarySpec::FromList(listed)),
    }
}

/// Read a mesh file. With `boundary = None` the tags listed in the file are
/// used and every boundary face must be listed.
pub fn load_mesh(path: impl AsRef<Path>, boundary: Option<&BoundarySpec>) -> Result<TetMesh> {
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text, boundary)
}

pub fn format_mesh(mesh: &TetMesh) -> String {
    let mut s = String::from("tetmesh 1\n");
    let _ = writeln!(s, "vertices {}", mesh.num_vertices());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{:e} {:e} {:e}", v[0], v[1], v[2]);
    }
    let _ = writeln!(s, "tets {}", mesh.num_tets());
    for t in &mesh.tets {
        let _ = writeln!(s, "{} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    let bnd: Vec<usize> = (0..mesh.faces.len()).filter(|&f| mesh.is_boundary_face(f)).collect();
    let _ = writeln!(s, "boundary {}", bnd.len());
    for f in bnd {
        let [a, b, c] = mesh.faces[f];
        let tag = if mesh.face_tag(f) == Some(BoundaryTag::Dirichlet) { "D" } else { "N" };
        let _ = writeln!(s, "{a} {b} {c} {tag}");
    }
    s
}

pub fn write_mesh(mesh: &TetMesh, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_mesh(mesh))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatchKind {
    Interior,
    NeumannBoundary,
    DirichletBoundary,
}

#[derive(Clone, Debug)]
pub struct VertexPatch {
    pub center: usize,
    pub tets: Vec<usize>,
    pub h_omega: f64,
    pub kind: PatchKind,
    /// Faces of the patch boundary: faces of patch tets owned by exactly one patch tet.
    pub boundary_faces: Vec<usize>,
    /// Dirichlet faces of the domain boundary containing the center.
    pub gamma_d: Vec<usize>,
    pub extended_tets: Vec<usize>,
}

impl VertexPatch {
    /// Patch-boundary faces on which traces are constrained: all of the patch
    /// boundary except `gamma_d`.
    pub fn constrained_faces(&self) -> Vec<usize> {
        self.boundary_faces.iter().copied().filter(|f| !self.gamma_d.contains(f)).collect()
    }

    pub fn vertices(&self, mesh: &TetMesh) -> Vec<usize> {
        let s: BTreeSet<usize> = self.tets.iter().flat_map(|&k| mesh.tets[k]).collect();
        s.into_iter().collect()
    }
}

pub fn vertex_patch(mesh: &TetMesh, a: usize) -> VertexPatch {
    let tets = mesh.vertex_tets[a].clone();
    let mut count: HashMap<usize, usize> = HashMap::new();
    for &k in &tets {
        for &f in &mesh.tet_faces[k] {
            *count.entry(f).or_default() += 1;
        }
    }
    let mut boundary_faces: Vec<usize> = count.iter().filter(|(_, &c)| c == 1).map(|(&f, _)| f).collect();
    boundary_faces.sort_unstable();
    let at_a: Vec<usize> =
        boundary_faces.iter().copied().filter(|&f| mesh.is_boundary_face(f) && mesh.faces[f].contains(&a)).collect();
    let gamma_d: Vec<usize> =
        at_a.iter().copied().filter(|&f| mesh.face_tag(f) == Some(BoundaryTag::Dirichlet)).collect();
    let kind = if !mesh.on_boundary[a] {
        PatchKind::Interior
    } else if gamma_d.is_empty() {
        PatchKind::NeumannBoundary
    } else {
        PatchKind::DirichletBoundary
    };
    let verts: BTreeSet<usize> = tets.iter().flat_map(|&k| mesh.tets[k]).collect();
    let mut h_omega: f64 = 0.0;
    let vs: Vec<usize> = verts.iter().copied().collect();
    for (i, &p) in vs.iter().enumerate() {
        for &q in &vs[i + 1..] {
            h_omega = h_omega.max(dist(mesh.vertices[p], mesh.vertices[q]));
        }
    }
    let ext: BTreeSet<usize> = verts.iter().flat_map(|&b| mesh.vertex_tets[b].iter().copied()).collect();
    VertexPatch {
        center: a,
        tets,
        h_omega,
        kind,
        boundary_faces,
        gamma_d,
        extended_tets: ext.into_iter().collect(),
    }
}

/// Barycentric coordinates of `x` in tet `k`.
pub fn barycentric(mesh: &TetMesh, k: usize, x: Vec3) -> [f64; 4] {
    let g = mesh.geometry(k);
    let xh = g.pullback_point(x);
    [1.0 - xh[0] - xh[1] - xh[2], xh[0], xh[1], xh[2]]
}

/// Constant gradients of the four barycentric coordinates of tet `k`.
pub fn barycentric_gradients(mesh: &TetMesh, k: usize) -> [Vec3; 4] {
    let g = mesh.geometry(k);
    let g1 = g.covariant([1.0, 0.0, 0.0]);
    let g2 = g.covariant([0.0, 1.0, 0.0]);
    let g3 = g.covariant([0.0, 0.0, 1.0]);
    let g0 = scale(-1.0, add(add(g1, g2), g3));
    [g0, g1, g2, g3]
}

/// Value and gradient of the hat function of vertex `a` on tet `k`.
pub fn hat_eval(mesh: &TetMesh, a: usize, k: usize, x: Vec3) -> Result<(f64, Vec3)> {
    let t = mesh.tets.get(k).ok_or_else(|| Error::InvalidArgument(format!("tet {k} out of range")))?;
    let l = t
        .iter()
        .position(|&v| v == a)
        .ok_or_else(|| Error::InvalidArgument(format!("tet {k} is not in the patch of vertex {a}")))?;
    Ok((barycentric(mesh, k, x)[l], barycentric_gradients(mesh, k)[l]))
}

/// Boundary vertices violating the boundary patch geometry assumption.
///
/// A vertex passes if its patch has at most two tetrahedra or if every patch
/// boundary face not containing it has a vertex off the domain boundary.
pub fn validate_patch_geometry(mesh: &TetMesh) -> Vec<usize> {
    let mut bad = Vec::new();
    for a in 0..mesh.num_vertices() {
        if !mesh.on_boundary[a] {
            continue;
        }
        let patch = vertex_patch(mesh, a);
        if patch.tets.len() <= 2 {
            continue;
        }
        let ok = patch
            .boundary_faces
            .iter()
            .filter(|&&f| !mesh.faces[f].contains(&a))
            .all(|&f| mesh.faces[f].iter().any(|&v| !mesh.on_boundary[v]));
        if !ok {
            log::warn!("vertex {a} violates the boundary patch geometry assumption");
            bad.push(a);
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structured_counts() {
        for n in 1..=3usize {
            let m = build_structured_cube_mesh(n).unwrap();
            assert_eq!(m.num_tets(), 24 * n * n * n);
            assert_eq!(m.num_vertices(), (n + 1).pow(3) + 3 * n * n * (n + 1) + n.pow(3));
            // Euler characteristic of a ball
            let chi = m.num_vertices() as i64 - m.edges.len() as i64 + m.faces.len() as i64 - m.num_tets() as i64;
            assert_eq!(chi, 1);
            assert!((m.total_volume() - 1.0).abs() < 1e-12);
        }
        let m = build_structured_cube_mesh(1).unwrap();
        assert_eq!(m.num_vertices(), 15);
        assert!((m.mesh_size() - 3f64.sqrt() / 2.0).abs() < 1e-15);
        assert!(build_structured_cube_mesh(0).is_err());
    }

    #[test]
    fn patches_of_unit_cube() {
        let m = build_structured_cube_mesh(1).unwrap();
        let center = (0..15).find(|&v| dist(m.vertices[v], [0.5; 3]) < 1e-12).unwrap();
        let p = vertex_patch(&m, center);
        assert_eq!(p.tets.len(), 24);
        assert_eq!(p.kind, PatchKind::Interior);
        let corner = (0..15).find(|&v| dist(m.vertices[v], [0.0; 3]) < 1e-12).unwrap();
        assert_eq!(vertex_patch(&m, corner).kind, PatchKind::DirichletBoundary);
        let fc = (0..15).find(|&v| dist(m.vertices[v], [0.5, 0.5, 0.0]) < 1e-12).unwrap();
        let p = vertex_patch(&m, fc);
        assert_eq!(p.tets.len(), 4);
        assert_eq!(p.extended_tets.len(), 24);
        let neu = build_structured_cube_mesh_with(1, &BoundarySpec::Uniform(BoundaryTag::Neumann)).unwrap();
        assert_eq!(vertex_patch(&neu, corner).kind, PatchKind::NeumannBoundary);
    }

    #[test]
    fn patch_geometry() {
        let m = build_structured_cube_mesh(1).unwrap();
        assert_eq!(m.on_boundary.iter().filter(|&&b| b).count(), 14);
        assert!(validate_patch_geometry(&m).is_empty());
        let m2 = build_structured_cube_mesh(2).unwrap();
        assert_eq!(m2.on_boundary.iter().filter(|&&b| b).count(), 26 + 24);
        assert!(validate_patch_geometry(&m2).is_empty());
        let single =
            TetMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], vec![[0, 1, 2, 3]], &BoundarySpec::default())
                .unwrap();
        assert!(validate_patch_geometry(&single).is_empty());
        let two = TetMesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]],
            vec![[0, 1, 2, 3], [0, 1, 2, 4]],
            &BoundarySpec::default(),
        )
        .unwrap();
        assert_eq!(vertex_patch(&two, 0).tets.len(), 2);
        assert!(validate_patch_geometry(&two).is_empty());
    }

    #[test]
    fn interior_faces_have_opposite_normals() {
        let m = build_structured_cube_mesh(2).unwrap();
        for f in 0..m.faces.len() {
            if let (k, Some(n)) = m.face_tets[f] {
                let lk = m.tet_faces[k].iter().position(|&x| x == f).unwrap();
                let ln = m.tet_faces[n].iter().position(|&x| x == f).unwrap();
                let d = crate::geometry::dot(m.outward_normal(k, lk), m.outward_normal(n, ln));
                assert!((d + 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hat_functions() {
        let m = build_structured_cube_mesh(1).unwrap();
        let k = 5;
        let t = m.tets[k];
        let (v, _) = hat_eval(&m, t[2], k, m.vertices[t[2]]).unwrap();
        assert!((v - 1.0).abs() < 1e-14);
        let pts = m.tet_points(k);
        let bc = scale(0.25, add(add(pts[0], pts[1]), add(pts[2], pts[3])));
        let (v, _) = hat_eval(&m, t[0], k, bc).unwrap();
        assert!((v - 0.25).abs() < 1e-14);
        let outside = (0..15).find(|v| !t.contains(v)).unwrap();
        assert!(hat_eval(&m, outside, k, bc).is_err());
    }

    #[test]
    fn mesh_file_roundtrip_and_errors() {
        let m = build_structured_cube_mesh(1).unwrap();
        let text = format_mesh(&m);
        let back = parse_mesh(&text, None).unwrap();
        assert_eq!(back.tets, m.tets);
        assert_eq!(back.faces.len(), m.faces.len());
        assert_eq!(back.face_kind, m.face_kind);

        let bad = "tetmesh 1\nvertices 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\ntets 1\n0 1 1 3\n";
        let e = parse_mesh(bad, Some(&BoundarySpec::default())).unwrap_err();
        assert!(e.to_string().contains("degenerate element"));

        let two = "tetmesh 1\nvertices 5\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n0 0 -1\ntets 2\n0 1 2 3\n0 1 2 4\nboundary 1\n0 1 2 D\n";
        let e = parse_mesh(two, None).unwrap_err();
        assert!(e.to_string().contains("non-manifold/bad boundary"));

        let untagged = "tetmesh 1\nvertices 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\ntets 1\n0 1 2 3\nboundary 1\n0 1 2 D\n";
        let e = parse_mesh(untagged, None).unwrap_err();
        assert!(e.to_string().contains("untagged boundary face"));

        let e = parse_mesh("tetmesh 1\nvertices 1\n0 0 x\n", None).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }));
    }

    #[test]
    fn lshape_volume() {
        let m = build_lshape_mesh(1, &BoundarySpec::default()).unwrap();
        assert_eq!(m.num_tets(), 3 * 24);
        assert!((m.total_volume() - 3.0).abs() < 1e-12);
    }
}
