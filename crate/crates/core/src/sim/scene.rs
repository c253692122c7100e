//! Scene description (primitives + materials), the built-in scene set, JSON
//! persistence and the compiled triangle mesh used for ray casting.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::texture::Texture;
use super::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Material {
    Solid { color: [f64; 3] },
    /// `scale_m` is the physical size covered by the full texture on boxes
    /// and cylinders, whose coordinates are generated from their dimensions.
    Texture { texture: String, scale_m: f64, uv_offset: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    Triangle { vertices: [[f64; 3]; 3], uv: [[f64; 2]; 3], material: Material },
    /// Axis-aligned in z, rotated by `yaw_deg` about its vertical axis;
    /// `center` is the center of the bottom face.
    Box { center: [f64; 3], size: [f64; 3], yaw_deg: f64, material: Material },
    /// Vertical cylinder standing on `center`, capped top and bottom.
    Cylinder { center: [f64; 3], radius: f64, height: f64, segments: usize, material: Material },
}

/// Named collection of primitives with the textures they reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub name: String,
    pub primitives: Vec<Primitive>,
    pub textures: BTreeMap<String, Arc<Texture>>,
}

pub const SCENE_NAMES: [&str; 7] = ["A1", "A2", "A3", "B1", "B2", "B3", "rich_default"];

const TABLE_CENTER: [f64; 2] = [0.6, 0.0];
const TABLE_SIZE: f64 = 2.5;
const TEXTURE_PX: usize = 1024;
const RICH_SEED: u64 = 0x5eed;
const PLAIN: [f64; 3] = [0.62, 0.6, 0.55];

fn material_color(m: &Material) -> Option<[f64; 3]> {
    match m {
        Material::Solid { color } => Some(*color),
        Material::Texture { .. } => None,
    }
}

/// Table plane as two triangles with texture coordinates spanning [0, 1].
fn table(material: Material) -> Vec<Primitive> {
    let h = TABLE_SIZE / 2.0;
    let [cx, cy] = TABLE_CENTER;
    let corners = [[cx - h, cy - h, 0.0], [cx + h, cy - h, 0.0], [cx + h, cy + h, 0.0], [cx - h, cy + h, 0.0]];
    let uv = |c: [f64; 3]| [(c[0] - (cx - h)) / TABLE_SIZE, (c[1] - (cy - h)) / TABLE_SIZE];
    vec![
        Primitive::Triangle {
            vertices: [corners[0], corners[1], corners[2]],
            uv: [uv(corners[0]), uv(corners[1]), uv(corners[2])],
            material: material.clone(),
        },
        Primitive::Triangle {
            vertices: [corners[0], corners[2], corners[3]],
            uv: [uv(corners[0]), uv(corners[2]), uv(corners[3])],
            material,
        },
    ]
}

enum Shape {
    Box([f64; 3], [f64; 3], f64),
    Cyl([f64; 3], f64, f64),
}

fn clutter() -> Vec<Shape> {
    use Shape::*;
    vec![
        Box([0.5, 0.2, 0.0], [0.15, 0.1, 0.08], 20.0),
        Box([0.78, -0.25, 0.0], [0.12, 0.2, 0.12], -35.0),
        Box([0.98, 0.3, 0.0], [0.2, 0.1, 0.15], 10.0),
        Box([0.42, -0.38, 0.0], [0.08, 0.08, 0.05], 45.0),
        Box([0.72, 0.55, 0.0], [0.1, 0.16, 0.1], -10.0),
        Box([1.1, -0.05, 0.0], [0.1, 0.3, 0.06], 5.0),
        Cyl([0.65, 0.04, 0.0], 0.05, 0.12),
        Cyl([0.9, -0.02, 0.0], 0.035, 0.2),
        Cyl([0.38, -0.12, 0.0], 0.06, 0.05),
        Cyl([0.58, -0.6, 0.0], 0.05, 0.1),
        Cyl([0.3, 0.45, 0.0], 0.04, 0.09),
    ]
}

fn objects(material: impl Fn(usize) -> Material) -> Vec<Primitive> {
    clutter()
        .into_iter()
        .enumerate()
        .map(|(i, s)| match s {
            Shape::Box(center, size, yaw_deg) => Primitive::Box { center, size, yaw_deg, material: material(i) },
            Shape::Cyl(center, radius, height) => {
                Primitive::Cylinder { center, radius, height, segments: 24, material: material(i) }
            }
        })
        .collect()
}

fn dot_texture() -> Texture {
    // Dot of radius 3 cm near the middle of the teaching view.
    let u = (0.62 - (TABLE_CENTER[0] - TABLE_SIZE / 2.0)) / TABLE_SIZE;
    let v = (0.03 - (TABLE_CENTER[1] - TABLE_SIZE / 2.0)) / TABLE_SIZE;
    Texture::red_dot(TEXTURE_PX, Vector3::from(PLAIN), u, v, 0.03 / TABLE_SIZE)
}

/// Deterministic construction of a named scene.
pub fn build_scene(name: &str) -> Result<SceneSpec, SimError> {
    let plain = Material::Solid { color: PLAIN };
    let on_table = |tex: &str| Material::Texture { texture: tex.into(), scale_m: TABLE_SIZE, uv_offset: [0.0, 0.0] };
    let mut textures = BTreeMap::new();
    let (plane, with_objects, object_material): (Material, bool, Box<dyn Fn(usize) -> Material>) = match name {
        "A1" => (plain.clone(), false, Box::new(|_| unreachable!())),
        "A2" => (on_table("dot"), false, Box::new(|_| unreachable!())),
        "A3" => (on_table("rich"), false, Box::new(|_| unreachable!())),
        "B1" => (plain.clone(), true, Box::new(move |_| Material::Solid { color: PLAIN })),
        "B2" => (on_table("dot"), true, Box::new(move |_| Material::Solid { color: PLAIN })),
        "B3" | "rich_default" => (
            on_table("rich"),
            true,
            Box::new(|i| Material::Texture {
                texture: "rich".into(),
                scale_m: TABLE_SIZE,
                uv_offset: [0.07 * i as f64 % 0.8, 0.13 * i as f64 % 0.8],
            }),
        ),
        other => return Err(SimError::UnknownScene(other.to_string())),
    };
    match &plane {
        Material::Texture { texture, .. } if texture == "dot" => {
            textures.insert("dot".to_string(), Arc::new(dot_texture()));
        }
        Material::Texture { .. } => {
            textures.insert("rich".to_string(), Arc::new(Texture::rich(TEXTURE_PX, RICH_SEED)));
        }
        Material::Solid { .. } => {}
    }
    let mut primitives = table(plane);
    if with_objects {
        primitives.extend(objects(object_material));
    }
    let spec = SceneSpec { name: name.to_string(), primitives, textures };
    spec.validate()?;
    Ok(spec)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    name: String,
    /// Texture name to PNG path, relative to the scene file.
    textures: BTreeMap<String, String>,
    primitives: Vec<Primitive>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScene(m));
        let check_material = |m: &Material| -> Result<(), SimError> {
            match m {
                Material::Solid { color } => {
                    if color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                        return Err(SimError::InvalidScene(format!("color {color:?} outside [0, 1]")));
                    }
                }
                Material::Texture { texture, scale_m, uv_offset } => {
                    if !self.textures.contains_key(texture) {
                        return Err(SimError::InvalidScene(format!("unknown texture `{texture}`")));
                    }
                    if !(*scale_m > 0.0) || uv_offset.iter().any(|o| !(0.0..=1.0).contains(o)) {
                        return Err(SimError::InvalidScene("bad texture scale or offset".into()));
                    }
                }
            }
            Ok(())
        };
        for p in &self.primitives {
            match p {
                Primitive::Triangle { vertices, uv, material } => {
                    check_material(material)?;
                    let [a, b, c] = vertices.map(Vector3::from);
                    if (b - a).cross(&(c - a)).norm() < 1e-12 {
                        return bad(format!("degenerate triangle {vertices:?}"));
                    }
                    if uv.iter().flatten().any(|t| !(0.0..=1.0).contains(t)) {
                        return bad(format!("texture coordinates {uv:?} outside [0, 1]"));
                    }
                }
                Primitive::Box { size, material, .. } => {
                    check_material(material)?;
                    if size.iter().any(|s| !(*s > 0.0)) {
                        return bad(format!("box size {size:?} must be positive"));
                    }
                }
                Primitive::Cylinder { radius, height, segments, material, .. } => {
                    check_material(material)?;
                    if !(*radius > 0.0 && *height > 0.0) || *segments < 3 {
                        return bad("cylinder needs positive radius/height and at least 3 segments".into());
                    }
                }
            }
        }
        Ok(())
    }

    /// Writes `scene.json` plus one PNG per texture into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), SimError> {
        fs::create_dir_all(dir).map_err(|e| SimError::Io(e.to_string()))?;
        let mut textures = BTreeMap::new();
        for (name, tex) in &self.textures {
            let file = format!("{name}.png");
            tex.save_png(&dir.join(&file))?;
            textures.insert(name.clone(), file);
        }
        let file = SceneFile { name: self.name.clone(), textures, primitives: self.primitives.clone() };
        let json = serde_json::to_string_pretty(&file).map_err(|e| SimError::InvalidScene(e.to_string()))?;
        fs::write(dir.join("scene.json"), json).map_err(|e| SimError::Io(e.to_string()))
    }

    /// Reads a scene JSON file; texture paths resolve relative to it.
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        let file: SceneFile = serde_json::from_str(&text).map_err(|e| SimError::InvalidScene(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut textures = BTreeMap::new();
        for (name, rel) in file.textures {
            textures.insert(name, Arc::new(Texture::load_png(&base.join(rel))?));
        }
        let spec = SceneSpec { name: file.name, primitives: file.primitives, textures };
        spec.validate()?;
        Ok(spec)
    }

    pub fn triangle_count(&self) -> usize {
        self.primitives
            .iter()
            .map(|p| match p {
                Primitive::Triangle { .. } => 1,
                Primitive::Box { .. } => 12,
                Primitive::Cylinder { segments, .. } => 4 * segments,
            })
            .sum()
    }

    /// True when every primitive uses one and the same solid color.
    pub fn is_single_color(&self) -> bool {
        let colors: Vec<Option<[f64; 3]>> =
            self.primitives.iter().map(|p| material_color(primitive_material(p))).collect();
        colors.iter().all(|c| c.is_some() && *c == colors[0])
    }

    pub fn compile(&self) -> SceneMesh {
        SceneMesh::new(self)
    }
}

fn primitive_material(p: &Primitive) -> &Material {
    match p {
        Primitive::Triangle { material, .. } | Primitive::Box { material, .. } | Primitive::Cylinder { material, .. } => {
            material
        }
    }
}

#[derive(Debug, Clone)]
struct Tri {
    v0: Vector3<f64>,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    uv0: Vector2<f64>,
    duv1: Vector2<f64>,
    duv2: Vector2<f64>,
}

impl Tri {
    fn new(v: [Vector3<f64>; 3], uv: [Vector2<f64>; 3]) -> Self {
        Self { v0: v[0], e1: v[1] - v[0], e2: v[2] - v[0], uv0: uv[0], duv1: uv[1] - uv[0], duv2: uv[2] - uv[0] }
    }

    /// Moller-Trumbore; returns `(t, b1, b2)`.
    fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let p = d.cross(&self.e2);
        let det = self.e1.dot(&p);
        if det.abs() < 1e-14 {
            return None;
        }
        let inv = 1.0 / det;
        let s = o - self.v0;
        let b1 = s.dot(&p) * inv;
        if !(0.0..=1.0).contains(&b1) {
            return None;
        }
        let q = s.cross(&self.e1);
        let b2 = d.dot(&q) * inv;
        if b2 < 0.0 || b1 + b2 > 1.0 {
            return None;
        }
        Some((self.e2.dot(&q) * inv, b1, b2))
    }
}

#[derive(Debug, Clone)]
enum Shade {
    Solid(Vector3<f64>),
    Texture(Arc<Texture>),
}

#[derive(Debug, Clone)]
struct Group {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
    tris: Vec<Tri>,
    shade: Shade,
}

impl Group {
    /// Slab test against the bounding box for `t` in `[0, t_max]`.
    fn may_hit(&self, o: &Vector3<f64>, inv_d: &Vector3<f64>, t_max: f64) -> bool {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for a in 0..3 {
            let ta = (self.lo[a] - 1e-9 - o[a]) * inv_d[a];
            let tb = (self.hi[a] + 1e-9 - o[a]) * inv_d[a];
            let (near, far) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            if near.is_nan() || far.is_nan() {
                // Ray parallel to this slab: inside iff the origin lies in it.
                if o[a] < self.lo[a] - 1e-9 || o[a] > self.hi[a] + 1e-9 {
                    return false;
                }
                continue;
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return false;
            }
        }
        true
    }
}

/// Nearest intersection along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vector3<f64>,
    pub color: Vector3<f64>,
}

/// Triangle soup grouped per primitive with bounding boxes for culling.
#[derive(Debug, Clone)]
pub struct SceneMesh {
    groups: Vec<Group>,
}

fn uv_of(offset: [f64; 2], scale: f64, a: f64, b: f64) -> Vector2<f64> {
    Vector2::new((offset[0] + a / scale).clamp(0.0, 1.0), (offset[1] + b / scale).clamp(0.0, 1.0))
}

impl SceneMesh {
    fn new(spec: &SceneSpec) -> Self {
        let mut groups = Vec::new();
        for p in &spec.primitives {
            let material = primitive_material(p);
            let (shade, scale, offset) = match material {
                Material::Solid { color } => (Shade::Solid(Vector3::from(*color)), 1.0, [0.0, 0.0]),
                Material::Texture { texture, scale_m, uv_offset } => {
                    (Shade::Texture(spec.textures[texture].clone()), *scale_m, *uv_offset)
                }
            };
            let mut tris = Vec::new();
            match p {
                Primitive::Triangle { vertices, uv, .. } => {
                    tris.push(Tri::new(vertices.map(Vector3::from), uv.map(Vector2::from)));
                }
                Primitive::Box { center, size, yaw_deg, .. } => {
                    let (s, c) = yaw_deg.to_radians().sin_cos();
                    let base = Vector3::from(*center);
                    let corner = |i: usize| {
                        let lx = if i & 1 == 0 { -0.5 } else { 0.5 } * size[0];
                        let ly = if i & 2 == 0 { -0.5 } else { 0.5 } * size[1];
                        let lz = if i & 4 == 0 { 0.0 } else { size[2] };
                        (base + Vector3::new(c * lx - s * ly, s * lx + c * ly, lz), Vector3::new(lx, ly, lz))
                    };
                    // Faces as corner index quads; texture axes from the local
                    // coordinates spanning each face.
                    let faces: [([usize; 4], (usize, usize)); 6] = [
                        ([0, 1, 3, 2], (0, 1)),
                        ([4, 5, 7, 6], (0, 1)),
                        ([0, 1, 5, 4], (0, 2)),
                        ([2, 3, 7, 6], (0, 2)),
                        ([0, 2, 6, 4], (1, 2)),
                        ([1, 3, 7, 5], (1, 2)),
                    ];
                    for (q, (ax, ay)) in faces {
                        let pts = q.map(corner);
                        let uvs = pts.map(|(_, l)| {
                            uv_of(offset, scale, l[ax] + 0.5 * size[ax], l[ay] + if ay == 2 { 0.0 } else { 0.5 * size[ay] })
                        });
                        let v = pts.map(|(w, _)| w);
                        tris.push(Tri::new([v[0], v[1], v[2]], [uvs[0], uvs[1], uvs[2]]));
                        tris.push(Tri::new([v[0], v[2], v[3]], [uvs[0], uvs[2], uvs[3]]));
                    }
                }
                Primitive::Cylinder { center, radius, height, segments, .. } => {
                    let base = Vector3::from(*center);
                    let top = base + Vector3::new(0.0, 0.0, *height);
                    let n = *segments;
                    let rim = |k: usize, z: f64| {
                        let a = std::f64::consts::TAU * (k % n) as f64 / n as f64;
                        base + Vector3::new(radius * a.cos(), radius * a.sin(), z)
                    };
                    let arc = |k: usize| std::f64::consts::TAU * radius * k as f64 / n as f64;
                    let cap_uv = |p: Vector3<f64>| uv_of(offset, scale, p.x - base.x + radius, p.y - base.y + radius);
                    for k in 0..n {
                        let (b0, b1, t0, t1) = (rim(k, 0.0), rim(k + 1, 0.0), rim(k, *height), rim(k + 1, *height));
                        let (u0, u1) = (arc(k), arc(k + 1));
                        let uvb0 = uv_of(offset, scale, u0, 0.0);
                        let uvb1 = uv_of(offset, scale, u1, 0.0);
                        let uvt0 = uv_of(offset, scale, u0, *height);
                        let uvt1 = uv_of(offset, scale, u1, *height);
                        tris.push(Tri::new([b0, b1, t1], [uvb0, uvb1, uvt1]));
                        tris.push(Tri::new([b0, t1, t0], [uvb0, uvt1, uvt0]));
                        tris.push(Tri::new([top, t0, t1], [cap_uv(top), cap_uv(t0), cap_uv(t1)]));
                        tris.push(Tri::new([base, b1, b0], [cap_uv(base), cap_uv(b1), cap_uv(b0)]));
                    }
                }
            }
            let mut lo = Vector3::repeat(f64::INFINITY);
            let mut hi = Vector3::repeat(f64::NEG_INFINITY);
            for t in &tris {
                for v in [t.v0, t.v0 + t.e1, t.v0 + t.e2] {
                    lo = lo.inf(&v);
                    hi = hi.sup(&v);
                }
            }
            groups.push(Group { lo, hi, tris, shade });
        }
        Self { groups }
    }

    /// Closest hit with `t` in `(t_min, t_max]` along `o + t d`.
    pub fn intersect(&self, o: &Vector3<f64>, d: &Vector3<f64>, t_min: f64, t_max: f64) -> Option<Hit> {
        let inv_d = d.map(|x| 1.0 / x);
        let mut best: Option<(f64, usize, usize, f64, f64)> = None;
        let mut limit = t_max;
        for (gi, g) in self.groups.iter().enumerate() {
            if !g.may_hit(o, &inv_d, limit) {
                continue;
            }
            for (ti, tri) in g.tris.iter().enumerate() {
                if let Some((t, b1, b2)) = tri.intersect(o, d) {
                    if t > t_min && t <= limit {
                        limit = t;
                        best = Some((t, gi, ti, b1, b2));
                    }
                }
            }
        }
        let (t, gi, ti, b1, b2) = best?;
        let g = &self.groups[gi];
        let color = match &g.shade {
            Shade::Solid(c) => *c,
            Shade::Texture(tex) => {
                let tri = &g.tris[ti];
                let uv = tri.uv0 + tri.duv1 * b1 + tri.duv2 * b2;
                tex.sample(uv.x, uv.y)
            }
        };
        Some(Hit { t, point: o + d * t, color })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn a1_is_two_uniform_triangles() {
        let s = build_scene("A1").unwrap();
        assert_eq!(s.primitives.len(), 2);
        assert_eq!(s.triangle_count(), 2);
        assert!(s.is_single_color());
        assert!(s.textures.is_empty());
    }

    #[test]
    fn a_ladder_shares_geometry() {
        let geom = |s: &SceneSpec| {
            s.primitives
                .iter()
                .map(|p| match p {
                    Primitive::Triangle { vertices, uv, .. } => (*vertices, *uv),
                    _ => panic!("A scenes are planar"),
                })
                .collect::<Vec<_>>()
        };
        let a1 = build_scene("A1").unwrap();
        let a2 = build_scene("A2").unwrap();
        let a3 = build_scene("A3").unwrap();
        assert_eq!(geom(&a1), geom(&a3));
        assert_eq!(geom(&a1), geom(&a2));
        assert_ne!(a1.primitives, a3.primitives);
        assert_ne!(a2.primitives, a3.primitives);
    }

    #[test]
    fn b_scenes_add_primitives() {
        let a1 = build_scene("A1").unwrap();
        for name in ["B1", "B2", "B3", "rich_default"] {
            let b = build_scene(name).unwrap();
            assert!(b.primitives.len() > a1.primitives.len());
        }
        assert!(build_scene("B1").unwrap().is_single_color());
        assert!(!build_scene("B3").unwrap().is_single_color());
        assert!(matches!(build_scene("C7"), Err(SimError::UnknownScene(_))));
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = build_scene("B2").unwrap();
        s.save(dir.path()).unwrap();
        let back = SceneSpec::load(&dir.path().join("scene.json")).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn invalid_scenes_rejected() {
        let mut s = build_scene("A1").unwrap();
        s.primitives.push(Primitive::Triangle {
            vertices: [[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
            uv: [[0.0; 2]; 3],
            material: Material::Solid { color: [0.5; 3] },
        });
        assert!(s.validate().is_err());
        let mut s = build_scene("A1").unwrap();
        s.primitives.push(Primitive::Box {
            center: [0.0; 3],
            size: [0.1; 3],
            yaw_deg: 0.0,
            material: Material::Texture { texture: "missing".into(), scale_m: 1.0, uv_offset: [0.0; 2] },
        });
        assert!(s.validate().is_err());
    }

    #[test]
    fn rays_hit_nearest_surface() {
        let mesh = build_scene("B1").unwrap().compile();
        // Straight down onto the first box top (height 0.08 at (0.5, 0.2)).
        let hit = mesh.intersect(&Vector3::new(0.5, 0.2, 1.0), &Vector3::new(0.0, 0.0, -1.0), 0.0, 10.0).unwrap();
        assert!((hit.t - 0.92).abs() < 1e-12);
        // Between objects the table is hit.
        let hit = mesh.intersect(&Vector3::new(0.2, 0.0, 1.0), &Vector3::new(0.0, 0.0, -1.0), 0.0, 10.0).unwrap();
        assert!((hit.point.z).abs() < 1e-12);
        // Off the table there is nothing.
        assert!(mesh.intersect(&Vector3::new(5.0, 0.0, 1.0), &Vector3::new(0.0, 0.0, -1.0), 0.0, 10.0).is_none());
        // Horizontal ray through the tall cylinder at (0.9, -0.02).
        let hit = mesh.intersect(&Vector3::new(0.9, -1.0, 0.1), &Vector3::new(0.0, 1.0, 0.0), 0.0, 10.0).unwrap();
        assert!((hit.point.y - (-0.02 - 0.035)).abs() < 2e-3);
    }
}
