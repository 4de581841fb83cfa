//! Synthetic shapes and scenes, the `gpx-cloud 1` text format, dataset
//! indices, OFF mesh sampling and rotation augmentation.

use std::f64::consts::PI;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::cloud_ops::{transform_cloud, PointCloud};
use crate::group_algebra::{add, norm, sample_rotation, sub, FiniteRotationGroup, RigidMotion, RotationElement, RotationMode, Vec3};
use crate::{Error, Result};

pub const CUBE_HALF_EXTENT: f64 = 0.75;
pub const CYLINDER_RADIUS: f64 = 0.6;
pub const CYLINDER_HEIGHT: f64 = 1.6;
pub const CONE_HALF_ANGLE: f64 = PI / 6.0;
pub const CONE_HEIGHT: f64 = 1.5;
pub const TORUS_MAJOR: f64 = 1.0;
pub const TORUS_MINOR: f64 = 0.35;
/// Label of floor points in generated scenes; shapes use `1 + class index`.
pub const FLOOR_LABEL: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeClass {
    Sphere,
    Cube,
    Cylinder,
    Cone,
    Torus,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 5] = [
        ShapeClass::Sphere,
        ShapeClass::Cube,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Torus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Cube => "cube",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Cone => "cone",
            ShapeClass::Torus => "torus",
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::ConfigError(format!("unknown shape class `{s}`")))
    }
}

fn unit_disk<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let t = rng.random_range(0.0..2.0 * PI);
    (r * t.cos(), r * t.sin())
}

/// One point uniformly distributed on the surface of the canonical shape,
/// centered at the origin with its symmetry axis along z.
pub fn sample_surface_point<R: Rng + ?Sized>(class: ShapeClass, rng: &mut R) -> Vec3 {
    match class {
        ShapeClass::Sphere => loop {
            let v: Vec3 = std::array::from_fn(|_| StandardNormal.sample(rng));
            let n = norm(v);
            if n > 1e-12 {
                break [v[0] / n, v[1] / n, v[2] / n];
            }
        },
        ShapeClass::Cube => {
            let a = CUBE_HALF_EXTENT;
            let face = rng.random_range(0..6);
            let u = rng.random_range(-a..=a);
            let v = rng.random_range(-a..=a);
            let s = if face % 2 == 0 { a } else { -a };
            match face / 2 {
                0 => [s, u, v],
                1 => [u, s, v],
                _ => [u, v, s],
            }
        }
        ShapeClass::Cylinder => {
            let (r, h) = (CYLINDER_RADIUS, CYLINDER_HEIGHT);
            let side = 2.0 * PI * r * h;
            let cap = PI * r * r;
            let pick = rng.random_range(0.0..side + 2.0 * cap);
            if pick < side {
                let t = rng.random_range(0.0..2.0 * PI);
                [r * t.cos(), r * t.sin(), rng.random_range(-h / 2.0..=h / 2.0)]
            } else {
                let (x, y) = unit_disk(rng, r);
                let z = if pick < side + cap { h / 2.0 } else { -h / 2.0 };
                [x, y, z]
            }
        }
        ShapeClass::Cone => {
            let h = CONE_HEIGHT;
            let base = h * CONE_HALF_ANGLE.tan();
            let lateral = PI * base * (h * h + base * base).sqrt();
            let disk = PI * base * base;
            if rng.random_range(0.0..lateral + disk) < lateral {
                // distance from the apex grows like √u for uniform area
                let s = rng.random::<f64>().sqrt();
                let t = rng.random_range(0.0..2.0 * PI);
                [base * s * t.cos(), base * s * t.sin(), h / 2.0 - h * s]
            } else {
                let (x, y) = unit_disk(rng, base);
                [x, y, -h / 2.0]
            }
        }
        ShapeClass::Torus => loop {
            let (big, small) = (TORUS_MAJOR, TORUS_MINOR);
            let theta = rng.random_range(0.0..2.0 * PI);
            let phi = rng.random_range(0.0..2.0 * PI);
            let ring = big + small * phi.cos();
            if rng.random_range(0.0..big + small) <= ring {
                break [ring * theta.cos(), ring * theta.sin(), small * phi.sin()];
            }
        },
    }
}

/// `n` surface points of the canonical shape.
pub fn sample_shape<R: Rng + ?Sized>(class: ShapeClass, n: usize, rng: &mut R) -> Vec<Vec3> {
    (0..n).map(|_| sample_surface_point(class, rng)).collect()
}

fn jittered_shape<R: Rng + ?Sized>(class: ShapeClass, n: usize, noise: f64, rng: &mut R) -> Result<Vec<Vec3>> {
    let scale = rng.random_range(0.8..=1.2);
    let normal = Normal::new(0.0, noise).map_err(|_| Error::ConfigError(format!("invalid noise level {noise}")))?;
    Ok(sample_shape(class, n, rng)
        .into_iter()
        .map(|p| std::array::from_fn(|k| scale * p[k] + normal.sample(rng)))
        .collect())
}

/// `count` labeled clouds cycling through `classes` (sample `i` has label
/// `i % classes.len()`). Labels index into `classes`.
pub fn gen_shapes_with<R: Rng + ?Sized>(
    classes: &[ShapeClass],
    count: usize,
    points: usize,
    noise: f64,
    rng: &mut R,
) -> Result<Vec<(PointCloud, usize)>> {
    if classes.is_empty() {
        return Err(Error::ConfigError("at least one shape class is required".into()));
    }
    if points < 32 {
        return Err(Error::ConfigError(format!("{points} points per shape; at least 32 are required")));
    }
    (0..count)
        .map(|i| {
            let label = i % classes.len();
            let positions = jittered_shape(classes[label], points, noise, rng)?;
            Ok((PointCloud::with_unit_features(positions, None)?, label))
        })
        .collect()
}

/// `n_per_class` clouds of each class, deterministic in `seed`.
pub fn gen_shapes(
    classes: &[ShapeClass],
    n_per_class: usize,
    points: usize,
    noise: f64,
    seed: u64,
) -> Result<Vec<(PointCloud, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gen_shapes_with(classes, n_per_class * classes.len(), points, noise, &mut rng)
}

/// Half-width of the square floor of a generated scene.
pub const FLOOR_HALF_WIDTH: f64 = 4.0;
const SCENE_NOISE: f64 = 0.01;

/// A floor patch at `z = 0` with `num_objects` shapes resting on it, each
/// rotated about z. Floor points take label 0 and shape points `1 + class`.
pub fn gen_scene_with<R: Rng + ?Sized>(num_objects: usize, points: usize, rng: &mut R) -> Result<PointCloud> {
    if points < 256 {
        return Err(Error::ConfigError(format!("{points} points per scene; at least 256 are required")));
    }
    let floor_points = if num_objects == 0 { points } else { points / 4 };
    let per_object = if num_objects == 0 { 0 } else { (points - floor_points) / num_objects };
    let floor_points = points - per_object * num_objects;

    let mut centers: Vec<[f64; 2]> = Vec::new();
    let mut positions = Vec::with_capacity(points);
    let mut labels = Vec::with_capacity(points);
    for _ in 0..num_objects {
        let class = ShapeClass::ALL[rng.random_range(0..ShapeClass::ALL.len())];
        let mut shape = jittered_shape(class, per_object, SCENE_NOISE, rng)?;
        let spin = RotationElement::rot_z(rng.random_range(0.0..2.0 * PI));
        let lim = FLOOR_HALF_WIDTH - 1.5;
        let mut center = [0.0; 2];
        for attempt in 0..100 {
            center = [rng.random_range(-lim..lim), rng.random_range(-lim..lim)];
            let clear = centers.iter().all(|c| (c[0] - center[0]).hypot(c[1] - center[1]) > 3.0);
            if clear || attempt == 99 {
                break;
            }
        }
        centers.push(center);
        let lowest = shape.iter().map(|p| p[2]).fold(f64::INFINITY, f64::min);
        for p in &mut shape {
            *p = add(spin.apply(*p), [center[0], center[1], -lowest]);
        }
        positions.extend(shape);
        labels.extend(std::iter::repeat_n(1 + class as usize, per_object));
    }
    let normal = Normal::new(0.0, SCENE_NOISE).expect("positive constant");
    for _ in 0..floor_points {
        let w = FLOOR_HALF_WIDTH;
        positions.push([rng.random_range(-w..w), rng.random_range(-w..w), normal.sample(rng)]);
        labels.push(FLOOR_LABEL);
    }
    PointCloud::with_unit_features(positions, Some(labels))
}

pub fn gen_scene(num_objects: usize, points: usize, seed: u64) -> Result<PointCloud> {
    gen_scene_with(num_objects, points, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Text form of a cloud: a `gpx-cloud 1 <N> <d> <has_label>` header, then one
/// line `x y z f1..fd [label]` per point with 17 significant digits.
pub fn cloud_to_string(x: &PointCloud) -> String {
    let mut s = String::new();
    let has_label = x.labels.is_some() as u8;
    writeln!(s, "gpx-cloud 1 {} {} {has_label}", x.len(), x.feature_dim).unwrap();
    for i in 0..x.len() {
        let mut first = true;
        for v in x.positions[i].iter().chain(x.feature(i)) {
            if !first {
                s.push(' ');
            }
            first = false;
            write!(s, "{v:.16e}").unwrap();
        }
        if let Some(l) = &x.labels {
            write!(s, " {}", l[i]).unwrap();
        }
        s.push('\n');
    }
    s
}

/// Parses the text form. `path` is only used in error messages. A feature
/// dimension of 0 loads as the single constant feature 1.
pub fn cloud_from_str(text: &str, path: &Path) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    let bad_header = || Error::parse(path, 1, format!("expected `gpx-cloud 1 <N> <d> <has_label>`, got `{header}`"));
    if h.len() != 5 || h[0] != "gpx-cloud" || h[1] != "1" {
        return Err(bad_header());
    }
    let n: usize = h[2].parse().map_err(|_| bad_header())?;
    let d: usize = h[3].parse().map_err(|_| bad_header())?;
    let has_label = match h[4] {
        "0" => false,
        "1" => true,
        _ => return Err(bad_header()),
    };
    if n == 0 {
        return Err(Error::parse(path, 1, "a cloud needs at least one point"));
    }
    let width = 3 + d + has_label as usize;
    let mut positions = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(n * d.max(1));
    let mut labels = Vec::with_capacity(if has_label { n } else { 0 });
    let mut read = 0;
    for (ln, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if read == n {
            return Err(Error::parse(path, ln, format!("more than the {n} points declared in the header")));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != width {
            return Err(Error::parse(path, ln, format!("expected {width} fields, found {}", tokens.len())));
        }
        let mut vals = Vec::with_capacity(3 + d);
        for t in &tokens[..3 + d] {
            let v: f64 = t.parse().map_err(|_| Error::parse(path, ln, format!("`{t}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, ln, format!("non-finite value `{t}`")));
            }
            vals.push(v);
        }
        positions.push([vals[0], vals[1], vals[2]]);
        if d == 0 {
            features.push(1.0);
        } else {
            features.extend_from_slice(&vals[3..]);
        }
        if has_label {
            let t = tokens[3 + d];
            labels.push(t.parse().map_err(|_| Error::parse(path, ln, format!("`{t}` is not a label")))?);
        }
        read += 1;
    }
    if read != n {
        return Err(Error::parse(
            path,
            text.lines().count(),
            format!("header declares {n} points, body has {read}"),
        ));
    }
    PointCloud::new(positions, features, d.max(1), has_label.then_some(labels))
}

pub fn write_cloud(path: &Path, x: &PointCloud) -> Result<()> {
    std::fs::write(path, cloud_to_string(x)).map_err(|e| Error::io(path, e))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    cloud_from_str(&text, path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One `index.txt` line: a path relative to the index and either a class
/// label or `*` for per-point labels stored in the cloud.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexEntry {
    pub path: PathBuf,
    pub label: Option<usize>,
}

/// `index.txt`: an optional `# classes a b c` line, then `path label|*`
/// lines.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub split: Split,
    pub class_names: Vec<String>,
    pub entries: Vec<IndexEntry>,
}

pub const INDEX_FILE: &str = "index.txt";

impl DatasetIndex {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if !self.class_names.is_empty() {
            writeln!(s, "# classes {}", self.class_names.join(" ")).unwrap();
        }
        for e in &self.entries {
            match e.label {
                Some(l) => writeln!(s, "{} {l}", e.path.display()).unwrap(),
                None => writeln!(s, "{} *", e.path.display()).unwrap(),
            }
        }
        s
    }

    pub fn write(&self) -> Result<()> {
        let path = self.root.join(INDEX_FILE);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }

    /// Reads `<root>/index.txt` and checks that every referenced file exists
    /// and every label is in range.
    pub fn read(root: &Path, split: Split) -> Result<Self> {
        let path = root.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut class_names = Vec::new();
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("# classes") {
                class_names = rest.split_whitespace().map(String::from).collect();
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (file, label) = line
                .rsplit_once(char::is_whitespace)
                .ok_or_else(|| Error::parse(&path, i + 1, "expected `path label`"))?;
            let label = match label {
                "*" => None,
                l => Some(l.parse().map_err(|_| Error::parse(&path, i + 1, format!("bad label `{l}`")))?),
            };
            let rel = PathBuf::from(file.trim());
            if !root.join(&rel).is_file() {
                return Err(Error::parse(&path, i + 1, format!("missing file {}", rel.display())));
            }
            if let (Some(l), false) = (label, class_names.is_empty()) {
                if l >= class_names.len() {
                    return Err(Error::LabelError {
                        label: l,
                        classes: class_names.len(),
                    });
                }
            }
            entries.push(IndexEntry { path: rel, label });
        }
        Ok(DatasetIndex {
            root: root.to_path_buf(),
            split,
            class_names,
            entries,
        })
    }

    /// Loads every cloud with its class label (`None` for per-point labels).
    pub fn load(&self) -> Result<Vec<(PointCloud, Option<usize>)>> {
        self.entries
            .iter()
            .map(|e| Ok((read_cloud(&self.root.join(&e.path))?, e.label)))
            .collect()
    }
}

/// A triangle mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

/// Parses ASCII OFF with triangular faces.
pub fn parse_off(text: &str, path: &Path) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (ln, first) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let counts_inline = match first.strip_prefix("OFF") {
        Some(rest) => rest.trim().to_string(),
        None => return Err(Error::parse(path, ln, "missing `OFF` header")),
    };
    let (ln, counts) = if counts_inline.is_empty() {
        let (ln, l) = lines.next().ok_or_else(|| Error::parse(path, ln, "missing counts line"))?;
        (ln, l.to_string())
    } else {
        (ln, counts_inline)
    };
    let c: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::parse(path, ln, format!("bad count `{t}`"))))
        .collect::<Result<_>>()?;
    if c.len() < 2 {
        return Err(Error::parse(path, ln, "expected vertex and face counts"));
    }
    let (nv, nf) = (c[0], c[1]);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| Error::parse(path, ln, "fewer vertices than declared"))?;
        let v: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::parse(path, ln, format!("`{t}` is not a number"))))
            .collect::<Result<_>>()?;
        if v.len() < 3 || !v[..3].iter().all(|x| x.is_finite()) {
            return Err(Error::parse(path, ln, "a vertex needs three finite coordinates"));
        }
        vertices.push([v[0], v[1], v[2]]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| Error::parse(path, ln, "fewer faces than declared"))?;
        let f: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::parse(path, ln, format!("`{t}` is not an index"))))
            .collect::<Result<_>>()?;
        if f.first() != Some(&3) || f.len() < 4 {
            return Err(Error::parse(path, ln, "only triangular faces are supported"));
        }
        let tri = [f[1], f[2], f[3]];
        if let Some(&bad) = tri.iter().find(|&&i| i >= nv) {
            return Err(Error::parse(path, ln, format!("vertex index {bad} out of range")));
        }
        faces.push(tri);
    }
    Ok(Mesh { vertices, faces })
}

fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let (u, v) = (sub(b, a), sub(c, a));
    let cross = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    0.5 * norm(cross)
}

/// Area-weighted, uniform-barycentric surface samples in mesh coordinates.
/// Returns the samples and the face each came from.
pub fn sample_mesh<R: Rng + ?Sized>(mesh: &Mesh, n: usize, rng: &mut R) -> Result<(Vec<Vec3>, Vec<usize>)> {
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in &mesh.faces {
        total += triangle_area(mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateMesh(format!("{} faces with zero total area", mesh.faces.len())));
    }
    let mut points = Vec::with_capacity(n);
    let mut which = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random_range(0.0..total);
        let fi = cumulative.partition_point(|&c| c <= u).min(mesh.faces.len() - 1);
        let [a, b, c] = mesh.faces[fi].map(|i| mesh.vertices[i]);
        let r1 = rng.random::<f64>().sqrt();
        let r2 = rng.random::<f64>();
        let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
        points.push(std::array::from_fn(|k| wa * a[k] + wb * b[k] + wc * c[k]));
        which.push(fi);
    }
    Ok((points, which))
}

/// Centers on the sample mean and scales to unit max radius.
pub fn normalize_unit_radius(points: &mut [Vec3]) -> Result<()> {
    let n = points.len() as f64;
    let mean: Vec3 = std::array::from_fn(|k| points.iter().map(|p| p[k]).sum::<f64>() / n);
    let radius = points.iter().map(|p| norm(sub(*p, mean))).fold(0.0, f64::max);
    if !(radius > 0.0) {
        return Err(Error::DegenerateMesh("all samples coincide".into()));
    }
    for p in points.iter_mut() {
        *p = std::array::from_fn(|k| (p[k] - mean[k]) / radius);
    }
    Ok(())
}

/// `n` surface samples of an OFF mesh, centered and scaled to unit max
/// radius, with the constant feature 1.
pub fn sample_off_mesh(path: &Path, n: usize, seed: u64) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mesh = parse_off(&text, path)?;
    let (mut points, _) = sample_mesh(&mesh, n, &mut ChaCha8Rng::seed_from_u64(seed))?;
    normalize_unit_radius(&mut points)?;
    PointCloud::with_unit_features(points, None)
}

/// Random rotation applied to a whole cloud.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AugmentMode {
    #[default]
    None,
    /// A uniformly drawn element of the model's group.
    Group,
    ZAxis,
    So3,
}

impl fmt::Display for AugmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugmentMode::None => "none",
            AugmentMode::Group => "group",
            AugmentMode::ZAxis => "z_axis",
            AugmentMode::So3 => "so3",
        })
    }
}

impl FromStr for AugmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AugmentMode::None),
            "group" => Ok(AugmentMode::Group),
            "z_axis" | "z" => Ok(AugmentMode::ZAxis),
            "so3" => Ok(AugmentMode::So3),
            _ => Err(Error::ConfigError(format!("unknown rotation mode `{s}`"))),
        }
    }
}

/// Rotates `x` about the origin. `None` draws nothing from `rng`.
pub fn augment<R: Rng + ?Sized>(
    x: &PointCloud,
    mode: AugmentMode,
    group: &FiniteRotationGroup,
    rng: &mut R,
) -> Result<PointCloud> {
    let r = match mode {
        AugmentMode::None => return Ok(x.clone()),
        AugmentMode::Group => sample_rotation(rng, RotationMode::Group(group)),
        AugmentMode::ZAxis => sample_rotation(rng, RotationMode::ZAxis),
        AugmentMode::So3 => sample_rotation(rng, RotationMode::So3),
    };
    transform_cloud(&RigidMotion::free(r, [0.0; 3]), x)
}
