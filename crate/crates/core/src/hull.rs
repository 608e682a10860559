//! 3D convex hull by quickhull, used to complete object selections.

use nalgebra::Vector3;

/// Outward-facing supporting plane `normal · x = offset`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Facet {
    pub vertices: [usize; 3],
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Facet {
    fn new(points: &[Vector3<f64>], vertices: [usize; 3], interior: &Vector3<f64>) -> Self {
        let [a, b, c] = vertices;
        let n = (points[b] - points[a]).cross(&(points[c] - points[a]));
        let n = n / n.norm();
        let mut f = Self {
            vertices,
            normal: n,
            offset: n.dot(&points[a]),
        };
        if f.distance(interior) > 0.0 {
            f.vertices = [a, c, b];
            f.normal = -n;
            f.offset = -f.offset;
        }
        f
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvexHull {
    pub facets: Vec<Facet>,
    /// Indices into the input points that lie on the hull.
    pub vertices: Vec<usize>,
}

struct Face {
    facet: Facet,
    outside: Vec<usize>,
    alive: bool,
}

impl ConvexHull {
    /// Hull of `points`, or `None` when fewer than four points span a
    /// volume.
    pub fn build(points: &[Vector3<f64>]) -> Option<Self> {
        if points.len() < 4 {
            return None;
        }
        let scale = points.iter().map(|p| p.amax()).fold(0.0, f64::max).max(1.0);
        let eps = 1e-10 * scale;
        let simplex = initial_simplex(points, eps)?;
        let interior = simplex.iter().fold(Vector3::zeros(), |a, &i| a + points[i]) / 4.0;

        let mut faces: Vec<Face> = [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]]
            .iter()
            .map(|t| Face {
                facet: Facet::new(points, [simplex[t[0]], simplex[t[1]], simplex[t[2]]], &interior),
                outside: Vec::new(),
                alive: true,
            })
            .collect();
        let candidates: Vec<usize> = (0..points.len()).filter(|i| !simplex.contains(i)).collect();
        assign(&mut faces, 0, &candidates, points, eps);

        while let Some(fi) = faces.iter().position(|f| f.alive && !f.outside.is_empty()) {
            let apex = *faces[fi]
                .outside
                .iter()
                .max_by(|&&a, &&b| {
                    let (da, db) = (
                        faces[fi].facet.distance(&points[a]),
                        faces[fi].facet.distance(&points[b]),
                    );
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("non-empty");
            let p = points[apex];
            let visible: Vec<usize> = (0..faces.len())
                .filter(|&i| faces[i].alive && faces[i].facet.distance(&p) > eps)
                .collect();
            let edges: std::collections::HashSet<(usize, usize)> = visible
                .iter()
                .flat_map(|&i| {
                    let [a, b, c] = faces[i].facet.vertices;
                    [(a, b), (b, c), (c, a)]
                })
                .collect();
            let mut horizon: Vec<(usize, usize)> = edges
                .iter()
                .copied()
                .filter(|&(a, b)| !edges.contains(&(b, a)))
                .collect();
            horizon.sort_unstable();
            let mut orphans: Vec<usize> = Vec::new();
            for &i in &visible {
                faces[i].alive = false;
                orphans.extend(faces[i].outside.drain(..).filter(|&q| q != apex));
            }
            orphans.sort_unstable();
            let first_new = faces.len();
            for (a, b) in horizon {
                faces.push(Face {
                    facet: Facet::new(points, [a, b, apex], &interior),
                    outside: Vec::new(),
                    alive: true,
                });
            }
            assign(&mut faces, first_new, &orphans, points, eps);
        }

        let facets: Vec<Facet> = faces.into_iter().filter(|f| f.alive).map(|f| f.facet).collect();
        let mut vertices: Vec<usize> = facets.iter().flat_map(|f| f.vertices).collect();
        vertices.sort_unstable();
        vertices.dedup();
        Some(Self { facets, vertices })
    }

    /// True if `p` satisfies every facet halfspace within `tol`.
    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        self.facets.iter().all(|f| f.distance(p) <= tol)
    }
}

fn assign(faces: &mut [Face], from: usize, points_idx: &[usize], points: &[Vector3<f64>], eps: f64) {
    for &q in points_idx {
        if let Some(f) = faces[from..]
            .iter_mut()
            .find(|f| f.alive && f.facet.distance(&points[q]) > eps)
        {
            f.outside.push(q);
        }
    }
}

/// Four affinely independent points, chosen from the extremes.
fn initial_simplex(points: &[Vector3<f64>], eps: f64) -> Option<[usize; 4]> {
    let mut a = 0;
    let mut b = 0;
    let mut best = -1.0;
    for axis in 0..3 {
        let lo = (0..points.len()).min_by(|&i, &j| points[i][axis].total_cmp(&points[j][axis]))?;
        let hi = (0..points.len()).max_by(|&i, &j| points[i][axis].total_cmp(&points[j][axis]))?;
        let d = (points[hi] - points[lo]).norm();
        if d > best {
            (a, b, best) = (lo, hi, d);
        }
    }
    if best <= eps {
        return None;
    }
    let ab = (points[b] - points[a]) / best;
    let c = (0..points.len()).max_by(|&i, &j| {
        let di = (points[i] - points[a]).cross(&ab).norm();
        let dj = (points[j] - points[a]).cross(&ab).norm();
        di.total_cmp(&dj)
    })?;
    let n = (points[b] - points[a]).cross(&(points[c] - points[a]));
    if n.norm() <= eps * best {
        return None;
    }
    let n = n.normalize();
    let d = (0..points.len()).max_by(|&i, &j| {
        n.dot(&(points[i] - points[a]))
            .abs()
            .total_cmp(&n.dot(&(points[j] - points[a])).abs())
    })?;
    if n.dot(&(points[d] - points[a])).abs() <= eps {
        return None;
    }
    Some([a, b, c, d])
}
