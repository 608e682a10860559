use cgc_core::hull::ConvexHull;
use cgc_core::scene::{Gaussian, GaussianCloud, IDENTITY_QUAT};
use cgc_core::segmenter::convex_hull_extract;
use nalgebra::Vector3;
use proptest::prelude::*;

/// Brute-force membership: `p` is inside iff it lies on the inner side of
/// every plane through three input points that supports the whole set.
fn inside_oracle(points: &[Vector3<f64>], p: &Vector3<f64>, tol: f64) -> bool {
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let normal = (points[j] - points[i]).cross(&(points[k] - points[i]));
                if normal.norm() < 1e-9 {
                    continue;
                }
                let normal = normal.normalize();
                let side: Vec<f64> = points.iter().map(|q| normal.dot(&(q - points[i]))).collect();
                let (lo, hi) = side.iter().fold((0.0f64, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));
                let d = normal.dot(&(p - points[i]));
                if lo > -1e-9 && d < -tol {
                    return false;
                }
                if hi < 1e-9 && d > tol {
                    return false;
                }
            }
        }
    }
    true
}

fn point() -> impl Strategy<Value = Vector3<f64>> {
    (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn membership_matches_brute_force(
        points in prop::collection::vec(point(), 4..12),
        probes in prop::collection::vec(point(), 20),
    ) {
        let Some(hull) = ConvexHull::build(&points) else { return Ok(()) };
        for p in &points {
            prop_assert!(hull.contains(p, 1e-9));
        }
        for p in &probes {
            // skip probes too close to the boundary to call either way
            let strict = hull.contains(p, -1e-6);
            let loose = hull.contains(p, 1e-6);
            if strict == loose {
                prop_assert_eq!(loose, inside_oracle(&points, p, 1e-9));
            }
        }
    }

    #[test]
    fn hull_does_not_depend_on_input_order(
        points in prop::collection::vec(point(), 4..30),
        probes in prop::collection::vec(point(), 20),
        rotate in 0usize..30,
    ) {
        let mut shuffled = points.clone();
        shuffled.reverse();
        let r = rotate % shuffled.len();
        shuffled.rotate_left(r);
        let (a, b) = (ConvexHull::build(&points), ConvexHull::build(&shuffled));
        prop_assert_eq!(a.is_some(), b.is_some());
        if let (Some(a), Some(b)) = (a, b) {
            for p in &probes {
                if a.contains(p, -1e-6) == a.contains(p, 1e-6) {
                    prop_assert_eq!(a.contains(p, 0.0), b.contains(p, 0.0));
                }
            }
            let verts = |h: &ConvexHull, pts: &[Vector3<f64>]| {
                let mut v: Vec<[u64; 3]> = h.vertices.iter().map(|&i| [pts[i].x.to_bits(), pts[i].y.to_bits(), pts[i].z.to_bits()]).collect();
                v.sort_unstable();
                v
            };
            prop_assert_eq!(verts(&a, &points), verts(&b, &shuffled));
        }
    }
}

fn cloud_at(points: &[Vector3<f64>]) -> GaussianCloud {
    let gs = points
        .iter()
        .map(|&p| {
            Gaussian::new(
                p,
                Vector3::new(0.05, 0.05, 0.05),
                IDENTITY_QUAT,
                0.5,
                Vector3::zeros(),
                vec![1.0],
            )
        })
        .collect();
    GaussianCloud::from_gaussians(1, gs).unwrap()
}

#[test]
fn extraction_picks_up_interior_non_seeds() {
    let mut pts: Vec<Vector3<f64>> = (0..8)
        .map(|i| Vector3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
        .collect();
    pts.push(Vector3::new(0.5, 0.5, 0.5));
    pts.push(Vector3::new(0.2, 0.9, 0.1));
    pts.push(Vector3::new(1.5, 0.5, 0.5));
    pts.push(Vector3::new(0.5, -0.01, 0.5));
    let sel = convex_hull_extract(&cloud_at(&pts), &[7, 0, 1, 2, 3, 4, 5, 6, 0]);
    assert!(!sel.degenerate);
    assert_eq!(sel.seed_indices, (0..8).collect::<Vec<_>>());
    assert_eq!(sel.hull_indices, (0..10).collect::<Vec<_>>());
}
