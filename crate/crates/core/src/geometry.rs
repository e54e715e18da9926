//! Internal coordinates along paths: bond lengths, bond angles and dihedrals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{distance, Graph, Point};
use crate::paths::Path;

/// Norm guard for bond vectors and plane normals, in Å (or Å² for normals).
pub const NORM_EPS: f64 = 1e-8;

fn sub(a: &Point, b: &Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Point, b: &Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

fn point(coords: &[Point], i: usize) -> Result<&Point> {
    coords.get(i).ok_or(Error::NodeOutOfRange {
        node: i,
        n: coords.len(),
    })
}

/// Angle at `w` between bonds `w→v` and `w→y`, in `[0, π]`.
pub fn bond_angle(coords: &[Point], v: usize, w: usize, y: usize) -> Result<f64> {
    Ok(bond_angle_cos(coords, v, w, y)?.acos())
}

fn bond_angle_cos(coords: &[Point], v: usize, w: usize, y: usize) -> Result<f64> {
    let a = sub(point(coords, v)?, point(coords, w)?);
    let b = sub(point(coords, y)?, point(coords, w)?);
    let (na, nb) = (norm(&a), norm(&b));
    if na <= NORM_EPS || nb <= NORM_EPS {
        return Err(Error::DegenerateGeometry {
            atoms: vec![v, w, y],
            reason: "zero-length bond vector",
        });
    }
    Ok((dot(&a, &b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Signed dihedral of `v-w-y-x` about the `w→y` axis, in `(-π, π]`.
/// Cis-planar is 0, trans-planar is π.
pub fn dihedral(coords: &[Point], v: usize, w: usize, y: usize, x: usize) -> Result<f64> {
    let (c, s) = dihedral_components(coords, v, w, y, x)?;
    let phi = s.atan2(c);
    Ok(if phi <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        phi
    })
}

// (cos φ, sin φ) from n1·n2 and |b2| b1·n2, both over |n1||n2|.
fn dihedral_components(coords: &[Point], v: usize, w: usize, y: usize, x: usize) -> Result<(f64, f64)> {
    let b1 = sub(point(coords, w)?, point(coords, v)?);
    let b2 = sub(point(coords, y)?, point(coords, w)?);
    let b3 = sub(point(coords, x)?, point(coords, y)?);
    let atoms = || vec![v, w, y, x];
    if [norm(&b1), norm(&b2), norm(&b3)].iter().any(|&l| l <= NORM_EPS) {
        return Err(Error::DegenerateGeometry {
            atoms: atoms(),
            reason: "zero-length bond vector",
        });
    }
    let n1 = cross(&b1, &b2);
    let n2 = cross(&b2, &b3);
    let (l1, l2) = (norm(&n1), norm(&n2));
    if l1 <= NORM_EPS || l2 <= NORM_EPS {
        return Err(Error::DegenerateGeometry {
            atoms: atoms(),
            reason: "collinear atoms leave the dihedral plane undefined",
        });
    }
    let cos = dot(&n1, &n2) / (l1 * l2);
    let sin = norm(&b2) * dot(&b1, &n2) / (l1 * l2);
    // renormalise so cos² + sin² = 1 to machine precision
    let r = cos.hypot(sin);
    Ok((cos / r, sin / r))
}

/// Dihedral encoded as a (cos, sin) pair, with a flag for the collinear case.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DihedralFeature {
    pub cos: f64,
    pub sin: f64,
    pub degenerate: bool,
}

impl DihedralFeature {
    /// Stand-in emitted when three consecutive atoms are collinear.
    pub const DEGENERATE: DihedralFeature = DihedralFeature {
        cos: 1.0,
        sin: 0.0,
        degenerate: true,
    };
}

/// Geometry features of a path: one bond length per edge, one angle cosine
/// per interior node, and a dihedral for length-3 paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryFeatures {
    pub bond_lengths: Vec<f64>,
    pub angle_cosines: Vec<f64>,
    pub dihedral: Option<DihedralFeature>,
}

impl GeometryFeatures {
    /// Flattened width for a path with `len` edges.
    pub fn width(len: usize) -> usize {
        len + len.saturating_sub(1) + if len >= 3 { 3 } else { 0 }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = self.bond_lengths.clone();
        out.extend_from_slice(&self.angle_cosines);
        if let Some(d) = self.dihedral {
            out.extend_from_slice(&[d.cos, d.sin, if d.degenerate { 1.0 } else { 0.0 }]);
        }
        out
    }
}

/// Internal-coordinate features along `path`.
///
/// Bond lengths and angle cosines cover every edge and interior node; the
/// dihedral is defined by the first four nodes and present only for paths
/// of length 3 or more. A collinear triple yields
/// [`DihedralFeature::DEGENERATE`] instead of an error.
pub fn geometry_path_features(graph: &Graph, path: &Path) -> Result<GeometryFeatures> {
    let coords = graph
        .coords()
        .ok_or_else(|| Error::config("geometry features need coordinates"))?;
    let p = path.nodes();
    let bond_lengths = p
        .windows(2)
        .map(|w| Ok(distance(point(coords, w[0])?, point(coords, w[1])?)))
        .collect::<Result<Vec<_>>>()?;
    let angle_cosines = p
        .windows(3)
        .map(|w| bond_angle_cos(coords, w[0], w[1], w[2]))
        .collect::<Result<Vec<_>>>()?;
    let dihedral = if p.len() >= 4 {
        match dihedral_components(coords, p[0], p[1], p[2], p[3]) {
            Ok((cos, sin)) => Some(DihedralFeature {
                cos,
                sin,
                degenerate: false,
            }),
            Err(Error::DegenerateGeometry {
                reason: "collinear atoms leave the dihedral plane undefined",
                ..
            }) => Some(DihedralFeature::DEGENERATE),
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(GeometryFeatures {
        bond_lengths,
        angle_cosines,
        dihedral,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn right_angle() {
        let c = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!((bond_angle(&c, 0, 1, 2).unwrap() - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn straight_angle() {
        let c = [[-1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [2.5, 0.0, 0.0]];
        assert_eq!(bond_angle(&c, 0, 1, 2).unwrap(), PI);
    }

    #[test]
    fn tetrahedral_angle() {
        // carbon at the origin, hydrogens on alternating cube corners
        let c = [
            [0.0, 0.0, 0.0],
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ];
        let expected = (-1.0f64 / 3.0).acos();
        for (a, b) in [(1, 2), (1, 3), (2, 4), (3, 4)] {
            assert!((bond_angle(&c, a, 0, b).unwrap() - expected).abs() < 1e-6);
        }
        assert!((expected.to_degrees() - 109.47).abs() < 0.01);
    }

    #[test]
    fn zero_length_bond_is_an_error() {
        let c = [[0.0; 3], [0.0; 3], [1.0, 0.0, 0.0]];
        assert!(matches!(
            bond_angle(&c, 0, 1, 2),
            Err(Error::DegenerateGeometry { .. })
        ));
    }

    const CIS: [Point; 4] = [[1.0, 1.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [2.0, 1.0, 0.0]];
    const TRANS: [Point; 4] = [[1.0, 1.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [2.0, -1.0, 0.0]];

    #[test]
    fn planar_cis_and_trans() {
        assert_eq!(dihedral(&CIS, 0, 1, 2, 3).unwrap(), 0.0);
        assert_eq!(dihedral(&TRANS, 0, 1, 2, 3).unwrap(), PI);
    }

    #[test]
    fn sign_follows_right_hand_rule() {
        // x rotated +90° about the w→y axis (+x) relative to v
        let c = [[1.0, 1.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [2.0, 0.0, 1.0]];
        let phi = dihedral(&c, 0, 1, 2, 3).unwrap();
        assert!((phi.abs() - PI / 2.0).abs() < 1e-12);
        let mirrored: Vec<Point> = c.iter().map(|p| [p[0], p[1], -p[2]]).collect();
        assert_eq!(dihedral(&mirrored, 0, 1, 2, 3).unwrap(), -phi);
    }

    #[test]
    fn collinear_dihedral_errors_but_features_fall_back() {
        let c = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [2.0, 1.0, 0.0]];
        assert!(dihedral(&c, 0, 1, 2, 3).is_err());
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)])
            .unwrap()
            .with_coords(c)
            .unwrap();
        let f = geometry_path_features(&g, &Path::new(vec![0, 1, 2, 3])).unwrap();
        assert_eq!(f.dihedral, Some(DihedralFeature::DEGENERATE));
    }

    #[test]
    fn feature_shapes_by_length() {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)])
            .unwrap()
            .with_coords(TRANS.to_vec())
            .unwrap();
        let f1 = geometry_path_features(&g, &Path::new(vec![0, 1])).unwrap();
        assert_eq!((f1.bond_lengths.len(), f1.angle_cosines.len()), (1, 0));
        let f2 = geometry_path_features(&g, &Path::new(vec![0, 1, 2])).unwrap();
        assert_eq!((f2.bond_lengths.len(), f2.angle_cosines.len()), (2, 1));
        assert!(f2.dihedral.is_none());
        let f3 = geometry_path_features(&g, &Path::new(vec![0, 1, 2, 3])).unwrap();
        let d = f3.dihedral.unwrap();
        assert_eq!((d.cos, d.sin), (-1.0, 0.0));
        for (len, f) in [(1, &f1), (2, &f2), (3, &f3)] {
            assert_eq!(f.to_vec().len(), GeometryFeatures::width(len));
        }
    }
}
