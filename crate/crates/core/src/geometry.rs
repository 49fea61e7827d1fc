//! The normalized utility simplex for the four prizes $1, $16, $21, $38.5.
//!
//! A monotone utility over those prizes is, up to an affine transformation,
//! a point `(u1, u2)` with `0 <= u1 <= u2 <= 1`: the utilities of $16 and
//! $21 once $1 is mapped to 0 and $38.5 to 1. The two spread decisions cut
//! this triangle along
//!
//! * `u2 = 4/3 u1` (base preferred to the rank-2 spread on or below it), and
//! * `u2 = 7/9 u1 + 2/9` (base preferred to the rank-3 spread on or above it),
//!
//! giving four regions. Each Holt–Laury safe-choice count `s` cuts out a
//! triangle with apex `(0, 1)` and base on the diagonal between
//! `u1 = s/10` and `u1 = (s+1)/10`.

use std::fmt;

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::choice::ChoicePattern;
use crate::lottery::TabulatedUtility;
use crate::scalar::{format_rational, int, ratio, Rational, Scalar};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("utility point ({u1}, {u2}) lies outside 0 <= u1 <= u2 <= 1")]
    OutsideSimplex { u1: f64, u2: f64 },
    #[error("utility point has a non-finite coordinate")]
    NonFinite,
    #[error("normalization needs four utility levels, got {0}")]
    NotFourPrizes(usize),
    #[error("utility is flat between the lowest and highest prize; normalization is undefined")]
    FlatUtility,
    #[error("safe-choice count {0} has no utility triangle (valid counts are 0..=9)")]
    SafeCountOutOfRange(u32),
}

/// A point of the normalized utility simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedUtilityPoint<S> {
    u1: S,
    u2: S,
}

impl<S: Scalar> NormalizedUtilityPoint<S> {
    pub fn new(u1: S, u2: S) -> Result<Self, GeometryError> {
        if u1.to_exact().is_none() || u2.to_exact().is_none() {
            return Err(GeometryError::NonFinite);
        }
        if u1 < S::zero() || u2 < u1 || u2 > S::one() {
            return Err(GeometryError::OutsideSimplex {
                u1: u1.approx_f64(),
                u2: u2.approx_f64(),
            });
        }
        Ok(NormalizedUtilityPoint { u1, u2 })
    }

    pub fn u1(&self) -> &S {
        &self.u1
    }

    pub fn u2(&self) -> &S {
        &self.u2
    }

    fn exact(&self) -> (Rational, Rational) {
        (
            self.u1.to_exact().expect("validated finite"),
            self.u2.to_exact().expect("validated finite"),
        )
    }

    /// Exact signed slack of the two boundary inequalities:
    /// `(4 u1 - 3 u2, 9 u2 - 7 u1 - 2)`. Both are non-negative in the
    /// concave region.
    pub fn boundary_slacks(&self) -> (Rational, Rational) {
        let (u1, u2) = self.exact();
        let first = int(4) * &u1 - int(3) * &u2;
        let second = int(9) * u2 - int(7) * u1 - int(2);
        (first, second)
    }
}

/// Normalizes utilities over four ascending prizes so that the lowest prize
/// maps to 0 and the highest to 1.
pub fn normalize_utility<S: Scalar>(u: &TabulatedUtility<S>) -> Result<NormalizedUtilityPoint<S>, GeometryError> {
    let v = u.values();
    if v.len() != 4 {
        return Err(GeometryError::NotFourPrizes(v.len()));
    }
    let span = v[3].clone() - v[0].clone();
    if span <= S::zero() {
        return Err(GeometryError::FlatUtility);
    }
    let u1 = (v[1].clone() - v[0].clone()) / span.clone();
    let u2 = (v[2].clone() - v[0].clone()) / span;
    NormalizedUtilityPoint::new(u1, u2)
}

/// The four areas of the simplex, one per choice pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    /// Concave utilities, pattern (A,A).
    Red,
    /// Steepest between the middle prizes, pattern (B,A).
    Yellow,
    /// Least steep between the middle prizes, pattern (A,C).
    Green,
    /// Convex utilities, pattern (B,C).
    Blue,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::Red, Region::Yellow, Region::Green, Region::Blue];

    pub fn pattern(self) -> ChoicePattern {
        match self {
            Region::Red => ChoicePattern::AA,
            Region::Yellow => ChoicePattern::BA,
            Region::Green => ChoicePattern::AC,
            Region::Blue => ChoicePattern::BC,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Red => "red",
            Region::Yellow => "yellow",
            Region::Green => "green",
            Region::Blue => "blue",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn pattern_to_region(pattern: ChoicePattern) -> Region {
    match pattern {
        ChoicePattern::AA => Region::Red,
        ChoicePattern::BA => Region::Yellow,
        ChoicePattern::AC => Region::Green,
        ChoicePattern::BC => Region::Blue,
    }
}

/// Region of a simplex point. Points on a boundary line count as satisfying
/// that (weak) inequality, so the risk-neutral point `(2/5, 8/15)` is red.
pub fn classify_point<S: Scalar>(pt: &NormalizedUtilityPoint<S>) -> Region {
    let (first, second) = pt.boundary_slacks();
    match (!first.is_negative(), !second.is_negative()) {
        (true, true) => Region::Red,
        (false, true) => Region::Yellow,
        (true, false) => Region::Green,
        (false, false) => Region::Blue,
    }
}

/// A vertex of a polygon in the `(u1, u2)` plane.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Vertex<S> {
    pub u1: S,
    pub u2: S,
}

impl<S: Scalar> Vertex<S> {
    pub fn new(u1: S, u2: S) -> Self {
        Vertex { u1, u2 }
    }

    fn sub(&self, o: &Vertex<S>) -> Vertex<S> {
        Vertex::new(self.u1.clone() - o.u1.clone(), self.u2.clone() - o.u2.clone())
    }

    fn cross(&self, o: &Vertex<S>) -> S {
        self.u1.clone() * o.u2.clone() - self.u2.clone() * o.u1.clone()
    }
}

fn v<S: Scalar>(u1: Rational, u2: Rational) -> Vertex<S> {
    Vertex::new(S::from_rational(&u1), S::from_rational(&u2))
}

/// Convex polygon with counterclockwise vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon<S> {
    vertices: Vec<Vertex<S>>,
}

impl<S: Scalar> Polygon<S> {
    /// Builds a polygon from counterclockwise vertices. Returns `None` when
    /// fewer than three vertices remain after dropping repeated and
    /// collinear ones, i.e. when the polygon has no interior.
    pub fn new(vertices: Vec<Vertex<S>>) -> Option<Self> {
        let cleaned = simplify(vertices);
        if cleaned.len() < 3 {
            return None;
        }
        let p = Polygon { vertices: cleaned };
        if p.twice_signed_area() > S::zero() {
            Some(p)
        } else {
            None
        }
    }

    pub fn vertices(&self) -> &[Vertex<S>] {
        &self.vertices
    }

    fn edges(&self) -> impl Iterator<Item = (&Vertex<S>, &Vertex<S>)> {
        let n = self.vertices.len();
        (0..n).map(move |i| (&self.vertices[i], &self.vertices[(i + 1) % n]))
    }

    fn twice_signed_area(&self) -> S {
        self.edges().fold(S::zero(), |acc, (a, b)| acc + a.cross(b))
    }

    /// Shoelace area.
    pub fn area(&self) -> S {
        self.twice_signed_area() / (S::one() + S::one())
    }

    /// Closed containment test (boundary points are inside).
    pub fn contains(&self, p: &Vertex<S>) -> bool {
        self.edges()
            .all(|(a, b)| b.sub(a).cross(&p.sub(a)) >= S::zero())
    }

    /// Open containment test (boundary points are outside).
    pub fn contains_interior(&self, p: &Vertex<S>) -> bool {
        self.edges()
            .all(|(a, b)| b.sub(a).cross(&p.sub(a)) > S::zero())
    }

    /// Intersection of two convex polygons by clipping `self` against every
    /// edge of `other`. `None` when the interiors are disjoint.
    pub fn intersection(&self, other: &Polygon<S>) -> Option<Polygon<S>> {
        let mut subject = self.vertices.clone();
        for (a, b) in other.edges() {
            if subject.is_empty() {
                return None;
            }
            subject = clip_half_plane(&subject, a, b);
        }
        Polygon::new(subject)
    }

    /// Same polygon up to the choice of starting vertex.
    pub fn same_shape(&self, other: &Polygon<S>) -> bool {
        let n = self.vertices.len();
        if n != other.vertices.len() {
            return false;
        }
        (0..n).any(|shift| (0..n).all(|i| self.vertices[(i + shift) % n] == other.vertices[i]))
    }

    pub fn to_f64(&self) -> Vec<[f64; 2]> {
        self.vertices
            .iter()
            .map(|v| [v.u1.approx_f64(), v.u2.approx_f64()])
            .collect()
    }
}

impl Polygon<Rational> {
    /// Vertices in the canonical `"num/den"` text form.
    pub fn to_strings(&self) -> Vec<[String; 2]> {
        self.vertices
            .iter()
            .map(|v| [format_rational(&v.u1), format_rational(&v.u2)])
            .collect()
    }
}

impl Serialize for Polygon<Rational> {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> Result<Ser::Ok, Ser::Error> {
        self.to_strings().serialize(s)
    }
}

/// Keeps the part of `poly` on the left of (or on) the directed line `a -> b`.
fn clip_half_plane<S: Scalar>(poly: &[Vertex<S>], a: &Vertex<S>, b: &Vertex<S>) -> Vec<Vertex<S>> {
    let dir = b.sub(a);
    let side = |p: &Vertex<S>| dir.cross(&p.sub(a));
    let mut out = Vec::with_capacity(poly.len() + 1);
    for i in 0..poly.len() {
        let cur = &poly[i];
        let next = &poly[(i + 1) % poly.len()];
        let (sc, sn) = (side(cur), side(next));
        let cur_in = sc >= S::zero();
        let next_in = sn >= S::zero();
        if cur_in {
            out.push(cur.clone());
        }
        if cur_in != next_in && sc != S::zero() && sn != S::zero() {
            let t = sc.clone() / (sc - sn);
            let d = next.sub(cur);
            out.push(Vertex::new(
                cur.u1.clone() + t.clone() * d.u1,
                cur.u2.clone() + t * d.u2,
            ));
        }
    }
    out
}

/// Drops consecutive duplicates and vertices lying on the segment between
/// their neighbours.
fn simplify<S: Scalar>(mut pts: Vec<Vertex<S>>) -> Vec<Vertex<S>> {
    pts.dedup();
    while pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    let mut changed = true;
    while changed && pts.len() >= 3 {
        changed = false;
        let n = pts.len();
        for i in 0..n {
            let prev = &pts[(i + n - 1) % n];
            let cur = &pts[i];
            let next = &pts[(i + 1) % n];
            if cur.sub(prev).cross(&next.sub(cur)) == S::zero() {
                pts.remove(i);
                changed = true;
                break;
            }
        }
    }
    pts
}

/// The simplex itself: `(0,0)`, `(1,1)`, `(0,1)`.
pub fn simplex<S: Scalar>() -> Polygon<S> {
    Polygon::new(vec![
        v(int(0), int(0)),
        v(int(1), int(1)),
        v(int(0), int(1)),
    ])
    .expect("non-degenerate")
}

/// Exact polygon of a region. The four polygons tile the simplex.
pub fn region_polygon<S: Scalar>(region: Region) -> Polygon<S> {
    let inner = || v::<S>(ratio(2, 5), ratio(8, 15));
    let verts = match region {
        Region::Red => vec![inner(), v(int(1), int(1)), v(ratio(3, 4), int(1))],
        Region::Yellow => vec![
            inner(),
            v(ratio(3, 4), int(1)),
            v(int(0), int(1)),
            v(int(0), ratio(2, 9)),
        ],
        Region::Green => vec![v(int(0), int(0)), v(int(1), int(1)), inner()],
        Region::Blue => vec![v(int(0), int(0)), inner(), v(int(0), ratio(2, 9))],
    };
    Polygon::new(verts).expect("region polygons are non-degenerate")
}

/// Utility triangle consistent with `s` safe choices followed by a switch.
pub fn hl_triangle<S: Scalar>(s: u32) -> Result<Polygon<S>, GeometryError> {
    if s > 9 {
        return Err(GeometryError::SafeCountOutOfRange(s));
    }
    let lo = ratio(s as i64, 10);
    let hi = ratio(s as i64 + 1, 10);
    Ok(Polygon::new(vec![
        v(lo.clone(), lo),
        v(hi.clone(), hi),
        v(int(0), int(1)),
    ])
    .expect("non-degenerate"))
}

/// Intersection areas of one triangle with the four regions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapRow {
    pub safe_choices: u32,
    #[serde(serialize_with = "ser_rational")]
    pub triangle_area: Rational,
    /// Areas in [`Region::ALL`] order.
    #[serde(serialize_with = "ser_rational_array")]
    pub region_areas: [Rational; 4],
}

impl OverlapRow {
    pub fn area(&self, region: Region) -> &Rational {
        &self.region_areas[region as usize]
    }
}

fn ser_rational<Ser: serde::Serializer>(q: &Rational, s: Ser) -> Result<Ser::Ok, Ser::Error> {
    s.serialize_str(&format_rational(q))
}

fn ser_rational_array<Ser: serde::Serializer>(qs: &[Rational; 4], s: Ser) -> Result<Ser::Ok, Ser::Error> {
    qs.iter().map(format_rational).collect::<Vec<_>>().serialize(s)
}

/// Exact overlap of every Holt–Laury triangle with every region.
pub fn overlap_report() -> Vec<OverlapRow> {
    let regions: Vec<Polygon<Rational>> = Region::ALL.iter().map(|&r| region_polygon(r)).collect();
    (0..=9)
        .map(|s| {
            let tri = hl_triangle::<Rational>(s).expect("valid count");
            let region_areas = std::array::from_fn(|i| {
                tri.intersection(&regions[i])
                    .map(|p| p.area())
                    .unwrap_or_else(Rational::zero)
            });
            OverlapRow {
                safe_choices: s,
                triangle_area: tri.area(),
                region_areas,
            }
        })
        .collect()
}
