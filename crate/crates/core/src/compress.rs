//! Ramer-Douglas-Peucker simplification for streamlines.

use crate::tractogram::{point_segment_distance, Streamline};

/// Keep the smallest RDP subsequence of vertices such that every dropped
/// vertex lies within `tolerance_mm` of the chord that replaced it. Both
/// endpoints are always kept.
pub fn compress(streamline: &Streamline, tolerance_mm: f64) -> Streamline {
    let pts = streamline.points();
    let n = pts.len();
    if n <= 2 {
        return streamline.clone();
    }
    let mut keep = vec![false; n];
    keep[0] = true;
    keep[n - 1] = true;
    let mut stack = vec![(0usize, n - 1)];
    while let Some((first, last)) = stack.pop() {
        if last <= first + 1 {
            continue;
        }
        let (mut worst, mut worst_dist) = (first, -1.0);
        for i in first + 1..last {
            let d = point_segment_distance(&pts[i], &pts[first], &pts[last]);
            if d > worst_dist {
                worst = i;
                worst_dist = d;
            }
        }
        if worst_dist > tolerance_mm {
            keep[worst] = true;
            stack.push((first, worst));
            stack.push((worst, last));
        }
    }
    let points = pts
        .iter()
        .zip(&keep)
        .filter_map(|(p, &k)| k.then_some(*p))
        .collect();
    // Endpoints are kept, so the arc length stays positive.
    Streamline::new(points).expect("subsequence with original endpoints is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tractogram::point_polyline_distance;
    use proptest::prelude::*;

    #[test]
    fn collinear_collapses() {
        let s = Streamline::from_coords(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [3.0, 0.0, 0.0],
            [4.0, 0.0, 0.0],
        ])
        .unwrap();
        assert_eq!(compress(&s, 0.35).len(), 2);
    }

    #[test]
    fn right_angle_kept() {
        let s = Streamline::from_coords(&[[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        assert_eq!(compress(&s, 0.35).len(), 3);
    }

    proptest! {
        #[test]
        fn removed_vertices_within_tolerance(
            coords in prop::collection::vec(prop::array::uniform3(0.0f64..20.0), 3..40),
            tol in 0.05f64..2.0,
        ) {
            let s = match Streamline::from_coords(&coords) {
                Ok(s) => s,
                Err(_) => return Ok(()),
            };
            let c = compress(&s, tol);
            prop_assert!(c.len() <= s.len());
            prop_assert_eq!(c.points()[0], s.points()[0]);
            prop_assert_eq!(c.points().last(), s.points().last());
            // Output is a subsequence of the input.
            let mut it = s.points().iter();
            for p in c.points() {
                prop_assert!(it.any(|q| q == p));
            }
            for p in s.points() {
                prop_assert!(point_polyline_distance(p, c.points()) <= tol + 1e-12);
            }
        }
    }
}
