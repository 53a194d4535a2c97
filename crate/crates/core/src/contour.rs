//! Marching-squares zero contour of a scalar field sampled on a rectilinear grid.

use std::collections::BTreeMap;

/// Scalar samples on a rectilinear grid, `values[ix * ys.len() + iy]`.
/// NaN marks invalid nodes; cells touching one are skipped.
#[derive(Debug, Clone)]
pub struct ScalarGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[ix * self.ys.len() + iy]
    }

    fn point(&self, ix: usize, iy: usize) -> [f64; 2] {
        [self.xs[ix], self.ys[iy]]
    }
}

/// Grid edge: `(ix, iy, horizontal)`; horizontal edges run along x.
type EdgeId = (usize, usize, bool);

/// Extracted zero contour: polylines plus the number of grid cells it crosses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Contour {
    pub polylines: Vec<Vec<[f64; 2]>>,
    pub crossed_cells: usize,
}

/// Zero contour of `grid`. `locate(a, b, fa, fb)` places the crossing on the
/// edge `a -> b`; pass linear interpolation or a refining root finder.
pub fn zero_contour<F>(grid: &ScalarGrid, mut locate: F) -> Contour
where
    F: FnMut([f64; 2], [f64; 2], f64, f64) -> [f64; 2],
{
    let nx = grid.xs.len();
    let ny = grid.ys.len();
    let mut points: BTreeMap<EdgeId, [f64; 2]> = BTreeMap::new();
    let mut segments: Vec<(EdgeId, EdgeId)> = Vec::new();
    let mut crossed = 0;

    let mut edge_point = |e: EdgeId, points: &mut BTreeMap<EdgeId, [f64; 2]>| {
        points.entry(e).or_insert_with(|| {
            let (ix, iy, horizontal) = e;
            let (jx, jy) = if horizontal {
                (ix + 1, iy)
            } else {
                (ix, iy + 1)
            };
            locate(
                grid.point(ix, iy),
                grid.point(jx, jy),
                grid.at(ix, iy),
                grid.at(jx, jy),
            )
        });
    };

    for ix in 0..nx.saturating_sub(1) {
        for iy in 0..ny.saturating_sub(1) {
            // corners counter-clockwise from the lower-left
            let f = [
                grid.at(ix, iy),
                grid.at(ix + 1, iy),
                grid.at(ix + 1, iy + 1),
                grid.at(ix, iy + 1),
            ];
            if f.iter().any(|v| v.is_nan()) {
                continue;
            }
            let bits = f
                .iter()
                .enumerate()
                .fold(0u8, |acc, (k, v)| acc | (u8::from(*v > 0.0) << k));
            if bits == 0 || bits == 15 {
                continue;
            }
            crossed += 1;
            let bottom = (ix, iy, true);
            let right = (ix + 1, iy, false);
            let top = (ix, iy + 1, true);
            let left = (ix, iy, false);
            let center = f.iter().sum::<f64>() / 4.0;
            let pairs: Vec<(EdgeId, EdgeId)> = match bits {
                1 | 14 => vec![(left, bottom)],
                2 | 13 => vec![(bottom, right)],
                3 | 12 => vec![(left, right)],
                4 | 11 => vec![(right, top)],
                6 | 9 => vec![(bottom, top)],
                7 | 8 => vec![(left, top)],
                5 => {
                    if center > 0.0 {
                        vec![(left, top), (bottom, right)]
                    } else {
                        vec![(left, bottom), (right, top)]
                    }
                }
                10 => {
                    if center > 0.0 {
                        vec![(left, bottom), (right, top)]
                    } else {
                        vec![(left, top), (bottom, right)]
                    }
                }
                _ => unreachable!(),
            };
            for (a, b) in pairs {
                edge_point(a, &mut points);
                edge_point(b, &mut points);
                segments.push((a, b));
            }
        }
    }

    Contour {
        polylines: chain(&segments)
            .into_iter()
            .map(|ids| ids.iter().map(|e| points[e]).collect())
            .collect(),
        crossed_cells: crossed,
    }
}

fn chain(segments: &[(EdgeId, EdgeId)]) -> Vec<Vec<EdgeId>> {
    let mut adjacency: BTreeMap<EdgeId, Vec<usize>> = BTreeMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        adjacency.entry(*a).or_default().push(k);
        adjacency.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();

    let walk = |start: usize, from: EdgeId, used: &mut Vec<bool>| -> Vec<EdgeId> {
        let mut line = vec![from];
        let mut seg = start;
        let mut at = from;
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            let next = if a == at { b } else { a };
            line.push(next);
            at = next;
            match adjacency[&at].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => break,
            }
        }
        line
    };

    // open polylines start at an end point (edge with a single segment)
    for (edge, segs) in &adjacency {
        if segs.len() == 1 && !used[segs[0]] {
            lines.push(walk(segs[0], *edge, &mut used));
        }
    }
    for k in 0..segments.len() {
        if !used[k] {
            lines.push(walk(k, segments[k].0, &mut used));
        }
    }
    lines
}

/// Linear interpolation of the zero crossing between two samples.
pub fn linear_crossing(a: [f64; 2], b: [f64; 2], fa: f64, fb: f64) -> [f64; 2] {
    let t = if fa == fb { 0.5 } else { fa / (fa - fb) };
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(f: impl Fn(f64, f64) -> f64, n: usize) -> ScalarGrid {
        let xs: Vec<f64> = (0..n)
            .map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64)
            .collect();
        let ys = xs.clone();
        let values = xs
            .iter()
            .flat_map(|x| ys.iter().map(|y| f(*x, *y)).collect::<Vec<_>>())
            .collect();
        ScalarGrid { xs, ys, values }
    }

    #[test]
    fn circle_is_one_closed_loop() {
        let g = sample(|x, y| x * x + y * y - 0.5, 41);
        let c = zero_contour(&g, linear_crossing);
        assert_eq!(c.polylines.len(), 1);
        let line = &c.polylines[0];
        assert_eq!(line.first(), line.last());
        for p in line {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - 0.5f64.sqrt()).abs() < 5e-3);
        }
    }

    #[test]
    fn straight_line_is_open() {
        let g = sample(|x, y| x - 0.3 * y - 0.1, 21);
        let c = zero_contour(&g, linear_crossing);
        assert_eq!(c.polylines.len(), 1);
        for p in &c.polylines[0] {
            assert!((p[0] - 0.3 * p[1] - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn no_sign_change_no_contour() {
        let g = sample(|x, y| 1.0 + x * x + y * y, 11);
        let c = zero_contour(&g, linear_crossing);
        assert!(c.polylines.is_empty());
        assert_eq!(c.crossed_cells, 0);
    }

    #[test]
    fn nan_cells_are_skipped() {
        let mut g = sample(|x, _| x, 11);
        for v in g.values.iter_mut().take(11 * 7) {
            *v = f64::NAN;
        }
        let c = zero_contour(&g, linear_crossing);
        assert_eq!(c.crossed_cells, 0);
    }
}
