use serde::{Deserialize, Serialize};

/// Unit cube `[0,1]^d` or the L-shape `(-1,1)^2 \ [0,1] x [-1,0]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "d", rename_all = "snake_case")]
pub enum Domain {
    UnitCube(usize),
    LShape,
}

/// Axis-aligned boundary piece: coordinate `axis` pinned to `value`, the
/// others ranging over `[lo_i, hi_i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryPiece {
    pub axis: usize,
    pub value: f64,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundaryPiece {
    /// `(d-1)`-dimensional measure.
    pub fn measure(&self) -> f64 {
        (0..self.lo.len()).filter(|&i| i != self.axis).map(|i| self.hi[i] - self.lo[i]).product()
    }
}

impl Domain {
    pub fn dim(&self) -> usize {
        match *self {
            Domain::UnitCube(d) => d,
            Domain::LShape => 2,
        }
    }

    /// Per-coordinate bounding interval.
    pub fn interval(&self) -> (f64, f64) {
        match self {
            Domain::UnitCube(_) => (0.0, 1.0),
            Domain::LShape => (-1.0, 1.0),
        }
    }

    /// Strict interior.
    pub fn contains(&self, x: &[f64]) -> bool {
        match *self {
            Domain::UnitCube(d) => x.len() == d && x.iter().all(|&v| v > 0.0 && v < 1.0),
            Domain::LShape => {
                x.len() == 2 && x.iter().all(|&v| v > -1.0 && v < 1.0) && !(x[0] >= 0.0 && x[1] <= 0.0)
            }
        }
    }

    /// Closure of the domain.
    pub fn contains_closed(&self, x: &[f64]) -> bool {
        match *self {
            Domain::UnitCube(d) => x.len() == d && x.iter().all(|&v| (0.0..=1.0).contains(&v)),
            Domain::LShape => {
                x.len() == 2 && x.iter().all(|&v| (-1.0..=1.0).contains(&v)) && !(x[0] > 0.0 && x[1] < 0.0)
            }
        }
    }

    pub fn on_boundary(&self, x: &[f64]) -> bool {
        self.contains_closed(x) && !self.contains(x)
    }

    /// Boundary decomposition used for proportional sampling. The L-shape is
    /// split into eight unit segments.
    pub fn boundary_pieces(&self) -> Vec<BoundaryPiece> {
        match *self {
            Domain::UnitCube(d) => (0..d)
                .flat_map(|axis| {
                    [0.0, 1.0].into_iter().map(move |value| BoundaryPiece {
                        axis,
                        value,
                        lo: vec![0.0; d],
                        hi: vec![1.0; d],
                    })
                })
                .collect(),
            Domain::LShape => {
                let seg = |axis: usize, value: f64, a: f64, b: f64| {
                    let mut lo = vec![0.0; 2];
                    let mut hi = vec![0.0; 2];
                    lo[1 - axis] = a;
                    hi[1 - axis] = b;
                    lo[axis] = value;
                    hi[axis] = value;
                    BoundaryPiece { axis, value, lo, hi }
                };
                vec![
                    seg(0, -1.0, -1.0, 0.0),
                    seg(0, -1.0, 0.0, 1.0),
                    seg(1, -1.0, -1.0, 0.0),
                    seg(0, 0.0, -1.0, 0.0),
                    seg(1, 0.0, 0.0, 1.0),
                    seg(0, 1.0, 0.0, 1.0),
                    seg(1, 1.0, 0.0, 1.0),
                    seg(1, 1.0, -1.0, 0.0),
                ]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lshape_boundary_has_eight_unit_segments() {
        let pieces = Domain::LShape.boundary_pieces();
        assert_eq!(pieces.len(), 8);
        assert!(pieces.iter().all(|p| (p.measure() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn predicates_are_exclusive() {
        let d = Domain::LShape;
        for x in [[0.0, 0.0], [-0.5, 0.5], [0.5, 0.0], [1.0, 0.5], [0.5, -0.5], [-1.0, -1.0]] {
            assert!(!(d.contains(&x) && d.on_boundary(&x)));
        }
        assert!(d.on_boundary(&[0.5, 0.0]));
        assert!(d.on_boundary(&[0.0, -0.5]));
        assert!(d.contains(&[-0.5, -0.5]));
        assert!(!d.contains_closed(&[0.5, -0.5]));
        let c = Domain::UnitCube(3);
        assert!(c.on_boundary(&[0.0, 0.3, 0.2]));
        assert!(c.contains(&[0.1, 0.3, 0.2]));
    }
}
