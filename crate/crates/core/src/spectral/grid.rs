use crate::field::Vector;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Topology {
    Interval,
    Periodic,
}

/// One tensor factor of a structured grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    topology: Topology,
    coords: Vec<f64>,
    weights: Vec<f64>,
    length: f64,
}

impl Axis {
    /// `n` uniform nodes on `[a, b]` with trapezoid weights.
    pub fn interval(a: f64, b: f64, n: usize) -> Self {
        assert!(n >= 2 && b > a, "interval axis needs n >= 2 and a < b");
        let h = (b - a) / (n - 1) as f64;
        let coords: Vec<f64> = (0..n).map(|i| a + h * i as f64).collect();
        let mut weights = vec![h; n];
        weights[0] = 0.5 * h;
        weights[n - 1] = 0.5 * h;
        Self {
            topology: Topology::Interval,
            coords,
            weights,
            length: b - a,
        }
    }

    /// `n` uniform nodes on a circle of circumference `length` starting at `start`.
    pub fn periodic(start: f64, length: f64, n: usize) -> Self {
        assert!(n >= 3 && length > 0.0, "periodic axis needs n >= 3");
        let h = length / n as f64;
        Self {
            topology: Topology::Periodic,
            coords: (0..n).map(|i| start + h * i as f64).collect(),
            weights: vec![h; n],
            length,
        }
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn start(&self) -> f64 {
        self.coords[0]
    }

    pub fn spacing(&self) -> f64 {
        match self.topology {
            Topology::Interval => self.length / (self.len() - 1) as f64,
            Topology::Periodic => self.length / self.len() as f64,
        }
    }

    pub fn cell_count(&self) -> usize {
        match self.topology {
            Topology::Interval => self.len() - 1,
            Topology::Periodic => self.len(),
        }
    }

    /// Upper neighbour of node `i` along the axis, wrapping on circles.
    pub fn next(&self, i: usize) -> Option<usize> {
        match self.topology {
            Topology::Periodic => Some((i + 1) % self.len()),
            Topology::Interval => (i + 1 < self.len()).then_some(i + 1),
        }
    }

    pub fn prev(&self, i: usize) -> Option<usize> {
        match self.topology {
            Topology::Periodic => Some((i + self.len() - 1) % self.len()),
            Topology::Interval => i.checked_sub(1),
        }
    }

    /// Every other node, if the result keeps enough resolution.
    pub fn coarsen(&self, min_nodes: usize) -> Option<Axis> {
        match self.topology {
            Topology::Interval => {
                let cells = self.len() - 1;
                (cells.is_multiple_of(2) && cells / 2 + 1 >= min_nodes)
                    .then(|| Axis::interval(self.start(), self.start() + self.length, cells / 2 + 1))
            }
            Topology::Periodic => (self.len().is_multiple_of(2) && self.len() / 2 >= min_nodes.min(8))
                .then(|| Axis::periodic(self.start(), self.length, self.len() / 2)),
        }
    }
}

/// Tensor-product grid, flattened row-major with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
    strides: Vec<usize>,
    len: usize,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Self {
        assert!(!axes.is_empty(), "grid needs at least one axis");
        let mut strides = vec![1usize; axes.len()];
        for a in (0..axes.len() - 1).rev() {
            strides[a] = strides[a + 1] * axes[a + 1].len();
        }
        let len = strides[0] * axes[0].len();
        Self { axes, strides, len }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, a: usize) -> &Axis {
        &self.axes[a]
    }

    pub fn stride(&self, a: usize) -> usize {
        self.strides[a]
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in 0..self.dim() {
            idx[a] = flat / self.strides[a];
            flat %= self.strides[a];
        }
        idx
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Index of the node along `axis` at coordinate position `k` in that axis.
    pub fn component(&self, flat: usize, axis: usize) -> usize {
        (flat / self.strides[axis]) % self.axes[axis].len()
    }

    pub fn with_component(&self, flat: usize, axis: usize, k: usize) -> usize {
        let old = self.component(flat, axis);
        flat - old * self.strides[axis] + k * self.strides[axis]
    }

    pub fn point(&self, flat: usize) -> Vector {
        Vector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|a| self.axes[a].coords[self.component(flat, a)]),
        )
    }

    pub fn weight(&self, flat: usize) -> f64 {
        (0..self.dim())
            .map(|a| self.axes[a].weights[self.component(flat, a)])
            .product()
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, Vector)> + '_ {
        (0..self.len).map(move |i| (i, self.point(i)))
    }

    pub fn volume(&self) -> f64 {
        self.axes.iter().map(|a| a.length).product()
    }

    pub fn min_spacing(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).fold(f64::INFINITY, f64::min)
    }

    pub fn coarsen(&self, min_nodes: usize) -> Option<Grid> {
        let axes: Option<Vec<Axis>> = self.axes.iter().map(|a| a.coarsen(min_nodes)).collect();
        axes.map(Grid::new)
    }

    /// Uniform refinement: doubles the cell count on every axis.
    pub fn refine(&self) -> Grid {
        Grid::new(
            self.axes
                .iter()
                .map(|a| match a.topology {
                    Topology::Interval => Axis::interval(a.start(), a.start() + a.length, 2 * (a.len() - 1) + 1),
                    Topology::Periodic => Axis::periodic(a.start(), a.length, 2 * a.len()),
                })
                .collect(),
        )
    }
}
