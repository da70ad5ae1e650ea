//! Two-pass connected-component labelling with a union-find forest.

use serde::{Deserialize, Serialize};

use super::{BitGrid, Dims, InstanceMask};

/// Which neighbours of a pixel count as connected to it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    /// N, S, E and W neighbours.
    Four,
    /// All eight neighbours.
    #[default]
    Eight,
}

/// Label image of a binary grid. Label 0 is background; components are
/// numbered from 1 in scanline order of their first pixel.
#[derive(Clone, Debug)]
pub struct ComponentLabels {
    dims: Dims,
    labels: Vec<u32>,
    sizes: Vec<usize>,
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let root = ra.min(rb);
        self.parent[ra.max(rb) as usize] = root;
        root
    }
}

impl ComponentLabels {
    pub fn compute(grid: &BitGrid, connectivity: Connectivity) -> Self {
        let dims = grid.dims();
        let (w, h) = (dims.width, dims.height);
        let mut provisional = vec![u32::MAX; dims.len()];
        let mut forest = DisjointSet { parent: Vec::new() };

        for y in 0..h {
            for x in 0..w {
                if !grid.get(x, y) {
                    continue;
                }
                let mut neighbours = [u32::MAX; 4];
                let mut n = 0;
                let mut push = |i: usize| {
                    let l = provisional[i];
                    if l != u32::MAX {
                        neighbours[n] = l;
                        n += 1;
                    }
                };
                if x > 0 {
                    push(dims.index(x - 1, y));
                }
                if y > 0 {
                    push(dims.index(x, y - 1));
                    if connectivity == Connectivity::Eight {
                        if x > 0 {
                            push(dims.index(x - 1, y - 1));
                        }
                        if x + 1 < w {
                            push(dims.index(x + 1, y - 1));
                        }
                    }
                }
                let label = if n == 0 {
                    forest.make()
                } else {
                    let mut root = neighbours[0];
                    for &other in &neighbours[1..n] {
                        root = forest.union(root, other);
                    }
                    root
                };
                provisional[dims.index(x, y)] = label;
            }
        }

        // Resolve roots and renumber in scanline order of first appearance.
        let mut remap = vec![0u32; forest.parent.len()];
        let mut labels = vec![0u32; dims.len()];
        let mut sizes = Vec::new();
        for (i, &p) in provisional.iter().enumerate() {
            if p == u32::MAX {
                continue;
            }
            let root = forest.find(p) as usize;
            if remap[root] == 0 {
                sizes.push(0);
                remap[root] = sizes.len() as u32;
            }
            let l = remap[root];
            labels[i] = l;
            sizes[l as usize - 1] += 1;
        }

        ComponentLabels {
            dims,
            labels,
            sizes,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Label per pixel, 0 for background.
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// Pixel count of component `label` (1-based).
    pub fn size(&self, label: u32) -> usize {
        self.sizes[label as usize - 1]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Grid of the pixels whose label satisfies `keep`.
    pub fn select(&self, mut keep: impl FnMut(u32) -> bool) -> BitGrid {
        let bits = self.labels.iter().map(|&l| l != 0 && keep(l)).collect();
        BitGrid::from_bits(self.dims, bits).expect("label buffer matches dims")
    }

    /// One grid per component, in label order.
    pub fn grids(&self) -> Vec<BitGrid> {
        let mut out = vec![BitGrid::new(self.dims); self.count()];
        for (i, &l) in self.labels.iter().enumerate() {
            if l != 0 {
                out[l as usize - 1].bits[i] = true;
            }
        }
        out
    }
}

/// Splits `mask` into its connected regions, ordered by each region's first
/// pixel in scanline order. Outputs keep the input's class and source.
pub fn connected_components(mask: &InstanceMask, connectivity: Connectivity) -> Vec<InstanceMask> {
    ComponentLabels::compute(mask.grid(), connectivity)
        .grids()
        .into_iter()
        .map(|g| InstanceMask {
            grid: g,
            class: mask.class(),
            source: mask.source(),
        })
        .collect()
}
