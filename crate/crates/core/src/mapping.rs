//! Nearest-neighbor data mapping between coupling meshes.
//!
//! Plans are computed once from the mesh geometry and then applied to every
//! sample of a storage at window end.

use serde::{Deserialize, Serialize};

use crate::error::{config, validation, Result};
use crate::storage::{Sample, Storage};

/// A named point cloud. Vertex ids are the positions in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    name: String,
    dimensions: usize,
    /// Row-major `vertex_count x dimensions`.
    coords: Vec<f64>,
}

impl Mesh {
    pub fn new(name: impl Into<String>, dimensions: usize, coords: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if !(1..=3).contains(&dimensions) {
            return Err(config(format!(
                "mesh {name}: dimensions must be 1, 2 or 3, got {dimensions}"
            )));
        }
        if coords.is_empty() {
            return Err(config(format!("mesh {name} has no vertices")));
        }
        if coords.len() % dimensions != 0 {
            return Err(validation(format!(
                "mesh {name}: {} coordinates are not a multiple of dimension {dimensions}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(validation(format!("mesh {name}: non-finite vertex coordinate")));
        }
        Ok(Self {
            name,
            dimensions,
            coords,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimensions(&self) -> usize {
        self.dimensions
    }

    pub fn vertex_count(&self) -> usize {
        self.coords.len() / self.dimensions
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dimensions..(i + 1) * self.dimensions]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Index of the vertex closest to `point`; the lowest index wins ties.
    fn nearest(&self, point: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..self.vertex_count() {
            let d: f64 = self
                .vertex(i)
                .iter()
                .zip(point)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MappingKind {
    NearestNeighborConsistent,
    NearestNeighborConservative,
    Identity,
}

/// Precomputed vertex correspondence between two meshes.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingPlan {
    kind: MappingKind,
    from_mesh: String,
    to_mesh: String,
    from_count: usize,
    to_count: usize,
    /// Consistent: source index per target vertex. Conservative: target index
    /// per source vertex. Identity: empty.
    index_map: Vec<usize>,
}

impl MappingPlan {
    pub fn build(kind: MappingKind, from: &Mesh, to: &Mesh) -> Result<Self> {
        if from.dimensions() != to.dimensions() {
            return Err(config(format!(
                "cannot map between mesh {} ({}D) and mesh {} ({}D)",
                from.name(),
                from.dimensions(),
                to.name(),
                to.dimensions()
            )));
        }
        let index_map = match kind {
            MappingKind::NearestNeighborConsistent => (0..to.vertex_count())
                .map(|i| from.nearest(to.vertex(i)))
                .collect(),
            MappingKind::NearestNeighborConservative => (0..from.vertex_count())
                .map(|i| to.nearest(from.vertex(i)))
                .collect(),
            MappingKind::Identity => {
                if from.vertex_count() != to.vertex_count() {
                    return Err(config(format!(
                        "identity mapping needs equal vertex counts, {} has {} and {} has {}",
                        from.name(),
                        from.vertex_count(),
                        to.name(),
                        to.vertex_count()
                    )));
                }
                Vec::new()
            }
        };
        Ok(Self {
            kind,
            from_mesh: from.name().to_owned(),
            to_mesh: to.name().to_owned(),
            from_count: from.vertex_count(),
            to_count: to.vertex_count(),
            index_map,
        })
    }

    pub fn kind(&self) -> MappingKind {
        self.kind
    }

    pub fn from_mesh(&self) -> &str {
        &self.from_mesh
    }

    pub fn to_mesh(&self) -> &str {
        &self.to_mesh
    }

    pub fn index_map(&self) -> &[usize] {
        &self.index_map
    }

    /// Maps one sample carrying `components` values per vertex.
    pub fn apply(&self, s: &Sample, components: usize) -> Result<Sample> {
        if s.len() != self.from_count * components {
            return Err(validation(format!(
                "mapping {} -> {}: sample has {} values, expected {}",
                self.from_mesh,
                self.to_mesh,
                s.len(),
                self.from_count * components
            )));
        }
        let src = s.values();
        let out = match self.kind {
            MappingKind::Identity => src.to_vec(),
            MappingKind::NearestNeighborConsistent => {
                let mut out = Vec::with_capacity(self.to_count * components);
                for &j in &self.index_map {
                    out.extend_from_slice(&src[j * components..(j + 1) * components]);
                }
                out
            }
            MappingKind::NearestNeighborConservative => {
                let mut out = vec![0.0; self.to_count * components];
                for (i, &j) in self.index_map.iter().enumerate() {
                    for c in 0..components {
                        out[j * components + c] += src[i * components + c];
                    }
                }
                out
            }
        };
        Ok(Sample::from_vec_unchecked(out))
    }

    /// Maps the stamples of `source` into `target`, keeping time stamps.
    ///
    /// With `skip_first`, the window-start stample of `target` is kept as is
    /// (it was mapped before) and only later stamples are replaced. Returns the
    /// number of samples mapped.
    pub fn map_storage(
        &self,
        source: &Storage,
        target: &mut Storage,
        skip_first: bool,
        components: usize,
    ) -> Result<usize> {
        let stamples = source.stamples();
        let Some(first) = stamples.first() else {
            return Ok(0);
        };
        let skip = skip_first && !target.is_empty();
        if skip {
            target.trim_after(first.time);
        } else {
            target.clear();
        }
        let mut applied = 0;
        for st in &stamples[usize::from(skip)..] {
            let mapped = self.apply(&st.sample, components)?;
            target.set_sample_at_time(st.time, mapped)?;
            applied += 1;
        }
        Ok(applied)
    }
}
