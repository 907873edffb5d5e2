//! Quad4 meshes: validation, JSON format and a structured-grid generator.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fe::element::shape_eval;
use crate::fe::quadrature::QuadratureRule;

/// A mesh of 4-node bilinear quadrilaterals with counter-clockwise
/// connectivity. Node ids are contiguous from 0 and `boundary_nodes` is the
/// ordered set of nodes on the topological boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 4]>,
    boundary_nodes: Vec<usize>,
}

/// On-disk form: `{"nodes": [[id, X1, X2], ...], "elements": [[n1, n2, n3, n4], ...],
/// "boundary_nodes": [id, ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshFile {
    pub nodes: Vec<(usize, f64, f64)>,
    pub elements: Vec<[usize; 4]>,
    pub boundary_nodes: Vec<usize>,
}

impl Mesh {
    pub fn new(
        nodes: Vec<[f64; 2]>,
        elements: Vec<[usize; 4]>,
        boundary_nodes: Vec<usize>,
    ) -> Result<Self> {
        let mesh = Mesh {
            nodes,
            elements,
            boundary_nodes,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_dofs(&self) -> usize {
        2 * self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn node(&self, id: usize) -> [f64; 2] {
        self.nodes[id]
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn element(&self, e: usize) -> [usize; 4] {
        self.elements[e]
    }

    pub fn elements(&self) -> &[[usize; 4]] {
        &self.elements
    }

    pub fn boundary_nodes(&self) -> &[usize] {
        &self.boundary_nodes
    }

    /// Reference coordinates of an element's nodes.
    pub fn element_coords(&self, e: usize) -> [[f64; 2]; 4] {
        let conn = self.elements[e];
        [
            self.nodes[conn[0]],
            self.nodes[conn[1]],
            self.nodes[conn[2]],
            self.nodes[conn[3]],
        ]
    }

    /// Flat dof indices (2 per node) of the boundary nodes, in boundary order.
    pub fn boundary_dofs(&self) -> Vec<usize> {
        self.boundary_nodes
            .iter()
            .flat_map(|&n| [2 * n, 2 * n + 1])
            .collect()
    }

    /// Flat dof indices of all non-boundary nodes, ascending.
    pub fn interior_dofs(&self) -> Vec<usize> {
        let mut on_boundary = vec![false; self.n_nodes()];
        for &n in &self.boundary_nodes {
            on_boundary[n] = true;
        }
        (0..self.n_nodes())
            .filter(|&n| !on_boundary[n])
            .flat_map(|n| [2 * n, 2 * n + 1])
            .collect()
    }

    /// Edges of the topological boundary (each appearing in exactly one
    /// element), as node id pairs ordered along the element orientation.
    fn boundary_edge_set(&self) -> Vec<(usize, usize)> {
        let mut count: HashMap<(usize, usize), (usize, (usize, usize))> = HashMap::new();
        for conn in &self.elements {
            for k in 0..4 {
                let a = conn[k];
                let b = conn[(k + 1) % 4];
                let key = (a.min(b), a.max(b));
                let entry = count.entry(key).or_insert((0, (a, b)));
                entry.0 += 1;
            }
        }
        count
            .into_values()
            .filter(|(n, _)| *n == 1)
            .map(|(_, edge)| edge)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(Error::MeshInvalid("mesh has no nodes".into()));
        }
        for (i, p) in self.nodes.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::MeshInvalid(format!(
                    "node {i} has non-finite coordinates"
                )));
            }
        }
        for (e, conn) in self.elements.iter().enumerate() {
            for &id in conn {
                if id >= n {
                    return Err(Error::MeshInvalid(format!(
                        "element {e} references missing node {id}"
                    )));
                }
            }
            for i in 0..4 {
                for j in (i + 1)..4 {
                    if conn[i] == conn[j] {
                        return Err(Error::MeshInvalid(format!(
                            "element {e} repeats node {}",
                            conn[i]
                        )));
                    }
                }
            }
        }
        // positive reference Jacobian at the 2x2 Gauss points
        let quad = QuadratureRule::gauss_2x2();
        for e in 0..self.elements.len() {
            let coords = self.element_coords(e);
            for pt in quad.points() {
                let (_, dn) = shape_eval(pt.xi, pt.eta);
                let det = ref_jacobian_det(&coords, &dn);
                if !(det > 0.0) {
                    return Err(Error::MeshInvalid(format!(
                        "element {e} has non-positive reference Jacobian {det} at ({}, {})",
                        pt.xi, pt.eta
                    )));
                }
            }
        }
        // boundary_nodes must be exactly the nodes on the topological boundary
        let mut expected: Vec<usize> = self
            .boundary_edge_set()
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .collect();
        expected.sort_unstable();
        expected.dedup();
        let mut given = self.boundary_nodes.clone();
        given.sort_unstable();
        let deduped_len = {
            let mut g = given.clone();
            g.dedup();
            g.len()
        };
        if deduped_len != self.boundary_nodes.len() {
            return Err(Error::MeshInvalid(
                "boundary_nodes contains duplicates".into(),
            ));
        }
        if given != expected {
            return Err(Error::MeshInvalid(format!(
                "boundary_nodes does not match the topological boundary \
                 (given {} nodes, expected {})",
                given.len(),
                expected.len()
            )));
        }
        Ok(())
    }

    /// Total reference area by 2x2 quadrature.
    pub fn reference_area(&self) -> f64 {
        let quad = QuadratureRule::gauss_2x2();
        let mut area = 0.0;
        for e in 0..self.elements.len() {
            let coords = self.element_coords(e);
            for pt in quad.points() {
                let (_, dn) = shape_eval(pt.xi, pt.eta);
                area += pt.weight * ref_jacobian_det(&coords, &dn);
            }
        }
        area
    }

    /// Structured grid of `nx` x `ny` elements on a `width` x `height`
    /// rectangle anchored at the origin. Boundary nodes are ordered
    /// counter-clockwise starting at the origin node.
    pub fn structured(nx: usize, ny: usize, width: f64, height: f64) -> Result<Mesh> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidInput("mesh needs nx >= 1 and ny >= 1".into()));
        }
        if !(width > 0.0) || !(height > 0.0) {
            return Err(Error::InvalidInput(format!(
                "mesh dimensions must be positive: {width} x {height}"
            )));
        }
        let node_id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push([width * i as f64 / nx as f64, height * j as f64 / ny as f64]);
            }
        }
        let mut elements = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                elements.push([
                    node_id(i, j),
                    node_id(i + 1, j),
                    node_id(i + 1, j + 1),
                    node_id(i, j + 1),
                ]);
            }
        }
        let mut boundary = Vec::with_capacity(2 * (nx + ny));
        for i in 0..nx {
            boundary.push(node_id(i, 0)); // bottom, left to right
        }
        for j in 0..ny {
            boundary.push(node_id(nx, j)); // right, bottom to top
        }
        for i in (1..=nx).rev() {
            boundary.push(node_id(i, ny)); // top, right to left
        }
        for j in (1..=ny).rev() {
            boundary.push(node_id(0, j)); // left, top to bottom
        }
        Mesh::new(nodes, elements, boundary)
    }

    pub fn to_file(&self) -> MeshFile {
        MeshFile {
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, p)| (i, p[0], p[1]))
                .collect(),
            elements: self.elements.clone(),
            boundary_nodes: self.boundary_nodes.clone(),
        }
    }

    pub fn from_file(file: MeshFile) -> Result<Mesh> {
        let n = file.nodes.len();
        let mut nodes = vec![None; n];
        for &(id, x, y) in &file.nodes {
            if id >= n {
                return Err(Error::MeshInvalid(format!(
                    "node id {id} out of range for {n} nodes (ids must be contiguous from 0)"
                )));
            }
            if nodes[id].is_some() {
                return Err(Error::MeshInvalid(format!("duplicate node id {id}")));
            }
            nodes[id] = Some([x, y]);
        }
        let nodes = nodes
            .into_iter()
            .map(|p| p.expect("contiguity checked above"))
            .collect();
        Mesh::new(nodes, file.elements, file.boundary_nodes)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, &self.to_file())
    }

    pub fn load_json(path: &Path) -> Result<Mesh> {
        Mesh::from_file(crate::io::read_json(path)?)
    }
}

/// Determinant of the reference Jacobian `dX/dξ` built from element node
/// coordinates and parent-space shape gradients.
pub fn ref_jacobian_det(coords: &[[f64; 2]; 4], dn_parent: &[[f64; 2]; 4]) -> f64 {
    let mut j = [[0.0f64; 2]; 2];
    for a in 0..4 {
        for i in 0..2 {
            for al in 0..2 {
                j[i][al] += coords[a][i] * dn_parent[a][al];
            }
        }
    }
    j[0][0] * j[1][1] - j[0][1] * j[1][0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structured_counts() {
        let m = Mesh::structured(1, 1, 1.0, 1.0).unwrap();
        assert_eq!(m.n_nodes(), 4);
        assert_eq!(m.n_elements(), 1);
        assert_eq!(m.boundary_nodes().len(), 4);

        let m = Mesh::structured(2, 2, 1.0, 1.0).unwrap();
        assert_eq!(m.n_nodes(), 9);
        assert_eq!(m.n_elements(), 4);
        assert_eq!(m.boundary_nodes().len(), 8);
        // only the center node is interior
        assert_eq!(m.interior_dofs(), vec![8, 9]);
    }

    #[test]
    fn structured_area() {
        let m = Mesh::structured(3, 2, 2.0, 0.5).unwrap();
        assert!((m.reference_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_ordering_ccw_from_origin() {
        let m = Mesh::structured(2, 2, 1.0, 1.0).unwrap();
        assert_eq!(m.boundary_nodes(), &[0, 1, 2, 5, 8, 7, 6, 3]);
    }

    #[test]
    fn rejects_bad_boundary_set() {
        let m = Mesh::structured(2, 2, 1.0, 1.0).unwrap();
        let mut file = m.to_file();
        file.boundary_nodes.pop();
        assert!(matches!(Mesh::from_file(file), Err(Error::MeshInvalid(_))));
    }

    #[test]
    fn rejects_inverted_element() {
        // clockwise connectivity gives a negative reference Jacobian
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let elements = vec![[0, 3, 2, 1]];
        let res = Mesh::new(nodes, elements, vec![0, 1, 2, 3]);
        assert!(matches!(res, Err(Error::MeshInvalid(_))));
    }

    #[test]
    fn rejects_duplicate_node_in_element() {
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let res = Mesh::new(nodes, vec![[0, 1, 1, 3]], vec![0, 1, 3]);
        assert!(matches!(res, Err(Error::MeshInvalid(_))));
    }

    #[test]
    fn json_round_trip() {
        let m = Mesh::structured(3, 2, 1.5, 1.0).unwrap();
        let text = serde_json::to_string(&m.to_file()).unwrap();
        let back = Mesh::from_file(serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
