//! Minimal total-Lagrangian finite element machinery shared by the RVE and
//! macro scales: quad4 meshes, assembly, constraints, dense solves, Newton.

pub mod assembly;
pub mod constraints;
pub mod element;
pub mod linalg;
pub mod mesh;
pub mod newton;
pub mod quadrature;

pub use assembly::{assemble_internal_forces, assemble_tangent, Constitutive, PerElementMaterial};
pub use constraints::{apply_constraints, ConstraintMap, ConstraintSet, FlatConstraints};
pub use element::shape_eval;
pub use linalg::{condense, lu_factor, solve_linear};
pub use mesh::{Mesh, MeshFile};
pub use newton::{newton_solve, newton_solve_from, NewtonReport};
pub use quadrature::{QuadPoint, QuadratureRule};
