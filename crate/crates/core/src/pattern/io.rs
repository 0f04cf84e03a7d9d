//! JSON form of [`OrigamiMesh`].
//!
//! ```json
//! {
//!   "positions": [[x, y, z], ...],
//!   "masses": [m, ...],
//!   "trusses": [{"i": 0, "j": 1, "rest_length": 0.016, "ea": 1.6}, ...],
//!   "hinges": [{"p": 0, "q": 9, "r": 10, "v": 1, "kind": "crease",
//!               "stiffness": 0.2525, "rest_angle": 2.1, "fold": "valley"}, ...],
//!   "material": {"k_s": 100.0, "k_crease": 0.2525, "k_actuated": 1.0,
//!                "k_facet": 10.0, "nodal_mass": 0.007}
//! }
//! ```

use super::OrigamiMesh;
use crate::error::{Error, Result};

impl OrigamiMesh {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("mesh serializes")
    }

    /// Parses and validates a mesh.
    pub fn from_json(text: &str) -> Result<Self> {
        let mesh: OrigamiMesh =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("mesh json: {e}")))?;
        mesh.validate()?;
        Ok(mesh)
    }
}

#[cfg(test)]
mod tests {
    use crate::pattern::{build_miura, Material, MiuraDesign, OrigamiMesh};

    #[test]
    fn json_round_trip() {
        let mesh = build_miura(&MiuraDesign::default().with_size(4, 5), &Material::default()).unwrap();
        let back = OrigamiMesh::from_json(&mesh.to_json()).unwrap();
        assert_eq!(mesh, back);
    }

    #[test]
    fn rejects_dangling_hinge() {
        let mut mesh = build_miura(&MiuraDesign::default().with_size(3, 3), &Material::default()).unwrap();
        mesh.hinges[0].r = 99;
        let err = OrigamiMesh::from_json(&mesh.to_json()).unwrap_err();
        assert!(err.to_string().contains("missing node"), "{err}");
    }

    #[test]
    fn rejects_garbage() {
        assert!(OrigamiMesh::from_json("{").is_err());
        assert!(OrigamiMesh::from_json(r#"{"positions":[],"masses":[],"trusses":[],"hinges":[],"material":{"k_s":1,"k_crease":1,"k_actuated":1,"k_facet":1,"nodal_mass":1}}"#).is_err());
    }
}
