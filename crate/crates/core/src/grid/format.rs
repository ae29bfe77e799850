//! On-disk grid document (JSON). Schema reference: docs/grid-format.md.

use serde::{Deserialize, Serialize};

use super::{Branch, Bus, Generator, GridError, GridModel, Load};

/// Raw deserialized grid file, prior to validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridDocument {
    #[serde(default = "default_name")]
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
}

fn default_name() -> String {
    "grid".to_string()
}

impl GridDocument {
    pub fn into_model(self) -> Result<GridModel, GridError> {
        GridModel::from_parts(
            self.name,
            self.base_mva,
            self.buses,
            self.branches,
            self.generators,
            self.loads,
        )
    }

    pub fn from_model(grid: &GridModel) -> GridDocument {
        GridDocument {
            name: grid.name.clone(),
            base_mva: grid.base_mva,
            buses: grid.buses().to_vec(),
            branches: grid.branches().to_vec(),
            generators: grid.generators().to_vec(),
            loads: grid.loads().to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_error_carries_location() {
        let err = GridModel::from_json_str("{\n \"base_mva\": 100.0,\n \"buses\": [,]\n}")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn document_roundtrip() {
        let g = super::super::ne39();
        let doc = GridDocument::from_model(&g);
        let text = serde_json::to_string(&doc).unwrap();
        let g2 = GridModel::from_json_str(&text).unwrap();
        assert_eq!(g.topology_id(), g2.topology_id());
        assert_eq!(g.bus_count(), g2.bus_count());
        assert_eq!(g.loads().len(), g2.loads().len());
    }
}
