//! PHI catalog and role permission matrix, loaded from TOML data files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DomainError, OperationKind, RoleCode};

const DEFAULT_CATALOG: &str = include_str!("../../fixtures/catalog.toml");
const DEFAULT_MATRIX: &str = include_str!("../../fixtures/matrix.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhiCatalogEntry {
    pub id: String,
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    entries: BTreeMap<String, PhiCatalogEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    phi: Vec<PhiCatalogEntry>,
}

fn valid_phi_id(id: &str) -> bool {
    id.len() == 7 && id.starts_with("PHI") && id[3..].bytes().all(|b| b.is_ascii_digit())
}

impl Catalog {
    pub fn from_toml(text: &str) -> Result<Self, DomainError> {
        let file: CatalogFile = toml::from_str(text).map_err(|e| DomainError::Fixture(e.to_string()))?;
        let mut entries = BTreeMap::new();
        for entry in file.phi {
            if !valid_phi_id(&entry.id) {
                return Err(DomainError::Fixture(format!("malformed PHI id `{}`", entry.id)));
            }
            if entries.insert(entry.id.clone(), entry.clone()).is_some() {
                return Err(DomainError::Fixture(format!("duplicate PHI id `{}`", entry.id)));
            }
        }
        Ok(Self { entries })
    }

    pub fn contains(&self, phi_id: &str) -> bool {
        self.entries.contains_key(phi_id)
    }

    pub fn get(&self, phi_id: &str) -> Option<&PhiCatalogEntry> {
        self.entries.get(phi_id)
    }

    pub fn name_of(&self, phi_id: &str) -> Option<&str> {
        self.get(phi_id).map(|e| e.name.as_str())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Default for Catalog {
    fn default() -> Self {
        Catalog::from_toml(DEFAULT_CATALOG).expect("bundled catalog is valid")
    }
}

/// Which roles may be granted which operation on which PHI.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermissionMatrix {
    cells: BTreeMap<String, [BTreeSet<RoleCode>; 3]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixFile {
    entry: Vec<MatrixRow>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixRow {
    phi: String,
    #[serde(default)]
    read: BTreeSet<RoleCode>,
    #[serde(default)]
    write: BTreeSet<RoleCode>,
    #[serde(default)]
    update: BTreeSet<RoleCode>,
}

impl PermissionMatrix {
    pub fn from_toml(text: &str, catalog: &Catalog) -> Result<Self, DomainError> {
        let file: MatrixFile = toml::from_str(text).map_err(|e| DomainError::Fixture(e.to_string()))?;
        let mut cells = BTreeMap::new();
        for row in file.entry {
            if !catalog.contains(&row.phi) {
                return Err(DomainError::Fixture(format!("matrix row for unknown PHI `{}`", row.phi)));
            }
            for set in [&row.read, &row.write, &row.update] {
                if set.contains(&RoleCode::External) {
                    return Err(DomainError::Fixture(format!(
                        "EXTERNAL cannot hold permissions (row `{}`)",
                        row.phi
                    )));
                }
            }
            if cells
                .insert(row.phi.clone(), [row.read, row.write, row.update])
                .is_some()
            {
                return Err(DomainError::Fixture(format!("duplicate matrix row `{}`", row.phi)));
            }
        }
        // PHIs without a row permit nothing.
        for id in catalog.ids() {
            cells.entry(id.to_owned()).or_insert_with(Default::default);
        }
        Ok(Self { cells })
    }

    pub fn permits(&self, role: RoleCode, phi_id: &str, op: OperationKind) -> Result<bool, DomainError> {
        let row = self
            .cells
            .get(phi_id)
            .ok_or_else(|| DomainError::UnknownPhi(phi_id.to_owned()))?;
        Ok(row[op.index()].contains(&role))
    }

    pub fn roles_for(&self, phi_id: &str, op: OperationKind) -> Option<&BTreeSet<RoleCode>> {
        self.cells.get(phi_id).map(|row| &row[op.index()])
    }

    /// Every permitted (role, PHI, operation) cell in PHI, operation order.
    pub fn cells(&self) -> impl Iterator<Item = (RoleCode, &str, OperationKind)> + '_ {
        self.cells.iter().flat_map(|(phi, row)| {
            OperationKind::ALL
                .into_iter()
                .flat_map(move |op| row[op.index()].iter().map(move |r| (*r, phi.as_str(), op)))
        })
    }
}

/// The catalog and matrix a deployment runs against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fixtures {
    pub catalog: Catalog,
    pub matrix: PermissionMatrix,
}

impl Fixtures {
    pub fn from_toml(catalog: &str, matrix: &str) -> Result<Self, DomainError> {
        let catalog = Catalog::from_toml(catalog)?;
        let matrix = PermissionMatrix::from_toml(matrix, &catalog)?;
        Ok(Self { catalog, matrix })
    }

    /// Loads `catalog.toml` and `matrix.toml` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, DomainError> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| DomainError::Fixture(format!("{}: {e}", dir.join(name).display())))
        };
        Self::from_toml(&read("catalog.toml")?, &read("matrix.toml")?)
    }

    pub fn load_files(catalog: &Path, matrix: &Path) -> Result<Self, DomainError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p).map_err(|e| DomainError::Fixture(format!("{}: {e}", p.display())))
        };
        Self::from_toml(&read(catalog)?, &read(matrix)?)
    }

    pub fn matrix_permits(&self, role: RoleCode, phi_id: &str, op: OperationKind) -> Result<bool, DomainError> {
        self.matrix.permits(role, phi_id, op)
    }
}

impl Default for Fixtures {
    fn default() -> Self {
        let catalog = Catalog::default();
        let matrix = PermissionMatrix::from_toml(DEFAULT_MATRIX, &catalog).expect("bundled matrix is valid");
        Self { catalog, matrix }
    }
}
