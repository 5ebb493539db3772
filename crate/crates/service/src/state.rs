use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use sha2::{Digest, Sha256};

use modeladapt_core::annotation::{validate_annotations, Diagnostic, ValidatedAnnotations};
use modeladapt_core::model::{parse_catalog, Catalog, CatalogError};
use modeladapt_core::policy::{prune_model, ClientContext, RoleBasedModel};
use modeladapt_core::storage::{DataState, Database, StorageError};

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid catalog: {0}")]
    Catalog(#[from] CatalogError),
    #[error("cannot open data: {0}")]
    Storage(#[from] StorageError),
    #[error("invalid token file: {0}")]
    Tokens(String),
}

struct Loaded {
    catalog: Arc<Catalog>,
    digest: Vec<u8>,
}

pub struct Inner {
    catalog_path: Option<PathBuf>,
    loaded: RwLock<Loaded>,
    pub db: Database,
    pub assets_dir: Option<PathBuf>,
    pub tokens: HashMap<String, ClientContext>,
}

/// Shared service state. Cheap to clone.
#[derive(Clone)]
pub struct AppState(pub Arc<Inner>);

/// What one request works against: a catalog and a data snapshot, the
/// client's model and its validated annotations.
pub struct RequestView {
    pub catalog: Arc<Catalog>,
    pub data: Arc<DataState>,
    pub model: RoleBasedModel,
    pub annotations: ValidatedAnnotations,
    pub diagnostics: Vec<Diagnostic>,
}

fn read(path: &Path) -> Result<Vec<u8>, StartupError> {
    std::fs::read(path).map_err(|source| StartupError::Read {
        path: path.display().to_string(),
        source,
    })
}

/// Token file: `{"<token>": {"id": "...", "roles": ["..."]}}`.
pub fn parse_tokens(bytes: &[u8]) -> Result<HashMap<String, ClientContext>, StartupError> {
    #[derive(serde::Deserialize)]
    struct Entry {
        id: String,
        #[serde(default)]
        roles: Vec<String>,
    }
    let raw: HashMap<String, Entry> =
        serde_json::from_slice(bytes).map_err(|e| StartupError::Tokens(e.to_string()))?;
    Ok(raw
        .into_iter()
        .map(|(token, e)| (token, ClientContext::new(e.id, e.roles)))
        .collect())
}

impl AppState {
    /// Serves `catalog_path`, re-reading it whenever its content changes.
    pub fn open(
        catalog_path: impl Into<PathBuf>,
        data_dir: Option<&Path>,
        assets_dir: Option<PathBuf>,
        token_file: Option<&Path>,
    ) -> Result<Self, StartupError> {
        let catalog_path = catalog_path.into();
        let bytes = read(&catalog_path)?;
        let catalog = parse_catalog(&bytes)?;
        let db = match data_dir {
            Some(dir) => Database::open(dir, &catalog)?,
            None => Database::in_memory(),
        };
        let tokens = match token_file {
            Some(p) => parse_tokens(&read(p)?)?,
            None => HashMap::new(),
        };
        Ok(Self(Arc::new(Inner {
            catalog_path: Some(catalog_path),
            loaded: RwLock::new(Loaded {
                catalog: Arc::new(catalog),
                digest: Sha256::digest(&bytes).to_vec(),
            }),
            db,
            assets_dir,
            tokens,
        })))
    }

    /// A fixed catalog with no backing file.
    pub fn in_memory(catalog: Catalog, db: Database) -> Self {
        Self(Arc::new(Inner {
            catalog_path: None,
            loaded: RwLock::new(Loaded {
                catalog: Arc::new(catalog),
                digest: Vec::new(),
            }),
            db,
            assets_dir: None,
            tokens: HashMap::new(),
        }))
    }

    pub fn db(&self) -> &Database {
        &self.0.db
    }

    /// The latest catalog. When backed by a file whose content changed, the
    /// file is re-parsed; an unparsable file leaves the previous catalog.
    pub fn catalog(&self) -> Arc<Catalog> {
        if let Some(path) = &self.0.catalog_path {
            match std::fs::read(path) {
                Ok(bytes) => {
                    let digest = Sha256::digest(&bytes).to_vec();
                    let stale = self.0.loaded.read().expect("catalog lock").digest != digest;
                    if stale {
                        match parse_catalog(&bytes) {
                            Ok(c) => {
                                tracing::info!(version = c.version, "catalog reloaded");
                                *self.0.loaded.write().expect("catalog lock") = Loaded {
                                    catalog: Arc::new(c),
                                    digest,
                                };
                            }
                            Err(e) => tracing::warn!(error = %e, "catalog change ignored"),
                        }
                    }
                }
                Err(e) => tracing::warn!(error = %e, "catalog file unreadable"),
            }
        }
        self.0.loaded.read().expect("catalog lock").catalog.clone()
    }

    pub fn view(&self, client: &ClientContext) -> RequestView {
        let catalog = self.catalog();
        let data = self.0.db.snapshot();
        let model = prune_model(&catalog, client);
        let (annotations, diagnostics) = validate_annotations(&catalog, &model);
        RequestView {
            catalog,
            data,
            model,
            annotations,
            diagnostics,
        }
    }
}
