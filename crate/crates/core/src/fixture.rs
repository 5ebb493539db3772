//! A small RNA-Seq catalog with deterministic data, used by the demo
//! command and by tests.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

use crate::model::{parse_catalog, Catalog, TableRef};
use crate::policy::ClientContext;
use crate::storage::{Database, Record, StorageError};
use crate::tags;

pub const OWNER_ROLE: &str = "admin";
pub const CURATOR_ROLE: &str = "curator";
pub const RELEASED: &str = "Release";
pub const TISSUES: [&str; 8] = ["Kidney", "Heart", "Liver", "Lung", "Brain", "Ureter", "Bladder", "Skin"];
pub const STATUSES: [&str; 4] = [RELEASED, "In Progress", "Pending Review", "Archived"];
pub const SPECIES: [&str; 3] = ["Mus musculus", "Homo sapiens", "Danio rerio"];

pub fn admin() -> ClientContext {
    ClientContext::new("admin-user", [OWNER_ROLE])
}

pub fn curator() -> ClientContext {
    ClientContext::new("curator-user", [CURATOR_ROLE])
}

pub fn study() -> TableRef {
    TableRef::new("RNASeq", "Study")
}

pub fn experiment() -> TableRef {
    TableRef::new("RNASeq", "Experiment")
}

fn fk(schema: &str, name: &str, from: &[&str], to_schema: &str, to_table: &str, to: &[&str]) -> Json {
    json!({
        "name": [schema, name],
        "from_columns": from,
        "to": {"schema": to_schema, "table": to_table, "columns": to}
    })
}

fn inbound(name: &str) -> Json {
    json!({"inbound": ["RNASeq", name]})
}

fn outbound(schema: &str, name: &str) -> Json {
    json!({"outbound": [schema, name]})
}

/// Study → Experiment → Replicate → Specimen → Specimen_Tissue → Tissue.
pub fn anatomical_source_path() -> Json {
    json!([
        inbound("Experiment_Study_fkey"),
        inbound("Replicate_Experiment_fkey"),
        outbound("RNASeq", "Replicate_Specimen_fkey"),
        inbound("Specimen_Tissue_Specimen_fkey"),
        outbound("RNASeq", "Specimen_Tissue_Tissue_fkey"),
        "Name"
    ])
}

fn status_column() -> Json {
    json!({"name": "Curation_Status", "type": "text", "nullable": false, "acls": {"select": [CURATOR_ROLE]}})
}

fn release_policy() -> Json {
    json!({"rules": [
        {"roles": ["*"], "predicate": {"column": "Curation_Status", "in": [RELEASED]}},
        {"roles": [CURATOR_ROLE]}
    ]})
}

fn study_annotations() -> Json {
    let mut a = serde_json::Map::new();
    a.insert(
        tags::SOURCE_DEFINITIONS.into(),
        json!({"sources": {
            "Experiment_Types": {
                "source": [inbound("Experiment_Study_fkey"), "Experiment_Type"],
                "aggregate": "array_d",
                "markdown_name": "Experiment Types"
            },
            "Anatomical_Source": {
                "source": anatomical_source_path(),
                "aggregate": "array_d",
                "markdown_name": "Anatomical Source"
            },
            "Anatomical_Source_Count": {
                "source": anatomical_source_path(),
                "aggregate": "cnt_d",
                "markdown_name": "Tissue Count"
            },
            "Species": {
                "source": [inbound("Experiment_Study_fkey"), outbound("RNASeq", "Experiment_Species_fkey"), "Name"],
                "aggregate": "array_d",
                "markdown_name": "Species"
            }
        }}),
    );
    a.insert(
        tags::VISIBLE_COLUMNS.into(),
        json!({
            "compact": [
                "RID",
                "Title",
                {"sourcekey": "Experiment_Types"},
                {"sourcekey": "Anatomical_Source"},
                {
                    "sourcekey": "Species",
                    "markdown_name": "Summary",
                    "display": {"markdown_pattern":
                        "{{#$Species}}*{{{.}}}* {{/$Species}}{{#$Anatomical_Source_Count}}in {{{$Anatomical_Source_Count}}} tissues{{/$Anatomical_Source_Count}}"}
                },
                {"sourcekey": "Anatomical_Source_Count"},
                "Curation_Status",
                "RMT"
            ],
            "detailed": [
                "RID",
                "Title",
                "Description",
                "Principal_Investigator",
                "Release_Date",
                ["RNASeq", "Study_Curation_Status_fkey"],
                "Cellbrowser_URL",
                {"sourcekey": "Experiment_Types"},
                {"sourcekey": "Anatomical_Source"},
                {"sourcekey": "Anatomical_Source_Count"},
                {"sourcekey": "Species"},
                "RCT",
                "RMT"
            ],
            "entry": [
                "Title",
                "Description",
                "Principal_Investigator",
                "Release_Date",
                ["RNASeq", "Study_Curation_Status_fkey"],
                "Cellbrowser_URL"
            ],
            "filter": {"and": [
                {"source": [inbound("Experiment_Study_fkey"), "Experiment_Type"], "markdown_name": "Experiment Type"},
                {"source": anatomical_source_path(), "markdown_name": "Specimen_Anatomical_Source"},
                {"sourcekey": "Species"},
                {"source": "Release_Date"},
                {"source": "Curation_Status", "markdown_name": "Curation Status"},
                {"source": "Title", "ux_mode": "search"}
            ]}
        }),
    );
    a.insert(
        tags::VISIBLE_FOREIGN_KEYS.into(),
        json!({"detailed": [["RNASeq", "Experiment_Study_fkey"], ["RNASeq", "Study_File_Study_fkey"]]}),
    );
    a.insert(
        tags::TABLE_DISPLAY.into(),
        json!({
            "row_name": {"row_markdown_pattern": "{{{RID}}}: {{{Title}}}"},
            "*": {"row_order": [{"column": "RMT", "descending": true}]}
        }),
    );
    Json::Object(a)
}

/// The demo catalog document.
pub fn catalog_json() -> Json {
    json!({
        "owners": [OWNER_ROLE],
        "acls": {
            "enumerate": ["*"],
            "select": ["*"],
            "insert": [CURATOR_ROLE],
            "update": [CURATOR_ROLE],
            "delete": [CURATOR_ROLE]
        },
        "annotations": {
            tags::DISPLAY: {"name_style": {"underline_space": true}}
        },
        "schemas": {
            "Vocab": {"tables": {
                "Curation_Status": {
                    "comment": "Workflow states of curated records",
                    "columns": [{"name": "Name", "type": "text", "nullable": false}],
                    "keys": [{"columns": ["Name"]}]
                },
                "Tissue": {
                    "columns": [
                        {"name": "Name", "type": "text", "nullable": false},
                        {"name": "Description", "type": "markdown"}
                    ],
                    "keys": [{"columns": ["Name"]}]
                },
                "Species": {
                    "columns": [{"name": "Name", "type": "text", "nullable": false}],
                    "keys": [{"columns": ["Name"]}]
                }
            }},
            "RNASeq": {"tables": {
                "Study": {
                    "comment": "A body of work grouping experiments",
                    "columns": [
                        {"name": "Title", "type": "text", "nullable": false},
                        {"name": "Description", "type": "markdown"},
                        {"name": "Principal_Investigator", "type": "text", "annotations": {tags::REQUIRED: {}}},
                        {"name": "Release_Date", "type": "date"},
                        status_column(),
                        {"name": "Cellbrowser_URL", "type": "text", "annotations": {
                            tags::COLUMN_DISPLAY: {"detailed": {"markdown_pattern":
                                "{{#_Cellbrowser_URL}}::: iframe [Cell Browser]({{{_Cellbrowser_URL}}}){width=1000 height=600}\n:::{{/_Cellbrowser_URL}}"}}
                        }}
                    ],
                    "foreign_keys": [
                        fk("RNASeq", "Study_Curation_Status_fkey", &["Curation_Status"], "Vocab", "Curation_Status", &["Name"])
                    ],
                    "annotations": study_annotations(),
                    "row_policy": release_policy()
                },
                "Protocol": {
                    "columns": [
                        {"name": "Name", "type": "text", "nullable": false},
                        {"name": "Category", "type": "text"},
                        {"name": "Description", "type": "markdown"}
                    ],
                    "keys": [{"columns": ["Name"]}]
                },
                "Experiment": {
                    "columns": [
                        {"name": "Study", "type": "text", "nullable": false},
                        {"name": "Experiment_Type", "type": "text"},
                        {"name": "Protocol", "type": "text"},
                        {"name": "Species", "type": "text"},
                        {"name": "Read_Length", "type": "int"},
                        status_column()
                    ],
                    "foreign_keys": [
                        fk("RNASeq", "Experiment_Study_fkey", &["Study"], "RNASeq", "Study", &["RID"])
                            .as_object().cloned().map(|mut o| {
                                o.insert("annotations".into(), json!({tags::FOREIGN_KEY: {"from_name": "Experiments"}}));
                                Json::Object(o)
                            }).expect("object"),
                        fk("RNASeq", "Experiment_Protocol_fkey", &["Protocol"], "RNASeq", "Protocol", &["RID"])
                            .as_object().cloned().map(|mut o| {
                                o.insert("annotations".into(), json!({tags::FOREIGN_KEY: {
                                    "to_name": "Protocol",
                                    "selection_filter": [{"source": "Category", "choices": ["Purification"]}]
                                }}));
                                Json::Object(o)
                            }).expect("object"),
                        fk("RNASeq", "Experiment_Species_fkey", &["Species"], "Vocab", "Species", &["Name"]),
                        fk("RNASeq", "Experiment_Curation_Status_fkey", &["Curation_Status"], "Vocab", "Curation_Status", &["Name"])
                    ],
                    "row_policy": release_policy()
                },
                "Specimen": {
                    "columns": [
                        {"name": "Species", "type": "text", "annotations": {tags::IMMUTABLE: {}}},
                        {"name": "Stage", "type": "text"},
                        {"name": "Age_Days", "type": "float"},
                        {"name": "Collection_Date", "type": "date"}
                    ],
                    "foreign_keys": [fk("RNASeq", "Specimen_Species_fkey", &["Species"], "Vocab", "Species", &["Name"])]
                },
                "Replicate": {
                    "columns": [
                        {"name": "Experiment", "type": "text", "nullable": false},
                        {"name": "Specimen", "type": "text"},
                        {"name": "Replicate_Number", "type": "int", "nullable": false}
                    ],
                    "foreign_keys": [
                        fk("RNASeq", "Replicate_Experiment_fkey", &["Experiment"], "RNASeq", "Experiment", &["RID"]),
                        fk("RNASeq", "Replicate_Specimen_fkey", &["Specimen"], "RNASeq", "Specimen", &["RID"])
                    ]
                },
                "Specimen_Tissue": {
                    "columns": [
                        {"name": "Specimen", "type": "text", "nullable": false},
                        {"name": "Tissue", "type": "text", "nullable": false}
                    ],
                    "keys": [{"columns": ["Specimen", "Tissue"]}],
                    "foreign_keys": [
                        fk("RNASeq", "Specimen_Tissue_Specimen_fkey", &["Specimen"], "RNASeq", "Specimen", &["RID"]),
                        fk("RNASeq", "Specimen_Tissue_Tissue_fkey", &["Tissue"], "Vocab", "Tissue", &["Name"])
                    ]
                },
                "File": {
                    "columns": [
                        {"name": "URL", "type": "text", "nullable": false, "annotations": {
                            tags::ASSET: {"filename_column": "Filename", "byte_count_column": "Length", "md5": "MD5"}
                        }},
                        {"name": "Filename", "type": "text"},
                        {"name": "Length", "type": "int"},
                        {"name": "MD5", "type": "text", "annotations": {tags::GENERATED: {}}}
                    ]
                },
                "Study_File": {
                    "columns": [
                        {"name": "Study", "type": "text", "nullable": false},
                        {"name": "File", "type": "text", "nullable": false}
                    ],
                    "keys": [{"columns": ["Study", "File"]}],
                    "foreign_keys": [
                        fk("RNASeq", "Study_File_Study_fkey", &["Study"], "RNASeq", "Study", &["RID"]),
                        fk("RNASeq", "Study_File_File_fkey", &["File"], "RNASeq", "File", &["RID"])
                    ]
                }
            }}
        }
    })
}

pub fn catalog() -> Catalog {
    parse_catalog(catalog_json().to_string().as_bytes()).expect("fixture catalog is valid")
}

fn rec(v: Json) -> Record {
    match v {
        Json::Object(m) => m,
        _ => unreachable!("records are objects"),
    }
}

fn rid(row: &crate::storage::Row) -> String {
    row[crate::model::RID].as_text().expect("RID is text").to_string()
}

/// Fills `db` with deterministic rows for `seed`. Around 650 rows in total.
pub fn populate(db: &Database, catalog: &Catalog, seed: u64) -> Result<(), StorageError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let who = admin();
    let put = |table: &str, schema: &str, rows: Vec<Json>| -> Result<Vec<String>, StorageError> {
        let records: Vec<Record> = rows.into_iter().map(rec).collect();
        Ok(db
            .insert(catalog, &TableRef::new(schema, table), &records, &who)?
            .iter()
            .map(rid)
            .collect())
    };

    put("Curation_Status", "Vocab", STATUSES.iter().map(|s| json!({"Name": s})).collect())?;
    put("Species", "Vocab", SPECIES.iter().map(|s| json!({"Name": s})).collect())?;
    put(
        "Tissue",
        "Vocab",
        TISSUES
            .iter()
            .map(|t| json!({"Name": t, "Description": format!("**{t}** tissue")}))
            .collect(),
    )?;

    let categories = ["Purification", "Sequencing", "Dissection"];
    let protocols = put(
        "Protocol",
        "RNASeq",
        (0..6)
            .map(|i| {
                json!({
                    "Name": format!("PR-{:02}", i + 1),
                    "Category": categories[i % categories.len()],
                    "Description": format!("Protocol step {}", i + 1)
                })
            })
            .collect(),
    )?;

    let status = |rng: &mut ChaCha8Rng| {
        if rng.random_bool(0.6) {
            RELEASED
        } else {
            STATUSES[rng.random_range(1..STATUSES.len())]
        }
    };
    let words = ["atlas", "development", "injury", "regeneration", "map", "profile"];
    let pis = ["A. Rivera", "B. Chen", "C. Okafor", "D. Novak"];
    let studies = put(
        "Study",
        "RNASeq",
        (0..40)
            .map(|i| {
                let tissue = TISSUES.choose(&mut rng).expect("non-empty");
                let word = words.choose(&mut rng).expect("non-empty");
                json!({
                    "Title": format!("{tissue} {word} {}", i + 1),
                    "Description": format!("Transcriptome *{word}* of the {}", tissue.to_lowercase()),
                    "Principal_Investigator": if rng.random_bool(0.9) { Json::from(*pis.choose(&mut rng).expect("non-empty")) } else { Json::Null },
                    "Release_Date": if rng.random_bool(0.8) {
                        Json::from(format!("20{:02}-{:02}-{:02}", rng.random_range(15..25), rng.random_range(1..13), rng.random_range(1..29)))
                    } else { Json::Null },
                    "Curation_Status": status(&mut rng),
                    "Cellbrowser_URL": if i % 5 == 0 { Json::from(format!("https://cells.example.org/study/{}", i + 1)) } else { Json::Null }
                })
            })
            .collect(),
    )?;

    let types = ["RNA-Seq", "scRNA-Seq", "ChIP-Seq", "ATAC-Seq"];
    let experiments = put(
        "Experiment",
        "RNASeq",
        (0..80)
            .map(|_| {
                json!({
                    "Study": studies.choose(&mut rng).expect("non-empty"),
                    "Experiment_Type": if rng.random_bool(0.9) { Json::from(*types.choose(&mut rng).expect("non-empty")) } else { Json::Null },
                    "Protocol": if rng.random_bool(0.8) { Json::from(protocols.choose(&mut rng).expect("non-empty").clone()) } else { Json::Null },
                    "Species": SPECIES.choose(&mut rng).expect("non-empty"),
                    "Read_Length": if rng.random_bool(0.85) { Json::from(*[50, 75, 100, 150].choose(&mut rng).expect("non-empty")) } else { Json::Null },
                    "Curation_Status": status(&mut rng)
                })
            })
            .collect(),
    )?;

    let stages = ["E11.5", "E13.5", "E15.5", "P0", "Adult"];
    let specimens = put(
        "Specimen",
        "RNASeq",
        (0..100)
            .map(|_| {
                json!({
                    "Species": SPECIES.choose(&mut rng).expect("non-empty"),
                    "Stage": if rng.random_bool(0.9) { Json::from(*stages.choose(&mut rng).expect("non-empty")) } else { Json::Null },
                    "Age_Days": (rng.random_range(0.0..400.0f64) * 10.0).round() / 10.0,
                    "Collection_Date": format!("2019-{:02}-{:02}", rng.random_range(1..13), rng.random_range(1..29))
                })
            })
            .collect(),
    )?;

    put(
        "Replicate",
        "RNASeq",
        (0..120)
            .map(|i| {
                json!({
                    "Experiment": experiments.choose(&mut rng).expect("non-empty"),
                    "Specimen": if rng.random_bool(0.95) { Json::from(specimens.choose(&mut rng).expect("non-empty").clone()) } else { Json::Null },
                    "Replicate_Number": (i % 3) + 1
                })
            })
            .collect(),
    )?;

    let mut links = Vec::new();
    for s in &specimens {
        let n = rng.random_range(0..3);
        let chosen: Vec<&&str> = TISSUES.choose_multiple(&mut rng, n).collect();
        for t in chosen {
            links.push(json!({"Specimen": s, "Tissue": t}));
        }
    }
    put("Specimen_Tissue", "RNASeq", links)?;

    let files = put(
        "File",
        "RNASeq",
        (0..60)
            .map(|i| {
                let len: u32 = rng.random_range(1_000..5_000_000);
                let hash = format!("{:032x}", rng.random::<u128>());
                json!({
                    "URL": format!("/assets/{hash}"),
                    "Filename": format!("reads_{:03}.fastq.gz", i + 1),
                    "Length": len,
                    "MD5": hash
                })
            })
            .collect(),
    )?;
    put(
        "Study_File",
        "RNASeq",
        files
            .iter()
            .map(|f| json!({"Study": studies.choose(&mut rng).expect("non-empty"), "File": f}))
            .collect(),
    )?;
    Ok(())
}
