//! Annotation tag URIs and flag lookups.

use crate::model::{Column, Table};

pub const VISIBLE_COLUMNS: &str = "tag:isrd.isi.edu,2016:visible-columns";
pub const SOURCE_DEFINITIONS: &str = "tag:isrd.isi.edu,2019:source-definitions";
pub const VISIBLE_FOREIGN_KEYS: &str = "tag:isrd.isi.edu,2016:visible-foreign-keys";
pub const TABLE_DISPLAY: &str = "tag:isrd.isi.edu,2016:table-display";
pub const COLUMN_DISPLAY: &str = "tag:isrd.isi.edu,2016:column-display";
pub const ASSET: &str = "tag:isrd.isi.edu,2017:asset";
pub const REQUIRED: &str = "tag:isrd.isi.edu,2018:required";
pub const FOREIGN_KEY: &str = "tag:isrd.isi.edu,2016:foreign-key";
pub const DISPLAY: &str = "tag:misd.isi.edu,2015:display";
pub const GENERATED: &str = "tag:isrd.isi.edu,2016:generated";
pub const IMMUTABLE: &str = "tag:isrd.isi.edu,2016:immutable";

pub const RECOGNIZED: [&str; 11] = [
    VISIBLE_COLUMNS,
    SOURCE_DEFINITIONS,
    VISIBLE_FOREIGN_KEYS,
    TABLE_DISPLAY,
    COLUMN_DISPLAY,
    ASSET,
    REQUIRED,
    FOREIGN_KEY,
    DISPLAY,
    GENERATED,
    IMMUTABLE,
];

/// Flag annotations placed on a table apply to all of its columns.
fn flagged(table: &Table, column: &Column, tag: &str) -> bool {
    column.annotations.contains_key(tag) || table.annotations.contains_key(tag)
}

pub fn is_generated(table: &Table, column: &Column) -> bool {
    flagged(table, column, GENERATED)
}

pub fn is_immutable(table: &Table, column: &Column) -> bool {
    flagged(table, column, IMMUTABLE)
}

pub fn is_required(column: &Column) -> bool {
    column.annotations.contains_key(REQUIRED)
}
