//! Access rights, the role-based model, and row visibility predicates.

use std::collections::{BTreeSet, HashMap};

use indexmap::IndexMap;
use serde::Serialize;

use crate::model::{Acl, Catalog, Column, Table, TableRef};

pub const EVERYONE: &str = "*";
pub const ANONYMOUS: &str = "anonymous";

/// The requesting client's identity and role set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ClientContext {
    pub id: String,
    pub roles: BTreeSet<String>,
}

impl ClientContext {
    pub fn anonymous() -> Self {
        Self {
            id: ANONYMOUS.to_string(),
            roles: BTreeSet::from([EVERYONE.to_string()]),
        }
    }

    /// The `*` role is always added.
    pub fn new<I, S>(id: impl Into<String>, roles: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut roles: BTreeSet<String> = roles.into_iter().map(Into::into).collect();
        roles.insert(EVERYONE.to_string());
        Self {
            id: id.into(),
            roles,
        }
    }

    pub fn is_anonymous(&self) -> bool {
        self.id == ANONYMOUS
    }

    fn holds(&self, list: &[String]) -> bool {
        list.iter().any(|r| r == EVERYONE || self.roles.contains(r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Right {
    Enumerate,
    Select,
    Insert,
    Update,
    Delete,
}

fn acl_entry(acl: &Acl, right: Right) -> Option<&Vec<String>> {
    match right {
        Right::Enumerate => acl.enumerate.as_ref(),
        Right::Select => acl.select.as_ref(),
        Right::Insert => acl.insert.as_ref(),
        Right::Update => acl.update.as_ref(),
        Right::Delete => acl.delete.as_ref(),
    }
}

/// Rights computed for one element.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AccessRights {
    pub visible: bool,
    pub select: bool,
    pub insert: bool,
    pub update: bool,
    pub delete: bool,
}

impl AccessRights {
    pub fn all() -> Self {
        Self {
            visible: true,
            select: true,
            insert: true,
            update: true,
            delete: true,
        }
    }
}

pub fn is_owner(catalog: &Catalog, client: &ClientContext) -> bool {
    client.holds(&catalog.owners)
}

/// Whether `client` holds `right` on the table, or on the column when given.
/// Unset rights inherit column → table → catalog → owners only.
pub fn has_right(
    catalog: &Catalog,
    table: &Table,
    column: Option<&Column>,
    right: Right,
    client: &ClientContext,
) -> bool {
    if is_owner(catalog, client) {
        return true;
    }
    let column_entry = match right {
        Right::Delete => None,
        _ => column.and_then(|c| acl_entry(&c.acls, right)),
    };
    match column_entry
        .or_else(|| acl_entry(&table.acls, right))
        .or_else(|| acl_entry(&catalog.acls, right))
    {
        Some(list) => client.holds(list),
        None => false,
    }
}

/// An element is visible when the client may both enumerate and select it;
/// mutation rights imply select on the same element.
pub fn element_rights(
    catalog: &Catalog,
    table: &Table,
    column: Option<&Column>,
    client: &ClientContext,
) -> AccessRights {
    let has = |r| has_right(catalog, table, column, r, client);
    let select = has(Right::Select);
    let visible = select && has(Right::Enumerate);
    AccessRights {
        visible,
        select,
        insert: select && has(Right::Insert),
        update: select && has(Right::Update),
        delete: select && has(Right::Delete),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRights {
    pub table: AccessRights,
    pub columns: IndexMap<String, AccessRights>,
}

/// A catalog pruned to what one client may see, with rights attached.
#[derive(Debug, Clone, PartialEq)]
pub struct RoleBasedModel {
    pub client: ClientContext,
    pub catalog: Catalog,
    pub rights: HashMap<TableRef, TableRights>,
}

impl RoleBasedModel {
    pub fn version(&self) -> u64 {
        self.catalog.version
    }

    pub fn table(&self, table: &TableRef) -> Option<&Table> {
        self.catalog.table(table)
    }

    pub fn table_rights(&self, table: &TableRef) -> Option<AccessRights> {
        self.rights.get(table).map(|r| r.table)
    }

    pub fn column_rights(&self, table: &TableRef, column: &str) -> Option<AccessRights> {
        self.rights.get(table)?.columns.get(column).copied()
    }

    pub fn is_owner(&self) -> bool {
        is_owner(&self.catalog, &self.client)
    }

    pub fn row_predicate(&self, table: &TableRef) -> Option<RowFilter> {
        self.catalog
            .table(table)
            .and_then(|t| row_predicate(&self.catalog, t, &self.client))
    }
}

/// Builds the role-based model: hidden tables and columns are removed, along
/// with keys and foreign keys touching anything hidden.
pub fn prune_model(catalog: &Catalog, client: &ClientContext) -> RoleBasedModel {
    let mut pruned = catalog.clone();
    let mut rights = HashMap::new();

    for schema in pruned.schemas.values_mut() {
        schema.tables.retain(|_, table| {
            let original = catalog
                .table(&table.table_ref())
                .expect("pruned catalog is a copy");
            let table_rights = element_rights(catalog, original, None, client);
            if !table_rights.visible {
                return false;
            }
            let mut columns = IndexMap::new();
            table.columns.retain(|col| {
                let r = element_rights(catalog, original, Some(col), client);
                if r.visible {
                    columns.insert(col.name.clone(), r);
                }
                r.visible
            });
            rights.insert(
                table.table_ref(),
                TableRights {
                    table: table_rights,
                    columns,
                },
            );
            true
        });
    }

    // Foreign keys and keys may only mention surviving elements.
    let survivors: HashMap<TableRef, BTreeSet<String>> = pruned
        .tables()
        .map(|t| {
            (
                t.table_ref(),
                t.columns.iter().map(|c| c.name.clone()).collect(),
            )
        })
        .collect();
    for schema in pruned.schemas.values_mut() {
        for table in schema.tables.values_mut() {
            let own = &survivors[&table.table_ref()];
            table
                .keys
                .retain(|k| k.columns.iter().all(|c| own.contains(c)));
            table.foreign_keys.retain(|fk| {
                let Some(target) = survivors.get(&fk.to_table()) else {
                    return false;
                };
                fk.from_columns.iter().all(|c| own.contains(c))
                    && fk.to.columns.iter().all(|c| target.contains(c))
            });
        }
    }

    RoleBasedModel {
        client: client.clone(),
        catalog: pruned,
        rights,
    }
}

/// Disjunction of `column = value` terms. No terms means no row is visible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowFilter {
    pub terms: Vec<(String, String)>,
}

impl RowFilter {
    pub fn deny_all() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn allows(&self, lookup: impl Fn(&str) -> Option<String>) -> bool {
        self.terms
            .iter()
            .any(|(col, val)| lookup(col).as_deref() == Some(val.as_str()))
    }
}

/// Row visibility for `client` on `table`. `None` means every row is visible.
pub fn row_predicate(catalog: &Catalog, table: &Table, client: &ClientContext) -> Option<RowFilter> {
    let policy = table.row_policy.as_ref()?;
    if is_owner(catalog, client) {
        return None;
    }
    let mut filter = RowFilter::deny_all();
    for rule in policy.rules.iter().filter(|r| r.roles.iter().any(|role| role == EVERYONE || client.roles.contains(role))) {
        // A matching rule without a predicate grants every row.
        let pred = rule.predicate.as_ref()?;
        for v in &pred.values {
            let term = (pred.column.clone(), v.clone());
            if !filter.terms.contains(&term) {
                filter.terms.push(term);
            }
        }
    }
    Some(filter)
}
