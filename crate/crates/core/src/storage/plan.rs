//! Relational query plans over table instances.
//!
//! Instance `0` is the base table; join `i` introduces instance `i + 1`,
//! attached to an earlier instance by equality of key columns.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::Value;
use crate::model::{FkName, TableRef};
use crate::policy::RowFilter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    ArrayD,
    CntD,
    Cnt,
    Min,
    Max,
    Sum,
}

impl Aggregate {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "array_d" => Aggregate::ArrayD,
            "cnt_d" => Aggregate::CntD,
            "cnt" => Aggregate::Cnt,
            "min" => Aggregate::Min,
            "max" => Aggregate::Max,
            "sum" => Aggregate::Sum,
            _ => return None,
        })
    }
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregate::ArrayD => "array_d",
            Aggregate::CntD => "cnt_d",
            Aggregate::Cnt => "cnt",
            Aggregate::Min => "min",
            Aggregate::Max => "max",
            Aggregate::Sum => "sum",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ColumnRef {
    pub instance: usize,
    pub column: String,
}

impl ColumnRef {
    pub fn new(instance: usize, column: impl Into<String>) -> Self {
        Self {
            instance,
            column: column.into(),
        }
    }

    pub fn base(column: impl Into<String>) -> Self {
        Self::new(0, column)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JoinKind {
    Inner,
    LeftOuter,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Join {
    pub parent: usize,
    pub table: TableRef,
    /// Columns on the parent instance.
    pub left_columns: Vec<String>,
    /// Columns on the joined instance, positionally matched.
    pub right_columns: Vec<String>,
    pub kind: JoinKind,
    pub row_filter: Option<RowFilter>,
    pub via: Option<FkName>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Eq(ColumnRef, #[serde(serialize_with = "ser_value")] Value),
    In(ColumnRef, #[serde(serialize_with = "ser_values")] Vec<Value>),
    Between {
        column: ColumnRef,
        #[serde(serialize_with = "ser_opt_value")]
        min: Option<Value>,
        #[serde(serialize_with = "ser_opt_value")]
        max: Option<Value>,
    },
    /// Case-insensitive substring match.
    Ilike(ColumnRef, String),
    Any(Vec<Predicate>),
}

fn ser_value<S: serde::Serializer>(v: &Value, s: S) -> Result<S::Ok, S::Error> {
    v.to_json().serialize(s)
}

fn ser_values<S: serde::Serializer>(v: &[Value], s: S) -> Result<S::Ok, S::Error> {
    v.iter().map(Value::to_json).collect::<Vec<_>>().serialize(s)
}

fn ser_opt_value<S: serde::Serializer>(v: &Option<Value>, s: S) -> Result<S::Ok, S::Error> {
    v.as_ref().map(Value::to_json).serialize(s)
}

impl Predicate {
    /// Every column reference in the predicate tree.
    pub fn columns(&self) -> Vec<&ColumnRef> {
        match self {
            Predicate::Eq(c, _) | Predicate::In(c, _) | Predicate::Ilike(c, _) => vec![c],
            Predicate::Between { column, .. } => vec![column],
            Predicate::Any(ps) => ps.iter().flat_map(Predicate::columns).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One result row per base entity: `{RID, value}`.
    BaseRid,
    /// One result row overall: `{value}`.
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// Whole rows of one instance, de-duplicated by RID.
    Entity {
        instance: usize,
        columns: Vec<String>,
    },
    /// Bag of tuples; output keys are the aliases.
    Columns(Vec<(String, ColumnRef)>),
    Aggregate {
        target: ColumnRef,
        function: Aggregate,
        group: Grouping,
    },
    /// Distinct target values with the count of distinct base entities:
    /// `{value, count}` sorted by count descending then value ascending.
    ValueCounts { target: ColumnRef },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SortKey {
    pub column: ColumnRef,
    pub descending: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Page {
    pub limit: Option<usize>,
    pub offset: usize,
}

impl Page {
    pub fn first(limit: usize) -> Self {
        Self {
            limit: Some(limit),
            offset: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryPlan {
    pub base: TableRef,
    pub base_filter: Option<RowFilter>,
    pub joins: Vec<Join>,
    pub predicates: Vec<Predicate>,
    pub projection: Projection,
    pub sort: Vec<SortKey>,
    pub page: Page,
}

impl QueryPlan {
    pub fn new(base: TableRef, projection: Projection) -> Self {
        Self {
            base,
            base_filter: None,
            joins: Vec::new(),
            predicates: Vec::new(),
            projection,
            sort: Vec::new(),
            page: Page::default(),
        }
    }

    pub fn instance_table(&self, instance: usize) -> Option<&TableRef> {
        if instance == 0 {
            Some(&self.base)
        } else {
            self.joins.get(instance - 1).map(|j| &j.table)
        }
    }

    pub fn instance_count(&self) -> usize {
        self.joins.len() + 1
    }

    /// Row filter applied to each instance (base first).
    pub fn instance_filters(&self) -> impl Iterator<Item = (usize, &TableRef, Option<&RowFilter>)> {
        std::iter::once((0, &self.base, self.base_filter.as_ref())).chain(
            self.joins
                .iter()
                .enumerate()
                .map(|(i, j)| (i + 1, &j.table, j.row_filter.as_ref())),
        )
    }
}

/// Projected rows plus the pre-paging row count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultSet {
    pub rows: Vec<super::Row>,
    pub total: Option<usize>,
}
