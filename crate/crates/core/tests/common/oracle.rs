//! Reference computations that bypass the rewriter: post-filtering by
//! explicit group counts, and group sizes from a direct CSV scan.

use std::collections::BTreeMap;
use std::path::Path;

use qdt_core::dataset_store::register_aggregates;
use qdt_core::policy_engine::ast::{for_each_child_query_mut, Expr, Ident, Query, SelectItem};
use qdt_core::policy_engine::parse_sql;
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde_json::Value;

pub fn open_raw(path: &Path) -> Connection {
    let conn = Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY).unwrap();
    register_aggregates(&conn).unwrap();
    conn
}

fn json(value: ValueRef<'_>) -> Value {
    match value {
        ValueRef::Null => Value::Null,
        ValueRef::Integer(i) => Value::from(i),
        ValueRef::Real(r) => serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number),
        ValueRef::Text(t) => Value::String(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => Value::String(b.iter().map(|x| format!("{x:02x}")).collect()),
    }
}

pub fn raw_rows(conn: &Connection, sql: &str) -> Vec<Vec<Value>> {
    let mut stmt = conn.prepare(sql).unwrap_or_else(|e| panic!("{sql}: {e}"));
    let width = stmt.column_count();
    let mut rows = stmt.query([]).unwrap();
    let mut out = Vec::new();
    while let Some(row) = rows.next().unwrap() {
        out.push((0..width).map(|i| json(row.get_ref(i).unwrap())).collect());
    }
    out
}

fn count_item(alias: &str) -> SelectItem {
    SelectItem::Expr {
        expr: Expr::count_star(),
        alias: Some(Ident::new(alias)),
    }
}

/// Nested queries: project each group's row count, then drop small groups
/// with an outer WHERE (never HAVING).
fn filter_child(query: &Query, k: u32) -> Query {
    let mut query = query.clone();
    for_each_child_query_mut(&mut query, &mut |c| *c = filter_child(c, k));
    if query.body.from.is_none() {
        return query;
    }
    assert!(
        query.set_ops.is_empty() && query.order_by.is_empty() && query.limit.is_none(),
        "oracle handles plain nested SELECTs only: {query}"
    );
    let mut names = Vec::new();
    for (i, item) in query.body.projection.iter_mut().enumerate() {
        let SelectItem::Expr { alias, .. } = item else {
            panic!("wildcard in nested query: {query}")
        };
        names.push(
            alias
                .as_ref()
                .map_or(format!("oracle_c{i}"), |a| a.value.clone()),
        );
        *alias = Some(Ident::new(format!("oracle_c{i}")));
    }
    query.body.projection.push(count_item("oracle_n"));
    let columns = names
        .iter()
        .enumerate()
        .map(|(i, name)| format!("oracle_c{i} AS {name}"))
        .collect::<Vec<_>>()
        .join(", ");
    parse_sql(&format!(
        "SELECT {columns} FROM ({query}) WHERE oracle_n >= {k}"
    ))
    .unwrap()
}

fn literal(expr: &Expr) -> usize {
    expr.to_string().parse().expect("integer LIMIT/OFFSET")
}

/// Executes `sql` unmodified except for an extra `COUNT(*)` column, then
/// keeps only rows whose group has at least `k` members. LIMIT/OFFSET and
/// the row cap apply after filtering, as they do for the rewritten query.
pub fn post_filtered(conn: &Connection, sql: &str, k: u32, max_rows: usize) -> Vec<Vec<Value>> {
    let mut query = parse_sql(sql).unwrap();
    for_each_child_query_mut(&mut query, &mut |c| *c = filter_child(c, k));
    let limit = query
        .limit
        .take()
        .map(|e| literal(&e))
        .unwrap_or(usize::MAX);
    let offset = query.offset.take().map(|e| literal(&e)).unwrap_or(0);
    let reads_table = query.body.from.is_some();
    if reads_table {
        query.body.projection.push(count_item("oracle_n"));
    }
    raw_rows(conn, &query.to_string())
        .into_iter()
        .filter_map(|mut row| {
            if !reads_table {
                return Some(row);
            }
            let n = row.pop().and_then(|v| v.as_u64()).unwrap();
            (n >= u64::from(k)).then_some(row)
        })
        .skip(offset)
        .take(limit)
        .take(max_rows)
        .collect()
}

/// Group sizes by `key` among CSV rows accepted by `keep`, read straight
/// from the source file.
pub fn csv_group_sizes(
    path: &Path,
    key: &str,
    keep: impl Fn(&BTreeMap<String, String>) -> bool,
) -> BTreeMap<String, usize> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let mut sizes = BTreeMap::new();
    for row in reader.deserialize::<BTreeMap<String, String>>() {
        let row = row.unwrap();
        if keep(&row) {
            *sizes.entry(row[key].clone()).or_insert(0) += 1;
        }
    }
    sizes
}
