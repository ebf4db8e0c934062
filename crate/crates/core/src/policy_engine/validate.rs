use std::collections::{BTreeSet, HashSet};

use super::ast::*;
use super::violation::{Violation, ViolationCode};
use super::{AllowedAggregate, PolicyConfig};
use crate::dataset_store::SchemaCatalog;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum AggregateKind {
    Allowed(AllowedAggregate),
    Extreme,
    /// Aggregates that can reveal individual values (GROUP_CONCAT, ...).
    Unsafe,
}

const UNSAFE_AGGREGATES: &[&str] = &[
    "group_concat",
    "string_agg",
    "json_group_array",
    "json_group_object",
    "jsonb_group_array",
    "jsonb_group_object",
    "array_agg",
    "listagg",
    "median",
    "mode",
    "percentile",
    "percentile_cont",
    "percentile_disc",
    "any_value",
    "first_value",
    "last_value",
    "nth_value",
    "bit_and",
    "bit_or",
    "bit_xor",
    "row_number",
    "rank",
    "dense_rank",
    "ntile",
    "lag",
    "lead",
    "cume_dist",
    "percent_rank",
];

/// `None` for scalar functions.
pub(crate) fn classify_function(call: &FunctionCall) -> Option<AggregateKind> {
    let name = call.name.normalized();
    let arity = match &call.args {
        FunctionArgs::Star => 1,
        FunctionArgs::List(args) => args.len(),
    };
    let kind = match name.as_str() {
        "count" if call.distinct => AggregateKind::Allowed(AllowedAggregate::CountDistinct),
        "count" => AggregateKind::Allowed(AllowedAggregate::Count),
        "avg" => AggregateKind::Allowed(AllowedAggregate::Avg),
        "sum" | "total" => AggregateKind::Allowed(AllowedAggregate::Sum),
        "stddev" | "stddev_samp" | "stddev_pop" | "std" => {
            AggregateKind::Allowed(AllowedAggregate::Stddev)
        }
        "variance" | "var_samp" | "var_pop" => AggregateKind::Allowed(AllowedAggregate::Variance),
        // two-or-more argument MIN/MAX are scalar in SQLite
        "min" | "max" if arity == 1 => AggregateKind::Extreme,
        other if UNSAFE_AGGREGATES.contains(&other) => AggregateKind::Unsafe,
        _ => return None,
    };
    Some(kind)
}

/// Checks a parsed query against the policy. An empty result means the
/// query requests only summary-level statistics.
pub fn validate(ast: &QueryAst, catalog: &SchemaCatalog, policy: &PolicyConfig) -> Vec<Violation> {
    let checker = Checker {
        policy,
        denied: policy.denied_set(catalog),
        tables: catalog
            .tables
            .iter()
            .map(|t| t.name.to_ascii_lowercase())
            .collect(),
        columns: catalog
            .tables
            .iter()
            .flat_map(|t| t.columns.iter())
            .map(|c| c.name.to_ascii_lowercase())
            .collect(),
    };
    let mut out = Vec::new();
    checker.query(ast, &mut out);
    out
}

struct Checker<'a> {
    policy: &'a PolicyConfig,
    denied: BTreeSet<String>,
    tables: HashSet<String>,
    columns: HashSet<String>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Position {
    Projection,
    Having,
    OrderBy,
}

/// Group keys of one SELECT, resolved through aliases and ordinals.
struct GroupKeys {
    canonical: HashSet<String>,
    projection_indices: HashSet<usize>,
}

#[derive(Default)]
struct ItemScan {
    has_aggregate: bool,
    has_bare: bool,
}

impl<'a> Checker<'a> {
    fn query(&self, query: &Query, out: &mut Vec<Violation>) {
        for op in &query.set_ops {
            out.push(Violation::at(
                ViolationCode::SetOperation,
                format!(
                    "set operations ({}) are not permitted",
                    match op.op {
                        SetOperator::Union => "UNION",
                        SetOperator::Intersect => "INTERSECT",
                        SetOperator::Except => "EXCEPT",
                    }
                ),
                op.span,
            ));
        }
        self.select(&query.body, out);
        for op in &query.set_ops {
            self.select(&op.select, out);
        }
        self.order_by(query, out);

        for_each_child_query(query, &mut |child| {
            let mut inner = Vec::new();
            self.query(child, &mut inner);
            if !inner.is_empty() {
                let details: Vec<String> = inner.iter().map(|v| v.to_string()).collect();
                out.push(Violation::at(
                    ViolationCode::SubqueryViolation,
                    format!("subquery violates the policy: {}", details.join("; ")),
                    child.span,
                ));
            }
        });
    }

    fn is_denied(&self, name: &Ident) -> bool {
        self.denied.contains(&name.normalized())
    }

    fn select(&self, select: &Select, out: &mut Vec<Violation>) {
        if let Some(from) = &select.from {
            self.table_ref(&from.first, out);
            for join in &from.joins {
                out.push(Violation::at(
                    ViolationCode::JoinForbidden,
                    "joins and multiple FROM items are not permitted; query a single table",
                    join.span,
                ));
                self.table_ref(&join.table, out);
            }
        }

        let keys = self.group_keys(select, out);

        let mut any_aggregate = false;
        let mut any_bare = false;
        let mut all_aggregate_items = true;
        for (index, item) in select.projection.iter().enumerate() {
            match item {
                SelectItem::Wildcard(span) => {
                    any_bare = true;
                    all_aggregate_items = false;
                    out.push(Violation::at(
                        ViolationCode::BareProjection,
                        "SELECT * returns row-level data; select aggregates or GROUP BY keys",
                        *span,
                    ));
                }
                SelectItem::QualifiedWildcard(q, span) => {
                    any_bare = true;
                    all_aggregate_items = false;
                    out.push(Violation::at(
                        ViolationCode::BareProjection,
                        format!("{}.* returns row-level data", q.value),
                        *span,
                    ));
                }
                SelectItem::Expr { expr, .. } => {
                    if keys.projection_indices.contains(&index)
                        || keys.canonical.contains(&expr.canonical())
                    {
                        all_aggregate_items = false;
                        continue;
                    }
                    let mut scan = ItemScan::default();
                    self.value_expr(expr, &keys, Position::Projection, &mut scan, out);
                    any_aggregate |= scan.has_aggregate;
                    any_bare |= scan.has_bare;
                    if !scan.has_aggregate || scan.has_bare {
                        all_aggregate_items = false;
                    }
                }
            }
        }

        if select.distinct && !all_aggregate_items {
            out.push(Violation::at(
                ViolationCode::DistinctProjection,
                "SELECT DISTINCT over non-aggregate items lists individual values",
                select.span,
            ));
        }

        if select.group_by.is_empty() && select.from.is_some() && !any_aggregate && !any_bare {
            out.push(Violation::at(
                ViolationCode::BareProjection,
                "query returns one row per record; use an aggregate or GROUP BY",
                select.span,
            ));
        }

        if let Some(having) = &select.having {
            let mut scan = ItemScan::default();
            self.value_expr(having, &keys, Position::Having, &mut scan, out);
        }
    }

    fn table_ref(&self, table: &TableRef, out: &mut Vec<Violation>) {
        if let TableRef::Named { name, span, .. } = table {
            let known = name.len() == 1 && self.tables.contains(&name[0].normalized());
            if !known {
                let full: Vec<&str> = name.iter().map(|p| p.value.as_str()).collect();
                out.push(Violation::at(
                    ViolationCode::UnknownTable,
                    format!("relation '{}' is not in the schema catalog", full.join(".")),
                    *span,
                ));
            }
        }
    }

    fn group_keys(&self, select: &Select, out: &mut Vec<Violation>) -> GroupKeys {
        let mut keys = GroupKeys {
            canonical: HashSet::new(),
            projection_indices: HashSet::new(),
        };
        for key in &select.group_by {
            let resolved = self.resolve_projection_ref(select, key);
            let target = match resolved {
                Some(index) => {
                    keys.projection_indices.insert(index);
                    match &select.projection[index] {
                        SelectItem::Expr { expr, .. } => expr,
                        _ => key,
                    }
                }
                None => key,
            };
            keys.canonical.insert(target.canonical());
            let mut denied = Vec::new();
            self.collect_columns(target, &mut |ident| {
                if self.is_denied(ident) {
                    denied.push(ident.value.clone());
                }
            });
            if !denied.is_empty() {
                out.push(Violation::at(
                    ViolationCode::IdentifierGrouping,
                    format!(
                        "grouping by identifier column {} makes each group a single record",
                        denied.join(", ")
                    ),
                    key.span,
                ));
            }
        }
        keys
    }

    /// Resolves an ordinal (`1`) or a projection alias to a projection index.
    fn resolve_projection_ref(&self, select: &Select, expr: &Expr) -> Option<usize> {
        match &expr.kind {
            ExprKind::Literal(Literal::Number(n)) => {
                let n: usize = n.parse().ok()?;
                (1..=select.projection.len()).contains(&n).then(|| n - 1)
            }
            ExprKind::Column {
                qualifier: None,
                name,
            } if !self.columns.contains(&name.normalized()) => {
                select.projection.iter().position(|item| {
                    matches!(item, SelectItem::Expr { alias: Some(a), .. } if a.eq_ignore_case(&name.value))
                })
            }
            _ => None,
        }
    }

    /// Visits column references outside subqueries.
    fn collect_columns<'e>(&self, expr: &'e Expr, f: &mut dyn FnMut(&'e Ident)) {
        if let ExprKind::Column { name, .. } = &expr.kind {
            f(name);
        }
        expr.for_each_child(&mut |child| self.collect_columns(child, f));
    }

    fn value_expr(
        &self,
        expr: &Expr,
        keys: &GroupKeys,
        position: Position,
        scan: &mut ItemScan,
        out: &mut Vec<Violation>,
    ) {
        if !keys.canonical.is_empty() && keys.canonical.contains(&expr.canonical()) {
            return;
        }
        match &expr.kind {
            ExprKind::Function(call) if call.over.is_some() || classify_function(call).is_some() => {
                if classify_function(call).is_some() {
                    scan.has_aggregate = true;
                }
                self.aggregate(call, expr.span, out);
            }
            ExprKind::Column { name, .. } => {
                if self.is_denied(name) {
                    out.push(Violation::at(
                        ViolationCode::IdentifierExposure,
                        format!(
                            "identifier column '{}' may only appear in WHERE or inside COUNT(DISTINCT ...)",
                            name.value
                        ),
                        expr.span,
                    ));
                }
                if position == Position::Projection {
                    scan.has_bare = true;
                    out.push(Violation::at(
                        ViolationCode::BareProjection,
                        format!(
                            "column '{}' is selected outside an aggregate and is not a GROUP BY key",
                            name.value
                        ),
                        expr.span,
                    ));
                }
            }
            ExprKind::Subquery(_) | ExprKind::Exists { .. } => {}
            _ => expr.for_each_child(&mut |child| {
                self.value_expr(child, keys, position, scan, out)
            }),
        }
    }

    fn aggregate(&self, call: &FunctionCall, span: Span, out: &mut Vec<Violation>) {
        let name = call.name.value.to_ascii_uppercase();
        if call.over.is_some() {
            out.push(Violation::at(
                ViolationCode::ForbiddenAggregate,
                format!("window function {name}(...) OVER is not permitted"),
                span,
            ));
        }
        match classify_function(call) {
            Some(AggregateKind::Allowed(kind)) if !self.policy.allowed_aggregates.contains(&kind) => {
                out.push(Violation::at(
                    ViolationCode::ForbiddenAggregate,
                    format!("aggregate {} is not allowed by the policy", kind.sql_name()),
                    span,
                ));
            }
            Some(AggregateKind::Extreme) if !self.policy.allow_min_max => {
                out.push(Violation::at(
                    ViolationCode::ForbiddenAggregate,
                    format!("{name} returns a single record's value and is not allowed"),
                    span,
                ));
            }
            Some(AggregateKind::Unsafe) => {
                out.push(Violation::at(
                    ViolationCode::ForbiddenAggregate,
                    format!("aggregate {name} can reveal individual values and is not allowed"),
                    span,
                ));
            }
            _ => {}
        }

        let FunctionArgs::List(args) = &call.args else {
            return;
        };
        let count_distinct_column = call.distinct
            && call.name.eq_ignore_case("count")
            && args.len() == 1
            && matches!(args[0].kind, ExprKind::Column { .. });
        if count_distinct_column {
            return;
        }
        for arg in args {
            self.aggregate_argument(arg, out);
        }
    }

    fn aggregate_argument(&self, expr: &Expr, out: &mut Vec<Violation>) {
        match &expr.kind {
            ExprKind::Column { name, .. } if self.is_denied(name) => {
                out.push(Violation::at(
                    ViolationCode::IdentifierExposure,
                    format!(
                        "identifier column '{}' may only be aggregated as COUNT(DISTINCT {})",
                        name.value, name.value
                    ),
                    expr.span,
                ));
            }
            ExprKind::Function(call) if call.over.is_some() || classify_function(call).is_some() => {
                self.aggregate(call, expr.span, out);
            }
            ExprKind::Subquery(_) | ExprKind::Exists { .. } => {}
            _ => expr.for_each_child(&mut |child| self.aggregate_argument(child, out)),
        }
    }

    fn order_by(&self, query: &Query, out: &mut Vec<Violation>) {
        let select = &query.body;
        let projected: HashSet<String> = select
            .projection
            .iter()
            .filter_map(|item| match item {
                SelectItem::Expr { expr, .. } => Some(expr.canonical()),
                _ => None,
            })
            .collect();
        let no_keys = GroupKeys {
            canonical: HashSet::new(),
            projection_indices: HashSet::new(),
        };
        for item in &query.order_by {
            if self.resolve_projection_ref(select, &item.expr).is_some()
                || projected.contains(&item.expr.canonical())
            {
                continue;
            }
            out.push(Violation::at(
                ViolationCode::OrderByRaw,
                "ORDER BY may only reference selected items (by expression, alias or position)",
                item.expr.span,
            ));
            let mut scan = ItemScan::default();
            self.value_expr(&item.expr, &no_keys, Position::OrderBy, &mut scan, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_sql;
    use super::super::test_support::catalog;
    use super::*;

    fn codes_with(sql: &str, policy: &PolicyConfig) -> Vec<ViolationCode> {
        let ast = parse_sql(sql).unwrap();
        let mut codes: Vec<_> = validate(&ast, &catalog(), policy)
            .into_iter()
            .map(|v| v.code)
            .collect();
        codes.sort();
        codes.dedup();
        codes
    }

    fn codes(sql: &str) -> Vec<ViolationCode> {
        codes_with(sql, &PolicyConfig::default())
    }

    use ViolationCode::*;

    #[test]
    fn star_is_bare_projection() {
        assert_eq!(codes("SELECT * FROM patients"), vec![BareProjection]);
    }

    #[test]
    fn grouping_by_identifier() {
        assert_eq!(
            codes("SELECT patient_nbr, AVG(num_medications) FROM patients GROUP BY patient_nbr"),
            vec![IdentifierGrouping]
        );
        assert_eq!(
            codes("SELECT patient_nbr AS p, COUNT(*) FROM patients GROUP BY p"),
            vec![IdentifierGrouping]
        );
        assert_eq!(
            codes("SELECT COUNT(*) FROM patients GROUP BY encounter_id % 100"),
            vec![IdentifierGrouping]
        );
    }

    #[test]
    fn group_key_with_average_is_clean() {
        assert!(codes("SELECT age, AVG(time_in_hospital) FROM patients GROUP BY age").is_empty());
        assert!(codes("SELECT age AS bucket, COUNT(*) AS n FROM patients GROUP BY bucket ORDER BY n DESC").is_empty());
        assert!(codes("SELECT UPPER(race), COUNT(*) FROM patients GROUP BY UPPER(race)").is_empty());
        assert!(codes("SELECT age, race, COUNT(*) FROM patients GROUP BY 1, 2 ORDER BY 3").is_empty());
    }

    #[test]
    fn min_max_follow_the_switch() {
        assert_eq!(
            codes("SELECT MAX(num_lab_procedures) FROM patients"),
            vec![ForbiddenAggregate]
        );
        let permissive = PolicyConfig {
            allow_min_max: true,
            ..PolicyConfig::default()
        };
        assert!(codes_with("SELECT MAX(num_lab_procedures) FROM patients", &permissive).is_empty());
    }

    #[test]
    fn aggregates_outside_the_allow_list() {
        assert_eq!(
            codes("SELECT GROUP_CONCAT(race) FROM patients"),
            vec![ForbiddenAggregate]
        );
        let narrow = PolicyConfig {
            allowed_aggregates: [AllowedAggregate::Count].into_iter().collect(),
            ..PolicyConfig::default()
        };
        assert_eq!(
            codes_with("SELECT AVG(num_medications) FROM patients", &narrow),
            vec![ForbiddenAggregate]
        );
    }

    #[test]
    fn window_functions_are_forbidden() {
        assert_eq!(
            codes("SELECT AVG(num_medications) OVER (PARTITION BY age) FROM patients"),
            vec![ForbiddenAggregate]
        );
    }

    #[test]
    fn identifier_outside_count_distinct() {
        assert_eq!(
            codes("SELECT AVG(encounter_id) FROM patients"),
            vec![IdentifierExposure]
        );
        assert_eq!(
            codes("SELECT COUNT(patient_nbr) FROM patients"),
            vec![IdentifierExposure]
        );
        assert!(codes("SELECT COUNT(DISTINCT patient_nbr) FROM patients").is_empty());
        assert_eq!(
            codes("SELECT age, COUNT(*) FROM patients GROUP BY age HAVING SUM(encounter_id) > 0"),
            vec![IdentifierExposure]
        );
    }

    #[test]
    fn identifiers_are_fine_in_where() {
        assert!(codes("SELECT AVG(num_medications) FROM patients WHERE encounter_id > 1000").is_empty());
    }

    #[test]
    fn distinct_over_raw_columns() {
        assert_eq!(
            codes("SELECT DISTINCT race FROM patients"),
            vec![BareProjection, DistinctProjection]
        );
        assert_eq!(
            codes("SELECT DISTINCT age FROM patients GROUP BY age"),
            vec![DistinctProjection]
        );
        assert!(codes("SELECT DISTINCT COUNT(*) FROM patients").is_empty());
    }

    #[test]
    fn subqueries_are_validated_recursively() {
        assert_eq!(
            codes("SELECT AVG(n) FROM (SELECT num_medications AS n FROM patients)"),
            vec![SubqueryViolation]
        );
        assert!(codes(
            "SELECT COUNT(*) FROM patients WHERE num_medications > (SELECT AVG(num_medications) FROM patients)"
        )
        .is_empty());
        assert_eq!(
            codes("SELECT COUNT(*) FROM patients WHERE encounter_id IN (SELECT encounter_id FROM patients)"),
            vec![SubqueryViolation]
        );
    }

    #[test]
    fn set_operations_and_joins() {
        assert_eq!(
            codes("SELECT COUNT(*) FROM patients UNION SELECT COUNT(*) FROM patients"),
            vec![SetOperation]
        );
        assert_eq!(
            codes("SELECT COUNT(*) FROM patients a JOIN patients b ON a.age = b.age"),
            vec![JoinForbidden]
        );
    }

    #[test]
    fn order_by_must_reference_projection() {
        assert_eq!(
            codes("SELECT age, COUNT(*) FROM patients GROUP BY age ORDER BY num_medications"),
            vec![OrderByRaw]
        );
        assert_eq!(
            codes("SELECT age, COUNT(*) FROM patients GROUP BY age ORDER BY encounter_id"),
            vec![OrderByRaw, IdentifierExposure]
        );
        assert!(codes("SELECT age, COUNT(*) FROM patients GROUP BY age ORDER BY COUNT(*) DESC").is_empty());
    }

    #[test]
    fn unknown_relations() {
        assert_eq!(
            codes("SELECT COUNT(*) FROM sqlite_master"),
            vec![UnknownTable]
        );
        assert_eq!(
            codes("SELECT COUNT(*) FROM main.patients"),
            vec![UnknownTable]
        );
    }

    #[test]
    fn per_row_literals_are_bare() {
        assert_eq!(codes("SELECT 1 FROM patients"), vec![BareProjection]);
        assert!(codes("SELECT 1").is_empty());
    }

    #[test]
    fn every_violation_is_reported() {
        let ast = parse_sql("SELECT race, MAX(num_medications) FROM patients").unwrap();
        let v = validate(&ast, &catalog(), &PolicyConfig::default());
        let codes: Vec<_> = v.iter().map(|v| v.code).collect();
        assert_eq!(codes, vec![BareProjection, ForbiddenAggregate]);
        assert!(v.iter().all(|v| v.location.is_some()));
    }
}
