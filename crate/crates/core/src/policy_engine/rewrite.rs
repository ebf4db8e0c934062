use super::ast::*;
use super::KThreshold;

fn merge_having(existing: Option<Expr>, condition: Expr) -> Expr {
    match existing {
        Some(existing) => Expr::binary(existing, BinaryOp::And, condition),
        None => condition,
    }
}

fn count_condition(op: BinaryOp, k: KThreshold) -> Expr {
    Expr::binary(Expr::count_star(), op, Expr::integer(u64::from(k.get())))
}

fn guard(select: &mut Select, k: KThreshold) {
    if select.from.is_some() {
        let having = select.having.take();
        select.having = Some(merge_having(having, count_condition(BinaryOp::GtEq, k)));
    }
}

/// Adds `COUNT(*) >= k` to the HAVING clause of every SELECT that reads a
/// table, including nested ones. Without GROUP BY the whole result is one
/// group, so the aggregate row disappears when fewer than `k` rows match.
pub fn rewrite_threshold(ast: &QueryAst, k: KThreshold) -> QueryAst {
    let mut query = ast.clone();
    for_each_child_query_mut(&mut query, &mut |child| *child = rewrite_threshold(child, k));
    guard(&mut query.body, k);
    for op in &mut query.set_ops {
        guard(&mut op.select, k);
    }
    query
}

fn probe_for(select: &Select, k: KThreshold) -> Option<String> {
    select.from.as_ref()?;
    let mut inner = Query {
        body: select.clone(),
        set_ops: Vec::new(),
        order_by: Vec::new(),
        limit: None,
        offset: None,
        span: select.span,
    };
    for_each_child_query_mut(&mut inner, &mut |child| *child = rewrite_threshold(child, k));
    let having = inner.body.having.take();
    inner.body.having = Some(merge_having(having, count_condition(BinaryOp::Lt, k)));
    Some(format!("SELECT COUNT(*) FROM ({inner})"))
}

/// SQL counting the groups the threshold removes from the outermost
/// result. `None` when the query reads no table.
pub fn suppression_probe(ast: &QueryAst, k: KThreshold) -> Option<String> {
    let mut probes: Vec<String> = std::iter::once(&ast.body)
        .chain(ast.set_ops.iter().map(|op| &op.select))
        .filter_map(|select| probe_for(select, k))
        .collect();
    match probes.len() {
        0 => None,
        1 => probes.pop(),
        _ => Some(format!(
            "SELECT {}",
            probes
                .iter()
                .map(|p| format!("({p})"))
                .collect::<Vec<_>>()
                .join(" + ")
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_sql;
    use super::*;

    fn k(n: u32) -> KThreshold {
        KThreshold::new(n).unwrap()
    }

    fn rewrite(sql: &str, n: u32) -> String {
        rewrite_threshold(&parse_sql(sql).unwrap(), k(n)).to_string()
    }

    #[test]
    fn grouped_query_gets_having() {
        assert_eq!(
            rewrite("SELECT age, COUNT(*) FROM patients GROUP BY age", 10),
            "SELECT age, COUNT(*) FROM patients GROUP BY age HAVING COUNT(*) >= 10"
        );
    }

    #[test]
    fn existing_having_is_conjoined() {
        assert_eq!(
            rewrite(
                "SELECT age, AVG(num_medications) FROM patients GROUP BY age HAVING AVG(num_medications) > 3 OR COUNT(*) > 50",
                5
            ),
            "SELECT age, AVG(num_medications) FROM patients GROUP BY age HAVING (AVG(num_medications) > 3 OR COUNT(*) > 50) AND COUNT(*) >= 5"
        );
    }

    #[test]
    fn nested_queries_are_rewritten() {
        assert_eq!(
            rewrite(
                "SELECT COUNT(*) FROM patients WHERE num_medications > (SELECT AVG(num_medications) FROM patients WHERE age = '[90-100)')",
                3
            ),
            "SELECT COUNT(*) FROM patients WHERE num_medications > (SELECT AVG(num_medications) FROM patients WHERE age = '[90-100)' HAVING COUNT(*) >= 3) HAVING COUNT(*) >= 3"
        );
    }

    #[test]
    fn order_and_limit_are_kept() {
        assert_eq!(
            rewrite("SELECT race, COUNT(*) AS n FROM patients GROUP BY race ORDER BY n DESC LIMIT 3", 2),
            "SELECT race, COUNT(*) AS n FROM patients GROUP BY race HAVING COUNT(*) >= 2 ORDER BY n DESC LIMIT 3"
        );
    }

    #[test]
    fn tableless_select_is_untouched() {
        assert_eq!(rewrite("SELECT 1 + 1", 5), "SELECT 1 + 1");
        assert!(suppression_probe(&parse_sql("SELECT 1").unwrap(), k(5)).is_none());
    }

    #[test]
    fn probe_inverts_the_threshold() {
        let probe = suppression_probe(
            &parse_sql("SELECT age, COUNT(*) FROM patients GROUP BY age ORDER BY 2 LIMIT 1").unwrap(),
            k(4),
        )
        .unwrap();
        assert_eq!(
            probe,
            "SELECT COUNT(*) FROM (SELECT age, COUNT(*) FROM patients GROUP BY age HAVING COUNT(*) < 4)"
        );
    }

    #[test]
    fn rewritten_sql_reparses() {
        let sql = rewrite("SELECT AVG(time_in_hospital) FROM patients WHERE race IS NOT NULL", 7);
        let again = parse_sql(&sql).unwrap().to_string();
        assert_eq!(sql, again);
    }
}
